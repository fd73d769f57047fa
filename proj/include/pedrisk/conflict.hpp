#pragma once

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "pedrisk/trajectory.hpp"

namespace pedrisk {

inline constexpr double kDefaultPetThreshold = 5.0;  // seconds, strict
// Squared-coordinate tolerance for the segment intersection tests.
inline constexpr double kGeometryTolerance = 1e-9;

struct ConflictEvent {
  std::string ped_id;
  std::string veh_id;
  RoadUserClass veh_class = RoadUserClass::MV;
  Point point;
  double t_p = 0.0;  // pedestrian arrival at `point`
  double t_v = 0.0;  // vehicle arrival at `point`
  double pet = 0.0;

  [[nodiscard]] double first_arrival() const { return t_p < t_v ? t_p : t_v; }
};

[[nodiscard]] double compute_pet(double t_p, double t_v);

// One event per geometric intersection of the two polylines, ordered by
// first arrival. Collinear overlaps yield a single event at the overlap
// midpoint; each road user's time is its first passage through the point.
// Nothing about the classes is checked, so swapping the arguments swaps the
// roles and leaves points and times unchanged.
[[nodiscard]] std::vector<ConflictEvent> find_conflict_points(const Track& ped, const Track& veh);

// Keeps events with pet < threshold (strict). Throws DomainError unless
// threshold > 0.
[[nodiscard]] std::vector<ConflictEvent> filter_conflicts(std::span<const ConflictEvent> events,
                                                          double threshold = kDefaultPetThreshold);

// All pedestrian x vehicle pairs in `tracks`, sorted by (ped_id, veh_id, t_p).
// `jobs` > 1 splits the pedestrians across worker threads; the result does
// not depend on it.
[[nodiscard]] std::vector<ConflictEvent> sweep_conflicts(std::span<const Track> tracks, unsigned jobs = 1);

// First time the track passes within tolerance of `p`, or NaN.
[[nodiscard]] double first_passage_time(const Track& track, Point p);

inline constexpr const char* kConflictCsvHeader = "ped_id,veh_id,veh_class,x,y,t_p,t_v,pet";
void write_conflicts_csv(std::ostream& out, std::span<const ConflictEvent> events);
[[nodiscard]] std::vector<ConflictEvent> read_conflicts_csv(std::istream& in);

}  // namespace pedrisk
