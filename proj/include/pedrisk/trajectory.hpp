#pragma once

#include <array>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace pedrisk {

enum class RoadUserClass { Pedestrian, MV, NMV };

// CSV tokens: PED, MV, NMV.
[[nodiscard]] std::string_view to_token(RoadUserClass cls);
[[nodiscard]] RoadUserClass class_from_token(std::string_view token);

struct Point {
  double x = 0.0;
  double y = 0.0;
  friend bool operator==(const Point&, const Point&) = default;
};

struct Sample {
  double t = 0.0;  // seconds
  double x = 0.0;  // meters
  double y = 0.0;  // meters
};

// Time-stamped planar trajectory of one road user. Construction enforces
// at least two samples with strictly increasing timestamps.
//
// `subtype` selects the PCU weight of a vehicle ("car", "bus", ...). It
// defaults to "car" for MV, "rickshaw" for NMV and "pedestrian" otherwise.
class Track {
 public:
  Track(std::string id, RoadUserClass cls, std::vector<Sample> samples, std::string subtype = {});

  [[nodiscard]] const std::string& id() const { return id_; }
  [[nodiscard]] RoadUserClass road_user_class() const { return cls_; }
  [[nodiscard]] bool is_pedestrian() const { return cls_ == RoadUserClass::Pedestrian; }
  [[nodiscard]] const std::string& subtype() const { return subtype_; }
  [[nodiscard]] std::span<const Sample> samples() const { return samples_; }
  [[nodiscard]] double start_time() const { return samples_.front().t; }
  [[nodiscard]] double end_time() const { return samples_.back().t; }

 private:
  std::string id_;
  RoadUserClass cls_;
  std::string subtype_;
  std::vector<Sample> samples_;
};

[[nodiscard]] std::string_view default_subtype(RoadUserClass cls);

// Camera-perspective correction R = field_scale * r * rho(x) where rho is the
// quadratic a0 + a1 x + a2 x^2 and x is the image distance from the camera.
struct PerspectiveModel {
  std::array<double, 3> poly{1.0, 0.0, 0.0};
  double field_scale = 1.0;
  double x_min = 0.0;
  double x_max = 0.0;

  [[nodiscard]] double rho(double x) const { return poly[0] + x * (poly[1] + x * poly[2]); }
  // Throws InvalidModelError when field_scale <= 0, the domain is empty, or
  // rho is not positive over the whole domain.
  void validate() const;

  bool operator==(const PerspectiveModel&) const = default;
};

[[nodiscard]] PerspectiveModel parse_perspective_json(std::string_view text);

[[nodiscard]] double correct_distance(double r, double x, const PerspectiveModel& model);

// Maps an image-unit track into field meters. Each coordinate is treated as a
// signed image distance and corrected with the camera distance taken from the
// sample's y coordinate.
[[nodiscard]] Track rectify_track(const Track& track, const PerspectiveModel& model);

// Linear interpolation; exact at sample times. Throws OutOfRangeError for t
// outside [start_time, end_time].
[[nodiscard]] Point position_at(const Track& track, double t);

// Path length travelled inside [t_start, t_end]; zero when there is no overlap.
[[nodiscard]] double path_length_within(const Track& track, double t_start, double t_end);

// Mean over tracks overlapping the window (positive-duration overlap) of
// path length / time inside the window. Throws EmptyWindowError when no track
// overlaps.
[[nodiscard]] double space_mean_speed(std::span<const Track> tracks, double t_start, double t_end);
[[nodiscard]] double space_mean_speed(std::span<const Track* const> tracks, double t_start, double t_end);

// CSV `track_id,class,t,x,y` with an optional trailing `subtype` column.
// Rows of one track are contiguous with strictly increasing t; a track id
// that reappears later, a duplicate timestamp or a malformed row throws
// DataError carrying the line number.
[[nodiscard]] std::vector<Track> read_tracks_csv(std::istream& in);
void write_tracks_csv(std::ostream& out, std::span<const Track> tracks);

}  // namespace pedrisk
