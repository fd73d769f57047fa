#include "pedrisk/conflict.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <optional>
#include <ostream>
#include <thread>
#include <tuple>

#include "pedrisk/csv.hpp"
#include "pedrisk/errors.hpp"

namespace pedrisk {
namespace {

struct Vec {
  double x, y;
};

Vec sub(Point a, Point b) { return {a.x - b.x, a.y - b.y}; }
double cross(Vec a, Vec b) { return a.x * b.y - a.y * b.x; }
double dot(Vec a, Vec b) { return a.x * b.x + a.y * b.y; }
double norm2(Vec a) { return dot(a, a); }

Point at(Point p, Vec r, double s) { return {p.x + s * r.x, p.y + s * r.y}; }

double dist2_to_segment(Point p, Point a, Point b, double* param) {
  const Vec r = sub(b, a);
  const double rr = norm2(r);
  double s = 0.0;
  if (rr > 0.0) s = std::clamp(dot(sub(p, a), r) / rr, 0.0, 1.0);
  if (param) *param = s;
  return norm2(sub(p, at(a, r, s)));
}

bool lex_less(Point a0, Point a1, Point b0, Point b1) {
  return std::tie(a0.x, a0.y, a1.x, a1.y) < std::tie(b0.x, b0.y, b1.x, b1.y);
}

std::optional<Point> segment_intersection(Point a0, Point a1, Point b0, Point b1) {
  // Canonical argument order keeps the result independent of which track is
  // passed first.
  if (lex_less(b0, b1, a0, a1)) {
    std::swap(a0, b0);
    std::swap(a1, b1);
  }
  constexpr double tol = kGeometryTolerance;
  const Vec r = sub(a1, a0);
  const Vec w = sub(b1, b0);
  const Vec d = sub(b0, a0);
  const double rr = norm2(r);
  const double ww = norm2(w);

  if (rr <= tol && ww <= tol) {
    if (norm2(d) <= tol) return a0;
    return std::nullopt;
  }
  if (rr <= tol) {
    if (dist2_to_segment(a0, b0, b1, nullptr) <= tol) return a0;
    return std::nullopt;
  }
  if (ww <= tol) {
    if (dist2_to_segment(b0, a0, a1, nullptr) <= tol) return b0;
    return std::nullopt;
  }

  const double denom = cross(r, w);
  if (std::abs(denom) <= tol) {
    const double c = cross(d, r);
    if (c * c / rr > tol) return std::nullopt;  // parallel, apart
    const double s0 = dot(d, r) / rr;
    const double s1 = dot(sub(b1, a0), r) / rr;
    const double lo = std::max(0.0, std::min(s0, s1));
    const double hi = std::min(1.0, std::max(s0, s1));
    const double slack = std::sqrt(tol / rr);
    if (hi < lo - slack) return std::nullopt;
    const double mid = std::clamp(0.5 * (lo + hi), 0.0, 1.0);
    return at(a0, r, mid);
  }

  const double s = cross(d, w) / denom;
  const double u = cross(d, r) / denom;
  const double slack_s = std::sqrt(tol / rr);
  const double slack_u = std::sqrt(tol / ww);
  if (s < -slack_s || s > 1.0 + slack_s || u < -slack_u || u > 1.0 + slack_u) return std::nullopt;
  return at(a0, r, std::clamp(s, 0.0, 1.0));
}

Point point_of(const Sample& s) { return {s.x, s.y}; }

}  // namespace

double compute_pet(double t_p, double t_v) {
  if (t_p < t_v) return t_v - t_p;
  if (t_v < t_p) return t_p - t_v;
  return 0.0;
}

double first_passage_time(const Track& track, Point p) {
  const auto samples = track.samples();
  for (std::size_t k = 0; k + 1 < samples.size(); ++k) {
    double s = 0.0;
    if (dist2_to_segment(p, point_of(samples[k]), point_of(samples[k + 1]), &s) <= kGeometryTolerance) {
      return samples[k].t + s * (samples[k + 1].t - samples[k].t);
    }
  }
  return std::nan("");
}

std::vector<ConflictEvent> find_conflict_points(const Track& ped, const Track& veh) {
  const auto ps = ped.samples();
  const auto vs = veh.samples();
  std::vector<Point> points;
  for (std::size_t i = 0; i + 1 < ps.size(); ++i) {
    const Point a0 = point_of(ps[i]);
    const Point a1 = point_of(ps[i + 1]);
    // Cheap bounding-box rejection before the exact test.
    const double ax_lo = std::min(a0.x, a1.x), ax_hi = std::max(a0.x, a1.x);
    const double ay_lo = std::min(a0.y, a1.y), ay_hi = std::max(a0.y, a1.y);
    for (std::size_t j = 0; j + 1 < vs.size(); ++j) {
      const Point b0 = point_of(vs[j]);
      const Point b1 = point_of(vs[j + 1]);
      constexpr double pad = 1e-4;
      if (std::max(b0.x, b1.x) < ax_lo - pad || std::min(b0.x, b1.x) > ax_hi + pad ||
          std::max(b0.y, b1.y) < ay_lo - pad || std::min(b0.y, b1.y) > ay_hi + pad) {
        continue;
      }
      if (auto p = segment_intersection(a0, a1, b0, b1)) {
        const bool seen = std::any_of(points.begin(), points.end(), [&](Point q) {
          return norm2(sub(q, *p)) <= kGeometryTolerance;
        });
        if (!seen) points.push_back(*p);
      }
    }
  }

  std::vector<ConflictEvent> events;
  events.reserve(points.size());
  const RoadUserClass veh_class = veh.road_user_class();
  for (const Point p : points) {
    ConflictEvent e;
    e.ped_id = ped.id();
    e.veh_id = veh.id();
    e.veh_class = veh_class;
    e.point = p;
    e.t_p = first_passage_time(ped, p);
    e.t_v = first_passage_time(veh, p);
    e.pet = compute_pet(e.t_p, e.t_v);
    events.push_back(std::move(e));
  }
  std::sort(events.begin(), events.end(), [](const ConflictEvent& a, const ConflictEvent& b) {
    return std::make_tuple(a.first_arrival(), a.t_p, a.point.x, a.point.y) <
           std::make_tuple(b.first_arrival(), b.t_p, b.point.x, b.point.y);
  });
  return events;
}

std::vector<ConflictEvent> filter_conflicts(std::span<const ConflictEvent> events, double threshold) {
  if (!(threshold > 0.0)) throw DomainError("PET threshold must be positive");
  std::vector<ConflictEvent> out;
  for (const auto& e : events) {
    if (e.pet < threshold) out.push_back(e);
  }
  return out;
}

std::vector<ConflictEvent> sweep_conflicts(std::span<const Track> tracks, unsigned jobs) {
  std::vector<const Track*> peds;
  std::vector<const Track*> vehs;
  for (const auto& t : tracks) (t.is_pedestrian() ? peds : vehs).push_back(&t);

  jobs = std::max(1u, std::min<unsigned>(jobs, static_cast<unsigned>(std::max<std::size_t>(peds.size(), 1))));
  std::vector<std::vector<ConflictEvent>> partial(jobs);
  auto work = [&](unsigned part) {
    for (std::size_t i = part; i < peds.size(); i += jobs) {
      for (const Track* v : vehs) {
        auto found = find_conflict_points(*peds[i], *v);
        partial[part].insert(partial[part].end(), std::make_move_iterator(found.begin()),
                             std::make_move_iterator(found.end()));
      }
    }
  };
  if (jobs == 1) {
    work(0);
  } else {
    std::vector<std::thread> workers;
    for (unsigned p = 0; p < jobs; ++p) workers.emplace_back(work, p);
    for (auto& w : workers) w.join();
  }

  std::vector<ConflictEvent> all;
  for (auto& part : partial) {
    all.insert(all.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
  }
  std::sort(all.begin(), all.end(), [](const ConflictEvent& a, const ConflictEvent& b) {
    return std::tie(a.ped_id, a.veh_id, a.t_p, a.t_v) < std::tie(b.ped_id, b.veh_id, b.t_p, b.t_v);
  });
  return all;
}

void write_conflicts_csv(std::ostream& out, std::span<const ConflictEvent> events) {
  out << kConflictCsvHeader << '\n';
  for (const auto& e : events) {
    out << e.ped_id << ',' << e.veh_id << ',' << to_token(e.veh_class) << ',' << csv::format_double(e.point.x)
        << ',' << csv::format_double(e.point.y) << ',' << csv::format_double(e.t_p) << ','
        << csv::format_double(e.t_v) << ',' << csv::format_double(e.pet) << '\n';
  }
}

std::vector<ConflictEvent> read_conflicts_csv(std::istream& in) {
  csv::expect_header(in, kConflictCsvHeader);
  std::vector<ConflictEvent> events;
  std::string line;
  std::size_t lineno = 1;
  while (csv::read_line(in, line)) {
    ++lineno;
    if (csv::trim(line).empty()) continue;
    const auto f = csv::split(line);
    if (f.size() != 8) throw DataError("wrong number of fields", lineno);
    ConflictEvent e;
    e.ped_id = std::string(csv::trim(f[0]));
    e.veh_id = std::string(csv::trim(f[1]));
    try {
      e.veh_class = class_from_token(csv::trim(f[2]));
    } catch (const DataError& err) {
      throw DataError(err.what(), lineno);
    }
    if (e.veh_class == RoadUserClass::Pedestrian) throw DataError("vehicle class cannot be PED", lineno);
    e.point = {csv::parse_double(f[3], lineno), csv::parse_double(f[4], lineno)};
    e.t_p = csv::parse_double(f[5], lineno);
    e.t_v = csv::parse_double(f[6], lineno);
    e.pet = csv::parse_double(f[7], lineno);
    if (e.pet < 0.0) throw DataError("negative PET", lineno);
    events.push_back(std::move(e));
  }
  return events;
}

}  // namespace pedrisk
