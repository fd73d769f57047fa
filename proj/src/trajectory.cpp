#include "pedrisk/trajectory.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <set>

#include <json.hpp>

#include "pedrisk/csv.hpp"
#include "pedrisk/errors.hpp"

namespace pedrisk {

std::string_view to_token(RoadUserClass cls) {
  switch (cls) {
    case RoadUserClass::Pedestrian:
      return "PED";
    case RoadUserClass::MV:
      return "MV";
    case RoadUserClass::NMV:
      return "NMV";
  }
  return "?";
}

RoadUserClass class_from_token(std::string_view token) {
  if (token == "PED") return RoadUserClass::Pedestrian;
  if (token == "MV") return RoadUserClass::MV;
  if (token == "NMV") return RoadUserClass::NMV;
  throw DataError("unknown road user class '" + std::string(token) + "'");
}

std::string_view default_subtype(RoadUserClass cls) {
  switch (cls) {
    case RoadUserClass::MV:
      return "car";
    case RoadUserClass::NMV:
      return "rickshaw";
    case RoadUserClass::Pedestrian:
      break;
  }
  return "pedestrian";
}

Track::Track(std::string id, RoadUserClass cls, std::vector<Sample> samples, std::string subtype)
    : id_(std::move(id)), cls_(cls), subtype_(std::move(subtype)), samples_(std::move(samples)) {
  if (samples_.size() < 2) throw DataError("track '" + id_ + "' needs at least two samples");
  for (std::size_t i = 0; i < samples_.size(); ++i) {
    const auto& s = samples_[i];
    if (!std::isfinite(s.t) || !std::isfinite(s.x) || !std::isfinite(s.y)) {
      throw DataError("track '" + id_ + "' has a non-finite sample");
    }
    if (i > 0 && !(s.t > samples_[i - 1].t)) {
      throw DataError("track '" + id_ + "' timestamps are not strictly increasing");
    }
  }
  if (subtype_.empty()) subtype_ = std::string(default_subtype(cls_));
}

void PerspectiveModel::validate() const {
  if (!(field_scale > 0.0) || !std::isfinite(field_scale)) {
    throw InvalidModelError("perspective field_scale must be positive");
  }
  if (!(x_max > x_min)) throw InvalidModelError("perspective domain is empty");
  // A quadratic attains its minimum over an interval at an endpoint or at the vertex.
  double lowest = std::min(rho(x_min), rho(x_max));
  if (poly[2] != 0.0) {
    const double vertex = -poly[1] / (2.0 * poly[2]);
    if (vertex > x_min && vertex < x_max) lowest = std::min(lowest, rho(vertex));
  }
  if (!(lowest > 0.0)) throw InvalidModelError("perspective polynomial is not positive over its domain");
}

PerspectiveModel parse_perspective_json(std::string_view text) {
  PerspectiveModel model;
  try {
    const auto doc = nlohmann::json::parse(text);
    const auto poly = doc.at("poly").get<std::vector<double>>();
    if (poly.size() != 3) throw ConfigError("perspective 'poly' must have three coefficients");
    std::copy(poly.begin(), poly.end(), model.poly.begin());
    model.field_scale = doc.at("field_scale").get<double>();
    const auto domain = doc.at("domain").get<std::vector<double>>();
    if (domain.size() != 2) throw ConfigError("perspective 'domain' must be [x_min, x_max]");
    model.x_min = domain[0];
    model.x_max = domain[1];
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("invalid perspective model: ") + e.what());
  }
  model.validate();
  return model;
}

double correct_distance(double r, double x, const PerspectiveModel& model) {
  if (!(r >= 0.0)) throw DomainError("image distance must be non-negative");
  if (!(x >= model.x_min && x <= model.x_max)) {
    throw DomainError("camera distance " + csv::format_double(x) + " outside perspective domain");
  }
  const double rho = model.rho(x);
  if (!(rho > 0.0)) throw InvalidModelError("perspective polynomial is not positive at x");
  if (!(model.field_scale > 0.0)) throw InvalidModelError("perspective field_scale must be positive");
  return model.field_scale * r * rho;
}

Track rectify_track(const Track& track, const PerspectiveModel& model) {
  auto signed_correct = [&](double v, double cam) {
    const double mag = correct_distance(std::abs(v), cam, model);
    return v < 0.0 ? -mag : mag;
  };
  std::vector<Sample> out;
  out.reserve(track.samples().size());
  for (const auto& s : track.samples()) {
    out.push_back({s.t, signed_correct(s.x, s.y), signed_correct(s.y, s.y)});
  }
  return Track(track.id(), track.road_user_class(), std::move(out), track.subtype());
}

Point position_at(const Track& track, double t) {
  const auto samples = track.samples();
  if (!(t >= samples.front().t && t <= samples.back().t)) {
    throw OutOfRangeError("time " + csv::format_double(t) + " outside track '" + track.id() + "'");
  }
  // First sample with time > t; t == last sample time lands on the last knot.
  auto hi = std::upper_bound(samples.begin(), samples.end(), t,
                             [](double value, const Sample& s) { return value < s.t; });
  if (hi == samples.end()) return {samples.back().x, samples.back().y};
  const auto& b = *hi;
  const auto& a = *(hi - 1);
  if (t == a.t) return {a.x, a.y};
  const double w = (t - a.t) / (b.t - a.t);
  return {a.x + w * (b.x - a.x), a.y + w * (b.y - a.y)};
}

double path_length_within(const Track& track, double t_start, double t_end) {
  const auto samples = track.samples();
  double length = 0.0;
  for (std::size_t i = 0; i + 1 < samples.size(); ++i) {
    const auto& a = samples[i];
    const auto& b = samples[i + 1];
    const double lo = std::max(a.t, t_start);
    const double hi = std::min(b.t, t_end);
    if (!(hi > lo)) continue;
    const double seg = std::hypot(b.x - a.x, b.y - a.y);
    length += seg * (hi - lo) / (b.t - a.t);
  }
  return length;
}

namespace {

template <typename Deref>
double mean_speed_impl(std::size_t n, Deref&& at, double t_start, double t_end) {
  if (!(t_end > t_start)) throw DomainError("speed window must be non-empty");
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const Track& track = at(i);
    const double lo = std::max(track.start_time(), t_start);
    const double hi = std::min(track.end_time(), t_end);
    if (!(hi > lo)) continue;
    sum += path_length_within(track, lo, hi) / (hi - lo);
    ++count;
  }
  if (count == 0) throw EmptyWindowError("no track overlaps the speed window");
  return sum / static_cast<double>(count);
}

}  // namespace

double space_mean_speed(std::span<const Track> tracks, double t_start, double t_end) {
  return mean_speed_impl(
      tracks.size(), [&](std::size_t i) -> const Track& { return tracks[i]; }, t_start, t_end);
}

double space_mean_speed(std::span<const Track* const> tracks, double t_start, double t_end) {
  return mean_speed_impl(
      tracks.size(), [&](std::size_t i) -> const Track& { return *tracks[i]; }, t_start, t_end);
}

std::vector<Track> read_tracks_csv(std::istream& in) {
  std::string line;
  if (!csv::read_line(in, line)) throw DataError("missing trajectory header", 1);
  const auto header = csv::trim(line);
  const bool has_subtype = header == "track_id,class,t,x,y,subtype";
  if (!has_subtype && header != "track_id,class,t,x,y") {
    throw DataError("unexpected trajectory header '" + line + "'", 1);
  }

  std::vector<Track> tracks;
  std::set<std::string> finished;
  std::string cur_id;
  RoadUserClass cur_cls = RoadUserClass::Pedestrian;
  std::string cur_subtype;
  std::vector<Sample> cur;
  std::size_t cur_first_line = 0;

  auto flush = [&]() {
    if (cur_id.empty()) return;
    try {
      tracks.emplace_back(cur_id, cur_cls, std::move(cur), cur_subtype);
    } catch (const DataError& e) {
      throw DataError(e.what(), cur_first_line);
    }
    finished.insert(cur_id);
    cur.clear();
    cur_id.clear();
  };

  std::size_t lineno = 1;
  while (csv::read_line(in, line)) {
    ++lineno;
    if (csv::trim(line).empty()) continue;
    const auto fields = csv::split(line);
    if (fields.size() != (has_subtype ? 6u : 5u)) throw DataError("wrong number of fields", lineno);
    const std::string id(csv::trim(fields[0]));
    if (id.empty()) throw DataError("empty track id", lineno);
    RoadUserClass cls;
    try {
      cls = class_from_token(csv::trim(fields[1]));
    } catch (const DataError& e) {
      throw DataError(e.what(), lineno);
    }
    const Sample s{csv::parse_double(fields[2], lineno), csv::parse_double(fields[3], lineno),
                   csv::parse_double(fields[4], lineno)};
    const std::string subtype = has_subtype ? std::string(csv::trim(fields[5])) : std::string{};

    if (id != cur_id) {
      flush();
      if (finished.count(id)) throw DataError("duplicate track id '" + id + "'", lineno);
      cur_id = id;
      cur_cls = cls;
      cur_subtype = subtype;
      cur_first_line = lineno;
    } else {
      if (cls != cur_cls) throw DataError("class changes within track '" + id + "'", lineno);
      if (!(s.t > cur.back().t)) {
        throw DataError("non-increasing or duplicate timestamp in track '" + id + "'", lineno);
      }
    }
    cur.push_back(s);
  }
  flush();
  return tracks;
}

void write_tracks_csv(std::ostream& out, std::span<const Track> tracks) {
  out << "track_id,class,t,x,y,subtype\n";
  for (const auto& track : tracks) {
    for (const auto& s : track.samples()) {
      out << track.id() << ',' << to_token(track.road_user_class()) << ',' << csv::format_double(s.t) << ','
          << csv::format_double(s.x) << ',' << csv::format_double(s.y) << ',' << track.subtype() << '\n';
    }
  }
}

}  // namespace pedrisk
