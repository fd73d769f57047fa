#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "oracles.hpp"
#include "pedrisk/conflict.hpp"
#include "pedrisk/errors.hpp"

using namespace pedrisk;

namespace {

std::vector<Sample> random_walk(std::mt19937_64& rng, int n, double t0) {
  std::uniform_real_distribution<double> step(-3, 3), dt(0.2, 1.5), start(-5, 5);
  std::vector<Sample> s;
  double x = start(rng), y = start(rng), t = t0;
  for (int i = 0; i < n; ++i) {
    s.push_back({t, x, y});
    x += step(rng);
    y += step(rng);
    t += dt(rng);
  }
  return s;
}

std::vector<oracle::TimedPoint> timed(const std::vector<Sample>& s) {
  std::vector<oracle::TimedPoint> out;
  for (const auto& p : s) out.push_back({p.t, p.x, p.y});
  return out;
}

ConflictEvent event(double pet) {
  ConflictEvent e;
  e.ped_id = "p";
  e.veh_id = "v";
  e.t_p = 0;
  e.t_v = pet;
  e.pet = pet;
  return e;
}

}  // namespace

TEST_CASE("compute_pet branches") {
  CHECK(compute_pet(3, 5) == 2.0);
  CHECK(compute_pet(5, 5) == 0.0);
  CHECK(compute_pet(4, 1) == 3.0);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-100, 100);
  for (int i = 0; i < 1000; ++i) {
    const double a = u(rng), b = u(rng);
    CHECK(compute_pet(a, b) == compute_pet(b, a));
    CHECK(compute_pet(a, b) >= 0.0);
    CHECK(compute_pet(a, b) == std::abs(b - a));
  }
}

TEST_CASE("symmetric crossing") {
  const Track ped("p", RoadUserClass::Pedestrian, {{0, 0, 0}, {std::sqrt(2.0), 1, 1}});
  const Track veh("v", RoadUserClass::MV, {{0, 0, 1}, {std::sqrt(2.0), 1, 0}});
  const auto events = find_conflict_points(ped, veh);
  REQUIRE(events.size() == 1);
  CHECK(events[0].point.x == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(events[0].point.y == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(events[0].t_p == doctest::Approx(std::sqrt(2.0) / 2).epsilon(1e-14));
  CHECK(events[0].pet == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(events[0].ped_id == "p");
  CHECK(events[0].veh_id == "v");
}

TEST_CASE("parallel tracks do not conflict") {
  const Track a("p", RoadUserClass::Pedestrian, {{0, 0, 0}, {1, 10, 0}});
  const Track b("v", RoadUserClass::MV, {{0, 0, 1}, {1, 10, 1}});
  CHECK(find_conflict_points(a, b).empty());
}

TEST_CASE("collinear overlap yields one event at the overlap midpoint") {
  const Track a("p", RoadUserClass::Pedestrian, {{0, 0, 0}, {10, 10, 0}});
  const Track b("v", RoadUserClass::MV, {{0, 4, 0}, {1, 14, 0}});
  const auto events = find_conflict_points(a, b);
  REQUIRE(events.size() == 1);
  CHECK(events[0].point.x == doctest::Approx(7.0));
  CHECK(events[0].point.y == 0.0);
  CHECK(events[0].t_p == doctest::Approx(7.0));
  CHECK(events[0].t_v == doctest::Approx(0.3));
}

TEST_CASE("multiple crossings become separate events, first passage per road user") {
  // pedestrian zig-zags across the vehicle lane y = 0 three times
  const Track ped("p", RoadUserClass::Pedestrian, {{0, 0, -1}, {1, 1, 1}, {2, 2, -1}, {3, 3, 1}});
  const Track veh("v", RoadUserClass::MV, {{0, -1, 0}, {4, 3, 0}});
  const auto events = find_conflict_points(ped, veh);
  REQUIRE(events.size() == 3);
  for (std::size_t i = 1; i < events.size(); ++i) CHECK(events[i - 1].first_arrival() <= events[i].first_arrival());
  CHECK(events[0].point.x == doctest::Approx(0.5));
  CHECK(events[1].point.x == doctest::Approx(1.5));
  CHECK(events[2].point.x == doctest::Approx(2.5));
}

TEST_CASE("first passage time uses the earliest visit") {
  const Track back_and_forth("p", RoadUserClass::Pedestrian, {{0, 0, 0}, {1, 2, 0}, {2, 0, 0}});
  CHECK(first_passage_time(back_and_forth, {1, 0}) == doctest::Approx(0.5));
  CHECK(std::isnan(first_passage_time(back_and_forth, {1, 1})));
}

TEST_CASE("random polylines agree with the all-pairs oracle") {
  std::mt19937_64 rng(2024);
  std::size_t total = 0;
  for (int pair = 0; pair < 50; ++pair) {
    const auto ps = random_walk(rng, 25, 0.0);
    const auto vs = random_walk(rng, 25, 1.0);
    const Track ped("p", RoadUserClass::Pedestrian, ps);
    const Track veh("v", RoadUserClass::MV, vs);
    auto got = find_conflict_points(ped, veh);
    auto want = oracle::all_pairs_crossings(timed(ps), timed(vs));
    REQUIRE(got.size() == want.size());
    total += got.size();
    std::sort(want.begin(), want.end(), [](const auto& a, const auto& b) {
      return std::min(a.t_a, a.t_b) < std::min(b.t_a, b.t_b);
    });
    for (std::size_t i = 0; i < got.size(); ++i) {
      // random walks may revisit a point only on a measure-zero set, so the
      // oracle's per-segment times are first-passage times
      CHECK(std::abs(got[i].point.x - want[i].x) < 1e-9);
      CHECK(std::abs(got[i].point.y - want[i].y) < 1e-9);
      CHECK(std::abs(got[i].pet - std::abs(want[i].t_b - want[i].t_a)) < 1e-9);
    }
  }
  CHECK(total > 50);
}

TEST_CASE("conflict points lie on both tracks at their arrival times") {
  std::mt19937_64 rng(99);
  for (int pair = 0; pair < 30; ++pair) {
    const Track ped("p", RoadUserClass::Pedestrian, random_walk(rng, 20, 0.0));
    const Track veh("v", RoadUserClass::NMV, random_walk(rng, 20, 0.5));
    for (const auto& e : find_conflict_points(ped, veh)) {
      const Point a = position_at(ped, e.t_p);
      const Point b = position_at(veh, e.t_v);
      CHECK(std::hypot(a.x - e.point.x, a.y - e.point.y) < 1e-6);
      CHECK(std::hypot(b.x - e.point.x, b.y - e.point.y) < 1e-6);
      CHECK(e.veh_class == RoadUserClass::NMV);
      CHECK(e.pet == std::abs(e.t_v - e.t_p));
    }
  }
}

TEST_CASE("swapping roles swaps labels only") {
  std::mt19937_64 rng(5);
  for (int pair = 0; pair < 30; ++pair) {
    const Track a("a", RoadUserClass::Pedestrian, random_walk(rng, 15, 0.0));
    const Track b("b", RoadUserClass::MV, random_walk(rng, 15, 0.3));
    const auto ab = find_conflict_points(a, b);
    const auto ba = find_conflict_points(b, a);
    REQUIRE(ab.size() == ba.size());
    for (std::size_t i = 0; i < ab.size(); ++i) {
      CHECK(ab[i].point.x == ba[i].point.x);
      CHECK(ab[i].point.y == ba[i].point.y);
      CHECK(ab[i].t_p == ba[i].t_v);
      CHECK(ab[i].t_v == ba[i].t_p);
      CHECK(ab[i].pet == ba[i].pet);
    }
  }
}

TEST_CASE("rigid motion moves points and keeps PET") {
  std::mt19937_64 rng(17);
  const double ang = 0.7, c = std::cos(ang), s = std::sin(ang), dx = 12.5, dy = -3.25;
  for (int pair = 0; pair < 20; ++pair) {
    auto ps = random_walk(rng, 15, 0.0);
    auto vs = random_walk(rng, 15, 0.2);
    auto move = [&](std::vector<Sample> v) {
      for (auto& p : v) p = {p.t, c * p.x - s * p.y + dx, s * p.x + c * p.y + dy};
      return v;
    };
    const auto e0 = find_conflict_points(Track("p", RoadUserClass::Pedestrian, ps), Track("v", RoadUserClass::MV, vs));
    const auto e1 =
        find_conflict_points(Track("p", RoadUserClass::Pedestrian, move(ps)), Track("v", RoadUserClass::MV, move(vs)));
    REQUIRE(e0.size() == e1.size());
    for (std::size_t i = 0; i < e0.size(); ++i) {
      CHECK(std::abs(c * e0[i].point.x - s * e0[i].point.y + dx - e1[i].point.x) < 1e-9);
      CHECK(std::abs(s * e0[i].point.x + c * e0[i].point.y + dy - e1[i].point.y) < 1e-9);
      CHECK(std::abs(e0[i].pet - e1[i].pet) < 1e-9);
    }
  }
}

TEST_CASE("filter_conflicts keeps strictly smaller PET") {
  const std::vector<ConflictEvent> events{event(2.0), event(4.9), event(5.0), event(6.1)};
  auto pets = [](const std::vector<ConflictEvent>& v) {
    std::vector<double> out;
    for (const auto& e : v) out.push_back(e.pet);
    return out;
  };
  CHECK(pets(filter_conflicts(events)) == std::vector<double>{2.0, 4.9});
  CHECK(pets(filter_conflicts(events, 6.0)) == std::vector<double>{2.0, 4.9, 5.0});
  CHECK(filter_conflicts(std::vector<ConflictEvent>{}).empty());
  CHECK_THROWS_AS((void)filter_conflicts(events, 0.0), DomainError);
}

TEST_CASE("sweep is independent of the thread count") {
  std::mt19937_64 rng(8);
  std::vector<Track> tracks;
  for (int i = 0; i < 12; ++i) tracks.emplace_back("p" + std::to_string(i), RoadUserClass::Pedestrian, random_walk(rng, 10, 0));
  for (int i = 0; i < 9; ++i) tracks.emplace_back("v" + std::to_string(i), RoadUserClass::MV, random_walk(rng, 10, 0));
  const auto one = sweep_conflicts(tracks, 1);
  const auto four = sweep_conflicts(tracks, 4);
  REQUIRE(one.size() == four.size());
  CHECK(!one.empty());
  std::ostringstream a, b;
  write_conflicts_csv(a, one);
  write_conflicts_csv(b, four);
  CHECK(a.str() == b.str());
  for (std::size_t i = 1; i < one.size(); ++i) {
    CHECK(std::tie(one[i - 1].ped_id, one[i - 1].veh_id, one[i - 1].t_p) <=
          std::tie(one[i].ped_id, one[i].veh_id, one[i].t_p));
  }
}

TEST_CASE("conflict CSV round trip") {
  ConflictEvent e = event(1.25);
  e.veh_class = RoadUserClass::NMV;
  e.point = {0.1, -2.0 / 3.0};
  std::ostringstream out;
  write_conflicts_csv(out, std::vector<ConflictEvent>{e});
  CHECK(out.str().rfind(kConflictCsvHeader, 0) == 0);
  std::istringstream in(out.str());
  const auto back = read_conflicts_csv(in);
  REQUIRE(back.size() == 1);
  CHECK(back[0].point.y == e.point.y);
  CHECK(back[0].veh_class == RoadUserClass::NMV);
  CHECK(back[0].pet == 1.25);
  std::istringstream bad(std::string(kConflictCsvHeader) + "\np,v,MV,0,0,1,2,oops\n");
  CHECK_THROWS_AS((void)read_conflicts_csv(bad), DataError);
}
