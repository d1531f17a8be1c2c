#include <catch_amalgamated.hpp>

#include "statwalk/joinings.hpp"

using namespace statwalk;

namespace {

SystemHandle sys(SystemId id) { return SystemHandle::make(id); }

Measure proj_leb(int n = 4096) { return lebesgue_grid(GridSpace::Proj, n); }

}  // namespace

TEST_CASE("join with a measure preserving factor is the product") {
  auto j = join(sys(SystemId::TwoPoint), fair_bit(), sys(SystemId::BoundaryF2), eta_measure(2), uniform_generators(),
                4000, 60, 1);
  CHECK(weak_star_distance(j.measure, product_measure(fair_bit(), eta_measure(2))) < 0.05);
  CHECK(j.marginal_x < 1e-9);
  CHECK(std::fabs(total_mass(j.measure) - 1.0) < 1e-12);
  // the two_point conditional measures are nu itself, so lambda factors exactly
  auto rebuilt = product_measure(fair_bit(), marginal(j.measure, 1));
  CHECK(weak_star_distance(j.measure, rebuilt) < 1e-12);
}

TEST_CASE("proj_line joined with itself sits on the diagonal") {
  auto pl = sys(SystemId::ProjLine);
  auto j = join(pl, proj_leb(), pl, proj_leb(), SL2Sampler{}, 1000, 200, 2);
  double near = 0;
  for (std::size_t i = 0; i < j.measure.points.size(); ++i) {
    const auto& q = j.measure.points[i].as<PointPair>();
    if (circle_gap(q.parts[0].as<ProjAngle>().theta, q.parts[1].as<ProjAngle>().theta, kPi) < 0.1)
      near += j.measure.weights[i];
  }
  CHECK(near > 0.9);
  CHECK(j.marginal_x < 0.05);
}

TEST_CASE("join with the one point system") {
  auto tr = sys(SystemId::Trivial);
  auto unit = dirac(SpacePoint{Unit{}});
  auto j = join(sys(SystemId::ProjLine), proj_leb(1024), tr, unit, SL2Sampler{}, 200, 50, 3);
  CHECK(j.marginal_y < 1e-9);
  CHECK(weak_star_distance(j.measure, product_measure(marginal(j.measure, 0), unit)) < 1e-12);
}

TEST_CASE("join is reproducible and symmetric") {
  auto tp = sys(SystemId::TwoPoint), bs = sys(SystemId::BoundaryF2);
  JoinOptions one, many;
  one.threads = 1;
  many.threads = 8;
  auto a = join(tp, fair_bit(), bs, eta_measure(2), uniform_generators(), 200, 30, 5, one);
  auto b = join(tp, fair_bit(), bs, eta_measure(2), uniform_generators(), 200, 30, 5, many);
  CHECK(to_json(a).dump() == to_json(b).dump());
  auto c = join(bs, eta_measure(2), tp, fair_bit(), uniform_generators(), 200, 30, 5);
  auto swapped = detail::merge_atoms(detail::swap_coordinates(c.measure));
  REQUIRE(swapped.points.size() == a.measure.points.size());
  for (std::size_t i = 0; i < swapped.points.size(); ++i) {
    CHECK(detail::point_key(swapped.points[i]) == detail::point_key(a.measure.points[i]));
    CHECK(swapped.weights[i] == a.measure.weights[i]);
  }
}

TEST_CASE("join requires a common acting group") {
  CHECK_THROWS_AS(join(sys(SystemId::ProjLine), proj_leb(), sys(SystemId::BoundaryF2), eta_measure(2),
                       uniform_generators(), 10, 5, 0),
                  Error);
}

TEST_CASE("joining checks") {
  auto tp = sys(SystemId::TwoPoint), bs = sys(SystemId::BoundaryF2);
  // exact product, fine enough that one letter keeps depth-2 cells determined
  JoiningMeasure exact;
  exact.x = tp;
  exact.y = bs;
  exact.measure = product_measure(fair_bit(), eta_measure(4));
  auto r0 = joining_checks(exact, fair_bit(), eta_measure(2), uniform_generators());
  CHECK(r0.stationarity < 1e-12);
  CHECK(r0.marginal_y < 1e-12);

  auto j = join(tp, fair_bit(), bs, eta_measure(2), uniform_generators(), 4000, 60, 6);
  auto r = joining_checks(j, fair_bit(), eta_measure(2), uniform_generators());
  CHECK(r.stationarity < 0.05);
  CHECK(r.marginal_x < 1e-9);

  auto bad = j;
  for (auto& p : bad.measure.points) p = make_pair_point(SpacePoint{Bit{0}}, p.as<PointPair>().parts[1]);
  CHECK(joining_checks(bad, fair_bit(), eta_measure(2), uniform_generators()).marginal_x > 0.3);
}

TEST_CASE("join residuals shrink like one over root trials") {
  auto tp = sys(SystemId::TwoPoint), bs = sys(SystemId::BoundaryF2);
  double small = 0, large = 0;
  for (std::uint64_t s = 0; s < 6; ++s) {
    small += join(tp, fair_bit(), bs, eta_measure(2), uniform_generators(), 500, 30, 100 + s).marginal_y;
    large += join(tp, fair_bit(), bs, eta_measure(2), uniform_generators(), 2000, 30, 200 + s).marginal_y;
  }
  double ratio = large / small;
  CHECK(ratio > 0.3);
  CHECK(ratio < 0.75);
}

TEST_CASE("unique joinings of proximal systems") {
  auto tp = sys(SystemId::TwoPoint);
  auto p = unique_joining_probe(sys(SystemId::ProjLine), proj_leb(), tp, fair_bit(), SL2Sampler{}, 5, 1000, 200, 3);
  CHECK(p.x_catalog_proximal);
  CHECK(p.max_distance < 0.1);
  auto b = unique_joining_probe(sys(SystemId::BoundaryF2), eta_measure(2), tp, fair_bit(), uniform_generators(), 5,
                                1000, 60, 3);
  CHECK(b.max_distance < 0.1);
}

TEST_CASE("two_point with itself has several joinings") {
  auto tp = sys(SystemId::TwoPoint);
  auto r = unique_joining_probe(tp, fair_bit(), tp, fair_bit(), uniform_generators(), 5, 1000, 20, 3);
  CHECK_FALSE(r.x_catalog_proximal);
  CHECK(r.max_distance > 0.3);
  // both the product and the diagonal are exactly stationary
  for (double s : r.stationarity) CHECK(s < 1e-12);
}

TEST_CASE("joining JSON carries provenance") {
  auto j = join(sys(SystemId::TwoPoint), fair_bit(), sys(SystemId::TwoPoint), fair_bit(), uniform_generators(), 10, 4, 9);
  auto js = to_json(j);
  CHECK(js["trials"] == 10);
  CHECK(js["n"] == 4);
  CHECK(js["seed"] == 9);
  auto back = std::get<AtomicMeasure>(measure_from_json(js["measure"]));
  CHECK(weak_star_distance(back, j.measure) == 0.0);
}
