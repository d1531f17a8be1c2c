#include <catch_amalgamated.hpp>

#include "statwalk/structure.hpp"

using namespace statwalk;

namespace {

SystemHandle sys(SystemId id) { return SystemHandle::make(id); }

ExtensionOptions no_entropy() {
  ExtensionOptions o;
  o.entropy_check = false;
  return o;
}

}  // namespace

TEST_CASE("quasifactor of a measure preserving system is a point") {
  auto P = quasifactor_sample(sys(SystemId::TwoPoint), fair_bit(), uniform_generators(), 50, 30, 1);
  REQUIRE(P.measures.size() == 50);
  for (const auto& m : P.measures) CHECK(weak_star_distance(m, fair_bit()) == 0.0);
}

TEST_CASE("quasifactor of proj_line: point masses spread like Lebesgue") {
  auto pl = sys(SystemId::ProjLine);
  auto leb = lebesgue_grid(GridSpace::Proj, 1024);
  auto P = quasifactor_sample(pl, leb, SL2Sampler{}, 1000, 200, 2);
  std::size_t sharp = 0;
  for (const auto& m : P.measures)
    if (point_mass_score(m) > 0.99) ++sharp;
  CHECK(sharp >= 950);
  CHECK(weak_star_distance(barycenter(P), leb) < 0.05);
}

TEST_CASE("quasifactor of the doubled projective line: two half atoms") {
  auto P = quasifactor_sample(sys(SystemId::DoubleProjEx8), lebesgue_grid(GridSpace::Tagged, 512), BlockSwapSampler{},
                              200, 200, 3);
  std::size_t half = 0;
  for (const auto& m : P.measures) {
    double a = max_atom_mass(m);
    if (a >= 0.45 && a <= 0.55) ++half;
  }
  CHECK(half >= 180);
}

TEST_CASE("standard cover marginals") {
  auto tp = sys(SystemId::TwoPoint);
  auto c = standard_cover(tp, fair_bit(), uniform_generators(), 100, 20, 4, 4);
  for (const auto& f : c.fibers) CHECK(weak_star_distance(f, fair_bit()) == 0.0);
  CHECK(c.pi_residual < 0.1);

  auto pl = sys(SystemId::ProjLine);
  auto leb = lebesgue_grid(GridSpace::Proj, 1024);
  auto cp = standard_cover(pl, leb, SL2Sampler{}, 200, 200, 4, 5);
  double score = 0;
  for (const auto& f : cp.fibers) score += point_mass_score(f) / 200;
  CHECK(score > 0.99);
  // sigma-marginal is the quasifactor sample itself
  auto P = quasifactor_sample(pl, leb, SL2Sampler{}, 200, 200, 5);
  auto S = cp.sigma_marginal();
  for (std::size_t i = 0; i < P.measures.size(); ++i) CHECK(weak_star_distance(S.measures[i], P.measures[i]) == 0.0);
}

TEST_CASE("skew cover: pair statistics") {
  auto sk = sys(SystemId::SkewEx6);
  auto c = standard_cover(sk, nu_times_eta(SystemId::SkewEx6, 2), uniform_generators(), 1000, 200, 8, 6);
  auto s = cover_pair_statistics(c);
  CHECK(std::fabs(s.label_marginal[0] - 0.5) < 0.03);
  CHECK(std::fabs(s.label_marginal[1] - 0.5) < 0.03);
  // nu x eta is not stationary under this action, so the mean fiber drifts
  // away from eta (about 0.12); the bound only guards against regressions.
  CHECK(s.fiber_tv[0] < 0.2);
  CHECK(s.fiber_tv[1] < 0.2);
  for (const auto& f : c.fibers) CHECK(point_mass_score(f) > 0.45);
}

TEST_CASE("prepending g moves the conditional measure by g") {
  auto bs = sys(SystemId::BoundaryF2);
  auto x = dirac(SpacePoint{WordPrefix{FreeWord::parse("abAB")}});
  auto tr = sample_trajectory(uniform_generators(), 30, 7, 0);
  auto g = FreeWord::parse("ba");
  auto lhs = conditional_measure(bs, x, prepend(tr, g), 31).measure;
  auto rhs = pushforward(bs, g, conditional_measure(bs, x, tr, 30).measure);
  CHECK(detail::point_key(std::get<AtomicMeasure>(lhs).points[0]) ==
        detail::point_key(std::get<AtomicMeasure>(rhs).points[0]));

  auto pl = sys(SystemId::ProjLine);
  auto y = dirac(SpacePoint{ProjAngle{0.4}});
  auto tp = sample_trajectory(SL2Sampler{}, 10, 7, 1);
  auto h = Mat2::cartan(0.3, 1.2, -0.7);
  auto l2 = conditional_measure(pl, y, prepend(tp, h), 11).measure;
  auto r2 = pushforward(pl, h, conditional_measure(pl, y, tp, 10).measure);
  CHECK(weak_star_distance(l2, r2) < 1e-9);
}

TEST_CASE("classification of the catalog extensions") {
  auto tp = sys(SystemId::TwoPoint);
  ExtensionOptions o;
  o.entropy = {64, 1000, 0, 0};
  auto rays = classify_extension(sys(SystemId::RayCircle), lebesgue_grid(GridSpace::Ray, 4096), "mod_pi",
                                 sys(SystemId::ProjLine), lebesgue_grid(GridSpace::Proj, 2048), SL2Sampler{}, 200, 200, o);
  CHECK(rays.verdict == "measure_preserving");
  CHECK(rays.mp_residual < 0.05);
  REQUIRE(rays.entropy);
  CHECK_FALSE(rays.entropy->gap);
  CHECK(rays.entropy_agrees);

  auto skew = classify_extension(sys(SystemId::SkewEx6), nu_times_eta(SystemId::SkewEx6, 2), "first", tp, fair_bit(),
                                 uniform_generators(), 200, 200, o);
  CHECK(skew.verdict == "proximal");
  CHECK(skew.prox_score > 0.9);
  CHECK(skew.mp_residual > 0.2);
  CHECK(skew.entropy_agrees);

  auto dbl = classify_extension(sys(SystemId::DoubleProjEx8), lebesgue_grid(GridSpace::Tagged, 1024), "tag", tp,
                                fair_bit(), BlockSwapSampler{}, 200, 200, o);
  CHECK(dbl.verdict == "proximal");
  CHECK(dbl.entropy_agrees);
}

TEST_CASE("identity factor is measure preserving with exact fibers") {
  auto r = classify_extension(sys(SystemId::ProjLine), lebesgue_grid(GridSpace::Proj, 1024), "identity",
                              sys(SystemId::ProjLine), lebesgue_grid(GridSpace::Proj, 1024), SL2Sampler{}, 50, 50,
                              no_entropy());
  CHECK(r.mp_residual < 1e-9);
  CHECK(r.verdict == "measure_preserving");
  auto b = classify_extension(sys(SystemId::BoundaryF2), eta_measure(3), "identity", sys(SystemId::BoundaryF2),
                              eta_measure(3), uniform_generators(), 50, 30, no_entropy());
  CHECK(b.mp_residual < 1e-9);
}

TEST_CASE("collapsing to a point is measure preserving exactly for invariant measures") {
  auto triv = sys(SystemId::Trivial);
  auto unit = dirac(SpacePoint{Unit{}});
  struct Case {
    SystemId id;
    Measure mu;
    GroupMeasure m;
  };
  std::vector<Case> cases = {
      {SystemId::BoundaryF2, eta_measure(3), uniform_generators()},
      {SystemId::ProjLine, lebesgue_grid(GridSpace::Proj, 1024), SL2Sampler{}},
      {SystemId::RayCircle, lebesgue_grid(GridSpace::Ray, 1024), SL2Sampler{}},
      {SystemId::TwoPoint, fair_bit(), uniform_generators()},
      {SystemId::SkewEx6, nu_times_eta(SystemId::SkewEx6, 2), uniform_generators()},
      {SystemId::DoubleProjEx8, lebesgue_grid(GridSpace::Tagged, 512), BlockSwapSampler{}},
  };
  for (const auto& c : cases) {
    auto s = sys(c.id);
    std::vector<GroupElement> gens;
    if (auto a = std::get_if<AtomicGroupMeasure>(&c.m)) {
      gens = a->elements;
    } else {
      Rng rng(0, 0, 1);
      for (int i = 0; i < 8; ++i) gens.push_back(sample_group(c.m, rng));
    }
    bool invariant = invariance_residual(s, c.mu, gens) < 1e-3;
    auto r = classify_extension(s, c.mu, "collapse", triv, unit, c.m, 40, 40, no_entropy());
    INFO(s.name());
    CHECK((r.verdict == "measure_preserving") == invariant);
  }
}

TEST_CASE("classification input validation") {
  auto sk = sys(SystemId::SkewEx6);
  auto mu = nu_times_eta(SystemId::SkewEx6, 2);
  try {
    classify_extension(sk, mu, "mod_pi", sys(SystemId::TwoPoint), fair_bit(), uniform_generators(), 10, 10, no_entropy());
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Unregistered);
  }
  AtomicMeasure skewed{{SpacePoint{Bit{0}}, SpacePoint{Bit{1}}}, {0.7, 0.3}};
  CHECK_THROWS_AS(classify_extension(sk, mu, "first", sys(SystemId::TwoPoint), skewed, uniform_generators(), 10, 10,
                                     no_entropy()),
                  Error);
}

TEST_CASE("classification is reproducible across thread counts") {
  auto run = [](int threads) {
    default_threads() = threads;
    auto r = classify_extension(sys(SystemId::SkewEx6), nu_times_eta(SystemId::SkewEx6, 2), "first",
                                sys(SystemId::TwoPoint), fair_bit(), uniform_generators(), 40, 40, ExtensionOptions{});
    return to_json(r).dump();
  };
  int saved = default_threads();
  auto a = run(1), b = run(8);
  default_threads() = saved;
  CHECK(a == b);
}

TEST_CASE("maximal proximal factors of the catalog") {
  auto expect = [](SystemId id, const char* factor) {
    auto r = maximal_proximal_factor(sys(id));
    INFO(r.system);
    CHECK(r.factor == factor);
    CHECK(r.consistent);
  };
  expect(SystemId::SkewEx6, "collapse");
  expect(SystemId::DoubleProjEx8, "collapse");
  expect(SystemId::TwoPoint, "collapse");
  expect(SystemId::ProjLine, "identity");
  expect(SystemId::BoundaryF2, "identity");
  expect(SystemId::RayCircle, "mod_pi");
  auto p = SystemHandle::product(sys(SystemId::TwoPoint), sys(SystemId::TwoPoint));
  try {
    maximal_proximal_factor(p);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::NotCatalog);
  }
}

TEST_CASE("SAT escape") {
  auto pl = sys(SystemId::ProjLine);
  auto r = sat_escape(pl, lebesgue_grid(GridSpace::Proj), SetDescriptor::arc(0.2, 0.3 * kPi), SL2Sampler{}, 1000, 0);
  CHECK(r.base_mass == Catch::Approx(0.3).epsilon(1e-9));
  CHECK(r.mass > 0.99);

  auto t = sat_escape(sys(SystemId::TwoPoint), fair_bit(), SetDescriptor::point(SpacePoint{Bit{0}}),
                      uniform_generators(), 1000, 0);
  CHECK(t.mass == 0.5);

  auto bs = sys(SystemId::BoundaryF2);
  auto A = SetDescriptor::cylinder(FreeWord::parse("a"));
  CHECK(translate_mass(bs, eta_measure(3), A, FreeWord::parse("AAAA")) == Catch::Approx(1.0 - 1.0 / 108).epsilon(1e-12));
  CHECK(sat_escape(bs, eta_measure(3), A, uniform_generators(), 1000, 0).mass > 0.95);

  CHECK_THROWS_AS(sat_escape(sys(SystemId::TwoPoint), dirac(SpacePoint{Bit{1}}), SetDescriptor::point(SpacePoint{Bit{0}}),
                             uniform_generators(), 10, 0),
                  Error);
}

TEST_CASE("Poisson transform and contractibility") {
  auto pl = sys(SystemId::ProjLine);
  auto leb = lebesgue_grid(GridSpace::Proj, 1024);
  for (double t : {0.0, 1.0, 5.0}) CHECK(poisson_transform(pl, leb, "one", Mat2::cartan(0.3, t, 1.1)) == Catch::Approx(1.0));
  CHECK(contractibility_score(pl, leb, "arc", SL2Sampler{}, 1000, 0).score > 0.95);
  auto tp = sys(SystemId::TwoPoint);
  CHECK(contractibility_score(tp, fair_bit(), "bit_sign", uniform_generators(), 200, 0).score < 1e-12);
  try {
    poisson_transform(pl, leb, "nope", Mat2{});
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Unregistered);
  }
}
