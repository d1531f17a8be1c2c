#include <catch_amalgamated.hpp>

#include "statwalk/entropy.hpp"

using namespace statwalk;

namespace {

SystemHandle sys(SystemId id) { return SystemHandle::make(id); }

const double kHalfLn3 = 0.5 * std::log(3.0);

}  // namespace

TEST_CASE("exact boundary entropy is half log 3 at every depth") {
  for (int d = 2; d <= 5; ++d) {
    auto e = entropy_exact_f2_boundary(d);
    CHECK(std::fabs(e.value - kHalfLn3) < 1e-12);
    CHECK(e.stderr_ == 0.0);
    CHECK(e.method == "exact");
  }
  CHECK_THROWS_AS(entropy_exact_f2_boundary(1), Error);
}

TEST_CASE("hand computation from cylinder ratios") {
  // d(a eta)/d eta is 3 on C(a) and 1/3 elsewhere.
  auto eta = eta_measure(2);
  auto a = FreeWord::parse("a");
  CHECK(radon_nikodym_exact(a, eta, FreeWord::parse("aab")) == 3);
  CHECK(radon_nikodym_exact(a, eta, FreeWord::parse("bab")) == Rational(1, 3));
  double per_generator = -(0.25 * std::log(3.0) - 0.75 * std::log(3.0));
  CHECK(per_generator == Catch::Approx(kHalfLn3).epsilon(1e-15));
}

TEST_CASE("identity step has zero entropy") {
  AtomicGroupMeasure id;
  id.elements.push_back(FreeWord{});
  id.weights.push_back(1.0);
  CHECK(entropy_exact(id, eta_measure(3)).value == 0.0);
}

TEST_CASE("Monte Carlo agrees with the exact boundary value") {
  auto bs = sys(SystemId::BoundaryF2);
  auto one = entropy_monte_carlo(bs, uniform_generators(), eta_measure(2), {4, 10000, 0, 4});
  CHECK(one.method == "monte_carlo");
  CHECK(std::fabs(one.value - kHalfLn3) < 0.01 + 3 * one.stderr_);
  CHECK(one.stderr_ < 0.01);
  int outside = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto e = entropy_monte_carlo(bs, uniform_generators(), eta_measure(2), {4, 2000, seed, 4});
    if (std::fabs(e.value - kHalfLn3) > 3 * e.stderr_) ++outside;
  }
  CHECK(outside <= 1);
}

TEST_CASE("measure preserving systems have zero entropy, proximal ones positive") {
  auto two = entropy(sys(SystemId::TwoPoint), uniform_generators(), fair_bit());
  CHECK(two.value == 0.0);
  CHECK(two.stderr_ == 0.0);
  auto proj = entropy_monte_carlo(sys(SystemId::ProjLine), SL2Sampler{}, lebesgue_grid(GridSpace::Proj), {64, 1000, 2, 4});
  CHECK(proj.value > 3 * proj.stderr_);
  CHECK(proj.clipped == 0);
}

TEST_CASE("estimates are reproducible across thread counts") {
  auto pl = sys(SystemId::ProjLine);
  auto a = entropy_monte_carlo(pl, SL2Sampler{}, lebesgue_grid(GridSpace::Proj, 1024), {16, 200, 7, 1});
  auto b = entropy_monte_carlo(pl, SL2Sampler{}, lebesgue_grid(GridSpace::Proj, 1024), {16, 200, 7, 8});
  CHECK(a.value == b.value);
  CHECK(a.stderr_ == b.stderr_);
}

TEST_CASE("zero densities are rejected with the bin") {
  auto g = lebesgue_grid(GridSpace::Proj, 64);
  g.mass[17] = 0;
  try {
    entropy_monte_carlo(sys(SystemId::ProjLine), SL2Sampler{}, g, {2, 10, 0, 1});
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::ZeroDensity);
    CHECK(std::string(e.what()).find("17") != std::string::npos);
  }
}

TEST_CASE("skew extension: entropy only in the fibre") {
  auto sk = sys(SystemId::SkewEx6);
  auto mu = nu_times_eta(SystemId::SkewEx6, 2);
  auto hx = entropy(sk, uniform_generators(), mu);
  // Only the letters that move z contribute, each half of the time.
  CHECK(std::fabs(hx.value - 0.25 * std::log(3.0)) < 1e-12);
  auto gap = entropy_factor_gap(sk, mu, sys(SystemId::TwoPoint), fair_bit(), "first", uniform_generators());
  CHECK(gap.hy.value == 0.0);
  CHECK(gap.hx.value > 0);
  CHECK(gap.gap);
}

TEST_CASE("rays over the projective line: no entropy gap") {
  auto rc = sys(SystemId::RayCircle);
  auto g = entropy_factor_gap(rc, lebesgue_grid(GridSpace::Ray, 4096), sys(SystemId::ProjLine),
                              lebesgue_grid(GridSpace::Proj, 2048), "mod_pi", SL2Sampler{}, {64, 1000, 3, 4});
  CHECK_FALSE(g.gap);
  CHECK(g.hx.value > 0);
  CHECK(g.hy.value > 0);
  CHECK(g.hy.value <= g.hx.value + 3 * g.combined_stderr);
}

TEST_CASE("collapsing to a point flags exactly the positive entropies") {
  auto bs = sys(SystemId::BoundaryF2);
  auto triv = sys(SystemId::Trivial);
  auto unit = dirac(SpacePoint{Unit{}});
  auto b = entropy_factor_gap(bs, eta_measure(2), triv, unit, "collapse", uniform_generators());
  CHECK(b.gap);
  auto t = entropy_factor_gap(sys(SystemId::TwoPoint), fair_bit(), triv, unit, "collapse", uniform_generators());
  CHECK_FALSE(t.gap);
}

TEST_CASE("factor gap input validation") {
  auto sk = sys(SystemId::SkewEx6);
  auto mu = nu_times_eta(SystemId::SkewEx6, 2);
  AtomicMeasure skewed{{SpacePoint{Bit{0}}, SpacePoint{Bit{1}}}, {0.7, 0.3}};
  CHECK_THROWS_AS(entropy_factor_gap(sk, mu, sys(SystemId::TwoPoint), skewed, "first", uniform_generators()), Error);
  CHECK_THROWS_AS(entropy_factor_gap(sk, mu, sys(SystemId::ProjLine), fair_bit(), "first", uniform_generators()), Error);
  CHECK_THROWS_AS(entropy_factor_gap(sk, mu, sys(SystemId::TwoPoint), fair_bit(), "mod_pi", uniform_generators()), Error);
}

TEST_CASE("product boundaries: entropy adds up") {
  auto eta = eta_measure(2);
  auto e = entropy_exact_product(uniform_generator_pairs(), eta, eta);
  CHECK(std::fabs(e.value - std::log(3.0)) < 1e-12);
  auto mc = entropy_monte_carlo_product(uniform_generator_pairs(), eta, eta, {16, 2000, 5, 4});
  CHECK(std::fabs(mc.value - std::log(3.0)) < 3 * mc.stderr_);
}
