#include <catch_amalgamated.hpp>

#include "statwalk/recurrence.hpp"

using namespace statwalk;

namespace {

bool has_ap_bruteforce(unsigned mask, int N, int k) {
  for (int s = 0; s < N; ++s)
    for (int d = 1; s + (k - 1) * d < N; ++d) {
      bool ok = true;
      for (int j = 0; j < k && ok; ++j) ok = mask >> (s + j * d) & 1u;
      if (ok) return true;
    }
  return false;
}

GroupSetL arc_set(double lo, double frac, double x0 = 0.3) {
  GroupSetL L;
  L.A = ArcUnion::arc(lo, frac * kPi);
  L.x0 = x0;
  return L;
}

}  // namespace

TEST_CASE("find_ap returns the first progression") {
  auto S = IntSubset::make(20, {2, 5, 7, 9, 11});
  auto ap = find_ap(S, 3);
  REQUIRE(ap);
  CHECK(*ap == std::pair{5, 2});
  CHECK(find_ap(S, 4) == std::pair{5, 2});
  CHECK(!find_ap(S, 5));
  CHECK(find_ap(S, 1) == std::pair{2, 0});
  CHECK(find_ap(IntSubset::make(9, {1, 2, 4, 5}), 3) == std::nullopt);
  CHECK_THROWS_AS(IntSubset::make(5, {0, 3}), Error);
}

TEST_CASE("find_ap agrees with a bitmask scan") {
  Rng rng(11, 0, 0);
  for (int trial = 0; trial < 2000; ++trial) {
    int N = 1 + static_cast<int>(rng.uniform() * 24);
    unsigned mask = static_cast<unsigned>(rng.bits()) & ((1u << N) - 1u);
    std::vector<int> e;
    for (int i = 0; i < N; ++i)
      if (mask >> i & 1u) e.push_back(i + 1);
    for (int k : {3, 4}) CHECK(find_ap(IntSubset::make(N, e), k).has_value() == has_ap_bruteforce(mask, N, k));
  }
}

TEST_CASE("largest progression-free sizes") {
  std::vector<int> r3 = {0, 1, 2, 2, 3, 4, 4, 4, 4, 5, 5, 6, 6, 7, 8, 8, 8};
  CHECK(ap_free_sizes(3, 16) == r3);
  auto r4 = ap_free_sizes(4, 14);
  for (int N = 1; N <= 14; ++N) {
    int best = 0;
    for (unsigned m = 0; m < (1u << N); ++m)
      if (!has_ap_bruteforce(m, N, 4)) best = std::max(best, std::popcount(m));
    CHECK(r4[N] == best);
  }
}

TEST_CASE("szemeredi numbers") {
  CHECK(szemeredi_number(3, 1.0).N == 3);
  CHECK(szemeredi_number(4, 1.0).N == 4);
  CHECK(szemeredi_number(3, 0.6, 20).N == 7);
  CHECK(szemeredi_number(3, 0.5).N == 17);
  CHECK(szemeredi_number(4, 0.7).N == 12);
  CHECK(szemeredi_number(4, 0.8).N == 4);
  CHECK(!szemeredi_number(3, 0.2, 20).N);
  CHECK(szemeredi_number(3, 0.5, 40, 1).N == szemeredi_number(3, 0.5, 40, 8).N);
  // Larger density never needs a larger N.
  int prev = 0;
  for (double d : {1.0, 0.8, 0.7, 0.6, 0.5}) {
    int n = *szemeredi_number(3, d).N;
    CHECK(n >= prev);
    prev = n;
  }
  try {
    szemeredi_number(3, 0.5, 41);
    FAIL("expected InfeasibleBudget");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::InfeasibleBudget);
  }
  CHECK_THROWS_AS(szemeredi_number(2, 0.5), Error);
}

TEST_CASE("arc unions") {
  auto A = ArcUnion::make({{3.0, 0.2}, {0.1, 0.2}, {0.25, 0.2}});
  CHECK(A.arcs.size() == 2);
  CHECK(A.measure() == Catch::Approx((0.2 + 0.35) / kPi));
  CHECK(A.contains(0.02));  // wrapped piece of the first arc
  CHECK(!A.contains(1.0));
  CHECK(A.distance(0.5) == Catch::Approx(0.05));
  CHECK(A.depth(0.3) == Catch::Approx(0.15));
  CHECK(ArcUnion::make({{0, 2.0}, {1.9, 1.5}}).is_full());
  CHECK(ArcUnion::full().depth(1.0) == Catch::Approx(kPi / 2));
}

TEST_CASE("parabolic intersections") {
  auto B = ArcUnion::arc(0.5, 0.3 * kPi);
  double y0 = B.largest_center();
  Mat2 g = parabolic_fixing(y0, 4.0);
  auto e0 = density_point_intersection(B, g, 0);
  CHECK(e0.estimate == Catch::Approx(0.3).epsilon(1e-12));
  auto e = density_point_intersection(B, g, 6);
  CHECK(e.estimate > 0.05);
  CHECK(e.refined > 0.05);
  CHECK(!e.grid_sensitive);
  CHECK(e.estimate <= 0.3 + 1e-9);
  try {
    density_point_intersection(B, Mat2::cartan(0.1, 1.0, 0.2), 3);
    FAIL("expected NotParabolic");
  } catch (const Error& err) {
    CHECK(err.kind() == ErrorKind::NotParabolic);
  }
  CHECK_THROWS_AS(density_point_intersection(B, g, 3, 1024), Error);
}

TEST_CASE("correspondence: mu(A) and a witness for three rotations") {
  auto L = arc_set(0.4, 0.3);
  auto b = correspondence_build(L);
  CHECK(b.converged);
  CHECK(b.mu_A == Catch::Approx(0.3).margin(0.02));

  std::vector<Mat2> gs = {Mat2::rotation(0.0), Mat2::rotation(0.2), Mat2::rotation(-0.15)};
  auto w = correspondence_witness(L, gs);
  REQUIRE(w);
  CHECK(w->intersection == Catch::Approx((0.3 * kPi - 0.35) / kPi).margin(1e-3));
  for (std::size_t i = 0; i < gs.size(); ++i) {
    CHECK(w->margins[i].margin > 0);
    CHECK(L.contains(gs[i] * w->a));
  }
  // Dense search over rotations: the best common depth matches.
  double best = 0;
  for (int i = 0; i < 20000; ++i) {
    Mat2 a = Mat2::rotation(kPi * i / 20000.0);
    double worst = kPi;
    for (const auto& g : gs) worst = std::min(worst, L.A.depth(detail::proj_act(g * a, L.x0)));
    best = std::max(best, worst);
  }
  double got = kPi;
  for (const auto& m : w->margins) got = std::min(got, m.depth);
  CHECK(got == Catch::Approx(best).margin(2e-3));

  std::vector<Mat2> far = {Mat2::rotation(0.0), Mat2::rotation(0.5 * kPi)};
  CHECK(!correspondence_witness(L, far));
  GroupSetL empty;
  CHECK_THROWS_AS(correspondence_build(empty), Error);
}

TEST_CASE("szemeredi pipeline on a 0.6 pi arc") {
  auto L = arc_set(0.2, 0.6);
  auto r = szemeredi_sl2(L, 2, 0.05, 5.0);
  REQUIRE(r.success);
  const auto& w = *r.witness;
  CHECK(w.margins.size() == 3);
  for (const auto& m : w.margins) CHECK(m.margin > 0.01);
  CHECK(w.h_norm > 5.0);
  CHECK(w.h.det() == Catch::Approx(1.0).margin(1e-9));
  auto v = verify_witness(L, w);
  for (std::size_t j = 0; j < v.size(); ++j) {
    CHECK(v[j].margin == Catch::Approx(w.margins[j].margin).margin(1e-9));
    CHECK(v[j].depth == Catch::Approx(w.margins[j].depth).margin(1e-9));
  }
  CHECK(to_json(r).dump() == to_json(szemeredi_sl2(L, 2, 0.05, 5.0)).dump());
}

TEST_CASE("szemeredi pipeline on the full line") {
  GroupSetL L;
  L.A = ArcUnion::full();
  auto r = szemeredi_sl2(L, 3, 0.07, 2.0);
  REQUIRE(r.success);
  for (const auto& m : r.witness->margins) CHECK(m.margin == 0.07);
}

TEST_CASE("szemeredi pipeline: negative control and budgets") {
  auto L = arc_set(1.0, 0.05);
  SzemerediBudgets b;
  b.min_mass = 0.05;
  auto r = szemeredi_sl2(L, 4, 0.05, 5.0, b);
  CHECK(!r.success);
  CHECK(r.failed_stage == "intersection");
  CHECK(r.stages.back().value < 0.05);
  CHECK(to_json(r).contains("failed_stage"));

  auto infeasible = [&](auto f) {
    try {
      f();
      return false;
    } catch (const Error& e) {
      return e.kind() == ErrorKind::InfeasibleBudget;
    }
  };
  CHECK(infeasible([&] { szemeredi_sl2(L, 5, 0.05, 5.0); }));
  CHECK(infeasible([&] { szemeredi_sl2(L, 2, 0.0, 5.0); }));
  SzemerediBudgets coarse;
  coarse.grid = 512;
  CHECK(infeasible([&] { szemeredi_sl2(L, 2, 0.05, 5.0, coarse); }));
}
