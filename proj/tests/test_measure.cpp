#include <catch_amalgamated.hpp>

#include "statwalk/measure.hpp"

using namespace statwalk;
using Catch::Approx;

namespace {

SystemHandle boundary() { return SystemHandle::make(SystemId::BoundaryF2); }
SystemHandle rays() { return SystemHandle::make(SystemId::RayCircle); }

FreeWord random_word(Rng& rng, int len) {
  FreeWord w;
  while (static_cast<int>(w.size()) < len) w.push_back(static_cast<std::uint8_t>(rng.below(4)));
  return w;
}

// Independent oracle: enumerate all reduced words of length n with their eta
// mass, move each by g (plain string cancellation), and tally prefixes of
// length k <= n - |g|.
std::map<std::string, Rational> brute_push_eta(const std::string& g, int n, int k) {
  std::vector<std::string> words{""};
  auto inv = [](char c) { return static_cast<char>(std::islower(c) ? std::toupper(c) : std::tolower(c)); };
  for (int i = 0; i < n; ++i) {
    std::vector<std::string> next;
    for (const auto& w : words)
      for (char c : std::string("aAbB"))
        if (w.empty() || w.back() != inv(c)) next.push_back(w + c);
    words.swap(next);
  }
  Rational each(1, static_cast<long long>(words.size()));
  std::map<std::string, Rational> out;
  for (const auto& w : words) {
    std::string r = g;
    for (char c : w) {
      if (!r.empty() && r.back() == inv(c))
        r.pop_back();
      else
        r.push_back(c);
    }
    out[r.substr(0, k)] += each;
  }
  return out;
}

}  // namespace

TEST_CASE("eta cylinders follow 1/(4 3^(n-1)) exactly") {
  auto eta = eta_measure(2);
  for (int n = 1; n <= 6; ++n) {
    Rational want(1, 4 * static_cast<long long>(pow3(n - 1)));
    CHECK(cylinder_mass_exact(eta, index_word(0, n)) == want);
    CHECK(cylinder_mass_exact(eta, index_word(cyl_count(n) - 1, n)) == want);
  }
}

TEST_CASE("word indexing round trips") {
  for (int d = 1; d <= 5; ++d)
    for (std::size_t i = 0; i < cyl_count(d); ++i) {
      auto w = index_word(i, d);
      REQUIRE(w.is_reduced());
      REQUIRE(word_index(w, d) == i);
    }
}

TEST_CASE("a pushes eta to 3/4 on C(a) and 1/12 on C(a^-1)") {
  auto push = std::get<CylinderMeasure>(pushforward(boundary(), FreeWord::parse("a"), eta_measure(2)));
  CHECK(cylinder_mass_exact(push, FreeWord::parse("a")) == Rational(3, 4));
  CHECK(cylinder_mass_exact(push, FreeWord::parse("A")) == Rational(1, 12));
  CHECK(cylinder_mass_exact(push, FreeWord::parse("b")) == Rational(1, 12));
}

TEST_CASE("cylinder pushforward matches brute-force enumeration") {
  for (std::string g : {"a", "ab", "Ba", "abA", "bbA"}) {
    auto push = std::get<CylinderMeasure>(pushforward(boundary(), FreeWord::parse(g), eta_measure(2)));
    int k = 4;
    auto oracle = brute_push_eta(g, 9, k);
    Rational total(0);
    for (std::size_t i = 0; i < cyl_count(k); ++i) {
      auto w = index_word(i, k);
      CHECK(cylinder_mass_exact(push, w) == oracle[w.str()]);
      total += oracle[w.str()];
    }
    CHECK(total == 1);
  }
}

TEST_CASE("pushforward composes (exact cylinders, float grids)") {
  Rng rng(11, 0);
  auto eta = eta_measure(2);
  for (int i = 0; i < 40; ++i) {
    auto g = random_word(rng, 1 + static_cast<int>(rng.below(3)));
    auto h = random_word(rng, 1 + static_cast<int>(rng.below(3)));
    int D = 2 + static_cast<int>(g.size() + h.size());
    auto lhs = pushforward_at_depth(g * h, eta, D);
    auto rhs = pushforward_at_depth(g, pushforward_at_depth(h, eta, 2 + static_cast<int>(h.size())), D);
    REQUIRE(lhs.exact == rhs.exact);
  }
  auto inexact = eta;
  inexact.exact.clear();
  for (int i = 0; i < 1000; ++i) {
    auto g = random_word(rng, 1 + static_cast<int>(rng.below(2)));
    auto h = random_word(rng, 1 + static_cast<int>(rng.below(2)));
    int D = 2 + static_cast<int>(g.size() + h.size());
    auto lhs = pushforward_at_depth(g * h, inexact, D);
    auto rhs = pushforward_at_depth(g, pushforward_at_depth(h, inexact, 2 + static_cast<int>(h.size())), D);
    double err = 0;
    for (std::size_t k = 0; k < lhs.mass.size(); ++k) err = std::max(err, std::fabs(lhs.mass[k] - rhs.mass[k]));
    REQUIRE(err < 1e-12);
  }
  auto leb = Measure{lebesgue_grid(GridSpace::Ray, 1024)};
  for (int i = 0; i < 1000; ++i) {
    auto g = Mat2::cartan(rng.uniform(-kPi, kPi), rng.uniform(0, 1), rng.uniform(-kPi, kPi));
    auto h = Mat2::cartan(rng.uniform(-kPi, kPi), rng.uniform(0, 1), rng.uniform(-kPi, kPi));
    auto lhs = pushforward(rays(), g * h, leb);
    auto rhs = pushforward(rays(), g, pushforward(rays(), h, leb));
    // Both are the same transported density up to the bin-averaging of the intermediate step.
    REQUIRE(weak_star_distance(lhs, rhs) < 2 * kTwoPi / 1024);
  }
}

TEST_CASE("rotation keeps the Lebesgue grid") {
  auto leb = Measure{lebesgue_grid(GridSpace::Ray)};
  auto rot = pushforward(rays(), Mat2::rotation(0.731), leb);
  CHECK(weak_star_distance(leb, rot) < 1e-9);
  auto proj = Measure{lebesgue_grid(GridSpace::Proj)};
  CHECK(weak_star_distance(proj, pushforward(SystemHandle::make(SystemId::ProjLine), Mat2::rotation(2.2), proj)) <
        1e-9);
}

TEST_CASE("uniform generators convolve eta to itself") {
  auto out = std::get<CylinderMeasure>(convolve(boundary(), uniform_generators(), eta_measure(3)));
  auto eta = eta_measure(out.depth);
  CHECK(out.exact == eta.exact);
  CHECK(weak_star_distance(out, eta_measure(3)) == 0.0);
}

TEST_CASE("generators flip the two-point system") {
  auto out = std::get<AtomicMeasure>(
      convolve(SystemHandle::make(SystemId::TwoPoint), uniform_generators(), dirac(SpacePoint{Bit{0}})));
  REQUIRE(out.points.size() == 1);
  CHECK(out.points[0].as<Bit>().value == 1);
  CHECK(out.weights[0] == Approx(1.0).margin(1e-12));
}

TEST_CASE("K-bi-invariant convolution keeps Lebesgue up to Monte Carlo error") {
  auto leb = Measure{lebesgue_grid(GridSpace::Ray, 1024)};
  for (int n : {64, 256}) {
    auto out = convolve(rays(), SL2Sampler{}, leb, n, 5);
    CHECK(weak_star_distance(out, leb) < 3.0 / std::sqrt(n));
    CHECK(total_mass(out) == Approx(1.0).margin(1e-12));
  }
}

TEST_CASE("convolution is linear and keeps mass") {
  auto x = Measure{eta_measure(2)};
  auto y = Measure{pushforward(boundary(), FreeWord::parse("ab"), eta_measure(2))};
  auto cx = cylinder_at_depth(std::get<CylinderMeasure>(x), 4);
  auto cy = std::get<CylinderMeasure>(y);
  MeasureOnMeasures mix{{cx, cy}, {0.25, 0.75}};
  auto lhs = std::get<CylinderMeasure>(convolve(boundary(), uniform_generators(), barycenter(mix)));
  auto a = std::get<CylinderMeasure>(convolve(boundary(), uniform_generators(), cx));
  auto b = std::get<CylinderMeasure>(convolve(boundary(), uniform_generators(), cy));
  MeasureOnMeasures mix2{{a, b}, {0.25, 0.75}};
  auto rhs = std::get<CylinderMeasure>(barycenter(mix2));
  REQUIRE(lhs.depth == rhs.depth);
  CHECK(lhs.exact == rhs.exact);
  Rational tot(0);
  for (auto& q : lhs.exact) tot += q;
  CHECK(tot == 1);
}

TEST_CASE("Radon-Nikodym derivatives of a on eta") {
  auto eta = Measure{eta_measure(2)};
  Rng rng(12, 0);
  for (int i = 0; i < 50; ++i) {
    auto w = detail::extend_uniform(FreeWord::letter(static_cast<std::uint8_t>(rng.below(4))), 10, rng);
    double rn = radon_nikodym(boundary(), FreeWord::parse("a"), eta, SpacePoint{WordPrefix{w}});
    CHECK(rn == Approx(w[0] == kA ? 3.0 : 1.0 / 3.0).epsilon(1e-12));
  }
  auto c = eta_measure(2);
  auto g = FreeWord::parse("ab");
  int K = 2 + static_cast<int>(g.size()) + 1;
  Rational integral(0);
  for (std::size_t i = 0; i < cyl_count(K); ++i) {
    auto w = index_word(i, K);
    integral += cylinder_mass_exact(c, w) * radon_nikodym_exact(g, c, w);
  }
  CHECK(integral == 1);
}

TEST_CASE("Radon-Nikodym on grids") {
  auto leb = Measure{lebesgue_grid(GridSpace::Ray)};
  CHECK(radon_nikodym(rays(), Mat2::rotation(1.0), leb, SpacePoint{RayAngle{0.4}}) == Approx(1.0).epsilon(1e-12));
  Rng rng(13, 0);
  for (int i = 0; i < 5; ++i) {
    auto g = Mat2::cartan(rng.uniform(-kPi, kPi), rng.uniform(0, 1), rng.uniform(-kPi, kPi));
    const auto& grid = std::get<GridMeasure>(leb);
    double s = 0;
    for (int k = 0; k < grid.n; ++k)
      s += grid.mass[k] * radon_nikodym(rays(), g, leb, SpacePoint{RayAngle{(k + 0.5) * grid.width()}});
    CHECK(s == Approx(1.0).margin(1e-6));
  }
  auto holey = lebesgue_grid(GridSpace::Ray, 64);
  holey.mass[0] = 0;
  try {
    radon_nikodym(rays(), Mat2::rotation(0.0), holey, SpacePoint{RayAngle{0.01}});
    FAIL("expected zero density");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::ZeroDensity);
  }
}

TEST_CASE("weak-* distance examples") {
  auto d0 = Measure{dirac(SpacePoint{RayAngle{0.0}})};
  auto dpi = Measure{dirac(SpacePoint{RayAngle{kPi}})};
  CHECK(weak_star_distance(d0, d0) == 0.0);
  CHECK(weak_star_distance(d0, dpi) == Approx(kPi).epsilon(1e-12));
  auto eta = eta_measure(1);
  auto a_eta = pushforward(boundary(), FreeWord::parse("a"), eta);
  CHECK(weak_star_distance(eta, a_eta) == Approx(0.5).epsilon(1e-12));
  CHECK_THROWS_AS(weak_star_distance(d0, Measure{eta}), Error);
}

TEST_CASE("rotations are isometries of the circle distance") {
  Rng rng(14, 0);
  for (int i = 0; i < 100; ++i) {
    AtomicMeasure a, b;
    for (int k = 0; k < 5; ++k) {
      a.points.push_back(SpacePoint{RayAngle{rng.uniform(0, kTwoPi)}});
      a.weights.push_back(0.2);
      b.points.push_back(SpacePoint{RayAngle{rng.uniform(0, kTwoPi)}});
      b.weights.push_back(0.2);
    }
    auto g = Mat2::rotation(rng.uniform(-kPi, kPi));
    double d = weak_star_distance(a, b);
    double dg = weak_star_distance(pushforward(rays(), g, a), pushforward(rays(), g, b));
    CHECK(dg == Approx(d).margin(1e-9));
  }
}

TEST_CASE("distance is symmetric and satisfies the triangle inequality") {
  Rng rng(15, 0);
  auto random_atomic = [&] {
    AtomicMeasure a;
    for (int k = 0; k < 4; ++k) {
      a.points.push_back(SpacePoint{ProjAngle{rng.uniform(0, kPi)}});
      a.weights.push_back(0.25);
    }
    return Measure{a};
  };
  for (int i = 0; i < 200; ++i) {
    auto x = random_atomic(), y = random_atomic(), z = random_atomic();
    CHECK(weak_star_distance(x, y) == Approx(weak_star_distance(y, x)).margin(1e-12));
    CHECK(weak_star_distance(x, z) <= weak_star_distance(x, y) + weak_star_distance(y, z) + 1e-12);
  }
}

TEST_CASE("barycenter examples") {
  MeasureOnMeasures P{{dirac(SpacePoint{Bit{0}}), dirac(SpacePoint{Bit{1}})}, {0.5, 0.5}};
  auto b = std::get<AtomicMeasure>(barycenter(P));
  CHECK(weak_star_distance(b, fair_bit()) == 0.0);
  auto eta = eta_measure(2);
  MeasureOnMeasures single{{eta}, {1.0}};
  CHECK(std::get<CylinderMeasure>(barycenter(single)).exact == eta.exact);
  MeasureOnMeasures mixed{{eta, fair_bit()}, {0.5, 0.5}};
  CHECK_THROWS_AS(barycenter(mixed), Error);
}

TEST_CASE("product measures") {
  auto p = product_measure(dirac(SpacePoint{Bit{1}}), dirac(SpacePoint{WordPrefix{FreeWord::parse("ab")}}));
  REQUIRE(p.points.size() == 1);
  auto q = product_measure(fair_bit(), fair_bit());
  REQUIRE(q.points.size() == 4);
  for (double w : q.weights) CHECK(w == 0.25);
  auto nu_eta = product_measure(fair_bit(), eta_measure(2));
  CHECK(weak_star_distance(marginal(nu_eta, 0), fair_bit()) == 0.0);
  CHECK(weak_star_distance(marginal(nu_eta, 1), eta_measure(2)) < 1e-15);
}

TEST_CASE("grid pushforward keeps all mass under strong contraction") {
  auto leb = Measure{lebesgue_grid(GridSpace::Proj, 4096)};
  auto g = Mat2::cartan(0.3, 30.0, 1.1);
  auto out = std::get<GridMeasure>(pushforward(SystemHandle::make(SystemId::ProjLine), g, leb));
  CHECK(total_mass(out) == Approx(1.0).margin(1e-12));
  double top = *std::max_element(out.mass.begin(), out.mass.end());
  CHECK(top > 0.99);
}

#include "statwalk/serialize.hpp"

TEST_CASE("measure JSON round trip is lossless") {
  auto push = pushforward(boundary(), FreeWord::parse("abA"), eta_measure(2));
  auto back = std::get<CylinderMeasure>(measure_from_json(Json::parse(to_json(push).dump())));
  CHECK(back.exact == std::get<CylinderMeasure>(push).exact);
  auto grid = Measure{pushforward(rays(), Mat2::cartan(0.2, 0.7, 1.9), lebesgue_grid(GridSpace::Ray, 256))};
  auto gback = std::get<GridMeasure>(measure_from_json(Json::parse(to_json(grid).dump())));
  CHECK(gback.mass == std::get<GridMeasure>(grid).mass);
  auto prod = Measure{product_measure(fair_bit(), dirac(SpacePoint{Tagged{2, 0.5}}))};
  CHECK(to_json(measure_from_json(to_json(prod))).dump() == to_json(prod).dump());
}
