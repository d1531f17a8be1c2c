#pragma once

#include <complex>

#include "statwalk/measure.hpp"

namespace statwalk {

struct Trajectory {
  std::uint64_t seed = 0;
  std::uint64_t stream = 0;
  std::vector<GroupElement> xi;   // increments xi_1..xi_n
  std::vector<GroupElement> eta;  // eta_0 = e, eta_k = eta_{k-1} xi_k

  std::size_t length() const { return xi.size(); }
};

inline GroupElement identity_of(const GroupMeasure& m) {
  if (auto a = std::get_if<AtomicGroupMeasure>(&m)) return identity_like(a->elements.front());
  if (std::holds_alternative<SL2Sampler>(m)) return Mat2{};
  return BlockSwap{};
}

inline Trajectory sample_trajectory(const GroupMeasure& m, std::size_t n, std::uint64_t seed, std::uint64_t stream) {
  Trajectory t;
  t.seed = seed;
  t.stream = stream;
  t.xi.reserve(n);
  t.eta.reserve(n + 1);
  t.eta.push_back(identity_of(m));
  Rng rng(seed, stream, 0x77);
  for (std::size_t k = 0; k < n; ++k) {
    t.xi.push_back(sample_group(m, rng));
    t.eta.push_back(compose(t.eta.back(), t.xi.back()));
  }
  return t;
}

/// Trajectory with g prepended as xi_1 (the shift g omega).
inline Trajectory prepend(const Trajectory& t, const GroupElement& g) {
  Trajectory out;
  out.seed = t.seed;
  out.stream = t.stream;
  out.xi.push_back(g);
  out.xi.insert(out.xi.end(), t.xi.begin(), t.xi.end());
  out.eta.push_back(identity_like(g));
  for (const auto& x : out.xi) out.eta.push_back(compose(out.eta.back(), x));
  return out;
}

/// zeta_k = xi_k xi_{k+1} ... xi_n for k = 1..n (zeta_{n+1} = e); zeta_k = xi_k zeta_{k+1}.
inline std::vector<GroupElement> zeta_products(const Trajectory& t) {
  std::size_t n = t.length();
  std::vector<GroupElement> z(n + 2, t.eta.front());
  for (std::size_t k = n; k >= 1; --k) z[k] = compose(t.xi[k - 1], z[k + 1]);
  return z;
}

// ---------------------------------------------------------------------------
// Conditional measures.

struct WalkOptions {
  int depth = 5;   // cylinder depth of conditional measures on symbolic spaces
  int delta = 10;  // lag of the convergence diagnostic
  int window = 16; // bins per atom window for max_atom_mass on grids
};

struct ConditionalMeasureEstimate {
  Measure measure;
  std::size_t n = 0;
  double diagnostic = 0;
  double point_mass_score = 0;
};

namespace detail {

inline std::complex<double> resultant(const GridMeasure& g, int copy) {
  std::complex<double> s = 0;
  double per = g.period(), h = g.width();
  for (int i = 0; i < g.n; ++i) {
    double m = g.mass[(copy - 1) * g.n + i];
    if (m != 0) s += m * std::polar(1.0, kTwoPi * (i + 0.5) * h / per);
  }
  return s;
}

inline double circle_angle(const SpacePoint& x, double& per) {
  if (auto r = std::get_if<RayAngle>(&x.value)) {
    per = kTwoPi;
    return r->theta;
  }
  per = kPi;
  return x.as<ProjAngle>().theta;
}

}  // namespace detail

/// Circle spaces: 1 - circular variance. Symbolic spaces: largest cylinder
/// mass at `depth`. Finite spaces: largest atom. Two copies of P1: largest
/// per-copy concentration (mass of the copy times its resultant length).
inline double point_mass_score(const Measure& mu, int depth = 5) {
  if (auto g = std::get_if<GridMeasure>(&mu)) {
    double best = 0;
    for (int c = 1; c <= g->copies(); ++c) best = std::max(best, std::abs(detail::resultant(*g, c)));
    return std::min(1.0, best);
  }
  if (auto c = std::get_if<CylinderMeasure>(&mu)) {
    int d = std::min(depth, c->depth);
    auto t = d == c->depth ? *c : cylinder_at_depth(*c, d);
    return *std::max_element(t.mass.begin(), t.mass.end());
  }
  if (auto f = std::get_if<FiberedMeasure>(&mu)) {
    double best = 0;
    for (std::size_t i = 0; i < f->labels.size(); ++i) {
      int d = std::min(depth, f->fibers[i].depth);
      auto t = cylinder_at_depth(f->fibers[i], d);
      best = std::max(best, f->weights[i] * *std::max_element(t.mass.begin(), t.mass.end()));
    }
    return best;
  }
  const auto& a = std::get<AtomicMeasure>(mu);
  double per = detail::circle_period(mu);
  if (per > 0) {
    std::complex<double> s = 0;
    double p;
    for (std::size_t i = 0; i < a.points.size(); ++i)
      s += a.weights[i] * std::polar(1.0, kTwoPi * detail::circle_angle(a.points[i], p) / per);
    return std::min(1.0, std::abs(s));
  }
  auto merged = detail::merge_atoms(a);
  return *std::max_element(merged.weights.begin(), merged.weights.end());
}

/// Largest mass of an "atom": a window of `window` consecutive bins on a
/// grid, a single point for atomic measures.
inline double max_atom_mass(const Measure& mu, int window = 16) {
  if (auto g = std::get_if<GridMeasure>(&mu)) {
    double best = 0;
    for (int c = 0; c < g->copies(); ++c) {
      double s = 0;
      for (int i = 0; i < window; ++i) s += g->mass[c * g->n + i % g->n];
      best = std::max(best, s);
      for (int i = 0; i < g->n; ++i) {
        s += g->mass[c * g->n + (i + window) % g->n] - g->mass[c * g->n + i];
        best = std::max(best, s);
      }
    }
    return best;
  }
  if (auto a = std::get_if<AtomicMeasure>(&mu)) {
    auto merged = detail::merge_atoms(*a);
    return *std::max_element(merged.weights.begin(), merged.weights.end());
  }
  return point_mass_score(mu);
}

/// g mu tabulated for the walk: symbolic measures at the declared depth
/// (exact there, no tail rule), grids and atoms as in pushforward.
inline Measure push_for_walk(const SystemHandle& sys, const GroupElement& g, const Measure& mu, int depth) {
  if (auto c = std::get_if<CylinderMeasure>(&mu)) {
    CylinderMeasure src = *c;
    src.exact.clear();
    return pushforward_at_depth(std::get<FreeWord>(g), src, depth);
  }
  if (auto f = std::get_if<FiberedMeasure>(&mu)) {
    FiberedMeasure src = *f;
    for (auto& x : src.fibers) x.exact.clear();
    return pushforward_fibered(std::get<FreeWord>(g), src, depth);
  }
  return pushforward(sys, g, mu);
}

inline ConditionalMeasureEstimate conditional_measure(const SystemHandle& sys, const Measure& mu, const Trajectory& tr,
                                                      std::size_t n, const WalkOptions& opt = {}) {
  if (n > tr.length()) fail(ErrorKind::OutOfRange, "n exceeds the trajectory length");
  ConditionalMeasureEstimate est;
  est.n = n;
  est.measure = push_for_walk(sys, tr.eta[n], mu, opt.depth);
  std::size_t lag = std::min<std::size_t>(n, static_cast<std::size_t>(opt.delta));
  if (lag > 0) {
    auto prev = push_for_walk(sys, tr.eta[n - lag], mu, opt.depth);
    est.diagnostic = weak_star_distance(est.measure, prev);
  }
  est.point_mass_score = point_mass_score(est.measure, opt.depth);
  return est;
}

// ---------------------------------------------------------------------------
// Test functions and the martingale f(eta_k) = integral of F(eta_k x) dmu(x).

struct TestFunction {
  enum Kind { One, Fourier, FourierSin, Arc, Cylinder, BitIndicator, BitSign } kind = One;
  int mode = 1;
  FreeWord word;
  std::string id;
};

/// Registered ids: one, fourier<k>, fourier<k>_sin, arc, cyl:<word>, bit, bit_sign.
/// bit is the indicator of 1; bit_sign is 1 on 0 and -1 on 1.
inline TestFunction test_function(const std::string& id) {
  TestFunction f;
  f.id = id;
  if (id == "one") return f;
  if (id == "arc") {
    f.kind = TestFunction::Arc;
    return f;
  }
  if (id == "bit" || id == "bit_sign") {
    f.kind = id == "bit" ? TestFunction::BitIndicator : TestFunction::BitSign;
    return f;
  }
  if (id.rfind("cyl:", 0) == 0) {
    f.kind = TestFunction::Cylinder;
    f.word = FreeWord::parse(id.substr(4));
    if (f.word.empty()) fail(ErrorKind::Unregistered, "cylinder test function needs a word");
    return f;
  }
  if (id.rfind("fourier", 0) == 0) {
    std::string rest = id.substr(7);
    bool sine = rest.size() > 4 && rest.substr(rest.size() - 4) == "_sin";
    if (sine) rest = rest.substr(0, rest.size() - 4);
    if (!rest.empty() && std::all_of(rest.begin(), rest.end(), ::isdigit)) {
      f.kind = sine ? TestFunction::FourierSin : TestFunction::Fourier;
      f.mode = std::stoi(rest);
      return f;
    }
  }
  fail(ErrorKind::Unregistered, "unregistered test function '" + id + "'");
}

namespace detail {

/// Smoothed indicator of the first half-period: a raised-cosine ramp of width
/// a sixteenth of the period on each side.
inline double smooth_arc(double u) {
  const double r = 1.0 / 16;
  auto rise = [&](double x) { return 0.5 - 0.5 * std::cos(kPi * std::clamp(x / r + 0.5, 0.0, 1.0)); };
  u = wrap(u, 1.0);
  if (u >= 0.75) u -= 1.0;
  return rise(u) * rise(0.5 - u);
}

inline double circle_value(const TestFunction& f, double u) {
  switch (f.kind) {
    case TestFunction::One: return 1.0;
    case TestFunction::Fourier: return std::cos(kTwoPi * f.mode * u);
    case TestFunction::FourierSin: return std::sin(kTwoPi * f.mode * u);
    case TestFunction::Arc: return smooth_arc(u);
    default: fail(ErrorKind::Unregistered, "test function '" + f.id + "' is not defined on circles");
  }
}

/// Average of the test function over a bin [u0, u0 + du] (u in turns).
inline double circle_bin_average(const TestFunction& f, double u0, double du) {
  if (f.kind == TestFunction::Fourier || f.kind == TestFunction::FourierSin) {
    double w = kTwoPi * f.mode;
    double sinc = std::sin(w * du / 2) / (w * du / 2);
    return circle_value(f, u0 + du / 2) * sinc;
  }
  return circle_value(f, u0 + du / 2);
}

inline bool on_bits(const TestFunction& f) {
  return f.kind == TestFunction::BitIndicator || f.kind == TestFunction::BitSign;
}

inline double bit_value(const TestFunction& f, int v) {
  if (!on_bits(f)) fail(ErrorKind::Unregistered, "'" + f.id + "' is not defined on bits");
  if (f.kind == TestFunction::BitSign) return v == 0 ? 1.0 : -1.0;
  return v == 1 ? 1.0 : 0.0;
}

inline double point_value(const TestFunction& f, const SpacePoint& x) {
  if (f.kind == TestFunction::One) return 1.0;
  return std::visit(
      [&](const auto& p) -> double {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, RayAngle>) return circle_value(f, p.theta / kTwoPi);
        else if constexpr (std::is_same_v<T, ProjAngle>) return circle_value(f, p.theta / kPi);
        else if constexpr (std::is_same_v<T, Tagged>) return circle_value(f, p.theta / kPi);
        else if constexpr (std::is_same_v<T, WordPrefix>) {
          if (f.kind != TestFunction::Cylinder) fail(ErrorKind::Unregistered, "'" + f.id + "' is not defined on words");
          return p.word.prefix(f.word.size()) == f.word ? 1.0 : 0.0;
        } else if constexpr (std::is_same_v<T, Bit>) {
          return bit_value(f, p.value);
        } else if constexpr (std::is_same_v<T, BitSeq>) {
          return bit_value(f, p.first());
        } else if constexpr (std::is_same_v<T, PointPair>) {
          if (on_bits(f)) return point_value(f, p.parts[0]);
          return point_value(f, p.parts[1]);
        } else {
          fail(ErrorKind::Unregistered, "'" + f.id + "' is not defined on this space");
        }
      },
      x.value);
}

}  // namespace detail

/// Integral of the test function against a measure.
inline double integrate(const TestFunction& f, const Measure& mu) {
  if (f.kind == TestFunction::One) return total_mass(mu);
  if (auto g = std::get_if<GridMeasure>(&mu)) {
    double s = 0, du = 1.0 / g->n;
    for (std::size_t i = 0; i < g->mass.size(); ++i)
      if (g->mass[i] != 0) s += g->mass[i] * detail::circle_bin_average(f, static_cast<double>(i % g->n) * du, du);
    return s;
  }
  if (auto c = std::get_if<CylinderMeasure>(&mu)) {
    if (f.kind != TestFunction::Cylinder) fail(ErrorKind::Unregistered, "'" + f.id + "' is not defined on words");
    if (static_cast<int>(f.word.size()) > c->depth) fail(ErrorKind::OutOfRange, "cylinder test word deeper than the table");
    return cylinder_mass(*c, f.word);
  }
  if (auto fb = std::get_if<FiberedMeasure>(&mu)) {
    double s = 0;
    for (std::size_t i = 0; i < fb->labels.size(); ++i) {
      if (detail::on_bits(f))
        s += fb->weights[i] * detail::point_value(f, fb->labels[i]);
      else if (f.kind == TestFunction::Cylinder)
        s += fb->weights[i] * cylinder_mass(fb->fibers[i], f.word);
      else
        fail(ErrorKind::Unregistered, "'" + f.id + "' is not defined on this space");
    }
    return s;
  }
  const auto& a = std::get<AtomicMeasure>(mu);
  double s = 0;
  for (std::size_t i = 0; i < a.points.size(); ++i) s += a.weights[i] * detail::point_value(f, a.points[i]);
  return s;
}

struct MartingaleTrack {
  std::vector<double> values;  // f(eta_k), k = 1..n
  std::vector<double> tail;    // tail[K-1] = sup_{k >= K} |f(eta_k) - f(eta_n)|
};

inline MartingaleTrack martingale_track(const SystemHandle& sys, const std::string& test_id, const Measure& mu,
                                        const Trajectory& tr, const WalkOptions& opt = {}) {
  auto f = test_function(test_id);
  int depth = std::max(opt.depth, static_cast<int>(f.word.size()));
  MartingaleTrack out;
  for (std::size_t k = 1; k <= tr.length(); ++k) out.values.push_back(integrate(f, push_for_walk(sys, tr.eta[k], mu, depth)));
  out.tail.assign(out.values.size(), 0.0);
  double run = 0;
  for (std::size_t k = out.values.size(); k-- > 0;) {
    run = std::max(run, std::fabs(out.values[k] - out.values.back()));
    out.tail[k] = run;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Trial-level diagnostics. Trial i uses stream id i.

struct ProximalityReport {
  double fraction = 0;
  std::vector<double> scores;
  std::vector<double> diagnostics;
  double median_diagnostic = 0;
  double median_score = 0;
};

inline double median(std::vector<double> v) {
  if (v.empty()) return 0;
  std::sort(v.begin(), v.end());
  std::size_t k = v.size() / 2;
  return v.size() % 2 ? v[k] : 0.5 * (v[k - 1] + v[k]);
}

inline std::vector<ConditionalMeasureEstimate> sample_conditional_measures(const SystemHandle& sys, const Measure& mu,
                                                                           const GroupMeasure& m, std::size_t trials,
                                                                           std::size_t n, std::uint64_t seed,
                                                                           const WalkOptions& opt = {}) {
  return parallel_map<ConditionalMeasureEstimate>(trials, [&](std::size_t i) {
    auto tr = sample_trajectory(m, n, seed, i);
    return conditional_measure(sys, mu, tr, n, opt);
  });
}

inline ProximalityReport proximality_index(const SystemHandle& sys, const Measure& mu, const GroupMeasure& m,
                                           std::size_t trials, std::size_t n, double threshold, std::uint64_t seed,
                                           const WalkOptions& opt = {}) {
  if (trials < 1) fail(ErrorKind::InvalidArgument, "trials must be >= 1");
  auto est = sample_conditional_measures(sys, mu, m, trials, n, seed, opt);
  ProximalityReport r;
  std::size_t hit = 0;
  for (const auto& e : est) {
    r.scores.push_back(e.point_mass_score);
    r.diagnostics.push_back(e.diagnostic);
    if (e.point_mass_score > threshold) ++hit;
  }
  r.fraction = static_cast<double>(hit) / static_cast<double>(trials);
  r.median_diagnostic = median(r.diagnostics);
  r.median_score = median(r.scores);
  return r;
}

/// Distance from the barycenter of sampled conditional measures to mu.
inline double barycenter_residual(const SystemHandle& sys, const Measure& mu, const GroupMeasure& m,
                                  std::size_t trials, std::size_t n, std::uint64_t seed, const WalkOptions& opt = {}) {
  if (trials < 2) fail(ErrorKind::InvalidArgument, "trials must be >= 2");
  auto est = sample_conditional_measures(sys, mu, m, trials, n, seed, opt);
  MeasureOnMeasures P;
  for (auto& e : est) {
    P.measures.push_back(std::move(e.measure));
    P.weights.push_back(1.0 / static_cast<double>(trials));
  }
  auto bar = barycenter(P);
  if (std::holds_alternative<CylinderMeasure>(mu)) {
    CellSpec cs;
    cs.word_depth = std::min(opt.depth, 3);
    return cell_tv(bar, mu, cs);
  }
  return weak_star_distance(bar, mu);
}

struct AbsContinuityReport {
  double score = 0;           // fraction of mu_omega with bounded density ratio
  double invariance = 0;      // max distance between g mu and mu over sampled g
  bool invariant = false;
  bool suspicious = false;    // score 1 while invariance fails
};

/// A sampled mu_omega counts as absolutely continuous at grid resolution when
/// d mu_omega / d mu stays below `ratio_cap` on every bin and it puts less than
/// 1e-6 on the zero-density bins of mu.
inline AbsContinuityReport abs_continuity_score(const SystemHandle& sys, const Measure& mu, const GroupMeasure& m,
                                                std::size_t trials, std::size_t n, std::uint64_t seed,
                                                double ratio_cap = 100.0, double invariance_tol = 1e-3) {
  bool atomic = std::holds_alternative<AtomicMeasure>(mu);
  if (!std::holds_alternative<GridMeasure>(mu) && !atomic)
    fail(ErrorKind::InvalidArgument, "abs_continuity_score needs a grid (or atomic) measure");
  auto est = sample_conditional_measures(sys, mu, m, trials, n, seed);
  std::size_t ok = 0;
  for (const auto& e : est) {
    bool ac = true;
    if (atomic) {
      auto base = detail::merge_atoms(std::get<AtomicMeasure>(mu));
      std::map<std::string, double> ref;
      for (std::size_t i = 0; i < base.points.size(); ++i) ref[detail::point_key(base.points[i])] = base.weights[i];
      auto cur = detail::merge_atoms(std::get<AtomicMeasure>(e.measure));
      for (std::size_t i = 0; i < cur.points.size() && ac; ++i) {
        auto it = ref.find(detail::point_key(cur.points[i]));
        double r = it == ref.end() ? 0.0 : it->second;
        if (r <= 0 ? cur.weights[i] >= 1e-6 : cur.weights[i] / r > ratio_cap) ac = false;
      }
    } else {
      const auto& base = std::get<GridMeasure>(mu);
      const auto& cur = std::get<GridMeasure>(e.measure);
      double zero_mass = 0;
      for (std::size_t i = 0; i < base.mass.size() && ac; ++i) {
        if (base.mass[i] <= 0)
          zero_mass += cur.mass[i];
        else if (cur.mass[i] / base.mass[i] > ratio_cap)
          ac = false;
      }
      if (zero_mass >= 1e-6) ac = false;
    }
    if (ac) ++ok;
  }
  AbsContinuityReport r;
  r.score = static_cast<double>(ok) / static_cast<double>(trials);
  Rng rng(seed, trials, 0x1a);
  for (int i = 0; i < 16; ++i) r.invariance = std::max(r.invariance, weak_star_distance(pushforward(sys, sample_group(m, rng), mu), mu));
  r.invariant = r.invariance < invariance_tol;
  r.suspicious = r.score == 1.0 && !r.invariant;
  return r;
}

}  // namespace statwalk
