#pragma once

#include "statwalk/serialize.hpp"
#include "statwalk/walk.hpp"

namespace statwalk {

struct JoinOptions {
  int atoms = 64;  // points drawn from each conditional measure per trial
  WalkOptions walk;
  int threads = 0;
};

/// Atomic approximation of the join, with provenance.
struct JoiningMeasure {
  AtomicMeasure measure;  // points are pairs (x, y)
  SystemHandle x, y;
  std::size_t trials = 0, n = 0;
  std::uint64_t seed = 0;
  int atoms = 0;
  double marginal_x = 0, marginal_y = 0;
};

namespace detail {

inline void check_common_group(const SystemHandle& x, const SystemHandle& y, const GroupMeasure& m) {
  auto kind = group_kind(identity_of(m));
  if (!accepts(x, kind) || !accepts(y, kind))
    fail(ErrorKind::IncompatibleSystem, x.name() + " and " + y.name() + " are not both acted on by this group");
}

/// Finite atomic measures with at most `s` atoms are kept whole; anything
/// else is replaced by s equal-weight draws.
inline std::pair<AtomicMeasure, bool> atoms_for_join(const Measure& mu, int s, Rng& rng) {
  if (auto a = std::get_if<AtomicMeasure>(&mu); a && static_cast<int>(a->points.size()) <= s)
    return {merge_atoms(*a), true};
  AtomicMeasure out;
  for (int k = 0; k < s; ++k) {
    out.points.push_back(sample_point(mu, rng));
    out.weights.push_back(1.0 / s);
  }
  return {out, false};
}

inline void append_pairs(AtomicMeasure& out, const AtomicMeasure& a, bool a_whole, const AtomicMeasure& b,
                         bool b_whole, double scale) {
  if (a_whole || b_whole) {
    for (std::size_t i = 0; i < a.points.size(); ++i)
      for (std::size_t j = 0; j < b.points.size(); ++j) {
        out.points.push_back(make_pair_point(a.points[i], b.points[j]));
        out.weights.push_back(scale * a.weights[i] * b.weights[j]);
      }
    return;
  }
  // two independent samples paired index by index
  for (std::size_t i = 0; i < a.points.size(); ++i) {
    out.points.push_back(make_pair_point(a.points[i], b.points[i]));
    out.weights.push_back(scale * a.weights[i]);
  }
}

inline AtomicMeasure swap_coordinates(const AtomicMeasure& a) {
  AtomicMeasure out = a;
  for (auto& p : out.points) {
    const auto& q = p.as<PointPair>();
    p = make_pair_point(q.parts[1], q.parts[0]);
  }
  return out;
}

/// Scalar used to sort points when building a comonotone coupling.
inline double order_key(const SpacePoint& x) {
  return std::visit(
      [](const auto& p) -> double {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, RayAngle>) return wrap(p.theta, kTwoPi);
        else if constexpr (std::is_same_v<T, ProjAngle>) return wrap(p.theta, kPi);
        else if constexpr (std::is_same_v<T, WordPrefix>) {
          int d = std::min<int>(6, static_cast<int>(p.word.size()));
          return d == 0 ? 0.0 : static_cast<double>(word_index(p.word.prefix(d), d)) / static_cast<double>(cyl_count(d));
        } else if constexpr (std::is_same_v<T, Bit>) return p.value;
        else if constexpr (std::is_same_v<T, BitSeq>) return p.bits;
        else if constexpr (std::is_same_v<T, Tagged>) return (p.copy - 1) * kPi + wrap(p.theta, kPi);
        else return 0.0;
      },
      x.value);
}

}  // namespace detail

/// lambda = integral of mu_omega x nu_omega dP(omega). Each trial draws one
/// trajectory that drives both factors.
inline JoiningMeasure join(const SystemHandle& sys_x, const Measure& mu, const SystemHandle& sys_y, const Measure& nu,
                           const GroupMeasure& m, std::size_t trials, std::size_t n, std::uint64_t seed,
                           const JoinOptions& opt = {}) {
  if (trials < 1) fail(ErrorKind::InvalidArgument, "trials must be >= 1");
  if (opt.atoms < 1) fail(ErrorKind::InvalidArgument, "atoms per trial must be >= 1");
  detail::check_common_group(sys_x, sys_y, m);
  // Draw streams follow a canonical factor order so join(Y, X) is the swap of join(X, Y).
  bool flip = sys_y.name() < sys_x.name();
  auto parts = parallel_map<AtomicMeasure>(
      trials,
      [&](std::size_t i) {
        auto tr = sample_trajectory(m, n, seed, i);
        auto cx = conditional_measure(sys_x, mu, tr, n, opt.walk).measure;
        auto cy = conditional_measure(sys_y, nu, tr, n, opt.walk).measure;
        Rng r0(seed, i, 0x10), r1(seed, i, 0x11);
        auto [ax, wx] = detail::atoms_for_join(cx, opt.atoms, flip ? r1 : r0);
        auto [ay, wy] = detail::atoms_for_join(cy, opt.atoms, flip ? r0 : r1);
        AtomicMeasure out;
        if (!flip) {
          detail::append_pairs(out, ax, wx, ay, wy, 1.0 / static_cast<double>(trials));
          return out;
        }
        detail::append_pairs(out, ay, wy, ax, wx, 1.0 / static_cast<double>(trials));
        return detail::swap_coordinates(out);
      },
      opt.threads);
  JoiningMeasure j;
  for (auto& p : parts) {
    j.measure.points.insert(j.measure.points.end(), p.points.begin(), p.points.end());
    j.measure.weights.insert(j.measure.weights.end(), p.weights.begin(), p.weights.end());
  }
  j.measure = detail::merge_atoms(j.measure);
  j.x = sys_x;
  j.y = sys_y;
  j.trials = trials;
  j.n = n;
  j.seed = seed;
  j.atoms = opt.atoms;
  j.marginal_x = weak_star_distance(marginal(j.measure, 0), mu);
  j.marginal_y = weak_star_distance(marginal(j.measure, 1), nu);
  return j;
}

struct JoiningReport {
  double marginal_x = 0, marginal_y = 0;
  double stationarity = 0;
};

namespace detail {

/// Cell-algebra distance between m * lambda and lambda, accumulated one group
/// element at a time.
inline double stationarity_cells(const SystemHandle& sys, const GroupMeasure& m, const AtomicMeasure& lambda,
                                 int n_samples, std::uint64_t seed, const CellSpec& cs) {
  std::vector<GroupElement> gs;
  std::vector<double> ws;
  if (auto a = std::get_if<AtomicGroupMeasure>(&m)) {
    gs = a->elements;
    ws = a->weights;
  } else {
    for (int i = 0; i < n_samples; ++i) {
      Rng rng(seed, static_cast<std::uint64_t>(i), 0xc0);
      gs.push_back(sample_group(m, rng));
      ws.push_back(1.0 / n_samples);
    }
  }
  std::map<std::string, double> image;
  for (std::size_t k = 0; k < gs.size(); ++k)
    for (std::size_t i = 0; i < lambda.points.size(); ++i)
      image[cell_key(act(sys, gs[k], lambda.points[i]), cs)] += ws[k] * lambda.weights[i];
  auto base = cell_masses(lambda, cs);
  double s = 0;
  for (const auto& [key, v] : image) {
    auto it = base.find(key);
    s += std::fabs(v - (it == base.end() ? 0.0 : it->second));
  }
  for (const auto& [key, v] : base)
    if (!image.count(key)) s += std::fabs(v);
  return 0.5 * s;
}

}  // namespace detail

/// Marginal residuals against mu, nu and the stationarity residual on X x Y.
inline JoiningReport joining_checks(const JoiningMeasure& lambda, const Measure& mu, const Measure& nu,
                                    const GroupMeasure& m, int n_samples = 64, std::uint64_t seed = 0) {
  JoiningReport r;
  r.marginal_x = weak_star_distance(marginal(lambda.measure, 0), mu);
  r.marginal_y = weak_star_distance(marginal(lambda.measure, 1), nu);
  auto prod = SystemHandle::product(lambda.x, lambda.y);
  r.stationarity = detail::stationarity_cells(prod, m, lambda.measure, n_samples, seed, CellSpec{});
  return r;
}

struct UniqueJoiningOptions {
  JoinOptions join;
  std::size_t particles = 1000;  // for the Cesaro candidates
  int steps = 40;
};

struct UniqueJoiningReport {
  std::vector<std::string> kinds;  // "join" or "cesaro:<coupled fraction>"
  std::vector<double> stationarity;
  double max_distance = 0;
  bool x_catalog_proximal = false;
};

namespace detail {

/// Particles start in a coupling of mu and nu where a fraction `p` is paired
/// in sorted order (comonotone) and the rest independently; each particle
/// then follows its own m-walk. Returns the Cesaro average of the first
/// `steps` particle distributions.
inline AtomicMeasure cesaro_joining(const SystemHandle& prod, const Measure& mu, const Measure& nu,
                                    const GroupMeasure& m, double p, std::size_t N, int steps, std::uint64_t seed) {
  Rng rng(seed, 0, 0xd1);
  std::vector<SpacePoint> xs, ys;
  for (std::size_t i = 0; i < N; ++i) xs.push_back(sample_point(mu, rng));
  for (std::size_t i = 0; i < N; ++i) ys.push_back(sample_point(nu, rng));
  std::size_t c = static_cast<std::size_t>(std::llround(p * static_cast<double>(N)));
  auto by_key = [](const SpacePoint& a, const SpacePoint& b) { return order_key(a) < order_key(b); };
  std::stable_sort(xs.begin(), xs.begin() + c, by_key);
  std::stable_sort(ys.begin(), ys.begin() + c, by_key);
  AtomicMeasure out;
  double w = 1.0 / (static_cast<double>(N) * steps);
  for (std::size_t i = 0; i < N; ++i) {
    Rng walk(seed, i + 1, 0xd0);
    SpacePoint z = make_pair_point(xs[i], ys[i]);
    for (int k = 0; k < steps; ++k) {
      out.points.push_back(z);
      out.weights.push_back(w);
      z = act(prod, sample_group(m, walk), z);
    }
  }
  return merge_atoms(out);
}

}  // namespace detail

/// Candidate joinings from several join seeds and from Cesaro averages of
/// perturbed product couplings; reports their largest pairwise distance.
inline UniqueJoiningReport unique_joining_probe(const SystemHandle& sys_x, const Measure& mu, const SystemHandle& sys_y,
                                                const Measure& nu, const GroupMeasure& m, int k_inits,
                                                std::size_t trials, std::size_t n, std::uint64_t seed,
                                                const UniqueJoiningOptions& opt = {}) {
  if (k_inits < 2) fail(ErrorKind::InvalidArgument, "need at least two candidates");
  detail::check_common_group(sys_x, sys_y, m);
  auto prod = SystemHandle::product(sys_x, sys_y);
  UniqueJoiningReport r;
  r.x_catalog_proximal = sys_x.id == SystemId::ProjLine || sys_x.id == SystemId::BoundaryF2;
  std::vector<AtomicMeasure> cands;
  for (int j = 0; j < k_inits; ++j) {
    std::uint64_t s = seed + static_cast<std::uint64_t>(j);
    if (j % 2 == 0) {
      cands.push_back(join(sys_x, mu, sys_y, nu, m, trials, n, s, opt.join).measure);
      r.kinds.push_back("join");
    } else {
      double p = std::min(1.0, static_cast<double>(j + 1) / static_cast<double>(k_inits));
      cands.push_back(detail::cesaro_joining(prod, mu, nu, m, p, opt.particles, opt.steps, s));
      char buf[32];
      std::snprintf(buf, sizeof buf, "cesaro:%.3f", p);
      r.kinds.push_back(buf);
    }
    r.stationarity.push_back(detail::stationarity_cells(prod, m, cands.back(), 64, seed, CellSpec{}));
  }
  for (std::size_t a = 0; a < cands.size(); ++a)
    for (std::size_t b = a + 1; b < cands.size(); ++b)
      r.max_distance = std::max(r.max_distance, weak_star_distance(cands[a], cands[b]));
  return r;
}

inline Json to_json(const JoiningMeasure& j) {
  return {{"x", j.x.name()},
          {"y", j.y.name()},
          {"trials", j.trials},
          {"n", j.n},
          {"seed", j.seed},
          {"atoms", j.atoms},
          {"marginal_residuals", Json::array({j.marginal_x, j.marginal_y})},
          {"measure", to_json(Measure{j.measure})}};
}

}  // namespace statwalk
