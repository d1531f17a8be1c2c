#pragma once

#include "statwalk/measure.hpp"

namespace statwalk {

struct StationaryOptions {
  int n_samples = 256;  // group draws per step for sampler measures
  std::uint64_t seed = 0;
  int grid = 4096;   // bins used when an atomic init lives on a circle
  int depth = 3;     // cylinder depth kept between steps
  int threads = 0;
};

struct StationaryResult {
  Measure measure;
  double residual = 0;
  int iterations = 0;
  bool converged = false;
  std::vector<double> trace;  // residual after each K
};

namespace detail {

inline GridMeasure grid_from_atoms(const AtomicMeasure& a, GridSpace space, int n) {
  GridMeasure g;
  g.space = space;
  g.n = n;
  g.mass.assign(static_cast<std::size_t>(n) * g.copies(), 0.0);
  double per = g.period();
  for (std::size_t i = 0; i < a.points.size(); ++i) {
    auto [copy, th] = grid_coords(a.points[i]);
    int k = std::min(n - 1, static_cast<int>(wrap(th, per) / per * n));
    g.mass[static_cast<std::size_t>(copy - 1) * n + k] += a.weights[i];
  }
  return g;
}

/// Word atoms spread over their extensions by the tail rule.
inline CylinderMeasure cylinder_from_atoms(const AtomicMeasure& a, int depth) {
  CylinderMeasure c;
  c.depth = depth;
  c.mass.assign(cyl_count(depth), 0.0);
  for (std::size_t i = 0; i < a.points.size(); ++i) {
    const auto& w = a.points[i].as<WordPrefix>().word;
    if (w.empty()) fail(ErrorKind::InvalidArgument, "boundary points need a nonempty prefix");
    int len = std::min<int>(static_cast<int>(w.size()), depth);
    CylinderMeasure point;
    point.depth = len;
    point.mass.assign(cyl_count(len), 0.0);
    point.mass[word_index(w.prefix(len), len)] = 1.0;
    auto spread = cylinder_at_depth(point, depth);
    for (std::size_t k = 0; k < c.mass.size(); ++k) c.mass[k] += a.weights[i] * spread.mass[k];
  }
  return c;
}

inline CylinderMeasure strip(CylinderMeasure c) {
  c.exact.clear();
  return c;
}

/// Representation used for iteration: circles become grids, boundary words
/// become cylinder tables, cylinder depths are fixed.
inline Measure iteration_repr(const SystemHandle& sys, const Measure& init, const StationaryOptions& opt) {
  if (auto a = std::get_if<AtomicMeasure>(&init)) {
    if (sys.id == SystemId::RayCircle) return grid_from_atoms(*a, GridSpace::Ray, opt.grid);
    if (sys.id == SystemId::ProjLine) return grid_from_atoms(*a, GridSpace::Proj, opt.grid);
    if (sys.id == SystemId::DoubleProjEx8) return grid_from_atoms(*a, GridSpace::Tagged, opt.grid);
    if (sys.id == SystemId::BoundaryF2) return cylinder_from_atoms(*a, opt.depth);
    return *a;
  }
  if (auto c = std::get_if<CylinderMeasure>(&init)) return strip(cylinder_at_depth(*c, opt.depth));
  if (auto f = std::get_if<FiberedMeasure>(&init)) {
    FiberedMeasure out = *f;
    for (auto& x : out.fibers) x = strip(cylinder_at_depth(x, opt.depth));
    return out;
  }
  return init;
}

inline Measure truncate(Measure mu, int depth) {
  if (auto c = std::get_if<CylinderMeasure>(&mu)) return strip(cylinder_at_depth(*c, depth));
  if (auto f = std::get_if<FiberedMeasure>(&mu)) {
    for (auto& x : f->fibers) x = strip(cylinder_at_depth(x, depth));
  }
  return mu;
}

/// a*wa + b*wb for measures of the same representation.
inline Measure affine(const Measure& a, double wa, const Measure& b, double wb) {
  if (a.index() != b.index()) fail(ErrorKind::InvalidArgument, "cannot combine measures of different representations");
  if (auto x = std::get_if<AtomicMeasure>(&a)) {
    const auto& y = std::get<AtomicMeasure>(b);
    AtomicMeasure out;
    for (std::size_t i = 0; i < x->points.size(); ++i) {
      out.points.push_back(x->points[i]);
      out.weights.push_back(wa * x->weights[i]);
    }
    for (std::size_t i = 0; i < y.points.size(); ++i) {
      out.points.push_back(y.points[i]);
      out.weights.push_back(wb * y.weights[i]);
    }
    return merge_atoms(out);
  }
  if (auto x = std::get_if<GridMeasure>(&a)) {
    GridMeasure out = *x;
    const auto& y = std::get<GridMeasure>(b);
    for (std::size_t i = 0; i < out.mass.size(); ++i) out.mass[i] = wa * x->mass[i] + wb * y.mass[i];
    return out;
  }
  if (auto x = std::get_if<CylinderMeasure>(&a)) {
    const auto& y = std::get<CylinderMeasure>(b);
    int d = std::max(x->depth, y.depth);
    auto p = strip(cylinder_at_depth(*x, d)), q = cylinder_at_depth(y, d);
    for (std::size_t i = 0; i < p.mass.size(); ++i) p.mass[i] = wa * p.mass[i] + wb * q.mass[i];
    return p;
  }
  const auto& x = std::get<FiberedMeasure>(a);
  const auto& y = std::get<FiberedMeasure>(b);
  FiberedMeasure out = x;
  for (std::size_t j = 0; j < x.labels.size(); ++j) {
    int d = std::max(x.fibers[j].depth, y.fibers[j].depth);
    auto p = strip(cylinder_at_depth(x.fibers[j], d)), q = cylinder_at_depth(y.fibers[j], d);
    double tot = 0;
    for (std::size_t i = 0; i < p.mass.size(); ++i) {
      p.mass[i] = wa * x.weights[j] * p.mass[i] + wb * y.weights[j] * q.mass[i];
      tot += p.mass[i];
    }
    if (tot > 0)
      for (auto& v : p.mass) v /= tot;
    out.weights[j] = tot;
    out.fibers[j] = std::move(p);
  }
  return out;
}

inline int working_depth(const Measure& mu) {
  if (auto c = std::get_if<CylinderMeasure>(&mu)) return c->depth;
  if (auto f = std::get_if<FiberedMeasure>(&mu)) return fibered_depth(*f);
  return 0;
}

}  // namespace detail

inline double stationarity_residual(const SystemHandle& sys, const GroupMeasure& m, const Measure& mu,
                                    int n_samples = 256, std::uint64_t seed = 0) {
  return weak_star_distance(convolve(sys, m, mu, n_samples, seed), mu);
}

/// Total variation between m*mu and mu on the depth-d cylinders, in exact arithmetic.
inline Rational stationarity_residual_exact(const AtomicGroupMeasure& m, const CylinderMeasure& mu) {
  if (!mu.is_exact()) fail(ErrorKind::InvalidArgument, "exact residual needs an exact cylinder measure");
  auto conv = std::get<CylinderMeasure>(combine_pushforwards(SystemHandle::make(SystemId::BoundaryF2), m.elements,
                                                             m.weights, mu));
  auto back = cylinder_at_depth(conv, mu.depth);
  Rational s(0);
  for (std::size_t i = 0; i < mu.exact.size(); ++i) s += abs(back.exact[i] - mu.exact[i]);
  return s / 2;
}

/// Cesaro averages mu_K = (1/K) sum_{k<K} m^{*k} init, stopped when
/// d(m*mu_K, mu_K) < tol. Sampler measures use one fixed draw for every step.
inline StationaryResult solve_fixed_point(const SystemHandle& sys, const GroupMeasure& m, const Measure& init,
                                          double tol, int max_iter, const StationaryOptions& opt = {}) {
  if (!(tol > 0)) fail(ErrorKind::InvalidArgument, "tol must be positive");
  if (max_iter < 1) fail(ErrorKind::InvalidArgument, "max_iter must be >= 1");
  Measure nu0 = detail::iteration_repr(sys, init, opt);
  int depth = detail::working_depth(nu0);
  auto step = [&](const Measure& x) { return detail::truncate(convolve(sys, m, x, opt.n_samples, opt.seed), depth); };

  StationaryResult out;
  Measure nu = nu0, sum = nu0;
  for (int K = 1; K <= max_iter; ++K) {
    if (K > 1) sum = detail::affine(sum, 1.0, nu, 1.0);
    nu = step(nu);
    Measure mean = detail::affine(sum, 1.0 / K, nu0, 0.0);
    // m*mu_K = (S_K - nu_0 + nu_K) / K
    Measure image = detail::affine(detail::affine(sum, 1.0 / K, nu0, -1.0 / K), 1.0, nu, 1.0 / K);
    double r = weak_star_distance(image, mean);
    out.trace.push_back(r);
    out.measure = std::move(mean);
    out.residual = r;
    out.iterations = K;
    if (r < tol) {
      out.converged = true;
      break;
    }
  }
  return out;
}

inline double invariance_residual(const SystemHandle& sys, const Measure& mu, const std::vector<GroupElement>& gens) {
  if (gens.empty()) fail(ErrorKind::InvalidArgument, "invariance needs at least one group element");
  double r = 0;
  for (const auto& g : gens) r = std::max(r, weak_star_distance(pushforward(sys, g, mu), mu));
  return r;
}

/// Support of an atomic m, or `count` fixed draws from a sampler.
inline std::vector<GroupElement> test_elements(const GroupMeasure& m, int count = 8, std::uint64_t seed = 0) {
  if (auto a = std::get_if<AtomicGroupMeasure>(&m)) return a->elements;
  std::vector<GroupElement> out;
  for (int i = 0; i < count; ++i) {
    Rng rng(seed, static_cast<std::uint64_t>(i), 0x1f);
    out.push_back(sample_group(m, rng));
  }
  return out;
}

/// A point mass at a random point of X.
inline Measure random_point_mass(const SystemHandle& sys, Rng& rng) {
  switch (sys.id) {
    case SystemId::RayCircle: return dirac(SpacePoint{RayAngle{rng.uniform(0, kTwoPi)}});
    case SystemId::ProjLine: return dirac(SpacePoint{ProjAngle{rng.uniform(0, kPi)}});
    case SystemId::DoubleProjEx8:
      return dirac(SpacePoint{Tagged{1 + static_cast<int>(rng.below(2)), rng.uniform(0, kPi)}});
    case SystemId::TwoPoint: return dirac(SpacePoint{Bit{static_cast<int>(rng.below(2))}});
    case SystemId::BoundaryF2: return dirac(SpacePoint{WordPrefix{detail::extend_uniform(FreeWord{}, 8, rng)}});
    default: fail(ErrorKind::IncompatibleSystem, std::string("no random initial measures on ") + sys.name());
  }
}

struct StiffnessReport {
  std::vector<double> invariance;  // one per initial measure
  std::vector<double> stationarity;
  double max_invariance = 0;
  double max_stationarity = 0;
  bool all_converged = true;
  bool stiff = false;  // max_invariance < tol
};

/// Solves from n_inits random point masses and measures how far the
/// stationary limits are from being invariant.
inline StiffnessReport stiffness_probe(const SystemHandle& sys, const GroupMeasure& m, int n_inits, double tol,
                                       double solve_tol = 5e-3, int max_iter = 4000,
                                       const StationaryOptions& opt = {}) {
  if (n_inits < 1) fail(ErrorKind::InvalidArgument, "n_inits must be >= 1");
  auto gens = test_elements(m, 8, opt.seed);
  StationaryOptions inner = opt;
  inner.threads = 1;
  auto runs = parallel_map<std::tuple<double, double, bool>>(
      static_cast<std::size_t>(n_inits),
      [&](std::size_t i) {
        Rng rng(opt.seed, i, 0x57);
        auto res = solve_fixed_point(sys, m, random_point_mass(sys, rng), solve_tol, max_iter, inner);
        return std::tuple{invariance_residual(sys, res.measure, gens), res.residual, res.converged};
      },
      opt.threads);
  StiffnessReport r;
  for (const auto& [inv, st, ok] : runs) {
    r.invariance.push_back(inv);
    r.stationarity.push_back(st);
    r.max_invariance = std::max(r.max_invariance, inv);
    r.max_stationarity = std::max(r.max_stationarity, st);
    r.all_converged = r.all_converged && ok;
  }
  r.stiff = r.max_invariance < tol;
  return r;
}

}  // namespace statwalk
