#pragma once

#include <optional>

#include "statwalk/entropy.hpp"
#include "statwalk/joinings.hpp"
#include "statwalk/stationary.hpp"

namespace statwalk {

// ---------------------------------------------------------------------------
// Catalog defaults.

/// Reference stationary (or catalog) measure of each system. Adding-machine
/// labels are truncated to `adding_depth` bits.
inline Measure catalog_measure(const SystemHandle& sys, int adding_depth = 0) {
  switch (sys.id) {
    case SystemId::BoundaryF2: return eta_measure(3);
    case SystemId::RayCircle: return lebesgue_grid(GridSpace::Ray);
    case SystemId::ProjLine: return lebesgue_grid(GridSpace::Proj);
    case SystemId::TwoPoint: return fair_bit();
    case SystemId::SkewEx6: return nu_times_eta(SystemId::SkewEx6, 2);
    case SystemId::AddingEx7:
      return nu_times_eta(SystemId::AddingEx7, 2, adding_depth > 0 ? adding_depth : sys.adding_depth);
    case SystemId::DoubleProjEx8: return lebesgue_grid(GridSpace::Tagged);
    case SystemId::Trivial: return dirac(SpacePoint{Unit{}});
    case SystemId::Product: break;
  }
  fail(ErrorKind::NotCatalog, sys.name() + " has no catalog measure");
}

inline GroupMeasure catalog_group_measure(const SystemHandle& sys) {
  switch (sys.id) {
    case SystemId::RayCircle:
    case SystemId::ProjLine: return SL2Sampler{};
    case SystemId::DoubleProjEx8: return BlockSwapSampler{};
    case SystemId::Product:
      if (sys.factorwise) return uniform_generator_pairs();
      return catalog_group_measure(sys.parts[0]);
    default: return uniform_generators();
  }
}

// ---------------------------------------------------------------------------
// Quasifactor and standard cover.

/// Equal-weight sample of conditional measures mu_omega, one per trajectory.
inline MeasureOnMeasures quasifactor_sample(const SystemHandle& sys, const Measure& mu, const GroupMeasure& m,
                                            std::size_t trials, std::size_t n, std::uint64_t seed,
                                            const WalkOptions& opt = {}) {
  if (trials < 1) fail(ErrorKind::InvalidArgument, "trials must be >= 1");
  MeasureOnMeasures P;
  for (auto& e : sample_conditional_measures(sys, mu, m, trials, n, seed, opt)) {
    P.measures.push_back(std::move(e.measure));
    P.weights.push_back(1.0 / static_cast<double>(trials));
  }
  return P;
}

/// Atomic picture of mu* = integral of mu_omega x delta_{mu_omega}: per trial
/// the conditional measure (the sigma-fiber) and s_atoms points drawn from it.
struct StandardCoverSample {
  SystemHandle sys;
  std::size_t trials = 0, n = 0, s_atoms = 0;
  std::uint64_t seed = 0;
  std::vector<Measure> fibers;
  std::vector<std::vector<SpacePoint>> points;
  double pi_residual = 0;  // distance from the pi-marginal to mu

  /// pi-marginal: all drawn points with equal weight.
  AtomicMeasure pi_marginal() const {
    AtomicMeasure a;
    double w = 1.0 / static_cast<double>(trials * s_atoms);
    for (const auto& pts : points)
      for (const auto& x : pts) {
        a.points.push_back(x);
        a.weights.push_back(w);
      }
    return detail::merge_atoms(a);
  }

  /// sigma-marginal: the quasifactor sample.
  MeasureOnMeasures sigma_marginal() const {
    MeasureOnMeasures P;
    P.measures = fibers;
    P.weights.assign(fibers.size(), 1.0 / static_cast<double>(fibers.size()));
    return P;
  }
};

inline StandardCoverSample standard_cover(const SystemHandle& sys, const Measure& mu, const GroupMeasure& m,
                                          std::size_t trials, std::size_t n, std::size_t s_atoms, std::uint64_t seed,
                                          const WalkOptions& opt = {}) {
  if (trials < 1) fail(ErrorKind::InvalidArgument, "trials must be >= 1");
  if (s_atoms < 1) fail(ErrorKind::InvalidArgument, "s_atoms must be >= 1");
  StandardCoverSample c;
  c.sys = sys;
  c.trials = trials;
  c.n = n;
  c.s_atoms = s_atoms;
  c.seed = seed;
  c.fibers = quasifactor_sample(sys, mu, m, trials, n, seed, opt).measures;
  c.points = parallel_map<std::vector<SpacePoint>>(trials, [&](std::size_t i) {
    Rng rng(seed, i, 0x5a);
    std::vector<SpacePoint> pts;
    for (std::size_t k = 0; k < s_atoms; ++k) pts.push_back(sample_point(c.fibers[i], rng));
    return pts;
  });
  c.pi_residual = weak_star_distance(c.pi_marginal(), mu);
  return c;
}

/// Statistics of a cover of a two-label fibered system, pair order
/// canonicalized with label 0 first.
struct CoverPairStatistics {
  std::array<double, 2> label_marginal{};  // fraction of drawn points per label
  std::array<double, 2> fiber_tv{};        // depth-2 TV of the mean fiber to eta
  double independence_tv = 0;              // depth-2 TV of (z0, z1) modes to eta x eta
  std::array<CylinderMeasure, 2> mean_fiber;
};

inline CoverPairStatistics cover_pair_statistics(const StandardCoverSample& c, int depth = 2) {
  CoverPairStatistics s;
  auto eta = eta_measure(depth);
  std::size_t cells = cyl_count(depth);
  std::array<std::vector<double>, 2> acc{std::vector<double>(cells, 0.0), std::vector<double>(cells, 0.0)};
  std::vector<double> joint(cells * cells, 0.0);
  double w = 1.0 / static_cast<double>(c.trials);
  for (std::size_t i = 0; i < c.trials; ++i) {
    const auto* f = std::get_if<FiberedMeasure>(&c.fibers[i]);
    if (!f || f->labels.size() != 2) fail(ErrorKind::VariantMismatch, "pair statistics need two-label fibered fibers");
    std::array<std::size_t, 2> mode{};
    for (std::size_t j = 0; j < 2; ++j) {
      std::size_t e = detail::label_index(*f, f->labels[j]);
      auto t = cylinder_at_depth(f->fibers[j], depth);
      for (std::size_t k = 0; k < cells; ++k) acc[e][k] += w * t.mass[k];
      mode[e] = static_cast<std::size_t>(std::max_element(t.mass.begin(), t.mass.end()) - t.mass.begin());
    }
    joint[mode[0] * cells + mode[1]] += w;
    for (const auto& x : c.points[i]) s.label_marginal[x.as<PointPair>().parts[0].as<Bit>().value] += 1.0;
  }
  double drawn = static_cast<double>(c.trials * c.s_atoms);
  for (auto& v : s.label_marginal) v /= drawn;
  for (std::size_t e = 0; e < 2; ++e) {
    s.mean_fiber[e].depth = depth;
    s.mean_fiber[e].mass = acc[e];
    for (std::size_t k = 0; k < cells; ++k) s.fiber_tv[e] += 0.5 * std::fabs(acc[e][k] - eta.mass[k]);
  }
  for (std::size_t a = 0; a < cells; ++a)
    for (std::size_t b = 0; b < cells; ++b)
      s.independence_tv += 0.5 * std::fabs(joint[a * cells + b] - eta.mass[a] * eta.mass[b]);
  return s;
}

// ---------------------------------------------------------------------------
// Extension classification.

struct ExtensionOptions {
  double mp_threshold = 0.05;
  double prox_threshold = 0.9;
  std::size_t mp_samples = 0;  // 0: one per trial
  bool entropy_check = true;
  EntropyBudget entropy{4, 2000, 0, 0};
  WalkOptions walk;
  std::uint64_t seed = 0;
  double marginal_tol = 1e-9;
};

struct ExtensionReport {
  std::string x, y, factor;
  double mp_residual = 0, mp_stderr = 0;
  double prox_score = 0, prox_stderr = 0;
  double mp_threshold = 0, prox_threshold = 0;
  std::string verdict;  // measure_preserving | proximal | mixed | inconclusive
  std::optional<EntropyGap> entropy;
  bool entropy_agrees = true;  // gap flag is set exactly when the verdict is not measure_preserving
};

namespace detail {

inline double mean_of(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

inline double stderr_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0;
  double mu = mean_of(v), s = 0;
  for (double x : v) s += (x - mu) * (x - mu);
  return std::sqrt(s / static_cast<double>(v.size() - 1) / static_cast<double>(v.size()));
}

/// Half-width of the angular fiber window (window 2 pi / 128).
inline constexpr double kFiberWindow = kPi / 128;

inline bool in_fiber(const SpacePoint& image, const SpacePoint& y) {
  return same_point(image, y, kFiberWindow);
}

/// Disintegration mu_y of mu over the factor map. Closed forms for the
/// declared catalog factors; window rejection over the atoms otherwise.
inline Measure fiber_measure(const SystemHandle& sys, std::string_view factor, const Measure& mu, const SpacePoint& y) {
  if (factor == "identity") return dirac(y);
  if (factor == "collapse") return mu;
  if (auto a = std::get_if<AtomicMeasure>(&mu)) {
    AtomicMeasure out;
    double tot = 0;
    for (std::size_t i = 0; i < a->points.size(); ++i)
      if (in_fiber(apply_factor(sys, factor, a->points[i]), y)) {
        out.points.push_back(a->points[i]);
        out.weights.push_back(a->weights[i]);
        tot += a->weights[i];
      }
    if (tot <= 0) fail(ErrorKind::ZeroMeasure, "empty fiber over " + point_key(y));
    for (auto& w : out.weights) w /= tot;
    return out;
  }
  if (auto g = std::get_if<GridMeasure>(&mu)) {
    if (factor == "mod_pi") {
      double th = y.as<ProjAngle>().theta;
      double p0 = grid_density(*g, 1, th), p1 = grid_density(*g, 1, th + kPi);
      if (p0 + p1 <= 0) fail(ErrorKind::ZeroMeasure, "empty fiber over " + point_key(y));
      return AtomicMeasure{{SpacePoint{RayAngle{wrap(th, kTwoPi)}}, SpacePoint{RayAngle{wrap(th + kPi, kTwoPi)}}},
                           {p0 / (p0 + p1), p1 / (p0 + p1)}};
    }
    if (factor == "tag") {
      int c = y.as<Bit>().value;
      GridMeasure out = *g;
      double tot = 0;
      for (int k = 0; k < 2 * g->n; ++k) {
        if (k / g->n != c) out.mass[k] = 0;
        tot += out.mass[k];
      }
      if (tot <= 0) fail(ErrorKind::ZeroMeasure, "empty fiber over " + point_key(y));
      for (auto& v : out.mass) v /= tot;
      return out;
    }
  }
  if (auto f = std::get_if<FiberedMeasure>(&mu)) {
    FiberedMeasure out = *f;
    double tot = 0;
    for (std::size_t i = 0; i < f->labels.size(); ++i) {
      if (!same_point(apply_factor(sys, factor, make_pair_point(f->labels[i], SpacePoint{WordPrefix{}})), y))
        out.weights[i] = 0;
      tot += out.weights[i];
    }
    if (tot <= 0) fail(ErrorKind::ZeroMeasure, "empty fiber over " + point_key(y));
    for (auto& w : out.weights) w /= tot;
    return out;
  }
  fail(ErrorKind::InvalidArgument,
       "no disintegration of a " + std::string(repr_name(mu)) + " measure over '" + std::string(factor) + "'");
}

/// Mass-weighted largest cell of each fiber: sum over y of max_{cell in fiber y} mu_omega(cell).
/// Equals 1 exactly when every fiber measure is a point mass at cell resolution.
inline double fiberwise_point_mass(const SystemHandle& sys, std::string_view factor, const Measure& mu,
                                   const WalkOptions& opt) {
  if (factor == "identity") return 1.0;
  if (factor == "collapse") return max_atom_mass(mu, opt.window);
  if (auto g = std::get_if<GridMeasure>(&mu)) {
    int w = std::max(1, std::min(opt.window, g->n));
    auto window_sum = [&](int c, int start) {
      double s = 0;
      for (int i = 0; i < w; ++i) s += g->mass[c * g->n + (start + i) % g->n];
      return s;
    };
    if (factor == "mod_pi") {
      int half = g->n / 2;
      double s = 0;
      for (int k = 0; k < half; k += w) s += std::max(window_sum(0, k), window_sum(0, k + half));
      return s;
    }
    if (factor == "tag") {
      double s = 0;
      for (int c = 0; c < 2; ++c) {
        double best = 0;
        for (int k = 0; k < g->n; ++k) best = std::max(best, window_sum(c, k));
        s += best;
      }
      return s;
    }
  }
  if (auto f = std::get_if<FiberedMeasure>(&mu)) {
    std::map<std::string, double> best;
    for (std::size_t i = 0; i < f->labels.size(); ++i) {
      auto y = apply_factor(sys, factor, make_pair_point(f->labels[i], SpacePoint{WordPrefix{}}));
      auto t = cylinder_at_depth(f->fibers[i], std::min(opt.depth, f->fibers[i].depth));
      double top = f->weights[i] * *std::max_element(t.mass.begin(), t.mass.end());
      auto& b = best[point_key(y)];
      b = std::max(b, top);
    }
    double s = 0;
    for (auto& [k, v] : best) s += v;
    return s;
  }
  if (auto a = std::get_if<AtomicMeasure>(&mu)) {
    CellSpec cs;
    cs.arcs = 128;
    cs.word_depth = opt.depth;
    std::map<std::string, std::map<std::string, double>> fibers;
    for (std::size_t i = 0; i < a->points.size(); ++i)
      fibers[cell_key(apply_factor(sys, factor, a->points[i]), cs)][cell_key(a->points[i], cs)] += a->weights[i];
    double s = 0;
    for (auto& [y, cells] : fibers) {
      double top = 0;
      for (auto& [k, v] : cells) top = std::max(top, v);
      s += top;
    }
    return s;
  }
  fail(ErrorKind::InvalidArgument,
       "no fiber cells for a " + std::string(repr_name(mu)) + " measure over '" + std::string(factor) + "'");
}

inline std::string verdict_for(const ExtensionReport& r) {
  bool mp_low = r.mp_residual + 3 * r.mp_stderr < r.mp_threshold;
  bool mp_high = r.mp_residual - 3 * r.mp_stderr >= r.mp_threshold;
  bool prox_high = r.prox_score - 3 * r.prox_stderr > r.prox_threshold;
  bool prox_low = r.prox_score + 3 * r.prox_stderr <= r.prox_threshold;
  if (mp_low) return "measure_preserving";
  if (mp_high && prox_high) return "proximal";
  if (mp_high && prox_low) return "mixed";
  return "inconclusive";
}

}  // namespace detail

/// mp_residual = E_{g~m, y~nu} d(g mu_y, mu_{gy}); prox_score = E_omega of the
/// fiberwise point-mass score of mu_omega. A verdict needs both estimates three
/// standard errors clear of their thresholds.
inline ExtensionReport classify_extension(const SystemHandle& sys_x, const Measure& mu, std::string_view factor,
                                          const SystemHandle& sys_y, const Measure& nu, const GroupMeasure& m,
                                          std::size_t trials, std::size_t n, const ExtensionOptions& opt = {}) {
  if (trials < 2) fail(ErrorKind::InvalidArgument, "trials must be >= 2");
  auto target = factor_target(sys_x, factor);
  if (target.name() != sys_y.name())
    fail(ErrorKind::IncompatibleSystem, "factor '" + std::string(factor) + "' lands in " + target.name());
  double d = weak_star_distance(factor_image(sys_x, factor, mu), nu);
  if (d > opt.marginal_tol) fail(ErrorKind::MarginalMismatch, "nu differs from the image of mu by " + std::to_string(d));

  ExtensionReport r;
  r.x = sys_x.name();
  r.y = sys_y.name();
  r.factor = factor;
  r.mp_threshold = opt.mp_threshold;
  r.prox_threshold = opt.prox_threshold;

  std::size_t k = opt.mp_samples > 0 ? opt.mp_samples : trials;
  auto mp = parallel_map<double>(k, [&](std::size_t i) {
    Rng rng(opt.seed, i, 0x5c);
    auto g = sample_group(m, rng);
    auto y = sample_point(nu, rng);
    auto moved = pushforward(sys_x, g, detail::fiber_measure(sys_x, factor, mu, y));
    return weak_star_distance(moved, detail::fiber_measure(sys_x, factor, mu, act(sys_y, g, y)));
  });
  r.mp_residual = detail::mean_of(mp);
  r.mp_stderr = detail::stderr_of(mp);

  auto prox = parallel_map<double>(trials, [&](std::size_t i) {
    auto tr = sample_trajectory(m, n, opt.seed, i);
    auto est = conditional_measure(sys_x, mu, tr, n, opt.walk);
    return std::clamp(detail::fiberwise_point_mass(sys_x, factor, est.measure, opt.walk), 0.0, 1.0);
  });
  r.prox_score = detail::mean_of(prox);
  r.prox_stderr = detail::stderr_of(prox);
  r.verdict = detail::verdict_for(r);

  if (opt.entropy_check) {
    EntropyBudget b = opt.entropy;
    b.seed = opt.seed;
    r.entropy = entropy_factor_gap(sys_x, mu, sys_y, nu, factor, m, b, opt.marginal_tol);
    if (r.verdict != "inconclusive") r.entropy_agrees = r.entropy->gap == (r.verdict != "measure_preserving");
  }
  return r;
}

// ---------------------------------------------------------------------------
// Maximal proximal factor (catalog answers with numerical evidence).

struct FactorEvidence {
  std::string factor, target;
  double score = 0;  // mean point-mass score of the target's conditional measures
};

struct MaximalProximalFactor {
  std::string system, factor, target;
  std::string justification;
  std::vector<FactorEvidence> evidence;
  bool consistent = false;  // the answer scores above threshold, every larger candidate below
};

struct MaximalProximalOptions {
  std::size_t trials = 64;
  std::size_t n = 60;
  std::uint64_t seed = 0;
  double threshold = 0.9;
  int adding_depth = 8;  // label bits used for the adding machine evidence
};

inline MaximalProximalFactor maximal_proximal_factor(const SystemHandle& sys, const MaximalProximalOptions& opt = {}) {
  MaximalProximalFactor r;
  r.system = sys.name();
  switch (sys.id) {
    case SystemId::BoundaryF2:
    case SystemId::ProjLine:
    case SystemId::Trivial:
      r.factor = "identity";
      r.justification = "conditional measures are point masses: the system is its own Poisson boundary";
      break;
    case SystemId::RayCircle:
      r.factor = "mod_pi";
      r.justification = "conditional measures are antipodal pairs; identifying them gives the projective line";
      break;
    case SystemId::TwoPoint:
    case SystemId::SkewEx6:
    case SystemId::AddingEx7:
    case SystemId::DoubleProjEx8:
      r.factor = "collapse";
      r.justification = "no declared factor has point-mass conditional measures";
      break;
    case SystemId::Product: fail(ErrorKind::NotCatalog, sys.name() + " is not a catalog system");
  }
  r.target = factor_target(sys, r.factor).name();
  auto mu = catalog_measure(sys, opt.adding_depth);
  auto m = catalog_group_measure(sys);
  WalkOptions wo;
  for (const auto& f : declared_factors(sys)) {
    FactorEvidence e;
    e.factor = f.id;
    e.target = f.target.front().name();
    if (f.id == "collapse" || sys.id == SystemId::Trivial) {
      e.score = 1.0;
    } else {
      auto nu = factor_image(sys, f.id, mu);
      auto est = sample_conditional_measures(f.target.front(), nu, m, opt.trials, opt.n, opt.seed, wo);
      for (const auto& c : est) e.score += max_atom_mass(c.measure, wo.window) / static_cast<double>(est.size());
    }
    r.evidence.push_back(e);
  }
  // Declared factors are ordered identity, intermediate, collapse.
  r.consistent = true;
  bool reached = false;
  for (const auto& e : r.evidence) {
    if (e.factor == r.factor) {
      reached = true;
      r.consistent = r.consistent && e.score > opt.threshold;
    } else if (!reached && e.factor != "collapse") {
      r.consistent = r.consistent && e.score <= opt.threshold;
    }
  }
  return r;
}

// ---------------------------------------------------------------------------
// SAT escape and the Poisson transform.

/// Finite union of disjoint pieces: arcs [lo, lo + length) on a circle (copy
/// selects the P1 copy of double_proj_ex8), cylinders C(word), single points.
struct SetPiece {
  enum Kind { Arc, Cylinder, Point } kind = Arc;
  double lo = 0, length = 0;
  int copy = 1;
  FreeWord word;
  SpacePoint point{Unit{}};
};

struct SetDescriptor {
  std::vector<SetPiece> pieces;

  static SetDescriptor arc(double lo, double length, int copy = 1) {
    SetPiece p;
    p.lo = lo;
    p.length = length;
    p.copy = copy;
    return {{p}};
  }
  static SetDescriptor cylinder(FreeWord w) {
    SetPiece p;
    p.kind = SetPiece::Cylinder;
    p.word = std::move(w);
    return {{p}};
  }
  static SetDescriptor point(SpacePoint x) {
    SetPiece p;
    p.kind = SetPiece::Point;
    p.point = std::move(x);
    return {{p}};
  }
  SetDescriptor& add(const SetDescriptor& o) {
    pieces.insert(pieces.end(), o.pieces.begin(), o.pieces.end());
    return *this;
  }
};

namespace detail {

inline bool in_piece(const SetPiece& p, const SpacePoint& x) {
  switch (p.kind) {
    case SetPiece::Point: return same_point(p.point, x);
    case SetPiece::Cylinder: {
      const FreeWord* w = nullptr;
      if (auto wp = std::get_if<WordPrefix>(&x.value)) w = &wp->word;
      if (auto pp = std::get_if<PointPair>(&x.value))
        if (auto wp = std::get_if<WordPrefix>(&pp->parts[1].value)) w = &wp->word;
      if (!w) fail(ErrorKind::VariantMismatch, "cylinder sets need word coordinates");
      return w->prefix(p.word.size()) == p.word;
    }
    case SetPiece::Arc: {
      double per = kTwoPi, th;
      if (auto r = std::get_if<RayAngle>(&x.value)) th = r->theta;
      else if (auto q = std::get_if<ProjAngle>(&x.value)) th = q->theta, per = kPi;
      else {
        const auto& t = x.as<Tagged>();
        if (t.copy != p.copy) return false;
        th = t.theta;
        per = kPi;
      }
      return wrap(th - p.lo, per) < p.length;
    }
  }
  return false;
}

inline double piece_mass(const SetPiece& p, const Measure& mu) {
  if (auto a = std::get_if<AtomicMeasure>(&mu)) {
    double s = 0;
    for (std::size_t i = 0; i < a->points.size(); ++i)
      if (in_piece(p, a->points[i])) s += a->weights[i];
    return s;
  }
  if (auto g = std::get_if<GridMeasure>(&mu)) {
    if (p.kind == SetPiece::Point) return 0.0;
    if (p.kind != SetPiece::Arc) fail(ErrorKind::VariantMismatch, "grids measure arcs and points only");
    GridCdf cdf(*g, g->space == GridSpace::Tagged ? p.copy : 1);
    return cdf.at(p.lo + std::min(p.length, g->period())) - cdf.at(p.lo);
  }
  if (auto c = std::get_if<CylinderMeasure>(&mu)) {
    if (p.kind == SetPiece::Point) return 0.0;
    if (p.kind != SetPiece::Cylinder) fail(ErrorKind::VariantMismatch, "cylinder measures measure cylinders only");
    return cylinder_mass(*c, p.word);
  }
  const auto& f = std::get<FiberedMeasure>(mu);
  if (p.kind != SetPiece::Cylinder) fail(ErrorKind::VariantMismatch, "fibered measures measure z-cylinders only");
  double s = 0;
  for (std::size_t i = 0; i < f.labels.size(); ++i) s += f.weights[i] * cylinder_mass(f.fibers[i], p.word);
  return s;
}

/// Candidate g for the searches: shortlex reduced words for F2, otherwise
/// draws k(a) diag(e^t, e^-t) k(b) with t uniform in [0, t_max] (block-swaps
/// pair two such draws).
inline std::vector<GroupElement> search_candidates(const GroupMeasure& m, std::size_t budget, std::uint64_t seed,
                                                   double t_max = 8.0) {
  std::vector<GroupElement> out;
  auto id = identity_of(m);
  if (std::holds_alternative<FreeWord>(id)) {
    std::vector<FreeWord> level{FreeWord{}};
    out.push_back(FreeWord{});
    while (out.size() < budget) {
      std::vector<FreeWord> next;
      for (const auto& w : level)
        for (std::uint8_t l = 0; l < 4; ++l) {
          if (!w.empty() && w.letters.back() == inverse_letter(l)) continue;
          FreeWord v = w;
          v.letters.push_back(l);
          next.push_back(v);
        }
      for (const auto& w : next) {
        if (out.size() >= budget) break;
        out.push_back(w);
      }
      level.swap(next);
    }
    return out;
  }
  if (!std::holds_alternative<Mat2>(id) && !std::holds_alternative<BlockSwap>(id))
    fail(ErrorKind::InvalidArgument, "no search family for this group");
  for (std::size_t i = 0; i < budget; ++i) {
    Rng rng(seed, i, 0x5e);
    auto draw = [&] { return Mat2::cartan(rng.uniform(0, kTwoPi), rng.uniform(0, t_max), rng.uniform(0, kTwoPi)); };
    if (std::holds_alternative<Mat2>(id)) {
      out.push_back(draw());
    } else {
      Mat2 a = draw(), b = draw();
      out.push_back(BlockSwap{a, b, rng.uniform() < 0.5});
    }
  }
  return out;
}

}  // namespace detail

inline double set_mass(const Measure& mu, const SetDescriptor& A) {
  double s = 0;
  for (const auto& p : A.pieces) s += detail::piece_mass(p, mu);
  return s;
}

/// mu(gA) = (g^-1 mu)(A).
inline double translate_mass(const SystemHandle& sys, const Measure& mu, const SetDescriptor& A, const GroupElement& g) {
  return set_mass(pushforward(sys, inverse(g), mu), A);
}

struct SatResult {
  GroupElement g;
  double mass = 0;       // mu(gA)
  double base_mass = 0;  // mu(A)
  std::size_t candidates = 0;
};

/// Largest mu(gA) over the candidate family; SAT systems approach 1.
inline SatResult sat_escape(const SystemHandle& sys, const Measure& mu, const SetDescriptor& A, const GroupMeasure& m,
                            std::size_t budget = 1000, std::uint64_t seed = 0, int threads = 0) {
  SatResult r;
  r.base_mass = set_mass(mu, A);
  if (!(r.base_mass > 0)) fail(ErrorKind::ZeroMeasure, "mu(A) = 0");
  if (budget < 1) fail(ErrorKind::InvalidArgument, "budget must be >= 1");
  auto cands = detail::search_candidates(m, budget, seed);
  auto mass = parallel_map<double>(
      cands.size(), [&](std::size_t i) { return translate_mass(sys, mu, A, cands[i]); }, threads);
  std::size_t best = 0;
  for (std::size_t i = 1; i < mass.size(); ++i)
    if (mass[i] > mass[best]) best = i;
  r.g = cands[best];
  r.mass = mass[best];
  r.candidates = cands.size();
  return r;
}

/// P_nu f(g) = integral of f(g y) d nu(y).
inline double poisson_transform(const SystemHandle& sys, const Measure& nu, const std::string& f_id,
                                const GroupElement& g) {
  auto f = test_function(f_id);
  return integrate(f, pushforward(sys, g, nu));
}

struct ContractibilityResult {
  GroupElement g;
  double score = 0;  // sup |P_nu f(g)| / sup |f|
  std::size_t candidates = 0;
};

/// Every registered test function has sup norm 1.
inline ContractibilityResult contractibility_score(const SystemHandle& sys, const Measure& nu, const std::string& f_id,
                                                   const GroupMeasure& m, std::size_t budget = 1000,
                                                   std::uint64_t seed = 0, int threads = 0) {
  test_function(f_id);
  if (budget < 1) fail(ErrorKind::InvalidArgument, "budget must be >= 1");
  auto cands = detail::search_candidates(m, budget, seed);
  auto vals = parallel_map<double>(
      cands.size(), [&](std::size_t i) { return std::fabs(poisson_transform(sys, nu, f_id, cands[i])); }, threads);
  std::size_t best = 0;
  for (std::size_t i = 1; i < vals.size(); ++i)
    if (vals[i] > vals[best]) best = i;
  ContractibilityResult r;
  r.g = cands[best];
  r.score = vals[best];
  r.candidates = cands.size();
  return r;
}

// ---------------------------------------------------------------------------
// JSON.

inline Json to_json(const ExtensionReport& r) {
  Json j = {{"x", r.x},
            {"y", r.y},
            {"factor", r.factor},
            {"mp_residual", r.mp_residual},
            {"mp_stderr", r.mp_stderr},
            {"prox_score", r.prox_score},
            {"prox_stderr", r.prox_stderr},
            {"thresholds", {{"mp_residual", r.mp_threshold}, {"prox_score", r.prox_threshold}}},
            {"verdict", r.verdict}};
  if (r.entropy) {
    j["entropy"] = {{"hx", r.entropy->hx.value},
                    {"hx_stderr", r.entropy->hx.stderr_},
                    {"hy", r.entropy->hy.value},
                    {"hy_stderr", r.entropy->hy.stderr_},
                    {"gap", r.entropy->gap},
                    {"agrees", r.entropy_agrees}};
  }
  return j;
}

inline Json to_json(const MaximalProximalFactor& r) {
  Json ev = Json::array();
  for (const auto& e : r.evidence) ev.push_back({{"factor", e.factor}, {"target", e.target}, {"score", e.score}});
  return {{"system", r.system},
          {"factor", r.factor},
          {"target", r.target},
          {"justification", r.justification},
          {"consistent", r.consistent},
          {"evidence", ev}};
}

inline Json to_json(const CoverPairStatistics& s) {
  return {{"label_marginal", Json::array({s.label_marginal[0], s.label_marginal[1]})},
          {"fiber_tv", Json::array({s.fiber_tv[0], s.fiber_tv[1]})},
          {"independence_tv", s.independence_tv}};
}

}  // namespace statwalk
