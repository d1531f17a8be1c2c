#pragma once

#include <map>
#include <memory>
#include <numeric>

#include "statwalk/algebra.hpp"

namespace statwalk {

// ---------------------------------------------------------------------------
// Representations.

struct AtomicMeasure {
  std::vector<SpacePoint> points;
  std::vector<double> weights;
};

enum class GridSpace { Ray, Proj, Tagged };

inline double grid_period(GridSpace s) { return s == GridSpace::Ray ? kTwoPi : kPi; }

/// Piecewise-constant density stored as bin masses. Tagged grids hold 2n bins,
/// copy 1 first.
struct GridMeasure {
  GridSpace space = GridSpace::Ray;
  int n = 4096;
  std::vector<double> mass;

  double period() const { return grid_period(space); }
  double width() const { return period() / n; }
  int copies() const { return space == GridSpace::Tagged ? 2 : 1; }
};

/// Masses of all reduced words of length `depth` in lexicographic order
/// (a < A < b < B among the allowed continuations). Longer cylinders follow
/// the Markov tail: each of the 3 children gets a third of the parent.
struct CylinderMeasure {
  int depth = 1;
  std::vector<double> mass;
  std::vector<Rational> exact;  // empty unless the masses are exact

  bool is_exact() const { return !exact.empty(); }
};

/// Finite base (labels with weights) and one cylinder measure per label.
/// Used for nu x eta on skew_ex6 and adding_ex7.
struct FiberedMeasure {
  SystemId system = SystemId::SkewEx6;
  std::vector<SpacePoint> labels;
  std::vector<double> weights;
  std::vector<CylinderMeasure> fibers;
};

using Measure = std::variant<AtomicMeasure, GridMeasure, CylinderMeasure, FiberedMeasure>;

inline const char* repr_name(const Measure& m) {
  constexpr const char* kNames[] = {"atomic", "grid", "cylinder", "fibered"};
  return kNames[m.index()];
}

// ---------------------------------------------------------------------------
// Cylinder indexing.

inline std::size_t cyl_count(int d) {
  if (d <= 0) return 1;
  std::size_t c = 4;
  for (int i = 1; i < d; ++i) c *= 3;
  return c;
}

inline std::size_t pow3(int k) {
  std::size_t c = 1;
  for (int i = 0; i < k; ++i) c *= 3;
  return c;
}

/// Position of letter l among the three letters allowed after prev.
inline int choice_of(std::uint8_t prev, std::uint8_t l) {
  std::uint8_t bad = inverse_letter(prev);
  return l - (l > bad ? 1 : 0);
}

inline std::uint8_t letter_of_choice(std::uint8_t prev, int c) {
  std::uint8_t bad = inverse_letter(prev);
  std::uint8_t l = static_cast<std::uint8_t>(c);
  return l >= bad ? static_cast<std::uint8_t>(l + 1) : l;
}

/// Index of the first d letters of w in the depth-d table (|w| >= d >= 1).
inline std::size_t word_index(const FreeWord& w, int d) {
  std::size_t idx = w[0];
  for (int i = 1; i < d; ++i) idx = idx * 3 + static_cast<std::size_t>(choice_of(w[i - 1], w[i]));
  return idx;
}

inline FreeWord index_word(std::size_t idx, int d) {
  std::vector<int> choices(d);
  for (int i = d - 1; i >= 1; --i) {
    choices[i] = static_cast<int>(idx % 3);
    idx /= 3;
  }
  FreeWord w;
  w.letters.push_back(static_cast<std::uint8_t>(idx));
  for (int i = 1; i < d; ++i) w.letters.push_back(letter_of_choice(w.letters.back(), choices[i]));
  return w;
}

namespace detail {

/// Level sums of a depth-d table: levels[k][i] = mass of the i-th word of length k.
template <class T>
struct CylLevels {
  int d;
  std::vector<std::vector<T>> levels;

  CylLevels(int depth, const std::vector<T>& top) : d(depth), levels(depth + 1) {
    levels[depth] = top;
    for (int k = depth - 1; k >= 1; --k) {
      levels[k].assign(cyl_count(k), T(0));
      for (std::size_t i = 0; i < levels[k + 1].size(); ++i) levels[k][i / 3] += levels[k + 1][i];
    }
    if (depth >= 1) {
      levels[0].assign(1, T(0));
      for (const auto& x : levels[1]) levels[0][0] += x;
    } else {
      levels[0] = top;
    }
  }

  /// Mass of the cylinder of a reduced word, using the tail rule past depth d.
  T mass(const FreeWord& w) const {
    int k = static_cast<int>(w.size());
    if (k == 0) return levels[0][0];
    if (k <= d) return levels[k][word_index(w, k)];
    T m = levels[d][word_index(w, d)];
    return m / T(pow3(k - d));
  }
};

/// mu(h . C(w)) for |w| > number of letters of h cancelled by w. Then h C(w)
/// is the single cylinder C(h' w') with h', w' the uncancelled parts.
template <class T>
T image_cylinder_mass(const CylLevels<T>& lv, const FreeWord& h, const FreeWord& w) {
  std::size_t L = h.size(), k = 0;
  while (k < L && k < w.size() && h[L - 1 - k] == inverse_letter(w[k])) ++k;
  if (k == w.size()) fail(ErrorKind::OutOfRange, "cylinder swallowed by the group element");
  FreeWord src;
  src.letters.reserve(L + w.size() - 2 * k);
  src.letters.insert(src.letters.end(), h.letters.begin(), h.letters.end() - static_cast<std::ptrdiff_t>(k));
  src.letters.insert(src.letters.end(), w.letters.begin() + static_cast<std::ptrdiff_t>(k), w.letters.end());
  return lv.mass(src);
}

/// Exact masses of g mu on words of length D. Exact including the tail rule
/// when D >= d + |g|.
template <class T>
std::vector<T> push_cylinder(const CylLevels<T>& lv, const FreeWord& g, int D) {
  FreeWord h = g.inverse();
  std::size_t count = cyl_count(D);
  std::vector<T> out(count, T(0));
  std::optional<std::size_t> swallowed;
  T total(0);
  for (std::size_t i = 0; i < count; ++i) {
    FreeWord w = index_word(i, D);
    std::size_t L = h.size(), k = 0;
    while (k < L && k < w.size() && h[L - 1 - k] == inverse_letter(w[k])) ++k;
    if (k == w.size()) {
      swallowed = i;
      continue;
    }
    out[i] = image_cylinder_mass(lv, h, w);
    total += out[i];
  }
  if (swallowed) out[*swallowed] = lv.levels[0][0] - total;
  return out;
}

}  // namespace detail

/// Mass of the cylinder of w under a cylinder measure.
inline double cylinder_mass(const CylinderMeasure& mu, const FreeWord& w) {
  return detail::CylLevels<double>(mu.depth, mu.mass).mass(w);
}

inline Rational cylinder_mass_exact(const CylinderMeasure& mu, const FreeWord& w) {
  if (!mu.is_exact()) fail(ErrorKind::InvalidArgument, "cylinder measure is not exact");
  return detail::CylLevels<Rational>(mu.depth, mu.exact).mass(w);
}

/// Same measure tabulated at a larger depth (tail rule) or summed to a smaller one.
inline CylinderMeasure cylinder_at_depth(const CylinderMeasure& mu, int D) {
  CylinderMeasure out;
  out.depth = D;
  out.mass.resize(cyl_count(D));
  detail::CylLevels<double> lv(mu.depth, mu.mass);
  std::optional<detail::CylLevels<Rational>> lx;
  if (mu.is_exact()) {
    lx.emplace(mu.depth, mu.exact);
    out.exact.resize(out.mass.size());
  }
  for (std::size_t i = 0; i < out.mass.size(); ++i) {
    FreeWord w = index_word(i, D);
    out.mass[i] = lv.mass(w);
    if (lx) out.exact[i] = lx->mass(w);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Catalog measures.

/// eta(C(e1..en)) = 1/(4 3^(n-1)), exact.
inline CylinderMeasure eta_measure(int depth = 3) {
  if (depth < 1) fail(ErrorKind::InvalidArgument, "cylinder depth must be >= 1");
  CylinderMeasure mu;
  mu.depth = depth;
  std::size_t c = cyl_count(depth);
  Rational q(1, static_cast<long long>(c));
  mu.exact.assign(c, q);
  mu.mass.assign(c, 1.0 / static_cast<double>(c));
  return mu;
}

inline GridMeasure lebesgue_grid(GridSpace space, int n = 4096) {
  if (n < 2) fail(ErrorKind::InvalidArgument, "grid needs at least 2 bins");
  GridMeasure g;
  g.space = space;
  g.n = n;
  int total = n * g.copies();
  g.mass.assign(total, 1.0 / total);
  return g;
}

inline AtomicMeasure dirac(SpacePoint x) { return AtomicMeasure{{std::move(x)}, {1.0}}; }

inline AtomicMeasure fair_bit() {
  return AtomicMeasure{{SpacePoint{Bit{0}}, SpacePoint{Bit{1}}}, {0.5, 0.5}};
}

/// nu x eta with nu the fair coin (skew_ex6) or Haar measure on the truncated
/// adding machine (adding_ex7).
inline FiberedMeasure nu_times_eta(SystemId sys, int depth = 2, int adding_depth = 16) {
  FiberedMeasure f;
  f.system = sys;
  auto eta = eta_measure(depth);
  if (sys == SystemId::SkewEx6) {
    f.labels = {SpacePoint{Bit{0}}, SpacePoint{Bit{1}}};
  } else if (sys == SystemId::AddingEx7) {
    std::uint32_t count = 1u << adding_depth;
    f.labels.reserve(count);
    for (std::uint32_t v = 0; v < count; ++v) f.labels.push_back(SpacePoint{BitSeq{v, adding_depth}});
  } else {
    fail(ErrorKind::IncompatibleSystem, "fibered measures exist only for skew_ex6 and adding_ex7");
  }
  f.weights.assign(f.labels.size(), 1.0 / static_cast<double>(f.labels.size()));
  f.fibers.assign(f.labels.size(), eta);
  return f;
}

// ---------------------------------------------------------------------------
// Group measures.

struct AtomicGroupMeasure {
  std::vector<GroupElement> elements;
  std::vector<double> weights;
};

/// g = k(phi1) diag(e^t, e^-t) k(phi2), phi uniform, t ~ Exp(rate).
struct SL2Sampler {
  double rate = 1.0;

  Mat2 sample(Rng& rng) const {
    double p1 = rng.uniform(0, kTwoPi);
    double t = rng.exponential(rate);
    double p2 = rng.uniform(0, kTwoPi);
    return Mat2::cartan(p1, t, p2);
  }
};

/// A, B independent SL2Sampler draws, swap with probability 1/2.
struct BlockSwapSampler {
  SL2Sampler inner;
  double swap_probability = 0.5;

  BlockSwap sample(Rng& rng) const {
    Mat2 a = inner.sample(rng), b = inner.sample(rng);
    bool s = rng.uniform() < swap_probability;
    return BlockSwap{a, b, s};
  }
};

using GroupMeasure = std::variant<AtomicGroupMeasure, SL2Sampler, BlockSwapSampler>;

/// m = 1/4 (a + b + a^-1 + b^-1).
inline AtomicGroupMeasure uniform_generators() {
  AtomicGroupMeasure m;
  for (std::uint8_t l : {kA, kB, kAinv, kBinv}) {
    m.elements.push_back(FreeWord::letter(l));
    m.weights.push_back(0.25);
  }
  return m;
}

/// Uniform on the 16 pairs of generators, for F2 x F2 acting factorwise.
inline AtomicGroupMeasure uniform_generator_pairs() {
  AtomicGroupMeasure m;
  for (std::uint8_t x = 0; x < 4; ++x)
    for (std::uint8_t y = 0; y < 4; ++y) {
      m.elements.push_back(WordPair{FreeWord::letter(x), FreeWord::letter(y)});
      m.weights.push_back(1.0 / 16);
    }
  return m;
}

inline GroupElement sample_group(const GroupMeasure& m, Rng& rng) {
  if (auto a = std::get_if<AtomicGroupMeasure>(&m)) return a->elements[rng.categorical(a->weights)];
  if (auto s = std::get_if<SL2Sampler>(&m)) return s->sample(rng);
  return std::get<BlockSwapSampler>(m).sample(rng);
}

struct MeasureOnMeasures {
  std::vector<Measure> measures;
  std::vector<double> weights;
};

// ---------------------------------------------------------------------------
// Pushforward.

namespace detail {

/// For fibered systems: g (label, z) = (label', M z).
inline std::pair<SpacePoint, FreeWord> fiber_move(SystemId sys, const FreeWord& g, const SpacePoint& label) {
  FreeWord z;
  if (sys == SystemId::SkewEx6) {
    int eps = label.as<Bit>().value;
    for (auto it = g.letters.rbegin(); it != g.letters.rend(); ++it) skew_letter(*it, eps, z);
    return {SpacePoint{Bit{eps}}, z};
  }
  BitSeq eps = label.as<BitSeq>();
  for (auto it = g.letters.rbegin(); it != g.letters.rend(); ++it) adding_letter(*it, eps, z);
  return {SpacePoint{eps}, z};
}

inline std::size_t label_index(const FiberedMeasure& f, const SpacePoint& label) {
  if (auto b = std::get_if<Bit>(&label.value)) return static_cast<std::size_t>(b->value);
  return std::get<BitSeq>(label.value).bits;
}

/// Jacobian of x -> g x at x for circle-type systems.
inline double local_jacobian(const SystemHandle& sys, const GroupElement& g, const SpacePoint& x) {
  switch (sys.id) {
    case SystemId::RayCircle: return std::get<Mat2>(g).ray_jacobian(x.as<RayAngle>().theta);
    case SystemId::ProjLine: return std::get<Mat2>(g).ray_jacobian(x.as<ProjAngle>().theta);
    case SystemId::DoubleProjEx8: {
      const auto& s = std::get<BlockSwap>(g);
      const auto& p = x.as<Tagged>();
      const Mat2& m = s.swap ? (p.copy == 1 ? s.b : s.a) : (p.copy == 1 ? s.a : s.b);
      return m.ray_jacobian(p.theta);
    }
    default: fail(ErrorKind::IncompatibleSystem, "no Jacobian on " + sys.name());
  }
}

inline GridSpace grid_space_of(const SystemHandle& sys) {
  switch (sys.id) {
    case SystemId::RayCircle: return GridSpace::Ray;
    case SystemId::ProjLine: return GridSpace::Proj;
    case SystemId::DoubleProjEx8: return GridSpace::Tagged;
    default: fail(ErrorKind::IncompatibleSystem, "no grid representation on " + sys.name());
  }
}

/// Cumulative mass of one copy of a grid, extended periodically with +1 per turn.
struct GridCdf {
  int n;
  double period, h;
  std::vector<double> cum;  // cum[i] = mass of bins < i, cum[n] = copy total

  GridCdf(const GridMeasure& g, int copy) : n(g.n), period(g.period()), h(g.width()), cum(g.n + 1, 0.0) {
    for (int i = 0; i < n; ++i) cum[i + 1] = cum[i] + g.mass[(copy - 1) * n + i];
  }

  double at(double p) const {
    double turns = std::floor(p / period);
    double r = (p - turns * period) / h;
    int i = std::min(n - 1, static_cast<int>(r));
    double frac = std::clamp(r - i, 0.0, 1.0);
    return turns * cum[n] + cum[i] + (cum[i + 1] - cum[i]) * frac;
  }
};

/// Matrix and target copy through which copy c of a grid is moved by g.
inline std::pair<int, Mat2> grid_branch(const SystemHandle& sys, const GroupElement& g, int c) {
  if (sys.id == SystemId::DoubleProjEx8) {
    const auto& s = std::get<BlockSwap>(g);
    const Mat2& m = s.swap ? (c == 1 ? s.b : s.a) : (c == 1 ? s.a : s.b);
    return {s.swap ? 3 - c : c, m};
  }
  return {1, std::get<Mat2>(g)};
}

/// gmu(bin) = mu(g^-1 bin): bin edges are moved by the monotone lift of g^-1
/// and the piecewise-constant source density is integrated between them.
inline GridMeasure push_grid(const SystemHandle& sys, const GroupElement& g, const GridMeasure& mu) {
  if (grid_space_of(sys) != mu.space) fail(ErrorKind::IncompatibleSystem, "grid space does not match " + sys.name());
  GroupElement ginv = inverse(g);
  GridMeasure out = mu;
  double per = mu.period(), h = mu.width();
  // Ray angles live on [0, 2pi), lines on [0, pi); the lift works in ray angles either way.
  for (int c = 1; c <= mu.copies(); ++c) {
    auto [src, m] = grid_branch(sys, ginv, c);
    GridCdf cdf(mu, src);
    double prev = m.act_lift(0.0), first = prev;
    for (int j = 0; j < mu.n; ++j) {
      double next = j + 1 == mu.n ? first + per : m.act_lift((j + 1) * h);
      out.mass[(c - 1) * mu.n + j] = std::max(0.0, cdf.at(next) - cdf.at(prev));
      prev = next;
    }
  }
  return out;
}

inline CylinderMeasure push_cyl_at(const CylinderMeasure& mu, const FreeWord& g, int D) {
  CylinderMeasure out;
  out.depth = D;
  if (mu.is_exact()) {
    out.exact = push_cylinder(CylLevels<Rational>(mu.depth, mu.exact), g, D);
    out.mass.resize(out.exact.size());
    for (std::size_t i = 0; i < out.exact.size(); ++i) out.mass[i] = to_double(out.exact[i]);
  } else {
    out.mass = push_cylinder(CylLevels<double>(mu.depth, mu.mass), g, D);
  }
  return out;
}

inline std::string point_key(const SpacePoint& x);

}  // namespace detail

/// g mu for a cylinder measure, tabulated at depth D (exact including the
/// tail rule when D >= depth + |g|).
inline CylinderMeasure pushforward_at_depth(const FreeWord& g, const CylinderMeasure& mu, int D) {
  return detail::push_cyl_at(mu, g, D);
}

inline FiberedMeasure pushforward_fibered(const FreeWord& g, const FiberedMeasure& mu, int D) {
  FiberedMeasure out;
  out.system = mu.system;
  out.labels = mu.labels;
  out.weights.assign(mu.labels.size(), 0.0);
  out.fibers.resize(mu.labels.size());
  std::vector<bool> seen(mu.labels.size(), false);
  for (std::size_t i = 0; i < mu.labels.size(); ++i) {
    auto [label, mult] = detail::fiber_move(mu.system, g, mu.labels[i]);
    std::size_t j = detail::label_index(mu, label);
    // g is a bijection on labels, so each target receives exactly one fiber.
    out.weights[j] = mu.weights[i];
    out.fibers[j] = detail::push_cyl_at(mu.fibers[i], mult, D);
    seen[j] = true;
  }
  for (std::size_t j = 0; j < seen.size(); ++j)
    if (!seen[j]) fail(ErrorKind::InvalidArgument, "fibered pushforward is not a bijection on labels");
  return out;
}

inline int fibered_depth(const FiberedMeasure& f) {
  int d = 1;
  for (const auto& c : f.fibers) d = std::max(d, c.depth);
  return d;
}

inline Measure pushforward(const SystemHandle& sys, const GroupElement& g, const Measure& mu) {
  if (!accepts(sys, group_kind(g)))
    fail(ErrorKind::IncompatibleSystem, std::string(variant_name(g)) + " does not act on " + sys.name());
  if (auto a = std::get_if<AtomicMeasure>(&mu)) {
    AtomicMeasure out;
    out.weights = a->weights;
    out.points.reserve(a->points.size());
    for (const auto& x : a->points) out.points.push_back(act(sys, g, x));
    return out;
  }
  if (auto gr = std::get_if<GridMeasure>(&mu)) return detail::push_grid(sys, g, *gr);
  if (auto c = std::get_if<CylinderMeasure>(&mu)) {
    if (sys.id != SystemId::BoundaryF2) fail(ErrorKind::IncompatibleSystem, "cylinder measures live on boundary_f2");
    const auto& w = std::get<FreeWord>(g);
    return detail::push_cyl_at(*c, w, c->depth + static_cast<int>(w.size()));
  }
  const auto& f = std::get<FiberedMeasure>(mu);
  if (sys.id != f.system) fail(ErrorKind::IncompatibleSystem, "fibered measure belongs to another system");
  const auto& w = std::get<FreeWord>(g);
  return pushforward_fibered(w, f, fibered_depth(f) + static_cast<int>(w.size()));
}

// ---------------------------------------------------------------------------
// Convolution m * mu.

namespace detail {

inline AtomicMeasure merge_atoms(const AtomicMeasure& a) {
  std::map<std::string, std::size_t> index;
  AtomicMeasure out;
  for (std::size_t i = 0; i < a.points.size(); ++i) {
    auto key = point_key(a.points[i]);
    auto [it, fresh] = index.emplace(key, out.points.size());
    if (fresh) {
      out.points.push_back(a.points[i]);
      out.weights.push_back(a.weights[i]);
    } else {
      out.weights[it->second] += a.weights[i];
    }
  }
  return out;
}

inline void add_scaled(CylinderMeasure& acc, const CylinderMeasure& x, double w, const Rational* wq) {
  for (std::size_t i = 0; i < acc.mass.size(); ++i) acc.mass[i] += w * x.mass[i];
  if (wq && acc.is_exact())
    for (std::size_t i = 0; i < acc.exact.size(); ++i) acc.exact[i] += *wq * x.exact[i];
}

/// Weights as rationals when they are dyadic-exact doubles (1/4, 1/16, ...).
inline Rational exact_weight(double w) {
  int e;
  double m = std::frexp(w, &e);
  auto num = static_cast<long long>(std::ldexp(m, 53));
  Rational q(num);
  if (e - 53 >= 0) return q * Rational(boost::multiprecision::cpp_int(1) << (e - 53));
  return q / Rational(boost::multiprecision::cpp_int(1) << (53 - e));
}

}  // namespace detail

/// Weighted combination sum_i w_i g_i mu. Exact for cylinder/fibered inputs.
inline Measure combine_pushforwards(const SystemHandle& sys, const std::vector<GroupElement>& gs,
                                    const std::vector<double>& ws, const Measure& mu) {
  if (gs.empty()) fail(ErrorKind::InvalidArgument, "empty group measure");
  if (auto c = std::get_if<CylinderMeasure>(&mu)) {
    int maxlen = 0;
    for (const auto& g : gs) maxlen = std::max(maxlen, static_cast<int>(std::get<FreeWord>(g).size()));
    int D = c->depth + maxlen;
    CylinderMeasure acc;
    acc.depth = D;
    acc.mass.assign(cyl_count(D), 0.0);
    if (c->is_exact()) acc.exact.assign(cyl_count(D), Rational(0));
    for (std::size_t i = 0; i < gs.size(); ++i) {
      auto p = pushforward_at_depth(std::get<FreeWord>(gs[i]), *c, D);
      Rational q = detail::exact_weight(ws[i]);
      detail::add_scaled(acc, p, ws[i], &q);
    }
    return acc;
  }
  if (auto f = std::get_if<FiberedMeasure>(&mu)) {
    int maxlen = 0;
    for (const auto& g : gs) maxlen = std::max(maxlen, static_cast<int>(std::get<FreeWord>(g).size()));
    int D = fibered_depth(*f) + maxlen;
    FiberedMeasure acc;
    acc.system = f->system;
    acc.labels = f->labels;
    acc.weights.assign(f->labels.size(), 0.0);
    acc.fibers.resize(f->labels.size());
    bool exact = true;
    for (const auto& c : f->fibers) exact = exact && c.is_exact();
    // Accumulate unnormalized fiber masses, then split into weight x fiber.
    std::vector<CylinderMeasure> raw(f->labels.size());
    for (auto& r : raw) {
      r.depth = D;
      r.mass.assign(cyl_count(D), 0.0);
      if (exact) r.exact.assign(cyl_count(D), Rational(0));
    }
    for (std::size_t i = 0; i < gs.size(); ++i) {
      auto p = pushforward_fibered(std::get<FreeWord>(gs[i]), *f, D);
      for (std::size_t j = 0; j < p.labels.size(); ++j) {
        double w = ws[i] * p.weights[j];
        Rational q = detail::exact_weight(ws[i]) * detail::exact_weight(p.weights[j]);
        detail::add_scaled(raw[j], p.fibers[j], w, &q);
      }
    }
    for (std::size_t j = 0; j < raw.size(); ++j) {
      double tot = std::accumulate(raw[j].mass.begin(), raw[j].mass.end(), 0.0);
      acc.weights[j] = tot;
      acc.fibers[j] = raw[j];
      if (tot > 0) {
        for (auto& x : acc.fibers[j].mass) x /= tot;
        if (exact) {
          Rational qt(0);
          for (const auto& x : raw[j].exact) qt += x;
          for (auto& x : acc.fibers[j].exact) x /= qt;
        }
      }
    }
    return acc;
  }
  if (auto gr = std::get_if<GridMeasure>(&mu)) {
    GridMeasure acc = *gr;
    std::fill(acc.mass.begin(), acc.mass.end(), 0.0);
    for (std::size_t i = 0; i < gs.size(); ++i) {
      auto p = std::get<GridMeasure>(pushforward(sys, gs[i], mu));
      for (std::size_t k = 0; k < acc.mass.size(); ++k) acc.mass[k] += ws[i] * p.mass[k];
    }
    return acc;
  }
  AtomicMeasure acc;
  for (std::size_t i = 0; i < gs.size(); ++i) {
    auto p = std::get<AtomicMeasure>(pushforward(sys, gs[i], mu));
    for (std::size_t k = 0; k < p.points.size(); ++k) {
      acc.points.push_back(std::move(p.points[k]));
      acc.weights.push_back(ws[i] * p.weights[k]);
    }
  }
  return detail::merge_atoms(acc);
}

/// m * mu. Atomic group measures are exact; samplers average n_samples
/// pushforwards with per-sample streams derived from (seed, index).
inline Measure convolve(const SystemHandle& sys, const GroupMeasure& m, const Measure& mu, int n_samples = 256,
                        std::uint64_t seed = 0) {
  if (auto a = std::get_if<AtomicGroupMeasure>(&m)) return combine_pushforwards(sys, a->elements, a->weights, mu);
  if (n_samples < 1) fail(ErrorKind::InvalidArgument, "n_samples must be >= 1");
  std::vector<GroupElement> gs(n_samples);
  for (int i = 0; i < n_samples; ++i) {
    Rng rng(seed, static_cast<std::uint64_t>(i), 0xc0);
    gs[i] = sample_group(m, rng);
  }
  std::vector<double> ws(n_samples, 1.0 / n_samples);
  return combine_pushforwards(sys, gs, ws, mu);
}

// ---------------------------------------------------------------------------
// Radon-Nikodym derivatives.

namespace detail {

inline std::pair<int, double> grid_coords(const SpacePoint& x) {
  if (auto r = std::get_if<RayAngle>(&x.value)) return {1, r->theta};
  if (auto p = std::get_if<ProjAngle>(&x.value)) return {1, p->theta};
  const auto& t = x.as<Tagged>();
  return {t.copy, t.theta};
}

inline double grid_density(const GridMeasure& g, int copy, double theta) {
  int i = std::min(g.n - 1, static_cast<int>(wrap(theta, g.period()) / g.width()));
  return g.mass[(copy - 1) * g.n + i] / g.width();
}

}  // namespace detail

/// d(g mu)/d mu at x.
inline double radon_nikodym(const SystemHandle& sys, const GroupElement& g, const Measure& mu, const SpacePoint& x) {
  if (auto gr = std::get_if<GridMeasure>(&mu)) {
    auto [c, th] = detail::grid_coords(x);
    double here = detail::grid_density(*gr, c, th);
    if (!(here > 0)) fail(ErrorKind::ZeroDensity, "density vanishes at the evaluation point");
    GroupElement ginv = inverse(g);
    SpacePoint y = act(sys, ginv, x);
    auto [c2, th2] = detail::grid_coords(y);
    double there = detail::grid_density(*gr, c2, th2);
    if (!(there > 0)) fail(ErrorKind::ZeroDensity, "density vanishes at the preimage");
    return there * detail::local_jacobian(sys, ginv, x) / here;
  }
  if (auto c = std::get_if<CylinderMeasure>(&mu)) {
    const auto& w = std::get<FreeWord>(g);
    const auto& xw = x.as<WordPrefix>().word;
    std::size_t K = static_cast<std::size_t>(c->depth) + w.size() + 1;
    if (xw.size() < K) fail(ErrorKind::OutOfRange, "point prefix shorter than the stabilization depth");
    FreeWord pre = xw.prefix(K);
    detail::CylLevels<double> lv(c->depth, c->mass);
    double den = lv.mass(pre);
    if (!(den > 0)) fail(ErrorKind::ZeroDensity, "cylinder of the point has zero mass");
    return detail::image_cylinder_mass(lv, w.inverse(), pre) / den;
  }
  if (auto f = std::get_if<FiberedMeasure>(&mu)) {
    const auto& w = std::get<FreeWord>(g);
    const auto& p = x.as<PointPair>();
    std::size_t K = static_cast<std::size_t>(fibered_depth(*f)) + w.size() + 1;
    const auto& zw = p.parts[1].as<WordPrefix>().word;
    if (zw.size() < K) fail(ErrorKind::OutOfRange, "point prefix shorter than the stabilization depth");
    FreeWord pre = zw.prefix(K);
    std::size_t i = detail::label_index(*f, p.parts[0]);
    double den = f->weights[i] * cylinder_mass(f->fibers[i], pre);
    if (!(den > 0)) fail(ErrorKind::ZeroDensity, "cell of the point has zero mass");
    auto [label, mult] = detail::fiber_move(f->system, w.inverse(), p.parts[0]);
    std::size_t j = detail::label_index(*f, label);
    detail::CylLevels<double> lv(f->fibers[j].depth, f->fibers[j].mass);
    return f->weights[j] * detail::image_cylinder_mass(lv, mult, pre) / den;
  }
  fail(ErrorKind::InvalidArgument, "radon_nikodym needs a grid, cylinder or fibered measure");
}

/// Exact d(g mu)/d mu on the cylinder of a word (|word| >= depth + |g| + 1).
inline Rational radon_nikodym_exact(const FreeWord& g, const CylinderMeasure& mu, const FreeWord& x) {
  detail::CylLevels<Rational> lv(mu.depth, mu.exact);
  Rational den = lv.mass(x);
  if (den == 0) fail(ErrorKind::ZeroDensity, "cylinder of the point has zero mass");
  return detail::image_cylinder_mass(lv, g.inverse(), x) / den;
}


// ---------------------------------------------------------------------------
// Point keys and sampling.

namespace detail {

inline std::string hex_double(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%a", x);
  return buf;
}

inline std::string point_key(const SpacePoint& x) {
  return std::visit(
      [](const auto& p) -> std::string {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, RayAngle>) return "r" + hex_double(p.theta);
        else if constexpr (std::is_same_v<T, ProjAngle>) return "p" + hex_double(p.theta);
        else if constexpr (std::is_same_v<T, WordPrefix>) return "w" + p.word.str();
        else if constexpr (std::is_same_v<T, Bit>) return "b" + std::to_string(p.value);
        else if constexpr (std::is_same_v<T, BitSeq>) return "s" + std::to_string(p.bits) + "/" + std::to_string(p.depth);
        else if constexpr (std::is_same_v<T, Tagged>) return "t" + std::to_string(p.copy) + hex_double(p.theta);
        else if constexpr (std::is_same_v<T, PointPair>) return "(" + point_key(p.parts[0]) + "," + point_key(p.parts[1]) + ")";
        else return "u";
      },
      x.value);
}

/// Extends a cylinder sample to `len` letters by the tail rule.
inline FreeWord extend_uniform(FreeWord w, std::size_t len, Rng& rng) {
  while (w.size() < len) w.letters.push_back(letter_of_choice(w.letters.back(), static_cast<int>(rng.below(3))));
  return w;
}

inline FreeWord sample_cylinder(const CylinderMeasure& c, std::size_t len, Rng& rng) {
  std::size_t i = rng.categorical(c.mass);
  FreeWord w = index_word(i, c.depth);
  if (w.size() > len) return w.prefix(len);
  return extend_uniform(std::move(w), len, rng);
}

}  // namespace detail

/// One point drawn from mu. Words are drawn to `word_len` letters.
inline SpacePoint sample_point(const Measure& mu, Rng& rng, std::size_t word_len = 40) {
  if (auto a = std::get_if<AtomicMeasure>(&mu)) return a->points[rng.categorical(a->weights)];
  if (auto g = std::get_if<GridMeasure>(&mu)) {
    std::size_t i = rng.categorical(g->mass);
    int copy = static_cast<int>(i / g->n) + 1;
    double th = (static_cast<double>(i % g->n) + rng.uniform()) * g->width();
    if (g->space == GridSpace::Ray) return SpacePoint{RayAngle{th}};
    if (g->space == GridSpace::Proj) return SpacePoint{ProjAngle{th}};
    return SpacePoint{Tagged{copy, th}};
  }
  if (auto c = std::get_if<CylinderMeasure>(&mu)) return SpacePoint{WordPrefix{detail::sample_cylinder(*c, word_len, rng)}};
  const auto& f = std::get<FiberedMeasure>(mu);
  std::size_t i = rng.categorical(f.weights);
  return make_pair_point(f.labels[i], SpacePoint{WordPrefix{detail::sample_cylinder(f.fibers[i], word_len, rng)}});
}

inline double total_mass(const Measure& mu) {
  auto sum = [](const std::vector<double>& v) {
    return static_cast<double>(std::accumulate(v.begin(), v.end(), 0.0L));
  };
  if (auto a = std::get_if<AtomicMeasure>(&mu)) return sum(a->weights);
  if (auto g = std::get_if<GridMeasure>(&mu)) return sum(g->mass);
  if (auto c = std::get_if<CylinderMeasure>(&mu)) return sum(c->mass);
  return sum(std::get<FiberedMeasure>(mu).weights);
}

// ---------------------------------------------------------------------------
// Distances.

/// Resolution of the cell algebra used for total variation off the circle.
struct CellSpec {
  int arcs = 8;
  int word_depth = 2;
  int bit_depth = 4;
};

namespace detail {

inline std::string cell_key(const SpacePoint& x, const CellSpec& cs) {
  return std::visit(
      [&](const auto& p) -> std::string {
        using T = std::decay_t<decltype(p)>;
        auto arc = [&](double th, double per) {
          int k = std::min(cs.arcs - 1, static_cast<int>(wrap(th, per) / per * cs.arcs));
          return std::to_string(k);
        };
        if constexpr (std::is_same_v<T, RayAngle>) return "r" + arc(p.theta, kTwoPi);
        else if constexpr (std::is_same_v<T, ProjAngle>) return "p" + arc(p.theta, kPi);
        else if constexpr (std::is_same_v<T, WordPrefix>) return "w" + p.word.prefix(cs.word_depth).str();
        else if constexpr (std::is_same_v<T, Bit>) return "b" + std::to_string(p.value);
        else if constexpr (std::is_same_v<T, BitSeq>)
          return "s" + std::to_string(p.bits & ((1u << std::min(cs.bit_depth, p.depth)) - 1u));
        else if constexpr (std::is_same_v<T, Tagged>) return "t" + std::to_string(p.copy) + ":" + arc(p.theta, kPi);
        else if constexpr (std::is_same_v<T, PointPair>)
          return "(" + cell_key(p.parts[0], cs) + "," + cell_key(p.parts[1], cs) + ")";
        else return "u";
      },
      x.value);
}

inline void add_cylinder_cells(std::map<std::string, double>& out, const std::string& prefix,
                               const CylinderMeasure& c, double w, int depth) {
  auto cd = cylinder_at_depth(c, depth);
  for (std::size_t i = 0; i < cd.mass.size(); ++i) out[prefix + "w" + index_word(i, depth).str()] += w * cd.mass[i];
}

}  // namespace detail

/// Masses of the cells of mu at the given resolution.
inline std::map<std::string, double> cell_masses(const Measure& mu, const CellSpec& cs) {
  std::map<std::string, double> out;
  if (auto a = std::get_if<AtomicMeasure>(&mu)) {
    for (std::size_t i = 0; i < a->points.size(); ++i) out[detail::cell_key(a->points[i], cs)] += a->weights[i];
  } else if (auto g = std::get_if<GridMeasure>(&mu)) {
    double h = g->width();
    for (int c = 1; c <= g->copies(); ++c) {
      detail::GridCdf cdf(*g, c);
      double per = g->period();
      for (int k = 0; k < cs.arcs; ++k) {
        double lo = per * k / cs.arcs, hi = per * (k + 1) / cs.arcs;
        std::string key = g->space == GridSpace::Ray    ? "r" + std::to_string(k)
                          : g->space == GridSpace::Proj ? "p" + std::to_string(k)
                                                        : "t" + std::to_string(c) + ":" + std::to_string(k);
        out[key] += cdf.at(hi) - cdf.at(lo);
      }
      (void)h;
    }
  } else if (auto cy = std::get_if<CylinderMeasure>(&mu)) {
    detail::add_cylinder_cells(out, "", *cy, 1.0, cs.word_depth);
  } else {
    const auto& f = std::get<FiberedMeasure>(mu);
    for (std::size_t i = 0; i < f.labels.size(); ++i)
      detail::add_cylinder_cells(out, "(" + detail::cell_key(f.labels[i], cs) + ",", f.fibers[i], f.weights[i],
                                 cs.word_depth);
    std::map<std::string, double> closed;
    for (auto& [k, v] : out) closed[k + ")"] = v;
    out.swap(closed);
  }
  return out;
}

inline double cell_tv(const Measure& mu, const Measure& nu, const CellSpec& cs) {
  auto p = cell_masses(mu, cs), q = cell_masses(nu, cs);
  double s = 0;
  for (const auto& [k, v] : p) {
    auto it = q.find(k);
    s += std::fabs(v - (it == q.end() ? 0.0 : it->second));
  }
  for (const auto& [k, v] : q)
    if (!p.count(k)) s += std::fabs(v);
  return 0.5 * s;
}

namespace detail {

/// 0 = not a circle measure, else the period.
inline double circle_period(const Measure& mu) {
  if (auto g = std::get_if<GridMeasure>(&mu)) return g->space == GridSpace::Tagged ? 0.0 : g->period();
  if (auto a = std::get_if<AtomicMeasure>(&mu)) {
    if (a->points.empty()) return 0.0;
    bool ray = true, proj = true;
    for (const auto& x : a->points) {
      ray = ray && x.is<RayAngle>();
      proj = proj && x.is<ProjAngle>();
    }
    return ray ? kTwoPi : proj ? kPi : 0.0;
  }
  return 0.0;
}

inline std::vector<std::pair<double, double>> circle_atoms(const AtomicMeasure& a, double per) {
  std::vector<std::pair<double, double>> v;
  for (std::size_t i = 0; i < a.points.size(); ++i) {
    double th = per == kTwoPi ? a.points[i].as<RayAngle>().theta : a.points[i].as<ProjAngle>().theta;
    v.emplace_back(wrap(th, per), a.weights[i]);
  }
  return v;
}

/// min_c sum_i len_i |D_i - c|: weighted median of the cumulative differences.
/// Ties are broken toward the smaller offset.
inline double circular_transport(std::vector<std::pair<double, double>> diff_len) {
  double total = 0;
  for (auto& [d, l] : diff_len) total += l;
  if (total <= 0) return 0;
  std::sort(diff_len.begin(), diff_len.end());
  double acc = 0, c = diff_len.front().first;
  for (auto& [d, l] : diff_len) {
    acc += l;
    if (acc >= 0.5 * total) {
      c = d;
      break;
    }
  }
  double s = 0;
  for (auto& [d, l] : diff_len) s += l * std::fabs(d - c);
  return s;
}

inline double w1_atoms(const AtomicMeasure& a, const AtomicMeasure& b, double per) {
  std::vector<std::pair<double, double>> ev;  // (position, signed mass)
  for (auto [p, w] : circle_atoms(a, per)) ev.emplace_back(p, w);
  for (auto [p, w] : circle_atoms(b, per)) ev.emplace_back(p, -w);
  std::sort(ev.begin(), ev.end());
  std::vector<std::pair<double, double>> dl;
  double D = 0, prev = 0;
  for (auto [p, w] : ev) {
    dl.emplace_back(D, p - prev);
    D += w;
    prev = p;
  }
  dl.emplace_back(D, per - prev);
  return circular_transport(std::move(dl));
}

inline std::vector<double> binned(const Measure& mu, int n, double per) {
  std::vector<double> m(n, 0.0);
  if (auto a = std::get_if<AtomicMeasure>(&mu)) {
    for (auto [p, w] : circle_atoms(*a, per)) m[std::min(n - 1, static_cast<int>(p / per * n))] += w;
    return m;
  }
  const auto& g = std::get<GridMeasure>(mu);
  if (g.n == n) return g.mass;
  GridCdf cdf(g, 1);
  for (int i = 0; i < n; ++i) m[i] = cdf.at(per * (i + 1) / n) - cdf.at(per * i / n);
  return m;
}

}  // namespace detail

/// Wasserstein-1 on a circle of the given period (arc-length cost).
inline double circle_w1(const Measure& mu, const Measure& nu, double per) {
  auto a = std::get_if<AtomicMeasure>(&mu);
  auto b = std::get_if<AtomicMeasure>(&nu);
  if (a && b) return detail::w1_atoms(*a, *b, per);
  int n = 0;
  if (auto g = std::get_if<GridMeasure>(&mu)) n = std::max(n, g->n);
  if (auto g = std::get_if<GridMeasure>(&nu)) n = std::max(n, g->n);
  auto p = detail::binned(mu, n, per), q = detail::binned(nu, n, per);
  double h = per / n, D = 0;
  std::vector<std::pair<double, double>> dl;
  dl.reserve(n);
  for (int i = 0; i < n; ++i) {
    D += p[i] - q[i];
    dl.emplace_back(D, h);
  }
  return detail::circular_transport(std::move(dl));
}

inline int cylinder_resolution(const Measure& mu) {
  if (auto c = std::get_if<CylinderMeasure>(&mu)) return c->depth;
  if (auto f = std::get_if<FiberedMeasure>(&mu)) {
    int d = 1 << 20;
    for (const auto& c : f->fibers) d = std::min(d, c.depth);
    return d;
  }
  if (auto a = std::get_if<AtomicMeasure>(&mu)) {
    int d = 1 << 20;
    bool any = false;
    std::function<void(const SpacePoint&)> scan = [&](const SpacePoint& x) {
      if (auto w = std::get_if<WordPrefix>(&x.value)) {
        d = std::min(d, static_cast<int>(w->word.size()));
        any = true;
      } else if (auto p = std::get_if<PointPair>(&x.value)) {
        scan(p->parts[0]);
        scan(p->parts[1]);
      }
    };
    for (const auto& x : a->points) scan(x);
    return any ? std::min(d, 8) : 0;
  }
  return 0;
}

namespace detail {

inline std::string space_signature(const SpacePoint& x) {
  return std::visit(
      [](const auto& p) -> std::string {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, PointPair>)
          return "(" + space_signature(p.parts[0]) + "," + space_signature(p.parts[1]) + ")";
        else if constexpr (std::is_same_v<T, RayAngle>) return "ray";
        else if constexpr (std::is_same_v<T, ProjAngle>) return "proj";
        else if constexpr (std::is_same_v<T, WordPrefix>) return "word";
        else if constexpr (std::is_same_v<T, Bit>) return "bit";
        else if constexpr (std::is_same_v<T, BitSeq>) return "bits";
        else if constexpr (std::is_same_v<T, Tagged>) return "tagged";
        else return "unit";
      },
      x.value);
}

inline std::string space_signature(const Measure& mu) {
  if (auto g = std::get_if<GridMeasure>(&mu))
    return g->space == GridSpace::Ray ? "ray" : g->space == GridSpace::Proj ? "proj" : "tagged";
  if (std::holds_alternative<CylinderMeasure>(mu)) return "word";
  if (auto f = std::get_if<FiberedMeasure>(&mu)) return "(" + space_signature(f->labels.front()) + ",word)";
  const auto& a = std::get<AtomicMeasure>(mu);
  return a.points.empty() ? "empty" : space_signature(a.points.front());
}

}  // namespace detail

/// Circle measures: W1 with arc-length cost. Everything else: total variation
/// on the cell algebra, words compared at depth min(d1, d2); two atomic
/// measures keep the CellSpec depth.
inline double weak_star_distance(const Measure& mu, const Measure& nu, CellSpec cs = {}) {
  auto s1 = detail::space_signature(mu), s2 = detail::space_signature(nu);
  if (s1 != s2) fail(ErrorKind::IncompatibleSystem, "measures live on different spaces (" + s1 + " vs " + s2 + ")");
  double per = detail::circle_period(mu);
  if (per > 0 && detail::circle_period(nu) == per) return circle_w1(mu, nu, per);
  int d1 = cylinder_resolution(mu), d2 = cylinder_resolution(nu);
  bool sampled = std::holds_alternative<AtomicMeasure>(mu) && std::holds_alternative<AtomicMeasure>(nu);
  if (d1 > 0 && d2 > 0) cs.word_depth = sampled ? std::min({cs.word_depth, d1, d2}) : std::min(d1, d2);
  return cell_tv(mu, nu, cs);
}

// ---------------------------------------------------------------------------
// Barycenter and products.

inline Measure barycenter(const MeasureOnMeasures& P) {
  if (P.measures.empty()) fail(ErrorKind::InvalidArgument, "empty measure on measures");
  std::size_t tag = P.measures.front().index();
  for (const auto& m : P.measures)
    if (m.index() != tag) fail(ErrorKind::VariantMismatch, "barycenter of mixed representations");
  double wsum = std::accumulate(P.weights.begin(), P.weights.end(), 0.0);
  if (tag == 0) {
    AtomicMeasure acc;
    for (std::size_t i = 0; i < P.measures.size(); ++i) {
      const auto& a = std::get<AtomicMeasure>(P.measures[i]);
      for (std::size_t k = 0; k < a.points.size(); ++k) {
        acc.points.push_back(a.points[k]);
        acc.weights.push_back(P.weights[i] * a.weights[k]);
      }
    }
    // Normalize after merging so equal weights sum without rounding drift.
    auto merged = detail::merge_atoms(acc);
    for (auto& w : merged.weights) w /= wsum;
    return merged;
  }
  if (tag == 1) {
    GridMeasure acc = std::get<GridMeasure>(P.measures.front());
    std::fill(acc.mass.begin(), acc.mass.end(), 0.0);
    for (std::size_t i = 0; i < P.measures.size(); ++i) {
      const auto& g = std::get<GridMeasure>(P.measures[i]);
      if (g.n != acc.n || g.space != acc.space) fail(ErrorKind::VariantMismatch, "grids differ");
      for (std::size_t k = 0; k < acc.mass.size(); ++k) acc.mass[k] += P.weights[i] / wsum * g.mass[k];
    }
    return acc;
  }
  if (tag == 2) {
    int D = 1;
    bool exact = true;
    for (const auto& m : P.measures) {
      D = std::max(D, std::get<CylinderMeasure>(m).depth);
      exact = exact && std::get<CylinderMeasure>(m).is_exact();
    }
    CylinderMeasure acc;
    acc.depth = D;
    acc.mass.assign(cyl_count(D), 0.0);
    if (exact) acc.exact.assign(cyl_count(D), Rational(0));
    for (std::size_t i = 0; i < P.measures.size(); ++i) {
      auto c = cylinder_at_depth(std::get<CylinderMeasure>(P.measures[i]), D);
      Rational q = detail::exact_weight(P.weights[i] / wsum);
      detail::add_scaled(acc, c, P.weights[i] / wsum, &q);
    }
    return acc;
  }
  fail(ErrorKind::InvalidArgument, "barycenter of fibered measures is not supported");
}

namespace detail {

inline AtomicMeasure atomize(const Measure& mu) {
  if (auto a = std::get_if<AtomicMeasure>(&mu)) return *a;
  AtomicMeasure out;
  if (auto g = std::get_if<GridMeasure>(&mu)) {
    for (std::size_t i = 0; i < g->mass.size(); ++i) {
      if (g->mass[i] <= 0) continue;
      double th = (static_cast<double>(i % g->n) + 0.5) * g->width();
      int copy = static_cast<int>(i / g->n) + 1;
      out.points.push_back(g->space == GridSpace::Ray    ? SpacePoint{RayAngle{th}}
                           : g->space == GridSpace::Proj ? SpacePoint{ProjAngle{th}}
                                                         : SpacePoint{Tagged{copy, th}});
      out.weights.push_back(g->mass[i]);
    }
    return out;
  }
  if (auto c = std::get_if<CylinderMeasure>(&mu)) {
    for (std::size_t i = 0; i < c->mass.size(); ++i) {
      if (c->mass[i] <= 0) continue;
      out.points.push_back(SpacePoint{WordPrefix{index_word(i, c->depth)}});
      out.weights.push_back(c->mass[i]);
    }
    return out;
  }
  const auto& f = std::get<FiberedMeasure>(mu);
  for (std::size_t j = 0; j < f.labels.size(); ++j) {
    const auto& c = f.fibers[j];
    for (std::size_t i = 0; i < c.mass.size(); ++i) {
      double w = f.weights[j] * c.mass[i];
      if (w <= 0) continue;
      out.points.push_back(make_pair_point(f.labels[j], SpacePoint{WordPrefix{index_word(i, c.depth)}}));
      out.weights.push_back(w);
    }
  }
  return out;
}

}  // namespace detail

/// mu x nu as an atomic measure on pairs (grids atomized at bin centers,
/// cylinders at their tabulated depth).
inline AtomicMeasure product_measure(const Measure& mu, const Measure& nu) {
  auto a = detail::atomize(mu), b = detail::atomize(nu);
  AtomicMeasure out;
  out.points.reserve(a.points.size() * b.points.size());
  for (std::size_t i = 0; i < a.points.size(); ++i)
    for (std::size_t j = 0; j < b.points.size(); ++j) {
      out.points.push_back(make_pair_point(a.points[i], b.points[j]));
      out.weights.push_back(a.weights[i] * b.weights[j]);
    }
  return out;
}

/// Coarsens a grid to n bins (n must divide the current bin count).
inline GridMeasure rebin(const GridMeasure& g, int n) {
  if (n <= 0 || g.n % n != 0) fail(ErrorKind::InvalidArgument, "rebin target must divide the bin count");
  GridMeasure out;
  out.space = g.space;
  out.n = n;
  out.mass.assign(static_cast<std::size_t>(n) * g.copies(), 0.0);
  int r = g.n / n;
  for (std::size_t i = 0; i < g.mass.size(); ++i) {
    std::size_t copy = i / g.n, k = (i % g.n) / r;
    out.mass[copy * n + k] += g.mass[i];
  }
  return out;
}

/// Marginal of an atomic measure on pairs.
inline AtomicMeasure marginal(const AtomicMeasure& a, int coord) {
  AtomicMeasure out;
  for (std::size_t i = 0; i < a.points.size(); ++i) {
    out.points.push_back(a.points[i].as<PointPair>().parts[coord]);
    out.weights.push_back(a.weights[i]);
  }
  return detail::merge_atoms(out);
}

/// Image of mu under a declared factor map.
inline Measure factor_image(const SystemHandle& sys, std::string_view id, const Measure& mu) {
  factor_target(sys, id);
  if (id == "identity") return mu;
  if (id == "collapse") return dirac(SpacePoint{Unit{}});
  if (auto a = std::get_if<AtomicMeasure>(&mu)) {
    AtomicMeasure out;
    for (std::size_t i = 0; i < a->points.size(); ++i) {
      out.points.push_back(apply_factor(sys, id, a->points[i]));
      out.weights.push_back(a->weights[i]);
    }
    return detail::merge_atoms(out);
  }
  if (auto g = std::get_if<GridMeasure>(&mu)) {
    if (id == "mod_pi") {
      if (g->n % 2 != 0) fail(ErrorKind::InvalidArgument, "mod_pi needs an even number of ray bins");
      GridMeasure out;
      out.space = GridSpace::Proj;
      out.n = g->n / 2;
      out.mass.assign(out.n, 0.0);
      for (int k = 0; k < g->n; ++k) out.mass[k % out.n] += g->mass[k];
      return out;
    }
    if (id == "tag") {
      double m1 = std::accumulate(g->mass.begin(), g->mass.begin() + g->n, 0.0);
      double m2 = std::accumulate(g->mass.begin() + g->n, g->mass.end(), 0.0);
      return AtomicMeasure{{SpacePoint{Bit{0}}, SpacePoint{Bit{1}}}, {m1, m2}};
    }
  }
  if (auto f = std::get_if<FiberedMeasure>(&mu)) {
    AtomicMeasure out;
    for (std::size_t i = 0; i < f->labels.size(); ++i) {
      out.points.push_back(id == "first_bit" ? SpacePoint{Bit{f->labels[i].as<BitSeq>().first()}} : f->labels[i]);
      out.weights.push_back(f->weights[i]);
    }
    return detail::merge_atoms(out);
  }
  fail(ErrorKind::InvalidArgument,
       std::string("factor '") + std::string(id) + "' has no image for a " + repr_name(mu) + " measure");
}

}  // namespace statwalk
