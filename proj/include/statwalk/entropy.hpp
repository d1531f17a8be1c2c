#pragma once

#include "statwalk/measure.hpp"

namespace statwalk {

/// Furstenberg entropy in nats.
struct EntropyEstimate {
  double value = 0;
  double stderr_ = 0;
  std::string method;  // "exact" | "monte_carlo"
  std::size_t n_g = 0;
  std::size_t n_x = 0;
  std::size_t clipped = 0;  // densities raised to the floor before the log
};

struct EntropyBudget {
  int n_g = 4;
  int n_x = 10000;
  std::uint64_t seed = 0;
  int threads = 0;
};

inline constexpr double kDensityFloor = 1e-12;

namespace detail {

/// Accumulates -sum w log r with the weights grouped by the ratio r.
struct LogSum {
  std::map<Rational, Rational> by_ratio;

  void add(const Rational& w, const Rational& r) { by_ratio[r] += w; }

  double value() const {
    long double s = 0;
    for (const auto& [r, w] : by_ratio) {
      if (r == 0) fail(ErrorKind::ZeroDensity, "Radon-Nikodym derivative vanishes on a positive cylinder");
      // log of a rational without overflowing double
      long double lr = std::log(static_cast<long double>(to_double(r)));
      s -= static_cast<long double>(to_double(w)) * lr;
    }
    return static_cast<double>(s);
  }
};

inline int max_word_length(const AtomicGroupMeasure& m) {
  int L = 0;
  for (const auto& g : m.elements) L = std::max(L, static_cast<int>(std::get<FreeWord>(g).size()));
  return L;
}

}  // namespace detail

/// -sum_g m(g) sum_C mu(C) log(dg mu/d mu)(C) over cylinders fine enough for
/// the derivative to be constant on each of them.
inline EntropyEstimate entropy_exact(const AtomicGroupMeasure& m, const CylinderMeasure& mu) {
  if (!mu.is_exact()) fail(ErrorKind::InvalidArgument, "exact entropy needs exact cylinder masses");
  int K = mu.depth + detail::max_word_length(m) + 1;
  detail::CylLevels<Rational> lv(mu.depth, mu.exact);
  detail::LogSum acc;
  for (std::size_t i = 0; i < m.elements.size(); ++i) {
    const auto& g = std::get<FreeWord>(m.elements[i]);
    Rational wg = detail::exact_weight(m.weights[i]);
    for (std::size_t k = 0; k < cyl_count(K); ++k) {
      FreeWord x = index_word(k, K);
      Rational mass = lv.mass(x);
      if (mass == 0) continue;
      acc.add(wg * mass, detail::image_cylinder_mass(lv, g.inverse(), x) / mass);
    }
  }
  return EntropyEstimate{acc.value(), 0.0, "exact", m.elements.size(), cyl_count(K), 0};
}

/// h_m(boundary, eta) for m uniform on the generators.
inline EntropyEstimate entropy_exact_f2_boundary(int depth) {
  if (depth < 2) fail(ErrorKind::InvalidArgument, "depth must be >= 2");
  return entropy_exact(uniform_generators(), eta_measure(depth));
}

/// Fibered measures: cells are (label, cylinder) pairs.
inline EntropyEstimate entropy_exact(const SystemHandle& sys, const AtomicGroupMeasure& m, const FiberedMeasure& mu) {
  if (sys.id != mu.system) fail(ErrorKind::IncompatibleSystem, "fibered measure belongs to another system");
  int K = fibered_depth(mu) + detail::max_word_length(m) + 1;
  long double s = 0;
  std::size_t cells = 0;
  for (std::size_t i = 0; i < mu.labels.size(); ++i) {
    if (mu.weights[i] == 0) continue;
    auto table = cylinder_at_depth(mu.fibers[i], K);
    for (std::size_t k = 0; k < table.mass.size(); ++k) {
      double mass = mu.weights[i] * table.mass[k];
      if (mass == 0) continue;
      ++cells;
      SpacePoint x = make_pair_point(mu.labels[i], SpacePoint{WordPrefix{index_word(k, K)}});
      for (std::size_t j = 0; j < m.elements.size(); ++j) {
        double r = radon_nikodym(sys, m.elements[j], mu, x);
        if (!(r > 0)) fail(ErrorKind::ZeroDensity, "Radon-Nikodym derivative vanishes on a positive cell");
        s -= static_cast<long double>(m.weights[j] * mass) * std::log(static_cast<long double>(r));
      }
    }
  }
  return EntropyEstimate{static_cast<double>(s), 0.0, "exact", m.elements.size(), cells, 0};
}

/// Finite atomic measures. A vanishing g mu mass is floored and counted.
inline EntropyEstimate entropy_exact(const SystemHandle& sys, const AtomicGroupMeasure& m, const AtomicMeasure& mu) {
  auto base = detail::merge_atoms(mu);
  std::map<std::string, double> here;
  for (std::size_t i = 0; i < base.points.size(); ++i) here[detail::point_key(base.points[i])] += base.weights[i];
  long double s = 0;
  std::size_t clipped = 0;
  for (std::size_t j = 0; j < m.elements.size(); ++j) {
    auto img = std::get<AtomicMeasure>(pushforward(sys, m.elements[j], base));
    std::map<std::string, double> there;
    for (std::size_t i = 0; i < img.points.size(); ++i) there[detail::point_key(img.points[i])] += img.weights[i];
    for (const auto& [key, w] : here) {
      if (w <= 0) continue;
      double r = there.count(key) ? there[key] / w : 0.0;
      if (r < kDensityFloor) {
        r = kDensityFloor;
        ++clipped;
      }
      s -= static_cast<long double>(m.weights[j] * w) * std::log(static_cast<long double>(r));
    }
  }
  return EntropyEstimate{static_cast<double>(s), 0.0, "exact", m.elements.size(), here.size(), clipped};
}

/// F2 x F2 acting factorwise on a product of two boundaries with mu1 x mu2.
inline EntropyEstimate entropy_exact_product(const AtomicGroupMeasure& m, const CylinderMeasure& mu1,
                                             const CylinderMeasure& mu2) {
  if (!mu1.is_exact() || !mu2.is_exact()) fail(ErrorKind::InvalidArgument, "exact entropy needs exact cylinder masses");
  int L1 = 0, L2 = 0;
  for (const auto& g : m.elements) {
    const auto& p = std::get<WordPair>(g);
    L1 = std::max(L1, static_cast<int>(p.first.size()));
    L2 = std::max(L2, static_cast<int>(p.second.size()));
  }
  int K1 = mu1.depth + L1 + 1, K2 = mu2.depth + L2 + 1;
  detail::CylLevels<Rational> lv1(mu1.depth, mu1.exact), lv2(mu2.depth, mu2.exact);
  std::vector<Rational> mass1(cyl_count(K1)), mass2(cyl_count(K2));
  for (std::size_t k = 0; k < mass1.size(); ++k) mass1[k] = lv1.mass(index_word(k, K1));
  for (std::size_t k = 0; k < mass2.size(); ++k) mass2[k] = lv2.mass(index_word(k, K2));
  detail::LogSum acc;
  for (std::size_t j = 0; j < m.elements.size(); ++j) {
    const auto& p = std::get<WordPair>(m.elements[j]);
    Rational wg = detail::exact_weight(m.weights[j]);
    std::vector<Rational> r1(mass1.size()), r2(mass2.size());
    for (std::size_t k = 0; k < mass1.size(); ++k)
      if (mass1[k] != 0) r1[k] = detail::image_cylinder_mass(lv1, p.first.inverse(), index_word(k, K1)) / mass1[k];
    for (std::size_t k = 0; k < mass2.size(); ++k)
      if (mass2[k] != 0) r2[k] = detail::image_cylinder_mass(lv2, p.second.inverse(), index_word(k, K2)) / mass2[k];
    for (std::size_t a = 0; a < mass1.size(); ++a) {
      if (mass1[a] == 0) continue;
      for (std::size_t b = 0; b < mass2.size(); ++b)
        if (mass2[b] != 0) acc.add(wg * mass1[a] * mass2[b], r1[a] * r2[b]);
    }
  }
  return EntropyEstimate{acc.value(), 0.0, "exact", m.elements.size(), mass1.size() * mass2.size(), 0};
}

// ---------------------------------------------------------------------------
// Monte Carlo.

namespace detail {

struct Stratum {
  double sum = 0, sumsq = 0;
  std::size_t count = 0, clipped = 0;

  double mean() const { return sum / static_cast<double>(count); }
  double var() const {
    double mu = mean();
    return count > 1 ? std::max(0.0, (sumsq - count * mu * mu) / static_cast<double>(count - 1)) : 0.0;
  }
};

inline void check_positive_density(const GridMeasure& g) {
  for (std::size_t i = 0; i < g.mass.size(); ++i)
    if (!(g.mass[i] > 0))
      fail(ErrorKind::ZeroDensity, "grid density vanishes in bin " + std::to_string(i));
}

/// log(dg mu/d mu)(x) with grid densities floored at kDensityFloor.
inline double log_rn(const SystemHandle& sys, const GroupElement& g, const Measure& mu, const SpacePoint& x,
                     std::size_t& clipped) {
  if (auto gr = std::get_if<GridMeasure>(&mu)) {
    auto floor = [&](double d) {
      if (d < kDensityFloor) {
        ++clipped;
        return kDensityFloor;
      }
      return d;
    };
    auto [c, th] = grid_coords(x);
    double here = floor(grid_density(*gr, c, th));
    GroupElement ginv = inverse(g);
    auto [c2, th2] = grid_coords(act(sys, ginv, x));
    double there = floor(grid_density(*gr, c2, th2));
    return std::log(there) + std::log(local_jacobian(sys, ginv, x)) - std::log(here);
  }
  double r = radon_nikodym(sys, g, mu, x);
  if (r < kDensityFloor) {
    ++clipped;
    r = kDensityFloor;
  }
  return std::log(r);
}

inline std::size_t needed_word_length(const Measure& mu, const GroupElement& g) {
  std::size_t L = 0;
  if (auto w = std::get_if<FreeWord>(&g)) L = w->size();
  int d = 0;
  if (auto c = std::get_if<CylinderMeasure>(&mu)) d = c->depth;
  if (auto f = std::get_if<FiberedMeasure>(&mu)) d = fibered_depth(*f);
  return std::max<std::size_t>(40, static_cast<std::size_t>(d) + L + 1);
}

inline EntropyEstimate combine_strata(const std::vector<Stratum>& st, const std::vector<double>& w, bool sampled,
                                      std::size_t n_x) {
  EntropyEstimate e;
  e.method = "monte_carlo";
  e.n_g = st.size();
  e.n_x = n_x;
  if (sampled) {
    double s = 0, s2 = 0;
    for (const auto& x : st) {
      s += x.mean();
      s2 += x.mean() * x.mean();
      e.clipped += x.clipped;
    }
    double n = static_cast<double>(st.size());
    e.value = s / n;
    double var = st.size() > 1 ? std::max(0.0, (s2 - n * e.value * e.value) / (n - 1)) : st[0].var() / n_x;
    e.stderr_ = std::sqrt(var / n);
  } else {
    double v = 0;
    for (std::size_t i = 0; i < st.size(); ++i) {
      e.value += w[i] * st[i].mean();
      v += w[i] * w[i] * st[i].var() / static_cast<double>(st[i].count);
      e.clipped += st[i].clipped;
    }
    e.stderr_ = std::sqrt(v);
  }
  return e;
}

}  // namespace detail

/// Two-level estimate of -E_g E_x log(dg mu/d mu)(x). An atomic m with at most
/// n_g elements is enumerated (strata weighted by m); otherwise n_g elements are
/// drawn. Each g gets n_x points of mu. One partition per g.
inline EntropyEstimate entropy_monte_carlo(const SystemHandle& sys, const GroupMeasure& m, const Measure& mu,
                                           const EntropyBudget& b = {}) {
  if (b.n_g < 1 || b.n_x < 1) fail(ErrorKind::InvalidArgument, "entropy budgets must be positive");
  if (auto gr = std::get_if<GridMeasure>(&mu)) detail::check_positive_density(*gr);
  auto am = std::get_if<AtomicGroupMeasure>(&m);
  if (auto a = std::get_if<AtomicMeasure>(&mu)) {
    if (am) return entropy_exact(sys, *am, *a);
    // Sampled g, exact sum over the atoms for each.
    std::vector<detail::Stratum> strata(static_cast<std::size_t>(b.n_g));
    for (int i = 0; i < b.n_g; ++i) {
      Rng rng(b.seed, static_cast<std::uint64_t>(i), 0xe1);
      AtomicGroupMeasure one{{sample_group(m, rng)}, {1.0}};
      auto e = entropy_exact(sys, one, *a);
      strata[i].sum = e.value;
      strata[i].sumsq = e.value * e.value;
      strata[i].count = 1;
      strata[i].clipped = e.clipped;
    }
    return detail::combine_strata(strata, {}, true, 1);
  }
  bool enumerate = am && static_cast<int>(am->elements.size()) <= b.n_g;
  std::vector<GroupElement> gs;
  std::vector<double> ws;
  if (enumerate) {
    gs = am->elements;
    ws = am->weights;
  } else {
    for (int i = 0; i < b.n_g; ++i) {
      Rng rng(b.seed, static_cast<std::uint64_t>(i), 0xe1);
      gs.push_back(sample_group(m, rng));
      ws.push_back(1.0 / b.n_g);
    }
  }
  auto strata = parallel_map<detail::Stratum>(
      gs.size(),
      [&](std::size_t i) {
        Rng rng(b.seed, i, 0xe2);
        detail::Stratum s;
        std::size_t len = detail::needed_word_length(mu, gs[i]);
        for (int k = 0; k < b.n_x; ++k) {
          SpacePoint x = sample_point(mu, rng, len);
          double v = -detail::log_rn(sys, gs[i], mu, x, s.clipped);
          s.sum += v;
          s.sumsq += v * v;
          ++s.count;
        }
        return s;
      },
      b.threads);
  return detail::combine_strata(strata, ws, !enumerate, static_cast<std::size_t>(b.n_x));
}

/// Monte Carlo on a product of two cylinder measures with F2 x F2 acting factorwise.
inline EntropyEstimate entropy_monte_carlo_product(const AtomicGroupMeasure& m, const CylinderMeasure& mu1,
                                                   const CylinderMeasure& mu2, const EntropyBudget& b = {}) {
  if (b.n_x < 1) fail(ErrorKind::InvalidArgument, "entropy budgets must be positive");
  auto bs = SystemHandle::make(SystemId::BoundaryF2);
  auto strata = parallel_map<detail::Stratum>(
      m.elements.size(),
      [&](std::size_t i) {
        Rng rng(b.seed, i, 0xe3);
        const auto& p = std::get<WordPair>(m.elements[i]);
        detail::Stratum s;
        std::size_t len = std::max<std::size_t>(40, std::max(p.first.size(), p.second.size()) +
                                                        static_cast<std::size_t>(std::max(mu1.depth, mu2.depth)) + 1);
        for (int k = 0; k < b.n_x; ++k) {
          SpacePoint x1{WordPrefix{detail::sample_cylinder(mu1, len, rng)}};
          SpacePoint x2{WordPrefix{detail::sample_cylinder(mu2, len, rng)}};
          double v = -detail::log_rn(bs, p.first, mu1, x1, s.clipped) - detail::log_rn(bs, p.second, mu2, x2, s.clipped);
          s.sum += v;
          s.sumsq += v * v;
          ++s.count;
        }
        return s;
      },
      b.threads);
  return detail::combine_strata(strata, m.weights, false, static_cast<std::size_t>(b.n_x));
}

/// Exact where the representation allows it (atomic m with words on cylinder,
/// fibered or atomic measures), Monte Carlo otherwise.
inline EntropyEstimate entropy(const SystemHandle& sys, const GroupMeasure& m, const Measure& mu,
                               const EntropyBudget& b = {}) {
  if (auto am = std::get_if<AtomicGroupMeasure>(&m)) {
    bool words = std::all_of(am->elements.begin(), am->elements.end(),
                             [](const GroupElement& g) { return std::holds_alternative<FreeWord>(g); });
    if (auto a = std::get_if<AtomicMeasure>(&mu)) return entropy_exact(sys, *am, *a);
    if (words) {
      if (auto c = std::get_if<CylinderMeasure>(&mu); c && c->is_exact()) return entropy_exact(*am, *c);
      if (auto f = std::get_if<FiberedMeasure>(&mu)) return entropy_exact(sys, *am, *f);
    }
  }
  return entropy_monte_carlo(sys, m, mu, b);
}

struct EntropyGap {
  EntropyEstimate hx, hy;
  double combined_stderr = 0;
  bool gap = false;  // |hX - hY| > 3 combined stderr
};

/// Entropies of X and of its factor Y = pi X. nu must be the image of mu.
inline EntropyGap entropy_factor_gap(const SystemHandle& sys_x, const Measure& mu, const SystemHandle& sys_y,
                                     const Measure& nu, std::string_view factor, const GroupMeasure& m,
                                     const EntropyBudget& b = {}, double marginal_tol = 1e-9) {
  auto target = factor_target(sys_x, factor);
  if (target.name() != sys_y.name())
    fail(ErrorKind::IncompatibleSystem, "factor '" + std::string(factor) + "' lands in " + target.name());
  auto image = factor_image(sys_x, factor, mu);
  double d = weak_star_distance(image, nu);
  if (d > marginal_tol)
    fail(ErrorKind::MarginalMismatch, "nu differs from the image of mu by " + std::to_string(d));
  EntropyGap g;
  g.hx = entropy(sys_x, m, mu, b);
  EntropyBudget by = b;
  by.seed = b.seed + 1;
  if (sys_y.id == SystemId::Trivial) g.hy = EntropyEstimate{0.0, 0.0, "exact", 0, 1, 0};
  else g.hy = entropy(sys_y, m, nu, by);
  g.combined_stderr = std::hypot(g.hx.stderr_, g.hy.stderr_);
  g.gap = std::fabs(g.hx.value - g.hy.value) > 3 * g.combined_stderr + 1e-12;
  return g;
}

}  // namespace statwalk
