#pragma once

#include "statwalk/structure.hpp"

namespace statwalk {

// ---------------------------------------------------------------------------
// Sets.

/// Finite subset of {1..N}, sorted.
struct IntSubset {
  int N = 0;
  std::vector<int> elems;

  static IntSubset make(int N, std::vector<int> e) {
    std::sort(e.begin(), e.end());
    e.erase(std::unique(e.begin(), e.end()), e.end());
    if (!e.empty() && (e.front() < 1 || e.back() > N))
      fail(ErrorKind::OutOfRange, "subset elements must lie in 1.." + std::to_string(N));
    return {N, std::move(e)};
  }
  bool contains(int x) const { return std::binary_search(elems.begin(), elems.end(), x); }
};

/// Open arcs (lo, lo + length) on P1 = [0, pi), disjoint and sorted after
/// normalization; an arc may wrap past pi.
struct ArcUnion {
  std::vector<std::pair<double, double>> arcs;

  static ArcUnion make(const std::vector<std::pair<double, double>>& raw) {
    std::vector<std::pair<double, double>> iv;  // [a, b) inside [0, pi]
    for (auto [lo, len] : raw) {
      if (!(len > 0)) continue;
      if (len >= kPi) return full();
      double a = wrap(lo, kPi), b = a + len;
      if (b <= kPi) {
        iv.emplace_back(a, b);
      } else {
        iv.emplace_back(a, kPi);
        iv.emplace_back(0.0, b - kPi);
      }
    }
    std::sort(iv.begin(), iv.end());
    std::vector<std::pair<double, double>> merged;
    for (auto [a, b] : iv) {
      if (!merged.empty() && a <= merged.back().second) merged.back().second = std::max(merged.back().second, b);
      else merged.emplace_back(a, b);
    }
    if (merged.size() == 1 && merged[0].first <= 0 && merged[0].second >= kPi) return full();
    if (merged.size() > 1 && merged.front().first <= 0 && merged.back().second >= kPi) {
      merged.back().second = kPi + merged.front().second;
      merged.erase(merged.begin());
    }
    ArcUnion u;
    for (auto [a, b] : merged) u.arcs.emplace_back(a, b - a);
    return u;
  }
  static ArcUnion arc(double lo, double len) { return make({{lo, len}}); }
  static ArcUnion full() { return ArcUnion{{{0.0, kPi}}}; }

  bool is_full() const { return arcs.size() == 1 && arcs[0].second >= kPi; }

  /// Lebesgue measure normalized to total mass 1.
  double measure() const {
    double s = 0;
    for (auto [lo, len] : arcs) s += len;
    return s / kPi;
  }
  bool contains(double th) const {
    if (is_full()) return true;
    for (auto [lo, len] : arcs) {
      double u = wrap(th - lo, kPi);
      if (u > 0 && u < len) return true;
    }
    return false;
  }
  /// Distance into A: to the nearest endpoint for interior points (pi/2 on
  /// the full line), 0 outside.
  double depth(double th) const {
    if (is_full()) return kPi / 2;
    for (auto [lo, len] : arcs) {
      double u = wrap(th - lo, kPi);
      if (u > 0 && u < len) return std::min(u, len - u);
    }
    return 0.0;
  }
  /// Distance from th to the closure of A.
  double distance(double th) const {
    if (contains(th)) return 0.0;
    double best = kPi;
    for (auto [lo, len] : arcs)
      best = std::min({best, circle_gap(th, lo, kPi), circle_gap(th, lo + len, kPi)});
    return best;
  }
  double largest_center() const {
    if (arcs.empty()) fail(ErrorKind::ZeroMeasure, "empty arc union");
    auto it = std::max_element(arcs.begin(), arcs.end(), [](auto& x, auto& y) { return x.second < y.second; });
    return wrap(it->first + it->second / 2, kPi);
  }
  SetDescriptor descriptor() const {
    SetDescriptor d;
    for (auto [lo, len] : arcs) d.add(SetDescriptor::arc(lo, len));
    return d;
  }
};

/// L = {g : g x0 in A} for proj_line; L_eps is its eps-neighborhood.
struct GroupSetL {
  SystemHandle sys = SystemHandle::make(SystemId::ProjLine);
  ArcUnion A;
  double x0 = 0;
  double eps = 0.05;

  bool contains(const Mat2& g) const { return A.contains(detail::proj_act(g, x0)); }
};

using SetSpec = std::variant<IntSubset, ArcUnion, GroupSetL>;

// ---------------------------------------------------------------------------
// Finite Szemeredi.

/// First (s, d) in (s, then d) order with s, s+d, ..., s+(k-1)d in S.
inline std::optional<std::pair<int, int>> find_ap(const IntSubset& S, int k) {
  if (k < 1) fail(ErrorKind::InvalidArgument, "k must be >= 1");
  if (S.elems.empty()) return std::nullopt;
  if (k == 1) return std::pair{S.elems.front(), 0};
  int top = S.elems.back();
  for (int s : S.elems)
    for (int d = 1; s + (k - 1) * d <= top; ++d) {
      bool ok = true;
      for (int j = 1; j < k && ok; ++j) ok = S.contains(s + j * d);
      if (ok) return std::pair{s, d};
    }
  return std::nullopt;
}

namespace detail {

/// Is there a k-AP-free subset of {0..N-1} of size `target` containing N-1?
/// r[L] must hold the maximum AP-free size on L points for L < N.
inline bool ap_free_with_top(int N, int k, int target, const std::vector<int>& r, int threads) {
  if (target <= 1) return true;
  int top = N - 1;
  int P = std::min(top, 10);
  auto adds_ap = [&](const std::vector<char>& chosen, int q) {
    for (int d = 1; q - (k - 2) * d >= 0; ++d) {
      bool below = true;
      for (int j = 1; j <= k - 1 && below; ++j) below = q - j * d >= 0 && chosen[q - j * d];
      if (below) return true;
      if (q + d == top) {
        bool with_top = true;
        for (int j = 1; j <= k - 2 && with_top; ++j) with_top = q - j * d >= 0 && chosen[q - j * d];
        if (with_top) return true;
      }
    }
    return false;
  };
  std::function<bool(std::vector<char>&, int, int)> extend = [&](std::vector<char>& chosen, int p, int count) {
    if (count >= target) return true;
    if (p >= top) return false;
    if (count + r[top - p] < target) return false;
    if (!adds_ap(chosen, p)) {
      chosen[p] = 1;
      bool found = extend(chosen, p + 1, count + 1);
      chosen[p] = 0;
      if (found) return true;
    }
    return extend(chosen, p + 1, count);
  };
  auto hits = parallel_map<char>(
      std::size_t{1} << P,
      [&](std::size_t mask) -> char {
        std::vector<char> chosen(N, 0);
        chosen[top] = 1;
        int count = 1;
        for (int p = 0; p < P; ++p) {
          if (!(mask >> p & 1)) continue;
          if (adds_ap(chosen, p)) return 0;
          chosen[p] = 1;
          ++count;
        }
        return extend(chosen, P, count) ? 1 : 0;
      },
      threads);
  return std::any_of(hits.begin(), hits.end(), [](char c) { return c != 0; });
}

}  // namespace detail

/// r[N] = largest subset of {1..N} without a k-term progression, N = 0..n_max.
inline std::vector<int> ap_free_sizes(int k, int n_max, int threads = 0) {
  std::vector<int> r(n_max + 1, 0);
  for (int N = 1; N <= n_max; ++N)
    r[N] = r[N - 1] + (detail::ap_free_with_top(N, k, r[N - 1] + 1, r, threads) ? 1 : 0);
  return r;
}

struct SzemerediNumber {
  std::optional<int> N;  // empty: unresolved at n_max
  int n_max = 0;
};

/// Smallest N <= n_max such that every subset of {1..N} with at least
/// ceil(delta N) elements holds a k-term progression.
inline SzemerediNumber szemeredi_number(int k, double delta, int n_max = 40, int threads = 0) {
  if (k < 3) fail(ErrorKind::InvalidArgument, "k must be >= 3");
  if (!(delta > 0 && delta <= 1)) fail(ErrorKind::InvalidArgument, "delta must lie in (0, 1]");
  if (n_max < 1 || n_max > 40) fail(ErrorKind::InfeasibleBudget, "n_max must lie in 1..40 for the exhaustive search");
  auto r = ap_free_sizes(k, n_max, threads);
  SzemerediNumber out;
  out.n_max = n_max;
  for (int N = 1; N <= n_max; ++N) {
    int need = static_cast<int>(std::ceil(delta * N - 1e-12));
    if (r[N] < need) {
      out.N = N;
      break;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Parabolic intersections on P1.

inline bool is_parabolic(const Mat2& g) {
  double f = g.frobenius();
  return std::fabs(std::fabs(g.trace()) - 2.0) <= 1e-8 * (1.0 + f * f);
}

namespace detail {

/// Cells theta_i = (i + 1/2) pi / grid with maps[j](theta_i) in A for every j;
/// mass under mu (Lebesgue when mu is null).
struct CellSet {
  std::vector<char> in;
  double mass = 0;

  /// Center of the longest circular run of cells.
  double center() const {
    int n = static_cast<int>(in.size());
    int best = 0, best_end = -1, run = 0;
    for (int i = 0; i < 2 * n; ++i) {
      run = in[i % n] ? run + 1 : 0;
      run = std::min(run, n);
      if (run > best) {
        best = run;
        best_end = i;
      }
    }
    if (best == 0) fail(ErrorKind::ZeroMeasure, "empty intersection");
    double mid = best_end - (best - 1) / 2.0;
    return wrap((mid + 0.5) * kPi / n, kPi);
  }
};

/// maps[j] = list of matrices applied in order (each a power of one inverse).
inline CellSet intersection_cells(const ArcUnion& A, const Mat2& step, const std::vector<int>& powers, int grid,
                                  const GridMeasure* mu = nullptr) {
  CellSet c;
  c.in.assign(grid, 0);
  int top = powers.empty() ? 0 : *std::max_element(powers.begin(), powers.end());
  std::vector<char> want(top + 1, 0);
  for (int p : powers) want[p] = 1;
  double h = kPi / grid;
  for (int i = 0; i < grid; ++i) {
    double th = (i + 0.5) * h;
    bool ok = true;
    for (int j = 0; j <= top && ok; ++j) {
      if (want[j]) ok = A.contains(th);
      if (j < top) th = proj_act(step, th);
    }
    if (!ok) continue;
    c.in[i] = 1;
    c.mass += mu ? grid_density(*mu, 1, (i + 0.5) * h) * h : 1.0 / grid;
  }
  return c;
}

}  // namespace detail

struct IntersectionEstimate {
  double estimate = 0;  // at grid
  double refined = 0;   // at 4 grid
  int grid = 0;
  bool grid_sensitive = false;
};

/// lambda(B cap gB cap ... cap g^N B) with lambda normalized Lebesgue on P1.
inline IntersectionEstimate density_point_intersection(const ArcUnion& B, const Mat2& g, int N, int grid = 4096) {
  if (!is_parabolic(g)) fail(ErrorKind::NotParabolic, "g has trace " + std::to_string(g.trace()));
  if (N < 0) fail(ErrorKind::InvalidArgument, "N must be >= 0");
  if (grid < 4096) fail(ErrorKind::InvalidArgument, "grid must be at least 2^12");
  IntersectionEstimate e;
  e.grid = grid;
  if (N == 0) {
    e.estimate = e.refined = B.measure();
    return e;
  }
  std::vector<int> powers(N + 1);
  std::iota(powers.begin(), powers.end(), 0);
  Mat2 ginv = g.inverse();
  e.estimate = detail::intersection_cells(B, ginv, powers, grid).mass;
  e.refined = detail::intersection_cells(B, ginv, powers, 4 * grid).mass;
  e.grid_sensitive =
      (e.estimate > 0) != (e.refined > 0) || std::fabs(e.estimate - e.refined) > 0.5 * std::max(e.estimate, e.refined);
  return e;
}

// ---------------------------------------------------------------------------
// Correspondence principle at desk scale.

struct CorrespondenceBuild {
  SystemHandle sys;
  ArcUnion A;
  Measure mu;
  double mu_A = 0;
  double stationarity = 0;
  bool converged = false;
};

struct CorrespondenceOptions {
  int grid = 4096;
  double tol = 0.02;
  int max_iter = 50;
  std::uint64_t seed = 0;
};

inline CorrespondenceBuild correspondence_build(const GroupSetL& L, const CorrespondenceOptions& opt = {}) {
  if (L.sys.id != SystemId::ProjLine) fail(ErrorKind::IncompatibleSystem, "group sets are built on proj_line");
  CorrespondenceBuild b;
  b.sys = L.sys;
  b.A = L.A;
  StationaryOptions so;
  so.grid = opt.grid;
  so.seed = opt.seed;
  auto r = solve_fixed_point(L.sys, SL2Sampler{}, lebesgue_grid(GridSpace::Proj, opt.grid), opt.tol, opt.max_iter, so);
  b.mu = r.measure;
  b.stationarity = r.residual;
  b.converged = r.converged;
  b.mu_A = set_mass(b.mu, L.A.descriptor());
  if (!(b.mu_A > 0)) fail(ErrorKind::ZeroMeasure, "mu(A) = 0");
  return b;
}

/// Membership margin in L_eps (eps - distance of g x0 to A, so eps inside A)
/// and depth of g x0 into A.
struct Margin {
  double margin = 0;
  double depth = 0;
};

inline Margin membership_margin(const GroupSetL& L, double point) {
  return {L.eps - L.A.distance(point), L.A.depth(point)};
}

struct CorrespondenceWitness {
  Mat2 a;
  double intersection = 0;  // mu(g_1^-1 A cap ... cap g_k^-1 A)
  std::vector<Margin> margins;
};

/// If mu(g_1^-1 A cap ... cap g_k^-1 A) > 0 at grid resolution, a rotation a
/// carrying x0 to the middle of the intersection gives g_i a in L_eps.
inline std::optional<CorrespondenceWitness> correspondence_witness(const GroupSetL& L, const std::vector<Mat2>& gs,
                                                                   int grid = 4096) {
  CorrespondenceWitness w;
  std::vector<char> in(grid, 1);
  double h = kPi / grid;
  for (int i = 0; i < grid; ++i) {
    double th = (i + 0.5) * h;
    for (const auto& g : gs)
      if (!L.A.contains(detail::proj_act(g, th))) {
        in[i] = 0;
        break;
      }
  }
  detail::CellSet c;
  c.in = in;
  for (char v : in) c.mass += v ? 1.0 / grid : 0.0;
  w.intersection = c.mass;
  if (c.mass <= 0) return std::nullopt;
  double x = c.center();
  w.a = Mat2::rotation(x - L.x0);
  for (const auto& g : gs) w.margins.push_back(membership_margin(L, detail::proj_act(g * w.a, L.x0)));
  return w;
}

// ---------------------------------------------------------------------------
// The SL(2,R) pipeline.

struct RecurrenceWitness {
  Mat2 a0, h;
  int k = 0;
  int s = 0, d = 0;
  double eps = 0, x0 = 0;
  std::vector<Margin> margins;  // for h^j a0 x0, j = 0..k
  double h_norm = 0, a0_norm = 0, q_norm = 0;
  std::uint64_t seed = 0;
};

struct SzemerediBudgets {
  int grid = 4096;
  int n_max = 40;
  std::size_t cover_trials = 64;
  std::size_t cover_n = 100;
  double min_mass = 0;  // smallest intersection mass accepted as positive; 0: one grid cell
  std::uint64_t seed = 0;
};

struct SzemerediStage {
  std::string name;
  std::string quantity;
  double value = 0;
};

struct SzemerediResult {
  bool success = false;
  std::optional<RecurrenceWitness> witness;
  std::vector<SzemerediStage> stages;  // reached in order; the last one failed when !success
  std::string failed_stage;
};

/// Stationary mu, standard cover (fiber mass delta on B = A), density point y0
/// of B, parabolic g fixing y0 with g^n outside the norm ball, finite
/// Szemeredi on the indices, then a0 = g^-s a and h = g^-d.
inline SzemerediResult szemeredi_sl2(const GroupSetL& L_in, int k, double eps, double q_norm,
                                     const SzemerediBudgets& b = {}) {
  if (k < 1 || k > 4) fail(ErrorKind::InfeasibleBudget, "k must lie in 1..4");
  if (!(eps > 0)) fail(ErrorKind::InfeasibleBudget, "eps must be positive");
  if (b.grid < 4096) fail(ErrorKind::InfeasibleBudget, "grid must be at least 2^12");
  if (b.n_max < 1 || b.n_max > 40) fail(ErrorKind::InfeasibleBudget, "n_max must lie in 1..40");
  if (b.cover_trials < 1) fail(ErrorKind::InfeasibleBudget, "cover needs at least one trial");
  if (!(q_norm >= 0)) fail(ErrorKind::InfeasibleBudget, "q_norm must be >= 0");
  GroupSetL L = L_in;
  L.eps = eps;
  double floor_mass = b.min_mass > 0 ? b.min_mass : 1.0 / b.grid;
  SzemerediResult res;
  auto stage = [&](std::string name, std::string q, double v) { res.stages.push_back({std::move(name), std::move(q), v}); };
  auto failed = [&]() {
    res.failed_stage = res.stages.back().name;
    return res;
  };

  CorrespondenceOptions co;
  co.grid = b.grid;
  co.seed = b.seed;
  auto corr = correspondence_build(L, co);
  stage("correspondence", "mu(A)", corr.mu_A);

  auto cover = standard_cover(L.sys, corr.mu, SL2Sampler{}, b.cover_trials, b.cover_n, 1, b.seed);
  double score = 0;
  for (const auto& f : cover.fibers) score += point_mass_score(f) / static_cast<double>(cover.fibers.size());
  stage("cover", "mean fiber point-mass score", score);
  if (score <= 0.99) return failed();
  // Point-mass fibers: mu_y(A_y) = 1 for every y in B = A.
  const double delta = 1.0;

  double y0 = L.A.largest_center();
  stage("density_point", "y0", y0);

  double s_par = std::sqrt(std::max(q_norm * q_norm - 2.0, 0.0)) + 1.0;
  Mat2 g = parabolic_fixing(y0, s_par);
  Mat2 ginv = g.inverse();
  stage("parabolic", "|g|_F", g.frobenius());

  int len = k + 1;
  int N = len;
  if (len >= 3) {
    auto sz = szemeredi_number(len, delta, b.n_max);
    if (!sz.N) {
      stage("szemeredi_number", "N(k+1, delta) unresolved at n_max", b.n_max);
      return failed();
    }
    N = *sz.N;
  }
  stage("szemeredi_number", "N(k+1, delta)", N);

  std::vector<int> all(N + 1);
  std::iota(all.begin(), all.end(), 0);
  auto B0 = detail::intersection_cells(L.A, ginv, all, b.grid);
  auto B0_fine = detail::intersection_cells(L.A, ginv, all, 4 * b.grid);
  stage("intersection", "lambda(B cap gB cap ... cap g^N B)", std::min(B0.mass, B0_fine.mass));
  if (B0.mass < floor_mass || B0_fine.mass < floor_mass) return failed();

  double y = B0.center();
  std::vector<int> idx;
  double th = y;
  for (int i = 1; i <= N; ++i) {
    th = detail::proj_act(ginv, th);  // g^-i y in B  <=>  y in g^i B
    if (L.A.contains(th)) idx.push_back(i);
  }
  auto ap = find_ap(IntSubset::make(N, idx), len);
  stage("progression", "indices with fiber mass >= delta", static_cast<double>(idx.size()));
  if (!ap) return failed();
  auto [s, d] = *ap;

  std::vector<int> powers;
  for (int j = 0; j <= k; ++j) powers.push_back(s + j * d);
  auto I = detail::intersection_cells(L.A, ginv, powers, b.grid, &std::get<GridMeasure>(corr.mu));
  auto I_fine = detail::intersection_cells(L.A, ginv, powers, 4 * b.grid);
  stage("recurrence", "mu(g^s A cap g^(s+d) A cap ... cap g^(s+kd) A)", std::min(I.mass, I_fine.mass));
  if (I.mass < floor_mass || I_fine.mass < floor_mass) return failed();

  // x in the intersection, a x0 = x, then g^-(s+jd) a in L.
  double x = I.center();
  Mat2 a = Mat2::rotation(x - L.x0);
  auto power = [&](int e) {
    Mat2 p;
    for (int i = 0; i < e; ++i) p = p * ginv;
    return p;
  };
  RecurrenceWitness w;
  w.a0 = power(s) * a;
  w.h = power(d);
  w.k = k;
  w.s = s;
  w.d = d;
  w.eps = eps;
  w.x0 = L.x0;
  w.q_norm = q_norm;
  w.seed = b.seed;
  w.h_norm = w.h.frobenius();
  w.a0_norm = w.a0.frobenius();
  Mat2 cur = w.a0;
  bool ok = w.h_norm > q_norm;
  for (int j = 0; j <= k; ++j) {
    w.margins.push_back(membership_margin(L, detail::proj_act(cur, L.x0)));
    ok = ok && w.margins.back().margin > 0;
    cur = w.h * cur;
  }
  double worst = eps;
  for (const auto& m : w.margins) worst = std::min(worst, m.margin);
  stage("witness", "smallest membership margin", worst);
  if (!ok) return failed();
  res.success = true;
  res.witness = w;
  return res;
}

/// Margins recomputed from the row-major entries (independent of the Cartan
/// form used by the pipeline).
inline std::vector<Margin> verify_witness(const GroupSetL& L, const RecurrenceWitness& w) {
  GroupSetL l = L;
  l.eps = w.eps;
  auto a = w.a0.entries(), h = w.h.entries();
  double vx = std::cos(w.x0), vy = std::sin(w.x0);
  auto apply = [](const std::array<double, 4>& m, double& x, double& y) {
    double nx = m[0] * x + m[1] * y, ny = m[2] * x + m[3] * y;
    double r = std::hypot(nx, ny);
    x = nx / r;
    y = ny / r;
  };
  apply(a, vx, vy);
  std::vector<Margin> out;
  for (int j = 0; j <= w.k; ++j) {
    out.push_back(membership_margin(l, wrap(std::atan2(vy, vx), kPi)));
    apply(h, vx, vy);
  }
  return out;
}

inline Json to_json(const RecurrenceWitness& w) {
  Json m = Json::array(), dp = Json::array();
  for (const auto& x : w.margins) {
    m.push_back(x.margin);
    dp.push_back(x.depth);
  }
  return {{"a0", to_json(w.a0)}, {"h", to_json(w.h)}, {"k", w.k},           {"s", w.s},
          {"d", w.d},            {"eps", w.eps},      {"x0", w.x0},         {"margins", m},
          {"depths", dp},        {"h_norm", w.h_norm}, {"a0_norm", w.a0_norm}, {"q_norm", w.q_norm},
          {"seed", w.seed}};
}

inline Json to_json(const SzemerediResult& r) {
  Json st = Json::array();
  for (const auto& s : r.stages) st.push_back({{"stage", s.name}, {"quantity", s.quantity}, {"value", s.value}});
  Json j = {{"success", r.success}, {"stages", st}};
  if (r.success) j["witness"] = to_json(*r.witness);
  else j["failed_stage"] = r.failed_stage;
  return j;
}

}  // namespace statwalk
