#include <CLI11.hpp>
#include <toml.hpp>

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "statwalk/statwalk.hpp"

#ifndef STATWALK_VERSION
#define STATWALK_VERSION "0.0.0"
#endif
#ifndef STATWALK_GIT
#define STATWALK_GIT "unknown"
#endif

using namespace statwalk;
namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInvalid = 2;
constexpr int kExitBudget = 3;

const std::vector<std::string> kCommands = {"stationary", "walk",     "entropy",   "join", "classify",
                                            "quasifactor", "cover",   "stiffness", "sat",  "szemeredi"};

// ---------------------------------------------------------------------------
// Configuration schema. Every default lives here and nowhere else.

using Value = std::variant<std::int64_t, double, bool, std::string>;

struct Key {
  std::string section, name;
  Value def;
  std::string help;
};

const std::vector<Key>& schema() {
  static const std::vector<Key> keys = {
      {"system", "name", std::string("proj_line"), "catalog system"},
      {"system", "other", std::string("two_point"), "second system for join"},
      {"system", "factor", std::string(""), "factor map for classify; empty: maximal proximal factor"},
      {"system", "init", std::string("catalog"), "stationary start: catalog | lebesgue | point"},
      {"system", "test", std::string("arc"), "test function for sat"},
      {"system", "set", std::string("arc"), "sat set: arc | point0 | cyl:<word>"},
      {"system", "arc", 0.6, "arc length as a fraction of pi"},
      {"system", "arc_lo", 0.2, "left end of the arc"},
      {"system", "x0", 0.3, "base point on P1 for szemeredi"},
      {"system", "k", std::int64_t{2}, "progression length minus one"},
      {"system", "eps", 0.05, "neighborhood radius of L"},
      {"system", "q_norm", 5.0, "Frobenius radius of the excluded ball"},
      {"system", "exact", false, "entropy by exact cylinder ratios"},
      {"walk", "measure", std::string("catalog"), "step law: catalog | rotations"},
      {"walk", "seed", std::int64_t{0}, "master seed (STATWALK_SEED when unset)"},
      {"walk", "trials", std::int64_t{200}, "trajectories"},
      {"walk", "steps", std::int64_t{100}, "walk length n"},
      {"walk", "depth", std::int64_t{5}, "cylinder depth on symbolic spaces"},
      {"walk", "delta", std::int64_t{10}, "lag of the convergence diagnostic"},
      {"walk", "threads", std::int64_t{0}, "worker threads; 0: hardware concurrency"},
      {"budgets", "grid", std::int64_t{4096}, "circle bins"},
      {"budgets", "tol", 5e-3, "stationary solve tolerance"},
      {"budgets", "max_iter", std::int64_t{4000}, "stationary solve iterations"},
      {"budgets", "samples", std::int64_t{256}, "group draws per convolution for samplers"},
      {"budgets", "n_g", std::int64_t{4}, "entropy group draws"},
      {"budgets", "n_x", std::int64_t{10000}, "entropy space draws"},
      {"budgets", "atoms", std::int64_t{64}, "points per conditional measure for join and cover"},
      {"budgets", "inits", std::int64_t{20}, "stiffness initial measures"},
      {"budgets", "stiff_threshold", 0.02, "stiffness invariance threshold"},
      {"budgets", "threshold", 0.9, "point-mass score counted as proximal"},
      {"budgets", "candidates", std::int64_t{1000}, "sat and contractibility search size"},
      {"budgets", "n_max", std::int64_t{40}, "exhaustive Szemeredi range"},
      {"budgets", "min_mass", 0.0, "smallest intersection mass accepted; 0: one grid cell"},
  };
  return keys;
}

std::string type_name(const Value& v) {
  return std::visit(
      [](const auto& x) -> std::string {
        using T = std::decay_t<decltype(x)>;
        if constexpr (std::is_same_v<T, std::int64_t>) return "integer";
        else if constexpr (std::is_same_v<T, double>) return "float";
        else if constexpr (std::is_same_v<T, bool>) return "boolean";
        else return "string";
      },
      v);
}

std::string toml_literal(const Value& v) {
  return std::visit(
      [](const auto& x) -> std::string {
        using T = std::decay_t<decltype(x)>;
        if constexpr (std::is_same_v<T, std::int64_t>) return std::to_string(x);
        else if constexpr (std::is_same_v<T, double>) {
          std::ostringstream os;
          os << x;
          auto s = os.str();
          if (s.find_first_of(".e") == std::string::npos) s += ".0";
          return s;
        } else if constexpr (std::is_same_v<T, bool>) return x ? "true" : "false";
        else return "\"" + x + "\"";
      },
      v);
}

std::string dump_defaults() {
  std::ostringstream os;
  std::string section;
  for (const auto& k : schema()) {
    if (k.section != section) {
      if (!section.empty()) os << "\n";
      section = k.section;
      os << "[" << section << "]\n";
    }
    os << k.name << " = " << toml_literal(k.def) << "  # " << k.help << "\n";
  }
  return os.str();
}

struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Config {
  std::map<std::string, Value> values;
  std::map<std::string, std::string> where;  // "file:line:col" or "--flag"
  std::set<std::string> set_by_user;

  template <class T>
  T get(const std::string& key) const {
    return std::get<T>(values.at(key));
  }
  std::string anchor(const std::string& key) const {
    auto it = where.find(key);
    return it == where.end() ? "default " + key : it->second;
  }
  void set(const std::string& key, Value v, std::string origin) {
    values[key] = std::move(v);
    where[key] = std::move(origin);
    set_by_user.insert(key);
  }
};

Config defaults() {
  Config c;
  for (const auto& k : schema()) c.values[k.section + "." + k.name] = k.def;
  return c;
}

const Key* find_key(const std::string& section, const std::string& name) {
  for (const auto& k : schema())
    if (k.section == section && k.name == name) return &k;
  return nullptr;
}

std::string at(const std::string& file, const toml::source_region& r) {
  return file + ":" + std::to_string(r.begin.line) + ":" + std::to_string(r.begin.column);
}

void load_toml(Config& c, const std::string& path) {
  toml::table tbl;
  try {
    tbl = toml::parse_file(path);
  } catch (const toml::parse_error& e) {
    throw ValidationError(at(path, e.source()) + ": " + std::string(e.description()));
  }
  for (auto&& [sec, node] : tbl) {
    std::string section(sec.str());
    auto* t = node.as_table();
    if (!t) throw ValidationError(at(path, node.source()) + ": '" + section + "' must be a table");
    if (section != "system" && section != "walk" && section != "budgets")
      throw ValidationError(at(path, node.source()) + ": unknown section [" + section + "]");
    for (auto&& [name, v] : *t) {
      std::string key(name.str());
      const Key* k = find_key(section, key);
      std::string loc = at(path, v.source());
      if (!k) throw ValidationError(loc + ": unknown key '" + key + "' in [" + section + "]");
      Value val;
      if (std::holds_alternative<std::int64_t>(k->def) && v.is_integer()) val = *v.value<std::int64_t>();
      else if (std::holds_alternative<double>(k->def) && (v.is_floating_point() || v.is_integer()))
        val = *v.value<double>();
      else if (std::holds_alternative<bool>(k->def) && v.is_boolean()) val = *v.value<bool>();
      else if (std::holds_alternative<std::string>(k->def) && v.is_string()) val = *v.value<std::string>();
      else throw ValidationError(loc + ": " + section + "." + key + " must be " + type_name(k->def));
      c.set(section + "." + key, val, loc);
    }
  }
}

void require(bool ok, const Config& c, const std::string& key, const std::string& what) {
  if (!ok) throw ValidationError(c.anchor(key) + ": " + key + " " + what);
}

void validate(const Config& c, const std::string& cmd) {
  auto i = [&](const char* k) { return c.get<std::int64_t>(k); };
  auto d = [&](const char* k) { return c.get<double>(k); };
  auto s = [&](const char* k) { return c.get<std::string>(k); };
  auto system_ok = [&](const char* k) {
    try {
      auto id = system_from_string(s(k));
      require(id != SystemId::Product, c, k, "must name a single catalog system");
    } catch (const Error&) {
      require(false, c, k, "is not a catalog system: '" + s(k) + "'");
    }
  };
  system_ok("system.name");
  if (cmd == "join") system_ok("system.other");
  auto init = s("system.init");
  require(init == "catalog" || init == "lebesgue" || init == "point", c, "system.init",
          "must be catalog, lebesgue or point");
  auto law = s("walk.measure");
  require(law == "catalog" || law == "rotations", c, "walk.measure", "must be catalog or rotations");
  require(i("walk.seed") >= 0, c, "walk.seed", "must be >= 0");
  require(i("walk.trials") >= 2, c, "walk.trials", "must be >= 2");
  require(i("walk.steps") >= 1, c, "walk.steps", "must be >= 1");
  require(i("walk.depth") >= 2 && i("walk.depth") <= 8, c, "walk.depth", "must lie in 2..8");
  require(i("walk.delta") >= 1, c, "walk.delta", "must be >= 1");
  require(i("walk.threads") >= 0, c, "walk.threads", "must be >= 0");
  require(i("budgets.grid") >= 64 && i("budgets.grid") <= (1 << 20), c, "budgets.grid", "must lie in 64..2^20");
  require(d("budgets.tol") > 0, c, "budgets.tol", "must be positive");
  require(i("budgets.max_iter") >= 1, c, "budgets.max_iter", "must be >= 1");
  require(i("budgets.samples") >= 1, c, "budgets.samples", "must be >= 1");
  require(i("budgets.n_g") >= 1, c, "budgets.n_g", "must be >= 1");
  require(i("budgets.n_x") >= 1, c, "budgets.n_x", "must be >= 1");
  require(i("budgets.atoms") >= 1, c, "budgets.atoms", "must be >= 1");
  require(i("budgets.inits") >= 1, c, "budgets.inits", "must be >= 1");
  require(d("budgets.stiff_threshold") > 0, c, "budgets.stiff_threshold", "must be positive");
  require(d("budgets.threshold") > 0 && d("budgets.threshold") <= 1, c, "budgets.threshold", "must lie in (0, 1]");
  require(i("budgets.candidates") >= 1, c, "budgets.candidates", "must be >= 1");
  require(d("budgets.min_mass") >= 0, c, "budgets.min_mass", "must be >= 0");
  require(d("system.arc") > 0 && d("system.arc") <= 1, c, "system.arc", "must lie in (0, 1]");
  require(d("system.eps") > 0, c, "system.eps", "must be positive");
  require(d("system.q_norm") >= 0, c, "system.q_norm", "must be >= 0");
  require(i("system.k") >= 1, c, "system.k", "must be >= 1");
}

// Canonical config without run-only keys, hashed for provenance.
Json config_json(const Config& c) {
  Json j = Json::object();
  for (const auto& k : schema()) {
    std::string full = k.section + "." + k.name;
    if (full == "walk.threads") continue;
    std::visit([&](const auto& x) { j[k.section][k.name] = x; }, c.values.at(full));
  }
  return j;
}

std::string fnv1a64(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string version_string() { return std::string(STATWALK_VERSION) + "+g" + STATWALK_GIT; }

// ---------------------------------------------------------------------------
// Subcommands.

struct Run {
  Json result = Json::object();
  Json budgets = Json::object();
  std::string status = "ok";
  std::vector<std::string> csv;  // trace rows without header
  int exit_code = kExitOk;
};

struct Context {
  const Config& c;
  std::uint64_t seed;
  int threads;

  std::int64_t i(const char* k) const { return c.get<std::int64_t>(k); }
  double d(const char* k) const { return c.get<double>(k); }
  std::string s(const char* k) const { return c.get<std::string>(k); }
  bool b(const char* k) const { return c.get<bool>(k); }

  SystemHandle sys() const { return SystemHandle::make(system_from_string(s("system.name"))); }
  std::size_t trials() const { return static_cast<std::size_t>(i("walk.trials")); }
  std::size_t steps() const { return static_cast<std::size_t>(i("walk.steps")); }
  int grid() const { return static_cast<int>(i("budgets.grid")); }

  GroupMeasure law(const SystemHandle& x) const {
    if (s("walk.measure") == "rotations") {
      if (x.id != SystemId::RayCircle && x.id != SystemId::ProjLine)
        throw ValidationError(c.anchor("walk.measure") + ": walk.measure rotations needs ray_circle or proj_line");
      AtomicGroupMeasure rot;
      for (double a : {1.0, std::sqrt(2.0)}) {
        rot.elements.push_back(Mat2::rotation(a));
        rot.weights.push_back(0.5);
      }
      return rot;
    }
    return catalog_group_measure(x);
  }
  Measure measure(const SystemHandle& x) const {
    switch (x.id) {
      case SystemId::RayCircle: return lebesgue_grid(GridSpace::Ray, grid());
      case SystemId::ProjLine: return lebesgue_grid(GridSpace::Proj, grid());
      case SystemId::DoubleProjEx8: return lebesgue_grid(GridSpace::Tagged, grid());
      default: return catalog_measure(x);
    }
  }
  WalkOptions walk() const {
    WalkOptions w;
    w.depth = static_cast<int>(i("walk.depth"));
    w.delta = static_cast<int>(i("walk.delta"));
    return w;
  }
  StationaryOptions stationary() const {
    StationaryOptions o;
    o.n_samples = static_cast<int>(i("budgets.samples"));
    o.seed = seed;
    o.grid = grid();
    o.depth = std::min<int>(static_cast<int>(i("walk.depth")), 6);
    o.threads = threads;
    return o;
  }
  EntropyBudget entropy() const {
    return {static_cast<int>(i("budgets.n_g")), static_cast<int>(i("budgets.n_x")), seed, threads};
  }
};

Json estimate_json(const EntropyEstimate& e) {
  return {{"value", e.value}, {"stderr", e.stderr_}, {"method", e.method},
          {"n_g", e.n_g},     {"n_x", e.n_x},        {"clipped", e.clipped}};
}

std::string csv_number(double x) {
  std::ostringstream os;
  os << std::setprecision(17) << x;
  return os.str();
}

Run cmd_stationary(const Context& x) {
  Run r;
  auto sys = x.sys();
  auto m = x.law(sys);
  auto init_kind = x.s("system.init");
  Measure init = x.measure(sys);
  if (init_kind == "point") {
    Rng rng(x.seed, 0, 0x11);
    init = random_point_mass(sys, rng);
  } else if (init_kind == "lebesgue" && !std::holds_alternative<GridMeasure>(init)) {
    throw ValidationError(x.c.anchor("system.init") + ": system.init lebesgue needs a circle system");
  }
  double tol = x.d("budgets.tol");
  int max_iter = static_cast<int>(x.i("budgets.max_iter"));
  auto res = solve_fixed_point(sys, m, init, tol, max_iter, x.stationary());
  r.budgets = {{"tol", tol}, {"max_iter", max_iter}, {"samples", x.i("budgets.samples")}, {"grid", x.grid()}};
  r.result = {{"system", sys.name()},
              {"residual", res.residual},
              {"iterations", res.iterations},
              {"converged", res.converged},
              {"invariance_residual", invariance_residual(sys, res.measure, test_elements(m, 8, x.seed))}};
  if (auto cyl = std::get_if<CylinderMeasure>(&res.measure); cyl && cyl->is_exact())
    if (auto am = std::get_if<AtomicGroupMeasure>(&m))
      r.result["exact_residual"] = rational_string(stationarity_residual_exact(*am, *cyl));
  if (!res.converged) {
    r.status = "budget_exhausted";
    r.exit_code = kExitBudget;
  }
  return r;
}

Run cmd_walk(const Context& x) {
  Run r;
  auto sys = x.sys();
  auto m = x.law(sys);
  auto mu = x.measure(sys);
  auto wo = x.walk();
  std::size_t n = x.steps();
  auto rows = parallel_map<std::vector<ConditionalMeasureEstimate>>(
      x.trials(),
      [&](std::size_t t) {
        auto tr = sample_trajectory(m, n, x.seed, t);
        std::vector<ConditionalMeasureEstimate> out;
        for (std::size_t k = 1; k <= n; ++k) out.push_back(conditional_measure(sys, mu, tr, k, wo));
        return out;
      },
      x.threads);
  double thr = x.d("budgets.threshold");
  std::vector<double> scores, diags;
  MeasureOnMeasures P;
  for (std::size_t t = 0; t < rows.size(); ++t) {
    for (const auto& e : rows[t])
      r.csv.push_back(std::to_string(t) + "," + std::to_string(e.n) + "," + csv_number(e.diagnostic) + "," +
                      csv_number(e.point_mass_score));
    scores.push_back(rows[t].back().point_mass_score);
    diags.push_back(rows[t].back().diagnostic);
    P.measures.push_back(rows[t].back().measure);
    P.weights.push_back(1.0 / static_cast<double>(rows.size()));
  }
  auto frac = static_cast<double>(std::count_if(scores.begin(), scores.end(), [&](double s) { return s >= thr; })) /
              static_cast<double>(scores.size());
  r.budgets = {{"trials", x.trials()}, {"steps", n}, {"depth", wo.depth}, {"delta", wo.delta}, {"grid", x.grid()}};
  r.result = {{"system", sys.name()},
              {"proximality_index", frac},
              {"threshold", thr},
              {"median_point_mass_score", median(scores)},
              {"median_diagnostic", median(diags)},
              {"barycenter_residual", weak_star_distance(barycenter(P), mu)}};
  return r;
}

Run cmd_entropy(const Context& x) {
  Run r;
  auto sys = x.sys();
  EntropyEstimate e;
  if (x.b("system.exact")) {
    if (sys.id != SystemId::BoundaryF2)
      throw ValidationError(x.c.anchor("system.exact") + ": exact entropy is available for boundary_f2 only");
    e = entropy_exact_f2_boundary(static_cast<int>(x.i("walk.depth")));
    r.budgets = {{"depth", x.i("walk.depth")}};
  } else {
    e = entropy(sys, x.law(sys), x.measure(sys), x.entropy());
    r.budgets = {{"n_g", x.i("budgets.n_g")}, {"n_x", x.i("budgets.n_x")}, {"grid", x.grid()}};
  }
  r.result = {{"system", sys.name()}, {"entropy", estimate_json(e)}};
  return r;
}

Run cmd_join(const Context& x) {
  Run r;
  auto sx = x.sys();
  auto sy = SystemHandle::make(system_from_string(x.s("system.other")));
  auto m = x.law(sx);
  auto mu = x.measure(sx), nu = x.measure(sy);
  JoinOptions jo;
  jo.atoms = static_cast<int>(x.i("budgets.atoms"));
  jo.walk = x.walk();
  jo.threads = x.threads;
  auto j = join(sx, mu, sy, nu, m, x.trials(), x.steps(), x.seed, jo);
  auto rep = joining_checks(j, mu, nu, m, 64, x.seed);
  r.budgets = {{"trials", x.trials()}, {"steps", x.steps()}, {"atoms", jo.atoms}, {"grid", x.grid()}};
  r.result = {{"x", sx.name()},
              {"y", sy.name()},
              {"marginal_x", rep.marginal_x},
              {"marginal_y", rep.marginal_y},
              {"stationarity", rep.stationarity},
              {"distance_to_product", weak_star_distance(j.measure, product_measure(mu, nu))}};
  return r;
}

Run cmd_classify(const Context& x) {
  Run r;
  auto sys = x.sys();
  auto factor = x.s("system.factor");
  r.budgets = {{"trials", x.trials()}, {"steps", x.steps()}, {"threshold", x.d("budgets.threshold")}};
  if (factor.empty()) {
    MaximalProximalOptions o;
    o.trials = x.trials();
    o.n = x.steps();
    o.seed = x.seed;
    o.threshold = x.d("budgets.threshold");
    r.result = to_json(maximal_proximal_factor(sys, o));
    return r;
  }
  auto target = factor_target(sys, factor);
  auto mu = x.measure(sys);
  ExtensionOptions o;
  o.seed = x.seed;
  o.walk = x.walk();
  o.prox_threshold = x.d("budgets.threshold");
  o.entropy = x.entropy();
  r.budgets["n_g"] = x.i("budgets.n_g");
  r.budgets["n_x"] = x.i("budgets.n_x");
  r.result = to_json(classify_extension(sys, mu, factor, target, factor_image(sys, factor, mu), x.law(sys),
                                        x.trials(), x.steps(), o));
  return r;
}

Run cmd_quasifactor(const Context& x) {
  Run r;
  auto sys = x.sys();
  auto mu = x.measure(sys);
  auto wo = x.walk();
  auto P = quasifactor_sample(sys, mu, x.law(sys), x.trials(), x.steps(), x.seed, wo);
  std::vector<double> scores;
  for (const auto& q : P.measures) scores.push_back(point_mass_score(q, wo.depth));
  double thr = x.d("budgets.threshold");
  auto sharp = std::count_if(scores.begin(), scores.end(), [&](double s) { return s >= thr; });
  r.budgets = {{"trials", x.trials()}, {"steps", x.steps()}, {"depth", wo.depth}, {"grid", x.grid()}};
  r.result = {{"system", sys.name()},
              {"measures", P.measures.size()},
              {"sharp_fraction", static_cast<double>(sharp) / static_cast<double>(scores.size())},
              {"median_point_mass_score", median(scores)},
              {"barycenter_residual", weak_star_distance(barycenter(P), mu)}};
  return r;
}

Run cmd_cover(const Context& x) {
  Run r;
  auto sys = x.sys();
  auto mu = x.measure(sys);
  auto atoms = static_cast<std::size_t>(x.i("budgets.atoms"));
  auto c = standard_cover(sys, mu, x.law(sys), x.trials(), x.steps(), atoms, x.seed, x.walk());
  r.budgets = {{"trials", x.trials()}, {"steps", x.steps()}, {"atoms", atoms}, {"grid", x.grid()}};
  r.result = {{"system", sys.name()}, {"pi_residual", c.pi_residual}};
  if (sys.id == SystemId::SkewEx6) r.result["pair_statistics"] = to_json(cover_pair_statistics(c));
  return r;
}

Run cmd_stiffness(const Context& x) {
  Run r;
  auto sys = x.sys();
  int inits = static_cast<int>(x.i("budgets.inits"));
  double thr = x.d("budgets.stiff_threshold"), tol = x.d("budgets.tol");
  int max_iter = static_cast<int>(x.i("budgets.max_iter"));
  auto rep = stiffness_probe(sys, x.law(sys), inits, thr, tol, max_iter, x.stationary());
  r.budgets = {{"inits", inits}, {"tol", tol}, {"max_iter", max_iter}, {"grid", x.grid()}, {"samples", x.i("budgets.samples")}};
  r.result = {{"system", sys.name()},
              {"measure", x.s("walk.measure")},
              {"invariance", rep.invariance},
              {"stationarity", rep.stationarity},
              {"max_invariance", rep.max_invariance},
              {"max_stationarity", rep.max_stationarity},
              {"all_converged", rep.all_converged},
              {"stiff", rep.stiff},
              {"threshold", thr}};
  if (!rep.all_converged) {
    r.status = "budget_exhausted";
    r.exit_code = kExitBudget;
  }
  return r;
}

SetDescriptor sat_set(const Context& x, const SystemHandle& sys) {
  auto spec = x.s("system.set");
  if (spec == "arc") return SetDescriptor::arc(x.d("system.arc_lo"), x.d("system.arc") * kPi);
  if (spec == "point0") return SetDescriptor::point(SpacePoint{Bit{0}});
  if (spec.rfind("cyl:", 0) == 0) return SetDescriptor::cylinder(FreeWord::parse(spec.substr(4)));
  (void)sys;
  throw ValidationError(x.c.anchor("system.set") + ": system.set must be arc, point0 or cyl:<word>");
}

Run cmd_sat(const Context& x) {
  Run r;
  auto sys = x.sys();
  auto mu = x.measure(sys);
  auto m = x.law(sys);
  auto budget = static_cast<std::size_t>(x.i("budgets.candidates"));
  auto sat = sat_escape(sys, mu, sat_set(x, sys), m, budget, x.seed, x.threads);
  auto con = contractibility_score(sys, mu, x.s("system.test"), m, budget, x.seed, x.threads);
  r.budgets = {{"candidates", budget}, {"grid", x.grid()}};
  r.result = {{"system", sys.name()},
              {"set", x.s("system.set")},
              {"base_mass", sat.base_mass},
              {"escape_mass", sat.mass},
              {"escape_element", to_json(sat.g)},
              {"test", x.s("system.test")},
              {"contractibility", con.score},
              {"contractibility_element", to_json(con.g)},
              {"candidates", sat.candidates}};
  return r;
}

Run cmd_szemeredi(const Context& x) {
  Run r;
  auto sys = x.sys();
  if (sys.id != SystemId::ProjLine)
    throw ValidationError(x.c.anchor("system.name") + ": szemeredi runs on proj_line");
  GroupSetL L;
  L.A = ArcUnion::arc(x.d("system.arc_lo"), x.d("system.arc") * kPi);
  L.x0 = x.d("system.x0");
  SzemerediBudgets b;
  b.grid = x.grid();
  b.n_max = static_cast<int>(x.i("budgets.n_max"));
  b.cover_trials = x.trials();
  b.cover_n = x.steps();
  b.min_mass = x.d("budgets.min_mass");
  b.seed = x.seed;
  auto res = szemeredi_sl2(L, static_cast<int>(x.i("system.k")), x.d("system.eps"), x.d("system.q_norm"), b);
  r.budgets = {{"grid", b.grid},           {"n_max", b.n_max},       {"cover_trials", b.cover_trials},
               {"cover_n", b.cover_n},     {"min_mass", b.min_mass}};
  r.result = to_json(res);
  if (res.success) {
    Json v = Json::array();
    for (const auto& mg : verify_witness(L, *res.witness)) v.push_back(mg.margin);
    r.result["verified_margins"] = v;
  } else {
    r.status = "failed";
    r.exit_code = kExitBudget;
  }
  return r;
}

Run dispatch(const std::string& cmd, const Context& x) {
  if (cmd == "stationary") return cmd_stationary(x);
  if (cmd == "walk") return cmd_walk(x);
  if (cmd == "entropy") return cmd_entropy(x);
  if (cmd == "join") return cmd_join(x);
  if (cmd == "classify") return cmd_classify(x);
  if (cmd == "quasifactor") return cmd_quasifactor(x);
  if (cmd == "cover") return cmd_cover(x);
  if (cmd == "stiffness") return cmd_stiffness(x);
  if (cmd == "sat") return cmd_sat(x);
  return cmd_szemeredi(x);
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::binary);
  if (!f) throw ValidationError("--out: cannot write " + p.string());
  f << text;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"statwalk: stationary measures and random walks on a catalog of group actions"};
  std::string command, config_path, out_dir;
  std::optional<std::string> system, other, factor;
  std::optional<std::int64_t> seed, trials, steps, grid, depth, threads, k;
  std::optional<double> tol, arc, eps, q_norm;
  bool exact = false, dump = false;

  app.add_option("command", command, "subcommand")->check(CLI::IsMember(kCommands));
  app.add_option("--config", config_path, "TOML configuration file")->check(CLI::ExistingFile);
  app.add_option("--system", system, "catalog system");
  app.add_option("--seed", seed, "master seed");
  app.add_option("--trials", trials, "trajectories");
  app.add_option("--steps", steps, "walk length");
  app.add_option("--grid", grid, "circle bins");
  app.add_option("--depth", depth, "cylinder depth");
  app.add_option("--tol", tol, "stationary solve tolerance");
  app.add_option("--out", out_dir, "directory for result.json, metadata.json and trace.csv");
  app.add_option("--threads", threads, "worker threads");
  app.add_option("--other", other, "second system for join");
  app.add_option("--factor", factor, "factor map for classify");
  app.add_option("--arc", arc, "arc length as a fraction of pi");
  app.add_option("--k", k, "progression length minus one");
  app.add_option("--eps", eps, "neighborhood radius");
  app.add_option("--q-norm", q_norm, "excluded norm ball radius");
  app.add_flag("--exact", exact, "exact entropy");
  app.add_flag("--dump-defaults", dump, "print the default configuration and exit");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInvalid;
  }
  if (dump) {
    std::cout << dump_defaults();
    return kExitOk;
  }
  if (command.empty()) {
    std::cerr << "error: missing subcommand (" << kCommands.front() << " | ... | " << kCommands.back() << ")\n";
    return kExitInvalid;
  }

  auto started = std::chrono::steady_clock::now();
  Config cfg = defaults();
  std::uint64_t master = 0;
  int nthreads = 1;
  try {
    if (!config_path.empty()) load_toml(cfg, config_path);
    if (system) cfg.set("system.name", *system, "--system");
    if (other) cfg.set("system.other", *other, "--other");
    if (factor) cfg.set("system.factor", *factor, "--factor");
    if (arc) cfg.set("system.arc", *arc, "--arc");
    if (k) cfg.set("system.k", *k, "--k");
    if (eps) cfg.set("system.eps", *eps, "--eps");
    if (q_norm) cfg.set("system.q_norm", *q_norm, "--q-norm");
    if (exact) cfg.set("system.exact", true, "--exact");
    if (seed) cfg.set("walk.seed", *seed, "--seed");
    if (trials) cfg.set("walk.trials", *trials, "--trials");
    if (steps) cfg.set("walk.steps", *steps, "--steps");
    if (depth) cfg.set("walk.depth", *depth, "--depth");
    if (threads) cfg.set("walk.threads", *threads, "--threads");
    if (grid) cfg.set("budgets.grid", *grid, "--grid");
    if (tol) cfg.set("budgets.tol", *tol, "--tol");
    if (!cfg.set_by_user.count("walk.seed"))
      if (const char* env = std::getenv("STATWALK_SEED")) {
        try {
          std::size_t used = 0;
          long long v = std::stoll(env, &used);
          if (used != std::strlen(env)) throw std::invalid_argument("trailing characters");
          cfg.set("walk.seed", static_cast<std::int64_t>(v), "STATWALK_SEED");
        } catch (const std::exception&) {
          throw ValidationError(std::string("STATWALK_SEED: not an integer: '") + env + "'");
        }
      }
    validate(cfg, command);
    master = static_cast<std::uint64_t>(cfg.get<std::int64_t>("walk.seed"));
    auto t = cfg.get<std::int64_t>("walk.threads");
    nthreads = t > 0 ? static_cast<int>(t) : std::max(1u, std::thread::hardware_concurrency());
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInvalid;
  }
  default_threads() = nthreads;

  Run run;
  try {
    run = dispatch(command, Context{cfg, master, nthreads});
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInvalid;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInvalid;
  }

  Json conf = config_json(cfg);
  Json doc = {{"command", command},
              {"version", version_string()},
              {"config_hash", fnv1a64(conf.dump())},
              {"seed", master},
              {"status", run.status},
              {"budgets", run.budgets},
              {"config", conf},
              {"result", run.result}};
  std::string text = doc.dump(2) + "\n";
  std::cout << text;

  if (!out_dir.empty()) {
    try {
      fs::create_directories(out_dir);
      write_file(fs::path(out_dir) / "result.json", text);
      auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
      char stamp[32];
      std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
      double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
      Json meta = {{"timestamp", stamp}, {"wall_seconds", wall}, {"threads", nthreads}, {"config_path", config_path}};
      write_file(fs::path(out_dir) / "metadata.json", meta.dump(2) + "\n");
      if (!run.csv.empty()) {
        std::string csv = "trial,k,diagnostic,point_mass_score\n";
        for (const auto& row : run.csv) csv += row + "\n";
        write_file(fs::path(out_dir) / "trace.csv", csv);
      }
    } catch (const std::exception& e) {
      std::cerr << "error: --out: " << e.what() << "\n";
      return kExitInvalid;
    }
  }
  return run.exit_code;
}
