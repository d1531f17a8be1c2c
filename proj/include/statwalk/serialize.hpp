#pragma once

#include <json.hpp>

#include "statwalk/measure.hpp"

namespace statwalk {

using Json = nlohmann::ordered_json;

inline std::string rational_string(const Rational& q) {
  return numerator(q).str() + "/" + denominator(q).str();
}

inline Rational parse_rational(const std::string& s) {
  auto slash = s.find('/');
  try {
    if (slash == std::string::npos) return Rational(boost::multiprecision::cpp_int(s));
    return Rational(boost::multiprecision::cpp_int(s.substr(0, slash)),
                    boost::multiprecision::cpp_int(s.substr(slash + 1)));
  } catch (const std::exception&) {
    fail(ErrorKind::Parse, "bad rational '" + s + "'");
  }
}

// ---------------------------------------------------------------------------
// Points and group elements.

inline Json to_json(const SpacePoint& x) {
  return std::visit(
      [](const auto& p) -> Json {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, RayAngle>) return {{"ray", p.theta}};
        else if constexpr (std::is_same_v<T, ProjAngle>) return {{"proj", p.theta}};
        else if constexpr (std::is_same_v<T, WordPrefix>) return {{"word", p.word.str()}};
        else if constexpr (std::is_same_v<T, Bit>) return {{"bit", p.value}};
        else if constexpr (std::is_same_v<T, BitSeq>) return {{"bits", p.bits}, {"depth", p.depth}};
        else if constexpr (std::is_same_v<T, Tagged>) return {{"copy", p.copy}, {"proj", p.theta}};
        else if constexpr (std::is_same_v<T, PointPair>) return {{"pair", Json::array({to_json(p.parts[0]), to_json(p.parts[1])})}};
        else return {{"unit", true}};
      },
      x.value);
}

inline SpacePoint point_from_json(const Json& j) {
  if (j.contains("pair")) return make_pair_point(point_from_json(j["pair"][0]), point_from_json(j["pair"][1]));
  if (j.contains("copy")) return SpacePoint{Tagged{j["copy"].get<int>(), j["proj"].get<double>()}};
  if (j.contains("ray")) return SpacePoint{RayAngle{j["ray"].get<double>()}};
  if (j.contains("proj")) return SpacePoint{ProjAngle{j["proj"].get<double>()}};
  if (j.contains("word")) return SpacePoint{WordPrefix{FreeWord::parse(j["word"].get<std::string>())}};
  if (j.contains("bit")) return SpacePoint{Bit{j["bit"].get<int>()}};
  if (j.contains("bits")) return SpacePoint{BitSeq{j["bits"].get<std::uint32_t>(), j["depth"].get<int>()}};
  if (j.contains("unit")) return SpacePoint{Unit{}};
  fail(ErrorKind::Parse, "unrecognized point " + j.dump());
}

inline Json to_json(const Mat2& m) {
  auto e = m.entries();
  return Json::array({e[0], e[1], e[2], e[3]});
}

inline Json to_json(const GroupElement& g) {
  return std::visit(
      [](const auto& x) -> Json {
        using T = std::decay_t<decltype(x)>;
        if constexpr (std::is_same_v<T, FreeWord>) return {{"word", x.str()}};
        else if constexpr (std::is_same_v<T, Mat2>) return {{"mat2", to_json(x)}};
        else if constexpr (std::is_same_v<T, BlockSwap>)
          return {{"block_swap", {{"A", to_json(x.a)}, {"B", to_json(x.b)}, {"swap", x.swap}}}};
        else return {{"word_pair", Json::array({x.first.str(), x.second.str()})}};
      },
      g);
}

inline Mat2 mat2_from_json(const Json& j) {
  if (!j.is_array() || j.size() != 4) fail(ErrorKind::Parse, "mat2 needs 4 entries");
  return Mat2::from_entries(j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>());
}

inline GroupElement group_from_json(const Json& j) {
  if (j.contains("word")) return FreeWord::parse(j["word"].get<std::string>());
  if (j.contains("mat2")) return mat2_from_json(j["mat2"]);
  if (j.contains("block_swap")) {
    const auto& b = j["block_swap"];
    return BlockSwap{mat2_from_json(b["A"]), mat2_from_json(b["B"]), b["swap"].get<bool>()};
  }
  if (j.contains("word_pair"))
    return WordPair{FreeWord::parse(j["word_pair"][0].get<std::string>()),
                    FreeWord::parse(j["word_pair"][1].get<std::string>())};
  fail(ErrorKind::Parse, "unrecognized group element " + j.dump());
}

// ---------------------------------------------------------------------------
// Measures: {"repr": "atomic" | "grid" | "cylinder" | "fibered", ...}.

inline const char* grid_space_name(GridSpace s) {
  return s == GridSpace::Ray ? "ray" : s == GridSpace::Proj ? "proj" : "tagged";
}

inline Json to_json(const CylinderMeasure& c) {
  Json j{{"repr", "cylinder"}, {"depth", c.depth}, {"exact", c.is_exact()}};
  if (c.is_exact()) {
    Json arr = Json::array();
    for (const auto& q : c.exact) arr.push_back(rational_string(q));
    j["mass"] = std::move(arr);
  } else {
    j["mass"] = c.mass;
  }
  return j;
}

inline CylinderMeasure cylinder_from_json(const Json& j) {
  CylinderMeasure c;
  c.depth = j.at("depth").get<int>();
  const auto& m = j.at("mass");
  if (m.size() != cyl_count(c.depth)) fail(ErrorKind::Parse, "cylinder table has the wrong size");
  if (j.value("exact", false)) {
    for (const auto& s : m) {
      c.exact.push_back(parse_rational(s.get<std::string>()));
      c.mass.push_back(to_double(c.exact.back()));
    }
  } else {
    c.mass = m.get<std::vector<double>>();
  }
  return c;
}

inline Json to_json(const Measure& mu) {
  if (auto a = std::get_if<AtomicMeasure>(&mu)) {
    Json pts = Json::array();
    for (const auto& x : a->points) pts.push_back(to_json(x));
    return {{"repr", "atomic"}, {"points", pts}, {"weights", a->weights}};
  }
  if (auto g = std::get_if<GridMeasure>(&mu))
    return {{"repr", "grid"}, {"space", grid_space_name(g->space)}, {"n", g->n}, {"mass", g->mass}};
  if (auto c = std::get_if<CylinderMeasure>(&mu)) return to_json(*c);
  const auto& f = std::get<FiberedMeasure>(mu);
  Json labels = Json::array(), fibers = Json::array();
  for (const auto& x : f.labels) labels.push_back(to_json(x));
  for (const auto& c : f.fibers) fibers.push_back(to_json(c));
  return {{"repr", "fibered"}, {"system", to_string(f.system)}, {"labels", labels}, {"weights", f.weights}, {"fibers", fibers}};
}

inline Measure measure_from_json(const Json& j) {
  auto repr = j.at("repr").get<std::string>();
  if (repr == "atomic") {
    AtomicMeasure a;
    for (const auto& p : j.at("points")) a.points.push_back(point_from_json(p));
    a.weights = j.at("weights").get<std::vector<double>>();
    return a;
  }
  if (repr == "grid") {
    GridMeasure g;
    auto sp = j.at("space").get<std::string>();
    g.space = sp == "ray" ? GridSpace::Ray : sp == "proj" ? GridSpace::Proj : GridSpace::Tagged;
    g.n = j.at("n").get<int>();
    g.mass = j.at("mass").get<std::vector<double>>();
    return g;
  }
  if (repr == "cylinder") return cylinder_from_json(j);
  if (repr == "fibered") {
    FiberedMeasure f;
    f.system = system_from_string(j.at("system").get<std::string>());
    for (const auto& p : j.at("labels")) f.labels.push_back(point_from_json(p));
    f.weights = j.at("weights").get<std::vector<double>>();
    for (const auto& c : j.at("fibers")) f.fibers.push_back(cylinder_from_json(c));
    return f;
  }
  fail(ErrorKind::Parse, "unknown measure repr '" + repr + "'");
}

}  // namespace statwalk
