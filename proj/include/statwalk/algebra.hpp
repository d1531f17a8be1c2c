#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "statwalk/core.hpp"

namespace statwalk {

// ---------------------------------------------------------------------------
// Free group F2 = <a, b>. Letters are bytes; x ^ 1 is the inverse letter.

enum Letter : std::uint8_t { kA = 0, kAinv = 1, kB = 2, kBinv = 3 };

inline constexpr std::uint8_t inverse_letter(std::uint8_t l) { return l ^ 1u; }
inline constexpr bool positive_letter(std::uint8_t l) { return (l & 1u) == 0; }

inline char letter_char(std::uint8_t l) {
  constexpr char kChars[] = {'a', 'A', 'b', 'B'};
  return kChars[l & 3u];
}

/// Reduced word over {a, a^-1, b, b^-1}. Printed with capitals for inverses.
struct FreeWord {
  std::vector<std::uint8_t> letters;

  static FreeWord identity() { return {}; }
  static FreeWord letter(std::uint8_t l) { return FreeWord{{l}}; }

  /// Parses "aBb..." (capital = inverse); the result is reduced.
  static FreeWord parse(std::string_view s) {
    FreeWord w;
    for (char c : s) {
      std::uint8_t l;
      switch (c) {
        case 'a': l = kA; break;
        case 'A': l = kAinv; break;
        case 'b': l = kB; break;
        case 'B': l = kBinv; break;
        default: fail(ErrorKind::Parse, std::string("bad letter '") + c + "' in word");
      }
      w.push_back(l);
    }
    return w;
  }

  std::size_t size() const { return letters.size(); }
  bool empty() const { return letters.empty(); }
  std::uint8_t operator[](std::size_t i) const { return letters[i]; }

  /// Right-multiply by one letter, cancelling if needed.
  void push_back(std::uint8_t l) {
    if (!letters.empty() && letters.back() == inverse_letter(l))
      letters.pop_back();
    else
      letters.push_back(l);
  }

  bool is_reduced() const {
    for (std::size_t i = 1; i < letters.size(); ++i)
      if (letters[i] == inverse_letter(letters[i - 1])) return false;
    return true;
  }

  FreeWord inverse() const {
    FreeWord r;
    r.letters.reserve(letters.size());
    for (auto it = letters.rbegin(); it != letters.rend(); ++it) r.letters.push_back(inverse_letter(*it));
    return r;
  }

  FreeWord prefix(std::size_t n) const {
    FreeWord r;
    r.letters.assign(letters.begin(), letters.begin() + static_cast<std::ptrdiff_t>(std::min(n, letters.size())));
    return r;
  }

  std::string str() const {
    std::string s;
    for (auto l : letters) s.push_back(letter_char(l));
    return s;
  }

  bool operator==(const FreeWord&) const = default;
  auto operator<=>(const FreeWord&) const = default;
};

/// Concatenation followed by reduction at the junction.
inline FreeWord operator*(const FreeWord& g, const FreeWord& h) {
  std::size_t k = 0;
  while (k < g.size() && k < h.size() && g.letters[g.size() - 1 - k] == inverse_letter(h.letters[k])) ++k;
  FreeWord r;
  r.letters.reserve(g.size() + h.size() - 2 * k);
  r.letters.insert(r.letters.end(), g.letters.begin(), g.letters.end() - static_cast<std::ptrdiff_t>(k));
  r.letters.insert(r.letters.end(), h.letters.begin() + static_cast<std::ptrdiff_t>(k), h.letters.end());
  return r;
}

// ---------------------------------------------------------------------------
// SL(2,R) in Cartan form k(alpha) diag(e^t, e^-t) k(beta), t >= 0. The form
// keeps det = 1 exactly and the projective action stable for products whose
// norms reach e^500.

inline std::array<double, 4> rotation_entries(double a) {
  double c = std::cos(a), s = std::sin(a);
  return {c, -s, s, c};
}

namespace detail {

struct Svd2 {
  double left, sx, sy, right;  // M = R(left) diag(sx, sy) R(right)
};

inline Svd2 svd2(double p, double q, double r, double w) {
  double e = 0.5 * (p + w), f = 0.5 * (p - w), g = 0.5 * (r + q), h = 0.5 * (r - q);
  double qq = std::hypot(e, h), rr = std::hypot(f, g);
  double a1 = std::atan2(g, f), a2 = std::atan2(h, e);
  return {0.5 * (a2 + a1), qq + rr, qq - rr, 0.5 * (a2 - a1)};
}

inline double wrap_pi(double a) { return a - kTwoPi * std::floor((a + kPi) / kTwoPi); }

}  // namespace detail

struct Mat2 {
  double alpha = 0.0;  // left rotation angle
  double t = 0.0;      // log of the top singular value
  double beta = 0.0;   // right rotation angle

  static Mat2 identity() { return {}; }
  static Mat2 rotation(double a) { return {detail::wrap_pi(a), 0.0, 0.0}; }
  static Mat2 cartan(double a, double t, double b) { return {detail::wrap_pi(a), t, detail::wrap_pi(b)}; }
  /// diag(s, 1/s), s > 0.
  static Mat2 diag(double s) {
    if (!(s > 0)) fail(ErrorKind::InvalidArgument, "diag requires a positive entry");
    if (s >= 1) return {0.0, std::log(s), 0.0};
    return cartan(kPi / 2, -std::log(s), -kPi / 2);
  }

  /// Row-major entries; rescaled by 1/sqrt(det) so the result lies in SL(2,R).
  static Mat2 from_entries(double a, double b, double c, double d) {
    double det = a * d - b * c;
    if (!(det > 0)) fail(ErrorKind::InvalidArgument, "matrix must have positive determinant");
    double k = 1.0 / std::sqrt(det);
    auto s = detail::svd2(a * k, b * k, c * k, d * k);
    double t = 0.5 * std::log(s.sx / s.sy);  // symmetric split guards against det rounding
    return cartan(s.left, t, s.right);
  }

  std::array<double, 4> entries() const {
    double et = std::exp(t), emt = std::exp(-t);
    double cb = std::cos(beta), sb = std::sin(beta), ca = std::cos(alpha), sa = std::sin(alpha);
    // D(t) R(beta)
    double m00 = et * cb, m01 = -et * sb, m10 = emt * sb, m11 = emt * cb;
    return {ca * m00 - sa * m10, ca * m01 - sa * m11, sa * m00 + ca * m10, sa * m01 + ca * m11};
  }

  double det() const {
    auto e = entries();
    return e[0] * e[3] - e[1] * e[2];
  }
  double trace() const {
    auto e = entries();
    return e[0] + e[3];
  }
  double frobenius() const { return std::exp(t) * std::sqrt(1.0 + std::exp(-4.0 * t)); }
  double log_norm() const { return t; }

  Mat2 inverse() const { return cartan(kPi / 2 - beta, t, -kPi / 2 - alpha); }

  /// Image of the ray at angle theta, in [0, 2pi).
  double act_ray(double theta) const {
    double phi = theta + beta;
    double x = std::cos(phi), y = std::sin(phi) * std::exp(-2.0 * t);
    return wrap(std::atan2(y, x) + alpha, kTwoPi);
  }

  /// Monotone lift of the ray action to the real line: lift(theta + pi) =
  /// lift(theta) + pi. Branch-wise atan/tan keeps it monotone in floating point,
  /// so image arcs never get negative length even when e^-2t underflows.
  double act_lift(double theta) const {
    double phi = theta + beta;
    double k = std::floor(phi / kPi + 0.5);
    double r = phi - k * kPi;  // in [-pi/2, pi/2)
    return k * kPi + std::atan(std::exp(-2.0 * t) * std::tan(r)) + alpha;
  }

  /// d(g.theta)/dtheta = |g u(theta)|^-2.
  double ray_jacobian(double theta) const {
    double phi = theta + beta;
    double c = std::cos(phi), s = std::sin(phi);
    return 1.0 / (std::exp(2.0 * t) * c * c + std::exp(-2.0 * t) * s * s);
  }
};

inline Mat2 operator*(const Mat2& g, const Mat2& h) {
  double gamma = g.beta + h.alpha;
  double c = std::cos(gamma), s = std::sin(gamma);
  double e1 = std::exp(-2.0 * g.t), e2 = std::exp(-2.0 * h.t);
  // D(t1) R(gamma) D(t2) scaled by e^-(t1+t2)
  auto m = detail::svd2(c, -s * e2, s * e1, c * e1 * e2);
  double tau = g.t + h.t + std::log(m.sx);
  if (tau < 0) tau = 0;
  return Mat2::cartan(g.alpha + m.left, tau, m.right + h.beta);
}

inline double ray_jacobian(const Mat2& g, double theta) { return g.ray_jacobian(theta); }

/// Parabolic element fixing the line at angle y0 in [0, pi). Sign convention:
/// k(y0) [[1,s],[0,1]] k(-y0) with s = t on [0, pi/2) and s = -t on [pi/2, pi).
inline Mat2 parabolic_fixing(double y0, double t) {
  if (t == 0.0) fail(ErrorKind::InvalidArgument, "parabolic_fixing requires t != 0");
  y0 = wrap(y0, kPi);
  double s = y0 < kPi / 2 ? t : -t;
  double c = std::cos(y0), n = std::sin(y0);
  // I + s * u u_perp^T with u = (c, n), u_perp = (-n, c)
  return Mat2::from_entries(1.0 - s * c * n, s * c * c, -s * n * n, 1.0 + s * c * n);
}

/// Entry-wise product of two row-major 2x2 arrays.
inline std::array<double, 4> matmul(const std::array<double, 4>& x, const std::array<double, 4>& y) {
  return {x[0] * y[0] + x[1] * y[2], x[0] * y[1] + x[1] * y[3], x[2] * y[0] + x[3] * y[2],
          x[2] * y[1] + x[3] * y[3]};
}

// ---------------------------------------------------------------------------
// Block 4x4 matrices [[A,0],[0,B]] (swap = false) or [[0,A],[B,0]].

struct BlockSwap {
  Mat2 a;
  Mat2 b;
  bool swap = false;

  static BlockSwap identity() { return {}; }
  BlockSwap inverse() const {
    if (!swap) return {a.inverse(), b.inverse(), false};
    return {b.inverse(), a.inverse(), true};
  }
};

inline BlockSwap operator*(const BlockSwap& g, const BlockSwap& h) {
  if (!g.swap && !h.swap) return {g.a * h.a, g.b * h.b, false};
  if (!g.swap && h.swap) return {g.a * h.a, g.b * h.b, true};
  if (g.swap && !h.swap) return {g.a * h.b, g.b * h.a, true};
  return {g.a * h.b, g.b * h.a, false};
}

/// Element of F2 x F2 acting factorwise.
struct WordPair {
  FreeWord first;
  FreeWord second;
  bool operator==(const WordPair&) const = default;
};

inline WordPair operator*(const WordPair& g, const WordPair& h) { return {g.first * h.first, g.second * h.second}; }

using GroupElement = std::variant<FreeWord, Mat2, BlockSwap, WordPair>;

inline const char* variant_name(const GroupElement& g) {
  constexpr const char* kNames[] = {"free_word", "mat2", "block_swap", "word_pair"};
  return kNames[g.index()];
}

inline GroupElement compose(const GroupElement& g, const GroupElement& h) {
  if (g.index() != h.index())
    fail(ErrorKind::VariantMismatch, std::string("cannot compose ") + variant_name(g) + " with " + variant_name(h));
  return std::visit(
      [&](const auto& x) -> GroupElement {
        using T = std::decay_t<decltype(x)>;
        return x * std::get<T>(h);
      },
      g);
}

inline GroupElement inverse(const GroupElement& g) {
  return std::visit(
      [](const auto& x) -> GroupElement {
        using T = std::decay_t<decltype(x)>;
        if constexpr (std::is_same_v<T, WordPair>)
          return WordPair{x.first.inverse(), x.second.inverse()};
        else
          return x.inverse();
      },
      g);
}

inline GroupElement identity_like(const GroupElement& g) {
  switch (g.index()) {
    case 0: return FreeWord{};
    case 1: return Mat2{};
    case 2: return BlockSwap{};
    default: return WordPair{};
  }
}

// ---------------------------------------------------------------------------
// Points.

struct RayAngle { double theta; };
struct ProjAngle { double theta; };
struct WordPrefix { FreeWord word; };
struct Bit { int value; };
/// Adding-machine point truncated to `depth` bits; bit i of `bits` is eps_{i+1}.
struct BitSeq {
  std::uint32_t bits = 0;
  int depth = 16;
  int first() const { return static_cast<int>(bits & 1u); }
};
struct Tagged {
  int copy;  // 1 or 2
  double theta;  // in [0, pi)
};
struct Unit {};

struct SpacePoint;
struct PointPair {
  std::vector<SpacePoint> parts;  // exactly two
};

struct SpacePoint {
  std::variant<RayAngle, ProjAngle, WordPrefix, Bit, BitSeq, PointPair, Tagged, Unit> value;

  template <class T>
  const T& as() const {
    if (auto p = std::get_if<T>(&value)) return *p;
    fail(ErrorKind::VariantMismatch, "point has the wrong variant");
  }
  template <class T>
  bool is() const { return std::holds_alternative<T>(value); }
};

inline SpacePoint make_pair_point(SpacePoint x, SpacePoint y) {
  return SpacePoint{PointPair{{std::move(x), std::move(y)}}};
}

// ---------------------------------------------------------------------------
// Catalog of systems.

enum class SystemId { BoundaryF2, RayCircle, ProjLine, TwoPoint, SkewEx6, AddingEx7, DoubleProjEx8, Product, Trivial };

enum class GroupKind { F2, SL2, BlockSwapGroup, F2xF2, Any };

inline const char* to_string(SystemId id) {
  switch (id) {
    case SystemId::BoundaryF2: return "boundary_f2";
    case SystemId::RayCircle: return "ray_circle";
    case SystemId::ProjLine: return "proj_line";
    case SystemId::TwoPoint: return "two_point";
    case SystemId::SkewEx6: return "skew_ex6";
    case SystemId::AddingEx7: return "adding_ex7";
    case SystemId::DoubleProjEx8: return "double_proj_ex8";
    case SystemId::Product: return "product";
    case SystemId::Trivial: return "trivial";
  }
  return "?";
}

inline SystemId system_from_string(std::string_view s) {
  for (auto id : {SystemId::BoundaryF2, SystemId::RayCircle, SystemId::ProjLine, SystemId::TwoPoint,
                  SystemId::SkewEx6, SystemId::AddingEx7, SystemId::DoubleProjEx8, SystemId::Product,
                  SystemId::Trivial})
    if (s == to_string(id)) return id;
  fail(ErrorKind::NotCatalog, "unknown system '" + std::string(s) + "'");
}

struct SystemHandle;

struct FactorMap {
  std::string id;
  std::vector<SystemHandle> target;  // exactly one; vector allows the recursive type
};

struct SystemHandle {
  SystemId id = SystemId::Trivial;
  std::vector<SystemHandle> parts;  // two components for Product
  bool factorwise = false;          // Product: WordPair acts componentwise instead of diagonally
  int adding_depth = 16;

  static SystemHandle make(SystemId id) { return SystemHandle{id, {}, false, 16}; }
  static SystemHandle product(SystemHandle x, SystemHandle y, bool factorwise = false) {
    return SystemHandle{SystemId::Product, {std::move(x), std::move(y)}, factorwise, 16};
  }

  std::string name() const {
    if (id != SystemId::Product) return to_string(id);
    return std::string(factorwise ? "product_fw(" : "product(") + parts[0].name() + "," + parts[1].name() + ")";
  }

  bool operator==(const SystemHandle& o) const {
    return id == o.id && factorwise == o.factorwise && parts == o.parts && adding_depth == o.adding_depth;
  }
};

inline bool accepts(const SystemHandle& sys, GroupKind kind) {
  switch (sys.id) {
    case SystemId::BoundaryF2:
    case SystemId::SkewEx6:
    case SystemId::AddingEx7: return kind == GroupKind::F2;
    case SystemId::RayCircle:
    case SystemId::ProjLine: return kind == GroupKind::SL2;
    case SystemId::DoubleProjEx8: return kind == GroupKind::BlockSwapGroup;
    case SystemId::TwoPoint: return kind != GroupKind::F2xF2;
    case SystemId::Trivial: return true;
    case SystemId::Product:
      if (sys.factorwise) return kind == GroupKind::F2xF2;
      return accepts(sys.parts[0], kind) && accepts(sys.parts[1], kind);
  }
  return false;
}

inline GroupKind group_kind(const GroupElement& g) {
  switch (g.index()) {
    case 0: return GroupKind::F2;
    case 1: return GroupKind::SL2;
    case 2: return GroupKind::BlockSwapGroup;
    default: return GroupKind::F2xF2;
  }
}

inline std::string space_descriptor(const SystemHandle& sys) {
  switch (sys.id) {
    case SystemId::BoundaryF2: return "right-infinite reduced words in F2";
    case SystemId::RayCircle: return "rays in R^2 (circle, angle in [0,2pi))";
    case SystemId::ProjLine: return "lines in R^2 (P^1, angle in [0,pi))";
    case SystemId::TwoPoint: return "{0,1}";
    case SystemId::SkewEx6: return "{0,1} x Z";
    case SystemId::AddingEx7: return "dyadic adding machine x Z";
    case SystemId::DoubleProjEx8: return "P^1 disjoint-union P^1";
    case SystemId::Trivial: return "one point";
    case SystemId::Product: return space_descriptor(sys.parts[0]) + " x " + space_descriptor(sys.parts[1]);
  }
  return "";
}

inline std::string group_descriptor(const SystemHandle& sys) {
  switch (sys.id) {
    case SystemId::BoundaryF2:
    case SystemId::SkewEx6:
    case SystemId::AddingEx7: return "F2";
    case SystemId::RayCircle:
    case SystemId::ProjLine: return "SL(2,R)";
    case SystemId::DoubleProjEx8: return "block-swap subgroup of GL(4,R)";
    case SystemId::TwoPoint:
    case SystemId::Trivial: return "any catalog group";
    case SystemId::Product:
      return sys.factorwise ? "F2 x F2" : group_descriptor(sys.parts[0]);
  }
  return "";
}

namespace detail {

/// skew_ex6: one letter acting on (eps, z); positive letters move z when
/// eps = 1, inverse letters when eps = 0.
inline void skew_letter(std::uint8_t l, int& eps, FreeWord& z) {
  bool active = positive_letter(l) ? eps == 1 : eps == 0;
  if (active) z = FreeWord::letter(l) * z;
  eps = 1 - eps;
}

/// adding_ex7: g(eps,z) = (eps+1, g_eps z), g^-1(eps,z) = (eps-1, g^-1_{eps-1} z).
inline void adding_letter(std::uint8_t l, BitSeq& eps, FreeWord& z) {
  std::uint32_t mask = eps.depth >= 32 ? 0xffffffffu : ((1u << eps.depth) - 1u);
  if (positive_letter(l)) {
    if (eps.first() == 1) z = FreeWord::letter(l) * z;
    eps.bits = (eps.bits + 1u) & mask;
  } else {
    eps.bits = (eps.bits - 1u) & mask;
    if (eps.first() == 1) z = FreeWord::letter(l) * z;
  }
}

inline double proj_act(const Mat2& g, double theta) { return wrap(g.act_ray(theta), kPi); }

}  // namespace detail

/// Multiplier applied to the z-coordinate of skew_ex6 by word g starting at
/// eps; returns (final eps, multiplier word).
inline std::pair<int, FreeWord> skew_multiplier(const FreeWord& g, int eps) {
  FreeWord z;
  for (auto it = g.letters.rbegin(); it != g.letters.rend(); ++it) detail::skew_letter(*it, eps, z);
  return {eps, z};
}

inline SpacePoint act(const SystemHandle& sys, const GroupElement& g, const SpacePoint& x);

namespace detail {

inline SpacePoint act_impl(const SystemHandle& sys, const GroupElement& g, const SpacePoint& x) {
  auto need = [&](GroupKind k) {
    if (group_kind(g) != k)
      fail(ErrorKind::IncompatibleSystem, std::string(variant_name(g)) + " does not act on " + sys.name());
  };
  switch (sys.id) {
    case SystemId::BoundaryF2: {
      need(GroupKind::F2);
      return SpacePoint{WordPrefix{std::get<FreeWord>(g) * x.as<WordPrefix>().word}};
    }
    case SystemId::RayCircle: {
      need(GroupKind::SL2);
      return SpacePoint{RayAngle{std::get<Mat2>(g).act_ray(x.as<RayAngle>().theta)}};
    }
    case SystemId::ProjLine: {
      need(GroupKind::SL2);
      return SpacePoint{ProjAngle{proj_act(std::get<Mat2>(g), x.as<ProjAngle>().theta)}};
    }
    case SystemId::TwoPoint: {
      int v = x.as<Bit>().value;
      if (auto w = std::get_if<FreeWord>(&g)) return SpacePoint{Bit{v ^ static_cast<int>(w->size() & 1u)}};
      if (std::holds_alternative<Mat2>(g)) return x;
      if (auto s = std::get_if<BlockSwap>(&g)) return SpacePoint{Bit{s->swap ? 1 - v : v}};
      fail(ErrorKind::IncompatibleSystem, "word pairs do not act on two_point");
    }
    case SystemId::SkewEx6: {
      need(GroupKind::F2);
      const auto& p = x.as<PointPair>();
      int eps = p.parts[0].as<Bit>().value;
      FreeWord z = p.parts[1].as<WordPrefix>().word;
      const auto& w = std::get<FreeWord>(g);
      for (auto it = w.letters.rbegin(); it != w.letters.rend(); ++it) skew_letter(*it, eps, z);
      return make_pair_point(SpacePoint{Bit{eps}}, SpacePoint{WordPrefix{std::move(z)}});
    }
    case SystemId::AddingEx7: {
      need(GroupKind::F2);
      const auto& p = x.as<PointPair>();
      BitSeq eps = p.parts[0].as<BitSeq>();
      FreeWord z = p.parts[1].as<WordPrefix>().word;
      const auto& w = std::get<FreeWord>(g);
      for (auto it = w.letters.rbegin(); it != w.letters.rend(); ++it) adding_letter(*it, eps, z);
      return make_pair_point(SpacePoint{eps}, SpacePoint{WordPrefix{std::move(z)}});
    }
    case SystemId::DoubleProjEx8: {
      need(GroupKind::BlockSwapGroup);
      const auto& s = std::get<BlockSwap>(g);
      const auto& p = x.as<Tagged>();
      // diag: (v,0) -> (Av,0), (0,w) -> (0,Bw); swap: (v,0) -> (0,Bv), (0,w) -> (Aw,0)
      const Mat2& m = s.swap ? (p.copy == 1 ? s.b : s.a) : (p.copy == 1 ? s.a : s.b);
      int copy = s.swap ? 3 - p.copy : p.copy;
      return SpacePoint{Tagged{copy, proj_act(m, p.theta)}};
    }
    case SystemId::Trivial: return x;
    case SystemId::Product: {
      const auto& p = x.as<PointPair>();
      if (sys.factorwise) {
        need(GroupKind::F2xF2);
        const auto& w = std::get<WordPair>(g);
        return make_pair_point(act(sys.parts[0], w.first, p.parts[0]), act(sys.parts[1], w.second, p.parts[1]));
      }
      return make_pair_point(act(sys.parts[0], g, p.parts[0]), act(sys.parts[1], g, p.parts[1]));
    }
  }
  fail(ErrorKind::NotCatalog, "unknown system");
}

}  // namespace detail

/// g . x for a catalog system.
inline SpacePoint act(const SystemHandle& sys, const GroupElement& g, const SpacePoint& x) {
  return detail::act_impl(sys, g, x);
}

// ---------------------------------------------------------------------------
// Factor maps.

inline std::vector<FactorMap> declared_factors(const SystemHandle& sys) {
  std::vector<FactorMap> out;
  out.push_back({"identity", {sys}});
  auto two = SystemHandle::make(SystemId::TwoPoint);
  switch (sys.id) {
    case SystemId::RayCircle: out.push_back({"mod_pi", {SystemHandle::make(SystemId::ProjLine)}}); break;
    case SystemId::SkewEx6: out.push_back({"first", {two}}); break;
    case SystemId::AddingEx7: out.push_back({"first_bit", {two}}); break;
    case SystemId::DoubleProjEx8: out.push_back({"tag", {two}}); break;
    case SystemId::Product:
      out.push_back({"proj0", {sys.parts[0]}});
      out.push_back({"proj1", {sys.parts[1]}});
      break;
    default: break;
  }
  if (sys.id != SystemId::Trivial) out.push_back({"collapse", {SystemHandle::make(SystemId::Trivial)}});
  return out;
}

inline const FactorMap& find_factor(const std::vector<FactorMap>& fs, std::string_view id) {
  for (const auto& f : fs)
    if (f.id == id) return f;
  fail(ErrorKind::Unregistered, "undeclared factor map '" + std::string(id) + "'");
}

inline SystemHandle factor_target(const SystemHandle& sys, std::string_view id) {
  return find_factor(declared_factors(sys), id).target.front();
}

inline SpacePoint apply_factor(const SystemHandle& sys, std::string_view id, const SpacePoint& x) {
  find_factor(declared_factors(sys), id);
  if (id == "identity") return x;
  if (id == "collapse") return SpacePoint{Unit{}};
  if (id == "mod_pi") return SpacePoint{ProjAngle{wrap(x.as<RayAngle>().theta, kPi)}};
  if (id == "first") return x.as<PointPair>().parts[0];
  if (id == "first_bit") return SpacePoint{Bit{x.as<PointPair>().parts[0].as<BitSeq>().first()}};
  if (id == "tag") return SpacePoint{Bit{x.as<Tagged>().copy - 1}};
  if (id == "proj0") return x.as<PointPair>().parts[0];
  if (id == "proj1") return x.as<PointPair>().parts[1];
  fail(ErrorKind::Unregistered, "factor map '" + std::string(id) + "'");
}

// ---------------------------------------------------------------------------
// Point comparison (exact for symbolic coordinates, angular tolerance otherwise).

inline double circle_gap(double x, double y, double period) {
  double d = std::fabs(wrap(x - y, period));
  return std::min(d, period - d);
}

inline bool same_point(const SpacePoint& x, const SpacePoint& y, double tol = 1e-9) {
  if (x.value.index() != y.value.index()) return false;
  return std::visit(
      [&](const auto& a) -> bool {
        using T = std::decay_t<decltype(a)>;
        const auto& b = std::get<T>(y.value);
        if constexpr (std::is_same_v<T, RayAngle>) return circle_gap(a.theta, b.theta, kTwoPi) <= tol;
        else if constexpr (std::is_same_v<T, ProjAngle>) return circle_gap(a.theta, b.theta, kPi) <= tol;
        else if constexpr (std::is_same_v<T, WordPrefix>) return a.word == b.word;
        else if constexpr (std::is_same_v<T, Bit>) return a.value == b.value;
        else if constexpr (std::is_same_v<T, BitSeq>) return a.bits == b.bits && a.depth == b.depth;
        else if constexpr (std::is_same_v<T, Tagged>) return a.copy == b.copy && circle_gap(a.theta, b.theta, kPi) <= tol;
        else if constexpr (std::is_same_v<T, PointPair>)
          return same_point(a.parts[0], b.parts[0], tol) && same_point(a.parts[1], b.parts[1], tol);
        else return true;
      },
      x.value);
}

}  // namespace statwalk
