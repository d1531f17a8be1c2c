#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <boost/multiprecision/cpp_int.hpp>

namespace statwalk {

inline constexpr double kPi = std::numbers::pi;
inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

using Rational = boost::multiprecision::cpp_rational;

inline double to_double(const Rational& q) { return q.convert_to<double>(); }

enum class ErrorKind {
  VariantMismatch,
  IncompatibleSystem,
  InvalidArgument,
  OutOfRange,
  ZeroDensity,
  ZeroMeasure,
  Unregistered,
  NotCatalog,
  NotParabolic,
  InfeasibleBudget,
  MarginalMismatch,
  Parse,
};

inline const char* to_string(ErrorKind k) {
  switch (k) {
    case ErrorKind::VariantMismatch: return "variant_mismatch";
    case ErrorKind::IncompatibleSystem: return "incompatible_system";
    case ErrorKind::InvalidArgument: return "invalid_argument";
    case ErrorKind::OutOfRange: return "out_of_range";
    case ErrorKind::ZeroDensity: return "zero_density";
    case ErrorKind::ZeroMeasure: return "zero_measure";
    case ErrorKind::Unregistered: return "unregistered";
    case ErrorKind::NotCatalog: return "not_catalog";
    case ErrorKind::NotParabolic: return "not_parabolic";
    case ErrorKind::InfeasibleBudget: return "infeasible_budget";
    case ErrorKind::MarginalMismatch: return "marginal_mismatch";
    case ErrorKind::Parse: return "parse";
  }
  return "unknown";
}

/// Every failure raised by the library. `kind()` is stable and machine-checkable.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

// ---------------------------------------------------------------------------
// Random streams. A stream is identified by (master seed, stream id); the
// engine state is derived by splitmix64 so nearby ids give unrelated streams.

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream, std::uint64_t salt = 0) {
  return splitmix64(splitmix64(master ^ splitmix64(salt + 0x51ed2701ULL)) + stream);
}

class Rng {
 public:
  Rng(std::uint64_t master, std::uint64_t stream, std::uint64_t salt = 0)
      : engine_(derive_seed(master, stream, salt)) {}

  // Bit-level conversions so the draws do not depend on the standard library's
  // distribution implementations.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  std::uint64_t below(std::uint64_t n) { return engine_() % n; }
  double exponential(double rate) { return -std::log1p(-uniform()) / rate; }
  std::uint64_t bits() { return engine_(); }

  /// Index drawn from a discrete weight vector (weights need not be normalized).
  std::size_t categorical(const std::vector<double>& w) {
    double total = 0.0;
    for (double x : w) total += x;
    double u = uniform() * total;
    for (std::size_t i = 0; i < w.size(); ++i) {
      if (u < w[i]) return i;
      u -= w[i];
    }
    return w.size() - 1;
  }

 private:
  std::mt19937_64 engine_;
};

// ---------------------------------------------------------------------------
// Deterministic parallel map: results are stored by index, so any reduction
// done afterwards in index order is independent of the thread count.

inline int& default_threads() {
  static int n = 1;
  return n;
}

template <class T, class F>
std::vector<T> parallel_map(std::size_t count, F&& fn, int threads = 0) {
  std::vector<T> out(count);
  int nt = threads > 0 ? threads : default_threads();
  nt = std::max(1, std::min<int>(nt, static_cast<int>(std::max<std::size_t>(count, 1))));
  if (nt == 1) {
    for (std::size_t i = 0; i < count; ++i) out[i] = fn(i);
    return out;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(nt);
  for (int t = 0; t < nt; ++t) {
    pool.emplace_back([&, t] {
      try {
        for (std::size_t i = t; i < count; i += nt) out[i] = fn(i);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

inline double wrap(double x, double period) {
  double r = std::fmod(x, period);
  if (r < 0) r += period;
  if (r >= period) r -= period;
  return r;
}

}  // namespace statwalk
