#pragma once

#include <charconv>
#include <cmath>
#include <compare>
#include <cstdint>
#include <limits>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>

#include "markov_mimic/error.hpp"

namespace markov_mimic {

namespace detail {

using i128 = __int128;

inline i128 abs128(i128 v) { return v < 0 ? -v : v; }

inline i128 gcd128(i128 a, i128 b) {
  a = abs128(a);
  b = abs128(b);
  while (b != 0) {
    i128 t = a % b;
    a = b;
    b = t;
  }
  return a;
}

inline std::int64_t narrow(i128 v) {
  if (v > std::numeric_limits<std::int64_t>::max() ||
      v < std::numeric_limits<std::int64_t>::min())
    throw Error("rational overflow");
  return static_cast<std::int64_t>(v);
}

}  // namespace detail

/// Exact fraction num/den, den > 0, always in lowest terms.
class Rational {
 public:
  constexpr Rational() noexcept = default;
  constexpr Rational(std::int64_t n) noexcept : num_(n) {}  // NOLINT
  Rational(std::int64_t n, std::int64_t d) { assign(n, d); }

  std::int64_t num() const noexcept { return num_; }
  std::int64_t den() const noexcept { return den_; }

  double to_double() const noexcept {
    return static_cast<double>(num_) / static_cast<double>(den_);
  }

  bool is_integer() const noexcept { return den_ == 1; }

  std::int64_t floor() const noexcept {
    if (num_ >= 0) return num_ / den_;
    return -((-num_ + den_ - 1) / den_);
  }
  std::int64_t ceil() const noexcept { return -(Rational(-num_, den_).floor()); }

  Rational abs() const noexcept {
    Rational r = *this;
    if (r.num_ < 0) r.num_ = -r.num_;
    return r;
  }

  /// "p/q", or "p" for integers.
  std::string str() const {
    if (den_ == 1) return std::to_string(num_);
    return std::to_string(num_) + "/" + std::to_string(den_);
  }

  /// Parses "p/q", "p", or a terminating decimal such as "0.25".
  static Rational parse(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
    if (s.empty()) throw Error("rational: empty string");
    auto slash = s.find('/');
    if (slash != std::string_view::npos) {
      auto n = parse_int(s.substr(0, slash));
      auto d = parse_int(s.substr(slash + 1));
      if (d == 0) throw Error("rational: zero denominator in '" + std::string(s) + "'");
      return Rational(n, d);
    }
    auto dot = s.find('.');
    if (dot == std::string_view::npos) return Rational(parse_int(s));
    std::string_view whole = s.substr(0, dot);
    std::string_view frac = s.substr(dot + 1);
    bool neg = !whole.empty() && whole.front() == '-';
    if (neg) whole.remove_prefix(1);
    if (frac.size() > 17) throw Error("rational: too many decimals in '" + std::string(s) + "'");
    std::int64_t scale = 1;
    for (std::size_t i = 0; i < frac.size(); ++i) scale *= 10;
    std::int64_t w = whole.empty() ? 0 : parse_int(whole);
    std::int64_t f = frac.empty() ? 0 : parse_int(frac);
    Rational r = Rational(w) + Rational(f, scale);
    return neg ? -r : r;
  }

  Rational operator-() const { return make(-static_cast<detail::i128>(num_), den_); }

  friend Rational operator+(const Rational& x, const Rational& y) {
    using detail::i128;
    return make(i128(x.num_) * y.den_ + i128(y.num_) * x.den_, i128(x.den_) * y.den_);
  }
  friend Rational operator-(const Rational& x, const Rational& y) {
    using detail::i128;
    return make(i128(x.num_) * y.den_ - i128(y.num_) * x.den_, i128(x.den_) * y.den_);
  }
  friend Rational operator*(const Rational& x, const Rational& y) {
    using detail::i128;
    return make(i128(x.num_) * y.num_, i128(x.den_) * y.den_);
  }
  friend Rational operator/(const Rational& x, const Rational& y) {
    using detail::i128;
    if (y.num_ == 0) throw Error("rational: division by zero");
    return make(i128(x.num_) * y.den_, i128(x.den_) * y.num_);
  }
  Rational& operator+=(const Rational& o) { return *this = *this + o; }
  Rational& operator-=(const Rational& o) { return *this = *this - o; }
  Rational& operator*=(const Rational& o) { return *this = *this * o; }
  Rational& operator/=(const Rational& o) { return *this = *this / o; }

  friend bool operator==(const Rational&, const Rational&) = default;
  friend std::strong_ordering operator<=>(const Rational& x, const Rational& y) {
    using detail::i128;
    i128 l = i128(x.num_) * y.den_;
    i128 r = i128(y.num_) * x.den_;
    if (l < r) return std::strong_ordering::less;
    if (l > r) return std::strong_ordering::greater;
    return std::strong_ordering::equal;
  }

  friend std::ostream& operator<<(std::ostream& os, const Rational& r) { return os << r.str(); }

 private:
  static std::int64_t parse_int(std::string_view s) {
    std::int64_t v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size())
      throw Error("rational: cannot parse '" + std::string(s) + "'");
    return v;
  }

  static Rational make(detail::i128 n, detail::i128 d) {
    if (d == 0) throw Error("rational: zero denominator");
    if (d < 0) {
      n = -n;
      d = -d;
    }
    detail::i128 g = detail::gcd128(n, d);
    if (g > 1) {
      n /= g;
      d /= g;
    }
    Rational r;
    r.num_ = detail::narrow(n);
    r.den_ = detail::narrow(d);
    return r;
  }

  void assign(std::int64_t n, std::int64_t d) { *this = make(n, d); }

  std::int64_t num_ = 0;
  std::int64_t den_ = 1;
};

inline Rational min(const Rational& a, const Rational& b) { return b < a ? b : a; }
inline Rational max(const Rational& a, const Rational& b) { return a < b ? b : a; }

inline std::int64_t lcm_checked(std::int64_t a, std::int64_t b) {
  if (a == 0 || b == 0) return 0;
  detail::i128 g = detail::gcd128(a, b);
  return detail::narrow(detail::abs128(detail::i128(a) / g * b));
}

/// Closest fraction p/q to x with q <= max_den (continued fractions).
inline Rational best_approximation(double x, std::int64_t max_den) {
  if (!std::isfinite(x)) throw Error("best_approximation: non-finite value");
  if (max_den < 1) throw Error("best_approximation: max_den < 1");
  bool neg = x < 0;
  long double v = neg ? -static_cast<long double>(x) : static_cast<long double>(x);
  std::int64_t p0 = 0, q0 = 1, p1 = 1, q1 = 0;
  long double rem = v;
  for (int it = 0; it < 64; ++it) {
    long double a_ld = std::floor(rem);
    if (a_ld > 4e18L) break;
    auto a = static_cast<std::int64_t>(a_ld);
    detail::i128 q2 = detail::i128(q0) + detail::i128(a) * q1;
    if (q2 > max_den) {
      std::int64_t k = q1 == 0 ? 0 : (max_den - q0) / q1;
      Rational c1(p1, q1);
      Rational c2(p0 + k * p1, q0 + k * q1);
      long double d1 = std::fabs(static_cast<long double>(c1.to_double()) - v);
      long double d2 = std::fabs(static_cast<long double>(c2.to_double()) - v);
      Rational best = d2 < d1 ? c2 : c1;
      return neg ? -best : best;
    }
    detail::i128 p2 = detail::i128(p0) + detail::i128(a) * p1;
    p0 = p1;
    q0 = q1;
    p1 = detail::narrow(p2);
    q1 = detail::narrow(q2);
    long double frac = rem - a_ld;
    if (frac < 1e-18L) break;
    rem = 1.0L / frac;
  }
  Rational best(p1, q1);
  return neg ? -best : best;
}

/// The rational with denominator <= max_den that x is within tol of, if any.
inline std::optional<Rational> exact_rational(double x, std::int64_t max_den, double tol = 1e-12) {
  Rational r = best_approximation(x, max_den);
  if (std::fabs(r.to_double() - x) <= tol) return r;
  return std::nullopt;
}

/// Smallest multiple of 1/D that is >= x (with a 1e-9 tolerance in lattice units).
inline Rational ceil_to_lattice(double x, std::int64_t D) {
  double u = x * static_cast<double>(D);
  auto c = static_cast<std::int64_t>(std::ceil(u - 1e-9));
  return Rational(c, D);
}

}  // namespace markov_mimic
