#pragma once

#include <cmath>
#include <stdexcept>

namespace swingid::ad {

/// Truncated second-order Taylor number: value and the first two derivatives
/// with respect to one scalar input.
struct Jet2 {
  double value = 0.0;
  double d1 = 0.0;
  double d2 = 0.0;

  constexpr Jet2() = default;
  constexpr Jet2(double v) : value(v) {}  // NOLINT: constants promote implicitly
  constexpr Jet2(double v, double first, double second) : value(v), d1(first), d2(second) {}

  /// Seed for the independent variable.
  static constexpr Jet2 variable(double t) { return {t, 1.0, 0.0}; }

  constexpr Jet2& operator+=(const Jet2& o) {
    value += o.value;
    d1 += o.d1;
    d2 += o.d2;
    return *this;
  }
  constexpr Jet2& operator-=(const Jet2& o) {
    value -= o.value;
    d1 -= o.d1;
    d2 -= o.d2;
    return *this;
  }
};

constexpr Jet2 operator-(const Jet2& a) { return {-a.value, -a.d1, -a.d2}; }
constexpr Jet2 operator+(Jet2 a, const Jet2& b) { return a += b; }
constexpr Jet2 operator-(Jet2 a, const Jet2& b) { return a -= b; }

constexpr Jet2 operator*(const Jet2& a, const Jet2& b) {
  return {a.value * b.value, a.d1 * b.value + a.value * b.d1, a.d2 * b.value + 2.0 * a.d1 * b.d1 + a.value * b.d2};
}

inline Jet2 reciprocal(const Jet2& b) {
  if (b.value == 0.0) throw std::domain_error("Jet2: division by a zero value");
  const double r = 1.0 / b.value;
  return {r, -b.d1 * r * r, -b.d2 * r * r + 2.0 * b.d1 * b.d1 * r * r * r};
}

inline Jet2 operator/(const Jet2& a, const Jet2& b) { return a * reciprocal(b); }

constexpr Jet2 square(const Jet2& a) { return a * a; }

inline Jet2 tanh(const Jet2& x) {
  const double y = std::tanh(x.value);
  const double s = 1.0 - y * y;
  return {y, s * x.d1, s * x.d2 - 2.0 * y * s * x.d1 * x.d1};
}

inline Jet2 sin(const Jet2& x) {
  const double s = std::sin(x.value);
  const double c = std::cos(x.value);
  return {s, c * x.d1, c * x.d2 - s * x.d1 * x.d1};
}

inline Jet2 cos(const Jet2& x) {
  const double s = std::sin(x.value);
  const double c = std::cos(x.value);
  return {c, -s * x.d1, -s * x.d2 - c * x.d1 * x.d1};
}

/// Value, first and second derivative of `f` at `t0`.
template <typename F>
Jet2 jet_eval(F&& f, double t0) {
  return f(Jet2::variable(t0));
}

}  // namespace swingid::ad
