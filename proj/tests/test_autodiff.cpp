#include "swingid/autodiff/jet.hpp"
#include "swingid/autodiff/tape.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <functional>
#include <random>

using namespace swingid::ad;
using Catch::Approx;
using Eigen::MatrixXd;

namespace {

double rel_err(double a, double b) { return std::abs(a - b) / std::max(1.0, std::max(std::abs(a), std::abs(b))); }

// Central differences of a scalar function of one matrix.
MatrixXd fd_gradient(const std::function<double(const MatrixXd&)>& f, MatrixXd x, double h = 1e-6) {
  MatrixXd g(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double x0 = x(i);
    x(i) = x0 + h;
    const double fp = f(x);
    x(i) = x0 - h;
    const double fm = f(x);
    x(i) = x0;
    g(i) = (fp - fm) / (2.0 * h);
  }
  return g;
}

struct Poly {
  double c[5];
  Jet2 operator()(const Jet2& t) const {
    Jet2 acc(c[4]);
    for (int i = 3; i >= 0; --i) acc = acc * t + Jet2(c[i]);
    return acc;
  }
  double value(double t) const { return (((c[4] * t + c[3]) * t + c[2]) * t + c[1]) * t + c[0]; }
  double d1(double t) const { return ((4 * c[4] * t + 3 * c[3]) * t + 2 * c[2]) * t + c[1]; }
  double d2(double t) const { return (12 * c[4] * t + 6 * c[3]) * t + 2 * c[2]; }
};

}  // namespace

TEST_CASE("jet examples") {
  const Jet2 a = jet_eval([](Jet2 t) { return tanh(t); }, 0.0);
  CHECK(a.value == 0.0);
  CHECK(a.d1 == 1.0);
  CHECK(a.d2 == 0.0);

  const Jet2 b = jet_eval([](Jet2 t) { return t * t; }, 3.0);
  CHECK(b.value == 9.0);
  CHECK(b.d1 == 6.0);
  CHECK(b.d2 == 2.0);
}

TEST_CASE("jet sin(tanh(t)) matches finite differences") {
  const auto f = [](double t) { return std::sin(std::tanh(t)); };
  const double t0 = 0.7, h = 1e-4;
  const Jet2 j = jet_eval([](Jet2 t) { return sin(tanh(t)); }, t0);
  CHECK(std::abs(j.value - f(t0)) < 1e-6);
  CHECK(std::abs(j.d1 - (f(t0 + h) - f(t0 - h)) / (2 * h)) < 1e-5);
  CHECK(std::abs(j.d2 - (f(t0 + h) - 2 * f(t0) + f(t0 - h)) / (h * h)) < 1e-3);
}

TEST_CASE("jet division") {
  const Jet2 q = jet_eval([](Jet2 t) { return Jet2(1.0) / t; }, 2.0);
  CHECK(q.value == Approx(0.5));
  CHECK(q.d1 == Approx(-0.25));
  CHECK(q.d2 == Approx(0.25));
  CHECK_THROWS_AS(Jet2(1.0) / Jet2(0.0), std::domain_error);
}

TEST_CASE("jet Leibniz and chain rule are exact on low-degree polynomials") {
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<int> small(-3, 3);
  for (int trial = 0; trial < 200; ++trial) {
    Poly p{}, q{};
    for (int i = 0; i < 5; ++i) {
      // Integer coefficients keep every intermediate exactly representable.
      p.c[i] = small(rng);
      q.c[i] = i <= 2 ? small(rng) : 0.0;
    }
    const double t = small(rng) * 0.5;
    const Jet2 pt = p(Jet2::variable(t));
    CHECK(pt.value == p.value(t));
    CHECK(pt.d1 == p.d1(t));
    CHECK(pt.d2 == p.d2(t));

    const Jet2 prod = p(Jet2::variable(t)) * q(Jet2::variable(t));
    CHECK(prod.d1 == p.d1(t) * q.value(t) + p.value(t) * q.d1(t));
    CHECK(prod.d2 == p.d2(t) * q.value(t) + 2 * p.d1(t) * q.d1(t) + p.value(t) * q.d2(t));

    // p(q(t)) with deg q <= 2 keeps degree <= 8 but every term stays integral
    // on half-integer grids scaled by powers of two, so equality is exact.
    const Jet2 comp = p(q(Jet2::variable(t)));
    const double qv = q.value(t), qd1 = q.d1(t), qd2 = q.d2(t);
    CHECK(comp.value == p.value(qv));
    CHECK(comp.d1 == p.d1(qv) * qd1);
    CHECK(comp.d2 == p.d2(qv) * qd1 * qd1 + p.d1(qv) * qd2);
  }
}

TEST_CASE("tape gradient examples") {
  Tape tape;
  const Var v = tape.variable(MatrixXd::Constant(1, 1, 3.0));
  const auto g = tape.gradient(square(v));
  REQUIRE(g.size() == 1);
  CHECK(g[0](0, 0) == Approx(6.0));

  Tape lin;
  MatrixXd x(1, 3);
  x << 2.0, -1.0, 0.5;
  const Var w = lin.variable(MatrixXd::Constant(1, 3, 0.3));
  const auto gl = lin.gradient(sum(w * lin.constant(x)));
  CHECK((gl[0] - x).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("tape rejects empty tapes and non-scalar losses") {
  Tape tape;
  CHECK_THROWS(tape.gradient(Var{&tape, 0}));
  const Var v = tape.variable(MatrixXd::Ones(2, 2));
  CHECK_THROWS(tape.gradient(v));
}

TEST_CASE("tape forward values carry input derivatives") {
  Tape tape;
  Eigen::RowVectorXd t(3);
  t << -0.4, 0.1, 0.9;
  const Var x = tape.input(t);
  const Var y = sin(tanh(x)) * x;
  for (int i = 0; i < 3; ++i) {
    const Jet2 ref = jet_eval([](Jet2 s) { return sin(tanh(s)) * s; }, t(i));
    CHECK(y.jet().value(0, i) == Approx(ref.value).epsilon(1e-14));
    CHECK(y.jet().d1(0, i) == Approx(ref.d1).epsilon(1e-14));
    CHECK(y.jet().d2(0, i) == Approx(ref.d2).epsilon(1e-14));
  }
}

// A two-layer network in t whose loss touches all three Taylor components,
// so the reverse sweep exercises the mixed d/dW of u' and u''.
namespace {

struct Net {
  MatrixXd w1, b1, w2, b2, s;
};

double net_loss(const Net& n, const Eigen::RowVectorXd& t, Tape* tape_out = nullptr, std::vector<MatrixXd>* grads = nullptr) {
  Tape tape;
  const Var w1 = tape.variable(n.w1), b1 = tape.variable(n.b1), w2 = tape.variable(n.w2), b2 = tape.variable(n.b2);
  const Var s = tape.variable(n.s);
  const Var h = tanh(tape.add_col(matmul(w1, tape.input(t)), b1));
  const Var u = tape.add_col(matmul(w2, h), b2);
  const Var u0 = tape.component(u, 0), u1 = tape.component(u, 1), u2 = tape.component(u, 2);
  const Var f = tape.mul_col(u2, s) + tape.mul_col(u1, s) / tape.constant(MatrixXd::Constant(u1.value().rows(), u1.value().cols(), 2.0)) +
                sin(u0) - square(u1);
  const Var loss = sum(square(f)) * 0.5;
  if (grads) *grads = tape.gradient(loss);
  (void)tape_out;
  return loss.value()(0, 0);
}

}  // namespace

TEST_CASE("tape gradient matches central differences at 100 random points") {
  std::mt19937_64 rng(2024);
  std::normal_distribution<double> normal(0.0, 0.7);
  auto rnd = [&](Eigen::Index r, Eigen::Index c) { return MatrixXd(MatrixXd::NullaryExpr(r, c, [&] { return normal(rng); })); };
  int checked = 0;
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    Net n{rnd(5, 1), rnd(5, 1), rnd(3, 5), rnd(3, 1), rnd(3, 1)};
    Eigen::RowVectorXd t = Eigen::RowVectorXd::LinSpaced(4, -1.0, 1.0) + rnd(1, 4) * 0.1;
    std::vector<MatrixXd> g;
    net_loss(n, t, nullptr, &g);
    REQUIRE(g.size() == 5);
    MatrixXd* fields[] = {&n.w1, &n.b1, &n.w2, &n.b2, &n.s};
    for (int v = 0; v < 5; ++v) {
      const MatrixXd fd = fd_gradient(
          [&](const MatrixXd& x) {
            Net m = n;
            *(&m.w1 + (fields[v] - &n.w1)) = x;
            return net_loss(m, t);
          },
          *fields[v]);
      for (Eigen::Index i = 0; i < fd.size(); ++i) {
        const double e = rel_err(g[static_cast<std::size_t>(v)](i), fd(i));
        worst = std::max(worst, e);
        ++checked;
      }
    }
  }
  INFO("worst relative error " << worst << " over " << checked << " components");
  CHECK(worst < 1e-4);
}

TEST_CASE("tape elementwise primitives match central differences") {
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> u(0.5, 1.5);
  auto rnd = [&] { return MatrixXd(MatrixXd::NullaryExpr(2, 3, [&] { return u(rng); })); };
  const MatrixXd a0 = rnd(), b0 = rnd();
  const std::function<Var(Tape&, Var, Var)> ops[] = {
      [](Tape&, Var a, Var b) { return a + b; },      [](Tape&, Var a, Var b) { return a - b; },
      [](Tape&, Var a, Var b) { return a * b; },      [](Tape&, Var a, Var b) { return a / b; },
      [](Tape&, Var a, Var b) { return tanh(a) * sin(b); },
      [](Tape& t, Var a, Var b) { return t.scale(square(a), 3.0) - b; },
      [](Tape& t, Var a, Var b) {
        const Var k = t.constant(MatrixXd::Constant(3, 2, 0.7));
        return matmul(a, k) - matmul(b, k);
      },
  };
  for (const auto& op : ops) {
    auto loss = [&](const MatrixXd& a, const MatrixXd& b, std::vector<MatrixXd>* g) {
      Tape tape;
      const Var va = tape.variable(a), vb = tape.variable(b);
      const Var l = sum(square(op(tape, va, vb)));
      if (g) *g = tape.gradient(l);
      return l.value()(0, 0);
    };
    std::vector<MatrixXd> g;
    loss(a0, b0, &g);
    const MatrixXd fa = fd_gradient([&](const MatrixXd& x) { return loss(x, b0, nullptr); }, a0);
    const MatrixXd fb = fd_gradient([&](const MatrixXd& x) { return loss(a0, x, nullptr); }, b0);
    for (Eigen::Index i = 0; i < fa.size(); ++i) {
      CHECK(rel_err(g[0](i), fa(i)) < 1e-6);
      CHECK(rel_err(g[1](i), fb(i)) < 1e-6);
    }
  }
}
