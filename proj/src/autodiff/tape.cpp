#include "swingid/autodiff/tape.hpp"

#include <sstream>
#include <string>

namespace swingid::ad {

namespace {

using Eigen::MatrixXd;

void require_same_shape(const JetMatrix& a, const JetMatrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    std::ostringstream msg;
    msg << "tape " << op << ": shape mismatch " << a.rows() << "x" << a.cols() << " vs " << b.rows() << "x"
        << b.cols();
    throw std::invalid_argument(msg.str());
  }
}

// Adds `delta` into `target`, allocating zeros on first touch.
template <typename Expr>
void accumulate(MatrixXd& target, const Expr& delta) {
  if (target.size() == 0) {
    target = delta;
  } else {
    target.noalias() += delta;
  }
}

// target += alpha * lhs * rhs without a temporary.
// Thin inner dimensions go through the coefficient-wise kernel, which beats
// the blocked GEMM path there.
template <typename Lhs, typename Rhs>
void accumulate_product(MatrixXd& target, const Lhs& lhs, const Rhs& rhs, double alpha = 1.0) {
  const bool thin = lhs.cols() <= 8;
  if (thin) {
    // A column-major copy of the small factor keeps the kernel vectorized
    // when the caller passes a transpose.
    const MatrixXd l = alpha * lhs;
    if (target.size() == 0) {
      target.noalias() = l.lazyProduct(rhs);
    } else {
      target.noalias() += l.lazyProduct(rhs);
    }
  } else if (target.size() == 0) {
    target.resize(lhs.rows(), rhs.cols());
    target.noalias() = alpha * lhs * rhs;
  } else {
    target.noalias() += alpha * lhs * rhs;
  }
}

// tanh through the vectorized exponential.
Eigen::ArrayXXd fast_tanh(const Eigen::ArrayXXd& x) {
  const Eigen::ArrayXXd e = (-2.0 * x.abs()).exp();
  return ((1.0 - e) / (1.0 + e)) * x.sign();
}

// Adjoint of one node, components allocated lazily.
struct Adjoint {
  MatrixXd g[3];
  bool touched() const { return g[0].size() != 0 || g[1].size() != 0 || g[2].size() != 0; }
  // Component k, or an empty matrix if never touched.
  const MatrixXd& at(int k) const { return g[k]; }
};

bool has(const MatrixXd& m) { return m.size() != 0; }

}  // namespace

MatrixXd JetMatrix::component(int k) const {
  if (k == 0) return value;
  if (!time_varying()) return MatrixXd::Zero(value.rows(), value.cols());
  return k == 1 ? d1 : d2;
}

Var Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var{this, nodes_.size() - 1};
}

void Tape::check(Var v) const {
  if (v.tape != this || v.id >= nodes_.size()) throw std::invalid_argument("tape: variable belongs to another tape");
}

void Tape::clear() {
  nodes_.clear();
  variables_.clear();
}

Var Tape::variable(MatrixXd value) {
  Node n{Op::Variable};
  n.out.value = std::move(value);
  n.k = static_cast<int>(variables_.size());
  variables_.push_back(nodes_.size());
  return push(std::move(n));
}

Var Tape::constant(MatrixXd value) {
  Node n{Op::Constant};
  n.out.value = std::move(value);
  return push(std::move(n));
}

Var Tape::constant(JetMatrix value) {
  Node n{Op::Constant};
  n.out = std::move(value);
  return push(std::move(n));
}

Var Tape::input(const Eigen::RowVectorXd& t) {
  JetMatrix j;
  j.value = t;
  j.d1 = MatrixXd::Ones(1, t.size());
  j.d2 = MatrixXd::Zero(1, t.size());
  return constant(std::move(j));
}

Var Tape::add(Var a, Var b) {
  check(a);
  check(b);
  const auto& x = jet(a);
  const auto& y = jet(b);
  require_same_shape(x, y, "add");
  Node n{Op::Add, a.id, b.id};
  n.out.value = x.value + y.value;
  if (x.time_varying() && y.time_varying()) {
    n.out.d1 = x.d1 + y.d1;
    n.out.d2 = x.d2 + y.d2;
  } else if (x.time_varying()) {
    n.out.d1 = x.d1;
    n.out.d2 = x.d2;
  } else if (y.time_varying()) {
    n.out.d1 = y.d1;
    n.out.d2 = y.d2;
  }
  return push(std::move(n));
}

Var Tape::sub(Var a, Var b) {
  check(a);
  check(b);
  const auto& x = jet(a);
  const auto& y = jet(b);
  require_same_shape(x, y, "sub");
  Node n{Op::Sub, a.id, b.id};
  n.out.value = x.value - y.value;
  if (x.time_varying() && y.time_varying()) {
    n.out.d1 = x.d1 - y.d1;
    n.out.d2 = x.d2 - y.d2;
  } else if (x.time_varying()) {
    n.out.d1 = x.d1;
    n.out.d2 = x.d2;
  } else if (y.time_varying()) {
    n.out.d1 = -y.d1;
    n.out.d2 = -y.d2;
  }
  return push(std::move(n));
}

Var Tape::mul(Var a, Var b) {
  check(a);
  check(b);
  const auto& x = jet(a);
  const auto& y = jet(b);
  require_same_shape(x, y, "mul");
  Node n{Op::Mul, a.id, b.id};
  n.out.value = x.value.cwiseProduct(y.value);
  if (x.time_varying() && y.time_varying()) {
    n.out.d1 = x.d1.cwiseProduct(y.value) + x.value.cwiseProduct(y.d1);
    n.out.d2 = x.d2.cwiseProduct(y.value) + 2.0 * x.d1.cwiseProduct(y.d1) + x.value.cwiseProduct(y.d2);
  } else if (x.time_varying()) {
    n.out.d1 = x.d1.cwiseProduct(y.value);
    n.out.d2 = x.d2.cwiseProduct(y.value);
  } else if (y.time_varying()) {
    n.out.d1 = x.value.cwiseProduct(y.d1);
    n.out.d2 = x.value.cwiseProduct(y.d2);
  }
  return push(std::move(n));
}

Var Tape::recip(Var v) {
  check(v);
  const auto& y = jet(v);
  if ((y.value.array() == 0.0).any()) throw std::domain_error("tape div: zero denominator");
  Node n{Op::Recip, v.id};
  const Eigen::ArrayXXd r = y.value.array().inverse();
  n.out.value = r.matrix();
  if (y.time_varying()) {
    const Eigen::ArrayXXd r2 = r.square();
    n.out.d1 = (-y.d1.array() * r2).matrix();
    n.out.d2 = (-y.d2.array() * r2 + 2.0 * y.d1.array().square() * r2 * r).matrix();
  }
  return push(std::move(n));
}

Var Tape::div(Var a, Var b) { return mul(a, recip(b)); }

Var Tape::matmul(Var a, Var b) {
  check(a);
  check(b);
  const auto& x = jet(a);
  const auto& y = jet(b);
  if (x.cols() != y.rows()) {
    std::ostringstream msg;
    msg << "tape matmul: inner dimensions " << x.cols() << " and " << y.rows() << " differ";
    throw std::invalid_argument(msg.str());
  }
  Node n{Op::MatMul, a.id, b.id};
  accumulate_product(n.out.value, x.value, y.value);
  if (x.time_varying() || y.time_varying()) {
    if (y.time_varying()) {
      accumulate_product(n.out.d1, x.value, y.d1);
      accumulate_product(n.out.d2, x.value, y.d2);
    }
    if (x.time_varying()) {
      accumulate_product(n.out.d1, x.d1, y.value);
      accumulate_product(n.out.d2, x.d2, y.value);
      if (y.time_varying()) accumulate_product(n.out.d2, x.d1, y.d1, 2.0);
    }
  }
  return push(std::move(n));
}

Var Tape::broadcast(Var xv, Var cv, Op op) {
  check(xv);
  check(cv);
  const auto& x = jet(xv);
  const auto& c = jet(cv);
  if (c.cols() != 1 || c.rows() != x.rows()) throw std::invalid_argument("tape broadcast: expected a matching column");
  Node n{op, xv.id, cv.id};
  const bool tv = x.time_varying() || c.time_varying();
  if (op == Op::AddCol) {
    n.out.value = x.value.colwise() + c.value.col(0);
    if (x.time_varying() && c.time_varying()) {
      n.out.d1 = x.d1.colwise() + c.d1.col(0);
      n.out.d2 = x.d2.colwise() + c.d2.col(0);
    } else if (x.time_varying()) {
      n.out.d1 = x.d1;
      n.out.d2 = x.d2;
    } else if (tv) {
      n.out.d1 = c.d1.replicate(1, x.cols());
      n.out.d2 = c.d2.replicate(1, x.cols());
    }
  } else {
    auto times = [](const MatrixXd& m, const MatrixXd& col) -> MatrixXd {
      return m.array().colwise() * col.col(0).array();
    };
    n.out.value = times(x.value, c.value);
    if (x.time_varying() && c.time_varying()) {
      n.out.d1 = times(x.d1, c.value) + times(x.value, c.d1);
      n.out.d2 = times(x.d2, c.value) + 2.0 * times(x.d1, c.d1) + times(x.value, c.d2);
    } else if (x.time_varying()) {
      n.out.d1 = times(x.d1, c.value);
      n.out.d2 = times(x.d2, c.value);
    } else if (tv) {
      n.out.d1 = times(x.value, c.d1);
      n.out.d2 = times(x.value, c.d2);
    }
  }
  return push(std::move(n));
}

Var Tape::add_col(Var x, Var c) { return broadcast(x, c, Op::AddCol); }
Var Tape::mul_col(Var x, Var c) { return broadcast(x, c, Op::MulCol); }

Var Tape::scale(Var v, double factor) {
  check(v);
  const auto& x = jet(v);
  Node n{Op::Scale, v.id};
  n.scalar = factor;
  n.out.value = factor * x.value;
  if (x.time_varying()) {
    n.out.d1 = factor * x.d1;
    n.out.d2 = factor * x.d2;
  }
  return push(std::move(n));
}

Var Tape::tanh(Var v) {
  check(v);
  const auto& x = jet(v);
  Node n{Op::Tanh, v.id};
  const Eigen::ArrayXXd y = fast_tanh(x.value.array());
  n.out.value = y.matrix();
  if (x.time_varying()) {
    const Eigen::ArrayXXd s = 1.0 - y.square();
    const auto x1 = x.d1.array();
    n.out.d1 = (s * x1).matrix();
    n.out.d2 = (s * x.d2.array() - 2.0 * y * s * x1.square()).matrix();
  }
  return push(std::move(n));
}

Var Tape::sin(Var v) {
  check(v);
  const auto& x = jet(v);
  Node n{Op::Sin, v.id};
  const Eigen::ArrayXXd s = x.value.array().sin();
  n.out.value = s.matrix();
  if (x.time_varying()) {
    const Eigen::ArrayXXd c = x.value.array().cos();
    n.out.d1 = (c * x.d1.array()).matrix();
    n.out.d2 = (c * x.d2.array() - s * x.d1.array().square()).matrix();
  }
  return push(std::move(n));
}

Var Tape::square(Var v) {
  check(v);
  const auto& x = jet(v);
  Node n{Op::Square, v.id};
  n.out.value = x.value.array().square().matrix();
  if (x.time_varying()) {
    n.out.d1 = (2.0 * x.value.array() * x.d1.array()).matrix();
    n.out.d2 = (2.0 * x.d1.array().square() + 2.0 * x.value.array() * x.d2.array()).matrix();
  }
  return push(std::move(n));
}

Var Tape::sum(Var v) {
  check(v);
  const auto& x = jet(v);
  Node n{Op::Sum, v.id};
  n.out.value = MatrixXd::Constant(1, 1, x.value.sum());
  if (x.time_varying()) {
    n.out.d1 = MatrixXd::Constant(1, 1, x.d1.sum());
    n.out.d2 = MatrixXd::Constant(1, 1, x.d2.sum());
  }
  return push(std::move(n));
}

Var Tape::component(Var v, int k) {
  check(v);
  if (k < 0 || k > 2) throw std::invalid_argument("tape component: index must be 0, 1 or 2");
  Node n{Op::Component, v.id};
  n.k = k;
  n.out.value = jet(v).component(k);
  return push(std::move(n));
}

std::vector<MatrixXd> Tape::gradient(Var loss) const {
  if (nodes_.empty()) throw std::logic_error("tape gradient: tape is empty");
  check(loss);
  const auto& l = jet(loss);
  if (l.rows() != 1 || l.cols() != 1) throw std::invalid_argument("tape gradient: loss is not a scalar");

  std::vector<Adjoint> adj(loss.id + 1);
  adj[loss.id].g[0] = MatrixXd::Ones(1, 1);

  for (std::size_t i = loss.id + 1; i-- > 0;) {
    const Adjoint& g = adj[i];
    if (!g.touched()) continue;
    const Node& node = nodes_[i];
    const JetMatrix& out = node.out;
    const Eigen::Index R = out.rows(), C = out.cols();
    const MatrixXd& g0 = g.at(0);
    const MatrixXd& g1 = g.at(1);
    const MatrixXd& g2 = g.at(2);

    // Accumulates into component k of the adjoint of node `target` if that
    // node carries component k.
    auto add_to = [&](std::size_t target, int k, const auto& delta) {
      const JetMatrix& t = nodes_[target].out;
      if (k > 0 && !t.time_varying()) return;
      accumulate(adj[target].g[k], delta);
    };
    auto add_product = [&](std::size_t target, int k, const auto& lhs, const auto& rhs, double alpha) {
      if (k > 0 && !nodes_[target].out.time_varying()) return;
      accumulate_product(adj[target].g[k], lhs, rhs, alpha);
    };

    switch (node.op) {
      case Op::Variable:
      case Op::Constant: break;
      case Op::Add:
      case Op::Sub: {
        const double sign = node.op == Op::Add ? 1.0 : -1.0;
        for (int k = 0; k < 3; ++k) {
          if (!has(g.at(k))) continue;
          add_to(node.a, k, g.at(k));
          add_to(node.b, k, sign * g.at(k));
        }
        break;
      }
      case Op::Scale: {
        for (int k = 0; k < 3; ++k) {
          if (has(g.at(k))) add_to(node.a, k, node.scalar * g.at(k));
        }
        break;
      }
      case Op::Mul: {
        const JetMatrix& x = nodes_[node.a].out;
        const JetMatrix& y = nodes_[node.b].out;
        auto partial = [&](const JetMatrix& self, const JetMatrix& other, std::size_t target) {
          MatrixXd t0 = MatrixXd::Zero(R, C);
          if (has(g0)) t0 += g0.cwiseProduct(other.value);
          if (other.time_varying()) {
            if (has(g1)) t0 += g1.cwiseProduct(other.d1);
            if (has(g2)) t0 += g2.cwiseProduct(other.d2);
          }
          add_to(target, 0, t0);
          if (!self.time_varying()) return;
          MatrixXd t1 = MatrixXd::Zero(R, C);
          if (has(g1)) t1 += g1.cwiseProduct(other.value);
          if (has(g2) && other.time_varying()) t1 += 2.0 * g2.cwiseProduct(other.d1);
          add_to(target, 1, t1);
          if (has(g2)) add_to(target, 2, g2.cwiseProduct(other.value));
        };
        partial(x, y, node.a);
        partial(y, x, node.b);
        break;
      }
      case Op::Recip: {
        const JetMatrix& y = nodes_[node.a].out;
        const Eigen::ArrayXXd r = out.value.array();
        const Eigen::ArrayXXd r2 = r.square();
        Eigen::ArrayXXd t0 = Eigen::ArrayXXd::Zero(R, C);
        if (has(g0)) t0 -= g0.array() * r2;
        if (y.time_varying()) {
          const auto y1 = y.d1.array();
          const auto y2 = y.d2.array();
          if (has(g1)) t0 += g1.array() * 2.0 * y1 * r2 * r;
          if (has(g2)) t0 += g2.array() * (2.0 * y2 * r2 * r - 6.0 * y1.square() * r2 * r2);
          Eigen::ArrayXXd t1 = Eigen::ArrayXXd::Zero(R, C);
          if (has(g1)) t1 -= g1.array() * r2;
          if (has(g2)) t1 += g2.array() * 4.0 * y1 * r2 * r;
          add_to(node.a, 1, t1.matrix());
          if (has(g2)) add_to(node.a, 2, (-g2.array() * r2).matrix());
        }
        add_to(node.a, 0, t0.matrix());
        break;
      }
      case Op::MatMul: {
        const JetMatrix& x = nodes_[node.a].out;
        const JetMatrix& y = nodes_[node.b].out;
        if (has(g0)) {
          add_product(node.a, 0, g0, y.value.transpose(), 1.0);
          add_product(node.b, 0, x.value.transpose(), g0, 1.0);
        }
        if (has(g1)) {
          if (y.time_varying()) add_product(node.a, 0, g1, y.d1.transpose(), 1.0);
          add_product(node.a, 1, g1, y.value.transpose(), 1.0);
          if (x.time_varying()) add_product(node.b, 0, x.d1.transpose(), g1, 1.0);
          add_product(node.b, 1, x.value.transpose(), g1, 1.0);
        }
        if (has(g2)) {
          if (y.time_varying()) {
            add_product(node.a, 0, g2, y.d2.transpose(), 1.0);
            add_product(node.a, 1, g2, y.d1.transpose(), 2.0);
          }
          add_product(node.a, 2, g2, y.value.transpose(), 1.0);
          if (x.time_varying()) {
            add_product(node.b, 0, x.d2.transpose(), g2, 1.0);
            add_product(node.b, 1, x.d1.transpose(), g2, 2.0);
          }
          add_product(node.b, 2, x.value.transpose(), g2, 1.0);
        }
        break;
      }
      case Op::AddCol: {
        for (int k = 0; k < 3; ++k) {
          if (!has(g.at(k))) continue;
          add_to(node.a, k, g.at(k));
          add_to(node.b, k, g.at(k).rowwise().sum());
        }
        break;
      }
      case Op::MulCol: {
        const JetMatrix& x = nodes_[node.a].out;
        const JetMatrix& c = nodes_[node.b].out;
        // Broadcast c to a full matrix and reuse the elementwise product rule.
        const MatrixXd cv = c.value.col(0).replicate(1, C);
        const MatrixXd c1 = c.time_varying() ? MatrixXd(c.d1.col(0).replicate(1, C)) : MatrixXd();
        const MatrixXd c2 = c.time_varying() ? MatrixXd(c.d2.col(0).replicate(1, C)) : MatrixXd();
        auto term = [&](const MatrixXd& gk, const MatrixXd& factor) -> MatrixXd {
          return has(gk) && has(factor) ? MatrixXd(gk.cwiseProduct(factor)) : MatrixXd::Zero(R, C);
        };
        // Into x.
        add_to(node.a, 0, term(g0, cv) + term(g1, c1) + term(g2, c2));
        if (x.time_varying()) {
          add_to(node.a, 1, term(g1, cv) + 2.0 * term(g2, c1));
          add_to(node.a, 2, term(g2, cv));
        }
        // Into c, summed over the broadcast columns.
        const MatrixXd x1 = x.time_varying() ? x.d1 : MatrixXd();
        const MatrixXd x2 = x.time_varying() ? x.d2 : MatrixXd();
        add_to(node.b, 0, (term(g0, x.value) + term(g1, x1) + term(g2, x2)).rowwise().sum());
        if (c.time_varying()) {
          add_to(node.b, 1, (term(g1, x.value) + 2.0 * term(g2, x1)).rowwise().sum());
          add_to(node.b, 2, term(g2, x.value).rowwise().sum());
        }
        break;
      }
      case Op::Tanh: {
        const JetMatrix& x = nodes_[node.a].out;
        const Eigen::ArrayXXd y = out.value.array();
        const Eigen::ArrayXXd s = 1.0 - y.square();
        Eigen::ArrayXXd inner = has(g0) ? Eigen::ArrayXXd(g0.array()) : Eigen::ArrayXXd::Zero(R, C);
        if (x.time_varying()) {
          const auto x1 = x.d1.array();
          const auto x2 = x.d2.array();
          if (has(g1)) inner += g1.array() * (-2.0 * y * x1);
          if (has(g2)) inner += g2.array() * (-2.0 * y * x2 - 2.0 * s * x1.square() + 4.0 * y.square() * x1.square());
          if (has(g1) && has(g2)) {
            add_to(node.a, 1, ((g1.array() - 4.0 * g2.array() * y * x1) * s).matrix());
          } else if (has(g1)) {
            add_to(node.a, 1, (g1.array() * s).matrix());
          } else if (has(g2)) {
            add_to(node.a, 1, (-4.0 * g2.array() * y * s * x1).matrix());
          }
          if (has(g2)) add_to(node.a, 2, (g2.array() * s).matrix());
        }
        add_to(node.a, 0, (inner * s).matrix());
        break;
      }
      case Op::Sin: {
        const JetMatrix& x = nodes_[node.a].out;
        const Eigen::ArrayXXd s = out.value.array();
        const Eigen::ArrayXXd c = x.value.array().cos();
        Eigen::ArrayXXd t0 = has(g0) ? Eigen::ArrayXXd(g0.array() * c) : Eigen::ArrayXXd::Zero(R, C);
        if (x.time_varying()) {
          const auto x1 = x.d1.array();
          const auto x2 = x.d2.array();
          if (has(g1)) t0 -= g1.array() * s * x1;
          if (has(g2)) t0 -= g2.array() * (s * x2 + c * x1.square());
          Eigen::ArrayXXd t1 = Eigen::ArrayXXd::Zero(R, C);
          if (has(g1)) t1 += g1.array() * c;
          if (has(g2)) t1 -= 2.0 * g2.array() * s * x1;
          add_to(node.a, 1, t1.matrix());
          if (has(g2)) add_to(node.a, 2, (g2.array() * c).matrix());
        }
        add_to(node.a, 0, t0.matrix());
        break;
      }
      case Op::Square: {
        const JetMatrix& x = nodes_[node.a].out;
        const auto x0 = x.value.array();
        Eigen::ArrayXXd t0 = has(g0) ? Eigen::ArrayXXd(2.0 * g0.array() * x0) : Eigen::ArrayXXd::Zero(R, C);
        if (x.time_varying()) {
          const auto x1 = x.d1.array();
          if (has(g1)) t0 += 2.0 * g1.array() * x1;
          if (has(g2)) t0 += 2.0 * g2.array() * x.d2.array();
          Eigen::ArrayXXd t1 = Eigen::ArrayXXd::Zero(R, C);
          if (has(g1)) t1 += 2.0 * g1.array() * x0;
          if (has(g2)) t1 += 4.0 * g2.array() * x1;
          add_to(node.a, 1, t1.matrix());
          if (has(g2)) add_to(node.a, 2, (2.0 * g2.array() * x0).matrix());
        }
        add_to(node.a, 0, t0.matrix());
        break;
      }
      case Op::Sum: {
        const JetMatrix& x = nodes_[node.a].out;
        for (int k = 0; k < 3; ++k) {
          if (has(g.at(k))) add_to(node.a, k, MatrixXd::Constant(x.rows(), x.cols(), g.at(k)(0, 0)));
        }
        break;
      }
      case Op::Component: {
        if (has(g0)) add_to(node.a, node.k, g0);
        break;
      }
    }
  }

  std::vector<MatrixXd> grads;
  grads.reserve(variables_.size());
  for (const std::size_t id : variables_) {
    const auto& v = nodes_[id].out.value;
    if (id < adj.size() && has(adj[id].g[0])) {
      grads.push_back(adj[id].g[0]);
    } else {
      grads.push_back(MatrixXd::Zero(v.rows(), v.cols()));
    }
  }
  return grads;
}

}  // namespace swingid::ad
