#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <stdexcept>
#include <vector>

namespace swingid::ad {

/// Matrix of Jet2 numbers stored component-wise. Time-constant matrices
/// (trainable weights, data) leave `d1` and `d2` empty.
struct JetMatrix {
  Eigen::MatrixXd value;
  Eigen::MatrixXd d1;
  Eigen::MatrixXd d2;

  bool time_varying() const { return d1.size() != 0; }
  Eigen::Index rows() const { return value.rows(); }
  Eigen::Index cols() const { return value.cols(); }
  /// Component 0, 1 or 2; zeros for a time-constant matrix.
  Eigen::MatrixXd component(int k) const;
};

class Tape;

/// Handle to a node on a Tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const JetMatrix& jet() const;
  const Eigen::MatrixXd& value() const { return jet().value; }
};

/// Reverse-mode recorder over matrix-valued Jet2 nodes.
///
/// Forward values are computed eagerly while recording. A reverse sweep
/// differentiates the value component of a scalar node with respect to every
/// trainable variable, treating each Jet2 component as an independent real
/// number, so derivatives of u, u' and u'' with respect to weights all come out
/// of the same sweep.
class Tape {
 public:
  Var variable(Eigen::MatrixXd value);
  Var constant(Eigen::MatrixXd value);
  Var constant(JetMatrix value);
  /// Row of independent inputs seeded with d1 = 1, d2 = 0.
  Var input(const Eigen::RowVectorXd& t);

  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  /// Elementwise product.
  Var mul(Var a, Var b);
  /// Elementwise quotient; throws std::domain_error on a zero denominator.
  Var div(Var a, Var b);
  Var matmul(Var a, Var b);
  /// x + c with the column vector c broadcast across columns.
  Var add_col(Var x, Var c);
  /// x * c elementwise with the column vector c broadcast across columns.
  Var mul_col(Var x, Var c);
  Var scale(Var x, double factor);
  Var tanh(Var x);
  Var sin(Var x);
  Var square(Var x);
  /// Sum of all entries (1x1 result).
  Var sum(Var x);
  /// The k-th Taylor component of x as a time-constant node.
  Var component(Var x, int k);

  const JetMatrix& jet(Var v) const { return nodes_.at(v.id).out; }
  std::size_t size() const { return nodes_.size(); }
  std::size_t variable_count() const { return variables_.size(); }
  void clear();

  /// d(loss.value)/d(variable) for every trainable variable, in creation order.
  std::vector<Eigen::MatrixXd> gradient(Var loss) const;

 private:
  enum class Op { Variable, Constant, Add, Sub, Mul, Recip, MatMul, AddCol, MulCol, Scale, Tanh, Sin, Square, Sum, Component };

  struct Node {
    explicit Node(Op o, std::size_t lhs = 0, std::size_t rhs = 0) : op(o), a(lhs), b(rhs) {}
    Op op;
    std::size_t a = 0;
    std::size_t b = 0;
    double scalar = 0.0;
    int k = 0;
    JetMatrix out;
  };

  Var push(Node node);
  void check(Var v) const;
  Var recip(Var x);
  Var broadcast(Var x, Var c, Op op);

  std::vector<Node> nodes_;
  std::vector<std::size_t> variables_;
};

inline const JetMatrix& Var::jet() const { return tape->jet(*this); }

inline Var operator+(Var a, Var b) { return a.tape->add(a, b); }
inline Var operator-(Var a, Var b) { return a.tape->sub(a, b); }
inline Var operator*(Var a, Var b) { return a.tape->mul(a, b); }
inline Var operator/(Var a, Var b) { return a.tape->div(a, b); }
inline Var operator*(double c, Var x) { return x.tape->scale(x, c); }
inline Var operator*(Var x, double c) { return x.tape->scale(x, c); }
inline Var tanh(Var x) { return x.tape->tanh(x); }
inline Var sin(Var x) { return x.tape->sin(x); }
inline Var square(Var x) { return x.tape->square(x); }
inline Var sum(Var x) { return x.tape->sum(x); }
inline Var matmul(Var a, Var b) { return a.tape->matmul(a, b); }

}  // namespace swingid::ad
