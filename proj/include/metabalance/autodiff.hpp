#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "metabalance/matrix.hpp"
#include "metabalance/param_set.hpp"

// Reverse-mode differentiation over whole matrices.
//
// Every backward rule is itself written in terms of tape operations, so the
// gradients returned by Tape::gradients(..., create_graph=true) are ordinary
// nodes that can be differentiated again. That is all the meta step needs:
// the pseudo-updated classifier is a function of the weight-net parameters
// through a gradient, and the meta loss is differentiated back through it.
namespace metabalance::ad {

class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid while the tape lives.
class Var {
public:
  Var() = default;

  bool valid() const noexcept { return tape_ != nullptr; }
  Tape &tape() const { return *tape_; }
  std::size_t id() const noexcept { return id_; }

  const Matrix &value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  /// Value of a 1x1 node.
  double scalar() const;

private:
  friend class Tape;
  Var(Tape *tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape *tape_ = nullptr;
  std::size_t id_ = 0;
};

enum class Op {
  Leaf,
  MatMul,
  Transpose,
  Add,
  Sub,
  Mul,
  Affine,
  AddRow,
  ColSum,
  BroadcastRows,
  Sum,
  Fill,
  Relu,
  Sigmoid,
  Clamp,
  Log,
  Reciprocal,
  Reshape,
};

class Tape {
public:
  Tape() = default;
  Tape(const Tape &) = delete;
  Tape &operator=(const Tape &) = delete;

  /// Leaf node. Any leaf can be a differentiation target; "variable" and
  /// "constant" differ only in intent.
  Var variable(Matrix value);
  Var constant(Matrix value);
  std::vector<Var> variables(const ParamSet &params);
  std::vector<Var> constants(const ParamSet &params);

  /// d(output)/d(wrt[k]) for a 1x1 output. With create_graph the results are
  /// differentiable nodes; otherwise they are fresh constants and every
  /// intermediate node built during the sweep is discarded.
  std::vector<Var> gradients(Var output, std::span<const Var> wrt,
                             bool create_graph = false);

  std::size_t size() const noexcept { return nodes_.size(); }
  const Matrix &value(std::size_t id) const { return nodes_[id].value; }

  Var record(Op op, Matrix value, std::size_t a, std::size_t b = 0,
             double s = 0.0, double t = 0.0);

private:
  struct Node {
    Op op = Op::Leaf;
    Matrix value;
    std::size_t a = 0;
    std::size_t b = 0;
    double s = 0.0;
    double t = 0.0;
  };

  static int arity(Op op) noexcept;
  void backward_node(std::size_t id, Var grad_out, Var grad_in[2]);

  std::vector<Node> nodes_;
};

// Matrix operations. Operands must live on the same tape.
Var matmul(Var a, Var b);
Var transpose(Var a);
Var operator+(Var a, Var b);
Var operator-(Var a, Var b);
/// Element-wise product.
Var mul(Var a, Var b);
/// s * a + t, element-wise.
Var affine(Var a, double s, double t = 0.0);
Var scale(Var a, double s);
/// Adds a 1xk row vector to every row of an nxk matrix.
Var add_row(Var a, Var bias);
/// Column sums of an nxk matrix, as 1xk.
Var col_sum(Var a);
/// Stacks a 1xk row vector n times.
Var broadcast_rows(Var row, std::size_t n);
/// Sum of all entries, as 1x1.
Var sum(Var a);
Var mean(Var a);
/// rows x cols matrix filled with the value of a 1x1 node.
Var fill(Var scalar, std::size_t rows, std::size_t cols);
Var relu(Var a);
Var sigmoid(Var a);
/// Clamps into [lo, hi]; gradient is zero outside.
Var clamp(Var a, double lo, double hi);
Var log(Var a);
Var reciprocal(Var a);
Var reshape(Var a, std::size_t rows, std::size_t cols);
/// Same value, no gradient path.
Var detach(Var a);

/// Numerically stable logistic function.
double sigmoid(double x) noexcept;

using ScalarFunction = std::function<Var(Tape &, std::span<const Var>)>;
using StepFunction = std::function<std::vector<Var>(Tape &, std::span<const Var>)>;

struct ValueAndGrad {
  double value = 0.0;
  ParamSet grad;
};

/// Evaluates f at p without building gradients. Throws EvaluationError on a
/// non-finite result.
double evaluate(const ScalarFunction &f, const ParamSet &p);

ValueAndGrad value_and_grad(const ScalarFunction &f, const ParamSet &p);
ParamSet grad(const ScalarFunction &f, const ParamSet &p);

/// Value and gradient of phi -> outer(inner_step(phi)).
ValueAndGrad value_and_grad_through_step(const ScalarFunction &outer,
                                         const StepFunction &inner_step,
                                         const ParamSet &phi);
ParamSet grad_through_step(const ScalarFunction &outer,
                           const StepFunction &inner_step, const ParamSet &phi);

/// Packs node values into a ParamSet with `manifest`'s layout.
ParamSet to_param_set(const ParamSet &manifest, std::span<const Var> vars);

} // namespace metabalance::ad
