#include "metabalance/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "metabalance/errors.hpp"

namespace metabalance::ad {

const Matrix &Var::value() const { return tape_->value(id_); }

double Var::scalar() const {
  const Matrix &v = value();
  if (v.rows() != 1 || v.cols() != 1)
    throw ShapeError("expected a 1x1 node, got " + std::to_string(v.rows()) +
                     "x" + std::to_string(v.cols()));
  return v(0, 0);
}

double sigmoid(double x) noexcept {
  if (x >= 0.0)
    return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Var Tape::record(Op op, Matrix value, std::size_t a, std::size_t b, double s,
                 double t) {
  nodes_.push_back({op, std::move(value), a, b, s, t});
  return Var(this, nodes_.size() - 1);
}

Var Tape::variable(Matrix value) { return record(Op::Leaf, std::move(value), 0); }
Var Tape::constant(Matrix value) { return record(Op::Leaf, std::move(value), 0); }

std::vector<Var> Tape::variables(const ParamSet &params) {
  std::vector<Var> out;
  for (std::size_t i = 0; i < params.num_segments(); ++i)
    out.push_back(variable(params.matrix(i)));
  return out;
}

std::vector<Var> Tape::constants(const ParamSet &params) {
  std::vector<Var> out;
  for (std::size_t i = 0; i < params.num_segments(); ++i)
    out.push_back(constant(params.matrix(i)));
  return out;
}

int Tape::arity(Op op) noexcept {
  switch (op) {
  case Op::Leaf:
    return 0;
  case Op::MatMul:
  case Op::Add:
  case Op::Sub:
  case Op::Mul:
  case Op::AddRow:
    return 2;
  default:
    return 1;
  }
}

namespace {

Tape &same_tape(Var a, Var b) {
  if (!a.valid() || !b.valid() || &a.tape() != &b.tape())
    throw ShapeError("operands live on different tapes");
  return a.tape();
}

void require_same_shape(const Matrix &a, const Matrix &b, const char *op) {
  if (!a.same_shape(b))
    throw ShapeError(std::string(op) + ": shape " + std::to_string(a.rows()) +
                     "x" + std::to_string(a.cols()) + " vs " +
                     std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
}

Matrix mask_where(const Matrix &x, auto &&pred) {
  Matrix m(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i)
    m.data()[i] = pred(x.data()[i]) ? 1.0 : 0.0;
  return m;
}

} // namespace

// Each rule writes the gradient for input k into grad_in[k]. Everything is
// expressed through tape operations so the result stays differentiable.
void Tape::backward_node(std::size_t id, Var g, Var grad_in[2]) {
  const Node node = {nodes_[id].op, Matrix{}, nodes_[id].a, nodes_[id].b,
                     nodes_[id].s, nodes_[id].t};
  const Var a(this, node.a);
  const Var b(this, node.b);
  const Var y(this, id);
  switch (node.op) {
  case Op::Leaf:
    break;
  case Op::MatMul:
    grad_in[0] = matmul(g, transpose(b));
    grad_in[1] = matmul(transpose(a), g);
    break;
  case Op::Transpose:
    grad_in[0] = transpose(g);
    break;
  case Op::Add:
    grad_in[0] = g;
    grad_in[1] = g;
    break;
  case Op::Sub:
    grad_in[0] = g;
    grad_in[1] = scale(g, -1.0);
    break;
  case Op::Mul:
    grad_in[0] = mul(g, b);
    grad_in[1] = mul(g, a);
    break;
  case Op::Affine:
    grad_in[0] = scale(g, node.s);
    break;
  case Op::AddRow:
    grad_in[0] = g;
    grad_in[1] = col_sum(g);
    break;
  case Op::ColSum:
    grad_in[0] = broadcast_rows(g, a.rows());
    break;
  case Op::BroadcastRows:
    grad_in[0] = col_sum(g);
    break;
  case Op::Sum:
    grad_in[0] = fill(g, a.rows(), a.cols());
    break;
  case Op::Fill:
    grad_in[0] = sum(g);
    break;
  case Op::Relu:
    grad_in[0] = mul(g, constant(mask_where(a.value(), [](double v) { return v > 0.0; })));
    break;
  case Op::Sigmoid:
    grad_in[0] = mul(g, mul(y, affine(y, -1.0, 1.0)));
    break;
  case Op::Clamp: {
    const double lo = node.s, hi = node.t;
    grad_in[0] = mul(g, constant(mask_where(a.value(), [lo, hi](double v) {
                       return v >= lo && v <= hi;
                     })));
    break;
  }
  case Op::Log:
    grad_in[0] = mul(g, reciprocal(a));
    break;
  case Op::Reciprocal:
    grad_in[0] = scale(mul(g, mul(y, y)), -1.0);
    break;
  case Op::Reshape:
    grad_in[0] = reshape(g, a.rows(), a.cols());
    break;
  }
}

std::vector<Var> Tape::gradients(Var output, std::span<const Var> wrt,
                                 bool create_graph) {
  if (!output.valid() || &output.tape() != this)
    throw ShapeError("gradient output is not on this tape");
  output.scalar();
  const std::size_t n = nodes_.size();

  // Only nodes that depend on some target need an adjoint.
  std::vector<char> on_path(n, 0);
  for (const Var &w : wrt) {
    if (!w.valid() || &w.tape() != this)
      throw ShapeError("gradient target is not on this tape");
    on_path[w.id()] = 1;
  }
  for (std::size_t i = 0; i <= output.id(); ++i) {
    const Node &nd = nodes_[i];
    const int k = arity(nd.op);
    if ((k >= 1 && on_path[nd.a]) || (k == 2 && on_path[nd.b]))
      on_path[i] = 1;
  }

  std::vector<Var> adjoint(n);
  if (on_path[output.id()])
    adjoint[output.id()] = constant(Matrix(1, 1, 1.0));
  for (std::size_t id = output.id() + 1; id-- > 0;) {
    if (!adjoint[id].valid() || nodes_[id].op == Op::Leaf)
      continue;
    Var grad_in[2];
    backward_node(id, adjoint[id], grad_in);
    const std::size_t inputs[2] = {nodes_[id].a, nodes_[id].b};
    for (int k = 0; k < arity(nodes_[id].op); ++k) {
      const std::size_t in = inputs[k];
      if (!on_path[in])
        continue;
      adjoint[in] = adjoint[in].valid() ? adjoint[in] + grad_in[k] : grad_in[k];
    }
  }

  std::vector<Matrix> values;
  values.reserve(wrt.size());
  for (const Var &w : wrt)
    values.push_back(adjoint[w.id()].valid() ? adjoint[w.id()].value()
                                             : Matrix(w.rows(), w.cols()));
  if (create_graph) {
    std::vector<Var> out;
    for (std::size_t k = 0; k < wrt.size(); ++k)
      out.push_back(adjoint[wrt[k].id()].valid() ? adjoint[wrt[k].id()]
                                                 : constant(std::move(values[k])));
    return out;
  }
  nodes_.resize(n);
  std::vector<Var> out;
  for (Matrix &v : values)
    out.push_back(constant(std::move(v)));
  return out;
}

Var matmul(Var a, Var b) {
  Tape &t = same_tape(a, b);
  return t.record(Op::MatMul, metabalance::matmul(a.value(), b.value()), a.id(), b.id());
}

Var transpose(Var a) {
  return a.tape().record(Op::Transpose, a.value().transposed(), a.id());
}

Var operator+(Var a, Var b) {
  Tape &t = same_tape(a, b);
  require_same_shape(a.value(), b.value(), "add");
  Matrix out = a.value();
  const auto bv = b.value().data();
  for (std::size_t i = 0; i < out.size(); ++i)
    out.data()[i] += bv[i];
  return t.record(Op::Add, std::move(out), a.id(), b.id());
}

Var operator-(Var a, Var b) {
  Tape &t = same_tape(a, b);
  require_same_shape(a.value(), b.value(), "sub");
  Matrix out = a.value();
  const auto bv = b.value().data();
  for (std::size_t i = 0; i < out.size(); ++i)
    out.data()[i] -= bv[i];
  return t.record(Op::Sub, std::move(out), a.id(), b.id());
}

Var mul(Var a, Var b) {
  Tape &t = same_tape(a, b);
  require_same_shape(a.value(), b.value(), "mul");
  Matrix out = a.value();
  const auto bv = b.value().data();
  for (std::size_t i = 0; i < out.size(); ++i)
    out.data()[i] *= bv[i];
  return t.record(Op::Mul, std::move(out), a.id(), b.id());
}

Var affine(Var a, double s, double t) {
  Matrix out = a.value();
  for (double &v : out.data())
    v = s * v + t;
  return a.tape().record(Op::Affine, std::move(out), a.id(), 0, s, t);
}

Var scale(Var a, double s) { return affine(a, s, 0.0); }

Var add_row(Var a, Var bias) {
  Tape &t = same_tape(a, bias);
  const Matrix &bv = bias.value();
  if (bv.rows() != 1 || bv.cols() != a.cols())
    throw ShapeError("add_row: bias must be 1x" + std::to_string(a.cols()));
  Matrix out = a.value();
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t c = 0; c < out.cols(); ++c)
      out(r, c) += bv(0, c);
  return t.record(Op::AddRow, std::move(out), a.id(), bias.id());
}

Var col_sum(Var a) {
  const Matrix &av = a.value();
  Matrix out(1, av.cols());
  for (std::size_t r = 0; r < av.rows(); ++r)
    for (std::size_t c = 0; c < av.cols(); ++c)
      out(0, c) += av(r, c);
  return a.tape().record(Op::ColSum, std::move(out), a.id());
}

Var broadcast_rows(Var row, std::size_t n) {
  const Matrix &rv = row.value();
  if (rv.rows() != 1)
    throw ShapeError("broadcast_rows: expected a row vector");
  Matrix out(n, rv.cols());
  for (std::size_t r = 0; r < n; ++r)
    std::copy(rv.data().begin(), rv.data().end(), out.row(r).begin());
  return row.tape().record(Op::BroadcastRows, std::move(out), row.id());
}

Var sum(Var a) {
  double acc = 0.0;
  for (double v : a.value().data())
    acc += v;
  return a.tape().record(Op::Sum, Matrix(1, 1, acc), a.id());
}

Var mean(Var a) {
  if (a.value().empty())
    throw ShapeError("mean of an empty matrix");
  return scale(sum(a), 1.0 / static_cast<double>(a.value().size()));
}

Var fill(Var scalar, std::size_t rows, std::size_t cols) {
  const double v = scalar.scalar();
  return scalar.tape().record(Op::Fill, Matrix(rows, cols, v), scalar.id());
}

Var relu(Var a) {
  Matrix out = a.value();
  for (double &v : out.data())
    v = v > 0.0 ? v : 0.0;
  return a.tape().record(Op::Relu, std::move(out), a.id());
}

Var sigmoid(Var a) {
  Matrix out = a.value();
  for (double &v : out.data())
    v = sigmoid(v);
  return a.tape().record(Op::Sigmoid, std::move(out), a.id());
}

Var clamp(Var a, double lo, double hi) {
  Matrix out = a.value();
  for (double &v : out.data())
    v = std::clamp(v, lo, hi);
  return a.tape().record(Op::Clamp, std::move(out), a.id(), 0, lo, hi);
}

Var log(Var a) {
  Matrix out = a.value();
  for (double &v : out.data())
    v = std::log(v);
  return a.tape().record(Op::Log, std::move(out), a.id());
}

Var reciprocal(Var a) {
  Matrix out = a.value();
  for (double &v : out.data())
    v = 1.0 / v;
  return a.tape().record(Op::Reciprocal, std::move(out), a.id());
}

Var reshape(Var a, std::size_t rows, std::size_t cols) {
  const Matrix &av = a.value();
  if (rows * cols != av.size())
    throw ShapeError("reshape: element count mismatch");
  std::vector<double> data(av.data().begin(), av.data().end());
  return a.tape().record(Op::Reshape, Matrix(rows, cols, std::move(data)), a.id());
}

Var detach(Var a) { return a.tape().constant(a.value()); }

ParamSet to_param_set(const ParamSet &manifest, std::span<const Var> vars) {
  if (vars.size() != manifest.num_segments())
    throw ShapeError("segment count mismatch: " + std::to_string(vars.size()) +
                     " vs " + std::to_string(manifest.num_segments()));
  ParamSet out = manifest.zeros_like();
  for (std::size_t i = 0; i < vars.size(); ++i)
    out.set_matrix(i, vars[i].value());
  return out;
}

namespace {

double checked_scalar(Var y) {
  const double v = y.scalar();
  if (!std::isfinite(v))
    throw EvaluationError("function value is not finite");
  return v;
}

} // namespace

double evaluate(const ScalarFunction &f, const ParamSet &p) {
  Tape tape;
  const auto params = tape.constants(p);
  return checked_scalar(f(tape, params));
}

ValueAndGrad value_and_grad(const ScalarFunction &f, const ParamSet &p) {
  Tape tape;
  const auto params = tape.variables(p);
  const Var y = f(tape, params);
  const double v = checked_scalar(y);
  const auto g = tape.gradients(y, params);
  ParamSet out = to_param_set(p, g);
  if (!out.all_finite())
    throw EvaluationError("gradient is not finite");
  return {v, std::move(out)};
}

ParamSet grad(const ScalarFunction &f, const ParamSet &p) {
  return value_and_grad(f, p).grad;
}

ValueAndGrad value_and_grad_through_step(const ScalarFunction &outer,
                                         const StepFunction &inner_step,
                                         const ParamSet &phi) {
  Tape tape;
  const auto phi_vars = tape.variables(phi);
  const auto stepped = inner_step(tape, phi_vars);
  const Var y = outer(tape, stepped);
  const double v = checked_scalar(y);
  const auto g = tape.gradients(y, phi_vars);
  ParamSet out = to_param_set(phi, g);
  if (!out.all_finite())
    throw EvaluationError("hypergradient is not finite");
  return {v, std::move(out)};
}

ParamSet grad_through_step(const ScalarFunction &outer,
                           const StepFunction &inner_step, const ParamSet &phi) {
  return value_and_grad_through_step(outer, inner_step, phi).grad;
}

} // namespace metabalance::ad
