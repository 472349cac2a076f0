#pragma once

// Tape-based reverse-mode differentiation for the encoder graph. Quantum
// nodes are differentiated with the parameter-shift rule.

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "qas/circuit.hpp"

namespace qas::diff {

/// Dense row-major tensor of rank 1 to 3.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values);
  static Tensor scalar(double v) { return matrix(1, 1, {v}); }

  std::size_t size() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  std::size_t rows() const;
  std::size_t cols() const;
  double& at(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }
  double item() const;
  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  Tensor& operator+=(const Tensor& o);
};

std::string shape_string(const std::vector<std::size_t>& shape);

/// Persistent trainable array; survives across tapes.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;

  Parameter() = default;
  Parameter(std::string name, Tensor value);
  void zero_grad();
};

class Tape;

struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const std::vector<std::size_t>& shape() const { return value().shape; }
};

/// Backward rule: reads the node's output gradient and accumulates into its
/// inputs' gradients.
using BackwardFn = std::function<void(Tape&, std::size_t self)>;

/// One forward pass, recorded in topological order.
class Tape {
 public:
  Var constant(Tensor value);
  Var param(Parameter& p);
  Var record(std::string op, Tensor value, std::vector<std::size_t> inputs, BackwardFn backward);

  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
  Tensor& grad(std::size_t id) { return nodes_.at(id).grad; }
  const Tensor& grad(std::size_t id) const { return nodes_.at(id).grad; }
  std::size_t size() const { return nodes_.size(); }
  const std::string& op(std::size_t id) const { return nodes_.at(id).op; }

  /// Seeds d(root)/d(root) = 1 and visits every node once in reverse order;
  /// parameter leaves add into Parameter::grad. A second call throws.
  void backward(Var root);
  bool backward_done() const { return backward_done_; }

 private:
  struct Node {
    std::string op;
    Tensor value;
    Tensor grad;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    Parameter* param = nullptr;
  };
  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

// Primitives. Two-dimensional unless stated otherwise.
Var matmul(Var a, Var b);
/// (B x m x k) . (B x k x n) -> (B x m x n)
Var batched_matmul(Var a, Var b);
Var reshape(Var a, std::vector<std::size_t> shape);
Var add(Var a, Var b);
Var sub(Var a, Var b);
/// Adds a 1 x n row to every row of a.
Var add_row(Var a, Var row);
Var mul(Var a, Var b);
/// Multiplies every row of a elementwise by a 1 x n row.
Var mul_row(Var a, Var row);
/// Multiplies a by a 1 x 1 variable.
Var mul_scalar(Var a, Var s);
Var scale(Var a, double s);
Var transpose(Var a);
Var softmax_rows(Var a);
Var log_softmax_rows(Var a);
/// Per-row standardization without affine terms.
Var layer_norm(Var a, double eps = 1e-5);
Var concat_cols(const std::vector<Var>& parts);
Var slice_cols(Var a, std::size_t begin, std::size_t end);
Var sin(Var a);
Var cos(Var a);
Var square(Var a);
Var log(Var a);
/// Inverted dropout with one mask per call; rate 0 is the identity.
Var dropout(Var a, double rate, std::mt19937_64& rng);
/// Euclidean norm of each row, as a column.
Var row_norms(Var a);
Var sum(Var a);
/// sum_d a[d, index[d]]
Var pick_sum(Var a, std::span<const int> index);
/// max |a - reference| over all entries (subgradient at the first maximizer).
Var max_abs_diff(Var a, const Tensor& reference);

/// Angle of a template gate: scale * w[weight] * u[feature]^power, where a
/// negative index drops that factor.
struct AngleTerm {
  int weight = -1;
  int feature = -1;
  int power = 1;
  double scale = 1.0;
};

struct TemplateGate {
  GateKind kind = GateKind::I;
  int q0 = 0;
  int q1 = -1;
  AngleTerm angle;
};

struct QuantumTemplate {
  int n_qubits = 1;
  int n_features = 0;
  int n_weights = 0;
  std::vector<TemplateGate> gates;

  /// Throws std::invalid_argument on a non-shiftable parametric gate.
  void validate() const;
  /// Circuit with angles fixed from one feature row and the weights.
  Circuit instantiate(std::span<const double> features, std::span<const double> weights) const;
};

/// Per-qubit <Z> of the template for one feature row.
std::vector<double> evaluate_template(const QuantumTemplate& tmpl, std::span<const double> features,
                                      std::span<const double> weights);

/// inputs: R x n_features, weights: 1 x n_weights -> R x n_qubits of <Z>.
Var quantum_node(const QuantumTemplate& tmpl, Var inputs, Var weights);

struct GradCheckReport {
  double max_rel_deviation = 0.0;
  double max_abs_deviation = 0.0;
  std::string worst;
  std::size_t n_checked = 0;
  bool passed = false;
};

/// Compares backward gradients of a scalar-valued forward against central
/// finite differences over every entry of `params`. The relative deviation
/// is |g - fd| / max(1, |g|, |fd|).
GradCheckReport check_gradients(const std::function<Var(Tape&)>& forward, std::span<Parameter* const> params,
                                double tolerance, double step = 1e-4);

}  // namespace qas::diff
