// SPDX-License-Identifier: Apache-2.0
//
// Dense f64 tensors with define-by-run reverse-mode differentiation.
//
// Every primitive records a node holding its forward value, a closure that
// recomputes the value from its inputs (used by Graph replay) and, when any
// input requires a gradient, a closure that accumulates the adjoint into its
// inputs. The primitive set is deliberately small: it covers the encoders,
// the prompt mixture, the router and the cosine cross-entropy objective.

#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace moapt::ad {

using Shape = std::vector<std::size_t>;

/// Raised when the operands of a primitive have incompatible shapes.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised on misuse of the differentiation machinery (non-scalar backward,
/// repeated backward, NaN inputs, invalid temperatures).
class GradError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

std::string to_string(const Shape& shape);
std::size_t numel(const Shape& shape);

namespace detail {

struct Node {
  std::string op;
  std::string name;
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until a backward pass touches the node
  bool requires_grad = false;
  bool backward_done = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> forward;
  std::function<void(Node&)> backward;

  bool is_leaf() const { return inputs.empty(); }
  std::vector<double>& grad_buffer() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor filled(Shape shape, double v, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> data,
                     bool requires_grad = false);
  static Tensor scalar(double v);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node().shape; }
  std::size_t dim(std::size_t axis) const;
  std::size_t rank() const { return node().shape.size(); }
  std::size_t size() const { return node().value.size(); }

  std::span<const double> data() const { return node().value; }
  /// Mutable access to a leaf's values (parameter updates, attack steps).
  std::span<double> mutable_data();
  double item() const;
  double operator[](std::size_t i) const { return node().value.at(i); }

  bool requires_grad() const { return node().requires_grad; }
  bool has_grad() const { return !node().grad.empty(); }
  /// Gradient buffer; empty span when no backward pass reached this tensor.
  std::span<const double> grad() const { return node().grad; }
  void zero_grad() { node().grad.clear(); }

  bool is_leaf() const { return node().is_leaf(); }
  const std::string& op() const { return node().op; }
  const std::string& name() const { return node().name; }
  Tensor& set_name(std::string name);

  /// Copy of the current values as a constant leaf outside any graph.
  Tensor detach() const;

  /// Reverse pass from a scalar. Leaf gradients accumulate; intermediate
  /// adjoints are retained for inspection.
  void backward() const;

  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  const std::shared_ptr<detail::Node>& handle() const { return node_; }

 private:
  detail::Node& node() const;
  std::shared_ptr<detail::Node> node_;
};

/// Topologically ordered record of the computation that produced `output`.
class Graph {
 public:
  static Graph trace(const Tensor& output);

  std::size_t size() const { return nodes_.size(); }
  std::vector<std::string> op_names() const;

  /// Rebinds named leaves to new values and replays every recorded primitive
  /// in order. Every named leaf in the record must be bound.
  Tensor forward(const std::map<std::string, Tensor>& inputs);

  const Tensor& output() const { return output_; }

 private:
  std::vector<std::shared_ptr<detail::Node>> nodes_;
  Tensor output_;
};

// Primitives. Shapes are checked eagerly and a ShapeError names the primitive.

Tensor matmul(const Tensor& a, const Tensor& b);       // [m,k] x [k,n]
Tensor add(const Tensor& a, const Tensor& b);          // same shape
Tensor sub(const Tensor& a, const Tensor& b);          // same shape
Tensor mul(const Tensor& a, const Tensor& b);          // elementwise
Tensor scale(const Tensor& a, double c);
Tensor add_row(const Tensor& a, const Tensor& bias);   // [m,n] + [n]
Tensor tanh(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor sum(const Tensor& a);                            // -> scalar
Tensor mean(const Tensor& a);                           // -> scalar
Tensor max(const Tensor& a);                            // -> scalar
Tensor sign(const Tensor& a);                           // sign(0) = 0, no grad
Tensor clamp(const Tensor& a, double lo, double hi);
Tensor l2_norm(const Tensor& a);                        // -> scalar
/// Softmax over the last axis of a [n] or [m,n] tensor, logits divided by tau.
Tensor softmax(const Tensor& a, double tau = 1.0);
/// Cosine similarity of two equally shaped vectors -> scalar.
Tensor cosine(const Tensor& u, const Tensor& v);
/// Row-wise cosine: u [B,d], v [B,N,d] -> [B,N] with (i,n) = cos(u_i, v_{i,n}).
Tensor cosine_rows(const Tensor& u, const Tensor& v);
/// Mean over rows of -sum_n y_in log softmax(logits_i)_n; y is a constant.
Tensor cross_entropy(const Tensor& logits, const Tensor& targets);

Tensor reshape(const Tensor& a, Shape shape);
Tensor concat_cols(const Tensor& a, const Tensor& b);  // [m,p] | [m,q]
Tensor concat_rows(const std::vector<Tensor>& parts);  // stack along axis 0
Tensor repeat_rows(const Tensor& row, std::size_t count);  // [n] -> [count,n]

}  // namespace moapt::ad
