// SPDX-License-Identifier: Apache-2.0

#include "moapt/diffcore.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

namespace moapt::ad {

using detail::Node;
using NodePtr = std::shared_ptr<Node>;

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

namespace {

[[noreturn]] void shape_fail(const std::string& op, const Shape& a,
                             const Shape& b, const std::string& what = "") {
  throw ShapeError(op + ": incompatible shapes " + to_string(a) + " and " +
                   to_string(b) + (what.empty() ? "" : " (" + what + ")"));
}

[[noreturn]] void shape_fail(const std::string& op, const Shape& a,
                             const std::string& what) {
  throw ShapeError(op + ": invalid shape " + to_string(a) + " (" + what + ")");
}

// Builds an op node, runs its forward closure once and attaches the backward
// closure only if some input participates in differentiation.
Tensor make_op(std::string op, Shape shape, std::vector<NodePtr> inputs,
               std::function<void(Node&)> forward,
               std::function<void(Node&)> backward) {
  auto node = std::make_shared<Node>();
  node->op = std::move(op);
  node->shape = std::move(shape);
  node->value.assign(numel(node->shape), 0.0);
  node->inputs = std::move(inputs);
  node->requires_grad = std::any_of(
      node->inputs.begin(), node->inputs.end(),
      [](const NodePtr& n) { return n->requires_grad; });
  node->forward = std::move(forward);
  if (node->requires_grad) node->backward = std::move(backward);
  node->forward(*node);
  return Tensor(node);
}

bool is_matrix(const Tensor& t) { return t.rank() == 2; }

// Rows and columns of a vector-or-matrix tensor viewed as 2-D.
std::pair<std::size_t, std::size_t> as_rows(const Tensor& t) {
  if (t.rank() == 1) return {1, t.dim(0)};
  return {t.dim(0), t.dim(1)};
}

template <typename F>
Tensor unary(const std::string& name, const Tensor& a, F f_and_df) {
  return make_op(
      name, a.shape(), {a.handle()},
      [f_and_df](Node& n) {
        const auto& x = n.inputs[0]->value;
        for (std::size_t i = 0; i < x.size(); ++i)
          n.value[i] = f_and_df(x[i], n.value[i], false);
      },
      [f_and_df](Node& n) {
        auto& in = *n.inputs[0];
        if (!in.requires_grad) return;
        auto& g = in.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i)
          g[i] += n.grad[i] * f_and_df(in.value[i], n.value[i], true);
      });
}

}  // namespace

// ---------------------------------------------------------------- Tensor

Node& Tensor::node() const {
  if (!node_) throw GradError("use of an undefined tensor");
  return *node_;
}

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = node().shape;
  if (axis >= s.size())
    throw ShapeError("dim: axis " + std::to_string(axis) + " out of range for " +
                     to_string(s));
  return s[axis];
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return filled(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::filled(Shape shape, double v, bool requires_grad) {
  const auto n = numel(shape);
  return from(std::move(shape), std::vector<double>(n, v), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> data, bool requires_grad) {
  for (auto d : shape)
    if (d == 0) throw ShapeError("tensor: zero-sized dimension in " + to_string(shape));
  if (data.size() != numel(shape))
    throw ShapeError("tensor: " + std::to_string(data.size()) +
                     " values do not fill shape " + to_string(shape));
  auto node = std::make_shared<Node>();
  node->op = "leaf";
  node->shape = std::move(shape);
  node->value = std::move(data);
  node->requires_grad = requires_grad;
  return Tensor(node);
}

Tensor Tensor::scalar(double v) { return from({}, {v}); }

std::span<double> Tensor::mutable_data() {
  if (!node().is_leaf())
    throw GradError("mutable_data: only leaf tensors may be written");
  return node().value;
}

double Tensor::item() const {
  if (size() != 1)
    throw ShapeError("item: tensor of shape " + to_string(shape()) +
                     " is not a scalar");
  return node().value[0];
}

Tensor& Tensor::set_name(std::string name) {
  node().name = std::move(name);
  return *this;
}

Tensor Tensor::detach() const { return from(shape(), node().value, false); }

namespace {

std::vector<NodePtr> topo_order(const NodePtr& root, bool grad_only) {
  std::vector<NodePtr> order;
  std::unordered_set<const Node*> seen;
  // Iterative post-order DFS; graphs can be deep (PGD unrolls, long chains).
  std::vector<std::pair<NodePtr, std::size_t>> stack;
  stack.emplace_back(root, 0);
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      const auto& child = node->inputs[next++];
      if ((!grad_only || child->requires_grad) && seen.insert(child.get()).second)
        stack.emplace_back(child, 0);
      continue;
    }
    order.push_back(node);
    stack.pop_back();
  }
  return order;
}

}  // namespace

void Tensor::backward() const {
  auto& root = node();
  if (root.value.size() != 1)
    throw GradError("backward: loss must be a scalar, got shape " +
                    to_string(root.shape));
  if (root.backward_done)
    throw GradError("backward: called twice on the same forward pass");
  if (!root.requires_grad)
    throw GradError("backward: loss does not depend on any tensor requiring grad");
  auto order = topo_order(node_, true);
  for (auto& n : order)
    if (!n->is_leaf()) n->grad.assign(n->value.size(), 0.0);
  root.grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    auto& n = **it;
    if (n.backward) n.backward(n);
  }
  root.backward_done = true;
}

// ---------------------------------------------------------------- Graph

Graph Graph::trace(const Tensor& output) {
  Graph g;
  g.nodes_ = topo_order(output.handle(), false);
  g.output_ = output;
  return g;
}

std::vector<std::string> Graph::op_names() const {
  std::vector<std::string> names;
  names.reserve(nodes_.size());
  for (const auto& n : nodes_) names.push_back(n->op);
  return names;
}

Tensor Graph::forward(const std::map<std::string, Tensor>& inputs) {
  for (auto& n : nodes_) {
    if (!n->is_leaf() || n->name.empty()) continue;
    auto it = inputs.find(n->name);
    if (it == inputs.end())
      throw GradError("forward: named input '" + n->name + "' is not bound");
    if (it->second.shape() != n->shape)
      shape_fail("forward[" + n->name + "]", it->second.shape(), n->shape,
                 "bound value must match the recorded shape");
    auto src = it->second.data();
    std::copy(src.begin(), src.end(), n->value.begin());
  }
  for (auto& n : nodes_) {
    if (n->is_leaf()) continue;
    n->forward(*n);
    n->grad.clear();
    n->backward_done = false;
  }
  return output_;
}

// ---------------------------------------------------------------- primitives

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (!is_matrix(a) || !is_matrix(b) || a.dim(1) != b.dim(0))
    shape_fail("matmul", a.shape(), b.shape());
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  return make_op(
      "matmul", {m, n}, {a.handle(), b.handle()},
      [m, k, n](Node& out) {
        const auto& A = out.inputs[0]->value;
        const auto& B = out.inputs[1]->value;
        std::fill(out.value.begin(), out.value.end(), 0.0);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            const double aip = A[i * k + p];
            const double* brow = &B[p * n];
            double* orow = &out.value[i * n];
            for (std::size_t j = 0; j < n; ++j) orow[j] += aip * brow[j];
          }
      },
      [m, k, n](Node& out) {
        auto& A = *out.inputs[0];
        auto& B = *out.inputs[1];
        const auto& G = out.grad;
        if (A.requires_grad) {
          auto& gA = A.grad_buffer();
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t p = 0; p < k; ++p) {
              double acc = 0.0;
              for (std::size_t j = 0; j < n; ++j)
                acc += G[i * n + j] * B.value[p * n + j];
              gA[i * k + p] += acc;
            }
        }
        if (B.requires_grad) {
          auto& gB = B.grad_buffer();
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t p = 0; p < k; ++p) {
              const double aip = A.value[i * k + p];
              for (std::size_t j = 0; j < n; ++j)
                gB[p * n + j] += aip * G[i * n + j];
            }
        }
      });
}

namespace {

Tensor binary_same(const std::string& name, const Tensor& a, const Tensor& b,
                   double sa, double sb, bool product) {
  if (a.shape() != b.shape()) shape_fail(name, a.shape(), b.shape());
  return make_op(
      name, a.shape(), {a.handle(), b.handle()},
      [sa, sb, product](Node& out) {
        const auto& x = out.inputs[0]->value;
        const auto& y = out.inputs[1]->value;
        for (std::size_t i = 0; i < x.size(); ++i)
          out.value[i] = product ? x[i] * y[i] : sa * x[i] + sb * y[i];
      },
      [sa, sb, product](Node& out) {
        auto& x = *out.inputs[0];
        auto& y = *out.inputs[1];
        if (x.requires_grad) {
          auto& g = x.grad_buffer();
          for (std::size_t i = 0; i < g.size(); ++i)
            g[i] += out.grad[i] * (product ? y.value[i] : sa);
        }
        if (y.requires_grad) {
          auto& g = y.grad_buffer();
          for (std::size_t i = 0; i < g.size(); ++i)
            g[i] += out.grad[i] * (product ? x.value[i] : sb);
        }
      });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_same("add", a, b, 1.0, 1.0, false);
}
Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_same("sub", a, b, 1.0, -1.0, false);
}
Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_same("mul", a, b, 0.0, 0.0, true);
}

Tensor scale(const Tensor& a, double c) {
  return unary("scale", a,
               [c](double x, double, bool d) { return d ? c : c * x; });
}

Tensor add_row(const Tensor& a, const Tensor& bias) {
  if (!is_matrix(a) || bias.rank() != 1 || bias.dim(0) != a.dim(1))
    shape_fail("add_row", a.shape(), bias.shape());
  const std::size_t m = a.dim(0), n = a.dim(1);
  return make_op(
      "add_row", a.shape(), {a.handle(), bias.handle()},
      [m, n](Node& out) {
        const auto& x = out.inputs[0]->value;
        const auto& b = out.inputs[1]->value;
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j)
            out.value[i * n + j] = x[i * n + j] + b[j];
      },
      [m, n](Node& out) {
        auto& x = *out.inputs[0];
        auto& b = *out.inputs[1];
        if (x.requires_grad) {
          auto& g = x.grad_buffer();
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += out.grad[i];
        }
        if (b.requires_grad) {
          auto& g = b.grad_buffer();
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) g[j] += out.grad[i * n + j];
        }
      });
}

Tensor tanh(const Tensor& a) {
  return unary("tanh", a, [](double x, double y, bool d) {
    return d ? 1.0 - y * y : std::tanh(x);
  });
}

Tensor exp(const Tensor& a) {
  return unary("exp", a,
               [](double x, double y, bool d) { return d ? y : std::exp(x); });
}

Tensor log(const Tensor& a) {
  for (double v : a.data())
    if (!(v > 0.0)) throw GradError("log: non-positive input " + std::to_string(v));
  return unary("log", a, [](double x, double, bool d) {
    return d ? 1.0 / x : std::log(x);
  });
}

Tensor sign(const Tensor& a) {
  return unary("sign", a, [](double x, double, bool d) {
    if (d) return 0.0;
    return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0);
  });
}

Tensor clamp(const Tensor& a, double lo, double hi) {
  if (lo > hi) throw GradError("clamp: lower bound exceeds upper bound");
  return unary("clamp", a, [lo, hi](double x, double, bool d) {
    if (d) return (x >= lo && x <= hi) ? 1.0 : 0.0;
    return std::clamp(x, lo, hi);
  });
}

Tensor sum(const Tensor& a) {
  return make_op(
      "sum", {}, {a.handle()},
      [](Node& out) {
        const auto& x = out.inputs[0]->value;
        out.value[0] = std::accumulate(x.begin(), x.end(), 0.0);
      },
      [](Node& out) {
        auto& g = out.inputs[0]->grad_buffer();
        for (auto& v : g) v += out.grad[0];
      });
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.size())); }

Tensor max(const Tensor& a) {
  return make_op(
      "max", {}, {a.handle()},
      [](Node& out) {
        const auto& x = out.inputs[0]->value;
        out.value[0] = *std::max_element(x.begin(), x.end());
      },
      [](Node& out) {
        auto& in = *out.inputs[0];
        auto idx = std::max_element(in.value.begin(), in.value.end()) -
                   in.value.begin();
        in.grad_buffer()[static_cast<std::size_t>(idx)] += out.grad[0];
      });
}

Tensor l2_norm(const Tensor& a) {
  return make_op(
      "l2_norm", {}, {a.handle()},
      [](Node& out) {
        double s = 0.0;
        for (double v : out.inputs[0]->value) s += v * v;
        out.value[0] = std::sqrt(s);
      },
      [](Node& out) {
        auto& in = *out.inputs[0];
        const double r = out.value[0];
        if (r == 0.0) return;  // subgradient 0 at the origin
        auto& g = in.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i)
          g[i] += out.grad[0] * in.value[i] / r;
      });
}

Tensor softmax(const Tensor& a, double tau) {
  if (!(tau > 0.0) || !std::isfinite(tau))
    throw GradError("softmax: temperature must be positive, got " +
                    std::to_string(tau));
  if (a.rank() != 1 && a.rank() != 2)
    shape_fail("softmax", a.shape(), "expected a vector or matrix");
  for (double v : a.data())
    if (std::isnan(v)) throw GradError("softmax: NaN logit");
  const auto [rows, cols] = as_rows(a);
  return make_op(
      "softmax", a.shape(), {a.handle()},
      [rows, cols, tau](Node& out) {
        const auto& x = out.inputs[0]->value;
        for (std::size_t r = 0; r < rows; ++r) {
          const double* xr = &x[r * cols];
          double* yr = &out.value[r * cols];
          const double mx = *std::max_element(xr, xr + cols);
          double z = 0.0;
          for (std::size_t j = 0; j < cols; ++j) {
            yr[j] = std::exp((xr[j] - mx) / tau);
            z += yr[j];
          }
          for (std::size_t j = 0; j < cols; ++j) yr[j] /= z;
        }
      },
      [rows, cols, tau](Node& out) {
        auto& g = out.inputs[0]->grad_buffer();
        for (std::size_t r = 0; r < rows; ++r) {
          const double* y = &out.value[r * cols];
          const double* gy = &out.grad[r * cols];
          double dot = 0.0;
          for (std::size_t j = 0; j < cols; ++j) dot += y[j] * gy[j];
          for (std::size_t j = 0; j < cols; ++j)
            g[r * cols + j] += y[j] * (gy[j] - dot) / tau;
        }
      });
}

Tensor cosine(const Tensor& u, const Tensor& v) {
  if (u.shape() != v.shape()) shape_fail("cosine", u.shape(), v.shape());
  const std::size_t d = u.size();
  return reshape(cosine_rows(reshape(u, {1, d}), reshape(v, {1, 1, d})), {});
}

Tensor cosine_rows(const Tensor& u, const Tensor& v) {
  if (u.rank() != 2 || v.rank() != 3 || v.dim(0) != u.dim(0) ||
      v.dim(2) != u.dim(1))
    shape_fail("cosine_rows", u.shape(), v.shape());
  const std::size_t B = u.dim(0), N = v.dim(1), d = u.dim(1);
  auto norms_ok = [&](const std::vector<double>& x, std::size_t rows,
                      const char* which) {
    for (std::size_t r = 0; r < rows; ++r) {
      double s = 0.0;
      for (std::size_t j = 0; j < d; ++j) s += x[r * d + j] * x[r * d + j];
      if (std::sqrt(s) < 1e-12)
        throw GradError(std::string("cosine_rows: zero-norm ") + which +
                        " vector at index " + std::to_string(r));
    }
  };
  norms_ok(u.handle()->value, B, "first-operand");
  norms_ok(v.handle()->value, B * N, "second-operand");
  return make_op(
      "cosine", {B, N}, {u.handle(), v.handle()},
      [B, N, d](Node& out) {
        const auto& U = out.inputs[0]->value;
        const auto& V = out.inputs[1]->value;
        for (std::size_t i = 0; i < B; ++i) {
          double uu = 0.0;
          for (std::size_t j = 0; j < d; ++j) uu += U[i * d + j] * U[i * d + j];
          const double nu = std::sqrt(uu);
          for (std::size_t n = 0; n < N; ++n) {
            const double* vr = &V[(i * N + n) * d];
            double uv = 0.0, vv = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
              uv += U[i * d + j] * vr[j];
              vv += vr[j] * vr[j];
            }
            out.value[i * N + n] = uv / (nu * std::sqrt(vv));
          }
        }
      },
      [B, N, d](Node& out) {
        auto& Un = *out.inputs[0];
        auto& Vn = *out.inputs[1];
        const auto& U = Un.value;
        const auto& V = Vn.value;
        std::vector<double>* gU = Un.requires_grad ? &Un.grad_buffer() : nullptr;
        std::vector<double>* gV = Vn.requires_grad ? &Vn.grad_buffer() : nullptr;
        for (std::size_t i = 0; i < B; ++i) {
          double uu = 0.0;
          for (std::size_t j = 0; j < d; ++j) uu += U[i * d + j] * U[i * d + j];
          const double nu = std::sqrt(uu);
          for (std::size_t n = 0; n < N; ++n) {
            const double g = out.grad[i * N + n];
            if (g == 0.0) continue;
            const double* vr = &V[(i * N + n) * d];
            double vv = 0.0;
            for (std::size_t j = 0; j < d; ++j) vv += vr[j] * vr[j];
            const double nv = std::sqrt(vv);
            const double c = out.value[i * N + n];
            for (std::size_t j = 0; j < d; ++j) {
              const double uj = U[i * d + j];
              if (gU) (*gU)[i * d + j] += g * (vr[j] / (nu * nv) - c * uj / uu);
              if (gV)
                (*gV)[(i * N + n) * d + j] +=
                    g * (uj / (nu * nv) - c * vr[j] / vv);
            }
          }
        }
      });
}

Tensor cross_entropy(const Tensor& logits, const Tensor& targets) {
  if (logits.rank() != 2 || targets.shape() != logits.shape())
    shape_fail("cross_entropy", logits.shape(), targets.shape());
  if (targets.requires_grad())
    throw GradError("cross_entropy: targets must be constant");
  for (double v : logits.data())
    if (std::isnan(v)) throw GradError("cross_entropy: NaN logit");
  const std::size_t B = logits.dim(0), N = logits.dim(1);
  auto softmax_row = [N](const double* z, double* p) {
    const double mx = *std::max_element(z, z + N);
    double s = 0.0;
    for (std::size_t j = 0; j < N; ++j) {
      p[j] = std::exp(z[j] - mx);
      s += p[j];
    }
    for (std::size_t j = 0; j < N; ++j) p[j] /= s;
    return mx + std::log(s);
  };
  return make_op(
      "cross_entropy", {}, {logits.handle(), targets.handle()},
      [B, N, softmax_row](Node& out) {
        const auto& Z = out.inputs[0]->value;
        const auto& Y = out.inputs[1]->value;
        std::vector<double> p(N);
        double total = 0.0;
        for (std::size_t i = 0; i < B; ++i) {
          const double lse = softmax_row(&Z[i * N], p.data());
          for (std::size_t j = 0; j < N; ++j)
            total += Y[i * N + j] * (lse - Z[i * N + j]);
        }
        out.value[0] = total / static_cast<double>(B);
      },
      [B, N, softmax_row](Node& out) {
        auto& zn = *out.inputs[0];
        const auto& Y = out.inputs[1]->value;
        auto& g = zn.grad_buffer();
        std::vector<double> p(N);
        const double scale = out.grad[0] / static_cast<double>(B);
        for (std::size_t i = 0; i < B; ++i) {
          softmax_row(&zn.value[i * N], p.data());
          double ysum = 0.0;
          for (std::size_t j = 0; j < N; ++j) ysum += Y[i * N + j];
          for (std::size_t j = 0; j < N; ++j)
            g[i * N + j] += scale * (ysum * p[j] - Y[i * N + j]);
        }
      });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (numel(shape) != a.size()) shape_fail("reshape", a.shape(), shape);
  return make_op(
      "reshape", std::move(shape), {a.handle()},
      [](Node& out) { out.value = out.inputs[0]->value; },
      [](Node& out) {
        auto& g = out.inputs[0]->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += out.grad[i];
      });
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
  if (!is_matrix(a) || !is_matrix(b) || a.dim(0) != b.dim(0))
    shape_fail("concat_cols", a.shape(), b.shape());
  const std::size_t m = a.dim(0), p = a.dim(1), q = b.dim(1);
  return make_op(
      "concat_cols", {m, p + q}, {a.handle(), b.handle()},
      [m, p, q](Node& out) {
        const auto& A = out.inputs[0]->value;
        const auto& Bv = out.inputs[1]->value;
        for (std::size_t i = 0; i < m; ++i) {
          std::copy_n(&A[i * p], p, &out.value[i * (p + q)]);
          std::copy_n(&Bv[i * q], q, &out.value[i * (p + q) + p]);
        }
      },
      [m, p, q](Node& out) {
        auto& A = *out.inputs[0];
        auto& Bn = *out.inputs[1];
        for (std::size_t i = 0; i < m; ++i) {
          if (A.requires_grad) {
            auto& g = A.grad_buffer();
            for (std::size_t j = 0; j < p; ++j) g[i * p + j] += out.grad[i * (p + q) + j];
          }
          if (Bn.requires_grad) {
            auto& g = Bn.grad_buffer();
            for (std::size_t j = 0; j < q; ++j)
              g[i * q + j] += out.grad[i * (p + q) + p + j];
          }
        }
      });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  Shape tail(parts[0].shape().begin() + 1, parts[0].shape().end());
  if (parts[0].rank() == 0) shape_fail("concat_rows", parts[0].shape(), "scalar part");
  std::size_t rows = 0;
  std::vector<NodePtr> inputs;
  for (const auto& t : parts) {
    if (t.rank() == 0 || Shape(t.shape().begin() + 1, t.shape().end()) != tail)
      shape_fail("concat_rows", parts[0].shape(), t.shape());
    rows += t.dim(0);
    inputs.push_back(t.handle());
  }
  Shape shape{rows};
  shape.insert(shape.end(), tail.begin(), tail.end());
  return make_op(
      "concat_rows", shape, std::move(inputs),
      [](Node& out) {
        std::size_t off = 0;
        for (const auto& in : out.inputs) {
          std::copy(in->value.begin(), in->value.end(), out.value.begin() + off);
          off += in->value.size();
        }
      },
      [](Node& out) {
        std::size_t off = 0;
        for (const auto& in : out.inputs) {
          if (in->requires_grad) {
            auto& g = in->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += out.grad[off + i];
          }
          off += in->value.size();
        }
      });
}

Tensor repeat_rows(const Tensor& row, std::size_t count) {
  if (row.rank() != 1 || count == 0)
    shape_fail("repeat_rows", row.shape(), "expected a vector and count >= 1");
  const std::size_t n = row.dim(0);
  return make_op(
      "repeat_rows", {count, n}, {row.handle()},
      [count, n](Node& out) {
        for (std::size_t r = 0; r < count; ++r)
          std::copy_n(out.inputs[0]->value.begin(), n, out.value.begin() + r * n);
      },
      [count, n](Node& out) {
        auto& g = out.inputs[0]->grad_buffer();
        for (std::size_t r = 0; r < count; ++r)
          for (std::size_t j = 0; j < n; ++j) g[j] += out.grad[r * n + j];
      });
}

}  // namespace moapt::ad
