#include "hidformer/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>
#include <unordered_set>

#include "hidformer/error.hpp"

namespace hidformer {

namespace {

constexpr const char* kModule = "tensor";

using NodePtr = std::shared_ptr<detail::Node>;

[[noreturn]] void dimension_error(const std::string& op, const std::string& what) {
  throw ContractError(kModule, op + ": " + what);
}

void check_finite(const detail::Node& node) {
  for (double v : node.data) {
    if (!std::isfinite(v)) {
      throw NumericError(kModule, std::string("non-finite value produced by ") + node.op);
    }
  }
}

// Creates an op output. The node joins the graph only when some parent
// requires a gradient; otherwise it is a plain constant.
Tensor make_result(const char* op, Shape shape, std::vector<double> data,
                   std::vector<NodePtr> parents,
                   std::function<void(detail::Node&)> backward_rule) {
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->op = op;
  check_finite(*node);
  const bool needs_grad = std::any_of(parents.begin(), parents.end(),
                                      [](const NodePtr& p) { return p->requires_grad; });
  if (needs_grad) {
    node->requires_grad = true;
    node->parents = std::move(parents);
    node->backward = std::move(backward_rule);
  }
  return Tensor(std::move(node));
}

// Accumulation target for a parent, or nullptr if it needs no gradient.
double* grad_of(detail::Node& node) {
  if (!node.requires_grad) return nullptr;
  node.ensure_grad();
  return node.grad.data();
}

const detail::Node& checked(const Tensor& t, const char* op) {
  if (!t.defined()) dimension_error(op, "undefined tensor argument");
  return *t.node();
}

void require_matrix(const Tensor& t, const char* op) {
  if (checked(t, op).shape.size() != 2) {
    dimension_error(op, "expected a matrix, got shape " + shape_to_string(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (checked(a, op).shape != checked(b, op).shape) {
    dimension_error(op, "shape mismatch " + shape_to_string(a.shape()) + " vs " +
                            shape_to_string(b.shape()));
  }
}

// Plain row-major GEMM helpers: out[m x n] (+)= a[m x k] * b[k x n] with
// optional transposition of either operand.
void gemm(const double* a, const double* b, double* out, std::size_t m, std::size_t k,
          std::size_t n, bool trans_a, bool trans_b) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double av = trans_a ? a[p * m + i] : a[i * k + p];
      if (av == 0.0) continue;
      for (std::size_t j = 0; j < n; ++j) {
        const double bv = trans_b ? b[j * k + p] : b[p * n + j];
        out[i * n + j] += av * bv;
      }
    }
  }
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

// ---------------------------------------------------------------------------
// Tensor

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const auto n = shape_numel(shape);
  return from(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  if (shape_numel(shape) != values.size()) {
    dimension_error("from", "shape " + shape_to_string(shape) + " holds " +
                                std::to_string(shape_numel(shape)) + " values, got " +
                                std::to_string(values.size()));
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->data = std::move(values);
  check_finite(*node);
  node->requires_grad = requires_grad;
  if (requires_grad) node->ensure_grad();
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from({}, {value}, requires_grad);
}

const Shape& Tensor::shape() const { return checked(*this, "shape").shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) dimension_error("dim", "axis out of range");
  return s[axis];
}

std::size_t Tensor::numel() const { return checked(*this, "numel").data.size(); }

std::span<const double> Tensor::data() const { return checked(*this, "data").data; }

std::span<double> Tensor::mutable_data() {
  checked(*this, "mutable_data");
  return node_->data;
}

std::span<const double> Tensor::grad() const {
  checked(*this, "grad");
  node_->ensure_grad();
  return node_->grad;
}

std::span<double> Tensor::mutable_grad() {
  checked(*this, "grad");
  node_->ensure_grad();
  return node_->grad;
}

bool Tensor::requires_grad() const { return defined() && node_->requires_grad; }

void Tensor::zero_grad() {
  checked(*this, "zero_grad");
  std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

double Tensor::item() const {
  if (numel() != 1) dimension_error("item", "tensor has " + std::to_string(numel()) + " values");
  return node_->data[0];
}

double Tensor::at(std::size_t row, std::size_t col) const {
  require_matrix(*this, "at");
  return node_->data[row * node_->shape[1] + col];
}

Tensor Tensor::detach() const { return from(shape(), to_vector(), false); }

std::vector<double> Tensor::to_vector() const {
  auto d = data();
  return {d.begin(), d.end()};
}

const char* Tensor::op_name() const { return checked(*this, "op_name").op; }

// ---------------------------------------------------------------------------
// Tape

ComputationTape::ComputationTape(const Tensor& loss) : loss_(loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError(kModule, "backward requires a scalar loss");
  }
  // Iterative post-order DFS: a node is emitted after all of its parents.
  std::unordered_set<const detail::Node*> seen;
  std::vector<std::pair<NodePtr, std::size_t>> stack;
  if (loss.node()->requires_grad) stack.emplace_back(loss.node(), 0);
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      const NodePtr& parent = node->parents[next++];
      if (parent->requires_grad && seen.insert(parent.get()).second) {
        stack.emplace_back(parent, 0);
      }
      continue;
    }
    nodes_.push_back(node);
    stack.pop_back();
  }
  view_.reserve(nodes_.size());
  for (const auto& n : nodes_) view_.push_back(n.get());
}

void ComputationTape::run_backward() {
  if (nodes_.empty()) return;
  // Interior gradients restart from zero on every replay; leaves accumulate.
  for (auto& node : nodes_) {
    if (node->backward) node->grad.assign(node->data.size(), 0.0);
  }
  auto& root = *nodes_.back();
  root.ensure_grad();
  root.grad[0] += 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    if ((*it)->backward) (*it)->backward(**it);
  }
  for (auto& node : nodes_) {
    if (node->backward) {
      node->grad.clear();
      node->grad.shrink_to_fit();
    }
  }
}

void backward(const Tensor& loss) { ComputationTape(loss).run_backward(); }

// ---------------------------------------------------------------------------
// Linear algebra

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const auto m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    dimension_error("matmul", "inner extents differ: " + shape_to_string(a.shape()) + " * " +
                                  shape_to_string(b.shape()));
  }
  std::vector<double> out(m * n, 0.0);
  gemm(a.data().data(), b.data().data(), out.data(), m, k, n, false, false);
  NodePtr an = a.node(), bn = b.node();
  return make_result("matmul", {m, n}, std::move(out), {an, bn},
                     [an, bn, m, k, n](detail::Node& self) {
                       if (double* ga = grad_of(*an)) {
                         gemm(self.grad.data(), bn->data.data(), ga, m, n, k, false, true);
                       }
                       if (double* gb = grad_of(*bn)) {
                         gemm(an->data.data(), self.grad.data(), gb, k, m, n, true, false);
                       }
                     });
}

Tensor transpose(const Tensor& a) {
  require_matrix(a, "transpose");
  const auto m = a.dim(0), n = a.dim(1);
  std::vector<double> out(m * n);
  auto src = a.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = src[i * n + j];
  NodePtr an = a.node();
  return make_result("transpose", {n, m}, std::move(out), {an},
                     [an, m, n](detail::Node& self) {
                       double* ga = grad_of(*an);
                       for (std::size_t i = 0; i < m; ++i)
                         for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += self.grad[j * m + i];
                     });
}

Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b) {
  require_matrix(w, "affine");
  const auto& xs = checked(x, "affine").shape;
  const auto d_in = w.dim(0), d_out = w.dim(1);
  if (xs.empty() || xs.back() != d_in) {
    dimension_error("affine", "input " + shape_to_string(xs) + " does not end in " +
                                  std::to_string(d_in));
  }
  if (checked(b, "affine").shape != Shape{d_out}) {
    dimension_error("affine", "bias " + shape_to_string(b.shape()) + " must be [" +
                                  std::to_string(d_out) + "]");
  }
  const auto rows = x.numel() / d_in;
  std::vector<double> out(rows * d_out);
  auto bias = b.data();
  for (std::size_t r = 0; r < rows; ++r)
    std::copy(bias.begin(), bias.end(), out.begin() + static_cast<std::ptrdiff_t>(r * d_out));
  gemm(x.data().data(), w.data().data(), out.data(), rows, d_in, d_out, false, false);
  Shape shape = xs;
  shape.back() = d_out;
  NodePtr xn = x.node(), wn = w.node(), bn = b.node();
  return make_result("affine", std::move(shape), std::move(out), {xn, wn, bn},
                     [xn, wn, bn, rows, d_in, d_out](detail::Node& self) {
                       if (double* gx = grad_of(*xn)) {
                         gemm(self.grad.data(), wn->data.data(), gx, rows, d_out, d_in, false,
                              true);
                       }
                       if (double* gw = grad_of(*wn)) {
                         gemm(xn->data.data(), self.grad.data(), gw, d_in, rows, d_out, true,
                              false);
                       }
                       if (double* gb = grad_of(*bn)) {
                         for (std::size_t r = 0; r < rows; ++r)
                           for (std::size_t j = 0; j < d_out; ++j) gb[j] += self.grad[r * d_out + j];
                       }
                     });
}

// ---------------------------------------------------------------------------
// Elementwise

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  auto ad = a.data(), bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] + bd[i];
  NodePtr an = a.node(), bn = b.node();
  return make_result("add", a.shape(), std::move(out), {an, bn}, [an, bn](detail::Node& self) {
    for (auto* p : {an.get(), bn.get()}) {
      if (double* g = grad_of(*p))
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  auto ad = a.data(), bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] - bd[i];
  NodePtr an = a.node(), bn = b.node();
  return make_result("sub", a.shape(), std::move(out), {an, bn}, [an, bn](detail::Node& self) {
    if (double* g = grad_of(*an))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    if (double* g = grad_of(*bn))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] -= self.grad[i];
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  auto ad = a.data(), bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] * bd[i];
  NodePtr an = a.node(), bn = b.node();
  return make_result("mul", a.shape(), std::move(out), {an, bn}, [an, bn](detail::Node& self) {
    if (double* g = grad_of(*an))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * bn->data[i];
    if (double* g = grad_of(*bn))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * an->data[i];
  });
}

Tensor scale(const Tensor& a, double factor) {
  std::vector<double> out(checked(a, "scale").data);
  for (auto& v : out) v *= factor;
  NodePtr an = a.node();
  return make_result("scale", a.shape(), std::move(out), {an}, [an, factor](detail::Node& self) {
    double* g = grad_of(*an);
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * factor;
  });
}

Tensor relu(const Tensor& x) {
  std::vector<double> out(checked(x, "relu").data);
  for (auto& v : out) v = v > 0.0 ? v : 0.0;
  NodePtr xn = x.node();
  return make_result("relu", x.shape(), std::move(out), {xn}, [xn](detail::Node& self) {
    double* g = grad_of(*xn);
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      if (xn->data[i] > 0.0) g[i] += self.grad[i];
  });
}

double feature_map_value(double u) { return u >= 0.0 ? u + 1.0 : std::exp(u); }

Tensor feature_map(const Tensor& x) {
  std::vector<double> out(checked(x, "feature_map").data);
  for (auto& v : out) v = feature_map_value(v);
  NodePtr xn = x.node();
  return make_result("feature_map", x.shape(), std::move(out), {xn}, [xn](detail::Node& self) {
    double* g = grad_of(*xn);
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      // d/du: 1 on the linear branch, exp(u) == output on the exponential one.
      const double slope = xn->data[i] >= 0.0 ? 1.0 : self.data[i];
      g[i] += self.grad[i] * slope;
    }
  });
}

// ---------------------------------------------------------------------------
// Normalization and transforms

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  const auto& xs = checked(x, "layer_norm").shape;
  if (xs.empty() || xs.back() == 0) dimension_error("layer_norm", "needs a nonempty last axis");
  const auto d = xs.back();
  if (checked(gamma, "layer_norm").shape != Shape{d} || checked(beta, "layer_norm").shape != Shape{d}) {
    dimension_error("layer_norm", "gamma/beta must be [" + std::to_string(d) + "]");
  }
  if (!(eps > 0.0)) dimension_error("layer_norm", "eps must be positive");
  const auto rows = x.numel() / d;
  auto xd = x.data(), gd = gamma.data(), bd = beta.data();
  std::vector<double> out(x.numel());
  auto x_hat = std::make_shared<std::vector<double>>(x.numel());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xd.data() + r * d;
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += row[j];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = inv;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (row[j] - mean) * inv;
      (*x_hat)[r * d + j] = h;
      out[r * d + j] = gd[j] * h + bd[j];
    }
  }
  NodePtr xn = x.node(), gn = gamma.node(), bn = beta.node();
  return make_result(
      "layer_norm", xs, std::move(out), {xn, gn, bn},
      [xn, gn, bn, x_hat, inv_std, rows, d](detail::Node& self) {
        double* gx = grad_of(*xn);
        double* gg = grad_of(*gn);
        double* gb = grad_of(*bn);
        std::vector<double> dxhat(d);
        for (std::size_t r = 0; r < rows; ++r) {
          const double* g = self.grad.data() + r * d;
          const double* h = x_hat->data() + r * d;
          double mean_d = 0.0, mean_dh = 0.0;
          for (std::size_t j = 0; j < d; ++j) {
            if (gg) gg[j] += g[j] * h[j];
            if (gb) gb[j] += g[j];
            dxhat[j] = g[j] * gn->data[j];
            mean_d += dxhat[j];
            mean_dh += dxhat[j] * h[j];
          }
          if (!gx) continue;
          mean_d /= static_cast<double>(d);
          mean_dh /= static_cast<double>(d);
          for (std::size_t j = 0; j < d; ++j)
            gx[r * d + j] += (*inv_std)[r] * (dxhat[j] - mean_d - h[j] * mean_dh);
        }
      });
}

namespace {

// cos/sin of 2*pi*m/L for m in [0, L), exact at multiples of a quarter turn.
struct TwiddleTable {
  std::vector<double> cos, sin;
  explicit TwiddleTable(std::size_t len) : cos(len), sin(len) {
    for (std::size_t m = 0; m < len; ++m) {
      if ((4 * m) % len == 0) {
        static constexpr double kC[] = {1.0, 0.0, -1.0, 0.0};
        static constexpr double kS[] = {0.0, 1.0, 0.0, -1.0};
        cos[m] = kC[4 * m / len];
        sin[m] = kS[4 * m / len];
      } else {
        const double angle = 2.0 * std::numbers::pi * static_cast<double>(m) /
                             static_cast<double>(len);
        cos[m] = std::cos(angle);
        sin[m] = std::sin(angle);
      }
    }
  }
};

}  // namespace

Tensor rdft(const Tensor& x) {
  const auto& xs = checked(x, "rdft").shape;
  if (xs.empty() || xs.back() == 0) dimension_error("rdft", "needs a nonempty last axis");
  const auto len = xs.back();
  const auto bins = len / 2 + 1;
  const auto rows = x.numel() / len;
  auto table = std::make_shared<TwiddleTable>(len);
  std::vector<double> out(rows * 2 * bins, 0.0);
  auto xd = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xd.data() + r * len;
    double* re = out.data() + r * 2 * bins;
    double* im = re + bins;
    for (std::size_t k = 0; k < bins; ++k) {
      for (std::size_t n = 0; n < len; ++n) {
        const auto m = (k * n) % len;
        re[k] += in[n] * table->cos[m];
        im[k] -= in[n] * table->sin[m];
      }
    }
  }
  Shape shape = xs;
  shape.back() = 2 * bins;
  NodePtr xn = x.node();
  return make_result("rdft", std::move(shape), std::move(out), {xn},
                     [xn, table, rows, len, bins](detail::Node& self) {
                       double* gx = grad_of(*xn);
                       for (std::size_t r = 0; r < rows; ++r) {
                         const double* gre = self.grad.data() + r * 2 * bins;
                         const double* gim = gre + bins;
                         for (std::size_t n = 0; n < len; ++n) {
                           double acc = 0.0;
                           for (std::size_t k = 0; k < bins; ++k) {
                             const auto m = (k * n) % len;
                             acc += gre[k] * table->cos[m] - gim[k] * table->sin[m];
                           }
                           gx[r * len + n] += acc;
                         }
                       }
                     });
}

// ---------------------------------------------------------------------------
// Structural

namespace {

// Result whose values are a copy of the parent's; the gradient passes
// through unchanged.
Tensor passthrough(const char* op, const Tensor& x, Shape shape) {
  NodePtr xn = x.node();
  return make_result(op, std::move(shape), xn->data, {xn}, [xn](detail::Node& self) {
    double* g = grad_of(*xn);
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
  });
}

}  // namespace

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != checked(x, "reshape").data.size()) {
    dimension_error("reshape", "cannot view " + shape_to_string(x.shape()) + " as " +
                                   shape_to_string(shape));
  }
  return passthrough("reshape", x, std::move(shape));
}

Tensor flatten(const Tensor& x) { return reshape(x, {checked(x, "flatten").data.size()}); }

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end) {
  require_matrix(x, "slice_rows");
  const auto cols = x.dim(1);
  if (begin > end || end > x.dim(0)) dimension_error("slice_rows", "row range out of bounds");
  auto xd = x.data();
  std::vector<double> out(xd.begin() + static_cast<std::ptrdiff_t>(begin * cols),
                          xd.begin() + static_cast<std::ptrdiff_t>(end * cols));
  NodePtr xn = x.node();
  const auto offset = begin * cols;
  return make_result("slice_rows", {end - begin, cols}, std::move(out), {xn},
                     [xn, offset](detail::Node& self) {
                       double* g = grad_of(*xn);
                       for (std::size_t i = 0; i < self.grad.size(); ++i) g[offset + i] += self.grad[i];
                     });
}

Tensor pad_rows(const Tensor& x, std::size_t extra_rows) {
  require_matrix(x, "pad_rows");
  std::vector<double> out(checked(x, "pad_rows").data);
  out.resize(out.size() + extra_rows * x.dim(1), 0.0);
  NodePtr xn = x.node();
  const auto n = x.numel();
  return make_result("pad_rows", {x.dim(0) + extra_rows, x.dim(1)}, std::move(out), {xn},
                     [xn, n](detail::Node& self) {
                       double* g = grad_of(*xn);
                       for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[i];
                     });
}

namespace {

Tensor concat_impl(const char* op, const std::vector<Tensor>& parts, Shape shape) {
  std::vector<double> out;
  out.reserve(shape_numel(shape));
  std::vector<NodePtr> parents;
  for (const auto& p : parts) {
    auto d = p.data();
    out.insert(out.end(), d.begin(), d.end());
    parents.push_back(p.node());
  }
  auto captured = parents;
  return make_result(op, std::move(shape), std::move(out), std::move(parents),
                     [captured](detail::Node& self) {
                       std::size_t offset = 0;
                       for (const auto& p : captured) {
                         if (double* g = grad_of(*p))
                           for (std::size_t i = 0; i < p->data.size(); ++i)
                             g[i] += self.grad[offset + i];
                         offset += p->data.size();
                       }
                     });
}

}  // namespace

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) dimension_error("concat_rows", "no inputs");
  std::size_t rows = 0;
  const auto cols = checked(parts.front(), "concat_rows").shape.size() == 2 ? parts.front().dim(1) : 0;
  for (const auto& p : parts) {
    require_matrix(p, "concat_rows");
    if (p.dim(1) != cols) dimension_error("concat_rows", "column counts differ");
    rows += p.dim(0);
  }
  return concat_impl("concat_rows", parts, {rows, cols});
}

Tensor concat_flat(const std::vector<Tensor>& parts) {
  if (parts.empty()) dimension_error("concat_flat", "no inputs");
  std::size_t total = 0;
  for (const auto& p : parts) total += checked(p, "concat_flat").data.size();
  return concat_impl("concat_flat", parts, {total});
}

Tensor div_rows(const Tensor& num, const Tensor& den, double eps) {
  require_matrix(num, "div_rows");
  require_matrix(den, "div_rows");
  const auto n = num.dim(0), d = num.dim(1);
  if (den.dim(0) != n || den.dim(1) != 1) {
    dimension_error("div_rows", "denominator must be [" + std::to_string(n) + "x1]");
  }
  auto nd = num.data(), dd = den.data();
  std::vector<double> out(n * d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] = nd[i * d + j] / (dd[i] + eps);
  NodePtr nn = num.node(), dn = den.node();
  return make_result("div_rows", {n, d}, std::move(out), {nn, dn},
                     [nn, dn, n, d, eps](detail::Node& self) {
                       double* gn = grad_of(*nn);
                       double* gd = grad_of(*dn);
                       for (std::size_t i = 0; i < n; ++i) {
                         const double denom = dn->data[i] + eps;
                         double acc = 0.0;
                         for (std::size_t j = 0; j < d; ++j) {
                           const double g = self.grad[i * d + j];
                           if (gn) gn[i * d + j] += g / denom;
                           acc += g * nn->data[i * d + j];
                         }
                         if (gd) gd[i] -= acc / (denom * denom);
                       }
                     });
}

Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : checked(x, "sum").data) total += v;
  NodePtr xn = x.node();
  return make_result("sum", {}, {total}, {xn}, [xn](detail::Node& self) {
    double* g = grad_of(*xn);
    for (std::size_t i = 0; i < xn->data.size(); ++i) g[i] += self.grad[0];
  });
}

// ---------------------------------------------------------------------------
// Gradient check

GradCheckReport finite_diff_check(const std::function<Tensor()>& f, std::span<Tensor> params,
                                  double h, double tol, double abs_floor) {
  GradCheckReport report;
  if (!(h > 0.0)) throw ContractError(kModule, "finite_diff_check: h must be positive");

  auto evaluate = [&](double& value) -> bool {
    try {
      value = f().item();
    } catch (const NumericError& e) {
      report.diagnostic = e.what();
      return false;
    }
    if (!std::isfinite(value)) {
      report.diagnostic = "objective returned a non-finite value";
      return false;
    }
    return true;
  };

  for (auto& p : params) p.zero_grad();
  Tensor loss;
  try {
    loss = f();
  } catch (const NumericError& e) {
    report.diagnostic = e.what();
    return report;
  }
  if (!std::isfinite(loss.item())) {
    report.diagnostic = "objective returned a non-finite value";
    return report;
  }
  backward(loss);

  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto analytic = params[pi].to_vector();
    {
      auto g = params[pi].grad();
      analytic.assign(g.begin(), g.end());
    }
    auto values = params[pi].mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double original = values[i];
      double up = 0.0, down = 0.0;
      values[i] = original + h;
      const bool ok_up = evaluate(up);
      values[i] = original - h;
      const bool ok_down = ok_up && evaluate(down);
      values[i] = original;
      if (!ok_up || !ok_down) {
        report.passed = false;
        report.worst_param = pi;
        report.worst_index = i;
        return report;
      }
      const double numeric = (up - down) / (2.0 * h);
      const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), abs_floor});
      const double rel = std::abs(analytic[i] - numeric) / denom;
      ++report.coordinates_checked;
      if (rel > report.max_relative_error) {
        report.max_relative_error = rel;
        report.worst_param = pi;
        report.worst_index = i;
      }
    }
  }
  report.passed = report.max_relative_error <= tol;
  if (!report.passed) {
    report.diagnostic = "max relative error " + std::to_string(report.max_relative_error) +
                        " exceeds tolerance at parameter " + std::to_string(report.worst_param) +
                        " index " + std::to_string(report.worst_index);
  }
  return report;
}

}  // namespace hidformer
