#pragma once

// Small reverse-mode differentiation core. A Tensor is a cheap handle to a
// shared graph node; copying a Tensor aliases the same values and gradient.
// Operations on tensors that require gradients record their parents and a
// backward rule; backward() replays the recorded graph in reverse
// topological order exactly once per node.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace hidformer {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // allocated only when requires_grad
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into the parents' grads.
  std::function<void(Node&)> backward;

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  }
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values,
                     bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const noexcept { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  // Direct writes are reserved for leaves (parameters, optimizer updates).
  std::span<double> mutable_data();
  std::span<const double> grad() const;
  std::span<double> mutable_grad();

  bool requires_grad() const;
  void zero_grad();
  double item() const;
  double at(std::size_t i) const { return data()[i]; }
  double at(std::size_t row, std::size_t col) const;

  // Copy of the values with no gradient history.
  Tensor detach() const;
  std::vector<double> to_vector() const;

  const char* op_name() const;

  // Used by the op implementations and the tape.
  const std::shared_ptr<detail::Node>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Reverse topological record of the graph reachable from a scalar loss.
/// Every node appears once and after all of its inputs.
class ComputationTape {
 public:
  explicit ComputationTape(const Tensor& loss);

  std::size_t size() const { return nodes_.size(); }
  const std::vector<const detail::Node*>& nodes() const { return view_; }

  /// Seeds d(loss)/d(loss) = 1 and runs every backward rule once.
  void run_backward();

 private:
  Tensor loss_;
  std::vector<std::shared_ptr<detail::Node>> nodes_;
  std::vector<const detail::Node*> view_;
};

/// Accumulates d(loss)/d(t) into t.grad for every requires_grad tensor t.
/// Throws ContractError when loss is not a scalar.
void backward(const Tensor& loss);

// ---------------------------------------------------------------------------
// Primitives. All are differentiable in every Tensor argument.

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

/// x[..., d_in] * W[d_in, d_out] + b[d_out], broadcast over leading axes.
Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);

Tensor relu(const Tensor& x);

/// Positive kernel for linearized attention: u + 1 for u >= 0, exp(u) otherwise.
Tensor feature_map(const Tensor& x);
double feature_map_value(double u);

/// Standardizes over the last axis, then applies gamma * x_hat + beta.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps = 1e-5);

/// Unnormalized real DFT along the last axis. For length L the output's last
/// extent is 2 * (L/2 + 1): real parts of bins 0..L/2 followed by imaginary
/// parts.
Tensor rdft(const Tensor& x);

Tensor reshape(const Tensor& x, Shape shape);
Tensor flatten(const Tensor& x);

/// Rows [begin, end) of a matrix.
Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end);
/// Matrix with extra zero rows appended at the bottom.
Tensor pad_rows(const Tensor& x, std::size_t extra_rows);
/// Stacks matrices with equal column counts along axis 0.
Tensor concat_rows(const std::vector<Tensor>& parts);
/// Flattens every part and joins them into one vector.
Tensor concat_flat(const std::vector<Tensor>& parts);

/// num[i, j] / (den[i, 0] + eps) for num [n x d] and den [n x 1].
Tensor div_rows(const Tensor& num, const Tensor& den, double eps);

Tensor sum(const Tensor& x);

// ---------------------------------------------------------------------------

struct GradCheckReport {
  bool passed = false;
  double max_relative_error = 0.0;
  std::size_t worst_param = 0;
  std::size_t worst_index = 0;
  std::size_t coordinates_checked = 0;
  std::string diagnostic;  // non-empty on failure
};

/// Central-difference check of backward() against f. Each coordinate p_i of
/// every parameter is perturbed by +/-h; the relative error is
/// |analytic - numeric| / max(|analytic|, |numeric|, abs_floor).
GradCheckReport finite_diff_check(const std::function<Tensor()>& f,
                                  std::span<Tensor> params, double h,
                                  double tol, double abs_floor = 1e-6);

}  // namespace hidformer
