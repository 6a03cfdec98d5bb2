#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

namespace posr::autodiff {

// Dense double-precision tensors with reverse-mode automatic
// differentiation. Graphs are built eagerly: every operation computes its
// forward values immediately and records enough provenance to push adjoints
// back to its inputs. Nodes that produced values through an operation are
// immutable; only leaves may be mutated (that is how the optimizer updates
// parameters between steps).
//
// Nothing here is thread-aware. Distinct graphs can be built and
// differentiated from distinct threads; a single graph must stay on one.

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct TensorNode {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // empty until first touched by backward()
  bool requires_grad = false;
  std::string op;  // empty for leaves
  std::vector<std::shared_ptr<TensorNode>> inputs;
  std::function<void(TensorNode&)> backward_fn;

  std::size_t size() const { return values.size(); }
  bool is_leaf() const { return inputs.empty(); }
  void ensure_grad() {
    if (grad.empty()) grad.assign(values.size(), 0.0);
  }
};

class Tensor {
 public:
  Tensor() = default;

  static Tensor leaf(Shape shape, std::vector<double> values,
                     bool requires_grad = false);
  static Tensor scalar(double v, bool requires_grad = false);
  static Tensor full(const Shape& shape, double v, bool requires_grad = false);
  static Tensor zeros(const Shape& shape, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t size() const;
  const std::vector<double>& values() const;
  // Leaves only. Mutating a tensor that has provenance would corrupt the
  // recorded graph, so that is rejected.
  std::vector<double>& mutable_values();
  bool requires_grad() const;

  bool has_grad() const;
  const std::vector<double>& grad() const;  // throws if no grad accumulated
  Tensor grad_or_zeros() const;
  void clear_grad() const;

  double item() const;  // value of a single-element tensor

  const std::shared_ptr<TensorNode>& node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<TensorNode> node) : node_(std::move(node)) {}
  std::shared_ptr<TensorNode> node_;

  friend Tensor make_op(std::string, std::vector<Tensor>, Shape,
                        std::vector<double>,
                        std::function<void(TensorNode&)>);
};

// Generic primitive constructor: records provenance when any input requires
// gradients, otherwise returns a constant result with no graph attached.
// All built-in primitives below go through this; tests may use it to build
// custom ops (e.g. deliberately broken backward rules for mutation checks).
Tensor make_op(std::string op_name, std::vector<Tensor> inputs,
               Shape out_shape, std::vector<double> out_values,
               std::function<void(TensorNode&)> backward_fn);

// Elementwise binaries with numpy-style right-aligned broadcasting.
Tensor add(const Tensor& a, const Tensor& b);
Tensor subtract(const Tensor& a, const Tensor& b);
Tensor elementwise_multiply(const Tensor& a, const Tensor& b);

// Elementwise unaries.
Tensor scalar_multiply(const Tensor& a, double s);
Tensor negate(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);  // DomainError on non-positive entries
Tensor square(const Tensor& a);
Tensor elu(const Tensor& a);  // alpha = 1
Tensor maximum_with_scalar(const Tensor& a, double c);  // subgradient 0 at a == c

// Rank-2 matrix product; trans_a / trans_b operate on the stored operand.
Tensor matmul(const Tensor& a, const Tensor& b, bool trans_a = false,
              bool trans_b = false);

Tensor reshape(const Tensor& a, Shape new_shape);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);

Tensor sum(const Tensor& a);  // full reduction to a scalar
Tensor sum(const Tensor& a, std::size_t axis, bool keepdims);
Tensor mean(const Tensor& a);  // full reduction to a scalar
Tensor max(const Tensor& a, std::size_t axis, bool keepdims);

// Non-overlapping max pooling over the last axis; a trailing remainder
// shorter than `pool` is dropped.
Tensor max_pool_time(const Tensor& a, std::size_t pool);

// x: [B, F_in, C, T], w: [F_out, F_in, K], bias: [F_out].
// 1-D cross-correlation along time, applied to every channel independently.
// Output: [B, F_out, C, T - K + 1].
Tensor conv1d_temporal(const Tensor& x, const Tensor& w, const Tensor& bias);

// x: [B, F_in, C, T], w: [F_out, F_in, C], bias: [F_out].
// Contraction over feature maps and all channels at each time step.
// Output: [B, F_out, 1, T].
Tensor conv_spatial(const Tensor& x, const Tensor& w, const Tensor& bias);

// Reverse-mode sweep from a scalar loss. Adjoints accumulate additively into
// every reachable node that requires gradients.
void backward(const Tensor& loss);

struct Parameter {
  std::string name;
  Tensor value;
};

// Per-parameter gradients after backward(); parameters the loss never
// reached map to zero tensors.
std::map<std::string, Tensor> gradient_map(const std::vector<Parameter>& params);

struct GradCheckEntry {
  std::string name;
  double max_rel_err = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  bool ok = true;
};

struct GradCheckReport {
  double h = 0.0;
  double tol = 0.0;
  std::vector<GradCheckEntry> entries;
  bool all_ok() const;
  double max_rel_err() const;
};

// Central finite-difference verification of backward(). `build_loss` must
// deterministically rebuild the scalar loss from the current parameter
// values; two differing evaluations raise NondeterministicLossError.
// Relative error per element: |a - n| / max(1e-12, |a| + |n|).
// Parameters whose tensor does not require gradients are skipped.
GradCheckReport grad_check(const std::function<Tensor()>& build_loss,
                           const std::vector<Parameter>& params,
                           double h = 1e-5, double tol = 1e-4);

}  // namespace posr::autodiff
