#include "posr/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>
#include <unordered_set>
#include <utility>

#include "posr/errors.hpp"

namespace posr::autodiff {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "x";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

namespace {

void check_shape_valid(const Shape& shape, const char* who) {
  if (shape.empty())
    throw ShapeError(std::string(who) + ": shape must have at least one axis");
  for (std::size_t d : shape)
    if (d == 0)
      throw ShapeError(std::string(who) + ": zero extent in shape " +
                       shape_str(shape));
}

const std::shared_ptr<TensorNode>& node_of(const Tensor& t, const char* who) {
  if (!t.defined()) throw ValueError(std::string(who) + ": undefined tensor");
  return t.node();
}

[[noreturn]] void shape_fail(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a) +
                   " and " + shape_str(b));
}

// Right-aligned broadcast plan: per output axis, the element stride into each
// operand (0 where that operand is broadcast).
struct Bcast {
  Shape out;
  std::vector<std::size_t> sa, sb;
};

std::vector<std::size_t> row_major_strides(const Shape& s) {
  std::vector<std::size_t> st(s.size());
  std::size_t acc = 1;
  for (std::size_t i = s.size(); i-- > 0;) {
    st[i] = acc;
    acc *= s[i];
  }
  return st;
}

Bcast broadcast_plan(const char* op, const Shape& a, const Shape& b) {
  const std::size_t ra = a.size(), rb = b.size();
  const std::size_t r = std::max(ra, rb);
  Bcast bc;
  bc.out.resize(r);
  bc.sa.assign(r, 0);
  bc.sb.assign(r, 0);
  const auto stra = row_major_strides(a);
  const auto strb = row_major_strides(b);
  for (std::size_t k = 0; k < r; ++k) {  // k counts axes from the right
    const std::size_t i = r - 1 - k;
    const std::size_t da = k < ra ? a[ra - 1 - k] : 1;
    const std::size_t db = k < rb ? b[rb - 1 - k] : 1;
    if (da != db && da != 1 && db != 1) shape_fail(op, a, b);
    bc.out[i] = std::max(da, db);
    if (k < ra && da != 1) bc.sa[i] = stra[ra - 1 - k];
    if (k < rb && db != 1) bc.sb[i] = strb[rb - 1 - k];
  }
  return bc;
}

// Visits every output element with the matching operand offsets.
template <class F>
void for_each_bcast(const Bcast& bc, F&& f) {
  const std::size_t r = bc.out.size();
  const std::size_t n = numel(bc.out);
  std::vector<std::size_t> idx(r, 0);
  std::size_t offa = 0, offb = 0;
  for (std::size_t i = 0; i < n; ++i) {
    f(i, offa, offb);
    for (std::size_t d = r; d-- > 0;) {
      ++idx[d];
      offa += bc.sa[d];
      offb += bc.sb[d];
      if (idx[d] < bc.out[d]) break;
      offa -= bc.sa[d] * bc.out[d];
      offb -= bc.sb[d] * bc.out[d];
      idx[d] = 0;
    }
  }
}

// C (+)= op(A) * op(B) where op(A) is M x K and op(B) is K x N; the trans
// flags describe how each operand is stored.
void matmul_raw(const double* a, bool ta, const double* b, bool tb,
                std::size_t m_dim, std::size_t k_dim, std::size_t n_dim,
                double* c, bool accumulate) {
  if (!accumulate) std::fill(c, c + m_dim * n_dim, 0.0);
  for (std::size_t m = 0; m < m_dim; ++m) {
    double* crow = c + m * n_dim;
    for (std::size_t k = 0; k < k_dim; ++k) {
      const double av = ta ? a[k * m_dim + m] : a[m * k_dim + k];
      if (av == 0.0) continue;
      if (!tb) {
        const double* brow = b + k * n_dim;
        for (std::size_t n = 0; n < n_dim; ++n) crow[n] += av * brow[n];
      } else {
        for (std::size_t n = 0; n < n_dim; ++n) crow[n] += av * b[n * k_dim + k];
      }
    }
  }
}

template <class Fwd, class Bwd>
Tensor unary_op(const char* name, const Tensor& a, Fwd&& fwd, Bwd&& bwd) {
  const auto& an = node_of(a, name);
  std::vector<double> out(an->values.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(an->values[i]);
  return make_op(name, {a}, an->shape, std::move(out),
                 [bwd](TensorNode& self) {
                   TensorNode& in = *self.inputs[0];
                   if (!in.requires_grad) return;
                   in.ensure_grad();
                   for (std::size_t i = 0; i < self.values.size(); ++i)
                     in.grad[i] += bwd(self.grad[i], in.values[i], self.values[i]);
                 });
}

}  // namespace

Tensor Tensor::leaf(Shape shape, std::vector<double> values,
                    bool requires_grad) {
  check_shape_valid(shape, "leaf");
  if (values.size() != numel(shape))
    throw ShapeError("leaf: " + std::to_string(values.size()) +
                     " values do not fill shape " + shape_str(shape));
  auto n = std::make_shared<TensorNode>();
  n->shape = std::move(shape);
  n->values = std::move(values);
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

Tensor Tensor::scalar(double v, bool requires_grad) {
  return leaf({1}, {v}, requires_grad);
}

Tensor Tensor::full(const Shape& shape, double v, bool requires_grad) {
  check_shape_valid(shape, "full");
  return leaf(shape, std::vector<double>(numel(shape), v), requires_grad);
}

Tensor Tensor::zeros(const Shape& shape, bool requires_grad) {
  return full(shape, 0.0, requires_grad);
}

const Shape& Tensor::shape() const { return node_of(*this, "shape")->shape; }

std::size_t Tensor::size() const { return node_of(*this, "size")->values.size(); }

const std::vector<double>& Tensor::values() const {
  return node_of(*this, "values")->values;
}

std::vector<double>& Tensor::mutable_values() {
  const auto& n = node_of(*this, "mutable_values");
  if (!n->is_leaf())
    throw ValueError("mutable_values: tensor produced by '" + n->op +
                     "' is immutable");
  return n->values;
}

bool Tensor::requires_grad() const {
  return node_of(*this, "requires_grad")->requires_grad;
}

bool Tensor::has_grad() const {
  return defined() && !node_->grad.empty();
}

const std::vector<double>& Tensor::grad() const {
  const auto& n = node_of(*this, "grad");
  if (n->grad.empty()) throw ValueError("grad: no gradient accumulated");
  return n->grad;
}

Tensor Tensor::grad_or_zeros() const {
  const auto& n = node_of(*this, "grad_or_zeros");
  if (n->grad.empty()) return Tensor::zeros(n->shape);
  return Tensor::leaf(n->shape, n->grad);
}

void Tensor::clear_grad() const {
  if (defined()) node_->grad.clear();
}

double Tensor::item() const {
  const auto& n = node_of(*this, "item");
  if (n->values.size() != 1)
    throw ValueError("item: tensor of shape " + shape_str(n->shape) +
                     " is not a scalar");
  return n->values[0];
}

Tensor make_op(std::string op_name, std::vector<Tensor> inputs,
               Shape out_shape, std::vector<double> out_values,
               std::function<void(TensorNode&)> backward_fn) {
  check_shape_valid(out_shape, op_name.c_str());
  if (out_values.size() != numel(out_shape))
    throw ShapeError(op_name + ": output values do not fill shape " +
                     shape_str(out_shape));
  auto n = std::make_shared<TensorNode>();
  n->shape = std::move(out_shape);
  n->values = std::move(out_values);
  n->op = std::move(op_name);
  bool needs_grad = false;
  for (const auto& t : inputs)
    if (t.defined() && t.requires_grad()) needs_grad = true;
  if (needs_grad) {
    n->requires_grad = true;
    n->inputs.reserve(inputs.size());
    for (const auto& t : inputs) n->inputs.push_back(t.node());
    n->backward_fn = std::move(backward_fn);
  }
  return Tensor(std::move(n));
}

Tensor add(const Tensor& a, const Tensor& b) {
  const auto& an = node_of(a, "add");
  const auto& bn = node_of(b, "add");
  Bcast bc = broadcast_plan("add", an->shape, bn->shape);
  std::vector<double> out(numel(bc.out));
  const auto& av = an->values;
  const auto& bv = bn->values;
  for_each_bcast(bc, [&](std::size_t i, std::size_t oa, std::size_t ob) {
    out[i] = av[oa] + bv[ob];
  });
  return make_op("add", {a, b}, bc.out, std::move(out),
                 [bc](TensorNode& self) {
                   TensorNode& A = *self.inputs[0];
                   TensorNode& B = *self.inputs[1];
                   const bool ga = A.requires_grad, gb = B.requires_grad;
                   if (ga) A.ensure_grad();
                   if (gb) B.ensure_grad();
                   for_each_bcast(bc, [&](std::size_t i, std::size_t oa,
                                          std::size_t ob) {
                     if (ga) A.grad[oa] += self.grad[i];
                     if (gb) B.grad[ob] += self.grad[i];
                   });
                 });
}

Tensor subtract(const Tensor& a, const Tensor& b) {
  const auto& an = node_of(a, "subtract");
  const auto& bn = node_of(b, "subtract");
  Bcast bc = broadcast_plan("subtract", an->shape, bn->shape);
  std::vector<double> out(numel(bc.out));
  const auto& av = an->values;
  const auto& bv = bn->values;
  for_each_bcast(bc, [&](std::size_t i, std::size_t oa, std::size_t ob) {
    out[i] = av[oa] - bv[ob];
  });
  return make_op("subtract", {a, b}, bc.out, std::move(out),
                 [bc](TensorNode& self) {
                   TensorNode& A = *self.inputs[0];
                   TensorNode& B = *self.inputs[1];
                   const bool ga = A.requires_grad, gb = B.requires_grad;
                   if (ga) A.ensure_grad();
                   if (gb) B.ensure_grad();
                   for_each_bcast(bc, [&](std::size_t i, std::size_t oa,
                                          std::size_t ob) {
                     if (ga) A.grad[oa] += self.grad[i];
                     if (gb) B.grad[ob] -= self.grad[i];
                   });
                 });
}

Tensor elementwise_multiply(const Tensor& a, const Tensor& b) {
  const auto& an = node_of(a, "elementwise_multiply");
  const auto& bn = node_of(b, "elementwise_multiply");
  Bcast bc = broadcast_plan("elementwise_multiply", an->shape, bn->shape);
  std::vector<double> out(numel(bc.out));
  const auto& av = an->values;
  const auto& bv = bn->values;
  for_each_bcast(bc, [&](std::size_t i, std::size_t oa, std::size_t ob) {
    out[i] = av[oa] * bv[ob];
  });
  return make_op("elementwise_multiply", {a, b}, bc.out, std::move(out),
                 [bc](TensorNode& self) {
                   TensorNode& A = *self.inputs[0];
                   TensorNode& B = *self.inputs[1];
                   const bool ga = A.requires_grad, gb = B.requires_grad;
                   if (ga) A.ensure_grad();
                   if (gb) B.ensure_grad();
                   for_each_bcast(bc, [&](std::size_t i, std::size_t oa,
                                          std::size_t ob) {
                     if (ga) A.grad[oa] += self.grad[i] * B.values[ob];
                     if (gb) B.grad[ob] += self.grad[i] * A.values[oa];
                   });
                 });
}

Tensor scalar_multiply(const Tensor& a, double s) {
  return unary_op("scalar_multiply", a,
                  [s](double v) { return s * v; },
                  [s](double g, double, double) { return g * s; });
}

Tensor negate(const Tensor& a) {
  return unary_op("negate", a, [](double v) { return -v; },
                  [](double g, double, double) { return -g; });
}

Tensor exp(const Tensor& a) {
  return unary_op("exp", a, [](double v) { return std::exp(v); },
                  [](double g, double, double out) { return g * out; });
}

Tensor log(const Tensor& a) {
  const auto& an = node_of(a, "log");
  for (double v : an->values)
    if (!(v > 0.0))
      throw DomainError("log: non-positive input value " + std::to_string(v));
  return unary_op("log", a, [](double v) { return std::log(v); },
                  [](double g, double in, double) { return g / in; });
}

Tensor square(const Tensor& a) {
  return unary_op("square", a, [](double v) { return v * v; },
                  [](double g, double in, double) { return g * 2.0 * in; });
}

Tensor elu(const Tensor& a) {
  return unary_op("elu", a,
                  [](double v) { return v > 0.0 ? v : std::expm1(v); },
                  [](double g, double in, double out) {
                    return g * (in > 0.0 ? 1.0 : out + 1.0);
                  });
}

Tensor maximum_with_scalar(const Tensor& a, double c) {
  return unary_op("maximum_with_scalar", a,
                  [c](double v) { return v > c ? v : c; },
                  [c](double g, double in, double) {
                    return in > c ? g : 0.0;
                  });
}

Tensor matmul(const Tensor& a, const Tensor& b, bool trans_a, bool trans_b) {
  const auto& an = node_of(a, "matmul");
  const auto& bn = node_of(b, "matmul");
  if (an->shape.size() != 2 || bn->shape.size() != 2)
    shape_fail("matmul", an->shape, bn->shape);
  const std::size_t m_dim = trans_a ? an->shape[1] : an->shape[0];
  const std::size_t k_dim = trans_a ? an->shape[0] : an->shape[1];
  const std::size_t k2 = trans_b ? bn->shape[1] : bn->shape[0];
  const std::size_t n_dim = trans_b ? bn->shape[0] : bn->shape[1];
  if (k_dim != k2) shape_fail("matmul", an->shape, bn->shape);
  std::vector<double> out(m_dim * n_dim);
  matmul_raw(an->values.data(), trans_a, bn->values.data(), trans_b, m_dim,
             k_dim, n_dim, out.data(), false);
  return make_op(
      "matmul", {a, b}, {m_dim, n_dim}, std::move(out),
      [trans_a, trans_b, m_dim, k_dim, n_dim](TensorNode& self) {
        TensorNode& A = *self.inputs[0];
        TensorNode& B = *self.inputs[1];
        const double* g = self.grad.data();
        if (A.requires_grad) {
          A.ensure_grad();
          if (!trans_a)
            matmul_raw(g, false, B.values.data(), !trans_b, m_dim, n_dim,
                       k_dim, A.grad.data(), true);
          else
            matmul_raw(B.values.data(), trans_b, g, true, k_dim, n_dim, m_dim,
                       A.grad.data(), true);
        }
        if (B.requires_grad) {
          B.ensure_grad();
          if (!trans_b)
            matmul_raw(A.values.data(), !trans_a, g, false, k_dim, m_dim,
                       n_dim, B.grad.data(), true);
          else
            matmul_raw(g, true, A.values.data(), trans_a, n_dim, m_dim, k_dim,
                       B.grad.data(), true);
        }
      });
}

Tensor reshape(const Tensor& a, Shape new_shape) {
  const auto& an = node_of(a, "reshape");
  check_shape_valid(new_shape, "reshape");
  if (numel(new_shape) != an->values.size())
    throw ShapeError("reshape: cannot view " + shape_str(an->shape) + " as " +
                     shape_str(new_shape));
  return make_op("reshape", {a}, std::move(new_shape),
                 std::vector<double>(an->values),
                 [](TensorNode& self) {
                   TensorNode& in = *self.inputs[0];
                   if (!in.requires_grad) return;
                   in.ensure_grad();
                   for (std::size_t i = 0; i < self.grad.size(); ++i)
                     in.grad[i] += self.grad[i];
                 });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ValueError("concat: no inputs");
  const auto& first = node_of(parts[0], "concat");
  const std::size_t r = first->shape.size();
  if (axis >= r)
    throw ShapeError("concat: axis " + std::to_string(axis) +
                     " out of range for rank " + std::to_string(r));
  std::size_t axis_total = 0;
  for (const auto& p : parts) {
    const auto& pn = node_of(p, "concat");
    if (pn->shape.size() != r) shape_fail("concat", first->shape, pn->shape);
    for (std::size_t d = 0; d < r; ++d)
      if (d != axis && pn->shape[d] != first->shape[d])
        shape_fail("concat", first->shape, pn->shape);
    axis_total += pn->shape[axis];
  }
  Shape out_shape = first->shape;
  out_shape[axis] = axis_total;

  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= out_shape[d];
  for (std::size_t d = axis + 1; d < r; ++d) inner *= out_shape[d];

  std::vector<double> out(numel(out_shape));
  std::vector<std::size_t> part_axis(parts.size());
  std::size_t at = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    part_axis[p] = parts[p].shape()[axis];
    const auto& pv = parts[p].values();
    const std::size_t block = part_axis[p] * inner;
    for (std::size_t o = 0; o < outer; ++o)
      std::copy(pv.begin() + o * block, pv.begin() + (o + 1) * block,
                out.begin() + o * axis_total * inner + at * inner);
    at += part_axis[p];
  }

  std::vector<Tensor> inputs = parts;
  return make_op(
      "concat", std::move(inputs), std::move(out_shape), std::move(out),
      [part_axis, outer, inner, axis_total](TensorNode& self) {
        std::size_t at = 0;
        for (std::size_t p = 0; p < self.inputs.size(); ++p) {
          TensorNode& in = *self.inputs[p];
          const std::size_t block = part_axis[p] * inner;
          if (in.requires_grad) {
            in.ensure_grad();
            for (std::size_t o = 0; o < outer; ++o) {
              const double* src =
                  self.grad.data() + o * axis_total * inner + at * inner;
              double* dst = in.grad.data() + o * block;
              for (std::size_t i = 0; i < block; ++i) dst[i] += src[i];
            }
          }
          at += part_axis[p];
        }
      });
}

Tensor sum(const Tensor& a) {
  const auto& an = node_of(a, "sum");
  double acc = 0.0;
  for (double v : an->values) acc += v;
  return make_op("sum", {a}, {1}, {acc}, [](TensorNode& self) {
    TensorNode& in = *self.inputs[0];
    if (!in.requires_grad) return;
    in.ensure_grad();
    const double g = self.grad[0];
    for (double& gi : in.grad) gi += g;
  });
}

namespace {

struct AxisDims {
  std::size_t outer = 1, mid = 1, inner = 1;
  Shape out_shape;
};

AxisDims axis_dims(const char* op, const Shape& shape, std::size_t axis,
                   bool keepdims) {
  if (axis >= shape.size())
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) +
                     " out of range for shape " + shape_str(shape));
  AxisDims d;
  for (std::size_t i = 0; i < axis; ++i) d.outer *= shape[i];
  d.mid = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) d.inner *= shape[i];
  d.out_shape = shape;
  if (keepdims)
    d.out_shape[axis] = 1;
  else
    d.out_shape.erase(d.out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  if (d.out_shape.empty()) d.out_shape = {1};
  return d;
}

}  // namespace

Tensor sum(const Tensor& a, std::size_t axis, bool keepdims) {
  const auto& an = node_of(a, "sum");
  AxisDims d = axis_dims("sum", an->shape, axis, keepdims);
  std::vector<double> out(d.outer * d.inner, 0.0);
  const auto& av = an->values;
  for (std::size_t o = 0; o < d.outer; ++o)
    for (std::size_t m = 0; m < d.mid; ++m) {
      const double* src = av.data() + (o * d.mid + m) * d.inner;
      double* dst = out.data() + o * d.inner;
      for (std::size_t i = 0; i < d.inner; ++i) dst[i] += src[i];
    }
  return make_op("sum", {a}, d.out_shape, std::move(out),
                 [d](TensorNode& self) {
                   TensorNode& in = *self.inputs[0];
                   if (!in.requires_grad) return;
                   in.ensure_grad();
                   for (std::size_t o = 0; o < d.outer; ++o)
                     for (std::size_t m = 0; m < d.mid; ++m) {
                       const double* src = self.grad.data() + o * d.inner;
                       double* dst = in.grad.data() + (o * d.mid + m) * d.inner;
                       for (std::size_t i = 0; i < d.inner; ++i)
                         dst[i] += src[i];
                     }
                 });
}

Tensor mean(const Tensor& a) {
  const auto& an = node_of(a, "mean");
  const double n = static_cast<double>(an->values.size());
  double acc = 0.0;
  for (double v : an->values) acc += v;
  return make_op("mean", {a}, {1}, {acc / n}, [n](TensorNode& self) {
    TensorNode& in = *self.inputs[0];
    if (!in.requires_grad) return;
    in.ensure_grad();
    const double g = self.grad[0] / n;
    for (double& gi : in.grad) gi += g;
  });
}

Tensor max(const Tensor& a, std::size_t axis, bool keepdims) {
  const auto& an = node_of(a, "max");
  AxisDims d = axis_dims("max", an->shape, axis, keepdims);
  std::vector<double> out(d.outer * d.inner);
  std::vector<std::size_t> arg(d.outer * d.inner);
  const auto& av = an->values;
  for (std::size_t o = 0; o < d.outer; ++o)
    for (std::size_t i = 0; i < d.inner; ++i) {
      std::size_t best = (o * d.mid) * d.inner + i;
      double best_v = av[best];
      for (std::size_t m = 1; m < d.mid; ++m) {
        const std::size_t at = (o * d.mid + m) * d.inner + i;
        if (av[at] > best_v) {  // first maximum wins ties
          best_v = av[at];
          best = at;
        }
      }
      out[o * d.inner + i] = best_v;
      arg[o * d.inner + i] = best;
    }
  return make_op("max", {a}, d.out_shape, std::move(out),
                 [arg](TensorNode& self) {
                   TensorNode& in = *self.inputs[0];
                   if (!in.requires_grad) return;
                   in.ensure_grad();
                   for (std::size_t j = 0; j < arg.size(); ++j)
                     in.grad[arg[j]] += self.grad[j];
                 });
}

Tensor max_pool_time(const Tensor& a, std::size_t pool) {
  const auto& an = node_of(a, "max_pool_time");
  if (pool == 0) throw ValueError("max_pool_time: pool size must be >= 1");
  const std::size_t t_in = an->shape.back();
  if (t_in < pool)
    throw ShapeError("max_pool_time: pool " + std::to_string(pool) +
                     " exceeds time axis of " + shape_str(an->shape));
  const std::size_t t_out = t_in / pool;
  Shape out_shape = an->shape;
  out_shape.back() = t_out;
  const std::size_t lead = an->values.size() / t_in;
  std::vector<double> out(lead * t_out);
  std::vector<std::size_t> arg(lead * t_out);
  const auto& av = an->values;
  for (std::size_t l = 0; l < lead; ++l)
    for (std::size_t ot = 0; ot < t_out; ++ot) {
      std::size_t best = l * t_in + ot * pool;
      double best_v = av[best];
      for (std::size_t k = 1; k < pool; ++k) {
        const std::size_t at = l * t_in + ot * pool + k;
        if (av[at] > best_v) {
          best_v = av[at];
          best = at;
        }
      }
      out[l * t_out + ot] = best_v;
      arg[l * t_out + ot] = best;
    }
  return make_op("max_pool_time", {a}, std::move(out_shape), std::move(out),
                 [arg](TensorNode& self) {
                   TensorNode& in = *self.inputs[0];
                   if (!in.requires_grad) return;
                   in.ensure_grad();
                   for (std::size_t j = 0; j < arg.size(); ++j)
                     in.grad[arg[j]] += self.grad[j];
                 });
}

namespace {

void check_conv_args(const char* op, const TensorNode& x, const TensorNode& w,
                     const TensorNode& b, std::size_t w_rank) {
  if (x.shape.size() != 4)
    throw ShapeError(std::string(op) + ": input must be rank 4, got " +
                     shape_str(x.shape));
  if (w.shape.size() != w_rank)
    throw ShapeError(std::string(op) + ": weight must be rank " +
                     std::to_string(w_rank) + ", got " + shape_str(w.shape));
  if (b.shape.size() != 1 || b.shape[0] != w.shape[0])
    throw ShapeError(std::string(op) + ": bias " + shape_str(b.shape) +
                     " does not match " + std::to_string(w.shape[0]) +
                     " output filters");
}

}  // namespace

Tensor conv1d_temporal(const Tensor& x, const Tensor& w, const Tensor& bias) {
  const auto& xn = node_of(x, "conv1d_temporal");
  const auto& wn = node_of(w, "conv1d_temporal");
  const auto& bn = node_of(bias, "conv1d_temporal");
  check_conv_args("conv1d_temporal", *xn, *wn, *bn, 3);
  const std::size_t B = xn->shape[0], Fin = xn->shape[1], C = xn->shape[2],
                    T = xn->shape[3];
  const std::size_t Fout = wn->shape[0], K = wn->shape[2];
  if (wn->shape[1] != Fin)
    throw ShapeError("conv1d_temporal: weight expects " +
                     std::to_string(wn->shape[1]) + " input filters, got " +
                     std::to_string(Fin));
  if (T < K)
    throw ShapeError("conv1d_temporal: kernel " + std::to_string(K) +
                     " longer than time axis " + std::to_string(T));
  const std::size_t To = T - K + 1;
  std::vector<double> out(B * Fout * C * To);
  const auto& xv = xn->values;
  const auto& wv = wn->values;
  const auto& bv = bn->values;
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t fo = 0; fo < Fout; ++fo) {
      double* ybase = out.data() + ((b * Fout + fo) * C) * To;
      std::fill(ybase, ybase + C * To, bv[fo]);
      for (std::size_t fi = 0; fi < Fin; ++fi)
        for (std::size_t c = 0; c < C; ++c) {
          const double* xrow = xv.data() + ((b * Fin + fi) * C + c) * T;
          double* yrow = ybase + c * To;
          for (std::size_t k = 0; k < K; ++k) {
            const double wk = wv[(fo * Fin + fi) * K + k];
            const double* xs = xrow + k;
            for (std::size_t t = 0; t < To; ++t) yrow[t] += wk * xs[t];
          }
        }
    }
  return make_op(
      "conv1d_temporal", {x, w, bias}, {B, Fout, C, To}, std::move(out),
      [B, Fin, C, T, Fout, K, To](TensorNode& self) {
        TensorNode& X = *self.inputs[0];
        TensorNode& W = *self.inputs[1];
        TensorNode& Bi = *self.inputs[2];
        const bool gx = X.requires_grad, gw = W.requires_grad,
                   gb = Bi.requires_grad;
        if (gx) X.ensure_grad();
        if (gw) W.ensure_grad();
        if (gb) Bi.ensure_grad();
        const double* g = self.grad.data();
        for (std::size_t b = 0; b < B; ++b)
          for (std::size_t fo = 0; fo < Fout; ++fo) {
            const double* gbase = g + ((b * Fout + fo) * C) * To;
            if (gb) {
              double acc = 0.0;
              for (std::size_t i = 0; i < C * To; ++i) acc += gbase[i];
              Bi.grad[fo] += acc;
            }
            for (std::size_t fi = 0; fi < Fin; ++fi)
              for (std::size_t c = 0; c < C; ++c) {
                const double* grow = gbase + c * To;
                const double* xrow =
                    X.values.data() + ((b * Fin + fi) * C + c) * T;
                double* dxrow =
                    gx ? X.grad.data() + ((b * Fin + fi) * C + c) * T : nullptr;
                for (std::size_t k = 0; k < K; ++k) {
                  const double wk = W.values[(fo * Fin + fi) * K + k];
                  if (gx) {
                    double* dxs = dxrow + k;
                    for (std::size_t t = 0; t < To; ++t)
                      dxs[t] += grow[t] * wk;
                  }
                  if (gw) {
                    const double* xs = xrow + k;
                    double acc = 0.0;
                    for (std::size_t t = 0; t < To; ++t) acc += grow[t] * xs[t];
                    W.grad[(fo * Fin + fi) * K + k] += acc;
                  }
                }
              }
          }
      });
}

Tensor conv_spatial(const Tensor& x, const Tensor& w, const Tensor& bias) {
  const auto& xn = node_of(x, "conv_spatial");
  const auto& wn = node_of(w, "conv_spatial");
  const auto& bn = node_of(bias, "conv_spatial");
  check_conv_args("conv_spatial", *xn, *wn, *bn, 3);
  const std::size_t B = xn->shape[0], Fin = xn->shape[1], C = xn->shape[2],
                    T = xn->shape[3];
  const std::size_t Fout = wn->shape[0];
  if (wn->shape[1] != Fin || wn->shape[2] != C)
    throw ShapeError("conv_spatial: weight " + shape_str(wn->shape) +
                     " does not match input " + shape_str(xn->shape));
  std::vector<double> out(B * Fout * T);
  const auto& xv = xn->values;
  const auto& wv = wn->values;
  const auto& bv = bn->values;
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t fo = 0; fo < Fout; ++fo) {
      double* yrow = out.data() + (b * Fout + fo) * T;
      std::fill(yrow, yrow + T, bv[fo]);
      for (std::size_t fi = 0; fi < Fin; ++fi)
        for (std::size_t c = 0; c < C; ++c) {
          const double wk = wv[(fo * Fin + fi) * C + c];
          const double* xrow = xv.data() + ((b * Fin + fi) * C + c) * T;
          for (std::size_t t = 0; t < T; ++t) yrow[t] += wk * xrow[t];
        }
    }
  return make_op(
      "conv_spatial", {x, w, bias}, {B, Fout, 1, T}, std::move(out),
      [B, Fin, C, T, Fout](TensorNode& self) {
        TensorNode& X = *self.inputs[0];
        TensorNode& W = *self.inputs[1];
        TensorNode& Bi = *self.inputs[2];
        const bool gx = X.requires_grad, gw = W.requires_grad,
                   gb = Bi.requires_grad;
        if (gx) X.ensure_grad();
        if (gw) W.ensure_grad();
        if (gb) Bi.ensure_grad();
        const double* g = self.grad.data();
        for (std::size_t b = 0; b < B; ++b)
          for (std::size_t fo = 0; fo < Fout; ++fo) {
            const double* grow = g + (b * Fout + fo) * T;
            if (gb) {
              double acc = 0.0;
              for (std::size_t t = 0; t < T; ++t) acc += grow[t];
              Bi.grad[fo] += acc;
            }
            for (std::size_t fi = 0; fi < Fin; ++fi)
              for (std::size_t c = 0; c < C; ++c) {
                const std::size_t widx = (fo * Fin + fi) * C + c;
                const double wk = W.values[widx];
                const double* xrow =
                    X.values.data() + ((b * Fin + fi) * C + c) * T;
                if (gx) {
                  double* dxrow = X.grad.data() + ((b * Fin + fi) * C + c) * T;
                  for (std::size_t t = 0; t < T; ++t) dxrow[t] += grow[t] * wk;
                }
                if (gw) {
                  double acc = 0.0;
                  for (std::size_t t = 0; t < T; ++t) acc += grow[t] * xrow[t];
                  W.grad[widx] += acc;
                }
              }
          }
      });
}

void backward(const Tensor& loss) {
  const auto& root = node_of(loss, "backward");
  if (root->values.size() != 1)
    throw ValueError("backward: loss must be a scalar, got shape " +
                     shape_str(root->shape));
  if (!root->requires_grad) return;

  std::vector<TensorNode*> order;
  std::unordered_set<TensorNode*> seen;
  std::vector<std::pair<TensorNode*, std::size_t>> stack;
  stack.emplace_back(root.get(), 0);
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& top = stack.back();
    if (top.second < top.first->inputs.size()) {
      TensorNode* child = top.first->inputs[top.second++].get();
      if (seen.insert(child).second && !child->inputs.empty())
        stack.emplace_back(child, 0);
    } else {
      order.push_back(top.first);
      stack.pop_back();
    }
  }

  root->ensure_grad();
  root->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorNode* n = *it;
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
  }
}

std::map<std::string, Tensor> gradient_map(
    const std::vector<Parameter>& params) {
  std::map<std::string, Tensor> grads;
  for (const auto& p : params) {
    if (!p.value.defined()) throw ValueError("gradient_map: undefined parameter");
    if (!grads.emplace(p.name, p.value.grad_or_zeros()).second)
      throw ValueError("gradient_map: duplicate parameter name '" + p.name +
                       "'");
  }
  return grads;
}

bool GradCheckReport::all_ok() const {
  for (const auto& e : entries)
    if (!e.ok) return false;
  return true;
}

double GradCheckReport::max_rel_err() const {
  double worst = 0.0;
  for (const auto& e : entries) worst = std::max(worst, e.max_rel_err);
  return worst;
}

GradCheckReport grad_check(const std::function<Tensor()>& build_loss,
                           const std::vector<Parameter>& params, double h,
                           double tol) {
  if (!(h > 0.0)) throw ValueError("grad_check: h must be positive");

  Tensor probe1 = build_loss();
  Tensor probe2 = build_loss();
  if (probe1.values() != probe2.values())
    throw NondeterministicLossError(
        "grad_check: two forward evaluations of the loss differ");
  (void)probe1.item();  // must be scalar

  for (const auto& p : params) p.value.clear_grad();
  Tensor loss = build_loss();
  backward(loss);

  GradCheckReport report;
  report.h = h;
  report.tol = tol;
  for (const auto& p : params) {
    if (!p.value.defined() || !p.value.requires_grad()) continue;
    const std::vector<double> analytic = p.value.grad_or_zeros().values();
    GradCheckEntry entry;
    entry.name = p.name;
    Tensor handle = p.value;  // shares the underlying leaf node
    auto& vals = handle.mutable_values();
    for (std::size_t i = 0; i < vals.size(); ++i) {
      const double saved = vals[i];
      vals[i] = saved + h;
      const double lp = build_loss().item();
      vals[i] = saved - h;
      const double lm = build_loss().item();
      vals[i] = saved;
      const double numeric = (lp - lm) / (2.0 * h);
      const double a = analytic[i];
      const double rel =
          std::abs(a - numeric) / std::max(1e-12, std::abs(a) + std::abs(numeric));
      if (rel > entry.max_rel_err) {
        entry.max_rel_err = rel;
        entry.worst_index = i;
        entry.analytic = a;
        entry.numeric = numeric;
      }
    }
    entry.ok = entry.max_rel_err <= tol;
    report.entries.push_back(std::move(entry));
  }
  return report;
}

}  // namespace posr::autodiff
