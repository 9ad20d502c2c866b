#pragma once

// Dense tensors with reverse-mode automatic differentiation.
//
// Every operation records itself on an implicit tape: each result node keeps
// references to its producers plus a closure that pushes gradients to them.
// Node creation order is the tape order, so the reverse pass simply walks
// reachable nodes by descending sequence number. Tensors are cheap handles
// (shared ownership of the node); values are immutable once an op has
// produced them, except for leaf edits between steps and grad accumulation.

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <span>
#include <utility>
#include <vector>

#include "wamd/common.hpp"

namespace wamd {

template <typename Scalar>
using MatrixRM =
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using VectorX = Eigen::Vector<Scalar, Eigen::Dynamic>;

namespace detail {

template <typename Scalar>
struct TensorNode {
  Shape shape;
  std::vector<Scalar> values;
  std::vector<Scalar> grad;  // allocated for marked leaves and during backward
  bool requires_grad = false;
  bool on_tape = false;  // reachable from some requires_grad leaf
  bool backward_done = false;
  std::uint64_t seq = 0;
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backprop;
};

inline std::uint64_t next_seq() {
  static std::atomic<std::uint64_t> counter{0};
  return counter.fetch_add(1, std::memory_order_relaxed);
}

}  // namespace detail

template <typename Scalar>
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape) {
    return from_values(std::move(shape), {}, true);
  }

  static Tensor full(Shape shape, Scalar value) {
    Tensor t = zeros(std::move(shape));
    std::fill(t.node_->values.begin(), t.node_->values.end(), value);
    return t;
  }

  static Tensor from(Shape shape, std::vector<Scalar> values) {
    if (numel(shape) != static_cast<std::int64_t>(values.size()))
      reject_input("tensor values length ", values.size(),
                   " does not match shape ", shape_string(shape));
    return from_values(std::move(shape), std::move(values), false);
  }

  static Tensor scalar(Scalar value) { return from({1}, {value}); }

  bool valid() const { return node_ != nullptr; }

  const Shape& shape() const { return require().shape; }

  std::int64_t rank() const { return static_cast<std::int64_t>(shape().size()); }

  std::int64_t size() const { return numel(shape()); }

  std::span<const Scalar> values() const {
    return {require().values.data(), require().values.size()};
  }

  /// Writable view of a leaf's payload (optimizer updates, init). Op outputs
  /// are immutable.
  std::span<Scalar> mutable_values() {
    auto& n = require();
    if (!n.parents.empty())
      reject_state("cannot mutate values of an op-produced tensor");
    return {n.values.data(), n.values.size()};
  }

  Scalar item() const {
    if (size() != 1) reject_input("item() requires a scalar tensor, got ",
                                  shape_string(shape()));
    return require().values[0];
  }

  bool requires_grad() const { return require().requires_grad; }

  Tensor& set_requires_grad(bool flag) {
    auto& n = require();
    if (!n.parents.empty())
      reject_state("requires_grad can only be toggled on leaf tensors");
    n.requires_grad = flag;
    n.on_tape = flag;
    if (flag)
      n.grad.assign(n.values.size(), Scalar(0));
    else
      n.grad.clear();
    return *this;
  }

  std::span<const Scalar> grad() const {
    const auto& n = require();
    if (!n.requires_grad)
      reject_state("grad is only present on requires_grad tensors");
    return {n.grad.data(), n.grad.size()};
  }

  void zero_grad() {
    auto& n = require();
    if (!n.requires_grad)
      reject_state("zero_grad on a tensor without requires_grad");
    std::fill(n.grad.begin(), n.grad.end(), Scalar(0));
  }

  /// Clears the once-per-graph backward latch on this (loss) tensor.
  void reset_backward() { require().backward_done = false; }

  std::shared_ptr<detail::TensorNode<Scalar>> node() const { return node_; }

  static Tensor wrap(std::shared_ptr<detail::TensorNode<Scalar>> node) {
    Tensor t;
    t.node_ = std::move(node);
    return t;
  }

 private:
  static Tensor from_values(Shape shape, std::vector<Scalar> values,
                            bool zero_fill) {
    if (shape.empty()) reject_input("tensor shape must be non-empty");
    for (std::int64_t e : shape)
      if (e <= 0) reject_input("tensor extents must be positive, got ",
                               shape_string(shape));
    auto node = std::make_shared<detail::TensorNode<Scalar>>();
    node->shape = std::move(shape);
    if (zero_fill)
      node->values.assign(static_cast<std::size_t>(numel(node->shape)),
                          Scalar(0));
    else
      node->values = std::move(values);
    node->seq = detail::next_seq();
    return wrap(std::move(node));
  }

  detail::TensorNode<Scalar>& require() const {
    if (!node_) reject_state("use of an empty tensor handle");
    return *node_;
  }

  std::shared_ptr<detail::TensorNode<Scalar>> node_;
};

namespace detail {

/// Records an op result. Parents are kept verbatim (constants included) so
/// backprop closures can index them; the node only joins the tape when some
/// parent is on it.
template <typename Scalar>
Tensor<Scalar> make_op(Shape shape, std::vector<Scalar> values,
                       std::vector<Tensor<Scalar>> parents,
                       std::function<void(TensorNode<Scalar>&)> backprop) {
  auto out = Tensor<Scalar>::from(std::move(shape), std::move(values));
  auto node = out.node();
  bool on_tape = false;
  for (const auto& p : parents) on_tape = on_tape || p.node()->on_tape;
  if (on_tape) {
    node->on_tape = true;
    node->parents.reserve(parents.size());
    for (auto& p : parents) node->parents.push_back(p.node());
    node->backprop = std::move(backprop);
  }
  return out;
}

template <typename Scalar>
bool wants_grad(const TensorNode<Scalar>& node, std::size_t parent_index) {
  return !node.parents[parent_index]->grad.empty();
}

/// Reverse-pass schedule. Nodes are collected from the loss through parent
/// links and replayed in descending creation order; construction guarantees
/// every producer precedes its consumers.
template <typename Scalar>
struct Tape {
  std::vector<TensorNode<Scalar>*> ordered;  // ascending seq

  static Tape trace(TensorNode<Scalar>& root) {
    Tape tape;
    std::vector<TensorNode<Scalar>*> stack{&root};
    std::vector<const TensorNode<Scalar>*> seen;
    auto visited = [&](const TensorNode<Scalar>* n) {
      return std::find(seen.begin(), seen.end(), n) != seen.end();
    };
    while (!stack.empty()) {
      TensorNode<Scalar>* n = stack.back();
      stack.pop_back();
      if (!n->on_tape || visited(n)) continue;
      seen.push_back(n);
      tape.ordered.push_back(n);
      for (const auto& p : n->parents) stack.push_back(p.get());
    }
    std::sort(tape.ordered.begin(), tape.ordered.end(),
              [](const auto* a, const auto* b) { return a->seq < b->seq; });
    for (const TensorNode<Scalar>* n : tape.ordered)
      for (const auto& p : n->parents)
        if (p->on_tape && p->seq >= n->seq)
          reject_state("tape order violated: producer recorded after consumer");
    return tape;
  }
};

}  // namespace detail

/// Reverse-mode pass from a scalar loss. Populates grad on every
/// requires_grad tensor reachable from it; repeated calls on the same loss
/// without reset_backward() are an error.
template <typename Scalar>
void backward(const Tensor<Scalar>& loss) {
  auto root = loss.node();
  if (!root) reject_state("backward on an empty tensor handle");
  if (numel(root->shape) != 1)
    reject_input("backward requires a scalar loss, got ",
                 shape_string(root->shape));
  if (!root->on_tape)
    reject_input("loss was not produced by tape-recorded operations");
  if (root->backward_done)
    reject_state("backward already ran for this loss; reset_backward first");

  auto tape = detail::Tape<Scalar>::trace(*root);
  for (auto* n : tape.ordered)
    if (n->grad.empty()) n->grad.assign(n->values.size(), Scalar(0));
  root->grad[0] += Scalar(1);

  for (auto it = tape.ordered.rbegin(); it != tape.ordered.rend(); ++it) {
    if ((*it)->backprop) (*it)->backprop(**it);
  }
  root->backward_done = true;
  for (auto* n : tape.ordered)
    if (!n->requires_grad) n->grad.clear();
}

// ---------------------------------------------------------------------------
// Elementwise and structural ops
// ---------------------------------------------------------------------------

template <typename Scalar>
Tensor<Scalar> relu(const Tensor<Scalar>& x) {
  std::vector<Scalar> out(x.values().begin(), x.values().end());
  for (Scalar& v : out) v = v > Scalar(0) ? v : Scalar(0);
  return detail::make_op<Scalar>(
      x.shape(), std::move(out), {x},
      [](detail::TensorNode<Scalar>& self) {
        if (!detail::wants_grad(self, 0)) return;
        auto& dx = self.parents[0]->grad;
        // subgradient at 0 is 0: mask strictly positive outputs
        for (std::size_t i = 0; i < dx.size(); ++i)
          if (self.values[i] > Scalar(0)) dx[i] += self.grad[i];
      });
}

template <typename Scalar>
Tensor<Scalar> add(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (a.shape() != b.shape())
    reject_input("add requires matching shapes, got ", shape_string(a.shape()),
                 " vs ", shape_string(b.shape()));
  std::vector<Scalar> out(a.values().begin(), a.values().end());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.values()[i];
  return detail::make_op<Scalar>(
      a.shape(), std::move(out), {a, b},
      [](detail::TensorNode<Scalar>& self) {
        for (std::size_t p = 0; p < 2; ++p) {
          if (!detail::wants_grad(self, p)) continue;
          auto& d = self.parents[p]->grad;
          for (std::size_t i = 0; i < d.size(); ++i) d[i] += self.grad[i];
        }
      });
}

template <typename Scalar>
Tensor<Scalar> scale(const Tensor<Scalar>& x, Scalar c) {
  std::vector<Scalar> out(x.values().begin(), x.values().end());
  for (Scalar& v : out) v *= c;
  return detail::make_op<Scalar>(
      x.shape(), std::move(out), {x},
      [c](detail::TensorNode<Scalar>& self) {
        if (!detail::wants_grad(self, 0)) return;
        auto& dx = self.parents[0]->grad;
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += c * self.grad[i];
      });
}

template <typename Scalar>
Tensor<Scalar> reshape(const Tensor<Scalar>& x, Shape shape) {
  if (numel(shape) != x.size())
    reject_input("reshape from ", shape_string(x.shape()), " to ",
                 shape_string(shape), " changes element count");
  std::vector<Scalar> out(x.values().begin(), x.values().end());
  return detail::make_op<Scalar>(
      std::move(shape), std::move(out), {x},
      [](detail::TensorNode<Scalar>& self) {
        if (!detail::wants_grad(self, 0)) return;
        auto& dx = self.parents[0]->grad;
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += self.grad[i];
      });
}

/// Drops axis 0: returns the i-th slice of x, shape x.shape()[1:].
template <typename Scalar>
Tensor<Scalar> select0(const Tensor<Scalar>& x, std::int64_t index) {
  const Shape& s = x.shape();
  if (s.size() < 2)
    reject_input("select0 requires rank >= 2, got ", shape_string(s));
  if (index < 0 || index >= s[0])
    reject_input("select0 index ", index, " out of range for ",
                 shape_string(s));
  Shape out_shape(s.begin() + 1, s.end());
  const std::int64_t stride = numel(out_shape);
  std::vector<Scalar> out(x.values().begin() + index * stride,
                          x.values().begin() + (index + 1) * stride);
  return detail::make_op<Scalar>(
      std::move(out_shape), std::move(out), {x},
      [index, stride](detail::TensorNode<Scalar>& self) {
        if (!detail::wants_grad(self, 0)) return;
        auto& dx = self.parents[0]->grad;
        for (std::int64_t i = 0; i < stride; ++i)
          dx[static_cast<std::size_t>(index * stride + i)] += self.grad[i];
      });
}

/// [C,h,w] feature map -> [h*w, C] matrix of per-location feature vectors.
template <typename Scalar>
Tensor<Scalar> location_matrix(const Tensor<Scalar>& x) {
  const Shape& s = x.shape();
  if (s.size() != 3)
    reject_input("location_matrix requires a [C,h,w] tensor, got ",
                 shape_string(s));
  const std::int64_t c_count = s[0], n = s[1] * s[2];
  std::vector<Scalar> out(static_cast<std::size_t>(n * c_count));
  auto xv = x.values();
  for (std::int64_t c = 0; c < c_count; ++c)
    for (std::int64_t j = 0; j < n; ++j)
      out[static_cast<std::size_t>(j * c_count + c)] =
          xv[static_cast<std::size_t>(c * n + j)];
  return detail::make_op<Scalar>(
      {n, c_count}, std::move(out), {x},
      [c_count, n](detail::TensorNode<Scalar>& self) {
        if (!detail::wants_grad(self, 0)) return;
        auto& dx = self.parents[0]->grad;
        for (std::int64_t c = 0; c < c_count; ++c)
          for (std::int64_t j = 0; j < n; ++j)
            dx[static_cast<std::size_t>(c * n + j)] +=
                self.grad[static_cast<std::size_t>(j * c_count + c)];
      });
}

template <typename Scalar>
Tensor<Scalar> concat(const std::vector<Tensor<Scalar>>& inputs,
                      std::int64_t axis) {
  if (inputs.empty()) reject_input("concat requires at least one input");
  const Shape& first = inputs.front().shape();
  const auto rank = static_cast<std::int64_t>(first.size());
  if (axis < 0 || axis >= rank)
    reject_input("concat axis ", axis, " out of range for rank ", rank);
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const auto& t : inputs) {
    const Shape& s = t.shape();
    if (static_cast<std::int64_t>(s.size()) != rank)
      reject_input("concat rank mismatch: ", shape_string(first), " vs ",
                   shape_string(s));
    for (std::int64_t d = 0; d < rank; ++d)
      if (d != axis && s[d] != first[d])
        reject_input("concat shapes ragged off axis ", axis, ": ",
                     shape_string(first), " vs ", shape_string(s));
    out_shape[axis] += s[axis];
  }

  std::int64_t outer = 1, inner = 1;
  for (std::int64_t d = 0; d < axis; ++d) outer *= first[d];
  for (std::int64_t d = axis + 1; d < rank; ++d) inner *= first[d];

  std::vector<Scalar> out(static_cast<std::size_t>(numel(out_shape)));
  const std::int64_t out_row = out_shape[axis] * inner;
  std::vector<std::int64_t> offsets;  // start of each input along axis, *inner
  offsets.reserve(inputs.size());
  std::int64_t cursor = 0;
  for (const auto& t : inputs) {
    offsets.push_back(cursor);
    const std::int64_t block = t.shape()[axis] * inner;
    auto tv = t.values();
    for (std::int64_t o = 0; o < outer; ++o)
      std::copy_n(tv.data() + o * block, block,
                  out.data() + o * out_row + cursor);
    cursor += block;
  }

  std::vector<std::int64_t> blocks;
  for (const auto& t : inputs) blocks.push_back(t.shape()[axis] * inner);
  return detail::make_op<Scalar>(
      std::move(out_shape), std::move(out), inputs,
      [outer, out_row, offsets, blocks](detail::TensorNode<Scalar>& self) {
        for (std::size_t p = 0; p < self.parents.size(); ++p) {
          if (!detail::wants_grad(self, p)) continue;
          auto& d = self.parents[p]->grad;
          for (std::int64_t o = 0; o < outer; ++o) {
            const Scalar* src = self.grad.data() + o * out_row + offsets[p];
            Scalar* dst = d.data() + o * blocks[p];
            for (std::int64_t i = 0; i < blocks[p]; ++i) dst[i] += src[i];
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Reductions and classifier ops
// ---------------------------------------------------------------------------

template <typename Scalar>
Tensor<Scalar> inner_product(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (a.rank() != 1 || b.rank() != 1 || a.size() != b.size())
    reject_input("inner_product requires equal-length vectors, got ",
                 shape_string(a.shape()), " and ", shape_string(b.shape()));
  Scalar acc = 0;
  for (std::int64_t i = 0; i < a.size(); ++i)
    acc += a.values()[i] * b.values()[i];
  return detail::make_op<Scalar>(
      {1}, {acc}, {a, b},
      [](detail::TensorNode<Scalar>& self) {
        const Scalar go = self.grad[0];
        const auto& av = self.parents[0]->values;
        const auto& bv = self.parents[1]->values;
        if (detail::wants_grad(self, 0)) {
          auto& da = self.parents[0]->grad;
          for (std::size_t i = 0; i < da.size(); ++i) da[i] += go * bv[i];
        }
        if (detail::wants_grad(self, 1)) {
          auto& db = self.parents[1]->grad;
          for (std::size_t i = 0; i < db.size(); ++i) db[i] += go * av[i];
        }
      });
}

/// Overflow-safe softmax over a rank-1 tensor (row maximum subtracted).
template <typename Scalar>
Tensor<Scalar> softmax(const Tensor<Scalar>& x) {
  if (x.rank() != 1)
    reject_input("softmax expects a rank-1 tensor, got ",
                 shape_string(x.shape()));
  for (Scalar v : x.values())
    if (!std::isfinite(static_cast<double>(v)))
      reject_input("softmax input must be finite");
  const std::int64_t n = x.size();
  std::vector<Scalar> out(static_cast<std::size_t>(n));
  Scalar mx = x.values()[0];
  for (Scalar v : x.values()) mx = std::max(mx, v);
  // double accumulation keeps the simplex sum within 1e-6 even for float
  std::vector<double> exps(static_cast<std::size_t>(n));
  double denom = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    exps[i] = std::exp(static_cast<double>(x.values()[i] - mx));
    denom += exps[i];
  }
  for (std::int64_t i = 0; i < n; ++i)
    out[i] = static_cast<Scalar>(exps[i] / denom);
  return detail::make_op<Scalar>(
      x.shape(), std::move(out), {x},
      [](detail::TensorNode<Scalar>& self) {
        if (!detail::wants_grad(self, 0)) return;
        auto& dx = self.parents[0]->grad;
        Scalar dot = 0;
        for (std::size_t i = 0; i < dx.size(); ++i)
          dot += self.grad[i] * self.values[i];
        for (std::size_t i = 0; i < dx.size(); ++i)
          dx[i] += self.values[i] * (self.grad[i] - dot);
      });
}

/// Mean over the batch of -log softmax(logits)[label].
template <typename Scalar>
Tensor<Scalar> cross_entropy_loss(const Tensor<Scalar>& logits,
                                  const std::vector<int>& labels) {
  if (logits.rank() != 2)
    reject_input("cross_entropy_loss expects [N,C] logits, got ",
                 shape_string(logits.shape()));
  const std::int64_t n = logits.shape()[0], classes = logits.shape()[1];
  if (static_cast<std::int64_t>(labels.size()) != n)
    reject_input("cross_entropy_loss got ", labels.size(), " labels for ", n,
                 " rows");
  if (n < 1) reject_input("cross_entropy_loss requires a non-empty batch");
  for (int label : labels)
    if (label < 0 || label >= classes)
      reject_input("label ", label, " out of range for ", classes, " classes");

  std::vector<Scalar> probs(static_cast<std::size_t>(n * classes));
  double loss = 0;
  auto lv = logits.values();
  for (std::int64_t r = 0; r < n; ++r) {
    const Scalar* row = lv.data() + r * classes;
    Scalar mx = row[0];
    for (std::int64_t c = 1; c < classes; ++c) mx = std::max(mx, row[c]);
    double denom = 0;
    std::vector<double> exps(static_cast<std::size_t>(classes));
    for (std::int64_t c = 0; c < classes; ++c) {
      exps[c] = std::exp(static_cast<double>(row[c] - mx));
      denom += exps[c];
    }
    for (std::int64_t c = 0; c < classes; ++c)
      probs[static_cast<std::size_t>(r * classes + c)] =
          static_cast<Scalar>(exps[c] / denom);
    loss -= std::log(exps[labels[r]] / denom);
  }
  loss /= static_cast<double>(n);

  return detail::make_op<Scalar>(
      {1}, {static_cast<Scalar>(loss)}, {logits},
      [labels, n, classes, probs](detail::TensorNode<Scalar>& self) {
        if (!detail::wants_grad(self, 0)) return;
        auto& dl = self.parents[0]->grad;
        const Scalar go = self.grad[0] / static_cast<Scalar>(n);
        for (std::int64_t r = 0; r < n; ++r)
          for (std::int64_t c = 0; c < classes; ++c) {
            const auto i = static_cast<std::size_t>(r * classes + c);
            const Scalar onehot = (c == labels[r]) ? Scalar(1) : Scalar(0);
            dl[i] += go * (probs[i] - onehot);
          }
      });
}

// ---------------------------------------------------------------------------
// Spatial ops
// ---------------------------------------------------------------------------

namespace detail {

struct Conv2dDims {
  std::int64_t batch, in_c, in_h, in_w;
  std::int64_t out_c, kh, kw;
  std::int64_t stride, pad;
  std::int64_t out_h, out_w;
  std::int64_t patch() const { return in_c * kh * kw; }
  std::int64_t out_hw() const { return out_h * out_w; }
};

inline Conv2dDims conv2d_dims(const Shape& x, const Shape& k, const Shape& b,
                              std::int64_t stride, std::int64_t pad) {
  if (x.size() != 4)
    reject_input("conv2d input must be [N,C,H,W], got ", shape_string(x));
  if (k.size() != 4)
    reject_input("conv2d kernel must be [F,C,kh,kw], got ", shape_string(k));
  if (b.size() != 1 || b[0] != k[0])
    reject_input("conv2d bias must be [F]=[", k[0], "], got ",
                 shape_string(b));
  if (stride < 1) reject_input("conv2d stride must be positive");
  if (pad < 0) reject_input("conv2d padding must be non-negative");
  if (x[1] != k[1])
    reject_input("conv2d channel mismatch: input ", shape_string(x),
                 " vs kernel ", shape_string(k));
  Conv2dDims d{x[0], x[1], x[2], x[3], k[0], k[2], k[3], stride, pad, 0, 0};
  const std::int64_t ph = d.in_h + 2 * pad, pw = d.in_w + 2 * pad;
  if (d.kh > ph || d.kw > pw)
    reject_input("conv2d kernel ", shape_string(k),
                 " exceeds padded input extents ", ph, "x", pw);
  if ((ph - d.kh) % stride != 0 || (pw - d.kw) % stride != 0)
    reject_input("conv2d output extent not exact: (extent+2*pad-k) must be "
                 "divisible by stride");
  d.out_h = (ph - d.kh) / stride + 1;
  d.out_w = (pw - d.kw) / stride + 1;
  return d;
}

/// Gathers padded patches of one sample into a row-major
/// [C*kh*kw, out_h*out_w] matrix.
template <typename Scalar>
void im2col(const Scalar* x, const Conv2dDims& d, Scalar* cols) {
  const std::int64_t ohw = d.out_hw();
  for (std::int64_t c = 0; c < d.in_c; ++c) {
    const Scalar* plane = x + c * d.in_h * d.in_w;
    for (std::int64_t ki = 0; ki < d.kh; ++ki)
      for (std::int64_t kj = 0; kj < d.kw; ++kj) {
        Scalar* row = cols + ((c * d.kh + ki) * d.kw + kj) * ohw;
        for (std::int64_t oh = 0; oh < d.out_h; ++oh) {
          const std::int64_t ih = oh * d.stride + ki - d.pad;
          Scalar* out = row + oh * d.out_w;
          if (ih < 0 || ih >= d.in_h) {
            std::fill_n(out, d.out_w, Scalar(0));
            continue;
          }
          const Scalar* in_row = plane + ih * d.in_w;
          for (std::int64_t ow = 0; ow < d.out_w; ++ow) {
            const std::int64_t iw = ow * d.stride + kj - d.pad;
            out[ow] = (iw < 0 || iw >= d.in_w) ? Scalar(0) : in_row[iw];
          }
        }
      }
  }
}

/// Scatter-add of column gradients back onto one sample.
template <typename Scalar>
void col2im_add(const Scalar* cols, const Conv2dDims& d, Scalar* dx) {
  const std::int64_t ohw = d.out_hw();
  for (std::int64_t c = 0; c < d.in_c; ++c) {
    Scalar* plane = dx + c * d.in_h * d.in_w;
    for (std::int64_t ki = 0; ki < d.kh; ++ki)
      for (std::int64_t kj = 0; kj < d.kw; ++kj) {
        const Scalar* row = cols + ((c * d.kh + ki) * d.kw + kj) * ohw;
        for (std::int64_t oh = 0; oh < d.out_h; ++oh) {
          const std::int64_t ih = oh * d.stride + ki - d.pad;
          if (ih < 0 || ih >= d.in_h) continue;
          Scalar* out_row = plane + ih * d.in_w;
          const Scalar* in_row = row + oh * d.out_w;
          for (std::int64_t ow = 0; ow < d.out_w; ++ow) {
            const std::int64_t iw = ow * d.stride + kj - d.pad;
            if (iw >= 0 && iw < d.in_w) out_row[iw] += in_row[ow];
          }
        }
      }
  }
}

}  // namespace detail

/// Cross-correlation conv with zero padding and exact-division output
/// extents. Differentiable w.r.t. input, kernel, and bias.
template <typename Scalar>
Tensor<Scalar> conv2d(const Tensor<Scalar>& input, const Tensor<Scalar>& kernel,
                      const Tensor<Scalar>& bias, std::int64_t stride,
                      std::int64_t padding) {
  const auto d = detail::conv2d_dims(input.shape(), kernel.shape(),
                                     bias.shape(), stride, padding);
  const std::int64_t ohw = d.out_hw(), patch = d.patch();
  std::vector<Scalar> out(
      static_cast<std::size_t>(d.batch * d.out_c * ohw));
  std::vector<Scalar> cols(static_cast<std::size_t>(patch * ohw));

  Eigen::Map<const MatrixRM<Scalar>> kmat(kernel.values().data(), d.out_c,
                                          patch);
  Eigen::Map<const VectorX<Scalar>> bvec(bias.values().data(), d.out_c);
  for (std::int64_t n = 0; n < d.batch; ++n) {
    detail::im2col(input.values().data() + n * d.in_c * d.in_h * d.in_w, d,
                   cols.data());
    Eigen::Map<const MatrixRM<Scalar>> cmat(cols.data(), patch, ohw);
    Eigen::Map<MatrixRM<Scalar>> y(out.data() + n * d.out_c * ohw, d.out_c,
                                   ohw);
    y.noalias() = kmat * cmat;
    y.colwise() += bvec;
  }

  return detail::make_op<Scalar>(
      {d.batch, d.out_c, d.out_h, d.out_w}, std::move(out),
      {input, kernel, bias},
      [d](detail::TensorNode<Scalar>& self) {
        const std::int64_t ohw = d.out_hw(), patch = d.patch();
        const bool need_dx = detail::wants_grad(self, 0);
        const bool need_dk = detail::wants_grad(self, 1);
        const bool need_db = detail::wants_grad(self, 2);
        const auto& xv = self.parents[0]->values;
        const auto& kv = self.parents[1]->values;
        std::vector<Scalar> cols(static_cast<std::size_t>(patch * ohw));
        std::vector<Scalar> dcols(
            need_dx ? static_cast<std::size_t>(patch * ohw) : 0);
        Eigen::Map<const MatrixRM<Scalar>> kmat(kv.data(), d.out_c, patch);
        for (std::int64_t n = 0; n < d.batch; ++n) {
          Eigen::Map<const MatrixRM<Scalar>> dy(
              self.grad.data() + n * d.out_c * ohw, d.out_c, ohw);
          if (need_dk || need_dx)
            detail::im2col(xv.data() + n * d.in_c * d.in_h * d.in_w, d,
                           cols.data());
          if (need_dk) {
            Eigen::Map<const MatrixRM<Scalar>> cmat(cols.data(), patch, ohw);
            Eigen::Map<MatrixRM<Scalar>> dk(self.parents[1]->grad.data(),
                                            d.out_c, patch);
            dk.noalias() += dy * cmat.transpose();
          }
          if (need_db) {
            Eigen::Map<VectorX<Scalar>> db(self.parents[2]->grad.data(),
                                           d.out_c);
            db.noalias() += dy.rowwise().sum();
          }
          if (need_dx) {
            Eigen::Map<MatrixRM<Scalar>> dc(dcols.data(), patch, ohw);
            dc.noalias() = kmat.transpose() * dy;
            detail::col2im_add(
                dcols.data(), d,
                self.parents[0]->grad.data() + n * d.in_c * d.in_h * d.in_w);
          }
        }
      });
}

/// Affine map per row: y = x * weight^T + bias.
template <typename Scalar>
Tensor<Scalar> dense(const Tensor<Scalar>& input, const Tensor<Scalar>& weight,
                     const Tensor<Scalar>& bias) {
  if (input.rank() != 2 || weight.rank() != 2)
    reject_input("dense expects [N,D_in] input and [D_out,D_in] weight, got ",
                 shape_string(input.shape()), " and ",
                 shape_string(weight.shape()));
  const std::int64_t n = input.shape()[0], d_in = input.shape()[1];
  const std::int64_t d_out = weight.shape()[0];
  if (weight.shape()[1] != d_in)
    reject_input("dense inner extents differ: input ",
                 shape_string(input.shape()), " vs weight ",
                 shape_string(weight.shape()));
  if (bias.rank() != 1 || bias.shape()[0] != d_out)
    reject_input("dense bias must be [", d_out, "], got ",
                 shape_string(bias.shape()));

  std::vector<Scalar> out(static_cast<std::size_t>(n * d_out));
  {
    Eigen::Map<const MatrixRM<Scalar>> x(input.values().data(), n, d_in);
    Eigen::Map<const MatrixRM<Scalar>> w(weight.values().data(), d_out, d_in);
    Eigen::Map<const VectorX<Scalar>> b(bias.values().data(), d_out);
    Eigen::Map<MatrixRM<Scalar>> y(out.data(), n, d_out);
    y.noalias() = x * w.transpose();
    y.rowwise() += b.transpose();
  }
  return detail::make_op<Scalar>(
      {n, d_out}, std::move(out), {input, weight, bias},
      [n, d_in, d_out](detail::TensorNode<Scalar>& self) {
        Eigen::Map<const MatrixRM<Scalar>> dy(self.grad.data(), n, d_out);
        Eigen::Map<const MatrixRM<Scalar>> x(self.parents[0]->values.data(), n,
                                             d_in);
        Eigen::Map<const MatrixRM<Scalar>> w(self.parents[1]->values.data(),
                                             d_out, d_in);
        if (detail::wants_grad(self, 0)) {
          Eigen::Map<MatrixRM<Scalar>> dx(self.parents[0]->grad.data(), n,
                                          d_in);
          dx.noalias() += dy * w;
        }
        if (detail::wants_grad(self, 1)) {
          Eigen::Map<MatrixRM<Scalar>> dw(self.parents[1]->grad.data(), d_out,
                                          d_in);
          dw.noalias() += dy.transpose() * x;
        }
        if (detail::wants_grad(self, 2)) {
          Eigen::Map<VectorX<Scalar>> db(self.parents[2]->grad.data(), d_out);
          db.noalias() += dy.colwise().sum().transpose();
        }
      });
}

template <typename Scalar>
Tensor<Scalar> maxpool2d(const Tensor<Scalar>& input, std::int64_t window,
                         std::int64_t stride) {
  if (input.rank() != 4)
    reject_input("maxpool2d input must be [N,C,H,W], got ",
                 shape_string(input.shape()));
  if (window < 1 || stride < 1)
    reject_input("maxpool2d window and stride must be positive");
  const std::int64_t n = input.shape()[0], c = input.shape()[1];
  const std::int64_t h = input.shape()[2], w = input.shape()[3];
  if (window > h || window > w)
    reject_input("maxpool2d window ", window, " exceeds input extents ", h,
                 "x", w);
  const std::int64_t oh = (h - window) / stride + 1;
  const std::int64_t ow = (w - window) / stride + 1;

  std::vector<Scalar> out(static_cast<std::size_t>(n * c * oh * ow));
  std::vector<std::int64_t> argmax(out.size());
  auto xv = input.values();
  std::size_t oi = 0;
  for (std::int64_t ni = 0; ni < n; ++ni)
    for (std::int64_t ci = 0; ci < c; ++ci) {
      const Scalar* plane = xv.data() + (ni * c + ci) * h * w;
      const std::int64_t base = (ni * c + ci) * h * w;
      for (std::int64_t i = 0; i < oh; ++i)
        for (std::int64_t j = 0; j < ow; ++j, ++oi) {
          Scalar best = std::numeric_limits<Scalar>::lowest();
          std::int64_t best_at = -1;
          for (std::int64_t di = 0; di < window; ++di)
            for (std::int64_t dj = 0; dj < window; ++dj) {
              const std::int64_t at = (i * stride + di) * w + (j * stride + dj);
              if (plane[at] > best) {  // first max wins ties
                best = plane[at];
                best_at = base + at;
              }
            }
          out[oi] = best;
          argmax[oi] = best_at;
        }
    }
  return detail::make_op<Scalar>(
      {n, c, oh, ow}, std::move(out), {input},
      [argmax](detail::TensorNode<Scalar>& self) {
        if (!detail::wants_grad(self, 0)) return;
        auto& dx = self.parents[0]->grad;
        for (std::size_t i = 0; i < argmax.size(); ++i)
          dx[static_cast<std::size_t>(argmax[i])] += self.grad[i];
      });
}

/// [N,C,H,W] -> [N,C] spatial mean.
template <typename Scalar>
Tensor<Scalar> global_avg_pool(const Tensor<Scalar>& input) {
  if (input.rank() != 4)
    reject_input("global_avg_pool input must be [N,C,H,W], got ",
                 shape_string(input.shape()));
  const std::int64_t n = input.shape()[0], c = input.shape()[1];
  const std::int64_t hw = input.shape()[2] * input.shape()[3];
  std::vector<Scalar> out(static_cast<std::size_t>(n * c));
  auto xv = input.values();
  for (std::int64_t i = 0; i < n * c; ++i) {
    Scalar acc = 0;
    const Scalar* plane = xv.data() + i * hw;
    for (std::int64_t j = 0; j < hw; ++j) acc += plane[j];
    out[static_cast<std::size_t>(i)] = acc / static_cast<Scalar>(hw);
  }
  return detail::make_op<Scalar>(
      {n, c}, std::move(out), {input},
      [hw](detail::TensorNode<Scalar>& self) {
        if (!detail::wants_grad(self, 0)) return;
        auto& dx = self.parents[0]->grad;
        const auto inv = Scalar(1) / static_cast<Scalar>(hw);
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
          const Scalar g = self.grad[i] * inv;
          Scalar* plane = dx.data() + i * hw;
          for (std::int64_t j = 0; j < hw; ++j) plane[j] += g;
        }
      });
}

}  // namespace wamd
