#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "pcl/common.hpp"

namespace pcl {

using Shape = std::vector<std::int64_t>;

inline std::int64_t numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ')';
  return os.str();
}

template <typename S>
class Tape;

template <typename S>
struct Node {
  Shape shape;
  std::vector<S> value;
  std::vector<S> grad;        // allocated on first gradient write
  std::vector<S> saved;       // per-op stash (masks, gates, probabilities)
  std::vector<std::int64_t> saved_idx;
  std::vector<int> inputs;
  std::function<void(Tape<S>&, Node<S>&)> backward;
  bool requires_grad = false;

  std::int64_t size() const { return std::int64_t(value.size()); }
  void ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), S(0));
  }
};

// Value-semantic handle into a Tape. Cheap to copy; invalid after the tape
// truncates past its id.
template <typename S>
class Tensor {
 public:
  Tensor() = default;
  Tensor(Tape<S>* tape, int id) : tape_(tape), id_(id) {}

  bool valid() const { return tape_ != nullptr; }
  Tape<S>* tape() const { return tape_; }
  int id() const { return id_; }

  const Shape& shape() const { return node().shape; }
  std::int64_t size() const { return node().size(); }
  std::int64_t dim(int i) const { return node().shape.at(std::size_t(i)); }
  int rank() const { return int(node().shape.size()); }
  bool requires_grad() const { return node().requires_grad; }

  std::span<const S> values() const { return node().value; }
  // handle semantics: constness of the handle does not protect the node
  std::span<S> mutable_values() const { return node().value; }
  std::span<const S> grad() const { return node().grad; }

  S scalar() const {
    if (size() != 1) throw ContractError("scalar() on tensor of shape " + shape_str(shape()));
    return node().value[0];
  }

 private:
  Node<S>& node() const { return tape_->node(id_); }
  Tape<S>* tape_ = nullptr;
  int id_ = -1;
};

// Execution tape. Nodes are appended in evaluation order, which is already a
// topological order, so one reverse sweep propagates every gradient.
// Parameters registered before freeze() survive reset(); everything above the
// watermark is a per-step activation and gets truncated.
template <typename S>
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Node<S>& node(int id) { return *nodes_.at(std::size_t(id)); }
  const Node<S>& node(int id) const { return *nodes_.at(std::size_t(id)); }
  int size() const { return int(nodes_.size()); }

  bool grad_enabled() const { return grad_enabled_; }
  void set_grad_enabled(bool on) { grad_enabled_ = on; }

  Tensor<S> make(Shape shape, std::vector<S> value, bool requires_grad = false) {
    if (numel(shape) != std::int64_t(value.size()))
      throw DimensionError("tensor data length " + std::to_string(value.size()) +
                           " does not match shape " + shape_str(shape));
    auto n = std::make_unique<Node<S>>();
    n->shape = std::move(shape);
    n->value = std::move(value);
    n->requires_grad = requires_grad && grad_enabled_;
    nodes_.push_back(std::move(n));
    return Tensor<S>(this, int(nodes_.size()) - 1);
  }

  Tensor<S> constant(Shape shape, S fill) {
    std::vector<S> v(std::size_t(numel(shape)), fill);
    return make(std::move(shape), std::move(v), false);
  }

  Tensor<S> zeros(Shape shape, bool requires_grad = false) {
    std::vector<S> v(static_cast<std::size_t>(numel(shape)), S(0));
    return make(std::move(shape), std::move(v), requires_grad);
  }

  // Glorot-style uniform(-a, a) leaf
  Tensor<S> uniform(Shape shape, S a, CounterRng& rng, bool requires_grad = true) {
    std::vector<S> v(static_cast<std::size_t>(numel(shape)));
    for (auto& x : v) x = S(rng.uniform(-double(a), double(a)));
    return make(std::move(shape), std::move(v), requires_grad);
  }

  // Internal: append an op node. `fn` computes nothing; callers fill value.
  Tensor<S> op(Shape shape, std::vector<int> inputs,
               std::function<void(Tape<S>&, Node<S>&)> backward_fn) {
    auto n = std::make_unique<Node<S>>();
    n->shape = std::move(shape);
    n->value.assign(std::size_t(numel(n->shape)), S(0));
    n->inputs = std::move(inputs);
    bool needs = false;
    if (grad_enabled_)
      for (int id : n->inputs) needs = needs || node(id).requires_grad;
    n->requires_grad = needs;
    if (needs) n->backward = std::move(backward_fn);
    nodes_.push_back(std::move(n));
    return Tensor<S>(this, int(nodes_.size()) - 1);
  }

  void freeze_parameters() { watermark_ = int(nodes_.size()); }
  int watermark() const { return watermark_; }

  // Drop all activation nodes and clear parameter gradients.
  void reset() {
    nodes_.resize(std::size_t(watermark_));
    for (auto& n : nodes_) {
      n->grad.clear();
      n->grad.shrink_to_fit();
    }
  }

 private:
  std::vector<std::unique_ptr<Node<S>>> nodes_;
  int watermark_ = 0;
  bool grad_enabled_ = true;
};

template <typename S>
class NoGradGuard {
 public:
  explicit NoGradGuard(Tape<S>& tape) : tape_(tape), prev_(tape.grad_enabled()) {
    tape_.set_grad_enabled(false);
  }
  ~NoGradGuard() { tape_.set_grad_enabled(prev_); }

 private:
  Tape<S>& tape_;
  bool prev_;
};

// ---------------------------------------------------------------------------
// GEMM kernels (row-major). Rows are partitioned across threads with a fixed
// split, so results do not depend on the thread count.
// ---------------------------------------------------------------------------

template <typename S>
void gemm(const S* a, const S* b, S* c, std::int64_t rows, std::int64_t inner, std::int64_t cols) {
  const std::int64_t grain = std::max<std::int64_t>(1, 1 + 65536 / (inner * cols + 1));
  parallel_for(
      rows,
      [&](std::int64_t r0, std::int64_t r1) {
        for (std::int64_t i = r0; i < r1; ++i) {
          const S* ai = a + i * inner;
          S* ci = c + i * cols;
          for (std::int64_t j = 0; j < cols; ++j) ci[j] = S(0);
          for (std::int64_t k = 0; k < inner; ++k) {
            const S aik = ai[k];
            const S* bk = b + k * cols;
            for (std::int64_t j = 0; j < cols; ++j) ci[j] += aik * bk[j];
          }
        }
      },
      grain);
}

// c[i,k] += sum_j a[i,j] * b[k,j]   (a: rows x cols, b: k_rows x cols)
template <typename S>
void gemm_acc_nt(const S* a, const S* b, S* c, std::int64_t rows, std::int64_t cols,
                 std::int64_t k_rows) {
  const std::int64_t grain = std::max<std::int64_t>(1, 1 + 65536 / (cols * k_rows + 1));
  parallel_for(
      rows,
      [&](std::int64_t r0, std::int64_t r1) {
        for (std::int64_t i = r0; i < r1; ++i) {
          const S* ai = a + i * cols;
          S* ci = c + i * k_rows;
          for (std::int64_t k = 0; k < k_rows; ++k) {
            const S* bk = b + k * cols;
            S acc = S(0);
            for (std::int64_t j = 0; j < cols; ++j) acc += ai[j] * bk[j];
            ci[k] += acc;
          }
        }
      },
      grain);
}

// c[k,j] += sum_i a[i,k] * b[i,j]   (a: rows x k_cols, b: rows x cols)
template <typename S>
void gemm_acc_tn(const S* a, const S* b, S* c, std::int64_t rows, std::int64_t k_cols,
                 std::int64_t cols) {
  const std::int64_t grain = std::max<std::int64_t>(1, 1 + 65536 / (rows * cols + 1));
  parallel_for(
      k_cols,
      [&](std::int64_t k0, std::int64_t k1) {
        for (std::int64_t i = 0; i < rows; ++i) {
          const S* bi = b + i * cols;
          const S* ai = a + i * k_cols;
          for (std::int64_t k = k0; k < k1; ++k) {
            const S aik = ai[k];
            if (aik == S(0)) continue;
            S* ck = c + k * cols;
            for (std::int64_t j = 0; j < cols; ++j) ck[j] += aik * bi[j];
          }
        }
      },
      grain);
}

// ---------------------------------------------------------------------------
// Ops
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  Tape<S>& tape = *a.tape();
  const std::int64_t rows = a.dim(0), inner = a.dim(1), cols = b.dim(1);
  const int aid = a.id(), bid = b.id();
  Tensor<S> out = tape.op({rows, cols}, {aid, bid}, [=](Tape<S>& t, Node<S>& self) {
    Node<S>& na = t.node(aid);
    Node<S>& nb = t.node(bid);
    if (na.requires_grad) {
      na.ensure_grad();
      gemm_acc_nt(self.grad.data(), nb.value.data(), na.grad.data(), rows, cols, inner);
    }
    if (nb.requires_grad) {
      nb.ensure_grad();
      gemm_acc_tn(na.value.data(), self.grad.data(), nb.grad.data(), rows, inner, cols);
    }
  });
  gemm(a.values().data(), b.values().data(), out.mutable_values().data(), rows, inner, cols);
  return out;
}

// x:(R x K) * w:(K x N) + bias:(N)
template <typename S>
Tensor<S> affine(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b) {
  if (x.rank() != 2 || w.rank() != 2 || x.dim(1) != w.dim(0) || b.size() != w.dim(1))
    throw DimensionError("affine: incompatible shapes " + shape_str(x.shape()) + ", " +
                         shape_str(w.shape()) + ", " + shape_str(b.shape()));
  Tape<S>& tape = *x.tape();
  const std::int64_t rows = x.dim(0), inner = x.dim(1), cols = w.dim(1);
  const int xid = x.id(), wid = w.id(), bid = b.id();
  Tensor<S> out = tape.op({rows, cols}, {xid, wid, bid}, [=](Tape<S>& t, Node<S>& self) {
    Node<S>& nx = t.node(xid);
    Node<S>& nw = t.node(wid);
    Node<S>& nb = t.node(bid);
    if (nx.requires_grad) {
      nx.ensure_grad();
      gemm_acc_nt(self.grad.data(), nw.value.data(), nx.grad.data(), rows, cols, inner);
    }
    if (nw.requires_grad) {
      nw.ensure_grad();
      gemm_acc_tn(nx.value.data(), self.grad.data(), nw.grad.data(), rows, inner, cols);
    }
    if (nb.requires_grad) {
      nb.ensure_grad();
      for (std::int64_t i = 0; i < rows; ++i) {
        const S* g = self.grad.data() + i * cols;
        for (std::int64_t j = 0; j < cols; ++j) nb.grad[std::size_t(j)] += g[j];
      }
    }
  });
  S* c = out.mutable_values().data();
  gemm(x.values().data(), w.values().data(), c, rows, inner, cols);
  const S* bias = b.values().data();
  for (std::int64_t i = 0; i < rows; ++i)
    for (std::int64_t j = 0; j < cols; ++j) c[i * cols + j] += bias[j];
  return out;
}

namespace detail {

// numpy-style broadcast of shapes with ranks padded on the left
inline Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank, 1);
  for (std::size_t i = 0; i < rank; ++i) {
    std::int64_t ea = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    std::int64_t eb = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (ea != eb && ea != 1 && eb != 1)
      throw DimensionError("broadcast: incompatible shapes " + shape_str(a) + " and " +
                           shape_str(b));
    out[i] = std::max(ea, eb);
  }
  return out;
}

// strides of `shape` viewed as broadcast to `out` (0 on broadcast axes)
inline std::vector<std::int64_t> broadcast_strides(const Shape& shape, const Shape& out) {
  std::vector<std::int64_t> strides(out.size(), 0);
  std::int64_t s = 1;
  for (std::size_t i = shape.size(); i-- > 0;) {
    std::size_t o = i + (out.size() - shape.size());
    strides[o] = (shape[i] == 1 && out[o] != 1) ? 0 : s;
    s *= shape[i];
  }
  return strides;
}

template <typename S, class Fwd>
void broadcast_eval(const Node<S>& a, const Node<S>& b, Node<S>& out, Fwd&& fwd) {
  const Shape& os = out.shape;
  auto sa = broadcast_strides(a.shape, os);
  auto sb = broadcast_strides(b.shape, os);
  const std::size_t rank = os.size();
  std::vector<std::int64_t> idx(rank, 0);
  std::int64_t oa = 0, ob = 0;
  const std::int64_t n = out.size();
  for (std::int64_t i = 0; i < n; ++i) {
    out.value[std::size_t(i)] = fwd(a.value[std::size_t(oa)], b.value[std::size_t(ob)]);
    for (std::size_t d = rank; d-- > 0;) {
      ++idx[d];
      oa += sa[d];
      ob += sb[d];
      if (idx[d] < os[d]) break;
      oa -= sa[d] * os[d];
      ob -= sb[d] * os[d];
      idx[d] = 0;
    }
  }
}

// accumulate dOut into dIn summing over broadcast axes; Sel picks the local
// gradient factor from (a_val, b_val, out_grad)
template <typename S, class Acc>
void broadcast_backprop(Tape<S>& t, Node<S>& self, int in_id, int other_id, Acc&& acc) {
  Node<S>& nin = t.node(in_id);
  if (!nin.requires_grad) return;
  nin.ensure_grad();
  Node<S>& noth = t.node(other_id);
  const Shape& os = self.shape;
  auto si = broadcast_strides(nin.shape, os);
  auto so = broadcast_strides(noth.shape, os);
  const std::size_t rank = os.size();
  std::vector<std::int64_t> idx(rank, 0);
  std::int64_t oi = 0, oo = 0;
  const std::int64_t n = self.size();
  for (std::int64_t i = 0; i < n; ++i) {
    nin.grad[std::size_t(oi)] +=
        acc(nin.value[std::size_t(oi)], noth.value[std::size_t(oo)], self.grad[std::size_t(i)]);
    for (std::size_t d = rank; d-- > 0;) {
      ++idx[d];
      oi += si[d];
      oo += so[d];
      if (idx[d] < os[d]) break;
      oi -= si[d] * os[d];
      oo -= so[d] * os[d];
      idx[d] = 0;
    }
  }
}

}  // namespace detail

enum class BinOp { add, sub, mul };

template <typename S>
Tensor<S> binary(BinOp kind, const Tensor<S>& a, const Tensor<S>& b) {
  Tape<S>& tape = *a.tape();
  Shape os = detail::broadcast_shape(a.shape(), b.shape());
  const int aid = a.id(), bid = b.id();
  Tensor<S> out = tape.op(os, {aid, bid}, [=](Tape<S>& t, Node<S>& self) {
    switch (kind) {
      case BinOp::add:
        detail::broadcast_backprop(t, self, aid, bid, [](S, S, S g) { return g; });
        detail::broadcast_backprop(t, self, bid, aid, [](S, S, S g) { return g; });
        break;
      case BinOp::sub:
        detail::broadcast_backprop(t, self, aid, bid, [](S, S, S g) { return g; });
        detail::broadcast_backprop(t, self, bid, aid, [](S, S, S g) { return -g; });
        break;
      case BinOp::mul:
        detail::broadcast_backprop(t, self, aid, bid, [](S, S other, S g) { return g * other; });
        detail::broadcast_backprop(t, self, bid, aid, [](S, S other, S g) { return g * other; });
        break;
    }
  });
  Node<S>& no = tape.node(out.id());
  const Node<S>& na = tape.node(aid);
  const Node<S>& nb = tape.node(bid);
  if (na.shape == nb.shape) {
    // fast path, no stride walk
    const std::int64_t n = no.size();
    const S* pa = na.value.data();
    const S* pb = nb.value.data();
    S* po = no.value.data();
    switch (kind) {
      case BinOp::add:
        for (std::int64_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
        break;
      case BinOp::sub:
        for (std::int64_t i = 0; i < n; ++i) po[i] = pa[i] - pb[i];
        break;
      case BinOp::mul:
        for (std::int64_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i];
        break;
    }
  } else {
    switch (kind) {
      case BinOp::add:
        detail::broadcast_eval(na, nb, no, [](S x, S y) { return x + y; });
        break;
      case BinOp::sub:
        detail::broadcast_eval(na, nb, no, [](S x, S y) { return x - y; });
        break;
      case BinOp::mul:
        detail::broadcast_eval(na, nb, no, [](S x, S y) { return x * y; });
        break;
    }
  }
  return out;
}

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  return binary(BinOp::add, a, b);
}
template <typename S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
  return binary(BinOp::sub, a, b);
}
template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  return binary(BinOp::mul, a, b);
}

template <typename S>
S stable_sigmoid(S x) {
  if (x >= S(0)) {
    S e = std::exp(-x);
    return S(1) / (S(1) + e);
  }
  S e = std::exp(x);
  return e / (S(1) + e);
}

enum class UnOp { relu, sigmoid, tanh, abs };

template <typename S>
Tensor<S> unary(UnOp kind, const Tensor<S>& x) {
  Tape<S>& tape = *x.tape();
  const int xid = x.id();
  Tensor<S> out = tape.op(x.shape(), {xid}, [=](Tape<S>& t, Node<S>& self) {
    Node<S>& nx = t.node(xid);
    if (!nx.requires_grad) return;
    nx.ensure_grad();
    const std::int64_t n = self.size();
    const S* y = self.value.data();
    const S* g = self.grad.data();
    const S* v = nx.value.data();
    S* d = nx.grad.data();
    switch (kind) {
      case UnOp::relu:
        for (std::int64_t i = 0; i < n; ++i) d[i] += v[i] > S(0) ? g[i] : S(0);
        break;
      case UnOp::sigmoid:
        for (std::int64_t i = 0; i < n; ++i) d[i] += g[i] * y[i] * (S(1) - y[i]);
        break;
      case UnOp::tanh:
        for (std::int64_t i = 0; i < n; ++i) d[i] += g[i] * (S(1) - y[i] * y[i]);
        break;
      case UnOp::abs:
        for (std::int64_t i = 0; i < n; ++i)
          d[i] += v[i] > S(0) ? g[i] : (v[i] < S(0) ? -g[i] : S(0));
        break;
    }
  });
  const std::int64_t n = x.size();
  const S* v = x.values().data();
  S* y = out.mutable_values().data();
  switch (kind) {
    case UnOp::relu:
      for (std::int64_t i = 0; i < n; ++i) y[i] = v[i] > S(0) ? v[i] : S(0);
      break;
    case UnOp::sigmoid:
      for (std::int64_t i = 0; i < n; ++i) y[i] = stable_sigmoid(v[i]);
      break;
    case UnOp::tanh:
      for (std::int64_t i = 0; i < n; ++i) y[i] = std::tanh(v[i]);
      break;
    case UnOp::abs:
      for (std::int64_t i = 0; i < n; ++i) y[i] = std::abs(v[i]);
      break;
  }
  return out;
}

template <typename S>
Tensor<S> relu(const Tensor<S>& x) {
  return unary(UnOp::relu, x);
}
template <typename S>
Tensor<S> sigmoid(const Tensor<S>& x) {
  return unary(UnOp::sigmoid, x);
}
template <typename S>
Tensor<S> tanh(const Tensor<S>& x) {
  return unary(UnOp::tanh, x);
}
template <typename S>
Tensor<S> abs(const Tensor<S>& x) {
  return unary(UnOp::abs, x);
}

template <typename S>
Tensor<S> scale(const Tensor<S>& x, S c) {
  Tape<S>& tape = *x.tape();
  const int xid = x.id();
  Tensor<S> out = tape.op(x.shape(), {xid}, [=](Tape<S>& t, Node<S>& self) {
    Node<S>& nx = t.node(xid);
    if (!nx.requires_grad) return;
    nx.ensure_grad();
    for (std::int64_t i = 0; i < self.size(); ++i)
      nx.grad[std::size_t(i)] += self.grad[std::size_t(i)] * c;
  });
  const S* v = x.values().data();
  S* y = out.mutable_values().data();
  for (std::int64_t i = 0; i < x.size(); ++i) y[i] = v[i] * c;
  return out;
}

template <typename S>
Tensor<S> sum(const Tensor<S>& x) {
  Tape<S>& tape = *x.tape();
  const int xid = x.id();
  Tensor<S> out = tape.op({1}, {xid}, [=](Tape<S>& t, Node<S>& self) {
    Node<S>& nx = t.node(xid);
    if (!nx.requires_grad) return;
    nx.ensure_grad();
    const S g = self.grad[0];
    for (auto& d : nx.grad) d += g;
  });
  S acc = S(0);
  for (S v : x.values()) acc += v;
  out.mutable_values()[0] = acc;
  return out;
}

// Inverted dropout: survivors scaled by 1/(1-rate) in training, identity at
// inference. The mask is drawn in flat element order from `rng`.
template <typename S>
Tensor<S> dropout(const Tensor<S>& x, double rate, bool training, CounterRng& rng) {
  if (rate < 0.0 || rate >= 1.0)
    throw ParameterError("dropout rate must be in [0,1), got " + std::to_string(rate));
  if (!training || rate == 0.0) return x;
  Tape<S>& tape = *x.tape();
  const int xid = x.id();
  Tensor<S> out = tape.op(x.shape(), {xid}, [=](Tape<S>& t, Node<S>& self) {
    Node<S>& nx = t.node(xid);
    if (!nx.requires_grad) return;
    nx.ensure_grad();
    for (std::int64_t i = 0; i < self.size(); ++i)
      nx.grad[std::size_t(i)] += self.grad[std::size_t(i)] * self.saved[std::size_t(i)];
  });
  Node<S>& no = tape.node(out.id());
  no.saved.resize(std::size_t(x.size()));
  const S keep_scale = S(1.0 / (1.0 - rate));
  const S* v = x.values().data();
  for (std::int64_t i = 0; i < x.size(); ++i) {
    const S m = rng.next_double() < rate ? S(0) : keep_scale;
    no.saved[std::size_t(i)] = m;
    no.value[std::size_t(i)] = v[i] * m;
  }
  return out;
}

// -log softmax(logits)[target], stable under max-subtraction.
template <typename S>
Tensor<S> softmax_cross_entropy(const Tensor<S>& logits, std::int64_t target) {
  if (logits.rank() != 1)
    throw DimensionError("softmax_cross_entropy expects a vector, got " +
                         shape_str(logits.shape()));
  const std::int64_t n = logits.size();
  if (target < 0 || target >= n)
    throw ParameterError("softmax_cross_entropy target " + std::to_string(target) +
                         " out of range [0," + std::to_string(n) + ")");
  Tape<S>& tape = *logits.tape();
  const int lid = logits.id();
  Tensor<S> out = tape.op({1}, {lid}, [=](Tape<S>& t, Node<S>& self) {
    Node<S>& nl = t.node(lid);
    if (!nl.requires_grad) return;
    nl.ensure_grad();
    const S g = self.grad[0];
    for (std::int64_t i = 0; i < n; ++i)
      nl.grad[std::size_t(i)] += g * (self.saved[std::size_t(i)] - (i == target ? S(1) : S(0)));
  });
  Node<S>& no = tape.node(out.id());
  no.saved.resize(std::size_t(n));
  const S* l = logits.values().data();
  S m = l[0];
  for (std::int64_t i = 1; i < n; ++i) m = std::max(m, l[i]);
  S se = S(0);
  for (std::int64_t i = 0; i < n; ++i) se += std::exp(l[i] - m);
  for (std::int64_t i = 0; i < n; ++i) no.saved[std::size_t(i)] = std::exp(l[i] - m) / se;
  no.value[0] = std::log(se) - (l[target] - m);
  return out;
}

// Contiguous row window [begin, begin+count) of a matrix.
template <typename S>
Tensor<S> slice_rows(const Tensor<S>& x, std::int64_t begin, std::int64_t count) {
  if (x.rank() != 2) throw DimensionError("slice_rows expects a matrix");
  const std::int64_t rows = x.dim(0), cols = x.dim(1);
  if (begin < 0 || count < 0 || begin + count > rows)
    throw RangeError("slice_rows: window [" + std::to_string(begin) + "," +
                     std::to_string(begin + count) + ") outside " + std::to_string(rows) +
                     " rows");
  Tape<S>& tape = *x.tape();
  const int xid = x.id();
  Tensor<S> out = tape.op({count, cols}, {xid}, [=](Tape<S>& t, Node<S>& self) {
    Node<S>& nx = t.node(xid);
    if (!nx.requires_grad) return;
    nx.ensure_grad();
    const std::int64_t n = count * cols;
    S* d = nx.grad.data() + begin * cols;
    const S* g = self.grad.data();
    for (std::int64_t i = 0; i < n; ++i) d[i] += g[i];
  });
  std::copy_n(x.values().data() + begin * cols, count * cols, out.mutable_values().data());
  return out;
}

// Row gather with scatter-add backward; indices may repeat.
template <typename S>
Tensor<S> gather_rows(const Tensor<S>& x, std::vector<std::int64_t> indices) {
  if (x.rank() != 2) throw DimensionError("gather_rows expects a matrix");
  const std::int64_t rows = x.dim(0), cols = x.dim(1);
  for (auto i : indices)
    if (i < 0 || i >= rows) throw RangeError("gather_rows: index " + std::to_string(i) +
                                             " outside " + std::to_string(rows) + " rows");
  Tape<S>& tape = *x.tape();
  const int xid = x.id();
  const std::int64_t out_rows = std::int64_t(indices.size());
  Tensor<S> out = tape.op({out_rows, cols}, {xid}, [=](Tape<S>& t, Node<S>& self) {
    Node<S>& nx = t.node(xid);
    if (!nx.requires_grad) return;
    nx.ensure_grad();
    for (std::int64_t i = 0; i < out_rows; ++i) {
      S* d = nx.grad.data() + self.saved_idx[std::size_t(i)] * cols;
      const S* g = self.grad.data() + i * cols;
      for (std::int64_t j = 0; j < cols; ++j) d[j] += g[j];
    }
  });
  Node<S>& no = tape.node(out.id());
  no.saved_idx = std::move(indices);
  for (std::int64_t i = 0; i < out_rows; ++i)
    std::copy_n(x.values().data() + no.saved_idx[std::size_t(i)] * cols, cols,
                no.value.data() + i * cols);
  return out;
}

// Stack matrices with equal column counts along the row axis.
template <typename S>
Tensor<S> concat_rows(const std::vector<Tensor<S>>& parts) {
  if (parts.empty()) throw ParameterError("concat_rows: empty input list");
  const std::int64_t cols = parts[0].dim(1);
  std::int64_t rows = 0;
  std::vector<int> ids;
  for (const auto& p : parts) {
    if (p.rank() != 2 || p.dim(1) != cols)
      throw DimensionError("concat_rows: mismatched column counts");
    rows += p.dim(0);
    ids.push_back(p.id());
  }
  Tape<S>& tape = *parts[0].tape();
  Tensor<S> out = tape.op({rows, cols}, ids, [=](Tape<S>& t, Node<S>& self) {
    std::int64_t offset = 0;
    for (int id : self.inputs) {
      Node<S>& nx = t.node(id);
      const std::int64_t n = nx.size();
      if (nx.requires_grad) {
        nx.ensure_grad();
        const S* g = self.grad.data() + offset;
        for (std::int64_t i = 0; i < n; ++i) nx.grad[std::size_t(i)] += g[i];
      }
      offset += n;
    }
  });
  std::int64_t offset = 0;
  for (const auto& p : parts) {
    std::copy_n(p.values().data(), p.size(), out.mutable_values().data() + offset);
    offset += p.size();
  }
  return out;
}

// sum_i w_i * sum_d |pred[i,d] - target[i,d]|; weights are not differentiated.
template <typename S>
Tensor<S> masked_abs_error_sum(const Tensor<S>& pred, const Tensor<S>& target,
                               std::vector<S> row_weights) {
  if (pred.shape() != target.shape() || pred.rank() != 2)
    throw DimensionError("masked_abs_error_sum: shape mismatch " + shape_str(pred.shape()) +
                         " vs " + shape_str(target.shape()));
  const std::int64_t rows = pred.dim(0), cols = pred.dim(1);
  if (std::int64_t(row_weights.size()) != rows)
    throw DimensionError("masked_abs_error_sum: weight count mismatch");
  Tape<S>& tape = *pred.tape();
  const int pid = pred.id(), tid = target.id();
  Tensor<S> out = tape.op({1}, {pid, tid}, [=](Tape<S>& t, Node<S>& self) {
    Node<S>& np = t.node(pid);
    Node<S>& nt = t.node(tid);
    const S g = self.grad[0];
    if (np.requires_grad) np.ensure_grad();
    if (nt.requires_grad) nt.ensure_grad();
    for (std::int64_t i = 0; i < rows; ++i) {
      const S w = self.saved[std::size_t(i)] * g;
      if (w == S(0)) continue;
      for (std::int64_t j = 0; j < cols; ++j) {
        const S diff = np.value[std::size_t(i * cols + j)] - nt.value[std::size_t(i * cols + j)];
        const S s = diff > S(0) ? w : (diff < S(0) ? -w : S(0));
        if (np.requires_grad) np.grad[std::size_t(i * cols + j)] += s;
        if (nt.requires_grad) nt.grad[std::size_t(i * cols + j)] -= s;
      }
    }
  });
  Node<S>& no = tape.node(out.id());
  no.saved = std::move(row_weights);
  const S* p = pred.values().data();
  const S* tg = target.values().data();
  S acc = S(0);
  for (std::int64_t i = 0; i < rows; ++i) {
    if (no.saved[std::size_t(i)] == S(0)) continue;
    S row = S(0);
    for (std::int64_t j = 0; j < cols; ++j) row += std::abs(p[i * cols + j] - tg[i * cols + j]);
    acc += no.saved[std::size_t(i)] * row;
  }
  no.value[0] = acc;
  return out;
}

// InfoNCE terms, fused: for each row i the logits are the dot products of
// pred[i] against z rows [pos_idx[i], neg_idx[i*k..i*k+k-1]]; the positive
// sits at class 0. Returns sum_i w_i * CE_i; softmax probabilities are kept
// for the backward pass.
template <typename S>
Tensor<S> nce_cross_entropy_sum(const Tensor<S>& pred, const Tensor<S>& z,
                                std::vector<std::int64_t> pos_idx,
                                std::vector<std::int64_t> neg_idx, std::vector<S> row_weights) {
  if (pred.rank() != 2 || z.rank() != 2 || pred.dim(1) != z.dim(1))
    throw DimensionError("nce_cross_entropy_sum: incompatible shapes " +
                         shape_str(pred.shape()) + " and " + shape_str(z.shape()));
  const std::int64_t rows = pred.dim(0), dim = pred.dim(1), zrows = z.dim(0);
  if (rows == 0) throw ContractError("nce_cross_entropy_sum: no rows to score");
  if (std::int64_t(pos_idx.size()) != rows || std::int64_t(row_weights.size()) != rows ||
      neg_idx.size() % std::size_t(rows) != 0)
    throw DimensionError("nce_cross_entropy_sum: index table sizes do not match rows");
  const std::int64_t negs = std::int64_t(neg_idx.size()) / rows;
  const std::int64_t classes = negs + 1;
  for (auto i : pos_idx)
    if (i < 0 || i >= zrows) throw RangeError("nce positive index out of range");
  for (auto i : neg_idx)
    if (i < 0 || i >= zrows) throw RangeError("nce negative index out of range");

  Tape<S>& tape = *pred.tape();
  const int pid = pred.id(), zid = z.id();
  Tensor<S> out = tape.op({1}, {pid, zid}, [=](Tape<S>& t, Node<S>& self) {
    Node<S>& np = t.node(pid);
    Node<S>& nz = t.node(zid);
    const S g = self.grad[0];
    if (np.requires_grad) np.ensure_grad();
    if (nz.requires_grad) nz.ensure_grad();
    const S* probs = self.saved.data();
    const S* weights = self.saved.data() + rows * classes;
    for (std::int64_t i = 0; i < rows; ++i) {
      const S w = weights[i] * g;
      if (w == S(0)) continue;
      const S* pi = np.value.data() + i * dim;
      S* dpi = np.requires_grad ? np.grad.data() + i * dim : nullptr;
      for (std::int64_t c = 0; c < classes; ++c) {
        const std::int64_t zi =
            c == 0 ? self.saved_idx[std::size_t(i)]
                   : self.saved_idx[std::size_t(rows + i * negs + (c - 1))];
        const S dl = w * (probs[i * classes + c] - (c == 0 ? S(1) : S(0)));
        if (dl == S(0)) continue;
        const S* zr = nz.value.data() + zi * dim;
        if (dpi)
          for (std::int64_t d = 0; d < dim; ++d) dpi[d] += dl * zr[d];
        if (nz.requires_grad) {
          S* dz = nz.grad.data() + zi * dim;
          for (std::int64_t d = 0; d < dim; ++d) dz[d] += dl * pi[d];
        }
      }
    }
  });
  Node<S>& no = tape.node(out.id());
  no.saved.resize(std::size_t(rows * classes + rows));
  no.saved_idx.resize(std::size_t(rows + rows * negs));
  std::copy(pos_idx.begin(), pos_idx.end(), no.saved_idx.begin());
  std::copy(neg_idx.begin(), neg_idx.end(), no.saved_idx.begin() + rows);
  std::copy(row_weights.begin(), row_weights.end(), no.saved.begin() + rows * classes);

  const S* p = pred.values().data();
  const S* zv = z.values().data();
  S* probs = no.saved.data();
  std::vector<S> row_ce(static_cast<std::size_t>(rows));
  parallel_for(
      rows,
      [&](std::int64_t r0, std::int64_t r1) {
        std::vector<S> logits(static_cast<std::size_t>(classes));
        for (std::int64_t i = r0; i < r1; ++i) {
          const S* pi = p + i * dim;
          for (std::int64_t c = 0; c < classes; ++c) {
            const std::int64_t zi = c == 0 ? pos_idx[std::size_t(i)]
                                           : neg_idx[std::size_t(i * negs + (c - 1))];
            const S* zr = zv + zi * dim;
            S acc = S(0);
            for (std::int64_t d = 0; d < dim; ++d) acc += pi[d] * zr[d];
            logits[std::size_t(c)] = acc;
          }
          S m = logits[0];
          for (std::int64_t c = 1; c < classes; ++c) m = std::max(m, logits[std::size_t(c)]);
          S se = S(0);
          for (std::int64_t c = 0; c < classes; ++c) se += std::exp(logits[std::size_t(c)] - m);
          for (std::int64_t c = 0; c < classes; ++c)
            probs[i * classes + c] = std::exp(logits[std::size_t(c)] - m) / se;
          row_ce[std::size_t(i)] = std::log(se) - (logits[0] - m);
        }
      },
      /*grain=*/64);
  // serial reduction keeps the sum independent of the thread count
  S acc = S(0);
  for (std::int64_t i = 0; i < rows; ++i)
    acc += no.saved[std::size_t(rows * classes + i)] * row_ce[std::size_t(i)];
  no.value[0] = acc;
  return out;
}

// Fused GRU step: h' = u (.) h + (1-u) (.) n with
//   r = sigmoid(x Wr + h Ur + br)
//   u = sigmoid(x Wu + h Uu + bu)
//   n = tanh(x Wn + (r (.) h) Un + bn)
// Gates r, u, n are stashed for the backward pass.
template <typename S>
struct GruWeights {
  Tensor<S> wr, wu, wn;  // input_dim x hidden
  Tensor<S> ur, uu, un;  // hidden x hidden
  Tensor<S> br, bu, bn;  // hidden
};

template <typename S>
Tensor<S> gru_cell(const Tensor<S>& x, const Tensor<S>& h, const GruWeights<S>& w) {
  const std::int64_t batch = x.dim(0), in_dim = x.dim(1), hidden = h.dim(1);
  if (h.dim(0) != batch || w.wr.dim(0) != in_dim || w.wr.dim(1) != hidden ||
      w.ur.dim(0) != hidden || w.ur.dim(1) != hidden)
    throw DimensionError("gru_cell: incompatible shapes " + shape_str(x.shape()) + " and " +
                         shape_str(h.shape()));
  Tape<S>& tape = *x.tape();
  const int xid = x.id(), hid = h.id();
  const int wids[9] = {w.wr.id(), w.wu.id(), w.wn.id(), w.ur.id(), w.uu.id(),
                       w.un.id(), w.br.id(), w.bu.id(), w.bn.id()};
  std::vector<int> inputs = {xid, hid};
  inputs.insert(inputs.end(), wids, wids + 9);

  Tensor<S> out = tape.op({batch, hidden}, inputs, [=](Tape<S>& t, Node<S>& self) {
    Node<S>& nx = t.node(xid);
    Node<S>& nh = t.node(hid);
    Node<S>* nw[9];
    for (int i = 0; i < 9; ++i) nw[i] = &t.node(wids[i]);
    const std::int64_t bh = batch * hidden;
    const S* r = self.saved.data();
    const S* u = self.saved.data() + bh;
    const S* n = self.saved.data() + 2 * bh;
    const S* hv = nh.value.data();
    const S* gh = self.grad.data();

    std::vector<S> dr_pre(static_cast<std::size_t>(bh)), du_pre(static_cast<std::size_t>(bh)), dn_pre(static_cast<std::size_t>(bh));
    std::vector<S> rh(static_cast<std::size_t>(bh)), drh(static_cast<std::size_t>(bh), S(0));
    for (std::int64_t i = 0; i < bh; ++i) {
      const S gi = gh[i];
      dn_pre[std::size_t(i)] = gi * (S(1) - u[i]) * (S(1) - n[i] * n[i]);
      du_pre[std::size_t(i)] = gi * (hv[i] - n[i]) * u[i] * (S(1) - u[i]);
      rh[std::size_t(i)] = r[i] * hv[i];
    }
    // drh = dn_pre . Un^T
    gemm_acc_nt(dn_pre.data(), nw[5]->value.data(), drh.data(), batch, hidden, hidden);
    for (std::int64_t i = 0; i < bh; ++i)
      dr_pre[std::size_t(i)] = drh[std::size_t(i)] * hv[i] * r[i] * (S(1) - r[i]);

    if (nh.requires_grad) {
      nh.ensure_grad();
      for (std::int64_t i = 0; i < bh; ++i)
        nh.grad[std::size_t(i)] += gh[i] * u[i] + drh[std::size_t(i)] * r[i];
      gemm_acc_nt(du_pre.data(), nw[4]->value.data(), nh.grad.data(), batch, hidden, hidden);
      gemm_acc_nt(dr_pre.data(), nw[3]->value.data(), nh.grad.data(), batch, hidden, hidden);
    }
    if (nx.requires_grad) {
      nx.ensure_grad();
      gemm_acc_nt(dn_pre.data(), nw[2]->value.data(), nx.grad.data(), batch, hidden, in_dim);
      gemm_acc_nt(du_pre.data(), nw[1]->value.data(), nx.grad.data(), batch, hidden, in_dim);
      gemm_acc_nt(dr_pre.data(), nw[0]->value.data(), nx.grad.data(), batch, hidden, in_dim);
    }
    const S* xv = nx.value.data();
    auto acc_weight = [&](int wi, const std::vector<S>& dpre, const S* left,
                          std::int64_t left_cols) {
      if (!nw[wi]->requires_grad) return;
      nw[wi]->ensure_grad();
      gemm_acc_tn(left, dpre.data(), nw[wi]->grad.data(), batch, left_cols, hidden);
    };
    acc_weight(0, dr_pre, xv, in_dim);
    acc_weight(1, du_pre, xv, in_dim);
    acc_weight(2, dn_pre, xv, in_dim);
    acc_weight(3, dr_pre, hv, hidden);
    acc_weight(4, du_pre, hv, hidden);
    acc_weight(5, dn_pre, rh.data(), hidden);
    auto acc_bias = [&](int wi, const std::vector<S>& dpre) {
      if (!nw[wi]->requires_grad) return;
      nw[wi]->ensure_grad();
      for (std::int64_t i = 0; i < batch; ++i)
        for (std::int64_t j = 0; j < hidden; ++j)
          nw[wi]->grad[std::size_t(j)] += dpre[std::size_t(i * hidden + j)];
    };
    acc_bias(6, dr_pre);
    acc_bias(7, du_pre);
    acc_bias(8, dn_pre);
  });

  Node<S>& no = tape.node(out.id());
  const std::int64_t bh = batch * hidden;
  no.saved.resize(std::size_t(3 * bh));
  S* r = no.saved.data();
  S* u = no.saved.data() + bh;
  S* n = no.saved.data() + 2 * bh;

  std::vector<S> pre_r(static_cast<std::size_t>(bh)), pre_u(static_cast<std::size_t>(bh)), pre_n(static_cast<std::size_t>(bh));
  const S* xv = x.values().data();
  const S* hv = h.values().data();
  gemm(xv, w.wr.values().data(), pre_r.data(), batch, in_dim, hidden);
  {
    std::vector<S> tmp(static_cast<std::size_t>(bh));
    gemm(hv, w.ur.values().data(), tmp.data(), batch, hidden, hidden);
    const S* br = w.br.values().data();
    for (std::int64_t i = 0; i < batch; ++i)
      for (std::int64_t j = 0; j < hidden; ++j) {
        const std::int64_t ix = i * hidden + j;
        r[ix] = stable_sigmoid(pre_r[std::size_t(ix)] + tmp[std::size_t(ix)] + br[j]);
      }
    gemm(xv, w.wu.values().data(), pre_u.data(), batch, in_dim, hidden);
    gemm(hv, w.uu.values().data(), tmp.data(), batch, hidden, hidden);
    const S* bu = w.bu.values().data();
    for (std::int64_t i = 0; i < batch; ++i)
      for (std::int64_t j = 0; j < hidden; ++j) {
        const std::int64_t ix = i * hidden + j;
        u[ix] = stable_sigmoid(pre_u[std::size_t(ix)] + tmp[std::size_t(ix)] + bu[j]);
      }
    std::vector<S> rh(static_cast<std::size_t>(bh));
    for (std::int64_t i = 0; i < bh; ++i) rh[std::size_t(i)] = r[i] * hv[i];
    gemm(xv, w.wn.values().data(), pre_n.data(), batch, in_dim, hidden);
    gemm(rh.data(), w.un.values().data(), tmp.data(), batch, hidden, hidden);
    const S* bn = w.bn.values().data();
    S* hout = no.value.data();
    for (std::int64_t i = 0; i < batch; ++i)
      for (std::int64_t j = 0; j < hidden; ++j) {
        const std::int64_t ix = i * hidden + j;
        n[ix] = std::tanh(pre_n[std::size_t(ix)] + tmp[std::size_t(ix)] + bn[j]);
        hout[ix] = u[ix] * hv[ix] + (S(1) - u[ix]) * n[ix];
      }
  }
  return out;
}

// Reverse sweep from a scalar loss. Node order is creation order, which is
// topological, so a single pass accumulates fan-out correctly.
template <typename S>
void backward(const Tensor<S>& loss) {
  if (loss.size() != 1)
    throw ContractError("backward requires a scalar loss, got shape " + shape_str(loss.shape()));
  Tape<S>& tape = *loss.tape();
  Node<S>& top = tape.node(loss.id());
  top.ensure_grad();
  top.grad[0] = S(1);
  for (int id = loss.id(); id >= 0; --id) {
    Node<S>& n = tape.node(id);
    if (n.grad.empty() || !n.backward) continue;
    n.backward(tape, n);
  }
}

}  // namespace pcl
