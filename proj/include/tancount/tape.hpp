#pragma once

#include <array>
#include <cmath>
#include <vector>

#include "tancount/ops.hpp"
#include "tancount/tensor.hpp"

namespace tancount {

/// Records a forward composition of the network op set and replays it in
/// reverse for gradients. Values are computed eagerly as ops are recorded;
/// backward() walks the record from the root and accumulates into each
/// trainable leaf's grad buffer. Ops not in this set are out of scope.
template <typename T>
class Tape {
 public:
  using Id = int32_t;
  static constexpr Id kNone = -1;

  /// Non-differentiable leaf (frozen inputs, targets).
  Id constant(Tensor<T> v) { return push(Op::kLeaf, std::move(v), false); }

  /// Differentiable leaf owned by the tape (for gradient-of-input checks).
  Id input(Tensor<T> v) { return push(Op::kLeaf, std::move(v), true); }

  /// External trainable parameter; backward() accumulates into p->grad.
  Id param(Tensor<T>* p) {
    Id id = push(Op::kLeaf, *p, true);
    node(id).ext = p;
    return id;
  }

  Id conv2d(Id x, Id w, Id b, int pad) {
    Id id = push3(Op::kConv2d, x, w, b,
                  ops::conv2d(val(x), val(w), val(b), pad));
    node(id).iattr = pad;
    return id;
  }

  Id relu(Id x) { return push1(Op::kRelu, x, ops::relu(val(x))); }

  Id maxpool2(Id x) { return push1(Op::kMaxPool2, x, ops::maxpool2(val(x))); }

  Id dilated_conv1d(Id x, Id w, Id b, int d) {
    Id id = push3(Op::kDConv1d, x, w, b,
                  ops::dilated_conv1d(val(x), val(w), val(b), d));
    node(id).iattr = d;
    return id;
  }

  Id conv1x1_seq(Id x, Id w, Id b) {
    return push3(Op::kConv1x1, x, w, b, ops::conv1x1_seq(val(x), val(w), val(b)));
  }

  Id add(Id a, Id b) {
    check(val(a).same_shape(val(b)), "tape add: shape mismatch " +
                                         val(a).shape_string() + " vs " +
                                         val(b).shape_string());
    Tensor<T> out(val(a).shape());
    const Tensor<T>&va = val(a), &vb = val(b);
    for (int64_t i = 0; i < out.size(); ++i) out[i] = va[i] + vb[i];
    return push2(Op::kAdd, a, b, std::move(out));
  }

  Id sub(Id a, Id b) {
    check(val(a).same_shape(val(b)), "tape sub: shape mismatch " +
                                         val(a).shape_string() + " vs " +
                                         val(b).shape_string());
    Tensor<T> out(val(a).shape());
    const Tensor<T>&va = val(a), &vb = val(b);
    for (int64_t i = 0; i < out.size(); ++i) out[i] = va[i] - vb[i];
    return push2(Op::kSub, a, b, std::move(out));
  }

  Id scale(Id a, T s) {
    Tensor<T> out(val(a).shape());
    const Tensor<T>& va = val(a);
    for (int64_t i = 0; i < out.size(); ++i) out[i] = va[i] * s;
    Id id = push1(Op::kScale, a, std::move(out));
    node(id).sattr = s;
    return id;
  }

  /// Elementwise product with a fixed mask (ROI application).
  Id mul_const(Id a, Tensor<T> mask) {
    check(val(a).same_shape(mask), "tape mul_const: shape mismatch");
    Tensor<T> out(val(a).shape());
    const Tensor<T>& va = val(a);
    for (int64_t i = 0; i < out.size(); ++i) out[i] = va[i] * mask[i];
    Id id = push1(Op::kMulConst, a, std::move(out));
    node(id).cattr = std::move(mask);
    return id;
  }

  /// Row-major flatten of each part, concatenated in order -> {L} vector.
  Id concat_flatten(const std::vector<Id>& parts) {
    check(!parts.empty(), "tape concat: no parts");
    int64_t total = 0;
    bool needs = false;
    for (Id p : parts) {
      total += val(p).size();
      needs |= node(p).needs_grad;
    }
    Tensor<T> out({total});
    int64_t off = 0;
    for (Id p : parts) {
      const Tensor<T>& v = val(p);
      std::copy(v.data(), v.data() + v.size(), out.data() + off);
      off += v.size();
    }
    Id id = push(Op::kConcat, std::move(out), needs);
    node(id).many = parts;
    return id;
  }

  /// Same data under a new shape.
  Id reshape(Id a, std::vector<int64_t> shape) {
    return push1(Op::kReshape, a, val(a).reshaped(std::move(shape)));
  }

  /// L1-normalized per-segment weights of a {L} vector split into `segments`
  /// equal runs; an all-zero vector falls back to uniform weights.
  Id segment_l1_weights(Id v, int64_t segments) {
    const Tensor<T>& x = val(v);
    check(x.size() % segments == 0,
          "segment_l1_weights: length " + std::to_string(x.size()) +
              " not divisible by " + std::to_string(segments));
    const int64_t seg = x.size() / segments;
    Tensor<T> out({segments});
    double total = 0.0;
    std::vector<double> norms(static_cast<size_t>(segments), 0.0);
    for (int64_t s = 0; s < segments; ++s) {
      double acc = 0.0;
      const T* p = x.data() + s * seg;
      for (int64_t i = 0; i < seg; ++i) acc += std::abs(static_cast<double>(p[i]));
      norms[static_cast<size_t>(s)] = acc;
      total += acc;
    }
    for (int64_t s = 0; s < segments; ++s)
      out[s] = total > 0.0
                   ? static_cast<T>(norms[static_cast<size_t>(s)] / total)
                   : static_cast<T>(1.0 / static_cast<double>(segments));
    Id id = push1(Op::kSegL1W, v, std::move(out));
    node(id).iattr = segments;
    node(id).sattr = static_cast<T>(total);
    return id;
  }

  /// Convex combination of equally shaped maps by a weight vector.
  Id weighted_sum(Id weights, const std::vector<Id>& maps) {
    check(val(weights).size() == static_cast<int64_t>(maps.size()),
          "weighted_sum: weight count does not match map count");
    const Tensor<T>& w = val(weights);
    Tensor<T> out(val(maps[0]).shape());
    bool needs = node(weights).needs_grad;
    for (size_t j = 0; j < maps.size(); ++j) {
      const Tensor<T>& m = val(maps[j]);
      check(m.same_shape(out), "weighted_sum: map shape mismatch");
      needs |= node(maps[j]).needs_grad;
      T wj = w[static_cast<int64_t>(j)];
      for (int64_t i = 0; i < out.size(); ++i) out[i] += wj * m[i];
    }
    Id id = push(Op::kWeightedSum, std::move(out), needs);
    node(id).in[0] = weights;
    node(id).many = maps;
    return id;
  }

  /// Sum of all elements -> {1}; 64-bit accumulation.
  Id sum(Id a) {
    Tensor<T> out({1});
    out[0] = static_cast<T>(val(a).sum());
    return push1(Op::kSum, a, std::move(out));
  }

  Id square(Id a) {
    Tensor<T> out(val(a).shape());
    const Tensor<T>& va = val(a);
    for (int64_t i = 0; i < out.size(); ++i) out[i] = va[i] * va[i];
    return push1(Op::kSquare, a, std::move(out));
  }

  /// 0.5 * sum((a - target)^2) -> {1}.
  Id sq_diff_sum_half(Id a, Tensor<T> target) {
    check(val(a).same_shape(target), "sq_diff_sum_half: shape mismatch " +
                                         val(a).shape_string() + " vs " +
                                         target.shape_string());
    const Tensor<T>& va = val(a);
    double acc = 0.0;
    for (int64_t i = 0; i < va.size(); ++i) {
      double d = static_cast<double>(va[i]) - static_cast<double>(target[i]);
      acc += d * d;
    }
    Tensor<T> out({1});
    out[0] = static_cast<T>(0.5 * acc);
    Id id = push1(Op::kSqDiffSumHalf, a, std::move(out));
    node(id).cattr = std::move(target);
    return id;
  }

  /// Mean over elements of the smooth-L1 penalty between a and target -> {1}.
  Id smooth_l1_mean(Id a, Tensor<T> target) {
    check(val(a).same_shape(target), "smooth_l1_mean: shape mismatch");
    const Tensor<T>& va = val(a);
    double acc = 0.0;
    for (int64_t i = 0; i < va.size(); ++i) {
      double d = static_cast<double>(va[i]) - static_cast<double>(target[i]);
      double ad = std::abs(d);
      acc += ad < 1.0 ? 0.5 * d * d : ad - 0.5;
    }
    Tensor<T> out({1});
    out[0] = static_cast<T>(acc / static_cast<double>(va.size()));
    Id id = push1(Op::kSmoothL1Mean, a, std::move(out));
    node(id).cattr = std::move(target);
    return id;
  }

  const Tensor<T>& value(Id id) const { return cnode(id).val; }

  const Tensor<T>& grad(Id id) const {
    const Node& n = cnode(id);
    check2(n.grad_ready, "tape: no gradient recorded for node " +
                             std::to_string(id) + "; run backward() first");
    if (n.ext) {
      static thread_local Tensor<T> view;
      view = Tensor<T>(n.ext->shape(), n.ext->grad_vec());
      return view;
    }
    return n.grd;
  }

  /// Reverse pass from a scalar root, seeding d(root)/d(root) = 1.
  void backward(Id root) {
    check2(cnode(root).val.size() == 1,
           "tape backward: default seed needs a scalar root, got " +
               cnode(root).val.shape_string());
    backward(root, Tensor<T>::full({1}, T(1)));
  }

  /// Reverse pass with an explicit upstream gradient for the root.
  void backward(Id root, const Tensor<T>& upstream) {
    check2(root >= 0 && root < static_cast<Id>(nodes_.size()),
           "tape backward: no forward record for node " + std::to_string(root));
    check2(cnode(root).val.same_shape(upstream),
           "tape backward: upstream shape " + upstream.shape_string() +
               " does not match root " + cnode(root).val.shape_string());
    accum(root, upstream);
    for (Id id = root; id >= 0; --id) {
      Node& n = node(id);
      if (!n.grad_ready || !n.needs_grad) continue;
      apply_backward(id, n);
    }
  }

  int64_t node_count() const { return static_cast<int64_t>(nodes_.size()); }

 private:
  enum class Op {
    kLeaf,
    kConv2d,
    kRelu,
    kMaxPool2,
    kDConv1d,
    kConv1x1,
    kAdd,
    kSub,
    kScale,
    kMulConst,
    kReshape,
    kConcat,
    kSegL1W,
    kWeightedSum,
    kSum,
    kSquare,
    kSqDiffSumHalf,
    kSmoothL1Mean,
  };

  struct Node {
    Op op = Op::kLeaf;
    std::array<Id, 3> in{kNone, kNone, kNone};
    std::vector<Id> many;
    Tensor<T> val;
    Tensor<T> grd;
    Tensor<T> cattr;
    Tensor<T>* ext = nullptr;
    int64_t iattr = 0;
    T sattr = T(0);
    bool needs_grad = false;
    bool grad_ready = false;
  };

  static void check2(bool cond, const std::string& msg) {
    if (!cond) throw std::runtime_error(msg);
  }

  Node& node(Id id) { return nodes_[static_cast<size_t>(id)]; }
  const Node& cnode(Id id) const {
    check2(id >= 0 && id < static_cast<Id>(nodes_.size()),
           "tape: invalid node id " + std::to_string(id));
    return nodes_[static_cast<size_t>(id)];
  }
  const Tensor<T>& val(Id id) const { return cnode(id).val; }

  Id push(Op op, Tensor<T> v, bool needs) {
    Node n;
    n.op = op;
    n.val = std::move(v);
    n.needs_grad = needs;
    nodes_.push_back(std::move(n));
    return static_cast<Id>(nodes_.size() - 1);
  }

  Id push1(Op op, Id a, Tensor<T> v) {
    Id id = push(op, std::move(v), cnode(a).needs_grad);
    node(id).in[0] = a;
    return id;
  }

  Id push2(Op op, Id a, Id b, Tensor<T> v) {
    Id id = push(op, std::move(v),
                 cnode(a).needs_grad || cnode(b).needs_grad);
    node(id).in = {a, b, kNone};
    return id;
  }

  Id push3(Op op, Id a, Id b, Id c, Tensor<T> v) {
    Id id = push(op, std::move(v), cnode(a).needs_grad ||
                                       cnode(b).needs_grad ||
                                       cnode(c).needs_grad);
    node(id).in = {a, b, c};
    return id;
  }

  /// Adds g into the grad buffer of id (allocating on first touch). External
  /// params accumulate straight into their owning tensor's grad.
  void accum(Id id, const Tensor<T>& g) {
    Node& n = node(id);
    if (!n.needs_grad) return;
    if (n.ext) {
      if (!n.ext->has_grad()) n.ext->alloc_grad();
      T* dst = n.ext->grad();
      for (int64_t i = 0; i < g.size(); ++i) dst[i] += g[i];
      n.grad_ready = true;
      return;
    }
    if (!n.grad_ready) {
      n.grd = Tensor<T>(n.val.shape());
      n.grad_ready = true;
    }
    for (int64_t i = 0; i < g.size(); ++i) n.grd[i] += g[i];
  }

  void apply_backward(Id id, Node& n) {
    const Tensor<T>& g = n.grd;  // leaves return before touching g
    switch (n.op) {
      case Op::kLeaf:
        break;
      case Op::kConv2d: {
        backward_conv(id, n, g, /*conv2d=*/true);
        break;
      }
      case Op::kDConv1d:
      case Op::kConv1x1: {
        backward_conv(id, n, g, /*conv2d=*/false);
        break;
      }
      case Op::kRelu: {
        Id x = n.in[0];
        if (node(x).needs_grad) {
          Tensor<T> gx(val(x).shape());
          ops::relu_backward(val(x), g, &gx);
          accum(x, gx);
        }
        break;
      }
      case Op::kMaxPool2: {
        Id x = n.in[0];
        if (node(x).needs_grad) {
          Tensor<T> gx(val(x).shape());
          ops::maxpool2_backward(val(x), g, &gx);
          accum(x, gx);
        }
        break;
      }
      case Op::kAdd: {
        if (node(n.in[0]).needs_grad) accum(n.in[0], g);
        if (node(n.in[1]).needs_grad) accum(n.in[1], g);
        break;
      }
      case Op::kSub: {
        if (node(n.in[0]).needs_grad) accum(n.in[0], g);
        if (node(n.in[1]).needs_grad) {
          Tensor<T> neg(g.shape());
          for (int64_t i = 0; i < g.size(); ++i) neg[i] = -g[i];
          accum(n.in[1], neg);
        }
        break;
      }
      case Op::kScale: {
        if (node(n.in[0]).needs_grad) {
          Tensor<T> gx(g.shape());
          for (int64_t i = 0; i < g.size(); ++i) gx[i] = g[i] * n.sattr;
          accum(n.in[0], gx);
        }
        break;
      }
      case Op::kMulConst: {
        if (node(n.in[0]).needs_grad) {
          Tensor<T> gx(g.shape());
          for (int64_t i = 0; i < g.size(); ++i) gx[i] = g[i] * n.cattr[i];
          accum(n.in[0], gx);
        }
        break;
      }
      case Op::kReshape: {
        Id x = n.in[0];
        if (node(x).needs_grad) accum(x, g.reshaped(val(x).shape()));
        break;
      }
      case Op::kConcat: {
        int64_t off = 0;
        for (Id p : n.many) {
          const Tensor<T>& v = val(p);
          if (node(p).needs_grad) {
            Tensor<T> gp(v.shape());
            std::copy(g.data() + off, g.data() + off + v.size(), gp.data());
            accum(p, gp);
          }
          off += v.size();
        }
        break;
      }
      case Op::kSegL1W: {
        Id x = n.in[0];
        if (!node(x).needs_grad) break;
        double total = static_cast<double>(n.sattr);
        // Uniform fallback is a flat region: zero gradient.
        if (total <= 0.0) break;
        const int64_t segs = n.iattr;
        const int64_t seg = val(x).size() / segs;
        double dot = 0.0;
        for (int64_t s = 0; s < segs; ++s)
          dot += static_cast<double>(g[s]) * static_cast<double>(n.val[s]);
        Tensor<T> gx(val(x).shape());
        const Tensor<T>& vx = val(x);
        for (int64_t s = 0; s < segs; ++s) {
          double coef = (static_cast<double>(g[s]) - dot) / total;
          for (int64_t i = 0; i < seg; ++i) {
            T v = vx[s * seg + i];
            double sign = v > T(0) ? 1.0 : (v < T(0) ? -1.0 : 0.0);
            gx[s * seg + i] = static_cast<T>(sign * coef);
          }
        }
        accum(x, gx);
        break;
      }
      case Op::kWeightedSum: {
        Id wid = n.in[0];
        const Tensor<T>& w = val(wid);
        if (node(wid).needs_grad) {
          Tensor<T> gw({static_cast<int64_t>(n.many.size())});
          for (size_t j = 0; j < n.many.size(); ++j) {
            const Tensor<T>& m = val(n.many[j]);
            double acc = 0.0;
            for (int64_t i = 0; i < g.size(); ++i)
              acc += static_cast<double>(g[i]) * static_cast<double>(m[i]);
            gw[static_cast<int64_t>(j)] = static_cast<T>(acc);
          }
          accum(wid, gw);
        }
        for (size_t j = 0; j < n.many.size(); ++j) {
          if (!node(n.many[j]).needs_grad) continue;
          Tensor<T> gm(g.shape());
          T wj = w[static_cast<int64_t>(j)];
          for (int64_t i = 0; i < g.size(); ++i) gm[i] = wj * g[i];
          accum(n.many[j], gm);
        }
        break;
      }
      case Op::kSum: {
        Id x = n.in[0];
        if (node(x).needs_grad) {
          Tensor<T> gx = Tensor<T>::full(val(x).shape(), g[0]);
          accum(x, gx);
        }
        break;
      }
      case Op::kSquare: {
        Id x = n.in[0];
        if (node(x).needs_grad) {
          Tensor<T> gx(val(x).shape());
          const Tensor<T>& vx = val(x);
          for (int64_t i = 0; i < gx.size(); ++i)
            gx[i] = T(2) * vx[i] * g[i];
          accum(x, gx);
        }
        break;
      }
      case Op::kSqDiffSumHalf: {
        Id x = n.in[0];
        if (node(x).needs_grad) {
          Tensor<T> gx(val(x).shape());
          const Tensor<T>& vx = val(x);
          for (int64_t i = 0; i < gx.size(); ++i)
            gx[i] = (vx[i] - n.cattr[i]) * g[0];
          accum(x, gx);
        }
        break;
      }
      case Op::kSmoothL1Mean: {
        Id x = n.in[0];
        if (node(x).needs_grad) {
          Tensor<T> gx(val(x).shape());
          const Tensor<T>& vx = val(x);
          T inv = g[0] / static_cast<T>(vx.size());
          for (int64_t i = 0; i < gx.size(); ++i) {
            T d = vx[i] - n.cattr[i];
            T dd = std::abs(d) < T(1) ? d : (d > T(0) ? T(1) : T(-1));
            gx[i] = dd * inv;
          }
          accum(x, gx);
        }
        break;
      }
    }
  }

  void backward_conv(Id, Node& n, const Tensor<T>& g, bool conv2d) {
    Id x = n.in[0], w = n.in[1], b = n.in[2];
    bool nx = node(x).needs_grad, nw = node(w).needs_grad,
         nb = node(b).needs_grad;
    if (!nx && !nw && !nb) return;
    Tensor<T> gx, gw, gb;
    if (nx) gx = Tensor<T>(val(x).shape());
    if (nw) gw = Tensor<T>(val(w).shape());
    if (nb) gb = Tensor<T>(val(b).shape());
    if (conv2d) {
      ops::conv2d_backward(val(x), val(w), g, nx ? &gx : nullptr,
                           nw ? &gw : nullptr, nb ? &gb : nullptr);
    } else if (n.op == Op::kDConv1d) {
      ops::dilated_conv1d_backward(val(x), val(w), g, static_cast<int>(n.iattr),
                                   nx ? &gx : nullptr, nw ? &gw : nullptr,
                                   nb ? &gb : nullptr);
    } else {
      ops::conv1x1_seq_backward(val(x), val(w), g, nx ? &gx : nullptr,
                                nw ? &gw : nullptr, nb ? &gb : nullptr);
    }
    if (nx) accum(x, gx);
    if (nw) accum(w, gw);
    if (nb) accum(b, gb);
  }

  std::vector<Node> nodes_;
};

}  // namespace tancount
