#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "salted/error.hpp"
#include "salted/kernels.hpp"
#include "salted/tensor.hpp"

namespace salted {

/// Reverse-mode tape. Each op evaluates eagerly and appends a node holding
/// its value and a closure that pushes the node's gradient to its parents.
/// Nodes are appended in dependency order, so backward is a reverse sweep.
template <typename T>
class Graph {
 public:
  using Var = std::size_t;

  Var input(Tensor<T> value, bool requires_grad = false) {
    return push(std::move(value), requires_grad, nullptr);
  }

  Var parameter(Tensor<T> value) { return push(std::move(value), true, nullptr); }

  const Tensor<T>& value(Var v) const { return nodes_.at(v).value; }

  /// Gradient of the last backward root w.r.t. `v`; zeros if `v` did not
  /// influence the root.
  Tensor<T> grad(Var v) const {
    const Node& node = nodes_.at(v);
    return node.grad ? *node.grad : Tensor<T>(node.value.shape());
  }

  bool requires_grad(Var v) const { return nodes_.at(v).requires_grad; }
  std::size_t size() const noexcept { return nodes_.size(); }
  bool empty() const noexcept { return nodes_.empty(); }
  void clear() { nodes_.clear(); }

  // ------------------------------------------------------------ ops

  Var fully_connected(Var x, Var w, Var b) {
    Tensor<T> y = kernels::fc_forward(value(x), value(w), value(b));
    return push(std::move(y), any_grad({x, w, b}), [x, w, b](Graph& g, Var self) {
      kernels::fc_backward(*g.nodes_[self].grad, g.value(x), g.value(w), g.slot(x), g.slot(w),
                           g.slot(b));
    });
  }

  Var conv2d(Var x, Var w, Var b, kernels::ConvGeometry geo) {
    Tensor<T> y = kernels::conv2d_forward(value(x), value(w), value(b), geo);
    return push(std::move(y), any_grad({x, w, b}), [x, w, b, geo](Graph& g, Var self) {
      kernels::conv2d_backward(*g.nodes_[self].grad, g.value(x), g.value(w), geo, g.slot(x),
                               g.slot(w), g.slot(b));
    });
  }

  Var conv_transpose2d(Var x, Var w, Var b, kernels::ConvGeometry geo) {
    Tensor<T> y = kernels::conv_transpose2d_forward(value(x), value(w), value(b), geo);
    return push(std::move(y), any_grad({x, w, b}), [x, w, b, geo](Graph& g, Var self) {
      kernels::conv_transpose2d_backward(*g.nodes_[self].grad, g.value(x), g.value(w), geo,
                                         g.slot(x), g.slot(w), g.slot(b));
    });
  }

  Var relu(Var x) {
    Tensor<T> y = kernels::relu_forward(value(x));
    return push(std::move(y), any_grad({x}), [x](Graph& g, Var self) {
      if (Tensor<T>* dx = g.slot(x)) kernels::relu_backward(*g.nodes_[self].grad, g.value(x), *dx);
    });
  }

  Var reshape(Var x, Shape shape) {
    Tensor<T> y = value(x).reshaped(std::move(shape));
    return push(std::move(y), any_grad({x}), [x](Graph& g, Var self) {
      if (Tensor<T>* dx = g.slot(x)) {
        const Tensor<T>& dy = *g.nodes_[self].grad;
        for (std::size_t i = 0; i < dy.size(); ++i) (*dx)[i] += dy[i];
      }
    });
  }

  Var concat(Var a, Var b) {
    Tensor<T> y = kernels::concat_axis1(value(a), value(b));
    const std::size_t lead = value(a).dim(1);
    return push(std::move(y), any_grad({a, b}), [a, b, lead](Graph& g, Var self) {
      auto [da, db] = kernels::split_axis1(*g.nodes_[self].grad, lead);
      if (Tensor<T>* ga = g.slot(a)) {
        for (std::size_t i = 0; i < da.size(); ++i) (*ga)[i] += da[i];
      }
      if (Tensor<T>* gb = g.slot(b)) {
        for (std::size_t i = 0; i < db.size(); ++i) (*gb)[i] += db[i];
      }
    });
  }

  Var softmax(Var x) {
    Tensor<T> y = kernels::softmax_rows(value(x));
    return push(std::move(y), any_grad({x}), [x](Graph& g, Var self) {
      if (Tensor<T>* dx = g.slot(x)) {
        kernels::softmax_rows_backward(*g.nodes_[self].grad, g.value(self), *dx);
      }
    });
  }

  /// Scalar mean cross-entropy of row-wise softmax(logits) against class indices.
  Var softmax_cross_entropy(Var logits, std::vector<std::size_t> targets) {
    const Tensor<T>& z = value(logits);
    if (z.rank() != 2 || targets.size() != z.dim(0)) {
      throw Error(Errc::LengthMismatch, "logits " + shape_str(z.shape()) + " vs " +
                                            std::to_string(targets.size()) + " targets");
    }
    for (std::size_t t : targets) {
      if (t >= z.dim(1)) throw Error(Errc::ClassOutOfRange, "target " + std::to_string(t));
    }
    Tensor<T> loss(Shape{});
    loss[0] = kernels::softmax_cross_entropy_rows<T>(z, targets);
    return push(std::move(loss), any_grad({logits}),
                [logits, targets = std::move(targets)](Graph& g, Var self) {
                  if (Tensor<T>* dx = g.slot(logits)) {
                    kernels::softmax_cross_entropy_rows_backward<T>(
                        (*g.nodes_[self].grad)[0], g.value(logits), targets, *dx);
                  }
                });
  }

  /// Same loss against one-hot targets of the logits' shape ([K] or [N, K]).
  Var softmax_cross_entropy(Var logits, const Tensor<T>& onehot) {
    Tensor<T> z = value(logits);
    if (onehot.shape() != z.shape() || z.rank() < 1 || z.rank() > 2) {
      throw Error(Errc::LengthMismatch, "logits " + shape_str(z.shape()) + " vs target " +
                                            shape_str(onehot.shape()));
    }
    const std::size_t k = z.shape().back(), n = z.size() / k;
    std::vector<std::size_t> targets(n);
    for (std::size_t s = 0; s < n; ++s) {
      std::size_t ones = 0;
      for (std::size_t j = 0; j < k; ++j) {
        const T v = onehot[s * k + j];
        if (v == T{1}) {
          ++ones;
          targets[s] = j;
        } else if (v != T{0}) {
          ones = 2;
        }
      }
      if (ones != 1) throw Error(Errc::NotOneHot, "target row " + std::to_string(s) + " is not one-hot");
    }
    if (z.rank() == 1) logits = reshape(logits, {1, k});
    return softmax_cross_entropy(logits, std::move(targets));
  }

  Var sum(Var x) {
    Tensor<T> s(Shape{});
    for (T v : value(x).values()) s[0] += v;
    return push(std::move(s), any_grad({x}), [x](Graph& g, Var self) {
      if (Tensor<T>* dx = g.slot(x)) {
        const T seed = (*g.nodes_[self].grad)[0];
        for (T& v : dx->values()) v += seed;
      }
    });
  }

  /// Scalar sum(x * weights) with constant weights.
  Var weighted_sum(Var x, Tensor<T> weights) {
    if (weights.size() != value(x).size()) {
      throw Error(Errc::ShapeMismatch, "weighted_sum weights " + shape_str(weights.shape()) +
                                           " vs " + shape_str(value(x).shape()));
    }
    Tensor<T> s(Shape{});
    for (std::size_t i = 0; i < weights.size(); ++i) s[0] += weights[i] * value(x)[i];
    return push(std::move(s), any_grad({x}),
                [x, weights = std::move(weights)](Graph& g, Var self) {
                  if (Tensor<T>* dx = g.slot(x)) {
                    const T seed = (*g.nodes_[self].grad)[0];
                    for (std::size_t i = 0; i < weights.size(); ++i) (*dx)[i] += seed * weights[i];
                  }
                });
  }

  // ------------------------------------------------------- backward

  void backward(Var root, const Tensor<T>& seed) {
    if (nodes_.empty()) throw Error(Errc::NoRecordedGraph, "backward called on an empty graph");
    if (root >= nodes_.size()) throw Error(Errc::NoRecordedGraph, "root is not on this graph");
    if (seed.shape() != value(root).shape()) {
      throw Error(Errc::ShapeMismatch, "seed " + shape_str(seed.shape()) + " vs root " +
                                           shape_str(value(root).shape()));
    }
    for (Node& n : nodes_) n.grad.reset();
    nodes_[root].grad = seed;
    for (std::size_t i = root + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.grad && n.backward) n.backward(*this, i);
    }
  }

  /// Backward from a scalar root with seed 1.
  void backward(Var root) {
    if (nodes_.empty()) throw Error(Errc::NoRecordedGraph, "backward called on an empty graph");
    backward(root, Tensor<T>(value(root).shape(), T{1}));
  }

 private:
  using BackwardFn = std::function<void(Graph&, Var)>;

  struct Node {
    Tensor<T> value;
    std::optional<Tensor<T>> grad;
    bool requires_grad = false;
    BackwardFn backward;
  };

  Var push(Tensor<T> value, bool requires_grad, BackwardFn fn) {
    nodes_.push_back(Node{std::move(value), std::nullopt, requires_grad,
                          requires_grad ? std::move(fn) : BackwardFn{}});
    return nodes_.size() - 1;
  }

  bool any_grad(std::initializer_list<Var> vars) const {
    for (Var v : vars) {
      if (nodes_.at(v).requires_grad) return true;
    }
    return false;
  }

  /// Gradient accumulator for `v`, allocated on first use; null when `v`
  /// needs no gradient.
  Tensor<T>* slot(Var v) {
    Node& n = nodes_[v];
    if (!n.requires_grad) return nullptr;
    if (!n.grad) n.grad.emplace(n.value.shape());
    return &*n.grad;
  }

  std::vector<Node> nodes_;
};

}  // namespace salted
