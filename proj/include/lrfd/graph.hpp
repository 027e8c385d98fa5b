#pragma once

#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "lrfd/tensor.hpp"

namespace lrfd {

// ---------------------------------------------------------------------------
// Reverse-mode autodiff over a define-by-run tape.
//
// Every operation below allocates a Node whose backward closure accumulates
// into its parents' grads. If no input requires a gradient the op returns a
// detached constant instead, so frozen networks run tape-free.
// ---------------------------------------------------------------------------

template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;  // allocated on demand, same shape as value
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node<T>>> parents;
  std::function<void(Node<T>&)> backward_fn;

  void ensure_grad() {
    if (grad.size() != value.size()) grad = Tensor<T>(value.shape());
  }
  void zero_grad() {
    if (grad.size() == value.size()) grad.fill(T(0));
  }
};

template <typename T>
using NodePtr = std::shared_ptr<Node<T>>;

template <typename T>
class Var {
public:
  Var() = default;
  explicit Var(NodePtr<T> n) : node_(std::move(n)) {}

  static Var leaf(Tensor<T> value, bool requires_grad = false) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    n->requires_grad = requires_grad;
    if (requires_grad) n->ensure_grad();
    return Var(std::move(n));
  }

  static Var constant(Tensor<T> value) { return leaf(std::move(value), false); }

  bool defined() const { return node_ != nullptr; }
  const Tensor<T>& value() const { return node_->value; }
  Tensor<T>& value() { return node_->value; }
  Tensor<T>& grad() { node_->ensure_grad(); return node_->grad; }
  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool rg) {
    node_->requires_grad = rg;
    if (rg) node_->ensure_grad();
  }
  const NodePtr<T>& node() const { return node_; }

  T scalar_value() const {
    require(node_->value.size() == 1, "scalar_value on non-scalar ", shape_str(node_->value));
    return node_->value[0];
  }

private:
  NodePtr<T> node_;
};

namespace detail {

template <typename T>
bool any_requires(std::initializer_list<const Var<T>*> vars) {
  for (const Var<T>* v : vars)
    if (v->defined() && v->requires_grad()) return true;
  return false;
}

template <typename T>
Var<T> make_op(Tensor<T> value, std::vector<NodePtr<T>> parents,
               std::function<void(Node<T>&)> backward) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  n->requires_grad = true;
  n->parents = std::move(parents);
  n->backward_fn = std::move(backward);
  return Var<T>(std::move(n));
}

}  // namespace detail

// Topological reverse sweep from a scalar root.
template <typename T>
void backward(const Var<T>& root) {
  require(root.defined() && root.requires_grad(), "backward on detached value");
  require(root.value().size() == 1, "backward root must be scalar");

  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  // Iterative DFS; visitation order is construction order, so gradient
  // accumulation order is deterministic.
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<T>* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (Node<T>* n : order)
    if (n != root.node().get()) n->zero_grad();
  root.node()->ensure_grad();
  root.node()->grad[0] = T(1);

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backward_fn) n->backward_fn(*n);
  }
}

template <typename T>
Var<T> detach(const Var<T>& x) {
  return Var<T>::constant(x.value());
}

// ---------------------------------------------------------------------------
// Elementwise and reduction ops.
// ---------------------------------------------------------------------------

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require(a.value().same_shape(b.value()), "add shape mismatch ",
          shape_str(a.value()), " vs ", shape_str(b.value()));
  Tensor<T> out(a.value().shape());
  const std::size_t n = out.size();
  for (std::size_t i = 0; i < n; ++i) out[i] = a.value()[i] + b.value()[i];
  if (!detail::any_requires<T>({&a, &b})) return Var<T>::constant(std::move(out));
  return detail::make_op<T>(std::move(out), {a.node(), b.node()}, [](Node<T>& self) {
    for (auto& p : self.parents) {
      if (!p->requires_grad) continue;
      p->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i];
    }
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  require(a.value().same_shape(b.value()), "sub shape mismatch ",
          shape_str(a.value()), " vs ", shape_str(b.value()));
  Tensor<T> out(a.value().shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] - b.value()[i];
  if (!detail::any_requires<T>({&a, &b})) return Var<T>::constant(std::move(out));
  return detail::make_op<T>(std::move(out), {a.node(), b.node()}, [](Node<T>& self) {
    auto& pa = self.parents[0];
    auto& pb = self.parents[1];
    if (pa->requires_grad) {
      pa->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i];
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) pb->grad[i] -= self.grad[i];
    }
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  require(a.value().same_shape(b.value()), "mul shape mismatch ",
          shape_str(a.value()), " vs ", shape_str(b.value()));
  Tensor<T> out(a.value().shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
  if (!detail::any_requires<T>({&a, &b})) return Var<T>::constant(std::move(out));
  return detail::make_op<T>(std::move(out), {a.node(), b.node()}, [](Node<T>& self) {
    auto& pa = self.parents[0];
    auto& pb = self.parents[1];
    if (pa->requires_grad) {
      pa->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        pa->grad[i] += self.grad[i] * pb->value[i];
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        pb->grad[i] += self.grad[i] * pa->value[i];
    }
  });
}

// scale*x + shift, elementwise with scalar coefficients.
template <typename T>
Var<T> affine(const Var<T>& x, T scale, T shift) {
  Tensor<T> out(x.value().shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = scale * x.value()[i] + shift;
  if (!x.requires_grad()) return Var<T>::constant(std::move(out));
  return detail::make_op<T>(std::move(out), {x.node()}, [scale](Node<T>& self) {
    auto& p = self.parents[0];
    p->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += scale * self.grad[i];
  });
}

template <typename T>
Var<T> square(const Var<T>& x) {
  Tensor<T> out(x.value().shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.value()[i] * x.value()[i];
  if (!x.requires_grad()) return Var<T>::constant(std::move(out));
  return detail::make_op<T>(std::move(out), {x.node()}, [](Node<T>& self) {
    auto& p = self.parents[0];
    p->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      p->grad[i] += T(2) * p->value[i] * self.grad[i];
  });
}

template <typename T>
Var<T> relu(const Var<T>& x) {
  Tensor<T> out(x.value().shape());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = x.value()[i] > T(0) ? x.value()[i] : T(0);
  if (!x.requires_grad()) return Var<T>::constant(std::move(out));
  return detail::make_op<T>(std::move(out), {x.node()}, [](Node<T>& self) {
    auto& p = self.parents[0];
    p->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      if (p->value[i] > T(0)) p->grad[i] += self.grad[i];
  });
}

template <typename T>
Var<T> tanh_op(const Var<T>& x) {
  Tensor<T> out(x.value().shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(x.value()[i]);
  if (!x.requires_grad()) return Var<T>::constant(std::move(out));
  return detail::make_op<T>(std::move(out), {x.node()}, [](Node<T>& self) {
    auto& p = self.parents[0];
    p->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const T y = self.value[i];
      p->grad[i] += (T(1) - y * y) * self.grad[i];
    }
  });
}

template <typename T>
Var<T> sigmoid(const Var<T>& x) {
  Tensor<T> out(x.value().shape());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = T(1) / (T(1) + std::exp(-x.value()[i]));
  if (!x.requires_grad()) return Var<T>::constant(std::move(out));
  return detail::make_op<T>(std::move(out), {x.node()}, [](Node<T>& self) {
    auto& p = self.parents[0];
    p->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const T y = self.value[i];
      p->grad[i] += y * (T(1) - y) * self.grad[i];
    }
  });
}

// c * sum(x) as a scalar node. mean_all() picks c = 1/numel.
template <typename T>
Var<T> sum_scaled(const Var<T>& x, T c) {
  T acc = T(0);
  for (std::size_t i = 0; i < x.value().size(); ++i) acc += x.value()[i];
  Tensor<T> out = Tensor<T>::scalar(c * acc);
  if (!x.requires_grad()) return Var<T>::constant(std::move(out));
  return detail::make_op<T>(std::move(out), {x.node()}, [c](Node<T>& self) {
    auto& p = self.parents[0];
    p->ensure_grad();
    const T g = c * self.grad[0];
    for (std::size_t i = 0; i < p->grad.size(); ++i) p->grad[i] += g;
  });
}

template <typename T>
Var<T> mean_all(const Var<T>& x) {
  return sum_scaled(x, T(1) / T(x.value().size()));
}

template <typename T>
Var<T> reshape(const Var<T>& x, std::vector<int> new_shape) {
  Tensor<T> out = x.value().reshaped(new_shape);
  if (!x.requires_grad()) return Var<T>::constant(std::move(out));
  return detail::make_op<T>(std::move(out), {x.node()}, [](Node<T>& self) {
    auto& p = self.parents[0];
    p->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i];
  });
}

// Concatenate [B,C,H,W] tensors along the channel axis.
template <typename T>
Var<T> concat_channels(const std::vector<Var<T>>& xs) {
  require(!xs.empty(), "concat_channels needs at least one input");
  const auto& s0 = xs[0].value().shape();
  require(s0.size() == 4, "concat_channels wants 4-d inputs, got ", shape_str(s0));
  int c_total = 0;
  for (const auto& x : xs) {
    const auto& s = x.value().shape();
    require(s.size() == 4 && s[0] == s0[0] && s[2] == s0[2] && s[3] == s0[3],
            "concat_channels spatial/batch mismatch ", shape_str(s), " vs ", shape_str(s0));
    c_total += s[1];
  }
  const int B = s0[0], H = s0[2], W = s0[3];
  const std::size_t plane = std::size_t(H) * W;
  Tensor<T> out({B, c_total, H, W});
  bool needs = false;
  std::vector<NodePtr<T>> parents;
  parents.reserve(xs.size());
  for (const auto& x : xs) {
    parents.push_back(x.node());
    needs = needs || x.requires_grad();
  }
  for (int b = 0; b < B; ++b) {
    std::size_t off = 0;
    for (const auto& x : xs) {
      const int c = x.value().dim(1);
      const T* src = x.value().data() + std::size_t(b) * c * plane;
      T* dst = out.data() + (std::size_t(b) * c_total) * plane + off;
      std::copy(src, src + std::size_t(c) * plane, dst);
      off += std::size_t(c) * plane;
    }
  }
  if (!needs) return Var<T>::constant(std::move(out));
  return detail::make_op<T>(std::move(out), std::move(parents), [B, c_total, plane](Node<T>& self) {
    for (int b = 0; b < B; ++b) {
      std::size_t off = 0;
      for (auto& p : self.parents) {
        const int c = p->value.dim(1);
        const T* g = self.grad.data() + (std::size_t(b) * c_total) * plane + off;
        if (p->requires_grad) {
          p->ensure_grad();
          T* dst = p->grad.data() + std::size_t(b) * c * plane;
          for (std::size_t i = 0; i < std::size_t(c) * plane; ++i) dst[i] += g[i];
        }
        off += std::size_t(c) * plane;
      }
    }
  });
}

}  // namespace lrfd
