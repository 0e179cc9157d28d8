#pragma once

// Minimal N-dimensional tensor with reverse-mode differentiation.
//
// Every operation allocates a fresh node holding the forward value and,
// when any input requires gradients, a closure that pushes gradients
// back into its parents. backward() runs the closures in reverse
// creation order, which is a valid topological order because inputs
// always exist before their consumers. Gradients accumulate (+=) on
// leaves until zero_grad() is called; interior nodes are zeroed at the
// start of each backward pass.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace glifuse {

enum class Mode { kTrain, kEval };

namespace detail {

inline std::uint64_t next_node_seq() {
  static std::atomic<std::uint64_t> counter{0};
  return counter.fetch_add(1, std::memory_order_relaxed);
}

template <typename T>
struct TensorNode {
  std::vector<std::size_t> shape;
  std::vector<T> value;
  std::vector<T> grad;
  bool requires_grad = false;
  std::uint64_t seq = next_node_seq();
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backward_fn;

  bool is_leaf() const { return parents.empty(); }
  void ensure_grad() {
    if (grad.size() != value.size()) {
      grad.assign(value.size(), T(0));
    }
  }
};

}  // namespace detail

template <typename T>
class Tensor {
public:
  using Node = detail::TensorNode<T>;

  Tensor() = default;

  static Tensor zeros(std::vector<std::size_t> shape) {
    return full(std::move(shape), T(0));
  }

  static Tensor full(std::vector<std::size_t> shape, T value) {
    auto node = std::make_shared<Node>();
    std::size_t n = 1;
    for (std::size_t e : shape) n *= e;
    node->shape = std::move(shape);
    node->value.assign(n, value);
    return Tensor(std::move(node));
  }

  static Tensor scalar(T value) { return full({}, value); }

  static Tensor from(std::vector<std::size_t> shape, std::vector<T> data) {
    std::size_t n = 1;
    for (std::size_t e : shape) n *= e;
    if (data.size() != n) {
      throw std::invalid_argument("Tensor::from: data size " +
                                  std::to_string(data.size()) +
                                  " does not match shape (" +
                                  std::to_string(n) + " elements)");
    }
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->value = std::move(data);
    return Tensor(std::move(node));
  }

  bool defined() const { return node_ != nullptr; }
  const std::vector<std::size_t>& shape() const { return check()->shape; }
  std::size_t rank() const { return check()->shape.size(); }
  std::size_t numel() const { return check()->value.size(); }
  std::size_t extent(std::size_t axis) const { return check()->shape.at(axis); }

  const std::vector<T>& data() const { return check()->value; }
  // Mutable access to the raw values (optimizer updates, grad checks).
  std::vector<T>& mutable_data() { return check()->value; }

  T item() const {
    if (numel() != 1) {
      throw std::invalid_argument("Tensor::item: tensor is not a scalar");
    }
    return check()->value[0];
  }

  std::uint64_t id() const { return check()->seq; }

  void set_requires_grad(bool on) { check()->requires_grad = on; }
  bool requires_grad() const { return check()->requires_grad; }

  const std::vector<T>& grad() const {
    check()->ensure_grad();
    return node_->grad;
  }

  void zero_grad() {
    check();
    node_->grad.assign(node_->value.size(), T(0));
  }

  // Reverse accumulation from a scalar loss. Leaf gradients accumulate
  // across calls; interior gradients are freshly zeroed per call.
  void backward() const {
    if (numel() != 1) {
      throw std::invalid_argument("backward: loss must be a scalar");
    }
    std::vector<Node*> order;
    collect_reachable(order);
    for (Node* n : order) {
      if (n->is_leaf()) {
        if (n->requires_grad) n->ensure_grad();
      } else {
        n->grad.assign(n->value.size(), T(0));
      }
    }
    node_->ensure_grad();
    node_->grad[0] += T(1);
    for (Node* n : order) {
      if (n->backward_fn && n->requires_grad) {
        n->backward_fn(*n);
      }
    }
  }

  std::shared_ptr<Node> node() const { return node_; }
  Node* raw_node() const { return node_.get(); }

  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

private:
  Node* check() const {
    if (!node_) {
      throw std::logic_error("operation on an undefined tensor");
    }
    return node_.get();
  }

  // Iterative DFS; result sorted by descending creation sequence.
  void collect_reachable(std::vector<Node*>& order) const {
    std::vector<Node*> stack{node_.get()};
    std::unordered_set<Node*> visited;
    while (!stack.empty()) {
      Node* n = stack.back();
      stack.pop_back();
      if (!visited.insert(n).second) continue;
      order.push_back(n);
      for (const auto& p : n->parents) {
        stack.push_back(p.get());
      }
    }
    std::sort(order.begin(), order.end(),
              [](const Node* a, const Node* b) { return a->seq > b->seq; });
  }

  std::shared_ptr<Node> node_;
};

namespace detail {

// Builds an op result node. `backward_fn` may be empty for
// non-differentiable ops; it is dropped when no parent needs gradients,
// so pure inference builds no graph.
template <typename T>
Tensor<T> make_op(std::vector<std::size_t> shape, std::vector<T> value,
                  std::vector<Tensor<T>> inputs,
                  std::function<void(TensorNode<T>&)> backward_fn) {
  auto node = std::make_shared<TensorNode<T>>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  bool need_grad = false;
  for (const auto& t : inputs) {
    need_grad = need_grad || t.requires_grad();
  }
  if (need_grad && backward_fn) {
    node->requires_grad = true;
    node->parents.reserve(inputs.size());
    for (auto& t : inputs) {
      node->parents.push_back(t.node());
    }
    node->backward_fn = std::move(backward_fn);
  }
  return Tensor<T>(std::move(node));
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b,
                        const char* op) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch");
  }
}

}  // namespace detail

// ---- elementwise arithmetic ----

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<T> out(a.numel());
  const auto& av = a.data();
  const auto& bv = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return detail::make_op<T>(
      a.shape(), std::move(out), {a, b}, [](detail::TensorNode<T>& self) {
        for (int p = 0; p < 2; ++p) {
          auto& parent = *self.parents[p];
          if (!parent.requires_grad) continue;
          parent.ensure_grad();
          for (std::size_t i = 0; i < self.grad.size(); ++i) {
            parent.grad[i] += self.grad[i];
          }
        }
      });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "sub");
  std::vector<T> out(a.numel());
  const auto& av = a.data();
  const auto& bv = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  return detail::make_op<T>(
      a.shape(), std::move(out), {a, b}, [](detail::TensorNode<T>& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        if (pa.requires_grad) {
          pa.ensure_grad();
          for (std::size_t i = 0; i < self.grad.size(); ++i) {
            pa.grad[i] += self.grad[i];
          }
        }
        if (pb.requires_grad) {
          pb.ensure_grad();
          for (std::size_t i = 0; i < self.grad.size(); ++i) {
            pb.grad[i] -= self.grad[i];
          }
        }
      });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "mul");
  std::vector<T> out(a.numel());
  const auto& av = a.data();
  const auto& bv = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return detail::make_op<T>(
      a.shape(), std::move(out), {a, b}, [](detail::TensorNode<T>& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        if (pa.requires_grad) {
          pa.ensure_grad();
          for (std::size_t i = 0; i < self.grad.size(); ++i) {
            pa.grad[i] += self.grad[i] * pb.value[i];
          }
        }
        if (pb.requires_grad) {
          pb.ensure_grad();
          for (std::size_t i = 0; i < self.grad.size(); ++i) {
            pb.grad[i] += self.grad[i] * pa.value[i];
          }
        }
      });
}

template <typename T>
Tensor<T> divide(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "divide");
  std::vector<T> out(a.numel());
  const auto& av = a.data();
  const auto& bv = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] / bv[i];
  return detail::make_op<T>(
      a.shape(), std::move(out), {a, b}, [](detail::TensorNode<T>& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        if (pa.requires_grad) {
          pa.ensure_grad();
          for (std::size_t i = 0; i < self.grad.size(); ++i) {
            pa.grad[i] += self.grad[i] / pb.value[i];
          }
        }
        if (pb.requires_grad) {
          pb.ensure_grad();
          for (std::size_t i = 0; i < self.grad.size(); ++i) {
            pb.grad[i] -= self.grad[i] * pa.value[i] /
                          (pb.value[i] * pb.value[i]);
          }
        }
      });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  std::vector<T> out(a.numel());
  const auto& av = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * factor;
  return detail::make_op<T>(
      a.shape(), std::move(out), {a},
      [factor](detail::TensorNode<T>& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
          p.grad[i] += self.grad[i] * factor;
        }
      });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T c) {
  std::vector<T> out(a.numel());
  const auto& av = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + c;
  return detail::make_op<T>(
      a.shape(), std::move(out), {a}, [](detail::TensorNode<T>& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
          p.grad[i] += self.grad[i];
        }
      });
}

// ln(max(x, floor)); the gradient is zero inside the clamped region.
template <typename T>
Tensor<T> log_clamped(const Tensor<T>& a, T floor) {
  std::vector<T> out(a.numel());
  const auto& av = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = std::log(std::max(av[i], floor));
  }
  return detail::make_op<T>(
      a.shape(), std::move(out), {a}, [floor](detail::TensorNode<T>& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
          if (p.value[i] > floor) {
            p.grad[i] += self.grad[i] / p.value[i];
          }
        }
      });
}

// x^e for a fixed real exponent. Intended for nonnegative bases.
template <typename T>
Tensor<T> pow_scalar(const Tensor<T>& a, T exponent) {
  std::vector<T> out(a.numel());
  const auto& av = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = exponent == T(0) ? T(1) : std::pow(av[i], exponent);
  }
  return detail::make_op<T>(
      a.shape(), std::move(out), {a},
      [exponent](detail::TensorNode<T>& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad || exponent == T(0)) return;
        p.ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
          const T base = exponent < T(1)
                             ? std::max(p.value[i], std::numeric_limits<T>::min())
                             : p.value[i];
          p.grad[i] += self.grad[i] * exponent * std::pow(base, exponent - T(1));
        }
      });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  std::vector<T> out(a.numel());
  const auto& av = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = av[i] > T(0) ? av[i] : T(0);
  }
  return detail::make_op<T>(
      a.shape(), std::move(out), {a}, [](detail::TensorNode<T>& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
          if (p.value[i] > T(0)) {
            p.grad[i] += self.grad[i];
          }
        }
      });
}

// ---- reductions ----

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  T total = T(0);
  for (T v : a.data()) total += v;
  return detail::make_op<T>(
      {}, {total}, {a}, [](detail::TensorNode<T>& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        const T g = self.grad[0];
        for (std::size_t i = 0; i < p.grad.size(); ++i) {
          p.grad[i] += g;
        }
      });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
  if (a.numel() == 0) {
    throw std::invalid_argument("mean: empty tensor");
  }
  T total = T(0);
  for (T v : a.data()) total += v;
  const T inv = T(1) / static_cast<T>(a.numel());
  return detail::make_op<T>(
      {}, {total * inv}, {a}, [inv](detail::TensorNode<T>& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        const T g = self.grad[0] * inv;
        for (std::size_t i = 0; i < p.grad.size(); ++i) {
          p.grad[i] += g;
        }
      });
}

namespace detail {

template <typename T>
struct AxisSplit {
  std::size_t outer = 1, axis = 1, inner = 1;
};

template <typename T>
AxisSplit<T> split_at(const Tensor<T>& a, std::size_t axis) {
  const auto& shape = a.shape();
  if (axis >= shape.size()) {
    throw std::invalid_argument("axis out of range");
  }
  AxisSplit<T> s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.axis = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

}  // namespace detail

// Reduces every axis except `axis`; output shape {extent(axis)}.
template <typename T>
Tensor<T> sum_except(const Tensor<T>& a, std::size_t axis) {
  const auto s = detail::split_at(a, axis);
  std::vector<T> out(s.axis, T(0));
  const auto& av = a.data();
  std::size_t i = 0;
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t c = 0; c < s.axis; ++c) {
      T acc = T(0);
      for (std::size_t in = 0; in < s.inner; ++in) {
        acc += av[i++];
      }
      out[c] += acc;
    }
  }
  return detail::make_op<T>(
      {s.axis}, std::move(out), {a}, [s](detail::TensorNode<T>& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        std::size_t i = 0;
        for (std::size_t o = 0; o < s.outer; ++o) {
          for (std::size_t c = 0; c < s.axis; ++c) {
            const T g = self.grad[c];
            for (std::size_t in = 0; in < s.inner; ++in) {
              p.grad[i++] += g;
            }
          }
        }
      });
}

// Reduces (and removes) a single axis.
template <typename T>
Tensor<T> sum_along(const Tensor<T>& a, std::size_t axis) {
  const auto s = detail::split_at(a, axis);
  std::vector<std::size_t> out_shape;
  for (std::size_t i = 0; i < a.rank(); ++i) {
    if (i != axis) out_shape.push_back(a.shape()[i]);
  }
  std::vector<T> out(s.outer * s.inner, T(0));
  const auto& av = a.data();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t c = 0; c < s.axis; ++c) {
      const T* src = av.data() + (o * s.axis + c) * s.inner;
      T* dst = out.data() + o * s.inner;
      for (std::size_t in = 0; in < s.inner; ++in) {
        dst[in] += src[in];
      }
    }
  }
  return detail::make_op<T>(
      std::move(out_shape), std::move(out), {a},
      [s](detail::TensorNode<T>& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        for (std::size_t o = 0; o < s.outer; ++o) {
          for (std::size_t c = 0; c < s.axis; ++c) {
            T* dst = p.grad.data() + (o * s.axis + c) * s.inner;
            const T* g = self.grad.data() + o * s.inner;
            for (std::size_t in = 0; in < s.inner; ++in) {
              dst[in] += g[in];
            }
          }
        }
      });
}

// Numerically stable softmax along `axis` (max subtraction).
template <typename T>
Tensor<T> softmax(const Tensor<T>& a, std::size_t axis) {
  const auto s = detail::split_at(a, axis);
  std::vector<T> out(a.numel());
  const auto& av = a.data();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.axis * s.inner + in;
      T hi = av[base];
      for (std::size_t c = 1; c < s.axis; ++c) {
        hi = std::max(hi, av[base + c * s.inner]);
      }
      T denom = T(0);
      for (std::size_t c = 0; c < s.axis; ++c) {
        const T e = std::exp(av[base + c * s.inner] - hi);
        out[base + c * s.inner] = e;
        denom += e;
      }
      for (std::size_t c = 0; c < s.axis; ++c) {
        out[base + c * s.inner] /= denom;
      }
    }
  }
  return detail::make_op<T>(
      a.shape(), std::move(out), {a}, [s](detail::TensorNode<T>& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        for (std::size_t o = 0; o < s.outer; ++o) {
          for (std::size_t in = 0; in < s.inner; ++in) {
            const std::size_t base = o * s.axis * s.inner + in;
            T dot = T(0);
            for (std::size_t c = 0; c < s.axis; ++c) {
              const std::size_t k = base + c * s.inner;
              dot += self.grad[k] * self.value[k];
            }
            for (std::size_t c = 0; c < s.axis; ++c) {
              const std::size_t k = base + c * s.inner;
              p.grad[k] += self.value[k] * (self.grad[k] - dot);
            }
          }
        }
      });
}

}  // namespace glifuse
