#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace bevkit {

// Reverse-mode autodiff node. Ops are coarse primitives (conv, scan, warp,
// norm, ...) each carrying a hand-written backward closure; backward() replays
// the tape in reverse topological order. A graph belongs to one logical
// execution context.
template <typename T>
struct TensorNode {
    std::vector<int> shape;
    std::vector<T> data;
    std::vector<T> grad;  // allocated lazily, same length as data
    bool requires_grad = false;
    std::vector<std::shared_ptr<TensorNode<T>>> parents;
    std::function<void(TensorNode<T>&)> backward_fn;

    std::size_t numel() const { return data.size(); }

    T* grad_data() {
        if (grad.size() != data.size()) grad.assign(data.size(), T(0));
        return grad.data();
    }

    T scalar() const {
        if (data.size() != 1) throw std::logic_error("Tensor::scalar: tensor is not scalar");
        return data[0];
    }
};

template <typename T>
using Tensor = std::shared_ptr<TensorNode<T>>;

inline std::size_t shape_numel(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int d : shape) {
        if (d <= 0) throw std::invalid_argument("tensor shape dims must be positive");
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

template <typename T>
Tensor<T> make_tensor(std::vector<int> shape, bool requires_grad = false) {
    auto t = std::make_shared<TensorNode<T>>();
    t->data.assign(shape_numel(shape), T(0));
    t->shape = std::move(shape);
    t->requires_grad = requires_grad;
    return t;
}

template <typename T>
Tensor<T> make_tensor(std::vector<int> shape, std::vector<T> data, bool requires_grad = false) {
    if (shape_numel(shape) != data.size())
        throw std::invalid_argument("make_tensor: data length does not match shape");
    auto t = std::make_shared<TensorNode<T>>();
    t->shape = std::move(shape);
    t->data = std::move(data);
    t->requires_grad = requires_grad;
    return t;
}

template <typename T>
Tensor<T> scalar_tensor(T value) {
    return make_tensor<T>({1}, std::vector<T>{value});
}

namespace detail {
inline thread_local bool g_grad_enabled = true;
}

// Disables tape construction in scope: ops compute values only, keeping
// evaluation forwards free of graph and state storage.
struct NoGradGuard {
    bool prev;
    NoGradGuard() : prev(detail::g_grad_enabled) { detail::g_grad_enabled = false; }
    ~NoGradGuard() { detail::g_grad_enabled = prev; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};

inline bool grad_enabled() { return detail::g_grad_enabled; }

namespace detail {

template <typename T>
Tensor<T> make_op_node(std::vector<int> shape, std::vector<Tensor<T>> parents,
                       std::function<void(TensorNode<T>&)> backward_fn) {
    auto t = std::make_shared<TensorNode<T>>();
    t->data.assign(shape_numel(shape), T(0));
    t->shape = std::move(shape);
    if (g_grad_enabled) {
        for (const auto& p : parents) t->requires_grad = t->requires_grad || p->requires_grad;
    }
    if (t->requires_grad) {
        t->parents = std::move(parents);
        t->backward_fn = std::move(backward_fn);
    }
    return t;
}

}  // namespace detail

// Runs reverse-mode accumulation from a scalar root. Seeds d(root)/d(root)=1
// and replays every reachable node's backward closure exactly once.
template <typename T>
void backward(const Tensor<T>& root) {
    if (root->numel() != 1) throw std::invalid_argument("backward: root must be scalar");
    // iterative topological sort (graphs can be deep)
    std::vector<TensorNode<T>*> order;
    std::unordered_set<TensorNode<T>*> visited;
    std::vector<std::pair<TensorNode<T>*, std::size_t>> stack;
    stack.emplace_back(root.get(), 0);
    visited.insert(root.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            TensorNode<T>* p = node->parents[next++].get();
            if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    root->grad_data()[0] = T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        if ((*it)->backward_fn) (*it)->backward_fn(**it);
    }
}

template <typename T>
void zero_grad(const Tensor<T>& t) {
    std::fill(t->grad.begin(), t->grad.end(), T(0));
}

// --- elementwise primitives ---------------------------------------------------

namespace detail {
template <typename T>
void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
    if (a->shape != b->shape) throw std::invalid_argument(std::string(op) + ": shape mismatch");
}
}  // namespace detail

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    detail::check_same_shape(a, b, "add");
    auto out = detail::make_op_node<T>(a->shape, {a, b}, [a, b](TensorNode<T>& self) {
        if (a->requires_grad) {
            T* ga = a->grad_data();
            for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i];
        }
        if (b->requires_grad) {
            T* gb = b->grad_data();
            for (std::size_t i = 0; i < self.grad.size(); ++i) gb[i] += self.grad[i];
        }
    });
    for (std::size_t i = 0; i < out->data.size(); ++i) out->data[i] = a->data[i] + b->data[i];
    return out;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    detail::check_same_shape(a, b, "sub");
    auto out = detail::make_op_node<T>(a->shape, {a, b}, [a, b](TensorNode<T>& self) {
        if (a->requires_grad) {
            T* ga = a->grad_data();
            for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i];
        }
        if (b->requires_grad) {
            T* gb = b->grad_data();
            for (std::size_t i = 0; i < self.grad.size(); ++i) gb[i] -= self.grad[i];
        }
    });
    for (std::size_t i = 0; i < out->data.size(); ++i) out->data[i] = a->data[i] - b->data[i];
    return out;
}

// Element-wise product (the gating join of the two-branch blocks).
template <typename T>
Tensor<T> elementwise_mul(const Tensor<T>& a, const Tensor<T>& b) {
    detail::check_same_shape(a, b, "elementwise_mul");
    auto out = detail::make_op_node<T>(a->shape, {a, b}, [a, b](TensorNode<T>& self) {
        if (a->requires_grad) {
            T* ga = a->grad_data();
            for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i] * b->data[i];
        }
        if (b->requires_grad) {
            T* gb = b->grad_data();
            for (std::size_t i = 0; i < self.grad.size(); ++i) gb[i] += self.grad[i] * a->data[i];
        }
    });
    for (std::size_t i = 0; i < out->data.size(); ++i) out->data[i] = a->data[i] * b->data[i];
    return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
    auto out = detail::make_op_node<T>(a->shape, {a}, [a, factor](TensorNode<T>& self) {
        T* ga = a->grad_data();
        for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += factor * self.grad[i];
    });
    for (std::size_t i = 0; i < out->data.size(); ++i) out->data[i] = factor * a->data[i];
    return out;
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T value) {
    auto out = detail::make_op_node<T>(a->shape, {a}, [a](TensorNode<T>& self) {
        T* ga = a->grad_data();
        for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i];
    });
    for (std::size_t i = 0; i < out->data.size(); ++i) out->data[i] = a->data[i] + value;
    return out;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
    auto out = detail::make_op_node<T>(a->shape, {a}, [a](TensorNode<T>& self) {
        T* ga = a->grad_data();
        for (std::size_t i = 0; i < self.grad.size(); ++i)
            ga[i] += a->data[i] > T(0) ? self.grad[i] : T(0);
    });
    for (std::size_t i = 0; i < out->data.size(); ++i) out->data[i] = std::max(a->data[i], T(0));
    return out;
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
    auto out = detail::make_op_node<T>(a->shape, {a}, [a](TensorNode<T>& self) {
        T* ga = a->grad_data();
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            const T s = self.data[i];
            ga[i] += self.grad[i] * s * (T(1) - s);
        }
    });
    for (std::size_t i = 0; i < out->data.size(); ++i)
        out->data[i] = T(1) / (T(1) + std::exp(-a->data[i]));
    return out;
}

// x * sigmoid(x)
template <typename T>
Tensor<T> silu(const Tensor<T>& a) {
    auto out = detail::make_op_node<T>(a->shape, {a}, [a](TensorNode<T>& self) {
        T* ga = a->grad_data();
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            const T s = T(1) / (T(1) + std::exp(-a->data[i]));
            ga[i] += self.grad[i] * (s + a->data[i] * s * (T(1) - s));
        }
    });
    for (std::size_t i = 0; i < out->data.size(); ++i) {
        const T s = T(1) / (T(1) + std::exp(-a->data[i]));
        out->data[i] = a->data[i] * s;
    }
    return out;
}

// log(1 + e^x), evaluated stably
template <typename T>
Tensor<T> softplus(const Tensor<T>& a) {
    auto out = detail::make_op_node<T>(a->shape, {a}, [a](TensorNode<T>& self) {
        T* ga = a->grad_data();
        for (std::size_t i = 0; i < self.grad.size(); ++i)
            ga[i] += self.grad[i] / (T(1) + std::exp(-a->data[i]));
    });
    for (std::size_t i = 0; i < out->data.size(); ++i) {
        const T x = a->data[i];
        out->data[i] = x > T(0) ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
    }
    return out;
}

template <typename T>
Tensor<T> exp_t(const Tensor<T>& a) {
    auto out = detail::make_op_node<T>(a->shape, {a}, [a](TensorNode<T>& self) {
        T* ga = a->grad_data();
        for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i] * self.data[i];
    });
    for (std::size_t i = 0; i < out->data.size(); ++i) out->data[i] = std::exp(a->data[i]);
    return out;
}

template <typename T>
Tensor<T> abs_t(const Tensor<T>& a) {
    auto out = detail::make_op_node<T>(a->shape, {a}, [a](TensorNode<T>& self) {
        T* ga = a->grad_data();
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            const T s = a->data[i] > T(0) ? T(1) : (a->data[i] < T(0) ? T(-1) : T(0));
            ga[i] += self.grad[i] * s;
        }
    });
    for (std::size_t i = 0; i < out->data.size(); ++i) out->data[i] = std::abs(a->data[i]);
    return out;
}

template <typename T>
Tensor<T> sum_all(const Tensor<T>& a) {
    auto out = detail::make_op_node<T>({1}, {a}, [a](TensorNode<T>& self) {
        T* ga = a->grad_data();
        const T g = self.grad[0];
        for (std::size_t i = 0; i < a->data.size(); ++i) ga[i] += g;
    });
    T acc = T(0);
    for (T v : a->data) acc += v;
    out->data[0] = acc;
    return out;
}

template <typename T>
Tensor<T> mean_all(const Tensor<T>& a) {
    return scale(sum_all(a), T(1) / static_cast<T>(a->numel()));
}

// out[i] = x[index[i]]; backward scatter-adds. Powers grid permutations
// (augmentation) and scan order expansion/merging.
template <typename T>
Tensor<T> gather(const Tensor<T>& x, std::shared_ptr<const std::vector<std::uint32_t>> index,
                 std::vector<int> out_shape) {
    if (shape_numel(out_shape) != index->size())
        throw std::invalid_argument("gather: index length does not match out_shape");
    auto out = detail::make_op_node<T>(std::move(out_shape), {x}, [x, index](TensorNode<T>& self) {
        T* gx = x->grad_data();
        const auto& idx = *index;
        for (std::size_t i = 0; i < idx.size(); ++i) gx[idx[i]] += self.grad[i];
    });
    const auto& idx = *index;
    for (std::size_t i = 0; i < idx.size(); ++i) out->data[i] = x->data[idx[i]];
    return out;
}

// Concatenation along the leading (channel) axis of same-trailing-shape tensors.
template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_channels: empty input");
    std::vector<int> shape = parts[0]->shape;
    std::size_t plane = shape_numel(shape) / shape[0];
    int channels = 0;
    for (const auto& p : parts) {
        if (p->shape.size() != shape.size() ||
            !std::equal(shape.begin() + 1, shape.end(), p->shape.begin() + 1))
            throw std::invalid_argument("concat_channels: trailing shape mismatch");
        channels += p->shape[0];
    }
    shape[0] = channels;
    std::vector<Tensor<T>> parents(parts.begin(), parts.end());
    auto out = detail::make_op_node<T>(shape, parents, [parts, plane](TensorNode<T>& self) {
        std::size_t off = 0;
        for (const auto& p : parts) {
            const std::size_t n = p->numel();
            if (p->requires_grad) {
                T* gp = p->grad_data();
                for (std::size_t i = 0; i < n; ++i) gp[i] += self.grad[off + i];
            }
            off += n;
        }
    });
    std::size_t off = 0;
    for (const auto& p : parts) {
        std::copy(p->data.begin(), p->data.end(), out->data.begin() + off);
        off += p->numel();
    }
    return out;
}

}  // namespace bevkit
