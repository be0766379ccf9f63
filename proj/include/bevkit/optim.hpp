#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "bevkit/common.hpp"
#include "bevkit/raster.hpp"
#include "bevkit/tensor.hpp"

namespace bevkit {

// Named parameter tensors keyed by layer path. Initialization is a pure
// function of (store seed, path, shape), so creation order never matters.
template <typename T>
struct ParamStore {
    std::uint64_t seed = 0;
    std::map<std::string, Tensor<T>> params;
    std::set<std::string> non_trainable;  // buffers (e.g. norm running stats)

    explicit ParamStore(std::uint64_t s = 0) : seed(s) {}

    Tensor<T> custom(const std::string& path, std::vector<int> shape,
                     const std::function<void(std::mt19937_64&, std::vector<T>&)>& init) {
        auto it = params.find(path);
        if (it != params.end()) {
            if (it->second->shape != shape)
                throw std::logic_error("ParamStore: shape mismatch for existing param " + path);
            return it->second;
        }
        auto t = make_tensor<T>(std::move(shape), true);
        auto rng = make_rng(seed, "param." + path);
        init(rng, t->data);
        params.emplace(path, t);
        return t;
    }

    // U(-s, s) with s = 1/sqrt(fan_in); the default weight init everywhere.
    Tensor<T> weight(const std::string& path, std::vector<int> shape, std::size_t fan_in) {
        const double s = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(1, fan_in)));
        return custom(path, std::move(shape), [s](std::mt19937_64& rng, std::vector<T>& data) {
            std::uniform_real_distribution<double> u(-s, s);
            for (auto& v : data) v = static_cast<T>(u(rng));
        });
    }

    Tensor<T> zeros(const std::string& path, std::vector<int> shape) {
        return custom(path, std::move(shape), [](std::mt19937_64&, std::vector<T>&) {});
    }

    Tensor<T> ones(const std::string& path, std::vector<int> shape) {
        return custom(path, std::move(shape), [](std::mt19937_64&, std::vector<T>& data) {
            std::fill(data.begin(), data.end(), T(1));
        });
    }

    Tensor<T> constant(const std::string& path, std::vector<int> shape, T value) {
        return custom(path, std::move(shape), [value](std::mt19937_64&, std::vector<T>& data) {
            std::fill(data.begin(), data.end(), value);
        });
    }

    // Non-trainable state that still belongs in checkpoints.
    Tensor<T> buffer(const std::string& path, std::vector<int> shape, T value) {
        auto t = constant(path, std::move(shape), value);
        t->requires_grad = false;
        non_trainable.insert(path);
        return t;
    }

    void zero_grads() {
        for (auto& [path, p] : params) std::fill(p->grad.begin(), p->grad.end(), T(0));
    }

    std::vector<Tensor<T>> all() const {
        std::vector<Tensor<T>> out;
        out.reserve(params.size());
        for (const auto& [path, p] : params) out.push_back(p);
        return out;
    }
};

enum class OptRule { sgd_momentum, adamw };
enum class LrSchedule { constant, cosine };

// SGD-with-momentum / AdamW with an optional cosine-annealing schedule:
// lr_t = lr_min + (lr0 - lr_min) * (1 + cos(pi * t / T)) / 2, clamped at T.
template <typename T>
struct Optimizer {
    OptRule rule = OptRule::adamw;
    LrSchedule schedule = LrSchedule::constant;
    double lr0 = 2.5e-4;
    double lr_min = 1e-5;
    int t_max = 500;
    double momentum = 0.9;
    double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
    double weight_decay = 0.01;

    std::int64_t step_count = 0;
    std::map<std::string, std::vector<T>> m1, m2;  // momentum / Adam moments

    double lr_at(std::int64_t t) const {
        if (schedule == LrSchedule::constant) return lr0;
        const double tt = std::min<double>(static_cast<double>(t), static_cast<double>(t_max));
        return lr_min + 0.5 * (lr0 - lr_min) * (1.0 + std::cos(M_PI * tt / t_max));
    }
    double current_lr() const { return lr_at(step_count); }

    void step(ParamStore<T>& store) {
        const double lr = lr_at(step_count);
        for (auto& [path, p] : store.params) {
            if (store.non_trainable.count(path)) continue;
            if (p->grad.size() != p->data.size()) p->grad.assign(p->data.size(), T(0));
            for (T g : p->grad)
                if (!std::isfinite(static_cast<double>(g)))
                    throw std::runtime_error("optimizer_step: non-finite gradient in " + path);
            auto& buf1 = m1[path];
            if (buf1.size() != p->data.size()) buf1.assign(p->data.size(), T(0));
            if (rule == OptRule::sgd_momentum) {
                for (std::size_t i = 0; i < p->data.size(); ++i) {
                    buf1[i] = static_cast<T>(momentum * buf1[i] + p->grad[i]);
                    p->data[i] -= static_cast<T>(lr) * buf1[i];
                }
            } else {
                auto& buf2 = m2[path];
                if (buf2.size() != p->data.size()) buf2.assign(p->data.size(), T(0));
                const double t = static_cast<double>(step_count + 1);
                const double bc1 = 1.0 - std::pow(beta1, t);
                const double bc2 = 1.0 - std::pow(beta2, t);
                for (std::size_t i = 0; i < p->data.size(); ++i) {
                    const double g = static_cast<double>(p->grad[i]);
                    buf1[i] = static_cast<T>(beta1 * buf1[i] + (1.0 - beta1) * g);
                    buf2[i] = static_cast<T>(beta2 * buf2[i] + (1.0 - beta2) * g * g);
                    const double mhat = buf1[i] / bc1;
                    const double vhat = buf2[i] / bc2;
                    p->data[i] -= static_cast<T>(lr * (mhat / (std::sqrt(vhat) + adam_eps) +
                                                       weight_decay * p->data[i]));
                }
            }
        }
        ++step_count;
    }
};

// Central finite differences against the tape, per parameter coordinate.
// f must rebuild its graph from the given leaves on every call. Returns the
// maximum relative error, |ad - fd| / max(|ad|, |fd|, denom_floor); the floor
// absorbs finite-difference noise on true-zero gradients.
template <typename T>
double grad_check(const std::function<Tensor<T>()>& f, const std::vector<Tensor<T>>& params,
                  double eps = 1e-5, int max_coords_per_param = 0, std::uint64_t seed = 0,
                  double denom_floor = 1e-3) {
    for (const auto& p : params) p->grad.assign(p->data.size(), T(0));
    auto root = f();
    backward(root);
    std::vector<std::vector<T>> analytic;
    analytic.reserve(params.size());
    for (const auto& p : params) {
        if (p->grad.size() != p->data.size()) p->grad.assign(p->data.size(), T(0));
        analytic.push_back(p->grad);
    }

    double max_rel = 0.0;
    auto rng = make_rng(seed, "grad_check");
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        auto& p = params[pi];
        std::vector<std::size_t> coords;
        if (max_coords_per_param <= 0 ||
            p->data.size() <= static_cast<std::size_t>(max_coords_per_param)) {
            coords.resize(p->data.size());
            for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
        } else {
            for (int k = 0; k < max_coords_per_param; ++k)
                coords.push_back(rng() % p->data.size());
        }
        for (std::size_t ci : coords) {
            const T orig = p->data[ci];
            p->data[ci] = orig + static_cast<T>(eps);
            const double f_plus = static_cast<double>(f()->scalar());
            p->data[ci] = orig - static_cast<T>(eps);
            const double f_minus = static_cast<double>(f()->scalar());
            p->data[ci] = orig;
            const double fd = (f_plus - f_minus) / (2.0 * eps);
            const double ad = static_cast<double>(analytic[pi][ci]);
            const double rel =
                std::abs(ad - fd) / std::max({std::abs(ad), std::abs(fd), denom_floor});
            max_rel = std::max(max_rel, rel);
        }
    }
    return max_rel;
}

// --- checkpoint format ---------------------------------------------------------
// magic "BKCP", u32 version=1, i64 step, u32 n_params; per param: u16 path
// length, path bytes, u8 ndims, u32 dims, f32 payload; then u8 rule tag and
// the optimizer moment buffers in the same order.

template <typename T>
void save_checkpoint(const ParamStore<T>& store, const Optimizer<T>* opt, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("checkpoint: cannot write " + path);
    out.write("BKCP", 4);
    detail::write_pod<std::uint32_t>(out, 1u);
    detail::write_pod<std::int64_t>(out, opt ? opt->step_count : 0);
    detail::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(store.params.size()));
    auto write_payload = [&](const std::vector<T>& v) {
        for (T x : v) detail::write_pod<float>(out, static_cast<float>(x));
    };
    for (const auto& [name, p] : store.params) {
        detail::write_pod<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        detail::write_pod<std::uint8_t>(out, static_cast<std::uint8_t>(p->shape.size()));
        for (int d : p->shape) detail::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(d));
        write_payload(p->data);
    }
    if (!opt) {
        detail::write_pod<std::uint8_t>(out, 0);
    } else {
        detail::write_pod<std::uint8_t>(out, opt->rule == OptRule::sgd_momentum ? 1 : 2);
        for (const auto& [name, p] : store.params) {
            if (store.non_trainable.count(name)) continue;
            auto it1 = opt->m1.find(name);
            std::vector<T> b1 = it1 != opt->m1.end() ? it1->second : std::vector<T>(p->numel(), T(0));
            write_payload(b1);
            if (opt->rule == OptRule::adamw) {
                auto it2 = opt->m2.find(name);
                std::vector<T> b2 =
                    it2 != opt->m2.end() ? it2->second : std::vector<T>(p->numel(), T(0));
                write_payload(b2);
            }
        }
    }
    if (!out) throw std::runtime_error("checkpoint: write failed for " + path);
}

// Loads parameters (and, when present and requested, optimizer state) into an
// existing store; every stored path must already exist with the same shape.
template <typename T>
void load_checkpoint(ParamStore<T>& store, Optimizer<T>* opt, const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "BKCP", 4) != 0)
        throw std::runtime_error("checkpoint: bad magic in " + path);
    if (detail::read_pod<std::uint32_t>(in) != 1u)
        throw std::runtime_error("checkpoint: unsupported version");
    const std::int64_t step = detail::read_pod<std::int64_t>(in);
    const std::uint32_t n = detail::read_pod<std::uint32_t>(in);
    auto read_payload = [&](std::size_t count) {
        std::vector<T> v(count);
        for (auto& x : v) x = static_cast<T>(detail::read_pod<float>(in));
        return v;
    };
    std::vector<std::string> order;
    for (std::uint32_t k = 0; k < n; ++k) {
        const auto len = detail::read_pod<std::uint16_t>(in);
        std::string name(len, '\0');
        in.read(name.data(), len);
        const auto nd = detail::read_pod<std::uint8_t>(in);
        std::vector<int> shape(nd);
        for (auto& d : shape) d = static_cast<int>(detail::read_pod<std::uint32_t>(in));
        auto it = store.params.find(name);
        if (it == store.params.end())
            throw std::runtime_error("checkpoint: unknown parameter " + name);
        if (it->second->shape != shape)
            throw std::runtime_error("checkpoint: shape mismatch for " + name);
        it->second->data = read_payload(it->second->numel());
        order.push_back(name);
    }
    const auto rule_tag = detail::read_pod<std::uint8_t>(in);
    if (opt) {
        opt->step_count = step;
        if (rule_tag != 0) {
            opt->rule = rule_tag == 1 ? OptRule::sgd_momentum : OptRule::adamw;
            for (const auto& name : order) {
                if (store.non_trainable.count(name)) continue;
                const std::size_t count = store.params.at(name)->numel();
                opt->m1[name] = read_payload(count);
                if (rule_tag == 2) opt->m2[name] = read_payload(count);
            }
        }
    }
}

}  // namespace bevkit
