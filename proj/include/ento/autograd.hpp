#pragma once

// Reverse-mode differentiation over the kernels in kernel.hpp.
//
// A Tape records one forward pass as a list of nodes. Each node owns its
// output value and a closure that pushes its gradient to its parents.
// Parameter leaves are bound to ParamStore entries; Tape::backward writes
// their gradients back into the store's gradient slots.

#include <cstddef>
#include <functional>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "ento/error.hpp"
#include "ento/kernel.hpp"
#include "ento/param_store.hpp"
#include "ento/tensor.hpp"

namespace ento {

template <class T>
class Tape;

/// Handle to a tape node.
template <class T>
class Var {
public:
    Var() = default;
    Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

    bool valid() const { return tape_ != nullptr; }
    Tape<T>& tape() const { return *tape_; }
    std::size_t id() const { return id_; }
    const Tensor<T>& value() const { return tape_->value(id_); }
    const Shape& shape() const { return value().shape(); }

private:
    Tape<T>* tape_ = nullptr;
    std::size_t id_ = 0;
};

template <class T>
class Tape {
public:
    using BackwardFn = std::function<void(Tape&, std::size_t self)>;

    struct Node {
        Tensor<T> value;
        Tensor<T> grad;
        BackwardFn backward;
        std::string label;
        bool requires_grad = false;
        bool has_grad = false;
    };

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var<T> constant(Tensor<T> value, std::string label = "constant") {
        nodes_.push_back(Node{std::move(value), {}, {}, std::move(label), false, false});
        return Var<T>(this, nodes_.size() - 1);
    }

    /// Leaf bound to a stored parameter. Repeated lookups share one node.
    Var<T> param(ParamStore<T>& store, std::string_view name) {
        if (bound_store_ != nullptr && bound_store_ != &store) {
            throw TapeError("a tape can bind parameters from a single store only");
        }
        bound_store_ = &store;
        const std::size_t index = store.index_of(name);
        if (auto it = param_nodes_.find(index); it != param_nodes_.end()) return Var<T>(this, it->second);
        nodes_.push_back(Node{store.entry(index).value, {}, {}, "param:" + std::string(name), true, false});
        param_nodes_.emplace(index, nodes_.size() - 1);
        return Var<T>(this, nodes_.size() - 1);
    }

    /// Appends an op node. `parents` decide whether the node needs a gradient.
    Var<T> record(Tensor<T> value, std::initializer_list<Var<T>> parents, BackwardFn backward, std::string label) {
        return record(std::move(value), std::vector<Var<T>>(parents), std::move(backward), std::move(label));
    }

    Var<T> record(Tensor<T> value, const std::vector<Var<T>>& parents, BackwardFn backward, std::string label) {
        bool needs = false;
        for (const auto& p : parents) {
            check_owner(p);
            needs = needs || nodes_[p.id()].requires_grad;
        }
        nodes_.push_back(Node{std::move(value), {}, needs ? std::move(backward) : BackwardFn{}, std::move(label),
                              needs, false});
        return Var<T>(this, nodes_.size() - 1);
    }

    const Tensor<T>& value(std::size_t id) const { return nodes_.at(id).value; }
    const Node& node(std::size_t id) const { return nodes_.at(id); }
    std::size_t size() const { return nodes_.size(); }
    bool requires_grad(const Var<T>& v) const { return nodes_.at(v.id()).requires_grad; }

    /// Gradient flowing into node `id` (valid inside backward closures).
    const Tensor<T>& grad(std::size_t id) const { return nodes_.at(id).grad; }

    /// Adds `g` into the gradient of `target`; ignored for constants.
    void accumulate(const Var<T>& target, const Tensor<T>& g) {
        Node& n = nodes_.at(target.id());
        if (!n.requires_grad) return;
        require_same_shape(n.value.shape(), g.shape(), "gradient accumulation");
        if (!n.has_grad) {
            n.grad = g;
            n.has_grad = true;
            return;
        }
        for (std::size_t i = 0; i < g.numel(); ++i) n.grad[i] += g[i];
    }

    void accumulate(const Var<T>& target, Tensor<T>&& g) {
        Node& n = nodes_.at(target.id());
        if (!n.requires_grad) return;
        if (!n.has_grad) {
            require_same_shape(n.value.shape(), g.shape(), "gradient accumulation");
            n.grad = std::move(g);
            n.has_grad = true;
            return;
        }
        accumulate(target, static_cast<const Tensor<T>&>(g));
    }

    /// Reverse pass from a [1,1,1,1] loss. Zeroes the bound store's gradients,
    /// then fills dLoss/dParam for every parameter reached.
    void backward(const Var<T>& loss) {
        if (nodes_.empty()) throw TapeError("backward called on an empty tape");
        if (consumed_) throw TapeError("backward already ran on this tape");
        check_owner(loss);
        if (loss.shape() != Shape{1, 1, 1, 1}) {
            throw TapeError("backward requires a scalar [1,1,1,1] loss, got " + loss.shape().str());
        }
        consumed_ = true;
        if (bound_store_ != nullptr) bound_store_->zero_grad();
        Node& root = nodes_[loss.id()];
        if (!root.requires_grad) return;
        root.grad = Tensor<T>::scalar(T(1));
        root.has_grad = true;
        for (std::size_t id = loss.id() + 1; id-- > 0;) {
            Node& n = nodes_[id];
            if (!n.has_grad || !n.backward) continue;
            n.backward(*this, id);
        }
        for (const auto& [index, id] : param_nodes_) {
            const Node& n = nodes_[id];
            if (n.has_grad) bound_store_->entry(index).grad = n.grad;
        }
    }

    /// Label of the first node (in recording order) holding a NaN/Inf value.
    std::optional<std::string> first_non_finite() const {
        for (std::size_t i = 0; i < nodes_.size(); ++i) {
            if (!nodes_[i].value.all_finite()) return nodes_[i].label + " (node " + std::to_string(i) + ")";
        }
        return std::nullopt;
    }

private:
    void check_owner(const Var<T>& v) const {
        if (!v.valid() || &v.tape() != this || v.id() >= nodes_.size()) {
            throw TapeError("variable does not belong to this tape");
        }
    }

    std::vector<Node> nodes_;
    std::unordered_map<std::size_t, std::size_t> param_nodes_;
    ParamStore<T>* bound_store_ = nullptr;
    bool consumed_ = false;
};

// ------------------------------------------------------------------ ops

template <class T>
Var<T> conv2d(const Var<T>& x, const ConvSpec& spec, const Var<T>& weights, const std::optional<Var<T>>& bias) {
    Tape<T>& t = x.tape();
    Tensor<T> out = kernel::conv2d(x.value(), spec, weights.value(), bias ? &bias->value() : nullptr);
    std::vector<Var<T>> parents{x, weights};
    if (bias) parents.push_back(*bias);
    return t.record(
        std::move(out), parents,
        [x, spec, weights, bias](Tape<T>& tp, std::size_t self) {
            auto g = kernel::conv2d_backward(x.value(), spec, weights.value(), tp.grad(self), tp.requires_grad(x));
            if (tp.requires_grad(x)) tp.accumulate(x, std::move(g.input));
            tp.accumulate(weights, std::move(g.weights));
            if (bias) tp.accumulate(*bias, std::move(g.bias));
        },
        "conv2d");
}

template <class T>
Var<T> bilinear_resize(const Var<T>& x, std::size_t out_h, std::size_t out_w) {
    Tensor<T> out = kernel::bilinear_resize(x.value(), out_h, out_w);
    return x.tape().record(
        std::move(out), {x},
        [x](Tape<T>& tp, std::size_t self) {
            tp.accumulate(x, kernel::bilinear_resize_backward(x.shape(), tp.grad(self)));
        },
        "bilinear_resize");
}

template <class T>
Var<T> global_avg_pool(const Var<T>& x) {
    return x.tape().record(
        kernel::global_avg_pool(x.value()), {x},
        [x](Tape<T>& tp, std::size_t self) {
            tp.accumulate(x, kernel::global_avg_pool_backward(x.shape(), tp.grad(self)));
        },
        "global_avg_pool");
}

template <class T>
Var<T> channel_avg_max(const Var<T>& x) {
    return x.tape().record(
        kernel::channel_avg_max(x.value()), {x},
        [x](Tape<T>& tp, std::size_t self) {
            tp.accumulate(x, kernel::channel_avg_max_backward(x.value(), tp.grad(self)));
        },
        "channel_avg_max");
}

template <class T>
Var<T> window_avg(const Var<T>& x, const kernel::WindowSpec& spec) {
    return x.tape().record(
        kernel::window_avg(x.value(), spec), {x},
        [x, spec](Tape<T>& tp, std::size_t self) {
            tp.accumulate(x, kernel::window_avg_backward(x.shape(), spec, tp.grad(self)));
        },
        "window_avg");
}

template <class T>
Var<T> relu(const Var<T>& x) {
    return x.tape().record(
        kernel::relu(x.value()), {x},
        [x](Tape<T>& tp, std::size_t self) {
            const Tensor<T>& go = tp.grad(self);
            Tensor<T> g(x.shape());
            for (std::size_t i = 0; i < g.numel(); ++i) g[i] = x.value()[i] > 0 ? go[i] : T(0);
            tp.accumulate(x, std::move(g));
        },
        "relu");
}

template <class T>
Var<T> prelu(const Var<T>& x, const Var<T>& slope) {
    return x.tape().record(
        kernel::prelu(x.value(), slope.value()), {x, slope},
        [x, slope](Tape<T>& tp, std::size_t self) {
            const Tensor<T>& go = tp.grad(self);
            const Shape s = x.shape();
            Tensor<T> gx(s);
            Tensor<T> ga(slope.shape());
            for (std::size_t n = 0; n < s.n; ++n) {
                for (std::size_t c = 0; c < s.c; ++c) {
                    const T a = slope.value()[c];
                    const T* xv = x.value().plane(n, c);
                    const T* gv = go.plane(n, c);
                    T* dst = gx.plane(n, c);
                    T acc = 0;
                    for (std::size_t i = 0; i < s.plane(); ++i) {
                        if (xv[i] > 0) {
                            dst[i] = gv[i];
                        } else {
                            dst[i] = a * gv[i];
                            acc += xv[i] * gv[i];
                        }
                    }
                    ga[c] += acc;
                }
            }
            tp.accumulate(x, std::move(gx));
            tp.accumulate(slope, std::move(ga));
        },
        "prelu");
}

template <class T>
Var<T> sigmoid(const Var<T>& x) {
    return x.tape().record(
        kernel::sigmoid(x.value()), {x},
        [x](Tape<T>& tp, std::size_t self) {
            const Tensor<T>& y = tp.value(self);
            const Tensor<T>& go = tp.grad(self);
            Tensor<T> g(y.shape());
            for (std::size_t i = 0; i < g.numel(); ++i) g[i] = go[i] * y[i] * (T(1) - y[i]);
            tp.accumulate(x, std::move(g));
        },
        "sigmoid");
}

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
    return a.tape().record(
        kernel::add(a.value(), b.value()), {a, b},
        [a, b](Tape<T>& tp, std::size_t self) {
            tp.accumulate(a, tp.grad(self));
            tp.accumulate(b, tp.grad(self));
        },
        "add");
}

template <class T>
Var<T> hadamard(const Var<T>& a, const Var<T>& b) {
    return a.tape().record(
        kernel::hadamard(a.value(), b.value()), {a, b},
        [a, b](Tape<T>& tp, std::size_t self) {
            const Tensor<T>& go = tp.grad(self);
            if (tp.requires_grad(a)) tp.accumulate(a, kernel::hadamard(go, b.value()));
            if (tp.requires_grad(b)) tp.accumulate(b, kernel::hadamard(go, a.value()));
        },
        "hadamard");
}

template <class T>
Var<T> channel_scale(const Var<T>& x, const Var<T>& weights) {
    return x.tape().record(
        kernel::channel_scale(x.value(), weights.value()), {x, weights},
        [x, weights](Tape<T>& tp, std::size_t self) {
            const Tensor<T>& go = tp.grad(self);
            const Shape s = x.shape();
            if (tp.requires_grad(x)) tp.accumulate(x, kernel::channel_scale(go, weights.value()));
            Tensor<T> gw(weights.shape());
            for (std::size_t i = 0; i < s.n * s.c; ++i) {
                const T* xv = x.value().ptr() + i * s.plane();
                const T* gv = go.ptr() + i * s.plane();
                T acc = 0;
                for (std::size_t j = 0; j < s.plane(); ++j) acc += xv[j] * gv[j];
                gw[i] = acc;
            }
            tp.accumulate(weights, std::move(gw));
        },
        "channel_scale");
}

template <class T>
Var<T> spatial_scale(const Var<T>& x, const Var<T>& weights) {
    return x.tape().record(
        kernel::spatial_scale(x.value(), weights.value()), {x, weights},
        [x, weights](Tape<T>& tp, std::size_t self) {
            const Tensor<T>& go = tp.grad(self);
            const Shape s = x.shape();
            if (tp.requires_grad(x)) tp.accumulate(x, kernel::spatial_scale(go, weights.value()));
            Tensor<T> gw(weights.shape());
            for (std::size_t n = 0; n < s.n; ++n) {
                T* dst = gw.plane(n, 0);
                for (std::size_t c = 0; c < s.c; ++c) {
                    const T* xv = x.value().plane(n, c);
                    const T* gv = go.plane(n, c);
                    for (std::size_t j = 0; j < s.plane(); ++j) dst[j] += xv[j] * gv[j];
                }
            }
            tp.accumulate(weights, std::move(gw));
        },
        "spatial_scale");
}

template <class T>
Var<T> concat_channels(const std::vector<Var<T>>& parts) {
    if (parts.empty()) throw ShapeError("concat_channels: empty input list");
    std::vector<const Tensor<T>*> values;
    values.reserve(parts.size());
    for (const auto& p : parts) values.push_back(&p.value());
    Tensor<T> out = kernel::concat_channels(values);
    return parts.front().tape().record(
        std::move(out), parts,
        [parts](Tape<T>& tp, std::size_t self) {
            const Tensor<T>& go = tp.grad(self);
            std::size_t c0 = 0;
            for (const auto& p : parts) {
                const std::size_t pc = p.shape().c;
                if (tp.requires_grad(p)) tp.accumulate(p, kernel::slice_channels(go, c0, pc));
                c0 += pc;
            }
        },
        "concat_channels");
}

template <class T>
Var<T> slice_channels(const Var<T>& x, std::size_t begin, std::size_t count) {
    return x.tape().record(
        kernel::slice_channels(x.value(), begin, count), {x},
        [x, begin, count](Tape<T>& tp, std::size_t self) {
            const Tensor<T>& go = tp.grad(self);
            const Shape s = x.shape();
            Tensor<T> g(s);
            for (std::size_t n = 0; n < s.n; ++n) {
                std::copy(go.plane(n, 0), go.plane(n, 0) + count * s.plane(), g.plane(n, begin));
            }
            tp.accumulate(x, std::move(g));
        },
        "slice_channels");
}

/// Sum of all elements as a [1,1,1,1] tensor.
template <class T>
Var<T> sum(const Var<T>& x) {
    T acc = 0;
    for (T v : x.value().data()) acc += v;
    return x.tape().record(
        Tensor<T>::scalar(acc), {x},
        [x](Tape<T>& tp, std::size_t self) { tp.accumulate(x, Tensor<T>(x.shape(), tp.grad(self)[0])); },
        "sum");
}

template <class T>
Var<T> scale(const Var<T>& x, T factor) {
    Tensor<T> out(x.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = x.value()[i] * factor;
    return x.tape().record(
        std::move(out), {x},
        [x, factor](Tape<T>& tp, std::size_t self) {
            const Tensor<T>& go = tp.grad(self);
            Tensor<T> g(go.shape());
            for (std::size_t i = 0; i < g.numel(); ++i) g[i] = go[i] * factor;
            tp.accumulate(x, std::move(g));
        },
        "scale");
}

} // namespace ento
