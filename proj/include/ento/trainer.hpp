#pragma once

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "ento/container.hpp"
#include "ento/losses.hpp"
#include "ento/model.hpp"
#include "ento/rng.hpp"
#include "ento/synthetic.hpp"

namespace ento {

struct TrainConfig {
    std::size_t epochs = 100;
    std::size_t batch_size = 4;
    double base_lr = 0.01;
    double backbone_lr_scale = 0.1;
    double momentum = 0.9;
    double weight_decay = 0.0005;
    std::uint64_t seed = 0;
    /// Steps between intermediate checkpoints; 0 disables them.
    std::size_t checkpoint_interval = 0;
    bool augment = true;
    /// Overrides epochs * steps_per_epoch as the schedule length when non-zero.
    std::size_t max_steps = 0;

    void validate() const {
        if (epochs == 0 && max_steps == 0) throw ConfigError("train.epochs must be positive");
        if (batch_size == 0) throw ConfigError("train.batch_size must be positive");
        if (!(base_lr >= 0)) throw ConfigError("train.base_lr must be non-negative");
        if (!(backbone_lr_scale > 0 && backbone_lr_scale <= 1)) throw ConfigError("train.backbone_lr_scale must be in (0,1]");
        if (!(momentum >= 0 && momentum < 1)) throw ConfigError("train.momentum must be in [0,1)");
        if (!(weight_decay >= 0)) throw ConfigError("train.weight_decay must be non-negative");
    }

    std::size_t steps_per_epoch(std::size_t dataset_size) const { return (dataset_size + batch_size - 1) / batch_size; }
    std::size_t total_steps(std::size_t dataset_size) const {
        return max_steps != 0 ? max_steps : epochs * steps_per_epoch(dataset_size);
    }
};

enum class ParamGroup { Decoder, Backbone };

/// Triangular schedule: 0 -> base_lr over [0, total/2], back to 0 at total.
inline double lr_at(std::size_t step, std::size_t total_steps, const TrainConfig& cfg, ParamGroup group) {
    if (total_steps == 0) throw InvalidArgument("lr_at: total_steps must be positive");
    if (step > total_steps) {
        throw InvalidArgument("lr_at: step " + std::to_string(step) + " outside [0, " + std::to_string(total_steps) + "]");
    }
    const double half = static_cast<double>(total_steps) / 2.0;
    const double s = static_cast<double>(step);
    const double frac = s <= half ? s / half : (static_cast<double>(total_steps) - s) / half;
    const double base = group == ParamGroup::Backbone ? cfg.base_lr * cfg.backbone_lr_scale : cfg.base_lr;
    return base * frac;
}

template <class T>
struct OptimizerState {
    std::vector<Tensor<T>> velocity;
    std::size_t step = 0;

    static OptimizerState zeros_like(const ParamStore<T>& store) {
        OptimizerState s;
        for (const auto& e : store.entries()) s.velocity.emplace_back(e.value.shape());
        return s;
    }
};

/// v <- momentum*v + (g + wd*theta); theta <- theta - lr*v, with the
/// backbone group using its own rate.
template <class T>
void sgd_step(ParamStore<T>& params, OptimizerState<T>& state, double lr_decoder, double lr_backbone, double momentum,
              double weight_decay) {
    if (state.velocity.size() != params.size()) throw ShapeError("sgd_step: optimizer state does not match parameters");
    const T mu = static_cast<T>(momentum), wd = static_cast<T>(weight_decay);
    for (std::size_t k = 0; k < params.size(); ++k) {
        auto& e = params.entry(k);
        Tensor<T>& v = state.velocity[k];
        require_same_shape(e.value.shape(), v.shape(), "sgd_step velocity");
        require_same_shape(e.value.shape(), e.grad.shape(), "sgd_step gradient");
        const T lr = static_cast<T>(is_backbone_param(e.name) ? lr_backbone : lr_decoder);
        for (std::size_t i = 0; i < v.numel(); ++i) {
            v[i] = mu * v[i] + (e.grad[i] + wd * e.value[i]);
            e.value[i] -= lr * v[i];
        }
    }
    ++state.step;
}

// ------------------------------------------------------------ augmentation

template <class T>
Tensor<T> flip_horizontal(const Tensor<T>& x) {
    const Shape s = x.shape();
    Tensor<T> out(s);
    for (std::size_t p = 0; p < s.n * s.c; ++p) {
        const T* src = x.ptr() + p * s.plane();
        T* dst = out.ptr() + p * s.plane();
        for (std::size_t y = 0; y < s.h; ++y) {
            for (std::size_t xx = 0; xx < s.w; ++xx) dst[y * s.w + xx] = src[y * s.w + (s.w - 1 - xx)];
        }
    }
    return out;
}

/// Counter-clockwise rotation by quarter_turns * 90 degrees.
template <class T>
Tensor<T> rotate90(const Tensor<T>& x, unsigned quarter_turns) {
    quarter_turns %= 4;
    if (quarter_turns == 0) return x;
    const Shape s = x.shape();
    const bool swap = quarter_turns % 2 == 1;
    const Shape os{s.n, s.c, swap ? s.w : s.h, swap ? s.h : s.w};
    Tensor<T> out(os);
    for (std::size_t p = 0; p < s.n * s.c; ++p) {
        const T* src = x.ptr() + p * s.plane();
        T* dst = out.ptr() + p * os.plane();
        for (std::size_t y = 0; y < s.h; ++y) {
            for (std::size_t xx = 0; xx < s.w; ++xx) {
                std::size_t oy, ox;
                if (quarter_turns == 1) {
                    oy = s.w - 1 - xx;
                    ox = y;
                } else if (quarter_turns == 2) {
                    oy = s.h - 1 - y;
                    ox = s.w - 1 - xx;
                } else {
                    oy = xx;
                    ox = s.h - 1 - y;
                }
                dst[oy * os.w + ox] = src[y * s.w + xx];
            }
        }
    }
    return out;
}

struct AugmentDraw {
    bool flip = false;
    unsigned quarter_turns = 0;
};

/// Non-square inputs only draw 0 or 180 degree turns so shapes are kept.
inline AugmentDraw draw_augment(Rng& rng, bool square) {
    AugmentDraw d;
    d.flip = rng.coin();
    d.quarter_turns = square ? static_cast<unsigned>(rng.below(4)) : 2u * static_cast<unsigned>(rng.below(2));
    return d;
}

template <class T>
Tensor<T> apply_augment(const Tensor<T>& x, const AugmentDraw& d) {
    return rotate90(d.flip ? flip_horizontal(x) : x, d.quarter_turns);
}

template <class T>
std::pair<Tensor<T>, Tensor<T>> augment(const Tensor<T>& image, const Tensor<T>& mask, Rng& rng) {
    if (image.shape().h != mask.shape().h || image.shape().w != mask.shape().w) {
        throw ShapeError("augment: image " + image.shape().str() + " and mask " + mask.shape().str() + " not aligned");
    }
    const AugmentDraw d = draw_augment(rng, image.shape().h == image.shape().w);
    return {apply_augment(image, d), apply_augment(mask, d)};
}

// ------------------------------------------------------------ checkpoints

inline constexpr const char* kStepEntry = "train.step";
inline std::string velocity_entry(const std::string& name) { return "optim." + name; }

inline TensorMap make_checkpoint(const ParamStore<float>& params, const OptimizerState<float>* state = nullptr) {
    TensorMap out;
    for (std::size_t k = 0; k < params.size(); ++k) {
        const auto& e = params.entry(k);
        out.emplace(e.name, e.value);
        if (state != nullptr) out.emplace(velocity_entry(e.name), state->velocity.at(k));
    }
    if (state != nullptr) out.emplace(kStepEntry, Tensor<float>::scalar(static_cast<float>(state->step)));
    return out;
}

/// Loads parameter values (and optimizer state if requested and present).
inline void apply_checkpoint(const TensorMap& ckpt, ParamStore<float>& params, OptimizerState<float>* state = nullptr) {
    for (std::size_t k = 0; k < params.size(); ++k) {
        auto& e = params.entry(k);
        auto it = ckpt.find(e.name);
        if (it == ckpt.end()) throw ShapeError("checkpoint lacks parameter " + e.name);
        require_same_shape(e.value.shape(), it->second.shape(), ("checkpoint entry " + e.name).c_str());
        e.value = it->second;
    }
    if (state == nullptr) return;
    *state = OptimizerState<float>::zeros_like(params);
    auto step = ckpt.find(kStepEntry);
    if (step == ckpt.end()) return;
    state->step = static_cast<std::size_t>(step->second.item());
    for (std::size_t k = 0; k < params.size(); ++k) {
        auto it = ckpt.find(velocity_entry(params.entry(k).name));
        if (it == ckpt.end()) throw ShapeError("checkpoint lacks optimizer state for " + params.entry(k).name);
        require_same_shape(state->velocity[k].shape(), it->second.shape(), "checkpoint velocity");
        state->velocity[k] = it->second;
    }
}

// ------------------------------------------------------------ training loop

struct TraceRecord {
    std::size_t step = 0; ///< 1-based count of completed updates
    double lr = 0;        ///< decoder-group rate used for the update
    std::array<double, 6> components{};
    double total = 0;
};

inline std::string format_number(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

inline std::string format_trace(const TraceRecord& r) {
    std::string s = std::to_string(r.step) + " " + format_number(r.lr);
    for (double c : r.components) s += " " + format_number(c);
    return s + " " + format_number(r.total);
}

inline constexpr const char* kTraceHeader = "step lr e_wbce e_wiou b_wbce b_wiou r_wbce r_wiou total";

template <class T>
Tensor<T> stack_batch(const std::vector<const Tensor<T>*>& parts) {
    if (parts.empty()) throw InvalidArgument("stack_batch: no samples");
    const Shape s0 = parts.front()->shape();
    Tensor<T> out(Shape{s0.n * parts.size(), s0.c, s0.h, s0.w});
    std::size_t off = 0;
    for (const auto* p : parts) {
        require_same_shape(p->shape(), s0, "stack_batch");
        std::copy(p->data().begin(), p->data().end(), out.ptr() + off);
        off += p->numel();
    }
    return out;
}

/// Sample order for one epoch (seeded Fisher-Yates).
inline std::vector<std::size_t> epoch_order(std::uint64_t seed, std::size_t epoch, std::size_t n) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(mix_seed(seed ^ 0x5eed0f0e0c0ull, epoch));
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    return order;
}

struct TrainHooks {
    std::function<void(const TraceRecord&)> on_step;
    std::function<void(const ParamStore<float>&, const OptimizerState<float>&)> on_checkpoint;
};

/// Runs updates from state.step up to min(total_steps, stop_at). Every
/// random draw derives from (seed, epoch) or (seed, step, sample), so a run
/// resumed from a checkpoint replays the same stream.
inline std::vector<TraceRecord> train_loop(const std::vector<Sample>& data, const EntoConfig& mcfg,
                                           const TrainConfig& tcfg, ParamStore<float>& params,
                                           OptimizerState<float>& state, const LossOptions& lopt = {},
                                           std::size_t stop_at = std::numeric_limits<std::size_t>::max(),
                                           const TrainHooks& hooks = {}) {
    if (data.empty()) throw InvalidArgument("train_loop: dataset is empty");
    mcfg.validate();
    tcfg.validate();
    for (const auto& s : data) {
        if (s.image.shape() != Shape{1, 3, mcfg.input_h, mcfg.input_w} ||
            s.mask.shape() != Shape{1, 1, mcfg.input_h, mcfg.input_w}) {
            throw ShapeError("train_loop: sample " + s.id + " does not match input size " +
                             std::to_string(mcfg.input_h) + "x" + std::to_string(mcfg.input_w));
        }
    }
    if (state.velocity.empty()) state = OptimizerState<float>::zeros_like(params);

    const std::size_t per_epoch = tcfg.steps_per_epoch(data.size());
    const std::size_t total = tcfg.total_steps(data.size());
    const std::size_t end = std::min(total, stop_at);
    std::vector<TraceRecord> trace;
    std::vector<std::size_t> order;
    std::size_t order_epoch = std::numeric_limits<std::size_t>::max();

    while (state.step < end) {
        const std::size_t s = state.step;
        const std::size_t epoch = s / per_epoch, pos = s % per_epoch;
        if (epoch != order_epoch) {
            order = epoch_order(tcfg.seed, epoch, data.size());
            order_epoch = epoch;
        }
        std::vector<Tensor<float>> images, masks;
        for (std::size_t j = pos * tcfg.batch_size; j < std::min(data.size(), (pos + 1) * tcfg.batch_size); ++j) {
            const Sample& smp = data[order[j]];
            if (tcfg.augment) {
                Rng rng(mix_seed(mix_seed(tcfg.seed, s), j));
                auto [im, mk] = augment(smp.image, smp.mask, rng);
                images.push_back(std::move(im));
                masks.push_back(std::move(mk));
            } else {
                images.push_back(smp.image);
                masks.push_back(smp.mask);
            }
        }
        std::vector<const Tensor<float>*> ip, mp;
        for (std::size_t j = 0; j < images.size(); ++j) {
            ip.push_back(&images[j]);
            mp.push_back(&masks[j]);
        }

        Tape<float> tape;
        auto fwd = ento_forward(tape, params, mcfg, tape.constant(stack_batch(ip), "image"));
        auto loss = total_loss(fwd.predictions, stack_batch(mp), lopt);
        if (!std::isfinite(loss.total_value())) {
            auto where = tape.first_non_finite();
            throw NonFiniteError("non-finite loss at step " + std::to_string(s + 1) + "; first non-finite tensor: " +
                                 where.value_or("loss"));
        }
        tape.backward(loss.total);
        for (const auto& e : params.entries()) {
            if (!e.grad.all_finite()) {
                throw NonFiniteError("non-finite gradient at step " + std::to_string(s + 1) + " in " + e.name);
            }
        }

        // Offsetting by one keeps both schedule endpoints (rate 0) off the update steps.
        const double lr_dec = lr_at(s + 1, total + 1, tcfg, ParamGroup::Decoder);
        const double lr_bb = lr_at(s + 1, total + 1, tcfg, ParamGroup::Backbone);
        sgd_step(params, state, lr_dec, lr_bb, tcfg.momentum, tcfg.weight_decay);

        TraceRecord rec;
        rec.step = state.step;
        rec.lr = lr_dec;
        const auto comps = loss.components();
        for (std::size_t k = 0; k < 6; ++k) rec.components[k] = comps[k];
        rec.total = loss.total_value();
        trace.push_back(rec);
        if (hooks.on_step) hooks.on_step(rec);
        if (hooks.on_checkpoint && tcfg.checkpoint_interval != 0 && state.step % tcfg.checkpoint_interval == 0) {
            hooks.on_checkpoint(params, state);
        }
    }
    return trace;
}

// -------------------------------------------------------------- inference

/// Sigmoid maps of the three heads, bilinearly upsampled to input size.
struct Probabilities {
    Tensor<float> coarse;
    Tensor<float> base;
    Tensor<float> final;
};

template <class T>
Tensor<T> to_probability(const Var<T>& logits, std::size_t h, std::size_t w) {
    return kernel::sigmoid(kernel::bilinear_resize(logits.value(), h, w));
}

inline Probabilities predict(ParamStore<float>& params, const EntoConfig& cfg, const Tensor<float>& image) {
    Tape<float> tape;
    auto fwd = ento_forward(tape, params, cfg, tape.constant(image, "image"));
    const std::size_t h = image.shape().h, w = image.shape().w;
    return {to_probability(fwd.predictions.coarse, h, w), to_probability(fwd.predictions.base(), h, w),
            to_probability(fwd.predictions.retouch(), h, w)};
}

/// Mean absolute error of the final map over a sample set.
inline double dataset_mae(ParamStore<float>& params, const EntoConfig& cfg, const std::vector<Sample>& data) {
    double total = 0;
    for (const auto& s : data) {
        const Tensor<float> p = predict(params, cfg, s.image).final;
        double e = 0;
        for (std::size_t i = 0; i < p.numel(); ++i) e += std::abs(static_cast<double>(p[i]) - s.mask[i]);
        total += e / static_cast<double>(p.numel());
    }
    return total / static_cast<double>(data.size());
}

} // namespace ento
