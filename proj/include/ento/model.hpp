#pragma once

// Enrich -> Base -> Retouch decoding pipeline over a small strided-conv encoder.
//
// Level i (1..L) lives at input/2^(i+1). All decoder maps are logits;
// sigmoid is applied only by losses, metrics and export.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ento/autograd.hpp"
#include "ento/error.hpp"
#include "ento/param_store.hpp"

namespace ento {

struct EntoConfig {
    std::size_t levels = 4;
    std::size_t channels = 64;
    std::size_t cabs_per_level = 6;
    std::size_t sabs_per_level = 6;
    std::vector<std::size_t> group_sizes{1, 8, 16, 32};
    std::size_t input_h = 64;
    std::size_t input_w = 64;
    /// Stage-1 width of the toy encoder; stage i has base * 2^(i-1) channels.
    std::size_t encoder_base_channels = 16;
    std::size_t cab_reduction = 16;
    /// Ablation switches. With Enrich off the base decoder reads f'_i directly
    /// and the coarse head sits on f'_1; with Retouch off the final map is Y^(B).
    bool use_enrich = true;
    bool use_retouch = true;

    std::size_t level_h(std::size_t level) const { return input_h >> (level + 1); }
    std::size_t level_w(std::size_t level) const { return input_w >> (level + 1); }
    std::size_t native_channels(std::size_t level) const { return encoder_base_channels << (level - 1); }

    void validate() const {
        if (levels < 2) throw ConfigError("levels must be at least 2");
        if (channels == 0 || channels % 32 != 0) throw ConfigError("channels must be a positive multiple of 32");
        if (cabs_per_level < 1) throw ConfigError("cabs_per_level must be at least 1");
        if (sabs_per_level < 1) throw ConfigError("sabs_per_level must be at least 1");
        if (group_sizes.empty()) throw ConfigError("group_sizes must not be empty");
        for (std::size_t s : group_sizes) {
            if (s == 0 || channels % s != 0) {
                throw ConfigError("channels (" + std::to_string(channels) + ") must be divisible by group size " +
                                  std::to_string(s));
            }
        }
        if (cab_reduction == 0 || channels % cab_reduction != 0) {
            throw ConfigError("channels must be divisible by cab_reduction");
        }
        if (encoder_base_channels == 0) throw ConfigError("encoder_base_channels must be positive");
        const std::size_t factor = std::size_t{1} << (levels + 1);
        if (input_h == 0 || input_w == 0 || input_h % factor != 0 || input_w % factor != 0) {
            throw ConfigError("input size " + std::to_string(input_h) + "x" + std::to_string(input_w) +
                              " must be divisible by 2^(levels+1) = " + std::to_string(factor));
        }
    }
};

// ------------------------------------------------------------ registration

namespace detail {

inline std::string level_name(const std::string& prefix, std::size_t level) {
    return prefix + ".level" + std::to_string(level);
}

} // namespace detail

inline ConvSpec conv_spec(std::size_t k, std::size_t in, std::size_t out, std::size_t stride = 1) {
    return ConvSpec{k, in, out, stride, true};
}

/// Registers `name.weight` and `name.bias`. Map-producing heads pass
/// zero_bias so their biases start at 0.
template <class T>
void register_conv(ParamStore<T>& store, const std::string& name, const ConvSpec& spec, bool zero_bias = false) {
    const std::size_t fan_in = spec.in_channels * spec.kernel * spec.kernel;
    store.add(name + ".weight", spec.weight_shape(), InitSpec::fan_in_uniform(fan_in));
    if (spec.has_bias) {
        store.add(name + ".bias", spec.bias_shape(),
                  zero_bias ? InitSpec::constant(0.0) : InitSpec::fan_in_uniform(fan_in));
    }
}

template <class T>
void register_prelu(ParamStore<T>& store, const std::string& name, std::size_t channels) {
    store.add(name, Shape{1, channels, 1, 1}, InitSpec::constant(0.25));
}

template <class T>
void register_cab(ParamStore<T>& store, const std::string& prefix, std::size_t c, std::size_t reduction) {
    register_conv(store, prefix + ".conv_a", conv_spec(3, c, c));
    register_prelu(store, prefix + ".prelu", c);
    register_conv(store, prefix + ".conv_b", conv_spec(3, c, c));
    register_conv(store, prefix + ".squeeze", conv_spec(1, c, c / reduction));
    register_conv(store, prefix + ".excite", conv_spec(1, c / reduction, c));
}

template <class T>
void register_ga(ParamStore<T>& store, const std::string& prefix, std::size_t c, std::size_t groups) {
    register_conv(store, prefix + ".feat", conv_spec(3, c + groups, c));
    register_conv(store, prefix + ".guide", conv_spec(3, c, 1), true);
}

template <class T>
void register_sab(ParamStore<T>& store, const std::string& prefix, std::size_t c) {
    register_conv(store, prefix + ".conv_a", conv_spec(3, c, c));
    register_prelu(store, prefix + ".prelu_a", c);
    register_conv(store, prefix + ".conv_b", conv_spec(3, c, c));
    register_conv(store, prefix + ".attn", conv_spec(7, 2, 1));
    register_conv(store, prefix + ".out_a", conv_spec(3, c, c));
    register_prelu(store, prefix + ".prelu_b", c);
    register_conv(store, prefix + ".out_b", conv_spec(3, c, 1), true);
}

inline std::string cab_prefix(std::size_t level, std::size_t k) {
    return "enrich.level" + std::to_string(level) + ".cab" + std::to_string(k);
}
inline std::string ga_prefix(std::size_t level, std::size_t n) {
    return "base.level" + std::to_string(level) + ".ga" + std::to_string(n);
}
inline std::string sab_prefix(std::size_t level, std::size_t k) {
    return "retouch.level" + std::to_string(level) + ".sab" + std::to_string(k);
}
inline std::string encoder_stage_name(std::size_t stage) {
    return stage == 0 ? std::string("encoder.stem") : "encoder.stage" + std::to_string(stage);
}

/// Registers every parameter of the configured network, in forward order.
template <class T>
void register_ento(ParamStore<T>& store, const EntoConfig& cfg) {
    cfg.validate();
    const std::size_t c = cfg.channels, L = cfg.levels;
    register_conv(store, encoder_stage_name(0), conv_spec(3, 3, cfg.native_channels(1), 2));
    for (std::size_t i = 1; i <= L; ++i) {
        const std::size_t in = i == 1 ? cfg.native_channels(1) : cfg.native_channels(i - 1);
        register_conv(store, encoder_stage_name(i), conv_spec(3, in, cfg.native_channels(i), 2));
    }
    for (std::size_t i = 1; i <= L; ++i) {
        register_conv(store, detail::level_name("equalize", i), conv_spec(3, cfg.native_channels(i), c));
    }
    if (cfg.use_enrich) {
        for (std::size_t i = L; i >= 1; --i) {
            for (std::size_t k = 1; k <= cfg.cabs_per_level; ++k) register_cab(store, cab_prefix(i, k), c, cfg.cab_reduction);
        }
    }
    register_conv(store, "coarse_head", conv_spec(3, c, 1), true);
    if (cfg.use_enrich) {
        for (std::size_t i = 1; i <= L; ++i) {
            const std::size_t width = (i == 1 || i == L) ? 2 * c : 3 * c;
            register_conv(store, detail::level_name("enrich.fuse", i), conv_spec(3, width, c));
        }
    }
    for (std::size_t i = L; i >= 1; --i) {
        for (std::size_t n = 0; n < cfg.group_sizes.size(); ++n) register_ga(store, ga_prefix(i, n), c, cfg.group_sizes[n]);
    }
    if (cfg.use_retouch) {
        for (std::size_t i = L; i >= 1; --i) {
            for (std::size_t k = 1; k <= cfg.sabs_per_level; ++k) register_sab(store, sab_prefix(i, k), c);
        }
    }
}

template <class T>
ParamStore<T> make_ento_params(const EntoConfig& cfg, std::uint64_t seed) {
    ParamStore<T> store(seed);
    register_ento(store, cfg);
    return store;
}

/// Sets every convolution weight and bias to zero (PReLU slopes untouched).
template <class T>
void zero_convolutions(ParamStore<T>& store) {
    for (auto& e : store.entries()) {
        const auto& n = e.name;
        const bool is_conv = n.size() > 7 && (n.ends_with(".weight") || n.ends_with(".bias"));
        if (is_conv) e.value.fill(T(0));
    }
}

enum class ParamScope { All, DecoderOnly };

/// Element count of learnable tensors; DecoderOnly excludes the toy encoder.
template <class T>
std::size_t param_count(const ParamStore<T>& store, ParamScope scope) {
    if (scope == ParamScope::All) return store.element_count();
    return store.element_count([](const std::string& name) { return !name.starts_with("encoder."); });
}

inline bool is_backbone_param(const std::string& name) { return name.starts_with("encoder."); }

// ------------------------------------------------------------------ blocks

template <class T>
Var<T> conv_layer(Tape<T>& tape, ParamStore<T>& store, const std::string& name, const Var<T>& x, std::size_t kernel,
                  std::size_t out_channels, std::size_t stride = 1) {
    const ConvSpec spec{kernel, x.shape().c, out_channels, stride, true};
    return conv2d(x, spec, tape.param(store, name + ".weight"), std::optional<Var<T>>(tape.param(store, name + ".bias")));
}

template <class T>
struct CabOutput {
    Var<T> out;
    Var<T> attention; ///< channel weights [N,C,1,1]
};

/// One channel attention block. `g_next_up` is the (already resized)
/// cross-level addend; absent means zero.
template <class T>
CabOutput<T> cab_forward(Tape<T>& tape, ParamStore<T>& store, const std::string& prefix, const Var<T>& f_prime,
                         const std::optional<Var<T>>& g_next_up) {
    Var<T> x = f_prime;
    if (g_next_up) {
        require_same_shape(f_prime.shape(), g_next_up->shape(), "cab_forward");
        x = add(f_prime, *g_next_up);
    }
    const std::size_t c = x.shape().c;
    Var<T> t = conv_layer(tape, store, prefix + ".conv_a", x, 3, c);
    t = prelu(t, tape.param(store, prefix + ".prelu"));
    t = conv_layer(tape, store, prefix + ".conv_b", t, 3, c);
    const std::size_t reduced = store.value(prefix + ".squeeze.weight").shape().n;
    Var<T> w = conv_layer(tape, store, prefix + ".squeeze", global_avg_pool(t), 1, reduced);
    w = conv_layer(tape, store, prefix + ".excite", relu(w), 1, c);
    w = sigmoid(w);
    return {add(channel_scale(t, w), x), w};
}

template <class T>
struct GaOutput {
    Var<T> features;
    Var<T> guidance;
};

/// Builds Cat[g_1, p, g_2, p, ..., g_s, p] from `s` equal channel groups.
template <class T>
Var<T> interleave_guidance(const Var<T>& g, const Var<T>& p, std::size_t groups) {
    const std::size_t c = g.shape().c;
    if (groups == 0 || c % groups != 0) {
        throw ShapeError("group attention: " + std::to_string(c) + " channels not divisible into " +
                         std::to_string(groups) + " groups");
    }
    if (p.shape() != Shape{g.shape().n, 1, g.shape().h, g.shape().w}) {
        throw ShapeError("group attention: guidance " + p.shape().str() + " must be single-channel matching " +
                         g.shape().str());
    }
    const std::size_t chunk = c / groups;
    std::vector<Var<T>> parts;
    parts.reserve(2 * groups);
    for (std::size_t j = 0; j < groups; ++j) {
        parts.push_back(groups == 1 ? g : slice_channels(g, j * chunk, chunk));
        parts.push_back(p);
    }
    return concat_channels(parts);
}

template <class T>
GaOutput<T> ga_forward(Tape<T>& tape, ParamStore<T>& store, const std::string& prefix, const Var<T>& g,
                       const Var<T>& p, std::size_t groups) {
    Var<T> cat = interleave_guidance(g, p, groups);
    Var<T> g_out = add(g, relu(conv_layer(tape, store, prefix + ".feat", cat, 3, g.shape().c)));
    Var<T> p_out = add(p, conv_layer(tape, store, prefix + ".guide", g_out, 3, 1));
    return {g_out, p_out};
}

template <class T>
struct SabOutput {
    Var<T> map;
    Var<T> attention; ///< spatial weights [N,1,h,w]
};

template <class T>
SabOutput<T> sab_forward(Tape<T>& tape, ParamStore<T>& store, const std::string& prefix, const Var<T>& h,
                         const Var<T>& y_prev) {
    const Shape hs = h.shape();
    if (y_prev.shape() != Shape{hs.n, 1, hs.h, hs.w}) {
        throw ShapeError("sab_forward: previous map " + y_prev.shape().str() + " must be [N,1,h,w] for features " +
                         hs.str());
    }
    Var<T> t = conv_layer(tape, store, prefix + ".conv_a", h, 3, hs.c);
    t = prelu(t, tape.param(store, prefix + ".prelu_a"));
    t = conv_layer(tape, store, prefix + ".conv_b", t, 3, hs.c);
    Var<T> w = sigmoid(conv_layer(tape, store, prefix + ".attn", channel_avg_max(t), 7, 1));
    Var<T> r = conv_layer(tape, store, prefix + ".out_a", spatial_scale(t, w), 3, hs.c);
    r = prelu(r, tape.param(store, prefix + ".prelu_b"));
    r = conv_layer(tape, store, prefix + ".out_b", r, 3, 1);
    return {add(r, y_prev), w};
}

// ---------------------------------------------------------------- stages

/// Index 0 holds level 1.
template <class T>
using Pyramid = std::vector<Var<T>>;

template <class T>
Pyramid<T> toy_encode(Tape<T>& tape, ParamStore<T>& store, const EntoConfig& cfg, const Var<T>& image) {
    const Shape s = image.shape();
    if (s.c != 3) throw ShapeError("toy_encode: image must have 3 channels, got " + s.str());
    const std::size_t factor = std::size_t{1} << (cfg.levels + 1);
    if (s.h % factor != 0 || s.w % factor != 0) {
        throw ShapeError("toy_encode: image " + s.str() + " not divisible by " + std::to_string(factor));
    }
    if (s.h != cfg.input_h || s.w != cfg.input_w) {
        throw ShapeError("toy_encode: image " + s.str() + " does not match configured input " +
                         std::to_string(cfg.input_h) + "x" + std::to_string(cfg.input_w));
    }
    Pyramid<T> out;
    Var<T> x = relu(conv_layer(tape, store, encoder_stage_name(0), image, 3, cfg.native_channels(1), 2));
    for (std::size_t i = 1; i <= cfg.levels; ++i) {
        x = relu(conv_layer(tape, store, encoder_stage_name(i), x, 3, cfg.native_channels(i), 2));
        out.push_back(x);
    }
    return out;
}

template <class T>
Pyramid<T> channel_equalize(Tape<T>& tape, ParamStore<T>& store, const EntoConfig& cfg, const Pyramid<T>& raw) {
    if (raw.size() != cfg.levels) {
        throw ShapeError("channel_equalize: expected " + std::to_string(cfg.levels) + " levels, got " +
                         std::to_string(raw.size()));
    }
    Pyramid<T> out;
    for (std::size_t i = 1; i <= cfg.levels; ++i) {
        out.push_back(conv_layer(tape, store, detail::level_name("equalize", i), raw[i - 1], 3, cfg.channels));
    }
    return out;
}

template <class T>
struct EnrichOutput {
    Pyramid<T> enriched; ///< g_i
    Pyramid<T> fused;    ///< g'_i
    Var<T> coarse;       ///< Y^(E), level-1 resolution
    std::vector<Var<T>> attention;
};

template <class T>
EnrichOutput<T> enrich_decode(Tape<T>& tape, ParamStore<T>& store, const EntoConfig& cfg, const Pyramid<T>& fp) {
    const std::size_t L = cfg.levels;
    if (fp.size() != L) throw ShapeError("enrich_decode: pyramid has " + std::to_string(fp.size()) + " levels");
    EnrichOutput<T> out;
    out.enriched.resize(L);
    for (std::size_t i = L; i >= 1; --i) {
        const Var<T>& f = fp[i - 1];
        std::optional<Var<T>> addend;
        if (i < L) addend = bilinear_resize(out.enriched[i], f.shape().h, f.shape().w);
        Var<T> x = f;
        for (std::size_t k = 1; k <= cfg.cabs_per_level; ++k) {
            auto cab = cab_forward(tape, store, cab_prefix(i, k), x, k == 1 ? addend : std::nullopt);
            x = cab.out;
            out.attention.push_back(cab.attention);
        }
        out.enriched[i - 1] = x;
    }
    out.coarse = conv_layer(tape, store, "coarse_head", out.enriched[0], 3, 1);
    for (std::size_t i = 1; i <= L; ++i) {
        const Var<T>& g = out.enriched[i - 1];
        const std::size_t h = g.shape().h, w = g.shape().w;
        std::vector<Var<T>> parts;
        if (i > 1) parts.push_back(bilinear_resize(out.enriched[i - 2], h, w));
        parts.push_back(g);
        if (i < L) parts.push_back(bilinear_resize(out.enriched[i], h, w));
        out.fused.push_back(
            conv_layer(tape, store, detail::level_name("enrich.fuse", i), concat_channels(parts), 3, cfg.channels));
    }
    return out;
}

template <class T>
struct BaseOutput {
    Pyramid<T> features; ///< h_i
    Pyramid<T> maps;     ///< Y^(B)_i
    Pyramid<T> guidance; ///< stage input p^(0)_i
};

template <class T>
BaseOutput<T> base_decode(Tape<T>& tape, ParamStore<T>& store, const EntoConfig& cfg, const Pyramid<T>& fused,
                          const Var<T>& coarse) {
    const std::size_t L = cfg.levels;
    if (fused.size() != L) throw ShapeError("base_decode: expected " + std::to_string(L) + " fused levels");
    BaseOutput<T> out;
    out.features.resize(L);
    out.maps.resize(L);
    out.guidance.resize(L);
    for (std::size_t i = L; i >= 1; --i) {
        const Var<T>& g0 = fused[i - 1];
        const std::size_t h = g0.shape().h, w = g0.shape().w;
        Var<T> p = bilinear_resize(i == L ? coarse : out.maps[i], h, w);
        out.guidance[i - 1] = p;
        Var<T> g = g0;
        for (std::size_t n = 0; n < cfg.group_sizes.size(); ++n) {
            auto ga = ga_forward(tape, store, ga_prefix(i, n), g, p, cfg.group_sizes[n]);
            g = ga.features;
            p = ga.guidance;
        }
        out.features[i - 1] = g;
        out.maps[i - 1] = p;
    }
    return out;
}

template <class T>
struct RetouchOutput {
    Pyramid<T> maps; ///< Y^(R)_i
    std::vector<Var<T>> attention;
};

template <class T>
RetouchOutput<T> retouch_decode(Tape<T>& tape, ParamStore<T>& store, const EntoConfig& cfg, const Pyramid<T>& h,
                                const Var<T>& y_base) {
    const std::size_t L = cfg.levels;
    if (h.size() != L) throw ShapeError("retouch_decode: expected " + std::to_string(L) + " feature levels");
    RetouchOutput<T> out;
    out.maps.resize(L);
    Var<T> y = y_base;
    for (std::size_t i = L; i >= 1; --i) {
        const Var<T>& feat = h[i - 1];
        y = bilinear_resize(y, feat.shape().h, feat.shape().w);
        for (std::size_t k = 1; k <= cfg.sabs_per_level; ++k) {
            auto sab = sab_forward(tape, store, sab_prefix(i, k), feat, y);
            y = sab.map;
            out.attention.push_back(sab.attention);
        }
        out.maps[i - 1] = y;
    }
    return out;
}

/// Supervised heads (logits) plus per-level intermediates.
template <class T>
struct PredictionSet {
    Var<T> coarse;
    Pyramid<T> base_per_level;
    Pyramid<T> retouch_per_level;

    const Var<T>& base() const { return base_per_level.front(); }
    const Var<T>& retouch() const { return retouch_per_level.front(); }
};

template <class T>
struct ForwardTrace {
    PredictionSet<T> predictions;
    Pyramid<T> raw;
    Pyramid<T> equalized;
    EnrichOutput<T> enrich;
    BaseOutput<T> base;
    RetouchOutput<T> retouch;
};

template <class T>
ForwardTrace<T> ento_forward(Tape<T>& tape, ParamStore<T>& store, const EntoConfig& cfg, const Var<T>& image) {
    cfg.validate();
    ForwardTrace<T> tr;
    tr.raw = toy_encode(tape, store, cfg, image);
    tr.equalized = channel_equalize(tape, store, cfg, tr.raw);
    if (cfg.use_enrich) {
        tr.enrich = enrich_decode(tape, store, cfg, tr.equalized);
    } else {
        tr.enrich.fused = tr.equalized;
        tr.enrich.coarse = conv_layer(tape, store, "coarse_head", tr.equalized[0], 3, 1);
    }
    tr.base = base_decode(tape, store, cfg, tr.enrich.fused, tr.enrich.coarse);
    if (cfg.use_retouch) {
        tr.retouch = retouch_decode(tape, store, cfg, tr.base.features, tr.base.maps[0]);
    } else {
        tr.retouch.maps = tr.base.maps;
    }
    tr.predictions = PredictionSet<T>{tr.enrich.coarse, tr.base.maps, tr.retouch.maps};
    return tr;
}

} // namespace ento
