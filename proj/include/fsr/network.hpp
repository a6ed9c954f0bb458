#pragma once

#include <array>
#include <cmath>
#include <string>
#include <unordered_map>
#include <vector>

#include "fsr/error.hpp"
#include "fsr/layers.hpp"
#include "fsr/rng.hpp"
#include "fsr/tensor.hpp"

namespace fsr {

struct AnetConfig {
    int depth = 3;          // number of encoder blocks
    int base_channels = 8;  // channels after the first block; doubles per level
    int in_channels = 1;
    int classes = 2;
    double bn_epsilon = 1e-5;
    double bn_momentum = 0.1;
};

inline void validate_anet_config(const AnetConfig& cfg) {
    if (cfg.depth < 1) throw Error(Error::Kind::Param, "network depth must be at least 1");
    if (cfg.base_channels < 1)
        throw Error(Error::Kind::Param, "base channel count must be at least 1");
    if (cfg.in_channels != 1)
        throw Error(Error::Kind::Param, "network expects single-channel input");
    if (cfg.classes != 2)
        throw Error(Error::Kind::Param, "network is a two-class segmenter");
}

struct Param {
    std::string name;
    std::vector<int> shape;
    std::vector<double> value;
    std::vector<double> grad;

    size_t count() const {
        size_t n = 1;
        for (int d : shape) n *= static_cast<size_t>(d);
        return n;
    }
    Tensor4 as_tensor() const {
        if (shape.size() != 4)
            throw Error(Error::Kind::Shape, "parameter " + name + " is not rank-4");
        Tensor4 t(shape[0], shape[1], shape[2], shape[3]);
        t.v = value;
        return t;
    }
};

struct Buffer {
    std::string name;
    std::vector<double> value;
};

// Encoder-decoder segmentation model: depth x [conv3x3-BN-ReLU x2, pool2]
// -> two bottleneck conv-BN-ReLU units -> depth x [tconv2 up, skip concat,
// conv3x3-BN-ReLU x2] -> 1x1 conv head to two class scores.  All
// convolutions are same-padded, so every feature map keeps its spatial size
// and skips concatenate without cropping.
struct AnetModel {
    AnetConfig config;
    std::vector<Param> params;
    std::vector<Buffer> buffers;
    std::unordered_map<std::string, size_t> param_index;
    std::unordered_map<std::string, size_t> buffer_index;

    int channels_at(int level) const { return config.base_channels << level; }

    Param& param(const std::string& name) {
        auto it = param_index.find(name);
        if (it == param_index.end())
            throw Error(Error::Kind::Shape, "unknown parameter: " + name);
        return params[it->second];
    }
    const Param& param(const std::string& name) const {
        return const_cast<AnetModel*>(this)->param(name);
    }
    std::vector<double>& buffer(const std::string& name) {
        auto it = buffer_index.find(name);
        if (it == buffer_index.end())
            throw Error(Error::Kind::Shape, "unknown buffer: " + name);
        return buffers[it->second].value;
    }
    const std::vector<double>& buffer(const std::string& name) const {
        return const_cast<AnetModel*>(this)->buffer(name);
    }

    void zero_grad() {
        for (Param& p : params) std::fill(p.grad.begin(), p.grad.end(), 0.0);
    }
};

namespace detail {

inline void add_param(AnetModel& m, const std::string& name, std::vector<int> shape) {
    Param p;
    p.name = name;
    p.shape = std::move(shape);
    p.value.assign(p.count(), 0.0);
    p.grad.assign(p.count(), 0.0);
    m.param_index[name] = m.params.size();
    m.params.push_back(std::move(p));
}

inline void add_buffer(AnetModel& m, const std::string& name, size_t n, double init) {
    Buffer b;
    b.name = name;
    b.value.assign(n, init);
    m.buffer_index[name] = m.buffers.size();
    m.buffers.push_back(std::move(b));
}

// One conv-BN-ReLU unit's parameters.
inline void add_unit(AnetModel& m, const std::string& prefix, int in_ch, int out_ch) {
    add_param(m, prefix + ".conv.weight", {out_ch, in_ch, 3, 3});
    add_param(m, prefix + ".conv.bias", {out_ch});
    add_param(m, prefix + ".bn.scale", {out_ch});
    add_param(m, prefix + ".bn.shift", {out_ch});
    add_buffer(m, prefix + ".bn.running_mean", static_cast<size_t>(out_ch), 0.0);
    add_buffer(m, prefix + ".bn.running_var", static_cast<size_t>(out_ch), 1.0);
}

}  // namespace detail

// Builds the parameter layout and applies He-normal initialization (zero
// biases, unit BN scales) drawn from the given stream.
inline AnetModel make_anet(const AnetConfig& cfg, Rng& rng) {
    validate_anet_config(cfg);
    AnetModel m;
    m.config = cfg;
    int prev = cfg.in_channels;
    for (int l = 0; l < cfg.depth; ++l) {
        int ch = m.channels_at(l);
        detail::add_unit(m, "enc" + std::to_string(l) + ".u0", prev, ch);
        detail::add_unit(m, "enc" + std::to_string(l) + ".u1", ch, ch);
        prev = ch;
    }
    int bottom_ch = m.channels_at(cfg.depth);
    detail::add_unit(m, "bottom.u0", prev, bottom_ch);
    detail::add_unit(m, "bottom.u1", bottom_ch, bottom_ch);
    prev = bottom_ch;
    for (int l = cfg.depth - 1; l >= 0; --l) {
        int ch = m.channels_at(l);
        std::string d = "dec" + std::to_string(l);
        detail::add_param(m, d + ".tconv.weight", {prev, ch, 2, 2});
        detail::add_param(m, d + ".tconv.bias", {ch});
        detail::add_unit(m, d + ".u0", 2 * ch, ch);
        detail::add_unit(m, d + ".u1", ch, ch);
        prev = ch;
    }
    detail::add_param(m, "head.weight", {cfg.classes, prev, 1, 1});
    detail::add_param(m, "head.bias", {cfg.classes});

    for (Param& p : m.params) {
        if (p.shape.size() == 4) {
            // He-normal: fan-in counts the input connections per output
            // element (in_ch*k*k for conv; in_ch for the stride-2 2x2
            // transposed conv, whose outputs each see one tap per channel).
            bool tconv = p.name.find("tconv") != std::string::npos;
            double fan_in = tconv ? static_cast<double>(p.shape[0])
                                  : static_cast<double>(p.shape[1] * p.shape[2] * p.shape[3]);
            double std = std::sqrt(2.0 / fan_in);
            for (double& v : p.value) v = rng.normal(0.0, std);
        } else if (p.name.size() > 6 && p.name.compare(p.name.size() - 6, 6, ".scale") == 0) {
            std::fill(p.value.begin(), p.value.end(), 1.0);
        }
        // biases and shifts stay zero
    }
    return m;
}

inline AnetModel make_anet(const AnetConfig& cfg, uint64_t seed) {
    Rng rng(seed);
    return make_anet(cfg, rng);
}

enum class NetMode { Train, Eval };

// Saved activations for one conv-BN-ReLU unit.
struct UnitCache {
    Tensor4 in;      // convolution input
    Tensor4 bn_in;   // convolution output
    BnCache bn;
    Tensor4 out;     // post-ReLU activation
};

struct DecCache {
    Tensor4 tconv_in;
    Tensor4 tconv_out;
    int skip_channels = 0;
    std::array<UnitCache, 2> units;
};

struct AnetCache {
    std::vector<std::array<UnitCache, 2>> enc;   // per encoder level
    std::vector<std::vector<uint8_t>> pool_am;   // per encoder level
    std::array<UnitCache, 2> bottom;
    std::vector<DecCache> dec;                   // in forward order (deepest first)
    Tensor4 head_in;
    Tensor4 scores;
};

namespace detail {

inline Tensor4 run_unit(AnetModel& m, const std::string& prefix, const Tensor4& x,
                        NetMode mode, UnitCache* cache) {
    const Param& w = m.param(prefix + ".conv.weight");
    const Param& b = m.param(prefix + ".conv.bias");
    const Param& scale = m.param(prefix + ".bn.scale");
    const Param& shift = m.param(prefix + ".bn.shift");
    Tensor4 conv = conv2d_same(x, w.as_tensor(), b.value);
    Tensor4 bn;
    BnCache bc;
    if (mode == NetMode::Train) {
        bn = batchnorm_train(conv, scale.value, shift.value,
                             m.buffer(prefix + ".bn.running_mean"),
                             m.buffer(prefix + ".bn.running_var"), m.config.bn_epsilon,
                             m.config.bn_momentum, bc);
    } else {
        bn = batchnorm_eval(conv, scale.value, shift.value,
                            m.buffer(prefix + ".bn.running_mean"),
                            m.buffer(prefix + ".bn.running_var"), m.config.bn_epsilon);
    }
    Tensor4 act = relu(bn);
    if (cache) {
        cache->in = x;
        cache->bn_in = std::move(conv);
        cache->bn = std::move(bc);
        cache->out = act;
    }
    return act;
}

// Backward through one unit; accumulates parameter grads, returns d_input.
inline Tensor4 unit_backward(AnetModel& m, const std::string& prefix, const UnitCache& u,
                             const Tensor4& d_out) {
    Param& w = m.param(prefix + ".conv.weight");
    Param& b = m.param(prefix + ".conv.bias");
    Param& scale = m.param(prefix + ".bn.scale");
    Param& shift = m.param(prefix + ".bn.shift");
    Tensor4 d_act = relu_backward(u.out, d_out);
    Tensor4 d_bn = batchnorm_backward(u.bn_in, d_act, scale.value, u.bn, scale.grad, shift.grad);
    Tensor4 wt = w.as_tensor();
    Tensor4 dw(wt.n, wt.c, wt.h, wt.w);
    dw.v.swap(w.grad);  // accumulate into the existing grad storage
    Tensor4 d_in = conv2d_same_backward(u.in, wt, d_bn, dw, b.grad);
    w.grad.swap(dw.v);
    return d_in;
}

}  // namespace detail

// Forward pass.  Train mode updates BN running stats and (when cache is
// non-null) records every intermediate needed by anet_backward.
inline Tensor4 anet_forward(AnetModel& m, const Tensor4& x, NetMode mode,
                            AnetCache* cache = nullptr) {
    validate_anet_config(m.config);
    if (x.c != m.config.in_channels)
        throw Error(Error::Kind::Shape, "network input must have one channel");
    int div = 1 << m.config.depth;
    if (x.h % div != 0 || x.w % div != 0 || x.h < div || x.w < div)
        throw Error(Error::Kind::Pyramid,
                    "input spatial dims must be divisible by 2^depth = " + std::to_string(div) +
                        ", got " + x.shape_str());
    if (cache) {
        cache->enc.assign(static_cast<size_t>(m.config.depth), {});
        cache->pool_am.assign(static_cast<size_t>(m.config.depth), {});
        cache->dec.clear();
    }
    Tensor4 cur = x;
    std::vector<Tensor4> skips;
    for (int l = 0; l < m.config.depth; ++l) {
        std::string e = "enc" + std::to_string(l);
        UnitCache* u0 = cache ? &cache->enc[l][0] : nullptr;
        UnitCache* u1 = cache ? &cache->enc[l][1] : nullptr;
        cur = detail::run_unit(m, e + ".u0", cur, mode, u0);
        cur = detail::run_unit(m, e + ".u1", cur, mode, u1);
        skips.push_back(cur);
        std::vector<uint8_t> am;
        cur = maxpool2(cur, am);
        if (cache) cache->pool_am[l] = std::move(am);
    }
    cur = detail::run_unit(m, "bottom.u0", cur, mode, cache ? &cache->bottom[0] : nullptr);
    cur = detail::run_unit(m, "bottom.u1", cur, mode, cache ? &cache->bottom[1] : nullptr);
    for (int l = m.config.depth - 1; l >= 0; --l) {
        std::string d = "dec" + std::to_string(l);
        DecCache dc;
        if (cache) dc.tconv_in = cur;
        Tensor4 up = tconv2(cur, m.param(d + ".tconv.weight").as_tensor(),
                            m.param(d + ".tconv.bias").value);
        Tensor4 cat = concat_skip(skips[l], up);
        if (cache) {
            dc.tconv_out = std::move(up);
            dc.skip_channels = skips[l].c;
        }
        cur = detail::run_unit(m, d + ".u0", cat, mode, cache ? &dc.units[0] : nullptr);
        cur = detail::run_unit(m, d + ".u1", cur, mode, cache ? &dc.units[1] : nullptr);
        if (cache) cache->dec.push_back(std::move(dc));
    }
    if (cache) cache->head_in = cur;
    Tensor4 scores = conv2d_same(cur, m.param("head.weight").as_tensor(),
                                 m.param("head.bias").value);
    if (cache) cache->scores = scores;
    return scores;
}

// Backpropagates d_scores through the cached forward pass, accumulating
// parameter gradients in the model.
inline void anet_backward(AnetModel& m, const AnetCache& cache, const Tensor4& d_scores) {
    Param& hw = m.param("head.weight");
    Param& hb = m.param("head.bias");
    Tensor4 hwt = hw.as_tensor();
    Tensor4 dhw(hwt.n, hwt.c, hwt.h, hwt.w);
    dhw.v.swap(hw.grad);
    Tensor4 d_cur = conv2d_same_backward(cache.head_in, hwt, d_scores, dhw, hb.grad);
    hw.grad.swap(dhw.v);

    std::vector<Tensor4> d_skips(static_cast<size_t>(m.config.depth));
    // Decoder stages, reverse forward order (finest level first).
    for (int i = static_cast<int>(cache.dec.size()) - 1; i >= 0; --i) {
        const DecCache& dc = cache.dec[i];
        int l = m.config.depth - 1 - i;
        std::string d = "dec" + std::to_string(l);
        Tensor4 d_u0 = detail::unit_backward(m, d + ".u1", dc.units[1], d_cur);
        Tensor4 d_cat = detail::unit_backward(m, d + ".u0", dc.units[0], d_u0);
        Tensor4 d_skip, d_up;
        concat_skip_backward(d_cat, dc.skip_channels, d_skip, d_up);
        d_skips[l] = std::move(d_skip);
        Param& tw = m.param(d + ".tconv.weight");
        Param& tb = m.param(d + ".tconv.bias");
        Tensor4 twt = tw.as_tensor();
        Tensor4 dtw(twt.n, twt.c, twt.h, twt.w);
        dtw.v.swap(tw.grad);
        d_cur = tconv2_backward(dc.tconv_in, twt, d_up, dtw, tb.grad);
        tw.grad.swap(dtw.v);
    }
    d_cur = detail::unit_backward(m, "bottom.u1", cache.bottom[1], d_cur);
    d_cur = detail::unit_backward(m, "bottom.u0", cache.bottom[0], d_cur);
    // Encoder, deepest level first; skip gradients join after the pool.
    for (int l = m.config.depth - 1; l >= 0; --l) {
        std::string e = "enc" + std::to_string(l);
        const Tensor4& act = cache.enc[l][1].out;
        Tensor4 d_act = maxpool2_backward(act, d_cur, cache.pool_am[l]);
        for (size_t i = 0; i < d_act.v.size(); ++i) d_act.v[i] += d_skips[l].v[i];
        Tensor4 d_u0 = detail::unit_backward(m, e + ".u1", cache.enc[l][1], d_act);
        d_cur = detail::unit_backward(m, e + ".u0", cache.enc[l][0], d_u0);
    }
}

// Train-mode forward + loss + full analytic backward.  Gradients land in
// model.params[i].grad (zeroed first).
inline LossResult model_gradients(AnetModel& m, const Tensor4& x, const std::vector<int>& truth,
                                  const std::vector<double>& weight, AnetCache& cache,
                                  Tensor4* probs_out = nullptr) {
    m.zero_grad();
    Tensor4 scores = anet_forward(m, x, NetMode::Train, &cache);
    Tensor4 probs = softmax_pixelwise(scores);
    LossResult loss = weighted_ce_value(probs, truth, weight);
    Tensor4 d_scores = weighted_ce_score_gradient(probs, truth, weight);
    anet_backward(m, cache, d_scores);
    if (probs_out) *probs_out = std::move(probs);
    return loss;
}

}  // namespace fsr
