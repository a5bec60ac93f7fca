#pragma once

#include <string>
#include <vector>

#include "clearsky/blocks.hpp"

namespace clearsky {

// ---------------------------------------------------------------------------
// Parameter initialization
// ---------------------------------------------------------------------------

namespace detail {

template <class S>
void add_conv(ParameterStore<S>& ps, uint64_t seed, const std::string& name, int k, int cin,
              int cout) {
    ps.add(name + ".w", init_trunc_normal<S>(seed, name + ".w", Shape{k, k, cin, cout}, 0.02));
    ps.add(name + ".b", Tensor<S>(Shape{cout}, S(0)));
}

template <class S>
void add_linear(ParameterStore<S>& ps, uint64_t seed, const std::string& name, int cin, int cout) {
    ps.add(name + ".w", init_trunc_normal<S>(seed, name + ".w", Shape{cin, cout}, 0.02));
    ps.add(name + ".b", Tensor<S>(Shape{cout}, S(0)));
}

template <class S>
void add_token_block(ParameterStore<S>& ps, uint64_t seed, const std::string& prefix, int c,
                     int dq) {
    add_linear(ps, seed, prefix + ".k", c, dq);
    add_linear(ps, seed, prefix + ".v", c, dq);
    add_linear(ps, seed, prefix + ".o", dq, c);
    add_linear(ps, seed, prefix + ".ffn1", c, 2 * c);
    add_linear(ps, seed, prefix + ".ffn2", 2 * c, c);
}

template <class S>
void add_ffc(ParameterStore<S>& ps, uint64_t seed, const NetworkConfig& cfg,
             const std::string& prefix, int c) {
    double r = cfg.ffc_global_ratio;
    if (r <= 0.0) {
        add_conv(ps, seed, prefix + ".local", 3, c, c);
        return;
    }
    int cg = (r >= 1.0) ? c : static_cast<int>(std::lround(r * c));
    if (r < 1.0) {
        int cl = c - cg;
        if (cg < 1 || cl < 1)
            throw ConfigError("init_parameters: ffc_global_ratio leaves an empty branch at width " +
                              std::to_string(c));
        add_conv(ps, seed, prefix + ".local", 3, cl, cl);
        add_conv(ps, seed, prefix + ".g2l", 1, cg, cl);
        add_conv(ps, seed, prefix + ".l2g", 1, cl, cg);
    }
    add_conv(ps, seed, prefix + ".spec.conv", 1, 2 * cg, 2 * cg);
    ps.add(prefix + ".spec.bn.gamma", Tensor<S>(Shape{2 * cg}, S(1)));
    ps.add(prefix + ".spec.bn.beta", Tensor<S>(Shape{2 * cg}, S(0)));
    ps.add(prefix + ".spec.bn.mean", Tensor<S>(Shape{2 * cg}, S(0)), false);
    ps.add(prefix + ".spec.bn.var", Tensor<S>(Shape{2 * cg}, S(1)), false);
}

}  // namespace detail

/// Deterministic parameter store for the full network. Same seed, same
/// bits; each parameter draws from a stream keyed by (seed, name).
template <class S>
ParameterStore<S> init_parameters(const NetworkConfig& cfg, uint64_t seed) {
    cfg.validate();
    ParameterStore<S> ps;
    const int b = cfg.base_channels;
    const int dq = cfg.query_width();
    detail::add_conv(ps, seed, "stem", 3, cfg.input_channels, b);
    for (int i = 0; i < cfg.stages; ++i) {
        int ci = b << i, co = b << (i + 1);
        detail::add_conv(ps, seed, "enc" + std::to_string(i) + ".down", 3, ci, co);
        detail::add_conv(ps, seed, "enc" + std::to_string(i) + ".conv", 3, co, co);
        detail::add_token_block(ps, seed, "tipb" + std::to_string(i), co, dq);
        detail::add_conv(ps, seed, "fuse" + std::to_string(i), 1, 2 * co, co);
    }
    ps.add("query_seq", init_normal<S>(seed, "query_seq", Shape{cfg.query_len, dq}, 0.02));
    const int cq = b << 3;  // channel width of T3
    ps.add("tqf.c7.w", init_trunc_normal<S>(seed, "tqf.c7.w", Shape{7, 7, b << 1, cq}, 0.02));
    ps.add("tqf.c7.b", Tensor<S>(Shape{cq}, S(0)));
    ps.add("tqf.c5.w", init_trunc_normal<S>(seed, "tqf.c5.w", Shape{5, 5, b << 2, cq}, 0.02));
    ps.add("tqf.c5.b", Tensor<S>(Shape{cq}, S(0)));
    detail::add_conv(ps, seed, "tqf.c3", 3, b << 3, cq);
    detail::add_conv(ps, seed, "tqf.out", 3, cq, cq);
    for (int j = 0; j < cfg.stages; ++j) {
        int cd = b << (cfg.stages - 1 - j);
        detail::add_conv(ps, seed, "up" + std::to_string(j), 3, 2 * cd, cd);
        const std::string tsg = "tsg" + std::to_string(j);
        detail::add_linear(ps, seed, tsg + ".q", cq, dq);
        detail::add_token_block(ps, seed, tsg, cd, dq);
    }
    for (int i = 1; i <= cfg.stages; ++i) {
        if (cfg.ffc_bottleneck_only && i != cfg.stages) continue;
        detail::add_ffc(ps, seed, cfg, "ffc" + std::to_string(i), b << i);
    }
    ps.add("gates.theta", Tensor<S>(Shape{cfg.mixup_count()}, S(0)));
    detail::add_conv(ps, seed, "head", 3, b, cfg.input_channels);
    return ps;
}

// ---------------------------------------------------------------------------
// Full forward pass
// ---------------------------------------------------------------------------

template <class S>
struct ForwardHandles {
    typename Tape<S>::Var output;            // residual-added, unclamped
    typename Tape<S>::Var q_task;
    std::vector<typename Tape<S>::Var> tipb_outputs;
};

/// Figure-2 pipeline on an existing graph. Input var must be (N,H,W,3) with
/// H,W multiples of 2^stages.
template <class S>
ForwardHandles<S> network_forward_g(Graph<S>& g, typename Tape<S>::Var image) {
    auto& t = g.tape;
    const NetworkConfig& cfg = g.cfg;
    const Tensor<S>& iv = t.val(image);
    if (iv.rank() != 4 || iv.dim(3) != cfg.input_channels)
        throw ShapeError("network_forward: expects (N,H,W," + std::to_string(cfg.input_channels) +
                         "), got " + shape_str(iv.shape()));
    int H = iv.dim(1), W = iv.dim(2);
    const int mult = 1 << cfg.stages;
    if (H % mult != 0 || W % mult != 0 || H < 2 * mult || W < 2 * mult)
        throw ShapeError("network_forward: spatial dims " + shape_str(iv.shape()) +
                         " must be multiples of " + std::to_string(mult) + " and at least " +
                         std::to_string(2 * mult) + "; reflect_pad_to_multiple first");

    ForwardHandles<S> hs;
    auto trunk = leaky_relu_g(t, gain_conv2d(g, image, "stem"));
    std::vector<typename Tape<S>::Var> skips;  // full-res first
    skips.push_back(trunk);
    for (int i = 0; i < cfg.stages; ++i) {
        auto s = encoder_stage_forward_g(g, trunk, i);
        auto ti = tipb_forward_g(g, s, i);
        hs.tipb_outputs.push_back(ti);
        trunk = gain_conv2d(g, t.concat(3, {s, ti}), "fuse" + std::to_string(i));
        skips.push_back(trunk);
    }
    hs.q_task = task_query_fuse_g(
        g, {hs.tipb_outputs[0], hs.tipb_outputs[1], hs.tipb_outputs[2]});

    // Skip-path FFC on each stage's downsampled output (bottleneck included).
    for (int i = 1; i <= cfg.stages; ++i) {
        if (cfg.ffc_bottleneck_only && i != cfg.stages) continue;
        skips[static_cast<size_t>(i)] =
            ffc_forward_g(g, skips[static_cast<size_t>(i)], "ffc" + std::to_string(i));
    }

    auto d = skips[static_cast<size_t>(cfg.stages)];  // bottleneck
    for (int j = 0; j < cfg.stages; ++j) {
        const Tensor<S>& dv = t.val(d);
        auto up = t.bilinear_resize(d, 2 * dv.dim(1), 2 * dv.dim(2));
        d = leaky_relu_g(t, gain_conv2d(g, up, "up" + std::to_string(j)));
        d = task_sequence_generator_g(g, d, hs.q_task, j);
        d = adaptive_mixup_g(g, skips[static_cast<size_t>(cfg.stages - 1 - j)], d, j);
    }
    auto residual = gain_conv2d(g, d, "head");
    hs.output = t.add(image, residual);
    return hs;
}

/// Inference entry point: forward plus [0,1] clamp.
template <class S>
Tensor<S> network_forward(const Tensor<S>& image, ParameterStore<S>& params,
                          const NetworkConfig& cfg) {
    Tape<S> tape;
    Graph<S> g{tape, params, cfg};
    auto in = tape.leaf(image);
    auto hs = network_forward_g(g, in);
    Tensor<S> out = tape.val(hs.output);
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = std::min(std::max(out[i], S(0)), S(1));
    return out;
}

// ---------------------------------------------------------------------------
// Reflection padding
// ---------------------------------------------------------------------------

struct CropRecord {
    int height = 0;
    int width = 0;
};

/// Pads right/bottom by edge reflection to the next multiple; the returned
/// record holds the original dims so the crop inverts exactly.
template <class S>
std::pair<Tensor<S>, CropRecord> reflect_pad_to_multiple(const Tensor<S>& image, int multiple) {
    if (multiple < 1) throw ConfigError("reflect_pad_to_multiple: multiple must be >= 1");
    int N = image.dim(0), H = image.dim(1), W = image.dim(2), C = image.dim(3);
    int Hp = (H + multiple - 1) / multiple * multiple;
    int Wp = (W + multiple - 1) / multiple * multiple;
    CropRecord rec{H, W};
    if (Hp == H && Wp == W) return {image, rec};
    Tensor<S> out(Shape{N, Hp, Wp, C});
    auto reflect = [](int i, int n) {
        // indices n, n+1, ... map to n-2, n-3, ...
        if (i < n) return i;
        int r = 2 * n - 2 - i;
        return std::max(r, 0);
    };
    for (int n = 0; n < N; ++n)
        for (int h = 0; h < Hp; ++h)
            for (int w = 0; w < Wp; ++w)
                for (int c = 0; c < C; ++c)
                    out.at4(n, h, w, c) = image.at4(n, reflect(h, H), reflect(w, W), c);
    return {out, rec};
}

template <class S>
Tensor<S> crop_to_record(const Tensor<S>& image, const CropRecord& rec) {
    int N = image.dim(0), C = image.dim(3);
    if (image.dim(1) == rec.height && image.dim(2) == rec.width) return image;
    Tensor<S> out(Shape{N, rec.height, rec.width, C});
    for (int n = 0; n < N; ++n)
        for (int h = 0; h < rec.height; ++h)
            for (int w = 0; w < rec.width; ++w)
                for (int c = 0; c < C; ++c) out.at4(n, h, w, c) = image.at4(n, h, w, c);
    return out;
}

/// Pad -> forward -> crop, for arbitrary sizes >= 8.
template <class S>
Tensor<S> restore_image(const Tensor<S>& image, ParameterStore<S>& params,
                        const NetworkConfig& cfg) {
    const int mult = 2 << cfg.stages;  // also satisfies the minimum-size bound
    auto [padded, rec] = reflect_pad_to_multiple(image, mult);
    Tensor<S> out = network_forward(padded, params, cfg);
    return crop_to_record(out, rec);
}

}  // namespace clearsky
