#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "clearsky/autograd.hpp"
#include "clearsky/config.hpp"
#include "clearsky/params.hpp"

namespace clearsky {

/// One forward pass: a tape plus the parameter store feeding it. Each
/// parameter becomes a single leaf per pass so gradients accumulate in one
/// place; after backward() the per-parameter gradient is grad_of().
template <class S>
struct Graph {
    Graph(Tape<S>& t, ParameterStore<S>& p, const NetworkConfig& c) : tape(t), params(p), cfg(c) {}

    Tape<S>& tape;
    ParameterStore<S>& params;
    const NetworkConfig& cfg;
    bool training = false;
    bool spectral_identity = false;  // test hook: freq conv/BN/ReLU bypassed

    using Var = typename Tape<S>::Var;

    Var p(const std::string& name) {
        auto it = leaf_cache_.find(name);
        if (it != leaf_cache_.end()) return it->second;
        Var v = tape.leaf(params.at(name));
        leaf_cache_.emplace(name, v);
        return v;
    }

    bool has_leaf(const std::string& name) const { return leaf_cache_.count(name) != 0; }

    const Tensor<S>& grad_of(const std::string& name) {
        auto it = leaf_cache_.find(name);
        if (it == leaf_cache_.end())
            throw ConfigError("Graph: parameter " + name + " was not used in this pass");
        return tape.grad(it->second);
    }

    // Accumulated gradients for every trainable parameter touched this pass.
    std::map<std::string, const Tensor<S>*> trainable_grads() {
        std::map<std::string, const Tensor<S>*> out;
        for (auto& [name, var] : leaf_cache_)
            if (params.trainable(name)) out.emplace(name, &tape.grad(var));
        return out;
    }

private:
    std::map<std::string, Var> leaf_cache_;
};

// ---------------------------------------------------------------------------
// Equalized-gain conv / linear
// ---------------------------------------------------------------------------
//
// All weights are stored at the fixed small init std (0.02) and a constant
// fan-in gain is applied to the layer output instead ("equalized learning
// rate" parameterization). Signal variance through the trunk then matches
// He/Xavier scaling without touching the stored parameter distribution,
// and Adam's per-parameter normalization makes training equivalent to the
// conventionally initialized network.

inline constexpr double kInitStd = 0.02;

/// Variance gain of an equalized layer, keyed by the layer's base name
/// (without the .w/.b suffix). 2 for layers followed by a (leaky) ReLU,
/// 1 for linear-output layers, 0 for layers that are not equalized (FFC and
/// task-query-fuse convs keep their plainly parameterized form so their
/// identity-kernel contracts hold).
inline double layer_gain(const std::string& base) {
    auto starts = [&](const char* p) { return base.rfind(p, 0) == 0; };
    auto ends = [&](const char* s) {
        std::string suf(s);
        return base.size() >= suf.size() &&
               base.compare(base.size() - suf.size(), suf.size(), suf) == 0;
    };
    if (starts("stem") || starts("up")) return 2.0;
    if (starts("enc")) return ends(".down") ? 2.0 : 1.0;
    if (starts("fuse") || starts("head")) return 1.0;
    if (starts("tipb") || starts("tsg")) return ends(".ffn1") ? 2.0 : 1.0;
    // FFC spatial-domain convs; the frequency-domain conv stays plain so the
    // spectral identity hook keeps its literal identity-kernel form.
    if (starts("ffc") && !ends(".spec.conv")) return 1.0;
    return 0.0;
}

/// Forward-time scale constant c for an equalized weight: stored std 0.02,
/// effective std sqrt(gain/fan_in).
inline double equalized_scale(const std::string& base, const Shape& wshape) {
    double gain = layer_gain(base);
    if (gain <= 0.0) return 1.0;
    double fan_in = 1.0;
    for (size_t i = 0; i + 1 < wshape.size(); ++i) fan_in *= static_cast<double>(wshape[i]);
    return std::sqrt(gain / fan_in) / kInitStd;
}

template <class S>
typename Tape<S>::Var gain_conv2d(Graph<S>& g, typename Tape<S>::Var x, const std::string& name,
                                  int stride = 1) {
    auto& t = g.tape;
    auto w = g.p(name + ".w");
    S c = static_cast<S>(equalized_scale(name, t.val(w).shape()));
    // Gain applies to the weight path only; pre-dividing the bias leaves the
    // effective bias (and its Adam step size) at its natural scale.
    auto b = t.scale(g.p(name + ".b"), S(1) / c);
    return t.scale(t.conv2d(x, w, b, stride), c);
}

/// Leaky ReLU (slope 0.1) composed from primitive ops: 0.1*x + 0.9*relu(x).
/// Trunk activations use this so units never lose their gradient entirely.
template <class S>
typename Tape<S>::Var leaky_relu_g(Tape<S>& t, typename Tape<S>::Var x) {
    return t.add(t.scale(x, S(0.1)), t.scale(t.relu(x), S(0.9)));
}

template <class S>
typename Tape<S>::Var gain_linear(Graph<S>& g, typename Tape<S>::Var x, const std::string& name) {
    auto& t = g.tape;
    auto w = g.p(name + ".w");
    S c = static_cast<S>(equalized_scale(name, t.val(w).shape()));
    auto b = t.scale(g.p(name + ".b"), S(1) / c);
    return t.scale(t.linear(x, w, b), c);
}

// ---------------------------------------------------------------------------
// Attention primitives
// ---------------------------------------------------------------------------

/// softmax(Q K^T / sqrt(d)) V on the tape. q: (L,d) or (B,L,d); k: (B,M,d)
/// or (M,d); v matches k's batching with width d_v.
template <class S>
typename Tape<S>::Var scaled_dot_attention_g(Tape<S>& t, typename Tape<S>::Var q,
                                             typename Tape<S>::Var k, typename Tape<S>::Var v) {
    int d = t.val(q).shape().back();
    int dk = t.val(k).shape().back();
    if (d != dk)
        throw ShapeError("scaled_dot_attention: query width " + std::to_string(d) +
                         " vs key width " + std::to_string(dk));
    int mk = t.val(k).rank() == 2 ? t.val(k).dim(0) : t.val(k).dim(1);
    int mv = t.val(v).rank() == 2 ? t.val(v).dim(0) : t.val(v).dim(1);
    if (mk != mv)
        throw ShapeError("scaled_dot_attention: key rows " + std::to_string(mk) + " vs value rows " +
                         std::to_string(mv));
    if (d == 0) throw ConfigError("scaled_dot_attention: d must be >= 1");
    auto scores = t.scale(t.bmm(q, k, false, true), S(1) / static_cast<S>(std::sqrt(double(d))));
    return t.bmm(t.softmax(scores), v);
}

/// Plain-tensor evaluation of the same primitive.
template <class S>
Tensor<S> scaled_dot_attention(const Tensor<S>& queries, const Tensor<S>& keys,
                               const Tensor<S>& values) {
    Tape<S> t;
    auto q = t.leaf(queries);
    auto k = t.leaf(keys);
    auto v = t.leaf(values);
    auto out = scaled_dot_attention_g(t, q, k, v);
    Tensor<S> r = t.val(out);
    if (r.rank() == 3 && r.dim(0) == 1 && queries.rank() == 2)
        return r.reshaped(Shape{r.dim(1), r.dim(2)});
    return r;
}

/// Multi-head wrapper: splits the last dim of q,k,v into `heads` slices,
/// attends per head, concatenates the outputs.
template <class S>
typename Tape<S>::Var multihead_attention_g(Tape<S>& t, typename Tape<S>::Var q,
                                            typename Tape<S>::Var k, typename Tape<S>::Var v,
                                            int heads) {
    int dq = t.val(q).shape().back();
    int dv = t.val(v).shape().back();
    if (dq % heads != 0 || dv % heads != 0)
        throw ShapeError("multihead_attention: width not divisible by head count");
    int axq = t.val(q).rank() - 1;
    int axk = t.val(k).rank() - 1;
    int axv = t.val(v).rank() - 1;
    std::vector<typename Tape<S>::Var> outs;
    for (int h = 0; h < heads; ++h) {
        auto qh = t.slice(q, axq, h * dq / heads, dq / heads);
        auto kh = t.slice(k, axk, h * dq / heads, dq / heads);
        auto vh = t.slice(v, axv, h * dv / heads, dv / heads);
        outs.push_back(scaled_dot_attention_g(t, qh, kh, vh));
    }
    if (heads == 1) return outs[0];
    return t.concat(static_cast<int>(t.val(outs[0]).rank()) - 1, outs);
}

// ---------------------------------------------------------------------------
// Task Intra-patch Block
// ---------------------------------------------------------------------------

namespace detail {

// NHWC spatial window -> (N, window_area, C) token matrix.
template <class S>
typename Tape<S>::Var window_tokens(Tape<S>& t, typename Tape<S>::Var x, int h0, int hs, int w0,
                                    int ws) {
    auto sub = t.slice(t.slice(x, 1, h0, hs), 2, w0, ws);
    int n = t.val(sub).dim(0), c = t.val(sub).dim(3);
    return t.reshape(sub, Shape{n, hs * ws, c});
}

template <class S>
typename Tape<S>::Var tokens_to_window(Tape<S>& t, typename Tape<S>::Var tokens, int hs, int ws) {
    int n = t.val(tokens).dim(0), c = t.val(tokens).dim(2);
    return t.reshape(tokens, Shape{n, hs, ws, c});
}

// Token-sequence feed-forward network with residual: x + W2 relu(W1 x + b1) + b2.
template <class S>
typename Tape<S>::Var ffn_residual(Graph<S>& g, typename Tape<S>::Var x, const std::string& prefix) {
    auto& t = g.tape;
    auto h = t.relu(gain_linear(g, x, prefix + ".ffn1"));
    return t.add(x, gain_linear(g, h, prefix + ".ffn2"));
}

}  // namespace detail

/// TIPB: the feature map is split into a 2x2 grid of half-size patches.
/// Within each patch the external learnable sequence queries the patch
/// tokens; the pooled task vector is added back to every token (residual),
/// followed by a residual FFN. Patches are reassembled in place.
template <class S>
typename Tape<S>::Var tipb_forward_g(Graph<S>& g, typename Tape<S>::Var x, int stage_index) {
    auto& t = g.tape;
    const Tensor<S>& xv = t.val(x);
    int H = xv.dim(1), W = xv.dim(2);
    if (H % 2 != 0 || W % 2 != 0)
        throw ShapeError("tipb_forward: spatial dims " + shape_str(xv.shape()) +
                         " must be even (pad first)");
    const std::string prefix = "tipb" + std::to_string(stage_index);
    auto q = g.p("query_seq");  // (L, head_count*key_dim), shared across stages
    int hp = H / 2, wp = W / 2;
    std::vector<typename Tape<S>::Var> rows;
    for (int ph = 0; ph < 2; ++ph) {
        std::vector<typename Tape<S>::Var> cols;
        for (int pw = 0; pw < 2; ++pw) {
            auto tokens = detail::window_tokens(t, x, ph * hp, hp, pw * wp, wp);
            auto k = gain_linear(g, tokens, prefix + ".k");
            auto v = gain_linear(g, tokens, prefix + ".v");
            auto u = multihead_attention_g(t, q, k, v, g.cfg.head_count);  // (N,L,dq)
            auto pooled = t.mean_rows(u);                                   // (N,dq)
            int n = t.val(pooled).dim(0), dq = t.val(pooled).dim(1);
            auto task = gain_linear(g, t.reshape(pooled, Shape{n, 1, dq}), prefix + ".o");
            auto task2 = t.reshape(task, Shape{n, t.val(task).dim(2)});
            auto y = t.add_rows(tokens, task2);
            auto z = detail::ffn_residual(g, y, prefix);
            cols.push_back(detail::tokens_to_window(t, z, hp, wp));
        }
        rows.push_back(t.concat(2, cols));
    }
    return t.concat(1, rows);
}

// ---------------------------------------------------------------------------
// Task Sequence Generator
// ---------------------------------------------------------------------------

/// Eq.4 fusion: 7x7 on T1, 5x5 on T2, 3x3 on T3, all mapped to T3's channel
/// width and spatial dims, summed, then an outer 3x3 conv.
template <class S>
typename Tape<S>::Var task_query_fuse_g(Graph<S>& g,
                                        const std::vector<typename Tape<S>::Var>& t_list) {
    if (t_list.size() < 3)
        throw ConfigError("task_query_fuse: need at least 3 stage outputs, have " +
                          std::to_string(t_list.size()));
    auto& t = g.tape;
    int ho = t.val(t_list[2]).dim(1), wo = t.val(t_list[2]).dim(2);
    // Map the finer stages to the coarsest dims before the big kernels run;
    // the fused result is coarse anyway and this keeps the 7x7/5x5 cost flat.
    auto b1 = t.conv2d(t.bilinear_resize(t_list[0], ho, wo), g.p("tqf.c7.w"), g.p("tqf.c7.b"));
    auto b2 = t.conv2d(t.bilinear_resize(t_list[1], ho, wo), g.p("tqf.c5.w"), g.p("tqf.c5.b"));
    auto b3 = t.conv2d(t.bilinear_resize(t_list[2], ho, wo), g.p("tqf.c3.w"), g.p("tqf.c3.b"));
    auto summed = t.add(t.add(b1, b2), b3);
    return t.conv2d(summed, g.p("tqf.out.w"), g.p("tqf.out.b"));
}

/// Cross-attention decoder block: Q projected from the task query map,
/// K and V from the decoder feature map, residual add, residual FFN.
/// Attention runs in non-overlapping spatial windows.
template <class S>
typename Tape<S>::Var task_sequence_generator_g(Graph<S>& g, typename Tape<S>::Var x,
                                                typename Tape<S>::Var q_task, int stage_index) {
    auto& t = g.tape;
    const Tensor<S>& xv = t.val(x);
    int H = xv.dim(1), W = xv.dim(2);
    const std::string prefix = "tsg" + std::to_string(stage_index);
    auto qm = t.bilinear_resize(q_task, H, W);
    int wsh = std::min(g.cfg.attn_window, H);
    int wsw = std::min(g.cfg.attn_window, W);
    if (H % wsh != 0 || W % wsw != 0)
        throw ShapeError("task_sequence_generator: dims " + shape_str(xv.shape()) +
                         " not divisible by attention window");
    std::vector<typename Tape<S>::Var> rows;
    for (int h0 = 0; h0 < H; h0 += wsh) {
        std::vector<typename Tape<S>::Var> cols;
        for (int w0 = 0; w0 < W; w0 += wsw) {
            auto xt = detail::window_tokens(t, x, h0, wsh, w0, wsw);
            auto qt = detail::window_tokens(t, qm, h0, wsh, w0, wsw);
            auto q = gain_linear(g, qt, prefix + ".q");
            auto k = gain_linear(g, xt, prefix + ".k");
            auto v = gain_linear(g, xt, prefix + ".v");
            auto u = multihead_attention_g(t, q, k, v, g.cfg.head_count);
            auto proj = gain_linear(g, u, prefix + ".o");
            auto y = t.add(xt, proj);
            auto z = detail::ffn_residual(g, y, prefix);
            cols.push_back(detail::tokens_to_window(t, z, wsh, wsw));
        }
        rows.push_back(t.concat(2, cols));
    }
    return t.concat(1, rows);
}

// ---------------------------------------------------------------------------
// Spectral transform and FFC
// ---------------------------------------------------------------------------

/// Real FFT over the spatial dims, (re,im) channel concat, 1x1 conv -> BN
/// -> ReLU in the frequency domain, Hermitian rebuild, inverse FFT.
template <class S>
typename Tape<S>::Var spectral_transform_g(Graph<S>& g, typename Tape<S>::Var x,
                                           const std::string& prefix) {
    auto& t = g.tape;
    const Tensor<S>& xv = t.val(x);
    if (xv.dim(1) < 2 || xv.dim(2) < 2)
        throw ShapeError("spectral_transform: spatial dims must be >= 2");
    if (!xv.all_finite()) throw NumericError("spectral_transform: non-finite input");
    int W = xv.dim(2);
    auto freq = t.rfft2(x);
    if (!g.spectral_identity) {
        freq = t.conv2d(freq, g.p(prefix + ".conv.w"), g.p(prefix + ".conv.b"));
        Tensor<S>& rmean = g.params.at(prefix + ".bn.mean");
        Tensor<S>& rvar = g.params.at(prefix + ".bn.var");
        Tensor<S> use_mean = rmean, use_var = rvar;
        if (g.training) {
            // Normalize with the running statistics, then fold the batch
            // statistics into them (momentum 0.1).
            const Tensor<S>& fv = t.val(freq);
            int64_t c = fv.shape().back();
            int64_t rows = fv.numel() / c;
            for (int64_t i = 0; i < c; ++i) {
                double m = 0, v = 0;
                for (int64_t r = 0; r < rows; ++r) m += fv[r * c + i];
                m /= static_cast<double>(rows);
                for (int64_t r = 0; r < rows; ++r) {
                    double d = fv[r * c + i] - m;
                    v += d * d;
                }
                v /= static_cast<double>(rows);
                rmean[i] = static_cast<S>(0.9 * rmean[i] + 0.1 * m);
                rvar[i] = static_cast<S>(0.9 * rvar[i] + 0.1 * v);
            }
        }
        freq = t.batchnorm(freq, g.p(prefix + ".bn.gamma"), g.p(prefix + ".bn.beta"), use_mean,
                           use_var, S(1e-5));
        freq = t.relu(freq);
    }
    return t.irfft2(freq, W);
}

/// Fast Fourier Convolution block: channel split into a local 3x3-conv
/// branch and a global spectral branch, with 1x1 cross-term convs summed
/// into each side before the channel concat.
template <class S>
typename Tape<S>::Var ffc_forward_g(Graph<S>& g, typename Tape<S>::Var x, const std::string& prefix) {
    auto& t = g.tape;
    const Tensor<S>& xv = t.val(x);
    int C = xv.dim(3);
    double ratio = g.cfg.ffc_global_ratio;
    if (ratio <= 0.0) return gain_conv2d(g, x, prefix + ".local");
    if (ratio >= 1.0) return spectral_transform_g(g, x, prefix + ".spec");
    int cg = static_cast<int>(std::lround(ratio * C));
    if (cg < 1 || cg >= C)
        throw ConfigError("ffc_forward: global ratio " + std::to_string(ratio) + " on " +
                          std::to_string(C) + " channels leaves an empty branch");
    int cl = C - cg;
    auto xl = t.slice(x, 3, 0, cl);
    auto xg = t.slice(x, 3, cl, cg);
    auto yl = t.add(gain_conv2d(g, xl, prefix + ".local"),
                    gain_conv2d(g, xg, prefix + ".g2l"));
    auto yg = t.add(spectral_transform_g(g, xg, prefix + ".spec"),
                    gain_conv2d(g, xl, prefix + ".l2g"));
    return t.concat(3, {yl, yg});
}

// ---------------------------------------------------------------------------
// Adaptive mixup
// ---------------------------------------------------------------------------

template <class S>
typename Tape<S>::Var adaptive_mixup_g(Graph<S>& g, typename Tape<S>::Var f_down,
                                       typename Tape<S>::Var f_up, int gate_index) {
    auto& t = g.tape;
    auto gate = t.reshape(t.slice(g.p("gates.theta"), 0, gate_index, 1), Shape{1});
    return t.gated_mix(f_down, f_up, gate);
}

/// sigma(theta)*f_down + (1-sigma(theta))*f_up on plain tensors.
template <class S>
Tensor<S> adaptive_mixup(const Tensor<S>& f_down, const Tensor<S>& f_up, S theta) {
    require_same_shape(f_down, f_up, "adaptive_mixup");
    S s = S(1) / (S(1) + std::exp(-theta));
    Tensor<S> out = f_down;
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = s * f_down[i] + (S(1) - s) * f_up[i];
    return out;
}

// ---------------------------------------------------------------------------
// Encoder stage
// ---------------------------------------------------------------------------

/// Strided conv downsampling (2x, channels doubled) with a leaky activation,
/// followed by a residual 3x3 conv.
template <class S>
typename Tape<S>::Var encoder_stage_forward_g(Graph<S>& g, typename Tape<S>::Var x,
                                              int stage_index) {
    if (stage_index < 0 || stage_index >= g.cfg.stages)
        throw ConfigError("encoder_stage_forward: stage index " + std::to_string(stage_index) +
                          " out of range");
    auto& t = g.tape;
    const Tensor<S>& xv = t.val(x);
    if (xv.dim(1) % 2 != 0 || xv.dim(2) % 2 != 0)
        throw ShapeError("encoder_stage_forward: odd spatial dims " + shape_str(xv.shape()));
    const std::string prefix = "enc" + std::to_string(stage_index);
    auto y = leaky_relu_g(t, gain_conv2d(g, x, prefix + ".down", 2));
    // 1/sqrt(2) keeps the variance of the residual sum at the branch level.
    return t.scale(t.add(y, gain_conv2d(g, y, prefix + ".conv")),
                   static_cast<S>(1.0 / std::sqrt(2.0)));
}

}  // namespace clearsky
