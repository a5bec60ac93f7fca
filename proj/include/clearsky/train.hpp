#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "clearsky/checkpoint.hpp"
#include "clearsky/degrade.hpp"
#include "clearsky/metrics.hpp"
#include "clearsky/network.hpp"

namespace clearsky {

enum class LossKind { charbonnier, charbonnier_ssim };

struct TrainConfig {
    int steps = 2000;
    int batch_size = 1;
    double lr = 2e-4;
    uint64_t seed = 0;
    LossKind loss = LossKind::charbonnier;
    int checkpoint_every = 0;  // 0: only final
    int eval_every = 0;        // 0: never during training
    double clip_norm = 1.0;
    double ssim_weight = 0.2;
    double lr_min_factor = 0.01;  // cosine decay floor
    int halt_step = 0;            // stop early after this step (0: run to steps);
                                  // the lr schedule still spans `steps`

    void validate() const {
        if (steps < 1) throw ConfigError("TrainConfig: steps must be >= 1");
        if (batch_size < 1) throw ConfigError("TrainConfig: batch_size must be >= 1");
        if (lr <= 0) throw ConfigError("TrainConfig: lr must be > 0");
    }

    bool operator==(const TrainConfig&) const = default;

    double lr_at(int64_t step) const {
        double lo = lr * lr_min_factor;
        double t = static_cast<double>(step) / steps;
        return lo + 0.5 * (lr - lo) * (1.0 + std::cos(M_PI * t));
    }
};

struct MetricReport {
    double psnr_db = 0.0;
    double ssim_val = 0.0;
    struct Sample {
        double psnr_db, ssim_val;
    };
    std::vector<Sample> per_sample;
};

template <class S>
MetricReport evaluate(ParameterStore<S>& params, const NetworkConfig& cfg,
                      const std::vector<PairedSample<S>>& dataset) {
    MetricReport rep;
    for (const auto& s : dataset) {
        Tensor<S> restored = restore_image(s.degraded, params, cfg);
        double p = psnr(restored, s.clean);
        double q = ssim(restored, s.clean);
        rep.per_sample.push_back({p, q});
        rep.psnr_db += p;
        rep.ssim_val += q;
    }
    if (!rep.per_sample.empty()) {
        rep.psnr_db /= static_cast<double>(rep.per_sample.size());
        rep.ssim_val /= static_cast<double>(rep.per_sample.size());
    }
    return rep;
}

namespace train_detail {

// Stack samples' degraded/clean images along the batch axis.
template <class S>
std::pair<Tensor<S>, Tensor<S>> make_batch(const std::vector<PairedSample<S>>& data,
                                           const std::vector<int>& idx) {
    int h = data[0].degraded.dim(1), w = data[0].degraded.dim(2), c = data[0].degraded.dim(3);
    int n = static_cast<int>(idx.size());
    Tensor<S> x(Shape{n, h, w, c}), y(Shape{n, h, w, c});
    for (int b = 0; b < n; ++b) {
        const auto& s = data[static_cast<size_t>(idx[static_cast<size_t>(b)])];
        std::copy_n(s.degraded.data(), s.degraded.numel(), x.data() + int64_t(b) * h * w * c);
        std::copy_n(s.clean.data(), s.clean.numel(), y.data() + int64_t(b) * h * w * c);
    }
    return {std::move(x), std::move(y)};
}

// Differentiable SSIM penalty (1 - mean SSIM map), Gaussian blur realized
// as a channel-diagonal conv so the tape's dense conv2d applies.
template <class S>
typename Tape<S>::Var ssim_penalty_g(Graph<S>& g, typename Tape<S>::Var pred,
                                     const Tensor<S>& target) {
    auto& t = g.tape;
    int c = target.dim(3);
    const int win = 11;
    auto w1 = detail::gaussian_window(win, 1.5);
    Tensor<S> kernel(Shape{win, win, c, c}, S(0));
    for (int i = 0; i < win; ++i)
        for (int j = 0; j < win; ++j)
            for (int ch = 0; ch < c; ++ch)
                kernel.at4(i, j, ch, ch) = static_cast<S>(w1[static_cast<size_t>(i)] * w1[static_cast<size_t>(j)]);
    auto kvar = t.leaf(kernel);
    auto zbias = t.leaf(Tensor<S>(Shape{c}, S(0)));
    auto blur = [&](typename Tape<S>::Var v) { return t.conv2d(v, kvar, zbias); };
    auto y = t.leaf(target);
    const S c1 = S(0.01 * 0.01), c2 = S(0.03 * 0.03);
    auto mx = blur(pred), my = blur(y);
    auto mxx = blur(t.mul(pred, pred)), myy = blur(t.mul(y, y)), mxy = blur(t.mul(pred, y));
    auto sx = t.sub(mxx, t.mul(mx, mx));
    auto sy = t.sub(myy, t.mul(my, my));
    auto sxy = t.sub(mxy, t.mul(mx, my));
    auto num = t.mul(t.add_scalar(t.scale(t.mul(mx, my), S(2)), c1),
                     t.add_scalar(t.scale(sxy, S(2)), c2));
    auto den = t.mul(t.add_scalar(t.add(t.mul(mx, mx), t.mul(my, my)), c1),
                     t.add_scalar(t.add(sx, sy), c2));
    auto ssim_map = t.div(num, den);
    return t.add_scalar(t.scale(t.mean(ssim_map), S(-1)), S(1));
}

}  // namespace train_detail

/// Adam with cosine lr decay and global-norm gradient clipping. State lives
/// in plain float tensors so it round-trips through checkpoints bit-exactly.
template <class S>
class AdamOptimizer {
public:
    AdamOptimizer(const ParameterStore<S>& params, const TrainConfig& cfg) : cfg_(cfg) {
        for (const auto& name : params.trainable_names()) {
            state_.emplace("opt/m/" + name, Tensor<float>(params.at(name).shape(), 0.f));
            state_.emplace("opt/v/" + name, Tensor<float>(params.at(name).shape(), 0.f));
            // Equalized weights are stored at 1/c of their effective scale,
            // so their steps shrink by 1/c to match conventional dynamics.
            double s = 1.0;
            if (name.size() > 2 && name.compare(name.size() - 2, 2, ".w") == 0)
                s = 1.0 / equalized_scale(name.substr(0, name.size() - 2),
                                          params.at(name).shape());
            lr_scale_.emplace(name, s);
        }
    }

    void step(ParameterStore<S>& params, std::map<std::string, const Tensor<S>*>& grads,
              int64_t step_index) {
        double norm2 = 0.0;
        for (auto& [name, gp] : grads) {
            if (!params.trainable(name)) continue;
            for (int64_t i = 0; i < gp->numel(); ++i) {
                double v = static_cast<double>((*gp)[i]);
                norm2 += v * v;
            }
        }
        double scale = 1.0;
        double norm = std::sqrt(norm2);
        if (cfg_.clip_norm > 0 && norm > cfg_.clip_norm) scale = cfg_.clip_norm / norm;
        const double lr = cfg_.lr_at(step_index);
        const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
        const double bc1 = 1.0 - std::pow(b1, static_cast<double>(step_index + 1));
        const double bc2 = 1.0 - std::pow(b2, static_cast<double>(step_index + 1));
        for (auto& [name, gp] : grads) {
            if (!params.trainable(name)) continue;
            Tensor<float>& m = state_.at("opt/m/" + name);
            Tensor<float>& v = state_.at("opt/v/" + name);
            Tensor<S>& w = params.at(name);
            const double lr_p = lr * lr_scale_.at(name);
            for (int64_t i = 0; i < w.numel(); ++i) {
                double gi = static_cast<double>((*gp)[i]) * scale;
                m[i] = static_cast<float>(b1 * m[i] + (1 - b1) * gi);
                v[i] = static_cast<float>(b2 * v[i] + (1 - b2) * gi * gi);
                double mhat = m[i] / bc1, vhat = v[i] / bc2;
                w[i] = static_cast<S>(w[i] - static_cast<S>(lr_p * mhat / (std::sqrt(vhat) + eps)));
            }
        }
    }

    std::map<std::string, Tensor<float>>& state() { return state_; }

private:
    TrainConfig cfg_;
    std::map<std::string, Tensor<float>> state_;
    std::map<std::string, double> lr_scale_;
};

template <class S>
struct TrainResult {
    ParameterStore<S> params;
    std::vector<std::string> log_lines;
    int64_t final_step = 0;
};

/// Deterministic training loop. Resuming from a checkpoint at step k
/// reproduces the uninterrupted run bit-exactly (float32 parameters and
/// optimizer state, stateless per-step batch sampling).
template <class S>
TrainResult<S> train(const NetworkConfig& cfg, const TrainConfig& tcfg,
                     const std::vector<PairedSample<S>>& dataset,
                     const std::string& out_dir = "", const std::string& resume_path = "") {
    cfg.validate();
    tcfg.validate();
    if (dataset.empty()) throw ConfigError("train: dataset must be non-empty");
    TrainResult<S> result{init_parameters<S>(cfg, tcfg.seed), {}, 0};
    AdamOptimizer<S> opt(result.params, tcfg);
    int64_t start_step = 0;
    if (!resume_path.empty()) {
        CheckpointData ck = load_checkpoint(resume_path);
        if (ck.config_hash != cfg.hash())
            throw CheckpointError("manifest hash mismatch: checkpoint " + resume_path +
                                  " was written for a different model config");
        unpack_params(ck, result.params);
        for (auto& [name, t] : opt.state()) {
            auto it = ck.tensors.find(name);
            if (it == ck.tensors.end()) throw CheckpointError("checkpoint missing " + name);
            t = it->second;
        }
        start_step = ck.step;
        result.final_step = start_step;
    }

    std::ofstream log_file;
    if (!out_dir.empty()) {
        std::filesystem::create_directories(out_dir);
        log_file.open(out_dir + "/log.txt", start_step > 0 ? std::ios::app : std::ios::trunc);
    }
    auto emit = [&](const std::string& line) {
        result.log_lines.push_back(line);
        if (log_file.is_open()) log_file << line << "\n" << std::flush;
    };
    auto save = [&](const std::string& name, int64_t step) {
        if (out_dir.empty()) return;
        CheckpointData ck;
        ck.config_hash = cfg.hash();
        ck.step = step;
        ck.seed = tcfg.seed;
        pack_params(ck, result.params);
        for (const auto& [n, t] : opt.state()) ck.tensors.emplace(n, t);
        save_checkpoint(out_dir + "/" + name, ck);
    };

    const int n = static_cast<int>(dataset.size());
    for (int64_t step = start_step; step < tcfg.steps; ++step) {
        if (tcfg.halt_step > 0 && step >= tcfg.halt_step) break;
        // Round-robin over a per-epoch shuffle: every sample is visited
        // exactly once per epoch, and the order is a pure function of
        // (seed, epoch) so resumed runs draw identical batches.
        std::vector<int> idx;
        for (int b = 0; b < tcfg.batch_size; ++b) {
            int64_t pos = step * tcfg.batch_size + b;
            uint64_t epoch = static_cast<uint64_t>(pos / n);
            Rng rng = stream_rng(tcfg.seed ^ 0x5A17B0A7ull, epoch);
            std::vector<int> perm(static_cast<size_t>(n));
            for (int i = 0; i < n; ++i) perm[static_cast<size_t>(i)] = i;
            for (int i = n - 1; i > 0; --i)
                std::swap(perm[static_cast<size_t>(i)],
                          perm[static_cast<size_t>(rng.uniform_int(0, i))]);
            idx.push_back(perm[static_cast<size_t>(pos % n)]);
        }
        auto [x, y] = train_detail::make_batch(dataset, idx);
        // Dataset images may be any size; the network wants aligned dims.
        // Pad input and target identically so the loss sees matched pixels.
        const int mult = 2 << cfg.stages;
        if (x.dim(1) % mult != 0 || x.dim(2) % mult != 0) {
            x = reflect_pad_to_multiple(x, mult).first;
            y = reflect_pad_to_multiple(y, mult).first;
        }

        Tape<S> tape;
        Graph<S> g{tape, result.params, cfg};
        g.training = true;
        auto in = tape.leaf(x);
        auto hs = network_forward_g(g, in);
        auto loss = tape.charbonnier(hs.output, y, S(1e-3));
        if (tcfg.loss == LossKind::charbonnier_ssim)
            loss = tape.add(loss, tape.scale(train_detail::ssim_penalty_g(g, hs.output, y),
                                             static_cast<S>(tcfg.ssim_weight)));
        double loss_val = static_cast<double>(tape.val(loss)[0]);
        if (!std::isfinite(loss_val))
            throw NumericError("train: non-finite loss at step " + std::to_string(step));
        tape.backward(loss);
        auto grads = g.trainable_grads();
        opt.step(result.params, grads, step);

        char buf[160];
        std::snprintf(buf, sizeof(buf), "step=%lld loss=%.6f", static_cast<long long>(step),
                      loss_val);
        std::string line = buf;
        if (tcfg.eval_every > 0 && (step + 1) % tcfg.eval_every == 0) {
            std::vector<PairedSample<S>> probe(dataset.begin(),
                                               dataset.begin() + std::min<size_t>(4, dataset.size()));
            MetricReport rep = evaluate(result.params, cfg, probe);
            std::snprintf(buf, sizeof(buf), " psnr=%.4f ssim=%.6f", rep.psnr_db, rep.ssim_val);
            line += buf;
        }
        emit(line);
        if (tcfg.checkpoint_every > 0 && (step + 1) % tcfg.checkpoint_every == 0 &&
            step + 1 < tcfg.steps)
            save("step_" + std::to_string(step + 1) + ".ckpt", step + 1);
        result.final_step = step + 1;
    }
    save("final.ckpt", result.final_step);
    return result;
}

}  // namespace clearsky
