// Batch command-line surface: synth / train / eval / restore.

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "clearsky/clearsky.hpp"
#include "clearsky/png_io.hpp"

namespace fs = std::filesystem;
using namespace clearsky;

using Scalar = float;

namespace {

std::string pad5(int k) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%05d", k);
    return buf;
}

RunConfig load_run_config(const std::string& path, long long seed_override) {
    RunConfig rc;
    if (!path.empty()) rc = parse_config_file(path);
    if (seed_override >= 0) rc.train.seed = static_cast<uint64_t>(seed_override);
    rc.model.validate();
    return rc;
}

int cmd_synth(const std::string& config_path, const std::string& out_dir, int n,
              long long seed_override) {
    RunConfig rc = load_run_config(config_path, seed_override);
    if (n < 1) throw ConfigError("n must be >= 1");
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    {
        std::ofstream probe(out_dir + "/.write_probe");
        if (!probe) throw IoError("output directory not writable: " + out_dir);
    }
    fs::remove(out_dir + "/.write_probe");
    auto specs = rc.data.specs();
    int hw = rc.data.image_size;
    std::ofstream manifest(out_dir + "/manifest.txt");
    manifest << "count=" << n << " size=" << hw << "x" << hw << " seed=" << rc.train.seed << "\n";
    for (int k = 0; k < n; ++k) {
        PairedSample<Scalar> s = synth_sample<Scalar>(hw, hw, specs, rc.train.seed, k);
        write_png(out_dir + "/clean_" + pad5(k) + ".png", s.clean);
        write_png(out_dir + "/degraded_" + pad5(k) + ".png", s.degraded);
        manifest << "k=" << k << " kind=" << kind_name(s.spec.kind) << " density=" << s.spec.density
                 << " intensity=" << s.spec.intensity << " angle_deg=" << s.spec.angle_deg
                 << " A=" << s.spec.atmospheric_light << " t=" << s.spec.transmission
                 << " seed=" << s.spec.seed << "\n";
    }
    if (!manifest) throw IoError("failed writing manifest in " + out_dir);
    return 0;
}

std::vector<PairedSample<Scalar>> load_dataset(const std::string& data_dir) {
    if (!fs::is_directory(data_dir)) throw IoError("data directory not found: " + data_dir);
    std::vector<PairedSample<Scalar>> out;
    for (int k = 0;; ++k) {
        std::string clean = data_dir + "/clean_" + pad5(k) + ".png";
        std::string degraded = data_dir + "/degraded_" + pad5(k) + ".png";
        if (!fs::exists(clean) || !fs::exists(degraded)) break;
        PairedSample<Scalar> s;
        s.clean = read_png<Scalar>(clean);
        s.degraded = read_png<Scalar>(degraded);
        out.push_back(std::move(s));
    }
    if (out.empty()) throw IoError("no clean_/degraded_ PNG pairs in " + data_dir);
    return out;
}

int cmd_train(const std::string& config_path, const std::string& data_dir,
              const std::string& out_dir, const std::string& resume, long long seed_override) {
    RunConfig rc = load_run_config(config_path, seed_override);
    auto dataset = load_dataset(data_dir);
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    TrainResult<Scalar> result = train(rc.model, rc.train, dataset, out_dir, resume);
    std::cout << "trained to step " << result.final_step << "; checkpoint " << out_dir
              << "/final.ckpt\n";
    return 0;
}

ParameterStore<Scalar> load_model(const std::string& ckpt_path, const NetworkConfig& cfg) {
    if (!fs::exists(ckpt_path)) throw IoError("checkpoint not found: " + ckpt_path);
    CheckpointData ck = load_checkpoint(ckpt_path);
    if (ck.config_hash != cfg.hash())
        throw CheckpointError("manifest hash mismatch: checkpoint " + ckpt_path +
                              " does not match the model config");
    ParameterStore<Scalar> params = init_parameters<Scalar>(cfg, ck.seed);
    unpack_params(ck, params);
    return params;
}

int cmd_eval(const std::string& config_path, const std::string& ckpt_path,
             const std::string& data_dir, long long seed_override) {
    RunConfig rc = load_run_config(config_path, seed_override);
    auto dataset = load_dataset(data_dir);
    ParameterStore<Scalar> params = load_model(ckpt_path, rc.model);
    MetricReport rep = evaluate(params, rc.model, dataset);
    std::printf("psnr=%.4f ssim=%.6f n=%zu\n", rep.psnr_db, rep.ssim_val, rep.per_sample.size());
    return 0;
}

int cmd_restore(const std::string& config_path, const std::string& ckpt_path,
                const std::string& in_path, const std::string& out_path,
                long long seed_override) {
    RunConfig rc = load_run_config(config_path, seed_override);
    ParameterStore<Scalar> params = load_model(ckpt_path, rc.model);
    Tensor<Scalar> img = read_png<Scalar>(in_path);
    if (img.dim(1) < 8 || img.dim(2) < 8)
        throw ConfigError("input image must be at least 8x8 pixels");
    Tensor<Scalar> out = restore_image(img, params, rc.model);
    write_png(out_path, out);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    // TOOL_THREADS=1 selects the deterministic mode; every code path here is
    // already single-threaded, so the variable is accepted and recorded only.
    const char* threads = std::getenv("TOOL_THREADS");
    (void)threads;

    CLI::App app{"multi-weather image restoration toolbox"};
    app.require_subcommand(1);
    std::string config_path, out_dir, data_dir, resume, ckpt, in_path, out_path;
    long long seed = -1;
    int n = 16;

    auto* synth = app.add_subcommand("synth", "generate paired degraded/clean PNGs");
    synth->add_option("--config", config_path, "run config file");
    synth->add_option("--out", out_dir, "output directory")->required();
    synth->add_option("--n", n, "number of pairs");
    synth->add_option("--seed", seed, "seed override");

    auto* tr = app.add_subcommand("train", "train on a synthesized dataset");
    tr->add_option("--config", config_path, "run config file");
    tr->add_option("--data", data_dir, "dataset directory")->required();
    tr->add_option("--out", out_dir, "output directory")->required();
    tr->add_option("--resume", resume, "checkpoint to resume from");
    tr->add_option("--seed", seed, "seed override");

    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
    ev->add_option("--config", config_path, "run config file");
    ev->add_option("--ckpt", ckpt, "checkpoint path")->required();
    ev->add_option("--data", data_dir, "dataset directory")->required();
    ev->add_option("--seed", seed, "seed override");

    auto* re = app.add_subcommand("restore", "restore a single PNG");
    re->add_option("--config", config_path, "run config file");
    re->add_option("--ckpt", ckpt, "checkpoint path")->required();
    re->add_option("--in", in_path, "input PNG")->required();
    re->add_option("--out", out_path, "output PNG")->required();
    re->add_option("--seed", seed, "seed override");

    CLI11_PARSE(app, argc, argv);

    try {
        if (synth->parsed()) return cmd_synth(config_path, out_dir, n, seed);
        if (tr->parsed()) return cmd_train(config_path, data_dir, out_dir, resume, seed);
        if (ev->parsed()) return cmd_eval(config_path, ckpt, data_dir, seed);
        if (re->parsed()) return cmd_restore(config_path, ckpt, in_path, out_path, seed);
    } catch (const CheckpointError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
