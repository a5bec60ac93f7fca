#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "test_util.hpp"

using namespace clearsky;
namespace fs = std::filesystem;

namespace {

NetworkConfig tiny_cfg() {
    NetworkConfig cfg;
    cfg.stages = 3;
    cfg.base_channels = 4;
    cfg.query_len = 6;
    cfg.head_count = 2;
    cfg.key_dim = 4;
    cfg.attn_window = 4;
    return cfg;
}

std::string temp_dir(const char* tag) {
    auto p = fs::temp_directory_path() / (std::string("clearsky_test_") + tag);
    fs::remove_all(p);
    fs::create_directories(p);
    return p.string();
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST(Checkpoint, RoundTripIsBitExact) {
    auto cfg = tiny_cfg();
    auto params = init_parameters<float>(cfg, 21);
    CheckpointData ck;
    ck.config_hash = cfg.hash();
    ck.step = 17;
    ck.seed = 21;
    pack_params(ck, params);
    auto dir = temp_dir("ckpt");
    save_checkpoint(dir + "/a.ckpt", ck);
    CheckpointData back = load_checkpoint(dir + "/a.ckpt");
    EXPECT_EQ(back.config_hash, ck.config_hash);
    EXPECT_EQ(back.step, 17);
    EXPECT_EQ(back.seed, 21u);
    ASSERT_EQ(back.tensors.size(), ck.tensors.size());
    for (const auto& [name, t] : ck.tensors) {
        auto it = back.tensors.find(name);
        ASSERT_NE(it, back.tensors.end()) << name;
        EXPECT_EQ(it->second.shape(), t.shape());
        EXPECT_EQ(it->second.vec(), t.vec()) << name;
    }
    auto fresh = init_parameters<float>(cfg, 22);
    EXPECT_FALSE(fresh == params);
    unpack_params(back, fresh);
    EXPECT_TRUE(fresh == params);
}

TEST(Checkpoint, CorruptFileRejected) {
    auto dir = temp_dir("ckpt_bad");
    {
        std::ofstream out(dir + "/bad.ckpt", std::ios::binary);
        out << "CLEARSKY-CKPT v1\nconfig=123\nstep=0\nseed=0\ncount=5\n";
        out << "garbage";
    }
    EXPECT_THROW(load_checkpoint(dir + "/bad.ckpt"), CheckpointError);
    EXPECT_THROW(load_checkpoint(dir + "/missing.ckpt"), CheckpointError);
}

TEST(RunConfig, SerializeParseRoundTrip) {
    RunConfig rc;
    rc.model.stages = 3;
    rc.model.base_channels = 8;
    rc.train.steps = 123;
    rc.train.lr = 0.00375;
    rc.train.seed = 99;
    rc.data.image_size = 48;
    rc.data.kinds = "rain_streak,haze";
    std::string text = serialize_config(rc);
    RunConfig back = parse_config(text);
    EXPECT_TRUE(back == rc);
    EXPECT_EQ(serialize_config(back), text);
}

TEST(RunConfig, UnknownKeysRejected) {
    EXPECT_THROW(parse_config("[model]\nstages = 4\nbogus_key = 1\n"), ConfigError);
    try {
        parse_config("[train]\nnot_a_key = 2\n");
        FAIL() << "expected ConfigError";
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("unknown config keys"), std::string::npos);
        EXPECT_NE(std::string(e.what()).find("not_a_key"), std::string::npos);
    }
}

TEST(Train, LossDecreasesOnTinyProblem) {
    auto cfg = tiny_cfg();
    TrainConfig tc;
    tc.steps = 30;
    tc.lr = 2e-3;
    tc.seed = 3;
    auto dataset = synth_dataset<float>(2, 16, 16, default_specs(), 3);
    auto result = train(cfg, tc, dataset);
    ASSERT_EQ(result.log_lines.size(), 30u);
    auto loss_of = [](const std::string& line) {
        auto pos = line.find("loss=");
        return std::stod(line.substr(pos + 5));
    };
    double first = loss_of(result.log_lines.front());
    double last = loss_of(result.log_lines.back());
    EXPECT_LT(last, first);
}

TEST(Train, ResumeReproducesUninterruptedRunExactly) {
    auto cfg = tiny_cfg();
    auto dataset = synth_dataset<float>(3, 16, 16, default_specs(), 5);
    TrainConfig tc;
    tc.steps = 12;
    tc.lr = 1e-3;
    tc.seed = 5;

    auto dir_full = temp_dir("resume_full");
    auto full = train(cfg, tc, dataset, dir_full);

    auto dir_split = temp_dir("resume_split");
    TrainConfig tc_halt = tc;
    tc_halt.halt_step = 6;
    auto part1 = train(cfg, tc_halt, dataset, dir_split);
    EXPECT_EQ(part1.final_step, 6);
    auto part2 = train(cfg, tc, dataset, dir_split, dir_split + "/final.ckpt");
    EXPECT_EQ(part2.final_step, 12);

    EXPECT_TRUE(full.params == part2.params);
    EXPECT_EQ(slurp(dir_full + "/log.txt"), slurp(dir_split + "/log.txt"));
    // The checkpoints on disk are byte-identical too.
    EXPECT_EQ(slurp(dir_full + "/final.ckpt"), slurp(dir_split + "/final.ckpt"));
}

TEST(Train, ResumeWithWrongConfigRejected) {
    auto cfg = tiny_cfg();
    auto dataset = synth_dataset<float>(2, 16, 16, default_specs(), 6);
    TrainConfig tc;
    tc.steps = 2;
    tc.seed = 6;
    auto dir = temp_dir("resume_wrong");
    train(cfg, tc, dataset, dir);
    auto other = cfg;
    other.base_channels = 8;
    EXPECT_THROW(train(other, tc, dataset, dir, dir + "/final.ckpt"), CheckpointError);
}

TEST(Train, CosineScheduleEndpoints) {
    TrainConfig tc;
    tc.steps = 100;
    tc.lr = 1e-3;
    EXPECT_NEAR(tc.lr_at(0), 1e-3, 1e-12);
    EXPECT_NEAR(tc.lr_at(100), 1e-3 * tc.lr_min_factor, 1e-12);
    EXPECT_GT(tc.lr_at(25), tc.lr_at(75));
}
