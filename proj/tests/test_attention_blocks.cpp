#include <gtest/gtest.h>

#include "test_util.hpp"

using namespace clearsky;
using testutil::random_tensor;
using Var = Tape<double>::Var;

namespace {

NetworkConfig small_cfg() {
    NetworkConfig cfg;
    cfg.stages = 3;
    cfg.base_channels = 4;
    cfg.query_len = 6;
    cfg.head_count = 2;
    cfg.key_dim = 4;
    cfg.attn_window = 4;
    return cfg;
}

}  // namespace

TEST(Attention, ZeroQueryAveragesValues) {
    // All-zero queries give uniform weights, so the output row is the mean
    // of the value rows regardless of the keys.
    Tensor<double> q(Shape{1, 1}, {0.0});
    Tensor<double> k(Shape{2, 1}, {0.4, -1.7});
    Tensor<double> v(Shape{2, 1}, {1.0, 3.0});
    auto out = scaled_dot_attention(q, k, v);
    ASSERT_EQ(out.rank(), 2);
    EXPECT_NEAR(out.at2(0, 0), 2.0, 1e-12);
}

TEST(Attention, HandEvaluatedExample) {
    // q=[1,0], k rows [1,0],[0,1], v rows [1,2],[3,4], d=2. Weights are
    // softmax([1/sqrt(2), 0]); constants frozen from an independent
    // evaluation of the closed-form expression.
    Tensor<double> q(Shape{1, 2}, {1.0, 0.0});
    Tensor<double> k(Shape{2, 2}, {1.0, 0.0, 0.0, 1.0});
    Tensor<double> v(Shape{2, 2}, {1.0, 2.0, 3.0, 4.0});
    auto out = scaled_dot_attention(q, k, v);
    EXPECT_NEAR(out.at2(0, 0), 1.6604769013466862, 1e-12);
    EXPECT_NEAR(out.at2(0, 1), 2.6604769013466862, 1e-12);
}

TEST(Attention, IdenticalKeysIgnoreQuery) {
    // Every key identical: weights are uniform whatever the query is.
    Tensor<double> q(Shape{1, 3}, {2.0, -1.0, 0.5});
    Tensor<double> k(Shape{3, 3});
    for (int64_t i = 0; i < k.numel(); ++i) k[i] = 0.7;
    Tensor<double> v(Shape{3, 1}, {3.0, 6.0, 9.0});
    auto out = scaled_dot_attention(q, k, v);
    EXPECT_NEAR(out.at2(0, 0), 6.0, 1e-12);
}

TEST(Attention, ShapeMismatchThrows) {
    Tensor<double> q(Shape{1, 3});
    Tensor<double> k(Shape{2, 4});
    Tensor<double> v(Shape{2, 1});
    EXPECT_THROW(scaled_dot_attention(q, k, v), ShapeError);
}

TEST(Tipb, OutputShapeMatchesInput) {
    auto cfg = small_cfg();
    ParameterStore<double> params = init_parameters<double>(cfg, 11);
    Tape<double> t;
    Graph<double> g{t, params, cfg};
    auto x = t.leaf(random_tensor(Shape{1, 8, 8, cfg.base_channels * 2}, 50, 0.0, 1.0));
    auto y = tipb_forward_g(g, x, 0);
    EXPECT_EQ(t.val(y).shape(), (Shape{1, 8, 8, cfg.base_channels * 2}));
    EXPECT_TRUE(t.val(y).all_finite());
}

TEST(Tipb, OddSpatialDimsRejected) {
    auto cfg = small_cfg();
    ParameterStore<double> params = init_parameters<double>(cfg, 11);
    Tape<double> t;
    Graph<double> g{t, params, cfg};
    auto x = t.leaf(random_tensor(Shape{1, 7, 8, cfg.base_channels * 2}, 51));
    EXPECT_THROW(tipb_forward_g(g, x, 0), ShapeError);
}

TEST(Tsg, ZeroProjectionsLeaveInputUnchanged) {
    // The generator is residual: zeroing its projection weights makes it
    // the identity map on the decoder features.
    auto cfg = small_cfg();
    ParameterStore<double> params = init_parameters<double>(cfg, 12);
    for (auto& [name, entry] : params)
        if (name.rfind("tsg0.", 0) == 0)
            for (int64_t i = 0; i < entry.value.numel(); ++i) entry.value[i] = 0.0;
    Tape<double> t;
    Graph<double> g{t, params, cfg};
    int cd = cfg.base_channels << (cfg.stages - 1);
    auto x = random_tensor(Shape{1, 4, 4, cd}, 52);
    auto xv = t.leaf(x);
    auto qmap = t.leaf(random_tensor(Shape{1, 2, 2, cfg.base_channels << 3}, 53));
    auto y = task_sequence_generator_g(g, xv, qmap, 0);
    EXPECT_LT(testutil::max_abs_diff(t.val(y), x), 1e-12);
}

TEST(Fuse, RejectsFewerThanThreeInputs) {
    auto cfg = small_cfg();
    ParameterStore<double> params = init_parameters<double>(cfg, 13);
    Tape<double> t;
    Graph<double> g{t, params, cfg};
    auto a = t.leaf(random_tensor(Shape{1, 8, 8, cfg.base_channels * 2}, 54));
    EXPECT_THROW(task_query_fuse_g(g, {a, a}), ConfigError);
}

TEST(Fuse, OutputShapeAndZeroInputs) {
    auto cfg = small_cfg();
    ParameterStore<double> params = init_parameters<double>(cfg, 14);
    Tape<double> t;
    Graph<double> g{t, params, cfg};
    int b = cfg.base_channels;
    auto t1 = t.leaf(Tensor<double>(Shape{1, 8, 8, 2 * b}));
    auto t2 = t.leaf(Tensor<double>(Shape{1, 4, 4, 4 * b}));
    auto t3 = t.leaf(Tensor<double>(Shape{1, 2, 2, 8 * b}));
    auto q = task_query_fuse_g(g, {t1, t2, t3});
    const auto& qv = t.val(q);
    EXPECT_EQ(qv.shape(), (Shape{1, 2, 2, cfg.base_channels << 3}));
    // All-zero inputs pass only bias terms through the fusion convs.
    EXPECT_TRUE(qv.all_finite());
}

TEST(Mixup, GateAlgebra) {
    auto a = random_tensor(Shape{1, 3, 3, 2}, 55);
    auto b = random_tensor(Shape{1, 3, 3, 2}, 56);
    // theta = 0: exact arithmetic mean.
    auto mid = adaptive_mixup(a, b, 0.0);
    for (int64_t i = 0; i < a.numel(); ++i)
        EXPECT_NEAR(mid[i], 0.5 * (a[i] + b[i]), 1e-12);
    // Saturated gates.
    auto down = adaptive_mixup(a, b, 30.0);
    auto up = adaptive_mixup(a, b, -30.0);
    EXPECT_LT(testutil::max_abs_diff(down, a), 1e-9);
    EXPECT_LT(testutil::max_abs_diff(up, b), 1e-9);
    // Equal inputs are a fixed point for any gate.
    auto same = adaptive_mixup(a, a, 0.37);
    EXPECT_LT(testutil::max_abs_diff(same, a), 1e-12);
    // Spot value at theta = 0.7 against the frozen sigmoid constant.
    auto mix = adaptive_mixup(a, b, 0.7);
    const double s = 0.6681877721681662;
    for (int64_t i = 0; i < a.numel(); ++i)
        EXPECT_NEAR(mix[i], s * a[i] + (1.0 - s) * b[i], 1e-12);
}

TEST(Spectral, IdentityHookBypassesFrequencyPath) {
    auto cfg = small_cfg();
    ParameterStore<double> params = init_parameters<double>(cfg, 15);
    Tape<double> t;
    Graph<double> g{t, params, cfg};
    g.spectral_identity = true;
    auto x = random_tensor(Shape{1, 8, 8, cfg.base_channels * 2}, 57);
    auto y = spectral_transform_g(g, t.leaf(x), "ffc1.spec");
    EXPECT_LT(testutil::max_abs_diff(t.val(y), x), 1e-9);
}

TEST(Spectral, NonFiniteInputRejected) {
    auto cfg = small_cfg();
    ParameterStore<double> params = init_parameters<double>(cfg, 15);
    Tape<double> t;
    Graph<double> g{t, params, cfg};
    auto x = random_tensor(Shape{1, 8, 8, cfg.base_channels * 2}, 58);
    x[3] = std::numeric_limits<double>::quiet_NaN();
    EXPECT_THROW(spectral_transform_g(g, t.leaf(x), "ffc1.spec"), NumericError);
}

TEST(Ffc, PreservesShapeAndSplitsChannels) {
    auto cfg = small_cfg();
    ParameterStore<double> params = init_parameters<double>(cfg, 16);
    Tape<double> t;
    Graph<double> g{t, params, cfg};
    auto x = t.leaf(random_tensor(Shape{1, 8, 8, cfg.base_channels * 2}, 59));
    auto y = ffc_forward_g(g, x, "ffc1");
    EXPECT_EQ(t.val(y).shape(), (Shape{1, 8, 8, cfg.base_channels * 2}));
    EXPECT_TRUE(t.val(y).all_finite());
}

TEST(Encoder, HalvesSpatialDoublesChannels) {
    auto cfg = small_cfg();
    ParameterStore<double> params = init_parameters<double>(cfg, 17);
    Tape<double> t;
    Graph<double> g{t, params, cfg};
    auto x = t.leaf(random_tensor(Shape{1, 16, 16, cfg.base_channels}, 60));
    auto y = encoder_stage_forward_g(g, x, 0);
    EXPECT_EQ(t.val(y).shape(), (Shape{1, 8, 8, cfg.base_channels * 2}));
}
