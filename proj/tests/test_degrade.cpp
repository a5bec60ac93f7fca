#include <gtest/gtest.h>

#include "test_util.hpp"

using namespace clearsky;
using testutil::random_tensor;

TEST(Degrade, HazeClosedForm) {
    // I = J*t + A*(1-t): a 0.4 pixel with A=0.85, t=0.65 lands at
    // 0.4*0.65 + 0.85*0.35 = 0.5575 exactly.
    Tensor<double> img(Shape{1, 2, 2, 3}, 0.4);
    auto hazy = add_haze(img, 0.85, 0.65);
    for (int64_t i = 0; i < hazy.numel(); ++i) EXPECT_NEAR(hazy[i], 0.5575, 1e-12);
}

TEST(Degrade, HazeRejectsNonPositiveTransmission) {
    Tensor<double> img(Shape{1, 2, 2, 3}, 0.4);
    EXPECT_THROW(add_haze(img, 0.85, 0.0), ConfigError);
}

TEST(Degrade, TransmissionFieldStaysNearBase) {
    DegradationSpec spec;
    spec.kind = DegradationKind::haze;
    spec.transmission = 0.65;
    spec.seed = 5;
    auto field = make_transmission_field<double>(spec, 32, 32);
    for (int64_t i = 0; i < field.numel(); ++i) {
        EXPECT_GT(field[i], 0.0);
        EXPECT_NEAR(field[i], 0.65, 0.1500001);
    }
}

TEST(Degrade, ZeroDensityIsBitExactIdentity) {
    auto img = random_tensor(Shape{1, 24, 24, 3}, 80, 0.0, 1.0);
    for (auto kind : {DegradationKind::rain_streak, DegradationKind::raindrop,
                      DegradationKind::snow}) {
        DegradationSpec spec;
        spec.kind = kind;
        spec.density = 0.0;
        spec.intensity = 0.0;
        spec.seed = 6;
        auto out = apply_degradation(img, spec);
        EXPECT_DOUBLE_EQ(testutil::max_abs_diff(out, img), 0.0) << kind_name(kind);
    }
}

TEST(Degrade, DeterministicInSeed) {
    auto img = random_tensor(Shape{1, 32, 32, 3}, 81, 0.0, 1.0);
    for (auto kind : {DegradationKind::rain_streak, DegradationKind::raindrop,
                      DegradationKind::haze, DegradationKind::snow, DegradationKind::mixed}) {
        DegradationSpec spec;
        spec.kind = kind;
        spec.seed = 7;
        auto a = apply_degradation(img, spec);
        auto b = apply_degradation(img, spec);
        EXPECT_DOUBLE_EQ(testutil::max_abs_diff(a, b), 0.0) << kind_name(kind);
        spec.seed = 8;
        auto c = apply_degradation(img, spec);
        EXPECT_GT(testutil::max_abs_diff(a, c), 0.0) << kind_name(kind);
    }
}

TEST(Degrade, RaindropCountAndMask) {
    DegradationSpec spec;
    spec.kind = DegradationKind::raindrop;
    spec.density = 1.5;
    spec.seed = 9;
    const int h = 48, w = 48;
    auto drops = raindrop_placements(spec, h, w);
    const size_t expect_max = static_cast<size_t>(spec.density * h * w / 3000.0);
    EXPECT_GT(drops.size(), 0u);
    EXPECT_LE(drops.size(), expect_max);
    // Pixels outside every drop's ellipse are untouched.
    auto img = random_tensor(Shape{1, h, w, 3}, 82, 0.0, 1.0);
    auto out = add_raindrops(img, spec);
    int changed = 0;
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) {
            bool inside = false;
            for (const auto& d : drops) {
                double dy = (i - d.cy) / d.ry, dx = (j - d.cx) / d.rx;
                if (dy * dy + dx * dx <= 1.0) inside = true;
            }
            for (int c = 0; c < 3; ++c) {
                bool diff = out.at4(0, i, j, c) != img.at4(0, i, j, c);
                if (diff) ++changed;
                if (!inside) EXPECT_FALSE(diff) << "pixel (" << i << "," << j << ") outside mask";
            }
        }
    EXPECT_GT(changed, 0);
}

TEST(Degrade, SnowHasExactOpaqueFlakeColor) {
    DegradationSpec spec;
    spec.kind = DegradationKind::snow;
    spec.density = 2.0;
    spec.intensity = 0.9;
    spec.seed = 10;
    Tensor<double> img(Shape{1, 48, 48, 3}, 0.2);
    auto out = add_snow(img, spec);
    bool found = false;
    for (int i = 0; i < 48 && !found; ++i)
        for (int j = 0; j < 48 && !found; ++j)
            if (out.at4(0, i, j, 0) == 0.95 && out.at4(0, i, j, 1) == 0.97 &&
                out.at4(0, i, j, 2) == 1.0)
                found = true;
    EXPECT_TRUE(found);
}

TEST(Degrade, RainDarkensOrBrightensButStaysInRange) {
    auto img = random_tensor(Shape{1, 48, 48, 3}, 83, 0.1, 0.9);
    DegradationSpec spec;
    spec.kind = DegradationKind::rain_streak;
    spec.seed = 11;
    auto out = add_rain_streaks(img, spec);
    for (int64_t i = 0; i < out.numel(); ++i) {
        EXPECT_GE(out[i], 0.0);
        EXPECT_LE(out[i], 1.0);
    }
    EXPECT_GT(testutil::max_abs_diff(out, img), 0.0);
}

TEST(Degrade, MixedDegradesAtLeastAsMuchAsComponents) {
    auto img = make_clean_image<double>(48, 48, 12);
    DegradationSpec single;
    single.kind = DegradationKind::haze;
    single.seed = 13;
    DegradationSpec mixed;
    mixed.kind = DegradationKind::mixed;
    mixed.seed = 13;
    double p_clean = psnr(img, img);
    double p_single = psnr(apply_degradation(img, single), img);
    double p_mixed = psnr(apply_degradation(img, mixed), img);
    EXPECT_EQ(p_clean, 100.0);  // capped identical-image value
    EXPECT_LT(p_single, 100.0);
    EXPECT_LT(p_mixed, 40.0);
}

TEST(Degrade, SynthSampleIsPureInSeedAndIndex) {
    auto specs = default_specs();
    auto a = synth_sample<float>(32, 32, specs, 99, 3);
    auto b = synth_sample<float>(32, 32, specs, 99, 3);
    EXPECT_EQ(a.clean.vec(), b.clean.vec());
    EXPECT_EQ(a.degraded.vec(), b.degraded.vec());
    auto c = synth_sample<float>(32, 32, specs, 99, 4);
    EXPECT_NE(a.degraded.vec(), c.degraded.vec());
}
