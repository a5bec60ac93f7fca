#include <gtest/gtest.h>

#include "test_util.hpp"

using namespace clearsky;
using testutil::grad_check;
using testutil::random_tensor;
using Var = Tape<double>::Var;

TEST(Tensor, ShapeAndAccessors) {
    Tensor<double> t(Shape{2, 3, 4, 5});
    EXPECT_EQ(t.rank(), 4);
    EXPECT_EQ(t.numel(), 120);
    t.at4(1, 2, 3, 4) = 7.0;
    EXPECT_DOUBLE_EQ(t[t.numel() - 1], 7.0);
    EXPECT_THROW(t.reshaped(Shape{7}), ShapeError);
    EXPECT_TRUE(t.all_finite());
    t[0] = std::nan("");
    EXPECT_FALSE(t.all_finite());
}

TEST(Autograd, ElementwiseGrads) {
    auto a = random_tensor(Shape{3, 4}, 1);
    auto b = random_tensor(Shape{3, 4}, 2, 0.5, 1.5);
    double err = grad_check({a, b}, [](Tape<double>& t, const std::vector<Var>& v) {
        auto x = t.mul(t.add(v[0], v[1]), t.sub(v[0], v[1]));
        auto y = t.div(x, v[1]);
        return t.sum(t.mul(y, t.sigmoid(v[0])));
    });
    EXPECT_LT(err, 1e-6);
}

TEST(Autograd, ReluGrad) {
    // Keep inputs away from the kink so the finite difference is valid.
    auto a = random_tensor(Shape{4, 4}, 3);
    for (int64_t i = 0; i < a.numel(); ++i)
        if (std::abs(a[i]) < 0.05) a[i] = 0.1;
    double err = grad_check({a}, [](Tape<double>& t, const std::vector<Var>& v) {
        return t.sum(t.relu(v[0]));
    });
    EXPECT_LT(err, 1e-6);
}

TEST(Autograd, GatedMixGrad) {
    auto a = random_tensor(Shape{2, 3}, 4);
    auto b = random_tensor(Shape{2, 3}, 5);
    Tensor<double> theta(Shape{1}, 0.7);
    double err = grad_check({a, b, theta}, [](Tape<double>& t, const std::vector<Var>& v) {
        return t.sum(t.gated_mix(v[0], v[1], v[2]));
    });
    EXPECT_LT(err, 1e-6);
}

TEST(Autograd, SoftmaxRowsSumToOne) {
    Tape<double> t;
    auto x = t.leaf(random_tensor(Shape{5, 7}, 6, -8.0, 8.0));
    auto s = t.softmax(x);
    const auto& sv = t.val(s);
    for (int r = 0; r < 5; ++r) {
        double row = 0.0;
        for (int c = 0; c < 7; ++c) row += sv.at2(r, c);
        EXPECT_NEAR(row, 1.0, 1e-12);
    }
}

TEST(Autograd, SoftmaxGrad) {
    auto a = random_tensor(Shape{3, 5}, 7);
    auto w = random_tensor(Shape{3, 5}, 8);
    double err = grad_check({a}, [&](Tape<double>& t, const std::vector<Var>& v) {
        return t.sum(t.mul(t.softmax(v[0]), t.leaf(w)));
    });
    EXPECT_LT(err, 1e-6);
}

TEST(Autograd, BmmMatchesManualAndGrads) {
    // 2x3 times 3x2, hand-computed.
    Tensor<double> a(Shape{2, 3}, {1, 2, 3, 4, 5, 6});
    Tensor<double> b(Shape{3, 2}, {7, 8, 9, 10, 11, 12});
    Tape<double> t;
    auto y = t.bmm(t.leaf(a), t.leaf(b));
    const auto& yv = t.val(y);
    EXPECT_DOUBLE_EQ(yv.at2(0, 0), 58.0);
    EXPECT_DOUBLE_EQ(yv.at2(0, 1), 64.0);
    EXPECT_DOUBLE_EQ(yv.at2(1, 0), 139.0);
    EXPECT_DOUBLE_EQ(yv.at2(1, 1), 154.0);

    auto aa = random_tensor(Shape{2, 4, 3}, 9);
    auto bb = random_tensor(Shape{2, 5, 3}, 10);
    double err = grad_check({aa, bb}, [](Tape<double>& t2, const std::vector<Var>& v) {
        return t2.sum(t2.bmm(v[0], v[1], false, true));
    });
    EXPECT_LT(err, 1e-6);
}

TEST(Autograd, SliceConcatRoundTripAndGrads) {
    auto a = random_tensor(Shape{2, 6}, 11);
    Tape<double> t;
    auto x = t.leaf(a);
    auto left = t.slice(x, 1, 0, 2);
    auto right = t.slice(x, 1, 2, 4);
    auto back = t.concat(1, {left, right});
    EXPECT_DOUBLE_EQ(testutil::max_abs_diff(t.val(back), a), 0.0);

    double err = grad_check({a}, [](Tape<double>& t2, const std::vector<Var>& v) {
        auto l = t2.slice(v[0], 1, 1, 3);
        return t2.sum(t2.mul(l, l));
    });
    EXPECT_LT(err, 1e-6);
}

TEST(Autograd, Conv2dMatchesDirectOracle) {
    // Independent direct convolution with same zero-padding.
    auto x = random_tensor(Shape{1, 5, 6, 2}, 12);
    auto w = random_tensor(Shape{3, 3, 2, 3}, 13);
    auto b = random_tensor(Shape{3}, 14);
    Tape<double> t;
    auto y = t.conv2d(t.leaf(x), t.leaf(w), t.leaf(b));
    const auto& yv = t.val(y);
    ASSERT_EQ(yv.dim(1), 5);
    ASSERT_EQ(yv.dim(2), 6);
    for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 6; ++j)
            for (int co = 0; co < 3; ++co) {
                double acc = b[co];
                for (int ki = 0; ki < 3; ++ki)
                    for (int kj = 0; kj < 3; ++kj) {
                        int si = i + ki - 1, sj = j + kj - 1;
                        if (si < 0 || si >= 5 || sj < 0 || sj >= 6) continue;
                        for (int ci = 0; ci < 2; ++ci)
                            acc += x.at4(0, si, sj, ci) * w.at4(ki, kj, ci, co);
                    }
                EXPECT_NEAR(yv.at4(0, i, j, co), acc, 1e-12);
            }
}

TEST(Autograd, Conv2dGradsIncludingStride) {
    auto x = random_tensor(Shape{1, 4, 4, 2}, 15);
    auto w = random_tensor(Shape{3, 3, 2, 2}, 16);
    auto b = random_tensor(Shape{2}, 17);
    double err = grad_check({x, w, b}, [](Tape<double>& t, const std::vector<Var>& v) {
        auto y = t.conv2d(v[0], v[1], v[2], 2);
        return t.sum(t.mul(y, y));
    }, 1e-5);
    EXPECT_LT(err, 1e-5);
}

TEST(Autograd, BilinearResizeGrads) {
    auto x = random_tensor(Shape{1, 4, 4, 2}, 18);
    double err = grad_check({x}, [](Tape<double>& t, const std::vector<Var>& v) {
        auto y = t.bilinear_resize(v[0], 8, 8);
        return t.sum(t.mul(y, y));
    });
    EXPECT_LT(err, 1e-6);
}

TEST(Autograd, BatchnormFrozenStatsGrads) {
    auto x = random_tensor(Shape{1, 3, 3, 2}, 19);
    auto gamma = random_tensor(Shape{2}, 20, 0.5, 1.5);
    auto beta = random_tensor(Shape{2}, 21);
    Tensor<double> mean(Shape{2}, {0.1, -0.2});
    Tensor<double> var(Shape{2}, {0.8, 1.2});
    double err = grad_check({x, gamma, beta}, [&](Tape<double>& t, const std::vector<Var>& v) {
        auto y = t.batchnorm(v[0], v[1], v[2], mean, var, 1e-5);
        return t.sum(t.mul(y, y));
    });
    EXPECT_LT(err, 1e-6);
}

TEST(Autograd, CharbonnierValueAndGrad) {
    Tensor<double> p(Shape{2}, {0.5, 0.25});
    Tensor<double> g(Shape{2}, {0.2, 0.25});
    Tape<double> t;
    auto loss = t.charbonnier(t.leaf(p), g, 1e-3);
    double expect = (std::sqrt(0.3 * 0.3 + 1e-6) + std::sqrt(1e-6)) / 2.0;
    EXPECT_NEAR(t.val(loss)[0], expect, 1e-12);

    auto pr = random_tensor(Shape{3, 3}, 22);
    auto gt = random_tensor(Shape{3, 3}, 23);
    double err = grad_check({pr}, [&](Tape<double>& t2, const std::vector<Var>& v) {
        return t2.charbonnier(v[0], gt, 1e-3);
    });
    EXPECT_LT(err, 1e-6);
}

TEST(Autograd, FourierPairGrads) {
    auto x = random_tensor(Shape{1, 4, 4, 2}, 24);
    double err = grad_check({x}, [](Tape<double>& t, const std::vector<Var>& v) {
        auto f = t.rfft2(v[0]);
        auto y = t.irfft2(f, 4);
        return t.sum(t.mul(y, y));
    }, 1e-5);
    EXPECT_LT(err, 1e-5);
}

TEST(Autograd, AddRowsMeanRowsGrads) {
    auto x = random_tensor(Shape{1, 4, 3}, 25);
    auto r = random_tensor(Shape{3}, 26);
    double err = grad_check({x, r}, [](Tape<double>& t, const std::vector<Var>& v) {
        auto y = t.add_rows(v[0], t.reshape(v[1], Shape{1, 3}));
        auto m = t.mean_rows(y);
        return t.sum(t.mul(m, m));
    });
    EXPECT_LT(err, 1e-6);
}

TEST(Autograd, LinearGrads) {
    auto x = random_tensor(Shape{2, 3, 4}, 27);
    auto w = random_tensor(Shape{4, 5}, 28);
    auto b = random_tensor(Shape{5}, 29);
    double err = grad_check({x, w, b}, [](Tape<double>& t, const std::vector<Var>& v) {
        auto y = t.linear(v[0], v[1], v[2]);
        return t.sum(t.mul(y, y));
    });
    EXPECT_LT(err, 1e-6);
}
