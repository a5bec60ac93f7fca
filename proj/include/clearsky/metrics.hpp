#pragma once

#include <cmath>
#include <vector>

#include "clearsky/tensor.hpp"

namespace clearsky {

/// 10*log10(max^2 / MSE), capped so identical images report cap_db instead
/// of infinity.
template <class S>
double psnr(const Tensor<S>& a, const Tensor<S>& b, double max_val = 1.0, double cap_db = 100.0) {
    require_same_shape(a, b, "psnr");
    double mse = 0.0;
    for (int64_t i = 0; i < a.numel(); ++i) {
        double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
        mse += d * d;
    }
    mse /= static_cast<double>(a.numel());
    double floor = max_val * max_val * std::pow(10.0, -cap_db / 10.0);
    if (mse < floor) return cap_db;
    return 10.0 * std::log10(max_val * max_val / mse);
}

namespace detail {

inline std::vector<double> gaussian_window(int size, double sigma) {
    std::vector<double> w(static_cast<size_t>(size));
    double sum = 0.0;
    int half = size / 2;
    for (int i = 0; i < size; ++i) {
        double d = i - half;
        w[static_cast<size_t>(i)] = std::exp(-d * d / (2.0 * sigma * sigma));
        sum += w[static_cast<size_t>(i)];
    }
    for (double& v : w) v /= sum;
    return w;
}

// Separable Gaussian filter, valid region only: (H,W) -> (H-size+1, W-size+1).
inline std::vector<double> blur_valid(const std::vector<double>& img, int h, int w,
                                      const std::vector<double>& win) {
    int size = static_cast<int>(win.size());
    int wo = w - size + 1, ho = h - size + 1;
    std::vector<double> tmp(static_cast<size_t>(h) * wo);
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < wo; ++c) {
            double acc = 0.0;
            for (int k = 0; k < size; ++k) acc += img[static_cast<size_t>(r) * w + c + k] * win[static_cast<size_t>(k)];
            tmp[static_cast<size_t>(r) * wo + c] = acc;
        }
    std::vector<double> out(static_cast<size_t>(ho) * wo);
    for (int r = 0; r < ho; ++r)
        for (int c = 0; c < wo; ++c) {
            double acc = 0.0;
            for (int k = 0; k < size; ++k) acc += tmp[static_cast<size_t>(r + k) * wo + c] * win[static_cast<size_t>(k)];
            out[static_cast<size_t>(r) * wo + c] = acc;
        }
    return out;
}

}  // namespace detail

/// Mean local SSIM with an 11x11 Gaussian window (sigma 1.5), computed per
/// channel over the valid region and averaged.
template <class S>
double ssim(const Tensor<S>& a, const Tensor<S>& b, int window = 11, double k1 = 0.01,
            double k2 = 0.03, double peak = 1.0) {
    require_same_shape(a, b, "ssim");
    if (a.rank() != 4) throw ShapeError("ssim: expects NHWC");
    int N = a.dim(0), H = a.dim(1), W = a.dim(2), C = a.dim(3);
    if (H < window || W < window)
        throw ShapeError("ssim: image " + shape_str(a.shape()) + " smaller than window " +
                         std::to_string(window));
    const double c1 = (k1 * peak) * (k1 * peak);
    const double c2 = (k2 * peak) * (k2 * peak);
    auto win = detail::gaussian_window(window, 1.5);
    double total = 0.0;
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            std::vector<double> x(static_cast<size_t>(H) * W), y(static_cast<size_t>(H) * W);
            std::vector<double> xx(x.size()), yy(x.size()), xy(x.size());
            for (int r = 0; r < H; ++r)
                for (int q = 0; q < W; ++q) {
                    double xv = a.at4(n, r, q, c), yv = b.at4(n, r, q, c);
                    size_t i = static_cast<size_t>(r) * W + q;
                    x[i] = xv;
                    y[i] = yv;
                    xx[i] = xv * xv;
                    yy[i] = yv * yv;
                    xy[i] = xv * yv;
                }
            auto mx = detail::blur_valid(x, H, W, win);
            auto my = detail::blur_valid(y, H, W, win);
            auto mxx = detail::blur_valid(xx, H, W, win);
            auto myy = detail::blur_valid(yy, H, W, win);
            auto mxy = detail::blur_valid(xy, H, W, win);
            double acc = 0.0;
            for (size_t i = 0; i < mx.size(); ++i) {
                double sx = mxx[i] - mx[i] * mx[i];
                double sy = myy[i] - my[i] * my[i];
                double sxy = mxy[i] - mx[i] * my[i];
                double num = (2.0 * mx[i] * my[i] + c1) * (2.0 * sxy + c2);
                double den = (mx[i] * mx[i] + my[i] * my[i] + c1) * (sx + sy + c2);
                acc += num / den;
            }
            total += acc / static_cast<double>(mx.size());
        }
    return total / (static_cast<double>(N) * C);
}

/// Mean Charbonnier penalty sqrt(diff^2 + eps^2) on plain tensors.
template <class S>
double charbonnier_loss(const Tensor<S>& pred, const Tensor<S>& gt, double eps = 1e-3) {
    require_same_shape(pred, gt, "charbonnier_loss");
    double acc = 0.0;
    for (int64_t i = 0; i < pred.numel(); ++i) {
        double d = static_cast<double>(pred[i]) - static_cast<double>(gt[i]);
        acc += std::sqrt(d * d + eps * eps);
    }
    return acc / static_cast<double>(pred.numel());
}

}  // namespace clearsky
