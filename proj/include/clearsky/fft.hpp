#pragma once

#include <cmath>
#include <complex>
#include <vector>

#include "clearsky/tensor.hpp"

namespace clearsky {

/// In-place 1-D complex FFT. Radix-2 iterative for powers of two, direct
/// DFT otherwise (spatial dims in this project stay small).
template <class S>
void fft1d(std::complex<S>* x, int n, bool inverse) {
    if (n <= 1) return;
    const S sign = inverse ? S(1) : S(-1);
    if ((n & (n - 1)) == 0) {
        // Bit-reversal permutation.
        for (int i = 1, j = 0; i < n; ++i) {
            int bit = n >> 1;
            for (; j & bit; bit >>= 1) j ^= bit;
            j ^= bit;
            if (i < j) std::swap(x[i], x[j]);
        }
        for (int len = 2; len <= n; len <<= 1) {
            const double ang = sign * 2.0 * M_PI / len;
            const std::complex<S> wl(static_cast<S>(std::cos(ang)), static_cast<S>(std::sin(ang)));
            for (int i = 0; i < n; i += len) {
                std::complex<S> w(1, 0);
                for (int k = 0; k < len / 2; ++k) {
                    std::complex<S> u = x[i + k];
                    std::complex<S> v = x[i + k + len / 2] * w;
                    x[i + k] = u + v;
                    x[i + k + len / 2] = u - v;
                    w *= wl;
                }
            }
        }
    } else {
        std::vector<std::complex<S>> out(static_cast<size_t>(n));
        for (int k = 0; k < n; ++k) {
            std::complex<double> acc(0, 0);
            for (int t = 0; t < n; ++t) {
                double ang = static_cast<double>(sign) * 2.0 * M_PI * k * t / n;
                std::complex<double> v(static_cast<double>(x[t].real()), static_cast<double>(x[t].imag()));
                acc += v * std::complex<double>(std::cos(ang), std::sin(ang));
            }
            out[static_cast<size_t>(k)] =
                std::complex<S>(static_cast<S>(acc.real()), static_cast<S>(acc.imag()));
        }
        for (int k = 0; k < n; ++k) x[k] = out[static_cast<size_t>(k)];
    }
    if (inverse) {
        const S inv = S(1) / static_cast<S>(n);
        for (int i = 0; i < n; ++i) x[i] *= inv;
    }
}

/// In-place unnormalized-forward / normalized-inverse 2-D FFT on an H*W
/// row-major complex grid.
template <class S>
void fft2d(std::complex<S>* grid, int h, int w, bool inverse) {
    std::vector<std::complex<S>> col(static_cast<size_t>(h));
    for (int r = 0; r < h; ++r) fft1d(grid + static_cast<int64_t>(r) * w, w, inverse);
    for (int c = 0; c < w; ++c) {
        for (int r = 0; r < h; ++r) col[static_cast<size_t>(r)] = grid[static_cast<int64_t>(r) * w + c];
        fft1d(col.data(), h, inverse);
        for (int r = 0; r < h; ++r) grid[static_cast<int64_t>(r) * w + c] = col[static_cast<size_t>(r)];
    }
}

inline int rfft_width(int w) { return w / 2 + 1; }

}  // namespace clearsky
