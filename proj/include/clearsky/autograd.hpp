#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <functional>
#include <vector>

#include "clearsky/fft.hpp"
#include "clearsky/tensor.hpp"

namespace clearsky {

/// Define-by-run reverse-mode tape. Nodes are created in topological order,
/// so backward() is a single reverse sweep. One tape per forward pass.
template <class S>
class Tape {
public:
    using Var = int;

    struct Node {
        Tensor<S> val;
        Tensor<S> grad;
        std::function<void(Tape&)> back;  // empty for leaves
    };

    // When set, every softmax row-distribution computed on this tape is
    // appended here (used by attention-normalization checks).
    std::vector<Tensor<S>>* softmax_capture = nullptr;

    Var leaf(Tensor<S> v) {
        Node n;
        n.grad = Tensor<S>(v.shape(), S(0));
        n.val = std::move(v);
        nodes_.push_back(std::move(n));
        return static_cast<Var>(nodes_.size() - 1);
    }

    const Tensor<S>& val(Var v) const { return nodes_[static_cast<size_t>(v)].val; }
    Tensor<S>& grad(Var v) { return nodes_[static_cast<size_t>(v)].grad; }

    void backward(Var loss) {
        if (val(loss).numel() != 1) throw ShapeError("backward: loss must be scalar");
        grad(loss)[0] = S(1);
        for (int i = loss; i >= 0; --i) {
            auto& n = nodes_[static_cast<size_t>(i)];
            if (n.back) n.back(*this);
        }
    }

    // ---- elementwise ----

    Var add(Var a, Var b) {
        require_same_shape(val(a), val(b), "add");
        Tensor<S> out = val(a);
        const Tensor<S>& bv = val(b);
        for (int64_t i = 0; i < out.numel(); ++i) out[i] += bv[i];
        return make(std::move(out), [a, b](Tape& t) {
            Var y = t.cursor_;
            auto& g = t.grad(y);
            auto& ga = t.grad(a);
            auto& gb = t.grad(b);
            for (int64_t i = 0; i < g.numel(); ++i) {
                ga[i] += g[i];
                gb[i] += g[i];
            }
        });
    }

    Var sub(Var a, Var b) {
        require_same_shape(val(a), val(b), "sub");
        Tensor<S> out = val(a);
        const Tensor<S>& bv = val(b);
        for (int64_t i = 0; i < out.numel(); ++i) out[i] -= bv[i];
        return make(std::move(out), [a, b](Tape& t) {
            Var y = t.cursor_;
            auto& g = t.grad(y);
            auto& ga = t.grad(a);
            auto& gb = t.grad(b);
            for (int64_t i = 0; i < g.numel(); ++i) {
                ga[i] += g[i];
                gb[i] -= g[i];
            }
        });
    }

    Var mul(Var a, Var b) {
        require_same_shape(val(a), val(b), "mul");
        Tensor<S> out = val(a);
        const Tensor<S>& bv = val(b);
        for (int64_t i = 0; i < out.numel(); ++i) out[i] *= bv[i];
        return make(std::move(out), [a, b](Tape& t) {
            Var y = t.cursor_;
            auto& g = t.grad(y);
            auto& ga = t.grad(a);
            auto& gb = t.grad(b);
            const auto& av = t.val(a);
            const auto& bv2 = t.val(b);
            for (int64_t i = 0; i < g.numel(); ++i) {
                ga[i] += g[i] * bv2[i];
                gb[i] += g[i] * av[i];
            }
        });
    }

    Var div(Var a, Var b) {
        require_same_shape(val(a), val(b), "div");
        Tensor<S> out = val(a);
        const Tensor<S>& bv = val(b);
        for (int64_t i = 0; i < out.numel(); ++i) out[i] /= bv[i];
        return make(std::move(out), [a, b](Tape& t) {
            Var y = t.cursor_;
            auto& g = t.grad(y);
            auto& ga = t.grad(a);
            auto& gb = t.grad(b);
            const auto& av = t.val(a);
            const auto& bv2 = t.val(b);
            for (int64_t i = 0; i < g.numel(); ++i) {
                ga[i] += g[i] / bv2[i];
                gb[i] -= g[i] * av[i] / (bv2[i] * bv2[i]);
            }
        });
    }

    Var scale(Var a, S c) {
        Tensor<S> out = val(a);
        for (int64_t i = 0; i < out.numel(); ++i) out[i] *= c;
        return make(std::move(out), [a, c](Tape& t) {
            Var y = t.cursor_;
            auto& g = t.grad(y);
            auto& ga = t.grad(a);
            for (int64_t i = 0; i < g.numel(); ++i) ga[i] += c * g[i];
        });
    }

    Var add_scalar(Var a, S c) {
        Tensor<S> out = val(a);
        for (int64_t i = 0; i < out.numel(); ++i) out[i] += c;
        return make(std::move(out), [a](Tape& t) {
            Var y = t.cursor_;
            auto& g = t.grad(y);
            auto& ga = t.grad(a);
            for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
        });
    }

    Var relu(Var a) {
        Tensor<S> out = val(a);
        for (int64_t i = 0; i < out.numel(); ++i) out[i] = out[i] > S(0) ? out[i] : S(0);
        return make(std::move(out), [a](Tape& t) {
            Var y = t.cursor_;
            auto& g = t.grad(y);
            auto& ga = t.grad(a);
            const auto& av = t.val(a);
            for (int64_t i = 0; i < g.numel(); ++i)
                if (av[i] > S(0)) ga[i] += g[i];
        });
    }

    Var sigmoid(Var a) {
        Tensor<S> out = val(a);
        for (int64_t i = 0; i < out.numel(); ++i) out[i] = S(1) / (S(1) + std::exp(-out[i]));
        return make(std::move(out), [a](Tape& t) {
            Var y = t.cursor_;
            auto& g = t.grad(y);
            auto& ga = t.grad(a);
            const auto& yv = t.val(y);
            for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * yv[i] * (S(1) - yv[i]);
        });
    }

    // sigmoid(gate)*a + (1-sigmoid(gate))*b ; gate is a scalar variable.
    Var gated_mix(Var a, Var b, Var gate) {
        require_same_shape(val(a), val(b), "gated_mix");
        if (val(gate).numel() != 1) throw ShapeError("gated_mix: gate must be scalar");
        const S s = S(1) / (S(1) + std::exp(-val(gate)[0]));
        Tensor<S> out = val(a);
        const Tensor<S>& bv = val(b);
        for (int64_t i = 0; i < out.numel(); ++i) out[i] = s * out[i] + (S(1) - s) * bv[i];
        return make(std::move(out), [a, b, gate, s](Tape& t) {
            Var y = t.cursor_;
            auto& g = t.grad(y);
            auto& ga = t.grad(a);
            auto& gb = t.grad(b);
            const auto& av = t.val(a);
            const auto& bv2 = t.val(b);
            S acc = S(0);
            for (int64_t i = 0; i < g.numel(); ++i) {
                ga[i] += s * g[i];
                gb[i] += (S(1) - s) * g[i];
                acc += g[i] * (av[i] - bv2[i]);
            }
            t.grad(gate)[0] += acc * s * (S(1) - s);
        });
    }

    // ---- reductions ----

    Var sum(Var a) {
        S acc = S(0);
        const auto& av = val(a);
        for (int64_t i = 0; i < av.numel(); ++i) acc += av[i];
        Tensor<S> out(Shape{1});
        out[0] = acc;
        return make(std::move(out), [a](Tape& t) {
            Var y = t.cursor_;
            S g = t.grad(y)[0];
            auto& ga = t.grad(a);
            for (int64_t i = 0; i < ga.numel(); ++i) ga[i] += g;
        });
    }

    Var mean(Var a) {
        int64_t n = val(a).numel();
        return scale(sum(a), S(1) / static_cast<S>(n));
    }

    // Mean of Charbonnier penalty sqrt(diff^2 + eps^2) against a constant target.
    Var charbonnier(Var pred, const Tensor<S>& target, S eps) {
        require_same_shape(val(pred), target, "charbonnier");
        const auto& pv = val(pred);
        const int64_t n = pv.numel();
        S acc = S(0);
        for (int64_t i = 0; i < n; ++i) {
            S d = pv[i] - target[i];
            acc += std::sqrt(d * d + eps * eps);
        }
        Tensor<S> out(Shape{1});
        out[0] = acc / static_cast<S>(n);
        Tensor<S> tgt = target;
        return make(std::move(out), [pred, tgt = std::move(tgt), eps, n](Tape& t) {
            Var y = t.cursor_;
            S g = t.grad(y)[0] / static_cast<S>(n);
            auto& gp = t.grad(pred);
            const auto& pv2 = t.val(pred);
            for (int64_t i = 0; i < n; ++i) {
                S d = pv2[i] - tgt[i];
                gp[i] += g * d / std::sqrt(d * d + eps * eps);
            }
        });
    }

    // ---- shape ops ----

    Var reshape(Var a, Shape s) {
        Tensor<S> out = val(a).reshaped(std::move(s));
        return make(std::move(out), [a](Tape& t) {
            Var y = t.cursor_;
            auto& g = t.grad(y);
            auto& ga = t.grad(a);
            for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
        });
    }

    Var slice(Var a, int axis, int start, int len) {
        const Tensor<S>& av = val(a);
        Shape in = av.shape();
        if (axis < 0 || axis >= av.rank() || start < 0 || start + len > in[static_cast<size_t>(axis)])
            throw ShapeError("slice: out of range on axis " + std::to_string(axis) + " of " +
                             shape_str(in));
        Shape os = in;
        os[static_cast<size_t>(axis)] = len;
        // Collapse to (outer, dim, inner).
        int64_t outer = 1, inner = 1;
        for (int i = 0; i < axis; ++i) outer *= in[static_cast<size_t>(i)];
        for (int i = axis + 1; i < av.rank(); ++i) inner *= in[static_cast<size_t>(i)];
        const int64_t dim = in[static_cast<size_t>(axis)];
        Tensor<S> out(os);
        for (int64_t o = 0; o < outer; ++o)
            for (int64_t d = 0; d < len; ++d)
                std::copy_n(av.data() + (o * dim + start + d) * inner, inner,
                            out.data() + (o * len + d) * inner);
        return make(std::move(out), [a, outer, inner, dim, start, len](Tape& t) {
            Var y = t.cursor_;
            const auto& g = t.grad(y);
            auto& ga = t.grad(a);
            for (int64_t o = 0; o < outer; ++o)
                for (int64_t d = 0; d < len; ++d) {
                    const S* src = g.data() + (o * len + d) * inner;
                    S* dst = ga.data() + (o * dim + start + d) * inner;
                    for (int64_t i = 0; i < inner; ++i) dst[i] += src[i];
                }
        });
    }

    Var concat(int axis, const std::vector<Var>& parts) {
        if (parts.empty()) throw ShapeError("concat: empty part list");
        Shape in = val(parts[0]).shape();
        int rank = static_cast<int>(in.size());
        int total = 0;
        for (Var p : parts) {
            const Shape& s = val(p).shape();
            if (static_cast<int>(s.size()) != rank) throw ShapeError("concat: rank mismatch");
            for (int i = 0; i < rank; ++i)
                if (i != axis && s[static_cast<size_t>(i)] != in[static_cast<size_t>(i)])
                    throw ShapeError("concat: shape mismatch " + shape_str(s));
            total += s[static_cast<size_t>(axis)];
        }
        Shape os = in;
        os[static_cast<size_t>(axis)] = total;
        int64_t outer = 1, inner = 1;
        for (int i = 0; i < axis; ++i) outer *= in[static_cast<size_t>(i)];
        for (int i = axis + 1; i < rank; ++i) inner *= in[static_cast<size_t>(i)];
        Tensor<S> out(os);
        std::vector<int> offs;
        int off = 0;
        for (Var p : parts) {
            offs.push_back(off);
            const Tensor<S>& pv = val(p);
            int64_t d = pv.shape()[static_cast<size_t>(axis)];
            for (int64_t o = 0; o < outer; ++o)
                std::copy_n(pv.data() + o * d * inner, d * inner,
                            out.data() + (o * total + off) * inner);
            off += static_cast<int>(d);
        }
        std::vector<Var> ps = parts;
        return make(std::move(out), [ps, offs, outer, inner, total](Tape& t) {
            Var y = t.cursor_;
            const auto& g = t.grad(y);
            for (size_t pi = 0; pi < ps.size(); ++pi) {
                auto& gp = t.grad(ps[pi]);
                int64_t d = t.val(ps[pi]).numel() / (outer * inner);  // dim along axis
                for (int64_t o = 0; o < outer; ++o) {
                    const S* src = g.data() + (o * total + offs[pi]) * inner;
                    S* dst = gp.data() + o * d * inner;
                    for (int64_t i = 0; i < d * inner; ++i) dst[i] += src[i];
                }
            }
        });
    }

    // ---- token-sequence helpers ----

    // X:(B,M,C) + t:(B,C) broadcast over rows.
    Var add_rows(Var x, Var t) {
        const Tensor<S>& xv = val(x);
        const Tensor<S>& tv = val(t);
        if (xv.rank() != 3 || tv.rank() != 2 || xv.dim(0) != tv.dim(0) || xv.dim(2) != tv.dim(1))
            throw ShapeError("add_rows: incompatible " + shape_str(xv.shape()) + " and " +
                             shape_str(tv.shape()));
        Tensor<S> out = xv;
        int B = xv.dim(0), M = xv.dim(1), C = xv.dim(2);
        for (int b = 0; b < B; ++b)
            for (int m = 0; m < M; ++m)
                for (int c = 0; c < C; ++c) out.at3(b, m, c) += tv.at2(b, c);
        return make(std::move(out), [x, t, B, M, C](Tape& tp) {
            Var y = tp.cursor_;
            const auto& g = tp.grad(y);
            auto& gx = tp.grad(x);
            auto& gt = tp.grad(t);
            for (int64_t i = 0; i < g.numel(); ++i) gx[i] += g[i];
            for (int b = 0; b < B; ++b)
                for (int m = 0; m < M; ++m)
                    for (int c = 0; c < C; ++c) gt.at2(b, c) += g.at3(b, m, c);
        });
    }

    // (B,M,C) -> (B,C), mean over rows.
    Var mean_rows(Var x) {
        const Tensor<S>& xv = val(x);
        if (xv.rank() != 3) throw ShapeError("mean_rows: expects rank-3");
        int B = xv.dim(0), M = xv.dim(1), C = xv.dim(2);
        Tensor<S> out(Shape{B, C}, S(0));
        for (int b = 0; b < B; ++b)
            for (int m = 0; m < M; ++m)
                for (int c = 0; c < C; ++c) out.at2(b, c) += xv.at3(b, m, c);
        const S inv = S(1) / static_cast<S>(M);
        for (int64_t i = 0; i < out.numel(); ++i) out[i] *= inv;
        return make(std::move(out), [x, B, M, C, inv](Tape& tp) {
            Var y = tp.cursor_;
            const auto& g = tp.grad(y);
            auto& gx = tp.grad(x);
            for (int b = 0; b < B; ++b)
                for (int m = 0; m < M; ++m)
                    for (int c = 0; c < C; ++c) gx.at3(b, m, c) += g.at2(b, c) * inv;
        });
    }

    // Bias over the last dimension, any rank.
    Var add_bias(Var x, Var b) {
        const Tensor<S>& xv = val(x);
        const Tensor<S>& bv = val(b);
        if (bv.rank() != 1 || bv.dim(0) != xv.shape().back())
            throw ShapeError("add_bias: bias " + shape_str(bv.shape()) + " vs input " +
                             shape_str(xv.shape()));
        Tensor<S> out = xv;
        int64_t c = bv.dim(0);
        int64_t rows = out.numel() / c;
        for (int64_t r = 0; r < rows; ++r)
            for (int64_t i = 0; i < c; ++i) out[r * c + i] += bv[i];
        return make(std::move(out), [x, b, rows, c](Tape& t) {
            Var y = t.cursor_;
            const auto& g = t.grad(y);
            auto& gx = t.grad(x);
            auto& gb = t.grad(b);
            for (int64_t i = 0; i < g.numel(); ++i) gx[i] += g[i];
            for (int64_t r = 0; r < rows; ++r)
                for (int64_t i = 0; i < c; ++i) gb[i] += g[r * c + i];
        });
    }

    // ---- matmul ----

    // Batched matmul with optional operand transposition and batch broadcast.
    // a: (Ba,m,k) or (m,k) when broadcast_a; b likewise. Output (B,m,n).
    Var bmm(Var a, Var b, bool trans_a = false, bool trans_b = false) {
        const Tensor<S>& av = val(a);
        const Tensor<S>& bv = val(b);
        bool broadcast_a = av.rank() == 2;
        bool broadcast_b = bv.rank() == 2;
        if ((av.rank() != 2 && av.rank() != 3) || (bv.rank() != 2 && bv.rank() != 3))
            throw ShapeError("bmm: rank must be 2 or 3");
        int Ba = broadcast_a ? 1 : av.dim(0);
        int Bb = broadcast_b ? 1 : bv.dim(0);
        int B = std::max(Ba, Bb);
        if (!broadcast_a && !broadcast_b && Ba != Bb) throw ShapeError("bmm: batch mismatch");
        int ar = broadcast_a ? av.dim(0) : av.dim(1);
        int ac = broadcast_a ? av.dim(1) : av.dim(2);
        int br = broadcast_b ? bv.dim(0) : bv.dim(1);
        int bc = broadcast_b ? bv.dim(1) : bv.dim(2);
        int m = trans_a ? ac : ar;
        int k = trans_a ? ar : ac;
        int kb = trans_b ? bc : br;
        int n = trans_b ? br : bc;
        if (k != kb)
            throw ShapeError("bmm: inner dim mismatch " + shape_str(av.shape()) + " x " +
                             shape_str(bv.shape()));
        Tensor<S> out(Shape{B, m, n}, S(0));
        const int64_t as = static_cast<int64_t>(ar) * ac;
        const int64_t bs = static_cast<int64_t>(br) * bc;
        for (int bi = 0; bi < B; ++bi) {
            const S* ap = av.data() + (broadcast_a ? 0 : bi * as);
            const S* bp = bv.data() + (broadcast_b ? 0 : bi * bs);
            gemm(ap, trans_a, bp, trans_b, m, n, k, ar, ac, br, bc,
                 out.data() + static_cast<int64_t>(bi) * m * n);
        }
        return make(std::move(out),
                    [a, b, trans_a, trans_b, broadcast_a, broadcast_b, B, m, n, k, ar, ac, br, bc,
                     as, bs](Tape& t) {
                        Var y = t.cursor_;
                        const auto& g = t.grad(y);
                        auto& ga = t.grad(a);
                        auto& gb = t.grad(b);
                        const auto& av2 = t.val(a);
                        const auto& bv2 = t.val(b);
                        for (int bi = 0; bi < B; ++bi) {
                            const S* gp = g.data() + static_cast<int64_t>(bi) * m * n;
                            const S* ap = av2.data() + (broadcast_a ? 0 : bi * as);
                            const S* bp = bv2.data() + (broadcast_b ? 0 : bi * bs);
                            S* gap = ga.data() + (broadcast_a ? 0 : bi * as);
                            S* gbp = gb.data() + (broadcast_b ? 0 : bi * bs);
                            // dA: if !trans_a, dA(m,k) = G(m,n) * op(B)^T; else dA(k,m) = op(B) * G^T.
                            if (!trans_a)
                                gemm(gp, false, bp, !trans_b, m, k, n, m, n, br, bc, gap);
                            else
                                gemm(bp, trans_b, gp, true, k, m, n, br, bc, m, n, gap);
                            if (!trans_b)
                                gemm(ap, !trans_a, gp, false, k, n, m, ar, ac, m, n, gbp);
                            else
                                gemm(gp, true, ap, trans_a, n, k, m, m, n, ar, ac, gbp);
                        }
                    });
    }

    // Linear layer over the last dim: x (...,Cin) * w (Cin,Cout) + b.
    Var linear(Var x, Var w, Var b) {
        const Tensor<S>& xv = val(x);
        Shape xs = xv.shape();
        int cin = xs.back();
        int cout = val(w).dim(1);
        int64_t rows = xv.numel() / cin;
        Var flat = reshape(x, Shape{1, static_cast<int>(rows), cin});
        Var y = bmm(flat, w);
        Shape os = xs;
        os.back() = cout;
        Var out = reshape(y, os);
        return add_bias(out, b);
    }

    // ---- softmax ----

    // Softmax over the last dimension (rank 2 or 3).
    Var softmax(Var a) {
        const Tensor<S>& av = val(a);
        int64_t c = av.shape().back();
        int64_t rows = av.numel() / c;
        Tensor<S> out = av;
        for (int64_t r = 0; r < rows; ++r) {
            S* p = out.data() + r * c;
            S mx = p[0];
            for (int64_t i = 1; i < c; ++i) mx = std::max(mx, p[i]);
            S sum = S(0);
            for (int64_t i = 0; i < c; ++i) {
                p[i] = std::exp(p[i] - mx);
                sum += p[i];
            }
            for (int64_t i = 0; i < c; ++i) p[i] /= sum;
        }
        if (softmax_capture) softmax_capture->push_back(out);
        return make(std::move(out), [a, rows, c](Tape& t) {
            Var y = t.cursor_;
            const auto& g = t.grad(y);
            const auto& yv = t.val(y);
            auto& ga = t.grad(a);
            for (int64_t r = 0; r < rows; ++r) {
                const S* gp = g.data() + r * c;
                const S* yp = yv.data() + r * c;
                S dot = S(0);
                for (int64_t i = 0; i < c; ++i) dot += gp[i] * yp[i];
                S* gap = ga.data() + r * c;
                for (int64_t i = 0; i < c; ++i) gap[i] += yp[i] * (gp[i] - dot);
            }
        });
    }

    // ---- convolution ----

    // 2-D convolution, NHWC input, weight (kh,kw,cin,cout), zero "same"
    // padding, odd kernels; output spatial dims are ceil(H/stride).
    Var conv2d(Var x, Var w, Var b, int stride = 1) {
        const Tensor<S>& xv = val(x);
        const Tensor<S>& wv = val(w);
        if (xv.rank() != 4 || wv.rank() != 4)
            throw ShapeError("conv2d: input/weight rank must be 4");
        int N = xv.dim(0), H = xv.dim(1), W = xv.dim(2), Ci = xv.dim(3);
        int kh = wv.dim(0), kw = wv.dim(1);
        if (wv.dim(2) != Ci)
            throw ShapeError("conv2d: weight cin " + std::to_string(wv.dim(2)) +
                             " vs input channels " + std::to_string(Ci));
        int Co = wv.dim(3);
        if (val(b).rank() != 1 || val(b).dim(0) != Co) throw ShapeError("conv2d: bias size");
        int ph = (kh - 1) / 2, pw = (kw - 1) / 2;
        int Ho = (H + stride - 1) / stride, Wo = (W + stride - 1) / stride;
        Tensor<S> out(Shape{N, Ho, Wo, Co});
        const Tensor<S>& bv = val(b);
        std::vector<S> acc(static_cast<size_t>(Co));
        for (int n = 0; n < N; ++n)
            for (int oh = 0; oh < Ho; ++oh)
                for (int ow = 0; ow < Wo; ++ow) {
                    for (int c = 0; c < Co; ++c) acc[static_cast<size_t>(c)] = bv[c];
                    for (int dh = 0; dh < kh; ++dh) {
                        int ih = oh * stride + dh - ph;
                        if (ih < 0 || ih >= H) continue;
                        for (int dw = 0; dw < kw; ++dw) {
                            int iw = ow * stride + dw - pw;
                            if (iw < 0 || iw >= W) continue;
                            const S* xp = xv.data() + ((int64_t(n) * H + ih) * W + iw) * Ci;
                            const S* wp = wv.data() + (int64_t(dh) * kw + dw) * Ci * Co;
                            for (int ci = 0; ci < Ci; ++ci) {
                                S xvv = xp[ci];
                                if (xvv == S(0)) continue;
                                const S* wr = wp + int64_t(ci) * Co;
                                for (int c = 0; c < Co; ++c) acc[static_cast<size_t>(c)] += xvv * wr[c];
                            }
                        }
                    }
                    S* op = out.data() + ((int64_t(n) * Ho + oh) * Wo + ow) * Co;
                    for (int c = 0; c < Co; ++c) op[c] = acc[static_cast<size_t>(c)];
                }
        return make(std::move(out),
                    [x, w, b, stride, N, H, W, Ci, kh, kw, Co, ph, pw, Ho, Wo](Tape& t) {
                        Var y = t.cursor_;
                        const auto& g = t.grad(y);
                        const auto& xv2 = t.val(x);
                        const auto& wv2 = t.val(w);
                        auto& gx = t.grad(x);
                        auto& gw = t.grad(w);
                        auto& gb = t.grad(b);
                        for (int n = 0; n < N; ++n)
                            for (int oh = 0; oh < Ho; ++oh)
                                for (int ow = 0; ow < Wo; ++ow) {
                                    const S* gp = g.data() + ((int64_t(n) * Ho + oh) * Wo + ow) * Co;
                                    for (int c = 0; c < Co; ++c) gb[c] += gp[c];
                                    for (int dh = 0; dh < kh; ++dh) {
                                        int ih = oh * stride + dh - ph;
                                        if (ih < 0 || ih >= H) continue;
                                        for (int dw = 0; dw < kw; ++dw) {
                                            int iw = ow * stride + dw - pw;
                                            if (iw < 0 || iw >= W) continue;
                                            const S* xp =
                                                xv2.data() + ((int64_t(n) * H + ih) * W + iw) * Ci;
                                            S* gxp =
                                                gx.data() + ((int64_t(n) * H + ih) * W + iw) * Ci;
                                            const S* wp =
                                                wv2.data() + (int64_t(dh) * kw + dw) * Ci * Co;
                                            S* gwp = gw.data() + (int64_t(dh) * kw + dw) * Ci * Co;
                                            for (int ci = 0; ci < Ci; ++ci) {
                                                const S* wr = wp + int64_t(ci) * Co;
                                                S* gwr = gwp + int64_t(ci) * Co;
                                                S xvv = xp[ci];
                                                S s = S(0);
                                                for (int c = 0; c < Co; ++c) {
                                                    s += gp[c] * wr[c];
                                                    gwr[c] += gp[c] * xvv;
                                                }
                                                gxp[ci] += s;
                                            }
                                        }
                                    }
                                }
                    });
    }

    // ---- resampling ----

    // Bilinear resize with half-pixel centers; adjoint scatter in backward.
    Var bilinear_resize(Var x, int ho, int wo) {
        const Tensor<S>& xv = val(x);
        if (xv.rank() != 4) throw ShapeError("bilinear_resize: expects NHWC");
        int N = xv.dim(0), H = xv.dim(1), W = xv.dim(2), C = xv.dim(3);
        if (ho == H && wo == W) {
            Tensor<S> out = xv;
            return make(std::move(out), [x](Tape& t) {
                Var y = t.cursor_;
                const auto& g = t.grad(y);
                auto& gx = t.grad(x);
                for (int64_t i = 0; i < g.numel(); ++i) gx[i] += g[i];
            });
        }
        struct Tap {
            int h0, h1, w0, w1;
            S wh, ww;
        };
        std::vector<Tap> taps(static_cast<size_t>(ho) * wo);
        for (int oh = 0; oh < ho; ++oh) {
            double sh = (oh + 0.5) * static_cast<double>(H) / ho - 0.5;
            sh = std::min(std::max(sh, 0.0), static_cast<double>(H - 1));
            int h0 = static_cast<int>(sh);
            int h1 = std::min(h0 + 1, H - 1);
            S wh = static_cast<S>(sh - h0);
            for (int ow = 0; ow < wo; ++ow) {
                double sw = (ow + 0.5) * static_cast<double>(W) / wo - 0.5;
                sw = std::min(std::max(sw, 0.0), static_cast<double>(W - 1));
                int w0 = static_cast<int>(sw);
                int w1 = std::min(w0 + 1, W - 1);
                taps[static_cast<size_t>(oh) * wo + ow] = {h0, h1, w0, w1, wh, static_cast<S>(sw - w0)};
            }
        }
        Tensor<S> out(Shape{N, ho, wo, C});
        for (int n = 0; n < N; ++n)
            for (int oh = 0; oh < ho; ++oh)
                for (int ow = 0; ow < wo; ++ow) {
                    const Tap& tp = taps[static_cast<size_t>(oh) * wo + ow];
                    for (int c = 0; c < C; ++c) {
                        S v00 = xv.at4(n, tp.h0, tp.w0, c), v01 = xv.at4(n, tp.h0, tp.w1, c);
                        S v10 = xv.at4(n, tp.h1, tp.w0, c), v11 = xv.at4(n, tp.h1, tp.w1, c);
                        S top = v00 + (v01 - v00) * tp.ww;
                        S bot = v10 + (v11 - v10) * tp.ww;
                        out.at4(n, oh, ow, c) = top + (bot - top) * tp.wh;
                    }
                }
        return make(std::move(out), [x, taps = std::move(taps), N, ho, wo, C](Tape& t) {
            Var y = t.cursor_;
            const auto& g = t.grad(y);
            auto& gx = t.grad(x);
            for (int n = 0; n < N; ++n)
                for (int oh = 0; oh < ho; ++oh)
                    for (int ow = 0; ow < wo; ++ow) {
                        const Tap& tp = taps[static_cast<size_t>(oh) * wo + ow];
                        for (int c = 0; c < C; ++c) {
                            S gv = g.at4(n, oh, ow, c);
                            S a = (S(1) - tp.wh) * (S(1) - tp.ww);
                            S b = (S(1) - tp.wh) * tp.ww;
                            S cw = tp.wh * (S(1) - tp.ww);
                            S d = tp.wh * tp.ww;
                            gx.at4(n, tp.h0, tp.w0, c) += a * gv;
                            gx.at4(n, tp.h0, tp.w1, c) += b * gv;
                            gx.at4(n, tp.h1, tp.w0, c) += cw * gv;
                            gx.at4(n, tp.h1, tp.w1, c) += d * gv;
                        }
                    }
        });
    }

    // ---- batch norm (frozen statistics) ----

    // Per-channel affine normalization with constant statistics over the
    // last dimension. Statistics are not graph variables.
    Var batchnorm(Var x, Var gamma, Var beta, const Tensor<S>& mean, const Tensor<S>& var, S eps) {
        const Tensor<S>& xv = val(x);
        int64_t c = xv.shape().back();
        if (val(gamma).numel() != c || val(beta).numel() != c || mean.numel() != c ||
            var.numel() != c)
            throw ShapeError("batchnorm: channel-size mismatch");
        std::vector<S> istd(static_cast<size_t>(c));
        for (int64_t i = 0; i < c; ++i) istd[static_cast<size_t>(i)] = S(1) / std::sqrt(var[i] + eps);
        Tensor<S> out = xv;
        int64_t rows = xv.numel() / c;
        const Tensor<S>& gv = val(gamma);
        const Tensor<S>& bv = val(beta);
        for (int64_t r = 0; r < rows; ++r)
            for (int64_t i = 0; i < c; ++i)
                out[r * c + i] = gv[i] * (out[r * c + i] - mean[i]) * istd[static_cast<size_t>(i)] + bv[i];
        Tensor<S> mcopy = mean;
        return make(std::move(out),
                    [x, gamma, beta, rows, c, istd = std::move(istd), mcopy = std::move(mcopy)](Tape& t) {
                        Var y = t.cursor_;
                        const auto& g = t.grad(y);
                        const auto& xv2 = t.val(x);
                        const auto& gam = t.val(gamma);
                        auto& gx = t.grad(x);
                        auto& gg = t.grad(gamma);
                        auto& gb = t.grad(beta);
                        for (int64_t r = 0; r < rows; ++r)
                            for (int64_t i = 0; i < c; ++i) {
                                S gi = g[r * c + i];
                                S xn = (xv2[r * c + i] - mcopy[i]) * istd[static_cast<size_t>(i)];
                                gx[r * c + i] += gi * gam[i] * istd[static_cast<size_t>(i)];
                                gg[i] += gi * xn;
                                gb[i] += gi;
                            }
                    });
    }

    // ---- spectral ops ----

    // Real 2-D FFT over spatial dims; keeps the non-redundant floor(W/2)+1
    // bins and concatenates (real, imaginary) along channels: C -> 2C.
    Var rfft2(Var x) {
        const Tensor<S>& xv = val(x);
        if (xv.rank() != 4) throw ShapeError("rfft2: expects NHWC");
        int N = xv.dim(0), H = xv.dim(1), W = xv.dim(2), C = xv.dim(3);
        int Wf = rfft_width(W);
        Tensor<S> out(Shape{N, H, Wf, 2 * C});
        std::vector<std::complex<S>> grid(static_cast<size_t>(H) * W);
        for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c) {
                for (int h = 0; h < H; ++h)
                    for (int w = 0; w < W; ++w)
                        grid[static_cast<size_t>(h) * W + w] = std::complex<S>(xv.at4(n, h, w, c), S(0));
                fft2d(grid.data(), H, W, false);
                for (int h = 0; h < H; ++h)
                    for (int w = 0; w < Wf; ++w) {
                        out.at4(n, h, w, c) = grid[static_cast<size_t>(h) * W + w].real();
                        out.at4(n, h, w, C + c) = grid[static_cast<size_t>(h) * W + w].imag();
                    }
            }
        return make(std::move(out), [x, N, H, W, C, Wf](Tape& t) {
            Var y = t.cursor_;
            const auto& g = t.grad(y);
            auto& gx = t.grad(x);
            std::vector<std::complex<S>> grid(static_cast<size_t>(H) * W);
            const S hw = static_cast<S>(H) * static_cast<S>(W);
            for (int n = 0; n < N; ++n)
                for (int c = 0; c < C; ++c) {
                    std::fill(grid.begin(), grid.end(), std::complex<S>(0, 0));
                    for (int h = 0; h < H; ++h)
                        for (int w = 0; w < Wf; ++w)
                            grid[static_cast<size_t>(h) * W + w] =
                                std::complex<S>(g.at4(n, h, w, c), g.at4(n, h, w, C + c));
                    // Adjoint of the restricted forward FFT: real part of the
                    // unnormalized inverse transform of the embedded grads.
                    fft2d(grid.data(), H, W, true);
                    for (int h = 0; h < H; ++h)
                        for (int w = 0; w < W; ++w)
                            gx.at4(n, h, w, c) += hw * grid[static_cast<size_t>(h) * W + w].real();
                }
        });
    }

    // Inverse of rfft2's layout: (N,H,Wf,2C) -> (N,H,W,C). The full spectrum
    // is rebuilt by Hermitian extension of the stored half before the
    // normalized inverse FFT; the real part is returned.
    Var irfft2(Var y, int W) {
        const Tensor<S>& yv = val(y);
        if (yv.rank() != 4) throw ShapeError("irfft2: expects rank-4");
        int N = yv.dim(0), H = yv.dim(1), Wf = yv.dim(2);
        if (Wf != rfft_width(W)) throw ShapeError("irfft2: width " + std::to_string(W) +
                                                  " inconsistent with " + std::to_string(Wf) + " bins");
        int C2 = yv.dim(3);
        if (C2 % 2 != 0) throw ShapeError("irfft2: odd channel count");
        int C = C2 / 2;
        Tensor<S> out(Shape{N, H, W, C});
        std::vector<std::complex<S>> grid(static_cast<size_t>(H) * W);
        for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c) {
                for (int h = 0; h < H; ++h) {
                    for (int w = 0; w < Wf; ++w)
                        grid[static_cast<size_t>(h) * W + w] =
                            std::complex<S>(yv.at4(n, h, w, c), yv.at4(n, h, w, C + c));
                    for (int w = Wf; w < W; ++w) {
                        int sh = (H - h) % H, sw = W - w;
                        grid[static_cast<size_t>(h) * W + w] =
                            std::complex<S>(yv.at4(n, sh, sw, c), -yv.at4(n, sh, sw, C + c));
                    }
                }
                fft2d(grid.data(), H, W, true);
                for (int h = 0; h < H; ++h)
                    for (int w = 0; w < W; ++w)
                        out.at4(n, h, w, c) = grid[static_cast<size_t>(h) * W + w].real();
            }
        return make(std::move(out), [yvar = y, N, H, W, Wf, C](Tape& t) {
            Var ynode = t.cursor_;
            const auto& g = t.grad(ynode);
            auto& gy = t.grad(yvar);
            std::vector<std::complex<S>> grid(static_cast<size_t>(H) * W);
            const S inv = S(1) / (static_cast<S>(H) * static_cast<S>(W));
            for (int n = 0; n < N; ++n)
                for (int c = 0; c < C; ++c) {
                    for (int h = 0; h < H; ++h)
                        for (int w = 0; w < W; ++w)
                            grid[static_cast<size_t>(h) * W + w] =
                                std::complex<S>(g.at4(n, h, w, c), S(0));
                    fft2d(grid.data(), H, W, false);
                    // Direct bins.
                    for (int h = 0; h < H; ++h)
                        for (int w = 0; w < Wf; ++w) {
                            std::complex<S> v = grid[static_cast<size_t>(h) * W + w] * inv;
                            gy.at4(n, h, w, c) += v.real();
                            gy.at4(n, h, w, C + c) += v.imag();
                        }
                    // Bins that were Hermitian-extended contribute conjugated.
                    for (int h = 0; h < H; ++h)
                        for (int w = Wf; w < W; ++w) {
                            std::complex<S> v = grid[static_cast<size_t>(h) * W + w] * inv;
                            int sh = (H - h) % H, sw = W - w;
                            gy.at4(n, sh, sw, c) += v.real();
                            gy.at4(n, sh, sw, C + c) += -v.imag();
                        }
                }
        });
    }

    size_t size() const { return nodes_.size(); }

private:
    std::vector<Node> nodes_;
    Var cursor_ = -1;  // id of the node whose backward is running

    Var make(Tensor<S> val, std::function<void(Tape&)> back) {
        Node n;
        n.grad = Tensor<S>(val.shape(), S(0));
        n.val = std::move(val);
        Var id = static_cast<Var>(nodes_.size());
        n.back = [id, fn = std::move(back)](Tape& t) {
            t.cursor_ = id;
            fn(t);
        };
        nodes_.push_back(std::move(n));
        return id;
    }

    // C(m,n) += op(A)op(B); A stored (ar,ac), B stored (br,bc) row-major.
    static void gemm(const S* A, bool ta, const S* B, bool tb, int m, int n, int k, int ar, int ac,
                     int br, int bc, S* C) {
        (void)ar;
        (void)br;
        for (int i = 0; i < m; ++i) {
            S* crow = C + static_cast<int64_t>(i) * n;
            for (int p = 0; p < k; ++p) {
                S a = ta ? A[static_cast<int64_t>(p) * ac + i] : A[static_cast<int64_t>(i) * ac + p];
                if (a == S(0)) continue;
                if (!tb) {
                    const S* brow = B + static_cast<int64_t>(p) * bc;
                    for (int j = 0; j < n; ++j) crow[j] += a * brow[j];
                } else {
                    const S* bcol = B + p;
                    for (int j = 0; j < n; ++j) crow[j] += a * bcol[static_cast<int64_t>(j) * bc];
                }
            }
        }
    }
};

}  // namespace clearsky
