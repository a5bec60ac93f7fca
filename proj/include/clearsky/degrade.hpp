#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "clearsky/rng.hpp"
#include "clearsky/tensor.hpp"

namespace clearsky {

enum class DegradationKind { rain_streak, raindrop, haze, snow, mixed };

inline const char* kind_name(DegradationKind k) {
    switch (k) {
        case DegradationKind::rain_streak: return "rain_streak";
        case DegradationKind::raindrop: return "raindrop";
        case DegradationKind::haze: return "haze";
        case DegradationKind::snow: return "snow";
        case DegradationKind::mixed: return "mixed";
    }
    return "?";
}

inline DegradationKind kind_from_name(const std::string& s) {
    if (s == "rain_streak") return DegradationKind::rain_streak;
    if (s == "raindrop") return DegradationKind::raindrop;
    if (s == "haze") return DegradationKind::haze;
    if (s == "snow") return DegradationKind::snow;
    if (s == "mixed") return DegradationKind::mixed;
    throw ConfigError("unknown degradation kind: " + s);
}

struct DegradationSpec {
    DegradationKind kind = DegradationKind::mixed;
    double density = 1.5;       // streaks/drops/flakes per 1000 px (kind-scaled)
    double intensity = 0.8;     // overlay strength in [0,1]
    double angle_deg = 70.0;    // streak orientation
    double atmospheric_light = 0.85;
    double transmission = 0.65;  // in (0,1]
    uint64_t seed = 0;

    void validate() const {
        if (density < 0) throw ConfigError("DegradationSpec: density must be >= 0");
        if (intensity < 0 || intensity > 1) throw ConfigError("DegradationSpec: intensity in [0,1]");
        if (atmospheric_light < 0 || atmospheric_light > 1)
            throw ConfigError("DegradationSpec: atmospheric_light in [0,1]");
        if (transmission <= 0 || transmission > 1)
            throw ConfigError("DegradationSpec: transmission in (0,1]");
    }
};

template <class S>
struct PairedSample {
    Tensor<S> clean;
    Tensor<S> degraded;
    DegradationSpec spec;
};

namespace synth_detail {

template <class S>
void clamp01(Tensor<S>& img) {
    for (int64_t i = 0; i < img.numel(); ++i) img[i] = std::min(std::max(img[i], S(0)), S(1));
}

// Smooth value noise in [0,1]: bilinear interpolation of a coarse random grid.
template <class S>
Tensor<S> value_noise(int h, int w, int cell, Rng& rng) {
    int gh = h / cell + 2, gw = w / cell + 2;
    std::vector<double> grid(static_cast<size_t>(gh) * gw);
    for (double& v : grid) v = rng.uniform();
    Tensor<S> out(Shape{1, h, w, 1});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double fy = static_cast<double>(y) / cell, fx = static_cast<double>(x) / cell;
            int y0 = static_cast<int>(fy), x0 = static_cast<int>(fx);
            double ty = fy - y0, tx = fx - x0;
            double a = grid[static_cast<size_t>(y0) * gw + x0];
            double b = grid[static_cast<size_t>(y0) * gw + x0 + 1];
            double c = grid[static_cast<size_t>(y0 + 1) * gw + x0];
            double d = grid[static_cast<size_t>(y0 + 1) * gw + x0 + 1];
            out.at4(0, y, x, 0) = static_cast<S>((a * (1 - tx) + b * tx) * (1 - ty) +
                                                 (c * (1 - tx) + d * tx) * ty);
        }
    return out;
}

// Gaussian splat accumulated into a single-channel overlay.
template <class S>
void splat(Tensor<S>& ov, double cx, double cy, double radius, double amp) {
    int h = ov.dim(1), w = ov.dim(2);
    int r = static_cast<int>(std::ceil(radius * 2.5));
    int x0 = std::max(0, static_cast<int>(cx) - r), x1 = std::min(w - 1, static_cast<int>(cx) + r);
    int y0 = std::max(0, static_cast<int>(cy) - r), y1 = std::min(h - 1, static_cast<int>(cy) + r);
    for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) {
            double d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
            double a = amp * std::exp(-d2 / (2.0 * radius * radius));
            S& px = ov.at4(0, y, x, 0);
            px = static_cast<S>(std::min(1.0, static_cast<double>(px) + a));
        }
}

// out = 1 - (1-img)(1-overlay*strength): screen blend, stays in [0,1].
template <class S>
void screen_blend(Tensor<S>& img, const Tensor<S>& overlay, double strength) {
    int h = img.dim(1), w = img.dim(2), c = img.dim(3);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double a = static_cast<double>(overlay.at4(0, y, x, 0)) * strength;
            for (int ch = 0; ch < c; ++ch) {
                double v = img.at4(0, y, x, ch);
                img.at4(0, y, x, ch) = static_cast<S>(1.0 - (1.0 - v) * (1.0 - a));
            }
        }
}

}  // namespace synth_detail

// ---------------------------------------------------------------------------
// Haze: atmospheric scattering I = J*t + A*(1 - t)
// ---------------------------------------------------------------------------

template <class S>
Tensor<S> add_haze(const Tensor<S>& img, double atmospheric_light, double transmission) {
    if (transmission <= 0.0) throw ConfigError("add_haze: transmission must be > 0");
    Tensor<S> out = img;
    for (int64_t i = 0; i < out.numel(); ++i)
        out[i] = static_cast<S>(out[i] * transmission + atmospheric_light * (1.0 - transmission));
    synth_detail::clamp01(out);
    return out;
}

/// Per-pixel transmission field variant (single-channel map, same spatial dims).
template <class S>
Tensor<S> add_haze(const Tensor<S>& img, double atmospheric_light, const Tensor<S>& t_field) {
    if (t_field.dim(1) != img.dim(1) || t_field.dim(2) != img.dim(2))
        throw ShapeError("add_haze: transmission field dims differ from image");
    Tensor<S> out = img;
    int h = img.dim(1), w = img.dim(2), c = img.dim(3);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double t = t_field.at4(0, y, x, 0);
            if (t <= 0.0) throw ConfigError("add_haze: transmission field must be > 0");
            for (int ch = 0; ch < c; ++ch)
                out.at4(0, y, x, ch) = static_cast<S>(out.at4(0, y, x, ch) * t +
                                                      atmospheric_light * (1.0 - t));
        }
    synth_detail::clamp01(out);
    return out;
}

/// Smoothly varying transmission around spec.transmission, derived from the seed.
template <class S>
Tensor<S> make_transmission_field(const DegradationSpec& spec, int h, int w) {
    Rng rng = stream_rng(spec.seed, "haze_field");
    Tensor<S> noise = synth_detail::value_noise<S>(h, w, 16, rng);
    Tensor<S> field(Shape{1, h, w, 1});
    for (int64_t i = 0; i < field.numel(); ++i) {
        double t = spec.transmission + (static_cast<double>(noise[i]) - 0.5) * 0.3;
        field[i] = static_cast<S>(std::min(1.0, std::max(0.05, t)));
    }
    return field;
}

// ---------------------------------------------------------------------------
// Rain streaks
// ---------------------------------------------------------------------------

template <class S>
Tensor<S> add_rain_streaks(const Tensor<S>& img, const DegradationSpec& spec) {
    spec.validate();
    if (spec.density == 0.0) return img;
    int h = img.dim(1), w = img.dim(2);
    int count = std::min(2000, static_cast<int>(std::lround(spec.density * h * w / 1000.0)));
    Rng rng = stream_rng(spec.seed, "rain_streaks");
    Tensor<S> overlay(Shape{1, h, w, 1}, S(0));
    for (int i = 0; i < count; ++i) {
        double cx = rng.uniform(0, w), cy = rng.uniform(0, h);
        double len = rng.uniform(8.0, 20.0);
        double ang = (spec.angle_deg + rng.uniform(-5.0, 5.0)) * M_PI / 180.0;
        double bright = rng.uniform(0.35, 0.8);
        double dx = std::cos(ang), dy = std::sin(ang);
        int steps = static_cast<int>(len * 2);
        for (int s = 0; s <= steps; ++s) {
            double f = static_cast<double>(s) / steps - 0.5;
            // Motion-blur-like taper toward both ends.
            double taper = 1.0 - 2.0 * std::abs(f);
            synth_detail::splat(overlay, cx + f * len * dx, cy + f * len * dy, 0.7,
                                bright * taper * 0.25);
        }
    }
    Tensor<S> out = img;
    synth_detail::screen_blend(out, overlay, spec.intensity);
    return out;
}

// ---------------------------------------------------------------------------
// Raindrops
// ---------------------------------------------------------------------------

struct RaindropPlacement {
    double cx, cy, rx, ry;
};

/// Non-overlapping elliptical drop placements drawn from (spec.seed, density).
inline std::vector<RaindropPlacement> raindrop_placements(const DegradationSpec& spec, int h,
                                                          int w) {
    int want = std::min(200, static_cast<int>(std::lround(spec.density * h * w / 3000.0)));
    Rng rng = stream_rng(spec.seed, "raindrops");
    std::vector<RaindropPlacement> drops;
    for (int i = 0; i < want; ++i) {
        for (int attempt = 0; attempt < 64; ++attempt) {
            RaindropPlacement d;
            d.rx = rng.uniform(3.0, 7.0);
            d.ry = d.rx * rng.uniform(0.9, 1.3);
            d.cx = rng.uniform(d.rx + 1, w - d.rx - 2);
            d.cy = rng.uniform(d.ry + 1, h - d.ry - 2);
            bool ok = true;
            for (const auto& o : drops) {
                double ddx = d.cx - o.cx, ddy = d.cy - o.cy;
                double sep = std::max(d.rx, d.ry) + std::max(o.rx, o.ry) + 2.0;
                if (ddx * ddx + ddy * ddy < sep * sep) {
                    ok = false;
                    break;
                }
            }
            if (ok) {
                drops.push_back(d);
                break;
            }
        }
    }
    return drops;
}

template <class S>
Tensor<S> add_raindrops(const Tensor<S>& img, const DegradationSpec& spec) {
    spec.validate();
    if (spec.density == 0.0) return img;
    int h = img.dim(1), w = img.dim(2), c = img.dim(3);
    auto drops = raindrop_placements(spec, h, w);
    Tensor<S> out = img;
    for (const auto& d : drops) {
        int x0 = std::max(0, static_cast<int>(d.cx - d.rx)), x1 = std::min(w - 1, static_cast<int>(d.cx + d.rx) + 1);
        int y0 = std::max(0, static_cast<int>(d.cy - d.ry)), y1 = std::min(h - 1, static_cast<int>(d.cy + d.ry) + 1);
        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x) {
                double nx = (x - d.cx) / d.rx, ny = (y - d.cy) / d.ry;
                double r2 = nx * nx + ny * ny;
                if (r2 > 1.0) continue;  // outside the blob: untouched
                // Refraction-style warp: sample a shrunk, vertically flipped
                // neighborhood, lightly blurred, brightened toward the rim.
                double sx = d.cx + nx * d.rx * 0.45;
                double sy = d.cy - ny * d.ry * 0.45;
                int isx = std::min(w - 1, std::max(0, static_cast<int>(std::lround(sx))));
                int isy = std::min(h - 1, std::max(0, static_cast<int>(std::lround(sy))));
                for (int ch = 0; ch < c; ++ch) {
                    double acc = 0.0;
                    int cnt = 0;
                    for (int oy = -1; oy <= 1; ++oy)
                        for (int ox = -1; ox <= 1; ++ox) {
                            int yy = std::min(h - 1, std::max(0, isy + oy));
                            int xx = std::min(w - 1, std::max(0, isx + ox));
                            acc += img.at4(0, yy, xx, ch);
                            ++cnt;
                        }
                    double v = acc / cnt + 0.12 * r2 * spec.intensity;
                    out.at4(0, y, x, ch) = static_cast<S>(std::min(1.0, std::max(0.0, v)));
                }
            }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Snow
// ---------------------------------------------------------------------------

template <class S>
Tensor<S> add_snow(const Tensor<S>& img, const DegradationSpec& spec) {
    spec.validate();
    if (spec.density == 0.0) return img;
    int h = img.dim(1), w = img.dim(2), c = img.dim(3);
    Rng rng = stream_rng(spec.seed, "snow");
    Tensor<S> out = img;
    // Layer 1: small translucent flakes.
    int soft = std::min(4000, static_cast<int>(std::lround(spec.density * h * w / 400.0)));
    Tensor<S> overlay(Shape{1, h, w, 1}, S(0));
    for (int i = 0; i < soft; ++i)
        synth_detail::splat(overlay, rng.uniform(0, w), rng.uniform(0, h), rng.uniform(0.8, 2.0),
                            rng.uniform(0.4, 0.9));
    synth_detail::screen_blend(out, overlay, spec.intensity * 0.5);
    // Layer 2: sparse opaque flakes written at alpha 1.
    const S flake[3] = {S(0.95), S(0.97), S(1.0)};
    int hard = std::min(400, static_cast<int>(std::lround(spec.density * h * w / 4000.0)));
    for (int i = 0; i < hard; ++i) {
        int cx = rng.uniform_int(1, w - 2), cy = rng.uniform_int(1, h - 2);
        double r = rng.uniform(0.8, 1.8);
        int ir = static_cast<int>(std::ceil(r));
        for (int y = std::max(0, cy - ir); y <= std::min(h - 1, cy + ir); ++y)
            for (int x = std::max(0, cx - ir); x <= std::min(w - 1, cx + ir); ++x)
                if ((x - cx) * (x - cx) + (y - cy) * (y - cy) <= r * r)
                    for (int ch = 0; ch < c; ++ch) out.at4(0, y, x, ch) = flake[ch % 3];
    }
    return out;
}

// ---------------------------------------------------------------------------
// Dispatch, clean-image synthesis, dataset generation
// ---------------------------------------------------------------------------

template <class S>
Tensor<S> apply_degradation(const Tensor<S>& img, const DegradationSpec& spec) {
    spec.validate();
    if (spec.density == 0.0 && spec.kind != DegradationKind::haze) return img;
    switch (spec.kind) {
        case DegradationKind::rain_streak: return add_rain_streaks(img, spec);
        case DegradationKind::raindrop: return add_raindrops(img, spec);
        case DegradationKind::haze:
            return add_haze(img, spec.atmospheric_light,
                            make_transmission_field<S>(spec, img.dim(1), img.dim(2)));
        case DegradationKind::snow: return add_snow(img, spec);
        case DegradationKind::mixed: {
            // At least two degradations, chosen by the seed.
            Rng rng = stream_rng(spec.seed, "mixed_choice");
            DegradationSpec a = spec, b = spec;
            a.seed = stream_rng(spec.seed, "mixed_a").next_u64();
            b.seed = stream_rng(spec.seed, "mixed_b").next_u64();
            int combo = rng.uniform_int(0, 2);
            if (combo == 0) {
                a.kind = DegradationKind::rain_streak;
                b.kind = DegradationKind::haze;
            } else if (combo == 1) {
                a.kind = DegradationKind::snow;
                b.kind = DegradationKind::haze;
            } else {
                a.kind = DegradationKind::raindrop;
                b.kind = DegradationKind::rain_streak;
            }
            return apply_degradation(apply_degradation(img, a), b);
        }
    }
    return img;
}

/// Procedural clean image: gradient background, a few soft shapes, mild
/// texture noise. Self-contained and license-free by construction.
template <class S>
Tensor<S> make_clean_image(int h, int w, uint64_t seed) {
    Rng rng = stream_rng(seed, "clean_image");
    Tensor<S> img(Shape{1, h, w, 3});
    double c0[3], c1[3];
    for (int i = 0; i < 3; ++i) {
        c0[i] = rng.uniform(0.1, 0.9);
        c1[i] = rng.uniform(0.1, 0.9);
    }
    double ang = rng.uniform(0.0, 2.0 * M_PI);
    double gx = std::cos(ang), gy = std::sin(ang);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double t = 0.5 + 0.5 * ((x - w / 2.0) / w * gx + (y - h / 2.0) / h * gy);
            for (int ch = 0; ch < 3; ++ch)
                img.at4(0, y, x, ch) = static_cast<S>(c0[ch] * (1 - t) + c1[ch] * t);
        }
    int shapes = rng.uniform_int(3, 7);
    for (int s = 0; s < shapes; ++s) {
        double cx = rng.uniform(0, w), cy = rng.uniform(0, h);
        double rx = rng.uniform(w * 0.06, w * 0.25), ry = rng.uniform(h * 0.06, h * 0.25);
        double col[3] = {rng.uniform(0.05, 0.95), rng.uniform(0.05, 0.95), rng.uniform(0.05, 0.95)};
        double alpha = rng.uniform(0.5, 1.0);
        bool rect = rng.uniform() < 0.4;
        int x0 = std::max(0, static_cast<int>(cx - rx)), x1 = std::min(w - 1, static_cast<int>(cx + rx));
        int y0 = std::max(0, static_cast<int>(cy - ry)), y1 = std::min(h - 1, static_cast<int>(cy + ry));
        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x) {
                double nx = (x - cx) / rx, ny = (y - cy) / ry;
                double in = rect ? 1.0 : (nx * nx + ny * ny <= 1.0 ? 1.0 : 0.0);
                if (in == 0.0) continue;
                for (int ch = 0; ch < 3; ++ch) {
                    double v = img.at4(0, y, x, ch);
                    img.at4(0, y, x, ch) = static_cast<S>(v * (1 - alpha) + col[ch] * alpha);
                }
            }
    }
    Rng nrng = stream_rng(seed, "clean_noise");
    Tensor<S> noise = synth_detail::value_noise<S>(h, w, 6, nrng);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double d = (static_cast<double>(noise.at4(0, y, x, 0)) - 0.5) * 0.06;
            for (int ch = 0; ch < 3; ++ch)
                img.at4(0, y, x, ch) =
                    static_cast<S>(std::min(1.0, std::max(0.0, img.at4(0, y, x, ch) + d)));
        }
    return img;
}

/// Sample k depends only on (seed, k): regenerating any single index
/// reproduces the value from a full run.
template <class S>
PairedSample<S> synth_sample(int h, int w, const std::vector<DegradationSpec>& kinds,
                             uint64_t seed, int64_t index) {
    if (kinds.empty()) throw ConfigError("synth_sample: empty degradation list");
    Rng rng = stream_rng(seed, static_cast<uint64_t>(index));
    PairedSample<S> out;
    out.clean = make_clean_image<S>(h, w, rng.next_u64());
    out.spec = kinds[static_cast<size_t>(index) % kinds.size()];
    out.spec.seed = rng.next_u64();
    out.degraded = apply_degradation(out.clean, out.spec);
    return out;
}

template <class S>
std::vector<PairedSample<S>> synth_dataset(int n, int h, int w,
                                           const std::vector<DegradationSpec>& kinds,
                                           uint64_t seed) {
    if (n < 1) throw ConfigError("synth_dataset: n must be >= 1");
    if (kinds.empty()) throw ConfigError("synth_dataset: empty degradation list");
    std::vector<PairedSample<S>> out;
    out.reserve(static_cast<size_t>(n));
    for (int k = 0; k < n; ++k) out.push_back(synth_sample<S>(h, w, kinds, seed, k));
    return out;
}

inline std::vector<DegradationSpec> default_specs() {
    std::vector<DegradationSpec> v(5);
    v[0].kind = DegradationKind::rain_streak;
    v[1].kind = DegradationKind::raindrop;
    v[1].density = 2.5;
    v[2].kind = DegradationKind::haze;
    v[2].transmission = 0.6;
    v[3].kind = DegradationKind::snow;
    v[4].kind = DegradationKind::mixed;
    return v;
}

}  // namespace clearsky
