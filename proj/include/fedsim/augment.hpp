#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "fedsim/errors.hpp"
#include "fedsim/rng.hpp"
#include "fedsim/tensor.hpp"

namespace fedsim {

/// Enabled augmentation ops plus their parameter ranges. Per batch exactly
/// one enabled op is drawn uniformly and applied with one parameter set.
struct AugmentationSpec {
    bool crop = true;
    std::size_t crop_pad = 2;  // zero fill
    bool hflip = true;
    double hflip_prob = 0.5;
    bool rotate = true;
    double rotate_max_deg = 15.0;
    bool scale = true;
    double scale_lo = 0.9;
    double scale_hi = 1.1;

    void validate() const {
        if (hflip && !(hflip_prob >= 0.0 && hflip_prob <= 1.0))
            throw ConfigError("hflip_prob must be in [0,1]");
        if (rotate && rotate_max_deg < 0.0)
            throw ConfigError("rotate_max_deg must be non-negative");
        if (scale && !(scale_lo > 0.0 && scale_lo <= scale_hi))
            throw ConfigError("scale range requires 0 < lo <= hi");
    }

    std::size_t enabled_count() const {
        return std::size_t(crop) + std::size_t(hflip) + std::size_t(rotate) + std::size_t(scale);
    }

    static AugmentationSpec none() {
        AugmentationSpec s;
        s.crop = s.hflip = s.rotate = s.scale = false;
        return s;
    }
};

/// One drawn transform instance. Drawing and applying are separate so the
/// same transform can be replayed on a paired batch (clean/adversarial).
struct BatchTransform {
    enum class Kind { kIdentity, kTranslate, kHflip, kRotate, kScale };
    Kind kind = Kind::kIdentity;
    int dx = 0, dy = 0;      // translate
    bool flip = false;       // hflip outcome
    double angle_deg = 0.0;  // rotate
    double factor = 1.0;     // scale
};

inline BatchTransform draw_transform(const AugmentationSpec& spec, RngStream& rng) {
    spec.validate();
    BatchTransform t;
    const std::size_t n = spec.enabled_count();
    if (n == 0) return t;
    std::size_t pick = static_cast<std::size_t>(rng.next_below(n));
    if (spec.crop) {
        if (pick == 0) {
            t.kind = BatchTransform::Kind::kTranslate;
            const int span = 2 * static_cast<int>(spec.crop_pad) + 1;
            t.dx = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(span))) -
                   static_cast<int>(spec.crop_pad);
            t.dy = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(span))) -
                   static_cast<int>(spec.crop_pad);
            return t;
        }
        --pick;
    }
    if (spec.hflip) {
        if (pick == 0) {
            t.kind = BatchTransform::Kind::kHflip;
            t.flip = rng.next_double() < spec.hflip_prob;
            return t;
        }
        --pick;
    }
    if (spec.rotate) {
        if (pick == 0) {
            t.kind = BatchTransform::Kind::kRotate;
            t.angle_deg = rng.uniform(-spec.rotate_max_deg, spec.rotate_max_deg);
            return t;
        }
        --pick;
    }
    t.kind = BatchTransform::Kind::kScale;
    t.factor = rng.uniform(spec.scale_lo, spec.scale_hi);
    return t;
}

namespace detail {

// Bilinear sample with zero padding outside the image.
inline double bilinear(const double* img, std::size_t h, std::size_t w, double y, double x) {
    const double fy = std::floor(y), fx = std::floor(x);
    const long y0 = static_cast<long>(fy), x0 = static_cast<long>(fx);
    const double wy = y - fy, wx = x - fx;
    auto px = [&](long yy, long xx) -> double {
        if (yy < 0 || xx < 0 || yy >= static_cast<long>(h) || xx >= static_cast<long>(w))
            return 0.0;
        return img[static_cast<std::size_t>(yy) * w + static_cast<std::size_t>(xx)];
    };
    return (1.0 - wy) * ((1.0 - wx) * px(y0, x0) + wx * px(y0, x0 + 1)) +
           wy * ((1.0 - wx) * px(y0 + 1, x0) + wx * px(y0 + 1, x0 + 1));
}

}  // namespace detail

/// Applies one transform to a whole B x H x W batch. Output stays in [0,1]
/// and keeps the input shape.
inline Tensor apply_transform(const Tensor& batch, const BatchTransform& t) {
    if (batch.rank() != 3) throw ShapeError("augmentation expects a B x H x W batch");
    const std::size_t b = batch.dim(0), h = batch.dim(1), w = batch.dim(2);
    using Kind = BatchTransform::Kind;
    if (t.kind == Kind::kIdentity || (t.kind == Kind::kHflip && !t.flip)) return batch;

    Tensor out = Tensor::zeros(batch.shape);
    for (std::size_t i = 0; i < b; ++i) {
        const double* src = batch.data.data() + i * h * w;
        double* dst = out.data.data() + i * h * w;
        switch (t.kind) {
            case Kind::kTranslate:
                for (long y = 0; y < static_cast<long>(h); ++y)
                    for (long x = 0; x < static_cast<long>(w); ++x) {
                        const long sy = y - t.dy, sx = x - t.dx;
                        if (sy >= 0 && sx >= 0 && sy < static_cast<long>(h) &&
                            sx < static_cast<long>(w))
                            dst[y * static_cast<long>(w) + x] =
                                src[sy * static_cast<long>(w) + sx];
                    }
                break;
            case Kind::kHflip:
                for (std::size_t y = 0; y < h; ++y)
                    for (std::size_t x = 0; x < w; ++x)
                        dst[y * w + x] = src[y * w + (w - 1 - x)];
                break;
            case Kind::kRotate: {
                const double rad = t.angle_deg * 3.14159265358979323846 / 180.0;
                const double cs = std::cos(rad), sn = std::sin(rad);
                const double cy = (static_cast<double>(h) - 1.0) / 2.0;
                const double cx = (static_cast<double>(w) - 1.0) / 2.0;
                for (std::size_t y = 0; y < h; ++y)
                    for (std::size_t x = 0; x < w; ++x) {
                        const double ry = static_cast<double>(y) - cy;
                        const double rx = static_cast<double>(x) - cx;
                        // inverse rotation maps output pixels to source coords
                        const double sy = cy + (sn * rx + cs * ry);
                        const double sx = cx + (cs * rx - sn * ry);
                        dst[y * w + x] = detail::bilinear(src, h, w, sy, sx);
                    }
                break;
            }
            case Kind::kScale: {
                const double cy = (static_cast<double>(h) - 1.0) / 2.0;
                const double cx = (static_cast<double>(w) - 1.0) / 2.0;
                const double inv = 1.0 / t.factor;
                for (std::size_t y = 0; y < h; ++y)
                    for (std::size_t x = 0; x < w; ++x) {
                        const double sy = cy + (static_cast<double>(y) - cy) * inv;
                        const double sx = cx + (static_cast<double>(x) - cx) * inv;
                        dst[y * w + x] = detail::bilinear(src, h, w, sy, sx);
                    }
                break;
            }
            default:
                break;
        }
    }
    return out;
}

/// Draw one transform from the enabled ops and apply it to the batch, advancing the
/// stream. Replaying the same stream state reproduces the batch exactly.
inline Tensor augment_batch(const Tensor& batch, const AugmentationSpec& spec, RngStream& rng) {
    return apply_transform(batch, draw_transform(spec, rng));
}

}  // namespace fedsim
