#pragma once

// Domain enhancement: mask-driven background substitution followed by
// threshold-gated visual corruptions.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <iostream>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "metadefa/rng.hpp"
#include "metadefa/tensor.hpp"

namespace metadefa {

struct LabeledImage {
    Tensor pixels;               // [3, H, W], values in [0, 1]
    std::size_t label = 0;
    std::optional<Tensor> mask;  // [H, W], 1 = foreground
    std::size_t id = 0;          // sample identity within its dataset

    std::size_t height() const { return pixels.dim(1); }
    std::size_t width() const { return pixels.dim(2); }

    void validate() const {
        require_rank(pixels, 3, "LabeledImage pixels");
        for (double v : pixels.values())
            if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument("LabeledImage: pixel outside [0, 1]");
        if (mask) {
            require_shape(*mask, {height(), width()}, "LabeledImage mask");
            for (double v : mask->values())
                if (v != 0.0 && v != 1.0) throw std::invalid_argument("LabeledImage: mask is not binary");
        }
    }
};

class AugmentError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// corruption catalogue
// ---------------------------------------------------------------------------

enum class CorruptionKind : std::uint8_t {
    GaussianNoise,
    ImpulseNoise,
    GaussianBlur,
    Brightness,
    Contrast,
    Grayscale,
    Pixelate,
};

inline constexpr std::size_t kNumCorruptionKinds = 7;
inline constexpr std::size_t kNumSeverities = 5;
using SeverityTable = std::array<double, kNumSeverities>;

inline constexpr std::array<std::string_view, kNumCorruptionKinds> kCorruptionNames{
    "gaussian_noise", "impulse_noise", "gaussian_blur", "brightness", "contrast", "grayscale", "pixelate"};

inline std::string_view corruption_name(CorruptionKind kind) { return kCorruptionNames[static_cast<std::size_t>(kind)]; }

inline CorruptionKind corruption_from_name(std::string_view name) {
    for (std::size_t i = 0; i < kNumCorruptionKinds; ++i)
        if (kCorruptionNames[i] == name) return static_cast<CorruptionKind>(i);
    throw std::invalid_argument("unknown corruption kind '" + std::string(name) + "'");
}

// Severity 1..5 parameter per kind:
//   gaussian_noise  noise sigma
//   impulse_noise   fraction of salt-and-pepper pixels
//   gaussian_blur   blur sigma (3x3 kernel for severity 1-2, 5x5 above)
//   brightness      magnitude of an additive shift with random sign
//   contrast        factor applied to deviations from the image mean
//   grayscale       blend weight toward luminance
//   pixelate        block edge length in pixels
inline std::array<SeverityTable, kNumCorruptionKinds> default_severity_tables() {
    return {{
        {0.02, 0.04, 0.08, 0.12, 0.18},
        {0.01, 0.02, 0.04, 0.07, 0.10},
        {0.5, 0.75, 1.0, 1.5, 2.0},
        {0.05, 0.10, 0.15, 0.20, 0.30},
        {0.80, 0.65, 0.50, 0.40, 0.30},
        {0.2, 0.4, 0.6, 0.8, 1.0},
        {2, 2, 3, 4, 4},
    }};
}

inline std::vector<CorruptionKind> all_corruptions() {
    std::vector<CorruptionKind> v;
    for (std::size_t i = 0; i < kNumCorruptionKinds; ++i) v.push_back(static_cast<CorruptionKind>(i));
    return v;
}

struct CorruptionConfig {
    double threshold = 0.5;
    int severity_min = 1;
    int severity_max = 5;
    std::vector<CorruptionKind> enabled = all_corruptions();  // applied in this order
    std::array<SeverityTable, kNumCorruptionKinds> tables = default_severity_tables();

    void validate() const {
        if (!(threshold >= 0.0 && threshold <= 1.0)) {
            throw std::invalid_argument("CorruptionConfig: threshold must be in [0, 1]");
        }
        if (severity_min < 1 || severity_max > 5 || severity_min > severity_max) {
            throw std::invalid_argument("CorruptionConfig: severity range must satisfy 1 <= min <= max <= 5");
        }
    }

    double parameter(CorruptionKind kind, int severity) const {
        return tables[static_cast<std::size_t>(kind)][static_cast<std::size_t>(severity - 1)];
    }
};

// ---------------------------------------------------------------------------
// individual corruptions; all operate in place on [C, H, W] pixels
// ---------------------------------------------------------------------------

namespace corrupt {

inline void clamp01(Tensor& px) {
    for (double& v : px.values()) v = std::clamp(v, 0.0, 1.0);
}

inline void gaussian_noise(Tensor& px, double sigma, Rng& rng) {
    for (double& v : px.values()) v += sigma * rng.normal();
}

inline void impulse_noise(Tensor& px, double fraction, Rng& rng) {
    for (double& v : px.values())
        if (rng.uniform() < fraction) v = rng.uniform() < 0.5 ? 0.0 : 1.0;
}

inline void gaussian_blur(Tensor& px, double sigma, std::size_t radius) {
    const std::size_t c = px.dim(0), h = px.dim(1), w = px.dim(2);
    std::vector<double> k(2 * radius + 1);
    double ks = 0.0;
    for (std::size_t i = 0; i < k.size(); ++i) {
        const double d = static_cast<double>(i) - static_cast<double>(radius);
        k[i] = std::exp(-d * d / (2.0 * sigma * sigma));
        ks += k[i];
    }
    for (double& v : k) v /= ks;
    auto clampi = [](std::ptrdiff_t v, std::size_t n) {
        return static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(v, 0, static_cast<std::ptrdiff_t>(n) - 1));
    };
    Tensor tmp(px.shape());
    const auto r = static_cast<std::ptrdiff_t>(radius);
    // separable: horizontal then vertical, replicate edges
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x) {
                double s = 0.0;
                for (std::ptrdiff_t d = -r; d <= r; ++d)
                    s += k[static_cast<std::size_t>(d + r)] * px.at(ch, y, clampi(static_cast<std::ptrdiff_t>(x) + d, w));
                tmp.at(ch, y, x) = s;
            }
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x) {
                double s = 0.0;
                for (std::ptrdiff_t d = -r; d <= r; ++d)
                    s += k[static_cast<std::size_t>(d + r)] * tmp.at(ch, clampi(static_cast<std::ptrdiff_t>(y) + d, h), x);
                px.at(ch, y, x) = s;
            }
}

inline void brightness(Tensor& px, double shift, Rng& rng) {
    const double delta = rng.uniform() < 0.5 ? -shift : shift;
    for (double& v : px.values()) v += delta;
}

inline void contrast(Tensor& px, double factor) {
    const std::size_t c = px.dim(0), hw = px.dim(1) * px.dim(2);
    for (std::size_t ch = 0; ch < c; ++ch) {
        double mean = 0.0;
        for (std::size_t i = 0; i < hw; ++i) mean += px[ch * hw + i];
        mean /= static_cast<double>(hw);
        for (std::size_t i = 0; i < hw; ++i) px[ch * hw + i] = mean + factor * (px[ch * hw + i] - mean);
    }
}

inline void grayscale(Tensor& px, double weight) {
    if (px.dim(0) != 3) return;
    const std::size_t hw = px.dim(1) * px.dim(2);
    for (std::size_t i = 0; i < hw; ++i) {
        const double lum = 0.299 * px[i] + 0.587 * px[hw + i] + 0.114 * px[2 * hw + i];
        for (std::size_t ch = 0; ch < 3; ++ch) px[ch * hw + i] += weight * (lum - px[ch * hw + i]);
    }
}

inline void pixelate(Tensor& px, std::size_t block) {
    if (block < 2) return;
    const std::size_t c = px.dim(0), h = px.dim(1), w = px.dim(2);
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t by = 0; by < h; by += block)
            for (std::size_t bx = 0; bx < w; bx += block) {
                const std::size_t ey = std::min(by + block, h), ex = std::min(bx + block, w);
                double s = 0.0;
                for (std::size_t y = by; y < ey; ++y)
                    for (std::size_t x = bx; x < ex; ++x) s += px.at(ch, y, x);
                s /= static_cast<double>((ey - by) * (ex - bx));
                for (std::size_t y = by; y < ey; ++y)
                    for (std::size_t x = bx; x < ex; ++x) px.at(ch, y, x) = s;
            }
}

inline void apply(Tensor& px, CorruptionKind kind, double param, int severity, Rng& rng) {
    switch (kind) {
        case CorruptionKind::GaussianNoise: gaussian_noise(px, param, rng); break;
        case CorruptionKind::ImpulseNoise: impulse_noise(px, param, rng); break;
        case CorruptionKind::GaussianBlur: gaussian_blur(px, param, severity <= 2 ? 1 : 2); break;
        case CorruptionKind::Brightness: brightness(px, param, rng); break;
        case CorruptionKind::Contrast: contrast(px, param); break;
        case CorruptionKind::Grayscale: grayscale(px, param); break;
        case CorruptionKind::Pixelate: pixelate(px, static_cast<std::size_t>(std::lround(param))); break;
    }
    clamp01(px);
}

}  // namespace corrupt

/// For each enabled kind, in order: draw p ~ U[0, 1) and apply the corruption at a
/// uniformly drawn severity iff p > threshold.
inline LabeledImage apply_corruptions(const LabeledImage& image, const CorruptionConfig& config, Rng& rng) {
    config.validate();
    LabeledImage out = image;
    for (CorruptionKind kind : config.enabled) {
        const double p = rng.uniform();
        if (!(p > config.threshold)) continue;
        const int severity = static_cast<int>(rng.uniform_int(config.severity_min, config.severity_max));
        corrupt::apply(out.pixels, kind, config.parameter(kind, severity), severity, rng);
    }
    return out;
}

// ---------------------------------------------------------------------------
// background substitution
// ---------------------------------------------------------------------------

/// Random crop covering 50-100% of the donor's area, resized to (h, w) by nearest neighbour.
inline Tensor random_donor_patch(const Tensor& donor, std::size_t h, std::size_t w, Rng& rng) {
    const std::size_t c = donor.dim(0), dh = donor.dim(1), dw = donor.dim(2);
    const double side = std::sqrt(rng.uniform(0.5, 1.0));
    const std::size_t ch = std::clamp<std::size_t>(static_cast<std::size_t>(std::lround(side * static_cast<double>(dh))), 1, dh);
    const std::size_t cw = std::clamp<std::size_t>(static_cast<std::size_t>(std::lround(side * static_cast<double>(dw))), 1, dw);
    const std::size_t y0 = rng.index(dh - ch + 1);
    const std::size_t x0 = rng.index(dw - cw + 1);
    Tensor patch({c, h, w});
    for (std::size_t k = 0; k < c; ++k)
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x) patch.at(k, y, x) = donor.at(k, y0 + y * ch / h, x0 + x * cw / w);
    return patch;
}

/// out = mask * image + (1 - mask) * patch
inline Tensor composite(const Tensor& image, const Tensor& mask, const Tensor& patch) {
    const std::size_t c = image.dim(0), hw = image.dim(1) * image.dim(2);
    Tensor out(image.shape());
    for (std::size_t k = 0; k < c; ++k)
        for (std::size_t i = 0; i < hw; ++i) {
            const double m = mask[i];
            out[k * hw + i] = m * image[k * hw + i] + (1.0 - m) * patch[k * hw + i];
        }
    return out;
}

inline LabeledImage background_substitute(const LabeledImage& image, const LabeledImage& donor, Rng& rng) {
    if (!image.mask) throw AugmentError("background_substitute: image " + std::to_string(image.id) + " has no mask");
    if (donor.label == image.label) {
        throw AugmentError("background_substitute: donor must come from a different class");
    }
    if (donor.pixels.dim(0) != image.pixels.dim(0)) {
        throw AugmentError("background_substitute: donor channel count differs");
    }
    const Tensor patch = random_donor_patch(donor.pixels, image.height(), image.width(), rng);
    LabeledImage out = image;
    out.pixels = composite(image.pixels, *image.mask, patch);
    corrupt::clamp01(out.pixels);
    return out;
}

/// Centered rectangle covering 60% of the image area.
inline Tensor centered_pseudo_mask(std::size_t h, std::size_t w) {
    const double side = std::sqrt(0.6);
    const auto mh = static_cast<std::size_t>(std::lround(side * static_cast<double>(h)));
    const auto mw = static_cast<std::size_t>(std::lround(side * static_cast<double>(w)));
    const std::size_t y0 = (h - mh) / 2, x0 = (w - mw) / 2;
    Tensor m({h, w});
    for (std::size_t y = y0; y < y0 + mh; ++y)
        for (std::size_t x = x0; x < x0 + mw; ++x) m.at(y, x) = 1.0;
    return m;
}

/// Augmented copy of `batch`: background substitution with a different-class donor
/// from `pool`, then corruptions. Item i draws from its own stream derive_seed(base, i).
inline std::vector<LabeledImage> enhance_batch(const std::vector<LabeledImage>& batch,
                                               const std::vector<LabeledImage>& pool,
                                               const CorruptionConfig& config, Rng& rng) {
    config.validate();
    const std::uint64_t base = rng.next_u64();
    std::vector<LabeledImage> out;
    out.reserve(batch.size());
    static bool warned = false;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        Rng item_rng(derive_seed(base, i));
        const LabeledImage& src = batch[i];
        std::vector<std::size_t> donors;
        for (std::size_t j = 0; j < pool.size(); ++j)
            if (pool[j].label != src.label) donors.push_back(j);
        if (donors.empty()) {
            throw AugmentError("enhance_batch: no donor of a class other than " + std::to_string(src.label));
        }
        const LabeledImage& donor = pool[donors[item_rng.index(donors.size())]];
        LabeledImage substituted;
        if (src.mask) {
            substituted = background_substitute(src, donor, item_rng);
        } else {
            if (!warned) {
                std::cerr << "warning: image without mask; using centered pseudo-mask for background substitution\n";
                warned = true;
            }
            LabeledImage masked = src;
            masked.mask = centered_pseudo_mask(src.height(), src.width());
            substituted = background_substitute(masked, donor, item_rng);
            substituted.mask.reset();
        }
        out.push_back(apply_corruptions(substituted, config, item_rng));
    }
    return out;
}

}  // namespace metadefa
