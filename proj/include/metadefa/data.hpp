#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "metadefa/augment.hpp"
#include "metadefa/image_io.hpp"
#include "metadefa/rng.hpp"
#include "metadefa/tensor.hpp"

namespace metadefa {

struct DomainDataset {
    std::string name;
    std::vector<LabeledImage> samples;
    std::vector<std::string> class_names;

    void validate() const {
        if (samples.empty()) throw std::invalid_argument("DomainDataset '" + name + "': no samples");
        std::vector<bool> seen(class_names.size(), false);
        const Shape& s0 = samples.front().pixels.shape();
        for (const auto& s : samples) {
            if (s.label >= class_names.size()) {
                throw std::invalid_argument("DomainDataset '" + name + "': label out of range");
            }
            seen[s.label] = true;
            if (s.pixels.shape() != s0) throw std::invalid_argument("DomainDataset '" + name + "': mixed image shapes");
            s.validate();
        }
        for (std::size_t c = 0; c < seen.size(); ++c)
            if (!seen[c]) throw std::invalid_argument("DomainDataset '" + name + "': class '" + class_names[c] + "' absent");
    }
};

// ---------------------------------------------------------------------------
// synthetic shape-domain benchmark
// ---------------------------------------------------------------------------

enum class ShapeKind : std::uint8_t { Disk, Square, Triangle, Cross };
inline constexpr std::array<const char*, 4> kShapeNames{"disk", "square", "triangle", "cross"};

enum class Texture : std::uint8_t { Flat, Stripes, Noise, Checker };
inline constexpr std::array<const char*, 4> kTextureNames{"flat", "stripes", "noise", "checker"};

inline Texture texture_from_name(const std::string& name) {
    for (std::size_t i = 0; i < kTextureNames.size(); ++i)
        if (name == kTextureNames[i]) return static_cast<Texture>(i);
    throw std::invalid_argument("unknown texture '" + name + "'");
}

struct DomainStyle {
    std::string name;
    std::array<double, 3> palette{0.5, 0.5, 0.5};  // background base colour
    Texture texture = Texture::Flat;
    double noise_level = 0.0;  // sigma of global pixel noise
    double palette_jitter = 0.06;  // per-image uniform offset of each background channel
    double texture_amplitude = 0.0;  // peak background texture offset
};

struct SyntheticSpec {
    std::size_t num_classes = 4;
    std::size_t per_class = 50;
    std::size_t image_size = 16;
    std::vector<DomainStyle> domains = default_domains();

    static std::vector<DomainStyle> default_domains() {
        return {
            {"source", {0.60, 0.56, 0.48}, Texture::Flat, 0.02, 0.15, 0.0},
            {"stripes", {0.30, 0.45, 0.80}, Texture::Stripes, 0.03, 0.06, 0.10},
            {"speckle", {0.35, 0.65, 0.35}, Texture::Noise, 0.05, 0.06, 0.12},
            {"dusk", {0.22, 0.14, 0.30}, Texture::Checker, 0.08, 0.06, 0.08},
        };
    }

    void validate() const {
        if (num_classes < 2 || num_classes > kShapeNames.size()) {
            throw std::invalid_argument("SyntheticSpec: num_classes must be in [2, 4]");
        }
        if (domains.size() < 2) throw std::invalid_argument("SyntheticSpec: need at least 2 domains");
        if (per_class == 0) throw std::invalid_argument("SyntheticSpec: per_class must be >= 1");
        if (image_size < 8) throw std::invalid_argument("SyntheticSpec: image_size must be >= 8");
        for (std::size_t i = 0; i < domains.size(); ++i)
            for (std::size_t j = i + 1; j < domains.size(); ++j)
                if (domains[i].name == domains[j].name) {
                    throw std::invalid_argument("SyntheticSpec: duplicate domain '" + domains[i].name + "'");
                }
    }
};

/// Placement of one shape, in pixel units.
struct ShapeGeometry {
    ShapeKind kind = ShapeKind::Disk;
    double cx = 0, cy = 0, radius = 0;
};

inline bool shape_contains(const ShapeGeometry& g, double px, double py) {
    const double dx = px - g.cx, dy = py - g.cy, r = g.radius;
    switch (g.kind) {
        case ShapeKind::Disk: return dx * dx + dy * dy <= r * r;
        case ShapeKind::Square: return std::abs(dx) <= 0.8 * r && std::abs(dy) <= 0.8 * r;
        case ShapeKind::Triangle: {
            // apex up, base at dy = 0.8 r
            if (dy > 0.8 * r || dy < -r) return false;
            const double half_width = 0.95 * r * (dy + r) / (1.8 * r);
            return std::abs(dx) <= half_width;
        }
        case ShapeKind::Cross:
            return (std::abs(dx) <= 0.3 * r && std::abs(dy) <= r) || (std::abs(dy) <= 0.3 * r && std::abs(dx) <= r);
    }
    return false;
}

/// Binary [size, size] mask of pixel centres inside the shape.
inline Tensor rasterize_shape(const ShapeGeometry& g, std::size_t size) {
    Tensor m({size, size});
    for (std::size_t y = 0; y < size; ++y)
        for (std::size_t x = 0; x < size; ++x)
            m.at(y, x) = shape_contains(g, static_cast<double>(x) + 0.5, static_cast<double>(y) + 0.5) ? 1.0 : 0.0;
    return m;
}

namespace detail {

inline std::uint64_t name_hash(const std::string& s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

inline double quantize8(double v) { return static_cast<double>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)) / 255.0; }

inline double texture_value(Texture t, std::size_t x, std::size_t y, int period, int orientation, Rng& rng) {
    switch (t) {
        case Texture::Flat: return 0.0;
        case Texture::Stripes: {
            const std::size_t coord = orientation == 0 ? y : (orientation == 1 ? x : x + y);
            return (coord / static_cast<std::size_t>(period)) % 2 == 0 ? 1.0 : -1.0;
        }
        case Texture::Noise: return rng.uniform(-1.0, 1.0);
        case Texture::Checker:
            return ((x / static_cast<std::size_t>(period)) + (y / static_cast<std::size_t>(period))) % 2 == 0 ? 1.0 : -1.0;
    }
    return 0.0;
}

inline LabeledImage render_sample(const DomainStyle& style, ShapeKind kind, std::size_t size, Rng& rng) {
    const double s = static_cast<double>(size);
    ShapeGeometry g{kind, s / 2 + rng.uniform(-0.1, 0.1) * s, s / 2 + rng.uniform(-0.1, 0.1) * s,
                    rng.uniform(0.26, 0.36) * s};
    const Tensor mask = rasterize_shape(g, size);

    std::array<double, 3> bg{};
    for (std::size_t c = 0; c < 3; ++c) bg[c] = std::clamp(style.palette[c] + rng.uniform(-style.palette_jitter, style.palette_jitter), 0.0, 1.0);
    // foreground: the background shifted lighter or darker by a fixed-magnitude step
    double mean_bg = (bg[0] + bg[1] + bg[2]) / 3.0;
    double step = rng.uniform(0.35, 0.5);
    if (rng.uniform() < 0.5) step = -step;
    if (mean_bg + step > 1.0 || mean_bg + step < 0.0) step = -step;
    std::array<double, 3> fg{};
    for (std::size_t c = 0; c < 3; ++c) fg[c] = bg[c] + step;

    const int period = static_cast<int>(rng.uniform_int(3, 6));
    const int orientation = static_cast<int>(rng.uniform_int(0, 2));
    LabeledImage img;
    img.pixels = Tensor({3, size, size});
    for (std::size_t y = 0; y < size; ++y)
        for (std::size_t x = 0; x < size; ++x) {
            const bool inside = mask.at(y, x) > 0.5;
            const double tex = inside ? 0.0 : style.texture_amplitude * texture_value(style.texture, x, y, period, orientation, rng);
            for (std::size_t c = 0; c < 3; ++c) {
                const double base = inside ? fg[c] : bg[c] + tex;
                img.pixels.at(c, y, x) = base + style.noise_level * rng.normal();
            }
        }
    for (double& v : img.pixels.values()) v = quantize8(v);
    img.label = static_cast<std::size_t>(kind);
    img.mask = mask;
    return img;
}

}  // namespace detail

/// One dataset per domain style. Class = shape kind; style only affects background,
/// texture and noise. Each domain's stream is keyed by (seed, domain name).
inline std::vector<DomainDataset> generate_synthetic(const SyntheticSpec& spec, std::uint64_t seed) {
    spec.validate();
    std::vector<DomainDataset> out;
    for (const DomainStyle& style : spec.domains) {
        Rng rng(derive_seed(seed, detail::name_hash(style.name)));
        DomainDataset ds;
        ds.name = style.name;
        for (std::size_t c = 0; c < spec.num_classes; ++c) ds.class_names.emplace_back(kShapeNames[c]);
        for (std::size_t c = 0; c < spec.num_classes; ++c)
            for (std::size_t i = 0; i < spec.per_class; ++i) {
                LabeledImage img = detail::render_sample(style, static_cast<ShapeKind>(c), spec.image_size, rng);
                img.id = ds.samples.size();
                ds.samples.push_back(std::move(img));
            }
        out.push_back(std::move(ds));
    }
    return out;
}

// ---------------------------------------------------------------------------
// on-disk datasets: manifest + PPM/PGM
// ---------------------------------------------------------------------------

class DataError : public std::runtime_error {
public:
    enum class Kind { NoSamples, BadManifest, UnreadableFile, UnknownLabel, MaskShapeMismatch };
    DataError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    Kind kind() const noexcept { return kind_; }

private:
    Kind kind_;
};

struct LoadOptions {
    std::size_t input_size = 32;
    /// When empty, classes are taken in order of first appearance in the manifest.
    std::vector<std::string> class_names;
};

inline Tensor resize_nearest(const Tensor& img, std::size_t h, std::size_t w) {
    if (img.rank() == 2) return resize_nearest(img.reshaped({1, img.dim(0), img.dim(1)}), h, w).reshaped({h, w});
    const std::size_t c = img.dim(0), sh = img.dim(1), sw = img.dim(2);
    if (sh == h && sw == w) return img;
    Tensor out({c, h, w});
    for (std::size_t k = 0; k < c; ++k)
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x) out.at(k, y, x) = img.at(k, y * sh / h, x * sw / w);
    return out;
}

/// Manifest: one sample per line, `image_path<TAB>mask_path_or_dash<TAB>class_name`.
/// Relative paths resolve against `root`.
inline DomainDataset load_image_folder(const std::filesystem::path& root, const std::filesystem::path& manifest,
                                       const LoadOptions& opts = {}) {
    using K = DataError::Kind;
    std::ifstream f(manifest);
    if (!f) throw DataError(K::UnreadableFile, "cannot open manifest '" + manifest.string() + "'");
    DomainDataset ds;
    ds.name = root.filename().string();
    ds.class_names = opts.class_names;
    const bool fixed_classes = !opts.class_names.empty();
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<std::string> cols;
        std::stringstream ss(line);
        std::string col;
        while (std::getline(ss, col, '\t')) cols.push_back(col);
        if (cols.size() != 3) {
            throw DataError(K::BadManifest, manifest.string() + ":" + std::to_string(lineno) + ": expected 3 tab-separated fields");
        }
        auto cls = std::find(ds.class_names.begin(), ds.class_names.end(), cols[2]);
        std::size_t label = 0;
        if (cls == ds.class_names.end()) {
            if (fixed_classes) {
                throw DataError(K::UnknownLabel, manifest.string() + ":" + std::to_string(lineno) + ": class '" + cols[2] +
                                                     "' not in class list");
            }
            label = ds.class_names.size();
            ds.class_names.push_back(cols[2]);
        } else {
            label = static_cast<std::size_t>(cls - ds.class_names.begin());
        }
        LabeledImage img;
        Tensor pixels;
        try {
            pixels = read_ppm(root / cols[0]);
        } catch (const ImageIoError& e) {
            throw DataError(K::UnreadableFile, e.what());
        }
        if (cols[1] != "-") {
            Tensor mask;
            try {
                mask = read_pgm(root / cols[1]);
            } catch (const ImageIoError& e) {
                throw DataError(K::UnreadableFile, e.what());
            }
            if (mask.dim(0) != pixels.dim(1) || mask.dim(1) != pixels.dim(2)) {
                throw DataError(K::MaskShapeMismatch, "mask '" + cols[1] + "' is " + shape_str(mask.shape()) +
                                                          " but image is " + shape_str(pixels.shape()));
            }
            for (double& v : mask.values()) v = v >= 0.5 ? 1.0 : 0.0;
            img.mask = resize_nearest(mask, opts.input_size, opts.input_size);
        }
        img.pixels = resize_nearest(pixels, opts.input_size, opts.input_size);
        img.label = label;
        img.id = ds.samples.size();
        ds.samples.push_back(std::move(img));
    }
    if (ds.samples.empty()) throw DataError(K::NoSamples, "manifest '" + manifest.string() + "': no samples");
    return ds;
}

/// Writes images/NNNNN.ppm, masks/NNNNN.pgm and manifest.tsv under `dir`.
inline void write_image_folder(const DomainDataset& ds, const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir / "images");
    fs::create_directories(dir / "masks");
    std::ofstream manifest(dir / "manifest.tsv", std::ios::trunc);
    if (!manifest) throw DataError(DataError::Kind::UnreadableFile, "cannot write manifest in '" + dir.string() + "'");
    for (std::size_t i = 0; i < ds.samples.size(); ++i) {
        const LabeledImage& s = ds.samples[i];
        char stem[32];
        std::snprintf(stem, sizeof stem, "%05zu", i);
        const std::string img_rel = std::string("images/") + stem + ".ppm";
        write_ppm(dir / img_rel, s.pixels);
        std::string mask_rel = "-";
        if (s.mask) {
            mask_rel = std::string("masks/") + stem + ".pgm";
            write_pgm(dir / mask_rel, *s.mask);
        }
        manifest << img_rel << '\t' << mask_rel << '\t' << ds.class_names.at(s.label) << '\n';
    }
}

}  // namespace metadefa
