#pragma once

// Binary PPM (P6) and PGM (P5) with max value 255.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <stdexcept>
#include <string>
#include <vector>

#include "metadefa/tensor.hpp"

namespace metadefa {

class ImageIoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

namespace detail {

inline unsigned char to_byte(double v) {
    const double c = std::clamp(v, 0.0, 1.0);
    return static_cast<unsigned char>(std::lround(c * 255.0));
}

inline void write_netpbm(const std::filesystem::path& path, const char* magic, std::size_t w, std::size_t h,
                         const std::vector<unsigned char>& body) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw ImageIoError("cannot open '" + path.string() + "' for writing");
    f << magic << '\n' << w << ' ' << h << "\n255\n";
    f.write(reinterpret_cast<const char*>(body.data()), static_cast<std::streamsize>(body.size()));
    if (!f) throw ImageIoError("write failed for '" + path.string() + "'");
}

struct Netpbm {
    std::size_t width = 0, height = 0, channels = 0;
    std::vector<unsigned char> body;
};

inline Netpbm read_netpbm(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ImageIoError("cannot open '" + path.string() + "'");
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    std::size_t pos = 0;
    auto fail = [&](const std::string& why) { return ImageIoError("'" + path.string() + "': " + why); };
    auto next_token = [&]() {
        for (;;) {
            while (pos < bytes.size() && std::isspace(bytes[pos])) ++pos;
            if (pos < bytes.size() && bytes[pos] == '#') {
                while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
                continue;
            }
            break;
        }
        std::string tok;
        while (pos < bytes.size() && !std::isspace(bytes[pos])) tok += static_cast<char>(bytes[pos++]);
        if (tok.empty()) throw fail("truncated header");
        return tok;
    };
    auto next_number = [&]() {
        const std::string tok = next_token();
        for (char c : tok)
            if (!std::isdigit(static_cast<unsigned char>(c))) throw fail("bad header field '" + tok + "'");
        return static_cast<std::size_t>(std::stoull(tok));
    };
    Netpbm img;
    const std::string magic = next_token();
    if (magic == "P6") img.channels = 3;
    else if (magic == "P5") img.channels = 1;
    else throw fail("unsupported format '" + magic + "' (expected P5 or P6)");
    img.width = next_number();
    img.height = next_number();
    if (next_number() != 255) throw fail("max value must be 255");
    ++pos;  // single whitespace byte before raster
    const std::size_t n = img.width * img.height * img.channels;
    if (img.width == 0 || img.height == 0) throw fail("empty image");
    if (bytes.size() < pos + n) throw fail("truncated raster");
    img.body.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos), bytes.begin() + static_cast<std::ptrdiff_t>(pos + n));
    return img;
}

}  // namespace detail

/// Writes [3, H, W] pixels in [0, 1] as P6.
inline void write_ppm(const std::filesystem::path& path, const Tensor& rgb) {
    require_rank(rgb, 3, "write_ppm");
    if (rgb.dim(0) != 3) throw ImageIoError("write_ppm: expected 3 channels");
    const std::size_t h = rgb.dim(1), w = rgb.dim(2);
    std::vector<unsigned char> body;
    body.reserve(3 * h * w);
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
            for (std::size_t c = 0; c < 3; ++c) body.push_back(detail::to_byte(rgb.at(c, y, x)));
    detail::write_netpbm(path, "P6", w, h, body);
}

/// Writes an [H, W] map in [0, 1] as P5.
inline void write_pgm(const std::filesystem::path& path, const Tensor& gray) {
    require_rank(gray, 2, "write_pgm");
    std::vector<unsigned char> body;
    body.reserve(gray.size());
    for (double v : gray.values()) body.push_back(detail::to_byte(v));
    detail::write_netpbm(path, "P5", gray.dim(1), gray.dim(0), body);
}

/// Writes raw 8-bit levels as P5.
inline void write_pgm_bytes(const std::filesystem::path& path, std::size_t h, std::size_t w,
                            const std::vector<unsigned char>& levels) {
    if (levels.size() != h * w) throw ImageIoError("write_pgm_bytes: size mismatch");
    detail::write_netpbm(path, "P5", w, h, levels);
}

/// [3, H, W] in [0, 1]. Grayscale files are replicated to three channels.
inline Tensor read_ppm(const std::filesystem::path& path) {
    const detail::Netpbm img = detail::read_netpbm(path);
    Tensor t({3, img.height, img.width});
    for (std::size_t y = 0; y < img.height; ++y)
        for (std::size_t x = 0; x < img.width; ++x)
            for (std::size_t c = 0; c < 3; ++c) {
                const std::size_t src = (y * img.width + x) * img.channels + (img.channels == 3 ? c : 0);
                t.at(c, y, x) = img.body[src] / 255.0;
            }
    return t;
}

/// [H, W] in [0, 1].
inline Tensor read_pgm(const std::filesystem::path& path) {
    const detail::Netpbm img = detail::read_netpbm(path);
    if (img.channels != 1) throw ImageIoError("'" + path.string() + "': expected a P5 grayscale image");
    Tensor t({img.height, img.width});
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = img.body[i] / 255.0;
    return t;
}

inline std::vector<unsigned char> read_pgm_bytes(const std::filesystem::path& path, std::size_t& h, std::size_t& w) {
    detail::Netpbm img = detail::read_netpbm(path);
    if (img.channels != 1) throw ImageIoError("'" + path.string() + "': expected a P5 grayscale image");
    h = img.height;
    w = img.width;
    return std::move(img.body);
}

}  // namespace metadefa
