#pragma once

// Checkpoint container, version 1. All integers and floats little-endian.
//
//   magic      8 bytes  "MDFACKPT"
//   version    u32      1
//   count      u32      number of entries
//   entries    count x {
//     name_len u32, name bytes (UTF-8, no terminator),
//     rank     u32, dims u64 x rank,
//     data     f64 x product(dims)   (IEEE-754 binary64 bit patterns)
//   }
//
// Entries are written in ParamSet (name) order; load is bit-exact.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <stdexcept>
#include <string>
#include <vector>

#include "metadefa/tensor.hpp"

namespace metadefa {

inline constexpr std::array<char, 8> kCheckpointMagic{'M', 'D', 'F', 'A', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

namespace detail {

template <class U>
void put_le(std::vector<unsigned char>& out, U value) {
    for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<unsigned char>(value >> (8 * i)));
}

class ByteReader {
public:
    explicit ByteReader(const std::vector<unsigned char>& bytes) : bytes_(bytes) {}

    template <class U>
    U get_le() {
        need(sizeof(U));
        U v = 0;
        for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(bytes_[pos_ + i]) << (8 * i);
        pos_ += sizeof(U);
        return v;
    }

    std::string get_string(std::size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
        pos_ += n;
        return s;
    }

    bool at_end() const { return pos_ == bytes_.size(); }

private:
    void need(std::size_t n) const {
        if (bytes_.size() - pos_ < n) throw CheckpointError("checkpoint: truncated file");
    }
    const std::vector<unsigned char>& bytes_;
    std::size_t pos_ = 0;
};

}  // namespace detail

inline std::vector<unsigned char> encode_checkpoint(const ParamSet& params) {
    std::vector<unsigned char> out(kCheckpointMagic.begin(), kCheckpointMagic.end());
    detail::put_le<std::uint32_t>(out, kCheckpointVersion);
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
    for (const auto& [name, t] : params) {
        detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
        out.insert(out.end(), name.begin(), name.end());
        detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
        for (std::size_t d : t.shape()) detail::put_le<std::uint64_t>(out, d);
        for (double v : t.values()) detail::put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
    }
    return out;
}

inline ParamSet decode_checkpoint(const std::vector<unsigned char>& bytes) {
    detail::ByteReader r(bytes);
    const std::string magic = r.get_string(kCheckpointMagic.size());
    if (std::memcmp(magic.data(), kCheckpointMagic.data(), kCheckpointMagic.size()) != 0) {
        throw CheckpointError("checkpoint: bad magic");
    }
    const auto version = r.get_le<std::uint32_t>();
    if (version != kCheckpointVersion) {
        throw CheckpointError("checkpoint: unsupported version " + std::to_string(version));
    }
    const auto count = r.get_le<std::uint32_t>();
    ParamSet params;
    for (std::uint32_t e = 0; e < count; ++e) {
        const auto name_len = r.get_le<std::uint32_t>();
        std::string name = r.get_string(name_len);
        const auto rank = r.get_le<std::uint32_t>();
        Shape shape(rank);
        for (auto& d : shape) d = static_cast<std::size_t>(r.get_le<std::uint64_t>());
        std::vector<double> data(shape_numel(shape));
        for (double& v : data) v = std::bit_cast<double>(r.get_le<std::uint64_t>());
        params.add(name, Tensor(std::move(shape), std::move(data)));
    }
    if (!r.at_end()) throw CheckpointError("checkpoint: trailing bytes");
    return params;
}

inline void save_checkpoint(const ParamSet& params, const std::filesystem::path& path) {
    const auto bytes = encode_checkpoint(params);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw CheckpointError("checkpoint: cannot open '" + path.string() + "' for writing");
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw CheckpointError("checkpoint: write failed for '" + path.string() + "'");
}

inline ParamSet load_checkpoint(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw CheckpointError("checkpoint: cannot open '" + path.string() + "'");
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return decode_checkpoint(bytes);
}

}  // namespace metadefa
