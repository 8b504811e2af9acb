#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace metadefa {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

/// Dense row-major array of doubles with an optional gradient slot.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape shape, double fill = 0.0)
        : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

    Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
        if (shape_numel(shape_) != data_.size()) {
            throw std::invalid_argument("Tensor: shape " + shape_str(shape_) + " holds " +
                                        std::to_string(shape_numel(shape_)) + " values, got " +
                                        std::to_string(data_.size()));
        }
    }

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0); }
    static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape_, 0.0); }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t size() const noexcept { return data_.size(); }

    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }
    std::vector<double>& values() noexcept { return data_; }
    const std::vector<double>& values() const noexcept { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    // 2-D and 3-D row-major accessors.
    double& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
    double at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }
    double& at(std::size_t k, std::size_t r, std::size_t c) {
        return data_[(k * shape_[1] + r) * shape_[2] + c];
    }
    double at(std::size_t k, std::size_t r, std::size_t c) const {
        return data_[(k * shape_[1] + r) * shape_[2] + c];
    }

    bool has_grad() const noexcept { return grad_.has_value(); }
    std::vector<double>& grad() {
        if (!grad_) grad_.emplace(data_.size(), 0.0);
        return *grad_;
    }
    const std::optional<std::vector<double>>& grad_slot() const noexcept { return grad_; }
    void zero_grad() { grad_.emplace(data_.size(), 0.0); }
    void clear_grad() { grad_.reset(); }

    bool all_finite() const {
        return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
    }

    Tensor reshaped(Shape shape) const { return Tensor(std::move(shape), data_); }

    friend bool operator==(const Tensor& a, const Tensor& b) {
        return a.shape_ == b.shape_ && a.data_ == b.data_;
    }

private:
    Shape shape_;
    std::vector<double> data_;
    std::optional<std::vector<double>> grad_;
};

inline void require_shape(const Tensor& t, const Shape& expected, const char* what) {
    if (t.shape() != expected) {
        throw std::invalid_argument(std::string(what) + ": expected shape " + shape_str(expected) +
                                    ", got " + shape_str(t.shape()));
    }
}

inline void require_rank(const Tensor& t, std::size_t rank, const char* what) {
    if (t.rank() != rank) {
        throw std::invalid_argument(std::string(what) + ": expected rank " + std::to_string(rank) +
                                    ", got shape " + shape_str(t.shape()));
    }
}

/// Named trainable tensors, iterated in name order.
class ParamSet {
public:
    using Map = std::map<std::string, Tensor>;

    ParamSet() = default;

    Tensor& add(const std::string& name, Tensor value) {
        auto [it, inserted] = entries_.emplace(name, std::move(value));
        if (!inserted) throw std::invalid_argument("ParamSet: duplicate entry '" + name + "'");
        return it->second;
    }

    bool contains(const std::string& name) const { return entries_.count(name) != 0; }

    Tensor& at(const std::string& name) {
        auto it = entries_.find(name);
        if (it == entries_.end()) throw std::invalid_argument("ParamSet: missing entry '" + name + "'");
        return it->second;
    }
    const Tensor& at(const std::string& name) const {
        auto it = entries_.find(name);
        if (it == entries_.end()) throw std::invalid_argument("ParamSet: missing entry '" + name + "'");
        return it->second;
    }

    std::size_t size() const noexcept { return entries_.size(); }
    bool empty() const noexcept { return entries_.empty(); }

    Map::iterator begin() { return entries_.begin(); }
    Map::iterator end() { return entries_.end(); }
    Map::const_iterator begin() const { return entries_.begin(); }
    Map::const_iterator end() const { return entries_.end(); }

    ParamSet clone() const { return *this; }

    /// Same names, same shapes, all zeros.
    ParamSet zeros_like() const {
        ParamSet out;
        for (const auto& [name, t] : entries_) out.add(name, Tensor::zeros_like(t));
        return out;
    }

    std::size_t numel() const {
        std::size_t n = 0;
        for (const auto& [name, t] : entries_) n += t.size();
        return n;
    }

    /// this += alpha * other
    void axpy(double alpha, const ParamSet& other) {
        require_compatible(other, "ParamSet::axpy");
        auto it = other.entries_.begin();
        for (auto& [name, t] : entries_) {
            const auto& src = it->second.values();
            auto& dst = t.values();
            for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += alpha * src[i];
            ++it;
        }
    }

    void scale(double alpha) {
        for (auto& [name, t] : entries_)
            for (double& v : t.values()) v *= alpha;
    }

    void require_compatible(const ParamSet& other, const char* what) const {
        if (other.entries_.size() != entries_.size()) {
            throw std::invalid_argument(std::string(what) + ": entry count mismatch (" +
                                        std::to_string(entries_.size()) + " vs " +
                                        std::to_string(other.entries_.size()) + ")");
        }
        auto it = other.entries_.begin();
        for (const auto& [name, t] : entries_) {
            if (it->first != name) {
                throw std::invalid_argument(std::string(what) + ": name mismatch '" + name + "' vs '" +
                                            it->first + "'");
            }
            if (it->second.shape() != t.shape()) {
                throw std::invalid_argument(std::string(what) + ": shape mismatch for '" + name + "' " +
                                            shape_str(t.shape()) + " vs " + shape_str(it->second.shape()));
            }
            ++it;
        }
    }

    double squared_norm() const {
        double s = 0.0;
        for (const auto& [name, t] : entries_)
            for (double v : t.values()) s += v * v;
        return s;
    }

    friend bool operator==(const ParamSet& a, const ParamSet& b) { return a.entries_ == b.entries_; }

private:
    Map entries_;
};

/// FNV-1a over the raw bytes of every value, in name order. Used to detect mutation.
inline std::uint64_t checksum(const ParamSet& params) {
    std::uint64_t h = 1469598103934665603ULL;
    auto mix = [&h](const void* p, std::size_t n) {
        const auto* bytes = static_cast<const unsigned char*>(p);
        for (std::size_t i = 0; i < n; ++i) {
            h ^= bytes[i];
            h *= 1099511628211ULL;
        }
    };
    for (const auto& [name, t] : params) {
        mix(name.data(), name.size());
        mix(t.values().data(), t.size() * sizeof(double));
    }
    return h;
}

}  // namespace metadefa
