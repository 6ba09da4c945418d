/// @file attributes.hpp
/// @brief Attribute groups shared by parameters, gradients and optimizer moments.
///
/// Every per-primitive quantity in the library is stored structure-of-arrays:
/// one flat vector per attribute group, `dims(attr)` values per primitive.

#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace gsopt {

enum class Attr : std::size_t { Position = 0, Scale = 1, Rotation = 2, Opacity = 3, Color = 4 };

inline constexpr std::size_t kNumAttrs = 5;
inline constexpr std::array<Attr, kNumAttrs> kAllAttrs{
    Attr::Position, Attr::Scale, Attr::Rotation, Attr::Opacity, Attr::Color};

/// Values per primitive for each attribute group.
constexpr std::size_t dims(Attr a) {
    constexpr std::array<std::size_t, kNumAttrs> d{2, 2, 1, 1, 3};
    return d[static_cast<std::size_t>(a)];
}

constexpr std::string_view attr_name(Attr a) {
    constexpr std::array<std::string_view, kNumAttrs> n{"position", "scale", "rotation", "opacity",
                                                        "color"};
    return n[static_cast<std::size_t>(a)];
}

/// Contract violations (mismatched sizes, bad indices). Programming errors, not data errors.
struct ContractViolation : std::logic_error {
    using std::logic_error::logic_error;
};

/// Invalid configuration value.
struct ConfigError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// One flat array per attribute group, all sized for the same primitive count.
template <class T>
class PerAttr {
public:
    PerAttr() = default;
    explicit PerAttr(std::size_t n, T fill = T{}) { resize(n, fill); }

    std::size_t size() const { return n_; }

    void resize(std::size_t n, T fill = T{}) {
        for (Attr a : kAllAttrs) data_[idx(a)].resize(n * dims(a), fill);
        n_ = n;
    }

    void fill(T value) {
        for (auto& v : data_) std::fill(v.begin(), v.end(), value);
    }

    std::span<T> operator[](Attr a) { return data_[idx(a)]; }
    std::span<const T> operator[](Attr a) const { return data_[idx(a)]; }

    /// The values of primitive `i` inside group `a`.
    std::span<T> row(Attr a, std::size_t i) { return (*this)[a].subspan(i * dims(a), dims(a)); }
    std::span<const T> row(Attr a, std::size_t i) const {
        return (*this)[a].subspan(i * dims(a), dims(a));
    }

    /// Copies every group's row `src` of `from` into row `dst` of this.
    void copy_row(std::size_t dst, const PerAttr& from, std::size_t src) {
        for (Attr a : kAllAttrs) {
            auto d = row(a, dst);
            auto s = from.row(a, src);
            std::copy(s.begin(), s.end(), d.begin());
        }
    }

    void set_row(std::size_t i, T value) {
        for (Attr a : kAllAttrs) {
            auto r = row(a, i);
            std::fill(r.begin(), r.end(), value);
        }
    }

    /// Appends `count` rows initialised to `fill`; returns the first new index.
    std::size_t append(std::size_t count, T fill = T{}) {
        const std::size_t first = n_;
        resize(n_ + count, fill);
        return first;
    }

    /// Keeps rows where keep[i] is true, preserving order.
    void compact(const std::vector<bool>& keep) {
        if (keep.size() != n_) throw ContractViolation("PerAttr::compact: mask size mismatch");
        std::size_t out = 0;
        for (std::size_t i = 0; i < n_; ++i) {
            if (!keep[i]) continue;
            if (out != i)
                for (Attr a : kAllAttrs) {
                    auto s = row(a, i);
                    std::copy(s.begin(), s.end(), row(a, out).begin());
                }
            ++out;
        }
        resize(out);
    }

    bool operator==(const PerAttr&) const = default;

private:
    static constexpr std::size_t idx(Attr a) { return static_cast<std::size_t>(a); }

    std::array<std::vector<T>, kNumAttrs> data_{};
    std::size_t n_ = 0;
};

}  // namespace gsopt
