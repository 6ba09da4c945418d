/// @file primitives.hpp
/// @brief 2D Gaussian primitives: raw parameterization, activations, covariance,
/// active/dead classification and (de)serialization.
///
/// Parameters are stored pre-activation. Opacity is a logit (o = sigmoid(tau)),
/// scale is a log-scale (s = exp(kappa)), rotation is a single angle.

#pragma once

#include "gsopt/attributes.hpp"

#include <json.hpp>

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace gsopt {

/// Input outside an operation's mathematical domain (non-finite logit, overflowing scale).
struct DomainError : std::domain_error {
    using std::domain_error::domain_error;
};

struct Vec2 {
    double x = 0.0;
    double y = 0.0;
    bool operator==(const Vec2&) const = default;
};

/// Symmetric 2x2 matrix [[xx, xy], [xy, yy]].
struct Sym2 {
    double xx = 0.0;
    double xy = 0.0;
    double yy = 0.0;

    double det() const { return xx * yy - xy * xy; }
    double trace() const { return xx + yy; }

    /// Eigenvalues in ascending order.
    std::array<double, 2> eigenvalues() const {
        const double half_tr = 0.5 * trace();
        const double disc = std::sqrt(std::max(0.0, 0.25 * (xx - yy) * (xx - yy) + xy * xy));
        return {half_tr - disc, half_tr + disc};
    }
};

inline constexpr double kActiveThreshold = 1.0 / 255.0;
/// Opacity given to freshly created primitives.
inline constexpr double kInitOpacity = 0.1;
inline constexpr double kMaxLogScale = 80.0;

// ---------------------------------------------------------------------------
// Activations
// ---------------------------------------------------------------------------

inline double activate_opacity(double tau) {
    if (!std::isfinite(tau)) throw DomainError("activate_opacity: non-finite logit");
    return 1.0 / (1.0 + std::exp(-tau));
}

/// d sigmoid / d tau = o (1 - o).
inline double opacity_derivative(double tau) {
    const double o = activate_opacity(tau);
    return o * (1.0 - o);
}

inline double opacity_logit(double opacity) {
    if (!(opacity > 0.0 && opacity < 1.0)) throw DomainError("opacity_logit: opacity must lie in (0,1)");
    return std::log(opacity / (1.0 - opacity));
}

/// exp(kappa); the derivative is the value itself.
inline double activate_scale(double kappa) {
    if (!std::isfinite(kappa)) throw DomainError("activate_scale: non-finite log-scale");
    if (kappa > kMaxLogScale) throw DomainError("activate_scale: log-scale overflow");
    return std::exp(kappa);
}

inline Vec2 activate_scale(Vec2 kappa) { return {activate_scale(kappa.x), activate_scale(kappa.y)}; }

/// Sigma = R diag(s^2) R^T.
inline Sym2 build_covariance(Vec2 scale, double rot) {
    if (!(scale.x > 0.0 && scale.y > 0.0)) throw DomainError("build_covariance: scale must be positive");
    const double c = std::cos(rot);
    const double s = std::sin(rot);
    const double a = scale.x * scale.x;
    const double b = scale.y * scale.y;
    return {c * c * a + s * s * b, c * s * (a - b), s * s * a + c * c * b};
}

// ---------------------------------------------------------------------------
// Primitive storage
// ---------------------------------------------------------------------------

struct RawPrimitive {
    Vec2 mu;
    Vec2 kappa;
    double rot = 0.0;
    double tau = 0.0;
    std::array<double, 3> color{0.0, 0.0, 0.0};
    /// Blending order key; smaller is closer.
    double depth = 0.0;
};

class PrimitiveSet {
public:
    PrimitiveSet() = default;

    std::size_t size() const { return params.size(); }
    bool empty() const { return size() == 0; }

    std::size_t add(const RawPrimitive& p) {
        const std::size_t i = params.append(1);
        set(i, p);
        depth.push_back(p.depth);
        alive.push_back(1);
        return i;
    }

    void set(std::size_t i, const RawPrimitive& p) {
        auto pos = params.row(Attr::Position, i);
        pos[0] = p.mu.x;
        pos[1] = p.mu.y;
        auto sc = params.row(Attr::Scale, i);
        sc[0] = p.kappa.x;
        sc[1] = p.kappa.y;
        params.row(Attr::Rotation, i)[0] = p.rot;
        params.row(Attr::Opacity, i)[0] = p.tau;
        auto col = params.row(Attr::Color, i);
        std::copy(p.color.begin(), p.color.end(), col.begin());
        if (i < depth.size()) depth[i] = p.depth;
    }

    RawPrimitive get(std::size_t i) const {
        RawPrimitive p;
        p.mu = position(i);
        p.kappa = log_scale(i);
        p.rot = rotation(i);
        p.tau = logit(i);
        auto col = params.row(Attr::Color, i);
        std::copy(col.begin(), col.end(), p.color.begin());
        p.depth = depth[i];
        return p;
    }

    Vec2 position(std::size_t i) const {
        auto r = params.row(Attr::Position, i);
        return {r[0], r[1]};
    }
    Vec2 log_scale(std::size_t i) const {
        auto r = params.row(Attr::Scale, i);
        return {r[0], r[1]};
    }
    double rotation(std::size_t i) const { return params.row(Attr::Rotation, i)[0]; }
    double logit(std::size_t i) const { return params.row(Attr::Opacity, i)[0]; }
    double opacity(std::size_t i) const { return activate_opacity(logit(i)); }
    Vec2 scale(std::size_t i) const { return activate_scale(log_scale(i)); }

    /// Appends a copy of row `src`; returns the new index.
    std::size_t duplicate(std::size_t src) {
        const std::size_t i = params.append(1);
        params.copy_row(i, params, src);
        depth.push_back(depth[src]);
        alive.push_back(alive[src]);
        return i;
    }

    /// Keeps rows where keep[i] is true.
    void compact(const std::vector<bool>& keep) {
        params.compact(keep);
        std::size_t out = 0;
        for (std::size_t i = 0; i < keep.size(); ++i) {
            if (!keep[i]) continue;
            depth[out] = depth[i];
            alive[out] = alive[i];
            ++out;
        }
        depth.resize(out);
        alive.resize(out);
    }

    std::size_t alive_count() const {
        return static_cast<std::size_t>(std::count(alive.begin(), alive.end(), std::uint8_t{1}));
    }

    /// All arrays share length N_p.
    bool consistent() const { return depth.size() == size() && alive.size() == size(); }

    bool operator==(const PrimitiveSet&) const = default;

    PerAttr<double> params;
    std::vector<double> depth;
    std::vector<std::uint8_t> alive;
};

struct ActiveCounts {
    std::size_t active = 0;
    std::size_t dead = 0;
    std::vector<bool> mask;
};

/// Active iff alive and sigmoid(tau) > threshold.
inline ActiveCounts classify_active(const PrimitiveSet& set, double threshold = kActiveThreshold) {
    if (!(threshold > 0.0 && threshold < 1.0)) throw ConfigError("classify_active: threshold must lie in (0,1)");
    ActiveCounts out;
    out.mask.assign(set.size(), false);
    for (std::size_t i = 0; i < set.size(); ++i) {
        if (!set.alive[i]) continue;
        if (set.opacity(i) > threshold) {
            out.mask[i] = true;
            ++out.active;
        } else {
            ++out.dead;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

inline constexpr std::array<char, 4> kSetMagic{'G', 'S', 'P', 'S'};
inline constexpr std::uint32_t kSetVersion = 1;

namespace detail {

template <class T>
void put_le(std::string& out, T value) {
    auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(value);
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
    out.append(reinterpret_cast<const char*>(bytes.data()), bytes.size());
}

template <class T>
T get_le(const std::string& in, std::size_t& pos) {
    if (pos + sizeof(T) > in.size()) throw std::runtime_error("primitive file truncated");
    std::array<unsigned char, sizeof(T)> bytes;
    std::memcpy(bytes.data(), in.data() + pos, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
    pos += sizeof(T);
    return std::bit_cast<T>(bytes);
}

}  // namespace detail

/// Layout: magic "GSPS", u32 version, u64 N_p, then f64 arrays position[2N], log-scale[2N],
/// rotation[N], logit[N], color[3N], depth[N], followed by u8 alive[N]. All little-endian.
inline std::string encode_primitives(const PrimitiveSet& set) {
    std::string out;
    out.append(kSetMagic.data(), kSetMagic.size());
    detail::put_le<std::uint32_t>(out, kSetVersion);
    detail::put_le<std::uint64_t>(out, set.size());
    for (Attr a : kAllAttrs)
        for (double v : set.params[a]) detail::put_le(out, v);
    for (double d : set.depth) detail::put_le(out, d);
    for (std::uint8_t f : set.alive) detail::put_le(out, f);
    return out;
}

inline PrimitiveSet decode_primitives(const std::string& bytes) {
    if (bytes.size() < 16 || std::memcmp(bytes.data(), kSetMagic.data(), 4) != 0)
        throw std::runtime_error("not a primitive file (bad magic)");
    std::size_t pos = 4;
    const auto version = detail::get_le<std::uint32_t>(bytes, pos);
    if (version != kSetVersion) throw std::runtime_error("unsupported primitive file version " + std::to_string(version));
    const auto n = detail::get_le<std::uint64_t>(bytes, pos);
    PrimitiveSet set;
    set.params.resize(n);
    for (Attr a : kAllAttrs)
        for (double& v : set.params[a]) v = detail::get_le<double>(bytes, pos);
    set.depth.resize(n);
    for (double& d : set.depth) d = detail::get_le<double>(bytes, pos);
    set.alive.resize(n);
    for (std::uint8_t& f : set.alive) f = detail::get_le<std::uint8_t>(bytes, pos);
    if (pos != bytes.size()) throw std::runtime_error("primitive file has trailing bytes");
    return set;
}

inline void save_primitives(const PrimitiveSet& set, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path + " for writing");
    const std::string bytes = encode_primitives(set);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw std::runtime_error("write failed: " + path);
}

inline PrimitiveSet load_primitives(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path);
    std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return decode_primitives(bytes);
}

/// Human-readable dump with activated values alongside the raw ones.
inline nlohmann::json primitives_to_json(const PrimitiveSet& set) {
    nlohmann::json arr = nlohmann::json::array();
    for (std::size_t i = 0; i < set.size(); ++i) {
        const RawPrimitive p = set.get(i);
        arr.push_back({{"mu", {p.mu.x, p.mu.y}},
                       {"kappa", {p.kappa.x, p.kappa.y}},
                       {"rot", p.rot},
                       {"tau", p.tau},
                       {"opacity", activate_opacity(p.tau)},
                       {"color", p.color},
                       {"depth", p.depth},
                       {"alive", set.alive[i] != 0}});
    }
    return {{"count", set.size()}, {"primitives", arr}};
}

}  // namespace gsopt
