/// @file image.hpp
/// @brief Float images plus binary PPM (P6, RGB) and 16-bit PGM (P5, depth) I/O.

#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace gsopt {

/// Row-major, `channels` interleaved values per pixel.
struct Image {
    int width = 0;
    int height = 0;
    int channels = 3;
    std::vector<double> data;

    Image() = default;
    Image(int w, int h, int c = 3, double fill = 0.0)
        : width(w), height(h), channels(c), data(static_cast<std::size_t>(w) * h * c, fill) {}

    std::size_t pixels() const { return static_cast<std::size_t>(width) * height; }
    std::size_t index(int x, int y, int c = 0) const {
        return (static_cast<std::size_t>(y) * width + x) * channels + c;
    }
    double& at(int x, int y, int c = 0) { return data[index(x, y, c)]; }
    double at(int x, int y, int c = 0) const { return data[index(x, y, c)]; }

    bool same_shape(const Image& o) const {
        return width == o.width && height == o.height && channels == o.channels;
    }
    double mean() const {
        if (data.empty()) return 0.0;
        double s = 0.0;
        for (double v : data) s += v;
        return s / static_cast<double>(data.size());
    }
    bool operator==(const Image&) const = default;
};

inline std::uint8_t to_byte(double v) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

inline void write_ppm(const Image& img, const std::string& path) {
    if (img.channels != 3) throw std::invalid_argument("write_ppm: image must have 3 channels");
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path + " for writing");
    f << "P6\n" << img.width << ' ' << img.height << "\n255\n";
    std::string buf(img.data.size(), '\0');
    for (std::size_t i = 0; i < img.data.size(); ++i) buf[i] = static_cast<char>(to_byte(img.data[i]));
    f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!f) throw std::runtime_error("write failed: " + path);
}

namespace detail {

/// Reads the whitespace-separated ASCII header fields of a netpbm file, skipping comments.
inline int read_pnm_int(std::istream& in) {
    int c = in.get();
    while (c != EOF) {
        if (c == '#') {
            while (c != '\n' && c != EOF) c = in.get();
        } else if (!std::isspace(c)) {
            break;
        }
        c = in.get();
    }
    int value = 0;
    bool any = false;
    while (c != EOF && std::isdigit(c)) {
        value = value * 10 + (c - '0');
        any = true;
        c = in.get();
    }
    if (!any) throw std::runtime_error("malformed netpbm header");
    return value;
}

}  // namespace detail

inline Image read_ppm(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path);
    char magic[2];
    f.read(magic, 2);
    if (!f || magic[0] != 'P' || magic[1] != '6') throw std::runtime_error(path + ": not a P6 file");
    const int w = detail::read_pnm_int(f);
    const int h = detail::read_pnm_int(f);
    const int maxval = detail::read_pnm_int(f);
    if (maxval != 255) throw std::runtime_error(path + ": only 8-bit PPM supported");
    Image img(w, h, 3);
    std::string buf(img.data.size(), '\0');
    f.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!f) throw std::runtime_error(path + ": truncated pixel data");
    for (std::size_t i = 0; i < buf.size(); ++i)
        img.data[i] = static_cast<unsigned char>(buf[i]) / 255.0;
    return img;
}

/// Writes a one-channel image as 16-bit big-endian PGM, mapping [0, max_value] onto [0, 65535].
inline void write_pgm16(const Image& img, const std::string& path, double max_value) {
    if (img.channels != 1) throw std::invalid_argument("write_pgm16: image must have 1 channel");
    if (!(max_value > 0.0)) throw std::invalid_argument("write_pgm16: max_value must be positive");
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path + " for writing");
    f << "P5\n" << img.width << ' ' << img.height << "\n65535\n";
    std::string buf;
    buf.reserve(img.data.size() * 2);
    for (double v : img.data) {
        const auto q = static_cast<std::uint16_t>(std::lround(std::clamp(v / max_value, 0.0, 1.0) * 65535.0));
        buf.push_back(static_cast<char>(q >> 8));
        buf.push_back(static_cast<char>(q & 0xff));
    }
    f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!f) throw std::runtime_error("write failed: " + path);
}

/// Inverse of write_pgm16.
inline Image read_pgm16(const std::string& path, double max_value) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path);
    char magic[2];
    f.read(magic, 2);
    if (!f || magic[0] != 'P' || magic[1] != '5') throw std::runtime_error(path + ": not a P5 file");
    const int w = detail::read_pnm_int(f);
    const int h = detail::read_pnm_int(f);
    if (detail::read_pnm_int(f) != 65535) throw std::runtime_error(path + ": only 16-bit PGM supported");
    Image img(w, h, 1);
    std::string buf(img.data.size() * 2, '\0');
    f.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!f) throw std::runtime_error(path + ": truncated pixel data");
    for (std::size_t i = 0; i < img.data.size(); ++i) {
        const unsigned hi = static_cast<unsigned char>(buf[2 * i]);
        const unsigned lo = static_cast<unsigned char>(buf[2 * i + 1]);
        img.data[i] = static_cast<double>((hi << 8) | lo) / 65535.0 * max_value;
    }
    return img;
}

}  // namespace gsopt
