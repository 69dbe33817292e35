#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "vlpose/tensor.hpp"

namespace vlpose {

/// 8-bit interleaved image, 1 (gray) or 3 (RGB) channels.
struct Image {
    std::size_t width = 0;
    std::size_t height = 0;
    std::size_t channels = 3;
    std::vector<std::uint8_t> pixels;

    Image() = default;
    Image(std::size_t w, std::size_t h, std::size_t c, std::uint8_t fill = 0)
        : width(w), height(h), channels(c), pixels(w * h * c, fill) {
        if (c != 1 && c != 3) throw std::invalid_argument("image channels must be 1 or 3");
    }

    std::uint8_t& at(std::size_t x, std::size_t y, std::size_t c) { return pixels[(y * width + x) * channels + c]; }
    std::uint8_t at(std::size_t x, std::size_t y, std::size_t c) const { return pixels[(y * width + x) * channels + c]; }
    bool operator==(const Image&) const = default;
};

namespace detail {

inline std::size_t read_header_int(std::istream& is, const std::string& what) {
    // Skip whitespace and '#' comments between header fields.
    for (;;) {
        int c = is.peek();
        if (c == '#') {
            std::string line;
            std::getline(is, line);
        } else if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
            is.get();
        } else {
            break;
        }
    }
    std::size_t v = 0;
    if (!(is >> v)) throw ParseError(what + ": malformed header");
    return v;
}

}  // namespace detail

/// Reads binary PPM (P6) or PGM (P5) with maxval 255.
inline Image read_pnm(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open image " + path.string());
    std::string magic(2, '\0');
    is.read(magic.data(), 2);
    std::size_t channels = 0;
    if (magic == "P6") channels = 3;
    else if (magic == "P5") channels = 1;
    else throw ParseError(path.string() + ": not a binary PPM/PGM file");
    const std::size_t w = detail::read_header_int(is, path.string());
    const std::size_t h = detail::read_header_int(is, path.string());
    const std::size_t maxval = detail::read_header_int(is, path.string());
    if (maxval != 255) throw ParseError(path.string() + ": only maxval 255 is supported");
    is.get();  // single whitespace before the raster
    Image img(w, h, channels);
    is.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
    if (is.gcount() != static_cast<std::streamsize>(img.pixels.size())) throw ParseError(path.string() + ": truncated raster");
    return img;
}

inline void write_pnm(const std::filesystem::path& path, const Image& img) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write image " + path.string());
    os << (img.channels == 3 ? "P6" : "P5") << '\n' << img.width << ' ' << img.height << "\n255\n";
    os.write(reinterpret_cast<const char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
    if (!os) throw std::runtime_error("failed writing " + path.string());
}

/// Bilinear sample at continuous (x, y) with pixel centres on integers; zero outside.
inline float sample_bilinear(const Image& img, double x, double y, std::size_t c) {
    const double fx = std::floor(x), fy = std::floor(y);
    const long x0 = static_cast<long>(fx), y0 = static_cast<long>(fy);
    const double ax = x - fx, ay = y - fy;
    auto px = [&](long xi, long yi) -> double {
        if (xi < 0 || yi < 0 || xi >= static_cast<long>(img.width) || yi >= static_cast<long>(img.height)) return 0.0;
        return img.at(static_cast<std::size_t>(xi), static_cast<std::size_t>(yi), c);
    };
    const double top = px(x0, y0) * (1 - ax) + px(x0 + 1, y0) * ax;
    const double bot = px(x0, y0 + 1) * (1 - ax) + px(x0 + 1, y0 + 1) * ax;
    return static_cast<float>(top * (1 - ay) + bot * ay);
}

/// Maps an 8-bit intensity to the network input range [-1, 1].
inline float normalize_pixel(double v) { return static_cast<float>(v / 127.5 - 1.0); }

/// Full image as a [3 x H x W] tensor in [-1, 1] (gray images are replicated).
inline Tensor<float> image_to_tensor(const Image& img) {
    Tensor<float> t({3, img.height, img.width});
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t y = 0; y < img.height; ++y)
            for (std::size_t x = 0; x < img.width; ++x)
                t[(c * img.height + y) * img.width + x] = normalize_pixel(img.at(x, y, img.channels == 3 ? c : 0));
    return t;
}

}  // namespace vlpose
