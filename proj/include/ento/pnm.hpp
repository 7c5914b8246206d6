#pragma once

// Binary netpbm I/O: P5 (grey) and P6 (RGB), maxval 255 only.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "ento/container.hpp"
#include "ento/error.hpp"
#include "ento/tensor.hpp"

namespace ento {

namespace detail {

class PnmHeaderParser {
public:
    explicit PnmHeaderParser(const std::vector<unsigned char>& b) : b_(b) {}

    std::string magic() {
        if (b_.size() < 2) throw PnmHeaderError("pnm: file too short for a header");
        pos_ = 2;
        return std::string(b_.begin(), b_.begin() + 2);
    }

    /// Next decimal field, skipping whitespace and '#' comments.
    std::size_t number(const char* what) {
        skip_space();
        std::size_t v = 0, digits = 0;
        while (pos_ < b_.size() && std::isdigit(b_[pos_])) {
            v = v * 10 + (b_[pos_] - '0');
            ++pos_;
            if (++digits > 9) throw PnmHeaderError(std::string("pnm: ") + what + " too large");
        }
        if (digits == 0) throw PnmHeaderError(std::string("pnm: missing ") + what);
        return v;
    }

    /// Consumes the single whitespace byte that ends the header.
    std::size_t payload_start() {
        if (pos_ >= b_.size() || !std::isspace(b_[pos_])) throw PnmHeaderError("pnm: header not terminated");
        return pos_ + 1;
    }

private:
    void skip_space() {
        while (pos_ < b_.size()) {
            if (b_[pos_] == '#') {
                while (pos_ < b_.size() && b_[pos_] != '\n') ++pos_;
            } else if (std::isspace(b_[pos_])) {
                ++pos_;
            } else {
                break;
            }
        }
    }

    const std::vector<unsigned char>& b_;
    std::size_t pos_ = 0;
};

inline unsigned char quantize(float v) {
    const double c = std::clamp(static_cast<double>(v), 0.0, 1.0);
    return static_cast<unsigned char>(std::lround(c * 255.0));
}

} // namespace detail

/// Decodes P5 to [1,1,H,W] or P6 to [1,3,H,W], values byte/255.
inline Tensor<float> decode_pnm(const std::vector<unsigned char>& bytes) {
    detail::PnmHeaderParser p(bytes);
    const std::string magic = p.magic();
    std::size_t channels;
    if (magic == "P5") {
        channels = 1;
    } else if (magic == "P6") {
        channels = 3;
    } else {
        throw PnmHeaderError("pnm: unsupported magic '" + magic + "' (expected P5 or P6)");
    }
    const std::size_t w = p.number("width");
    const std::size_t h = p.number("height");
    const std::size_t maxval = p.number("maxval");
    if (w == 0 || h == 0) throw PnmHeaderError("pnm: zero image size");
    if (maxval != 255) throw PnmMaxvalError("pnm: unsupported maxval " + std::to_string(maxval) + " (expected 255)");
    const std::size_t start = p.payload_start();
    const std::size_t need = w * h * channels;
    if (bytes.size() < start || bytes.size() - start < need) {
        throw PnmTruncatedError("pnm: payload truncated (" + std::to_string(bytes.size() - std::min(start, bytes.size())) +
                                " of " + std::to_string(need) + " bytes)");
    }
    Tensor<float> t(Shape{1, channels, h, w});
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            for (std::size_t c = 0; c < channels; ++c) {
                t.plane(0, c)[y * w + x] = static_cast<float>(bytes[start + (y * w + x) * channels + c]) / 255.0f;
            }
        }
    }
    return t;
}

/// Encodes a [1,1,H,W] tensor as P5 or [1,3,H,W] as P6, round(clamp(v)*255).
inline std::vector<unsigned char> encode_pnm(const Tensor<float>& t) {
    const Shape s = t.shape();
    if (s.n != 1 || (s.c != 1 && s.c != 3) || s.h == 0 || s.w == 0) {
        throw ShapeError("pnm: can only write [1,1,H,W] or [1,3,H,W], got " + s.str());
    }
    const std::string header =
        std::string(s.c == 1 ? "P5" : "P6") + "\n" + std::to_string(s.w) + " " + std::to_string(s.h) + "\n255\n";
    std::vector<unsigned char> out(header.begin(), header.end());
    out.reserve(out.size() + s.c * s.h * s.w);
    for (std::size_t i = 0; i < s.h * s.w; ++i) {
        for (std::size_t c = 0; c < s.c; ++c) out.push_back(detail::quantize(t.plane(0, c)[i]));
    }
    return out;
}

inline Tensor<float> read_pnm(const std::filesystem::path& path) { return decode_pnm(detail::read_file(path)); }

inline void write_pnm(const std::filesystem::path& path, const Tensor<float>& t) {
    write_file_atomic(path, encode_pnm(t));
}

} // namespace ento
