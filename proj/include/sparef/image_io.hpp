#pragma once

#include <cctype>
#include <fstream>
#include <string>

#include "sparef/tensor.hpp"

namespace sparef {

// Binary PPM (P6) and PGM (P5), maxval 255. Images are handled channel-first
// (3xHxW planar) to match the CxHxW logits convention.

namespace detail {

inline int64_t pnm_token(std::istream& in, const std::string& path) {
    // Skips whitespace and '#' comments, returns the next integer token.
    int c = in.get();
    while (c != EOF) {
        if (c == '#') {
            while (c != EOF && c != '\n') c = in.get();
        } else if (!std::isspace(c)) {
            break;
        }
        c = in.get();
    }
    if (c == EOF || !std::isdigit(c)) throw FormatError(path + ": malformed PNM header");
    int64_t v = 0;
    while (c != EOF && std::isdigit(c)) {
        v = v * 10 + (c - '0');
        c = in.get();
    }
    return v;  // consumed exactly one whitespace terminator
}

inline void pnm_read_header(std::istream& in, const std::string& path, const char* magic,
                            int64_t& w, int64_t& h) {
    char m0 = char(in.get()), m1 = char(in.get());
    if (m0 != magic[0] || m1 != magic[1])
        throw FormatError(path + ": expected " + magic + " magic");
    w = pnm_token(in, path);
    h = pnm_token(in, path);
    const int64_t maxval = pnm_token(in, path);
    if (maxval != 255) throw FormatError(path + ": only maxval 255 supported");
}

}  // namespace detail

inline Tensor<uint8_t> read_ppm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    int64_t w, h;
    detail::pnm_read_header(in, path, "P6", w, h);
    std::vector<char> row(size_t(w) * 3);
    Tensor<uint8_t> img({3, h, w});
    for (int64_t y = 0; y < h; ++y) {
        if (!in.read(row.data(), std::streamsize(row.size())))
            throw FormatError(path + ": truncated pixel data");
        for (int64_t x = 0; x < w; ++x)
            for (int64_t c = 0; c < 3; ++c)
                img.at(c, y, x) = uint8_t(row[size_t(x * 3 + c)]);
    }
    return img;
}

inline void write_ppm(const Tensor<uint8_t>& img, const std::string& path) {
    if (img.ndim() != 3 || img.dim(0) != 3)
        throw ShapeError("write_ppm expects a 3xHxW tensor");
    const int64_t h = img.dim(1), w = img.dim(2);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << "P6\n" << w << " " << h << "\n255\n";
    std::vector<char> row(size_t(w) * 3);
    for (int64_t y = 0; y < h; ++y) {
        for (int64_t x = 0; x < w; ++x)
            for (int64_t c = 0; c < 3; ++c)
                row[size_t(x * 3 + c)] = char(img.at(c, y, x));
        out.write(row.data(), std::streamsize(row.size()));
    }
    if (!out) throw IoError("short write to " + path);
}

inline Tensor<uint8_t> read_pgm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    int64_t w, h;
    detail::pnm_read_header(in, path, "P5", w, h);
    Tensor<uint8_t> img({h, w});
    if (!in.read(reinterpret_cast<char*>(img.data()), std::streamsize(img.numel())))
        throw FormatError(path + ": truncated pixel data");
    return img;
}

inline void write_pgm(const Tensor<uint8_t>& img, const std::string& path) {
    if (img.ndim() != 2) throw ShapeError("write_pgm expects an HxW tensor");
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << "P5\n" << img.dim(1) << " " << img.dim(0) << "\n255\n";
    out.write(reinterpret_cast<const char*>(img.data()), std::streamsize(img.numel()));
    if (!out) throw IoError("short write to " + path);
}

inline LabelMap read_label_pgm(const std::string& path) {
    Tensor<uint8_t> img = read_pgm(path);
    LabelMap lm(img.dim(0), img.dim(1));
    std::memcpy(lm.labels.data(), img.data(), size_t(img.numel()));
    return lm;
}

inline void write_label_pgm(const LabelMap& lm, const std::string& path) {
    Tensor<uint8_t> img({lm.height, lm.width});
    std::memcpy(img.data(), lm.labels.data(), lm.labels.size());
    write_pgm(img, path);
}

}  // namespace sparef
