#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "sparef/error.hpp"

namespace sparef {

/// Boolean pixel mask plus the matching ordered coordinate list (row-major
/// scan order). The bitmask and the list are kept in lockstep.
struct SelectionMask {
    int64_t height = 0;
    int64_t width = 0;
    std::vector<uint8_t> bits;                       // H*W, 0/1
    std::vector<std::pair<int32_t, int32_t>> selected;  // (y, x) in scan order

    SelectionMask() = default;
    SelectionMask(int64_t h, int64_t w) : height(h), width(w), bits(size_t(h * w), 0) {}

    static SelectionMask from_bits(int64_t h, int64_t w, std::vector<uint8_t> bits) {
        if (int64_t(bits.size()) != h * w) throw ShapeError("mask bit count != H*W");
        SelectionMask m;
        m.height = h;
        m.width = w;
        m.bits = std::move(bits);
        for (int64_t y = 0; y < h; ++y)
            for (int64_t x = 0; x < w; ++x)
                if (m.bits[size_t(y * w + x)]) m.selected.emplace_back(int32_t(y), int32_t(x));
        return m;
    }

    static SelectionMask full(int64_t h, int64_t w) {
        return from_bits(h, w, std::vector<uint8_t>(size_t(h * w), 1));
    }

    bool test(int64_t y, int64_t x) const { return bits[size_t(y * width + x)] != 0; }

    int64_t count() const { return int64_t(selected.size()); }

    double density() const {
        return height * width == 0 ? 0.0 : double(count()) / double(height * width);
    }

    bool is_subset_of(const SelectionMask& o) const {
        if (height != o.height || width != o.width) return false;
        for (size_t i = 0; i < bits.size(); ++i)
            if (bits[i] && !o.bits[i]) return false;
        return true;
    }
};

}  // namespace sparef
