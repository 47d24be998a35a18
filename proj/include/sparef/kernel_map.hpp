#pragma once

#include <algorithm>
#include <array>
#include <map>
#include <utility>
#include <vector>

#include "sparef/coords.hpp"

namespace sparef {

/// Per-kernel-offset list of (input row, output row) pairs. Offsets are kept
/// in a fixed row-major order over the kernel window, and pairs within one
/// offset are sorted by output row; execution walks them in exactly this
/// order, which pins the accumulation order.
struct KernelMap {
    struct Offset {
        int32_t dy = 0;
        int32_t dx = 0;
        std::vector<std::array<int32_t, 2>> pairs;  // (in_row, out_row)
    };

    std::vector<Offset> offsets;
    int64_t in_rows = 0;
    int64_t out_rows = 0;

    int64_t total_pairs() const {
        int64_t n = 0;
        for (const auto& o : offsets) n += int64_t(o.pairs.size());
        return n;
    }

    /// Swapped in/out roles (the map an inverse convolution executes).
    KernelMap transposed() const {
        KernelMap t;
        t.in_rows = out_rows;
        t.out_rows = in_rows;
        t.offsets.reserve(offsets.size());
        for (const auto& o : offsets) {
            Offset to;
            to.dy = -o.dy;
            to.dx = -o.dx;
            to.pairs.reserve(o.pairs.size());
            for (const auto& p : o.pairs) to.pairs.push_back({p[1], p[0]});
            std::sort(to.pairs.begin(), to.pairs.end(),
                      [](const auto& a, const auto& b) { return a[1] < b[1]; });
            t.offsets.push_back(std::move(to));
        }
        return t;
    }
};

/// Submanifold map: output coordinates are the input coordinates, and pair
/// (i, j) exists iff coord(j) + offset * dilation * stride = coord(i).
inline KernelMap build_submanifold_map(const CoordSet& cs, int kernel_size, int dilation = 1) {
    if (kernel_size % 2 == 0)
        throw ConfigError("even kernel size unsupported for submanifold convolution");
    if (dilation < 1) throw ArgumentError("dilation must be >= 1");
    const int r = kernel_size / 2;
    const int32_t step = int32_t(dilation) * cs.stride;
    KernelMap km;
    km.in_rows = km.out_rows = int64_t(cs.size());
    km.offsets.reserve(size_t(kernel_size) * size_t(kernel_size));
    for (int dy = -r; dy <= r; ++dy)
        for (int dx = -r; dx <= r; ++dx) {
            KernelMap::Offset off;
            off.dy = dy * step;
            off.dx = dx * step;
            if (dy == 0 && dx == 0) {
                // Center offset is the identity over all rows.
                off.pairs.resize(cs.size());
                for (int32_t j = 0; j < int32_t(cs.size()); ++j) off.pairs[size_t(j)] = {j, j};
            } else {
                for (int32_t j = 0; j < int32_t(cs.size()); ++j) {
                    const Coord& c = cs.coords[size_t(j)];
                    const int32_t i = cs.index.find(Coord{c.b, c.y + off.dy, c.x + off.dx});
                    if (i >= 0) off.pairs.push_back({i, j});
                }
            }
            km.offsets.push_back(std::move(off));
        }
    return km;
}

/// Floor-quantized parent coordinates at stride 2s, in first-occurrence order.
inline CoordSetPtr downsample_coords(const CoordSet& fine) {
    const int32_t s2 = fine.stride * 2;
    // incremental open-addressing dedup, first occurrence wins
    size_t cap = 16;
    while (cap < fine.size() * 2) cap <<= 1;
    std::vector<Coord> slots(cap);
    std::vector<uint8_t> used(cap, 0);
    const size_t mask = cap - 1;
    std::vector<Coord> parents;
    parents.reserve(fine.size());
    for (const Coord& c : fine.coords) {
        const Coord p{c.b, (c.y / s2) * s2, (c.x / s2) * s2};
        size_t slot = coord_hash(p) & mask;
        bool dup = false;
        while (used[slot]) {
            if (slots[slot] == p) {
                dup = true;
                break;
            }
            slot = (slot + 1) & mask;
        }
        if (!dup) {
            slots[slot] = p;
            used[slot] = 1;
            parents.push_back(p);
        }
    }
    return make_coord_set(std::move(parents), s2);
}

/// Strided 2x2 map from a fine set to its floor-quantized parents. Offsets
/// run over {0, s}^2; pair (i, j) exists iff coord_fine(i) = coord_coarse(j)
/// + (dy, dx).
inline KernelMap build_strided_map(const CoordSet& fine, const CoordSet& coarse) {
    if (coarse.stride != fine.stride * 2)
        throw ArgumentError("strided map expects coarse stride = 2 * fine stride");
    const int32_t s = fine.stride;
    KernelMap km;
    km.in_rows = int64_t(fine.size());
    km.out_rows = int64_t(coarse.size());
    for (int32_t dy = 0; dy <= 1; ++dy)
        for (int32_t dx = 0; dx <= 1; ++dx) {
            KernelMap::Offset off;
            off.dy = dy * s;
            off.dx = dx * s;
            for (int32_t j = 0; j < int32_t(coarse.size()); ++j) {
                const Coord& c = coarse.coords[size_t(j)];
                const int32_t i = fine.index.find(Coord{c.b, c.y + off.dy, c.x + off.dx});
                if (i >= 0) off.pairs.push_back({i, j});
            }
            km.offsets.push_back(std::move(off));
        }
    return km;
}

/// Caches the coordinate sets and kernel maps of one pipeline run. Strided
/// convolutions register their input level here; inverse convolutions look
/// the finer level back up. Confined to a single run, not thread-safe.
class CoordinateManager {
public:
    void register_level(const CoordSetPtr& cs) {
        auto it = levels_.find(cs->stride);
        if (it == levels_.end()) {
            levels_[cs->stride] = cs;
        } else if (it->second.get() != cs.get()) {
            throw StateError("conflicting coordinate set registered at stride " +
                             std::to_string(cs->stride));
        }
    }

    CoordSetPtr level(int32_t stride) const {
        auto it = levels_.find(stride);
        return it == levels_.end() ? nullptr : it->second;
    }

    const KernelMap& submanifold_map(const CoordSetPtr& cs, int kernel_size, int dilation = 1) {
        register_level(cs);
        const auto key = std::make_pair(cs->stride, kernel_size * 16 + dilation);
        auto it = subm_maps_.find(key);
        if (it == subm_maps_.end())
            it = subm_maps_.emplace(key, build_submanifold_map(*cs, kernel_size, dilation)).first;
        return it->second;
    }

    /// Coarse coordinate set + fine->coarse map for a 2x2/stride-2 transition;
    /// registers both levels.
    std::pair<CoordSetPtr, const KernelMap*> strided_transition(const CoordSetPtr& fine) {
        register_level(fine);
        auto coarse = level(fine->stride * 2);
        auto mit = strided_maps_.find(fine->stride);
        if (!coarse) {
            coarse = downsample_coords(*fine);
            levels_[coarse->stride] = coarse;
        }
        if (mit == strided_maps_.end())
            mit = strided_maps_.emplace(fine->stride, build_strided_map(*fine, *coarse)).first;
        return {coarse, &mit->second};
    }

    /// Fine coordinate set + transposed map for an inverse convolution from
    /// stride 2s back to s. Requires the fine level to have been registered.
    std::pair<CoordSetPtr, const KernelMap*> inverse_transition(const CoordSetPtr& coarse) {
        if (coarse->stride % 2 != 0)
            throw StateError("inverse convolution from odd stride " +
                             std::to_string(coarse->stride));
        const int32_t fine_stride = coarse->stride / 2;
        auto fine = level(fine_stride);
        if (!fine)
            throw StateError("no cached coordinate set at stride " + std::to_string(fine_stride));
        auto mit = strided_maps_.find(fine_stride);
        if (mit == strided_maps_.end())
            mit = strided_maps_.emplace(fine_stride, build_strided_map(*fine, *coarse)).first;
        auto tit = inverse_maps_.find(fine_stride);
        if (tit == inverse_maps_.end())
            tit = inverse_maps_.emplace(fine_stride, mit->second.transposed()).first;
        return {fine, &tit->second};
    }

private:
    std::map<int32_t, CoordSetPtr> levels_;
    std::map<int32_t, KernelMap> strided_maps_;   // keyed by fine stride
    std::map<int32_t, KernelMap> inverse_maps_;   // transposed counterparts
    std::map<std::pair<int32_t, int>, KernelMap> subm_maps_;
};

}  // namespace sparef
