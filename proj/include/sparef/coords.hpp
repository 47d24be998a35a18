#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "sparef/error.hpp"

namespace sparef {

/// Active-site coordinate: batch index plus pixel position in units of the
/// original full-resolution grid. At tensor stride s, y and x are multiples
/// of s.
struct Coord {
    int32_t b = 0;
    int32_t y = 0;
    int32_t x = 0;

    bool operator==(const Coord&) const = default;
};

inline uint64_t coord_hash(const Coord& c) {
    uint64_t h = uint64_t(uint32_t(c.b)) * 0x9E3779B97F4A7C15ull;
    h ^= uint64_t(uint32_t(c.y)) * 0xBF58476D1CE4E5B9ull;
    h ^= uint64_t(uint32_t(c.x)) * 0x94D049BB133111EBull;
    h ^= h >> 32;
    h *= 0xD6E8FEB86659FD93ull;
    h ^= h >> 32;
    return h;
}

/// Open-addressing coordinate -> row map (linear probing, power-of-two
/// capacity). Collisions are resolved by full key comparison.
class CoordMap {
public:
    CoordMap() = default;

    explicit CoordMap(std::span<const Coord> coords) {
        size_t cap = 16;
        while (cap < coords.size() * 2) cap <<= 1;
        mask_ = cap - 1;
        keys_.assign(cap, Coord{});
        rows_.assign(cap, -1);
        for (size_t i = 0; i < coords.size(); ++i) {
            size_t slot = coord_hash(coords[i]) & mask_;
            while (rows_[slot] >= 0) {
                if (keys_[slot] == coords[i])
                    throw ArgumentError("duplicate coordinate in sparse tensor");
                slot = (slot + 1) & mask_;
            }
            keys_[slot] = coords[i];
            rows_[slot] = int32_t(i);
        }
        size_ = coords.size();
    }

    /// Row index of the coordinate, or -1 if absent.
    int32_t find(const Coord& c) const {
        if (rows_.empty()) return -1;
        size_t slot = coord_hash(c) & mask_;
        while (rows_[slot] >= 0) {
            if (keys_[slot] == c) return rows_[slot];
            slot = (slot + 1) & mask_;
        }
        return -1;
    }

    size_t size() const { return size_; }

private:
    std::vector<Coord> keys_;
    std::vector<int32_t> rows_;
    size_t mask_ = 0;
    size_t size_ = 0;
};

/// Immutable coordinate set shared between sparse tensors. Submanifold ops
/// pass the same object through, so "did the coordinate set change" is a
/// pointer comparison.
struct CoordSet {
    std::vector<Coord> coords;
    CoordMap index;
    int32_t stride = 1;

    size_t size() const { return coords.size(); }
};

using CoordSetPtr = std::shared_ptr<const CoordSet>;

inline CoordSetPtr make_coord_set(std::vector<Coord> coords, int32_t stride) {
    if (stride < 1) throw ArgumentError("tensor stride must be >= 1");
    for (const Coord& c : coords)
        if (c.y % stride != 0 || c.x % stride != 0)
            throw ArgumentError("coordinate not aligned to tensor stride");
    auto cs = std::make_shared<CoordSet>();
    cs->coords = std::move(coords);
    cs->index = CoordMap(cs->coords);
    cs->stride = stride;
    return cs;
}

}  // namespace sparef
