#pragma once

#include "sparef/coords.hpp"
#include "sparef/mask.hpp"
#include "sparef/tensor.hpp"

namespace sparef {

/// Coordinate list + per-coordinate feature rows. Feature storage is a
/// row-major Eigen matrix so per-offset kernel execution is a plain GEMM.
template <class S>
struct SparseTensor {
    CoordSetPtr coords;
    MatX<S> feats;  // N x C

    SparseTensor() = default;
    SparseTensor(CoordSetPtr cs, MatX<S> f) : coords(std::move(cs)), feats(std::move(f)) {
        if (coords && int64_t(coords->size()) != feats.rows())
            throw ShapeError("feature row count != coordinate count");
    }

    int64_t rows() const { return feats.rows(); }
    int64_t channels() const { return feats.cols(); }
    int32_t stride() const { return coords ? coords->stride : 1; }

    SparseTensor with_feats(MatX<S> f) const {
        if (f.rows() != feats.rows()) throw ShapeError("row count change on same coordinates");
        return SparseTensor(coords, std::move(f));
    }
};

/// One row per selected pixel, in the mask's scan order; features are the
/// channel vector at that pixel. Stride 1.
template <class S>
SparseTensor<S> dense_to_sparse(const Tensor<S>& dense, const SelectionMask& mask,
                                int32_t batch = 0) {
    if (dense.ndim() != 3) throw ShapeError("dense_to_sparse expects CxHxW");
    const int64_t C = dense.dim(0), H = dense.dim(1), W = dense.dim(2);
    if (mask.height != H || mask.width != W)
        throw ShapeError("mask dims do not match dense spatial dims");
    const int64_t n = mask.count();
    std::vector<Coord> coords(static_cast<size_t>(n));
    MatX<S> feats(n, C);
    for (int64_t i = 0; i < n; ++i) {
        const auto [y, x] = mask.selected[size_t(i)];
        coords[size_t(i)] = Coord{batch, y, x};
        for (int64_t c = 0; c < C; ++c) feats(i, c) = dense.at(c, y, x);
    }
    return SparseTensor<S>(make_coord_set(std::move(coords), 1), std::move(feats));
}

/// Densify one batch element; inactive sites carry `fill`.
template <class S>
Tensor<S> sparse_to_dense(const SparseTensor<S>& x, int64_t H, int64_t W, S fill = S{},
                          int32_t batch = 0) {
    Tensor<S> out({x.channels(), H, W}, fill);
    for (int64_t i = 0; i < x.rows(); ++i) {
        const Coord& c = x.coords->coords[size_t(i)];
        if (c.b != batch) continue;
        if (c.y < 0 || c.y >= H || c.x < 0 || c.x >= W)
            throw BoundsError("coordinate outside HxW in sparse_to_dense");
        for (int64_t ch = 0; ch < x.channels(); ++ch) out.at(ch, c.y, c.x) = x.feats(i, ch);
    }
    return out;
}

/// Mask of the active sites of one batch element.
template <class S>
SelectionMask mask_of(const SparseTensor<S>& x, int64_t H, int64_t W, int32_t batch = 0) {
    SelectionMask m(H, W);
    for (const Coord& c : x.coords->coords) {
        if (c.b != batch) continue;
        if (c.y < 0 || c.y >= H || c.x < 0 || c.x >= W)
            throw BoundsError("coordinate outside HxW in mask_of");
        m.bits[size_t(c.y * W + c.x)] = 1;
    }
    return SelectionMask::from_bits(H, W, std::move(m.bits));
}

}  // namespace sparef
