#pragma once

#include "sparef/tensor.hpp"

namespace sparef {

// Two dense convolution references with different jobs. The naive one is the
// independent correctness oracle for sparse/dense equivalence checks; the
// im2col one is the fair performance baseline the benchmark compares
// against. Both use zero padding and the cross-correlation convention
// out[y,x] += W[dy,dx] * in[y+dy, x+dx], dy,dx in [-r, r], matching the
// kernel-map offset order (row-major over the window).

/// Brute-force loops, no shared code with the sparse execution path.
/// Weights: (K^2 * Cin) x Cout with offset k = (dy+r)*K + (dx+r).
template <class S>
Tensor<S> dense_conv_naive(const Tensor<S>& input, const MatX<S>& weights, const VecX<S>& bias,
                           int kernel_size) {
    if (input.ndim() != 3) throw ShapeError("dense_conv_naive expects CxHxW");
    const int64_t cin = input.dim(0), h = input.dim(1), w = input.dim(2);
    const int64_t cout = weights.cols();
    if (weights.rows() != int64_t(kernel_size) * kernel_size * cin)
        throw ShapeError("weight rows != K^2 * Cin");
    const int r = kernel_size / 2;
    Tensor<S> out({cout, h, w});
    for (int64_t co = 0; co < cout; ++co)
        for (int64_t y = 0; y < h; ++y)
            for (int64_t x = 0; x < w; ++x) {
                S acc = bias(co);
                for (int dy = -r; dy <= r; ++dy)
                    for (int dx = -r; dx <= r; ++dx) {
                        const int64_t yy = y + dy, xx = x + dx;
                        if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
                        const int64_t k = (int64_t(dy) + r) * kernel_size + (dx + r);
                        for (int64_t ci = 0; ci < cin; ++ci)
                            acc += weights(k * cin + ci, co) * input.at(ci, yy, xx);
                    }
                out.at(co, y, x) = acc;
            }
    return out;
}

template <class S>
using Im2colScratch = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor>;

/// im2col + one GEMM; the conventional CPU dense convolution. The scratch is
/// column-major so each (offset, channel) strip fills contiguously.
template <class S>
Tensor<S> dense_conv_im2col(const Tensor<S>& input, const MatX<S>& weights, const VecX<S>& bias,
                            int kernel_size, Im2colScratch<S>* scratch = nullptr) {
    if (input.ndim() != 3) throw ShapeError("dense_conv_im2col expects CxHxW");
    const int64_t cin = input.dim(0), h = input.dim(1), w = input.dim(2);
    const int64_t cout = weights.cols();
    const int64_t k2 = int64_t(kernel_size) * kernel_size;
    if (weights.rows() != k2 * cin) throw ShapeError("weight rows != K^2 * Cin");
    const int r = kernel_size / 2;

    Im2colScratch<S> local;
    Im2colScratch<S>& cols = scratch ? *scratch : local;
    cols.setZero(h * w, k2 * cin);
    for (int dy = -r; dy <= r; ++dy)
        for (int dx = -r; dx <= r; ++dx) {
            const int64_t k = (int64_t(dy) + r) * kernel_size + (dx + r);
            const int64_t x0 = std::max<int64_t>(0, -int64_t(dx));
            const int64_t x1 = std::min<int64_t>(w, w - dx);
            for (int64_t ci = 0; ci < cin; ++ci) {
                const S* plane = input.data() + ci * h * w;
                S* col = cols.data() + (k * cin + ci) * h * w;
                for (int64_t y = 0; y < h; ++y) {
                    const int64_t yy = y + dy;
                    if (yy < 0 || yy >= h) continue;
                    std::memcpy(col + y * w + x0, plane + yy * w + x0 + dx,
                                size_t(x1 - x0) * sizeof(S));
                }
            }
        }

    MatX<S> result = cols * weights;
    result.rowwise() += bias.transpose();
    Tensor<S> out({cout, h, w});
    for (int64_t co = 0; co < cout; ++co)
        for (int64_t p = 0; p < h * w; ++p) out[co * h * w + p] = result(p, co);
    return out;
}

}  // namespace sparef
