#pragma once

#include "sparef/kernel_map.hpp"
#include "sparef/sparse_tensor.hpp"

namespace sparef {

// Gather -> Cin x Cout GEMM -> scatter-accumulate, one kernel offset at a
// time in the map's fixed order. Within one offset every pair targets a
// distinct output row, so the accumulation order per row is exactly the
// offset order; results are bit-identical run to run.

/// Reusable gather/product buffers; callers that execute many convolutions
/// of similar shape (training steps, benchmark loops) avoid reallocating.
template <class S>
struct ConvWorkspace {
    MatX<S> gathered, product;
};

/// Weights are stored as a (K^2 * Cin) x Cout matrix; block k is the Cin x
/// Cout matrix of kernel offset k (offsets in the kernel map's order).
/// The _into form writes a caller-owned output so steady-state loops run
/// allocation-free.
template <class S>
void conv_execute_into(const KernelMap& km, const MatX<S>& in_feats, const MatX<S>& weights,
                       const VecX<S>* bias, int64_t out_rows, MatX<S>& out,
                       ConvWorkspace<S>* workspace = nullptr) {
    const int64_t cin = in_feats.cols();
    const int64_t cout = weights.cols();
    if (weights.rows() != int64_t(km.offsets.size()) * cin)
        throw ShapeError("weight rows != offsets * Cin");
    out.resize(out_rows, cout);
    if (bias) {
        if (bias->size() != cout) throw ShapeError("bias size != Cout");
        out.rowwise() = bias->transpose();
    } else {
        out.setZero();
    }
    ConvWorkspace<S> local;
    ConvWorkspace<S>& ws = workspace ? *workspace : local;
    MatX<S>& gathered = ws.gathered;
    MatX<S>& product = ws.product;
    for (size_t k = 0; k < km.offsets.size(); ++k) {
        const auto& pairs = km.offsets[k].pairs;
        if (pairs.empty()) continue;
        const auto wk = weights.middleRows(int64_t(k) * cin, cin);
        if (int64_t(pairs.size()) == km.in_rows && km.in_rows == out_rows) {
            bool identity = true;
            for (size_t p = 0; p < pairs.size(); ++p)
                if (pairs[p][0] != int32_t(p) || pairs[p][1] != int32_t(p)) {
                    identity = false;
                    break;
                }
            if (identity) {  // center offset of a submanifold map
                out.noalias() += in_feats * wk;
                continue;
            }
        }
        gathered.resize(int64_t(pairs.size()), cin);
        for (size_t p = 0; p < pairs.size(); ++p) gathered.row(int64_t(p)) = in_feats.row(pairs[p][0]);
        product.noalias() = gathered * wk;
        for (size_t p = 0; p < pairs.size(); ++p) out.row(pairs[p][1]) += product.row(int64_t(p));
    }
}

template <class S>
MatX<S> conv_execute(const KernelMap& km, const MatX<S>& in_feats, const MatX<S>& weights,
                     const VecX<S>* bias, int64_t out_rows,
                     ConvWorkspace<S>* workspace = nullptr) {
    MatX<S> out;
    conv_execute_into(km, in_feats, weights, bias, out_rows, out, workspace);
    return out;
}

/// Backward pass of conv_execute: accumulates dW (same layout as weights),
/// db, and returns d(input features). Reuses the forward map with the pair
/// roles transposed.
template <class S>
MatX<S> conv_backward(const KernelMap& km, const MatX<S>& in_feats, const MatX<S>& weights,
                      const MatX<S>& grad_out, MatX<S>& grad_weights, VecX<S>* grad_bias) {
    const int64_t cin = in_feats.cols();
    if (grad_bias) *grad_bias += grad_out.colwise().sum().transpose();
    MatX<S> grad_in = MatX<S>::Zero(in_feats.rows(), cin);
    MatX<S> g_rows, d_rows;
    for (size_t k = 0; k < km.offsets.size(); ++k) {
        const auto& pairs = km.offsets[k].pairs;
        if (pairs.empty()) continue;
        const auto wk = weights.middleRows(int64_t(k) * cin, cin);
        auto dwk = grad_weights.middleRows(int64_t(k) * cin, cin);
        g_rows.resize(int64_t(pairs.size()), cin);
        d_rows.resize(int64_t(pairs.size()), grad_out.cols());
        for (size_t p = 0; p < pairs.size(); ++p) {
            g_rows.row(int64_t(p)) = in_feats.row(pairs[p][0]);
            d_rows.row(int64_t(p)) = grad_out.row(pairs[p][1]);
        }
        dwk.noalias() += g_rows.transpose() * d_rows;
        g_rows.noalias() = d_rows * wk.transpose();  // reuse as d(gathered input)
        for (size_t p = 0; p < pairs.size(); ++p) grad_in.row(pairs[p][0]) += g_rows.row(int64_t(p));
    }
    return grad_in;
}

// --------------------------------------------------------------------------
// Free-function ops over sparse tensors (inference semantics).
// --------------------------------------------------------------------------

template <class S>
SparseTensor<S> submanifold_conv(const SparseTensor<S>& x, const MatX<S>& weights,
                                 const VecX<S>& bias, int kernel_size,
                                 CoordinateManager* mgr = nullptr) {
    const int64_t k2 = int64_t(kernel_size) * kernel_size;
    if (weights.rows() != k2 * x.channels())
        throw ShapeError("weight rows != K^2 * Cin in submanifold_conv");
    if (mgr) {
        const KernelMap& km = mgr->submanifold_map(x.coords, kernel_size);
        return SparseTensor<S>(x.coords, conv_execute(km, x.feats, weights, &bias, x.rows()));
    }
    const KernelMap km = build_submanifold_map(*x.coords, kernel_size);
    return SparseTensor<S>(x.coords, conv_execute(km, x.feats, weights, &bias, x.rows()));
}

template <class S>
SparseTensor<S> strided_conv(const SparseTensor<S>& x, const MatX<S>& weights, const VecX<S>& bias,
                             CoordinateManager& mgr) {
    if (weights.rows() != 4 * x.channels())
        throw ShapeError("strided conv expects 2x2 kernels (weight rows = 4 * Cin)");
    auto [coarse, km] = mgr.strided_transition(x.coords);
    return SparseTensor<S>(coarse,
                           conv_execute(*km, x.feats, weights, &bias, int64_t(coarse->size())));
}

template <class S>
SparseTensor<S> inverse_conv(const SparseTensor<S>& x, const MatX<S>& weights, const VecX<S>& bias,
                             CoordinateManager& mgr) {
    if (weights.rows() != 4 * x.channels())
        throw ShapeError("inverse conv expects 2x2 kernels (weight rows = 4 * Cin)");
    auto [fine, km] = mgr.inverse_transition(x.coords);
    return SparseTensor<S>(fine,
                           conv_execute(*km, x.feats, weights, &bias, int64_t(fine->size())));
}

template <class S>
SparseTensor<S> relu(const SparseTensor<S>& x) {
    return x.with_feats(x.feats.cwiseMax(S(0)));
}

template <class S>
SparseTensor<S> linear(const SparseTensor<S>& x, const MatX<S>& weights, const VecX<S>& bias) {
    if (weights.rows() != x.channels()) throw ShapeError("linear weight rows != Cin");
    MatX<S> out = x.feats * weights;
    out.rowwise() += bias.transpose();
    return SparseTensor<S>(x.coords, std::move(out));
}

template <class S>
SparseTensor<S> residual_add(const SparseTensor<S>& a, const SparseTensor<S>& b) {
    if (a.coords.get() != b.coords.get())
        throw AlignmentError("residual_add requires the identical coordinate set");
    if (a.channels() != b.channels()) throw ShapeError("residual_add channel mismatch");
    return a.with_feats(a.feats + b.feats);
}

enum class BatchNormMode { kTrain, kEval };

template <class S>
struct BatchNormStats {
    VecX<S> gamma, beta;
    VecX<S> running_mean, running_var;
    S eps = S(1e-5);
    S momentum = S(0.1);

    explicit BatchNormStats(int64_t channels = 0)
        : gamma(VecX<S>::Ones(channels)),
          beta(VecX<S>::Zero(channels)),
          running_mean(VecX<S>::Zero(channels)),
          running_var(VecX<S>::Ones(channels)) {}
};

/// Normalizes over the row dimension (all active sites in the batch). Train
/// mode uses batch statistics and updates the running ones in `stats`.
template <class S>
SparseTensor<S> batch_norm(const SparseTensor<S>& x, BatchNormStats<S>& stats,
                           BatchNormMode mode) {
    if (stats.gamma.size() != x.channels()) throw ShapeError("batch_norm channel mismatch");
    const int64_t n = x.rows();
    VecX<S> mean, var;
    if (mode == BatchNormMode::kTrain && n > 0) {
        mean = x.feats.colwise().mean().transpose();
        MatX<S> centered = x.feats.rowwise() - mean.transpose();
        var = (centered.array().square().colwise().sum() / S(n)).matrix().transpose();
        stats.running_mean = (S(1) - stats.momentum) * stats.running_mean + stats.momentum * mean;
        stats.running_var = (S(1) - stats.momentum) * stats.running_var + stats.momentum * var;
    } else {
        mean = stats.running_mean;
        var = stats.running_var;
    }
    const VecX<S> scale = (stats.gamma.array() * (var.array() + stats.eps).rsqrt()).matrix();
    MatX<S> out = x.feats.rowwise() - mean.transpose();
    out.array().rowwise() *= scale.transpose().array();
    out.rowwise() += stats.beta.transpose();
    return SparseTensor<S>(x.coords, std::move(out));
}

// --------------------------------------------------------------------------
// MAC accounting. The compute-cost unit is multiply-accumulates; elementwise ops
// (entropy, softmax, ReLU, BN at inference) count zero.
// --------------------------------------------------------------------------

inline int64_t sparse_conv_macs(const KernelMap& km, int64_t cin, int64_t cout) {
    return km.total_pairs() * cin * cout;
}

/// Padded-position convention: every output position pays K^2 taps.
inline int64_t dense_conv_macs(int kernel_size, int64_t cin, int64_t cout, int64_t h, int64_t w) {
    return int64_t(kernel_size) * kernel_size * cin * cout * h * w;
}

/// Support-truncated convention: only taps whose input position exists are
/// counted. Equals the kernel-map pair count on a fully active HxW mask.
inline int64_t dense_conv_macs_supported(int kernel_size, int64_t cin, int64_t cout, int64_t h,
                                         int64_t w) {
    const int r = kernel_size / 2;
    int64_t pairs = 0;
    for (int dy = -r; dy <= r; ++dy)
        for (int dx = -r; dx <= r; ++dx)
            pairs += (h - std::abs(dy)) * (w - std::abs(dx));
    return pairs * cin * cout;
}

inline int64_t linear_macs(int64_t rows, int64_t cin, int64_t cout) { return rows * cin * cout; }

}  // namespace sparef
