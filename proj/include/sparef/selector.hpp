#pragma once

#include <algorithm>
#include <numeric>

#include "sparef/dense_ops.hpp"
#include "sparef/mask.hpp"
#include "sparef/rng.hpp"

namespace sparef {

/// Per-pixel natural-log prediction entropy, e = -sum_c p_c log p_c, with
/// 0 log 0 treated as 0. Bounded by [0, ln C].
template <class S>
Tensor<S> entropy_map(const Tensor<S>& logits) {
    if (logits.ndim() != 3) throw ShapeError("entropy_map expects CxHxW");
    const int64_t C = logits.dim(0), H = logits.dim(1), W = logits.dim(2);
    if (C < 2) throw ArgumentError("entropy needs at least 2 classes");
    for (int64_t i = 0; i < logits.numel(); ++i)
        if (std::isnan(logits[i])) throw NumericError("NaN logit in entropy_map");
    // Accumulate in double; clamp to the largest S value that does not
    // exceed ln C, since the true entropy never does and rounding must not
    // push stored values past the bound.
    const double lnc = std::log(double(C));
    S cap = S(lnc);
    if (double(cap) > lnc) cap = std::nextafter(cap, S(0));
    Tensor<S> ent({H, W});
    for (int64_t y = 0; y < H; ++y)
        for (int64_t x = 0; x < W; ++x) {
            double mx = double(logits.at(0, y, x));
            for (int64_t c = 1; c < C; ++c) mx = std::max(mx, double(logits.at(c, y, x)));
            double sum = 0;
            for (int64_t c = 0; c < C; ++c) sum += std::exp(double(logits.at(c, y, x)) - mx);
            const double lse = std::log(sum) + mx;
            // p_c = exp(z_c - lse); log p_c never goes through a rounded p
            double e = 0;
            for (int64_t c = 0; c < C; ++c) {
                const double logp = double(logits.at(c, y, x)) - lse;
                e -= std::exp(logp) * logp;
            }
            ent.at(y, x) = std::min(std::max(S(e), S(0)), cap);
        }
    return ent;
}

/// Row entropies of an N x C logit matrix (the ensembler's per-pixel view).
template <class S>
VecX<S> row_entropies(const MatX<S>& logits) {
    VecX<S> out(logits.rows());
    for (int64_t i = 0; i < logits.rows(); ++i) {
        const S mx = logits.cols() > 0 ? logits.row(i).maxCoeff() : S(0);
        S sum = 0;
        for (int64_t c = 0; c < logits.cols(); ++c) sum += std::exp(logits(i, c) - mx);
        const S lse = std::log(sum) + mx;
        S e = 0;
        for (int64_t c = 0; c < logits.cols(); ++c) {
            const S logp = logits(i, c) - lse;
            e -= std::exp(logp) * logp;
        }
        out(i) = std::max(e, S(0));
    }
    return out;
}

/// Pixels whose entropy strictly exceeds the threshold.
template <class S>
SelectionMask select_entropy(const Tensor<S>& entropy, double alpha) {
    if (entropy.ndim() != 2) throw ShapeError("select_entropy expects an HxW entropy map");
    if (alpha < 0) throw ArgumentError("entropy threshold must be >= 0");
    std::vector<uint8_t> bits(size_t(entropy.numel()));
    for (int64_t i = 0; i < entropy.numel(); ++i) bits[size_t(i)] = double(entropy[i]) > alpha;
    return SelectionMask::from_bits(entropy.dim(0), entropy.dim(1), std::move(bits));
}

/// Exactly floor(density * H * W) pixels, uniform without replacement.
inline SelectionMask select_random(int64_t h, int64_t w, double density, uint64_t seed) {
    if (density < 0.0 || density > 1.0) throw ArgumentError("density must be in [0, 1]");
    const int64_t total = h * w;
    const int64_t want = int64_t(density * double(total));
    std::vector<int64_t> perm(static_cast<size_t>(total));
    std::iota(perm.begin(), perm.end(), 0);
    Rng rng(seed);
    // partial Fisher-Yates: the first `want` entries are the sample
    for (int64_t i = 0; i < want; ++i) {
        const int64_t j = i + int64_t(rng.uniform_index(uint64_t(total - i)));
        std::swap(perm[size_t(i)], perm[size_t(j)]);
    }
    std::vector<uint8_t> bits(size_t(total), 0);
    for (int64_t i = 0; i < want; ++i) bits[size_t(perm[size_t(i)])] = 1;
    return SelectionMask::from_bits(h, w, std::move(bits));
}

/// The floor(density * H * W) pixels with the smallest L2 feature norm,
/// ties broken by scan order.
template <class S>
SelectionMask select_magnitude(const Tensor<S>& features, double density) {
    if (features.ndim() != 3) throw ShapeError("select_magnitude expects DxHxW");
    if (density <= 0.0 || density > 1.0) throw ArgumentError("density must be in (0, 1]");
    const int64_t D = features.dim(0), H = features.dim(1), W = features.dim(2);
    const int64_t total = H * W;
    std::vector<double> norm(size_t(total), 0.0);
    for (int64_t d = 0; d < D; ++d)
        for (int64_t p = 0; p < total; ++p) {
            const double v = double(features[d * total + p]);
            norm[size_t(p)] += v * v;
        }
    std::vector<int64_t> order(static_cast<size_t>(total));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int64_t a, int64_t b) { return norm[size_t(a)] < norm[size_t(b)]; });
    const int64_t want = int64_t(density * double(total));
    std::vector<uint8_t> bits(size_t(total), 0);
    for (int64_t i = 0; i < want; ++i) bits[size_t(order[size_t(i)])] = 1;
    return SelectionMask::from_bits(H, W, std::move(bits));
}

struct SelectorReport {
    double density = 0.0;
    double recall = 0.0;     // |selected ∩ error| / |error|
    double precision = 0.0;  // |selected ∩ error| / |selected|
};

/// Error set = misclassified non-ignore pixels; recall and precision of the
/// mask against it.
inline SelectorReport selector_metrics(const SelectionMask& mask, const LabelMap& pred,
                                       const LabelMap& gt) {
    if (mask.height != pred.height || mask.width != pred.width || pred.height != gt.height ||
        pred.width != gt.width)
        throw ShapeError("selector_metrics dims mismatch");
    int64_t errors = 0, hit = 0;
    for (int64_t y = 0; y < gt.height; ++y)
        for (int64_t x = 0; x < gt.width; ++x) {
            if (gt.at(y, x) == LabelMap::kIgnoreLabel) continue;
            if (pred.at(y, x) != gt.at(y, x)) {
                ++errors;
                if (mask.test(y, x)) ++hit;
            }
        }
    SelectorReport rep;
    rep.density = mask.density();
    rep.recall = errors > 0 ? double(hit) / double(errors) : 0.0;
    rep.precision = mask.count() > 0 ? double(hit) / double(mask.count()) : 0.0;
    return rep;
}

}  // namespace sparef
