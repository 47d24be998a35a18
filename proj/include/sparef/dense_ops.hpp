#pragma once

#include <array>
#include <cmath>
#include <limits>

#include "sparef/tensor.hpp"

namespace sparef {

// Elementary dense operations over the last-two-axes spatial layout.

namespace detail {

// Splits dims into (leading planes, H, W). Works for 2-d HxW, 3-d CxHxW and
// 4-d BxCxHxW tensors alike.
template <class T>
void spatial_split(const Tensor<T>& t, int64_t& planes, int64_t& h, int64_t& w) {
    if (t.ndim() < 2) throw ShapeError("spatial op needs at least 2 dims");
    h = t.dim(t.ndim() - 2);
    w = t.dim(t.ndim() - 1);
    planes = t.numel() / (h * w);
}

}  // namespace detail

template <class T>
Tensor<T> nearest_upsample(const Tensor<T>& t, int64_t factor) {
    if (factor < 1) throw ArgumentError("upsample factor must be >= 1");
    int64_t planes, h, w;
    detail::spatial_split(t, planes, h, w);
    std::vector<int64_t> odims = t.dims();
    odims[size_t(t.ndim() - 2)] = h * factor;
    odims[size_t(t.ndim() - 1)] = w * factor;
    Tensor<T> out(odims);
    const T* src = t.data();
    T* dst = out.data();
    for (int64_t p = 0; p < planes; ++p)
        for (int64_t y = 0; y < h * factor; ++y)
            for (int64_t x = 0; x < w * factor; ++x)
                dst[(p * h * factor + y) * w * factor + x] =
                    src[(p * h + y / factor) * w + x / factor];
    return out;
}

inline LabelMap nearest_upsample(const LabelMap& lm, int64_t factor) {
    if (factor < 1) throw ArgumentError("upsample factor must be >= 1");
    LabelMap out(lm.height * factor, lm.width * factor);
    for (int64_t y = 0; y < out.height; ++y)
        for (int64_t x = 0; x < out.width; ++x)
            out.at(y, x) = lm.at(y / factor, x / factor);
    return out;
}

/// Keeps every factor-th pixel (top-left of each block); exact inverse of
/// nearest_upsample at the same factor.
template <class T>
Tensor<T> subsample(const Tensor<T>& t, int64_t factor) {
    if (factor < 1) throw ArgumentError("subsample factor must be >= 1");
    int64_t planes, h, w;
    detail::spatial_split(t, planes, h, w);
    if (h % factor != 0 || w % factor != 0)
        throw ArgumentError("spatial dims not divisible by subsample factor");
    std::vector<int64_t> odims = t.dims();
    odims[size_t(t.ndim() - 2)] = h / factor;
    odims[size_t(t.ndim() - 1)] = w / factor;
    Tensor<T> out(odims);
    const T* src = t.data();
    T* dst = out.data();
    for (int64_t p = 0; p < planes; ++p)
        for (int64_t y = 0; y < h / factor; ++y)
            for (int64_t x = 0; x < w / factor; ++x)
                dst[(p * (h / factor) + y) * (w / factor) + x] =
                    src[(p * h + y * factor) * w + x * factor];
    return out;
}

inline LabelMap subsample(const LabelMap& lm, int64_t factor) {
    if (factor < 1) throw ArgumentError("subsample factor must be >= 1");
    if (lm.height % factor != 0 || lm.width % factor != 0)
        throw ArgumentError("label dims not divisible by subsample factor");
    LabelMap out(lm.height / factor, lm.width / factor);
    for (int64_t y = 0; y < out.height; ++y)
        for (int64_t x = 0; x < out.width; ++x)
            out.at(y, x) = lm.at(y * factor, x * factor);
    return out;
}

/// Block-mean downsampling. Each output pixel is the mean of its
/// factor x factor source block; integral types round to nearest.
template <class T>
Tensor<T> area_downsample(const Tensor<T>& t, int64_t factor) {
    if (factor < 1) throw ArgumentError("downsample factor must be >= 1");
    int64_t planes, h, w;
    detail::spatial_split(t, planes, h, w);
    if (h % factor != 0 || w % factor != 0)
        throw ArgumentError("spatial dims not divisible by downsample factor");
    std::vector<int64_t> odims = t.dims();
    const int64_t oh = h / factor, ow = w / factor;
    odims[size_t(t.ndim() - 2)] = oh;
    odims[size_t(t.ndim() - 1)] = ow;
    Tensor<T> out(odims);
    const T* src = t.data();
    T* dst = out.data();
    const double inv = 1.0 / double(factor * factor);
    for (int64_t p = 0; p < planes; ++p)
        for (int64_t y = 0; y < oh; ++y)
            for (int64_t x = 0; x < ow; ++x) {
                double acc = 0.0;
                for (int64_t dy = 0; dy < factor; ++dy)
                    for (int64_t dx = 0; dx < factor; ++dx)
                        acc += double(src[(p * h + y * factor + dy) * w + x * factor + dx]);
                const double mean = acc * inv;
                if constexpr (std::is_integral_v<T>)
                    dst[(p * oh + y) * ow + x] = T(std::llround(mean));
                else
                    dst[(p * oh + y) * ow + x] = T(mean);
            }
    return out;
}

/// Per-pixel softmax over the channel axis of a CxHxW tensor, computed with
/// max subtraction.
template <class S>
Tensor<S> softmax_channels(const Tensor<S>& logits) {
    static_assert(std::is_floating_point_v<S>);
    if (logits.ndim() != 3) throw ShapeError("softmax_channels expects CxHxW");
    const int64_t C = logits.dim(0), H = logits.dim(1), W = logits.dim(2);
    for (int64_t i = 0; i < logits.numel(); ++i)
        if (std::isnan(logits[i])) throw NumericError("NaN logit in softmax_channels");
    Tensor<S> probs(logits.dims());
    for (int64_t y = 0; y < H; ++y)
        for (int64_t x = 0; x < W; ++x) {
            S mx = logits.at(0, y, x);
            for (int64_t c = 1; c < C; ++c) mx = std::max(mx, logits.at(c, y, x));
            S sum = 0;
            for (int64_t c = 0; c < C; ++c) {
                const S e = std::exp(logits.at(c, y, x) - mx);
                probs.at(c, y, x) = e;
                sum += e;
            }
            const S inv = S(1) / sum;
            for (int64_t c = 0; c < C; ++c) probs.at(c, y, x) *= inv;
        }
    return probs;
}

/// Argmax over channels; ties break toward the smallest class index.
template <class S>
LabelMap argmax_channels(const Tensor<S>& logits) {
    if (logits.ndim() != 3) throw ShapeError("argmax_channels expects CxHxW");
    const int64_t C = logits.dim(0), H = logits.dim(1), W = logits.dim(2);
    LabelMap lm(H, W);
    for (int64_t y = 0; y < H; ++y)
        for (int64_t x = 0; x < W; ++x) {
            int64_t best = 0;
            S bv = logits.at(0, y, x);
            for (int64_t c = 1; c < C; ++c)
                if (logits.at(c, y, x) > bv) {
                    bv = logits.at(c, y, x);
                    best = c;
                }
            lm.at(y, x) = uint8_t(best);
        }
    return lm;
}

/// u8 RGB -> float in [0,1] -> standardized by per-channel mean/std.
inline Tensor<float> normalize_image(const Tensor<uint8_t>& rgb,
                                     const std::array<float, 3>& mean,
                                     const std::array<float, 3>& stddev) {
    if (rgb.ndim() != 3 || rgb.dim(0) != 3) throw ShapeError("normalize_image expects 3xHxW");
    Tensor<float> out(rgb.dims());
    const int64_t plane = rgb.dim(1) * rgb.dim(2);
    for (int64_t c = 0; c < 3; ++c) {
        const float inv = 1.0f / stddev[size_t(c)];
        for (int64_t i = 0; i < plane; ++i)
            out[c * plane + i] = (float(rgb[c * plane + i]) / 255.0f - mean[size_t(c)]) * inv;
    }
    return out;
}

}  // namespace sparef
