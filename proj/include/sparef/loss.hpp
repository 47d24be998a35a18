#pragma once

#include <span>

#include "sparef/tensor.hpp"

namespace sparef {

template <class S>
struct LossResult {
    S loss = S(0);
    MatX<S> grad;   // d(loss)/d(logits), same shape as the logits
    int64_t valid = 0;  // rows that contributed
};

/// Mean cross entropy over non-ignored rows, with the gradient
/// (softmax - onehot) / N_valid. All rows ignored is a defined zero.
template <class S>
LossResult<S> cross_entropy(const MatX<S>& logits, std::span<const int32_t> targets,
                            int32_t ignore = 255) {
    if (int64_t(targets.size()) != logits.rows())
        throw ShapeError("cross_entropy target count != logit rows");
    const int64_t n = logits.rows(), c = logits.cols();
    LossResult<S> res;
    res.grad = MatX<S>::Zero(n, c);
    double loss_acc = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        const int32_t t = targets[size_t(i)];
        if (t == ignore) continue;
        if (t < 0 || t >= c) throw ArgumentError("target class out of range");
        const S mx = logits.row(i).maxCoeff();
        S sum = S(0);
        for (int64_t j = 0; j < c; ++j) sum += std::exp(logits(i, j) - mx);
        const S lse = std::log(sum) + mx;
        loss_acc += double(lse - logits(i, t));
        for (int64_t j = 0; j < c; ++j) res.grad(i, j) = std::exp(logits(i, j) - lse);
        res.grad(i, t) -= S(1);
        ++res.valid;
    }
    if (res.valid == 0) {
        res.loss = S(0);
        return res;
    }
    res.loss = S(loss_acc / double(res.valid));
    res.grad /= S(res.valid);
    return res;
}

}  // namespace sparef
