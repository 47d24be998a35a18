#pragma once

#include "sparef/layers.hpp"
#include "sparef/mask.hpp"
#include "sparef/selector.hpp"

namespace sparef {

/// Numerically stable logistic, clamped into the open interval (0, 1); the
/// exact sigmoid never reaches the endpoints, only rounding does.
template <class S>
S sigmoid_open(S v) {
    S s;
    if (v >= S(0)) {
        const S e = std::exp(-v);
        s = S(1) / (S(1) + e);
    } else {
        const S e = std::exp(v);
        s = e / (S(1) + e);
    }
    return std::min(std::max(s, std::numeric_limits<S>::min()), std::nextafter(S(1), S(0)));
}

/// Fuses initial predictions y1 with refinements y2 per selected pixel:
///   w = sigmoid(g([y1; y2; e1; e2])),   y = f(w * y1 + (1 - w) * y2),
/// where g and f are two-layer MLPs (hidden width 64) and e1, e2 are the
/// softmax entropies of the two logit rows. f carries an identity skip and a
/// small-initialized correction so the convex combination survives early
/// training.
template <class S>
class GatedEnsembler {
public:
    GatedEnsembler(int64_t num_classes, int64_t hidden = 64)
        : num_classes_(num_classes),
          hidden_(hidden),
          g1_(2 * num_classes + 2, hidden),
          g2_(hidden, 1),
          f1_(num_classes, hidden),
          f2_(hidden, num_classes) {}

    void init_params(Rng& rng) {
        g1_.init_params(rng);
        g2_.init_params(rng);
        // start with the gate leaning on y2 so the refinement path is shaped
        // as calibrated logits before the gate learns where y1 helps
        g2_.bias().value.setConstant(S(-2.5));
        f1_.init_params(rng);
        init::normal(f2_.weight().value, 0.01, rng);
        f2_.bias().value.setZero();
    }

    int64_t num_classes() const { return num_classes_; }
    int64_t hidden() const { return hidden_; }

    MatX<S> forward(const MatX<S>& y1, const MatX<S>& y2, RunCtx& ctx) {
        if (y1.rows() != y2.rows() || y1.cols() != y2.cols())
            throw ShapeError("ensembler operand shape mismatch");
        if (y1.cols() != num_classes_) throw ShapeError("ensembler class count mismatch");
        const int64_t n = y1.rows();

        const VecX<S> e1 = row_entropies(y1);
        const VecX<S> e2 = row_entropies(y2);
        MatX<S> z(n, 2 * num_classes_ + 2);
        z << y1, y2, e1, e2;

        MatX<S> gate_logit = g2_.forward_mat(g_relu_.forward_mat(g1_.forward_mat(z, ctx), ctx), ctx);
        VecX<S> w(n);
        for (int64_t i = 0; i < n; ++i) w(i) = sigmoid_open(gate_logit(i, 0));

        MatX<S> mix = (y1.array().colwise() * w.array()).matrix() +
                      (y2.array().colwise() * (S(1) - w.array())).matrix();
        MatX<S> out = mix + f2_.forward_mat(f_relu_.forward_mat(f1_.forward_mat(mix, ctx), ctx), ctx);
        if (ctx.record) {
            saved_y1_ = y1;
            saved_y2_ = y2;
            saved_w_ = w;
            recorded_ = true;
        }
        return out;
    }

    /// Gradient w.r.t. y2 (the trainable refinement path); y1 comes from the
    /// frozen dense baseline. Parameter gradients accumulate into g and f.
    MatX<S> backward(const MatX<S>& grad_out) {
        if (!recorded_) throw StateError("ensembler backward without recorded forward");
        const int64_t n = grad_out.rows();
        MatX<S> dmix =
            grad_out + f1_.backward(f_relu_.backward(f2_.backward(grad_out)));
        // mix = w*y1 + (1-w)*y2
        VecX<S> dw = ((saved_y1_ - saved_y2_).array() * dmix.array()).rowwise().sum().matrix();
        MatX<S> dy2 = (dmix.array().colwise() * (S(1) - saved_w_.array())).matrix();

        MatX<S> dgate(n, 1);
        dgate.col(0) = (dw.array() * saved_w_.array() * (S(1) - saved_w_.array())).matrix();
        MatX<S> dz = g1_.backward(g_relu_.backward(g2_.backward(dgate)));
        dy2 += dz.middleCols(num_classes_, num_classes_);
        // entropy feature e2 = H(softmax(y2)): dH/dz_j = -p_j (log p_j + H)
        const VecX<S> de2 = dz.col(2 * num_classes_ + 1);
        for (int64_t i = 0; i < n; ++i) {
            const S mx = saved_y2_.row(i).maxCoeff();
            S sum = S(0);
            for (int64_t c = 0; c < num_classes_; ++c)
                sum += std::exp(saved_y2_(i, c) - mx);
            const S lse = std::log(sum) + mx;
            S ent = S(0);
            for (int64_t c = 0; c < num_classes_; ++c) {
                const S logp = saved_y2_(i, c) - lse;
                ent -= std::exp(logp) * logp;
            }
            for (int64_t c = 0; c < num_classes_; ++c) {
                const S logp = saved_y2_(i, c) - lse;
                dy2(i, c) -= de2(i) * std::exp(logp) * (logp + ent);
            }
        }
        return dy2;
    }

    void params(std::vector<Parameter<S>*>& out) {
        g1_.params(out);
        g2_.params(out);
        f1_.params(out);
        f2_.params(out);
    }
    void state(const std::string& prefix, StateMap<S>& out) {
        g1_.state(prefix + ".g1", out);
        g2_.state(prefix + ".g2", out);
        f1_.state(prefix + ".f1", out);
        f2_.state(prefix + ".f2", out);
    }

private:
    int64_t num_classes_, hidden_;
    LinearLayer<S> g1_, g2_, f1_, f2_;
    ReluLayer<S> g_relu_, f_relu_;
    MatX<S> saved_y1_, saved_y2_;
    VecX<S> saved_w_;
    bool recorded_ = false;
};

/// Replaces the initial predictions with the refinements.
template <class S>
MatX<S> ensemble_direct(const MatX<S>& y1, const MatX<S>& y2) {
    if (y1.rows() != y2.rows() || y1.cols() != y2.cols())
        throw ShapeError("ensemble operand shape mismatch");
    return y2;
}

/// Per row, the logits with lower softmax entropy; ties go to y2.
template <class S>
MatX<S> ensemble_entropy(const MatX<S>& y1, const MatX<S>& y2) {
    if (y1.rows() != y2.rows() || y1.cols() != y2.cols())
        throw ShapeError("ensemble operand shape mismatch");
    const VecX<S> e1 = row_entropies(y1);
    const VecX<S> e2 = row_entropies(y2);
    MatX<S> out(y1.rows(), y1.cols());
    for (int64_t i = 0; i < y1.rows(); ++i)
        out.row(i) = e1(i) < e2(i) ? y1.row(i) : y2.row(i);
    return out;
}

/// Per row, whichever argmax matches the ground truth; keeps y1 when both or
/// neither do. Evaluation only.
template <class S>
MatX<S> ensemble_oracle(const MatX<S>& y1, const MatX<S>& y2,
                        std::span<const int32_t> targets) {
    if (y1.rows() != y2.rows() || y1.cols() != y2.cols())
        throw ShapeError("ensemble operand shape mismatch");
    if (int64_t(targets.size()) != y1.rows())
        throw ShapeError("ensemble_oracle target count mismatch");
    auto row_argmax = [](const MatX<S>& m, int64_t i) {
        int64_t best = 0;
        for (int64_t c = 1; c < m.cols(); ++c)
            if (m(i, c) > m(i, best)) best = c;
        return best;
    };
    MatX<S> out(y1.rows(), y1.cols());
    for (int64_t i = 0; i < y1.rows(); ++i) {
        const int32_t t = targets[size_t(i)];
        const bool r2 = row_argmax(y2, i) == t;
        const bool r1 = row_argmax(y1, i) == t;
        out.row(i) = (r2 && !r1) ? y2.row(i) : y1.row(i);
    }
    return out;
}

enum class EnsembleStrategy { kGated, kDirect, kEntropy, kOracle };

inline EnsembleStrategy parse_ensemble_strategy(const std::string& name) {
    if (name == "gated") return EnsembleStrategy::kGated;
    if (name == "direct") return EnsembleStrategy::kDirect;
    if (name == "entropy") return EnsembleStrategy::kEntropy;
    if (name == "oracle") return EnsembleStrategy::kOracle;
    throw ArgumentError("unknown ensemble strategy: " + name);
}

inline std::string ensemble_strategy_name(EnsembleStrategy s) {
    switch (s) {
        case EnsembleStrategy::kGated: return "gated";
        case EnsembleStrategy::kDirect: return "direct";
        case EnsembleStrategy::kEntropy: return "entropy";
        case EnsembleStrategy::kOracle: return "oracle";
    }
    throw ArgumentError("bad strategy enum");
}

/// Writes the fused refinements back over the initial prediction: selected
/// pixels take the argmax of their fused row, everything else is untouched.
template <class S>
LabelMap scatter_refinements(const LabelMap& initial, const SelectionMask& mask,
                             const MatX<S>& fused) {
    if (mask.height != initial.height || mask.width != initial.width)
        throw ShapeError("mask dims do not match the initial prediction");
    if (fused.rows() != mask.count())
        throw AlignmentError("fused row count does not match the selection");
    LabelMap out = initial;
    for (int64_t i = 0; i < fused.rows(); ++i) {
        const auto [y, x] = mask.selected[size_t(i)];
        int64_t best = 0;
        for (int64_t c = 1; c < fused.cols(); ++c)
            if (fused(i, c) > fused(i, best)) best = c;
        out.at(y, x) = uint8_t(best);
    }
    return out;
}

template <class S>
LabelMap scatter_refinements(const Tensor<S>& initial_logits, const SelectionMask& mask,
                             const MatX<S>& fused) {
    return scatter_refinements(argmax_channels(initial_logits), mask, fused);
}

}  // namespace sparef
