#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "sparef/conv.hpp"
#include "sparef/rng.hpp"

namespace sparef {

/// Trainable tensor with its gradient and Adam moment accumulators. Biases,
/// batch-norm scales etc. are stored as 1 x n matrices so every parameter is
/// a plain 2-d block. Gradient and moment storage is allocated on first use;
/// inference-only networks carry just the values.
template <class S>
struct Parameter {
    MatX<S> value, grad, m, v;

    void resize(int64_t rows, int64_t cols) { value = MatX<S>::Zero(rows, cols); }

    void ensure_grad() {
        if (grad.rows() != value.rows() || grad.cols() != value.cols())
            grad = MatX<S>::Zero(value.rows(), value.cols());
    }

    void ensure_moments() {
        if (m.rows() != value.rows() || m.cols() != value.cols()) {
            m = MatX<S>::Zero(value.rows(), value.cols());
            v = MatX<S>::Zero(value.rows(), value.cols());
        }
    }

    void zero_grad() {
        ensure_grad();
        grad.setZero();
    }
};

template <class S>
using StateMap = std::vector<std::pair<std::string, MatX<S>*>>;

/// Per-forward context. `record` saves activations for a later backward and
/// lets batch norm update its running statistics; plain inference and
/// finite-difference probes run with record off. When `macs` is set, every
/// multiply-accumulate-bearing layer adds its count.
struct RunCtx {
    CoordinateManager* mgr = nullptr;
    bool training = false;
    bool record = false;
    int64_t* macs = nullptr;
};

namespace init {

template <class S>
void kaiming(MatX<S>& w, int64_t fan_in, Rng& rng) {
    const double stddev = std::sqrt(2.0 / double(fan_in));
    for (int64_t i = 0; i < w.rows(); ++i)
        for (int64_t j = 0; j < w.cols(); ++j) w(i, j) = S(rng.normal() * stddev);
}

template <class S>
void normal(MatX<S>& w, double stddev, Rng& rng) {
    for (int64_t i = 0; i < w.rows(); ++i)
        for (int64_t j = 0; j < w.cols(); ++j) w(i, j) = S(rng.normal() * stddev);
}

}  // namespace init

// ---------------------------------------------------------------------------

template <class S>
class SubmConvLayer {
public:
    SubmConvLayer(int kernel_size, int64_t cin, int64_t cout)
        : kernel_size_(kernel_size), cin_(cin), cout_(cout) {
        weight_.resize(int64_t(kernel_size) * kernel_size * cin, cout);
        bias_.resize(1, cout);
    }

    void init_params(Rng& rng) {
        init::kaiming(weight_.value, int64_t(kernel_size_) * kernel_size_ * cin_, rng);
        bias_.value.setZero();
    }

    SparseTensor<S> forward(const SparseTensor<S>& x, RunCtx& ctx) {
        if (x.channels() != cin_) throw ShapeError("submanifold conv channel mismatch");
        const KernelMap& km = ctx.mgr->submanifold_map(x.coords, kernel_size_);
        const VecX<S> b = bias_.value.row(0).transpose();
        MatX<S> out = conv_execute(km, x.feats, weight_.value, &b, x.rows());
        if (ctx.macs) *ctx.macs += sparse_conv_macs(km, cin_, cout_);
        if (ctx.record) {
            weight_.ensure_grad();
            bias_.ensure_grad();
            saved_input_ = x.feats;
            saved_km_ = &km;
        }
        return SparseTensor<S>(x.coords, std::move(out));
    }

    MatX<S> backward(const MatX<S>& grad_out) {
        if (!saved_km_) throw StateError("conv backward without recorded forward");
        VecX<S> db = VecX<S>::Zero(cout_);
        MatX<S> grad_in =
            conv_backward(*saved_km_, saved_input_, weight_.value, grad_out, weight_.grad, &db);
        bias_.grad.row(0) += db.transpose();
        return grad_in;
    }

    void params(std::vector<Parameter<S>*>& out) {
        out.push_back(&weight_);
        out.push_back(&bias_);
    }
    void state(const std::string& p, StateMap<S>& out) {
        out.emplace_back(p + ".W", &weight_.value);
        out.emplace_back(p + ".b", &bias_.value);
    }
    int64_t macs(const KernelMap& km) const { return sparse_conv_macs(km, cin_, cout_); }
    int kernel_size() const { return kernel_size_; }
    int64_t cin() const { return cin_; }
    int64_t cout() const { return cout_; }
    Parameter<S>& weight() { return weight_; }
    Parameter<S>& bias() { return bias_; }

private:
    int kernel_size_;
    int64_t cin_, cout_;
    Parameter<S> weight_, bias_;
    MatX<S> saved_input_;
    const KernelMap* saved_km_ = nullptr;
};

/// 2x2 stride-2 downsampling convolution; registers its input coordinate
/// level so the matching inverse convolution can restore it.
template <class S>
class StridedConvLayer {
public:
    StridedConvLayer(int64_t cin, int64_t cout) : cin_(cin), cout_(cout) {
        weight_.resize(4 * cin, cout);
        bias_.resize(1, cout);
    }

    void init_params(Rng& rng) {
        init::kaiming(weight_.value, 4 * cin_, rng);
        bias_.value.setZero();
    }

    SparseTensor<S> forward(const SparseTensor<S>& x, RunCtx& ctx) {
        if (x.channels() != cin_) throw ShapeError("strided conv channel mismatch");
        auto [coarse, km] = ctx.mgr->strided_transition(x.coords);
        const VecX<S> b = bias_.value.row(0).transpose();
        MatX<S> out = conv_execute(*km, x.feats, weight_.value, &b, int64_t(coarse->size()));
        if (ctx.macs) *ctx.macs += sparse_conv_macs(*km, cin_, cout_);
        if (ctx.record) {
            weight_.ensure_grad();
            bias_.ensure_grad();
            saved_input_ = x.feats;
            saved_km_ = km;
        }
        return SparseTensor<S>(coarse, std::move(out));
    }

    MatX<S> backward(const MatX<S>& grad_out) {
        if (!saved_km_) throw StateError("conv backward without recorded forward");
        VecX<S> db = VecX<S>::Zero(cout_);
        MatX<S> grad_in =
            conv_backward(*saved_km_, saved_input_, weight_.value, grad_out, weight_.grad, &db);
        bias_.grad.row(0) += db.transpose();
        return grad_in;
    }

    void params(std::vector<Parameter<S>*>& out) {
        out.push_back(&weight_);
        out.push_back(&bias_);
    }
    void state(const std::string& p, StateMap<S>& out) {
        out.emplace_back(p + ".W", &weight_.value);
        out.emplace_back(p + ".b", &bias_.value);
    }
    int64_t cin() const { return cin_; }
    int64_t cout() const { return cout_; }
    Parameter<S>& weight() { return weight_; }
    Parameter<S>& bias() { return bias_; }

private:
    int64_t cin_, cout_;
    Parameter<S> weight_, bias_;
    MatX<S> saved_input_;
    const KernelMap* saved_km_ = nullptr;
};

/// 2x2 inverse (transposed) convolution back to the cached finer level.
template <class S>
class InverseConvLayer {
public:
    InverseConvLayer(int64_t cin, int64_t cout) : cin_(cin), cout_(cout) {
        weight_.resize(4 * cin, cout);
        bias_.resize(1, cout);
    }

    void init_params(Rng& rng) {
        init::kaiming(weight_.value, 4 * cin_, rng);
        bias_.value.setZero();
    }

    SparseTensor<S> forward(const SparseTensor<S>& x, RunCtx& ctx) {
        if (x.channels() != cin_) throw ShapeError("inverse conv channel mismatch");
        auto [fine, km] = ctx.mgr->inverse_transition(x.coords);
        const VecX<S> b = bias_.value.row(0).transpose();
        MatX<S> out = conv_execute(*km, x.feats, weight_.value, &b, int64_t(fine->size()));
        if (ctx.macs) *ctx.macs += sparse_conv_macs(*km, cin_, cout_);
        if (ctx.record) {
            weight_.ensure_grad();
            bias_.ensure_grad();
            saved_input_ = x.feats;
            saved_km_ = km;
        }
        return SparseTensor<S>(fine, std::move(out));
    }

    MatX<S> backward(const MatX<S>& grad_out) {
        if (!saved_km_) throw StateError("conv backward without recorded forward");
        VecX<S> db = VecX<S>::Zero(cout_);
        MatX<S> grad_in =
            conv_backward(*saved_km_, saved_input_, weight_.value, grad_out, weight_.grad, &db);
        bias_.grad.row(0) += db.transpose();
        return grad_in;
    }

    void params(std::vector<Parameter<S>*>& out) {
        out.push_back(&weight_);
        out.push_back(&bias_);
    }
    void state(const std::string& p, StateMap<S>& out) {
        out.emplace_back(p + ".W", &weight_.value);
        out.emplace_back(p + ".b", &bias_.value);
    }
    int64_t cin() const { return cin_; }
    int64_t cout() const { return cout_; }
    Parameter<S>& weight() { return weight_; }
    Parameter<S>& bias() { return bias_; }

private:
    int64_t cin_, cout_;
    Parameter<S> weight_, bias_;
    MatX<S> saved_input_;
    const KernelMap* saved_km_ = nullptr;
};

template <class S>
class BatchNormLayer {
public:
    explicit BatchNormLayer(int64_t channels) : channels_(channels) {
        gamma_.resize(1, channels);
        beta_.resize(1, channels);
        gamma_.value.setOnes();
        running_mean_ = MatX<S>::Zero(1, channels);
        running_var_ = MatX<S>::Ones(1, channels);
    }

    void init_params(Rng&) {
        gamma_.value.setOnes();
        beta_.value.setZero();
    }

    SparseTensor<S> forward(const SparseTensor<S>& x, RunCtx& ctx) {
        if (x.channels() != channels_) throw ShapeError("batch norm channel mismatch");
        if (identity_) return x;
        const int64_t n = x.rows();
        VecX<S> mean, var;
        const bool use_batch_stats = ctx.training && n > 0;
        if (use_batch_stats) {
            mean = x.feats.colwise().mean().transpose();
            MatX<S> centered = x.feats.rowwise() - mean.transpose();
            var = (centered.array().square().colwise().sum() / S(n)).matrix().transpose();
            if (ctx.record) {
                running_mean_.row(0) =
                    (S(1) - momentum_) * running_mean_.row(0) + momentum_ * mean.transpose();
                running_var_.row(0) =
                    (S(1) - momentum_) * running_var_.row(0) + momentum_ * var.transpose();
            }
        } else {
            mean = running_mean_.row(0).transpose();
            var = running_var_.row(0).transpose();
        }
        const VecX<S> inv_std = (var.array() + eps_).rsqrt().matrix();
        MatX<S> xhat = x.feats.rowwise() - mean.transpose();
        xhat.array().rowwise() *= inv_std.transpose().array();
        MatX<S> out = (xhat.array().rowwise() * gamma_.value.row(0).array()).matrix();
        out.rowwise() += beta_.value.row(0);
        if (ctx.record) {
            gamma_.ensure_grad();
            beta_.ensure_grad();
            saved_xhat_ = std::move(xhat);
            saved_inv_std_ = inv_std;
            saved_batch_stats_ = use_batch_stats;
            recorded_ = true;
        }
        return SparseTensor<S>(x.coords, std::move(out));
    }

    MatX<S> backward(const MatX<S>& grad_out) {
        if (!recorded_) throw StateError("batch norm backward without recorded forward");
        const int64_t n = grad_out.rows();
        gamma_.grad.row(0) += (grad_out.array() * saved_xhat_.array()).colwise().sum().matrix();
        beta_.grad.row(0) += grad_out.colwise().sum();
        const VecX<S> scale = gamma_.value.row(0).transpose().cwiseProduct(saved_inv_std_);
        if (!saved_batch_stats_) {
            // eval-mode normalization is a fixed affine map
            return (grad_out.array().rowwise() * scale.transpose().array()).matrix();
        }
        const VecX<S> sum_g = grad_out.colwise().sum().transpose();
        const VecX<S> sum_gx =
            (grad_out.array() * saved_xhat_.array()).colwise().sum().matrix().transpose();
        MatX<S> gi = S(n) * grad_out;
        gi.rowwise() -= sum_g.transpose();
        gi -= (saved_xhat_.array().rowwise() * sum_gx.transpose().array()).matrix();
        gi.array().rowwise() *= (scale / S(n)).transpose().array();
        return gi;
    }

    void params(std::vector<Parameter<S>*>& out) {
        out.push_back(&gamma_);
        out.push_back(&beta_);
    }
    void state(const std::string& p, StateMap<S>& out) {
        out.emplace_back(p + ".gamma", &gamma_.value);
        out.emplace_back(p + ".beta", &beta_.value);
        out.emplace_back(p + ".running_mean", &running_mean_);
        out.emplace_back(p + ".running_var", &running_var_);
    }

    const MatX<S>& gamma() const { return gamma_.value; }
    const MatX<S>& beta() const { return beta_.value; }
    const MatX<S>& running_mean() const { return running_mean_; }
    const MatX<S>& running_var() const { return running_var_; }
    S eps() const { return eps_; }

    /// Folds this layer's eval-mode affine map into the preceding conv's
    /// weights: W' = W * diag(s), b' = (b - mu) * s + beta with
    /// s = gamma / sqrt(var + eps). The layer becomes a pass-through.
    void fold_into(Parameter<S>& conv_weight, Parameter<S>& conv_bias) {
        const VecX<S> scale =
            (gamma_.value.row(0).transpose().array() *
             (running_var_.row(0).transpose().array() + eps_).rsqrt())
                .matrix();
        conv_weight.value.array().rowwise() *= scale.transpose().array();
        conv_bias.value.row(0) =
            ((conv_bias.value.row(0).array() - running_mean_.row(0).array()) *
             scale.transpose().array())
                .matrix() +
            beta_.value.row(0);
        identity_ = true;
    }
    bool folded() const { return identity_; }

private:
    bool identity_ = false;
    int64_t channels_;
    Parameter<S> gamma_, beta_;
    MatX<S> running_mean_, running_var_;
    S eps_ = S(1e-5), momentum_ = S(0.1);
    MatX<S> saved_xhat_;
    VecX<S> saved_inv_std_;
    bool saved_batch_stats_ = false;
    bool recorded_ = false;
};

template <class S>
class ReluLayer {
public:
    SparseTensor<S> forward(const SparseTensor<S>& x, RunCtx& ctx) {
        if (ctx.record) saved_positive_ = (x.feats.array() > S(0)).template cast<S>().matrix();
        return relu(x);
    }
    MatX<S> forward_mat(const MatX<S>& x, RunCtx& ctx) {
        if (ctx.record) saved_positive_ = (x.array() > S(0)).template cast<S>().matrix();
        return x.cwiseMax(S(0));
    }
    MatX<S> backward(const MatX<S>& grad_out) {
        return (grad_out.array() * saved_positive_.array()).matrix();
    }

private:
    MatX<S> saved_positive_;
};

/// Fully connected map over feature rows; also serves as the 1x1 "linear
/// head" on sparse tensors.
template <class S>
class LinearLayer {
public:
    LinearLayer(int64_t cin, int64_t cout) : cin_(cin), cout_(cout) {
        weight_.resize(cin, cout);
        bias_.resize(1, cout);
    }

    void init_params(Rng& rng) {
        init::kaiming(weight_.value, cin_, rng);
        bias_.value.setZero();
    }

    MatX<S> forward_mat(const MatX<S>& x, RunCtx& ctx) {
        if (x.cols() != cin_) throw ShapeError("linear channel mismatch");
        if (ctx.record) {
            weight_.ensure_grad();
            bias_.ensure_grad();
            saved_input_ = x;
        }
        if (ctx.macs) *ctx.macs += linear_macs(x.rows(), cin_, cout_);
        MatX<S> out = x * weight_.value;
        out.rowwise() += bias_.value.row(0);
        return out;
    }

    SparseTensor<S> forward(const SparseTensor<S>& x, RunCtx& ctx) {
        return SparseTensor<S>(x.coords, forward_mat(x.feats, ctx));
    }

    MatX<S> backward(const MatX<S>& grad_out) {
        weight_.grad.noalias() += saved_input_.transpose() * grad_out;
        bias_.grad.row(0) += grad_out.colwise().sum();
        return grad_out * weight_.value.transpose();
    }

    void params(std::vector<Parameter<S>*>& out) {
        out.push_back(&weight_);
        out.push_back(&bias_);
    }
    void state(const std::string& p, StateMap<S>& out) {
        out.emplace_back(p + ".W", &weight_.value);
        out.emplace_back(p + ".b", &bias_.value);
    }
    Parameter<S>& weight() { return weight_; }
    Parameter<S>& bias() { return bias_; }
    int64_t cin() const { return cin_; }
    int64_t cout() const { return cout_; }

private:
    int64_t cin_, cout_;
    Parameter<S> weight_, bias_;
    MatX<S> saved_input_;
};

/// conv-bn-relu-conv-bn with an additive skip (1x1 conv + bn projection when
/// channel counts differ), then relu.
template <class S>
class BasicBlock {
public:
    BasicBlock(int64_t cin, int64_t cout)
        : conv1_(3, cin, cout), bn1_(cout), conv2_(3, cout, cout), bn2_(cout) {
        if (cin != cout) {
            proj_.emplace(1, cin, cout);
            proj_bn_.emplace(cout);
        }
    }

    void init_params(Rng& rng) {
        conv1_.init_params(rng);
        bn1_.init_params(rng);
        conv2_.init_params(rng);
        bn2_.init_params(rng);
        if (proj_) {
            proj_->init_params(rng);
            proj_bn_->init_params(rng);
        }
    }

    void fold_batch_norms() {
        bn1_.fold_into(conv1_.weight(), conv1_.bias());
        bn2_.fold_into(conv2_.weight(), conv2_.bias());
        if (proj_) proj_bn_->fold_into(proj_->weight(), proj_->bias());
    }

    SparseTensor<S> forward(const SparseTensor<S>& x, RunCtx& ctx) {
        SparseTensor<S> h = relu1_.forward(bn1_.forward(conv1_.forward(x, ctx), ctx), ctx);
        h = bn2_.forward(conv2_.forward(h, ctx), ctx);
        SparseTensor<S> skip =
            proj_ ? proj_bn_->forward(proj_->forward(x, ctx), ctx) : x;
        SparseTensor<S> sum = residual_add(h, skip);
        return relu_out_.forward(sum, ctx);
    }

    MatX<S> backward(const MatX<S>& grad_out) {
        MatX<S> g = relu_out_.backward(grad_out);
        MatX<S> g_main = conv1_.backward(
            bn1_.backward(relu1_.backward(conv2_.backward(bn2_.backward(g)))));
        MatX<S> g_skip = proj_ ? proj_->backward(proj_bn_->backward(g)) : g;
        return g_main + g_skip;
    }

    void params(std::vector<Parameter<S>*>& out) {
        conv1_.params(out);
        bn1_.params(out);
        conv2_.params(out);
        bn2_.params(out);
        if (proj_) {
            proj_->params(out);
            proj_bn_->params(out);
        }
    }
    void state(const std::string& p, StateMap<S>& out) {
        conv1_.state(p + ".conv1", out);
        bn1_.state(p + ".bn1", out);
        conv2_.state(p + ".conv2", out);
        bn2_.state(p + ".bn2", out);
        if (proj_) {
            proj_->state(p + ".proj", out);
            proj_bn_->state(p + ".proj_bn", out);
        }
    }

private:
    SubmConvLayer<S> conv1_;
    BatchNormLayer<S> bn1_;
    SubmConvLayer<S> conv2_;
    BatchNormLayer<S> bn2_;
    std::optional<SubmConvLayer<S>> proj_;
    std::optional<BatchNormLayer<S>> proj_bn_;
    ReluLayer<S> relu1_, relu_out_;
};

}  // namespace sparef
