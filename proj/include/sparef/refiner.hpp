#pragma once

#include "sparef/layers.hpp"

namespace sparef {

/// Architecture of the sparse feature extractor (and of the toy dense
/// baseline, which is the same network at small width run on fully active
/// grids).
struct RefinerConfig {
    std::vector<int64_t> channels;  // one entry per stage
    int64_t num_classes = 6;
    int64_t in_channels = 3;
    int64_t blocks_per_encoder_stage = 2;
    int64_t blocks_per_decoder_stage = 2;

    int64_t num_stages() const { return int64_t(channels.size()); }

    void validate() const {
        if (channels.empty()) throw ConfigError("refiner needs at least one stage");
        for (int64_t c : channels)
            if (c < 1) throw ConfigError("stage channels must be >= 1");
        if (num_classes < 2) throw ConfigError("refiner needs at least 2 classes");
        if (in_channels < 1) throw ConfigError("refiner needs at least 1 input channel");
        if (blocks_per_encoder_stage < 1 || blocks_per_decoder_stage < 1)
            throw ConfigError("block counts must be >= 1");
    }

    bool operator==(const RefinerConfig&) const = default;
};

/// U-Net over the sparse engine: a 3x3 stem, per encoder stage residual
/// blocks then a 2x2 strided conv, bottleneck blocks, and per decoder stage
/// an inverse conv followed by channel concatenation with the matching
/// encoder output and residual blocks. Linear classification head.
template <class S>
class RefinerNet {
public:
    explicit RefinerNet(RefinerConfig cfg) : cfg_(std::move(cfg)) {
        cfg_.validate();
        const int64_t stages = cfg_.num_stages();
        stem_conv_.emplace(3, cfg_.in_channels, cfg_.channels[0]);
        stem_bn_.emplace(cfg_.channels[0]);
        for (int64_t i = 0; i + 1 < stages; ++i) {
            EncoderStage enc;
            for (int64_t b = 0; b < cfg_.blocks_per_encoder_stage; ++b)
                enc.blocks.emplace_back(cfg_.channels[size_t(i)], cfg_.channels[size_t(i)]);
            enc.down.emplace(cfg_.channels[size_t(i)], cfg_.channels[size_t(i + 1)]);
            enc.down_bn.emplace(cfg_.channels[size_t(i + 1)]);
            encoder_.push_back(std::move(enc));
        }
        const int64_t deep = cfg_.channels[size_t(stages - 1)];
        for (int64_t b = 0; b < cfg_.blocks_per_encoder_stage; ++b)
            bottleneck_.emplace_back(deep, deep);
        for (int64_t d = 0; d + 1 < stages; ++d) {
            const int64_t level = stages - 2 - d;  // deepest decoder stage first
            const int64_t c_coarse = cfg_.channels[size_t(level + 1)];
            const int64_t c_fine = cfg_.channels[size_t(level)];
            DecoderStage dec;
            dec.up.emplace(c_coarse, c_fine);
            dec.up_bn.emplace(c_fine);
            for (int64_t b = 0; b < cfg_.blocks_per_decoder_stage; ++b)
                dec.blocks.emplace_back(b == 0 ? 2 * c_fine : c_fine, c_fine);
            decoder_.push_back(std::move(dec));
        }
        head_.emplace(cfg_.channels[0], cfg_.num_classes);
    }

    void init_params(uint64_t seed) {
        Rng rng(seed);
        stem_conv_->init_params(rng);
        stem_bn_->init_params(rng);
        for (auto& enc : encoder_) {
            for (auto& blk : enc.blocks) blk.init_params(rng);
            enc.down->init_params(rng);
            enc.down_bn->init_params(rng);
        }
        for (auto& blk : bottleneck_) blk.init_params(rng);
        for (auto& dec : decoder_) {
            dec.up->init_params(rng);
            dec.up_bn->init_params(rng);
            for (auto& blk : dec.blocks) blk.init_params(rng);
        }
        head_->init_params(rng);
    }

    /// Input: stride-1 sparse tensor of raw (normalized) RGB rows. Output:
    /// per-pixel logits on the identical coordinate set.
    SparseTensor<S> forward(const SparseTensor<S>& x, RunCtx& ctx) {
        if (x.channels() != cfg_.in_channels) throw ShapeError("refiner input channel mismatch");
        SparseTensor<S> s =
            stem_relu_.forward(stem_bn_->forward(stem_conv_->forward(x, ctx), ctx), ctx);
        skips_.clear();
        for (auto& enc : encoder_) {
            for (auto& blk : enc.blocks) s = blk.forward(s, ctx);
            skips_.push_back(s);
            s = enc.down_relu.forward(enc.down_bn->forward(enc.down->forward(s, ctx), ctx), ctx);
        }
        for (auto& blk : bottleneck_) s = blk.forward(s, ctx);
        for (size_t d = 0; d < decoder_.size(); ++d) {
            auto& dec = decoder_[d];
            s = dec.up_relu.forward(dec.up_bn->forward(dec.up->forward(s, ctx), ctx), ctx);
            const SparseTensor<S>& skip = skips_[skips_.size() - 1 - d];
            if (s.coords.get() != skip.coords.get())
                throw StateError("decoder did not restore the encoder coordinate set");
            dec.split = s.channels();
            MatX<S> cat(s.rows(), s.channels() + skip.channels());
            cat << s.feats, skip.feats;
            s = SparseTensor<S>(s.coords, std::move(cat));
            for (auto& blk : dec.blocks) s = blk.forward(s, ctx);
        }
        return head_->forward(s, ctx);
    }

    /// Gradient of the loss w.r.t. the input rows; parameter gradients
    /// accumulate into the layers.
    MatX<S> backward(const MatX<S>& grad_logits) {
        MatX<S> g = head_->backward(grad_logits);
        std::vector<MatX<S>> skip_grads(decoder_.size());
        for (size_t d = decoder_.size(); d-- > 0;) {
            auto& dec = decoder_[d];
            for (size_t b = dec.blocks.size(); b-- > 0;) g = dec.blocks[b].backward(g);
            skip_grads[decoder_.size() - 1 - d] = g.rightCols(g.cols() - dec.split);
            MatX<S> g_up = g.leftCols(dec.split);
            g = dec.up->backward(dec.up_bn->backward(dec.up_relu.backward(g_up)));
        }
        for (size_t b = bottleneck_.size(); b-- > 0;) g = bottleneck_[b].backward(g);
        for (size_t e = encoder_.size(); e-- > 0;) {
            auto& enc = encoder_[e];
            g = enc.down->backward(enc.down_bn->backward(enc.down_relu.backward(g)));
            if (!skip_grads.empty()) g += skip_grads[e];
            for (size_t b = enc.blocks.size(); b-- > 0;) g = enc.blocks[b].backward(g);
        }
        return stem_conv_->backward(stem_bn_->backward(stem_relu_.backward(g)));
    }

    void params(std::vector<Parameter<S>*>& out) {
        stem_conv_->params(out);
        stem_bn_->params(out);
        for (auto& enc : encoder_) {
            for (auto& blk : enc.blocks) blk.params(out);
            enc.down->params(out);
            enc.down_bn->params(out);
        }
        for (auto& blk : bottleneck_) blk.params(out);
        for (auto& dec : decoder_) {
            dec.up->params(out);
            dec.up_bn->params(out);
            for (auto& blk : dec.blocks) blk.params(out);
        }
        head_->params(out);
    }

    void state(const std::string& prefix, StateMap<S>& out) {
        stem_conv_->state(prefix + ".stem.conv", out);
        stem_bn_->state(prefix + ".stem.bn", out);
        for (size_t i = 0; i < encoder_.size(); ++i) {
            const std::string p = prefix + ".enc" + std::to_string(i);
            for (size_t b = 0; b < encoder_[i].blocks.size(); ++b)
                encoder_[i].blocks[b].state(p + ".block" + std::to_string(b), out);
            encoder_[i].down->state(p + ".down", out);
            encoder_[i].down_bn->state(p + ".down_bn", out);
        }
        for (size_t b = 0; b < bottleneck_.size(); ++b)
            bottleneck_[b].state(prefix + ".bottleneck.block" + std::to_string(b), out);
        for (size_t d = 0; d < decoder_.size(); ++d) {
            const std::string p = prefix + ".dec" + std::to_string(d);
            decoder_[d].up->state(p + ".up", out);
            decoder_[d].up_bn->state(p + ".up_bn", out);
            for (size_t b = 0; b < decoder_[d].blocks.size(); ++b)
                decoder_[d].blocks[b].state(p + ".block" + std::to_string(b), out);
        }
        head_->state(prefix + ".head", out);
    }

    int64_t num_params() {
        std::vector<Parameter<S>*> ps;
        params(ps);
        int64_t n = 0;
        for (auto* p : ps) n += p->value.size();
        return n;
    }

    /// Folds every batch norm into its preceding convolution (inference
    /// benchmarking protocol); forward outputs change only by rounding.
    void fold_batch_norms() {
        stem_bn_->fold_into(stem_conv_->weight(), stem_conv_->bias());
        for (auto& enc : encoder_) {
            for (auto& blk : enc.blocks) blk.fold_batch_norms();
            enc.down_bn->fold_into(enc.down->weight(), enc.down->bias());
        }
        for (auto& blk : bottleneck_) blk.fold_batch_norms();
        for (auto& dec : decoder_) {
            dec.up_bn->fold_into(dec.up->weight(), dec.up->bias());
            for (auto& blk : dec.blocks) blk.fold_batch_norms();
        }
    }

    const RefinerConfig& config() const { return cfg_; }

private:
    struct EncoderStage {
        std::vector<BasicBlock<S>> blocks;
        std::optional<StridedConvLayer<S>> down;
        std::optional<BatchNormLayer<S>> down_bn;
        ReluLayer<S> down_relu;
    };
    struct DecoderStage {
        std::optional<InverseConvLayer<S>> up;
        std::optional<BatchNormLayer<S>> up_bn;
        ReluLayer<S> up_relu;
        std::vector<BasicBlock<S>> blocks;
        int64_t split = 0;  // channel count of the upsampled half of the concat
    };

    RefinerConfig cfg_;
    std::optional<SubmConvLayer<S>> stem_conv_;
    std::optional<BatchNormLayer<S>> stem_bn_;
    ReluLayer<S> stem_relu_;
    std::vector<EncoderStage> encoder_;
    std::vector<BasicBlock<S>> bottleneck_;
    std::vector<DecoderStage> decoder_;
    std::optional<LinearLayer<S>> head_;
    std::vector<SparseTensor<S>> skips_;
};

/// Padded-convention dense-reference MACs of the architecture run densely at
/// h x w (the denominator for compute-budget comparisons).
inline int64_t refiner_dense_reference_macs(const RefinerConfig& cfg, int64_t h, int64_t w) {
    cfg.validate();
    const int64_t stages = cfg.num_stages();
    auto block_macs = [](int64_t cin, int64_t cout, int64_t hh, int64_t ww) {
        int64_t m = dense_conv_macs(3, cin, cout, hh, ww) + dense_conv_macs(3, cout, cout, hh, ww);
        if (cin != cout) m += dense_conv_macs(1, cin, cout, hh, ww);
        return m;
    };
    int64_t macs = dense_conv_macs(3, cfg.in_channels, cfg.channels[0], h, w);
    int64_t hh = h, ww = w;
    for (int64_t i = 0; i + 1 < stages; ++i) {
        for (int64_t b = 0; b < cfg.blocks_per_encoder_stage; ++b)
            macs += block_macs(cfg.channels[size_t(i)], cfg.channels[size_t(i)], hh, ww);
        hh /= 2;
        ww /= 2;
        // 2x2 stride-2: each output position pays 4 taps
        macs += 4 * cfg.channels[size_t(i)] * cfg.channels[size_t(i + 1)] * hh * ww;
    }
    for (int64_t b = 0; b < cfg.blocks_per_encoder_stage; ++b)
        macs += block_macs(cfg.channels[size_t(stages - 1)], cfg.channels[size_t(stages - 1)], hh,
                           ww);
    for (int64_t d = 0; d + 1 < stages; ++d) {
        const int64_t level = stages - 2 - d;
        const int64_t c_coarse = cfg.channels[size_t(level + 1)];
        const int64_t c_fine = cfg.channels[size_t(level)];
        hh *= 2;
        ww *= 2;
        // inverse 2x2: each fine output receives exactly one tap
        macs += c_coarse * c_fine * hh * ww;
        for (int64_t b = 0; b < cfg.blocks_per_decoder_stage; ++b)
            macs += block_macs(b == 0 ? 2 * c_fine : c_fine, c_fine, hh, ww);
    }
    macs += linear_macs(h * w, cfg.channels[0], cfg.num_classes);
    return macs;
}

}  // namespace sparef
