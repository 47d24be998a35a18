#pragma once

#include <iostream>

#include "sparef/loss.hpp"
#include "sparef/optim.hpp"
#include "sparef/pipeline.hpp"

namespace sparef {

namespace train_detail {

struct LoadedImage {
    Tensor<float> norm_full;   // normalized 3xHxW
    LabelMap labels_full;
    Tensor<float> norm_low;    // downsampled input for the dense baseline
    LabelMap labels_low;       // subsampled ground truth
};

inline std::vector<LoadedImage> preload(const Dataset& ds, const std::array<float, 3>& mean,
                                        const std::array<float, 3>& stddev, int64_t factor) {
    std::vector<LoadedImage> out;
    out.reserve(ds.size());
    for (size_t i = 0; i < ds.size(); ++i) {
        auto [rgb, lbl] = ds.load(i);
        LoadedImage li;
        li.norm_full = normalize_image(rgb, mean, stddev);
        li.norm_low = area_downsample(li.norm_full, factor);
        li.labels_low = subsample(lbl, factor);
        li.labels_full = std::move(lbl);
        out.push_back(std::move(li));
    }
    return out;
}

// crop + optional horizontal flip of a CxHxW tensor
inline Tensor<float> crop_image(const Tensor<float>& t, int64_t y0, int64_t x0, int64_t ch,
                                int64_t cw, bool flip) {
    Tensor<float> out({t.dim(0), ch, cw});
    for (int64_t c = 0; c < t.dim(0); ++c)
        for (int64_t y = 0; y < ch; ++y)
            for (int64_t x = 0; x < cw; ++x)
                out.at(c, y, x) = t.at(c, y0 + y, flip ? x0 + cw - 1 - x : x0 + x);
    return out;
}

inline LabelMap crop_labels(const LabelMap& lm, int64_t y0, int64_t x0, int64_t ch, int64_t cw,
                            bool flip) {
    LabelMap out(ch, cw);
    for (int64_t y = 0; y < ch; ++y)
        for (int64_t x = 0; x < cw; ++x)
            out.at(y, x) = lm.at(y0 + y, flip ? x0 + cw - 1 - x : x0 + x);
    return out;
}

// fully active batched coordinate grid, cached per batch size so kernel maps
// are built once per shape rather than once per step
class DenseGridCache {
public:
    DenseGridCache(int64_t h, int64_t w) : h_(h), w_(w) {}

    const std::pair<CoordSetPtr, std::shared_ptr<CoordinateManager>>& get(int64_t batch) {
        auto it = cache_.find(batch);
        if (it == cache_.end()) {
            std::vector<Coord> coords;
            coords.reserve(size_t(batch * h_ * w_));
            for (int32_t b = 0; b < int32_t(batch); ++b)
                for (int32_t y = 0; y < int32_t(h_); ++y)
                    for (int32_t x = 0; x < int32_t(w_); ++x) coords.push_back({b, y, x});
            auto cs = make_coord_set(std::move(coords), 1);
            it = cache_.emplace(batch, std::make_pair(cs, std::make_shared<CoordinateManager>()))
                     .first;
        }
        return it->second;
    }

private:
    int64_t h_, w_;
    std::map<int64_t, std::pair<CoordSetPtr, std::shared_ptr<CoordinateManager>>> cache_;
};

inline std::vector<size_t> epoch_order(size_t n, Rng& rng) {
    std::vector<size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    shuffle_in_place(idx, rng);
    return idx;
}

}  // namespace train_detail

struct TrainStats {
    std::vector<float> losses;          // one entry per optimizer step
    std::vector<int64_t> selected;      // refiner: pixels selected per step
    int64_t steps = 0;
    int64_t skipped = 0;
};

struct BaselineTrainOptions {
    RefinerConfig arch;
    TrainConfig train;
    int64_t crop_h = 32, crop_w = 64;  // low-resolution crop size
    int64_t downsample_factor = 2;
    std::array<float, 3> norm_mean{0.5f, 0.5f, 0.5f};
    std::array<float, 3> norm_std{0.25f, 0.25f, 0.25f};
    bool augment = true;
    int64_t log_every = 50;
    double early_stop_loss = -1.0;  // stop once the step loss drops below
};

/// Trains the dense low-resolution baseline: the refiner architecture at
/// small width run on fully active grids of downsampled crops. The result is
/// frozen by construction afterwards; its parameters never enter another
/// optimizer.
inline ModelBundle train_baseline(const Dataset& data, const BaselineTrainOptions& opt,
                                  std::ostream* log = nullptr, TrainStats* stats = nullptr) {
    opt.arch.validate();
    opt.train.validate();
    auto images = train_detail::preload(data, opt.norm_mean, opt.norm_std,
                                        opt.downsample_factor);
    const int64_t low_h = images[0].norm_low.dim(1), low_w = images[0].norm_low.dim(2);
    if (opt.crop_h > low_h || opt.crop_w > low_w)
        throw ConfigError("baseline crop larger than the downsampled image");

    ModelBundle model;
    model.baseline_cfg = opt.arch;
    model.baseline.emplace(opt.arch);
    model.baseline->init_params(opt.train.seed);
    model.norm_mean = opt.norm_mean;
    model.norm_std = opt.norm_std;
    model.downsample_factor = opt.downsample_factor;

    std::vector<Parameter<float>*> params;
    model.baseline->params(params);

    Rng rng(opt.train.seed ^ 0xBA5E11EEull);
    const int64_t steps_per_epoch =
        (int64_t(images.size()) + opt.train.batch_size - 1) / opt.train.batch_size;
    TrainConfig cfg = opt.train;
    cfg.total_steps = cfg.epochs * steps_per_epoch;

    train_detail::DenseGridCache grids(opt.crop_h, opt.crop_w);
    int64_t step = 0;
    for (int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        auto order = train_detail::epoch_order(images.size(), rng);
        for (size_t at = 0; at < order.size(); at += size_t(cfg.batch_size)) {
            const int64_t bsz =
                std::min<int64_t>(cfg.batch_size, int64_t(order.size() - at));
            const auto& [coords, mgr] = grids.get(bsz);
            MatX<float> feats(bsz * opt.crop_h * opt.crop_w, 3);
            std::vector<int32_t> targets(static_cast<size_t>(bsz * opt.crop_h * opt.crop_w));
            for (int64_t b = 0; b < bsz; ++b) {
                const auto& img = images[order[at + size_t(b)]];
                const int64_t y0 = opt.augment ? rng.uniform_int(0, low_h - opt.crop_h) : 0;
                const int64_t x0 = opt.augment ? rng.uniform_int(0, low_w - opt.crop_w) : 0;
                const bool flip = opt.augment && rng.uniform() < 0.5;
                auto crop =
                    train_detail::crop_image(img.norm_low, y0, x0, opt.crop_h, opt.crop_w, flip);
                auto lbls =
                    train_detail::crop_labels(img.labels_low, y0, x0, opt.crop_h, opt.crop_w, flip);
                const int64_t plane = opt.crop_h * opt.crop_w;
                for (int64_t p = 0; p < plane; ++p) {
                    for (int64_t c = 0; c < 3; ++c) feats(b * plane + p, c) = crop[c * plane + p];
                    targets[size_t(b * plane + p)] = lbls.labels[size_t(p)];
                }
            }
            SparseTensor<float> x(coords, std::move(feats));
            RunCtx ctx{mgr.get(), true, true};
            auto logits = model.baseline->forward(x, ctx);
            auto lr = cross_entropy<float>(logits.feats, targets);
            if (!std::isfinite(lr.loss)) throw TrainingError("baseline training diverged");
            model.baseline->backward(lr.grad);
            ++step;
            optimizer_step(params, cfg, step);
            if (stats) {
                stats->losses.push_back(lr.loss);
                stats->steps = step;
            }
            if (log && (step % opt.log_every == 0 || step == cfg.total_steps))
                *log << "baseline step " << step << "/" << cfg.total_steps << " loss " << lr.loss
                     << "\n";
            if (opt.early_stop_loss > 0 && lr.loss < opt.early_stop_loss) return model;
        }
    }
    return model;
}

struct RefinerTrainOptions {
    RefinerConfig arch;
    EnsembleStrategy strategy = EnsembleStrategy::kGated;  // fuse stage during training
    int64_t ensembler_hidden = 64;
    TrainConfig train;
    double alpha = 0.1;
    int64_t crop_h = 64, crop_w = 128;  // full-resolution crop size
    bool augment = true;
    int64_t log_every = 50;
    double early_stop_loss = -1.0;
};

/// Trains the sparse refiner and gated ensembler jointly with cross entropy
/// on the selected pixels; the dense baseline stays frozen (eval mode, not
/// registered with the optimizer).
inline ModelBundle train_refiner(const Dataset& data, ModelBundle& baseline,
                                 const RefinerTrainOptions& opt, std::ostream* log = nullptr,
                                 TrainStats* stats = nullptr) {
    opt.arch.validate();
    opt.train.validate();
    if (opt.alpha < 0) throw ConfigError("alpha must be >= 0");
    if (opt.arch.num_classes != baseline.baseline_cfg.num_classes)
        throw ConfigError("refiner and baseline class counts differ");
    const int64_t factor = baseline.downsample_factor;
    if (opt.crop_h % factor || opt.crop_w % factor)
        throw ConfigError("refiner crop not divisible by the downsample factor");

    if (opt.strategy != EnsembleStrategy::kGated && opt.strategy != EnsembleStrategy::kDirect)
        throw ConfigError("training supports the gated and direct fuse stages only");
    auto images =
        train_detail::preload(data, baseline.norm_mean, baseline.norm_std, factor);
    const int64_t full_h = images[0].norm_full.dim(1), full_w = images[0].norm_full.dim(2);
    if (opt.crop_h > full_h || opt.crop_w > full_w)
        throw ConfigError("refiner crop larger than the image");

    ModelBundle model;
    model.baseline_cfg = baseline.baseline_cfg;
    model.baseline.emplace(model.baseline_cfg);
    {
        // copy the frozen baseline weights
        StateMap<float> src, dst;
        baseline.baseline->state("b", src);
        model.baseline->state("b", dst);
        for (size_t i = 0; i < src.size(); ++i) *dst[i].second = *src[i].second;
    }
    model.norm_mean = baseline.norm_mean;
    model.norm_std = baseline.norm_std;
    model.downsample_factor = factor;
    model.alpha = opt.alpha;
    model.refiner_cfg = opt.arch;
    model.refiner.emplace(opt.arch);
    model.refiner->init_params(opt.train.seed);
    model.ensembler.emplace(opt.arch.num_classes, opt.ensembler_hidden);
    {
        Rng ens_rng(opt.train.seed ^ 0xE5E5B1E5ull);
        model.ensembler->init_params(ens_rng);
    }

    // only refiner + ensembler parameters are optimized
    std::vector<Parameter<float>*> params;
    model.refiner->params(params);
    model.ensembler->params(params);

    Rng rng(opt.train.seed ^ 0x5EF15E77ull);
    const int64_t steps_per_epoch =
        (int64_t(images.size()) + opt.train.batch_size - 1) / opt.train.batch_size;
    TrainConfig cfg = opt.train;
    cfg.total_steps = cfg.epochs * steps_per_epoch;

    const int64_t low_ch = opt.crop_h / factor, low_cw = opt.crop_w / factor;
    train_detail::DenseGridCache low_grids(low_ch, low_cw);

    int64_t step = 0, skipped = 0;
    const int64_t classes = opt.arch.num_classes;
    for (int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        auto order = train_detail::epoch_order(images.size(), rng);
        for (size_t at = 0; at < order.size(); at += size_t(cfg.batch_size)) {
            const int64_t bsz =
                std::min<int64_t>(cfg.batch_size, int64_t(order.size() - at));

            // per-sample crops and the frozen low-resolution pass
            std::vector<Tensor<float>> crops(static_cast<size_t>(bsz));
            std::vector<LabelMap> crop_lbls(static_cast<size_t>(bsz));
            MatX<float> low_feats(bsz * low_ch * low_cw, 3);
            for (int64_t b = 0; b < bsz; ++b) {
                const auto& img = images[order[at + size_t(b)]];
                const int64_t y0 =
                    opt.augment ? factor * rng.uniform_int(0, (full_h - opt.crop_h) / factor) : 0;
                const int64_t x0 =
                    opt.augment ? factor * rng.uniform_int(0, (full_w - opt.crop_w) / factor) : 0;
                const bool flip = opt.augment && rng.uniform() < 0.5;
                crops[size_t(b)] = train_detail::crop_image(img.norm_full, y0, x0, opt.crop_h,
                                                            opt.crop_w, flip);
                crop_lbls[size_t(b)] = train_detail::crop_labels(img.labels_full, y0, x0,
                                                                 opt.crop_h, opt.crop_w, flip);
                auto low = area_downsample(crops[size_t(b)], factor);
                const int64_t plane = low_ch * low_cw;
                for (int64_t p = 0; p < plane; ++p)
                    for (int64_t c = 0; c < 3; ++c)
                        low_feats(b * plane + p, c) = low[c * plane + p];
            }
            const auto& [low_coords, low_mgr] = low_grids.get(bsz);
            SparseTensor<float> low_x(low_coords, std::move(low_feats));
            RunCtx frozen_ctx{low_mgr.get(), false, false};
            auto low_logits = model.baseline->forward(low_x, frozen_ctx);

            // entropy selection per sample on the upsampled logits
            std::vector<Coord> sel_coords;
            std::vector<std::pair<int64_t, std::pair<int32_t, int32_t>>> sel_pixels;
            std::vector<Tensor<float>> y1_per_sample(static_cast<size_t>(bsz));
            for (int64_t b = 0; b < bsz; ++b) {
                Tensor<float> low_dense({classes, low_ch, low_cw});
                const int64_t plane = low_ch * low_cw;
                for (int64_t p = 0; p < plane; ++p)
                    for (int64_t c = 0; c < classes; ++c)
                        low_dense[c * plane + p] = low_logits.feats(b * plane + p, c);
                y1_per_sample[size_t(b)] = nearest_upsample(low_dense, factor);
                auto mask = select_entropy(entropy_map(y1_per_sample[size_t(b)]), opt.alpha);
                for (const auto& [y, x] : mask.selected) {
                    sel_coords.push_back({int32_t(b), y, x});
                    sel_pixels.push_back({b, {y, x}});
                }
            }
            // gather features, baseline rows and targets for the selection
            const int64_t n = int64_t(sel_coords.size());
            if (n == 0) {
                ++skipped;
                if (log) *log << "refiner step skipped (no pixels selected)\n";
                continue;
            }
            MatX<float> rgb_rows(n, 3), y1_rows(n, classes);
            std::vector<int32_t> targets(static_cast<size_t>(n));
            for (int64_t i = 0; i < n; ++i) {
                const auto [b, yx] = sel_pixels[size_t(i)];
                const auto [y, x] = yx;
                const Tensor<float>& y1 = y1_per_sample[size_t(b)];
                for (int64_t c = 0; c < 3; ++c) rgb_rows(i, c) = crops[size_t(b)].at(c, y, x);
                for (int64_t c = 0; c < classes; ++c) y1_rows(i, c) = y1.at(c, y, x);
                targets[size_t(i)] = crop_lbls[size_t(b)].at(y, x);
            }

            SparseTensor<float> pixels(make_coord_set(std::move(sel_coords), 1),
                                       std::move(rgb_rows));
            CoordinateManager mgr;
            RunCtx ctx{&mgr, true, true};
            auto y2 = model.refiner->forward(pixels, ctx);
            const bool gated = opt.strategy == EnsembleStrategy::kGated;
            MatX<float> fused =
                gated ? model.ensembler->forward(y1_rows, y2.feats, ctx) : y2.feats;
            auto lr = cross_entropy<float>(fused, targets);
            if (!std::isfinite(lr.loss)) throw TrainingError("refiner training diverged");
            if (lr.valid == 0) {
                ++skipped;
                if (log) *log << "refiner step skipped (all pixels ignored)\n";
                continue;
            }
            model.refiner->backward(gated ? model.ensembler->backward(lr.grad) : lr.grad);
            ++step;
            optimizer_step(params, cfg, step);
            if (stats) {
                stats->losses.push_back(lr.loss);
                stats->selected.push_back(n);
                stats->steps = step;
                stats->skipped = skipped;
            }
            if (log && (step % opt.log_every == 0 || step == cfg.total_steps))
                *log << "refiner step " << step << "/" << cfg.total_steps << " loss " << lr.loss
                     << " selected " << n << "\n";
            if (opt.early_stop_loss > 0 && lr.loss < opt.early_stop_loss) return model;
        }
    }
    if (stats) stats->skipped = skipped;
    if (log && skipped > 0) *log << "refiner skipped " << skipped << " empty batches\n";
    return model;
}

}  // namespace sparef
