#pragma once

#include <chrono>
#include <filesystem>

#include "sparef/dense_ops.hpp"
#include "sparef/image_io.hpp"
#include "sparef/eval.hpp"
#include "sparef/model.hpp"
#include "sparef/selector.hpp"

namespace sparef {

struct Dataset {
    std::vector<std::string> image_paths;
    std::vector<std::string> label_paths;

    size_t size() const { return image_paths.size(); }

    static Dataset load_dir(const std::string& root, const std::string& split) {
        namespace fs = std::filesystem;
        const fs::path dir = fs::path(root) / split;
        if (!fs::is_directory(dir)) throw IoError("no such dataset split: " + dir.string());
        std::vector<std::string> images;
        for (const auto& e : fs::directory_iterator(dir)) {
            const std::string name = e.path().filename().string();
            if (name.starts_with("img_") && name.ends_with(".ppm"))
                images.push_back(e.path().string());
        }
        std::sort(images.begin(), images.end());
        Dataset ds;
        for (const auto& img : images) {
            std::string lbl = img;
            const size_t pos = lbl.rfind("img_");
            lbl.replace(pos, 4, "lbl_");
            lbl.replace(lbl.size() - 4, 4, ".pgm");
            if (!fs::exists(lbl)) throw IoError("missing label file: " + lbl);
            ds.image_paths.push_back(img);
            ds.label_paths.push_back(lbl);
        }
        if (ds.image_paths.empty()) throw ArgumentError("empty dataset split: " + dir.string());
        return ds;
    }

    std::pair<Tensor<uint8_t>, LabelMap> load(size_t i) const {
        return {read_ppm(image_paths[i]), read_label_pgm(label_paths[i])};
    }
};

namespace timing {
using Clock = std::chrono::steady_clock;
inline double ms_since(Clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}
}  // namespace timing

/// Dense low-resolution pass: downsample, run the baseline on a fully active
/// grid, return low-res logits as a CxHxW tensor.
inline Tensor<float> baseline_lowres_logits(ModelBundle& model, const Tensor<float>& norm_full,
                                            CoordinateManager& mgr, int64_t* macs) {
    const Tensor<float> low = area_downsample(norm_full, model.downsample_factor);
    const int64_t h = low.dim(1), w = low.dim(2);
    auto x = dense_to_sparse(low, SelectionMask::full(h, w));
    RunCtx ctx{&mgr, false, false, macs};
    auto logits = model.baseline->forward(x, ctx);
    return sparse_to_dense(logits, h, w);
}

struct RefineOutcome {
    LabelMap labels;           // final full-resolution prediction
    LabelMap baseline_labels;  // nearest-upsampled baseline argmax
    SelectionMask mask;
    int64_t macs_baseline = 0;
    int64_t macs_extractor = 0;
    int64_t macs_ensembler = 0;
    StageTiming timing;
};

/// The full inference pipeline on one image: dense low-resolution
/// prediction, nearest-neighbor upsampling, entropy selection, sparse
/// refinement of the selected pixels, ensembling, scatter.
inline RefineOutcome refine_image(const Tensor<uint8_t>& rgb, ModelBundle& model,
                                  EnsembleStrategy strategy, double alpha,
                                  const LabelMap* gt = nullptr) {
    if (rgb.ndim() != 3 || rgb.dim(0) != 3) throw ShapeError("refine_image expects a 3xHxW image");
    const int64_t h = rgb.dim(1), w = rgb.dim(2);
    if (h % model.downsample_factor || w % model.downsample_factor)
        throw ArgumentError("image dims not divisible by the downsample factor");
    if (strategy == EnsembleStrategy::kOracle && !gt)
        throw ArgumentError("oracle ensembling needs ground truth");

    RefineOutcome out;
    const Tensor<float> norm = normalize_image(rgb, model.norm_mean, model.norm_std);

    auto t0 = timing::Clock::now();
    CoordinateManager base_mgr;
    const Tensor<float> low_logits =
        baseline_lowres_logits(model, norm, base_mgr, &out.macs_baseline);
    const Tensor<float> y1_full = nearest_upsample(low_logits, model.downsample_factor);
    out.baseline_labels = argmax_channels(y1_full);
    out.timing.baseline_ms = timing::ms_since(t0);

    t0 = timing::Clock::now();
    const Tensor<float> entropy = entropy_map(y1_full);
    out.mask = select_entropy(entropy, alpha);
    out.timing.selector_ms = timing::ms_since(t0);

    out.labels = out.baseline_labels;
    if (out.mask.count() == 0) return out;  // nothing to refine

    MatX<float> fused;
    if (model.has_refiner()) {
        t0 = timing::Clock::now();
        auto pixels = dense_to_sparse(norm, out.mask);
        CoordinateManager mgr;
        RunCtx ctx{&mgr, false, false, &out.macs_extractor};
        auto y2 = model.refiner->forward(pixels, ctx);
        out.timing.extractor_ms = timing::ms_since(t0);

        t0 = timing::Clock::now();
        MatX<float> y1_rows(out.mask.count(), y1_full.dim(0));
        for (int64_t i = 0; i < out.mask.count(); ++i) {
            const auto [y, x] = out.mask.selected[size_t(i)];
            for (int64_t c = 0; c < y1_full.dim(0); ++c) y1_rows(i, c) = y1_full.at(c, y, x);
        }
        switch (strategy) {
            case EnsembleStrategy::kGated: {
                if (!model.ensembler) throw StateError("checkpoint has no trained ensembler");
                RunCtx ectx{nullptr, false, false, &out.macs_ensembler};
                fused = model.ensembler->forward(y1_rows, y2.feats, ectx);
                break;
            }
            case EnsembleStrategy::kDirect:
                fused = ensemble_direct(y1_rows, y2.feats);
                break;
            case EnsembleStrategy::kEntropy:
                fused = ensemble_entropy(y1_rows, y2.feats);
                break;
            case EnsembleStrategy::kOracle: {
                std::vector<int32_t> targets(size_t(out.mask.count()));
                for (int64_t i = 0; i < out.mask.count(); ++i) {
                    const auto [y, x] = out.mask.selected[size_t(i)];
                    targets[size_t(i)] = gt->at(y, x);
                }
                fused = ensemble_oracle(y1_rows, y2.feats, targets);
                break;
            }
        }
        out.timing.ensembler_ms = timing::ms_since(t0);
        out.labels = scatter_refinements(out.baseline_labels, out.mask, fused);
    }
    return out;
}

struct EvaluateOptions {
    EnsembleStrategy strategy = EnsembleStrategy::kGated;
    double alpha = -1.0;  // < 0: use the checkpoint default
    bool collect_timing = false;
    bool baseline_only = false;  // skip refinement, score the upsampled baseline
    uint64_t random_baseline_seed = 0;  // when nonzero, also score a random
                                        // selector at matched density
    double random_recall = 0.0;         // filled when the above is set
};

/// Whole-split evaluation: accumulated confusion matrix, selector quality
/// against the baseline's error map, MAC totals.
inline EvalReport evaluate(const Dataset& split, ModelBundle& model, EvaluateOptions& opt) {
    if (split.size() == 0) throw ArgumentError("evaluate on an empty split");
    const double alpha = opt.alpha >= 0 ? opt.alpha : model.alpha;
    ConfusionMatrix cm(model.baseline_cfg.num_classes);
    EvalReport rep;
    int64_t selected = 0, total_px = 0, errors = 0, hit = 0, random_hit = 0;

    for (size_t i = 0; i < split.size(); ++i) {
        auto [rgb, gt] = split.load(i);
        const double a = opt.baseline_only ? std::numeric_limits<double>::infinity() : alpha;
        RefineOutcome out =
            refine_image(rgb, model, opt.strategy, a,
                         opt.strategy == EnsembleStrategy::kOracle ? &gt : nullptr);
        cm.add(out.labels, gt);
        rep.macs_baseline += out.macs_baseline;
        rep.macs_extractor += out.macs_extractor;
        rep.macs_ensembler += out.macs_ensembler;
        if (opt.collect_timing) {
            rep.timing.baseline_ms += out.timing.baseline_ms;
            rep.timing.selector_ms += out.timing.selector_ms;
            rep.timing.extractor_ms += out.timing.extractor_ms;
            rep.timing.ensembler_ms += out.timing.ensembler_ms;
            rep.has_timing = true;
        }
        selected += out.mask.count();
        total_px += out.mask.height * out.mask.width;
        // micro-aggregated selector quality over the whole split
        for (int64_t y = 0; y < gt.height; ++y)
            for (int64_t x = 0; x < gt.width; ++x) {
                if (gt.at(y, x) == LabelMap::kIgnoreLabel) continue;
                if (out.baseline_labels.at(y, x) != gt.at(y, x)) {
                    ++errors;
                    if (out.mask.test(y, x)) ++hit;
                }
            }
        if (opt.random_baseline_seed != 0) {
            auto rnd = select_random(gt.height, gt.width, out.mask.density(),
                                     opt.random_baseline_seed + i);
            for (int64_t y = 0; y < gt.height; ++y)
                for (int64_t x = 0; x < gt.width; ++x)
                    if (gt.at(y, x) != LabelMap::kIgnoreLabel &&
                        out.baseline_labels.at(y, x) != gt.at(y, x) && rnd.test(y, x))
                        ++random_hit;
        }
        ++rep.images;
    }
    rep.per_class = cm.class_ious();
    if (!rep.per_class.empty()) rep.miou = mean_iou(rep.per_class);
    rep.density = total_px > 0 ? double(selected) / double(total_px) : 0.0;
    rep.recall = errors > 0 ? double(hit) / double(errors) : 0.0;
    rep.precision = selected > 0 ? double(hit) / double(selected) : 0.0;
    if (opt.random_baseline_seed != 0)
        opt.random_recall = errors > 0 ? double(random_hit) / double(errors) : 0.0;

    // reference: the baseline architecture run densely at full resolution
    {
        auto [rgb, gt] = split.load(0);
        (void)gt;
        const Tensor<float> norm = normalize_image(rgb, model.norm_mean, model.norm_std);
        auto x = dense_to_sparse(norm, SelectionMask::full(rgb.dim(1), rgb.dim(2)));
        CoordinateManager mgr;
        int64_t macs = 0;
        RunCtx ctx{&mgr, false, false, &macs};
        model.baseline->forward(x, ctx);
        rep.macs_dense_baseline_fullres = macs;
    }
    return rep;
}

}  // namespace sparef
