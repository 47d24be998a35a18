#pragma once

#include <chrono>
#include <functional>

#include "sparef/dense_reference.hpp"
#include "sparef/pipeline.hpp"

namespace sparef {

/// Mean wall-clock per call with warm-up iterations discarded; the loop is
/// strictly single-stream.
template <class Fn>
double bench_mean_ms(Fn&& fn, int64_t iters, int64_t warmup) {
    for (int64_t i = 0; i < warmup; ++i) fn();
    const auto t0 = timing::Clock::now();
    for (int64_t i = 0; i < iters; ++i) fn();
    return timing::ms_since(t0) / double(iters);
}

struct ConvBenchReport {
    double density_requested = 0;
    double density_actual = 0;
    double sparse_ms = 0;
    double dense_ms = 0;
    int64_t sparse_macs = 0;
    int64_t dense_macs = 0;
    double speedup() const { return sparse_ms > 0 ? dense_ms / sparse_ms : 0.0; }
};

/// One 3x3 submanifold convolution at the given density against the in-repo
/// dense reference (im2col + GEMM) at the same resolution and channel count.
/// The sparse side pays for kernel-map construction every iteration, the
/// dense side reuses its im2col scratch allocation.
inline ConvBenchReport bench_conv(int64_t h, int64_t w, int64_t channels, double density,
                                  uint64_t seed, int64_t iters, int64_t warmup) {
    Rng rng(seed);
    std::vector<uint8_t> bits(size_t(h * w));
    for (auto& b : bits) b = rng.uniform() < density ? 1 : 0;
    auto mask = SelectionMask::from_bits(h, w, std::move(bits));
    if (mask.count() == 0) throw ArgumentError("bench density selected no pixels");

    Tensor<float> dense({channels, h, w});
    for (int64_t i = 0; i < dense.numel(); ++i) dense[i] = float(rng.normal());
    auto x = dense_to_sparse(dense, mask);
    MatX<float> weights(9 * channels, channels);
    for (int64_t i = 0; i < weights.size(); ++i) weights.data()[i] = float(rng.normal() * 0.1);
    VecX<float> bias = VecX<float>::Zero(channels);

    ConvBenchReport rep;
    rep.density_requested = density;
    rep.density_actual = mask.density();
    {
        const auto km = build_submanifold_map(*x.coords, 3);
        rep.sparse_macs = sparse_conv_macs(km, channels, channels);
    }
    rep.dense_macs = dense_conv_macs(3, channels, channels, h, w);

    // both sides reuse steady-state buffers; per-call structure work (the
    // kernel map on the sparse side, the im2col fill on the dense side) is
    // inside the timed region
    volatile float sink = 0;
    ConvWorkspace<float> ws;
    MatX<float> out;
    rep.sparse_ms = bench_mean_ms(
        [&]() {
            const KernelMap km = build_submanifold_map(*x.coords, 3);
            conv_execute_into(km, x.feats, weights, &bias, x.rows(), out, &ws);
            sink = sink + out(0, 0);
        },
        iters, warmup);
    Im2colScratch<float> scratch;
    rep.dense_ms = bench_mean_ms(
        [&]() {
            auto y = dense_conv_im2col(dense, weights, bias, 3, &scratch);
            sink = sink + y[0];
        },
        iters, warmup);
    return rep;
}

struct PipelineBenchRow {
    double density = 0;
    double extractor_ms = 0;
    int64_t extractor_macs = 0;
    ConvBenchReport conv;
};

struct PipelineBenchReport {
    StageTiming stage_ms;  // one full refine_image, averaged
    double pipeline_density = 0;
    std::vector<PipelineBenchRow> rows;

    Json to_json() const {
        Json rows_json = Json::array();
        for (const auto& r : rows)
            rows_json.push_back(
                Json{{"density", r.density},
                     {"extractor_ms", r.extractor_ms},
                     {"extractor_macs", r.extractor_macs},
                     {"conv3x3", Json{{"density", r.conv.density_actual},
                                      {"sparse_ms", r.conv.sparse_ms},
                                      {"dense_ms", r.conv.dense_ms},
                                      {"sparse_macs", r.conv.sparse_macs},
                                      {"dense_macs", r.conv.dense_macs},
                                      {"speedup", r.conv.speedup()}}}});
        return Json{{"stage_ms", Json{{"baseline", stage_ms.baseline_ms},
                                      {"selector", stage_ms.selector_ms},
                                      {"extractor", stage_ms.extractor_ms},
                                      {"ensembler", stage_ms.ensembler_ms}}},
                    {"pipeline_density", pipeline_density},
                    {"density_sweep", rows_json}};
    }
};

/// Per-stage latency of the full pipeline on a synthetic image (batch norms
/// folded), plus an extractor/conv sweep over the requested densities.
inline PipelineBenchReport bench_pipeline(ModelBundle& model, int64_t h, int64_t w,
                                          const std::vector<double>& densities, uint64_t seed,
                                          int64_t iters, int64_t warmup, int64_t conv_channels = 32,
                                          std::ostream* log = nullptr) {
    if (model.refiner) model.refiner->fold_batch_norms();
    model.baseline->fold_batch_norms();

    Rng rng(seed);
    Tensor<uint8_t> rgb({3, h, w});
    for (int64_t i = 0; i < rgb.numel(); ++i) rgb[i] = uint8_t(rng.uniform_index(256));

    PipelineBenchReport rep;
    const int64_t pipeline_iters = std::max<int64_t>(1, iters / 50);
    const int64_t pipeline_warmup = std::max<int64_t>(1, warmup / 50);
    StageTiming acc;
    double density_acc = 0;
    int64_t runs = 0;
    bench_mean_ms(
        [&]() {
            auto out = refine_image(rgb, model, EnsembleStrategy::kDirect, model.alpha);
            acc.baseline_ms += out.timing.baseline_ms;
            acc.selector_ms += out.timing.selector_ms;
            acc.extractor_ms += out.timing.extractor_ms;
            acc.ensembler_ms += out.timing.ensembler_ms;
            density_acc += out.mask.density();
            ++runs;
        },
        pipeline_iters, pipeline_warmup);
    rep.stage_ms = {acc.baseline_ms / runs, acc.selector_ms / runs, acc.extractor_ms / runs,
                    acc.ensembler_ms / runs};
    rep.pipeline_density = density_acc / double(runs);

    for (double d : densities) {
        PipelineBenchRow row;
        row.density = d;
        if (model.refiner) {
            std::vector<uint8_t> bits(size_t(h * w));
            for (auto& b : bits) b = rng.uniform() < d ? 1 : 0;
            auto mask = SelectionMask::from_bits(h, w, std::move(bits));
            const Tensor<float> norm = normalize_image(rgb, model.norm_mean, model.norm_std);
            auto pixels = dense_to_sparse(norm, mask);
            const int64_t extractor_iters = std::max<int64_t>(1, iters / 50);
            row.extractor_ms = bench_mean_ms(
                [&]() {
                    CoordinateManager mgr;
                    RunCtx ctx{&mgr, false, false, &row.extractor_macs};
                    row.extractor_macs = 0;
                    model.refiner->forward(pixels, ctx);
                },
                extractor_iters, std::max<int64_t>(1, warmup / 50));
        }
        row.conv = bench_conv(h, w, conv_channels, d, seed ^ uint64_t(d * 1e6), iters, warmup);
        if (log)
            *log << "density " << d << ": conv sparse " << row.conv.sparse_ms << " ms, dense "
                 << row.conv.dense_ms << " ms\n";
        rep.rows.push_back(row);
    }
    return rep;
}

}  // namespace sparef
