#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>

#include "sparef/bench.hpp"
#include "sparef/experiment.hpp"

using namespace sparef;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& tag) {
        path = fs::temp_directory_path() / ("sparef_pipe_" + tag + "_" + std::to_string(::getpid()));
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string str() const { return path.string(); }
};

SynthSpec tiny_spec(uint64_t seed) {
    SynthSpec s;
    s.height = 64;
    s.width = 128;
    s.seed = seed;
    s.train_count = 10;
    s.val_count = 4;
    return s;
}

// quick small baseline used by several cases
ModelBundle quick_baseline(const Dataset& train, uint64_t seed, TrainStats* stats = nullptr,
                           double early_stop = -1.0) {
    BaselineTrainOptions opt;
    opt.arch.channels = {8, 16, 24};
    opt.arch.num_classes = 6;
    opt.train.seed = seed;
    opt.train.lr_init = 2e-3;
    opt.train.epochs = 150;
    opt.train.batch_size = 4;
    opt.crop_h = 32;
    opt.crop_w = 64;
    opt.early_stop_loss = early_stop;
    return train_baseline(train, opt, nullptr, stats);
}

}  // namespace

TEST_CASE("synthetic dataset is byte-identical for the same seed") {
    TempDir a("synth_a"), b("synth_b");
    SynthSpec spec = tiny_spec(7);
    spec.train_count = 3;
    spec.val_count = 2;
    synth_generate(spec, a.str());
    synth_generate(spec, b.str());
    for (const auto& entry : fs::recursive_directory_iterator(a.str())) {
        if (!entry.is_regular_file()) continue;
        const auto rel = fs::relative(entry.path(), a.path);
        const std::string fa = detail::slurp_file(entry.path().string());
        const std::string fb = detail::slurp_file((b.path / rel).string());
        CHECK(fa == fb);
    }
}

TEST_CASE("zero-shape spec yields background-only labels") {
    SynthSpec spec = tiny_spec(9);
    spec.blobs_min = spec.blobs_max = 0;
    spec.lines_min = spec.lines_max = 0;
    spec.squares_min = spec.squares_max = 0;
    auto s = synth_image(spec, 0);
    for (uint8_t l : s.labels.labels) CHECK(l == 0);
}

TEST_CASE("a 1-px line disappears under 2x downsampling with ideal color matching") {
    SynthSpec spec = tiny_spec(11);
    spec.blobs_min = spec.blobs_max = 0;
    spec.squares_min = spec.squares_max = 0;
    spec.lines_min = spec.lines_max = 1;
    spec.line_thickness_min = spec.line_thickness_max = 1;
    spec.noise_std = 0.0;
    auto s = synth_image(spec, 0);

    const auto pal = synth_detail::palette();
    auto classify_nearest = [&](double r, double g, double b) {
        int best = 0;
        double bd = 1e18;
        for (int c = 0; c < 6; ++c) {
            const double dr = r - pal[size_t(c)][0], dg = g - pal[size_t(c)][1],
                         db = b - pal[size_t(c)][2];
            const double d = dr * dr + dg * dg + db * db;
            if (d < bd) {
                bd = d;
                best = c;
            }
        }
        return uint8_t(best);
    };

    // ideal classifier at full resolution recovers the line near-perfectly
    int64_t line_px = 0, full_hit = 0;
    for (int64_t y = 0; y < spec.height; ++y)
        for (int64_t x = 0; x < spec.width; ++x) {
            if (s.labels.at(y, x) == 0) continue;
            ++line_px;
            if (classify_nearest(s.image.at(0, y, x), s.image.at(1, y, x),
                                 s.image.at(2, y, x)) == s.labels.at(y, x))
                ++full_hit;
        }
    REQUIRE(line_px > 0);
    CHECK(double(full_hit) / double(line_px) > 0.9);

    // downsample x2, classify, upsample: the blend lands on the confuser
    // class and the line's pixels are lost
    auto low = area_downsample(s.image, 2);
    LabelMap low_pred(spec.height / 2, spec.width / 2);
    for (int64_t y = 0; y < low_pred.height; ++y)
        for (int64_t x = 0; x < low_pred.width; ++x)
            low_pred.at(y, x) =
                classify_nearest(low.at(0, y, x), low.at(1, y, x), low.at(2, y, x));
    auto up_pred = nearest_upsample(low_pred, 2);
    int64_t low_hit = 0;
    for (int64_t y = 0; y < spec.height; ++y)
        for (int64_t x = 0; x < spec.width; ++x)
            if (s.labels.at(y, x) != 0 && up_pred.at(y, x) == s.labels.at(y, x)) ++low_hit;
    CHECK(double(low_hit) / double(line_px) < 0.5);
}

TEST_CASE("confusion matrix and miou") {
    // prediction == gt -> mIoU 1.0
    LabelMap gt(4, 4);
    for (size_t i = 0; i < gt.labels.size(); ++i) gt.labels[i] = uint8_t(i % 3);
    ConfusionMatrix cm(3);
    cm.add(gt, gt);
    CHECK(mean_iou(cm.class_ious()) == 1.0);

    // 2-class set, predict all 0, gt half/half: IoU [0.5, 0.0], mIoU 0.25
    LabelMap half_gt(2, 2), all0(2, 2, 0);
    half_gt.at(0, 0) = 0;
    half_gt.at(0, 1) = 0;
    half_gt.at(1, 0) = 1;
    half_gt.at(1, 1) = 1;
    ConfusionMatrix cm2(2);
    cm2.add(all0, half_gt);
    auto ious = cm2.class_ious();
    REQUIRE(ious.size() == 2);
    CHECK(ious[0].iou == 0.5);
    CHECK(ious[1].iou == 0.0);
    CHECK(mean_iou(ious) == 0.25);

    // brute-force oracle on random labelings
    Rng rng(13);
    LabelMap p(8, 8), g(8, 8);
    for (auto& v : p.labels) v = uint8_t(rng.uniform_index(4));
    for (auto& v : g.labels) v = uint8_t(rng.uniform_index(5));
    for (int i = 0; i < 5; ++i) g.labels[size_t(rng.uniform_index(64))] = LabelMap::kIgnoreLabel;
    ConfusionMatrix cm3(5);
    cm3.add(p, g);
    for (const auto& ci : cm3.class_ious()) {
        int64_t tp = 0, fp = 0, fn = 0;
        for (int64_t y = 0; y < 8; ++y)
            for (int64_t x = 0; x < 8; ++x) {
                if (g.at(y, x) == LabelMap::kIgnoreLabel) continue;
                const bool pc = p.at(y, x) == ci.cls, gc = g.at(y, x) == ci.cls;
                tp += pc && gc;
                fp += pc && !gc;
                fn += !pc && gc;
            }
        CHECK(ci.iou == doctest::Approx(double(tp) / double(tp + fp + fn)).epsilon(1e-12));
    }

    // all pixels ignored: empty class list, mean errors
    LabelMap ig(2, 2, LabelMap::kIgnoreLabel);
    ConfusionMatrix cm4(3);
    cm4.add(all0, ig);
    CHECK(cm4.class_ious().empty());
    CHECK_THROWS_AS(mean_iou(cm4.class_ious()), ArgumentError);
}

TEST_CASE("baseline memorizes a 10-image set and the trend is monotone") {
    TempDir dir("memo");
    // memorizable at low resolution: blobs only, mild noise
    SynthSpec spec = tiny_spec(21);
    spec.lines_min = spec.lines_max = 0;
    spec.squares_min = spec.squares_max = 0;
    spec.noise_std = 3.0;
    spec.blob_radius_min = 10;
    spec.blob_radius_max = 20;
    synth_generate(spec, dir.str());
    Dataset train = Dataset::load_dir(dir.str(), "train");

    TrainStats stats;
    ModelBundle model = quick_baseline(train, 33, &stats, 0.08);
    REQUIRE(stats.steps > 10);
    CHECK(stats.losses.back() < 0.1);

    // loss after ~100 steps is below the loss after ~10 steps (windowed)
    if (stats.steps >= 110) {
        auto window = [&](int64_t center) {
            double acc = 0;
            for (int64_t i = center - 5; i < center + 5; ++i) acc += stats.losses[size_t(i)];
            return acc / 10.0;
        };
        CHECK(window(100) < window(10));
    } else {
        CHECK(stats.losses.back() < stats.losses.front());
    }
}

TEST_CASE("refiner training is a memorization-capable, frozen-baseline pipeline") {
    TempDir dir("refine");
    SynthSpec spec = tiny_spec(23);
    spec.noise_std = 3.0;  // memorizable set
    synth_generate(spec, dir.str());
    Dataset train = Dataset::load_dir(dir.str(), "train");

    ModelBundle baseline = quick_baseline(train, 44, nullptr, 0.45);

    // frozen-parameter property: baseline logits identical before and after
    auto [rgb, gt] = train.load(0);
    auto before = refine_image(rgb, baseline, EnsembleStrategy::kDirect,
                               std::numeric_limits<double>::infinity());

    RefinerTrainOptions opt;
    opt.arch.channels = {16, 32, 64, 128};  // desk-scale refiner config
    opt.arch.num_classes = 6;
    opt.train.seed = 55;
    opt.train.lr_init = 1e-3;
    opt.train.epochs = 170;  // cap: 170 epochs x 3 steps > 500 steps
    opt.train.batch_size = 4;
    opt.alpha = 0.1;
    opt.crop_h = 32;
    opt.crop_w = 64;
    opt.early_stop_loss = 0.09;
    TrainStats stats;
    ModelBundle refined = train_refiner(train, baseline, opt, nullptr, &stats);

    CHECK(stats.losses.back() < 0.1);
    CHECK(stats.steps <= 500);  // memorizes within 500 steps

    auto after = refine_image(rgb, baseline, EnsembleStrategy::kDirect,
                              std::numeric_limits<double>::infinity());
    CHECK(before.baseline_labels == after.baseline_labels);

    // and the copy inside the refined bundle agrees bit-exactly
    auto copied = refine_image(rgb, refined, EnsembleStrategy::kDirect,
                               std::numeric_limits<double>::infinity());
    CHECK(copied.baseline_labels == before.baseline_labels);
}

TEST_CASE("training at alpha above ln C never steps the optimizer") {
    TempDir dir("nosel");
    SynthSpec spec = tiny_spec(29);
    spec.train_count = 4;
    synth_generate(spec, dir.str());
    Dataset train = Dataset::load_dir(dir.str(), "train");
    ModelBundle baseline = quick_baseline(train, 61, nullptr, 1.5);

    RefinerTrainOptions opt;
    opt.arch.channels = {8, 16};
    opt.arch.num_classes = 6;
    opt.train.seed = 62;
    opt.train.epochs = 3;
    opt.train.batch_size = 4;
    opt.alpha = std::log(6.0) + 1e-9;
    opt.crop_h = 32;
    opt.crop_w = 64;
    TrainStats stats;
    train_refiner(train, baseline, opt, nullptr, &stats);
    CHECK(stats.steps == 0);
    CHECK(stats.skipped == 3);
}

TEST_CASE("gated and direct training share the selection exactly") {
    TempDir dir("samesel");
    SynthSpec spec = tiny_spec(47);
    spec.train_count = 6;
    synth_generate(spec, dir.str());
    Dataset train = Dataset::load_dir(dir.str(), "train");
    ModelBundle baseline = quick_baseline(train, 71, nullptr, 0.7);

    RefinerTrainOptions opt;
    opt.arch.channels = {8, 16};
    opt.arch.num_classes = 6;
    opt.train.seed = 72;
    opt.train.epochs = 4;
    opt.train.batch_size = 4;
    opt.alpha = 0.5;
    opt.crop_h = 32;
    opt.crop_w = 64;

    TrainStats gated_stats, direct_stats;
    train_refiner(train, baseline, opt, nullptr, &gated_stats);
    RefinerTrainOptions dopt = opt;
    dopt.strategy = EnsembleStrategy::kDirect;
    train_refiner(train, baseline, dopt, nullptr, &direct_stats);
    REQUIRE(gated_stats.selected.size() == direct_stats.selected.size());
    CHECK(gated_stats.selected == direct_stats.selected);
}

TEST_CASE("alpha above ln C refines nothing") {
    TempDir dir("noop");
    SynthSpec spec = tiny_spec(31);
    spec.train_count = 4;
    synth_generate(spec, dir.str());
    Dataset train = Dataset::load_dir(dir.str(), "train");
    ModelBundle model = quick_baseline(train, 66, nullptr, 0.6);

    auto [rgb, gt] = train.load(0);
    auto out = refine_image(rgb, model, EnsembleStrategy::kDirect, std::log(6.0) + 1e-9);
    CHECK(out.mask.count() == 0);
    CHECK(out.labels == out.baseline_labels);
    CHECK(out.macs_extractor == 0);
}

TEST_CASE("refine_image rejects images not divisible by the factor") {
    TempDir dir("odd");
    SynthSpec spec = tiny_spec(37);
    spec.train_count = 2;
    synth_generate(spec, dir.str());
    Dataset train = Dataset::load_dir(dir.str(), "train");
    ModelBundle model = quick_baseline(train, 77, nullptr, 1.5);
    Tensor<uint8_t> odd({3, 63, 127}, uint8_t(0));
    CHECK_THROWS_AS(refine_image(odd, model, EnsembleStrategy::kDirect, 0.3), ArgumentError);
}

TEST_CASE("evaluate is deterministic and oracle bounds hold") {
    TempDir dir("eval");
    SynthSpec spec = tiny_spec(41);
    synth_generate(spec, dir.str());
    Dataset train = Dataset::load_dir(dir.str(), "train");
    Dataset val = Dataset::load_dir(dir.str(), "val");

    ModelBundle baseline = quick_baseline(train, 88, nullptr, 0.6);

    RefinerTrainOptions opt;
    opt.arch.channels = {8, 16, 32};
    opt.arch.num_classes = 6;
    opt.train.seed = 99;
    opt.train.lr_init = 1e-3;
    opt.train.epochs = 25;
    opt.train.batch_size = 4;
    opt.alpha = 0.1;
    opt.crop_h = 32;
    opt.crop_w = 64;
    ModelBundle model = train_refiner(train, baseline, opt);

    EvaluateOptions base_opt;
    base_opt.baseline_only = true;
    const EvalReport base_rep = evaluate(val, model, base_opt);

    EvaluateOptions oracle_opt;
    oracle_opt.strategy = EnsembleStrategy::kOracle;
    oracle_opt.alpha = 0.1;
    const EvalReport oracle_rep = evaluate(val, model, oracle_opt);

    // with the oracle ensembler, refined mIoU >= low-resolution baseline mIoU
    CHECK(oracle_rep.miou >= base_rep.miou);

    EvaluateOptions direct_opt;
    direct_opt.strategy = EnsembleStrategy::kDirect;
    direct_opt.alpha = 0.1;
    const EvalReport direct_rep = evaluate(val, model, direct_opt);
    CHECK(oracle_rep.miou >= direct_rep.miou);

    // refined prediction recovers thin-structure pixels the baseline missed
    {
        auto [rgb, gt] = val.load(0);
        auto refined = refine_image(rgb, model, EnsembleStrategy::kOracle, 0.1, &gt);
        int64_t base_hit = 0, refined_hit = 0, thin = 0;
        for (int64_t y = 0; y < gt.height; ++y)
            for (int64_t x = 0; x < gt.width; ++x) {
                const uint8_t g = gt.at(y, x);
                if (g != 1 && g != 3) continue;  // thin-structure classes
                ++thin;
                base_hit += refined.baseline_labels.at(y, x) == g;
                refined_hit += refined.labels.at(y, x) == g;
            }
        REQUIRE(thin > 0);
        CHECK(refined_hit > base_hit);
    }

    EvaluateOptions gated_opt;
    gated_opt.strategy = EnsembleStrategy::kGated;
    gated_opt.alpha = 0.1;
    const EvalReport g1 = evaluate(val, model, gated_opt);
    const EvalReport g2 = evaluate(val, model, gated_opt);
    CHECK(g1.to_json(false).dump() == g2.to_json(false).dump());

    // accounting consistency: totals decompose into the stage sums
    CHECK(g1.macs_total() ==
          g1.macs_baseline + g1.macs_selector + g1.macs_extractor + g1.macs_ensembler);
    CHECK(g1.macs_selector == 0);

    CHECK_THROWS_AS(evaluate(Dataset{}, model, gated_opt), ArgumentError);
}

TEST_CASE("bench conv reports macs consistent with the engine") {
    auto rep = bench_conv(32, 64, 8, 0.1, 5, 3, 1);
    CHECK(rep.sparse_macs > 0);
    CHECK(rep.dense_macs == dense_conv_macs(3, 8, 8, 32, 64));
    CHECK(double(rep.sparse_macs) <= rep.density_actual * double(rep.dense_macs) + 1e-9);
    CHECK(rep.sparse_ms > 0);
    CHECK(rep.dense_ms > 0);
}
