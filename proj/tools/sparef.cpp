// Command-line front end for the sparse refinement engine: dataset
// generation, training, inference, evaluation, benchmarking and the
// randomized verification suites.

#include <iostream>

#include "CLI11.hpp"

#include "sparef/bench.hpp"
#include "sparef/experiment.hpp"
#include "sparef/verify.hpp"

using namespace sparef;

namespace {

std::vector<double> parse_density_list(const std::string& csv) {
    std::vector<double> out;
    size_t pos = 0;
    while (pos < csv.size()) {
        size_t next = csv.find(',', pos);
        if (next == std::string::npos) next = csv.size();
        out.push_back(std::stod(csv.substr(pos, next - pos)));
        pos = next + 1;
    }
    if (out.empty()) throw ArgumentError("empty density list");
    return out;
}

Json load_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    try {
        return Json::parse(in);
    } catch (const std::exception& e) {
        throw FormatError(path + ": " + e.what());
    }
}

BaselineTrainOptions baseline_options_from_json(const Json& j) {
    BaselineTrainOptions opt;
    opt.arch.channels = {12, 24, 48};
    opt.arch.num_classes = 6;
    if (j.contains("arch")) opt.arch = refiner_config_from_json(j.at("arch"));
    if (j.contains("train")) {
        const Json& t = j.at("train");
        opt.train.lr_init = t.value("lr_init", opt.train.lr_init);
        opt.train.lr_floor = t.value("lr_floor", opt.train.lr_floor);
        opt.train.weight_decay = t.value("weight_decay", opt.train.weight_decay);
        opt.train.epochs = t.value("epochs", opt.train.epochs);
        opt.train.batch_size = t.value("batch_size", opt.train.batch_size);
        opt.train.seed = t.value("seed", opt.train.seed);
    }
    opt.crop_h = j.value("crop_h", opt.crop_h);
    opt.crop_w = j.value("crop_w", opt.crop_w);
    opt.downsample_factor = j.value("downsample_factor", opt.downsample_factor);
    opt.augment = j.value("augment", opt.augment);
    if (j.contains("normalization")) {
        for (size_t i = 0; i < 3; ++i) {
            opt.norm_mean[i] = j.at("normalization").at("mean").at(i).get<float>();
            opt.norm_std[i] = j.at("normalization").at("std").at(i).get<float>();
        }
    }
    return opt;
}

RefinerTrainOptions refiner_options_from_json(const Json& j) {
    RefinerTrainOptions opt;
    opt.arch.channels = {8, 16, 32, 64};
    opt.arch.num_classes = 6;
    if (j.contains("arch")) opt.arch = refiner_config_from_json(j.at("arch"));
    opt.ensembler_hidden = j.value("ensembler_hidden", opt.ensembler_hidden);
    if (j.contains("train")) {
        const Json& t = j.at("train");
        opt.train.lr_init = t.value("lr_init", opt.train.lr_init);
        opt.train.lr_floor = t.value("lr_floor", opt.train.lr_floor);
        opt.train.weight_decay = t.value("weight_decay", opt.train.weight_decay);
        opt.train.epochs = t.value("epochs", opt.train.epochs);
        opt.train.batch_size = t.value("batch_size", opt.train.batch_size);
        opt.train.seed = t.value("seed", opt.train.seed);
    }
    opt.crop_h = j.value("crop_h", opt.crop_h);
    opt.crop_w = j.value("crop_w", opt.crop_w);
    opt.augment = j.value("augment", opt.augment);
    return opt;
}

int run(int argc, char** argv) {
    CLI::App app{"sparse refinement engine: dense low-resolution predictions improved by "
                 "sparse high-resolution refinements"};
    app.require_subcommand(1);
    uint64_t seed = 0;
    app.add_option("--seed", seed, "override the seed of the invoked subcommand");

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "generate the synthetic dataset");
    std::string gen_spec, gen_out;
    gen->add_option("--spec", gen_spec, "dataset spec json (defaults to the desk-scale spec)");
    gen->add_option("--out", gen_out, "output directory")->required();

    // train-baseline
    auto* tb = app.add_subcommand("train-baseline", "train the dense low-resolution baseline");
    std::string tb_data, tb_out, tb_config;
    tb->add_option("--data", tb_data, "dataset directory")->required();
    tb->add_option("--out", tb_out, "output checkpoint path")->required();
    tb->add_option("--config", tb_config, "training config json");

    // train-refiner
    auto* tr = app.add_subcommand("train-refiner", "train the sparse refiner and ensembler");
    std::string tr_data, tr_baseline, tr_out, tr_config;
    double tr_alpha = 0.1;
    tr->add_option("--data", tr_data, "dataset directory")->required();
    tr->add_option("--baseline", tr_baseline, "frozen baseline checkpoint")->required();
    tr->add_option("--alpha", tr_alpha, "entropy threshold used during training")->required();
    tr->add_option("--out", tr_out, "output checkpoint path")->required();
    tr->add_option("--config", tr_config, "training config json");

    // refine
    auto* rf = app.add_subcommand("refine", "refine one image");
    std::string rf_image, rf_ckpt, rf_out, rf_gt, rf_strategy = "gated";
    double rf_alpha = -1.0;
    rf->add_option("--image", rf_image, "input PPM")->required();
    rf->add_option("--ckpt", rf_ckpt, "checkpoint")->required();
    rf->add_option("--ensemble", rf_strategy, "gated|direct|entropy|oracle");
    rf->add_option("--out", rf_out, "output label PGM")->required();
    rf->add_option("--alpha", rf_alpha, "entropy threshold (default: checkpoint)");
    rf->add_option("--gt", rf_gt, "ground-truth PGM (oracle strategy)");

    // select
    auto* sl = app.add_subcommand("select", "emit the entropy selection mask");
    std::string sl_image, sl_ckpt, sl_out, sl_gt;
    double sl_alpha = -1.0;
    sl->add_option("--image", sl_image, "input PPM")->required();
    sl->add_option("--ckpt", sl_ckpt, "checkpoint")->required();
    sl->add_option("--alpha", sl_alpha, "entropy threshold (default: checkpoint)");
    sl->add_option("--out", sl_out, "output mask PGM (255 = selected)")->required();
    sl->add_option("--gt", sl_gt, "ground-truth PGM for recall/precision");

    // eval
    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a dataset split");
    std::string ev_data, ev_ckpt, ev_split = "val", ev_strategy = "gated";
    double ev_alpha = -1.0;
    bool ev_timing = false, ev_baseline_only = false;
    ev->add_option("--data", ev_data, "dataset directory")->required();
    ev->add_option("--ckpt", ev_ckpt, "checkpoint")->required();
    ev->add_option("--split", ev_split, "train|val");
    ev->add_option("--ensemble", ev_strategy, "gated|direct|entropy|oracle");
    ev->add_option("--alpha", ev_alpha, "entropy threshold (default: checkpoint)");
    ev->add_flag("--timing", ev_timing, "include wall-clock per stage (non-deterministic)");
    ev->add_flag("--baseline-only", ev_baseline_only, "score the upsampled baseline without refinement");

    // bench
    auto* bn = app.add_subcommand("bench", "latency and MAC benchmark");
    std::string bn_ckpt, bn_density = "0.05,0.1,0.5,1.0", bn_resolution = "256x512";
    int64_t bn_iters = 500, bn_warmup = 100, bn_channels = 32;
    bn->add_option("--ckpt", bn_ckpt, "checkpoint")->required();
    bn->add_option("--density", bn_density, "comma-separated density sweep");
    bn->add_option("--resolution", bn_resolution, "HxW for the conv microbenchmark");
    bn->add_option("--iters", bn_iters, "timed iterations");
    bn->add_option("--warmup", bn_warmup, "warm-up iterations");
    bn->add_option("--channels", bn_channels, "channel count of the conv microbenchmark");

    // verify
    auto* vf = app.add_subcommand("verify", "randomized verification suites");
    std::string vf_suite;
    int64_t vf_cases = 0;
    vf->add_option("--suite", vf_suite, "conv|grad|coords")->required();
    vf->add_option("--cases", vf_cases, "override the case count");

    CLI11_PARSE(app, argc, argv);

    if (*gen) {
        SynthSpec spec;
        if (!gen_spec.empty()) spec = synth_spec_from_json(load_json_file(gen_spec));
        if (seed) spec.seed = seed;
        synth_generate(spec, gen_out);
        std::cout << Json{{"dataset", gen_out},
                          {"train", spec.train_count},
                          {"val", spec.val_count},
                          {"seed", spec.seed}}
                         .dump()
                  << "\n";
    } else if (*tb) {
        BaselineTrainOptions opt = baseline_options_from_json(
            tb_config.empty() ? Json::object() : load_json_file(tb_config));
        if (seed) opt.train.seed = seed;
        Dataset train = Dataset::load_dir(tb_data, "train");
        ModelBundle model = train_baseline(train, opt, &std::cout);
        save_model(model, tb_out);
        std::cout << Json{{"checkpoint", tb_out}}.dump() << "\n";
    } else if (*tr) {
        RefinerTrainOptions opt = refiner_options_from_json(
            tr_config.empty() ? Json::object() : load_json_file(tr_config));
        opt.alpha = tr_alpha;
        if (seed) opt.train.seed = seed;
        Dataset train = Dataset::load_dir(tr_data, "train");
        ModelBundle baseline = load_model(tr_baseline);
        ModelBundle model = train_refiner(train, baseline, opt, &std::cout);
        model.alpha = tr_alpha;
        save_model(model, tr_out);
        std::cout << Json{{"checkpoint", tr_out}}.dump() << "\n";
    } else if (*rf) {
        ModelBundle model = load_model(rf_ckpt);
        Tensor<uint8_t> rgb = read_ppm(rf_image);
        std::optional<LabelMap> gt;
        if (!rf_gt.empty()) gt = read_label_pgm(rf_gt);
        auto out = refine_image(rgb, model, parse_ensemble_strategy(rf_strategy),
                                rf_alpha >= 0 ? rf_alpha : model.alpha,
                                gt ? &*gt : nullptr);
        write_label_pgm(out.labels, rf_out);
        std::cout << Json{{"out", rf_out},
                          {"density", out.mask.density()},
                          {"macs",
                           Json{{"baseline", out.macs_baseline},
                                {"extractor", out.macs_extractor},
                                {"ensembler", out.macs_ensembler}}},
                          {"timing_ms",
                           Json{{"baseline", out.timing.baseline_ms},
                                {"selector", out.timing.selector_ms},
                                {"extractor", out.timing.extractor_ms},
                                {"ensembler", out.timing.ensembler_ms}}}}
                         .dump()
                  << "\n";
    } else if (*sl) {
        ModelBundle model = load_model(sl_ckpt);
        Tensor<uint8_t> rgb = read_ppm(sl_image);
        auto out = refine_image(rgb, model, EnsembleStrategy::kDirect,
                                sl_alpha >= 0 ? sl_alpha : model.alpha);
        Tensor<uint8_t> mask_img({out.mask.height, out.mask.width});
        for (size_t i = 0; i < out.mask.bits.size(); ++i)
            mask_img[int64_t(i)] = out.mask.bits[i] ? 255 : 0;
        write_pgm(mask_img, sl_out);
        Json metrics{{"out", sl_out}, {"density", out.mask.density()}};
        if (!sl_gt.empty()) {
            const LabelMap gt = read_label_pgm(sl_gt);
            const SelectorReport rep = selector_metrics(out.mask, out.baseline_labels, gt);
            metrics["recall"] = rep.recall;
            metrics["precision"] = rep.precision;
        }
        std::cout << metrics.dump() << "\n";
    } else if (*ev) {
        ModelBundle model = load_model(ev_ckpt);
        Dataset split = Dataset::load_dir(ev_data, ev_split);
        EvaluateOptions opt;
        opt.strategy = parse_ensemble_strategy(ev_strategy);
        opt.alpha = ev_alpha;
        opt.collect_timing = ev_timing;
        opt.baseline_only = ev_baseline_only;
        EvalReport rep = evaluate(split, model, opt);
        std::cout << rep.to_json(ev_timing).dump(2) << "\n";
    } else if (*bn) {
        ModelBundle model = load_model(bn_ckpt);
        const auto densities = parse_density_list(bn_density);
        const size_t xpos = bn_resolution.find('x');
        if (xpos == std::string::npos) throw ArgumentError("resolution must be HxW");
        const int64_t h = std::stoll(bn_resolution.substr(0, xpos));
        const int64_t w = std::stoll(bn_resolution.substr(xpos + 1));
        auto rep = bench_pipeline(model, h, w, densities, seed ? seed : 1234, bn_iters, bn_warmup,
                                  bn_channels, &std::cerr);
        std::cout << rep.to_json().dump(2) << "\n";
    } else if (*vf) {
        VerifyResult res;
        if (vf_suite == "conv") {
            res = verify_conv_equivalence<float>(vf_cases > 0 ? vf_cases : 200,
                                                 seed ? seed : 42, 1e-4);
        } else if (vf_suite == "grad") {
            res = verify_gradients(vf_cases > 0 ? vf_cases : 20, seed ? seed : 43, 1e-6);
        } else if (vf_suite == "coords") {
            res = verify_coord_roundtrip(vf_cases > 0 ? vf_cases : 50, seed ? seed : 44);
        } else {
            throw ArgumentError("unknown verify suite: " + vf_suite);
        }
        std::cout << Json{{"suite", vf_suite},
                          {"pass", res.pass},
                          {"cases", res.cases},
                          {"worst", res.worst},
                          {"detail", res.detail}}
                         .dump()
                  << "\n";
        return res.pass ? 0 : 1;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const Error& e) {
        std::cerr << Json{{"error", e.category()}, {"message", e.what()}}.dump() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << Json{{"error", "internal"}, {"message", e.what()}}.dump() << "\n";
        return 1;
    }
}
