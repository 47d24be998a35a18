#pragma once

#include <optional>

#include "sparef/checkpoint.hpp"
#include "sparef/ensembler.hpp"
#include "sparef/refiner.hpp"

namespace sparef {

/// Everything a refinement run needs: the frozen dense baseline, optionally
/// the trained sparse refiner + gated ensembler, normalization constants and
/// the default entropy threshold.
struct ModelBundle {
    RefinerConfig baseline_cfg;
    std::optional<RefinerNet<float>> baseline;
    std::optional<RefinerConfig> refiner_cfg;
    std::optional<RefinerNet<float>> refiner;
    std::optional<GatedEnsembler<float>> ensembler;
    std::array<float, 3> norm_mean{0.5f, 0.5f, 0.5f};
    std::array<float, 3> norm_std{0.25f, 0.25f, 0.25f};
    double alpha = 0.3;
    int64_t downsample_factor = 2;

    bool has_refiner() const { return refiner.has_value(); }

    Checkpoint to_checkpoint() {
        Checkpoint ckpt;
        ckpt.config["format"] = "sparse-refine-checkpoint";
        ckpt.config["baseline"] = refiner_config_to_json(baseline_cfg);
        if (refiner_cfg) {
            ckpt.config["refiner"] = refiner_config_to_json(*refiner_cfg);
            ckpt.config["ensembler"] =
                Json{{"num_classes", ensembler->num_classes()}, {"hidden", ensembler->hidden()}};
        }
        ckpt.config["normalization"] =
            Json{{"mean", norm_mean}, {"std", norm_std}};
        ckpt.config["alpha"] = alpha;
        ckpt.config["downsample_factor"] = downsample_factor;

        StateMap<float> st;
        baseline->state("baseline", st);
        if (refiner) refiner->state("refiner", st);
        if (ensembler) ensembler->state("ensembler", st);
        checkpoint_put_state(ckpt, st);
        return ckpt;
    }

    static ModelBundle from_checkpoint(const Checkpoint& ckpt) {
        ModelBundle m;
        if (ckpt.config.value("format", "") != "sparse-refine-checkpoint")
            throw CheckpointError("not a sparse-refine checkpoint");
        m.baseline_cfg = refiner_config_from_json(ckpt.config.at("baseline"));
        m.baseline.emplace(m.baseline_cfg);
        StateMap<float> st;
        m.baseline->state("baseline", st);
        if (ckpt.config.contains("refiner") && !ckpt.config.at("refiner").is_null()) {
            m.refiner_cfg = refiner_config_from_json(ckpt.config.at("refiner"));
            m.refiner.emplace(*m.refiner_cfg);
            m.refiner->state("refiner", st);
            const auto& ej = ckpt.config.at("ensembler");
            m.ensembler.emplace(ej.at("num_classes").get<int64_t>(),
                                ej.at("hidden").get<int64_t>());
            m.ensembler->state("ensembler", st);
        }
        const auto& nj = ckpt.config.at("normalization");
        for (size_t i = 0; i < 3; ++i) {
            m.norm_mean[i] = nj.at("mean").at(i).get<float>();
            m.norm_std[i] = nj.at("std").at(i).get<float>();
        }
        m.alpha = ckpt.config.value("alpha", 0.3);
        m.downsample_factor = ckpt.config.value("downsample_factor", int64_t(2));
        if (st.size() != ckpt.tensors.size())
            throw CheckpointError("checkpoint tensor count does not match the architecture");
        checkpoint_get_state(ckpt, st);
        return m;
    }
};

inline ModelBundle load_model(const std::string& path) {
    return ModelBundle::from_checkpoint(checkpoint_load(path));
}

inline void save_model(ModelBundle& model, const std::string& path) {
    Checkpoint ckpt = model.to_checkpoint();
    checkpoint_save(ckpt, path);
}

}  // namespace sparef
