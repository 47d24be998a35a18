#pragma once

#include <cmath>
#include <vector>

#include "sparef/layers.hpp"

namespace sparef {

struct TrainConfig {
    double lr_init = 3e-4;
    double lr_floor = 1e-6;
    double weight_decay = 0.05;
    int64_t epochs = 1;
    int64_t batch_size = 4;
    int64_t total_steps = 0;  // cosine horizon; trainers fill this in
    uint64_t seed = 1;

    void validate() const {
        if (lr_init <= 0 || lr_floor <= 0 || weight_decay <= 0 || epochs <= 0 || batch_size <= 0)
            throw ConfigError("train config fields must be positive");
    }
};

inline double cosine_lr(double lr_init, double lr_floor, int64_t t, int64_t total) {
    if (total <= 0) return lr_init;
    if (t > total) t = total;
    return lr_floor + 0.5 * (lr_init - lr_floor) * (1.0 + std::cos(M_PI * double(t) / double(total)));
}

/// Adaptive moments with decoupled weight decay. Gradients are zeroed after
/// the step; the decay term applies even when gradients are all zero.
template <class S>
void adamw_step(std::vector<Parameter<S>*>& params, double lr, double weight_decay,
                int64_t step_index, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8) {
    const double bc1 = 1.0 - std::pow(beta1, double(step_index));
    const double bc2 = 1.0 - std::pow(beta2, double(step_index));
    for (Parameter<S>* p : params) {
        p->ensure_grad();
        p->ensure_moments();
        p->m = S(beta1) * p->m + S(1.0 - beta1) * p->grad;
        p->v = (S(beta2) * p->v.array() + S(1.0 - beta2) * p->grad.array().square()).matrix();
        const MatX<S> mhat = p->m / S(bc1);
        const MatX<S> vhat = p->v / S(bc2);
        p->value -= ((S(lr) * mhat.array() / (vhat.array().sqrt() + S(eps))).matrix() +
                     S(lr * weight_decay) * p->value);
        p->zero_grad();
    }
}

/// One scheduled step: cosine-annealed learning rate at `step_index` (1-based)
/// over `config.total_steps`.
template <class S>
void optimizer_step(std::vector<Parameter<S>*>& params, const TrainConfig& config,
                    int64_t step_index) {
    const double lr =
        cosine_lr(config.lr_init, config.lr_floor, step_index, config.total_steps);
    adamw_step(params, lr, config.weight_decay, step_index);
}

}  // namespace sparef
