#pragma once

#include <functional>
#include <vector>

#include "sparef/layers.hpp"

namespace sparef {

struct GradCheckReport {
    double max_rel_err = 0.0;
    int64_t checked = 0;
    bool passed(double tolerance) const { return checked > 0 && max_rel_err < tolerance; }
};

/// A tensor whose entries take part in a finite-difference check: perturb
/// `value`, compare the numeric slope against `grad`.
struct GradSlot {
    MatX<double>* value;
    const MatX<double>* grad;
};

/// Central-difference verification of analytic gradients, f64 only.
///
/// `loss_forward` evaluates the scalar loss without side effects;
/// `loss_backward` runs forward + backward once and fills every slot's grad.
/// Relative error uses max(|analytic|, |numeric|, 1e-3) as denominator so
/// near-zero gradients are compared absolutely at a tight scale (the
/// floor sits three decades above finite-difference roundoff).
///
/// A probed coordinate whose stencil straddles a ReLU kink makes the central
/// difference itself invalid (the estimate jumps O(1) with the step size
/// while smooth truncation error shrinks as h^2). Each probe is therefore
/// evaluated at h and h/2: disagreement between the two numeric estimates
/// marks a nonsmooth stencil and the coordinate is resampled. A wrong
/// analytic gradient is unaffected by this filter, since both numeric
/// estimates then agree with each other and disagree with the gradient.
inline GradCheckReport grad_check(std::vector<GradSlot> slots,
                                  const std::function<double()>& loss_forward,
                                  const std::function<void()>& loss_backward, Rng& rng,
                                  int64_t min_samples = 50, double h = 1e-5) {
    loss_backward();

    int64_t total = 0;
    for (const GradSlot& s : slots) total += s.value->size();
    if (total == 0) throw ArgumentError("grad_check with no parameters");
    const int64_t samples = std::min<int64_t>(std::max<int64_t>(min_samples, 50), total);

    GradCheckReport report;
    int64_t attempts = 0;
    const int64_t max_attempts = samples * 10;
    while (report.checked < samples && attempts < max_attempts) {
        ++attempts;
        // pick a random coordinate across the concatenation of all slots
        int64_t pick = int64_t(rng.uniform_index(uint64_t(total)));
        size_t si = 0;
        while (pick >= slots[si].value->size()) {
            pick -= slots[si].value->size();
            ++si;
        }
        double* cell = slots[si].value->data() + pick;
        const double analytic = slots[si].grad->data()[pick];

        const double saved = *cell;
        const auto central = [&](double step) {
            *cell = saved + step;
            const double fp = loss_forward();
            *cell = saved - step;
            const double fm = loss_forward();
            *cell = saved;
            if (!std::isfinite(fp) || !std::isfinite(fm))
                throw NumericError("non-finite loss during finite differences");
            return (fp - fm) / (2.0 * step);
        };
        const double n_h = central(h);
        const double n_h2 = central(h / 2.0);
        const double scale = std::max({std::abs(n_h), std::abs(n_h2), std::abs(analytic), 1e-4});
        if (std::abs(n_h - n_h2) > 1e-4 * scale) continue;  // kink inside the stencil

        const double denom = std::max({std::abs(analytic), std::abs(n_h), 1e-3});
        const double rel = std::abs(analytic - n_h) / denom;
        report.max_rel_err = std::max(report.max_rel_err, rel);
        ++report.checked;
    }
    if (report.checked < samples)
        throw NumericError("grad_check could not find enough smooth coordinates");
    return report;
}

template <class S>
std::vector<GradSlot> slots_of(std::vector<Parameter<S>*> params) {
    static_assert(std::is_same_v<S, double>, "finite differences need f64 headroom");
    std::vector<GradSlot> slots;
    slots.reserve(params.size());
    for (auto* p : params) slots.push_back({&p->value, &p->grad});
    return slots;
}

}  // namespace sparef
