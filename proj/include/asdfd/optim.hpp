#pragma once

#include <cmath>
#include <vector>

#include "asdfd/tensor.hpp"

namespace asdfd {

// Adam moment buffers for one parameter tensor.
template <class S>
struct AdamState {
    std::vector<S> m;
    std::vector<S> v;
    long t = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    explicit AdamState(size_t n = 0) : m(n, S(0)), v(n, S(0)) {}
};

// One Adam update with bias correction. The gradient is left untouched; the
// caller decides when to clear it.
template <class S>
void adam_step(Tensor<S>& param, AdamState<S>& state, double lr) {
    if (!param.has_grad()) throw precondition_error("adam_step: parameter has no gradient");
    if (param.frozen()) throw precondition_error("adam_step: parameter is frozen");
    if (state.m.size() != param.numel()) {
        if (state.m.empty() && state.v.empty()) {
            state.m.assign(param.numel(), S(0));
            state.v.assign(param.numel(), S(0));
        } else {
            throw shape_error("adam_step: state shape mismatch");
        }
    }
    state.t += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
    S* p = param.data();
    const std::vector<S>& g = param.grad_view();
    for (size_t i = 0; i < param.numel(); ++i) {
        const double gi = static_cast<double>(g[i]);
        const double mi = state.beta1 * static_cast<double>(state.m[i]) + (1.0 - state.beta1) * gi;
        const double vi = state.beta2 * static_cast<double>(state.v[i]) + (1.0 - state.beta2) * gi * gi;
        state.m[i] = static_cast<S>(mi);
        state.v[i] = static_cast<S>(vi);
        const double mhat = mi / bc1;
        const double vhat = vi / bc2;
        p[i] = static_cast<S>(static_cast<double>(p[i]) - lr * mhat / (std::sqrt(vhat) + state.eps));
    }
}

// Convenience bundle for a list of parameters sharing one step counter.
template <class S>
class Adam {
public:
    explicit Adam(std::vector<Tensor<S>> params) : params_(std::move(params)) {
        states_.reserve(params_.size());
        for (const auto& p : params_) states_.emplace_back(p.numel());
    }

    void step(double lr) {
        for (size_t i = 0; i < params_.size(); ++i) adam_step(params_[i], states_[i], lr);
    }

    void zero_grad() {
        for (auto& p : params_) p.zero_grad();
    }

    std::vector<Tensor<S>>& params() { return params_; }

private:
    std::vector<Tensor<S>> params_;
    std::vector<AdamState<S>> states_;
};

enum class ScheduleMode { fixed, warmup_linear_decay };

struct LRSchedule {
    double base_lr = 1e-3;
    double warmup_proportion = 0.1;
    long total_steps = 0;
    ScheduleMode mode = ScheduleMode::fixed;

    static LRSchedule fixed(double lr) { return {lr, 0.0, 0, ScheduleMode::fixed}; }
    static LRSchedule warmup(double lr, double proportion, long total) {
        return {lr, proportion, total, ScheduleMode::warmup_linear_decay};
    }
};

// lr(step): fixed returns base_lr; warmup mode ramps 0 -> base_lr over the
// first warmup_proportion * total_steps, then decays linearly to 0. Clamped at
// the ends rather than erroring.
inline double schedule_lr(const LRSchedule& sched, long step) {
    if (sched.mode == ScheduleMode::fixed) return sched.base_lr;
    const double total = static_cast<double>(sched.total_steps);
    if (total <= 0.0) return sched.base_lr;
    const double warm = sched.warmup_proportion * total;
    const double s = std::min(std::max(static_cast<double>(step), 0.0), total);
    if (s < warm) return sched.base_lr * (warm > 0.0 ? s / warm : 1.0);
    if (total <= warm) return sched.base_lr;
    return sched.base_lr * (total - s) / (total - warm);
}

}  // namespace asdfd
