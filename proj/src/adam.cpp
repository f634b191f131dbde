#include "ritseg/adam.hpp"

#include <cmath>

namespace ritseg {

void adam_step(Tensor& param, const Tensor& grad, AdamState& state, const AdamConfig& cfg) {
    if (!param.same_dims(grad))
        throw ShapeError("adam_step: grad dims " + grad.dims_str() + " do not match param " + param.dims_str());
    if (!param.same_dims(state.m) || !param.same_dims(state.v))
        throw ShapeError("adam_step: state dims do not match param " + param.dims_str());

    state.t += 1;
    const double bc1 = 1.0 - std::pow(static_cast<double>(cfg.beta1), static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(static_cast<double>(cfg.beta2), static_cast<double>(state.t));

    float* p = param.data();
    const float* g = grad.data();
    float* m = state.m.data();
    float* v = state.v.data();
    const std::int64_t n = param.numel();
    for (std::int64_t i = 0; i < n; ++i) {
        m[i] = cfg.beta1 * m[i] + (1.0f - cfg.beta1) * g[i];
        v[i] = cfg.beta2 * v[i] + (1.0f - cfg.beta2) * g[i] * g[i];
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        p[i] -= static_cast<float>(cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps));
    }
}

} // namespace ritseg
