#pragma once

#include <cstdint>
#include <vector>

#include "ritseg/tensor.hpp"

namespace ritseg {

struct AdamConfig {
    float lr = 1e-3f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps = 1e-8f;
};

/// Per-parameter Adam moments. t increases by exactly 1 per step.
struct AdamState {
    Tensor m;
    Tensor v;
    std::int64_t t = 0;

    static AdamState for_param(const Tensor& param) {
        AdamState s;
        s.m = Tensor(param.dims());
        s.v = Tensor(param.dims());
        return s;
    }
};

/// One bias-corrected Adam update: p <- p - lr * m_hat / (sqrt(v_hat) + eps).
void adam_step(Tensor& param, const Tensor& grad, AdamState& state, const AdamConfig& cfg);

} // namespace ritseg
