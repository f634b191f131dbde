#pragma once

#include <vector>

#include "ritseg/tape.hpp"
#include "ritseg/tensor.hpp"

namespace ritseg {

enum class Mode { train, infer };

/// Batch-norm running statistics, owned by the model.
struct BnRunning {
    Tensor mean;
    Tensor var;
    bool ready = false; // set by the first train-mode update or a checkpoint load
};

namespace ops {

// ---- forward kernels (pure; no tape) ----

/// 2-D convolution, stride 1, odd kernel, "same" zero padding.
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias);

Tensor leaky_relu(const Tensor& x, float slope);

struct BnSaved {
    std::vector<double> mean;
    std::vector<double> invstd;
};

/// Normalizes with per-channel batch statistics over N,H,W and updates the
/// running stats in place. `saved` (optional) receives the batch stats for
/// the backward pass.
Tensor batch_norm_train(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                        BnRunning& running, float momentum, float eps, BnSaved* saved);

/// Normalizes with the frozen running statistics.
Tensor batch_norm_infer(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                        const BnRunning& running, float eps);

Tensor avg_pool_2x2(const Tensor& x);
Tensor upsample_nearest_2x(const Tensor& x);
Tensor concat_channels(const std::vector<const Tensor*>& parts);
Tensor softmax_channels(const Tensor& x);

// ---- backward kernels (exposed for tests) ----

void conv2d_backward(const Tensor& x, const Tensor& weight, const Tensor& gout,
                     Tensor* gx, Tensor* gweight, Tensor* gbias);
Tensor leaky_relu_backward(const Tensor& x, float slope, const Tensor& gout);
void batch_norm_train_backward(const Tensor& x, const Tensor& gamma, const BnSaved& saved,
                               const Tensor& gout, Tensor* gx, Tensor* ggamma, Tensor* gbeta);
Tensor avg_pool_2x2_backward(const Tensor& gout);
Tensor upsample_nearest_2x_backward(const Tensor& gout);
Tensor softmax_channels_backward(const Tensor& y, const Tensor& gout);

// ---- tape ops ----

ValueId conv2d(Tape& tape, ValueId x, ValueId weight, ValueId bias);
ValueId leaky_relu(Tape& tape, ValueId x, float slope);
ValueId batch_norm(Tape& tape, ValueId x, ValueId gamma, ValueId beta,
                   BnRunning& running, Mode mode, float momentum, float eps);
ValueId avg_pool_2x2(Tape& tape, ValueId x);
ValueId upsample_nearest_2x(Tape& tape, ValueId x);
ValueId concat_channels(Tape& tape, const std::vector<ValueId>& parts);
ValueId softmax_channels(Tape& tape, ValueId x);

/// Elementwise a + b.
ValueId add(Tape& tape, ValueId a, ValueId b);
/// x * k.
ValueId scale(Tape& tape, ValueId x, float k);
/// Scalar sum of all elements (f64 accumulation).
ValueId sum_all(Tape& tape, ValueId x);
/// Scalar sum(w * x) with a fixed weight tensor (f64 accumulation).
ValueId weighted_sum(Tape& tape, ValueId x, const Tensor& w);

} // namespace ops
} // namespace ritseg
