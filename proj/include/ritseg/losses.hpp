#pragma once

#include <vector>

#include "ritseg/image.hpp"
#include "ritseg/tape.hpp"
#include "ritseg/tensor.hpp"

namespace ritseg {

/// lambda1/lambda2 weight the boundary-masked cross entropy; lambda3 and
/// lambda4 split the remaining unit between dice and surface terms.
struct LossWeights {
    float lambda1 = 1.0f;
    float lambda2 = 20.0f;
    float lambda3 = 1.0f;
    float lambda4 = 0.0f;
};

struct ScheduleConfig {
    int ramp_epochs = 125;
    /// Keeps alpha pinned at 1 after the ramp. Switching this off restores
    /// the literal published rule, which resets alpha to 0 from epoch 125 on.
    bool clamp_after_ramp = true;
};

/// lambda1=1, lambda2=20, lambda3=1-alpha, lambda4=alpha with
/// alpha = epoch / ramp.
LossWeights schedule(int epoch, const ScheduleConfig& config = {});

/// Batch of label maps, contiguous NxHxW class ids.
struct LabelBatch {
    int n = 0;
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> ids;

    static LabelBatch from(const std::vector<const LabelMap*>& maps);
    std::uint8_t at(int i, int r, int c) const {
        return ids[(static_cast<std::size_t>(i) * height + r) * width + c];
    }
};

constexpr float kProbFloor = 1e-7f;
constexpr float kGdlEps = 1e-5f;

/// CE_i = -log p_i[true class], probabilities clamped to [1e-7, 1].
/// Returns an NxHxW map.
Tensor per_pixel_cross_entropy(const Tensor& probs, const LabelBatch& labels);

/// weight_i = lambda1 + lambda2 * [i in B], B = the label boundary mask
/// dilated by two pixels.
FloatMap boundary_weight_map(const LabelMap& labels, float lambda1, float lambda2);
FloatMap boundary_weight_map(const BinaryMask& boundary_mask, float lambda1, float lambda2);

/// Dice overlap weighted by squared inverse class frequency, per batch item,
/// averaged. Classes absent from an item's ground truth drop out of that
/// item's sums.
double generalized_dice_loss(const Tensor& probs, const LabelBatch& labels);

/// Mean over batch, classes and pixels of phi * p.
double surface_loss(const Tensor& probs, const Tensor& phi);

/// Assembles per-sample signed distance maps into an NxCxHxW tensor.
Tensor phi_batch(const std::vector<const SignedDistanceMaps*>& maps);

struct LossBundle {
    double weighted_ce = 0.0;
    double gdl = 0.0;
    double sl = 0.0;
    double total = 0.0; // weighted_ce + lambda3*gdl + lambda4*sl, exactly
    ValueId total_id = 0;
};

/// Differentiable total loss on a tape. ce_weights is the NxHxW weight map
/// (lambda1 + lambda2*B); phi the NxCxHxW signed distances.
LossBundle total_loss(Tape& tape, ValueId probs, const LabelBatch& labels,
                      const Tensor& ce_weights, const Tensor& phi, const LossWeights& w);

/// Same computation without a tape (validation passes).
LossBundle total_loss_value(const Tensor& probs, const LabelBatch& labels,
                            const Tensor& ce_weights, const Tensor& phi, const LossWeights& w);

// Tape ops for the individual terms.
namespace ops {
ValueId weighted_ce_mean(Tape& tape, ValueId probs, const LabelBatch& labels, const Tensor& weights);
ValueId generalized_dice(Tape& tape, ValueId probs, const LabelBatch& labels);
ValueId surface(Tape& tape, ValueId probs, const Tensor& phi);
} // namespace ops

} // namespace ritseg
