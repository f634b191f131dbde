#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ritseg/ops.hpp"
#include "ritseg/tape.hpp"
#include "ritseg/tensor.hpp"

namespace ritseg {

struct ConvLayer {
    Tensor weight; // Co x Ci x kh x kw
    Tensor bias;   // Co
};

struct BatchNormLayer {
    Tensor gamma;
    Tensor beta;
    BnRunning running;
};

/// Five convolutions with dense concatenations and one batch norm at the
/// block output. Channel budget K per conv output:
///   conv1 3x3 (m -> K), conv2 1x1 (m+K -> K), conv3 3x3 (K -> K),
///   conv4 1x1 (m+2K -> K), conv5 3x3 (K -> K).
struct DownBlock {
    std::array<ConvLayer, 5> convs;
    BatchNormLayer bn;
};

/// Nearest-neighbor x2 upsample, concat with the 32-channel skip, then
///   conv1 1x1 (2K -> K), conv2 3x3 (K -> K),
///   conv3 1x1 (3K -> K, fed by concat(upsampled+skip, conv2 out)),
///   conv4 3x3 (K -> K).
struct UpBlock {
    std::array<ConvLayer, 4> convs;
};

struct NamedTensor {
    std::string name;
    Tensor* tensor;
    bool trainable;
};

/// Encoder-decoder with five Down-Blocks (pooling after the first four),
/// four Up-Blocks fed by skips from D4..D1, and a 1x1 classifier with
/// channel softmax. The bottleneck runs at 1/16th of the input resolution.
class RitnetModel {
public:
    static constexpr float kLeakySlope = 0.01f;
    static constexpr float kBnEps = 1e-5f;
    static constexpr float kBnMomentum = 0.1f;

    RitnetModel() = default;

    int num_classes() const { return num_classes_; }
    int channels() const { return channels_; }

    /// Inference/training forward on raw kernels; train mode updates the
    /// batch-norm running statistics.
    Tensor forward(const Tensor& batch, Mode mode);

    /// Const inference path; safe to call concurrently on a shared model.
    Tensor infer_forward(const Tensor& batch) const;

    struct TapedForward {
        ValueId probs;
        ValueId input;
        std::vector<ValueId> param_ids; // aligned with trainable_parameters()
    };
    /// Forward recorded on a tape for backprop. Parameters are registered
    /// as leaves in registry order.
    TapedForward forward(Tape& tape, const Tensor& batch, Mode mode);

    /// All state tensors in registry order (checkpoint payload).
    std::vector<NamedTensor> named_tensors();
    /// Weights, biases and BN gamma/beta; excludes running statistics.
    std::vector<NamedTensor> trainable_parameters();

    bool bn_ready() const { return down_[0].bn.running.ready; }
    void mark_bn_ready();

    std::array<DownBlock, 5> down_;
    std::array<UpBlock, 4> up_;
    ConvLayer classifier_;

private:
    int num_classes_ = 0;
    int channels_ = 0;

    friend RitnetModel build_model(int, int, std::uint64_t);
};

/// Builds the network with fan-in-scaled uniform conv init, BN gamma=1
/// beta=0. The default configuration carries exactly 248,900 trainable
/// parameters.
RitnetModel build_model(int num_classes = 4, int channels = 32, std::uint64_t seed = 0);

std::int64_t count_parameters(RitnetModel& model);

// ---- checkpoints ----

struct CheckpointMeta {
    std::uint32_t epoch = 0;
    float best_score = 0.0f;
};

/// Binary format, little-endian: magic "RITN", u32 version=1, u32 tensor
/// count; per tensor u32 name length, name bytes, u32 rank, u32 dims, raw
/// f32 payload; then u32 epoch and f32 best validation score.
void save_checkpoint(RitnetModel& model, const std::filesystem::path& path,
                     const CheckpointMeta& meta = {});

RitnetModel load_checkpoint(const std::filesystem::path& path, CheckpointMeta* meta = nullptr);

} // namespace ritseg
