#pragma once

#include <cstdint>

#include "ritseg/dataset.hpp"
#include "ritseg/image.hpp"
#include "ritseg/rng.hpp"

namespace ritseg {

struct AugmentConfig {
    float flip_prob = 0.5f;
    float aug_prob = 0.2f;
    /// Default: each non-flip augmentation drawn independently at aug_prob.
    /// Exclusive mode instead draws one augmentation with aug_prob total.
    bool exclusive_mode = false;

    float blur_sigma_min = 2.0f;
    float blur_sigma_max = 7.0f;
    int blur_ksize = 7;

    int translate_max = 20; // per-axis magnitude, sign random

    int line_count_min = 2;
    int line_count_max = 9;
    // Line-center box on the 640x400 reference frame (rows of 400, columns
    // of 640); scaled proportionally to the actual image size.
    float line_row_lo = 120.0f;
    float line_row_hi = 280.0f;
    float line_col_lo = 192.0f;
    float line_col_hi = 448.0f;
    float line_thickness = 2.0f;

    int starburst_translate_max = 40;
    bool enable_starburst = true;
    const GrayImage* starburst = nullptr; // required when starburst is enabled

    std::uint64_t seed = 0;
};

/// What an augmentation pass did; lets callers transform precomputed
/// per-sample fields alongside the labels.
struct AugmentTrace {
    bool flipped = false;
    bool blurred = false;
    bool translated = false;
    int dx = 0; // column shift
    int dy = 0; // row shift
    bool lines = false;
    bool starburst = false;
};

/// Per-sample stream derived from (seed, epoch, index); results do not
/// depend on loader scheduling.
Rng sample_rng(std::uint64_t seed, int epoch, int sample_index);

/// Flip at flip_prob (image and label); blur/translate/lines/starburst per
/// config. Blur, lines and starburst touch the image only; translate moves
/// image and label together, vacated pixels zero / background.
Sample augment(const Sample& sample, const AugmentConfig& config, Rng& rng,
               AugmentTrace* trace = nullptr);

/// gamma(0.8) then CLAHE(8x8, 1.5); applied identically to every split.
GrayImage preprocess(const GrayImage& img);

/// Starburst overlay from a source image: intensities >= threshold, merged
/// with their 180-degree rotation about the image center, peak-normalized.
GrayImage make_starburst(const GrayImage& source, float threshold);

/// Procedural fallback: radial bright streaks, symmetrized the same way.
GrayImage procedural_starburst(int height, int width, std::uint64_t seed = 0);

// Geometric helpers shared with the training pipeline.
GrayImage flip_horizontal(const GrayImage& img);
LabelMap flip_horizontal(const LabelMap& labels);
BinaryMask flip_horizontal(const BinaryMask& mask);
SignedDistanceMaps flip_horizontal(const SignedDistanceMaps& maps);
GrayImage translate(const GrayImage& img, int dx, int dy);
LabelMap translate(const LabelMap& labels, int dx, int dy);

} // namespace ritseg
