#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ritseg/image.hpp"

namespace ritseg {

/// 4x4 pixel counts, rows = ground-truth class, columns = predicted class.
struct ConfusionMatrix {
    std::array<std::int64_t, 16> counts{};

    std::int64_t& at(int truth, int pred) { return counts[static_cast<std::size_t>(truth) * 4 + pred]; }
    std::int64_t at(int truth, int pred) const { return counts[static_cast<std::size_t>(truth) * 4 + pred]; }
    std::int64_t total() const {
        std::int64_t t = 0;
        for (auto c : counts) t += c;
        return t;
    }
    ConfusionMatrix& operator+=(const ConfusionMatrix& o) {
        for (std::size_t i = 0; i < counts.size(); ++i) counts[i] += o.counts[i];
        return *this;
    }
};

ConfusionMatrix confusion_matrix(const LabelMap& pred, const LabelMap& truth);

struct ClassScores {
    std::array<double, 4> iou{};
    std::array<double, 4> f1{};
};

/// IoU = TP/(TP+FP+FN), F1 = 2TP/(2TP+FP+FN). A class absent from both
/// prediction and truth scores 1.
ClassScores class_scores(const ConfusionMatrix& cm);

/// Mean class IoU of one image's confusion matrix.
double image_miou(const ConfusionMatrix& cm);

/// Challenge convention: per-image mean IoU, then mean over images.
double dataset_miou(const std::vector<LabelMap>& preds, const std::vector<LabelMap>& truths);

/// Variant computed from one pooled confusion matrix.
double dataset_miou_global(const std::vector<LabelMap>& preds, const std::vector<LabelMap>& truths);

struct ScoreReport {
    std::array<double, 4> iou{};
    std::array<double, 4> f1{};
    double miou = 0.0;        // per-image convention
    double miou_global = 0.0; // pooled-confusion convention
    double mean_f1 = 0.0;
    std::int64_t param_count = 0;
    double size_mb_decimal = 0.0; // 4*params / 1e6
    double size_mib = 0.0;        // 4*params / 2^20
    double overall = 0.0;         // (miou + min(1/S,1))/2, S in decimal MB
};

/// Overall challenge score from an mIoU and a trainable parameter count
/// (f32 parameters; S reported in both MB conventions, scored in 10^6
/// bytes).
ScoreReport overall_score(double miou, std::int64_t param_count);

/// Full report over a prediction/truth list.
ScoreReport build_report(const std::vector<LabelMap>& preds, const std::vector<LabelMap>& truths,
                         std::int64_t param_count);

std::string format_report(const ScoreReport& report);
void write_report_kv(const std::filesystem::path& path, const ScoreReport& report);

} // namespace ritseg
