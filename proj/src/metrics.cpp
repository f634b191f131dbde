#include "ritseg/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace ritseg {

ConfusionMatrix confusion_matrix(const LabelMap& pred, const LabelMap& truth) {
    if (pred.height != truth.height || pred.width != truth.width)
        throw ShapeError("confusion_matrix: prediction and truth dims disagree");
    ConfusionMatrix cm;
    for (std::size_t i = 0; i < pred.size(); ++i) ++cm.at(truth.ids[i], pred.ids[i]);
    return cm;
}

ClassScores class_scores(const ConfusionMatrix& cm) {
    ClassScores s;
    for (int c = 0; c < 4; ++c) {
        const std::int64_t tp = cm.at(c, c);
        std::int64_t fn = 0, fp = 0;
        for (int k = 0; k < 4; ++k) {
            if (k == c) continue;
            fn += cm.at(c, k);
            fp += cm.at(k, c);
        }
        if (tp + fp + fn == 0) {
            // Absent from both prediction and truth.
            s.iou[static_cast<std::size_t>(c)] = 1.0;
            s.f1[static_cast<std::size_t>(c)] = 1.0;
        } else {
            s.iou[static_cast<std::size_t>(c)] =
                static_cast<double>(tp) / static_cast<double>(tp + fp + fn);
            s.f1[static_cast<std::size_t>(c)] =
                static_cast<double>(2 * tp) / static_cast<double>(2 * tp + fp + fn);
        }
    }
    return s;
}

double image_miou(const ConfusionMatrix& cm) {
    const ClassScores s = class_scores(cm);
    return (s.iou[0] + s.iou[1] + s.iou[2] + s.iou[3]) / 4.0;
}

double dataset_miou(const std::vector<LabelMap>& preds, const std::vector<LabelMap>& truths) {
    if (preds.empty() || preds.size() != truths.size())
        throw DataError("dataset_miou: empty or mismatched prediction/truth lists");
    double acc = 0.0;
    for (std::size_t i = 0; i < preds.size(); ++i)
        acc += image_miou(confusion_matrix(preds[i], truths[i]));
    return acc / static_cast<double>(preds.size());
}

double dataset_miou_global(const std::vector<LabelMap>& preds, const std::vector<LabelMap>& truths) {
    if (preds.empty() || preds.size() != truths.size())
        throw DataError("dataset_miou: empty or mismatched prediction/truth lists");
    ConfusionMatrix cm;
    for (std::size_t i = 0; i < preds.size(); ++i) cm += confusion_matrix(preds[i], truths[i]);
    return image_miou(cm);
}

ScoreReport overall_score(double miou, std::int64_t param_count) {
    if (param_count <= 0) throw ConfigError("overall_score: parameter count must be positive");
    ScoreReport r;
    r.miou = miou;
    r.param_count = param_count;
    const double bytes = 4.0 * static_cast<double>(param_count);
    r.size_mb_decimal = bytes / 1e6;
    r.size_mib = bytes / (1024.0 * 1024.0);
    const double inv = std::min(1.0 / r.size_mb_decimal, 1.0);
    r.overall = (miou + inv) / 2.0;
    return r;
}

ScoreReport build_report(const std::vector<LabelMap>& preds, const std::vector<LabelMap>& truths,
                         std::int64_t param_count) {
    ScoreReport r = overall_score(dataset_miou(preds, truths), param_count);
    ConfusionMatrix cm;
    for (std::size_t i = 0; i < preds.size(); ++i) cm += confusion_matrix(preds[i], truths[i]);
    const ClassScores s = class_scores(cm);
    r.iou = s.iou;
    r.f1 = s.f1;
    r.miou_global = image_miou(cm);
    r.mean_f1 = (s.f1[0] + s.f1[1] + s.f1[2] + s.f1[3]) / 4.0;
    return r;
}

std::string format_report(const ScoreReport& r) {
    static const char* kClassNames[4] = {"background", "sclera", "iris", "pupil"};
    std::ostringstream os;
    char line[160];
    for (int c = 0; c < 4; ++c) {
        std::snprintf(line, sizeof(line), "class %d (%-10s)  IoU %.4f  F1 %.4f\n", c, kClassNames[c],
                      r.iou[static_cast<std::size_t>(c)], r.f1[static_cast<std::size_t>(c)]);
        os << line;
    }
    std::snprintf(line, sizeof(line), "mIoU (per-image)      %.4f\n", r.miou);
    os << line;
    std::snprintf(line, sizeof(line), "mIoU (pooled)         %.4f\n", r.miou_global);
    os << line;
    std::snprintf(line, sizeof(line), "mean F1               %.4f\n", r.mean_f1);
    os << line;
    std::snprintf(line, sizeof(line), "parameters            %lld\n",
                  static_cast<long long>(r.param_count));
    os << line;
    std::snprintf(line, sizeof(line), "model size            %.4f MB (10^6) / %.4f MiB (2^20)\n",
                  r.size_mb_decimal, r.size_mib);
    os << line;
    std::snprintf(line, sizeof(line), "overall score         %.4f\n", r.overall);
    os << line;
    return os.str();
}

void write_report_kv(const std::filesystem::path& path, const ScoreReport& r) {
    std::ofstream f(path);
    if (!f) throw DataError("cannot write report to " + path.string());
    for (int c = 0; c < 4; ++c) {
        f << "iou_class" << c << "=" << r.iou[static_cast<std::size_t>(c)] << "\n";
        f << "f1_class" << c << "=" << r.f1[static_cast<std::size_t>(c)] << "\n";
    }
    f << "miou=" << r.miou << "\n";
    f << "miou_global=" << r.miou_global << "\n";
    f << "mean_f1=" << r.mean_f1 << "\n";
    f << "param_count=" << r.param_count << "\n";
    f << "size_mb_decimal=" << r.size_mb_decimal << "\n";
    f << "size_mib=" << r.size_mib << "\n";
    f << "overall=" << r.overall << "\n";
}

} // namespace ritseg
