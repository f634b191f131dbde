#include "ritseg/losses.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "ritseg/imageproc.hpp"

namespace ritseg {

LossWeights schedule(int epoch, const ScheduleConfig& config) {
    if (config.ramp_epochs <= 0) throw ConfigError("schedule: ramp length must be > 0");
    if (epoch < 0) throw ConfigError("schedule: epoch must be >= 0");
    double alpha;
    if (config.clamp_after_ramp) {
        alpha = std::min(static_cast<double>(epoch) / config.ramp_epochs, 1.0);
    } else {
        alpha = epoch < config.ramp_epochs ? static_cast<double>(epoch) / config.ramp_epochs : 0.0;
    }
    LossWeights w;
    w.lambda1 = 1.0f;
    w.lambda2 = 20.0f;
    w.lambda3 = static_cast<float>(1.0 - alpha);
    w.lambda4 = static_cast<float>(alpha);
    return w;
}

LabelBatch LabelBatch::from(const std::vector<const LabelMap*>& maps) {
    if (maps.empty()) throw DataError("label batch: empty");
    LabelBatch b;
    b.n = static_cast<int>(maps.size());
    b.height = maps[0]->height;
    b.width = maps[0]->width;
    b.ids.reserve(static_cast<std::size_t>(b.n) * b.height * b.width);
    for (const LabelMap* m : maps) {
        if (m->height != b.height || m->width != b.width)
            throw ShapeError("label batch: map dims disagree");
        b.ids.insert(b.ids.end(), m->ids.begin(), m->ids.end());
    }
    return b;
}

namespace {

void check_probs_labels(const Tensor& probs, const LabelBatch& labels) {
    if (probs.rank() != 4)
        throw ShapeError("loss: probs must be NxCxHxW, got " + probs.dims_str());
    if (probs.dim(0) != labels.n || probs.dim(2) != labels.height || probs.dim(3) != labels.width)
        throw ShapeError("loss: probs " + probs.dims_str() + " do not match the label batch");
    const int C = probs.dim(1);
    for (std::uint8_t id : labels.ids)
        if (id >= C)
            throw DataError("loss: label id " + std::to_string(id) + " out of range for " +
                            std::to_string(C) + " classes");
}

} // namespace

Tensor per_pixel_cross_entropy(const Tensor& probs, const LabelBatch& labels) {
    check_probs_labels(probs, labels);
    const int N = probs.dim(0), C = probs.dim(1), H = probs.dim(2), W = probs.dim(3);
    const std::size_t plane = static_cast<std::size_t>(H) * W;
    Tensor out({N, H, W});
    for (int i = 0; i < N; ++i) {
        for (std::size_t p = 0; p < plane; ++p) {
            const std::uint8_t cls = labels.ids[static_cast<std::size_t>(i) * plane + p];
            const float pv = probs[(static_cast<std::int64_t>(i) * C + cls) * static_cast<std::int64_t>(plane) +
                                   static_cast<std::int64_t>(p)];
            const double clamped = std::max(pv, kProbFloor);
            out[static_cast<std::int64_t>(i) * static_cast<std::int64_t>(plane) + static_cast<std::int64_t>(p)] =
                static_cast<float>(-std::log(clamped));
        }
    }
    return out;
}

FloatMap boundary_weight_map(const BinaryMask& boundary_mask, float lambda1, float lambda2) {
    FloatMap out(boundary_mask.height, boundary_mask.width);
    for (std::size_t i = 0; i < boundary_mask.size(); ++i)
        out.v[i] = lambda1 + (boundary_mask.b[i] ? lambda2 : 0.0f);
    return out;
}

FloatMap boundary_weight_map(const LabelMap& labels, float lambda1, float lambda2) {
    const BinaryMask boundary = dilate(label_boundary_mask(labels), 2);
    return boundary_weight_map(boundary, lambda1, lambda2);
}

// --------------------------------------------------------- loss kernels

namespace {

double weighted_ce_value(const Tensor& probs, const LabelBatch& labels, const Tensor& weights) {
    const int N = probs.dim(0), C = probs.dim(1), H = probs.dim(2), W = probs.dim(3);
    const std::size_t plane = static_cast<std::size_t>(H) * W;
    double acc = 0.0;
    for (int i = 0; i < N; ++i) {
        for (std::size_t p = 0; p < plane; ++p) {
            const std::size_t li = static_cast<std::size_t>(i) * plane + p;
            const std::uint8_t cls = labels.ids[li];
            const float pv = probs[(static_cast<std::int64_t>(i) * C + cls) * static_cast<std::int64_t>(plane) +
                                   static_cast<std::int64_t>(p)];
            acc += static_cast<double>(weights[static_cast<std::int64_t>(li)]) *
                   -std::log(std::max(static_cast<double>(pv), static_cast<double>(kProbFloor)));
        }
    }
    return acc / (static_cast<double>(N) * H * W);
}

struct GdlSaved {
    // Per batch item: numerator A, denominator B, and per-class weights
    // (0 marks an absent class).
    std::vector<double> A, B;
    std::vector<double> w; // n * C
};

double gdl_value(const Tensor& probs, const LabelBatch& labels, GdlSaved* saved) {
    const int N = probs.dim(0), C = probs.dim(1), H = probs.dim(2), W = probs.dim(3);
    const std::size_t plane = static_cast<std::size_t>(H) * W;
    if (saved) {
        saved->A.assign(static_cast<std::size_t>(N), 0.0);
        saved->B.assign(static_cast<std::size_t>(N), 0.0);
        saved->w.assign(static_cast<std::size_t>(N) * C, 0.0);
    }
    double total = 0.0;
    for (int i = 0; i < N; ++i) {
        double A = 0.0, B = 0.0;
        for (int c = 0; c < C; ++c) {
            std::int64_t count = 0;
            double inter = 0.0, psum = 0.0;
            const float* pp = probs.data() + (static_cast<std::size_t>(i) * C + c) * plane;
            const std::uint8_t* lp = labels.ids.data() + static_cast<std::size_t>(i) * plane;
            for (std::size_t p = 0; p < plane; ++p) {
                psum += pp[p];
                if (lp[p] == c) {
                    ++count;
                    inter += pp[p];
                }
            }
            if (count == 0) continue; // absent class drops out
            const double w = 1.0 / (static_cast<double>(count) * count + kGdlEps);
            A += w * inter;
            B += w * (psum + static_cast<double>(count));
            if (saved) saved->w[static_cast<std::size_t>(i) * C + c] = w;
        }
        const double gdl_i = 1.0 - 2.0 * A / B;
        total += gdl_i;
        if (saved) {
            saved->A[static_cast<std::size_t>(i)] = A;
            saved->B[static_cast<std::size_t>(i)] = B;
        }
    }
    return total / N;
}

double sl_value(const Tensor& probs, const Tensor& phi) {
    if (!probs.same_dims(phi))
        throw ShapeError("surface_loss: probs " + probs.dims_str() + " vs phi " + phi.dims_str());
    double acc = 0.0;
    for (std::int64_t i = 0; i < probs.numel(); ++i)
        acc += static_cast<double>(phi[i]) * probs[i];
    return acc / static_cast<double>(probs.numel());
}

} // namespace

double generalized_dice_loss(const Tensor& probs, const LabelBatch& labels) {
    check_probs_labels(probs, labels);
    return gdl_value(probs, labels, nullptr);
}

double surface_loss(const Tensor& probs, const Tensor& phi) { return sl_value(probs, phi); }

Tensor phi_batch(const std::vector<const SignedDistanceMaps*>& maps) {
    if (maps.empty()) throw DataError("phi batch: empty");
    const int C = maps[0]->num_classes, H = maps[0]->height, W = maps[0]->width;
    Tensor out({static_cast<int>(maps.size()), C, H, W});
    std::size_t off = 0;
    for (const SignedDistanceMaps* m : maps) {
        if (m->num_classes != C || m->height != H || m->width != W)
            throw ShapeError("phi batch: map dims disagree");
        std::copy(m->v.begin(), m->v.end(), out.data() + off);
        off += m->v.size();
    }
    return out;
}

// ------------------------------------------------------------- tape ops

namespace ops {

ValueId weighted_ce_mean(Tape& tape, ValueId probs, const LabelBatch& labels, const Tensor& weights) {
    const Tensor& p = tape.value(probs);
    check_probs_labels(p, labels);
    if (weights.numel() != static_cast<std::int64_t>(labels.ids.size()))
        throw ShapeError("weighted_ce: weight map does not match the label batch");
    const double value = weighted_ce_value(p, labels, weights);
    auto lab = std::make_shared<LabelBatch>(labels);
    auto wts = std::make_shared<Tensor>(weights);
    return tape.emit("weighted_ce_mean", Tensor::scalar(static_cast<float>(value)), {probs},
                     [probs, lab, wts](Tape& t, ValueId self) {
                         if (!t.requires_grad(probs)) return;
                         const float go = t.grad_buffer(self)[0];
                         const Tensor& pv = t.value(probs);
                         Tensor& acc = t.grad_buffer(probs);
                         const int N = pv.dim(0), C = pv.dim(1), H = pv.dim(2), W = pv.dim(3);
                         const std::size_t plane = static_cast<std::size_t>(H) * W;
                         const double scale = static_cast<double>(go) / (static_cast<double>(N) * H * W);
                         for (int i = 0; i < N; ++i)
                             for (std::size_t p = 0; p < plane; ++p) {
                                 const std::size_t li = static_cast<std::size_t>(i) * plane + p;
                                 const std::uint8_t cls = lab->ids[li];
                                 const std::int64_t pi =
                                     (static_cast<std::int64_t>(i) * C + cls) * static_cast<std::int64_t>(plane) +
                                     static_cast<std::int64_t>(p);
                                 const float prob = pv[pi];
                                 if (prob < kProbFloor) continue; // clamped: zero slope
                                 acc[pi] += static_cast<float>(-scale * (*wts)[static_cast<std::int64_t>(li)] /
                                                               static_cast<double>(prob));
                             }
                     });
}

ValueId generalized_dice(Tape& tape, ValueId probs, const LabelBatch& labels) {
    const Tensor& p = tape.value(probs);
    check_probs_labels(p, labels);
    auto saved = std::make_shared<GdlSaved>();
    const double value = gdl_value(p, labels, saved.get());
    auto lab = std::make_shared<LabelBatch>(labels);
    return tape.emit("generalized_dice", Tensor::scalar(static_cast<float>(value)), {probs},
                     [probs, lab, saved](Tape& t, ValueId self) {
                         if (!t.requires_grad(probs)) return;
                         const float go = t.grad_buffer(self)[0];
                         const Tensor& pv = t.value(probs);
                         Tensor& acc = t.grad_buffer(probs);
                         const int N = pv.dim(0), C = pv.dim(1), H = pv.dim(2), W = pv.dim(3);
                         const std::size_t plane = static_cast<std::size_t>(H) * W;
                         for (int i = 0; i < N; ++i) {
                             const double A = saved->A[static_cast<std::size_t>(i)];
                             const double B = saved->B[static_cast<std::size_t>(i)];
                             for (int c = 0; c < C; ++c) {
                                 const double w = saved->w[static_cast<std::size_t>(i) * C + c];
                                 if (w == 0.0) continue; // absent class
                                 float* gp = acc.data() + (static_cast<std::size_t>(i) * C + c) * plane;
                                 const std::uint8_t* lp = lab->ids.data() + static_cast<std::size_t>(i) * plane;
                                 for (std::size_t px = 0; px < plane; ++px) {
                                     const double g = lp[px] == c ? 1.0 : 0.0;
                                     const double d = -2.0 * w * (g * B - A) / (B * B);
                                     gp[px] += static_cast<float>(go * d / N);
                                 }
                             }
                         }
                     });
}

ValueId surface(Tape& tape, ValueId probs, const Tensor& phi) {
    const Tensor& p = tape.value(probs);
    const double value = sl_value(p, phi);
    auto ph = std::make_shared<Tensor>(phi);
    return tape.emit("surface_loss", Tensor::scalar(static_cast<float>(value)), {probs},
                     [probs, ph](Tape& t, ValueId self) {
                         if (!t.requires_grad(probs)) return;
                         const float go = t.grad_buffer(self)[0];
                         Tensor& acc = t.grad_buffer(probs);
                         const double scale = static_cast<double>(go) / static_cast<double>(acc.numel());
                         for (std::int64_t i = 0; i < acc.numel(); ++i)
                             acc[i] += static_cast<float>(scale * (*ph)[i]);
                     });
}

} // namespace ops

LossBundle total_loss(Tape& tape, ValueId probs, const LabelBatch& labels,
                      const Tensor& ce_weights, const Tensor& phi, const LossWeights& w) {
    LossBundle bundle;
    {
        // emit() may reallocate the tape, so finish with this reference
        // before recording the term nodes.
        const Tensor& p = tape.value(probs);
        check_probs_labels(p, labels);
        bundle.weighted_ce = weighted_ce_value(p, labels, ce_weights);
        bundle.gdl = gdl_value(p, labels, nullptr);
        bundle.sl = sl_value(p, phi);
    }
    ValueId wce = ops::weighted_ce_mean(tape, probs, labels, ce_weights);
    ValueId gdl = ops::generalized_dice(tape, probs, labels);
    ValueId sl = ops::surface(tape, probs, phi);
    bundle.total = bundle.weighted_ce + static_cast<double>(w.lambda3) * bundle.gdl +
                   static_cast<double>(w.lambda4) * bundle.sl;

    const float l3 = w.lambda3, l4 = w.lambda4;
    bundle.total_id = tape.emit("total_loss", Tensor::scalar(static_cast<float>(bundle.total)),
                                {wce, gdl, sl}, [wce, gdl, sl, l3, l4](Tape& t, ValueId self) {
                                    const float go = t.grad_buffer(self)[0];
                                    t.grad_buffer(wce)[0] += go;
                                    t.grad_buffer(gdl)[0] += l3 * go;
                                    t.grad_buffer(sl)[0] += l4 * go;
                                });
    return bundle;
}

LossBundle total_loss_value(const Tensor& probs, const LabelBatch& labels,
                            const Tensor& ce_weights, const Tensor& phi, const LossWeights& w) {
    check_probs_labels(probs, labels);
    LossBundle bundle;
    bundle.weighted_ce = weighted_ce_value(probs, labels, ce_weights);
    bundle.gdl = gdl_value(probs, labels, nullptr);
    bundle.sl = sl_value(probs, phi);
    bundle.total = bundle.weighted_ce + static_cast<double>(w.lambda3) * bundle.gdl +
                   static_cast<double>(w.lambda4) * bundle.sl;
    return bundle;
}

} // namespace ritseg
