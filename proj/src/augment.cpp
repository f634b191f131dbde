#include "ritseg/augment.hpp"

#include <algorithm>
#include <cmath>

#include "ritseg/imageproc.hpp"

namespace ritseg {

Rng sample_rng(std::uint64_t seed, int epoch, int sample_index) {
    return Rng(combine_seed(seed, static_cast<std::uint64_t>(epoch) + 0x45504fu,
                            static_cast<std::uint64_t>(sample_index)));
}

GrayImage preprocess(const GrayImage& img) { return clahe(gamma_correct(img, 0.8f), 8, 1.5f); }

// ------------------------------------------------------------ geometry

GrayImage flip_horizontal(const GrayImage& img) {
    GrayImage out(img.height, img.width);
    for (int r = 0; r < img.height; ++r)
        for (int c = 0; c < img.width; ++c) out.at(r, c) = img.at(r, img.width - 1 - c);
    return out;
}

LabelMap flip_horizontal(const LabelMap& labels) {
    LabelMap out(labels.height, labels.width);
    for (int r = 0; r < labels.height; ++r)
        for (int c = 0; c < labels.width; ++c) out.at(r, c) = labels.at(r, labels.width - 1 - c);
    return out;
}

BinaryMask flip_horizontal(const BinaryMask& mask) {
    BinaryMask out(mask.height, mask.width);
    for (int r = 0; r < mask.height; ++r)
        for (int c = 0; c < mask.width; ++c) out.at(r, c) = mask.at(r, mask.width - 1 - c);
    return out;
}

SignedDistanceMaps flip_horizontal(const SignedDistanceMaps& maps) {
    SignedDistanceMaps out(maps.num_classes, maps.height, maps.width);
    for (int cls = 0; cls < maps.num_classes; ++cls)
        for (int r = 0; r < maps.height; ++r)
            for (int c = 0; c < maps.width; ++c)
                out.at(cls, r, c) = maps.at(cls, r, maps.width - 1 - c);
    return out;
}

GrayImage translate(const GrayImage& img, int dx, int dy) {
    GrayImage out(img.height, img.width, 0.0f);
    for (int r = 0; r < img.height; ++r) {
        const int sr = r - dy;
        if (sr < 0 || sr >= img.height) continue;
        for (int c = 0; c < img.width; ++c) {
            const int sc = c - dx;
            if (sc < 0 || sc >= img.width) continue;
            out.at(r, c) = img.at(sr, sc);
        }
    }
    return out;
}

LabelMap translate(const LabelMap& labels, int dx, int dy) {
    LabelMap out(labels.height, labels.width, 0); // vacated pixels: background
    for (int r = 0; r < labels.height; ++r) {
        const int sr = r - dy;
        if (sr < 0 || sr >= labels.height) continue;
        for (int c = 0; c < labels.width; ++c) {
            const int sc = c - dx;
            if (sc < 0 || sc >= labels.width) continue;
            out.at(r, c) = labels.at(sr, sc);
        }
    }
    return out;
}

// ----------------------------------------------------------- starburst

namespace {

GrayImage rot180(const GrayImage& img) {
    GrayImage out(img.height, img.width);
    for (int r = 0; r < img.height; ++r)
        for (int c = 0; c < img.width; ++c)
            out.at(r, c) = img.at(img.height - 1 - r, img.width - 1 - c);
    return out;
}

GrayImage symmetrize_and_normalize(const GrayImage& selected) {
    GrayImage rot = rot180(selected);
    GrayImage out(selected.height, selected.width);
    float peak = 0.0f;
    for (std::size_t i = 0; i < out.size(); ++i) {
        out.v[i] = std::max(selected.v[i], rot.v[i]);
        peak = std::max(peak, out.v[i]);
    }
    for (auto& v : out.v) v /= peak;
    return out;
}

} // namespace

GrayImage make_starburst(const GrayImage& source, float threshold) {
    GrayImage selected(source.height, source.width, 0.0f);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < source.size(); ++i) {
        if (source.v[i] >= threshold) {
            selected.v[i] = source.v[i];
            ++hits;
        }
    }
    if (hits == 0) throw DataError("make_starburst: threshold selects zero pixels");
    return symmetrize_and_normalize(selected);
}

GrayImage procedural_starburst(int height, int width, std::uint64_t seed) {
    Rng rng(combine_seed(seed, 0x53544152u));
    GrayImage canvas(height, width, 0.0f);
    const double cy = height / 2.0, cx = width / 2.0;
    const double reach = 0.45 * std::min(height, width);
    const int rays = 24;
    for (int k = 0; k < rays; ++k) {
        const double angle = (2.0 * 3.14159265358979 * k) / rays + rng.uniform(-0.05, 0.05);
        const double r1 = reach * rng.uniform(0.45, 1.0);
        const double r0 = 0.04 * std::min(height, width);
        for (double t = r0; t <= r1; t += 0.5) {
            const int r = static_cast<int>(std::lround(cy + t * std::sin(angle)));
            const int c = static_cast<int>(std::lround(cx + t * std::cos(angle)));
            if (r < 0 || r >= height || c < 0 || c >= width) break;
            const float v = static_cast<float>(0.25 + 0.75 * (1.0 - (t - r0) / (r1 - r0)));
            canvas.at(r, c) = std::max(canvas.at(r, c), v);
        }
    }
    GrayImage blurred = gaussian_blur(canvas, 0.8f, 5);
    return symmetrize_and_normalize(blurred);
}

// -------------------------------------------------------------- augment

namespace {

void draw_lines(GrayImage& img, const AugmentConfig& cfg, Rng& rng) {
    const int n = rng.uniform_int(cfg.line_count_min, cfg.line_count_max);
    const double cy = rng.uniform(cfg.line_row_lo, cfg.line_row_hi) * img.height / 400.0;
    const double cx = rng.uniform(cfg.line_col_lo, cfg.line_col_hi) * img.width / 640.0;
    const double half = cfg.line_thickness / 2.0;
    for (int k = 0; k < n; ++k) {
        const double angle = rng.uniform(0.0, 3.14159265358979);
        const double dr = std::sin(angle), dc = std::cos(angle);
        for (int r = 0; r < img.height; ++r)
            for (int c = 0; c < img.width; ++c) {
                const double dist = std::abs((c - cx) * dr - (r - cy) * dc);
                if (dist <= half) img.at(r, c) = 1.0f;
            }
    }
}

void apply_starburst(GrayImage& img, const GrayImage& asset, int dx, int dy) {
    for (int r = 0; r < img.height; ++r) {
        const int sr = r - dy;
        if (sr < 0 || sr >= img.height) continue;
        for (int c = 0; c < img.width; ++c) {
            const int sc = c - dx;
            if (sc < 0 || sc >= img.width) continue;
            img.at(r, c) = std::clamp(img.at(r, c) + asset.at(sr, sc), 0.0f, 1.0f);
        }
    }
}

int signed_magnitude(Rng& rng, int max_mag) {
    const int mag = rng.uniform_int(0, max_mag);
    return rng.bernoulli(0.5) ? mag : -mag;
}

} // namespace

Sample augment(const Sample& sample, const AugmentConfig& cfg, Rng& rng, AugmentTrace* trace) {
    if (cfg.enable_starburst && cfg.starburst == nullptr)
        throw ConfigError("augment: starburst enabled but no asset configured");
    if (cfg.starburst && (cfg.starburst->height != sample.image.height ||
                          cfg.starburst->width != sample.image.width))
        throw ConfigError("augment: starburst asset dims do not match the images");

    AugmentTrace local;
    AugmentTrace& tr = trace ? *trace : local;
    tr = AugmentTrace{};

    // Fixed draw order keeps the stream reproducible.
    tr.flipped = rng.bernoulli(cfg.flip_prob);
    if (cfg.exclusive_mode) {
        if (rng.bernoulli(cfg.aug_prob)) {
            switch (rng.uniform_int(0, cfg.enable_starburst ? 3 : 2)) {
            case 0: tr.blurred = true; break;
            case 1: tr.translated = true; break;
            case 2: tr.lines = true; break;
            default: tr.starburst = true; break;
            }
        }
    } else {
        tr.blurred = rng.bernoulli(cfg.aug_prob);
        tr.translated = rng.bernoulli(cfg.aug_prob);
        tr.lines = rng.bernoulli(cfg.aug_prob);
        tr.starburst = cfg.enable_starburst && rng.bernoulli(cfg.aug_prob);
    }

    Sample out;
    out.id = sample.id;
    out.image = tr.flipped ? flip_horizontal(sample.image) : sample.image;
    out.label = tr.flipped ? flip_horizontal(sample.label) : sample.label;

    if (tr.blurred) {
        const float sigma = static_cast<float>(rng.uniform(cfg.blur_sigma_min, cfg.blur_sigma_max));
        out.image = gaussian_blur(out.image, sigma, cfg.blur_ksize);
    }
    if (tr.translated) {
        tr.dx = signed_magnitude(rng, cfg.translate_max);
        tr.dy = signed_magnitude(rng, cfg.translate_max);
        out.image = translate(out.image, tr.dx, tr.dy);
        out.label = translate(out.label, tr.dx, tr.dy);
    }
    if (tr.lines) draw_lines(out.image, cfg, rng);
    if (tr.starburst) {
        const int sx = signed_magnitude(rng, cfg.starburst_translate_max);
        const int sy = signed_magnitude(rng, cfg.starburst_translate_max);
        apply_starburst(out.image, *cfg.starburst, sx, sy);
    }
    return out;
}

} // namespace ritseg
