#include "ritseg/imageproc.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

namespace ritseg {

GrayImage gamma_correct(const GrayImage& img, float exponent) {
    if (exponent <= 0.0f) throw ConfigError("gamma_correct: exponent must be > 0");
    GrayImage out(img.height, img.width);
    for (std::size_t i = 0; i < img.size(); ++i)
        out.v[i] = std::pow(img.v[i], exponent);
    return out;
}

// ---------------------------------------------------------------- CLAHE

namespace {

inline int intensity_bin(float v) {
    int b = static_cast<int>(std::lround(v * 255.0f));
    return std::clamp(b, 0, 255);
}

// Interpolation coordinates against a lattice of tile centers, clamped at
// the image borders.
struct TileCoord {
    int lo;    // lower tile index
    int hi;    // upper tile index
    float frac;
};

std::vector<TileCoord> tile_coords(int extent, int grid) {
    std::vector<double> centers(static_cast<std::size_t>(grid));
    for (int t = 0; t < grid; ++t) {
        const int start = t * extent / grid;
        const int end = (t + 1) * extent / grid;
        centers[static_cast<std::size_t>(t)] = 0.5 * (start + end - 1);
    }
    std::vector<TileCoord> out(static_cast<std::size_t>(extent));
    for (int p = 0; p < extent; ++p) {
        TileCoord tc{0, 0, 0.0f};
        if (p <= centers[0]) {
            tc.lo = tc.hi = 0;
        } else if (p >= centers[static_cast<std::size_t>(grid - 1)]) {
            tc.lo = tc.hi = grid - 1;
        } else {
            int t = 0;
            while (centers[static_cast<std::size_t>(t + 1)] < p) ++t;
            tc.lo = t;
            tc.hi = t + 1;
            tc.frac = static_cast<float>((p - centers[static_cast<std::size_t>(t)]) /
                                         (centers[static_cast<std::size_t>(t + 1)] - centers[static_cast<std::size_t>(t)]));
        }
        out[static_cast<std::size_t>(p)] = tc;
    }
    return out;
}

} // namespace

GrayImage clahe(const GrayImage& img, int grid, float clip) {
    if (grid < 1) throw ConfigError("clahe: grid must be >= 1");
    if (img.height < grid || img.width < grid)
        throw DataError("clahe: image smaller than the tile grid");

    const int g = grid;
    // Per-tile clipped CDF mappings: map[tile][bin] in (0,1].
    std::vector<std::vector<float>> maps(static_cast<std::size_t>(g) * g,
                                         std::vector<float>(256, 0.0f));
    for (int ti = 0; ti < g; ++ti) {
        const int r0 = ti * img.height / g, r1 = (ti + 1) * img.height / g;
        for (int tj = 0; tj < g; ++tj) {
            const int c0 = tj * img.width / g, c1 = (tj + 1) * img.width / g;
            const long area = static_cast<long>(r1 - r0) * (c1 - c0);
            long hist[256] = {0};
            for (int r = r0; r < r1; ++r)
                for (int c = c0; c < c1; ++c)
                    ++hist[intensity_bin(img.at(r, c))];

            const double raw_limit = static_cast<double>(clip) * static_cast<double>(area) / 256.0;
            const long limit = std::max(1L, static_cast<long>(raw_limit));
            long excess = 0;
            for (int b = 0; b < 256; ++b) {
                if (hist[b] > limit) {
                    excess += hist[b] - limit;
                    hist[b] = limit;
                }
            }
            const long per_bin = excess / 256;
            const long residual = excess % 256;
            for (int b = 0; b < 256; ++b) hist[b] += per_bin;
            hist[255] += residual;

            auto& m = maps[static_cast<std::size_t>(ti) * g + tj];
            long cum = 0;
            for (int b = 0; b < 256; ++b) {
                cum += hist[b];
                m[static_cast<std::size_t>(b)] =
                    static_cast<float>(static_cast<double>(cum) / static_cast<double>(area));
            }
        }
    }

    const auto rows = tile_coords(img.height, g);
    const auto cols = tile_coords(img.width, g);
    GrayImage out(img.height, img.width);
    for (int r = 0; r < img.height; ++r) {
        const TileCoord& tr = rows[static_cast<std::size_t>(r)];
        for (int c = 0; c < img.width; ++c) {
            const TileCoord& tc = cols[static_cast<std::size_t>(c)];
            const int b = intensity_bin(img.at(r, c));
            const float m00 = maps[static_cast<std::size_t>(tr.lo) * g + tc.lo][static_cast<std::size_t>(b)];
            const float m01 = maps[static_cast<std::size_t>(tr.lo) * g + tc.hi][static_cast<std::size_t>(b)];
            const float m10 = maps[static_cast<std::size_t>(tr.hi) * g + tc.lo][static_cast<std::size_t>(b)];
            const float m11 = maps[static_cast<std::size_t>(tr.hi) * g + tc.hi][static_cast<std::size_t>(b)];
            const float top = m00 + (m01 - m00) * tc.frac;
            const float bot = m10 + (m11 - m10) * tc.frac;
            out.at(r, c) = top + (bot - top) * tr.frac;
        }
    }
    return out;
}

// -------------------------------------------------------- Gaussian blur

GrayImage gaussian_blur(const GrayImage& img, float sigma, int ksize) {
    if (sigma <= 0.0f) throw ConfigError("gaussian_blur: sigma must be > 0");
    if (ksize < 1 || ksize % 2 == 0) throw ConfigError("gaussian_blur: kernel size must be odd");

    const int half = ksize / 2;
    std::vector<double> kernel(static_cast<std::size_t>(ksize) * ksize);
    double sum = 0.0;
    for (int i = 0; i < ksize; ++i) {
        for (int j = 0; j < ksize; ++j) {
            const double dy = i - half, dx = j - half;
            const double v = std::exp(-(dy * dy + dx * dx) / (2.0 * sigma * sigma));
            kernel[static_cast<std::size_t>(i) * ksize + j] = v;
            sum += v;
        }
    }
    for (auto& k : kernel) k /= sum;

    GrayImage out(img.height, img.width);
    for (int r = 0; r < img.height; ++r) {
        for (int c = 0; c < img.width; ++c) {
            double acc = 0.0;
            for (int i = 0; i < ksize; ++i) {
                const int rr = std::clamp(r + i - half, 0, img.height - 1);
                for (int j = 0; j < ksize; ++j) {
                    const int cc = std::clamp(c + j - half, 0, img.width - 1);
                    acc += kernel[static_cast<std::size_t>(i) * ksize + j] * img.at(rr, cc);
                }
            }
            out.at(r, c) = static_cast<float>(acc);
        }
    }
    return out;
}

// ---------------------------------------------------------------- Canny

namespace {

struct GradientField {
    FloatMap mag;
    std::vector<std::uint8_t> dir; // quantized to 4 bins
    float max_mag = 0.0f;
};

GradientField sobel_gradients(const GrayImage& img) {
    const int h = img.height, w = img.width;
    GradientField gf;
    gf.mag = FloatMap(h, w);
    gf.dir.assign(static_cast<std::size_t>(h) * w, 0);
    auto px = [&](int r, int c) {
        return img.at(std::clamp(r, 0, h - 1), std::clamp(c, 0, w - 1));
    };
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
            const float gx = (px(r - 1, c + 1) + 2.0f * px(r, c + 1) + px(r + 1, c + 1)) -
                             (px(r - 1, c - 1) + 2.0f * px(r, c - 1) + px(r + 1, c - 1));
            const float gy = (px(r + 1, c - 1) + 2.0f * px(r + 1, c) + px(r + 1, c + 1)) -
                             (px(r - 1, c - 1) + 2.0f * px(r - 1, c) + px(r - 1, c + 1));
            const float m = std::sqrt(gx * gx + gy * gy);
            gf.mag.at(r, c) = m;
            gf.max_mag = std::max(gf.max_mag, m);
            // Quantize the gradient direction to {0, 45, 90, 135} degrees.
            float angle = std::atan2(gy, gx) * 180.0f / 3.14159265358979f;
            if (angle < 0.0f) angle += 180.0f;
            std::uint8_t bin;
            if (angle < 22.5f || angle >= 157.5f)
                bin = 0; // horizontal gradient -> compare left/right
            else if (angle < 67.5f)
                bin = 1; // diagonal: down-right
            else if (angle < 112.5f)
                bin = 2; // vertical gradient -> compare up/down
            else
                bin = 3; // diagonal: down-left
            gf.dir[static_cast<std::size_t>(r) * w + c] = bin;
        }
    }
    return gf;
}

BinaryMask canny_from_gradients(const GradientField& gf, float low, float high) {
    const int h = gf.mag.height, w = gf.mag.width;
    auto mag_at = [&](int r, int c) -> float {
        if (r < 0 || r >= h || c < 0 || c >= w) return 0.0f;
        return gf.mag.at(r, c);
    };
    // Offsets per direction bin; ties break toward the first neighbor so a
    // two-pixel plateau keeps exactly one pixel.
    static const int off[4][4] = {
        {0, -1, 0, 1},   // 0 deg: left, right
        {-1, -1, 1, 1},  // 45 deg: up-left, down-right
        {-1, 0, 1, 0},   // 90 deg: up, down
        {-1, 1, 1, -1},  // 135 deg: up-right, down-left
    };

    BinaryMask strong(h, w), weak(h, w);
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
            const float m = gf.mag.at(r, c);
            if (m < low) continue;
            const int* o = off[gf.dir[static_cast<std::size_t>(r) * w + c]];
            const float m1 = mag_at(r + o[0], c + o[1]);
            const float m2 = mag_at(r + o[2], c + o[3]);
            if (m > m1 && m >= m2) {
                weak.at(r, c) = 1;
                if (m >= high) strong.at(r, c) = 1;
            }
        }
    }

    // Hysteresis: grow from strong pixels across weak ones, 8-connected.
    BinaryMask out(h, w);
    std::vector<std::pair<int, int>> stack;
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c)
            if (strong.at(r, c)) {
                out.at(r, c) = 1;
                stack.emplace_back(r, c);
            }
    while (!stack.empty()) {
        auto [r, c] = stack.back();
        stack.pop_back();
        for (int dr = -1; dr <= 1; ++dr) {
            for (int dc = -1; dc <= 1; ++dc) {
                const int rr = r + dr, cc = c + dc;
                if (rr < 0 || rr >= h || cc < 0 || cc >= w) continue;
                if (weak.at(rr, cc) && !out.at(rr, cc)) {
                    out.at(rr, cc) = 1;
                    stack.emplace_back(rr, cc);
                }
            }
        }
    }
    return out;
}

} // namespace

BinaryMask canny_edges(const GrayImage& img, float low, float high, float sigma) {
    if (low >= high) throw ConfigError("canny_edges: low threshold must be < high");
    const GrayImage smoothed = gaussian_blur(img, sigma, 7);
    const GradientField gf = sobel_gradients(smoothed);
    return canny_from_gradients(gf, low, high);
}

GrayImage render_labels(const LabelMap& labels) {
    GrayImage out(labels.height, labels.width);
    for (std::size_t i = 0; i < labels.size(); ++i)
        out.v[i] = static_cast<float>(labels.ids[i] * 85) / 255.0f;
    return out;
}

BinaryMask label_boundary_mask(const LabelMap& labels) {
    const GrayImage rendered = render_labels(labels);
    const GrayImage smoothed = gaussian_blur(rendered, 1.0f, 7);
    const GradientField gf = sobel_gradients(smoothed);
    if (gf.max_mag <= 0.0f) return BinaryMask(labels.height, labels.width);
    return canny_from_gradients(gf, 0.1f * gf.max_mag, 0.2f * gf.max_mag);
}

// --------------------------------------------------------------- dilate

BinaryMask dilate(const BinaryMask& mask, int radius) {
    if (radius < 0) throw ConfigError("dilate: radius must be >= 0");
    BinaryMask cur = mask;
    for (int it = 0; it < radius; ++it) {
        BinaryMask next(cur.height, cur.width);
        for (int r = 0; r < cur.height; ++r) {
            for (int c = 0; c < cur.width; ++c) {
                std::uint8_t v = 0;
                for (int dr = -1; dr <= 1 && !v; ++dr) {
                    const int rr = r + dr;
                    if (rr < 0 || rr >= cur.height) continue;
                    for (int dc = -1; dc <= 1; ++dc) {
                        const int cc = c + dc;
                        if (cc < 0 || cc >= cur.width) continue;
                        if (cur.at(rr, cc)) {
                            v = 1;
                            break;
                        }
                    }
                }
                next.at(r, c) = v;
            }
        }
        cur = std::move(next);
    }
    return cur;
}

// --------------------------------------------- exact distance transform

namespace {

constexpr double kInf = 1e20;

// 1-D squared-distance transform (lower envelope of parabolas).
void edt_1d(const std::vector<double>& f, std::vector<double>& d, int n,
            std::vector<int>& v, std::vector<double>& z) {
    int k = 0;
    v[0] = 0;
    z[0] = -kInf;
    z[1] = kInf;
    for (int q = 1; q < n; ++q) {
        double s;
        for (;;) {
            const int vk = v[k];
            s = ((f[static_cast<std::size_t>(q)] + static_cast<double>(q) * q) -
                 (f[static_cast<std::size_t>(vk)] + static_cast<double>(vk) * vk)) /
                (2.0 * q - 2.0 * vk);
            if (s > z[static_cast<std::size_t>(k)]) break;
            --k;
        }
        ++k;
        v[static_cast<std::size_t>(k)] = q;
        z[static_cast<std::size_t>(k)] = s;
        z[static_cast<std::size_t>(k + 1)] = kInf;
    }
    k = 0;
    for (int q = 0; q < n; ++q) {
        while (z[static_cast<std::size_t>(k + 1)] < q) ++k;
        const int vk = v[static_cast<std::size_t>(k)];
        d[static_cast<std::size_t>(q)] =
            static_cast<double>(q - vk) * (q - vk) + f[static_cast<std::size_t>(vk)];
    }
}

} // namespace

FloatMap distance_transform(const BinaryMask& mask) {
    if (mask.count() == 0) throw DataError("distance_transform: mask has no true pixel");
    const int h = mask.height, w = mask.width;
    std::vector<double> sq(static_cast<std::size_t>(h) * w);
    for (std::size_t i = 0; i < sq.size(); ++i) sq[i] = mask.b[i] ? 0.0 : kInf;

    const int m = std::max(h, w);
    std::vector<double> f(static_cast<std::size_t>(m)), d(static_cast<std::size_t>(m));
    std::vector<int> v(static_cast<std::size_t>(m));
    std::vector<double> z(static_cast<std::size_t>(m) + 1);

    // Columns, then rows; both passes on squared distances keep the result
    // an exact integer.
    for (int c = 0; c < w; ++c) {
        for (int r = 0; r < h; ++r) f[static_cast<std::size_t>(r)] = sq[static_cast<std::size_t>(r) * w + c];
        edt_1d(f, d, h, v, z);
        for (int r = 0; r < h; ++r) sq[static_cast<std::size_t>(r) * w + c] = d[static_cast<std::size_t>(r)];
    }
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) f[static_cast<std::size_t>(c)] = sq[static_cast<std::size_t>(r) * w + c];
        edt_1d(f, d, w, v, z);
        for (int c = 0; c < w; ++c) sq[static_cast<std::size_t>(r) * w + c] = d[static_cast<std::size_t>(c)];
    }

    FloatMap out(h, w);
    for (std::size_t i = 0; i < sq.size(); ++i) out.v[i] = static_cast<float>(std::sqrt(sq[i]));
    return out;
}

// ------------------------------------------------- signed distance maps

SignedDistanceMaps signed_distance_maps(const LabelMap& labels, int num_classes) {
    const int h = labels.height, w = labels.width;
    SignedDistanceMaps out(num_classes, h, w);
    for (int cls = 0; cls < num_classes; ++cls) {
        BinaryMask boundary(h, w);
        bool present = false;
        for (int r = 0; r < h; ++r) {
            for (int c = 0; c < w; ++c) {
                if (labels.at(r, c) != cls) continue;
                present = true;
                bool on_boundary = (r == 0 || r == h - 1 || c == 0 || c == w - 1);
                if (!on_boundary) {
                    on_boundary = labels.at(r - 1, c) != cls || labels.at(r + 1, c) != cls ||
                                  labels.at(r, c - 1) != cls || labels.at(r, c + 1) != cls;
                }
                if (on_boundary) boundary.at(r, c) = 1;
            }
        }
        if (!present) {
            // Absent class: strictly exterior everywhere.
            const float far = static_cast<float>(h + w);
            for (int r = 0; r < h; ++r)
                for (int c = 0; c < w; ++c) out.at(cls, r, c) = far;
            continue;
        }
        const FloatMap dist = distance_transform(boundary);
        for (int r = 0; r < h; ++r)
            for (int c = 0; c < w; ++c)
                out.at(cls, r, c) = labels.at(r, c) == cls ? -dist.at(r, c) : dist.at(r, c);
    }
    return out;
}

} // namespace ritseg
