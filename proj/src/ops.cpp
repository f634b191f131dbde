#include "ritseg/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <memory>

#include "ritseg/parallel.hpp"

namespace ritseg::ops {

namespace {

void require_rank4(const Tensor& t, const char* op, const char* what) {
    if (t.rank() != 4)
        throw ShapeError(std::string(op) + ": " + what + " must be rank 4, got " + t.dims_str());
}

} // namespace

// ---------------------------------------------------------------- conv2d

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias) {
    require_rank4(x, "conv2d", "input");
    require_rank4(weight, "conv2d", "weight");
    if (bias.rank() != 1)
        throw ShapeError("conv2d: bias must be rank 1, got " + bias.dims_str());
    const int N = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int Co = weight.dim(0), KH = weight.dim(2), KW = weight.dim(3);
    if (weight.dim(1) != Ci)
        throw ShapeError("conv2d: input has " + std::to_string(Ci) + " channels but weight expects " +
                         std::to_string(weight.dim(1)));
    if (bias.dim(0) != Co)
        throw ShapeError("conv2d: bias extent does not match output channels");
    if (KH % 2 == 0 || KW % 2 == 0)
        throw ShapeError("conv2d: kernel extents must be odd");
    const int ph = (KH - 1) / 2, pw = (KW - 1) / 2;

    Tensor out({N, Co, H, W});
    const float* xp = x.data();
    const float* wp = weight.data();
    const float* bp = bias.data();
    float* op = out.data();
    const std::size_t plane = static_cast<std::size_t>(H) * W;

    parallel_for(static_cast<std::size_t>(N) * Co, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t idx = lo; idx < hi; ++idx) {
            const int n = static_cast<int>(idx) / Co;
            const int co = static_cast<int>(idx) % Co;
            float* o = op + idx * plane;
            std::fill(o, o + plane, bp[co]);
            for (int ci = 0; ci < Ci; ++ci) {
                const float* in = xp + (static_cast<std::size_t>(n) * Ci + ci) * plane;
                const float* k = wp + ((static_cast<std::size_t>(co) * Ci + ci) * KH) * KW;
                for (int kh = 0; kh < KH; ++kh) {
                    const int dh = kh - ph;
                    const int h0 = std::max(0, -dh), h1 = std::min(H, H - dh);
                    for (int kw = 0; kw < KW; ++kw) {
                        const int dw = kw - pw;
                        const int w0 = std::max(0, -dw), w1 = std::min(W, W - dw);
                        const float kv = k[kh * KW + kw];
                        for (int h = h0; h < h1; ++h) {
                            const float* ir = in + static_cast<std::size_t>(h + dh) * W + dw;
                            float* orow = o + static_cast<std::size_t>(h) * W;
                            for (int w = w0; w < w1; ++w) orow[w] += kv * ir[w];
                        }
                    }
                }
            }
        }
    });
    check_finite(out, "conv2d");
    return out;
}

void conv2d_backward(const Tensor& x, const Tensor& weight, const Tensor& gout,
                     Tensor* gx, Tensor* gweight, Tensor* gbias) {
    const int N = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int Co = weight.dim(0), KH = weight.dim(2), KW = weight.dim(3);
    const int ph = (KH - 1) / 2, pw = (KW - 1) / 2;
    const std::size_t plane = static_cast<std::size_t>(H) * W;
    const float* gp = gout.data();
    const float* xp = x.data();
    const float* wp = weight.data();

    if (gx) {
        if (!gx->same_dims(x)) throw ShapeError("conv2d_backward: gx dims");
        float* out = gx->data();
        parallel_for(static_cast<std::size_t>(N) * Ci, [&](std::size_t lo, std::size_t hi) {
            for (std::size_t idx = lo; idx < hi; ++idx) {
                const int n = static_cast<int>(idx) / Ci;
                const int ci = static_cast<int>(idx) % Ci;
                float* gxr = out + idx * plane;
                for (int co = 0; co < Co; ++co) {
                    const float* g = gp + (static_cast<std::size_t>(n) * Co + co) * plane;
                    const float* k = wp + ((static_cast<std::size_t>(co) * Ci + ci) * KH) * KW;
                    for (int kh = 0; kh < KH; ++kh) {
                        const int dh = kh - ph;
                        // gx[h] += k * g[h - dh], valid when 0 <= h - dh < H
                        const int h0 = std::max(0, dh), h1 = std::min(H, H + dh);
                        for (int kw = 0; kw < KW; ++kw) {
                            const int dw = kw - pw;
                            const int w0 = std::max(0, dw), w1 = std::min(W, W + dw);
                            const float kv = k[kh * KW + kw];
                            for (int h = h0; h < h1; ++h) {
                                const float* gr = g + static_cast<std::size_t>(h - dh) * W - dw;
                                float* xr = gxr + static_cast<std::size_t>(h) * W;
                                for (int w = w0; w < w1; ++w) xr[w] += kv * gr[w];
                            }
                        }
                    }
                }
            }
        });
    }

    if (gweight) {
        if (!gweight->same_dims(weight)) throw ShapeError("conv2d_backward: gweight dims");
        float* out = gweight->data();
        parallel_for(static_cast<std::size_t>(Co) * Ci, [&](std::size_t lo, std::size_t hi) {
            for (std::size_t idx = lo; idx < hi; ++idx) {
                const int co = static_cast<int>(idx) / Ci;
                const int ci = static_cast<int>(idx) % Ci;
                float* gw = out + idx * static_cast<std::size_t>(KH) * KW;
                for (int kh = 0; kh < KH; ++kh) {
                    const int dh = kh - ph;
                    const int h0 = std::max(0, -dh), h1 = std::min(H, H - dh);
                    for (int kw = 0; kw < KW; ++kw) {
                        const int dw = kw - pw;
                        const int w0 = std::max(0, -dw), w1 = std::min(W, W - dw);
                        double acc = 0.0;
                        for (int n = 0; n < N; ++n) {
                            const float* g = gp + (static_cast<std::size_t>(n) * Co + co) * plane;
                            const float* in = xp + (static_cast<std::size_t>(n) * Ci + ci) * plane;
                            for (int h = h0; h < h1; ++h) {
                                const float* gr = g + static_cast<std::size_t>(h) * W;
                                const float* ir = in + static_cast<std::size_t>(h + dh) * W + dw;
                                float dot = 0.0f;
                                for (int w = w0; w < w1; ++w) dot += gr[w] * ir[w];
                                acc += dot;
                            }
                        }
                        gw[kh * KW + kw] += static_cast<float>(acc);
                    }
                }
            }
        });
    }

    if (gbias) {
        if (gbias->rank() != 1 || gbias->dim(0) != Co) throw ShapeError("conv2d_backward: gbias dims");
        float* out = gbias->data();
        parallel_for(static_cast<std::size_t>(Co), [&](std::size_t lo, std::size_t hi) {
            for (std::size_t co = lo; co < hi; ++co) {
                double acc = 0.0;
                for (int n = 0; n < N; ++n) {
                    const float* g = gp + (static_cast<std::size_t>(n) * Co + co) * plane;
                    for (std::size_t i = 0; i < plane; ++i) acc += g[i];
                }
                out[co] += static_cast<float>(acc);
            }
        });
    }
}

// ------------------------------------------------------------ leaky_relu

Tensor leaky_relu(const Tensor& x, float slope) {
    if (slope < 0.0f) throw ConfigError("leaky_relu: slope must be >= 0");
    Tensor out(x.dims());
    const float* in = x.data();
    float* o = out.data();
    const std::int64_t n = x.numel();
    for (std::int64_t i = 0; i < n; ++i) o[i] = in[i] >= 0.0f ? in[i] : slope * in[i];
    check_finite(out, "leaky_relu");
    return out;
}

Tensor leaky_relu_backward(const Tensor& x, float slope, const Tensor& gout) {
    Tensor gx(x.dims());
    const float* in = x.data();
    const float* g = gout.data();
    float* o = gx.data();
    const std::int64_t n = x.numel();
    for (std::int64_t i = 0; i < n; ++i) o[i] = g[i] * (in[i] >= 0.0f ? 1.0f : slope);
    return gx;
}

// ------------------------------------------------------------ batch norm

Tensor batch_norm_train(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                        BnRunning& running, float momentum, float eps, BnSaved* saved) {
    require_rank4(x, "batch_norm", "input");
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (gamma.numel() != C || beta.numel() != C)
        throw ShapeError("batch_norm: gamma/beta must have one entry per channel");
    const std::size_t plane = static_cast<std::size_t>(H) * W;
    const std::int64_t m = static_cast<std::int64_t>(N) * H * W;

    Tensor out(x.dims());
    if (saved) {
        saved->mean.assign(C, 0.0);
        saved->invstd.assign(C, 0.0);
    }
    const float* xp = x.data();
    float* op = out.data();
    const float* gp = gamma.data();
    const float* bp = beta.data();
    float* rm = running.mean.data();
    float* rv = running.var.data();

    std::vector<double> means(C), invstds(C), vars(C);
    parallel_for(static_cast<std::size_t>(C), [&](std::size_t lo, std::size_t hi) {
        for (std::size_t c = lo; c < hi; ++c) {
            double sum = 0.0, sq = 0.0;
            for (int n = 0; n < N; ++n) {
                const float* in = xp + (static_cast<std::size_t>(n) * C + c) * plane;
                for (std::size_t i = 0; i < plane; ++i) {
                    const double v = in[i];
                    sum += v;
                    sq += v * v;
                }
            }
            const double mean = sum / static_cast<double>(m);
            double var = sq / static_cast<double>(m) - mean * mean;
            if (var < 0.0) var = 0.0; // numeric guard
            const double invstd = 1.0 / std::sqrt(var + static_cast<double>(eps));
            means[c] = mean;
            vars[c] = var;
            invstds[c] = invstd;
            const float a = static_cast<float>(gp[c] * invstd);
            const float b = static_cast<float>(bp[c] - mean * gp[c] * invstd);
            for (int n = 0; n < N; ++n) {
                const float* in = xp + (static_cast<std::size_t>(n) * C + c) * plane;
                float* o = op + (static_cast<std::size_t>(n) * C + c) * plane;
                for (std::size_t i = 0; i < plane; ++i) o[i] = a * in[i] + b;
            }
        }
    });

    for (int c = 0; c < C; ++c) {
        rm[c] = (1.0f - momentum) * rm[c] + momentum * static_cast<float>(means[c]);
        rv[c] = (1.0f - momentum) * rv[c] + momentum * static_cast<float>(vars[c]);
        if (saved) {
            saved->mean[static_cast<std::size_t>(c)] = means[static_cast<std::size_t>(c)];
            saved->invstd[static_cast<std::size_t>(c)] = invstds[static_cast<std::size_t>(c)];
        }
    }
    running.ready = true;
    check_finite(out, "batch_norm");
    return out;
}

Tensor batch_norm_infer(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                        const BnRunning& running, float eps) {
    require_rank4(x, "batch_norm", "input");
    if (!running.ready)
        throw Error("batch_norm: infer mode before any running-stat update; train first or load a checkpoint");
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (gamma.numel() != C || beta.numel() != C)
        throw ShapeError("batch_norm: gamma/beta must have one entry per channel");
    const std::size_t plane = static_cast<std::size_t>(H) * W;

    Tensor out(x.dims());
    const float* xp = x.data();
    float* op = out.data();
    parallel_for(static_cast<std::size_t>(N) * C, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t idx = lo; idx < hi; ++idx) {
            const int c = static_cast<int>(idx) % C;
            const double invstd = 1.0 / std::sqrt(static_cast<double>(running.var[c]) + eps);
            const float a = static_cast<float>(gamma[c] * invstd);
            const float b = static_cast<float>(beta[c] - running.mean[c] * gamma[c] * invstd);
            const float* in = xp + idx * plane;
            float* o = op + idx * plane;
            for (std::size_t i = 0; i < plane; ++i) o[i] = a * in[i] + b;
        }
    });
    check_finite(out, "batch_norm");
    return out;
}

void batch_norm_train_backward(const Tensor& x, const Tensor& gamma, const BnSaved& saved,
                               const Tensor& gout, Tensor* gx, Tensor* ggamma, Tensor* gbeta) {
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const std::size_t plane = static_cast<std::size_t>(H) * W;
    const double m = static_cast<double>(N) * H * W;
    const float* xp = x.data();
    const float* gp = gout.data();

    parallel_for(static_cast<std::size_t>(C), [&](std::size_t lo, std::size_t hi) {
        for (std::size_t c = lo; c < hi; ++c) {
            const double mean = saved.mean[c];
            const double invstd = saved.invstd[c];
            double gsum = 0.0, gxhat = 0.0;
            for (int n = 0; n < N; ++n) {
                const std::size_t off = (static_cast<std::size_t>(n) * C + c) * plane;
                const float* g = gp + off;
                const float* in = xp + off;
                for (std::size_t i = 0; i < plane; ++i) {
                    gsum += g[i];
                    gxhat += g[i] * (in[i] - mean) * invstd;
                }
            }
            if (gbeta) (*gbeta)[static_cast<std::int64_t>(c)] += static_cast<float>(gsum);
            if (ggamma) (*ggamma)[static_cast<std::int64_t>(c)] += static_cast<float>(gxhat);
            if (gx) {
                const double k = static_cast<double>(gamma[static_cast<std::int64_t>(c)]) * invstd;
                const double mg = gsum / m;
                const double mgx = gxhat / m;
                for (int n = 0; n < N; ++n) {
                    const std::size_t off = (static_cast<std::size_t>(n) * C + c) * plane;
                    const float* g = gp + off;
                    const float* in = xp + off;
                    float* o = gx->data() + off;
                    for (std::size_t i = 0; i < plane; ++i) {
                        const double xhat = (in[i] - mean) * invstd;
                        o[i] += static_cast<float>(k * (g[i] - mg - xhat * mgx));
                    }
                }
            }
        }
    });
}

// ------------------------------------------------------------- pooling

Tensor avg_pool_2x2(const Tensor& x) {
    require_rank4(x, "avg_pool_2x2", "input");
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (H % 2 != 0 || W % 2 != 0)
        throw ShapeError("avg_pool_2x2: spatial dims must be even, got " + x.dims_str());
    const int Ho = H / 2, Wo = W / 2;
    Tensor out({N, C, Ho, Wo});
    const float* xp = x.data();
    float* op = out.data();
    parallel_for(static_cast<std::size_t>(N) * C, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t idx = lo; idx < hi; ++idx) {
            const float* in = xp + idx * static_cast<std::size_t>(H) * W;
            float* o = op + idx * static_cast<std::size_t>(Ho) * Wo;
            for (int i = 0; i < Ho; ++i) {
                const float* r0 = in + static_cast<std::size_t>(2 * i) * W;
                const float* r1 = r0 + W;
                // Pairwise sum keeps pool(upsample(x)) == x bit-exact.
                for (int j = 0; j < Wo; ++j)
                    o[static_cast<std::size_t>(i) * Wo + j] =
                        0.25f * ((r0[2 * j] + r0[2 * j + 1]) + (r1[2 * j] + r1[2 * j + 1]));
            }
        }
    });
    check_finite(out, "avg_pool_2x2");
    return out;
}

Tensor avg_pool_2x2_backward(const Tensor& gout) {
    const int N = gout.dim(0), C = gout.dim(1), Ho = gout.dim(2), Wo = gout.dim(3);
    Tensor gx({N, C, Ho * 2, Wo * 2});
    const int W = Wo * 2;
    const float* gp = gout.data();
    float* op = gx.data();
    parallel_for(static_cast<std::size_t>(N) * C, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t idx = lo; idx < hi; ++idx) {
            const float* g = gp + idx * static_cast<std::size_t>(Ho) * Wo;
            float* o = op + idx * static_cast<std::size_t>(Ho * 2) * W;
            for (int i = 0; i < Ho; ++i) {
                float* r0 = o + static_cast<std::size_t>(2 * i) * W;
                float* r1 = r0 + W;
                for (int j = 0; j < Wo; ++j) {
                    const float v = 0.25f * g[static_cast<std::size_t>(i) * Wo + j];
                    r0[2 * j] = v;
                    r0[2 * j + 1] = v;
                    r1[2 * j] = v;
                    r1[2 * j + 1] = v;
                }
            }
        }
    });
    return gx;
}

// ------------------------------------------------------------ upsample

Tensor upsample_nearest_2x(const Tensor& x) {
    require_rank4(x, "upsample_nearest_2x", "input");
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    Tensor out({N, C, H * 2, W * 2});
    const float* xp = x.data();
    float* op = out.data();
    const int Wo = W * 2;
    parallel_for(static_cast<std::size_t>(N) * C, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t idx = lo; idx < hi; ++idx) {
            const float* in = xp + idx * static_cast<std::size_t>(H) * W;
            float* o = op + idx * static_cast<std::size_t>(H * 2) * Wo;
            for (int i = 0; i < H; ++i) {
                float* r0 = o + static_cast<std::size_t>(2 * i) * Wo;
                const float* ir = in + static_cast<std::size_t>(i) * W;
                for (int j = 0; j < W; ++j) {
                    r0[2 * j] = ir[j];
                    r0[2 * j + 1] = ir[j];
                }
                std::memcpy(r0 + Wo, r0, sizeof(float) * static_cast<std::size_t>(Wo));
            }
        }
    });
    check_finite(out, "upsample_nearest_2x");
    return out;
}

Tensor upsample_nearest_2x_backward(const Tensor& gout) {
    const int N = gout.dim(0), C = gout.dim(1), Ho = gout.dim(2), Wo = gout.dim(3);
    const int H = Ho / 2, W = Wo / 2;
    Tensor gx({N, C, H, W});
    const float* gp = gout.data();
    float* op = gx.data();
    parallel_for(static_cast<std::size_t>(N) * C, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t idx = lo; idx < hi; ++idx) {
            const float* g = gp + idx * static_cast<std::size_t>(Ho) * Wo;
            float* o = op + idx * static_cast<std::size_t>(H) * W;
            for (int i = 0; i < H; ++i) {
                const float* r0 = g + static_cast<std::size_t>(2 * i) * Wo;
                const float* r1 = r0 + Wo;
                for (int j = 0; j < W; ++j)
                    o[static_cast<std::size_t>(i) * W + j] =
                        r0[2 * j] + r0[2 * j + 1] + r1[2 * j] + r1[2 * j + 1];
            }
        }
    });
    return gx;
}

// -------------------------------------------------------------- concat

Tensor concat_channels(const std::vector<const Tensor*>& parts) {
    if (parts.empty()) throw ShapeError("concat_channels: no inputs");
    const Tensor& first = *parts[0];
    require_rank4(first, "concat_channels", "input");
    const int N = first.dim(0), H = first.dim(2), W = first.dim(3);
    int Ctotal = 0;
    for (const Tensor* p : parts) {
        require_rank4(*p, "concat_channels", "input");
        if (p->dim(0) != N || p->dim(2) != H || p->dim(3) != W)
            throw ShapeError("concat_channels: spatial/batch mismatch between " + first.dims_str() +
                             " and " + p->dims_str());
        Ctotal += p->dim(1);
    }
    Tensor out({N, Ctotal, H, W});
    const std::size_t plane = static_cast<std::size_t>(H) * W;
    float* op = out.data();
    for (int n = 0; n < N; ++n) {
        std::size_t coff = 0;
        for (const Tensor* p : parts) {
            const std::size_t block = static_cast<std::size_t>(p->dim(1)) * plane;
            std::memcpy(op + (static_cast<std::size_t>(n) * Ctotal) * plane + coff,
                        p->data() + static_cast<std::size_t>(n) * block, block * sizeof(float));
            coff += block;
        }
    }
    return out;
}

// ------------------------------------------------------------- softmax

Tensor softmax_channels(const Tensor& x) {
    require_rank4(x, "softmax_channels", "input");
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    Tensor out(x.dims());
    const std::size_t plane = static_cast<std::size_t>(H) * W;
    const float* xp = x.data();
    float* op = out.data();
    parallel_for(static_cast<std::size_t>(N) * plane, [&](std::size_t lo, std::size_t hi) {
        std::vector<double> e(static_cast<std::size_t>(C));
        for (std::size_t idx = lo; idx < hi; ++idx) {
            const std::size_t n = idx / plane;
            const std::size_t pix = idx % plane;
            const float* in = xp + n * C * plane + pix;
            float* o = op + n * C * plane + pix;
            float mx = in[0];
            for (int c = 1; c < C; ++c) mx = std::max(mx, in[static_cast<std::size_t>(c) * plane]);
            double sum = 0.0;
            for (int c = 0; c < C; ++c) {
                const double v = std::exp(static_cast<double>(in[static_cast<std::size_t>(c) * plane] - mx));
                e[static_cast<std::size_t>(c)] = v;
                sum += v;
            }
            for (int c = 0; c < C; ++c)
                o[static_cast<std::size_t>(c) * plane] = static_cast<float>(e[static_cast<std::size_t>(c)] / sum);
        }
    });
    check_finite(out, "softmax_channels");
    return out;
}

Tensor softmax_channels_backward(const Tensor& y, const Tensor& gout) {
    const int N = y.dim(0), C = y.dim(1), H = y.dim(2), W = y.dim(3);
    Tensor gx(y.dims());
    const std::size_t plane = static_cast<std::size_t>(H) * W;
    const float* yp = y.data();
    const float* gp = gout.data();
    float* op = gx.data();
    parallel_for(static_cast<std::size_t>(N) * plane, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t idx = lo; idx < hi; ++idx) {
            const std::size_t n = idx / plane;
            const std::size_t pix = idx % plane;
            const float* py = yp + n * C * plane + pix;
            const float* pg = gp + n * C * plane + pix;
            float* po = op + n * C * plane + pix;
            double dot = 0.0;
            for (int c = 0; c < C; ++c)
                dot += static_cast<double>(py[static_cast<std::size_t>(c) * plane]) *
                       pg[static_cast<std::size_t>(c) * plane];
            for (int c = 0; c < C; ++c) {
                const std::size_t o = static_cast<std::size_t>(c) * plane;
                po[o] = static_cast<float>(py[o] * (pg[o] - dot));
            }
        }
    });
    return gx;
}

// -------------------------------------------------------------- tape ops

ValueId conv2d(Tape& tape, ValueId x, ValueId weight, ValueId bias) {
    Tensor out = conv2d(tape.value(x), tape.value(weight), tape.value(bias));
    return tape.emit("conv2d", std::move(out), {x, weight, bias},
                     [x, weight, bias](Tape& t, ValueId self) {
                         const Tensor& g = t.grad_buffer(self);
                         Tensor* gx = t.requires_grad(x) ? &t.grad_buffer(x) : nullptr;
                         Tensor* gw = t.requires_grad(weight) ? &t.grad_buffer(weight) : nullptr;
                         Tensor* gb = t.requires_grad(bias) ? &t.grad_buffer(bias) : nullptr;
                         conv2d_backward(t.value(x), t.value(weight), g, gx, gw, gb);
                     });
}

ValueId leaky_relu(Tape& tape, ValueId x, float slope) {
    Tensor out = leaky_relu(tape.value(x), slope);
    return tape.emit("leaky_relu", std::move(out), {x}, [x, slope](Tape& t, ValueId self) {
        if (!t.requires_grad(x)) return;
        Tensor gx = leaky_relu_backward(t.value(x), slope, t.grad_buffer(self));
        Tensor& acc = t.grad_buffer(x);
        for (std::int64_t i = 0; i < gx.numel(); ++i) acc[i] += gx[i];
    });
}

ValueId batch_norm(Tape& tape, ValueId x, ValueId gamma, ValueId beta,
                   BnRunning& running, Mode mode, float momentum, float eps) {
    if (mode == Mode::infer) {
        Tensor out = batch_norm_infer(tape.value(x), tape.value(gamma), tape.value(beta), running, eps);
        const int C = tape.value(x).dim(1);
        std::vector<double> invstd(static_cast<std::size_t>(C)), mean(static_cast<std::size_t>(C));
        for (int c = 0; c < C; ++c) {
            mean[static_cast<std::size_t>(c)] = running.mean[c];
            invstd[static_cast<std::size_t>(c)] = 1.0 / std::sqrt(static_cast<double>(running.var[c]) + eps);
        }
        return tape.emit("batch_norm_infer", std::move(out), {x, gamma, beta},
                         [x, gamma, beta, mean, invstd](Tape& t, ValueId self) {
                             // Frozen stats: the op is per-channel affine in x.
                             const Tensor& g = t.grad_buffer(self);
                             const Tensor& xin = t.value(x);
                             const int N = xin.dim(0), C = xin.dim(1), H = xin.dim(2), W = xin.dim(3);
                             const std::size_t plane = static_cast<std::size_t>(H) * W;
                             Tensor* gx = t.requires_grad(x) ? &t.grad_buffer(x) : nullptr;
                             Tensor* gg = t.requires_grad(gamma) ? &t.grad_buffer(gamma) : nullptr;
                             Tensor* gb = t.requires_grad(beta) ? &t.grad_buffer(beta) : nullptr;
                             for (int c = 0; c < C; ++c) {
                                 const double is = invstd[static_cast<std::size_t>(c)];
                                 const double mu = mean[static_cast<std::size_t>(c)];
                                 const float k = static_cast<float>(t.value(gamma)[c] * is);
                                 double gsum = 0.0, gxhat = 0.0;
                                 for (int n = 0; n < N; ++n) {
                                     const std::size_t off = (static_cast<std::size_t>(n) * C + c) * plane;
                                     for (std::size_t i = 0; i < plane; ++i) {
                                         const float gv = g[static_cast<std::int64_t>(off + i)];
                                         gsum += gv;
                                         gxhat += gv * (xin[static_cast<std::int64_t>(off + i)] - mu) * is;
                                         if (gx) (*gx)[static_cast<std::int64_t>(off + i)] += k * gv;
                                     }
                                 }
                                 if (gg) (*gg)[c] += static_cast<float>(gxhat);
                                 if (gb) (*gb)[c] += static_cast<float>(gsum);
                             }
                         });
    }

    auto saved = std::make_shared<BnSaved>();
    Tensor out = batch_norm_train(tape.value(x), tape.value(gamma), tape.value(beta), running,
                                  momentum, eps, saved.get());
    return tape.emit("batch_norm", std::move(out), {x, gamma, beta},
                     [x, gamma, beta, saved](Tape& t, ValueId self) {
                         const Tensor& g = t.grad_buffer(self);
                         Tensor* gx = t.requires_grad(x) ? &t.grad_buffer(x) : nullptr;
                         Tensor* gg = t.requires_grad(gamma) ? &t.grad_buffer(gamma) : nullptr;
                         Tensor* gb = t.requires_grad(beta) ? &t.grad_buffer(beta) : nullptr;
                         batch_norm_train_backward(t.value(x), t.value(gamma), *saved, g, gx, gg, gb);
                     });
}

ValueId avg_pool_2x2(Tape& tape, ValueId x) {
    Tensor out = avg_pool_2x2(tape.value(x));
    return tape.emit("avg_pool_2x2", std::move(out), {x}, [x](Tape& t, ValueId self) {
        if (!t.requires_grad(x)) return;
        Tensor gx = avg_pool_2x2_backward(t.grad_buffer(self));
        Tensor& acc = t.grad_buffer(x);
        for (std::int64_t i = 0; i < gx.numel(); ++i) acc[i] += gx[i];
    });
}

ValueId upsample_nearest_2x(Tape& tape, ValueId x) {
    Tensor out = upsample_nearest_2x(tape.value(x));
    return tape.emit("upsample_nearest_2x", std::move(out), {x}, [x](Tape& t, ValueId self) {
        if (!t.requires_grad(x)) return;
        Tensor gx = upsample_nearest_2x_backward(t.grad_buffer(self));
        Tensor& acc = t.grad_buffer(x);
        for (std::int64_t i = 0; i < gx.numel(); ++i) acc[i] += gx[i];
    });
}

ValueId concat_channels(Tape& tape, const std::vector<ValueId>& parts) {
    std::vector<const Tensor*> ptrs;
    ptrs.reserve(parts.size());
    for (ValueId p : parts) ptrs.push_back(&tape.value(p));
    Tensor out = concat_channels(ptrs);
    return tape.emit("concat_channels", std::move(out), parts, [parts](Tape& t, ValueId self) {
        const Tensor& g = t.grad_buffer(self);
        const int N = g.dim(0), Ct = g.dim(1), H = g.dim(2), W = g.dim(3);
        const std::size_t plane = static_cast<std::size_t>(H) * W;
        int coff = 0;
        for (ValueId p : parts) {
            const int Cp = t.value(p).dim(1);
            if (t.requires_grad(p)) {
                Tensor& acc = t.grad_buffer(p);
                for (int n = 0; n < N; ++n) {
                    const float* src = g.data() + (static_cast<std::size_t>(n) * Ct + coff) * plane;
                    float* dst = acc.data() + static_cast<std::size_t>(n) * Cp * plane;
                    for (std::size_t i = 0; i < static_cast<std::size_t>(Cp) * plane; ++i) dst[i] += src[i];
                }
            }
            coff += Cp;
        }
    });
}

ValueId softmax_channels(Tape& tape, ValueId x) {
    Tensor out = softmax_channels(tape.value(x));
    return tape.emit("softmax_channels", std::move(out), {x}, [x](Tape& t, ValueId self) {
        if (!t.requires_grad(x)) return;
        Tensor gx = softmax_channels_backward(t.value(self), t.grad_buffer(self));
        Tensor& acc = t.grad_buffer(x);
        for (std::int64_t i = 0; i < gx.numel(); ++i) acc[i] += gx[i];
    });
}

ValueId add(Tape& tape, ValueId a, ValueId b) {
    const Tensor& ta = tape.value(a);
    const Tensor& tb = tape.value(b);
    if (!ta.same_dims(tb))
        throw ShapeError("add: dims mismatch " + ta.dims_str() + " vs " + tb.dims_str());
    Tensor out(ta.dims());
    for (std::int64_t i = 0; i < ta.numel(); ++i) out[i] = ta[i] + tb[i];
    return tape.emit("add", std::move(out), {a, b}, [a, b](Tape& t, ValueId self) {
        const Tensor& g = t.grad_buffer(self);
        for (ValueId p : {a, b}) {
            if (!t.requires_grad(p)) continue;
            Tensor& acc = t.grad_buffer(p);
            for (std::int64_t i = 0; i < g.numel(); ++i) acc[i] += g[i];
        }
    });
}

ValueId scale(Tape& tape, ValueId x, float k) {
    const Tensor& tx = tape.value(x);
    Tensor out(tx.dims());
    for (std::int64_t i = 0; i < tx.numel(); ++i) out[i] = k * tx[i];
    return tape.emit("scale", std::move(out), {x}, [x, k](Tape& t, ValueId self) {
        if (!t.requires_grad(x)) return;
        const Tensor& g = t.grad_buffer(self);
        Tensor& acc = t.grad_buffer(x);
        for (std::int64_t i = 0; i < g.numel(); ++i) acc[i] += k * g[i];
    });
}

ValueId sum_all(Tape& tape, ValueId x) {
    const Tensor& tx = tape.value(x);
    double s = 0.0;
    for (std::int64_t i = 0; i < tx.numel(); ++i) s += tx[i];
    return tape.emit("sum_all", Tensor::scalar(static_cast<float>(s)), {x},
                     [x](Tape& t, ValueId self) {
                         if (!t.requires_grad(x)) return;
                         const float g = t.grad_buffer(self)[0];
                         Tensor& acc = t.grad_buffer(x);
                         for (std::int64_t i = 0; i < acc.numel(); ++i) acc[i] += g;
                     });
}

ValueId weighted_sum(Tape& tape, ValueId x, const Tensor& w) {
    const Tensor& tx = tape.value(x);
    if (!tx.same_dims(w))
        throw ShapeError("weighted_sum: dims mismatch " + tx.dims_str() + " vs " + w.dims_str());
    double s = 0.0;
    for (std::int64_t i = 0; i < tx.numel(); ++i) s += static_cast<double>(tx[i]) * w[i];
    auto wcopy = std::make_shared<Tensor>(w);
    return tape.emit("weighted_sum", Tensor::scalar(static_cast<float>(s)), {x},
                     [x, wcopy](Tape& t, ValueId self) {
                         if (!t.requires_grad(x)) return;
                         const float g = t.grad_buffer(self)[0];
                         Tensor& acc = t.grad_buffer(x);
                         for (std::int64_t i = 0; i < acc.numel(); ++i) acc[i] += g * (*wcopy)[i];
                     });
}

} // namespace ritseg::ops
