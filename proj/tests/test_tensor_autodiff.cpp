#include <doctest.h>

#include <cmath>
#include <limits>
#include <tuple>

#include "oracles.hpp"
#include "ritseg/adam.hpp"
#include "ritseg/ops.hpp"
#include "ritseg/parallel.hpp"
#include "ritseg/rng.hpp"
#include "ritseg/tape.hpp"

using namespace ritseg;
using oracle::DT;

namespace {

using oracle::to_doubles;

// Shared FD driver: checks the tape gradient of sum(r * op(inputs)) against
// central differences of a double-precision reference loss.
void check_grads_against_fd(std::vector<Tensor*> inputs,
                            const std::function<double()>& ref_loss,
                            const std::function<std::vector<Tensor>()>& analytic,
                            double h = 1e-3, double tol = 1e-3) {
    const std::vector<Tensor> grads = analytic();
    REQUIRE(grads.size() == inputs.size());
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        Tensor& t = *inputs[k];
        REQUIRE(grads[k].numel() == t.numel());
        float gmax = 0.0f;
        for (std::int64_t i = 0; i < grads[k].numel(); ++i)
            gmax = std::max(gmax, std::abs(grads[k][i]));
        const double floor_scale = std::max(1e-3, 0.01 * gmax);
        for (std::int64_t i = 0; i < t.numel(); ++i) {
            const double fd = oracle::central_fd(ref_loss, t[i], h);
            const double err = oracle::rel_err(grads[k][i], fd, floor_scale);
            INFO("input ", k, " element ", i, " analytic=", grads[k][i], " fd=", fd);
            CHECK(err < tol);
        }
    }
}

} // namespace

TEST_CASE("conv2d scalar and identity-kernel cases") {
    // 1x1 kernel on a single pixel: 1.0 * 2.0 + 0.5.
    Tensor x = Tensor::from({1, 1, 1, 1}, {1.0f});
    Tensor w = Tensor::from({1, 1, 1, 1}, {2.0f});
    Tensor b = Tensor::from({1}, {0.5f});
    Tensor y = ops::conv2d(x, w, b);
    CHECK(y[0] == doctest::Approx(2.5f));

    // 3x3 kernel with center 1: any image maps to itself.
    Rng rng(11);
    Tensor img = oracle::random_tensor({2, 1, 6, 5}, rng);
    Tensor ident = Tensor({1, 1, 3, 3});
    ident.at(0, 0, 1, 1) = 1.0f;
    Tensor zb = Tensor({1});
    Tensor out = ops::conv2d(img, ident, zb);
    for (std::int64_t i = 0; i < img.numel(); ++i) CHECK(out[i] == img[i]);
}

TEST_CASE("conv2d matches sliding-window oracle") {
    Rng rng(42);
    Tensor x = oracle::random_tensor({1, 2, 5, 5}, rng);
    Tensor w = oracle::random_tensor({3, 2, 3, 3}, rng, -0.5f, 0.5f);
    Tensor b = oracle::random_tensor({3}, rng);
    Tensor y = ops::conv2d(x, w, b);
    DT ref = oracle::conv2d(DT::from(x), DT::from(w), to_doubles(b));
    for (std::int64_t i = 0; i < y.numel(); ++i)
        CHECK(y[i] == doctest::Approx(ref.v[static_cast<std::size_t>(i)]).epsilon(1e-5));
}

TEST_CASE("conv2d rejects channel mismatch") {
    Tensor x({1, 2, 4, 4});
    Tensor w({3, 5, 3, 3});
    Tensor b({3});
    CHECK_THROWS_AS(ops::conv2d(x, w, b), ShapeError);
}

TEST_CASE("conv2d with zero bias is linear") {
    Rng rng(3);
    Tensor x = oracle::random_tensor({1, 2, 6, 6}, rng);
    Tensor y = oracle::random_tensor({1, 2, 6, 6}, rng);
    Tensor w = oracle::random_tensor({2, 2, 3, 3}, rng);
    Tensor zb = Tensor({2});
    const float a = 0.7f, bcoef = -1.3f;

    Tensor mix(x.dims());
    for (std::int64_t i = 0; i < x.numel(); ++i) mix[i] = a * x[i] + bcoef * y[i];
    Tensor lhs = ops::conv2d(mix, w, zb);
    Tensor cx = ops::conv2d(x, w, zb);
    Tensor cy = ops::conv2d(y, w, zb);
    for (std::int64_t i = 0; i < lhs.numel(); ++i) {
        const float rhs = a * cx[i] + bcoef * cy[i];
        CHECK(oracle::rel_err(lhs[i], rhs, 1e-3) < 1e-5);
    }
}

TEST_CASE("leaky_relu values and exact gradient at a negative input") {
    Tensor x = Tensor::from({1, 1, 1, 3}, {2.0f, -3.0f, -1.0f});
    Tensor y = ops::leaky_relu(x, 0.01f);
    CHECK(y[0] == 2.0f);
    CHECK(y[1] == doctest::Approx(-0.03f));

    x.requires_grad = true;
    Tape tape;
    ValueId xi = tape.leaf(x);
    ValueId yi = ops::leaky_relu(tape, xi, 0.01f);
    ValueId loss = ops::sum_all(tape, yi);
    tape.backward(loss);
    CHECK(tape.grad(xi)[2] == 0.01f); // exactly the slope at v = -1
    CHECK(tape.grad(xi)[0] == 1.0f);
}

TEST_CASE("batch_norm normalizes, applies affine, and freezes in infer mode") {
    // Channel values {1,3}: expected +-(v - mean)/sqrt(var + eps).
    Tensor x = Tensor::from({1, 1, 1, 2}, {1.0f, 3.0f});
    Tensor gamma = Tensor::from({1}, {1.0f});
    Tensor beta = Tensor::from({1}, {0.0f});
    BnRunning run;
    run.mean = Tensor({1});
    run.var = Tensor({1});
    ops::BnSaved saved;
    Tensor y = ops::batch_norm_train(x, gamma, beta, run, 0.1f, 1e-5f, &saved);
    const double expected = (3.0 - 2.0) / std::sqrt(1.0 + 1e-5);
    CHECK(y[0] == doctest::Approx(-expected).epsilon(1e-6));
    CHECK(y[1] == doctest::Approx(expected).epsilon(1e-6));

    // gamma=2, beta=1 doubles the spread and shifts by one.
    Tensor gamma2 = Tensor::from({1}, {2.0f});
    Tensor beta2 = Tensor::from({1}, {1.0f});
    BnRunning run2;
    run2.mean = Tensor({1});
    run2.var = Tensor({1});
    Tensor y2 = ops::batch_norm_train(x, gamma2, beta2, run2, 0.1f, 1e-5f, nullptr);
    CHECK(y2[0] == doctest::Approx(2.0 * -expected + 1.0).epsilon(1e-6));
    CHECK(y2[1] == doctest::Approx(2.0 * expected + 1.0).epsilon(1e-6));

    // Infer mode with running stats frozen to the batch stats reproduces the
    // train-mode output.
    Rng rng(5);
    Tensor big = oracle::random_tensor({2, 3, 4, 4}, rng);
    Tensor g3 = oracle::random_tensor({3}, rng, 0.5f, 1.5f);
    Tensor b3 = oracle::random_tensor({3}, rng);
    BnRunning run3;
    run3.mean = Tensor({3});
    run3.var = Tensor({3});
    ops::BnSaved saved3;
    Tensor train_out = ops::batch_norm_train(big, g3, b3, run3, 1.0f, 1e-5f, &saved3);
    // momentum 1.0 makes the running stats exactly the batch stats
    Tensor infer_out = ops::batch_norm_infer(big, g3, b3, run3, 1e-5f);
    for (std::int64_t i = 0; i < big.numel(); ++i)
        CHECK(train_out[i] == doctest::Approx(infer_out[i]).epsilon(1e-5));
}

TEST_CASE("batch_norm infer mode requires initialized running stats") {
    Tensor x({1, 2, 2, 2});
    Tensor gamma = Tensor::full({2}, 1.0f);
    Tensor beta = Tensor({2});
    BnRunning run;
    run.mean = Tensor({2});
    run.var = Tensor({2});
    CHECK_THROWS_AS(ops::batch_norm_infer(x, gamma, beta, run, 1e-5f), Error);
}

TEST_CASE("avg_pool_2x2 windows and shape error") {
    Tensor x = Tensor::from({1, 1, 2, 2}, {1, 2, 3, 4});
    Tensor y = ops::avg_pool_2x2(x);
    CHECK(y[0] == doctest::Approx(2.5f));

    Tensor c = Tensor::full({1, 2, 4, 4}, 0.37f);
    Tensor yc = ops::avg_pool_2x2(c);
    for (std::int64_t i = 0; i < yc.numel(); ++i) CHECK(yc[i] == 0.37f);

    Rng rng(9);
    Tensor r = oracle::random_tensor({1, 1, 4, 6}, rng);
    Tensor yr = ops::avg_pool_2x2(r);
    DT ref = oracle::avg_pool_2x2(DT::from(r));
    for (std::int64_t i = 0; i < yr.numel(); ++i)
        CHECK(yr[i] == doctest::Approx(ref.v[static_cast<std::size_t>(i)]).epsilon(1e-6));

    Tensor odd({1, 1, 3, 4});
    CHECK_THROWS_AS(ops::avg_pool_2x2(odd), ShapeError);
}

TEST_CASE("upsample_nearest_2x replicates and inverts avg_pool bit-exactly") {
    Tensor x = Tensor::from({1, 1, 2, 2}, {1, 2, 3, 4});
    Tensor y = ops::upsample_nearest_2x(x);
    const float expect[16] = {1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4};
    for (int i = 0; i < 16; ++i) CHECK(y[i] == expect[i]);

    Rng rng(21);
    Tensor r = oracle::random_tensor({2, 3, 6, 4}, rng, -10.0f, 10.0f);
    Tensor round_trip = ops::avg_pool_2x2(ops::upsample_nearest_2x(r));
    for (std::int64_t i = 0; i < r.numel(); ++i) CHECK(round_trip[i] == r[i]); // bit-exact

    // Each input element feeds four outputs.
    r.requires_grad = true;
    Tape tape;
    ValueId xi = tape.leaf(r);
    ValueId ui = ops::upsample_nearest_2x(tape, xi);
    ValueId loss = ops::sum_all(tape, ui);
    tape.backward(loss);
    for (std::int64_t i = 0; i < r.numel(); ++i) CHECK(tape.grad(xi)[i] == 4.0f);
}

TEST_CASE("concat_channels ordering and gradient routing") {
    Rng rng(17);
    Tensor a = oracle::random_tensor({1, 2, 3, 3}, rng);
    Tensor b = oracle::random_tensor({1, 3, 3, 3}, rng);
    Tensor y = ops::concat_channels({&a, &b});
    CHECK(y.dim(1) == 5);
    for (int c = 0; c < 2; ++c)
        for (int i = 0; i < 9; ++i) CHECK(y[c * 9 + i] == a[c * 9 + i]);
    for (int c = 0; c < 3; ++c)
        for (int i = 0; i < 9; ++i) CHECK(y[(2 + c) * 9 + i] == b[c * 9 + i]);

    Tensor single = ops::concat_channels({&a});
    for (std::int64_t i = 0; i < a.numel(); ++i) CHECK(single[i] == a[i]);

    Tensor bad({2, 1, 3, 3});
    CHECK_THROWS_AS(ops::concat_channels({&a, &bad}), ShapeError);

    // Backward splits the incoming gradient by channel offsets.
    a.requires_grad = b.requires_grad = true;
    Tape tape;
    ValueId ai = tape.leaf(a), bi = tape.leaf(b);
    ValueId ci = ops::concat_channels(tape, {ai, bi});
    Tensor r = oracle::random_tensor({1, 5, 3, 3}, rng);
    ValueId loss = ops::weighted_sum(tape, ci, r);
    tape.backward(loss);
    for (int c = 0; c < 2; ++c)
        for (int i = 0; i < 9; ++i) CHECK(tape.grad(ai)[c * 9 + i] == r[c * 9 + i]);
    for (int c = 0; c < 3; ++c)
        for (int i = 0; i < 9; ++i) CHECK(tape.grad(bi)[c * 9 + i] == r[(2 + c) * 9 + i]);
}

TEST_CASE("softmax_channels simplex, shift invariance, oracle match") {
    Tensor zeros({1, 4, 1, 1});
    Tensor u = ops::softmax_channels(zeros);
    for (int c = 0; c < 4; ++c) CHECK(u[c] == doctest::Approx(0.25f));

    Rng rng(33);
    Tensor x = oracle::random_tensor({2, 4, 3, 3}, rng, -4.0f, 4.0f);
    Tensor y = ops::softmax_channels(x);
    DT ref = oracle::softmax_channels(DT::from(x));
    const int plane = 9;
    for (int n = 0; n < 2; ++n)
        for (int p = 0; p < plane; ++p) {
            double sum = 0.0;
            for (int c = 0; c < 4; ++c) {
                const float v = y[(n * 4 + c) * plane + p];
                CHECK(v > 0.0f);
                CHECK(v < 1.0f);
                sum += v;
            }
            CHECK(std::abs(sum - 1.0) < 1e-6);
        }
    for (std::int64_t i = 0; i < y.numel(); ++i)
        CHECK(y[i] == doctest::Approx(ref.v[static_cast<std::size_t>(i)]).epsilon(1e-6));

    Tensor shifted = x;
    for (std::int64_t i = 0; i < shifted.numel(); ++i) shifted[i] += 2.5f;
    Tensor ys = ops::softmax_channels(shifted);
    for (std::int64_t i = 0; i < y.numel(); ++i)
        CHECK(ys[i] == doctest::Approx(y[i]).epsilon(1e-6));
}

TEST_CASE("backward basics: constant gradient, unused branch, scalar-only loss") {
    Rng rng(2);
    Tensor x = oracle::random_tensor({1, 1, 4, 4}, rng);
    Tensor unused = oracle::random_tensor({1, 1, 4, 4}, rng);
    x.requires_grad = true;
    unused.requires_grad = true;

    Tape tape;
    ValueId xi = tape.leaf(x);
    ValueId ui = tape.leaf(unused);
    ValueId doubled = ops::scale(tape, xi, 2.0f);
    ValueId branch = ops::scale(tape, ui, 3.0f); // never reaches the loss
    (void)branch;
    ValueId loss = ops::sum_all(tape, doubled);

    CHECK_THROWS_AS(tape.backward(doubled), Error); // non-scalar loss
    tape.backward(loss);
    for (std::int64_t i = 0; i < x.numel(); ++i) CHECK(tape.grad(xi)[i] == 2.0f);
    for (std::int64_t i = 0; i < unused.numel(); ++i) CHECK(tape.grad(ui)[i] == 0.0f);
}

TEST_CASE("conv2d gradients match finite differences (f64 reference)") {
    Rng rng(77);
    Tensor x = oracle::random_tensor({1, 2, 5, 4}, rng);
    Tensor w = oracle::random_tensor({3, 2, 3, 3}, rng, -0.5f, 0.5f);
    Tensor b = oracle::random_tensor({3}, rng);
    Tensor r = oracle::random_tensor({1, 3, 5, 4}, rng);
    x.requires_grad = w.requires_grad = b.requires_grad = true;

    auto ref_loss = [&] {
        DT out = oracle::conv2d(DT::from(x), DT::from(w), to_doubles(b));
        double s = 0.0;
        for (std::size_t i = 0; i < out.v.size(); ++i) s += out.v[i] * r[static_cast<std::int64_t>(i)];
        return s;
    };
    auto analytic = [&] {
        Tape tape;
        ValueId xi = tape.leaf(x), wi = tape.leaf(w), bi = tape.leaf(b);
        ValueId yi = ops::conv2d(tape, xi, wi, bi);
        tape.backward(ops::weighted_sum(tape, yi, r));
        return std::vector<Tensor>{tape.grad(xi), tape.grad(wi), tape.grad(bi)};
    };
    check_grads_against_fd({&x, &w, &b}, ref_loss, analytic);
}

TEST_CASE("batch_norm gradients match finite differences (f64 reference)") {
    Rng rng(78);
    Tensor x = oracle::random_tensor({2, 3, 4, 3}, rng);
    Tensor gamma = oracle::random_tensor({3}, rng, 0.5f, 1.5f);
    Tensor beta = oracle::random_tensor({3}, rng);
    Tensor r = oracle::random_tensor({2, 3, 4, 3}, rng);
    x.requires_grad = gamma.requires_grad = beta.requires_grad = true;

    auto ref_loss = [&] {
        DT out = oracle::batch_norm_train(DT::from(x), to_doubles(gamma), to_doubles(beta), 1e-5);
        double s = 0.0;
        for (std::size_t i = 0; i < out.v.size(); ++i) s += out.v[i] * r[static_cast<std::int64_t>(i)];
        return s;
    };
    auto analytic = [&] {
        BnRunning run;
        run.mean = Tensor({3});
        run.var = Tensor({3});
        Tape tape;
        ValueId xi = tape.leaf(x), gi = tape.leaf(gamma), bi = tape.leaf(beta);
        ValueId yi = ops::batch_norm(tape, xi, gi, bi, run, Mode::train, 0.1f, 1e-5f);
        tape.backward(ops::weighted_sum(tape, yi, r));
        return std::vector<Tensor>{tape.grad(xi), tape.grad(gi), tape.grad(bi)};
    };
    check_grads_against_fd({&x, &gamma, &beta}, ref_loss, analytic);
}

TEST_CASE("softmax/pool/upsample/leaky_relu gradients match finite differences") {
    Rng rng(79);
    Tensor x = oracle::random_tensor({1, 4, 4, 4}, rng, -2.0f, 2.0f);
    // Keep leaky_relu inputs away from the kink.
    for (std::int64_t i = 0; i < x.numel(); ++i)
        if (std::abs(x[i]) < 0.05f) x[i] = 0.1f;
    Tensor r = oracle::random_tensor({1, 4, 4, 4}, rng);
    x.requires_grad = true;

    auto ref_loss = [&] {
        DT t = oracle::leaky_relu(DT::from(x), 0.01);
        t = oracle::avg_pool_2x2(t);
        t = oracle::upsample_nearest_2x(t);
        t = oracle::softmax_channels(t);
        double s = 0.0;
        for (std::size_t i = 0; i < t.v.size(); ++i) s += t.v[i] * r[static_cast<std::int64_t>(i)];
        return s;
    };
    auto analytic = [&] {
        Tape tape;
        ValueId xi = tape.leaf(x);
        ValueId t = ops::leaky_relu(tape, xi, 0.01f);
        t = ops::avg_pool_2x2(tape, t);
        t = ops::upsample_nearest_2x(tape, t);
        t = ops::softmax_channels(tape, t);
        tape.backward(ops::weighted_sum(tape, t, r));
        return std::vector<Tensor>{tape.grad(xi)};
    };
    check_grads_against_fd({&x}, ref_loss, analytic);
}

TEST_CASE("conv2d chain gradients match finite differences, step 1e-3") {
    // The chain runs on f32 tensors; the FD side accumulates in f64.
    Rng rng(80);
    Tensor x = oracle::random_tensor({1, 2, 6, 6}, rng);
    Tensor w1 = oracle::random_tensor({3, 2, 3, 3}, rng, -0.5f, 0.5f);
    Tensor b1 = oracle::random_tensor({3}, rng, -0.2f, 0.2f);
    Tensor w2 = oracle::random_tensor({2, 3, 3, 3}, rng, -0.5f, 0.5f);
    Tensor b2 = oracle::random_tensor({2}, rng, -0.2f, 0.2f);
    Tensor r = oracle::random_tensor({1, 2, 6, 6}, rng);
    for (Tensor* t : {&x, &w1, &b1, &w2, &b2}) t->requires_grad = true;

    auto ref_loss = [&] {
        DT t = oracle::conv2d(DT::from(x), DT::from(w1), to_doubles(b1));
        t = oracle::leaky_relu(t, 0.01);
        t = oracle::conv2d(t, DT::from(w2), to_doubles(b2));
        double s = 0.0;
        for (std::size_t i = 0; i < t.v.size(); ++i) s += t.v[i] * r[static_cast<std::int64_t>(i)];
        return s;
    };
    auto analytic = [&] {
        Tape tape;
        ValueId xi = tape.leaf(x), w1i = tape.leaf(w1), b1i = tape.leaf(b1);
        ValueId w2i = tape.leaf(w2), b2i = tape.leaf(b2);
        ValueId t = ops::conv2d(tape, xi, w1i, b1i);
        t = ops::leaky_relu(tape, t, 0.01f);
        t = ops::conv2d(tape, t, w2i, b2i);
        tape.backward(ops::weighted_sum(tape, t, r));
        return std::vector<Tensor>{tape.grad(xi), tape.grad(w1i), tape.grad(b1i),
                                   tape.grad(w2i), tape.grad(b2i)};
    };
    check_grads_against_fd({&x, &w1, &b1, &w2, &b2}, ref_loss, analytic, 1e-3, 1e-3);
}

TEST_CASE("adam: first-step magnitude, zero gradient, two-step recurrence") {
    AdamConfig cfg;
    cfg.lr = 0.01f;

    // Constant gradient 1 at t=1: bias correction makes the update lr/(1+eps).
    Tensor p = Tensor::from({1}, {0.5f});
    Tensor g = Tensor::from({1}, {1.0f});
    AdamState st = AdamState::for_param(p);
    adam_step(p, g, st, cfg);
    CHECK(st.t == 1);
    CHECK(p[0] == doctest::Approx(0.5f - 0.01f).epsilon(1e-5));

    // Zero gradient from a fresh state leaves the parameter unchanged.
    Tensor p2 = Tensor::from({1}, {0.25f});
    Tensor g0 = Tensor::from({1}, {0.0f});
    AdamState st2 = AdamState::for_param(p2);
    adam_step(p2, g0, st2, cfg);
    CHECK(p2[0] == 0.25f);
    CHECK(st2.t == 1);

    // Two steps with constant gradient g=0.3 against the hand recurrence.
    const double gv = 0.3, lr = 0.01, b1 = 0.9, b2 = 0.999, eps = 1e-8;
    double m = 0.0, v = 0.0, pref = 0.5;
    for (int t = 1; t <= 2; ++t) {
        m = b1 * m + (1 - b1) * gv;
        v = b2 * v + (1 - b2) * gv * gv;
        const double mh = m / (1 - std::pow(b1, t));
        const double vh = v / (1 - std::pow(b2, t));
        pref -= lr * mh / (std::sqrt(vh) + eps);
    }
    Tensor p3 = Tensor::from({1}, {0.5f});
    Tensor g3 = Tensor::from({1}, {0.3f});
    AdamState st3 = AdamState::for_param(p3);
    adam_step(p3, g3, st3, cfg);
    adam_step(p3, g3, st3, cfg);
    CHECK(p3[0] == doctest::Approx(pref).epsilon(1e-5));
    CHECK(st3.t == 2);

    Tensor wrong = Tensor::from({2}, {0.0f, 0.0f});
    CHECK_THROWS_AS(adam_step(p3, wrong, st3, cfg), ShapeError);
}

TEST_CASE("ops are bit-deterministic across thread counts") {
    Rng rng(123);
    Tensor x = oracle::random_tensor({2, 3, 16, 16}, rng);
    Tensor w = oracle::random_tensor({4, 3, 3, 3}, rng);
    Tensor b = oracle::random_tensor({4}, rng);

    const int orig_threads = thread_count();
    set_thread_count(1);
    Tensor y1 = ops::conv2d(x, w, b);
    Tensor s1 = ops::softmax_channels(y1);
    set_thread_count(2);
    Tensor y2 = ops::conv2d(x, w, b);
    Tensor s2 = ops::softmax_channels(y2);
    set_thread_count(orig_threads);
    for (std::int64_t i = 0; i < y1.numel(); ++i) {
        CHECK(y1[i] == y2[i]);
        CHECK(s1[i] == s2[i]);
    }
}

TEST_CASE("validation mode rejects non-finite results") {
    set_validation(true);
    Tensor x = Tensor::full({1, 1, 2, 2}, std::numeric_limits<float>::infinity());
    Tensor w = Tensor::from({1, 1, 1, 1}, {1.0f});
    Tensor b = Tensor({1});
    CHECK_THROWS_AS(ops::conv2d(x, w, b), Error);
    set_validation(false);
}
