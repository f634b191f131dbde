#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "oracles.hpp"
#include "ritseg/image_io.hpp"
#include "ritseg/imageproc.hpp"
#include "ritseg/rng.hpp"

using namespace ritseg;

namespace {

GrayImage random_image(int h, int w, Rng& rng) {
    GrayImage img(h, w);
    for (auto& v : img.v) v = rng.uniform_float();
    return img;
}

BinaryMask random_mask(int h, int w, double density, Rng& rng) {
    BinaryMask m(h, w);
    for (auto& b : m.b) b = rng.bernoulli(density) ? 1 : 0;
    return m;
}

} // namespace

TEST_CASE("gamma_correct fixed points, derived value, monotone brightening") {
    GrayImage img(1, 3);
    img.v = {0.0f, 1.0f, 0.25f};
    GrayImage out = gamma_correct(img, 0.8f);
    CHECK(out.v[0] == 0.0f);
    CHECK(out.v[1] == 1.0f);
    CHECK(out.v[2] == doctest::Approx(std::pow(0.25, 0.8)).epsilon(1e-5));

    Rng rng(4);
    GrayImage r = random_image(8, 8, rng);
    GrayImage g = gamma_correct(r, 0.8f);
    for (std::size_t i = 0; i < r.size(); ++i) {
        CHECK(g.v[i] >= r.v[i]); // x^0.8 >= x on [0,1]
        CHECK(g.v[i] <= 1.0f);
    }
    // Monotone: order preserved across any pixel pair.
    for (std::size_t i = 1; i < r.size(); ++i) {
        if (r.v[i - 1] < r.v[i]) CHECK(g.v[i - 1] <= g.v[i]);
        if (r.v[i - 1] > r.v[i]) CHECK(g.v[i - 1] >= g.v[i]);
    }

    CHECK_THROWS_AS(gamma_correct(img, 0.0f), ConfigError);
}

TEST_CASE("clahe single tile with huge clip equals plain histogram equalization") {
    Rng rng(12);
    GrayImage img = random_image(4, 4, rng);
    GrayImage he = oracle::hist_equalize(img);
    GrayImage cl = clahe(img, 1, 1e9f);
    for (std::size_t i = 0; i < img.size(); ++i)
        CHECK(cl.v[i] == doctest::Approx(he.v[i]).epsilon(1e-6));
}

TEST_CASE("clahe stays in range and matches the brute-force oracle") {
    Rng rng(13);
    for (int trial = 0; trial < 5; ++trial) {
        GrayImage img = random_image(16, 16, rng);
        GrayImage out = clahe(img, 2, 1.5f);
        GrayImage ref = oracle::clahe_bruteforce(img, 2, 1.5f);
        for (std::size_t i = 0; i < img.size(); ++i) {
            CHECK(out.v[i] >= 0.0f);
            CHECK(out.v[i] <= 1.0f);
            CHECK(std::abs(out.v[i] - ref.v[i]) <= 1e-6);
        }
    }
    // 8x8 default grid on a larger image against the same oracle.
    GrayImage big = random_image(24, 32, rng);
    GrayImage out = clahe(big, 8, 1.5f);
    GrayImage ref = oracle::clahe_bruteforce(big, 8, 1.5f);
    for (std::size_t i = 0; i < big.size(); ++i)
        CHECK(std::abs(out.v[i] - ref.v[i]) <= 1e-6);

    GrayImage tiny(4, 4);
    CHECK_THROWS_AS(clahe(tiny, 8, 1.5f), DataError);
}

TEST_CASE("gaussian_blur: constant image, impulse response, mean preservation") {
    GrayImage c(9, 9, 0.42f);
    GrayImage bc = gaussian_blur(c, 3.0f, 7);
    for (auto v : bc.v) CHECK(v == doctest::Approx(0.42f).epsilon(1e-6));

    // Unit impulse at the center reproduces the normalized sampled kernel.
    const float sigma = 1.7f;
    GrayImage imp(9, 9);
    imp.at(4, 4) = 1.0f;
    GrayImage resp = gaussian_blur(imp, sigma, 7);
    double kernel[7][7];
    double sum = 0.0;
    for (int i = 0; i < 7; ++i)
        for (int j = 0; j < 7; ++j) {
            const double dy = i - 3, dx = j - 3;
            kernel[i][j] = std::exp(-(dy * dy + dx * dx) / (2.0 * sigma * sigma));
            sum += kernel[i][j];
        }
    double ksum = 0.0;
    for (int i = 0; i < 7; ++i)
        for (int j = 0; j < 7; ++j) {
            const double k = kernel[i][j] / sum;
            ksum += k;
            CHECK(resp.at(1 + i, 1 + j) == doctest::Approx(k).epsilon(1e-6));
        }
    CHECK(std::abs(ksum - 1.0) < 1e-6); // kernel normalization

    // Constant 3-px border band: blur preserves the image mean.
    Rng rng(6);
    GrayImage banded(16, 16, 0.4f);
    for (int r = 3; r < 13; ++r)
        for (int cIdx = 3; cIdx < 13; ++cIdx) banded.at(r, cIdx) = rng.uniform_float();
    GrayImage blurred = gaussian_blur(banded, 2.0f, 7);
    double m0 = 0.0, m1 = 0.0;
    for (std::size_t i = 0; i < banded.size(); ++i) {
        m0 += banded.v[i];
        m1 += blurred.v[i];
    }
    CHECK(std::abs(m0 - m1) / banded.size() < 1e-4);

    CHECK_THROWS_AS(gaussian_blur(c, 0.0f), ConfigError);
}

TEST_CASE("canny: constant image empty, vertical step localized, bad thresholds") {
    GrayImage flat(16, 16, 0.7f);
    BinaryMask none = canny_edges(flat, 0.1f, 0.2f, 1.0f);
    CHECK(none.count() == 0);

    GrayImage step(16, 16);
    for (int r = 0; r < 16; ++r)
        for (int c = 0; c < 16; ++c) step.at(r, c) = c < 8 ? 0.2f : 0.8f;
    BinaryMask edges = canny_edges(step, 0.1f, 0.2f, 1.0f);
    // One edge pixel per row, all in the same column, within 1 px of the step.
    int edge_col = -1;
    for (int r = 0; r < 16; ++r) {
        int count = 0, col = -1;
        for (int c = 0; c < 16; ++c)
            if (edges.at(r, c)) {
                ++count;
                col = c;
            }
        CHECK(count == 1);
        if (edge_col < 0) edge_col = col;
        CHECK(col == edge_col);
    }
    CHECK(std::abs(edge_col - 8) <= 1);

    CHECK_THROWS_AS(canny_edges(step, 0.2f, 0.2f, 1.0f), ConfigError);
}

TEST_CASE("canny on rendered label maps localizes every inter-class transition") {
    // Nested rectangles covering all four classes.
    LabelMap labels(20, 24, 0);
    for (int r = 3; r < 17; ++r)
        for (int c = 4; c < 20; ++c) labels.at(r, c) = 1;
    for (int r = 6; r < 14; ++r)
        for (int c = 7; c < 17; ++c) labels.at(r, c) = 2;
    for (int r = 8; r < 12; ++r)
        for (int c = 10; c < 14; ++c) labels.at(r, c) = 3;

    BinaryMask edges = label_boundary_mask(labels);
    BinaryMask transitions = oracle::label_transitions(labels);
    CHECK(edges.count() > 0);
    CHECK(oracle::within_chebyshev(edges, transitions, 1));
    CHECK(oracle::within_chebyshev(transitions, edges, 1));

    // Constant label map: no boundary.
    LabelMap flat(8, 8, 2);
    CHECK(label_boundary_mask(flat).count() == 0);
}

TEST_CASE("dilate growth, extensivity, composition") {
    BinaryMask empty(7, 7);
    CHECK_THROWS_AS(distance_transform(empty), DataError);
    CHECK(dilate(empty, 2).count() == 0);

    BinaryMask dot(7, 7);
    dot.at(3, 3) = 1;
    BinaryMask d1 = dilate(dot, 1);
    CHECK(d1.count() == 9);
    for (int r = 2; r <= 4; ++r)
        for (int c = 2; c <= 4; ++c) CHECK(d1.at(r, c) == 1);
    BinaryMask d2 = dilate(dot, 2);
    CHECK(d2.count() == 25);

    Rng rng(31);
    BinaryMask m = random_mask(12, 10, 0.15, rng);
    BinaryMask a = dilate(m, 3);
    BinaryMask b = dilate(dilate(m, 2), 1);
    for (std::size_t i = 0; i < m.size(); ++i) {
        CHECK(a.b[i] == b.b[i]);           // dilate(m, 2+1) == dilate(dilate(m,2),1)
        if (m.b[i]) CHECK(a.b[i] == 1);    // extensive
    }
}

TEST_CASE("distance_transform is exactly the all-pairs oracle") {
    BinaryMask all(5, 6, 1);
    FloatMap zero = distance_transform(all);
    for (auto v : zero.v) CHECK(v == 0.0f);

    BinaryMask dot(3, 3);
    dot.at(1, 1) = 1;
    FloatMap d = distance_transform(dot);
    CHECK(d.at(0, 0) == doctest::Approx(std::sqrt(2.0)));
    CHECK(d.at(0, 1) == 1.0f);
    CHECK(d.at(1, 0) == 1.0f);
    CHECK(d.at(1, 1) == 0.0f);

    Rng rng(77);
    for (int trial = 0; trial < 60; ++trial) {
        const int h = rng.uniform_int(1, 16), w = rng.uniform_int(1, 16);
        BinaryMask m = random_mask(h, w, rng.uniform(0.05, 0.8), rng);
        if (m.count() == 0) m.at(rng.uniform_int(0, h - 1), rng.uniform_int(0, w - 1)) = 1;
        FloatMap got = distance_transform(m);
        const auto ref = oracle::distance_all_pairs(m);
        for (std::size_t i = 0; i < m.size(); ++i) CHECK(got.v[i] == ref[i]); // exact
    }
}

TEST_CASE("signed_distance_maps sign convention and oracle agreement") {
    // Whole-image class: no exterior, phi <= 0 everywhere.
    LabelMap whole(6, 6, 2);
    SignedDistanceMaps sd = signed_distance_maps(whole);
    for (int r = 0; r < 6; ++r)
        for (int c = 0; c < 6; ++c) CHECK(sd.at(2, r, c) <= 0.0f);
    // Absent classes sit at the height+width sentinel.
    for (int cls : {0, 1, 3})
        for (int r = 0; r < 6; ++r)
            for (int c = 0; c < 6; ++c) CHECK(sd.at(cls, r, c) == 12.0f);

    // The spec's 1x6 strip, values fixed by the boundary convention.
    LabelMap strip(1, 6, 0);
    for (int c = 3; c < 6; ++c) strip.at(0, c) = 1;
    SignedDistanceMaps phi = signed_distance_maps(strip);
    {
        BinaryMask boundary = oracle::class_boundary(strip, 1);
        const auto dist = oracle::distance_all_pairs(boundary);
        for (int c = 0; c < 6; ++c) {
            const float expect = (strip.at(0, c) == 1 ? -1.0f : 1.0f) * dist[static_cast<std::size_t>(c)];
            CHECK(phi.at(1, 0, c) == expect);
        }
        CHECK(phi.at(1, 0, 0) == 3.0f);
        CHECK(phi.at(1, 0, 3) == 0.0f); // boundary pixel
    }

    // Random maps: sign matches membership, |phi| matches the unsigned
    // distance to the boundary set exactly.
    Rng rng(99);
    for (int trial = 0; trial < 10; ++trial) {
        LabelMap labels(9, 8, 0);
        for (auto& id : labels.ids) id = static_cast<std::uint8_t>(rng.uniform_int(0, 3));
        SignedDistanceMaps maps = signed_distance_maps(labels);
        for (int cls = 0; cls < 4; ++cls) {
            BinaryMask boundary = oracle::class_boundary(labels, cls);
            if (boundary.count() == 0) continue; // absent class
            const auto dist = oracle::distance_all_pairs(boundary);
            for (int r = 0; r < 9; ++r)
                for (int c = 0; c < 8; ++c) {
                    const float d = dist[static_cast<std::size_t>(r) * 8 + c];
                    const float expect = labels.at(r, c) == cls ? -d : d;
                    CHECK(maps.at(cls, r, c) == expect);
                }
        }
    }
}

TEST_CASE("boundary pixels of any class sit at phi == 0") {
    LabelMap labels(10, 10, 0);
    for (int r = 2; r < 8; ++r)
        for (int c = 2; c < 8; ++c) labels.at(r, c) = 1;
    SignedDistanceMaps maps = signed_distance_maps(labels);
    BinaryMask boundary = oracle::class_boundary(labels, 1);
    for (int r = 0; r < 10; ++r)
        for (int c = 0; c < 10; ++c)
            if (boundary.at(r, c)) CHECK(maps.at(1, r, c) == 0.0f);
}

TEST_CASE("gray and label images round-trip through PNG and PGM") {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "ritseg_io_test";
    fs::create_directories(dir);

    Rng rng(55);
    GrayImage img(12, 9);
    for (auto& v : img.v) v = static_cast<float>(rng.uniform_int(0, 255)) / 255.0f;

    for (const char* name : {"a.png", "a.pgm"}) {
        const fs::path p = dir / name;
        write_gray(p, img);
        GrayImage back = read_gray(p);
        REQUIRE(back.height == img.height);
        REQUIRE(back.width == img.width);
        for (std::size_t i = 0; i < img.size(); ++i) CHECK(back.v[i] == img.v[i]);
    }

    LabelMap labels(7, 5, 0);
    for (auto& id : labels.ids) id = static_cast<std::uint8_t>(rng.uniform_int(0, 3));
    for (const char* name : {"l.png", "l.pgm"}) {
        const fs::path p = dir / name;
        write_label(p, labels);
        LabelMap back = read_label(p);
        for (std::size_t i = 0; i < labels.size(); ++i) CHECK(back.ids[i] == labels.ids[i]);
    }

    // A gray image with values > 3 is not a valid label map.
    write_gray(dir / "bad.png", img);
    bool has_big = false;
    for (auto v : img.v) has_big = has_big || v > 3.5f / 255.0f;
    if (has_big) CHECK_THROWS_AS(read_label(dir / "bad.png"), DataError);

    fs::remove_all(dir);
}
