#pragma once

#include <cstdint>
#include <vector>

#include "ritseg/errors.hpp"

namespace ritseg {

/// Grayscale image, intensities in [0,1] (8-bit sources divided by 255).
struct GrayImage {
    int height = 0;
    int width = 0;
    std::vector<float> v;

    GrayImage() = default;
    GrayImage(int h, int w, float fill = 0.0f)
        : height(h), width(w), v(static_cast<std::size_t>(h) * w, fill) {}

    float& at(int r, int c) { return v[static_cast<std::size_t>(r) * width + c]; }
    float at(int r, int c) const { return v[static_cast<std::size_t>(r) * width + c]; }
    std::size_t size() const { return v.size(); }
};

/// Per-pixel class ids in {0..3}.
struct LabelMap {
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> ids;

    LabelMap() = default;
    LabelMap(int h, int w, std::uint8_t fill = 0)
        : height(h), width(w), ids(static_cast<std::size_t>(h) * w, fill) {}

    std::uint8_t& at(int r, int c) { return ids[static_cast<std::size_t>(r) * width + c]; }
    std::uint8_t at(int r, int c) const { return ids[static_cast<std::size_t>(r) * width + c]; }
    std::size_t size() const { return ids.size(); }
};

struct BinaryMask {
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> b; // 0 or 1

    BinaryMask() = default;
    BinaryMask(int h, int w, std::uint8_t fill = 0)
        : height(h), width(w), b(static_cast<std::size_t>(h) * w, fill) {}

    std::uint8_t& at(int r, int c) { return b[static_cast<std::size_t>(r) * width + c]; }
    std::uint8_t at(int r, int c) const { return b[static_cast<std::size_t>(r) * width + c]; }
    std::size_t size() const { return b.size(); }
    std::size_t count() const {
        std::size_t n = 0;
        for (auto x : b) n += x;
        return n;
    }
};

/// Unconstrained float field over the image grid (distances, magnitudes).
struct FloatMap {
    int height = 0;
    int width = 0;
    std::vector<float> v;

    FloatMap() = default;
    FloatMap(int h, int w, float fill = 0.0f)
        : height(h), width(w), v(static_cast<std::size_t>(h) * w, fill) {}

    float& at(int r, int c) { return v[static_cast<std::size_t>(r) * width + c]; }
    float at(int r, int c) const { return v[static_cast<std::size_t>(r) * width + c]; }
};

/// Per-class signed Euclidean distances to the class boundary, in pixels.
/// Negative inside the region, positive outside, zero on the boundary.
/// An absent class holds the constant height+width everywhere.
struct SignedDistanceMaps {
    int height = 0;
    int width = 0;
    int num_classes = 0;
    std::vector<float> v; // class-major

    SignedDistanceMaps() = default;
    SignedDistanceMaps(int classes, int h, int w)
        : height(h), width(w), num_classes(classes),
          v(static_cast<std::size_t>(classes) * h * w, 0.0f) {}

    float& at(int cls, int r, int c) {
        return v[(static_cast<std::size_t>(cls) * height + r) * width + c];
    }
    float at(int cls, int r, int c) const {
        return v[(static_cast<std::size_t>(cls) * height + r) * width + c];
    }
};

} // namespace ritseg
