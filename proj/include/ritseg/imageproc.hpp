#pragma once

#include "ritseg/image.hpp"

namespace ritseg {

constexpr int kNumClasses = 4;

/// Elementwise power-law mapping v -> v^exponent on [0,1].
GrayImage gamma_correct(const GrayImage& img, float exponent = 0.8f);

/// Contrast Limited Adaptive Histogram Equalization over a grid x grid tile
/// lattice with 256 bins. Clip limit is relative to the uniform histogram:
/// a tile bin is capped at clip * tile_area / 256 and the excess is spread
/// uniformly (remainder into the last bin). Pixels map through bilinear
/// interpolation of the four surrounding tile CDFs, clamped at the borders.
GrayImage clahe(const GrayImage& img, int grid = 8, float clip = 1.5f);

/// Convolution with a sampled 2-D Gaussian normalized to sum 1,
/// clamp-to-edge borders.
GrayImage gaussian_blur(const GrayImage& img, float sigma, int ksize = 7);

/// Canny: Gaussian smooth, Sobel, 4-direction non-maximum suppression,
/// double threshold, hysteresis over 8-connectivity.
BinaryMask canny_edges(const GrayImage& img, float low, float high, float sigma);

/// radius applications of a 3x3 square structuring element.
BinaryMask dilate(const BinaryMask& mask, int radius);

/// Exact Euclidean distance to the nearest true pixel (two-pass 1-D lower
/// envelope on squared distances). Throws on an empty mask.
FloatMap distance_transform(const BinaryMask& mask);

/// Per-class signed distance to the class boundary. The boundary of class c
/// is the set of its pixels with a 4-neighbor of another class, plus its
/// pixels on the image border. Absent classes get the constant
/// height+width.
SignedDistanceMaps signed_distance_maps(const LabelMap& labels, int num_classes = kNumClasses);

/// Class ids rendered at intensities {0, 85, 170, 255}/255.
GrayImage render_labels(const LabelMap& labels);

/// Ground-truth boundary pixels: Canny on the rendered label map with
/// sigma=1 and thresholds 0.1/0.2 of the max gradient magnitude. A constant
/// map yields an empty mask.
BinaryMask label_boundary_mask(const LabelMap& labels);

} // namespace ritseg
