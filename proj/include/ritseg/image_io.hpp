#pragma once

#include <filesystem>

#include "ritseg/image.hpp"

namespace ritseg {

/// Reads an 8-bit grayscale PNG or binary PGM (P5), selected by magic bytes.
/// Intensities are divided by 255.
GrayImage read_gray(const std::filesystem::path& path);

/// Writes intensities quantized to 8 bits. ".png" writes PNG, anything else
/// binary PGM.
void write_gray(const std::filesystem::path& path, const GrayImage& img);

/// Label maps ride the same formats with raw class ids {0..3}.
LabelMap read_label(const std::filesystem::path& path);
void write_label(const std::filesystem::path& path, const LabelMap& labels);

/// View mode: ids scaled by 85 for visibility.
void write_label_view(const std::filesystem::path& path, const LabelMap& labels);

} // namespace ritseg
