#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ritseg/image.hpp"

namespace ritseg {

struct Sample {
    std::string id;
    GrayImage image;
    LabelMap label;
};

struct DatasetSplit {
    std::vector<Sample> train;
    std::vector<Sample> validation;
    std::vector<Sample> test;
};

/// Directory layout root/{train,validation,test}/{images,labels} with 8-bit
/// grayscale PNG/PGM images and label files holding raw ids {0..3}, paired
/// by identical stem. A missing split directory yields an empty split; an
/// orphaned image or label is a pairing error naming the stem.
DatasetSplit load_dataset(const std::filesystem::path& root);

/// Writes the same layout back as PNG files.
void save_dataset(const std::filesystem::path& root, const DatasetSplit& split);

/// Synthetic nested-ellipse eyes (pupil inside iris inside sclera on
/// background) with randomized geometry and intensities plus mild noise;
/// labels match the generating geometry exactly. Produces `count` train
/// samples and max(1, count/4) validation and test samples each.
DatasetSplit synth_generate(int count, std::uint64_t seed, int height, int width);

} // namespace ritseg
