#include "ritseg/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>

#include "ritseg/image_io.hpp"
#include "ritseg/rng.hpp"

namespace ritseg {

namespace {

namespace fs = std::filesystem;

bool is_image_file(const fs::path& p) {
    const auto ext = p.extension().string();
    return ext == ".png" || ext == ".pgm";
}

std::map<std::string, fs::path> scan_stems(const fs::path& dir, const std::string& split) {
    std::map<std::string, fs::path> out;
    if (!fs::exists(dir)) return out;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (!entry.is_regular_file() || !is_image_file(entry.path())) continue;
        const std::string stem = entry.path().stem().string();
        if (!out.emplace(stem, entry.path()).second)
            throw DataError("dataset: duplicate stem '" + stem + "' in " + split);
    }
    return out;
}

std::vector<Sample> load_split(const fs::path& root, const std::string& split) {
    const fs::path image_dir = root / split / "images";
    const fs::path label_dir = root / split / "labels";
    if (!fs::exists(root / split)) return {};

    auto images = scan_stems(image_dir, split + "/images");
    auto labels = scan_stems(label_dir, split + "/labels");

    for (const auto& [stem, path] : images)
        if (!labels.count(stem))
            throw DataError("dataset: image '" + stem + "' in " + split + " has no label");
    for (const auto& [stem, path] : labels)
        if (!images.count(stem))
            throw DataError("dataset: label '" + stem + "' in " + split + " has no image");

    std::vector<Sample> out;
    out.reserve(images.size());
    for (const auto& [stem, path] : images) { // std::map iterates sorted: stable order
        Sample s;
        s.id = stem;
        s.image = read_gray(path);
        s.label = read_label(labels.at(stem));
        if (s.image.height != s.label.height || s.image.width != s.label.width)
            throw DataError("dataset: image/label dims disagree for '" + stem + "' in " + split);
        out.push_back(std::move(s));
    }
    return out;
}

} // namespace

DatasetSplit load_dataset(const std::filesystem::path& root) {
    if (!fs::exists(root)) throw DataError("dataset: no such directory " + root.string());
    DatasetSplit out;
    out.train = load_split(root, "train");
    out.validation = load_split(root, "validation");
    out.test = load_split(root, "test");
    return out;
}

void save_dataset(const std::filesystem::path& root, const DatasetSplit& split) {
    const std::pair<const char*, const std::vector<Sample>*> parts[] = {
        {"train", &split.train}, {"validation", &split.validation}, {"test", &split.test}};
    for (const auto& [name, samples] : parts) {
        const fs::path image_dir = root / name / "images";
        const fs::path label_dir = root / name / "labels";
        fs::create_directories(image_dir);
        fs::create_directories(label_dir);
        for (const Sample& s : *samples) {
            write_gray(image_dir / (s.id + ".png"), s.image);
            write_label(label_dir / (s.id + ".png"), s.label);
        }
    }
}

// ---------------------------------------------------------- synthesis

namespace {

struct Ellipse {
    double cy, cx, ry, rx;
    bool contains(double r, double c) const {
        const double dy = (r - cy) / ry, dx = (c - cx) / rx;
        return dy * dy + dx * dx <= 1.0;
    }
};

Sample synth_sample(const std::string& id, std::uint64_t seed, int h, int w) {
    Rng rng(seed);

    const double cy = rng.uniform(0.45, 0.55) * h;
    const double cx = rng.uniform(0.45, 0.55) * w;
    // Sclera ellipse clamped to keep a 2-px background margin on every side.
    double sry = rng.uniform(0.26, 0.34) * h;
    double srx = rng.uniform(0.28, 0.40) * w;
    sry = std::min({sry, cy - 2.0, h - 1.0 - cy - 2.0});
    srx = std::min({srx, cx - 2.0, w - 1.0 - cx - 2.0});
    sry = std::max(sry, 6.0);
    srx = std::max(srx, 6.0);
    const Ellipse sclera{cy, cx, sry, srx};
    const Ellipse iris{cy, cx, std::max(4.0, sry * rng.uniform(0.55, 0.68)),
                       std::max(4.0, srx * rng.uniform(0.50, 0.62))};
    const Ellipse pupil{cy, cx, std::max(1.6, iris.ry * rng.uniform(0.35, 0.50)),
                        std::max(1.6, iris.rx * rng.uniform(0.35, 0.50))};

    const double shade[4] = {rng.uniform(0.45, 0.62), rng.uniform(0.70, 0.85),
                             rng.uniform(0.25, 0.40), rng.uniform(0.04, 0.12)};

    Sample s;
    s.id = id;
    s.image = GrayImage(h, w);
    s.label = LabelMap(h, w);
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
            std::uint8_t cls = 0;
            if (pupil.contains(r, c))
                cls = 3;
            else if (iris.contains(r, c))
                cls = 2;
            else if (sclera.contains(r, c))
                cls = 1;
            s.label.at(r, c) = cls;
            double v = shade[cls] + rng.uniform(-0.02, 0.02);
            v = std::clamp(v, 0.0, 1.0);
            // Quantize onto the 8-bit grid so files round-trip exactly.
            s.image.at(r, c) = static_cast<float>(std::lround(v * 255.0) / 255.0);
        }
    }
    return s;
}

} // namespace

DatasetSplit synth_generate(int count, std::uint64_t seed, int height, int width) {
    if (count <= 0) throw ConfigError("synth_generate: count must be positive");
    if (height % 16 != 0 || width % 16 != 0)
        throw DataError("synth_generate: height and width must be divisible by 16");
    if (height < 32 || width < 32)
        throw DataError("synth_generate: images must be at least 32x32");

    DatasetSplit out;
    const int holdout = std::max(1, count / 4);
    auto make = [&](std::vector<Sample>& dst, int split_idx, const char* prefix, int n) {
        for (int i = 0; i < n; ++i) {
            char id[32];
            std::snprintf(id, sizeof(id), "%s_%04d", prefix, i);
            dst.push_back(synth_sample(id, combine_seed(seed, static_cast<std::uint64_t>(split_idx),
                                                        static_cast<std::uint64_t>(i)),
                                       height, width));
        }
    };
    make(out.train, 0, "train", count);
    make(out.validation, 1, "val", holdout);
    make(out.test, 2, "test", holdout);
    return out;
}

} // namespace ritseg
