#include "ritseg/image_io.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <memory>
#include <vector>

namespace ritseg {

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

std::vector<std::uint8_t> read_png_bytes(const std::filesystem::path& path, int& height, int& width) {
    FilePtr f(std::fopen(path.c_str(), "rb"));
    if (!f) throw DataError("cannot open " + path.string());

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw DataError("png: allocation failure");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw DataError("png: allocation failure");
    }
    std::vector<std::uint8_t> out;
    std::vector<png_bytep> rows;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw DataError("png: failed to decode " + path.string());
    }
    png_init_io(png, f.get());
    png_read_info(png, info);

    const png_uint_32 w = png_get_image_width(png, info);
    const png_uint_32 h = png_get_image_height(png, info);
    const int color = png_get_color_type(png, info);
    const int depth = png_get_bit_depth(png, info);

    // Normalize everything to 8-bit single-channel gray.
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (depth == 16) png_set_strip_16(png);
    if (depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    if (color == PNG_COLOR_TYPE_RGB || color == PNG_COLOR_TYPE_RGB_ALPHA ||
        color == PNG_COLOR_TYPE_PALETTE)
        png_set_rgb_to_gray_fixed(png, 1, -1, -1);
    png_set_interlace_handling(png);
    png_read_update_info(png, info);

    out.assign(static_cast<std::size_t>(h) * w, 0);
    rows.resize(h);
    for (png_uint_32 r = 0; r < h; ++r) rows[r] = out.data() + static_cast<std::size_t>(r) * w;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);

    height = static_cast<int>(h);
    width = static_cast<int>(w);
    return out;
}

void write_png_bytes(const std::filesystem::path& path, const std::uint8_t* data, int height, int width) {
    FilePtr f(std::fopen(path.c_str(), "wb"));
    if (!f) throw DataError("cannot create " + path.string());
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw DataError("png: allocation failure");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw DataError("png: allocation failure");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw DataError("png: failed to encode " + path.string());
    }
    png_init_io(png, f.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8,
                 PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int r = 0; r < height; ++r)
        png_write_row(png, const_cast<png_bytep>(data + static_cast<std::size_t>(r) * width));
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

int pgm_token(std::FILE* f) {
    // Next integer token, skipping whitespace and '#' comments.
    int c = std::fgetc(f);
    for (;;) {
        while (c == ' ' || c == '\t' || c == '\n' || c == '\r') c = std::fgetc(f);
        if (c == '#') {
            while (c != '\n' && c != EOF) c = std::fgetc(f);
            continue;
        }
        break;
    }
    int value = 0;
    bool any = false;
    while (c >= '0' && c <= '9') {
        value = value * 10 + (c - '0');
        any = true;
        c = std::fgetc(f);
    }
    if (!any) throw DataError("pgm: malformed header");
    return value;
}

std::vector<std::uint8_t> read_pgm_bytes(const std::filesystem::path& path, int& height, int& width) {
    FilePtr f(std::fopen(path.c_str(), "rb"));
    if (!f) throw DataError("cannot open " + path.string());
    char magic[2];
    if (std::fread(magic, 1, 2, f.get()) != 2 || magic[0] != 'P' || magic[1] != '5')
        throw DataError("pgm: not a binary P5 file: " + path.string());
    width = pgm_token(f.get());
    height = pgm_token(f.get());
    const int maxval = pgm_token(f.get());
    if (maxval != 255) throw DataError("pgm: only maxval 255 supported, got " + std::to_string(maxval));
    if (height <= 0 || width <= 0) throw DataError("pgm: bad dimensions");
    std::vector<std::uint8_t> out(static_cast<std::size_t>(height) * width);
    if (std::fread(out.data(), 1, out.size(), f.get()) != out.size())
        throw DataError("pgm: truncated pixel data in " + path.string());
    return out;
}

void write_pgm_bytes(const std::filesystem::path& path, const std::uint8_t* data, int height, int width) {
    FilePtr f(std::fopen(path.c_str(), "wb"));
    if (!f) throw DataError("cannot create " + path.string());
    std::fprintf(f.get(), "P5\n%d %d\n255\n", width, height);
    if (std::fwrite(data, 1, static_cast<std::size_t>(height) * width, f.get()) !=
        static_cast<std::size_t>(height) * width)
        throw DataError("pgm: short write to " + path.string());
}

bool is_png(const std::filesystem::path& path) {
    FilePtr f(std::fopen(path.c_str(), "rb"));
    if (!f) throw DataError("cannot open " + path.string());
    std::uint8_t sig[8] = {0};
    const std::size_t n = std::fread(sig, 1, 8, f.get());
    return n == 8 && png_sig_cmp(sig, 0, 8) == 0;
}

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path, int& height, int& width) {
    return is_png(path) ? read_png_bytes(path, height, width) : read_pgm_bytes(path, height, width);
}

void write_bytes(const std::filesystem::path& path, const std::uint8_t* data, int height, int width) {
    if (path.extension() == ".png")
        write_png_bytes(path, data, height, width);
    else
        write_pgm_bytes(path, data, height, width);
}

} // namespace

GrayImage read_gray(const std::filesystem::path& path) {
    int h = 0, w = 0;
    const auto bytes = read_bytes(path, h, w);
    GrayImage img(h, w);
    for (std::size_t i = 0; i < bytes.size(); ++i)
        img.v[i] = static_cast<float>(bytes[i]) / 255.0f;
    return img;
}

void write_gray(const std::filesystem::path& path, const GrayImage& img) {
    std::vector<std::uint8_t> bytes(img.size());
    for (std::size_t i = 0; i < bytes.size(); ++i) {
        const float v = img.v[i];
        const int q = static_cast<int>(std::lround(v * 255.0f));
        bytes[i] = static_cast<std::uint8_t>(q < 0 ? 0 : (q > 255 ? 255 : q));
    }
    write_bytes(path, bytes.data(), img.height, img.width);
}

LabelMap read_label(const std::filesystem::path& path) {
    int h = 0, w = 0;
    const auto bytes = read_bytes(path, h, w);
    LabelMap labels(h, w);
    for (std::size_t i = 0; i < bytes.size(); ++i) {
        if (bytes[i] > 3)
            throw DataError("label value " + std::to_string(bytes[i]) + " out of range in " + path.string());
        labels.ids[i] = bytes[i];
    }
    return labels;
}

void write_label(const std::filesystem::path& path, const LabelMap& labels) {
    write_bytes(path, labels.ids.data(), labels.height, labels.width);
}

void write_label_view(const std::filesystem::path& path, const LabelMap& labels) {
    std::vector<std::uint8_t> bytes(labels.size());
    for (std::size_t i = 0; i < bytes.size(); ++i)
        bytes[i] = static_cast<std::uint8_t>(labels.ids[i] * 85);
    write_bytes(path, bytes.data(), labels.height, labels.width);
}

} // namespace ritseg
