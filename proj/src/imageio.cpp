#include "enh/imageio.hpp"

#include <png.h>

#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <vector>

namespace enh {
namespace {

struct File {
    std::FILE* f = nullptr;
    ~File() { if (f) std::fclose(f); }
};

bool has_suffix(const std::string& s, const std::string& suf) {
    return s.size() >= suf.size() && s.compare(s.size() - suf.size(), suf.size(), suf) == 0;
}

[[noreturn]] void fail(const std::string& path, long offset, const std::string& msg) {
    throw IoError(path + " (byte " + std::to_string(offset < 0 ? 0 : offset) + "): " + msg);
}

void png_error_fn(png_structp png, png_const_charp msg) {
    // stash the message for the catch site, then longjmp out of libpng
    auto* err = static_cast<std::string*>(png_get_error_ptr(png));
    *err = msg;
    std::longjmp(png_jmpbuf(png), 1);
}

void png_warn_fn(png_structp, png_const_charp) {}

RgbImage load_png(const std::string& path) {
    File file;
    file.f = std::fopen(path.c_str(), "rb");
    if (!file.f) throw IoError("cannot open: " + path);
    std::string errmsg;
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &errmsg,
                                             png_error_fn, png_warn_fn);
    png_infop info = png_create_info_struct(png);
    RgbImage img;
    std::vector<png_bytep> rows;
    std::vector<unsigned char> buf;
    if (setjmp(png_jmpbuf(png))) {
        long off = std::ftell(file.f);
        png_destroy_read_struct(&png, &info, nullptr);
        fail(path, off, "malformed PNG: " + errmsg);
    }
    png_init_io(png, file.f);
    png_read_info(png, info);
    int bit_depth = png_get_bit_depth(png, info);
    if (bit_depth == 16) {
        png_destroy_read_struct(&png, &info, nullptr);
        fail(path, std::ftell(file.f), "16-bit PNG is not supported; convert to 8-bit");
    }
    int color_type = png_get_color_type(png, info);
    if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color_type == PNG_COLOR_TYPE_GRAY || color_type == PNG_COLOR_TYPE_GRAY_ALPHA)
        png_set_gray_to_rgb(png);
    if (bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    png_set_strip_alpha(png);
    png_read_update_info(png, info);
    int h = png_get_image_height(png, info);
    int w = png_get_image_width(png, info);
    img = RgbImage(h, w);
    buf.resize(static_cast<std::size_t>(h) * w * 3);
    rows.resize(h);
    for (int y = 0; y < h; ++y) rows[y] = buf.data() + static_cast<std::size_t>(y) * w * 3;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    for (std::size_t i = 0; i < img.count(); ++i) img.px[i] = buf[i] / 255.0;
    return img;
}

void save_png(const std::string& path, const RgbImage& img) {
    File file;
    file.f = std::fopen(path.c_str(), "wb");
    if (!file.f) throw IoError("cannot open for write: " + path);
    std::string errmsg;
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &errmsg,
                                              png_error_fn, png_warn_fn);
    png_infop info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError("PNG write failed: " + path + ": " + errmsg);
    }
    png_init_io(png, file.f);
    png_set_IHDR(png, info, img.w, img.h, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<unsigned char> row(static_cast<std::size_t>(img.w) * 3);
    for (int y = 0; y < img.h; ++y) {
        for (int x = 0; x < img.w; ++x)
            for (int c = 0; c < 3; ++c) {
                double v = img.at(y, x, c);
                v = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
                row[static_cast<std::size_t>(x) * 3 + c] =
                    static_cast<unsigned char>(std::lround(v * 255.0));
            }
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

RgbImage load_ppm(const std::string& path) {
    File file;
    file.f = std::fopen(path.c_str(), "rb");
    if (!file.f) throw IoError("cannot open: " + path);
    std::FILE* f = file.f;
    auto next_token = [&]() -> long {
        int c;
        do {
            c = std::fgetc(f);
            if (c == '#')  // comment to end of line
                while (c != '\n' && c != EOF) c = std::fgetc(f);
        } while (c == ' ' || c == '\t' || c == '\n' || c == '\r');
        if (c == EOF) fail(path, std::ftell(f), "unexpected end of PPM header");
        long v = 0;
        while (c >= '0' && c <= '9') {
            v = v * 10 + (c - '0');
            c = std::fgetc(f);
        }
        return v;
    };
    char m0 = std::fgetc(f), m1 = std::fgetc(f);
    if (m0 != 'P' || m1 != '6') fail(path, 0, "not a P6 PPM file");
    long w = next_token(), h = next_token(), maxval = next_token();
    if (w <= 0 || h <= 0) fail(path, std::ftell(f), "bad PPM dimensions");
    if (maxval != 255) fail(path, std::ftell(f), "only maxval 255 PPM is supported");
    RgbImage img(static_cast<int>(h), static_cast<int>(w));
    std::vector<unsigned char> buf(img.count());
    if (std::fread(buf.data(), 1, buf.size(), f) != buf.size())
        fail(path, std::ftell(f), "truncated PPM pixel data");
    for (std::size_t i = 0; i < img.count(); ++i) img.px[i] = buf[i] / 255.0;
    return img;
}

void save_ppm(const std::string& path, const RgbImage& img) {
    File file;
    file.f = std::fopen(path.c_str(), "wb");
    if (!file.f) throw IoError("cannot open for write: " + path);
    std::fprintf(file.f, "P6\n%d %d\n255\n", img.w, img.h);
    std::vector<unsigned char> buf(img.count());
    for (std::size_t i = 0; i < img.count(); ++i) {
        double v = img.px[i];
        v = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
        buf[i] = static_cast<unsigned char>(std::lround(v * 255.0));
    }
    if (std::fwrite(buf.data(), 1, buf.size(), file.f) != buf.size())
        throw IoError("PPM write failed: " + path);
}

}  // namespace

RgbImage load_image(const std::string& path) {
    if (has_suffix(path, ".ppm")) return load_ppm(path);
    return load_png(path);
}

void save_image(const std::string& path, const RgbImage& img) {
    if (has_suffix(path, ".ppm")) save_ppm(path, img);
    else save_png(path, img);
}

}  // namespace enh
