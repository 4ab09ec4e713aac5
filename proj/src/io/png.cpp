#include "splatctl/io/png.hpp"

#include "splatctl/error.hpp"

#include <png.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

namespace splatctl {

static_assert(std::endian::native == std::endian::little, "raw dumps assume a little-endian host");

namespace {

constexpr char kRawMagic[8] = {'S', 'P', 'L', 'I', 'M', 'G', '6', '4'};

struct ImageGuard {
    png_image* img;
    ~ImageGuard() { png_image_free(img); }
};

} // namespace

Image read_png(const std::filesystem::path& path) {
    png_image pi;
    std::memset(&pi, 0, sizeof pi);
    pi.version = PNG_IMAGE_VERSION;
    ImageGuard guard{&pi};
    if (!png_image_begin_read_from_file(&pi, path.c_str())) {
        throw ImageError(path.string() + ": " + pi.message);
    }
    pi.format = PNG_FORMAT_RGBA;
    std::vector<unsigned char> rgba(PNG_IMAGE_SIZE(pi));
    if (!png_image_finish_read(&pi, nullptr, rgba.data(), 0, nullptr)) {
        throw ImageError(path.string() + ": " + pi.message);
    }
    Image img(static_cast<int>(pi.width), static_cast<int>(pi.height));
    for (std::size_t p = 0; p < img.pixel_count(); ++p) {
        const double a = rgba[4 * p + 3] / 255.0;
        for (int c = 0; c < 3; ++c) img.data[3 * p + c] = rgba[4 * p + c] / 255.0 * a;
    }
    return img;
}

void write_png(const std::filesystem::path& path, const Image& image) {
    std::vector<unsigned char> bytes(image.data.size());
    std::transform(image.data.begin(), image.data.end(), bytes.begin(), [](double v) {
        return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
    });
    png_image pi;
    std::memset(&pi, 0, sizeof pi);
    pi.version = PNG_IMAGE_VERSION;
    pi.width = static_cast<png_uint_32>(image.width);
    pi.height = static_cast<png_uint_32>(image.height);
    pi.format = PNG_FORMAT_RGB;
    ImageGuard guard{&pi};
    if (!png_image_write_to_file(&pi, path.c_str(), 0, bytes.data(), 0, nullptr)) {
        throw ImageError(path.string() + ": " + pi.message);
    }
}

void write_raw_image(const std::filesystem::path& path, const Image& image) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ImageError("cannot create raw image: " + path.string());
    const std::int32_t dims[2] = {image.width, image.height};
    out.write(kRawMagic, sizeof kRawMagic);
    out.write(reinterpret_cast<const char*>(dims), sizeof dims);
    out.write(reinterpret_cast<const char*>(image.data.data()),
              static_cast<std::streamsize>(image.data.size() * sizeof(double)));
    if (!out) throw ImageError("write failed: " + path.string());
}

Image read_raw_image(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ImageError("cannot open raw image: " + path.string());
    char magic[8];
    std::int32_t dims[2];
    in.read(magic, sizeof magic);
    in.read(reinterpret_cast<char*>(dims), sizeof dims);
    if (!in || std::memcmp(magic, kRawMagic, sizeof magic) != 0 || dims[0] < 0 || dims[1] < 0) {
        throw ImageError("malformed raw image: " + path.string());
    }
    Image img(dims[0], dims[1]);
    in.read(reinterpret_cast<char*>(img.data.data()), static_cast<std::streamsize>(img.data.size() * sizeof(double)));
    if (!in) throw ImageError("truncated raw image: " + path.string());
    return img;
}

} // namespace splatctl
