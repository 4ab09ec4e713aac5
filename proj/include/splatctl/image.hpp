#pragma once

#include <cstddef>
#include <vector>

namespace splatctl {

// H x W x 3 image, row-major interleaved RGB, linear values nominally in [0, 1].
struct Image {
    int width = 0;
    int height = 0;
    std::vector<double> data;

    Image() = default;
    Image(int w, int h, double fill = 0.0)
        : width(w), height(h), data(static_cast<std::size_t>(w) * static_cast<std::size_t>(h) * 3, fill) {}

    std::size_t pixel_count() const { return static_cast<std::size_t>(width) * static_cast<std::size_t>(height); }
    double& at(int x, int y, int c) { return data[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
    double at(int x, int y, int c) const { return data[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
    bool same_shape(const Image& o) const { return width == o.width && height == o.height; }
};

} // namespace splatctl
