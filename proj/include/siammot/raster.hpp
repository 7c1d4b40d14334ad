#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "siammot/core.hpp"

namespace siammot {

/// Grayscale raster, intensities nominally in [0, 1], row-major.
struct Image {
    int width = 0;
    int height = 0;
    std::vector<double> data;

    Image() = default;
    Image(int w, int h, double fill = 0.0)
        : width(w), height(h), data(static_cast<std::size_t>(w) * h, fill) {}

    double& at(int x, int y) { return data[static_cast<std::size_t>(y) * width + x]; }
    double at(int x, int y) const { return data[static_cast<std::size_t>(y) * width + x]; }

    /// Border-replicated pixel lookup.
    double clamped(int x, int y) const {
        return at(std::clamp(x, 0, width - 1), std::clamp(y, 0, height - 1));
    }

    /// Bilinear sample at continuous pixel coordinates; pixel (i, j) has its
    /// center at (i + 0.5, j + 0.5).
    double sample(double fx, double fy) const {
        const double gx = fx - 0.5;
        const double gy = fy - 0.5;
        const int x0 = static_cast<int>(std::floor(gx));
        const int y0 = static_cast<int>(std::floor(gy));
        const double ax = gx - x0;
        const double ay = gy - y0;
        const double top = (1.0 - ax) * clamped(x0, y0) + ax * clamped(x0 + 1, y0);
        const double bot = (1.0 - ax) * clamped(x0, y0 + 1) + ax * clamped(x0 + 1, y0 + 1);
        return (1.0 - ay) * top + ay * bot;
    }

    bool empty() const { return data.empty(); }
};

/// Mean intensity of a G x G partition of `box`, each cell averaged with exact
/// pixel-overlap weights. Pixels outside the image contribute nothing.
inline std::vector<double> area_resample(const Image& img, const BBox& box, int grid_w,
                                         int grid_h) {
    std::vector<double> out(static_cast<std::size_t>(grid_w) * grid_h, 0.0);
    const double cw = box.w / grid_w;
    const double ch = box.h / grid_h;
    for (int gy = 0; gy < grid_h; ++gy) {
        const double y0 = box.y + gy * ch;
        const double y1 = y0 + ch;
        for (int gx = 0; gx < grid_w; ++gx) {
            const double x0 = box.x + gx * cw;
            const double x1 = x0 + cw;
            double sum = 0.0;
            double weight = 0.0;
            const int py0 = std::max(0, static_cast<int>(std::floor(y0)));
            const int py1 = std::min(img.height, static_cast<int>(std::ceil(y1)));
            const int px0 = std::max(0, static_cast<int>(std::floor(x0)));
            const int px1 = std::min(img.width, static_cast<int>(std::ceil(x1)));
            for (int py = py0; py < py1; ++py) {
                const double oy = std::min(y1, py + 1.0) - std::max(y0, double(py));
                if (oy <= 0.0) continue;
                for (int px = px0; px < px1; ++px) {
                    const double ox = std::min(x1, px + 1.0) - std::max(x0, double(px));
                    if (ox <= 0.0) continue;
                    sum += ox * oy * img.at(px, py);
                    weight += ox * oy;
                }
            }
            out[static_cast<std::size_t>(gy) * grid_w + gx] = weight > 0.0 ? sum / weight : 0.0;
        }
    }
    return out;
}

/// Writes an 8-bit binary PGM. `comment` lands in the header as "# comment".
inline void write_pgm(const Image& img, const std::string& path, const std::string& comment = {}) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    out << "P5\n";
    if (!comment.empty()) out << "# " << comment << "\n";
    out << img.width << " " << img.height << "\n255\n";
    std::vector<std::uint8_t> bytes(img.data.size());
    std::transform(img.data.begin(), img.data.end(), bytes.begin(), [](double v) {
        return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
    });
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

/// Reads an 8-bit binary PGM written by write_pgm (or any P5 file with
/// maxval 255). Comment lines in the header are skipped.
inline Image read_pgm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    auto token = [&]() {
        std::string t;
        while (in >> std::ws && in.peek() == '#') std::getline(in, t);
        in >> t;
        return t;
    };
    if (token() != "P5") throw std::runtime_error(path + ": not a binary PGM");
    int w = 0, h = 0, maxval = 0;
    try {
        w = std::stoi(token());
        h = std::stoi(token());
        maxval = std::stoi(token());
    } catch (const std::exception&) {
        throw std::runtime_error(path + ": malformed PGM header");
    }
    if (w <= 0 || h <= 0 || maxval != 255) throw std::runtime_error(path + ": unsupported PGM geometry or depth");
    in.get();
    std::vector<std::uint8_t> bytes(static_cast<std::size_t>(w) * h);
    in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (in.gcount() != static_cast<std::streamsize>(bytes.size())) throw std::runtime_error(path + ": truncated PGM");
    Image img(w, h);
    for (std::size_t i = 0; i < bytes.size(); ++i) img.data[i] = bytes[i] / 255.0;
    return img;
}

}  // namespace siammot
