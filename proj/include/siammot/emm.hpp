#pragma once

// Explicit motion model: dense response maps over a search grid, the
// position/scale penalty, argmax decoding and the dense training loss. Maps
// come from one of two non-learned producers: normalized cross-correlation
// on rasters, or an oracle built from ground truth.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "siammot/core.hpp"
#include "siammot/kernels.hpp"
#include "siammot/raster.hpp"
#include "siammot/rng.hpp"

namespace siammot {

/// Maps grid cells to frame coordinates. (origin_x, origin_y) is the center
/// of cell (0, 0).
struct GridGeometry {
    double origin_x = 0.0;
    double origin_y = 0.0;
    double cell_w = 1.0;
    double cell_h = 1.0;
    int width = 2;
    int height = 2;

    double x_at(int ix) const { return origin_x + ix * cell_w; }
    double y_at(int iy) const { return origin_y + iy * cell_h; }
    std::size_t size() const { return static_cast<std::size_t>(width) * height; }
    std::size_t index(int ix, int iy) const { return static_cast<std::size_t>(iy) * width + ix; }

    void validate() const {
        if (!(cell_w > 0.0) || !(cell_h > 0.0) || width < 2 || height < 2)
            throw std::invalid_argument("GridGeometry: need positive cells and at least 2x2");
    }

    /// Partition `region` into width x height cells.
    static GridGeometry over(const BBox& region, int width, int height) {
        GridGeometry g;
        g.width = width;
        g.height = height;
        g.cell_w = region.w / width;
        g.cell_h = region.h / height;
        g.origin_x = region.x + 0.5 * g.cell_w;
        g.origin_y = region.y + 0.5 * g.cell_h;
        g.validate();
        return g;
    }
};

struct ResponseMaps {
    GridGeometry geometry;
    std::vector<double> v;   // visibility per cell, in [0, 1]
    std::vector<Offsets> p;  // (l, t, r, b) per cell, pixels, non-negative

    ResponseMaps() = default;
    explicit ResponseMaps(const GridGeometry& g)
        : geometry(g), v(g.size(), 0.0), p(g.size(), Offsets{}) {}
};

// ---------------------------------------------------------------------------
// Channel-wise cross-correlation.

struct FeatureMap {
    int channels = 0;
    int height = 0;
    int width = 0;
    std::vector<double> data;

    FeatureMap() = default;
    FeatureMap(int c, int h, int w, double fill = 0.0)
        : channels(c), height(h), width(w), data(static_cast<std::size_t>(c) * h * w, fill) {}

    double& at(int c, int y, int x) {
        return data[(static_cast<std::size_t>(c) * height + y) * width + x];
    }
    double at(int c, int y, int x) const {
        return data[(static_cast<std::size_t>(c) * height + y) * width + x];
    }
};

/// Valid-mode sliding dot product of each template channel over the matching
/// search channel.
inline FeatureMap cross_correlate(const FeatureMap& search, const FeatureMap& tmpl) {
    if (search.channels != tmpl.channels)
        throw std::invalid_argument("cross_correlate: channel count mismatch");
    if (tmpl.height > search.height || tmpl.width > search.width || tmpl.height < 1 || tmpl.width < 1)
        throw std::invalid_argument("cross_correlate: template larger than search");
    FeatureMap out(search.channels, search.height - tmpl.height + 1, search.width - tmpl.width + 1);
    for (int c = 0; c < search.channels; ++c) {
        for (int oy = 0; oy < out.height; ++oy) {
            for (int ox = 0; ox < out.width; ++ox) {
                double s = 0.0;
                for (int ty = 0; ty < tmpl.height; ++ty) {
                    const double* srow = &search.data[(static_cast<std::size_t>(c) * search.height + oy + ty) * search.width + ox];
                    const double* trow = &tmpl.data[(static_cast<std::size_t>(c) * tmpl.height + ty) * tmpl.width];
                    for (int tx = 0; tx < tmpl.width; ++tx) s += srow[tx] * trow[tx];
                }
                out.at(c, oy, ox) = s;
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Penalty map and decoding.

struct PenaltyParams {
    double lambda = 0.4;
    double sigma_scale = 0.5;
};

enum class VisibilityReadout { Raw, Penalized };

namespace detail {

inline int nearest_cell(double coord, double origin, double cell, int count) {
    const long idx = std::lround((coord - origin) / cell);
    return static_cast<int>(std::clamp<long>(idx, 0, count - 1));
}

/// Raised-cosine profile along one axis: 1 at `center`, 0 at both ends.
inline std::vector<double> hann_profile(int count, int center) {
    std::vector<double> w(count, 0.0);
    for (int i = 0; i < count; ++i) {
        if (i == center) {
            w[i] = 1.0;
            continue;
        }
        const int half = i < center ? center : count - 1 - center;
        const double frac = std::abs(i - center) / static_cast<double>(half);
        w[i] = 0.5 * (1.0 + std::cos(std::numbers::pi * frac));
    }
    return w;
}

}  // namespace detail

/// Cosine window around the cell nearest prev_box's center.
inline std::vector<double> cosine_window(const GridGeometry& g, const BBox& prev_box) {
    const int cx = detail::nearest_cell(prev_box.cx(), g.origin_x, g.cell_w, g.width);
    const int cy = detail::nearest_cell(prev_box.cy(), g.origin_y, g.cell_h, g.height);
    const auto wx = detail::hann_profile(g.width, cx);
    const auto wy = detail::hann_profile(g.height, cy);
    std::vector<double> out(g.size());
    for (int iy = 0; iy < g.height; ++iy)
        for (int ix = 0; ix < g.width; ++ix) out[g.index(ix, iy)] = wx[ix] * wy[iy];
    return out;
}

/// Gaussian on the log width and height change of a candidate versus prev_box.
inline double scale_similarity(const Offsets& p, const BBox& prev_box, double sigma_scale) {
    const double w = p[0] + p[2];
    const double h = p[1] + p[3];
    if (!(w > 0.0) || !(h > 0.0)) return 0.0;
    const double dw = std::log(w / prev_box.w);
    const double dh = std::log(h / prev_box.h);
    return std::exp(-(dw * dw + dh * dh) / (2.0 * sigma_scale * sigma_scale));
}

inline std::vector<double> penalty_map(const GridGeometry& g, std::span<const Offsets> p,
                                       const BBox& prev_box, const PenaltyParams& params) {
    if (p.size() != g.size()) throw std::invalid_argument("penalty_map: offset map size mismatch");
    if (params.lambda < 0.0 || params.lambda > 1.0)
        throw std::invalid_argument("penalty_map: lambda must be in [0, 1]");
    std::vector<double> eta = cosine_window(g, prev_box);
    for (std::size_t i = 0; i < eta.size(); ++i) {
        const double s = params.lambda < 1.0 ? scale_similarity(p[i], prev_box, params.sigma_scale) : 0.0;
        eta[i] = params.lambda * eta[i] + (1.0 - params.lambda) * s;
    }
    return eta;
}

/// Box encoded by the offsets at a frame location.
inline BBox box_from_offsets(double x, double y, const Offsets& p) {
    constexpr double kMinSide = 1e-3;
    return BBox{x - p[0], y - p[1], std::max(p[0] + p[2], kMinSide), std::max(p[1] + p[3], kMinSide)};
}

struct DecodeResult {
    BBox box;
    double visibility = 0.0;
    double score = 0.0;
    int cell_x = 0;
    int cell_y = 0;
};

/// Argmax of v * penalty (first cell in row-major order wins ties); the box
/// is decoded from the offsets at that cell.
inline DecodeResult decode_response(const ResponseMaps& maps, const BBox& prev_box,
                                    const PenaltyParams& params,
                                    VisibilityReadout readout = VisibilityReadout::Raw) {
    const auto& g = maps.geometry;
    const auto eta = penalty_map(g, maps.p, prev_box, params);
    std::size_t best = 0;
    double best_score = -1.0;
    for (std::size_t i = 0; i < eta.size(); ++i) {
        const double s = maps.v[i] * eta[i];
        if (s > best_score) {
            best_score = s;
            best = i;
        }
    }
    DecodeResult r;
    r.cell_x = static_cast<int>(best % g.width);
    r.cell_y = static_cast<int>(best / g.width);
    r.score = best_score;
    r.visibility = readout == VisibilityReadout::Raw ? maps.v[best] : best_score;
    r.box = box_from_offsets(g.x_at(r.cell_x), g.y_at(r.cell_y), maps.p[best]);
    return r;
}

// ---------------------------------------------------------------------------
// Dense training loss.

struct EmmLossResult {
    double loss = 0.0;
    std::vector<double> d_v;
    std::vector<Offsets> d_p;
};

/// Ground-truth target offsets of a location inside `gt`.
inline Offsets target_offsets(double x, double y, const BBox& gt) {
    return Offsets{x - gt.x, y - gt.y, gt.right() - x, gt.bottom() - y};
}

/// Focal loss over every cell plus centerness-weighted -ln IOU over the
/// cells whose centers fall inside gt_box.
inline EmmLossResult emm_loss(const ResponseMaps& maps, const BBox& gt_box,
                              const FocalParams& focal = {}) {
    const auto& g = maps.geometry;
    EmmLossResult r;
    r.d_v.assign(g.size(), 0.0);
    r.d_p.assign(g.size(), Offsets{});
    for (int iy = 0; iy < g.height; ++iy) {
        for (int ix = 0; ix < g.width; ++ix) {
            const std::size_t i = g.index(ix, iy);
            const double x = g.x_at(ix);
            const double y = g.y_at(iy);
            const bool inside = gt_box.contains(x, y);
            const LossGrad f = focal_loss(maps.v[i], inside ? 1 : 0, focal);
            r.loss += f.loss;
            r.d_v[i] = f.grad;
            if (!inside) continue;
            const double w = centerness(x, y, gt_box);
            const IouLossResult il = iou_loss(maps.p[i], target_offsets(x, y, gt_box));
            r.loss += w * il.loss;
            for (int k = 0; k < 4; ++k) r.d_p[i][k] = w * il.grad[k];
        }
    }
    return r;
}

// ---------------------------------------------------------------------------
// Normalized cross-correlation matcher.

enum class NccVisibility {
    Rectified,  // v = max(ncc, 0)
    Affine,     // v = (ncc + 1) / 2
};

struct NccParams {
    std::vector<double> scales{0.95, 1.0, 1.05};
    double stride = 2.0;
    int max_patch = 16;  // template samples per axis
    NccVisibility visibility = NccVisibility::Rectified;
    bool refine = true;    // sub-stride refinement of the decoded box
    double context = 1.0;  // patches cover the box scaled by this factor about its center
};

/// Grayscale template sampled on a fixed lattice inside its box.
struct NccTemplate {
    BBox box;
    double context = 1.0;
    int cols = 0;
    int rows = 0;
    std::vector<double> values;  // zero-mean
    double norm = 0.0;           // sqrt of the sum of squares of `values`
};

namespace detail {

inline void sample_patch(const Image& img, const BBox& box, int cols, int rows,
                         std::vector<double>& out) {
    // Separable bilinear weights, identical to Image::sample.
    thread_local std::vector<int> xi0, xi1;
    thread_local std::vector<double> ax;
    out.resize(static_cast<std::size_t>(cols) * rows);
    xi0.resize(cols);
    xi1.resize(cols);
    ax.resize(cols);
    const double sx = box.w / cols;
    const double sy = box.h / rows;
    for (int i = 0; i < cols; ++i) {
        const double gx = box.x + (i + 0.5) * sx - 0.5;
        const int x0 = static_cast<int>(std::floor(gx));
        ax[i] = gx - x0;
        xi0[i] = std::clamp(x0, 0, img.width - 1);
        xi1[i] = std::clamp(x0 + 1, 0, img.width - 1);
    }
    for (int j = 0; j < rows; ++j) {
        const double gy = box.y + (j + 0.5) * sy - 0.5;
        const int y0 = static_cast<int>(std::floor(gy));
        const double ay = gy - y0;
        const double* r0 = &img.data[static_cast<std::size_t>(std::clamp(y0, 0, img.height - 1)) * img.width];
        const double* r1 = &img.data[static_cast<std::size_t>(std::clamp(y0 + 1, 0, img.height - 1)) * img.width];
        double* dst = &out[static_cast<std::size_t>(j) * cols];
        for (int i = 0; i < cols; ++i) {
            const double top = (1.0 - ax[i]) * r0[xi0[i]] + ax[i] * r0[xi1[i]];
            const double bot = (1.0 - ax[i]) * r1[xi0[i]] + ax[i] * r1[xi1[i]];
            dst[i] = (1.0 - ay) * top + ay * bot;
        }
    }
}

inline BBox context_window(const BBox& box, double context) {
    return BBox::from_center(box.cx(), box.cy(), context * box.w, context * box.h);
}

inline double center_and_norm(std::vector<double>& v) {
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double ss = 0.0;
    for (double& x : v) {
        x -= mean;
        ss += x * x;
    }
    return std::sqrt(ss);
}

}  // namespace detail

inline NccTemplate make_ncc_template(const Image& frame, const BBox& box, const NccParams& params = {}) {
    if (!box.valid()) throw std::invalid_argument("ncc template: box must have positive area");
    NccTemplate t;
    t.box = box;
    t.context = params.context;
    const BBox window = detail::context_window(box, t.context);
    t.cols = std::clamp(static_cast<int>(std::lround(window.w)), 2, params.max_patch);
    t.rows = std::clamp(static_cast<int>(std::lround(window.h)), 2, params.max_patch);
    detail::sample_patch(frame, window, t.cols, t.rows, t.values);
    t.norm = detail::center_and_norm(t.values);
    return t;
}

/// Normalized cross-correlation of two equally sized patches; zero when either
/// patch is constant.
inline double ncc(std::span<const double> a, std::span<const double> b) {
    const auto n = static_cast<double>(a.size());
    double ma = 0.0, mb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= n;
    mb /= n;
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double da = a[i] - ma, db = b[i] - mb;
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    constexpr double kFlat = 1e-12;
    if (saa < kFlat || sbb < kFlat) return 0.0;
    return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

/// Grid with roughly `stride`-pixel cells spanning `search_box`.
inline GridGeometry stride_grid(const BBox& search_box, double stride) {
    const int nx = std::max(2, static_cast<int>(std::floor(search_box.w / stride)));
    const int ny = std::max(2, static_cast<int>(std::floor(search_box.h / stride)));
    return GridGeometry::over(search_box, nx, ny);
}

inline ResponseMaps ncc_match(const NccTemplate& tmpl, const Image& frame_curr,
                              const BBox& search_box, const NccParams& params = {}) {
    ResponseMaps maps(stride_grid(search_box, params.stride));
    const auto& g = maps.geometry;
    const int cols = tmpl.cols, rows = tmpl.rows;
    const std::size_t nx = static_cast<std::size_t>(g.width), ny = static_cast<std::size_t>(g.height);
    std::vector<double> best_v(g.size(), -1.0), best_scale(g.size(), 1.0);
    std::vector<int> xi0(nx * cols), xi1(nx * cols), yi0(ny * rows), yi1(ny * rows);
    std::vector<double> ax(nx * cols), ay(ny * rows), cand(static_cast<std::size_t>(cols) * rows);
    std::vector<std::vector<double>> hrow(frame_curr.height);
    std::vector<char> have_row(frame_curr.height);

    // Same bilinear arithmetic as sample_patch; horizontally interpolated rows
    // are shared by every candidate of one scale.
    for (double s : params.scales) {
        const double w = s * tmpl.context * tmpl.box.w, h = s * tmpl.context * tmpl.box.h;
        for (std::size_t ix = 0; ix < nx; ++ix) {
            const BBox c = BBox::from_center(g.x_at(static_cast<int>(ix)), g.y_at(0), w, h);
            const double sx = c.w / cols;
            for (int i = 0; i < cols; ++i) {
                const double gx = c.x + (i + 0.5) * sx - 0.5;
                const int x0 = static_cast<int>(std::floor(gx));
                const std::size_t k = ix * cols + i;
                ax[k] = gx - x0;
                xi0[k] = std::clamp(x0, 0, frame_curr.width - 1);
                xi1[k] = std::clamp(x0 + 1, 0, frame_curr.width - 1);
            }
        }
        for (std::size_t iy = 0; iy < ny; ++iy) {
            const BBox c = BBox::from_center(g.x_at(0), g.y_at(static_cast<int>(iy)), w, h);
            const double sy = c.h / rows;
            for (int j = 0; j < rows; ++j) {
                const double gy = c.y + (j + 0.5) * sy - 0.5;
                const int y0 = static_cast<int>(std::floor(gy));
                const std::size_t k = iy * rows + j;
                ay[k] = gy - y0;
                yi0[k] = std::clamp(y0, 0, frame_curr.height - 1);
                yi1[k] = std::clamp(y0 + 1, 0, frame_curr.height - 1);
            }
        }
        std::fill(have_row.begin(), have_row.end(), 0);
        auto row = [&](int y) -> const double* {
            if (!have_row[y]) {
                auto& out = hrow[y];
                out.resize(nx * cols);
                const double* r = &frame_curr.data[static_cast<std::size_t>(y) * frame_curr.width];
                for (std::size_t k = 0; k < out.size(); ++k) out[k] = (1.0 - ax[k]) * r[xi0[k]] + ax[k] * r[xi1[k]];
                have_row[y] = 1;
            }
            return hrow[y].data();
        };

        for (std::size_t iy = 0; iy < ny; ++iy) {
            for (std::size_t ix = 0; ix < nx; ++ix) {
                for (int j = 0; j < rows; ++j) {
                    const std::size_t ky = iy * rows + j;
                    const double* top = row(yi0[ky]) + ix * cols;
                    const double* bot = row(yi1[ky]) + ix * cols;
                    const double a = ay[ky];
                    double* dst = &cand[static_cast<std::size_t>(j) * cols];
                    for (int i = 0; i < cols; ++i) dst[i] = (1.0 - a) * top[i] + a * bot[i];
                }
                const double cn = detail::center_and_norm(cand);
                double corr = 0.0;
                if (tmpl.norm > 1e-6 && cn > 1e-6) {
                    double dot = 0.0;
                    for (std::size_t k = 0; k < cand.size(); ++k) dot += cand[k] * tmpl.values[k];
                    corr = std::clamp(dot / (tmpl.norm * cn), -1.0, 1.0);
                }
                const double v = params.visibility == NccVisibility::Rectified ? std::max(corr, 0.0)
                                                                               : 0.5 * (corr + 1.0);
                const std::size_t idx = g.index(static_cast<int>(ix), static_cast<int>(iy));
                if (v > best_v[idx]) {
                    best_v[idx] = v;
                    best_scale[idx] = s;
                }
            }
        }
    }
    for (std::size_t idx = 0; idx < g.size(); ++idx) {
        maps.v[idx] = best_v[idx];
        const double hw = 0.5 * best_scale[idx] * tmpl.box.w;
        const double hh = 0.5 * best_scale[idx] * tmpl.box.h;
        maps.p[idx] = Offsets{hw, hh, hw, hh};
    }
    return maps;
}

/// Correlation of the template with the frame patch under `box`.
inline double ncc_at(const NccTemplate& tmpl, const Image& frame, const BBox& box) {
    std::vector<double> cand;
    detail::sample_patch(frame, detail::context_window(box, tmpl.context), tmpl.cols, tmpl.rows, cand);
    const double cn = detail::center_and_norm(cand);
    if (tmpl.norm <= 1e-6 || cn <= 1e-6) return 0.0;
    double dot = 0.0;
    for (std::size_t k = 0; k < cand.size(); ++k) dot += cand[k] * tmpl.values[k];
    return std::clamp(dot / (tmpl.norm * cn), -1.0, 1.0);
}

/// Coordinate ascent on (center, scale) starting from `box`, with the step
/// halved until it reaches a quarter pixel. The aspect ratio is kept.
inline BBox ncc_refine(const NccTemplate& tmpl, const Image& frame, const BBox& box, double stride = 2.0) {
    double cx = box.cx(), cy = box.cy(), s = box.w / tmpl.box.w;
    auto score = [&](double x, double y, double sc) {
        return ncc_at(tmpl, frame, BBox::from_center(x, y, sc * tmpl.box.w, sc * tmpl.box.h));
    };
    double best = score(cx, cy, s);
    for (double step = 0.5 * stride; step >= 0.25; step *= 0.5) {
        const double ds = step / std::max(tmpl.box.w, 1.0);
        for (bool moved = true; moved;) {
            moved = false;
            const double cand[6][3] = {{cx + step, cy, s}, {cx - step, cy, s}, {cx, cy + step, s},
                                       {cx, cy - step, s}, {cx, cy, s + ds}, {cx, cy, s - ds}};
            for (const auto& c : cand) {
                if (c[2] <= 0.0) continue;
                const double v = score(c[0], c[1], c[2]);
                if (v > best + 1e-12) {
                    best = v;
                    cx = c[0];
                    cy = c[1];
                    s = c[2];
                    moved = true;
                }
            }
        }
    }
    return BBox::from_center(cx, cy, s * tmpl.box.w, s * tmpl.box.h);
}

inline ResponseMaps ncc_match(const Image& frame_prev, const Image& frame_curr,
                              const BBox& template_box, const BBox& search_box,
                              const NccParams& params = {}) {
    return ncc_match(make_ncc_template(frame_prev, template_box, params), frame_curr, search_box, params);
}

// ---------------------------------------------------------------------------
// Oracle matcher: maps built directly from the next ground-truth box.

struct OracleNoise {
    double jitter_sigma = 0.0;      // pixels, applied to the gt center
    double visibility_sigma = 0.0;  // additive noise on inside cells
    double absent_level = 0.05;     // v everywhere when the target is absent
};

inline ResponseMaps oracle_match(const std::optional<BBox>& gt_next, const GridGeometry& geometry,
                                 const OracleNoise& noise = {}, Rng* rng = nullptr) {
    geometry.validate();
    ResponseMaps maps(geometry);
    const auto& g = geometry;
    if (!gt_next) {
        const double hw = 0.25 * g.cell_w * g.width;
        const double hh = 0.25 * g.cell_h * g.height;
        std::fill(maps.v.begin(), maps.v.end(), noise.absent_level);
        std::fill(maps.p.begin(), maps.p.end(), Offsets{hw, hh, hw, hh});
        return maps;
    }
    BBox gt = *gt_next;
    if (rng != nullptr && noise.jitter_sigma > 0.0) {
        gt.x += rng->normal(0.0, noise.jitter_sigma);
        gt.y += rng->normal(0.0, noise.jitter_sigma);
    }
    for (int iy = 0; iy < g.height; ++iy) {
        for (int ix = 0; ix < g.width; ++ix) {
            const std::size_t i = g.index(ix, iy);
            const double x = g.x_at(ix), y = g.y_at(iy);
            double v = gt.contains(x, y) ? 1.0 : 0.0;
            if (v > 0.0 && rng != nullptr && noise.visibility_sigma > 0.0)
                v = std::clamp(v + rng->normal(0.0, noise.visibility_sigma), 0.0, 1.0);
            maps.v[i] = v;
            Offsets o = target_offsets(x, y, gt);
            for (double& c : o) c = std::max(c, 0.0);
            maps.p[i] = o;
        }
    }
    return maps;
}

}  // namespace siammot
