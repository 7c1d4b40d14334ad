#pragma once

// Geometry primitives and the relative motion parameterization shared by
// every other header in the library.

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace siammot {

/// Axis-aligned box, top-left corner plus size, continuous pixel coordinates.
struct BBox {
    double x = 0.0;
    double y = 0.0;
    double w = 0.0;
    double h = 0.0;

    double right() const { return x + w; }
    double bottom() const { return y + h; }
    double cx() const { return x + 0.5 * w; }
    double cy() const { return y + 0.5 * h; }
    double area() const { return w * h; }

    bool valid() const {
        return std::isfinite(x) && std::isfinite(y) && std::isfinite(w) && std::isfinite(h) &&
               w > 0.0 && h > 0.0;
    }

    bool contains(double px, double py) const {
        return px > x && px < right() && py > y && py < bottom();
    }

    static BBox from_corners(double x0, double y0, double x1, double y1) {
        return BBox{x0, y0, x1 - x0, y1 - y0};
    }
    static BBox from_center(double cx, double cy, double w, double h) {
        return BBox{cx - 0.5 * w, cy - 0.5 * h, w, h};
    }

    friend bool operator==(const BBox&, const BBox&) = default;
};

/// Relative location shift and log-scale change between two boxes.
struct MotionDelta {
    double dx = 0.0;  // x-shift / previous width
    double dy = 0.0;  // y-shift / previous height
    double dw = 0.0;  // log width ratio
    double dh = 0.0;  // log height ratio

    friend bool operator==(const MotionDelta&, const MotionDelta&) = default;
};

struct Detection {
    BBox box;
    double confidence = 1.0;
};

inline double intersection_area(const BBox& a, const BBox& b) {
    const double iw = std::min(a.right(), b.right()) - std::max(a.x, b.x);
    const double ih = std::min(a.bottom(), b.bottom()) - std::max(a.y, b.y);
    if (iw <= 0.0 || ih <= 0.0) return 0.0;
    return iw * ih;
}

inline double iou(const BBox& a, const BBox& b) {
    const double inter = intersection_area(a, b);
    if (inter <= 0.0) return 0.0;
    const double uni = a.area() + b.area() - inter;
    return uni > 0.0 ? std::clamp(inter / uni, 0.0, 1.0) : 0.0;
}

inline MotionDelta encode_motion(const BBox& prev, const BBox& next) {
    return MotionDelta{(next.x - prev.x) / prev.w, (next.y - prev.y) / prev.h,
                       std::log(next.w / prev.w), std::log(next.h / prev.h)};
}

inline BBox decode_motion(const BBox& prev, const MotionDelta& m) {
    return BBox{prev.x + m.dx * prev.w, prev.y + m.dy * prev.h, prev.w * std::exp(m.dw),
                prev.h * std::exp(m.dh)};
}

/// A search region clipped to the frame, together with the unclipped
/// center-preserving expansion used for grid geometry.
struct SearchRegion {
    BBox clipped;
    BBox unclipped;
};

inline BBox clip_to_frame(const BBox& b, double frame_w, double frame_h) {
    const double x0 = std::clamp(b.x, 0.0, frame_w);
    const double y0 = std::clamp(b.y, 0.0, frame_h);
    const double x1 = std::clamp(b.right(), 0.0, frame_w);
    const double y1 = std::clamp(b.bottom(), 0.0, frame_h);
    return BBox::from_corners(x0, y0, x1, y1);
}

inline SearchRegion expand_search_region(const BBox& b, double r, double frame_w,
                                         double frame_h) {
    if (!(r > 1.0)) throw std::invalid_argument("expand_search_region: r must be > 1");
    SearchRegion out;
    out.unclipped = BBox::from_center(b.cx(), b.cy(), r * b.w, r * b.h);
    out.clipped = clip_to_frame(out.unclipped, frame_w, frame_h);
    // A box entirely outside the frame has nothing to clip to.
    if (!out.clipped.valid()) out.clipped = out.unclipped;
    return out;
}

}  // namespace siammot
