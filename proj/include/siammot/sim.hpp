#pragma once

// Deterministic synthetic scenarios: ground-truth trajectories under preset
// motion regimes, a detector noise model, a raster renderer and per-second
// motion histograms.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "siammot/core.hpp"
#include "siammot/kernels.hpp"
#include "siammot/mot_io.hpp"
#include "siammot/raster.hpp"
#include "siammot/rng.hpp"

namespace siammot {

enum class Preset { SlowCrowded, FastCamera, Mixed };

inline const char* to_string(Preset p) {
    switch (p) {
        case Preset::SlowCrowded: return "slow-crowded";
        case Preset::FastCamera: return "fast-camera";
        case Preset::Mixed: return "mixed";
    }
    return "?";
}

inline std::optional<Preset> parse_preset(std::string_view s) {
    if (s == "slow-crowded") return Preset::SlowCrowded;
    if (s == "fast-camera") return Preset::FastCamera;
    if (s == "mixed") return Preset::Mixed;
    return std::nullopt;
}

struct OcclusionEvent {
    int track = 0;
    int start = 0;
    int duration = 1;
};

/// Motion regime. Speeds are in object widths per second.
struct MotionProfile {
    double object_speed = 0.25;
    double speed_walk = 0.1;       // velocity random-walk std per sqrt(second)
    double fast_fraction = 0.0;    // share of objects moving at fast_speed
    double fast_speed = 1.5;
    double camera_amplitude = 0.0; // pixels, sinusoidal pan amplitude along x (y uses half)
    double camera_period = 4.0;    // seconds
    double camera_shake = 0.0;     // pixels per frame, Gaussian
    double min_width = 16.0;
    double max_width = 24.0;
    double aspect = 2.2;           // height / width
};

inline MotionProfile preset_profile(Preset p) {
    MotionProfile m;
    switch (p) {
        case Preset::SlowCrowded:
            break;
        case Preset::FastCamera:
            m.object_speed = 0.3;
            m.camera_amplitude = 32.0;
            m.camera_period = 3.0;
            m.camera_shake = 1.5;
            break;
        case Preset::Mixed:
            m.fast_fraction = 0.5;
            m.fast_speed = 1.5;
            m.speed_walk = 0.2;
            break;
    }
    return m;
}

struct AutoOcclusions {
    int count = 0;
    int min_duration = 5;
    int max_duration = 20;
};

struct ScenarioConfig {
    Preset preset = Preset::SlowCrowded;
    int frames = 150;
    double fps = 30.0;
    int frame_w = 320;
    int frame_h = 240;
    int n_objects = 10;
    std::vector<OcclusionEvent> occlusions;
    AutoOcclusions auto_occlusions;
    std::uint64_t seed = 0;
    MotionProfile motion = preset_profile(Preset::SlowCrowded);

    void validate() const {
        if (frames < 2) throw std::invalid_argument("scenario.frames must be >= 2");
        if (!(fps > 0.0)) throw std::invalid_argument("scenario.fps must be > 0");
        if (n_objects < 1) throw std::invalid_argument("scenario.n_objects must be >= 1");
        if (frame_w < 16 || frame_h < 16) throw std::invalid_argument("scenario frame size too small");
        if (!(motion.min_width > 0.0) || motion.max_width < motion.min_width || !(motion.aspect > 0.0))
            throw std::invalid_argument("scenario.motion object size range is invalid");
    }
};

/// Default configuration of a preset. Fast camera runs at a low frame rate
/// so the per-frame displacement is a sizeable fraction of an object.
inline ScenarioConfig preset_config(Preset p, std::uint64_t seed = 0) {
    ScenarioConfig c;
    c.preset = p;
    c.seed = seed;
    c.motion = preset_profile(p);
    switch (p) {
        case Preset::SlowCrowded:
            c.fps = 30.0;
            c.frames = 150;
            c.n_objects = 12;
            break;
        case Preset::FastCamera:
            c.fps = 6.0;
            c.frames = 60;
            c.n_objects = 6;
            break;
        case Preset::Mixed:
            c.fps = 30.0;
            c.frames = 150;
            c.n_objects = 8;
            break;
    }
    return c;
}

struct GtState {
    BBox box;
    bool visible = true;
};

struct Scenario {
    ScenarioConfig config;
    std::vector<std::vector<GtState>> gt;  // [identity][frame]

    int frames() const { return config.frames; }
    int identities() const { return static_cast<int>(gt.size()); }

    std::vector<GtBox> frame_gt(int frame) const {
        std::vector<GtBox> out;
        for (int id = 0; id < identities(); ++id) {
            const GtState& s = gt[id][frame];
            out.push_back(GtBox{id, s.box, s.visible});
        }
        return out;
    }

    /// Visible ground truth as MOT tracks (ids and frames 1-based).
    TrackSet visible_tracks() const {
        TrackSet ts;
        for (int id = 0; id < identities(); ++id)
            for (int f = 0; f < frames(); ++f)
                if (gt[id][f].visible) ts[id + 1][f + 1] = TrackPoint{gt[id][f].box, 1.0};
        return ts;
    }
};

namespace detail {

// Random-stream tags.
inline constexpr std::uint64_t kStreamInit = 1, kStreamWalk = 2, kStreamCamera = 3, kStreamOcclusion = 4,
                               kStreamDetect = 5, kStreamClutter = 6, kStreamTexture = 7,
                               kStreamBackground = 8;

/// Reflect `pos` into [lo, hi], flipping `vel` on every bounce.
inline void reflect(double& pos, double& vel, double lo, double hi) {
    for (int guard = 0; guard < 8 && (pos < lo || pos > hi); ++guard) {
        if (pos < lo) {
            pos = 2.0 * lo - pos;
            vel = -vel;
        } else if (pos > hi) {
            pos = 2.0 * hi - pos;
            vel = -vel;
        }
    }
    pos = std::clamp(pos, lo, hi);
}

}  // namespace detail

/// Pan offset of the camera at a frame (applied to every object).
inline std::pair<double, double> camera_offset(const ScenarioConfig& c, int frame) {
    const MotionProfile& m = c.motion;
    if (m.camera_amplitude <= 0.0 && m.camera_shake <= 0.0) return {0.0, 0.0};
    Rng phase_rng = Rng::keyed(c.seed, detail::kStreamCamera);
    const double phx = phase_rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double phy = phase_rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double t = frame / c.fps;
    const double w = 2.0 * std::numbers::pi / m.camera_period;
    double ox = m.camera_amplitude * std::sin(w * t + phx);
    double oy = 0.5 * m.camera_amplitude * std::sin(1.3 * w * t + phy);
    if (m.camera_shake > 0.0) {
        Rng shake = Rng::keyed(c.seed, detail::kStreamCamera, static_cast<std::uint64_t>(frame) + 1);
        ox += shake.normal(0.0, m.camera_shake);
        oy += shake.normal(0.0, m.camera_shake);
    }
    return {ox, oy};
}

inline std::vector<OcclusionEvent> resolve_occlusions(const ScenarioConfig& c) {
    std::vector<OcclusionEvent> events = c.occlusions;
    const AutoOcclusions& a = c.auto_occlusions;
    if (a.count > 0) {
        if (a.min_duration < 1 || a.max_duration < a.min_duration || a.max_duration >= c.frames - 1)
            throw std::invalid_argument("scenario.auto_occlusions: infeasible duration range");
        for (int k = 0; k < a.count; ++k) {
            Rng rng = Rng::keyed(c.seed, detail::kStreamOcclusion, static_cast<std::uint64_t>(k));
            OcclusionEvent e;
            e.track = rng.uniform_int(0, c.n_objects - 1);
            e.duration = rng.uniform_int(a.min_duration, a.max_duration);
            // Leave the first and last frames visible so every identity is born and re-seen.
            e.start = rng.uniform_int(1, c.frames - 1 - e.duration);
            events.push_back(e);
        }
    }
    for (const OcclusionEvent& e : events) {
        if (e.track < 0 || e.track >= c.n_objects)
            throw std::invalid_argument("occlusion event refers to unknown track " + std::to_string(e.track));
        if (e.duration < 1 || e.start < 0 || e.start + e.duration > c.frames)
            throw std::invalid_argument("occlusion event [" + std::to_string(e.start) + ", +" +
                                        std::to_string(e.duration) + ") does not fit in the sequence");
    }
    return events;
}

inline Scenario generate_scenario(const ScenarioConfig& config) {
    config.validate();
    Scenario scn;
    scn.config = config;
    scn.config.occlusions = resolve_occlusions(config);
    scn.config.auto_occlusions = {};
    const MotionProfile& m = config.motion;
    const double dt = 1.0 / config.fps;
    const double margin = 2.0;
    const double amp_x = m.camera_amplitude + 3.0 * m.camera_shake;
    const double amp_y = 0.5 * m.camera_amplitude + 3.0 * m.camera_shake;

    scn.gt.assign(config.n_objects, std::vector<GtState>(config.frames));
    for (int id = 0; id < config.n_objects; ++id) {
        Rng init = Rng::keyed(config.seed, detail::kStreamInit, static_cast<std::uint64_t>(id));
        const double w = init.uniform(m.min_width, m.max_width);
        const double h = w * m.aspect * init.uniform(0.9, 1.1);
        const double lo_x = amp_x + margin, hi_x = config.frame_w - amp_x - margin - w;
        const double lo_y = amp_y + margin, hi_y = config.frame_h - amp_y - margin - h;
        if (hi_x <= lo_x || hi_y <= lo_y)
            throw std::invalid_argument("scenario frame is too small for the object sizes and camera motion");
        double x = init.uniform(lo_x, hi_x);
        double y = init.uniform(lo_y, hi_y);
        const bool fast = init.uniform() < m.fast_fraction;
        const double speed = (fast ? m.fast_speed : m.object_speed) * w * init.uniform(0.5, 1.5);
        const double heading = init.uniform(0.0, 2.0 * std::numbers::pi);
        double vx = speed * std::cos(heading);
        double vy = 0.5 * speed * std::sin(heading);
        for (int f = 0; f < config.frames; ++f) {
            if (f > 0) {
                Rng walk = Rng::keyed(config.seed, detail::kStreamWalk, static_cast<std::uint64_t>(id),
                                      static_cast<std::uint64_t>(f));
                const double kick = m.speed_walk * w * std::sqrt(dt);
                vx += walk.normal(0.0, kick);
                vy += walk.normal(0.0, kick);
                x += vx * dt;
                y += vy * dt;
                detail::reflect(x, vx, lo_x, hi_x);
                detail::reflect(y, vy, lo_y, hi_y);
            }
            const auto [ox, oy] = camera_offset(config, f);
            scn.gt[id][f] = GtState{BBox{x + ox, y + oy, w, h}, true};
        }
    }
    for (const OcclusionEvent& e : scn.config.occlusions)
        for (int f = e.start; f < e.start + e.duration; ++f) scn.gt[e.track][f].visible = false;
    return scn;
}

// ---------------------------------------------------------------------------
// Detector noise.

struct DetectorNoiseConfig {
    double jitter_sigma = 1.5;  // pixels, box center
    double scale_sigma = 0.05;  // log-ratio, box size
    double miss_rate = 0.05;
    double clutter_rate = 0.3;  // expected false positives per frame
    double conf_sigma = 0.05;   // conf = clamp(IOU + N(0, conf_sigma), 0, 1)
    double clutter_conf_lo = 0.3;
    double clutter_conf_hi = 0.9;
    std::uint64_t seed = 0;

    static DetectorNoiseConfig none() {
        DetectorNoiseConfig c;
        c.jitter_sigma = 0.0;
        c.scale_sigma = 0.0;
        c.miss_rate = 0.0;
        c.clutter_rate = 0.0;
        c.conf_sigma = 0.0;
        return c;
    }

    void validate() const {
        if (miss_rate < 0.0 || miss_rate > 1.0) throw std::invalid_argument("noise.miss_rate must be in [0, 1]");
        if (clutter_rate < 0.0) throw std::invalid_argument("noise.clutter_rate must be >= 0");
        if (jitter_sigma < 0.0 || scale_sigma < 0.0 || conf_sigma < 0.0)
            throw std::invalid_argument("noise sigmas must be >= 0");
        if (clutter_conf_lo < 0.0 || clutter_conf_hi > 1.0 || clutter_conf_hi < clutter_conf_lo)
            throw std::invalid_argument("noise clutter confidence range must lie in [0, 1]");
    }
};

/// Per-frame detections (0-based frame index).
inline std::vector<std::vector<Detection>> simulate_detections(const Scenario& scn,
                                                               const DetectorNoiseConfig& noise) {
    noise.validate();
    const auto& c = scn.config;
    std::vector<std::vector<Detection>> out(c.frames);
    for (int f = 0; f < c.frames; ++f) {
        for (int id = 0; id < scn.identities(); ++id) {
            const GtState& s = scn.gt[id][f];
            if (!s.visible) continue;
            Rng rng = Rng::keyed(noise.seed, detail::kStreamDetect, static_cast<std::uint64_t>(f),
                                 static_cast<std::uint64_t>(id));
            if (rng.uniform() < noise.miss_rate) continue;
            const double cx = s.box.cx() + rng.normal(0.0, noise.jitter_sigma);
            const double cy = s.box.cy() + rng.normal(0.0, noise.jitter_sigma);
            const double w = s.box.w * std::exp(rng.normal(0.0, noise.scale_sigma));
            const double h = s.box.h * std::exp(rng.normal(0.0, noise.scale_sigma));
            const BBox b = BBox::from_center(cx, cy, w, h);
            const double conf = std::clamp(iou(b, s.box) + rng.normal(0.0, noise.conf_sigma), 0.0, 1.0);
            out[f].push_back(Detection{b, conf});
        }
        Rng clutter = Rng::keyed(noise.seed, detail::kStreamClutter, static_cast<std::uint64_t>(f));
        const int n = clutter.poisson(noise.clutter_rate);
        const MotionProfile& m = c.motion;
        for (int k = 0; k < n; ++k) {
            const double w = clutter.uniform(m.min_width, m.max_width);
            const double h = w * m.aspect;
            const double x = clutter.uniform(0.0, std::max(1.0, c.frame_w - w));
            const double y = clutter.uniform(0.0, std::max(1.0, c.frame_h - h));
            out[f].push_back(Detection{BBox{x, y, w, h}, clutter.uniform(noise.clutter_conf_lo, noise.clutter_conf_hi)});
        }
    }
    return out;
}

inline DetectionSet to_detection_set(const std::vector<std::vector<Detection>>& per_frame) {
    DetectionSet ds;
    for (std::size_t f = 0; f < per_frame.size(); ++f) ds[static_cast<int>(f) + 1] = per_frame[f];
    return ds;
}

/// Jittered copies of visible ground truth plus random background boxes, the
/// stand-in for region proposals when sampling training triplets.
struct ProposalConfig {
    int jitter_per_object = 2;
    double jitter_frac = 0.1;  // center jitter as a fraction of box size
    int random_boxes = 4;
};

inline std::vector<BBox> generate_proposals(const Scenario& scn, int frame, const ProposalConfig& pc, Rng& rng) {
    std::vector<BBox> out;
    const auto& c = scn.config;
    for (const GtBox& g : scn.frame_gt(frame)) {
        if (!g.visible) continue;
        for (int k = 0; k < pc.jitter_per_object; ++k) {
            const double cx = g.box.cx() + rng.normal(0.0, pc.jitter_frac * g.box.w);
            const double cy = g.box.cy() + rng.normal(0.0, pc.jitter_frac * g.box.h);
            out.push_back(BBox::from_center(cx, cy, g.box.w * std::exp(rng.normal(0.0, 0.05)),
                                            g.box.h * std::exp(rng.normal(0.0, 0.05))));
        }
    }
    for (int k = 0; k < pc.random_boxes; ++k) {
        const double w = rng.uniform(c.motion.min_width, c.motion.max_width);
        const double h = w * c.motion.aspect;
        out.push_back(BBox{rng.uniform(0.0, c.frame_w - w), rng.uniform(0.0, c.frame_h - h), w, h});
    }
    return out;
}

// ---------------------------------------------------------------------------
// Rendering.

struct RenderConfig {
    double background = 0.15;
    double noise_amplitude = 0.05;  // uniform +-amplitude per pixel
    int texture_cols = 4;
    int texture_rows = 8;
};

/// Per-identity blocky texture, intensities in [0.35, 1].
inline std::vector<double> identity_texture(std::uint64_t seed, int id, const RenderConfig& rc) {
    Rng rng = Rng::keyed(seed, detail::kStreamTexture, static_cast<std::uint64_t>(id));
    std::vector<double> tex(static_cast<std::size_t>(rc.texture_cols) * rc.texture_rows);
    for (double& t : tex) t = rng.uniform(0.35, 1.0);
    return tex;
}

inline Image render_frame(const Scenario& scn, int frame, const RenderConfig& rc = {}) {
    const auto& c = scn.config;
    Image img(c.frame_w, c.frame_h);
    Rng bg = Rng::keyed(c.seed, detail::kStreamBackground, static_cast<std::uint64_t>(frame));
    for (double& px : img.data) px = rc.background + bg.uniform(-rc.noise_amplitude, rc.noise_amplitude);
    for (int id = 0; id < scn.identities(); ++id) {
        const GtState& s = scn.gt[id][frame];
        if (!s.visible) continue;
        const auto tex = identity_texture(c.seed, id, rc);
        const int x0 = std::max(0, static_cast<int>(std::floor(s.box.x)));
        const int y0 = std::max(0, static_cast<int>(std::floor(s.box.y)));
        const int x1 = std::min(c.frame_w, static_cast<int>(std::ceil(s.box.right())));
        const int y1 = std::min(c.frame_h, static_cast<int>(std::ceil(s.box.bottom())));
        // Pixels on the box border are blended by their covered area.
        for (int py = y0; py < y1; ++py) {
            const double cov_y = std::min(py + 1.0, s.box.bottom()) - std::max<double>(py, s.box.y);
            const double v = std::clamp((py + 0.5 - s.box.y) / s.box.h, 0.0, 1.0 - 1e-12);
            const int tr = std::min(rc.texture_rows - 1, static_cast<int>(v * rc.texture_rows));
            for (int px = x0; px < x1; ++px) {
                const double cov_x = std::min(px + 1.0, s.box.right()) - std::max<double>(px, s.box.x);
                const double cov = std::clamp(cov_x * cov_y, 0.0, 1.0);
                const double u = std::clamp((px + 0.5 - s.box.x) / s.box.w, 0.0, 1.0 - 1e-12);
                const int tc = std::min(rc.texture_cols - 1, static_cast<int>(u * rc.texture_cols));
                double& dst = img.at(px, py);
                dst = cov * tex[static_cast<std::size_t>(tr) * rc.texture_cols + tc] + (1.0 - cov) * dst;
            }
        }
    }
    return img;
}

inline std::vector<Image> render_frames(const Scenario& scn, const RenderConfig& rc = {}) {
    std::vector<Image> frames;
    frames.reserve(scn.frames());
    for (int f = 0; f < scn.frames(); ++f) frames.push_back(render_frame(scn, f, rc));
    return frames;
}

// ---------------------------------------------------------------------------
// Motion statistics.

struct HistogramSpec {
    int bins = 21;
    double range = 3.0;  // bins span [-range, range] per axis; edge bins absorb overflow
};

struct MotionHistogram {
    HistogramSpec spec;
    std::vector<double> edges;          // bins + 1 edges, shared by both axes
    std::vector<long long> counts;      // [ix * bins + iy], ix over dx, iy over dy
    long long total = 0;
    double mean_offset = 0.0;           // mean Euclidean norm of the per-second (dx, dy)

    long long at(int ix, int iy) const { return counts[static_cast<std::size_t>(ix) * spec.bins + iy]; }

    std::string to_csv(const std::string& header = {}) const {
        std::ostringstream os;
        if (!header.empty()) os << "# " << header << '\n';
        os << "dx_lo,dx_hi,dy_lo,dy_hi,count\n";
        for (int ix = 0; ix < spec.bins; ++ix)
            for (int iy = 0; iy < spec.bins; ++iy)
                os << format_number(edges[ix]) << ',' << format_number(edges[ix + 1]) << ','
                   << format_number(edges[iy]) << ',' << format_number(edges[iy + 1]) << ','
                   << at(ix, iy) << '\n';
        return os.str();
    }
};

/// Per-second normalized offsets (dx, dy) between consecutive visible samples
/// of every identity.
inline std::vector<std::pair<double, double>> motion_offsets(const Scenario& scn) {
    std::vector<std::pair<double, double>> out;
    for (int id = 0; id < scn.identities(); ++id) {
        int last = -1;
        for (int f = 0; f < scn.frames(); ++f) {
            if (!scn.gt[id][f].visible) continue;
            if (last >= 0) {
                const MotionDelta m = encode_motion(scn.gt[id][last].box, scn.gt[id][f].box);
                const double delta_t = (f - last) / scn.config.fps;
                out.emplace_back(m.dx / delta_t, m.dy / delta_t);
            }
            last = f;
        }
    }
    return out;
}

inline MotionHistogram motion_histogram(const Scenario& scn, const HistogramSpec& spec = {}) {
    if (spec.bins < 1 || !(spec.range > 0.0)) throw std::invalid_argument("histogram spec is invalid");
    MotionHistogram h;
    h.spec = spec;
    h.counts.assign(static_cast<std::size_t>(spec.bins) * spec.bins, 0);
    for (int i = 0; i <= spec.bins; ++i) h.edges.push_back(-spec.range + 2.0 * spec.range * i / spec.bins);
    auto bin_of = [&](double v) {
        const auto b = static_cast<long>(std::floor((v + spec.range) / (2.0 * spec.range) * spec.bins));
        return static_cast<int>(std::clamp<long>(b, 0, spec.bins - 1));
    };
    double norm_sum = 0.0;
    for (const auto& [dx, dy] : motion_offsets(scn)) {
        ++h.counts[static_cast<std::size_t>(bin_of(dx)) * spec.bins + bin_of(dy)];
        ++h.total;
        norm_sum += std::hypot(dx, dy);
    }
    h.mean_offset = h.total > 0 ? norm_sum / static_cast<double>(h.total) : 0.0;
    return h;
}

}  // namespace siammot
