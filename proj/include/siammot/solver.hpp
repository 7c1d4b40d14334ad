#pragma once

// Online solver: per-frame propagation of every live track through a
// pluggable matcher, detection NMS, spatial matching against propagated
// tracks, and trajectory birth / continuation / termination with an
// occlusion memory of `tau` frames.

#include <algorithm>
#include <map>
#include <memory>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "siammot/core.hpp"
#include "siammot/emm.hpp"
#include "siammot/mot_io.hpp"
#include "siammot/raster.hpp"

namespace siammot {

struct TrackerParams {
    double r = 2.0;
    double alpha = 0.4;      // visibility needed to continue a track
    double beta = 0.6;       // detection confidence needed to start a track
    int tau = 30;            // consecutive misses before a track is killed
    double nms_iou = 0.5;
    double match_iou = 0.5;  // detections at or above this IOU with a track are suppressed
    PenaltyParams penalty;
    bool track_nms = false;  // score-ordered NMS over propagated tracks at nms_iou
    double dedup_iou = 0.7;  // a younger track overlapping an older one this much is set lost; 0 disables
    int max_unsupported = 2; // consecutive frames a track may go without a detection at match_iou; -1 disables
    double refine_iou = 0.5; // snap a tracked box to a detection overlapping it this much; 0 disables
    bool emit_lost = false;  // report last known boxes of lost tracks

    void validate() const {
        if (!(r > 1.0)) throw std::invalid_argument("tracker.r must be > 1");
        if (alpha < 0.0 || alpha > 1.0) throw std::invalid_argument("tracker.alpha must be in [0, 1]");
        if (beta < 0.0 || beta > 1.0) throw std::invalid_argument("tracker.beta must be in [0, 1]");
        if (tau < 1) throw std::invalid_argument("tracker.tau must be >= 1");
        if (refine_iou < 0.0 || refine_iou > 1.0) throw std::invalid_argument("tracker.refine_iou must be in [0, 1]");
        if (dedup_iou < 0.0 || dedup_iou > 1.0) throw std::invalid_argument("tracker.dedup_iou must be in [0, 1]");
        if (max_unsupported < -1) throw std::invalid_argument("tracker.max_unsupported must be >= -1");
        if (penalty.lambda < 0.0 || penalty.lambda > 1.0)
            throw std::invalid_argument("tracker.penalty.lambda must be in [0, 1]");
        if (!(penalty.sigma_scale > 0.0)) throw std::invalid_argument("tracker.penalty.sigma_scale must be > 0");
    }
};

/// Indices of the detections kept by greedy NMS, ordered by descending
/// confidence (input order breaks ties).
inline std::vector<std::size_t> nms_indices(std::span<const Detection> dets, double thr) {
    std::vector<std::size_t> order(dets.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return dets[a].confidence > dets[b].confidence; });
    std::vector<std::size_t> keep;
    for (std::size_t i : order) {
        bool suppressed = false;
        for (std::size_t k : keep) {
            if (iou(dets[i].box, dets[k].box) >= thr) {
                suppressed = true;
                break;
            }
        }
        if (!suppressed) keep.push_back(i);
    }
    return keep;
}

inline std::vector<Detection> nms(std::span<const Detection> dets, double thr) {
    std::vector<Detection> out;
    for (std::size_t i : nms_indices(dets, thr)) out.push_back(dets[i]);
    return out;
}

struct SpatialMatchResult {
    std::vector<Detection> surviving;
    std::vector<Detection> suppressed;
};

/// A detection survives only if its IOU with every tracked box is below `thr`.
inline SpatialMatchResult spatial_match(std::span<const std::pair<int, BBox>> tracked,
                                        std::span<const Detection> dets, double thr) {
    SpatialMatchResult r;
    for (const Detection& d : dets) {
        const bool hit = std::any_of(tracked.begin(), tracked.end(),
                                     [&](const auto& t) { return iou(d.box, t.second) >= thr; });
        (hit ? r.suppressed : r.surviving).push_back(d);
    }
    return r;
}

// ---------------------------------------------------------------------------

/// Appearance snapshot taken at the last confidently tracked location.
struct TrackTemplate {
    BBox box;
    int frame = -1;
    NccTemplate ncc;           // filled by raster matchers
    std::vector<double> crop;  // pooled search-region crop, filled by the implicit model
};

struct MatchQuery {
    int track_id = 0;
    int frame = 0;
    BBox last_box;
    SearchRegion region;
    const TrackTemplate* tmpl = nullptr;
    const Image* frame_curr = nullptr;
    std::span<const Detection> detections;
};

struct MatchResult {
    BBox box;
    double visibility = 0.0;
};

class Matcher {
public:
    virtual ~Matcher() = default;
    virtual std::string name() const = 0;
    virtual bool needs_frames() const { return false; }

    virtual TrackTemplate make_template(int /*track_id*/, const BBox& box, int frame, const Image* /*img*/) {
        return TrackTemplate{box, frame, {}, {}};
    }
    virtual MatchResult match(const MatchQuery& q) = 0;
    virtual void on_birth(int /*track_id*/, const Detection& /*det*/, int /*frame*/) {}
    virtual void on_kill(int /*track_id*/) {}
};

enum class TrackState { Active, Lost, Killed };

inline const char* to_string(TrackState s) {
    switch (s) {
        case TrackState::Active: return "active";
        case TrackState::Lost: return "lost";
        case TrackState::Killed: return "killed";
    }
    return "?";
}

struct Track {
    int id = 0;
    TrackState state = TrackState::Active;
    Trajectory history;  // 0-based frame -> confidently tracked box
    int lost_count = 0;
    int unsupported = 0; // consecutive frames without an overlapping detection
    BBox last_box;       // last predicted location; search regions are centered here
    TrackTemplate tmpl;
};

struct SolverState {
    std::vector<Track> tracks;  // ascending id
    int next_id = 1;
    int frame_index = -1;
};

struct TrackOutput {
    int id = 0;
    BBox box;
    double conf = 0.0;
};

class OnlineTracker {
public:
    OnlineTracker(Matcher& matcher, TrackerParams params, int frame_w, int frame_h)
        : matcher_(&matcher), params_(params), frame_w_(frame_w), frame_h_(frame_h) {
        params_.validate();
        if (frame_w <= 0 || frame_h <= 0) throw std::invalid_argument("tracker: frame size must be positive");
    }

    const SolverState& state() const { return state_; }
    const TrackerParams& params() const { return params_; }

    /// Advances to `frame` (must be the previous frame + 1) and returns the
    /// boxes of every track that is active after this frame.
    std::vector<TrackOutput> step(int frame, const Image* frame_curr, std::span<const Detection> dets) {
        if (frame != state_.frame_index + 1)
            throw std::invalid_argument("tracker: frame " + std::to_string(frame) + " does not follow " +
                                        std::to_string(state_.frame_index));
        if (matcher_->needs_frames() && frame_curr == nullptr)
            throw std::invalid_argument("tracker: matcher '" + matcher_->name() + "' needs raster frames");
        state_.frame_index = frame;

        // 1. Propagate every live track.
        struct Proposal {
            std::size_t track;
            MatchResult result;
            bool confident;
        };
        std::vector<Proposal> props;
        for (std::size_t i = 0; i < state_.tracks.size(); ++i) {
            Track& t = state_.tracks[i];
            if (t.state == TrackState::Killed) continue;
            MatchQuery q;
            q.track_id = t.id;
            q.frame = frame;
            q.last_box = t.last_box;
            q.region = expand_search_region(t.last_box, params_.r, frame_w_, frame_h_);
            q.tmpl = &t.tmpl;
            q.frame_curr = frame_curr;
            q.detections = dets;
            MatchResult m = matcher_->match(q);
            bool ok = m.visibility >= params_.alpha && m.box.valid();
            if (ok) {
                double best = 0.0;
                const Detection* hit = nullptr;
                for (const Detection& d : dets) {
                    const double o = iou(m.box, d.box);
                    if (o > best) {
                        best = o;
                        hit = &d;
                    }
                }
                if (params_.refine_iou > 0.0 && hit != nullptr && best >= params_.refine_iou) m.box = hit->box;
                t.unsupported = best >= params_.match_iou ? 0 : t.unsupported + 1;
                if (params_.max_unsupported >= 0 && t.unsupported > params_.max_unsupported) ok = false;
            }
            props.push_back(Proposal{i, m, ok});
        }

        if (params_.track_nms) {
            std::vector<Detection> as_dets;
            std::vector<std::size_t> idx;
            for (std::size_t k = 0; k < props.size(); ++k) {
                if (!props[k].confident) continue;
                as_dets.push_back(Detection{props[k].result.box, props[k].result.visibility});
                idx.push_back(k);
            }
            std::vector<bool> keep(as_dets.size(), false);
            for (std::size_t j : nms_indices(as_dets, params_.nms_iou)) keep[j] = true;
            for (std::size_t j = 0; j < idx.size(); ++j)
                if (!keep[j]) props[idx[j]].confident = false;
        }

        // Two tracks locked onto the same object: the older identity keeps it.
        if (params_.dedup_iou > 0.0) {
            std::vector<BBox> accepted;
            for (Proposal& p : props) {
                if (!p.confident) continue;
                const bool dup = std::any_of(accepted.begin(), accepted.end(), [&](const BBox& b) {
                    return iou(b, p.result.box) >= params_.dedup_iou;
                });
                if (dup) p.confident = false;
                else accepted.push_back(p.result.box);
            }
        }

        // 2. Lifecycle update.
        std::vector<std::pair<int, BBox>> tracked;
        for (const Proposal& p : props) {
            Track& t = state_.tracks[p.track];
            if (p.confident) {
                t.state = TrackState::Active;
                t.lost_count = 0;
                t.last_box = p.result.box;
                t.history[frame] = TrackPoint{p.result.box, p.result.visibility};
                t.tmpl = matcher_->make_template(t.id, p.result.box, frame, frame_curr);
            } else {
                t.state = TrackState::Lost;
                ++t.lost_count;
                if (t.lost_count >= params_.tau) {
                    t.state = TrackState::Killed;
                    matcher_->on_kill(t.id);
                    continue;
                }
            }
            tracked.emplace_back(t.id, t.last_box);
        }

        // 3. Detections: NMS, spatial matching, birth.
        const auto kept = nms(dets, params_.nms_iou);
        const auto sm = spatial_match(tracked, kept, params_.match_iou);
        for (const Detection& d : sm.surviving) {
            if (d.confidence < params_.beta || !d.box.valid()) continue;
            Track t;
            t.id = state_.next_id++;
            t.state = TrackState::Active;
            t.last_box = d.box;
            t.history[frame] = TrackPoint{d.box, d.confidence};
            matcher_->on_birth(t.id, d, frame);
            t.tmpl = matcher_->make_template(t.id, d.box, frame, frame_curr);
            state_.tracks.push_back(std::move(t));
        }

        std::vector<TrackOutput> out;
        for (const Track& t : state_.tracks) {
            if (t.state == TrackState::Active) {
                const TrackPoint& pt = t.history.at(frame);
                out.push_back(TrackOutput{t.id, pt.box, pt.conf});
            } else if (t.state == TrackState::Lost && params_.emit_lost) {
                out.push_back(TrackOutput{t.id, t.last_box, 0.0});
            }
        }
        return out;
    }

private:
    Matcher* matcher_;
    TrackerParams params_;
    int frame_w_;
    int frame_h_;
    SolverState state_;
};

/// Runs the tracker over a whole sequence. `frames` may be empty for matchers
/// that do not look at pixels. Results use 1-based MOT frame numbers.
inline TrackSet run_sequence(OnlineTracker& tracker, std::span<const Image> frames,
                             std::span<const std::vector<Detection>> detections) {
    TrackSet results;
    for (std::size_t f = 0; f < detections.size(); ++f) {
        const Image* img = frames.empty() ? nullptr : &frames[f];
        for (const TrackOutput& o : tracker.step(static_cast<int>(f), img, detections[f]))
            results[o.id][static_cast<int>(f) + 1] = TrackPoint{o.box, o.conf};
    }
    return results;
}

}  // namespace siammot
