#pragma once

// Matchers for the online solver: the explicit motion model driven by NCC
// response maps or by an oracle, the implicit motion model, and two baselines
// (zero motion, constant-velocity Kalman filter).

#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

#include "siammot/core.hpp"
#include "siammot/emm.hpp"
#include "siammot/imm.hpp"
#include "siammot/kernels.hpp"
#include "siammot/mot_io.hpp"
#include "siammot/rng.hpp"
#include "siammot/solver.hpp"

namespace siammot {

using MapsCallback = std::function<void(int track_id, int frame, const ResponseMaps&)>;

/// Explicit motion model on NCC response maps.
class NccEmmMatcher : public Matcher {
public:
    NccEmmMatcher(PenaltyParams penalty, NccParams ncc = {}) : penalty_(penalty), ncc_(std::move(ncc)) {}

    std::string name() const override { return "ncc"; }
    bool needs_frames() const override { return true; }

    void set_maps_callback(MapsCallback cb) { on_maps_ = std::move(cb); }

    TrackTemplate make_template(int, const BBox& box, int frame, const Image* img) override {
        TrackTemplate t{box, frame, {}, {}};
        t.ncc = make_ncc_template(*img, box, ncc_);
        return t;
    }

    MatchResult match(const MatchQuery& q) override {
        const ResponseMaps maps = ncc_match(q.tmpl->ncc, *q.frame_curr, q.region.unclipped, ncc_);
        if (on_maps_) on_maps_(q.track_id, q.frame, maps);
        const DecodeResult d = decode_response(maps, q.last_box, penalty_);
        if (!ncc_.refine || !d.box.valid()) return MatchResult{d.box, d.visibility};
        return MatchResult{ncc_refine(q.tmpl->ncc, *q.frame_curr, d.box, ncc_.stride), d.visibility};
    }

private:
    PenaltyParams penalty_;
    NccParams ncc_;
    MapsCallback on_maps_;
};

/// Explicit motion model on oracle maps built from ground truth. A track is
/// linked once, to the ground-truth identity its first template overlaps most;
/// the target is visible to the matcher only while its center lies in the
/// search region.
class OracleMatcher : public Matcher {
public:
    struct Params {
        int grid = 30;
        OracleNoise noise;
        std::uint64_t seed = 0;
        double link_iou = 0.5;
    };

    OracleMatcher(TrackSet gt, PenaltyParams penalty, Params params)
        : gt_(std::move(gt)), penalty_(penalty), params_(params) {}
    OracleMatcher(TrackSet gt, PenaltyParams penalty) : OracleMatcher(std::move(gt), penalty, Params{}) {}

    std::string name() const override { return "oracle"; }

    TrackTemplate make_template(int track_id, const BBox& box, int frame, const Image*) override {
        if (!links_.contains(track_id)) link(track_id, box, frame);
        return TrackTemplate{box, frame, {}, {}};
    }

    MatchResult match(const MatchQuery& q) override {
        std::optional<BBox> target;
        if (auto l = links_.find(q.track_id); l != links_.end()) {
            const Trajectory& traj = gt_.at(l->second);
            if (auto it = traj.find(q.frame + 1); it != traj.end()) {
                const BBox& b = it->second.box;
                if (q.region.unclipped.contains(b.cx(), b.cy())) target = b;
            }
        }
        const GridGeometry geo = GridGeometry::over(q.region.unclipped, params_.grid, params_.grid);
        Rng rng = Rng::keyed(params_.seed, 0x4f52, static_cast<std::uint64_t>(q.track_id),
                             static_cast<std::uint64_t>(q.frame));
        const ResponseMaps maps = oracle_match(target, geo, params_.noise, &rng);
        const DecodeResult d = decode_response(maps, q.last_box, penalty_);
        return MatchResult{d.box, d.visibility};
    }

    void on_kill(int track_id) override { links_.erase(track_id); }

private:
    void link(int track_id, const BBox& box, int frame) {
        double best = params_.link_iou;
        for (const auto& [gid, traj] : gt_) {
            auto it = traj.find(frame + 1);
            if (it == traj.end()) continue;
            const double o = iou(box, it->second.box);
            if (o >= best) {
                best = o;
                links_[track_id] = gid;
            }
        }
    }

    TrackSet gt_;
    PenaltyParams penalty_;
    Params params_;
    std::map<int, int> links_;
};

/// Implicit motion model: pooled search-region crops of the template frame and
/// the current frame through a trained head.
class ImmMatcher : public Matcher {
public:
    ImmMatcher(MlpHead head, int grid, double r) : head_(std::move(head)), grid_(grid), r_(r) {
        if (head_.input_dim != 2 * grid * grid)
            throw std::invalid_argument("imm matcher: head input_dim does not match 2 * grid^2");
    }

    std::string name() const override { return "imm"; }
    bool needs_frames() const override { return true; }

    TrackTemplate make_template(int, const BBox& box, int frame, const Image* img) override {
        TrackTemplate t{box, frame, {}, {}};
        const SearchRegion region = expand_search_region(box, r_, img->width, img->height);
        t.crop = imm_crop(*img, region.clipped, grid_);
        return t;
    }

    MatchResult match(const MatchQuery& q) override {
        const auto curr = imm_crop(*q.frame_curr, q.region.clipped, grid_);
        const ImmFeatures f = imm_features_from_crops(q.tmpl->crop, curr, grid_);
        const ImmPrediction p = imm_predict(head_, f, q.last_box);
        return MatchResult{p.box, p.visibility};
    }

private:
    MlpHead head_;
    int grid_;
    double r_;
};

/// Zero-motion baseline: the previous box is carried over unchanged and is
/// confirmed by the best-overlapping detection, whose box and confidence it
/// adopts.
class ZeroMotionMatcher : public Matcher {
public:
    explicit ZeroMotionMatcher(double min_iou = 0.5) : min_iou_(min_iou) {}

    std::string name() const override { return "zero-motion"; }

    MatchResult match(const MatchQuery& q) override {
        double best = 0.0;
        const Detection* hit = nullptr;
        for (const Detection& d : q.detections) {
            const double o = iou(q.last_box, d.box);
            if (o > best) {
                best = o;
                hit = &d;
            }
        }
        if (hit == nullptr || best < min_iou_) return MatchResult{q.last_box, 0.0};
        return MatchResult{hit->box, hit->confidence};
    }

private:
    double min_iou_;
};

/// Constant-velocity Kalman filter on (cx, cy, area, aspect) with SORT's
/// noise settings; a track is confirmed by the detection that best overlaps
/// its prediction.
class KalmanMatcher : public Matcher {
public:
    explicit KalmanMatcher(double min_iou = 0.3) : min_iou_(min_iou) {}

    std::string name() const override { return "kalman"; }

    void on_birth(int track_id, const Detection& det, int) override { filters_.insert_or_assign(track_id, Filter(det.box)); }
    void on_kill(int track_id) override { filters_.erase(track_id); }

    MatchResult match(const MatchQuery& q) override {
        auto it = filters_.find(q.track_id);
        if (it == filters_.end()) it = filters_.emplace(q.track_id, Filter(q.last_box)).first;
        Filter& kf = it->second;
        kf.predict();
        const BBox pred = kf.box();
        double best = 0.0;
        const Detection* hit = nullptr;
        for (const Detection& d : q.detections) {
            const double o = iou(pred, d.box);
            if (o > best) {
                best = o;
                hit = &d;
            }
        }
        if (hit == nullptr || best < min_iou_ || !pred.valid()) return MatchResult{pred, 0.0};
        kf.update(hit->box);
        return MatchResult{kf.box(), hit->confidence};
    }

private:
    class Filter {
    public:
        using Vec7 = Eigen::Matrix<double, 7, 1>;
        using Mat7 = Eigen::Matrix<double, 7, 7>;
        using Mat47 = Eigen::Matrix<double, 4, 7>;

        explicit Filter(const BBox& b) {
            x_.setZero();
            x_.head<4>() = measure(b);
            F_.setIdentity();
            F_(0, 4) = F_(1, 5) = F_(2, 6) = 1.0;
            H_.setZero();
            H_.block<4, 4>(0, 0).setIdentity();
            P_ = Vec7(10, 10, 10, 10, 1e4, 1e4, 1e4).asDiagonal();
            Q_ = Vec7(1, 1, 1, 1, 1e-2, 1e-2, 1e-4).asDiagonal();
            R_ = Eigen::Vector4d(1, 1, 10, 10).asDiagonal();
        }

        void predict() {
            if (x_(2) + x_(6) <= 0.0) x_(6) = 0.0;
            x_ = F_ * x_;
            P_ = F_ * P_ * F_.transpose() + Q_;
        }

        void update(const BBox& b) {
            const Eigen::Vector4d y = measure(b) - H_ * x_;
            const Eigen::Matrix4d S = H_ * P_ * H_.transpose() + R_;
            const Eigen::Matrix<double, 7, 4> K = P_ * H_.transpose() * S.inverse();
            x_ += K * y;
            P_ = (Mat7::Identity() - K * H_) * P_;
        }

        BBox box() const {
            const double s = std::max(x_(2), 1e-6);
            const double r = std::max(x_(3), 1e-6);
            const double w = std::sqrt(s * r);
            return BBox::from_center(x_(0), x_(1), w, s / w);
        }

    private:
        static Eigen::Vector4d measure(const BBox& b) { return {b.cx(), b.cy(), b.area(), b.w / b.h}; }

        Vec7 x_;
        Mat7 F_, P_, Q_;
        Mat47 H_;
        Eigen::Matrix4d R_;
    };

    double min_iou_;
    std::map<int, Filter> filters_;
};

}  // namespace siammot
