#pragma once

// Implicit motion model: paired search-region rasters are pooled to a G x G
// grid, concatenated and fed to the two-layer perceptron, which predicts a
// visibility confidence and the relative motion of the anchor box.

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <span>
#include <stdexcept>
#include <vector>

#include "siammot/core.hpp"
#include "siammot/kernels.hpp"
#include "siammot/raster.hpp"
#include "siammot/rng.hpp"
#include "siammot/sim.hpp"

namespace siammot {

struct ImmFeatures {
    int grid = 15;
    std::vector<double> values;  // 2 * grid * grid: frame t crop, then frame t + delta crop
};

inline std::vector<double> imm_crop(const Image& frame, const BBox& search_box, int grid) {
    if (!search_box.valid()) throw std::invalid_argument("imm_features: degenerate search box");
    if (grid < 1) throw std::invalid_argument("imm_features: grid side must be >= 1");
    return area_resample(frame, search_box, grid, grid);
}

inline ImmFeatures imm_features_from_crops(std::span<const double> crop_prev, std::span<const double> crop_curr,
                                           int grid) {
    ImmFeatures f;
    f.grid = grid;
    f.values.reserve(crop_prev.size() + crop_curr.size());
    f.values.insert(f.values.end(), crop_prev.begin(), crop_prev.end());
    f.values.insert(f.values.end(), crop_curr.begin(), crop_curr.end());
    return f;
}

inline ImmFeatures imm_features(const Image& frame_prev, const Image& frame_curr, const BBox& search_box,
                                int grid = 15) {
    const auto a = imm_crop(frame_prev, search_box, grid);
    const auto b = imm_crop(frame_curr, search_box, grid);
    return imm_features_from_crops(a, b, grid);
}

struct ImmPrediction {
    double visibility = 0.5;
    MotionDelta motion;
    BBox box;
};

inline ImmPrediction imm_predict(const MlpHead& head, const ImmFeatures& feats, const BBox& prev_box) {
    const MlpOutput o = mlp_forward(head, feats.values);
    return ImmPrediction{o.visibility, o.motion, decode_motion(prev_box, o.motion)};
}

// ---------------------------------------------------------------------------
// Training.

enum class LrSchedule {
    Constant,
    Step,  // x0.1 after 60% and again after 80% of the epochs
};

struct ImmTrainConfig {
    int grid = 15;
    int hidden = 64;
    int epochs = 30;
    int batch_size = 32;
    double learning_rate = 0.01;
    double momentum = 0.9;
    double weight_decay = 1e-4;
    LrSchedule schedule = LrSchedule::Constant;
    bool use_positive = true;
    bool use_hard = true;
    bool use_negative = true;
    int pairs_per_scenario = 40;
    double fg_iou = 0.5;
    double r = 2.0;
    ProposalConfig proposals;
    ImmLossParams loss;
    std::uint64_t seed = 0;

    /// Large-scale settings: 512 hidden units, lr 0.02 with step decay.
    static ImmTrainConfig large_preset() {
        ImmTrainConfig c;
        c.hidden = 512;
        c.learning_rate = 0.02;
        c.schedule = LrSchedule::Step;
        return c;
    }
};

struct LabeledSample {
    ImmSample sample;
    TripletLabel label = TripletLabel::Negative;
    BBox anchor;
};

/// Samples frame pairs at most one second apart from every scenario, labels
/// proposals as P/H/N triplets and builds their features. Labels excluded by
/// the config are dropped.
inline std::vector<LabeledSample> build_imm_samples(std::span<const Scenario> scenarios,
                                                    const ImmTrainConfig& cfg) {
    std::vector<LabeledSample> out;
    for (std::size_t si = 0; si < scenarios.size(); ++si) {
        const Scenario& scn = scenarios[si];
        const auto frames = render_frames(scn);
        const int max_delta = std::max(1, static_cast<int>(std::floor(scn.config.fps)));
        for (int k = 0; k < cfg.pairs_per_scenario; ++k) {
            Rng rng = Rng::keyed(cfg.seed, 0x494d4d, si, static_cast<std::uint64_t>(k));
            const int t = rng.uniform_int(0, scn.frames() - 2);
            const int delta = rng.uniform_int(1, std::min(max_delta, scn.frames() - 1 - t));
            const auto proposals = generate_proposals(scn, t, cfg.proposals, rng);
            const auto gt_t = scn.frame_gt(t);
            const auto gt_td = scn.frame_gt(t + delta);
            TripletParams tp{cfg.fg_iou, cfg.r, double(scn.config.frame_w), double(scn.config.frame_h)};
            for (const Triplet& tr : sample_triplets(proposals, gt_t, gt_td, tp)) {
                if ((tr.label == TripletLabel::Positive && !cfg.use_positive) ||
                    (tr.label == TripletLabel::Hard && !cfg.use_hard) ||
                    (tr.label == TripletLabel::Negative && !cfg.use_negative))
                    continue;
                LabeledSample ls;
                ls.label = tr.label;
                ls.anchor = tr.anchor;
                ls.sample.features = imm_features(frames[t], frames[t + delta], tr.search, cfg.grid).values;
                ls.sample.visibility = tr.label == TripletLabel::Positive ? 1 : 0;
                if (tr.target) ls.sample.motion = encode_motion(tr.anchor, *tr.target);
                out.push_back(std::move(ls));
            }
        }
    }
    return out;
}

struct ImmTrainResult {
    MlpHead head;
    std::vector<double> loss_curve;  // mean training loss per epoch
    std::size_t samples = 0;
};

inline double scheduled_lr(const ImmTrainConfig& cfg, int epoch) {
    if (cfg.schedule == LrSchedule::Constant) return cfg.learning_rate;
    double lr = cfg.learning_rate;
    if (epoch >= static_cast<int>(0.6 * cfg.epochs)) lr *= 0.1;
    if (epoch >= static_cast<int>(0.8 * cfg.epochs)) lr *= 0.1;
    return lr;
}

inline ImmTrainResult imm_train_samples(std::span<const ImmSample> samples, const ImmTrainConfig& cfg) {
    if (samples.empty()) throw std::invalid_argument("imm_train: no valid triplets found");
    const int in = static_cast<int>(samples.front().features.size());
    ImmTrainResult res;
    res.head = MlpHead::random(in, cfg.hidden, cfg.seed);
    res.samples = samples.size();
    OptimizerState opt{cfg.learning_rate, cfg.momentum, cfg.weight_decay, {}};
    std::vector<std::size_t> order(samples.size());
    std::iota(order.begin(), order.end(), 0);
    std::vector<ImmSample> batch;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        opt.learning_rate = scheduled_lr(cfg, epoch);
        Rng shuffle = Rng::keyed(cfg.seed, 0x5348, static_cast<std::uint64_t>(epoch));
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[shuffle.next_u64() % i]);
        double sum = 0.0;
        std::size_t seen = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
            batch.clear();
            for (std::size_t i = start; i < end; ++i) batch.push_back(samples[order[i]]);
            sum += mlp_train_step(res.head, opt, batch, cfg.loss) * static_cast<double>(batch.size());
            seen += batch.size();
        }
        res.loss_curve.push_back(sum / static_cast<double>(seen));
    }
    return res;
}

inline ImmTrainResult imm_train(std::span<const Scenario> scenarios, const ImmTrainConfig& cfg) {
    if (scenarios.empty()) throw std::invalid_argument("imm_train: empty scenario set");
    const auto labeled = build_imm_samples(scenarios, cfg);
    std::vector<ImmSample> samples;
    samples.reserve(labeled.size());
    for (const auto& ls : labeled) samples.push_back(ls.sample);
    return imm_train_samples(samples, cfg);
}

/// Fraction of samples whose predicted visibility reaches `threshold`.
inline double visible_rate(const MlpHead& head, std::span<const LabeledSample> samples, TripletLabel label,
                           double threshold) {
    std::size_t n = 0, hits = 0;
    for (const auto& s : samples) {
        if (s.label != label) continue;
        ++n;
        if (mlp_forward(head, s.sample.features).visibility >= threshold) ++hits;
    }
    return n == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(n);
}

}  // namespace siammot
