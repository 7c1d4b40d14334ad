#pragma once

// Loss kernels with analytic gradients, a two-layer perceptron with
// hand-written backprop, SGD with momentum, a central-difference gradient
// checker and the P/H/N triplet sampler.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "siammot/core.hpp"
#include "siammot/rng.hpp"

namespace siammot {

struct FocalParams {
    double gamma = 2.0;
    double alpha = 0.25;
    double eps = 1e-7;
};

struct LossGrad {
    double loss = 0.0;
    double grad = 0.0;
};

/// Binary focal loss on a probability. The derivative is with respect to the
/// clamped probability and is zero where clamping is active.
inline LossGrad focal_loss(double p, int y, const FocalParams& fp = {}) {
    const double pc = std::clamp(p, fp.eps, 1.0 - fp.eps);
    const bool clamped = pc != p;
    LossGrad out;
    if (y == 1) {
        const double q = 1.0 - pc;
        out.loss = -fp.alpha * std::pow(q, fp.gamma) * std::log(pc);
        out.grad = -fp.alpha * (-fp.gamma * std::pow(q, fp.gamma - 1.0) * std::log(pc) +
                                std::pow(q, fp.gamma) / pc);
    } else {
        const double q = 1.0 - pc;
        out.loss = -(1.0 - fp.alpha) * std::pow(pc, fp.gamma) * std::log(q);
        out.grad = -(1.0 - fp.alpha) * (fp.gamma * std::pow(pc, fp.gamma - 1.0) * std::log(q) -
                                        std::pow(pc, fp.gamma) / q);
    }
    if (clamped) out.grad = 0.0;
    return out;
}

inline double sigmoid(double z) {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

/// Focal loss on a logit; the gradient is d loss / d logit.
inline LossGrad focal_loss_logit(double z, int y, const FocalParams& fp = {}) {
    const double p = sigmoid(z);
    LossGrad lg = focal_loss(p, y, fp);
    lg.grad *= p * (1.0 - p);
    return lg;
}

struct SmoothL1Result {
    double loss = 0.0;
    MotionDelta grad;
};

inline SmoothL1Result smooth_l1(const MotionDelta& pred, const MotionDelta& target,
                                double beta = 1.0) {
    if (!(beta > 0.0)) throw std::invalid_argument("smooth_l1: beta must be > 0");
    auto term = [beta](double d, double& g) {
        const double ad = std::abs(d);
        if (ad < beta) {
            g = d / beta;
            return 0.5 * d * d / beta;
        }
        g = d > 0.0 ? 1.0 : -1.0;
        return ad - 0.5 * beta;
    };
    SmoothL1Result r;
    r.loss = term(pred.dx - target.dx, r.grad.dx) + term(pred.dy - target.dy, r.grad.dy) +
             term(pred.dw - target.dw, r.grad.dw) + term(pred.dh - target.dh, r.grad.dh);
    return r;
}

/// Distances from a location to the left, top, right and bottom box edges.
using Offsets = std::array<double, 4>;

struct IouLossResult {
    double loss = 0.0;
    Offsets grad{};
};

/// -ln IOU of two boxes sharing an anchor point, given as edge offsets.
inline IouLossResult iou_loss(const Offsets& pred, const Offsets& target) {
    for (const Offsets* o : {&pred, &target}) {
        const Offsets& v = *o;
        if (v[0] < 0 || v[1] < 0 || v[2] < 0 || v[3] < 0 || !(v[0] + v[2] > 0) ||
            !(v[1] + v[3] > 0)) {
            throw std::invalid_argument("iou_loss: degenerate offsets");
        }
    }
    const auto [l, t, r, b] = pred;
    const auto [lt, tt, rt, bt] = target;
    const double pw = l + r, ph = t + b;
    const double iw = std::min(l, lt) + std::min(r, rt);
    const double ih = std::min(t, tt) + std::min(b, bt);
    const double inter = iw * ih;
    const double uni = pw * ph + (lt + rt) * (tt + bt) - inter;

    // d inter / d pred: each offset contributes only while it is the smaller one.
    const Offsets d_inter{l < lt ? ih : 0.0, t < tt ? iw : 0.0, r < rt ? ih : 0.0,
                          b < bt ? iw : 0.0};
    const Offsets d_area{ph, pw, ph, pw};
    IouLossResult out;
    out.loss = -std::log(inter / uni);
    for (int k = 0; k < 4; ++k) {
        const double d_union = d_area[k] - d_inter[k];
        out.grad[k] = -(d_inter[k] / inter - d_union / uni);
    }
    return out;
}

/// Centerness weight of (px, py) with respect to `box`; zero outside it.
inline double centerness(double px, double py, const BBox& box) {
    if (!box.contains(px, py)) return 0.0;
    const double l = px - box.x, r = box.right() - px;
    const double t = py - box.y, b = box.bottom() - py;
    return std::sqrt((std::min(l, r) / std::max(l, r)) * (std::min(t, b) / std::max(t, b)));
}

// ---------------------------------------------------------------------------
// Two-layer perceptron: input -> ReLU hidden -> 5 outputs
// (visibility logit followed by the four motion components).

inline constexpr int kHeadOutputs = 5;

struct MlpHead {
    int input_dim = 0;
    int hidden_dim = 0;
    std::vector<double> w1;  // hidden x input, row-major
    std::vector<double> b1;  // hidden
    std::vector<double> w2;  // 5 x hidden, row-major
    std::vector<double> b2;  // 5

    MlpHead() = default;
    MlpHead(int in, int hidden)
        : input_dim(in),
          hidden_dim(hidden),
          w1(static_cast<std::size_t>(in) * hidden, 0.0),
          b1(hidden, 0.0),
          w2(static_cast<std::size_t>(kHeadOutputs) * hidden, 0.0),
          b2(kHeadOutputs, 0.0) {
        if (in <= 0 || hidden <= 0) throw std::invalid_argument("MlpHead: dimensions must be > 0");
    }

    /// He-uniform hidden layer, small output layer.
    static MlpHead random(int in, int hidden, std::uint64_t seed) {
        MlpHead h(in, hidden);
        Rng rng = Rng::keyed(seed, 0x4d4c50);
        const double a1 = std::sqrt(6.0 / in);
        for (double& w : h.w1) w = rng.uniform(-a1, a1);
        const double a2 = std::sqrt(1.0 / hidden);
        for (double& w : h.w2) w = rng.uniform(-a2, a2);
        return h;
    }

    std::size_t parameter_count() const { return w1.size() + b1.size() + w2.size() + b2.size(); }

    std::vector<double> flat() const {
        std::vector<double> out;
        out.reserve(parameter_count());
        for (const auto* v : {&w1, &b1, &w2, &b2}) out.insert(out.end(), v->begin(), v->end());
        return out;
    }

    void set_flat(std::span<const double> p) {
        if (p.size() != parameter_count()) throw std::invalid_argument("MlpHead: parameter count");
        auto it = p.begin();
        for (auto* v : {&w1, &b1, &w2, &b2}) {
            std::copy(it, it + static_cast<std::ptrdiff_t>(v->size()), v->begin());
            it += static_cast<std::ptrdiff_t>(v->size());
        }
    }

    bool finite() const {
        for (const auto* v : {&w1, &b1, &w2, &b2})
            for (double x : *v)
                if (!std::isfinite(x)) return false;
        return true;
    }

    /// Same shape, all zeros.
    MlpHead zeros_like() const { return MlpHead(input_dim, hidden_dim); }
};

struct MlpOutput {
    double visibility = 0.5;
    double logit = 0.0;
    MotionDelta motion;
};

namespace detail {

struct MlpCache {
    std::vector<double> pre;     // hidden pre-activations
    std::vector<double> hidden;  // post-ReLU
    std::array<double, kHeadOutputs> out{};
};

inline void check_features(const MlpHead& head, std::span<const double> x) {
    if (static_cast<int>(x.size()) != head.input_dim) {
        throw std::invalid_argument("mlp: feature length " + std::to_string(x.size()) +
                                    " does not match head input_dim " +
                                    std::to_string(head.input_dim));
    }
}

inline MlpCache mlp_forward_cached(const MlpHead& head, std::span<const double> x) {
    check_features(head, x);
    MlpCache c;
    c.pre.resize(head.hidden_dim);
    c.hidden.resize(head.hidden_dim);
    for (int j = 0; j < head.hidden_dim; ++j) {
        const double* row = head.w1.data() + static_cast<std::size_t>(j) * head.input_dim;
        double s = head.b1[j];
        for (int i = 0; i < head.input_dim; ++i) s += row[i] * x[i];
        c.pre[j] = s;
        c.hidden[j] = s > 0.0 ? s : 0.0;
    }
    for (int k = 0; k < kHeadOutputs; ++k) {
        const double* row = head.w2.data() + static_cast<std::size_t>(k) * head.hidden_dim;
        double s = head.b2[k];
        for (int j = 0; j < head.hidden_dim; ++j) s += row[j] * c.hidden[j];
        c.out[k] = s;
    }
    return c;
}

}  // namespace detail

inline MlpOutput mlp_forward(const MlpHead& head, std::span<const double> features) {
    const auto c = detail::mlp_forward_cached(head, features);
    return MlpOutput{sigmoid(c.out[0]), c.out[0], MotionDelta{c.out[1], c.out[2], c.out[3], c.out[4]}};
}

/// One supervised example: v* = 1 for positive triplets, 0 otherwise. The
/// motion target is ignored when v* = 0.
struct ImmSample {
    std::vector<double> features;
    int visibility = 0;
    MotionDelta motion;
};

struct ImmLossParams {
    FocalParams focal;
    double smooth_l1_beta = 1.0;
};

/// Focal visibility term plus the indicator-gated smooth-L1 motion term for one
/// sample, with the gradient on the five raw outputs.
inline double imm_sample_loss(const std::array<double, kHeadOutputs>& out, const ImmSample& s,
                              const ImmLossParams& lp, std::array<double, kHeadOutputs>& d_out) {
    const LossGrad f = focal_loss_logit(out[0], s.visibility, lp.focal);
    d_out = {f.grad, 0.0, 0.0, 0.0, 0.0};
    double loss = f.loss;
    if (s.visibility == 1) {
        const auto r = smooth_l1(MotionDelta{out[1], out[2], out[3], out[4]}, s.motion,
                                 lp.smooth_l1_beta);
        loss += r.loss;
        d_out[1] = r.grad.dx;
        d_out[2] = r.grad.dy;
        d_out[3] = r.grad.dw;
        d_out[4] = r.grad.dh;
    }
    return loss;
}

struct LossAndGrad {
    double loss = 0.0;
    MlpHead grad;
};

/// Mean loss over the batch and its gradient with respect to every weight.
inline LossAndGrad mlp_loss_and_grad(const MlpHead& head, std::span<const ImmSample> batch,
                                     const ImmLossParams& lp = {}) {
    if (batch.empty()) throw std::invalid_argument("mlp: empty batch");
    LossAndGrad r{0.0, head.zeros_like()};
    const double scale = 1.0 / static_cast<double>(batch.size());
    std::vector<double> d_hidden(head.hidden_dim);
    for (const ImmSample& s : batch) {
        const auto c = detail::mlp_forward_cached(head, s.features);
        std::array<double, kHeadOutputs> d_out{};
        r.loss += scale * imm_sample_loss(c.out, s, lp, d_out);
        std::fill(d_hidden.begin(), d_hidden.end(), 0.0);
        for (int k = 0; k < kHeadOutputs; ++k) {
            const double g = d_out[k] * scale;
            if (g == 0.0) continue;
            r.grad.b2[k] += g;
            double* grow = r.grad.w2.data() + static_cast<std::size_t>(k) * head.hidden_dim;
            const double* wrow = head.w2.data() + static_cast<std::size_t>(k) * head.hidden_dim;
            for (int j = 0; j < head.hidden_dim; ++j) {
                grow[j] += g * c.hidden[j];
                d_hidden[j] += g * wrow[j];
            }
        }
        for (int j = 0; j < head.hidden_dim; ++j) {
            if (c.pre[j] <= 0.0 || d_hidden[j] == 0.0) continue;
            const double g = d_hidden[j];
            r.grad.b1[j] += g;
            double* grow = r.grad.w1.data() + static_cast<std::size_t>(j) * head.input_dim;
            for (int i = 0; i < head.input_dim; ++i) grow[i] += g * s.features[i];
        }
    }
    return r;
}

struct OptimizerState {
    double learning_rate = 0.01;
    double momentum = 0.9;
    double weight_decay = 1e-4;
    std::vector<double> velocity;  // flat, same layout as MlpHead::flat()
};

/// SGD with momentum and L2 weight decay:
///   g <- grad + wd * theta;  v <- mu * v + g;  theta <- theta - lr * v
inline void sgd_update(MlpHead& head, OptimizerState& opt, const MlpHead& grad) {
    std::vector<double> theta = head.flat();
    const std::vector<double> g = grad.flat();
    if (opt.velocity.empty()) opt.velocity.assign(theta.size(), 0.0);
    if (opt.velocity.size() != theta.size())
        throw std::invalid_argument("sgd: velocity shape does not match parameters");
    for (std::size_t i = 0; i < theta.size(); ++i) {
        const double gi = g[i] + opt.weight_decay * theta[i];
        opt.velocity[i] = opt.momentum * opt.velocity[i] + gi;
        theta[i] -= opt.learning_rate * opt.velocity[i];
    }
    head.set_flat(theta);
}

/// Backprop plus one optimizer step. Returns the mean loss before the update.
inline double mlp_train_step(MlpHead& head, OptimizerState& opt, std::span<const ImmSample> batch,
                             const ImmLossParams& lp = {}) {
    LossAndGrad lg = mlp_loss_and_grad(head, batch, lp);
    sgd_update(head, opt, lg.grad);
    return lg.loss;
}

inline nlohmann::json head_to_json(const MlpHead& head) {
    nlohmann::json j;
    j["format"] = "siammot-mlp-head";
    j["input_dim"] = head.input_dim;
    j["hidden_dim"] = head.hidden_dim;
    j["layers"] = nlohmann::json::array({
        {{"rows", head.hidden_dim}, {"cols", head.input_dim}, {"weights", head.w1}, {"bias", head.b1}},
        {{"rows", kHeadOutputs}, {"cols", head.hidden_dim}, {"weights", head.w2}, {"bias", head.b2}},
    });
    return j;
}

inline MlpHead head_from_json(const nlohmann::json& j) {
    const auto& layers = j.at("layers");
    if (!layers.is_array() || layers.size() != 2) throw std::runtime_error("head json: expected 2 layers");
    const int in = layers[0].at("cols").get<int>();
    const int hidden = layers[0].at("rows").get<int>();
    if (layers[1].at("rows").get<int>() != kHeadOutputs || layers[1].at("cols").get<int>() != hidden)
        throw std::runtime_error("head json: layer shapes are inconsistent");
    MlpHead h(in, hidden);
    auto load = [](const nlohmann::json& src, std::vector<double>& dst) {
        auto v = src.get<std::vector<double>>();
        if (v.size() != dst.size()) throw std::runtime_error("head json: weight array has wrong size");
        dst = std::move(v);
    };
    load(layers[0].at("weights"), h.w1);
    load(layers[0].at("bias"), h.b1);
    load(layers[1].at("weights"), h.w2);
    load(layers[1].at("bias"), h.b2);
    if (!h.finite()) throw std::runtime_error("head json: non-finite weights");
    return h;
}

// ---------------------------------------------------------------------------
// Central-difference gradient checking.

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::size_t worst_index = 0;
    std::size_t checked = 0;
};

/// Relative error |a - n| / max(|a|, |n|, floor) between analytic and
/// numeric derivatives.
inline double relative_error(double analytic, double numeric, double floor = 1e-4) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
    return std::abs(analytic - numeric) / denom;
}

template <class F>
GradCheckResult check_gradient(F&& f, std::vector<double> x, std::span<const double> analytic,
                               double step = 1e-5, double floor = 1e-4) {
    if (analytic.size() != x.size()) throw std::invalid_argument("check_gradient: size mismatch");
    GradCheckResult res;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double orig = x[i];
        x[i] = orig + step;
        const double fp = f(std::span<const double>(x));
        x[i] = orig - step;
        const double fm = f(std::span<const double>(x));
        x[i] = orig;
        const double numeric = (fp - fm) / (2.0 * step);
        const double err = relative_error(analytic[i], numeric, floor);
        if (err > res.max_rel_error) {
            res.max_rel_error = err;
            res.worst_index = i;
        }
        ++res.checked;
    }
    return res;
}

// ---------------------------------------------------------------------------
// Triplet sampling.

enum class TripletLabel { Positive, Hard, Negative };

inline const char* to_string(TripletLabel l) {
    switch (l) {
        case TripletLabel::Positive: return "P";
        case TripletLabel::Hard: return "H";
        case TripletLabel::Negative: return "N";
    }
    return "?";
}

struct GtBox {
    int id = -1;
    BBox box;
    bool visible = true;
};

struct Triplet {
    BBox anchor;
    BBox search;
    std::optional<BBox> target;
    TripletLabel label = TripletLabel::Negative;
    int gt_id = -1;
};

struct TripletParams {
    double fg_iou = 0.5;
    double r = 2.0;
    double frame_w = 0.0;
    double frame_h = 0.0;
};

inline std::vector<Triplet> sample_triplets(std::span<const BBox> proposals,
                                            std::span<const GtBox> gt_t,
                                            std::span<const GtBox> gt_td,
                                            const TripletParams& params) {
    std::vector<Triplet> out;
    out.reserve(proposals.size());
    for (const BBox& prop : proposals) {
        Triplet tr;
        tr.anchor = prop;
        tr.search = expand_search_region(prop, params.r, params.frame_w, params.frame_h).clipped;
        double best = 0.0;
        const GtBox* match = nullptr;
        for (const GtBox& g : gt_t) {
            if (!g.visible) continue;
            const double o = iou(prop, g.box);
            if (o > best) {
                best = o;
                match = &g;
            }
        }
        if (match == nullptr || best < params.fg_iou) {
            tr.label = TripletLabel::Negative;
        } else {
            tr.gt_id = match->id;
            tr.label = TripletLabel::Hard;
            for (const GtBox& g : gt_td) {
                if (g.id != match->id) continue;
                if (g.visible && tr.search.contains(g.box.cx(), g.box.cy())) {
                    tr.label = TripletLabel::Positive;
                    tr.target = g.box;
                }
                break;
            }
        }
        out.push_back(tr);
    }
    return out;
}

}  // namespace siammot
