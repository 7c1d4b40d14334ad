#pragma once

// Finite-difference verification of every analytic gradient in the library.
// Each kernel contributes a randomized trial; a kernel passes when the worst
// relative error over all trials stays within tolerance.

#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "siammot/emm.hpp"
#include "siammot/kernels.hpp"
#include "siammot/rng.hpp"

namespace siammot {

struct KernelCheck {
    std::string name;
    std::function<GradCheckResult(Rng&)> trial;
};

struct GradCheckRow {
    std::string kernel;
    int trials = 0;
    double max_rel_error = 0.0;
    bool pass = false;
};

namespace detail {

/// Draws b until it is at least `gap` away from every value in `avoid`.
inline double draw_away(Rng& rng, double lo, double hi, std::initializer_list<double> avoid, double gap) {
    for (;;) {
        const double v = rng.uniform(lo, hi);
        bool ok = true;
        for (double a : avoid) ok = ok && std::abs(v - a) >= gap;
        if (ok) return v;
    }
}

inline GradCheckResult check_focal(Rng& rng) {
    const FocalParams fp{rng.uniform(0.5, 3.0), rng.uniform(0.1, 0.9), 1e-7};
    const int y = rng.bernoulli(0.5) ? 1 : 0;
    const double p = rng.uniform(0.02, 0.98);
    const double g = focal_loss(p, y, fp).grad;
    return check_gradient([&](std::span<const double> x) { return focal_loss(x[0], y, fp).loss; },
                          std::vector<double>{p}, std::span<const double>(&g, 1));
}

inline GradCheckResult check_smooth_l1(Rng& rng) {
    const double beta = rng.uniform(0.2, 2.0);
    MotionDelta target{rng.normal(0, 1), rng.normal(0, 1), rng.normal(0, 1), rng.normal(0, 1)};
    const double t[4] = {target.dx, target.dy, target.dw, target.dh};
    std::vector<double> x(4);
    for (int k = 0; k < 4; ++k)
        x[k] = draw_away(rng, t[k] - 3.0, t[k] + 3.0, {t[k] - beta, t[k] + beta}, 1e-3);
    auto as_delta = [](std::span<const double> v) { return MotionDelta{v[0], v[1], v[2], v[3]}; };
    const auto r = smooth_l1(as_delta(x), target, beta);
    const std::vector<double> g{r.grad.dx, r.grad.dy, r.grad.dw, r.grad.dh};
    return check_gradient([&](std::span<const double> v) { return smooth_l1(as_delta(v), target, beta).loss; }, x, g);
}

inline GradCheckResult check_iou_loss(Rng& rng) {
    Offsets target;
    std::vector<double> x(4);
    for (int k = 0; k < 4; ++k) {
        target[k] = rng.uniform(1.0, 20.0);
        x[k] = draw_away(rng, 1.0, 20.0, {target[k]}, 1e-3);
    }
    auto as_off = [](std::span<const double> v) { return Offsets{v[0], v[1], v[2], v[3]}; };
    const auto r = iou_loss(as_off(x), target);
    return check_gradient([&](std::span<const double> v) { return iou_loss(as_off(v), target).loss; }, x,
                          std::span<const double>(r.grad));
}

/// Focal visibility term plus gated smooth-L1 motion term, differentiated
/// with respect to the five raw head outputs.
inline GradCheckResult check_imm_loss(Rng& rng) {
    ImmSample s;
    s.visibility = rng.bernoulli(0.5) ? 1 : 0;
    s.motion = MotionDelta{rng.normal(0, 0.5), rng.normal(0, 0.5), rng.normal(0, 0.2), rng.normal(0, 0.2)};
    const ImmLossParams lp;
    const double beta = lp.smooth_l1_beta;
    const double t[4] = {s.motion.dx, s.motion.dy, s.motion.dw, s.motion.dh};
    std::vector<double> x(kHeadOutputs);
    x[0] = rng.uniform(-3.0, 3.0);
    for (int k = 0; k < 4; ++k) x[k + 1] = draw_away(rng, t[k] - 2.5, t[k] + 2.5, {t[k] - beta, t[k] + beta}, 1e-3);
    auto eval = [&](std::span<const double> v, std::array<double, kHeadOutputs>& d) {
        std::array<double, kHeadOutputs> out{};
        std::copy(v.begin(), v.end(), out.begin());
        return imm_sample_loss(out, s, lp, d);
    };
    std::array<double, kHeadOutputs> d{};
    eval(x, d);
    return check_gradient([&](std::span<const double> v) {
        std::array<double, kHeadOutputs> scratch{};
        return eval(v, scratch);
    }, x, std::span<const double>(d));
}

/// Dense loss on a 4 x 4 grid, differentiated with respect to every v and p entry.
inline GradCheckResult check_emm_loss(Rng& rng) {
    const GridGeometry g = GridGeometry::over(BBox{0, 0, 40, 40}, 4, 4);
    const BBox gt{rng.uniform(1.0, 12.0), rng.uniform(1.0, 12.0), rng.uniform(16.0, 27.0), rng.uniform(16.0, 27.0)};
    const std::size_t n = g.size();
    std::vector<double> x(n * 5);
    for (std::size_t i = 0; i < n; ++i) {
        x[i] = rng.uniform(0.05, 0.95);
        const int ix = static_cast<int>(i % g.width), iy = static_cast<int>(i / g.width);
        const Offsets t = target_offsets(g.x_at(ix), g.y_at(iy), gt);
        for (int k = 0; k < 4; ++k) x[n + 4 * i + k] = draw_away(rng, 1.0, 30.0, {t[k]}, 1e-3);
    }
    auto to_maps = [&](std::span<const double> v) {
        ResponseMaps m(g);
        for (std::size_t i = 0; i < n; ++i) {
            m.v[i] = v[i];
            for (int k = 0; k < 4; ++k) m.p[i][k] = v[n + 4 * i + k];
        }
        return m;
    };
    const EmmLossResult r = emm_loss(to_maps(x), gt);
    std::vector<double> grad(n * 5);
    for (std::size_t i = 0; i < n; ++i) {
        grad[i] = r.d_v[i];
        for (int k = 0; k < 4; ++k) grad[n + 4 * i + k] = r.d_p[i][k];
    }
    return check_gradient([&](std::span<const double> v) { return emm_loss(to_maps(v), gt).loss; }, x, grad);
}

/// Full backprop through a small head on a small batch. Heads with a hidden
/// pre-activation near the ReLU kink are redrawn.
inline GradCheckResult check_mlp_backprop(Rng& rng) {
    constexpr int in = 3, hidden = 4, batch = 4;
    for (;;) {
        MlpHead head = MlpHead::random(in, hidden, rng.next_u64());
        for (double& b : head.b1) b = rng.uniform(-0.5, 0.5);
        for (double& b : head.b2) b = rng.uniform(-0.5, 0.5);
        std::vector<ImmSample> samples(batch);
        for (auto& s : samples) {
            s.features = {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
            s.visibility = rng.bernoulli(0.5) ? 1 : 0;
            s.motion = MotionDelta{rng.normal(0, 0.3), rng.normal(0, 0.3), rng.normal(0, 0.1), rng.normal(0, 0.1)};
        }
        bool near_kink = false;
        for (const auto& s : samples) {
            const auto c = detail::mlp_forward_cached(head, s.features);
            for (double p : c.pre) near_kink = near_kink || std::abs(p) < 1e-3;
            for (int k = 1; k < kHeadOutputs; ++k) {
                const double t[4] = {s.motion.dx, s.motion.dy, s.motion.dw, s.motion.dh};
                near_kink = near_kink || std::abs(std::abs(c.out[k] - t[k - 1]) - 1.0) < 1e-3;
            }
        }
        if (near_kink) continue;
        const LossAndGrad lg = mlp_loss_and_grad(head, samples);
        const std::vector<double> analytic = lg.grad.flat();
        MlpHead probe = head;
        return check_gradient([&](std::span<const double> p) {
            probe.set_flat(p);
            return mlp_loss_and_grad(probe, samples).loss;
        }, head.flat(), analytic);
    }
}

}  // namespace detail

inline std::vector<KernelCheck> standard_kernel_checks() {
    return {
        {"focal", detail::check_focal},
        {"smooth_l1", detail::check_smooth_l1},
        {"iou_loss", detail::check_iou_loss},
        {"imm_loss", detail::check_imm_loss},
        {"emm_loss", detail::check_emm_loss},
        {"mlp_backprop", detail::check_mlp_backprop},
    };
}

inline std::vector<GradCheckRow> run_gradcheck(const std::vector<KernelCheck>& checks, int trials,
                                               std::uint64_t seed, double tolerance = 1e-5) {
    std::vector<GradCheckRow> rows;
    for (std::size_t k = 0; k < checks.size(); ++k) {
        GradCheckRow row;
        row.kernel = checks[k].name;
        for (int t = 0; t < trials; ++t) {
            Rng rng = Rng::keyed(seed, 0x4743, k, static_cast<std::uint64_t>(t));
            row.max_rel_error = std::max(row.max_rel_error, checks[k].trial(rng).max_rel_error);
            ++row.trials;
        }
        row.pass = row.max_rel_error <= tolerance;
        rows.push_back(row);
    }
    return rows;
}

}  // namespace siammot
