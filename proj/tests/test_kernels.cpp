#include <cmath>
#include <set>

#include <gtest/gtest.h>

#include "siammot/gradcheck.hpp"
#include "siammot/kernels.hpp"

using namespace siammot;

TEST(Focal, HandValueAtHalfProbability) {
    // y = 1, p = 0.5: -0.25 * 0.5^2 * ln 0.5
    EXPECT_NEAR(focal_loss(0.5, 1).loss, -0.25 * 0.25 * std::log(0.5), 1e-15);
    // y = 0, p = 0.5: -0.75 * 0.5^2 * ln 0.5
    EXPECT_NEAR(focal_loss(0.5, 0).loss, -0.75 * 0.25 * std::log(0.5), 1e-15);
}

TEST(Focal, GammaZeroReducesToWeightedCrossEntropy) {
    const FocalParams fp{0.0, 0.25, 1e-7};
    for (double p : {0.1, 0.3, 0.7, 0.95}) {
        EXPECT_NEAR(focal_loss(p, 1, fp).loss, -0.25 * std::log(p), 1e-12);
        EXPECT_NEAR(focal_loss(p, 0, fp).loss, -0.75 * std::log(1.0 - p), 1e-12);
    }
}

TEST(Focal, ConfidentCorrectPredictionsAreDownWeighted) {
    const double easy = focal_loss(0.95, 1).loss / (-std::log(0.95));
    const double hard = focal_loss(0.3, 1).loss / (-std::log(0.3));
    EXPECT_LT(easy, hard);
}

TEST(Focal, ClampedRegionHasZeroGradient) {
    EXPECT_EQ(focal_loss(0.0, 1).grad, 0.0);
    EXPECT_EQ(focal_loss(1.0, 0).grad, 0.0);
    EXPECT_TRUE(std::isfinite(focal_loss(0.0, 1).loss));
}

TEST(Focal, LogitGradientMatchesChainRule) {
    Rng rng(8);
    for (int i = 0; i < 200; ++i) {
        const double z = rng.uniform(-4, 4);
        const int y = rng.bernoulli(0.5) ? 1 : 0;
        const double g = focal_loss_logit(z, y).grad;
        const auto r = check_gradient([&](std::span<const double> x) { return focal_loss_logit(x[0], y).loss; },
                                      std::vector<double>{z}, std::span<const double>(&g, 1));
        EXPECT_LT(r.max_rel_error, 1e-5);
    }
}

TEST(SmoothL1, QuadraticInsideLinearOutside) {
    const MotionDelta zero{};
    EXPECT_NEAR(smooth_l1(MotionDelta{0.5, 0, 0, 0}, zero).loss, 0.125, 1e-15);
    EXPECT_NEAR(smooth_l1(MotionDelta{3.0, 0, 0, 0}, zero).loss, 2.5, 1e-15);
    EXPECT_NEAR(smooth_l1(MotionDelta{-3.0, 0.5, 0, 0}, zero).loss, 2.625, 1e-15);
    EXPECT_EQ(smooth_l1(MotionDelta{-3.0, 0, 0, 0}, zero).grad.dx, -1.0);
}

TEST(SmoothL1, ContinuousAtBeta) {
    const double beta = 0.7;
    const double below = smooth_l1(MotionDelta{beta - 1e-9, 0, 0, 0}, MotionDelta{}, beta).loss;
    const double above = smooth_l1(MotionDelta{beta + 1e-9, 0, 0, 0}, MotionDelta{}, beta).loss;
    EXPECT_NEAR(below, above, 1e-8);
}

TEST(IouLoss, ZeroForIdenticalOffsets) {
    const Offsets o{3, 4, 5, 6};
    EXPECT_NEAR(iou_loss(o, o).loss, 0.0, 1e-15);
    for (double g : iou_loss(o, o).grad) EXPECT_TRUE(std::isfinite(g));
}

TEST(IouLoss, HandValue) {
    // pred 2x2 inside target 4x2 sharing the anchor: IOU = 4 / 8
    const Offsets pred{1, 1, 1, 1}, target{2, 1, 2, 1};
    EXPECT_NEAR(iou_loss(pred, target).loss, std::log(2.0), 1e-15);
}

TEST(IouLoss, AgreesWithBoxIou) {
    Rng rng(21);
    for (int i = 0; i < 300; ++i) {
        Offsets a, b;
        for (int k = 0; k < 4; ++k) {
            a[k] = rng.uniform(0.5, 10);
            b[k] = rng.uniform(0.5, 10);
        }
        const BBox ba = BBox::from_corners(-a[0], -a[1], a[2], a[3]);
        const BBox bb = BBox::from_corners(-b[0], -b[1], b[2], b[3]);
        EXPECT_NEAR(iou_loss(a, b).loss, -std::log(iou(ba, bb)), 1e-9);
    }
}

TEST(IouLoss, RejectsDegenerateOffsets) {
    EXPECT_THROW(iou_loss(Offsets{-1, 1, 1, 1}, Offsets{1, 1, 1, 1}), std::invalid_argument);
    EXPECT_THROW(iou_loss(Offsets{0, 1, 0, 1}, Offsets{1, 1, 1, 1}), std::invalid_argument);
}

TEST(Centerness, OneAtCenterZeroOutside) {
    const BBox b{0, 0, 10, 20};
    EXPECT_NEAR(centerness(5, 10, b), 1.0, 1e-15);
    EXPECT_EQ(centerness(-1, 10, b), 0.0);
    // l=2, r=8, t=10, b=10: sqrt(2/8 * 1)
    EXPECT_NEAR(centerness(2, 10, b), 0.5, 1e-15);
}

TEST(Mlp, ForwardShapesAndRange) {
    const MlpHead h = MlpHead::random(6, 8, 3);
    const std::vector<double> x{0.1, -0.2, 0.3, 0.0, 1.0, -1.0};
    const MlpOutput o = mlp_forward(h, x);
    EXPECT_GE(o.visibility, 0.0);
    EXPECT_LE(o.visibility, 1.0);
    EXPECT_THROW(mlp_forward(h, std::vector<double>(5, 0.0)), std::invalid_argument);
}

TEST(Mlp, FlatRoundTrip) {
    MlpHead h = MlpHead::random(4, 3, 1);
    auto p = h.flat();
    for (double& v : p) v += 0.5;
    h.set_flat(p);
    EXPECT_EQ(h.flat(), p);
}

TEST(Mlp, JsonRoundTripIsExact) {
    const MlpHead h = MlpHead::random(5, 7, 99);
    const MlpHead back = head_from_json(nlohmann::json::parse(head_to_json(h).dump()));
    EXPECT_EQ(back.flat(), h.flat());
    EXPECT_EQ(back.input_dim, 5);
    EXPECT_EQ(back.hidden_dim, 7);
}

TEST(Mlp, JsonRejectsWrongShapes) {
    auto j = head_to_json(MlpHead::random(5, 7, 99));
    j["layers"][1]["rows"] = 4;
    EXPECT_THROW(head_from_json(j), std::runtime_error);
}

TEST(Mlp, PositiveOnlyBatchNeverPushesVisibilityDown) {
    Rng rng(4);
    const MlpHead h = MlpHead::random(3, 4, 12);
    for (int i = 0; i < 200; ++i) {
        ImmSample s;
        s.features = {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
        s.visibility = 1;
        s.motion = MotionDelta{rng.normal(0, 0.3), 0, 0, 0};
        std::array<double, kHeadOutputs> out{}, d{};
        out[0] = rng.uniform(-4, 4);
        imm_sample_loss(out, s, ImmLossParams{}, d);
        EXPECT_LE(d[0], 0.0);  // descent raises the visibility logit
    }
}

TEST(Mlp, NegativeSampleHasNoMotionGradient) {
    ImmSample s;
    s.visibility = 0;
    s.motion = MotionDelta{5, 5, 5, 5};
    std::array<double, kHeadOutputs> out{0.3, 1, 2, 3, 4}, d{};
    imm_sample_loss(out, s, ImmLossParams{}, d);
    for (int k = 1; k < kHeadOutputs; ++k) EXPECT_EQ(d[k], 0.0);
    EXPECT_GT(d[0], 0.0);
}

TEST(Mlp, TrainingReducesLossOnSeparableData) {
    Rng rng(17);
    std::vector<ImmSample> data;
    for (int i = 0; i < 128; ++i) {
        ImmSample s;
        const double a = rng.uniform(-1, 1), b = rng.uniform(-1, 1);
        s.features = {a, b};
        s.visibility = a > 0 ? 1 : 0;
        s.motion = MotionDelta{0.5 * b, -0.2 * a, 0.0, 0.1};
        data.push_back(s);
    }
    MlpHead h = MlpHead::random(2, 16, 5);
    OptimizerState opt;
    opt.learning_rate = 0.05;
    const double before = mlp_loss_and_grad(h, data).loss;
    for (int e = 0; e < 300; ++e) mlp_train_step(h, opt, data);
    const double after = mlp_loss_and_grad(h, data).loss;
    EXPECT_LT(after, 0.3 * before);
    int correct = 0;
    for (const auto& s : data) correct += (mlp_forward(h, s.features).visibility >= 0.5) == (s.visibility == 1);
    EXPECT_GE(correct, 120);
}

TEST(GradCheck, CheckGradientFlagsAWrongDerivative) {
    const double wrong = 3.0;  // d/dx x^2 at x = 1 is 2
    const auto r = check_gradient([](std::span<const double> x) { return x[0] * x[0]; }, std::vector<double>{1.0},
                                  std::span<const double>(&wrong, 1));
    EXPECT_GT(r.max_rel_error, 0.1);
}

TEST(GradCheck, EveryKernelPassesOnSeededTrials) {
    const auto rows = run_gradcheck(standard_kernel_checks(), 25, 7);
    ASSERT_EQ(rows.size(), 6u);
    for (const auto& r : rows) {
        EXPECT_TRUE(r.pass) << r.kernel << " max rel error " << r.max_rel_error;
        EXPECT_EQ(r.trials, 25);
    }
}

TEST(GradCheck, KernelNamesAreUnique) {
    std::set<std::string> names;
    for (const auto& k : standard_kernel_checks()) EXPECT_TRUE(names.insert(k.name).second) << k.name;
}

TEST(Triplets, LabelsFollowOverlapAndNextFrameVisibility) {
    const std::vector<GtBox> gt_t{{0, BBox{10, 10, 20, 40}, true}, {1, BBox{100, 10, 20, 40}, true}};
    const std::vector<GtBox> gt_td{{0, BBox{14, 12, 20, 40}, true}, {1, BBox{100, 10, 20, 40}, false}};
    const std::vector<BBox> props{BBox{11, 11, 20, 40}, BBox{101, 10, 20, 40}, BBox{200, 100, 20, 40}};
    const TripletParams tp{0.5, 2.0, 320, 240};
    const auto tr = sample_triplets(props, gt_t, gt_td, tp);
    ASSERT_EQ(tr.size(), 3u);
    EXPECT_EQ(tr[0].label, TripletLabel::Positive);
    ASSERT_TRUE(tr[0].target.has_value());
    EXPECT_EQ(*tr[0].target, (BBox{14, 12, 20, 40}));
    EXPECT_EQ(tr[1].label, TripletLabel::Hard);
    EXPECT_FALSE(tr[1].target.has_value());
    EXPECT_EQ(tr[2].label, TripletLabel::Negative);
}

TEST(Triplets, TargetOutsideSearchRegionIsHard) {
    const std::vector<GtBox> gt_t{{0, BBox{10, 10, 20, 40}, true}};
    const std::vector<GtBox> gt_td{{0, BBox{150, 10, 20, 40}, true}};
    const std::vector<BBox> props{BBox{10, 10, 20, 40}};
    const auto tr = sample_triplets(props, gt_t, gt_td, TripletParams{0.5, 2.0, 320, 240});
    EXPECT_EQ(tr[0].label, TripletLabel::Hard);
}
