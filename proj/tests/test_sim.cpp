#include <filesystem>

#include <gtest/gtest.h>

#include "siammot/sim.hpp"

using namespace siammot;

TEST(Scenario, SameSeedSameWorld) {
    const ScenarioConfig c = preset_config(Preset::Mixed, 11);
    const Scenario a = generate_scenario(c), b = generate_scenario(c);
    ASSERT_EQ(a.identities(), b.identities());
    for (int id = 0; id < a.identities(); ++id)
        for (int f = 0; f < a.frames(); ++f) {
            EXPECT_EQ(a.gt[id][f].box, b.gt[id][f].box);
            EXPECT_EQ(a.gt[id][f].visible, b.gt[id][f].visible);
        }
    const Scenario other = generate_scenario(preset_config(Preset::Mixed, 12));
    EXPECT_NE(a.gt[0][0].box, other.gt[0][0].box);
}

TEST(Scenario, BoxesAreValidAndInsideTheFrame) {
    for (Preset p : {Preset::SlowCrowded, Preset::FastCamera, Preset::Mixed}) {
        const Scenario s = generate_scenario(preset_config(p, 4));
        for (const auto& traj : s.gt)
            for (const GtState& g : traj) {
                EXPECT_TRUE(g.box.valid());
                EXPECT_GE(g.box.x, 0.0);
                EXPECT_GE(g.box.y, 0.0);
                EXPECT_LE(g.box.right(), s.config.frame_w);
                EXPECT_LE(g.box.bottom(), s.config.frame_h);
            }
    }
}

TEST(Scenario, VisibilityFollowsTheOcclusionSchedule) {
    ScenarioConfig c = preset_config(Preset::SlowCrowded, 3);
    c.occlusions = {{2, 10, 5}, {4, 0, 3}};
    c.auto_occlusions = {6, 4, 12};
    const Scenario s = generate_scenario(c);
    std::vector<std::vector<bool>> expect(c.n_objects, std::vector<bool>(c.frames, true));
    for (const auto& e : s.config.occlusions)
        for (int f = e.start; f < e.start + e.duration; ++f) expect[e.track][f] = false;
    EXPECT_EQ(s.config.occlusions.size(), 8u);
    for (int id = 0; id < c.n_objects; ++id)
        for (int f = 0; f < c.frames; ++f) EXPECT_EQ(s.gt[id][f].visible, expect[id][f]);
    EXPECT_FALSE(s.gt[2][12].visible);
}

TEST(Scenario, VisibleTracksUseOneBasedIds) {
    ScenarioConfig c = preset_config(Preset::SlowCrowded, 3);
    c.occlusions = {{0, 5, 2}};
    const TrackSet t = generate_scenario(c).visible_tracks();
    ASSERT_TRUE(t.contains(1));
    EXPECT_TRUE(t.at(1).contains(1));
    EXPECT_FALSE(t.at(1).contains(6));
    EXPECT_FALSE(t.at(1).contains(7));
    EXPECT_EQ(static_cast<int>(t.size()), c.n_objects);
}

TEST(Scenario, InvalidSettingsAreRejected) {
    ScenarioConfig c;
    c.frames = 1;
    EXPECT_THROW(generate_scenario(c), std::invalid_argument);
    c = ScenarioConfig{};
    c.occlusions = {{99, 0, 1}};
    EXPECT_THROW(generate_scenario(c), std::invalid_argument);
    c = ScenarioConfig{};
    c.occlusions = {{0, 140, 20}};
    EXPECT_THROW(generate_scenario(c), std::invalid_argument);
}

TEST(Detections, NoiseFreeDetectionsReproduceVisibleGt) {
    const Scenario s = generate_scenario(preset_config(Preset::Mixed, 2));
    const auto dets = simulate_detections(s, DetectorNoiseConfig::none());
    for (int f = 0; f < s.frames(); ++f) {
        std::size_t visible = 0;
        for (int id = 0; id < s.identities(); ++id) visible += s.gt[id][f].visible;
        ASSERT_EQ(dets[f].size(), visible);
        for (const Detection& d : dets[f]) EXPECT_NEAR(d.confidence, 1.0, 1e-12);
    }
}

TEST(Detections, CountMatchesMissAndClutterRates) {
    DetectorNoiseConfig nz;
    nz.miss_rate = 0.1;
    nz.clutter_rate = 0.5;
    double expected = 0.0, got = 0.0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const Scenario s = generate_scenario(preset_config(Preset::SlowCrowded, seed));
        nz.seed = seed;
        long long visible = 0;
        for (const auto& traj : s.gt)
            for (const GtState& g : traj) visible += g.visible;
        expected += (1.0 - nz.miss_rate) * visible + nz.clutter_rate * s.frames();
        for (const auto& f : simulate_detections(s, nz)) got += static_cast<double>(f.size());
    }
    EXPECT_NEAR(got / expected, 1.0, 0.05);
}

TEST(Detections, ConfidencesInUnitInterval) {
    const Scenario s = generate_scenario(preset_config(Preset::FastCamera, 1));
    DetectorNoiseConfig nz;
    nz.seed = 9;
    for (const auto& f : simulate_detections(s, nz))
        for (const Detection& d : f) {
            EXPECT_GE(d.confidence, 0.0);
            EXPECT_LE(d.confidence, 1.0);
        }
}

TEST(Render, DeterministicAndInRange) {
    const Scenario s = generate_scenario(preset_config(Preset::SlowCrowded, 5));
    const Image a = render_frame(s, 10), b = render_frame(s, 10);
    EXPECT_EQ(a.data, b.data);
    for (double v : a.data) {
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
    }
}

TEST(Render, PgmRoundTripWithinQuantization) {
    const Scenario s = generate_scenario(preset_config(Preset::SlowCrowded, 5));
    const Image a = render_frame(s, 0);
    const auto path = std::filesystem::temp_directory_path() / "siammot_render_test.pgm";
    write_pgm(a, path.string(), "test");
    const Image b = read_pgm(path.string());
    std::filesystem::remove(path);
    ASSERT_EQ(b.width, a.width);
    ASSERT_EQ(b.height, a.height);
    for (std::size_t i = 0; i < a.data.size(); ++i) EXPECT_NEAR(a.data[i], b.data[i], 0.5 / 255.0 + 1e-12);
}

namespace {

Scenario straight_line(double px_per_frame, double fps, int frames) {
    Scenario s;
    s.config.fps = fps;
    s.config.frames = frames;
    s.gt.assign(1, std::vector<GtState>(frames));
    for (int f = 0; f < frames; ++f) s.gt[0][f] = GtState{BBox{10 + px_per_frame * f, 20, 10, 20}, true};
    return s;
}

}  // namespace

TEST(MotionHistogram, StaticSceneIsAllInTheCenterBin) {
    const MotionHistogram h = motion_histogram(straight_line(0.0, 30, 20));
    EXPECT_EQ(h.total, 19);
    EXPECT_EQ(h.at(10, 10), 19);
    EXPECT_DOUBLE_EQ(h.mean_offset, 0.0);
}

TEST(MotionHistogram, ConstantVelocityFillsOneOffCenterBin) {
    // 1 px per frame at 10 fps on a 10 px wide box: 1.0 widths per second
    const HistogramSpec spec{21, 3.5};
    const MotionHistogram h = motion_histogram(straight_line(1.0, 10, 30), spec);
    EXPECT_EQ(h.at(13, 10), 29);  // floor((1 + 3.5) / 7 * 21) = 13
    EXPECT_NEAR(h.mean_offset, 1.0, 1e-12);
}

TEST(MotionHistogram, MassIsConservedWithOverflowBins) {
    Scenario s = straight_line(50.0, 30, 10);  // far beyond the range
    s.gt[0][4].visible = false;
    const MotionHistogram h = motion_histogram(s);
    long long sum = 0;
    for (long long c : h.counts) sum += c;
    EXPECT_EQ(sum, h.total);
    EXPECT_EQ(h.total, 8);  // 9 visible samples, one gap bridged
    EXPECT_EQ(h.at(20, 10), 8);
}

TEST(MotionHistogram, FastCameraPresetMovesMoreThanSlowCrowded) {
    double fast = 0.0, slow = 0.0;
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        fast += motion_histogram(generate_scenario(preset_config(Preset::FastCamera, seed))).mean_offset;
        slow += motion_histogram(generate_scenario(preset_config(Preset::SlowCrowded, seed))).mean_offset;
    }
    EXPECT_GT(fast, 3.0 * slow);
}

TEST(MotionHistogram, CsvListsEveryBin) {
    const MotionHistogram h = motion_histogram(straight_line(1.0, 10, 5), HistogramSpec{3, 1.0});
    const std::string csv = h.to_csv("hdr");
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 2 + 9);
    EXPECT_EQ(csv.rfind("# hdr\n", 0), 0u);
}
