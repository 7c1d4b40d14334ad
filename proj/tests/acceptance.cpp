// Acceptance runner: one PASS/FAIL line per criterion with its runtime.
// A criterion that overruns its time budget fails.

#include <sys/wait.h>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "oracles.hpp"
#include "siammot/experiment.hpp"
#include "siammot/gradcheck.hpp"

namespace fs = std::filesystem;
using namespace siammot;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

struct Criterion {
    int id;
    std::string name;
    double budget_s;
    std::function<Outcome()> run;
};

std::string num(double v, int digits = 4) {
    std::ostringstream s;
    s << std::setprecision(digits) << v;
    return s.str();
}

RunConfig preset_run(Preset p, MatcherKind m, std::uint64_t seed) {
    RunConfig c;
    c.scenario = preset_config(p);
    c.matcher = m;
    c.seed = seed;
    resolve(c);
    validate(c);
    return c;
}

// ---------------------------------------------------------------------------

Outcome gradient_suite() {
    const auto rows = run_gradcheck(standard_kernel_checks(), 100, 0, 1e-5);
    Outcome o{true, ""};
    for (const auto& r : rows) {
        o.pass = o.pass && r.pass && r.trials >= 100;
        o.detail += r.kernel + "=" + num(r.max_rel_error, 2) + " ";
    }
    return o;
}

Outcome oracle_equivalences() {
    Rng rng(2024);
    int corr = 0, hung = 0, idf = 0;
    for (int t = 0; t < 300; ++t) {
        const int ch = rng.uniform_int(1, 3), th = rng.uniform_int(1, 5), tw = rng.uniform_int(1, 5);
        FeatureMap s(ch, th + rng.uniform_int(0, 6), tw + rng.uniform_int(0, 6)), k(ch, th, tw);
        for (double& v : s.data) v = std::round(rng.uniform(-9, 9));
        for (double& v : k.data) v = std::round(rng.uniform(-9, 9));
        if (cross_correlate(s, k).data != oracle::correlate(s, k).data) return {false, "cross_correlate mismatch"};
        ++corr;
    }
    for (int n = 1; n <= 7; ++n)
        for (int m = 1; m <= 7; ++m)
            for (int t = 0; t < 4; ++t) {
                CostMatrix c(n, std::vector<double>(m));
                for (auto& row : c)
                    for (double& v : row) v = std::round(rng.uniform(0, 50));
                if (hungarian(c).total_cost != oracle::assignment_cost(c))
                    return {false, "hungarian mismatch at " + std::to_string(n) + "x" + std::to_string(m)};
                ++hung;
            }
    for (int t = 0; t < 200; ++t) {
        TrackSet gt, pred;
        const int ng = rng.uniform_int(1, 6), np = rng.uniform_int(1, 6);
        auto line = [&](double x0) {
            Trajectory tr;
            const int a = rng.uniform_int(1, 8), b = rng.uniform_int(a, 16);
            for (int f = a; f <= b; ++f) tr[f] = TrackPoint{BBox{x0 + rng.uniform(-3, 3), 10, 10, 20}, 1.0};
            return tr;
        };
        for (int i = 1; i <= ng; ++i) gt[i] = line(30.0 * i);
        for (int j = 1; j <= np; ++j) pred[j] = line(30.0 * rng.uniform_int(1, ng));
        if (identity_metrics(gt, pred).idtp != oracle::identity_tp(gt, pred)) return {false, "IDF1 pairing mismatch"};
        ++idf;
    }
    return {true, std::to_string(corr) + " correlations, " + std::to_string(hung) + " assignments, " +
                      std::to_string(idf) + " identity pairings"};
}

Outcome exact_recovery() {
    Outcome o{true, ""};
    for (Preset p : {Preset::SlowCrowded, Preset::FastCamera, Preset::Mixed}) {
        RunConfig c = preset_run(p, MatcherKind::Oracle, 0);
        c.noise = DetectorNoiseConfig::none();
        const RunResult r = run_tracking(c);
        const EvalReport& rep = *r.report;
        o.pass = o.pass && rep.mota() >= 0.99 && rep.idf1() >= 0.99 && rep.idsw() == 0;
        o.detail += std::string(to_string(p)) + ": MOTA " + num(rep.mota()) + " IDF1 " + num(rep.idf1()) + " IDsw " +
                    std::to_string(rep.idsw()) + "; ";
    }
    return o;
}

Outcome matcher_ordering() {
    double zero = 0.0, kalman = 0.0, ncc = 0.0;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        zero += run_tracking(preset_run(Preset::FastCamera, MatcherKind::ZeroMotion, seed)).report->mota() / 5.0;
        kalman += run_tracking(preset_run(Preset::FastCamera, MatcherKind::Kalman, seed)).report->mota() / 5.0;
        ncc += run_tracking(preset_run(Preset::FastCamera, MatcherKind::Ncc, seed)).report->mota() / 5.0;
    }
    return {zero < kalman && kalman < ncc && ncc - zero >= 0.2,
            "MOTA zero-motion " + num(zero) + " < kalman " + num(kalman) + " < ncc " + num(ncc) + ", gap " +
                num(ncc - zero)};
}

/// Slow-crowded with extra long occlusions; the default matcher.
RunConfig occlusion_rich() {
    RunConfig c = preset_run(Preset::SlowCrowded, MatcherKind::Ncc, 0);
    c.scenario->auto_occlusions = {16, 5, 25};
    validate(c);
    return c;
}

Outcome tau_trend() {
    const AblationTable t = run_ablation(AblationSuite::Tau, occlusion_rich());
    const AblationRow* t1 = find_row(t, {{"tau", "1"}});
    const AblationRow* t30 = find_row(t, {{"tau", "30"}});
    std::string detail;
    for (const auto& r : t.rows)
        detail += "tau " + r.keys[0].second + ": IDF1 " + num(r.idf1) + " IDsw " + std::to_string(r.idsw) + "; ";
    return {t30->idf1 > t1->idf1 && t30->idsw <= t1->idsw, detail};
}

Outcome alpha_beta_trend() {
    RunConfig c = preset_run(Preset::SlowCrowded, MatcherKind::Ncc, 0);
    c.ablate.seeds = 3;
    const AblationTable t = run_ablation(AblationSuite::AlphaBeta, c);
    auto row = [&](double a, double b) {
        return find_row(t, {{"alpha", format_number(a)}, {"beta", format_number(b)}});
    };
    bool ok = true;
    std::string detail;
    for (double a : kAlphaBetaGrid) {
        detail += "alpha " + format_number(a) + " FN";
        for (std::size_t k = 0; k < 3; ++k) {
            detail += " " + std::to_string(row(a, kAlphaBetaGrid[k])->fn);
            if (k > 0) ok = ok && row(a, kAlphaBetaGrid[k])->fn >= row(a, kAlphaBetaGrid[k - 1])->fn;
        }
        detail += "; ";
    }
    for (double b : kAlphaBetaGrid) {
        detail += "beta " + format_number(b) + " FP";
        for (std::size_t k = 0; k < 3; ++k) {
            detail += " " + std::to_string(row(kAlphaBetaGrid[k], b)->fp);
            if (k > 0) ok = ok && row(kAlphaBetaGrid[k], b)->fp <= row(kAlphaBetaGrid[k - 1], b)->fp;
        }
        detail += "; ";
    }
    return {ok, detail};
}

Outcome triplet_trend() {
    bool ok = true;
    std::string detail;
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        RunConfig c = preset_run(Preset::Mixed, MatcherKind::Imm, seed);
        const auto held = imm_heldout_samples(c);
        c.imm.train.use_negative = false;
        const double ph = visible_rate(train_imm_head(c).head, held, TripletLabel::Negative, 0.5);
        c.imm.train.use_negative = true;
        const double phn = visible_rate(train_imm_head(c).head, held, TripletLabel::Negative, 0.5);
        ok = ok && phn <= ph;
        detail += "seed " + std::to_string(seed) + ": P+H+N " + num(phn) + " vs P+H " + num(ph) + "; ";
    }
    return {ok, "held-out false visibility on N, " + detail};
}

Outcome calibration() {
    const double fast = motion_histogram(generate_scenario(preset_config(Preset::FastCamera, 0))).mean_offset;
    const double slow = motion_histogram(generate_scenario(preset_config(Preset::SlowCrowded, 0))).mean_offset;
    return {fast > 3.0 * slow, "mean offset fast " + num(fast) + "/s, slow " + num(slow) + "/s, ratio " +
                                   num(fast / slow)};
}

// ---------------------------------------------------------------------------

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

int run_cli(const std::string& args, const fs::path& log) {
    const std::string cmd = std::string(SIAMMOT_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

/// Content used for comparison: run.json without its wall-clock timing.
std::string comparable(const fs::path& p) {
    std::string text = slurp(p);
    if (p.filename() == "run.json") {
        json j = json::parse(text);
        j.erase("timing");
        text = j.dump();
    }
    return text;
}

Outcome determinism() {
    const fs::path root = fs::temp_directory_path() / "siammot_acceptance_determinism";
    fs::remove_all(root);
    fs::create_directories(root);
    const fs::path cfg = root / "cfg.json";
    std::ofstream(cfg) << R"({"scenario": {"preset": "mixed", "frames": 30, "n_objects": 5},
        "imm": {"epochs": 4, "train_scenarios": 1, "pairs_per_scenario": 10}, "ablate": {"seeds": 2}})";
    const std::string c = " --config " + cfg.string() + " --seed 3";
    const std::vector<std::pair<std::string, std::string>> commands{
        {"simulate", "simulate" + c},
        {"track", "track" + c},
        {"track-kalman", "track --matcher kalman" + c},
        {"eval", "eval @RUN@/simulate/gt.txt @RUN@/track/results.txt" + c},
        {"ablate", "ablate tau --matcher kalman --workers 2" + c},
        {"gradcheck", "gradcheck --trials 20 --seed 3"},
        {"train-imm", "train-imm" + c},
    };
    std::size_t files = 0;
    for (int run = 0; run < 2; ++run)
        for (const auto& [name, args] : commands) {
            const fs::path dir = root / ("run" + std::to_string(run));
            std::string a = args;
            for (std::string::size_type pos; (pos = a.find("@RUN@")) != std::string::npos;)
                a.replace(pos, 5, dir.string());
            const fs::path out = dir / name;
            if (int code = run_cli(a + " --out " + out.string(), root / "log.txt"); code != 0)
                return {false, name + " exited " + std::to_string(code) + ": " + slurp(root / "log.txt")};
        }
    for (const auto& entry : fs::recursive_directory_iterator(root / "run0")) {
        if (!entry.is_regular_file()) continue;
        const fs::path rel = fs::relative(entry.path(), root / "run0");
        const fs::path other = root / "run1" / rel;
        if (!fs::exists(other) || comparable(entry.path()) != comparable(other))
            return {false, "differs: " + rel.string()};
        ++files;
    }
    fs::remove_all(root);
    return {files > 0, std::to_string(files) + " files identical across " + std::to_string(commands.size()) +
                           " commands (run.json timing excluded)"};
}

Outcome format_interop() {
    Rng rng(10);
    TrackSet t;
    for (int id = 1; id <= 20; ++id)
        for (int f = 1; f <= 100; ++f)
            if (rng.bernoulli(0.6))
                t[id][f] = TrackPoint{BBox{rng.uniform(-10, 1000), rng.uniform(-10, 600), rng.uniform(0.1, 200),
                                           rng.uniform(0.1, 400)},
                                      rng.uniform()};
    std::ostringstream out;
    write_mot_tracks(out, t, "acceptance");
    std::istringstream in(out.str());
    if (read_mot_tracks(in) != t) return {false, "round trip changed the data"};

    const std::vector<std::pair<std::string, int>> bad{
        {"1,1,0,0,5,5\n1,2,0,0,5\n", 2},        {"# c\n1,1,0,0,5,5\nx,1,0,0,5,5\n", 3},
        {"1,1,0,0,-5,5\n", 1},                  {"0,1,0,0,5,5\n", 1},
        {"1,1,0,0,5,5\n2,1,a,0,5,5\n", 2},      {"1,1,0,0,5,5\n1,1,0,0,5,5\n", 2},
        {"1,1,0,0,5,5,conf\n", 1},
    };
    for (const auto& [text, line] : bad) {
        std::istringstream b(text);
        try {
            read_mot_tracks(b, "bad.txt");
            return {false, "accepted a malformed file"};
        } catch (const MotParseError& e) {
            if (e.line() != line || std::string(e.what()).find("bad.txt:" + std::to_string(line)) == std::string::npos)
                return {false, std::string("wrong line in: ") + e.what()};
        }
    }
    std::size_t rows = 0;
    for (const auto& [_, tr] : t) rows += tr.size();
    return {true, std::to_string(rows) + " rows round-tripped, " + std::to_string(bad.size()) +
                      " malformed files rejected at the right line"};
}

}  // namespace

int main() {
    const std::vector<Criterion> criteria{
        {1, "gradient suite", 30, gradient_suite},
        {2, "oracle equivalences", 60, oracle_equivalences},
        {3, "exact recovery", 60, exact_recovery},
        {4, "fast-camera matcher ordering", 300, matcher_ordering},
        {5, "tau trend", 180, tau_trend},
        {6, "alpha-beta trend", 300, alpha_beta_trend},
        {7, "triplet trend", 300, triplet_trend},
        {8, "motion calibration", 10, calibration},
        {9, "determinism", 600, determinism},
        {10, "format interop", 60, format_interop},
    };
    int failed = 0;
    for (const Criterion& c : criteria) {
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        const bool in_time = s <= c.budget_s;
        const bool pass = o.pass && in_time;
        failed += !pass;
        std::cout << (pass ? "PASS" : "FAIL") << " [" << c.id << "] " << c.name << " (" << std::fixed
                  << std::setprecision(2) << s << " s, limit " << std::setprecision(0) << c.budget_s << " s"
                  << (in_time ? "" : ", over time") << ") " << std::defaultfloat << o.detail << std::endl;
    }
    std::cout << (failed == 0 ? "all criteria pass" : std::to_string(failed) + " criteria fail") << std::endl;
    return failed == 0 ? 0 : 1;
}
