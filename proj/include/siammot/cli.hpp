#pragma once

// Command-line front end. Subcommands: simulate, track, eval, ablate,
// gradcheck, train-imm. Exit codes: 0 success, 1 usage error, 2 data error.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <thread>

#include <CLI11.hpp>

#include "siammot/experiment.hpp"
#include "siammot/gradcheck.hpp"

namespace siammot::cli {

inline constexpr int kExitOk = 0, kExitUsage = 1, kExitData = 2;

/// Options shared by the run-oriented subcommands.
struct CommonOptions {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string out = ".";
    int workers = 0;
    std::string preset;
    std::string matcher;
};

namespace detail {

namespace fs = std::filesystem;

inline RunConfig build_config(const CommonOptions& o) {
    RunConfig c = o.config_path.empty() ? RunConfig{} : load_run_config(o.config_path);
    if (o.seed) c.seed = *o.seed;
    if (!o.preset.empty()) {
        auto p = parse_preset(o.preset);
        if (!p) throw ConfigError("scenario.preset", "unknown preset '" + o.preset + "'");
        if (c.input) throw ConfigError("scenario.preset", "cannot combine a preset with external input");
        c.scenario = preset_config(*p);
    }
    if (!o.matcher.empty()) {
        auto m = parse_matcher(o.matcher);
        if (!m) throw ConfigError("matcher", "unknown matcher '" + o.matcher + "'");
        c.matcher = *m;
    }
    resolve(c);
    validate(c);
    return c;
}

inline fs::path make_out_dir(const std::string& out) {
    fs::path p(out);
    std::error_code ec;
    fs::create_directories(p, ec);
    if (ec) throw std::runtime_error("cannot create output directory " + out + ": " + ec.message());
    return p;
}

inline void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
    out << text;
    if (!out) throw std::runtime_error("write failed: " + path.string());
}

inline json provenance_json(const RunConfig& c) {
    return {{"config_hash", config_hash(c)}, {"seed", c.seed}};
}

inline int resolve_workers(int w) {
    if (w > 0) return w;
    return std::max(1u, std::thread::hardware_concurrency());
}

// ---------------------------------------------------------------------------

inline int cmd_simulate(const CommonOptions& o, bool no_frames) {
    const RunConfig c = build_config(o);
    if (!c.scenario) throw ConfigError("scenario", "simulate needs a scenario section");
    const fs::path out = make_out_dir(o.out);
    const std::string tag = provenance(c);
    const Scenario scn = generate_scenario(*c.scenario);
    const auto dets = simulate_detections(scn, c.noise);

    save_mot_file(scn.visible_tracks(), (out / "gt.txt").string(), tag);
    save_det_file(to_detection_set(dets), (out / "det.txt").string(), tag);

    json vis = json::object();
    for (int id = 0; id < scn.identities(); ++id) {
        std::string flags(static_cast<std::size_t>(scn.frames()), '0');
        for (int f = 0; f < scn.frames(); ++f)
            if (scn.gt[id][f].visible) flags[static_cast<std::size_t>(f)] = '1';
        vis[std::to_string(id + 1)] = flags;
    }
    json side = provenance_json(c);
    side["config"] = run_config_to_json(c);
    side["visibility"] = vis;
    write_text(out / "config.json", side.dump(2) + "\n");

    if (!no_frames) {
        const fs::path fdir = out / "frames";
        fs::create_directories(fdir);
        for (int f = 0; f < scn.frames(); ++f) {
            char name[32];
            std::snprintf(name, sizeof name, "%06d.pgm", f + 1);
            write_pgm(render_frame(scn, f, c.render), (fdir / name).string(), tag);
        }
    }
    std::cout << "simulate: " << scn.identities() << " identities, " << scn.frames() << " frames -> "
              << out.string() << "\n";
    return kExitOk;
}

inline int cmd_track(const CommonOptions& o) {
    const RunConfig c = build_config(o);
    const fs::path out = make_out_dir(o.out);
    const RunResult r = run_tracking(c);
    save_mot_file(r.tracks, (out / "results.txt").string(), provenance(c));
    json run = provenance_json(c);
    run["config"] = run_config_to_json(c);
    run["frames"] = r.frames;
    run["tracks"] = r.tracks.size();
    if (r.report) run["metrics"] = report_row_json(*r.report);
    run["timing"] = {{"seconds", r.seconds}, {"fps", r.fps()}};
    write_text(out / "run.json", run.dump(2) + "\n");
    std::cout << "track: " << to_string(c.matcher) << ", " << r.tracks.size() << " tracks, " << r.frames
              << " frames";
    if (r.report)
        std::cout << ", MOTA " << format_number(r.report->mota()) << " IDF1 " << format_number(r.report->idf1());
    std::cout << "\n";
    return kExitOk;
}

inline int cmd_eval(const CommonOptions& o, const std::string& gt_path, const std::string& pred_path) {
    const RunConfig c = build_config(o);
    const TrackSet gt = load_mot_file(gt_path);
    const TrackSet pred = load_mot_file(pred_path);
    const EvalReport rep = evaluate(gt, pred, c.eval, fs::path(pred_path).stem().string());
    const fs::path out = make_out_dir(o.out);
    json j = provenance_json(c);
    j["report"] = report_to_json(rep);
    write_text(out / "report.json", j.dump(2) + "\n");
    write_text(out / "report.csv", report_to_csv(rep, provenance(c)));
    std::cout << "eval: MOTA " << format_number(rep.mota()) << " IDF1 " << format_number(rep.idf1()) << " FP "
              << rep.fp() << " FN " << rep.fn() << " IDsw " << rep.idsw() << "\n";
    return kExitOk;
}

inline int cmd_ablate(const CommonOptions& o, const std::string& suite_name) {
    const auto suite = parse_suite(suite_name);
    if (!suite) throw ConfigError("suite", "unknown suite '" + suite_name + "' (tau, alpha-beta, matcher, triplets)");
    const RunConfig c = build_config(o);
    const AblationTable t = run_ablation(*suite, c, resolve_workers(o.workers));
    const fs::path out = make_out_dir(o.out);
    const std::string tag = provenance(c) + " suite=" + suite_name;
    const std::string csv = table_to_csv(t, tag);
    write_text(out / "table.csv", csv);
    write_text(out / "table.svg", table_to_svg(t, tag));
    std::cout << csv;
    return kExitOk;
}

/// A focal kernel whose gradient is deliberately scaled, used as a negative control.
inline GradCheckResult faulty_focal(Rng& rng) {
    const FocalParams fp;
    const int y = rng.bernoulli(0.5) ? 1 : 0;
    const double p = rng.uniform(0.02, 0.98);
    const double g = 1.1 * focal_loss(p, y, fp).grad;
    return check_gradient([&](std::span<const double> x) { return focal_loss(x[0], y, fp).loss; },
                          std::vector<double>{p}, std::span<const double>(&g, 1));
}

inline int cmd_gradcheck(const CommonOptions& o, int trials, double tolerance, bool inject_fault) {
    if (trials < 1) throw ConfigError("--trials", "must be at least 1");
    const std::uint64_t seed = o.seed.value_or(0);
    auto checks = standard_kernel_checks();
    if (inject_fault) checks.push_back({"injected_fault", faulty_focal});
    const auto rows = run_gradcheck(checks, trials, seed, tolerance);
    std::ostringstream csv;
    csv << "# siammot gradcheck seed=" << seed << " trials=" << trials << " tolerance=" << format_number(tolerance)
        << "\n";
    csv << "kernel,trials,max_rel_error,status\n";
    bool all = true;
    for (const auto& r : rows) {
        csv << r.kernel << "," << r.trials << "," << format_number(r.max_rel_error) << ","
            << (r.pass ? "PASS" : "FAIL") << "\n";
        all = all && r.pass;
    }
    std::cout << csv.str();
    if (!o.out.empty() && o.out != ".") write_text(make_out_dir(o.out) / "gradcheck.csv", csv.str());
    std::cout << (all ? "gradcheck: all kernels pass\n" : "gradcheck: FAILED\n");
    return all ? kExitOk : kExitData;
}

inline int cmd_train_imm(const CommonOptions& o) {
    const RunConfig c = build_config(o);
    const ImmTrainResult tr = train_imm_head(c);
    const auto held = imm_heldout_samples(c);
    const fs::path out = make_out_dir(o.out);
    json head = head_to_json(tr.head);
    head["provenance"] = provenance_json(c);
    head["triplets"] = triplet_set_name(c.imm.train);
    head["training_samples"] = tr.samples;
    head["heldout"] = {
        {"vis_positive", visible_rate(tr.head, held, TripletLabel::Positive, 0.5)},
        {"false_vis_hard", visible_rate(tr.head, held, TripletLabel::Hard, 0.5)},
        {"false_vis_negative", visible_rate(tr.head, held, TripletLabel::Negative, 0.5)},
    };
    write_text(out / "head.json", head.dump(2) + "\n");
    std::ostringstream loss;
    loss << "# " << provenance(c) << "\nepoch,loss\n";
    for (std::size_t e = 0; e < tr.loss_curve.size(); ++e) loss << e << "," << format_number(tr.loss_curve[e]) << "\n";
    write_text(out / "loss.csv", loss.str());
    std::cout << "train-imm: " << tr.samples << " samples, final loss "
              << (tr.loss_curve.empty() ? "n/a" : format_number(tr.loss_curve.back())) << ", held-out "
              << head["heldout"].dump() << "\n";
    return kExitOk;
}

inline void add_common(CLI::App* sub, CommonOptions& o, bool run_options) {
    sub->add_option("--config", o.config_path, "JSON run configuration")->check(CLI::ExistingFile);
    sub->add_option("--seed", o.seed, "run seed");
    sub->add_option("--out", o.out, "output directory");
    sub->add_option("--workers", o.workers, "worker threads (0 = all cores)")->check(CLI::NonNegativeNumber);
    if (run_options) {
        sub->add_option("--preset", o.preset, "scenario preset (slow-crowded, fast-camera, mixed)");
        sub->add_option("--matcher", o.matcher, "matcher (oracle, ncc, imm, zero-motion, kalman)");
    }
}

}  // namespace detail

/// Parses and runs one command. Output goes to std::cout / std::cerr.
inline int run(int argc, const char* const* argv) {
    CLI::App app{"siammot: synthetic multi-object tracking with motion-model matchers"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "siammot 1.0");

    CommonOptions opt;
    bool no_frames = false;
    std::string gt_path, pred_path, suite;
    int trials = 100;
    double tolerance = 1e-5;
    bool inject_fault = false;

    auto* sim = app.add_subcommand("simulate", "generate a scenario: gt.txt, det.txt, config.json, frames/");
    detail::add_common(sim, opt, true);
    sim->add_flag("--no-frames", no_frames, "skip PGM frame output");

    auto* track = app.add_subcommand("track", "run the online tracker: results.txt, run.json");
    detail::add_common(track, opt, true);

    auto* eval = app.add_subcommand("eval", "evaluate MOT results against ground truth: report.json, report.csv");
    detail::add_common(eval, opt, false);
    eval->add_option("gt", gt_path, "ground-truth MOT file")->required();
    eval->add_option("results", pred_path, "tracker MOT file")->required();

    auto* ablate = app.add_subcommand("ablate", "parameter sweep: table.csv, table.svg");
    detail::add_common(ablate, opt, true);
    ablate->add_option("suite", suite, "tau | alpha-beta | matcher | triplets")->required();

    auto* grad = app.add_subcommand("gradcheck", "finite-difference check of every analytic gradient");
    detail::add_common(grad, opt, false);
    grad->add_option("--trials", trials, "random inputs per kernel");
    grad->add_option("--tolerance", tolerance, "maximum relative error");
    grad->add_flag("--inject-fault", inject_fault, "add a kernel with a wrong gradient");

    auto* train = app.add_subcommand("train-imm", "train the implicit motion head: head.json, loss.csv");
    detail::add_common(train, opt, true);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (*sim) return detail::cmd_simulate(opt, no_frames);
        if (*track) return detail::cmd_track(opt);
        if (*eval) return detail::cmd_eval(opt, gt_path, pred_path);
        if (*ablate) return detail::cmd_ablate(opt, suite);
        if (*grad) return detail::cmd_gradcheck(opt, trials, tolerance, inject_fault);
        if (*train) return detail::cmd_train_imm(opt);
    } catch (const ConfigError& e) {
        std::cerr << "error: config field " << e.what() << "\n";
        return kExitData;
    } catch (const MotParseError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    }
    return kExitUsage;
}

}  // namespace siammot::cli
