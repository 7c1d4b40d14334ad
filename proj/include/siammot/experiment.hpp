#pragma once

// Batch pipeline shared by the command-line tool and the acceptance suite:
// input assembly (generated scenario or MOT files), matcher construction,
// tracking runs, IMM training, and ablation sweeps with table output.

#include <atomic>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "siammot/config.hpp"
#include "siammot/matchers.hpp"
#include "siammot/metrics.hpp"
#include "siammot/mot_io.hpp"
#include "siammot/sim.hpp"

namespace siammot {

/// Everything a tracking run consumes. Frames are 0-based here.
struct SequenceData {
    std::optional<Scenario> scenario;
    std::optional<TrackSet> gt;  // visible ground truth, 1-based frames
    std::vector<std::vector<Detection>> detections;
    std::vector<Image> frames;   // empty when the matcher does not look at pixels
    int frame_w = 0;
    int frame_h = 0;
};

inline bool matcher_needs_frames(MatcherKind m) { return m == MatcherKind::Ncc || m == MatcherKind::Imm; }

inline SequenceData load_sequence(const RunConfig& cfg, bool need_frames) {
    SequenceData seq;
    if (cfg.scenario) {
        seq.scenario = generate_scenario(*cfg.scenario);
        seq.gt = seq.scenario->visible_tracks();
        seq.detections = simulate_detections(*seq.scenario, cfg.noise);
        if (need_frames) seq.frames = render_frames(*seq.scenario, cfg.render);
        seq.frame_w = cfg.scenario->frame_w;
        seq.frame_h = cfg.scenario->frame_h;
        return seq;
    }
    const ExternalInput& in = *cfg.input;
    seq.frame_w = in.frame_w;
    seq.frame_h = in.frame_h;
    const DetectionSet dets = load_det_file(in.det_path);
    int last = dets.empty() ? 0 : dets.rbegin()->first;
    if (!in.gt_path.empty()) {
        seq.gt = load_mot_file(in.gt_path);
        for (const auto& [_, traj] : *seq.gt)
            if (!traj.empty()) last = std::max(last, traj.rbegin()->first);
    }
    if (need_frames) {
        if (in.frames_dir.empty())
            throw ConfigError("input.frames", std::string("matcher '") + to_string(cfg.matcher) +
                                                  "' needs raster frames");
        for (int f = 1;; ++f) {
            char name[32];
            std::snprintf(name, sizeof name, "%06d.pgm", f);
            const auto path = std::filesystem::path(in.frames_dir) / name;
            if (!std::filesystem::exists(path)) break;
            seq.frames.push_back(read_pgm(path.string()));
        }
        if (static_cast<int>(seq.frames.size()) < last)
            throw std::runtime_error(in.frames_dir + ": fewer frames than the detections cover");
        last = static_cast<int>(seq.frames.size());
    }
    seq.detections.assign(static_cast<std::size_t>(last), {});
    for (const auto& [f, d] : dets) seq.detections[static_cast<std::size_t>(f - 1)] = d;
    return seq;
}

// ---------------------------------------------------------------------------
// IMM heads.

/// Scenarios the implicit model is trained on: the run's scenario settings
/// with seeds disjoint from the evaluated sequence.
inline std::vector<Scenario> imm_training_scenarios(const RunConfig& cfg) {
    if (!cfg.scenario) throw ConfigError("imm.head", "training needs a scenario section; pass a trained head instead");
    std::vector<Scenario> out;
    for (int k = 0; k < cfg.imm.train_scenarios; ++k) {
        ScenarioConfig sc = *cfg.scenario;
        sc.seed = derive_seed(cfg.seed, kSeedImmTrain * 1000 + static_cast<std::uint64_t>(k));
        out.push_back(generate_scenario(sc));
    }
    return out;
}

/// Held-out triplets from one further scenario, with every label kept.
inline std::vector<LabeledSample> imm_heldout_samples(const RunConfig& cfg) {
    if (!cfg.scenario) throw ConfigError("scenario", "held-out triplets need a scenario section");
    ScenarioConfig sc = *cfg.scenario;
    sc.seed = derive_seed(cfg.seed, kSeedHeldOut);
    const std::vector<Scenario> held{generate_scenario(sc)};
    ImmTrainConfig t = cfg.imm.train;
    t.use_positive = t.use_hard = t.use_negative = true;
    t.seed = derive_seed(cfg.seed, kSeedHeldOut + 1);
    return build_imm_samples(held, t);
}

inline ImmTrainResult train_imm_head(const RunConfig& cfg) {
    return imm_train(imm_training_scenarios(cfg), cfg.imm.train);
}

inline MlpHead load_head_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw std::runtime_error(path + ": " + e.what());
    }
    return head_from_json(j);
}

// ---------------------------------------------------------------------------
// Tracking runs.

inline std::unique_ptr<Matcher> make_matcher(const RunConfig& cfg, const SequenceData& seq,
                                             const MlpHead* head) {
    switch (cfg.matcher) {
        case MatcherKind::Oracle: {
            if (!seq.gt) throw ConfigError("matcher", "oracle matcher needs ground truth");
            OracleMatcher::Params p;
            p.grid = cfg.oracle_grid;
            p.noise = cfg.oracle;
            p.seed = derive_seed(cfg.seed, kSeedOracle);
            return std::make_unique<OracleMatcher>(*seq.gt, cfg.tracker.penalty, p);
        }
        case MatcherKind::Ncc: return std::make_unique<NccEmmMatcher>(cfg.tracker.penalty, cfg.ncc);
        case MatcherKind::Imm:
            if (head == nullptr) throw std::logic_error("imm matcher built without a head");
            return std::make_unique<ImmMatcher>(*head, cfg.imm.train.grid, cfg.tracker.r);
        case MatcherKind::ZeroMotion: return std::make_unique<ZeroMotionMatcher>();
        case MatcherKind::Kalman: return std::make_unique<KalmanMatcher>();
    }
    throw std::logic_error("unknown matcher");
}

struct RunResult {
    TrackSet tracks;
    std::optional<TrackSet> gt;
    std::optional<EvalReport> report;
    int frames = 0;
    double seconds = 0.0;  // tracking only, excluding input preparation
    double fps() const { return seconds > 0.0 ? frames / seconds : 0.0; }
};

/// Runs the configured matcher over the configured input. `head` overrides the
/// IMM head; without it the head is loaded from `imm.head` or trained.
inline RunResult run_tracking(const RunConfig& cfg, const MlpHead* head = nullptr) {
    validate(cfg);
    SequenceData seq = load_sequence(cfg, matcher_needs_frames(cfg.matcher));
    std::optional<MlpHead> own;
    if (cfg.matcher == MatcherKind::Imm && head == nullptr) {
        own = cfg.imm.head_path.empty() ? train_imm_head(cfg).head : load_head_file(cfg.imm.head_path);
        head = &*own;
    }
    auto matcher = make_matcher(cfg, seq, head);
    OnlineTracker tracker(*matcher, cfg.tracker, seq.frame_w, seq.frame_h);
    RunResult r;
    const auto t0 = std::chrono::steady_clock::now();
    r.tracks = run_sequence(tracker, seq.frames, seq.detections);
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    r.frames = static_cast<int>(seq.detections.size());
    r.gt = std::move(seq.gt);
    if (r.gt) r.report = evaluate(*r.gt, r.tracks, cfg.eval, "sequence");
    return r;
}

// ---------------------------------------------------------------------------
// Ablations.

enum class AblationSuite { Tau, AlphaBeta, Matcher, Triplets };

inline const char* to_string(AblationSuite s) {
    switch (s) {
        case AblationSuite::Tau: return "tau";
        case AblationSuite::AlphaBeta: return "alpha-beta";
        case AblationSuite::Matcher: return "matcher";
        case AblationSuite::Triplets: return "triplets";
    }
    return "?";
}

inline std::optional<AblationSuite> parse_suite(std::string_view s) {
    if (s == "tau") return AblationSuite::Tau;
    if (s == "alpha-beta") return AblationSuite::AlphaBeta;
    if (s == "matcher") return AblationSuite::Matcher;
    if (s == "triplets") return AblationSuite::Triplets;
    return std::nullopt;
}

/// One table row: the swept settings plus metrics aggregated over seeds.
/// Rates are seed means; counts are seed sums.
struct AblationRow {
    std::vector<std::pair<std::string, std::string>> keys;
    int seeds = 0;
    double mota = 0.0, idf1 = 0.0, mt = 0.0, ml = 0.0, track_ap = 0.0;
    long long fp = 0, fn = 0, idsw = 0;
    std::vector<std::pair<std::string, double>> extra;  // suite-specific, seed means
};

struct AblationTable {
    AblationSuite suite = AblationSuite::Tau;
    std::vector<AblationRow> rows;
};

namespace detail {

struct CellSpec {
    std::size_t row = 0;
    RunConfig cfg;
};

struct CellResult {
    EvalReport report;
    std::vector<std::pair<std::string, double>> extra;
};

inline CellResult run_cell(AblationSuite suite, const RunConfig& cfg) {
    CellResult out;
    if (suite == AblationSuite::Triplets) {
        const ImmTrainResult trained = train_imm_head(cfg);
        const auto held = imm_heldout_samples(cfg);
        out.extra = {
            {"false_vis_negative", visible_rate(trained.head, held, TripletLabel::Negative, 0.5)},
            {"false_vis_hard", visible_rate(trained.head, held, TripletLabel::Hard, 0.5)},
            {"vis_positive", visible_rate(trained.head, held, TripletLabel::Positive, 0.5)},
        };
        out.report = *run_tracking(cfg, &trained.head).report;
    } else {
        RunResult r = run_tracking(cfg);
        if (!r.report) throw ConfigError("input.gt", "ablations need ground truth");
        out.report = *r.report;
    }
    return out;
}

/// Runs `fn(i)` for i in [0, n) on up to `workers` threads. The first
/// exception is rethrown after all threads finish.
inline void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn) {
    const std::size_t nthreads = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, workers)));
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    auto body = [&] {
        for (std::size_t i = next++; i < n; i = next++) {
            try {
                fn(i);
            } catch (...) {
                std::lock_guard lock(error_mutex);
                if (!error) error = std::current_exception();
            }
        }
    };
    if (nthreads <= 1) {
        body();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < nthreads; ++t) pool.emplace_back(body);
        for (auto& th : pool) th.join();
    }
    if (error) std::rethrow_exception(error);
}

inline std::string fmt_param(double v) { return format_number(v); }

}  // namespace detail

inline constexpr int kTauSweep[] = {1, 5, 15, 30, 60};
inline constexpr double kAlphaBetaGrid[] = {0.4, 0.6, 0.8};

/// Expands a suite into rows and per-seed cells, runs the cells in parallel
/// and aggregates them in row order.
inline AblationTable run_ablation(AblationSuite suite, const RunConfig& base, int workers = 1) {
    validate(base);
    AblationTable table;
    table.suite = suite;
    std::vector<RunConfig> row_cfgs;
    auto add_row = [&](std::vector<std::pair<std::string, std::string>> keys, RunConfig cfg) {
        AblationRow row;
        row.keys = std::move(keys);
        table.rows.push_back(std::move(row));
        row_cfgs.push_back(std::move(cfg));
    };

    switch (suite) {
        case AblationSuite::Tau:
            for (int tau : kTauSweep) {
                RunConfig c = base;
                c.tracker.tau = tau;
                add_row({{"tau", std::to_string(tau)}}, c);
            }
            break;
        case AblationSuite::AlphaBeta:
            for (double alpha : kAlphaBetaGrid)
                for (double beta : kAlphaBetaGrid) {
                    RunConfig c = base;
                    c.tracker.alpha = alpha;
                    c.tracker.beta = beta;
                    add_row({{"alpha", detail::fmt_param(alpha)}, {"beta", detail::fmt_param(beta)}}, c);
                }
            break;
        case AblationSuite::Matcher: {
            if (!base.scenario) throw ConfigError("scenario", "the matcher suite runs on generated presets");
            for (Preset p : {Preset::SlowCrowded, Preset::FastCamera, Preset::Mixed})
                for (MatcherKind m : {MatcherKind::ZeroMotion, MatcherKind::Kalman, MatcherKind::Imm, MatcherKind::Ncc}) {
                    RunConfig c = base;
                    c.scenario = preset_config(p);
                    c.matcher = m;
                    add_row({{"preset", to_string(p)}, {"matcher", to_string(m)}}, c);
                }
            break;
        }
        case AblationSuite::Triplets:
            for (const char* set : {"P+H", "P+N", "P+H+N"}) {
                RunConfig c = base;
                c.matcher = MatcherKind::Imm;
                const std::string s = set;
                c.imm.train.use_positive = true;
                c.imm.train.use_hard = s.find('H') != std::string::npos;
                c.imm.train.use_negative = s.find('N') != std::string::npos;
                add_row({{"triplets", s}}, c);
            }
            break;
    }

    std::vector<detail::CellSpec> cells;
    for (std::size_t r = 0; r < row_cfgs.size(); ++r)
        for (int k = 0; k < base.ablate.seeds; ++k) {
            RunConfig c = row_cfgs[r];
            c.seed = base.seed + static_cast<std::uint64_t>(k);
            resolve(c);
            if (suite == AblationSuite::Matcher && !base.lambda_explicit)
                c.tracker.penalty.lambda = default_lambda(c);
            cells.push_back({r, std::move(c)});
        }
    std::vector<detail::CellResult> results(cells.size());
    detail::parallel_for(cells.size(), workers,
                         [&](std::size_t i) { results[i] = detail::run_cell(suite, cells[i].cfg); });

    const double first_ap = base.eval.track_ap_thresholds.empty() ? 0.0 : base.eval.track_ap_thresholds.front();
    for (std::size_t i = 0; i < cells.size(); ++i) {
        AblationRow& row = table.rows[cells[i].row];
        const EvalReport& rep = results[i].report;
        ++row.seeds;
        row.mota += rep.mota();
        row.idf1 += rep.idf1();
        row.mt += rep.clear.mt();
        row.ml += rep.clear.ml();
        if (auto it = rep.track_ap.find(first_ap); it != rep.track_ap.end()) row.track_ap += it->second;
        row.fp += rep.fp();
        row.fn += rep.fn();
        row.idsw += rep.idsw();
        for (const auto& [name, v] : results[i].extra) {
            auto it = std::find_if(row.extra.begin(), row.extra.end(), [&](const auto& e) { return e.first == name; });
            if (it == row.extra.end()) row.extra.emplace_back(name, v);
            else it->second += v;
        }
    }
    for (AblationRow& row : table.rows) {
        const double n = std::max(1, row.seeds);
        row.mota /= n;
        row.idf1 /= n;
        row.mt /= n;
        row.ml /= n;
        row.track_ap /= n;
        for (auto& e : row.extra) e.second /= n;
    }
    return table;
}

inline const AblationRow* find_row(const AblationTable& t,
                                   const std::vector<std::pair<std::string, std::string>>& keys) {
    for (const AblationRow& r : t.rows)
        if (r.keys == keys) return &r;
    return nullptr;
}

inline std::string table_to_csv(const AblationTable& t, const std::string& header = {}) {
    std::ostringstream out;
    if (!header.empty()) out << "# " << header << "\n";
    if (t.rows.empty()) return out.str();
    const AblationRow& first = t.rows.front();
    for (const auto& k : first.keys) out << k.first << ",";
    out << "seeds,mota,idf1,fp,fn,idsw,mt,ml,track_ap";
    for (const auto& e : first.extra) out << "," << e.first;
    out << "\n";
    for (const AblationRow& r : t.rows) {
        for (const auto& k : r.keys) out << k.second << ",";
        out << r.seeds << "," << format_number(r.mota) << "," << format_number(r.idf1) << "," << r.fp << "," << r.fn
            << "," << r.idsw << "," << format_number(r.mt) << "," << format_number(r.ml) << ","
            << format_number(r.track_ap);
        for (const auto& e : r.extra) out << "," << format_number(e.second);
        out << "\n";
    }
    return out.str();
}

namespace detail {

inline std::string xml_escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

inline std::string svg_num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

}  // namespace detail

/// Grouped bar chart of MOTA and IDF1 per row.
inline std::string table_to_svg(const AblationTable& t, const std::string& comment = {}) {
    const double group_w = 64.0, left = 56.0, top = 40.0, plot_h = 240.0;
    const double width = left + 24.0 + group_w * std::max<std::size_t>(1, t.rows.size());
    const double height = top + plot_h + 110.0;
    double lo = 0.0;
    for (const auto& r : t.rows) lo = std::min({lo, r.mota, r.idf1});
    lo = std::floor(lo * 4.0) / 4.0;
    const double hi = 1.0;
    auto y_of = [&](double v) { return top + plot_h * (hi - v) / (hi - lo); };

    std::ostringstream s;
    s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << detail::svg_num(width) << "\" height=\""
      << detail::svg_num(height) << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
    if (!comment.empty()) s << "<!-- " << detail::xml_escape(comment) << " -->\n";
    s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    s << "<text x=\"" << detail::svg_num(left) << "\" y=\"20\" font-size=\"14\">ablation: " << to_string(t.suite)
      << "</text>\n";
    for (double v = lo; v <= hi + 1e-9; v += 0.25) {
        const double y = y_of(v);
        s << "<line x1=\"" << detail::svg_num(left) << "\" y1=\"" << detail::svg_num(y) << "\" x2=\""
          << detail::svg_num(width - 16.0) << "\" y2=\"" << detail::svg_num(y) << "\" stroke=\"#ddd\"/>\n";
        s << "<text x=\"" << detail::svg_num(left - 6.0) << "\" y=\"" << detail::svg_num(y + 4.0)
          << "\" text-anchor=\"end\">" << detail::svg_num(v) << "</text>\n";
    }
    const double y0 = y_of(0.0);
    s << "<line x1=\"" << detail::svg_num(left) << "\" y1=\"" << detail::svg_num(y0) << "\" x2=\""
      << detail::svg_num(width - 16.0) << "\" y2=\"" << detail::svg_num(y0) << "\" stroke=\"black\"/>\n";
    const char* colors[2] = {"#4472c4", "#ed7d31"};
    for (std::size_t i = 0; i < t.rows.size(); ++i) {
        const AblationRow& r = t.rows[i];
        const double gx = left + 8.0 + group_w * static_cast<double>(i);
        const double vals[2] = {r.mota, r.idf1};
        for (int k = 0; k < 2; ++k) {
            const double x = gx + k * 22.0;
            const double y = std::min(y_of(vals[k]), y0);
            const double h = std::abs(y_of(vals[k]) - y0);
            s << "<rect x=\"" << detail::svg_num(x) << "\" y=\"" << detail::svg_num(y) << "\" width=\"20\" height=\""
              << detail::svg_num(h) << "\" fill=\"" << colors[k] << "\"/>\n";
        }
        std::string label;
        for (const auto& kv : r.keys) label += (label.empty() ? "" : " ") + kv.second;
        const double lx = gx + 21.0, ly = top + plot_h + 14.0;
        s << "<text x=\"" << detail::svg_num(lx) << "\" y=\"" << detail::svg_num(ly)
          << "\" text-anchor=\"end\" transform=\"rotate(-45 " << detail::svg_num(lx) << " " << detail::svg_num(ly)
          << ")\">" << detail::xml_escape(label) << "</text>\n";
    }
    const double ly = height - 14.0;
    s << "<rect x=\"" << detail::svg_num(left) << "\" y=\"" << detail::svg_num(ly - 9.0)
      << "\" width=\"10\" height=\"10\" fill=\"" << colors[0] << "\"/><text x=\"" << detail::svg_num(left + 14.0)
      << "\" y=\"" << detail::svg_num(ly) << "\">MOTA</text>\n";
    s << "<rect x=\"" << detail::svg_num(left + 70.0) << "\" y=\"" << detail::svg_num(ly - 9.0)
      << "\" width=\"10\" height=\"10\" fill=\"" << colors[1] << "\"/><text x=\"" << detail::svg_num(left + 84.0)
      << "\" y=\"" << detail::svg_num(ly) << "\">IDF1</text>\n";
    s << "</svg>\n";
    return s.str();
}

}  // namespace siammot
