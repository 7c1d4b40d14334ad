#pragma once

// Run configuration: one JSON document per run, parsed strictly (unknown or
// mistyped fields are errors naming the field) and re-serialized in a
// canonical form whose hash tags every output file.

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "siammot/emm.hpp"
#include "siammot/imm.hpp"
#include "siammot/metrics.hpp"
#include "siammot/rng.hpp"
#include "siammot/sim.hpp"
#include "siammot/solver.hpp"

namespace siammot {

using nlohmann::json;

class ConfigError : public std::runtime_error {
public:
    ConfigError(std::string field, const std::string& what)
        : std::runtime_error(field + ": " + what), field_(std::move(field)) {}
    const std::string& field() const { return field_; }

private:
    std::string field_;
};

enum class MatcherKind { Oracle, Ncc, Imm, ZeroMotion, Kalman };

inline const char* to_string(MatcherKind m) {
    switch (m) {
        case MatcherKind::Oracle: return "oracle";
        case MatcherKind::Ncc: return "ncc";
        case MatcherKind::Imm: return "imm";
        case MatcherKind::ZeroMotion: return "zero-motion";
        case MatcherKind::Kalman: return "kalman";
    }
    return "?";
}

inline std::optional<MatcherKind> parse_matcher(std::string_view s) {
    if (s == "oracle") return MatcherKind::Oracle;
    if (s == "ncc" || s == "ncc-emm") return MatcherKind::Ncc;
    if (s == "imm") return MatcherKind::Imm;
    if (s == "zero-motion") return MatcherKind::ZeroMotion;
    if (s == "kalman") return MatcherKind::Kalman;
    return std::nullopt;
}

/// External MOT-format input instead of a generated scenario.
struct ExternalInput {
    std::string det_path;
    std::string gt_path;      // optional
    std::string frames_dir;   // optional, 000001.pgm ...
    int frame_w = 0;
    int frame_h = 0;
};

struct ImmSettings {
    ImmTrainConfig train;
    std::string head_path;  // load instead of training when set
    int train_scenarios = 4;
};

struct AblateSettings {
    int seeds = 1;  // each cell is run on seeds seed, seed + 1, ...
};

struct RunConfig {
    std::optional<ScenarioConfig> scenario = ScenarioConfig{};
    std::optional<ExternalInput> input;
    MatcherKind matcher = MatcherKind::Ncc;
    TrackerParams tracker;
    bool lambda_explicit = false;  // otherwise the preset picks the penalty weight
    DetectorNoiseConfig noise;
    NccParams ncc;
    OracleNoise oracle;
    int oracle_grid = 30;
    RenderConfig render;
    ImmSettings imm;
    EvalConfig eval;
    AblateSettings ablate;
    std::uint64_t seed = 0;
};

// ---------------------------------------------------------------------------
// Seeds.

/// Independent sub-seed for a named stream of a run.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
    return Rng::keyed(seed, 0x5345, stream).next_u64();
}

inline constexpr std::uint64_t kSeedNoise = 1, kSeedOracle = 2, kSeedImm = 3, kSeedImmTrain = 4, kSeedHeldOut = 5;

/// Penalty weight used when the config leaves it open: fast-motion scenes get
/// a weak cosine prior.
inline double default_lambda(const RunConfig& c) {
    return c.scenario && c.scenario->preset == Preset::FastCamera ? 0.1 : 0.4;
}

/// Copies the run seed into every seeded component and fills preset-dependent
/// defaults. Called after parsing and after any CLI override.
inline void resolve(RunConfig& c) {
    if (c.scenario) c.scenario->seed = c.seed;
    c.noise.seed = derive_seed(c.seed, kSeedNoise);
    c.imm.train.seed = derive_seed(c.seed, kSeedImm);
    if (!c.lambda_explicit) c.tracker.penalty.lambda = default_lambda(c);
}

inline void validate(const RunConfig& c) {
    if (c.scenario.has_value() == c.input.has_value())
        throw ConfigError("scenario", "exactly one of 'scenario' and 'input' must be given");
    auto wrap = [](const char* field, auto&& fn) {
        try {
            fn();
        } catch (const std::invalid_argument& e) {
            throw ConfigError(field, e.what());
        }
    };
    if (c.scenario) wrap("scenario", [&] { c.scenario->validate(); });
    wrap("tracker", [&] { c.tracker.validate(); });
    wrap("noise", [&] { c.noise.validate(); });
    if (c.input) {
        if (c.input->det_path.empty()) throw ConfigError("input.det", "detections file is required");
        if (c.input->frame_w <= 0 || c.input->frame_h <= 0)
            throw ConfigError("input.frame_w", "frame size must be positive");
    }
    if (c.ncc.scales.empty()) throw ConfigError("ncc.scales", "at least one scale is required");
    for (double s : c.ncc.scales)
        if (!(s > 0.0)) throw ConfigError("ncc.scales", "scales must be positive");
    if (!(c.ncc.stride > 0.0)) throw ConfigError("ncc.stride", "must be > 0");
    if (c.ncc.max_patch < 2) throw ConfigError("ncc.max_patch", "must be >= 2");
    if (!(c.ncc.context >= 1.0)) throw ConfigError("ncc.context", "must be >= 1");
    if (c.oracle_grid < 2) throw ConfigError("oracle.grid", "must be >= 2");
    const auto& t = c.imm.train;
    if (t.grid < 2) throw ConfigError("imm.grid", "must be >= 2");
    if (t.hidden < 1) throw ConfigError("imm.hidden", "must be >= 1");
    if (t.epochs < 1) throw ConfigError("imm.epochs", "must be >= 1");
    if (t.batch_size < 1) throw ConfigError("imm.batch_size", "must be >= 1");
    if (!(t.learning_rate > 0.0)) throw ConfigError("imm.learning_rate", "must be > 0");
    if (!t.use_positive && !t.use_hard && !t.use_negative)
        throw ConfigError("imm.triplets", "at least one triplet kind must be enabled");
    if (c.imm.train_scenarios < 1) throw ConfigError("imm.train_scenarios", "must be >= 1");
    if (!(c.eval.iou_threshold > 0.0 && c.eval.iou_threshold <= 1.0))
        throw ConfigError("eval.iou", "must be in (0, 1]");
    if (c.ablate.seeds < 1) throw ConfigError("ablate.seeds", "must be >= 1");
}

// ---------------------------------------------------------------------------
// JSON.

namespace detail {

/// Reads the fields of one JSON object, remembering which keys were consumed
/// so that leftovers can be reported as unknown fields.
class ObjectReader {
public:
    ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ConfigError(path_.empty() ? "<root>" : path_, "expected an object");
    }

    bool has(const char* key) const { return j_.contains(key); }

    std::string field(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

    template <class T>
    bool get(const char* key, T& out) {
        if (!j_.contains(key)) return false;
        seen_.insert(key);
        const json& v = j_.at(key);
        try {
            if constexpr (std::is_same_v<T, bool>) {
                if (!v.is_boolean()) throw ConfigError(field(key), "expected a boolean");
            } else if constexpr (std::is_integral_v<T>) {
                if (!v.is_number_integer()) throw ConfigError(field(key), "expected an integer");
                if constexpr (std::is_unsigned_v<T>)
                    if (v.is_number_integer() && !v.is_number_unsigned())
                        throw ConfigError(field(key), "expected a non-negative integer");
            } else if constexpr (std::is_floating_point_v<T>) {
                if (!v.is_number()) throw ConfigError(field(key), "expected a number");
            } else if constexpr (std::is_same_v<T, std::string>) {
                if (!v.is_string()) throw ConfigError(field(key), "expected a string");
            }
            out = v.get<T>();
        } catch (const json::exception& e) {
            throw ConfigError(field(key), e.what());
        }
        return true;
    }

    const json* child(const char* key) {
        if (!j_.contains(key)) return nullptr;
        seen_.insert(key);
        return &j_.at(key);
    }

    void finish() const {
        for (auto it = j_.begin(); it != j_.end(); ++it)
            if (!seen_.contains(it.key())) throw ConfigError(field(it.key().c_str()), "unknown field");
    }

private:
    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

inline void read_motion(const json& j, const std::string& path, MotionProfile& m) {
    ObjectReader r(j, path);
    r.get("object_speed", m.object_speed);
    r.get("speed_walk", m.speed_walk);
    r.get("fast_fraction", m.fast_fraction);
    r.get("fast_speed", m.fast_speed);
    r.get("camera_amplitude", m.camera_amplitude);
    r.get("camera_period", m.camera_period);
    r.get("camera_shake", m.camera_shake);
    r.get("min_width", m.min_width);
    r.get("max_width", m.max_width);
    r.get("aspect", m.aspect);
    r.finish();
}

inline ScenarioConfig read_scenario(const json& j) {
    ObjectReader r(j, "scenario");
    Preset preset = Preset::SlowCrowded;
    std::string name;
    if (r.get("preset", name)) {
        auto p = parse_preset(name);
        if (!p) throw ConfigError("scenario.preset", "unknown preset '" + name + "' (slow-crowded, fast-camera, mixed)");
        preset = *p;
    }
    ScenarioConfig c = preset_config(preset);
    r.get("frames", c.frames);
    r.get("fps", c.fps);
    r.get("frame_w", c.frame_w);
    r.get("frame_h", c.frame_h);
    r.get("n_objects", c.n_objects);
    if (const json* m = r.child("motion")) read_motion(*m, "scenario.motion", c.motion);
    if (const json* occ = r.child("occlusions")) {
        if (!occ->is_array()) throw ConfigError("scenario.occlusions", "expected an array");
        for (std::size_t i = 0; i < occ->size(); ++i) {
            ObjectReader e((*occ)[i], "scenario.occlusions[" + std::to_string(i) + "]");
            OcclusionEvent ev;
            e.get("track", ev.track);
            e.get("start", ev.start);
            e.get("duration", ev.duration);
            e.finish();
            c.occlusions.push_back(ev);
        }
    }
    if (const json* a = r.child("auto_occlusions")) {
        ObjectReader e(*a, "scenario.auto_occlusions");
        e.get("count", c.auto_occlusions.count);
        e.get("min_duration", c.auto_occlusions.min_duration);
        e.get("max_duration", c.auto_occlusions.max_duration);
        e.finish();
    }
    r.finish();
    return c;
}

}  // namespace detail

/// Builds a config from a JSON document; fields that are absent keep their
/// defaults. Seeds and preset-dependent values are resolved afterwards.
inline RunConfig run_config_from_json(const json& j) {
    RunConfig c;
    detail::ObjectReader r(j, "");
    r.get("seed", c.seed);
    std::string m;
    if (r.get("matcher", m)) {
        auto k = parse_matcher(m);
        if (!k) throw ConfigError("matcher", "unknown matcher '" + m + "' (oracle, ncc, imm, zero-motion, kalman)");
        c.matcher = *k;
    }
    if (const json* s = r.child("scenario")) c.scenario = detail::read_scenario(*s);
    if (const json* in = r.child("input")) {
        detail::ObjectReader e(*in, "input");
        ExternalInput x;
        e.get("det", x.det_path);
        e.get("gt", x.gt_path);
        e.get("frames", x.frames_dir);
        e.get("frame_w", x.frame_w);
        e.get("frame_h", x.frame_h);
        e.finish();
        c.input = x;
        if (!r.has("scenario")) c.scenario.reset();
    }
    if (const json* t = r.child("tracker")) {
        detail::ObjectReader e(*t, "tracker");
        e.get("r", c.tracker.r);
        e.get("alpha", c.tracker.alpha);
        e.get("beta", c.tracker.beta);
        e.get("tau", c.tracker.tau);
        e.get("nms_iou", c.tracker.nms_iou);
        e.get("match_iou", c.tracker.match_iou);
        e.get("refine_iou", c.tracker.refine_iou);
        e.get("dedup_iou", c.tracker.dedup_iou);
        e.get("max_unsupported", c.tracker.max_unsupported);
        e.get("track_nms", c.tracker.track_nms);
        e.get("emit_lost", c.tracker.emit_lost);
        if (const json* p = e.child("penalty")) {
            detail::ObjectReader pe(*p, "tracker.penalty");
            c.lambda_explicit = pe.get("lambda", c.tracker.penalty.lambda);
            pe.get("sigma_scale", c.tracker.penalty.sigma_scale);
            pe.finish();
        }
        e.finish();
    }
    if (const json* n = r.child("noise")) {
        detail::ObjectReader e(*n, "noise");
        e.get("jitter_sigma", c.noise.jitter_sigma);
        e.get("scale_sigma", c.noise.scale_sigma);
        e.get("miss_rate", c.noise.miss_rate);
        e.get("clutter_rate", c.noise.clutter_rate);
        e.get("conf_sigma", c.noise.conf_sigma);
        e.get("clutter_conf_lo", c.noise.clutter_conf_lo);
        e.get("clutter_conf_hi", c.noise.clutter_conf_hi);
        e.finish();
    }
    if (const json* n = r.child("ncc")) {
        detail::ObjectReader e(*n, "ncc");
        e.get("scales", c.ncc.scales);
        e.get("stride", c.ncc.stride);
        e.get("max_patch", c.ncc.max_patch);
        e.get("refine", c.ncc.refine);
        e.get("context", c.ncc.context);
        std::string vis;
        if (e.get("visibility", vis)) {
            if (vis == "rectified") c.ncc.visibility = NccVisibility::Rectified;
            else if (vis == "affine") c.ncc.visibility = NccVisibility::Affine;
            else throw ConfigError("ncc.visibility", "expected 'rectified' or 'affine'");
        }
        e.finish();
    }
    if (const json* o = r.child("oracle")) {
        detail::ObjectReader e(*o, "oracle");
        e.get("grid", c.oracle_grid);
        e.get("jitter_sigma", c.oracle.jitter_sigma);
        e.get("visibility_sigma", c.oracle.visibility_sigma);
        e.get("absent_level", c.oracle.absent_level);
        e.finish();
    }
    if (const json* o = r.child("render")) {
        detail::ObjectReader e(*o, "render");
        e.get("background", c.render.background);
        e.get("noise_amplitude", c.render.noise_amplitude);
        e.get("texture_cols", c.render.texture_cols);
        e.get("texture_rows", c.render.texture_rows);
        e.finish();
    }
    if (const json* o = r.child("imm")) {
        detail::ObjectReader e(*o, "imm");
        auto& t = c.imm.train;
        bool large = false;
        if (e.get("large_preset", large) && large) t = ImmTrainConfig::large_preset();
        e.get("head", c.imm.head_path);
        e.get("train_scenarios", c.imm.train_scenarios);
        e.get("grid", t.grid);
        e.get("hidden", t.hidden);
        e.get("epochs", t.epochs);
        e.get("batch_size", t.batch_size);
        e.get("learning_rate", t.learning_rate);
        e.get("momentum", t.momentum);
        e.get("weight_decay", t.weight_decay);
        std::string sched;
        if (e.get("schedule", sched)) {
            if (sched == "constant") t.schedule = LrSchedule::Constant;
            else if (sched == "step") t.schedule = LrSchedule::Step;
            else throw ConfigError("imm.schedule", "expected 'constant' or 'step'");
        }
        std::string trip;
        if (e.get("triplets", trip)) {
            if (trip.empty() || trip.find_first_not_of("PHN+") != std::string::npos)
                throw ConfigError("imm.triplets", "expected a combination such as 'P+H+N'");
            t.use_positive = trip.find('P') != std::string::npos;
            t.use_hard = trip.find('H') != std::string::npos;
            t.use_negative = trip.find('N') != std::string::npos;
        }
        e.get("pairs_per_scenario", t.pairs_per_scenario);
        e.get("fg_iou", t.fg_iou);
        e.finish();
    }
    if (const json* o = r.child("eval")) {
        detail::ObjectReader e(*o, "eval");
        e.get("iou", c.eval.iou_threshold);
        e.get("mostly_tracked", c.eval.mostly_tracked);
        e.get("mostly_lost", c.eval.mostly_lost);
        e.get("track_ap_thresholds", c.eval.track_ap_thresholds);
        e.finish();
    }
    if (const json* o = r.child("ablate")) {
        detail::ObjectReader e(*o, "ablate");
        e.get("seeds", c.ablate.seeds);
        e.finish();
    }
    r.finish();
    return c;
}

inline std::string triplet_set_name(const ImmTrainConfig& t) {
    std::string s;
    auto add = [&](bool on, const char* k) {
        if (!on) return;
        if (!s.empty()) s += "+";
        s += k;
    };
    add(t.use_positive, "P");
    add(t.use_hard, "H");
    add(t.use_negative, "N");
    return s;
}

/// Full, resolved configuration. Keys are emitted in sorted order, so the dump
/// is canonical.
inline json run_config_to_json(const RunConfig& c) {
    json j;
    j["seed"] = c.seed;
    j["matcher"] = to_string(c.matcher);
    if (c.scenario) {
        const auto& s = *c.scenario;
        json occ = json::array();
        for (const auto& e : s.occlusions) occ.push_back({{"track", e.track}, {"start", e.start}, {"duration", e.duration}});
        const auto& m = s.motion;
        j["scenario"] = {
            {"preset", to_string(s.preset)},
            {"frames", s.frames},
            {"fps", s.fps},
            {"frame_w", s.frame_w},
            {"frame_h", s.frame_h},
            {"n_objects", s.n_objects},
            {"occlusions", occ},
            {"auto_occlusions",
             {{"count", s.auto_occlusions.count},
              {"min_duration", s.auto_occlusions.min_duration},
              {"max_duration", s.auto_occlusions.max_duration}}},
            {"motion",
             {{"object_speed", m.object_speed},
              {"speed_walk", m.speed_walk},
              {"fast_fraction", m.fast_fraction},
              {"fast_speed", m.fast_speed},
              {"camera_amplitude", m.camera_amplitude},
              {"camera_period", m.camera_period},
              {"camera_shake", m.camera_shake},
              {"min_width", m.min_width},
              {"max_width", m.max_width},
              {"aspect", m.aspect}}},
        };
    }
    if (c.input) {
        j["input"] = {{"det", c.input->det_path},
                      {"gt", c.input->gt_path},
                      {"frames", c.input->frames_dir},
                      {"frame_w", c.input->frame_w},
                      {"frame_h", c.input->frame_h}};
    }
    const auto& t = c.tracker;
    j["tracker"] = {{"r", t.r},
                    {"alpha", t.alpha},
                    {"beta", t.beta},
                    {"tau", t.tau},
                    {"nms_iou", t.nms_iou},
                    {"match_iou", t.match_iou},
                    {"refine_iou", t.refine_iou},
                    {"dedup_iou", t.dedup_iou},
                    {"max_unsupported", t.max_unsupported},
                    {"track_nms", t.track_nms},
                    {"emit_lost", t.emit_lost},
                    {"penalty", {{"lambda", t.penalty.lambda}, {"sigma_scale", t.penalty.sigma_scale}}}};
    const auto& n = c.noise;
    j["noise"] = {{"jitter_sigma", n.jitter_sigma},       {"scale_sigma", n.scale_sigma},
                  {"miss_rate", n.miss_rate},             {"clutter_rate", n.clutter_rate},
                  {"conf_sigma", n.conf_sigma},           {"clutter_conf_lo", n.clutter_conf_lo},
                  {"clutter_conf_hi", n.clutter_conf_hi}};
    j["ncc"] = {{"scales", c.ncc.scales},
                {"stride", c.ncc.stride},
                {"max_patch", c.ncc.max_patch},
                {"refine", c.ncc.refine},
                {"context", c.ncc.context},
                {"visibility", c.ncc.visibility == NccVisibility::Rectified ? "rectified" : "affine"}};
    j["oracle"] = {{"grid", c.oracle_grid},
                   {"jitter_sigma", c.oracle.jitter_sigma},
                   {"visibility_sigma", c.oracle.visibility_sigma},
                   {"absent_level", c.oracle.absent_level}};
    j["render"] = {{"background", c.render.background},
                   {"noise_amplitude", c.render.noise_amplitude},
                   {"texture_cols", c.render.texture_cols},
                   {"texture_rows", c.render.texture_rows}};
    const auto& it = c.imm.train;
    j["imm"] = {{"head", c.imm.head_path},
                {"train_scenarios", c.imm.train_scenarios},
                {"grid", it.grid},
                {"hidden", it.hidden},
                {"epochs", it.epochs},
                {"batch_size", it.batch_size},
                {"learning_rate", it.learning_rate},
                {"momentum", it.momentum},
                {"weight_decay", it.weight_decay},
                {"schedule", it.schedule == LrSchedule::Constant ? "constant" : "step"},
                {"triplets", triplet_set_name(it)},
                {"pairs_per_scenario", it.pairs_per_scenario},
                {"fg_iou", it.fg_iou}};
    j["eval"] = {{"iou", c.eval.iou_threshold},
                 {"mostly_tracked", c.eval.mostly_tracked},
                 {"mostly_lost", c.eval.mostly_lost},
                 {"track_ap_thresholds", c.eval.track_ap_thresholds}};
    j["ablate"] = {{"seeds", c.ablate.seeds}};
    return j;
}

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string config_hash(const RunConfig& c) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx",
                  static_cast<unsigned long long>(fnv1a(run_config_to_json(c).dump())));
    return buf;
}

/// One-line provenance tag carried by every output file.
inline std::string provenance(const RunConfig& c) {
    return "siammot config_hash=" + config_hash(c) + " seed=" + std::to_string(c.seed);
}

inline RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("--config", "cannot open " + path);
    json j;
    try {
        j = json::parse(in, nullptr, true, true);
    } catch (const json::parse_error& e) {
        throw ConfigError("--config", std::string("invalid JSON in ") + path + ": " + e.what());
    }
    return run_config_from_json(j);
}

}  // namespace siammot
