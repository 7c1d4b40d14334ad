#pragma once

// MOT evaluation: CLEAR-MOT counts (MOTA, FP, FN, IDsw, MT, ML), IDF1 under
// the optimal global identity pairing, and Track-AP over spatio-temporal IOU.

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "siammot/core.hpp"
#include "siammot/mot_io.hpp"

namespace siammot {

using CostMatrix = std::vector<std::vector<double>>;

struct Assignment {
    std::vector<int> row_to_col;  // -1 where a row is left unassigned
    double total_cost = 0.0;
};

/// Minimum-cost assignment (shortest augmenting paths with potentials).
/// Rectangular inputs assign min(rows, cols) pairs.
inline Assignment hungarian(const CostMatrix& cost) {
    Assignment out;
    const int n = static_cast<int>(cost.size());
    if (n == 0) return out;
    const int m = static_cast<int>(cost.front().size());
    for (const auto& row : cost)
        if (static_cast<int>(row.size()) != m) throw std::invalid_argument("hungarian: ragged cost matrix");
    out.row_to_col.assign(n, -1);
    if (m == 0) return out;

    if (n > m) {
        CostMatrix t(m, std::vector<double>(n));
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < m; ++j) t[j][i] = cost[i][j];
        const Assignment ta = hungarian(t);
        for (int j = 0; j < m; ++j)
            if (ta.row_to_col[j] >= 0) out.row_to_col[ta.row_to_col[j]] = j;
        out.total_cost = ta.total_cost;
        return out;
    }

    // n <= m; 1-based arrays, column 0 is the virtual start.
    constexpr double kInf = std::numeric_limits<double>::infinity();
    std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
    std::vector<int> p(m + 1, 0), way(m + 1, 0);
    for (int i = 1; i <= n; ++i) {
        p[0] = i;
        int j0 = 0;
        std::vector<double> minv(m + 1, kInf);
        std::vector<char> used(m + 1, 0);
        do {
            used[j0] = 1;
            const int i0 = p[j0];
            double delta = kInf;
            int j1 = 0;
            for (int j = 1; j <= m; ++j) {
                if (used[j]) continue;
                const double cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (int j = 0; j <= m; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            const int j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0 != 0);
    }
    for (int j = 1; j <= m; ++j)
        if (p[j] != 0) out.row_to_col[p[j] - 1] = j - 1;
    for (int i = 0; i < n; ++i)
        if (out.row_to_col[i] >= 0) out.total_cost += cost[i][out.row_to_col[i]];
    return out;
}

// ---------------------------------------------------------------------------

struct EvalConfig {
    double iou_threshold = 0.5;
    double mostly_tracked = 0.8;
    double mostly_lost = 0.2;
    std::vector<double> track_ap_thresholds{0.5, 0.75};
};

struct ClearMotResult {
    long long num_gt = 0;
    long long num_pred = 0;
    long long tp = 0;
    long long fp = 0;
    long long fn = 0;
    long long idsw = 0;
    int gt_tracks = 0;
    int mostly_tracked = 0;
    int mostly_lost = 0;

    double mota() const {
        if (num_gt == 0) return fp == 0 ? 1.0 : 0.0;
        return 1.0 - static_cast<double>(fp + fn + idsw) / static_cast<double>(num_gt);
    }
    double mt() const { return gt_tracks ? static_cast<double>(mostly_tracked) / gt_tracks : 0.0; }
    double ml() const { return gt_tracks ? static_cast<double>(mostly_lost) / gt_tracks : 0.0; }
};

namespace detail {

using FrameBoxes = std::map<int, std::vector<std::pair<int, BBox>>>;  // frame -> (id, box)

inline FrameBoxes by_frame(const TrackSet& ts) {
    FrameBoxes fb;
    for (const auto& [id, traj] : ts)
        for (const auto& [frame, pt] : traj) fb[frame].emplace_back(id, pt.box);
    return fb;
}

}  // namespace detail

/// CLEAR-MOT with match persistence: pairs matched in the previous frame are
/// kept while their IOU stays above threshold; the rest are matched by
/// minimum (1 - IOU) cost among pairs at or above threshold.
inline ClearMotResult clear_mot(const TrackSet& gt, const TrackSet& pred, const EvalConfig& cfg = {}) {
    ClearMotResult r;
    const auto gt_frames = detail::by_frame(gt);
    const auto pr_frames = detail::by_frame(pred);
    std::set<int> frames;
    for (const auto& [f, _] : gt_frames) frames.insert(f);
    for (const auto& [f, _] : pr_frames) frames.insert(f);

    std::map<int, int> prev_match;  // gt id -> pred id, previous frame
    std::map<int, int> last_match;  // gt id -> pred id, most recent frame it was matched
    std::map<int, int> covered;     // gt id -> matched frames
    const std::vector<std::pair<int, BBox>> none;
    const double thr = cfg.iou_threshold;

    for (int f : frames) {
        const auto git = gt_frames.find(f);
        const auto pit = pr_frames.find(f);
        const auto& gts = git != gt_frames.end() ? git->second : none;
        const auto& prs = pit != pr_frames.end() ? pit->second : none;
        std::vector<int> g_to_p(gts.size(), -1);
        std::vector<char> p_used(prs.size(), 0);

        for (std::size_t gi = 0; gi < gts.size(); ++gi) {
            auto pm = prev_match.find(gts[gi].first);
            if (pm == prev_match.end()) continue;
            for (std::size_t pi = 0; pi < prs.size(); ++pi) {
                if (prs[pi].first != pm->second || p_used[pi]) continue;
                if (iou(gts[gi].second, prs[pi].second) >= thr) {
                    g_to_p[gi] = static_cast<int>(pi);
                    p_used[pi] = 1;
                }
                break;
            }
        }

        std::vector<std::size_t> rows, cols;
        for (std::size_t gi = 0; gi < gts.size(); ++gi)
            if (g_to_p[gi] < 0) rows.push_back(gi);
        for (std::size_t pi = 0; pi < prs.size(); ++pi)
            if (!p_used[pi]) cols.push_back(pi);
        if (!rows.empty() && !cols.empty()) {
            constexpr double kGated = 1e6;
            CostMatrix cost(rows.size(), std::vector<double>(cols.size(), kGated));
            for (std::size_t a = 0; a < rows.size(); ++a)
                for (std::size_t b = 0; b < cols.size(); ++b) {
                    const double o = iou(gts[rows[a]].second, prs[cols[b]].second);
                    if (o >= thr) cost[a][b] = 1.0 - o;
                }
            const Assignment as = hungarian(cost);
            for (std::size_t a = 0; a < rows.size(); ++a) {
                const int b = as.row_to_col[a];
                if (b < 0 || cost[a][b] >= kGated) continue;
                g_to_p[rows[a]] = static_cast<int>(cols[b]);
                p_used[cols[b]] = 1;
            }
        }

        prev_match.clear();
        for (std::size_t gi = 0; gi < gts.size(); ++gi) {
            const int gid = gts[gi].first;
            if (g_to_p[gi] < 0) {
                ++r.fn;
                continue;
            }
            const int pid = prs[g_to_p[gi]].first;
            ++r.tp;
            ++covered[gid];
            if (auto lm = last_match.find(gid); lm != last_match.end() && lm->second != pid) ++r.idsw;
            last_match[gid] = pid;
            prev_match[gid] = pid;
        }
        for (char used : p_used)
            if (!used) ++r.fp;
        r.num_gt += static_cast<long long>(gts.size());
        r.num_pred += static_cast<long long>(prs.size());
    }

    for (const auto& [gid, traj] : gt) {
        if (traj.empty()) continue;
        ++r.gt_tracks;
        const double ratio = static_cast<double>(covered[gid]) / static_cast<double>(traj.size());
        if (ratio >= cfg.mostly_tracked) ++r.mostly_tracked;
        if (ratio <= cfg.mostly_lost) ++r.mostly_lost;
    }
    return r;
}

struct IdentityResult {
    long long idtp = 0;
    long long idfp = 0;
    long long idfn = 0;

    double idf1() const {
        const long long denom = 2 * idtp + idfp + idfn;
        return denom == 0 ? 1.0 : 2.0 * static_cast<double>(idtp) / static_cast<double>(denom);
    }
};

/// Frames in which both trajectories have a box overlapping at or above `thr`.
inline long long identity_overlap(const Trajectory& a, const Trajectory& b, double thr) {
    long long n = 0;
    for (const auto& [f, pa] : a) {
        auto it = b.find(f);
        if (it != b.end() && iou(pa.box, it->second.box) >= thr) ++n;
    }
    return n;
}

inline IdentityResult identity_metrics(const TrackSet& gt, const TrackSet& pred, double thr = 0.5) {
    IdentityResult r;
    long long gt_boxes = 0, pr_boxes = 0;
    for (const auto& [_, t] : gt) gt_boxes += static_cast<long long>(t.size());
    for (const auto& [_, t] : pred) pr_boxes += static_cast<long long>(t.size());
    if (!gt.empty() && !pred.empty()) {
        CostMatrix cost;
        for (const auto& [gid, gt_traj] : gt) {
            std::vector<double> row;
            for (const auto& [pid, pr_traj] : pred)
                row.push_back(-static_cast<double>(identity_overlap(gt_traj, pr_traj, thr)));
            cost.push_back(std::move(row));
        }
        r.idtp = static_cast<long long>(std::llround(-hungarian(cost).total_cost));
    }
    r.idfp = pr_boxes - r.idtp;
    r.idfn = gt_boxes - r.idtp;
    return r;
}

inline double idf1(const TrackSet& gt, const TrackSet& pred, double thr = 0.5) {
    return identity_metrics(gt, pred, thr).idf1();
}

// ---------------------------------------------------------------------------
// Track-AP.

/// Sum of per-frame intersections over sum of per-frame unions, taken over
/// the union of both lifespans.
inline double trajectory_iou(const Trajectory& a, const Trajectory& b) {
    double inter = 0.0, uni = 0.0;
    for (const auto& [f, pa] : a) {
        auto it = b.find(f);
        if (it == b.end()) {
            uni += pa.box.area();
            continue;
        }
        const double i = intersection_area(pa.box, it->second.box);
        inter += i;
        uni += pa.box.area() + it->second.box.area() - i;
    }
    for (const auto& [f, pb] : b)
        if (!a.contains(f)) uni += pb.box.area();
    return uni > 0.0 ? inter / uni : 0.0;
}

inline double track_score(const Trajectory& t) {
    if (t.empty()) return 0.0;
    double s = 0.0;
    for (const auto& [_, p] : t) s += p.conf;
    return s / static_cast<double>(t.size());
}

/// Predictions are visited by descending score (ties in id order); each takes
/// the unmatched ground-truth track with the highest 3D IOU at or above
/// `thr`. AP integrates the monotone precision envelope over recall.
inline double track_ap(const TrackSet& gt, const TrackSet& pred, double thr = 0.5) {
    if (gt.empty()) return pred.empty() ? 1.0 : 0.0;
    std::vector<std::pair<int, const Trajectory*>> preds;
    for (const auto& [id, t] : pred) preds.emplace_back(id, &t);
    std::stable_sort(preds.begin(), preds.end(),
                     [](const auto& a, const auto& b) { return track_score(*a.second) > track_score(*b.second); });
    std::vector<const Trajectory*> gts;
    for (const auto& [_, t] : gt) gts.push_back(&t);
    std::vector<char> taken(gts.size(), 0);

    std::vector<double> precision, recall;
    long long tp = 0, fp = 0;
    for (const auto& [_, pt] : preds) {
        double best = thr;
        int hit = -1;
        for (std::size_t g = 0; g < gts.size(); ++g) {
            if (taken[g]) continue;
            const double o = trajectory_iou(*gts[g], *pt);
            if (o >= best) {
                best = o;
                hit = static_cast<int>(g);
            }
        }
        if (hit >= 0) {
            taken[hit] = 1;
            ++tp;
        } else {
            ++fp;
        }
        precision.push_back(static_cast<double>(tp) / static_cast<double>(tp + fp));
        recall.push_back(static_cast<double>(tp) / static_cast<double>(gts.size()));
    }
    for (std::size_t i = precision.size(); i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);
    double ap = 0.0, prev_recall = 0.0;
    for (std::size_t i = 0; i < precision.size(); ++i) {
        ap += (recall[i] - prev_recall) * precision[i];
        prev_recall = recall[i];
    }
    return ap;
}

// ---------------------------------------------------------------------------

struct EvalReport {
    std::string name;
    ClearMotResult clear;
    IdentityResult identity;
    std::map<double, double> track_ap;  // IOU threshold -> AP
    double iou_threshold = 0.5;
    std::vector<EvalReport> sequences;

    double mota() const { return clear.mota(); }
    double idf1() const { return identity.idf1(); }
    long long fp() const { return clear.fp; }
    long long fn() const { return clear.fn; }
    long long idsw() const { return clear.idsw; }
};

inline EvalReport evaluate(const TrackSet& gt, const TrackSet& pred, const EvalConfig& cfg = {},
                           std::string name = "sequence") {
    EvalReport r;
    r.name = std::move(name);
    r.iou_threshold = cfg.iou_threshold;
    r.clear = clear_mot(gt, pred, cfg);
    r.identity = identity_metrics(gt, pred, cfg.iou_threshold);
    for (double t : cfg.track_ap_thresholds) r.track_ap[t] = track_ap(gt, pred, t);
    return r;
}

/// Pools counts over sequences; Track-AP becomes the mean weighted by the
/// number of ground-truth tracks.
inline EvalReport merge_reports(const std::vector<EvalReport>& parts, std::string name = "all") {
    EvalReport r;
    r.name = std::move(name);
    std::map<double, double> ap_sum;
    double weight = 0.0;
    for (const EvalReport& p : parts) {
        r.iou_threshold = p.iou_threshold;
        auto& c = r.clear;
        c.num_gt += p.clear.num_gt;
        c.num_pred += p.clear.num_pred;
        c.tp += p.clear.tp;
        c.fp += p.clear.fp;
        c.fn += p.clear.fn;
        c.idsw += p.clear.idsw;
        c.gt_tracks += p.clear.gt_tracks;
        c.mostly_tracked += p.clear.mostly_tracked;
        c.mostly_lost += p.clear.mostly_lost;
        r.identity.idtp += p.identity.idtp;
        r.identity.idfp += p.identity.idfp;
        r.identity.idfn += p.identity.idfn;
        const double w = std::max(1, p.clear.gt_tracks);
        for (const auto& [t, ap] : p.track_ap) ap_sum[t] += w * ap;
        weight += w;
        if (p.sequences.empty()) {
            r.sequences.push_back(p);
        } else {
            r.sequences.insert(r.sequences.end(), p.sequences.begin(), p.sequences.end());
        }
    }
    for (const auto& [t, s] : ap_sum) r.track_ap[t] = weight > 0.0 ? s / weight : 0.0;
    return r;
}

inline nlohmann::json report_row_json(const EvalReport& r) {
    nlohmann::json j;
    j["name"] = r.name;
    j["mota"] = r.mota();
    j["idf1"] = r.idf1();
    j["fp"] = r.clear.fp;
    j["fn"] = r.clear.fn;
    j["idsw"] = r.clear.idsw;
    j["mt"] = r.clear.mt();
    j["ml"] = r.clear.ml();
    j["num_gt"] = r.clear.num_gt;
    j["num_pred"] = r.clear.num_pred;
    j["gt_tracks"] = r.clear.gt_tracks;
    j["idtp"] = r.identity.idtp;
    j["idfp"] = r.identity.idfp;
    j["idfn"] = r.identity.idfn;
    nlohmann::json ap = nlohmann::json::object();
    for (const auto& [t, v] : r.track_ap) ap[format_number(t)] = v;
    j["track_ap"] = ap;
    return j;
}

inline nlohmann::json report_to_json(const EvalReport& r) {
    nlohmann::json j = report_row_json(r);
    j["iou_threshold"] = r.iou_threshold;
    j["track_ap_protocol"] = "exhaustive annotation (non-federated)";
    nlohmann::json seqs = nlohmann::json::array();
    for (const EvalReport& s : r.sequences) seqs.push_back(report_row_json(s));
    j["sequences"] = seqs;
    return j;
}

/// One CSV row per sequence (or a single row when the report is not merged).
inline std::string report_to_csv(const EvalReport& r, const std::string& header = {}) {
    std::ostringstream os;
    if (!header.empty()) os << "# " << header << '\n';
    os << "sequence,mota,idf1,fp,fn,idsw,mt,ml,num_gt";
    for (const auto& [t, _] : r.track_ap) os << ",track_ap@" << format_number(t);
    os << '\n';
    auto row = [&](const EvalReport& s) {
        os << s.name << ',' << format_number(s.mota()) << ',' << format_number(s.idf1()) << ',' << s.clear.fp
           << ',' << s.clear.fn << ',' << s.clear.idsw << ',' << format_number(s.clear.mt()) << ','
           << format_number(s.clear.ml()) << ',' << s.clear.num_gt;
        for (const auto& [t, v] : s.track_ap) os << ',' << format_number(v);
        os << '\n';
    };
    if (r.sequences.empty()) {
        row(r);
    } else {
        for (const EvalReport& s : r.sequences) row(s);
    }
    return os.str();
}

}  // namespace siammot
