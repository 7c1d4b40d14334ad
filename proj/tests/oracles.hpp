#pragma once

// Brute-force reference implementations shared by the unit tests and the
// acceptance binary.

#include <algorithm>
#include <functional>
#include <limits>
#include <numeric>
#include <vector>

#include "siammot/emm.hpp"
#include "siammot/metrics.hpp"

namespace siammot::oracle {

inline FeatureMap correlate(const FeatureMap& s, const FeatureMap& t) {
    FeatureMap out(s.channels, s.height - t.height + 1, s.width - t.width + 1);
    for (int c = 0; c < s.channels; ++c)
        for (int oy = 0; oy < out.height; ++oy)
            for (int ox = 0; ox < out.width; ++ox) {
                double acc = 0.0;
                for (int ty = 0; ty < t.height; ++ty)
                    for (int tx = 0; tx < t.width; ++tx) acc += s.at(c, oy + ty, ox + tx) * t.at(c, ty, tx);
                out.at(c, oy, ox) = acc;
            }
    return out;
}

/// Minimum total cost over every assignment of min(rows, cols) pairs.
inline double assignment_cost(const CostMatrix& c) {
    const int n = static_cast<int>(c.size()), m = static_cast<int>(c[0].size());
    const bool wide = n <= m;
    const int k = std::min(n, m);
    std::vector<int> perm(wide ? m : n);
    std::iota(perm.begin(), perm.end(), 0);
    double best = std::numeric_limits<double>::infinity();
    do {
        double s = 0.0;
        for (int i = 0; i < k; ++i) s += wide ? c[i][perm[i]] : c[perm[i]][i];
        best = std::min(best, s);
    } while (std::next_permutation(perm.begin(), perm.end()));
    return best;
}

/// Maximum identity overlap over all partial one-to-one id pairings.
inline long long identity_tp(const TrackSet& gt, const TrackSet& pred, double thr = 0.5) {
    std::vector<const Trajectory*> g, p;
    for (const auto& [_, t] : gt) g.push_back(&t);
    for (const auto& [_, t] : pred) p.push_back(&t);
    std::vector<char> used(p.size(), 0);
    std::function<long long(std::size_t)> rec = [&](std::size_t i) -> long long {
        if (i == g.size()) return 0;
        long long best = rec(i + 1);
        for (std::size_t j = 0; j < p.size(); ++j) {
            if (used[j]) continue;
            used[j] = 1;
            best = std::max(best, identity_overlap(*g[i], *p[j], thr) + rec(i + 1));
            used[j] = 0;
        }
        return best;
    };
    return rec(0);
}

}  // namespace siammot::oracle
