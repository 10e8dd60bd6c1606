#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

namespace oracle {

inline double cos_sim(const std::vector<double>& a, const std::vector<double>& b) {
    double ab = 0, aa = 0, bb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ab += a[i] * b[i];
        aa += a[i] * a[i];
        bb += b[i] * b[i];
    }
    return ab / std::sqrt(aa * bb);
}

// Enumerates every ordered selection of length min(m, n) and returns the one
// whose per-step marginal-relevance scores are lexicographically largest
// (first step scored by relevance alone); equal score vectors fall back to the
// lexicographically smaller phrase sequence.
inline std::vector<int> mmr_exhaustive(const std::vector<std::string>& phrases,
                                       const std::vector<std::vector<double>>& emb, const std::vector<double>& q,
                                       double lambda, int m) {
    const int n    = static_cast<int>(emb.size());
    const int want = std::min(m, n);
    std::vector<int> best, cur;
    std::vector<double> best_scores, scores;
    std::vector<bool> used(static_cast<std::size_t>(n), false);

    auto phrase_less = [&](const std::vector<int>& a, const std::vector<int>& b) {
        for (std::size_t i = 0; i < a.size(); ++i) {
            if (phrases[a[i]] != phrases[b[i]]) return phrases[a[i]] < phrases[b[i]];
        }
        return false;
    };

    std::function<void()> rec = [&] {
        if (static_cast<int>(cur.size()) == want) {
            bool take = best.empty();
            if (!take) {
                for (std::size_t i = 0; i < scores.size(); ++i) {
                    if (scores[i] != best_scores[i]) {
                        take = scores[i] > best_scores[i];
                        goto decided;
                    }
                }
                take = phrase_less(cur, best);
            }
        decided:
            if (take) {
                best        = cur;
                best_scores = scores;
            }
            return;
        }
        for (int i = 0; i < n; ++i) {
            if (used[i]) continue;
            double s = cos_sim(emb[i], q);
            if (!cur.empty()) {
                double red = -1e300;
                for (int j : cur) red = std::max(red, cos_sim(emb[i], emb[j]));
                s = lambda * s - (1.0 - lambda) * red;
            }
            used[i] = true;
            cur.push_back(i);
            scores.push_back(s);
            rec();
            scores.pop_back();
            cur.pop_back();
            used[i] = false;
        }
    };
    rec();
    return best;
}

}  // namespace oracle
