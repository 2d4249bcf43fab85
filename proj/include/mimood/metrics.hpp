#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mimood/common.hpp"

namespace mimood::metrics {

/// Token cell labeled 1 iff any pixel in its f×f block is 1.
inline MaskGrid downsample_gt(const MaskGrid& gt, int f) {
    require(f >= 1 && gt.h % f == 0 && gt.w % f == 0,
            "downsample_gt: mask shape not divisible by f");
    MaskGrid out(gt.h / f, gt.w / f, 0);
    for (int y = 0; y < gt.h; ++y)
        for (int x = 0; x < gt.w; ++x)
            if (gt.at(y, x)) out.at(y / f, x / f) = 1;
    return out;
}

namespace detail {

struct Ranked {
    std::vector<float> scores;   // descending
    std::vector<uint8_t> labels; // parallel to scores
    size_t n_pos = 0, n_neg = 0;
};

inline Ranked rank_desc(const std::vector<float>& scores, const std::vector<uint8_t>& labels) {
    require(scores.size() == labels.size() && !scores.empty(), "metrics: scores/labels size mismatch");
    std::vector<size_t> order(scores.size());
    std::iota(order.begin(), order.end(), size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](size_t a, size_t b) { return scores[a] > scores[b]; });
    Ranked r;
    r.scores.reserve(scores.size());
    r.labels.reserve(scores.size());
    for (size_t i : order) {
        r.scores.push_back(scores[i]);
        r.labels.push_back(labels[i] ? 1 : 0);
        (labels[i] ? r.n_pos : r.n_neg)++;
    }
    return r;
}

}  // namespace detail

/// Area under precision-recall, rectangle rule over recall increments at each
/// distinct threshold, ties grouped, no precision-envelope interpolation.
inline double average_precision(const std::vector<float>& scores, const std::vector<uint8_t>& labels) {
    auto r = detail::rank_desc(scores, labels);
    if (r.n_pos == 0 || r.n_neg == 0)
        throw DataError("average_precision: both classes must be present");

    double ap = 0.0;
    size_t tp = 0, seen = 0, prev_tp = 0;
    size_t i = 0;
    const size_t n = r.scores.size();
    while (i < n) {
        size_t j = i;
        while (j < n && r.scores[j] == r.scores[i]) ++j;  // tie group
        for (size_t k = i; k < j; ++k) tp += r.labels[k];
        seen += j - i;
        double precision = static_cast<double>(tp) / static_cast<double>(seen);
        double d_recall = static_cast<double>(tp - prev_tp) / static_cast<double>(r.n_pos);
        ap += d_recall * precision;
        prev_tp = tp;
        i = j;
    }
    return ap;
}

/// Mann–Whitney U normalized by n_pos·n_neg, ties counted 1/2.
inline double auroc(const std::vector<float>& scores, const std::vector<uint8_t>& labels) {
    auto r = detail::rank_desc(scores, labels);
    if (r.n_pos == 0 || r.n_neg == 0) throw DataError("auroc: both classes must be present");

    // Walk descending; negatives already seen rank above the positive (losses).
    double u = 0.0;
    size_t neg_seen = 0;
    size_t i = 0;
    const size_t n = r.scores.size();
    while (i < n) {
        size_t j = i;
        size_t pos_here = 0, neg_here = 0;
        while (j < n && r.scores[j] == r.scores[i]) {
            (r.labels[j] ? pos_here : neg_here)++;
            ++j;
        }
        // Each positive in this group beats all negatives with lower score and
        // ties the negatives within the group.
        size_t neg_below = r.n_neg - neg_seen - neg_here;
        u += static_cast<double>(pos_here) *
             (static_cast<double>(neg_below) + 0.5 * static_cast<double>(neg_here));
        neg_seen += neg_here;
        i = j;
    }
    return u / (static_cast<double>(r.n_pos) * static_cast<double>(r.n_neg));
}

/// Pooled DICE of the prediction (score >= t) against labels.
inline double dice_at_threshold(const std::vector<float>& scores, const std::vector<uint8_t>& labels,
                                float t) {
    require(scores.size() == labels.size(), "dice: size mismatch");
    size_t tp = 0, fp = 0, fn = 0;
    for (size_t i = 0; i < scores.size(); ++i) {
        bool pred = scores[i] >= t;
        if (pred && labels[i]) ++tp;
        else if (pred) ++fp;
        else if (labels[i]) ++fn;
    }
    size_t denom = 2 * tp + fp + fn;
    return denom == 0 ? 0.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
}

struct BestDice {
    double dice = 0.0;
    double threshold = 0.0;
};

/// Best-achievable DICE over a threshold sweep, pooled dataset-wide. Uses the
/// exact unique score values when there are at most 4096 of them, otherwise a
/// 256-point quantile-spaced grid.
inline BestDice best_dice_flat(const std::vector<float>& scores, const std::vector<uint8_t>& labels) {
    require(scores.size() == labels.size() && !scores.empty(), "best_dice: size mismatch");
    size_t n_pos = 0;
    for (auto l : labels) n_pos += l ? 1 : 0;
    if (n_pos == 0) throw DataError("best_dice: no positive pixels");

    auto r = detail::rank_desc(scores, labels);
    const size_t n = r.scores.size();

    // Count unique values.
    size_t unique = 1;
    for (size_t i = 1; i < n; ++i)
        if (r.scores[i] != r.scores[i - 1]) ++unique;

    std::vector<float> candidates;
    if (unique <= 4096) {
        candidates.reserve(unique);
        for (size_t i = 0; i < n; ++i)
            if (i == 0 || r.scores[i] != r.scores[i - 1]) candidates.push_back(r.scores[i]);
    } else {
        candidates.reserve(256);
        for (int q = 0; q < 256; ++q) {
            double rank = static_cast<double>(q) / 255.0 * static_cast<double>(n - 1);
            auto lo = static_cast<size_t>(rank);
            double frac = rank - static_cast<double>(lo);
            float v = lo + 1 < n
                          ? static_cast<float>(r.scores[lo] * (1.0 - frac) + r.scores[lo + 1] * frac)
                          : r.scores[lo];
            candidates.push_back(v);
        }
        std::sort(candidates.begin(), candidates.end(), std::greater<float>());
        candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());
    }

    // Sweep thresholds descending using prefix counts over the ranked array.
    BestDice best;
    best.threshold = candidates.empty() ? 0.0 : candidates.front();
    size_t tp = 0, npred = 0, i = 0;
    for (float t : candidates) {
        while (i < n && r.scores[i] >= t) {
            tp += r.labels[i];
            ++npred;
            ++i;
        }
        double dice = 2.0 * static_cast<double>(tp) / static_cast<double>(n_pos + npred);
        if (dice > best.dice) {
            best.dice = dice;
            best.threshold = t;
        }
    }
    return best;
}

inline void flatten(const std::vector<Mat>& as_maps, const std::vector<MaskGrid>& gt_masks,
                    std::vector<float>& scores, std::vector<uint8_t>& labels) {
    require(as_maps.size() == gt_masks.size(), "metrics: map/mask count mismatch");
    for (size_t s = 0; s < as_maps.size(); ++s) {
        const Mat& m = as_maps[s];
        const MaskGrid& g = gt_masks[s];
        require(m.rows() == g.h && m.cols() == g.w, "metrics: map/mask shape mismatch");
        scores.insert(scores.end(), m.data(), m.data() + m.size());
        labels.insert(labels.end(), g.cells.begin(), g.cells.end());
    }
}

inline BestDice best_dice(const std::vector<Mat>& as_maps, const std::vector<MaskGrid>& gt_masks) {
    std::vector<float> scores;
    std::vector<uint8_t> labels;
    flatten(as_maps, gt_masks, scores, labels);
    return best_dice_flat(scores, labels);
}

/// Token-level or pixel-level metric bundle.
struct EvalReport {
    std::string level;  // "token" | "pixel"
    double ap = 0.0;
    double auroc = 0.0;
    std::optional<double> best_dice;
    std::optional<double> best_threshold;
    int n_samples = 0;
    double timing_s = 0.0;
    nlohmann::json config_echo = nlohmann::json::object();
    nlohmann::json paper_reference = nlohmann::json::object();  // provenance only, never asserted
};

inline nlohmann::json report_to_json(const EvalReport& r) {
    nlohmann::json j{{"level", r.level},     {"ap", r.ap},
                     {"auroc", r.auroc},     {"n_samples", r.n_samples},
                     {"timing_s", r.timing_s}, {"config", r.config_echo},
                     {"paper_reference", r.paper_reference}};
    if (r.best_dice) j["best_dice"] = *r.best_dice;
    if (r.best_threshold) j["best_threshold"] = *r.best_threshold;
    return j;
}

}  // namespace mimood::metrics
