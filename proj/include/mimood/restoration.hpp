#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <string>
#include <vector>

#include "mimood/atd.hpp"
#include "mimood/common.hpp"
#include "mimood/mvtm.hpp"
#include "mimood/tokenizer.hpp"

namespace mimood::restoration {

struct RestorationConfig {
    float lambda = 0.005f;  // ATD score threshold
    int iterations = 8;     // T
    int restorations = 4;   // R
    float temperature = 1.0f;
    int min_pool = 3;
    int avg_pool = 5;
    std::string aggregate = "mean";  // mean | median | min over R residuals

    void validate() const {
        require(lambda > 0.0f && lambda < 1.0f, "restoration: lambda must be in (0,1)");
        require(iterations >= 1 && restorations >= 1, "restoration: T and R must be >= 1");
        require(temperature > 0.0f, "restoration: temperature must be positive");
        require(min_pool >= 1 && min_pool % 2 == 1 && avg_pool >= 1 && avg_pool % 2 == 1,
                "restoration: pooling kernels must be odd");
        require(aggregate == "mean" || aggregate == "median" || aggregate == "min",
                "restoration: aggregate must be one of mean|median|min");
    }

    nlohmann::json to_json() const {
        return {{"lambda", lambda},   {"T", iterations},       {"R", restorations},
                {"temperature", temperature}, {"min_pool", min_pool}, {"avg_pool", avg_pool},
                {"aggregate", aggregate}};
    }

    static RestorationConfig from_json(const nlohmann::json& j) {
        RestorationConfig c;
        c.lambda = j.at("lambda");
        c.iterations = j.at("T");
        c.restorations = j.at("R");
        c.temperature = j.at("temperature");
        c.min_pool = j.at("min_pool");
        c.avg_pool = j.at("avg_pool");
        c.aggregate = j.at("aggregate");
        return c;
    }
};

/// m = 1 where p > lambda, strictly.
inline MaskGrid flag_anomalous(const atd::AnomalyProbGrid& p, float lambda) {
    require(lambda > 0.0f && lambda < 1.0f, "flag_anomalous: lambda must be in (0,1)");
    MaskGrid m(p.h, p.w, 0);
    for (size_t i = 0; i < p.cells.size(); ++i) m.cells[i] = p.cells[i] > lambda ? 1 : 0;
    return m;
}

struct Models {
    tokenizer::Vqvae* vqvae = nullptr;
    mvtm::MvtmModel* mvtm = nullptr;
    atd::AtdModel* atd = nullptr;

    void validate() const {
        require(vqvae && mvtm && atd, "models: all three components are required");
        int k = vqvae->config().k_size;
        require(mvtm->k_size == k, "models: MVTM vocabulary does not match VQ-VAE codebook size");
        require(atd->k_size == k, "models: ATD vocabulary does not match VQ-VAE codebook size");
        require(mvtm->net.cfg.grid_h == atd->net.cfg.grid_h &&
                    mvtm->net.cfg.grid_w == atd->net.cfg.grid_w,
                "models: MVTM and ATD grids disagree");
    }

    void validate_for(const Mat& image) const {
        validate();
        int f = vqvae->config().f;
        require(image.rows() % f == 0 && image.cols() % f == 0,
                "models: image shape not divisible by the tokenizer factor");
        require(static_cast<int>(image.rows()) / f == mvtm->net.cfg.grid_h &&
                    static_cast<int>(image.cols()) / f == mvtm->net.cfg.grid_w,
                "models: token grid size does not match the transformer positional table");
    }
};

struct RestoreTrace {
    Mat restored;                        // x_T
    std::vector<MaskGrid> flagged;       // per-iteration flag masks (until early exit)
    int64_t atd_forwards = 0;
    int64_t mvtm_forwards = 0;
};

/// One flag-and-resample chain: tokenize, iterate (flag, in-paint) up to T
/// times with early exit on an empty flag mask, decode.
inline RestoreTrace restore_one(const Mat& x0, const Models& models, const RestorationConfig& cfg,
                                Rng& rng) {
    cfg.validate();
    models.validate_for(x0);

    RestoreTrace trace;
    int64_t atd_before = models.atd->forward_count;
    int64_t mvtm_before = models.mvtm->forward_count;

    TokenGrid tokens = models.vqvae->encode(x0);
    for (int t = 0; t < cfg.iterations; ++t) {
        atd::AnomalyProbGrid p = atd::predict_anomaly(tokens, *models.atd);
        MaskGrid m = flag_anomalous(p, cfg.lambda);
        bool any = false;
        for (auto b : m.cells) any |= (b != 0);
        if (!any) break;  // further iterations would be idempotent
        trace.flagged.push_back(m);
        tokens = mvtm::sample_masked(tokens, m, *models.mvtm, cfg.temperature, rng);
    }
    trace.restored = models.vqvae->decode(tokens);
    trace.atd_forwards = models.atd->forward_count - atd_before;
    trace.mvtm_forwards = models.mvtm->forward_count - mvtm_before;
    return trace;
}

namespace detail {

/// stride-1 pooling with same-padding by edge replication
template <typename Reduce>
Mat pool(const Mat& x, int k, Reduce reduce, float init) {
    const int h = static_cast<int>(x.rows());
    const int w = static_cast<int>(x.cols());
    const int r = k / 2;
    Mat out(h, w);
    for (int y = 0; y < h; ++y)
        for (int xx = 0; xx < w; ++xx) {
            float acc = init;
            for (int dy = -r; dy <= r; ++dy)
                for (int dx = -r; dx <= r; ++dx) {
                    int sy = std::clamp(y + dy, 0, h - 1);
                    int sx = std::clamp(xx + dx, 0, w - 1);
                    acc = reduce(acc, x(sy, sx));
                }
            out(y, xx) = acc;
        }
    return out;
}

}  // namespace detail

inline Mat min_pool(const Mat& x, int k) {
    return detail::pool(x, k, [](float a, float b) { return std::min(a, b); },
                        std::numeric_limits<float>::infinity());
}

inline Mat avg_pool(const Mat& x, int k) {
    Mat sum = detail::pool(x, k, [](float a, float b) { return a + b; }, 0.0f);
    return sum / static_cast<float>(k * k);
}

/// Per-restoration residuals |x_T - x0|, aggregated across R, then min-pooled
/// and average-pooled (stride 1, edge-replicated same padding).
inline Mat anomaly_score(const Mat& x0, const std::vector<Mat>& restorations,
                         const RestorationConfig& cfg) {
    require(!restorations.empty(), "anomaly_score: need at least one restoration");
    for (const auto& r : restorations)
        require(r.rows() == x0.rows() && r.cols() == x0.cols(), "anomaly_score: shape mismatch");

    const auto n = static_cast<int>(restorations.size());
    Mat agg;
    if (cfg.aggregate == "mean") {
        agg = Mat::Zero(x0.rows(), x0.cols());
        for (const auto& r : restorations) agg += (r - x0).cwiseAbs();
        agg /= static_cast<float>(n);
    } else {
        std::vector<Mat> residuals;
        residuals.reserve(restorations.size());
        for (const auto& r : restorations) residuals.push_back((r - x0).cwiseAbs());
        agg = Mat(x0.rows(), x0.cols());
        std::vector<float> vals(restorations.size());
        for (Eigen::Index i = 0; i < agg.size(); ++i) {
            for (int j = 0; j < n; ++j) vals[static_cast<size_t>(j)] = residuals[j].data()[i];
            std::sort(vals.begin(), vals.end());
            agg.data()[i] = cfg.aggregate == "min"
                                ? vals.front()
                                : (n % 2 ? vals[n / 2] : 0.5f * (vals[n / 2 - 1] + vals[n / 2]));
        }
    }
    return avg_pool(min_pool(agg, cfg.min_pool), cfg.avg_pool);
}

struct StageTiming {
    double restore_s = 0.0;
    double score_s = 0.0;
    double total_s = 0.0;
};

struct RestorationResult {
    std::vector<Mat> restorations;                    // R images
    std::vector<std::vector<MaskGrid>> flagged_masks; // per restoration, per iteration
    Mat as_map;
    StageTiming timing;
    int64_t atd_forwards = 0;
    int64_t mvtm_forwards = 0;
};

/// Runs R independent restoration chains (independent rng substreams derived
/// from the caller's master stream), aggregates the anomaly score, records
/// per-stage wall-clock and model forward-pass counts.
inline RestorationResult run_pipeline(const Mat& x0, const Models& models,
                                      const RestorationConfig& cfg, const Rng& master_rng) {
    cfg.validate();
    models.validate_for(x0);

    using clock = std::chrono::steady_clock;
    RestorationResult result;
    auto t0 = clock::now();
    for (int r = 0; r < cfg.restorations; ++r) {
        Rng chain = master_rng.stream(static_cast<uint64_t>(r));
        RestoreTrace trace = restore_one(x0, models, cfg, chain);
        result.restorations.push_back(std::move(trace.restored));
        result.flagged_masks.push_back(std::move(trace.flagged));
        result.atd_forwards += trace.atd_forwards;
        result.mvtm_forwards += trace.mvtm_forwards;
    }
    auto t1 = clock::now();
    result.as_map = anomaly_score(x0, result.restorations, cfg);
    auto t2 = clock::now();

    result.timing.restore_s = std::chrono::duration<double>(t1 - t0).count();
    result.timing.score_s = std::chrono::duration<double>(t2 - t1).count();
    result.timing.total_s = std::chrono::duration<double>(t2 - t0).count();
    return result;
}

/// Plain VQ-VAE reconstruction-residual baseline, smoothed with the same
/// pooling as the pipeline score.
inline Mat reconstruction_residual(const Mat& x0, tokenizer::Vqvae& vqvae,
                                   const RestorationConfig& cfg) {
    Mat recon = vqvae.reconstruct(x0);
    return avg_pool(min_pool((recon - x0).cwiseAbs(), cfg.min_pool), cfg.avg_pool);
}

}  // namespace mimood::restoration
