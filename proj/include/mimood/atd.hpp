#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "mimood/common.hpp"
#include "mimood/masks.hpp"
#include "mimood/optim.hpp"
#include "mimood/transformer.hpp"

namespace mimood::atd {

using AnomalyProbGrid = Grid<float>;

/// Anomalous Token Detector: bidirectional transformer with a 1-logit head
/// and no MASK row (it always sees full token grids).
struct AtdModel {
    nn::Transformer net;
    int k_size = 0;
    int64_t forward_count = 0;

    void setup(int k_size_, int grid_h, int grid_w, nn::TransformerConfig base, Rng& rng) {
        k_size = k_size_;
        base.vocab = k_size_;
        base.head_out = 1;
        base.grid_h = grid_h;
        base.grid_w = grid_w;
        net.setup(base, rng);
    }

    void save(Checkpoint& ck) {
        net.save_params(ck);
        ck.config["kind"] = "atd";
        ck.config["k_size"] = k_size;
    }

    static AtdModel from_checkpoint(const Checkpoint& ck) {
        AtdModel m;
        m.net = nn::Transformer::from_checkpoint(ck);
        m.k_size = ck.config.at("k_size");
        return m;
    }
};

/// Per-token corruption probability (sigmoid head, eval mode). Rejects grids
/// containing the MASK id: ATD never sees MASK by construction.
inline AnomalyProbGrid predict_anomaly(const TokenGrid& tokens, AtdModel& model) {
    for (int32_t t : tokens.cells)
        if (t < 0 || t >= model.k_size)
            throw DataError("predict_anomaly: token id " + std::to_string(t) +
                            " outside codebook range (MASK id is not allowed)");
    std::vector<int32_t> ids(tokens.cells.begin(), tokens.cells.end());
    ++model.forward_count;
    Mat logits = model.net.forward_eval(ids, 1);

    AnomalyProbGrid p(tokens.h, tokens.w);
    for (Eigen::Index i = 0; i < logits.rows(); ++i)
        p.cells[static_cast<size_t>(i)] = 1.0f / (1.0f + std::exp(-logits(i, 0)));
    return p;
}

constexpr float kProbEps = 1e-7f;

/// Mean binary cross-entropy over all positions: masked positions are
/// positives, unmasked negatives. Probabilities clamped to [eps, 1-eps].
inline double atd_loss(const AnomalyProbGrid& p, const MaskGrid& m) {
    require(p.h == m.h && p.w == m.w, "atd_loss: shape mismatch");
    double loss = 0.0;
    for (size_t i = 0; i < p.cells.size(); ++i) {
        double pi = std::clamp(p.cells[i], kProbEps, 1.0f - kProbEps);
        loss -= m.cells[i] ? std::log(pi) : std::log(1.0 - pi);
    }
    return loss / static_cast<double>(p.size());
}

/// dL/dp with the same clamping convention (zero outside the clamp window).
inline std::vector<float> atd_loss_grad(const AnomalyProbGrid& p, const MaskGrid& m) {
    require(p.h == m.h && p.w == m.w, "atd_loss_grad: shape mismatch");
    std::vector<float> g(p.cells.size(), 0.0f);
    const float inv = 1.0f / static_cast<float>(p.size());
    for (size_t i = 0; i < p.cells.size(); ++i) {
        float pi = p.cells[i];
        if (pi < kProbEps || pi > 1.0f - kProbEps) continue;
        g[i] = (m.cells[i] ? -1.0f / pi : 1.0f / (1.0f - pi)) * inv;
    }
    return g;
}

/// One training step: draw a brush mask, corrupt the masked tokens with
/// uniform random indices, minimize BCE against the mask labels. Labels are
/// the mask itself even when a random draw equals the original token.
inline float train_step(AtdModel& model, const std::vector<const TokenGrid*>& batch,
                        const masks::BrushParams& brush, Rng& rng) {
    const int seq = model.net.cfg.seq();
    const int batch_n = static_cast<int>(batch.size());
    std::vector<int32_t> ids(static_cast<size_t>(batch_n) * seq);
    std::vector<uint8_t> labels(ids.size());

    for (int b = 0; b < batch_n; ++b) {
        const TokenGrid& g = *batch[b];
        require(g.h * g.w == seq, "train_step: token grid does not match model grid");
        MaskGrid m = masks::random_walk_mask(g.h, g.w, brush, rng);
        TokenGrid corrupted = masks::corrupt_tokens(g, m, model.k_size, rng);
        std::copy(corrupted.cells.begin(), corrupted.cells.end(),
                  ids.begin() + static_cast<size_t>(b) * seq);
        std::copy(m.cells.begin(), m.cells.end(), labels.begin() + static_cast<size_t>(b) * seq);
    }

    Mat logits = model.net.forward(ids, batch_n, /*train=*/true, rng);
    double loss = 0.0;
    Mat dlogits(logits.rows(), 1);
    const float inv = 1.0f / static_cast<float>(logits.rows());
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        float z = logits(i, 0);
        float p = 1.0f / (1.0f + std::exp(-z));
        double pc = std::clamp(p, kProbEps, 1.0f - kProbEps);
        loss -= labels[static_cast<size_t>(i)] ? std::log(pc) : std::log(1.0 - pc);
        dlogits(i, 0) = (p - static_cast<float>(labels[static_cast<size_t>(i)])) * inv;
    }
    model.net.backward(dlogits);
    return static_cast<float>(loss * inv);
}

/// Short-run ATD training over a cache of healthy token grids.
inline std::vector<float> train_atd(AtdModel& model, const std::vector<TokenGrid>& grids,
                                    const masks::BrushParams& brush, optim::OptimizerConfig opt_cfg,
                                    int steps, int batch, Rng& rng,
                                    std::function<void(int, float)> on_step = {}) {
    require(!grids.empty(), "train_atd: empty token cache");
    optim::AdamW opt(model.net.parameters(), opt_cfg);
    std::vector<float> history;
    for (int step = 0; step < steps; ++step) {
        std::vector<const TokenGrid*> b;
        for (int i = 0; i < batch; ++i) b.push_back(&grids[rng.uniform_int(static_cast<int>(grids.size()))]);
        float loss = train_step(model, b, brush, rng);
        if (!std::isfinite(loss))
            throw DataError("train_atd: loss diverged (non-finite) at step " + std::to_string(step));
        opt.step();
        history.push_back(loss);
        if (on_step) on_step(step, loss);
    }
    return history;
}

}  // namespace mimood::atd
