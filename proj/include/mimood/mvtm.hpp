#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "mimood/common.hpp"
#include "mimood/masks.hpp"
#include "mimood/optim.hpp"
#include "mimood/transformer.hpp"

namespace mimood::mvtm {

/// Generative masked visual token model: bidirectional transformer over the
/// token grid, vocabulary K_size+1 (MASK id = K_size), predicting the K_size
/// real tokens at every position.
struct MvtmModel {
    nn::Transformer net;
    int k_size = 0;
    int64_t forward_count = 0;  // inference forward passes, for instrumentation

    void setup(int k_size_, int grid_h, int grid_w, nn::TransformerConfig base, Rng& rng) {
        k_size = k_size_;
        base.vocab = k_size_ + 1;
        base.head_out = k_size_;
        base.grid_h = grid_h;
        base.grid_w = grid_w;
        net.setup(base, rng);
    }

    int mask_id() const { return k_size; }

    /// Eval-mode logits, (h*w) × K_size. Tokens may carry the MASK id.
    Mat predict_logits(const std::vector<int32_t>& masked_tokens) {
        ++forward_count;
        return net.forward_eval(masked_tokens, 1);
    }

    void save(Checkpoint& ck) {
        net.save_params(ck);
        ck.config["kind"] = "mvtm";
        ck.config["k_size"] = k_size;
    }

    static MvtmModel from_checkpoint(const Checkpoint& ck) {
        MvtmModel m;
        m.net = nn::Transformer::from_checkpoint(ck);
        m.k_size = ck.config.at("k_size");
        return m;
    }
};

struct LossAndGrad {
    float value = 0.0f;
    Mat dlogits;  // same shape as logits; exactly zero at unmasked rows
};

/// Mean cross-entropy over masked positions only (marginal CE per masked
/// token). Unmasked positions contribute exactly zero value and gradient.
inline LossAndGrad mvtm_loss(const Mat& logits, const std::vector<int32_t>& targets,
                             const std::vector<uint8_t>& mask) {
    require(static_cast<size_t>(logits.rows()) == targets.size() && targets.size() == mask.size(),
            "mvtm_loss: shape mismatch");
    int n_masked = 0;
    for (auto m : mask) n_masked += m ? 1 : 0;
    if (n_masked == 0) throw DataError("mvtm_loss: no masked positions, objective undefined");

    LossAndGrad out;
    out.dlogits = Mat::Zero(logits.rows(), logits.cols());
    double loss = 0.0;
    const float inv = 1.0f / static_cast<float>(n_masked);
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        if (!mask[i]) continue;
        int32_t t = targets[i];
        require(t >= 0 && t < logits.cols(), "mvtm_loss: target out of range");
        float mx = logits.row(i).maxCoeff();
        Eigen::RowVectorXf p = (logits.row(i).array() - mx).exp();
        float z = p.sum();
        p /= z;
        loss -= std::log(static_cast<double>(p(t)) + 1e-30);
        out.dlogits.row(i) = p * inv;
        out.dlogits(i, t) -= inv;
    }
    out.value = static_cast<float>(loss / n_masked);
    return out;
}

/// Convenience overload for grid inputs.
inline LossAndGrad mvtm_loss(const Mat& logits, const TokenGrid& targets, const MaskGrid& m) {
    require(targets.h == m.h && targets.w == m.w, "mvtm_loss: grid shape mismatch");
    std::vector<int32_t> t(targets.cells.begin(), targets.cells.end());
    return mvtm_loss(logits, t, m.cells);
}

/// Replace masked positions with categorical samples from
/// softmax(logits / temperature); unmasked positions unchanged.
/// greedy=true implements the temperature->0 limit as argmax.
inline TokenGrid sample_masked(const TokenGrid& tokens, const MaskGrid& m, MvtmModel& model,
                               float temperature, Rng& rng, bool greedy = false) {
    require(tokens.h == m.h && tokens.w == m.w, "sample_masked: shape mismatch");
    if (!greedy && !(temperature > 0.0f))
        throw ConfigError("sample_masked: temperature must be positive");

    TokenGrid out = tokens;
    bool any = false;
    for (auto b : m.cells) any |= (b != 0);
    if (!any) return out;

    auto masked = masks::apply_mask_token(tokens, m, model.k_size);
    Mat logits = model.predict_logits(masked);

    for (size_t i = 0; i < out.cells.size(); ++i) {
        if (!m.cells[i]) continue;
        auto row = logits.row(static_cast<Eigen::Index>(i));
        if (greedy) {
            Eigen::Index best;
            row.maxCoeff(&best);
            out.cells[i] = static_cast<int32_t>(best);
            continue;
        }
        Eigen::RowVectorXf scaled = row / temperature;
        float mx = scaled.maxCoeff();
        Eigen::RowVectorXf p = (scaled.array() - mx).exp();
        p /= p.sum();
        float u = static_cast<float>(rng.uniform());
        float acc = 0.0f;
        int pick = model.k_size - 1;
        for (int k = 0; k < model.k_size; ++k) {
            acc += p(k);
            if (u < acc) {
                pick = k;
                break;
            }
        }
        out.cells[i] = pick;
    }
    return out;
}

/// One training step: per sample draw a brush mask, hide tokens behind MASK,
/// minimize the masked cross-entropy. Gradients are accumulated on the model.
inline float train_step(MvtmModel& model, const std::vector<const TokenGrid*>& batch,
                        const masks::BrushParams& brush, Rng& rng) {
    const int seq = model.net.cfg.seq();
    const int batch_n = static_cast<int>(batch.size());
    std::vector<int32_t> ids(static_cast<size_t>(batch_n) * seq);
    std::vector<int32_t> targets(ids.size());
    std::vector<uint8_t> mask(ids.size());

    for (int b = 0; b < batch_n; ++b) {
        const TokenGrid& g = *batch[b];
        require(g.h * g.w == seq, "train_step: token grid does not match model grid");
        MaskGrid m = masks::random_walk_mask(g.h, g.w, brush, rng);
        auto masked = masks::apply_mask_token(g, m, model.k_size);
        std::copy(masked.begin(), masked.end(), ids.begin() + static_cast<size_t>(b) * seq);
        std::copy(g.cells.begin(), g.cells.end(), targets.begin() + static_cast<size_t>(b) * seq);
        std::copy(m.cells.begin(), m.cells.end(), mask.begin() + static_cast<size_t>(b) * seq);
    }

    Mat logits = model.net.forward(ids, batch_n, /*train=*/true, rng);
    auto lg = mvtm_loss(logits, targets, mask);
    model.net.backward(lg.dlogits);
    return lg.value;
}

/// Short-run MVTM training over a cache of healthy token grids.
inline std::vector<float> train_mvtm(MvtmModel& model, const std::vector<TokenGrid>& grids,
                                     const masks::BrushParams& brush, optim::OptimizerConfig opt_cfg,
                                     int steps, int batch, Rng& rng,
                                     std::function<void(int, float)> on_step = {}) {
    require(!grids.empty(), "train_mvtm: empty token cache");
    optim::AdamW opt(model.net.parameters(), opt_cfg);
    std::vector<float> history;
    for (int step = 0; step < steps; ++step) {
        std::vector<const TokenGrid*> b;
        for (int i = 0; i < batch; ++i) b.push_back(&grids[rng.uniform_int(static_cast<int>(grids.size()))]);
        float loss = train_step(model, b, brush, rng);
        if (!std::isfinite(loss))
            throw DataError("train_mvtm: loss diverged (non-finite) at step " + std::to_string(step));
        opt.step();
        history.push_back(loss);
        if (on_step) on_step(step, loss);
    }
    return history;
}

}  // namespace mimood::mvtm
