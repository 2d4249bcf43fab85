#pragma once

#include <functional>
#include <vector>

#include "mimood/atd.hpp"
#include "mimood/mvtm.hpp"
#include "mimood/optim.hpp"
#include "mimood/tokenizer.hpp"

namespace mimood::training {

/// Resumable training state: everything needed so that (run to k, save,
/// resume, run to n) reproduces a straight n-step run bit-exactly.
inline void save_state(Checkpoint& ck, const optim::AdamW& opt, const Rng& rng) {
    opt.save_state(ck);
    ck.config["rng_state"] = rng.serialize();
}

inline int64_t load_state(const Checkpoint& ck, optim::AdamW& opt, Rng& rng) {
    opt.load_state(ck);
    rng = Rng::deserialize(ck.config.at("rng_state"));
    return opt.step_count();
}

using StepCallback = std::function<void(int64_t, float)>;

/// VQ-VAE steps [from, to) with an externally owned optimizer and rng.
inline std::vector<float> vqvae_steps(tokenizer::Vqvae& model, optim::AdamW& opt,
                                      const std::vector<const Mat*>& images, Rng& rng,
                                      int64_t from, int64_t to, const StepCallback& on_step = {}) {
    require(!images.empty(), "vqvae_steps: empty corpus");
    std::vector<float> history;
    for (int64_t step = from; step < to; ++step) {
        float loss = tokenizer::vqvae_train_step(model, opt, images, step, rng);
        history.push_back(loss);
        if (on_step) on_step(step, loss);
    }
    return history;
}

inline std::vector<float> mvtm_steps(mvtm::MvtmModel& model, optim::AdamW& opt,
                                     const std::vector<TokenGrid>& grids,
                                     const masks::BrushParams& brush, int batch, Rng& rng,
                                     int64_t from, int64_t to, const StepCallback& on_step = {}) {
    require(!grids.empty(), "mvtm_steps: empty token cache");
    std::vector<float> history;
    for (int64_t step = from; step < to; ++step) {
        std::vector<const TokenGrid*> b;
        for (int i = 0; i < batch; ++i)
            b.push_back(&grids[rng.uniform_int(static_cast<int>(grids.size()))]);
        float loss = mvtm::train_step(model, b, brush, rng);
        if (!std::isfinite(loss))
            throw DataError("mvtm training: loss diverged at step " + std::to_string(step));
        opt.step();
        history.push_back(loss);
        if (on_step) on_step(step, loss);
    }
    return history;
}

inline std::vector<float> atd_steps(atd::AtdModel& model, optim::AdamW& opt,
                                    const std::vector<TokenGrid>& grids,
                                    const masks::BrushParams& brush, int batch, Rng& rng,
                                    int64_t from, int64_t to, const StepCallback& on_step = {}) {
    require(!grids.empty(), "atd_steps: empty token cache");
    std::vector<float> history;
    for (int64_t step = from; step < to; ++step) {
        std::vector<const TokenGrid*> b;
        for (int i = 0; i < batch; ++i)
            b.push_back(&grids[rng.uniform_int(static_cast<int>(grids.size()))]);
        float loss = atd::train_step(model, b, brush, rng);
        if (!std::isfinite(loss))
            throw DataError("atd training: loss diverged at step " + std::to_string(step));
        opt.step();
        history.push_back(loss);
        if (on_step) on_step(step, loss);
    }
    return history;
}

/// Tokenize a set of images into the grid cache used by MVTM/ATD training.
inline std::vector<TokenGrid> tokenize_all(tokenizer::Vqvae& vqvae, const std::vector<const Mat*>& images) {
    std::vector<TokenGrid> grids;
    grids.reserve(images.size());
    for (const auto* img : images) grids.push_back(vqvae.encode(*img));
    return grids;
}

}  // namespace mimood::training
