#pragma once

#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "mimood/common.hpp"
#include "mimood/conv.hpp"
#include "mimood/optim.hpp"
#include "mimood/rng.hpp"
#include "mimood/serialize.hpp"

namespace mimood::tokenizer {

using nn::ConvStack;
using nn::FeatMap;

struct VqvaeConfig {
    int f = 4;
    int k_size = 128;
    int d = 32;
    std::vector<int> channels = {32, 64};  // one entry per downsampling stage
    float beta = 0.25f;                    // commitment weight
    int steps = 2000;
    int batch = 8;
    optim::OptimizerConfig opt{.lr = 1e-3f, .weight_decay = 1e-5f, .total_steps = 2000};

    void validate() const {
        require(f >= 2 && (f & (f - 1)) == 0, "vqvae: f must be a power of 2, at least 2");
        require(k_size >= 2 && d >= 1, "vqvae: k_size must be >= 2 and d positive");
        int stages = 0;
        for (int x = f; x > 1; x >>= 1) ++stages;
        require(static_cast<int>(channels.size()) == stages,
                "vqvae: channels must have one entry per downsampling stage (log2 f)");
        require(beta >= 0.0f && steps >= 1 && batch >= 1, "vqvae: bad training config");
    }

    nlohmann::json to_json() const {
        return {{"f", f},        {"k_size", k_size}, {"d", d},
                {"channels", channels}, {"beta", beta},    {"steps", steps},
                {"batch", batch},       {"lr", opt.lr},    {"weight_decay", opt.weight_decay},
                {"lr_total_steps", opt.total_steps}};
    }

    static VqvaeConfig from_json(const nlohmann::json& j) {
        VqvaeConfig c;
        c.f = j.at("f");
        c.k_size = j.at("k_size");
        c.d = j.at("d");
        c.channels = j.at("channels").get<std::vector<int>>();
        c.beta = j.at("beta");
        c.steps = j.at("steps");
        c.batch = j.at("batch");
        c.opt.lr = j.at("lr");
        c.opt.weight_decay = j.at("weight_decay");
        c.opt.total_steps = j.at("lr_total_steps");
        return c;
    }
};

struct QuantizeResult {
    TokenGrid indices;
    FeatMap z_q;
};

/// Small residual conv encoder/decoder around a learned codebook.
class Vqvae {
  public:
    Vqvae() = default;

    void setup(const VqvaeConfig& cfg, Rng& rng) {
        cfg.validate();
        cfg_ = cfg;

        const auto& ch = cfg.channels;
        auto conv = [&](const std::string& n, int ci, int co, int k, int s, int p) {
            auto l = std::make_unique<nn::Conv2d>();
            l->setup(n, ci, co, k, s, p, rng);
            return l;
        };

        encoder_.layers.push_back(conv("enc.stem", 1, ch.front(), 3, 1, 1));
        encoder_.layers.push_back(std::make_unique<nn::Relu>());
        for (size_t i = 0; i < ch.size(); ++i) {
            int ci = ch[i == 0 ? 0 : i - 1];
            encoder_.layers.push_back(conv("enc.down" + std::to_string(i), ci, ch[i], 3, 2, 1));
            encoder_.layers.push_back(std::make_unique<nn::Relu>());
        }
        auto enc_res = std::make_unique<nn::ResBlock>();
        enc_res->setup("enc.res", ch.back(), rng);
        encoder_.layers.push_back(std::move(enc_res));
        encoder_.layers.push_back(conv("enc.to_latent", ch.back(), cfg.d, 1, 1, 0));

        decoder_.layers.push_back(conv("dec.from_latent", cfg.d, ch.back(), 3, 1, 1));
        auto dec_res = std::make_unique<nn::ResBlock>();
        dec_res->setup("dec.res", ch.back(), rng);
        decoder_.layers.push_back(std::move(dec_res));
        for (size_t i = ch.size(); i-- > 0;) {
            int co = ch[i == 0 ? 0 : i - 1];
            decoder_.layers.push_back(std::make_unique<nn::Upsample2x>());
            decoder_.layers.push_back(conv("dec.up" + std::to_string(i), ch[i], co, 3, 1, 1));
            decoder_.layers.push_back(std::make_unique<nn::Relu>());
        }
        decoder_.layers.push_back(conv("dec.head", ch.front(), 1, 3, 1, 1));
        decoder_.layers.push_back(std::make_unique<nn::Sigmoid>());

        codebook_.setup("codebook", cfg.k_size, cfg.d);
        codebook_.init_normal(rng, 0.5f);
    }

    const VqvaeConfig& config() const { return cfg_; }
    const Mat& codebook() const { return codebook_.w; }
    Mat& codebook_mutable() { return codebook_.w; }

    FeatMap encode_continuous(const Mat& image) {
        require(image.rows() > 0 && image.rows() % cfg_.f == 0 && image.cols() % cfg_.f == 0,
                "encode_continuous: image shape " + std::to_string(image.rows()) + "x" +
                    std::to_string(image.cols()) + " not divisible by f=" + std::to_string(cfg_.f));
        FeatMap x(1, static_cast<int>(image.rows()), static_cast<int>(image.cols()));
        x.m = Eigen::Map<const Mat>(image.data(), 1, image.size());
        return encoder_.forward(x);
    }

    /// Nearest embedding in Euclidean norm; ties broken by lowest index.
    QuantizeResult quantize(const FeatMap& z_e) const {
        require(z_e.c == cfg_.d, "quantize: latent depth mismatch");
        QuantizeResult r;
        r.indices = TokenGrid(z_e.h, z_e.w);
        r.z_q = FeatMap(cfg_.d, z_e.h, z_e.w);
        const Mat& cb = codebook_.w;
        for (int j = 0; j < z_e.h * z_e.w; ++j) {
            int best = 0;
            float best_d2 = std::numeric_limits<float>::infinity();
            for (int k = 0; k < cfg_.k_size; ++k) {
                float d2 = 0.0f;
                for (int d = 0; d < cfg_.d; ++d) {
                    float diff = z_e.m(d, j) - cb(k, d);
                    d2 += diff * diff;
                }
                if (d2 < best_d2) {
                    best_d2 = d2;
                    best = k;
                }
            }
            r.indices.cells[j] = best;
            r.z_q.m.col(j) = cb.row(best).transpose();
        }
        return r;
    }

    TokenGrid encode(const Mat& image) { return quantize(encode_continuous(image)).indices; }

    /// Decoder applied to an arbitrary latent map (no quantization).
    FeatMap decode_latent(const FeatMap& z) {
        require(z.c == cfg_.d, "decode_latent: latent depth mismatch");
        return decoder_.forward(z);
    }

    Mat decode(const TokenGrid& tokens) {
        for (int32_t t : tokens.cells)
            if (t < 0 || t >= cfg_.k_size)
                throw DataError("decode: token index " + std::to_string(t) + " out of range [0," +
                                std::to_string(cfg_.k_size - 1) + "]");
        FeatMap z_q(cfg_.d, tokens.h, tokens.w);
        for (size_t j = 0; j < tokens.cells.size(); ++j)
            z_q.m.col(static_cast<Eigen::Index>(j)) = codebook_.w.row(tokens.cells[j]).transpose();
        FeatMap out = decode_latent(z_q);
        require(out.c == 1, "decode: decoder must emit one channel");
        return Eigen::Map<const Mat>(out.m.data(), out.h, out.w);
    }

    Mat reconstruct(const Mat& image) { return decode(encode(image)); }

    nn::Params parameters() {
        nn::Params ps;
        encoder_.collect(ps);
        decoder_.collect(ps);
        ps.push_back(&codebook_);
        return ps;
    }

    struct StepLosses {
        float mae = 0.0f;
        float codebook = 0.0f;
        float commitment = 0.0f;
        float total() const { return mae + codebook; }
    };

    /// Forward + backward for one image; gradients are accumulated scaled by
    /// `grad_scale` (typically 1/batch). Straight-through through the quantizer.
    StepLosses train_sample(const Mat& image, float grad_scale) {
        FeatMap z_e = encode_continuous(image);
        QuantizeResult q = quantize(z_e);
        FeatMap xhat = decoder_.forward(q.z_q);

        const auto n_px = static_cast<float>(image.size());
        const auto n_lat = static_cast<float>(z_e.m.size());
        Eigen::Map<const Mat> x(image.data(), 1, image.size());

        StepLosses losses;
        losses.mae = (xhat.m - x).cwiseAbs().sum() / n_px;
        losses.codebook = (q.z_q.m - z_e.m).squaredNorm() / n_lat;
        losses.commitment = cfg_.beta * losses.codebook;

        // MAE gradient through the decoder.
        FeatMap dxhat = xhat;
        dxhat.m = (xhat.m - x).array().sign() * (grad_scale / n_px);
        FeatMap dz_q = decoder_.backward(dxhat);

        // Straight-through copy plus commitment pull on the encoder.
        FeatMap dz_e = dz_q;
        dz_e.m += (2.0f * cfg_.beta * grad_scale / n_lat) * (z_e.m - q.z_q.m);
        encoder_.backward(dz_e);

        // Codebook loss moves embeddings toward assigned encoder outputs.
        for (int j = 0; j < z_e.h * z_e.w; ++j) {
            int k = q.indices.cells[j];
            codebook_.g.row(k) +=
                (2.0f * grad_scale / n_lat) * (codebook_.w.row(k) - z_e.m.col(j).transpose());
        }
        return losses;
    }

    /// Re-seed codebook rows that no latent in `batch` maps to with random
    /// encoder outputs from the same batch. Counters collapse prevention: with
    /// a purely random init most rows are never the nearest neighbour of any
    /// encoder output and would stay dead forever.
    void restart_dead_codes(const std::vector<const Mat*>& batch, Rng& rng) {
        require(!batch.empty(), "restart_dead_codes: empty batch");
        std::vector<uint8_t> used(static_cast<size_t>(cfg_.k_size), 0);
        std::vector<Mat> latents;
        Eigen::Index total = 0;
        for (const Mat* img : batch) {
            FeatMap z_e = encode_continuous(*img);
            QuantizeResult q = quantize(z_e);
            for (int t : q.indices.cells) used[static_cast<size_t>(t)] = 1;
            total += z_e.m.cols();
            latents.push_back(std::move(z_e.m));
        }
        for (int k = 0; k < cfg_.k_size; ++k) {
            if (used[static_cast<size_t>(k)]) continue;
            auto pick = static_cast<Eigen::Index>(rng.uniform_int(static_cast<int>(total)));
            for (const Mat& m : latents) {
                if (pick < m.cols()) {
                    codebook_.w.row(k) = m.col(pick).transpose();
                    break;
                }
                pick -= m.cols();
            }
        }
    }

    /// Adjust the training-schedule part of the config. Architecture fields
    /// are fixed once weights exist; this is for resuming to a longer horizon.
    void set_training_schedule(int steps, int batch, const optim::OptimizerConfig& opt) {
        cfg_.steps = steps;
        cfg_.batch = batch;
        cfg_.opt = opt;
        cfg_.validate();
    }

    void save_params(Checkpoint& ck) {
        for (auto* p : parameters()) ck.put(p->name, p->w);
        ck.config["vqvae"] = cfg_.to_json();
    }

    void load_params(const Checkpoint& ck) {
        for (auto* p : parameters()) {
            Mat w = ck.get(p->name);
            require(w.rows() == p->w.rows() && w.cols() == p->w.cols(),
                    "checkpoint tensor shape mismatch: " + p->name);
            p->w = w;
        }
    }

    static Vqvae from_checkpoint(const Checkpoint& ck) {
        Vqvae v;
        Rng rng(0);
        v.setup(VqvaeConfig::from_json(ck.config.at("vqvae")), rng);
        v.load_params(ck);
        return v;
    }

  private:
    VqvaeConfig cfg_;
    ConvStack encoder_, decoder_;
    nn::Param codebook_;
};

struct TrainResult {
    std::vector<float> history;  // total loss per step
};

/// Dead-code re-seeding period (in optimizer steps).
inline constexpr int64_t kCodebookRestartEvery = 25;

/// One optimizer step over a random batch. Every kCodebookRestartEvery steps
/// (including step 0, which amounts to a data-dependent codebook init) dead
/// codebook rows are re-seeded from the current batch's encoder latents.
/// Deterministic given (step, weights, rng state), so resumed runs reproduce
/// straight runs exactly.
inline float vqvae_train_step(Vqvae& model, optim::AdamW& opt,
                              const std::vector<const Mat*>& images, int64_t step, Rng& rng) {
    const auto& cfg = model.config();
    std::vector<const Mat*> batch;
    float loss = 0.0f;
    for (int b = 0; b < cfg.batch; ++b) {
        batch.push_back(images[rng.uniform_int(static_cast<int>(images.size()))]);
        loss += model.train_sample(*batch.back(), 1.0f / static_cast<float>(cfg.batch)).total();
    }
    loss /= static_cast<float>(cfg.batch);
    if (!std::isfinite(loss))
        throw DataError("vqvae training: loss diverged (non-finite) at step " + std::to_string(step));
    opt.step();
    if (step % kCodebookRestartEvery == 0) model.restart_dead_codes(batch, rng);
    return loss;
}

/// Short-run VQ-VAE training on healthy images. Aborts on NaN loss.
inline TrainResult train_vqvae(Vqvae& model, const std::vector<const Mat*>& images, Rng& rng,
                               std::function<void(int, float)> on_step = {}) {
    require(!images.empty(), "train_vqvae: empty corpus");
    const auto& cfg = model.config();
    optim::AdamW opt(model.parameters(), cfg.opt);

    TrainResult result;
    for (int step = 0; step < cfg.steps; ++step) {
        float loss = vqvae_train_step(model, opt, images, step, rng);
        result.history.push_back(loss);
        if (on_step) on_step(step, loss);
    }
    return result;
}

}  // namespace mimood::tokenizer
