#pragma once

#include <string>
#include <vector>

#include "mimood/nn.hpp"
#include "mimood/rng.hpp"
#include "mimood/serialize.hpp"

namespace mimood::nn {

/// Bidirectional transformer over a flattened (row-major) token grid with
/// learned 2-D positional embeddings.
struct TransformerConfig {
    int depth = 4;
    int dim = 128;
    int heads = 4;
    int mlp_ratio = 4;
    float drop_path = 0.1f;
    int vocab = 129;   // K_size (+1 when a MASK row is needed)
    int head_out = 128;
    int grid_h = 16;
    int grid_w = 16;

    int seq() const { return grid_h * grid_w; }

    void validate() const {
        require(depth >= 1 && dim >= 1 && heads >= 1 && mlp_ratio >= 1, "transformer: sizes must be positive");
        require(dim % heads == 0, "transformer: dim must be divisible by heads");
        require(drop_path >= 0.0f && drop_path < 1.0f, "transformer: drop_path must be in [0,1)");
        require(vocab >= 2 && head_out >= 1 && grid_h >= 1 && grid_w >= 1, "transformer: bad vocab/grid");
    }

    nlohmann::json to_json() const {
        return {{"depth", depth},   {"dim", dim},       {"heads", heads},
                {"mlp_ratio", mlp_ratio}, {"drop_path", drop_path}, {"vocab", vocab},
                {"head_out", head_out},   {"grid_h", grid_h},       {"grid_w", grid_w}};
    }

    static TransformerConfig from_json(const nlohmann::json& j) {
        TransformerConfig c;
        c.depth = j.at("depth");
        c.dim = j.at("dim");
        c.heads = j.at("heads");
        c.mlp_ratio = j.at("mlp_ratio");
        c.drop_path = j.at("drop_path");
        c.vocab = j.at("vocab");
        c.head_out = j.at("head_out");
        c.grid_h = j.at("grid_h");
        c.grid_w = j.at("grid_w");
        return c;
    }
};

struct Transformer {
    TransformerConfig cfg;
    Param tok_emb;  // vocab × dim
    Param pos_emb;  // seq × dim
    std::vector<Block> blocks;
    LayerNorm ln_f;
    Linear head;
    std::vector<int32_t> ids_;
    int batch_ = 0;

    void setup(const TransformerConfig& c, Rng& rng) {
        cfg = c;
        cfg.validate();
        tok_emb.setup("tok_emb", cfg.vocab, cfg.dim);
        tok_emb.init_normal(rng, 0.02f);
        pos_emb.setup("pos_emb", cfg.seq(), cfg.dim);
        pos_emb.init_normal(rng, 0.02f);
        blocks.resize(cfg.depth);
        for (int i = 0; i < cfg.depth; ++i)
            blocks[i].setup("block" + std::to_string(i), cfg.dim, cfg.heads,
                            cfg.mlp_ratio * cfg.dim, cfg.drop_path, rng);
        ln_f.setup("ln_f", cfg.dim);
        head.setup("head", cfg.dim, cfg.head_out, rng);
    }

    /// ids.size() must equal batch*seq; returns (batch*seq) × head_out.
    Mat forward(const std::vector<int32_t>& ids, int batch, bool train, Rng& rng) {
        const int seq = cfg.seq();
        require(static_cast<int>(ids.size()) == batch * seq, "transformer: ids size mismatch");
        for (int32_t id : ids)
            if (id < 0 || id >= cfg.vocab)
                throw DataError("transformer: token id " + std::to_string(id) + " out of range [0," +
                                std::to_string(cfg.vocab - 1) + "]");
        ids_ = ids;
        batch_ = batch;

        Mat x(batch * seq, cfg.dim);
        for (int i = 0; i < batch * seq; ++i)
            x.row(i) = tok_emb.w.row(ids[i]) + pos_emb.w.row(i % seq);
        for (auto& blk : blocks) x = blk.forward(x, batch, seq, train, rng);
        return head.forward(ln_f.forward(x));
    }

    /// Eval-mode forward (no stochastic depth), deterministic.
    Mat forward_eval(const std::vector<int32_t>& ids, int batch = 1) {
        Rng dummy(0);
        return forward(ids, batch, /*train=*/false, dummy);
    }

    void backward(const Mat& d_out) {
        Mat d = ln_f.backward(head.backward(d_out));
        for (auto it = blocks.rbegin(); it != blocks.rend(); ++it) d = it->backward(d);
        const int seq = cfg.seq();
        for (int i = 0; i < batch_ * seq; ++i) {
            tok_emb.g.row(ids_[i]) += d.row(i);
            pos_emb.g.row(i % seq) += d.row(i);
        }
    }

    Params parameters() {
        Params ps{&tok_emb, &pos_emb};
        for (auto& b : blocks) b.collect(ps);
        ln_f.collect(ps);
        head.collect(ps);
        return ps;
    }

    void save_params(Checkpoint& ck) {
        for (auto* p : parameters()) ck.put(p->name, p->w);
        ck.config["transformer"] = cfg.to_json();
    }

    void load_params(const Checkpoint& ck) {
        for (auto* p : parameters()) {
            Mat w = ck.get(p->name);
            require(w.rows() == p->w.rows() && w.cols() == p->w.cols(),
                    "checkpoint tensor shape mismatch: " + p->name);
            p->w = w;
        }
    }

    static Transformer from_checkpoint(const Checkpoint& ck) {
        Transformer t;
        Rng rng(0);
        t.setup(TransformerConfig::from_json(ck.config.at("transformer")), rng);
        t.load_params(ck);
        return t;
    }
};

}  // namespace mimood::nn
