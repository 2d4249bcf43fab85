#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "mimood/common.hpp"
#include "mimood/rng.hpp"

namespace mimood::nn {

/// One learnable tensor with its gradient accumulator.
struct Param {
    std::string name;
    Mat w;
    Mat g;

    void setup(const std::string& n, int rows, int cols) {
        name = n;
        w = Mat::Zero(rows, cols);
        g = Mat::Zero(rows, cols);
    }

    void init_normal(Rng& rng, float std) {
        for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = std * rng.normal();
    }

    void zero_grad() { g.setZero(); }
};

using Params = std::vector<Param*>;

inline void zero_grads(const Params& ps) {
    for (auto* p : ps) p->zero_grad();
}

// ---------------------------------------------------------------------------
// Dense layers. Activations are (rows = batch*seq, cols = features), row-major.
// ---------------------------------------------------------------------------

struct Linear {
    Param W;  // in × out
    Param b;  // 1 × out
    Mat x_;

    void setup(const std::string& name, int in, int out, Rng& rng, float w_std = 0.02f) {
        W.setup(name + ".weight", in, out);
        W.init_normal(rng, w_std);
        b.setup(name + ".bias", 1, out);
    }

    Mat forward(const Mat& x) {
        x_ = x;
        Mat y = x * W.w;
        y.rowwise() += b.w.row(0);
        return y;
    }

    Mat backward(const Mat& dy) {
        W.g.noalias() += x_.transpose() * dy;
        b.g.row(0) += dy.colwise().sum();
        return dy * W.w.transpose();
    }

    void collect(Params& ps) {
        ps.push_back(&W);
        ps.push_back(&b);
    }
};

struct LayerNorm {
    static constexpr float kEps = 1e-5f;
    Param gamma, beta;
    Mat xhat_;
    Eigen::VectorXf rstd_;

    void setup(const std::string& name, int dim) {
        gamma.setup(name + ".gamma", 1, dim);
        gamma.w.setOnes();
        beta.setup(name + ".beta", 1, dim);
    }

    Mat forward(const Mat& x) {
        const auto n = static_cast<float>(x.cols());
        Eigen::VectorXf mu = x.rowwise().mean();
        Mat xc = x.colwise() - mu;
        Eigen::VectorXf var = xc.array().square().rowwise().sum() / n;
        rstd_ = (var.array() + kEps).rsqrt();
        xhat_ = xc.array().colwise() * rstd_.array();
        Mat y = xhat_.array().rowwise() * gamma.w.row(0).array();
        y.rowwise() += beta.w.row(0);
        return y;
    }

    Mat backward(const Mat& dy) {
        const auto n = static_cast<float>(dy.cols());
        gamma.g.row(0) += (dy.array() * xhat_.array()).colwise().sum().matrix();
        beta.g.row(0) += dy.colwise().sum();

        Mat dxhat = dy.array().rowwise() * gamma.w.row(0).array();
        Eigen::VectorXf m1 = dxhat.rowwise().sum() / n;
        Eigen::VectorXf m2 = (dxhat.array() * xhat_.array()).rowwise().sum() / n;
        Mat dx = dxhat;
        dx.colwise() -= m1;
        dx.array() -= xhat_.array().colwise() * m2.array();
        dx.array().colwise() *= rstd_.array();
        return dx;
    }

    void collect(Params& ps) {
        ps.push_back(&gamma);
        ps.push_back(&beta);
    }
};

struct Gelu {
    Mat x_;

    static float value(float x) {
        const float c = 0.7978845608028654f;  // sqrt(2/pi)
        return 0.5f * x * (1.0f + std::tanh(c * (x + 0.044715f * x * x * x)));
    }

    static float deriv(float x) {
        const float c = 0.7978845608028654f;
        float x3 = x * x * x;
        float t = std::tanh(c * (x + 0.044715f * x3));
        float dt = (1.0f - t * t) * c * (1.0f + 3.0f * 0.044715f * x * x);
        return 0.5f * (1.0f + t) + 0.5f * x * dt;
    }

    Mat forward(const Mat& x) {
        x_ = x;
        return x.unaryExpr(&Gelu::value);
    }

    Mat backward(const Mat& dy) { return dy.array() * x_.unaryExpr(&Gelu::deriv).array(); }
};

/// Row-wise softmax in place.
inline void softmax_rows(Mat& m) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        float mx = m.row(r).maxCoeff();
        m.row(r) = (m.row(r).array() - mx).exp();
        m.row(r) /= m.row(r).sum();
    }
}

struct MultiHeadAttention {
    int dim = 0, heads = 0, head_dim = 0;
    Linear qkv;   // dim -> 3*dim
    Linear proj;  // dim -> dim
    int batch_ = 0, seq_ = 0;
    Mat qkv_;
    std::vector<Mat> att_;  // per (batch, head), seq × seq, post-softmax

    void setup(const std::string& name, int dim_, int heads_, Rng& rng) {
        require(dim_ % heads_ == 0, "attention: dim must be divisible by heads");
        dim = dim_;
        heads = heads_;
        head_dim = dim_ / heads_;
        qkv.setup(name + ".qkv", dim, 3 * dim, rng);
        proj.setup(name + ".proj", dim, dim, rng);
    }

    Mat forward(const Mat& x, int batch, int seq) {
        batch_ = batch;
        seq_ = seq;
        qkv_ = qkv.forward(x);
        att_.assign(static_cast<size_t>(batch) * heads, Mat());
        const float scale = 1.0f / std::sqrt(static_cast<float>(head_dim));

        Mat concat(x.rows(), dim);
        for (int b = 0; b < batch; ++b) {
            for (int h = 0; h < heads; ++h) {
                auto q = qkv_.block(b * seq, h * head_dim, seq, head_dim);
                auto k = qkv_.block(b * seq, dim + h * head_dim, seq, head_dim);
                auto v = qkv_.block(b * seq, 2 * dim + h * head_dim, seq, head_dim);
                Mat s = (q * k.transpose()) * scale;
                softmax_rows(s);
                concat.block(b * seq, h * head_dim, seq, head_dim).noalias() = s * v;
                att_[static_cast<size_t>(b) * heads + h] = std::move(s);
            }
        }
        return proj.forward(concat);
    }

    Mat backward(const Mat& dy) {
        Mat dconcat = proj.backward(dy);
        Mat dqkv = Mat::Zero(dy.rows(), 3 * dim);
        const float scale = 1.0f / std::sqrt(static_cast<float>(head_dim));

        for (int b = 0; b < batch_; ++b) {
            for (int h = 0; h < heads; ++h) {
                auto q = qkv_.block(b * seq_, h * head_dim, seq_, head_dim);
                auto k = qkv_.block(b * seq_, dim + h * head_dim, seq_, head_dim);
                auto v = qkv_.block(b * seq_, 2 * dim + h * head_dim, seq_, head_dim);
                const Mat& a = att_[static_cast<size_t>(b) * heads + h];
                auto dout = dconcat.block(b * seq_, h * head_dim, seq_, head_dim);

                Mat dv = a.transpose() * dout;
                Mat da = dout * v.transpose();
                // softmax backward, row-wise
                Mat ds = a;
                Eigen::VectorXf dot = (da.array() * a.array()).rowwise().sum();
                ds.array() *= (da.colwise() - dot).array();

                dqkv.block(b * seq_, h * head_dim, seq_, head_dim).noalias() = (ds * k) * scale;
                dqkv.block(b * seq_, dim + h * head_dim, seq_, head_dim).noalias() =
                    (ds.transpose() * q) * scale;
                dqkv.block(b * seq_, 2 * dim + h * head_dim, seq_, head_dim) = dv;
            }
        }
        return qkv.backward(dqkv);
    }

    void collect(Params& ps) {
        qkv.collect(ps);
        proj.collect(ps);
    }
};

/// Pre-norm transformer block with stochastic depth on each residual branch
/// (whole-batch Bernoulli per step, train only).
struct Block {
    LayerNorm ln1, ln2;
    MultiHeadAttention attn;
    Linear fc1, fc2;
    Gelu act;
    float drop_path = 0.0f;
    float attn_scale_ = 1.0f, mlp_scale_ = 1.0f;

    void setup(const std::string& name, int dim, int heads, int mlp_hidden, float drop_path_,
               Rng& rng) {
        drop_path = drop_path_;
        ln1.setup(name + ".ln1", dim);
        ln2.setup(name + ".ln2", dim);
        attn.setup(name + ".attn", dim, heads, rng);
        fc1.setup(name + ".mlp.fc1", dim, mlp_hidden, rng);
        fc2.setup(name + ".mlp.fc2", mlp_hidden, dim, rng);
    }

    Mat forward(const Mat& x, int batch, int seq, bool train, Rng& rng) {
        attn_scale_ = branch_scale(train, rng);
        Mat h = x;
        if (attn_scale_ != 0.0f)
            h.noalias() += attn_scale_ * attn.forward(ln1.forward(x), batch, seq);

        mlp_scale_ = branch_scale(train, rng);
        Mat y = h;
        if (mlp_scale_ != 0.0f)
            y.noalias() += mlp_scale_ * fc2.forward(act.forward(fc1.forward(ln2.forward(h))));
        return y;
    }

    Mat backward(const Mat& dy) {
        Mat dh = dy;
        if (mlp_scale_ != 0.0f) {
            Mat d = fc2.backward(mlp_scale_ * dy);
            d = fc1.backward(act.backward(d));
            dh.noalias() += ln2.backward(d);
        }
        Mat dx = dh;
        if (attn_scale_ != 0.0f) {
            Mat d = attn.backward(attn_scale_ * dh);
            dx.noalias() += ln1.backward(d);
        }
        return dx;
    }

    void collect(Params& ps) {
        ln1.collect(ps);
        attn.collect(ps);
        ln2.collect(ps);
        fc1.collect(ps);
        fc2.collect(ps);
    }

  private:
    float branch_scale(bool train, Rng& rng) {
        if (!train || drop_path <= 0.0f) return 1.0f;
        if (rng.uniform() < drop_path) return 0.0f;
        return 1.0f / (1.0f - drop_path);
    }
};

}  // namespace mimood::nn
