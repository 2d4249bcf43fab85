#pragma once

#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "mimood/nn.hpp"
#include "mimood/rng.hpp"

namespace mimood::nn {

/// Channels-first feature map: m is channels × (h*w).
struct FeatMap {
    int c = 0, h = 0, w = 0;
    Mat m;

    FeatMap() = default;
    FeatMap(int c_, int h_, int w_) : c(c_), h(h_), w(w_), m(Mat::Zero(c_, h_ * w_)) {}
};

/// Single-sample convolutional layer interface. Batching is driven by the
/// caller (forward + immediate backward per sample).
struct ConvLayer {
    virtual ~ConvLayer() = default;
    virtual FeatMap forward(const FeatMap& x) = 0;
    virtual FeatMap backward(const FeatMap& dy) = 0;
    virtual void collect(Params&) {}
};

struct Conv2d final : ConvLayer {
    int cin = 0, cout = 0, k = 3, stride = 1, pad = 1;
    Param W;  // cout × cin*k*k
    Param b;  // 1 × cout
    Mat cols_;
    int oh_ = 0, ow_ = 0, ih_ = 0, iw_ = 0;

    void setup(const std::string& name, int cin_, int cout_, int k_, int stride_, int pad_, Rng& rng) {
        cin = cin_;
        cout = cout_;
        k = k_;
        stride = stride_;
        pad = pad_;
        W.setup(name + ".weight", cout, cin * k * k);
        W.init_normal(rng, std::sqrt(2.0f / static_cast<float>(cin * k * k)));  // He init
        b.setup(name + ".bias", 1, cout);
    }

    FeatMap forward(const FeatMap& x) override {
        require(x.c == cin, "conv: channel mismatch");
        ih_ = x.h;
        iw_ = x.w;
        oh_ = (x.h + 2 * pad - k) / stride + 1;
        ow_ = (x.w + 2 * pad - k) / stride + 1;

        cols_ = Mat::Zero(cin * k * k, oh_ * ow_);
        for (int ci = 0; ci < cin; ++ci)
            for (int ky = 0; ky < k; ++ky)
                for (int kx = 0; kx < k; ++kx) {
                    int row = (ci * k + ky) * k + kx;
                    for (int oy = 0; oy < oh_; ++oy) {
                        int sy = oy * stride + ky - pad;
                        if (sy < 0 || sy >= x.h) continue;
                        for (int ox = 0; ox < ow_; ++ox) {
                            int sx = ox * stride + kx - pad;
                            if (sx < 0 || sx >= x.w) continue;
                            cols_(row, oy * ow_ + ox) = x.m(ci, sy * x.w + sx);
                        }
                    }
                }

        FeatMap y(cout, oh_, ow_);
        y.m.noalias() = W.w * cols_;
        y.m.colwise() += b.w.row(0).transpose();
        return y;
    }

    FeatMap backward(const FeatMap& dy) override {
        W.g.noalias() += dy.m * cols_.transpose();
        b.g.row(0) += dy.m.rowwise().sum().transpose();

        Mat dcols = W.w.transpose() * dy.m;
        FeatMap dx(cin, ih_, iw_);
        for (int ci = 0; ci < cin; ++ci)
            for (int ky = 0; ky < k; ++ky)
                for (int kx = 0; kx < k; ++kx) {
                    int row = (ci * k + ky) * k + kx;
                    for (int oy = 0; oy < oh_; ++oy) {
                        int sy = oy * stride + ky - pad;
                        if (sy < 0 || sy >= ih_) continue;
                        for (int ox = 0; ox < ow_; ++ox) {
                            int sx = ox * stride + kx - pad;
                            if (sx < 0 || sx >= iw_) continue;
                            dx.m(ci, sy * iw_ + sx) += dcols(row, oy * ow_ + ox);
                        }
                    }
                }
        return dx;
    }

    void collect(Params& ps) override {
        ps.push_back(&W);
        ps.push_back(&b);
    }
};

struct Relu final : ConvLayer {
    Mat mask_;

    FeatMap forward(const FeatMap& x) override {
        mask_ = (x.m.array() > 0.0f).cast<float>();
        FeatMap y = x;
        y.m = x.m.cwiseMax(0.0f);
        return y;
    }

    FeatMap backward(const FeatMap& dy) override {
        FeatMap dx = dy;
        dx.m = dy.m.cwiseProduct(mask_);
        return dx;
    }
};

struct Sigmoid final : ConvLayer {
    Mat y_;

    FeatMap forward(const FeatMap& x) override {
        FeatMap y = x;
        y.m = (1.0f / (1.0f + (-x.m.array()).exp())).matrix();
        y_ = y.m;
        return y;
    }

    FeatMap backward(const FeatMap& dy) override {
        FeatMap dx = dy;
        dx.m = dy.m.array() * y_.array() * (1.0f - y_.array());
        return dx;
    }
};

struct Upsample2x final : ConvLayer {
    int ih_ = 0, iw_ = 0;

    FeatMap forward(const FeatMap& x) override {
        ih_ = x.h;
        iw_ = x.w;
        FeatMap y(x.c, x.h * 2, x.w * 2);
        for (int c = 0; c < x.c; ++c)
            for (int yy = 0; yy < y.h; ++yy)
                for (int xx = 0; xx < y.w; ++xx)
                    y.m(c, yy * y.w + xx) = x.m(c, (yy / 2) * x.w + (xx / 2));
        return y;
    }

    FeatMap backward(const FeatMap& dy) override {
        FeatMap dx(dy.c, ih_, iw_);
        for (int c = 0; c < dy.c; ++c)
            for (int yy = 0; yy < dy.h; ++yy)
                for (int xx = 0; xx < dy.w; ++xx)
                    dx.m(c, (yy / 2) * iw_ + (xx / 2)) += dy.m(c, yy * dy.w + xx);
        return dx;
    }
};

/// y = relu(x + conv(relu(conv(x)))), channel-preserving.
struct ResBlock final : ConvLayer {
    Conv2d c1, c2;
    Relu r1, r_out;
    Mat sum_mask_;

    void setup(const std::string& name, int channels, Rng& rng) {
        c1.setup(name + ".c1", channels, channels, 3, 1, 1, rng);
        c2.setup(name + ".c2", channels, channels, 3, 1, 1, rng);
    }

    FeatMap forward(const FeatMap& x) override {
        FeatMap h = c2.forward(r1.forward(c1.forward(x)));
        h.m += x.m;
        return r_out.forward(h);
    }

    FeatMap backward(const FeatMap& dy) override {
        FeatMap d = r_out.backward(dy);
        FeatMap dbranch = c1.backward(r1.backward(c2.backward(d)));
        dbranch.m += d.m;  // skip path
        return dbranch;
    }

    void collect(Params& ps) override {
        c1.collect(ps);
        c2.collect(ps);
    }
};

/// Sequential container for single-sample conv stacks.
struct ConvStack {
    std::vector<std::unique_ptr<ConvLayer>> layers;

    FeatMap forward(const FeatMap& x) {
        FeatMap y = x;
        for (auto& l : layers) y = l->forward(y);
        return y;
    }

    FeatMap backward(const FeatMap& dy) {
        FeatMap d = dy;
        for (auto it = layers.rbegin(); it != layers.rend(); ++it) d = (*it)->backward(d);
        return d;
    }

    void collect(Params& ps) {
        for (auto& l : layers) l->collect(ps);
    }
};

}  // namespace mimood::nn
