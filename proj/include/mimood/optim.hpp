#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "mimood/nn.hpp"
#include "mimood/serialize.hpp"

namespace mimood::optim {

/// AdamW with a cosine annealing schedule.
struct OptimizerConfig {
    float lr = 3e-4f;
    float lr_min = 0.0f;
    float weight_decay = 1e-5f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps = 1e-8f;
    int total_steps = 2000;  // cosine period
};

inline float cosine_lr(const OptimizerConfig& c, int64_t step) {
    double t = std::min<double>(1.0, static_cast<double>(step) / std::max(1, c.total_steps));
    return static_cast<float>(c.lr_min + 0.5 * (c.lr - c.lr_min) * (1.0 + std::cos(3.14159265358979323846 * t)));
}

class AdamW {
  public:
    AdamW(nn::Params params, OptimizerConfig cfg) : params_(std::move(params)), cfg_(cfg) {
        for (auto* p : params_) {
            m_.push_back(Mat::Zero(p->w.rows(), p->w.cols()));
            v_.push_back(Mat::Zero(p->w.rows(), p->w.cols()));
        }
    }

    /// Applies one update from accumulated gradients, then clears them.
    void step() {
        float lr = cosine_lr(cfg_, step_);
        ++step_;
        float bc1 = 1.0f - std::pow(cfg_.beta1, static_cast<float>(step_));
        float bc2 = 1.0f - std::pow(cfg_.beta2, static_cast<float>(step_));
        for (size_t i = 0; i < params_.size(); ++i) {
            auto* p = params_[i];
            m_[i] = cfg_.beta1 * m_[i] + (1.0f - cfg_.beta1) * p->g;
            v_[i] = cfg_.beta2 * v_[i].array() + (1.0f - cfg_.beta2) * p->g.array().square();
            Mat mhat = m_[i] / bc1;
            Mat vhat = v_[i] / bc2;
            // decoupled weight decay
            p->w.array() -= lr * cfg_.weight_decay * p->w.array();
            p->w.array() -= lr * mhat.array() / (vhat.array().sqrt() + cfg_.eps);
            p->zero_grad();
        }
    }

    int64_t step_count() const { return step_; }

    void save_state(Checkpoint& ck) const {
        for (size_t i = 0; i < params_.size(); ++i) {
            ck.put("opt.m." + params_[i]->name, m_[i]);
            ck.put("opt.v." + params_[i]->name, v_[i]);
        }
        ck.config["optimizer_step"] = step_;
    }

    void load_state(const Checkpoint& ck) {
        for (size_t i = 0; i < params_.size(); ++i) {
            m_[i] = ck.get("opt.m." + params_[i]->name);
            v_[i] = ck.get("opt.v." + params_[i]->name);
        }
        step_ = ck.config.at("optimizer_step");
    }

  private:
    nn::Params params_;
    OptimizerConfig cfg_;
    std::vector<Mat> m_, v_;
    int64_t step_ = 0;
};

}  // namespace mimood::optim
