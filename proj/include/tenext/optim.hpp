#pragma once
// AdamW with decoupled weight decay, global-norm gradient clipping, and the
// warmup + cosine-annealing-with-warm-restarts learning-rate schedule.

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "tenext/autograd.hpp"
#include "tenext/tensor.hpp"

namespace tenext {

// Scales all gradients so their joint L2 norm is at most max_norm.
// Returns the pre-clip norm.
inline double clip_global_norm(std::vector<Var<float>>& params, double max_norm) {
  double sq = 0.0;
  for (auto& p : params)
    for (float g : p.grad().data) sq += static_cast<double>(g) * g;
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const float s = static_cast<float>(max_norm / norm);
    for (auto& p : params) {
      Tensor<float>& g = p.node().grad;
      for (float& v : g.data) v *= s;
    }
  }
  return norm;
}

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.05;
};

class AdamW {
 public:
  AdamW(std::vector<Var<float>>* params, AdamWConfig cfg) : params_(params), cfg_(cfg) {
    m_.reserve(params->size());
    v_.reserve(params->size());
    for (auto& p : *params) {
      m_.push_back(Tensor<float>::zeros(p.value().shape));
      v_.push_back(Tensor<float>::zeros(p.value().shape));
    }
  }

  // One update with the given learning rate. Decay is decoupled: it shrinks
  // the parameter directly instead of entering the moment estimates.
  void step(double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (size_t i = 0; i < params_->size(); ++i) {
      Var<float>& p = (*params_)[i];
      const Tensor<float>& g = p.grad();
      Tensor<float>& val = p.value();
      Tensor<float>& m = m_[i];
      Tensor<float>& v = v_[i];
      for (size_t j = 0; j < val.data.size(); ++j) {
        const double gj = g.data[j];
        if (!std::isfinite(gj))
          throw std::runtime_error("optimizer: non-finite gradient in parameter '" +
                                   p.name() + "'");
        const double mj = cfg_.beta1 * m.data[j] + (1.0 - cfg_.beta1) * gj;
        const double vj = cfg_.beta2 * v.data[j] + (1.0 - cfg_.beta2) * gj * gj;
        m.data[j] = static_cast<float>(mj);
        v.data[j] = static_cast<float>(vj);
        const double mhat = mj / bc1;
        const double vhat = vj / bc2;
        const double theta = val.data[j];
        val.data[j] = static_cast<float>(theta - lr * mhat / (std::sqrt(vhat) + cfg_.eps) -
                                         lr * cfg_.weight_decay * theta);
      }
    }
  }

  void zero_grad() {
    for (auto& p : *params_) p.zero_grad();
  }

  int64_t step_count() const { return t_; }
  void set_step_count(int64_t t) { t_ = t; }

  // Moment tensors for checkpointing, named after their parameters.
  std::vector<std::pair<std::string, Tensor<float>>> state() const {
    std::vector<std::pair<std::string, Tensor<float>>> out;
    for (size_t i = 0; i < params_->size(); ++i) {
      out.emplace_back("opt.m." + (*params_)[i].name(), m_[i]);
      out.emplace_back("opt.v." + (*params_)[i].name(), v_[i]);
    }
    return out;
  }

  void load_moments(size_t index, const Tensor<float>& m, const Tensor<float>& v) {
    if (m.shape != m_[index].shape || v.shape != v_[index].shape)
      throw std::runtime_error("optimizer: moment shape mismatch for parameter '" +
                               (*params_)[index].name() + "'");
    m_[index] = m;
    v_[index] = v;
  }

 private:
  std::vector<Var<float>>* params_;
  AdamWConfig cfg_;
  std::vector<Tensor<float>> m_, v_;
  int64_t t_ = 0;
};

// Learning-rate schedule: linear warmup from zero to the base rate, then
// cosine annealing with warm restarts (each segment t_mult times longer).
// Positions are fractional epochs so the rate also moves within an epoch.
struct LrSchedule {
  double lr0 = 5e-3;
  double lr_min = 5e-5;
  int warmup_epochs = 80;
  int t0 = 20;
  int t_mult = 2;
  int steps_per_epoch = 1;

  double lr_at(int epoch, int step_in_epoch) const {
    if (epoch < 0 || step_in_epoch < 0)
      throw std::invalid_argument("lr_at: negative schedule position");
    if (t0 < 1 || t_mult < 1 || steps_per_epoch < 1)
      throw std::invalid_argument("lr_at: degenerate schedule configuration");
    const double e =
        static_cast<double>(epoch) + static_cast<double>(step_in_epoch) / steps_per_epoch;
    if (warmup_epochs > 0 && e < warmup_epochs) return lr0 * (e / warmup_epochs);

    // Past warmup: walk the restart segments.
    double tau = e - warmup_epochs;
    double len = static_cast<double>(t0);
    while (tau >= len) {
      tau -= len;
      len *= t_mult;
    }
    return lr_min + (lr0 - lr_min) * 0.5 * (1.0 + std::cos(M_PI * tau / len));
  }
};

// Stops training after `patience` epochs without a new best score.
struct EarlyStopper {
  int patience = 25;
  double best = -1.0;
  int best_epoch = -1;
  int epochs_since_best = 0;

  // Returns true when the run should stop.
  bool observe(int epoch, double score) {
    if (score > best) {
      best = score;
      best_epoch = epoch;
      epochs_since_best = 0;
      return false;
    }
    return ++epochs_since_best >= patience;
  }
};

}  // namespace tenext
