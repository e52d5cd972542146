#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "molgen/autodiff.hpp"

namespace molgen::optim {

class NaNLossError : public std::runtime_error {
 public:
  explicit NaNLossError(const std::string& what) : std::runtime_error(what) {}
};

class EmptyDatasetError : public std::runtime_error {
 public:
  explicit EmptyDatasetError(const std::string& what) : std::runtime_error(what) {}
};

/// rate(t) = initial_rate * decay_rate^(t / decay_steps), continuous exponent.
struct ExponentialDecaySchedule {
  double initial_rate = 1e-3;
  double decay_rate = 0.9;
  long long decay_steps = 5000;

  double rate(long long step) const {
    return initial_rate * std::pow(decay_rate, static_cast<double>(step) /
                                                   static_cast<double>(decay_steps));
  }
};

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.0;  // decoupled, applied before the Adam delta
};

/// Adam with bias correction and decoupled weight decay. Parameters are
/// updated in place between graph constructions.
class Adam {
 public:
  Adam(std::vector<diff::Tensor> params, AdamConfig cfg)
      : params_(std::move(params)), cfg_(cfg) {
    for (const auto& p : params_) {
      m_.emplace_back(p.size(), 0.0);
      v_.emplace_back(p.size(), 0.0);
    }
  }

  const AdamConfig& config() const { return cfg_; }
  double learning_rate() const { return cfg_.learning_rate; }
  void set_learning_rate(double lr) { cfg_.learning_rate = lr; }
  long long step_count() const { return step_; }

  void step(const diff::GradMap& grads) {
    ++step_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
    for (std::size_t pi = 0; pi < params_.size(); ++pi) {
      auto& p = params_[pi];
      auto it = grads.find(p.node());
      if (it == grads.end()) continue;
      const auto g = it->second.data();
      if (g.size() != static_cast<std::size_t>(p.size()))
        throw diff::ShapeError("gradient shape mismatch in Adam step");
      auto pd = p.mutable_data();
      auto& m = m_[pi];
      auto& v = v_[pi];
      for (std::size_t i = 0; i < pd.size(); ++i) {
        if (cfg_.weight_decay != 0.0)
          pd[i] -= cfg_.learning_rate * cfg_.weight_decay * pd[i];
        m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
        v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        pd[i] -= cfg_.learning_rate * mhat / (std::sqrt(vhat) + cfg_.epsilon);
      }
    }
  }

  // Checkpoint access.
  struct State {
    long long step;
    std::vector<std::vector<double>> m, v;
  };
  State state() const { return {step_, m_, v_}; }
  void restore(const State& s) {
    if (s.m.size() != m_.size() || s.v.size() != v_.size())
      throw std::invalid_argument("Adam state does not match parameter list");
    step_ = s.step;
    m_ = s.m;
    v_ = s.v;
  }

 private:
  std::vector<diff::Tensor> params_;
  AdamConfig cfg_;
  long long step_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

}  // namespace molgen::optim
