#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "molgen/autodiff.hpp"
#include "molgen/chem.hpp"
#include "molgen/graphs.hpp"
#include "molgen/metrics.hpp"
#include "molgen/optim.hpp"
#include "molgen/rng.hpp"

namespace molgen::molgan {

using diff::Tensor;

enum class SamplingMode { Gumbel, StraightThrough, Softmax };

inline const char* to_string(SamplingMode m) {
  switch (m) {
    case SamplingMode::Gumbel: return "gumbel";
    case SamplingMode::StraightThrough: return "straight_through";
    case SamplingMode::Softmax: return "softmax";
  }
  return "?";
}

inline SamplingMode sampling_mode_from(const std::string& s) {
  if (s == "gumbel") return SamplingMode::Gumbel;
  if (s == "straight_through") return SamplingMode::StraightThrough;
  if (s == "softmax") return SamplingMode::Softmax;
  throw std::invalid_argument("unknown sampling_mode '" + s +
                              "' (expected gumbel, straight_through or softmax)");
}

struct MolganConfig {
  graphs::GraphSpec spec;
  int latent_dim = 32;
  std::vector<int> generator_hidden{128, 256, 512};
  std::vector<int> discriminator_conv{64, 32};
  int aggregation_width = 128;
  std::vector<int> discriminator_mlp{64};
  double penalty_coefficient = 10.0;
  SamplingMode sampling_mode = SamplingMode::Gumbel;
  double temperature = 1.0;
  double generator_steps_ratio = 0.2;
  int batch_size = 32;
  double dropout = 0.0;
  double learning_rate = 1e-4;
  double weight_decay = 0.0;

  void validate() const {
    spec.validate();
    if (latent_dim < 1) throw std::invalid_argument("latent_dim must be >= 1");
    for (int w : generator_hidden)
      if (w < 1) throw std::invalid_argument("generator_hidden widths must be >= 1");
    for (int w : discriminator_conv)
      if (w < 1) throw std::invalid_argument("discriminator_conv widths must be >= 1");
    if (aggregation_width < 1)
      throw std::invalid_argument("aggregation_width must be >= 1");
    for (int w : discriminator_mlp)
      if (w < 1) throw std::invalid_argument("discriminator_mlp widths must be >= 1");
    if (penalty_coefficient < 0.0)
      throw std::invalid_argument("penalty_coefficient must be >= 0");
    if (temperature <= 0.0) throw std::invalid_argument("temperature must be > 0");
    if (generator_steps_ratio <= 0.0 || generator_steps_ratio > 1.0)
      throw std::invalid_argument("generator_steps_ratio must be in (0, 1]");
    if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
    if (dropout < 0.0 || dropout >= 1.0)
      throw std::invalid_argument("dropout must be in [0, 1)");
    if (learning_rate <= 0.0) throw std::invalid_argument("learning_rate must be > 0");
    if (weight_decay < 0.0) throw std::invalid_argument("weight_decay must be >= 0");
  }
};

namespace detail {

inline Tensor xavier(int rows, int cols, Rng& rng) {
  std::vector<double> w(static_cast<std::size_t>(rows) * cols);
  const double s = std::sqrt(1.0 / rows);
  for (auto& v : w) v = rng.normal() * s;
  return Tensor::from({rows, cols}, std::move(w)).set_requires_grad(true);
}

inline Tensor zeros_param(int n) {
  return Tensor::zeros({n}).set_requires_grad(true);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Generator: MLP from latent z to node logits (N x D) and edge logits
// (N x N x Y). Edge logits are symmetrized by averaging with their
// transpose so every downstream consumer sees an undirected graph.
// ---------------------------------------------------------------------------

class Generator {
 public:
  Generator(const MolganConfig& cfg, Rng& init_rng) : cfg_(cfg) {
    int in = cfg.latent_dim;
    for (int w : cfg.generator_hidden) {
      weights_.push_back(detail::xavier(in, w, init_rng));
      biases_.push_back(detail::zeros_param(w));
      in = w;
    }
    const auto& spec = cfg.spec;
    wx_ = detail::xavier(in, spec.max_atoms * spec.node_types, init_rng);
    bx_ = detail::zeros_param(spec.max_atoms * spec.node_types);
    wa_ = detail::xavier(in, spec.max_atoms * spec.max_atoms * spec.edge_types, init_rng);
    ba_ = detail::zeros_param(spec.max_atoms * spec.max_atoms * spec.edge_types);
  }

  std::pair<Tensor, Tensor> forward(const Tensor& z, bool training, Rng& rng) const {
    const int b = z.shape()[0];
    Tensor h = z;
    for (std::size_t l = 0; l < weights_.size(); ++l) {
      h = tanh(add(matmul(h, weights_[l]), biases_[l]));
      if (training && cfg_.dropout > 0.0) h = dropout(h, cfg_.dropout, true, rng);
    }
    const auto& spec = cfg_.spec;
    Tensor lx = reshape(add(matmul(h, wx_), bx_), {b, spec.max_atoms, spec.node_types});
    Tensor la = reshape(add(matmul(h, wa_), ba_),
                        {b, spec.max_atoms, spec.max_atoms, spec.edge_types});
    Tensor sym = mul(add(la, swap_axes(la, 1, 2)), 0.5);
    return {lx, sym};
  }

  std::vector<std::pair<std::string, Tensor>> named_params() const {
    std::vector<std::pair<std::string, Tensor>> out;
    for (std::size_t l = 0; l < weights_.size(); ++l) {
      out.emplace_back("hidden" + std::to_string(l) + ".w", weights_[l]);
      out.emplace_back("hidden" + std::to_string(l) + ".b", biases_[l]);
    }
    out.emplace_back("head_x.w", wx_);
    out.emplace_back("head_x.b", bx_);
    out.emplace_back("head_a.w", wa_);
    out.emplace_back("head_a.b", ba_);
    return out;
  }

  std::vector<Tensor> params() const {
    std::vector<Tensor> out;
    for (auto& [_, t] : named_params()) out.push_back(t);
    return out;
  }

 private:
  MolganConfig cfg_;
  std::vector<Tensor> weights_, biases_;
  Tensor wx_, bx_, wa_, ba_;
};

// ---------------------------------------------------------------------------
// Discriminator: relational graph convolutions (one transform per edge
// type plus a self connection, messages normalized by the neighbor count),
// gated sum aggregation, then an MLP to a scalar score per graph.
// ---------------------------------------------------------------------------

class Discriminator {
 public:
  Discriminator(const MolganConfig& cfg, Rng& init_rng) : cfg_(cfg) {
    const auto& spec = cfg.spec;
    int h = spec.node_types;  // initial node signal is the one-hot X itself
    for (int width : cfg.discriminator_conv) {
      ConvLayer layer;
      const int in = h + spec.node_types;
      layer.self_w = detail::xavier(in, width, init_rng);
      layer.self_b = detail::zeros_param(width);
      for (int y = 0; y < spec.edge_types; ++y) {
        layer.edge_w.push_back(detail::xavier(in, width, init_rng));
        layer.edge_b.push_back(detail::zeros_param(width));
      }
      layers_.push_back(std::move(layer));
      h = width;
    }
    const int gate_in = h + spec.node_types;
    wi_ = detail::xavier(gate_in, cfg.aggregation_width, init_rng);
    bi_ = detail::zeros_param(cfg.aggregation_width);
    wj_ = detail::xavier(gate_in, cfg.aggregation_width, init_rng);
    bj_ = detail::zeros_param(cfg.aggregation_width);
    int in = cfg.aggregation_width;
    for (int width : cfg.discriminator_mlp) {
      mlp_w_.push_back(detail::xavier(in, width, init_rng));
      mlp_b_.push_back(detail::zeros_param(width));
      in = width;
    }
    out_w_ = detail::xavier(in, 1, init_rng);
    out_b_ = detail::zeros_param(1);
  }

  /// Per-graph scores, shape {batch}. A may be continuous; dropout only
  /// fires when training is set (the gradient-penalty pass never sets it).
  Tensor forward(const Tensor& x, const Tensor& a, bool training, Rng& rng) const {
    const auto& spec = cfg_.spec;
    const int b = x.shape()[0];
    const int n = spec.max_atoms;
    if (x.rank() != 3 || x.shape()[1] != n || x.shape()[2] != spec.node_types)
      throw diff::ShapeError("discriminator X must be (batch, N, D)");
    if (a.rank() != 4 || a.shape()[0] != b || a.shape()[1] != n || a.shape()[2] != n ||
        a.shape()[3] != spec.edge_types)
      throw diff::ShapeError("discriminator A must be (batch, N, N, Y)");

    const double norm = 1.0 / std::max(n - 1, 1);  // |N_i|, guarded for N = 1
    Tensor h = x;
    for (const auto& layer : layers_) {
      Tensor hx = diff::concat({h, x}, 2);
      const int in = hx.shape()[2];
      Tensor flat = reshape(hx, {b * n, in});
      const int width = layer.self_b.shape()[0];
      Tensor acc = reshape(add(matmul(flat, layer.self_w), layer.self_b), {b, n, width});
      for (int y = 0; y < spec.edge_types; ++y) {
        Tensor msg = reshape(add(matmul(flat, layer.edge_w[static_cast<std::size_t>(y)]),
                                 layer.edge_b[static_cast<std::size_t>(y)]),
                             {b, n, width});
        Tensor ay = reshape(slice(a, 3, y, y + 1), {b, n, n});
        acc = add(acc, mul(bmm(ay, msg), norm));
      }
      h = tanh(acc);
      if (training && cfg_.dropout > 0.0) h = dropout(h, cfg_.dropout, true, rng);
    }

    Tensor hx = diff::concat({h, x}, 2);
    const int gate_in = hx.shape()[2];
    Tensor flat = reshape(hx, {b * n, gate_in});
    Tensor gi = sigmoid(add(matmul(flat, wi_), bi_));
    Tensor gj = tanh(add(matmul(flat, wj_), bj_));
    Tensor gated = reshape(mul(gi, gj), {b, n, cfg_.aggregation_width});
    Tensor hg = tanh(sum(gated, 1));
    if (training && cfg_.dropout > 0.0) hg = dropout(hg, cfg_.dropout, true, rng);

    Tensor m = hg;
    for (std::size_t l = 0; l < mlp_w_.size(); ++l) {
      m = tanh(add(matmul(m, mlp_w_[l]), mlp_b_[l]));
      if (training && cfg_.dropout > 0.0) m = dropout(m, cfg_.dropout, true, rng);
    }
    return reshape(add(matmul(m, out_w_), out_b_), {b});
  }

  std::vector<std::pair<std::string, Tensor>> named_params() const {
    std::vector<std::pair<std::string, Tensor>> out;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      const auto& layer = layers_[l];
      const std::string p = "conv" + std::to_string(l) + ".";
      out.emplace_back(p + "self.w", layer.self_w);
      out.emplace_back(p + "self.b", layer.self_b);
      for (std::size_t y = 0; y < layer.edge_w.size(); ++y) {
        out.emplace_back(p + "edge" + std::to_string(y) + ".w", layer.edge_w[y]);
        out.emplace_back(p + "edge" + std::to_string(y) + ".b", layer.edge_b[y]);
      }
    }
    out.emplace_back("gate_i.w", wi_);
    out.emplace_back("gate_i.b", bi_);
    out.emplace_back("gate_j.w", wj_);
    out.emplace_back("gate_j.b", bj_);
    for (std::size_t l = 0; l < mlp_w_.size(); ++l) {
      out.emplace_back("mlp" + std::to_string(l) + ".w", mlp_w_[l]);
      out.emplace_back("mlp" + std::to_string(l) + ".b", mlp_b_[l]);
    }
    out.emplace_back("out.w", out_w_);
    out.emplace_back("out.b", out_b_);
    return out;
  }

  std::vector<Tensor> params() const {
    std::vector<Tensor> out;
    for (auto& [_, t] : named_params()) out.push_back(t);
    return out;
  }

 private:
  struct ConvLayer {
    Tensor self_w, self_b;
    std::vector<Tensor> edge_w, edge_b;
  };

  MolganConfig cfg_;
  std::vector<ConvLayer> layers_;
  Tensor wi_, bi_, wj_, bj_;
  std::vector<Tensor> mlp_w_, mlp_b_;
  Tensor out_w_, out_b_;
};

// ---------------------------------------------------------------------------
// Sampling
// ---------------------------------------------------------------------------

inline Tensor sample_latent(int batch, int latent_dim, Rng& rng) {
  return diff::randn({batch, latent_dim}, rng);
}

namespace detail {

/// Gumbel noise for the adjacency logits, mirrored across (i,j)/(j,i) so the
/// perturbed tensor stays exactly symmetric.
inline Tensor symmetric_gumbel(int b, int n, int y, Rng& rng) {
  std::vector<double> data(static_cast<std::size_t>(b) * n * n * y);
  auto at = [&](int bb, int i, int j, int k) -> double& {
    return data[static_cast<std::size_t>(((bb * n + i) * n + j) * y + k)];
  };
  for (int bb = 0; bb < b; ++bb)
    for (int i = 0; i < n; ++i)
      for (int j = i; j < n; ++j)
        for (int k = 0; k < y; ++k) {
          const double g = rng.gumbel();
          at(bb, i, j, k) = g;
          at(bb, j, i, k) = g;
        }
  return Tensor::from({b, n, n, y}, std::move(data));
}

/// Hard one-hot of the argmax over the trailing axis, as a constant tensor.
inline Tensor hard_one_hot(const Tensor& soft) {
  const diff::Shape& s = soft.shape();
  const int k = s.back();
  const auto rows = soft.size() / k;
  std::vector<double> out(static_cast<std::size_t>(soft.size()), 0.0);
  const double* src = soft.data().data();
  for (std::int64_t r = 0; r < rows; ++r) {
    int best = 0;
    for (int i = 1; i < k; ++i)
      if (src[r * k + i] > src[r * k + best]) best = i;
    out[static_cast<std::size_t>(r * k + best)] = 1.0;
  }
  return Tensor::from(s, std::move(out));
}

}  // namespace detail

/// Applies the configured categorical relaxation to generator logits.
///   gumbel:            softmax((logits + Gumbel(0,1)) / tau), differentiable
///   straight_through:  hard one-hot forward, soft gradients
///   softmax:           plain softmax, no noise
inline std::pair<Tensor, Tensor> generate(const Generator& g, const Tensor& z,
                                          SamplingMode mode, double tau, Rng& rng,
                                          bool training = false) {
  auto [lx, la] = g.forward(z, training, rng);
  const int b = lx.shape()[0];
  const int n = lx.shape()[1];
  const int y = la.shape()[3];

  auto relax = [&](const Tensor& logits, int axis, bool edge) -> Tensor {
    switch (mode) {
      case SamplingMode::Softmax:
        return softmax(logits, axis);
      case SamplingMode::Gumbel:
      case SamplingMode::StraightThrough: {
        Tensor noise = edge ? detail::symmetric_gumbel(b, n, y, rng)
                            : diff::gumbel_noise(logits.shape(), rng);
        Tensor soft = softmax(div(add(logits, noise), tau), axis);
        if (mode == SamplingMode::Gumbel) return soft;
        Tensor hard = detail::hard_one_hot(soft);
        return add(hard, sub(soft, soft.detach()));
      }
    }
    throw std::logic_error("unreachable sampling mode");
  };

  Tensor xt = relax(lx, 2, false);
  Tensor at = relax(la, 3, true);
  return {xt, at};
}

/// Scores one explicit graph with the discriminator.
inline double discriminate(const Discriminator& d, const graphs::GraphTensors& g) {
  diff::NoGradGuard ng;
  Rng dummy(0);
  Tensor x = Tensor::from({1, g.n, g.d}, g.x);
  Tensor a = Tensor::from({1, g.n, g.n, g.y}, g.a);
  return d.forward(x, a, false, dummy).data()[0];
}

// ---------------------------------------------------------------------------
// WGAN-GP loss
// ---------------------------------------------------------------------------

namespace detail {

/// Per-sample linear interpolation x̂ = ε·real + (1-ε)·fake, one ε per
/// sample shared across that sample's entries, returned as a fresh leaf.
inline Tensor interpolate(const Tensor& real, const Tensor& fake,
                          std::span<const double> eps) {
  const int b = real.shape()[0];
  std::vector<double> out(static_cast<std::size_t>(real.size()));
  const auto per = real.size() / b;
  const double* pr = real.data().data();
  const double* pf = fake.data().data();
  for (int i = 0; i < b; ++i) {
    const double e = eps[static_cast<std::size_t>(i)];
    for (std::int64_t k = 0; k < per; ++k)
      out[static_cast<std::size_t>(i * per + k)] =
          e * pr[i * per + k] + (1.0 - e) * pf[i * per + k];
  }
  return Tensor::from(real.shape(), std::move(out)).set_requires_grad(true);
}

struct CriticLoss {
  Tensor d_loss;
  double wasserstein = 0.0;
};

/// mean[D(fake) - D(real)] + α(‖∇_x̂ D(x̂)‖ - 1)², built on detached fakes.
/// The penalty pass runs without dropout so its graph is twice
/// differentiable.
inline CriticLoss critic_loss(const Discriminator& d, const Tensor& x_real,
                              const Tensor& a_real, const Tensor& x_fake_const,
                              const Tensor& a_fake_const, double alpha,
                              std::span<const double> eps, Rng& rng, bool training) {
  Tensor scores_real = d.forward(x_real, a_real, training, rng);
  Tensor scores_fake = d.forward(x_fake_const, a_fake_const, training, rng);

  Tensor xh = interpolate(x_real, x_fake_const, eps);
  Tensor ah = interpolate(a_real, a_fake_const, eps);
  Tensor hat_sum = sum(d.forward(xh, ah, false, rng));
  auto hat_grads = diff::grad(hat_sum, {xh, ah}, /*create_graph=*/true);
  Tensor gx2 = sum(sum(square(hat_grads[0]), 2), 1);
  Tensor ga2 = sum(sum(sum(square(hat_grads[1]), 3), 2), 1);
  Tensor norm = sqrt(add(add(gx2, ga2), 1e-12));
  Tensor penalty = mul(mean(square(sub(norm, 1.0))), alpha);

  CriticLoss out;
  out.d_loss = add(mean(sub(scores_fake, scores_real)), penalty);
  out.wasserstein = mean(scores_real).item() - mean(scores_fake).item();
  return out;
}

}  // namespace detail

struct GanLosses {
  Tensor d_loss;
  Tensor g_loss;
  double wasserstein = 0.0;  // mean D(real) - mean D(fake)
};

/// Critic and generator objectives. epsilon_draws holds one U(0,1) draw per
/// sample.
inline GanLosses wgan_gp_loss(const Discriminator& d, const Tensor& x_real,
                              const Tensor& a_real, const Tensor& x_fake,
                              const Tensor& a_fake, double alpha,
                              std::span<const double> epsilon_draws, Rng& rng,
                              bool training = false) {
  const int b = x_real.shape()[0];
  if (static_cast<int>(epsilon_draws.size()) != b)
    throw diff::ShapeError("need one epsilon draw per sample");
  auto critic = detail::critic_loss(d, x_real, a_real, x_fake.detach(), a_fake.detach(),
                                    alpha, epsilon_draws, rng, training);
  GanLosses out;
  out.d_loss = critic.d_loss;
  out.wasserstein = critic.wasserstein;
  out.g_loss = neg(mean(d.forward(x_fake, a_fake, training, rng)));
  return out;
}

// ---------------------------------------------------------------------------
// Model bundle, prediction, training loop
// ---------------------------------------------------------------------------

struct MolganModel {
  MolganConfig config;
  Generator gen;
  Discriminator dis;
  Rng rng;

  MolganModel(MolganConfig cfg, Rng init_rng)
      : config(std::move(cfg)),
        gen(config, init_rng),
        dis(config, init_rng),
        rng(init_rng) {}
};

inline MolganModel make_molgan(const MolganConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  return MolganModel(cfg, Rng(seed));
}

/// Samples latents, relaxes, discretizes and defeaturizes to molecules.
/// Total: an untrained generator yields (mostly invalid) molecules, never
/// an error.
inline std::vector<chem::Molecule> predict_generator(const MolganModel& model, int count,
                                                     Rng& rng) {
  diff::NoGradGuard ng;
  const auto& spec = model.config.spec;
  std::vector<chem::Molecule> out;
  out.reserve(static_cast<std::size_t>(count));
  const int chunk = 256;
  for (int done = 0; done < count; done += chunk) {
    const int b = std::min(chunk, count - done);
    Tensor z = sample_latent(b, model.config.latent_dim, rng);
    auto [xt, at] = generate(model.gen, z, model.config.sampling_mode,
                             model.config.temperature, rng, false);
    for (int i = 0; i < b; ++i) {
      graphs::GraphTensors g(spec.max_atoms, spec.node_types, spec.edge_types);
      const auto xn = static_cast<std::int64_t>(g.x.size());
      const auto an = static_cast<std::int64_t>(g.a.size());
      std::copy(xt.data().begin() + i * xn, xt.data().begin() + (i + 1) * xn, g.x.begin());
      std::copy(at.data().begin() + i * an, at.data().begin() + (i + 1) * an, g.a.begin());
      out.push_back(graphs::defeaturize(graphs::one_hot_argmax(g, spec), spec));
    }
  }
  return out;
}

struct StepRecord {
  long long step = 0;
  double d_loss = 0.0;
  double g_loss = 0.0;  // NaN when no generator update happened this step
  double wasserstein = 0.0;
  double learning_rate = 0.0;
};

struct TrainState {
  optim::Adam::State adam_g{0, {}, {}};
  optim::Adam::State adam_d{0, {}, {}};
  long long step = 0;
  double gen_accumulator = 0.0;
};

struct TrainOptions {
  long long max_steps = 0;  // when > 0, overrides epochs
  int epochs = 1;
  long long eval_interval = 0;
  int eval_count = 1000;
  std::optional<double> early_stop_uniqueness;  // percent; opt-in
  long long checkpoint_interval = 0;
  std::function<void(const TrainState&, long long)> checkpoint_hook;
  std::optional<optim::ExponentialDecaySchedule> lr_schedule;
};

struct TrainResult {
  std::vector<StepRecord> history;
  long long generator_updates = 0;
  bool early_stopped = false;
  TrainState state;
};

inline TrainResult train(MolganModel& model, const std::vector<graphs::GraphTensors>& data,
                         const TrainOptions& opt, const TrainState* resume = nullptr) {
  if (data.empty()) throw optim::EmptyDatasetError("molgan training set is empty");
  const auto& cfg = model.config;
  const auto& spec = cfg.spec;
  const int n = static_cast<int>(data.size());
  const int bs = std::min(cfg.batch_size, n);

  optim::Adam adam_g(model.gen.params(),
                     {cfg.learning_rate, 0.9, 0.999, 1e-8, cfg.weight_decay});
  optim::Adam adam_d(model.dis.params(),
                     {cfg.learning_rate, 0.9, 0.999, 1e-8, cfg.weight_decay});

  TrainResult result;
  result.state.gen_accumulator = 0.0;
  long long start_step = 0;
  if (resume) {
    adam_g.restore(resume->adam_g);
    adam_d.restore(resume->adam_d);
    start_step = resume->step;
    result.state.gen_accumulator = resume->gen_accumulator;
  }

  const long long steps_per_epoch = std::max<long long>(1, (n + bs - 1) / bs);
  const long long total_steps =
      opt.max_steps > 0 ? opt.max_steps : steps_per_epoch * opt.epochs;

  std::vector<int> order(static_cast<std::size_t>(n));
  int cursor = n;  // forces a shuffle on first use

  auto next_batch = [&]() {
    std::vector<int> idx;
    idx.reserve(static_cast<std::size_t>(bs));
    for (int i = 0; i < bs; ++i) {
      if (cursor >= n) {
        for (int k = 0; k < n; ++k) order[static_cast<std::size_t>(k)] = k;
        for (int k = n - 1; k > 0; --k)
          std::swap(order[static_cast<std::size_t>(k)],
                    order[static_cast<std::size_t>(model.rng.below(static_cast<std::uint64_t>(k + 1)))]);
        cursor = 0;
      }
      idx.push_back(order[static_cast<std::size_t>(cursor++)]);
    }
    const auto xn = static_cast<std::size_t>(spec.max_atoms) * spec.node_types;
    const auto an = static_cast<std::size_t>(spec.max_atoms) * spec.max_atoms * spec.edge_types;
    std::vector<double> xb, ab;
    xb.reserve(idx.size() * xn);
    ab.reserve(idx.size() * an);
    for (int i : idx) {
      const auto& g = data[static_cast<std::size_t>(i)];
      xb.insert(xb.end(), g.x.begin(), g.x.end());
      ab.insert(ab.end(), g.a.begin(), g.a.end());
    }
    return std::make_pair(
        Tensor::from({bs, spec.max_atoms, spec.node_types}, std::move(xb)),
        Tensor::from({bs, spec.max_atoms, spec.max_atoms, spec.edge_types}, std::move(ab)));
  };

  for (long long step = start_step + 1; step <= start_step + total_steps; ++step) {
    if (opt.lr_schedule) {
      const double lr = opt.lr_schedule->rate(step - 1);
      adam_g.set_learning_rate(lr);
      adam_d.set_learning_rate(lr);
    }

    auto [x_real, a_real] = next_batch();
    std::vector<double> eps(static_cast<std::size_t>(bs));
    for (auto& e : eps) e = model.rng.uniform();

    // Critic step.
    Tensor z = sample_latent(bs, cfg.latent_dim, model.rng);
    auto [x_fake, a_fake] =
        generate(model.gen, z, cfg.sampling_mode, cfg.temperature, model.rng, true);
    auto critic =
        detail::critic_loss(model.dis, x_real, a_real, x_fake.detach(), a_fake.detach(),
                            cfg.penalty_coefficient, eps, model.rng, true);

    StepRecord rec;
    rec.step = step;
    rec.d_loss = critic.d_loss.item();
    rec.g_loss = std::numeric_limits<double>::quiet_NaN();
    rec.wasserstein = critic.wasserstein;
    rec.learning_rate = adam_d.learning_rate();
    if (!std::isfinite(rec.d_loss))
      throw optim::NaNLossError(
          "non-finite discriminator loss at step " + std::to_string(step) +
          " (wasserstein estimate " + std::to_string(rec.wasserstein) + ")");
    adam_d.step(diff::backward(critic.d_loss));

    // Generator step on schedule: one update per 1/ratio critic steps.
    result.state.gen_accumulator += cfg.generator_steps_ratio;
    if (result.state.gen_accumulator >= 1.0 - 1e-12) {
      result.state.gen_accumulator -= 1.0;
      Tensor z2 = sample_latent(bs, cfg.latent_dim, model.rng);
      auto [xg, ag] =
          generate(model.gen, z2, cfg.sampling_mode, cfg.temperature, model.rng, true);
      Tensor g_loss = neg(mean(model.dis.forward(xg, ag, true, model.rng)));
      rec.g_loss = g_loss.item();
      if (!std::isfinite(rec.g_loss))
        throw optim::NaNLossError("non-finite generator loss at step " +
                                  std::to_string(step));
      adam_g.step(diff::backward(g_loss));
      ++result.generator_updates;
    }

    result.history.push_back(rec);
    result.state.step = step;
    result.state.adam_g = adam_g.state();
    result.state.adam_d = adam_d.state();

    if (opt.eval_interval > 0 && step % opt.eval_interval == 0 &&
        opt.early_stop_uniqueness) {
      Rng eval_rng = model.rng.split(static_cast<std::uint64_t>(step));
      auto mols = predict_generator(model, opt.eval_count, eval_rng);
      const double uni = metrics::uniqueness(mols);
      if (uni < *opt.early_stop_uniqueness) {
        result.early_stopped = true;
        break;
      }
    }
    if (opt.checkpoint_interval > 0 && step % opt.checkpoint_interval == 0 &&
        opt.checkpoint_hook)
      opt.checkpoint_hook(result.state, step);
  }
  return result;
}

}  // namespace molgen::molgan
