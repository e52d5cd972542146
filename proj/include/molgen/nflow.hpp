#pragma once

#include <cmath>
#include <memory>
#include <numbers>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "molgen/autodiff.hpp"
#include "molgen/chem.hpp"
#include "molgen/optim.hpp"
#include "molgen/rng.hpp"
#include "molgen/selfies.hpp"

namespace molgen::nflow {

using diff::Tensor;

class NonFiniteInputError : public std::runtime_error {
 public:
  explicit NonFiniteInputError(const std::string& what) : std::runtime_error(what) {}
};

/// Adds uniform [0,1) noise per dimension so integer token indices can be
/// modeled by a continuous density.
inline std::vector<double> dequantize(std::span<const int> indices, Rng& rng) {
  std::vector<double> out;
  out.reserve(indices.size());
  for (int v : indices) out.push_back(static_cast<double>(v) + rng.uniform());
  return out;
}

/// Floors back to integers, clamped to the vocabulary range [0, vocab_size).
inline std::vector<int> quantize(std::span<const double> values, int vocab_size) {
  std::vector<int> out;
  out.reserve(values.size());
  for (double v : values) {
    int k = static_cast<int>(std::floor(v));
    k = std::max(0, std::min(vocab_size - 1, k));
    out.push_back(k);
  }
  return out;
}

/// Value plus per-sample log|det J| of the applied map (shape {batch}).
struct FlowResult {
  Tensor value;
  Tensor logdet;
};

class FlowLayer {
 public:
  virtual ~FlowLayer() = default;
  virtual FlowResult forward(const Tensor& z) = 0;  // latent -> data
  virtual FlowResult inverse(const Tensor& x) = 0;  // data -> latent
  virtual std::vector<std::pair<std::string, Tensor>> named_params() = 0;
  virtual std::string kind() const = 0;
  /// Data-dependent initialization hook; sees activations in the
  /// normalizing direction. Default: nothing to initialize.
  virtual void init_from_data(const Tensor&) {}
};

// ---------------------------------------------------------------------------
// ActNorm: per-dimension affine, initialized from the first batch so its
// output starts at zero mean and unit variance. The scale is stored in log
// space, which keeps it nonzero and makes the log-det a plain sum.
// ---------------------------------------------------------------------------

class ActNorm : public FlowLayer {
 public:
  explicit ActNorm(int dim)
      : log_scale_(Tensor::zeros({dim}).set_requires_grad(true)),
        bias_(Tensor::zeros({dim}).set_requires_grad(true)) {}

  bool initialized() const { return initialized_; }

  void init_from_data(const Tensor& x) override {
    if (initialized_) return;
    initialized_ = true;
    const int dim = x.shape()[1];
    const int b = x.shape()[0];
    auto ls = log_scale_.mutable_data();
    auto bs = bias_.mutable_data();
    for (int d = 0; d < dim; ++d) {
      double mean = 0.0;
      for (int i = 0; i < b; ++i) mean += x.data()[static_cast<std::size_t>(i * dim + d)];
      mean /= b;
      double var = 0.0;
      for (int i = 0; i < b; ++i) {
        const double c = x.data()[static_cast<std::size_t>(i * dim + d)] - mean;
        var += c * c;
      }
      var = std::max(var / b, 1e-6);  // variance floor for constant dimensions
      const double std_dev = std::sqrt(var);
      ls[static_cast<std::size_t>(d)] = -std::log(std_dev);
      bs[static_cast<std::size_t>(d)] = -mean / std_dev;
    }
  }

  FlowResult inverse(const Tensor& x) override {
    Tensor z = add(mul(x, exp(log_scale_)), bias_);
    Tensor ld = broadcast_to(reshape(sum(log_scale_), {1}), {x.shape()[0]});
    return {z, ld};
  }

  FlowResult forward(const Tensor& z) override {
    Tensor x = mul(sub(z, bias_), exp(neg(log_scale_)));
    Tensor ld = broadcast_to(reshape(sum(neg(log_scale_)), {1}), {z.shape()[0]});
    return {x, ld};
  }

  std::vector<std::pair<std::string, Tensor>> named_params() override {
    return {{"log_scale", log_scale_}, {"bias", bias_}};
  }

  std::string kind() const override { return "actnorm"; }

  void mark_initialized(bool v) { initialized_ = v; }

 private:
  Tensor log_scale_, bias_;
  bool initialized_ = false;
};

// ---------------------------------------------------------------------------
// Masked affine coupling: masked-in dimensions pass through and condition a
// scale/shift of the rest. The scale net output goes through tanh times a
// learnable bound so exp(s) stays well conditioned.
// ---------------------------------------------------------------------------

class MaskedAffineFlow : public FlowLayer {
 public:
  MaskedAffineFlow(int dim, int hidden, std::vector<double> mask, Rng& init_rng)
      : dim_(dim), mask_(Tensor::from({dim}, std::move(mask))) {
    auto xavier = [&](int rows, int cols) {
      std::vector<double> w(static_cast<std::size_t>(rows) * cols);
      const double s = std::sqrt(1.0 / rows);
      for (auto& v : w) v = init_rng.normal() * s;
      return Tensor::from({rows, cols}, std::move(w)).set_requires_grad(true);
    };
    w1s_ = xavier(dim, hidden);
    b1s_ = Tensor::zeros({hidden}).set_requires_grad(true);
    w2s_ = Tensor::zeros({hidden, dim}).set_requires_grad(true);  // identity at start
    b2s_ = Tensor::zeros({dim}).set_requires_grad(true);
    w1t_ = xavier(dim, hidden);
    b1t_ = Tensor::zeros({hidden}).set_requires_grad(true);
    w2t_ = Tensor::zeros({hidden, dim}).set_requires_grad(true);
    b2t_ = Tensor::zeros({dim}).set_requires_grad(true);
    s_bound_ = Tensor::full({dim}, 1.0).set_requires_grad(true);
  }

  const Tensor& mask() const { return mask_; }

  FlowResult forward(const Tensor& z) override {
    auto [s, t] = nets(mul(z, mask_));
    Tensor out_part = add(mul(z, exp(s)), t);
    Tensor x = add(mul(mask_, z), mul(inv_mask(), out_part));
    return {x, sum(mul(s, inv_mask()), 1)};
  }

  FlowResult inverse(const Tensor& x) override {
    auto [s, t] = nets(mul(x, mask_));
    Tensor in_part = mul(sub(x, t), exp(neg(s)));
    Tensor z = add(mul(mask_, x), mul(inv_mask(), in_part));
    return {z, neg(sum(mul(s, inv_mask()), 1))};
  }

  std::vector<std::pair<std::string, Tensor>> named_params() override {
    return {{"w1s", w1s_}, {"b1s", b1s_}, {"w2s", w2s_}, {"b2s", b2s_},
            {"w1t", w1t_}, {"b1t", b1t_}, {"w2t", w2t_}, {"b2t", b2t_},
            {"s_bound", s_bound_}};
  }

  std::string kind() const override { return "masked_affine"; }

 private:
  Tensor inv_mask() const { return sub(1.0, mask_); }

  std::pair<Tensor, Tensor> nets(const Tensor& xm) const {
    Tensor hs = tanh(add(matmul(xm, w1s_), b1s_));
    Tensor s = mul(tanh(add(matmul(hs, w2s_), b2s_)), s_bound_);
    Tensor ht = tanh(add(matmul(xm, w1t_), b1t_));
    Tensor t = add(matmul(ht, w2t_), b2t_);
    return {s, t};
  }

  int dim_;
  Tensor mask_;
  Tensor w1s_, b1s_, w2s_, b2s_, w1t_, b1t_, w2t_, b2t_, s_bound_;
};

// ---------------------------------------------------------------------------
// Linear flow x = zW + b. Invertibility (|det W| above a floor) is enforced
// on every pass by the LU factorization backing logabsdet / mat_inverse.
// ---------------------------------------------------------------------------

class LinearFlow : public FlowLayer {
 public:
  LinearFlow(int dim, Rng& init_rng) : dim_(dim) {
    std::vector<double> w(static_cast<std::size_t>(dim) * dim, 0.0);
    for (int i = 0; i < dim; ++i)
      for (int j = 0; j < dim; ++j)
        w[static_cast<std::size_t>(i * dim + j)] =
            (i == j ? 1.0 : 0.0) + 0.01 * init_rng.normal();
    w_ = Tensor::from({dim, dim}, std::move(w)).set_requires_grad(true);
    b_ = Tensor::zeros({dim}).set_requires_grad(true);
  }

  FlowResult forward(const Tensor& z) override {
    Tensor x = add(matmul(z, w_), b_);
    Tensor ld = broadcast_to(reshape(logabsdet(w_), {1}), {z.shape()[0]});
    return {x, ld};
  }

  FlowResult inverse(const Tensor& x) override {
    Tensor z = matmul(sub(x, b_), mat_inverse(w_));
    Tensor ld = broadcast_to(reshape(neg(logabsdet(w_)), {1}), {x.shape()[0]});
    return {z, ld};
  }

  std::vector<std::pair<std::string, Tensor>> named_params() override {
    return {{"w", w_}, {"b", b_}};
  }

  std::string kind() const override { return "linear"; }

 private:
  int dim_;
  Tensor w_, b_;
};

// ---------------------------------------------------------------------------
// Flow model: layer stack (generative order) over a diagonal standard
// normal base.
// ---------------------------------------------------------------------------

struct FlowConfig {
  int dim = 0;
  int coupling_layers = 2;
  int hidden = 64;
  bool use_actnorm = true;
  bool use_linear = false;

  void validate() const {
    if (dim < 1) throw std::invalid_argument("flow dim must be >= 1");
    if (coupling_layers < 0) throw std::invalid_argument("coupling_layers must be >= 0");
    if (hidden < 1) throw std::invalid_argument("hidden must be >= 1");
  }
};

class FlowModel {
 public:
  FlowModel(int dim, std::vector<std::shared_ptr<FlowLayer>> layers)
      : dim_(dim), layers_(std::move(layers)) {}

  int dim() const { return dim_; }
  const std::vector<std::shared_ptr<FlowLayer>>& layers() const { return layers_; }

  std::vector<std::pair<std::string, Tensor>> named_params() const {
    std::vector<std::pair<std::string, Tensor>> out;
    for (std::size_t i = 0; i < layers_.size(); ++i)
      for (auto& [name, t] : layers_[i]->named_params())
        out.emplace_back("layer" + std::to_string(i) + "." + name, t);
    return out;
  }

  std::vector<Tensor> params() const {
    std::vector<Tensor> out;
    for (auto& [_, t] : named_params()) out.push_back(t);
    return out;
  }

  /// Per-sample log density of rows of x (shape {batch, dim}).
  Tensor log_prob_batch(const Tensor& x) const {
    if (x.rank() != 2 || x.shape()[1] != dim_)
      throw diff::ShapeError("log_prob expects shape (batch, " + std::to_string(dim_) + ")");
    if (!diff::all_finite(x)) throw NonFiniteInputError("log_prob input is not finite");
    Tensor z = x;
    Tensor ld = Tensor::zeros({x.shape()[0]});
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) {
      FlowResult r = (*it)->inverse(z);
      z = r.value;
      ld = add(ld, r.logdet);
    }
    return add(add(mul(sum(square(z), 1), -0.5), ld),
               -0.5 * dim_ * std::log(2.0 * std::numbers::pi));
  }

  double log_prob(std::span<const double> x) const {
    diff::NoGradGuard ng;
    Tensor t = Tensor::from({1, dim_}, std::vector<double>(x.begin(), x.end()));
    return log_prob_batch(t).data()[0];
  }

  /// Draws count samples from the base and pushes them through the stack.
  Tensor sample(int count, Rng& rng) const {
    diff::NoGradGuard ng;
    Tensor z = diff::randn({count, dim_}, rng);
    for (const auto& layer : layers_) z = layer->forward(z).value;
    return z;
  }

  /// Runs ActNorm-style data-dependent init along the normalizing direction.
  void init_from_data(const Tensor& first_batch) {
    diff::NoGradGuard ng;
    Tensor z = first_batch;
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) {
      (*it)->init_from_data(z);
      z = (*it)->inverse(z).value;
    }
  }

 private:
  int dim_;
  std::vector<std::shared_ptr<FlowLayer>> layers_;
};

/// Stack per the default experimental setup: coupling layers with
/// alternating masks, then ActNorm nearest the data; an optional linear
/// layer sits nearest the latent.
inline FlowModel build_flow_model(const FlowConfig& cfg, Rng& init_rng) {
  cfg.validate();
  std::vector<std::shared_ptr<FlowLayer>> layers;
  if (cfg.use_linear) layers.push_back(std::make_shared<LinearFlow>(cfg.dim, init_rng));
  for (int l = 0; l < cfg.coupling_layers; ++l) {
    std::vector<double> mask(static_cast<std::size_t>(cfg.dim));
    for (int d = 0; d < cfg.dim; ++d)
      mask[static_cast<std::size_t>(d)] = (d + l) % 2 == 0 ? 1.0 : 0.0;
    layers.push_back(std::make_shared<MaskedAffineFlow>(cfg.dim, cfg.hidden,
                                                        std::move(mask), init_rng));
  }
  if (cfg.use_actnorm) layers.push_back(std::make_shared<ActNorm>(cfg.dim));
  return FlowModel(cfg.dim, std::move(layers));
}

// ---------------------------------------------------------------------------
// Training on dequantized token indices
// ---------------------------------------------------------------------------

struct TokenDataset {
  std::vector<std::vector<int>> rows;  // padded index sequences
  int fixed_length = 0;
  int skipped = 0;  // molecules that could not be encoded
};

inline TokenDataset build_token_dataset(const std::vector<chem::Molecule>& mols,
                                        int min_fixed_length = 0) {
  TokenDataset ds;
  std::vector<selfies::TokenSequence> seqs;
  int longest = min_fixed_length;
  for (const auto& m : mols) {
    try {
      auto seq = selfies::encode(m);
      longest = std::max(longest, static_cast<int>(seq.tokens.size()));
      seqs.push_back(std::move(seq));
    } catch (const selfies::UnencodableError&) {
      ++ds.skipped;
    }
  }
  ds.fixed_length = longest;
  for (auto& s : seqs)
    ds.rows.push_back(selfies::tokens_to_indices(selfies::pad_to(std::move(s), longest)));
  return ds;
}

struct FlowTrainOptions {
  int epochs = 100;
  int batch_size = 1024;
  double learning_rate = 1e-4;
  double weight_decay = 1e-4;
};

struct FlowTrainResult {
  std::vector<double> epoch_nll;
  optim::Adam::State adam{0, {}, {}};
};

namespace detail {

// Shared minibatch NLL loop; fill_row materializes one training row.
inline FlowTrainResult train_loop(
    FlowModel& model, int n, int dim,
    const std::function<void(int row, Rng&, std::vector<double>&)>& fill_row,
    const FlowTrainOptions& opt, Rng& rng, const optim::Adam::State* resume) {
  if (n == 0) throw optim::EmptyDatasetError("no training sequences");
  optim::Adam adam(model.params(),
                   {opt.learning_rate, 0.9, 0.999, 1e-8, opt.weight_decay});
  if (resume) adam.restore(*resume);
  FlowTrainResult result;

  const int bs = std::min(opt.batch_size, n);
  std::vector<int> order(static_cast<std::size_t>(n));
  bool first_batch = true;

  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
    for (int i = n - 1; i > 0; --i)
      std::swap(order[static_cast<std::size_t>(i)],
                order[static_cast<std::size_t>(rng.below(static_cast<std::uint64_t>(i + 1)))]);

    double nll_sum = 0.0;
    long long nll_count = 0;
    for (int at = 0; at < n; at += bs) {
      const int b = std::min(bs, n - at);
      std::vector<double> batch;
      batch.reserve(static_cast<std::size_t>(b) * dim);
      for (int i = 0; i < b; ++i)
        fill_row(order[static_cast<std::size_t>(at + i)], rng, batch);
      Tensor x = Tensor::from({b, dim}, std::move(batch));
      if (first_batch) {
        model.init_from_data(x);
        first_batch = false;
      }
      Tensor loss = neg(mean(model.log_prob_batch(x)));
      const double lv = loss.item();
      if (!std::isfinite(lv))
        throw optim::NaNLossError("non-finite NLL at epoch " + std::to_string(epoch) +
                                  ", batch offset " + std::to_string(at));
      auto grads = diff::backward(loss);
      adam.step(grads);
      nll_sum += lv * b;
      nll_count += b;
    }
    result.epoch_nll.push_back(nll_sum / static_cast<double>(nll_count));
  }
  result.adam = adam.state();
  return result;
}

}  // namespace detail

/// Maximum-likelihood training on freshly dequantized token rows.
inline FlowTrainResult train_flow(FlowModel& model, const TokenDataset& data,
                                  const FlowTrainOptions& opt, Rng& rng,
                                  const optim::Adam::State* resume = nullptr) {
  return detail::train_loop(
      model, static_cast<int>(data.rows.size()), data.fixed_length,
      [&data](int row, Rng& r, std::vector<double>& out) {
        auto v = dequantize(data.rows[static_cast<std::size_t>(row)], r);
        out.insert(out.end(), v.begin(), v.end());
      },
      opt, rng, resume);
}

/// Maximum-likelihood training on raw real-valued rows.
inline FlowTrainResult train_flow_vectors(FlowModel& model,
                                          const std::vector<std::vector<double>>& rows,
                                          const FlowTrainOptions& opt, Rng& rng,
                                          const optim::Adam::State* resume = nullptr) {
  const int dim = rows.empty() ? 0 : static_cast<int>(rows[0].size());
  return detail::train_loop(
      model, static_cast<int>(rows.size()), dim,
      [&rows](int row, Rng&, std::vector<double>& out) {
        const auto& v = rows[static_cast<std::size_t>(row)];
        out.insert(out.end(), v.begin(), v.end());
      },
      opt, rng, resume);
}

/// Sample, floor-quantize, map to tokens, decode. By decoder construction
/// every output is a connected, valence-correct molecule.
inline std::vector<chem::Molecule> generate_molecules(const FlowModel& model, int count,
                                                      Rng& rng) {
  std::vector<chem::Molecule> out;
  out.reserve(static_cast<std::size_t>(count));
  const int v = selfies::vocabulary_size();
  Tensor samples = model.sample(count, rng);
  const int dim = model.dim();
  for (int i = 0; i < count; ++i) {
    std::span<const double> row(samples.data().data() + static_cast<std::int64_t>(i) * dim,
                                static_cast<std::size_t>(dim));
    auto indices = quantize(row, v);
    out.push_back(selfies::decode(selfies::indices_to_tokens(indices)));
  }
  return out;
}

}  // namespace molgen::nflow
