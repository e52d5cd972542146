#pragma once

#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "molgen/molgan.hpp"
#include "molgen/nflow.hpp"

namespace molgen::checkpoint {

using nlohmann::json;

constexpr int kFormatVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  explicit CheckpointError(const std::string& what) : std::runtime_error(what) {}
};

// FNV-1a over a canonical JSON dump; identifies the configuration in every
// output file a run produces.
inline std::string digest(const json& j) {
  const std::string s = j.dump();
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf);
}

namespace detail {

inline json tensor_to_json(const diff::Tensor& t) {
  json j;
  j["shape"] = t.shape();
  j["data"] = std::vector<double>(t.data().begin(), t.data().end());
  return j;
}

inline void tensor_from_json(const json& j, diff::Tensor& t) {
  const auto shape = j.at("shape").get<std::vector<int>>();
  if (shape != t.shape())
    throw CheckpointError("tensor shape mismatch while loading checkpoint");
  const auto data = j.at("data").get<std::vector<double>>();
  if (data.size() != static_cast<std::size_t>(t.size()))
    throw CheckpointError("tensor size mismatch while loading checkpoint");
  std::copy(data.begin(), data.end(), t.mutable_data().begin());
}

inline json adam_to_json(const optim::Adam::State& s) {
  return json{{"step", s.step}, {"m", s.m}, {"v", s.v}};
}

inline optim::Adam::State adam_from_json(const json& j) {
  optim::Adam::State s;
  s.step = j.at("step").get<long long>();
  s.m = j.at("m").get<std::vector<std::vector<double>>>();
  s.v = j.at("v").get<std::vector<std::vector<double>>>();
  return s;
}

inline json rng_to_json(const Rng& rng) {
  return json{{"key", rng.key()}, {"counter", rng.counter()}};
}

inline Rng rng_from_json(const json& j) {
  return Rng::from_state(j.at("key").get<std::uint64_t>(),
                         j.at("counter").get<std::uint64_t>());
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Config <-> JSON
// ---------------------------------------------------------------------------

inline json molgan_config_to_json(const molgan::MolganConfig& c) {
  return json{{"max_atoms", c.spec.max_atoms},
              {"node_types", c.spec.node_types},
              {"edge_types", c.spec.edge_types},
              {"latent_dim", c.latent_dim},
              {"generator_hidden", c.generator_hidden},
              {"discriminator_conv", c.discriminator_conv},
              {"aggregation_width", c.aggregation_width},
              {"discriminator_mlp", c.discriminator_mlp},
              {"penalty_coefficient", c.penalty_coefficient},
              {"sampling_mode", molgan::to_string(c.sampling_mode)},
              {"temperature", c.temperature},
              {"generator_steps_ratio", c.generator_steps_ratio},
              {"batch_size", c.batch_size},
              {"dropout", c.dropout},
              {"learning_rate", c.learning_rate},
              {"weight_decay", c.weight_decay}};
}

inline molgan::MolganConfig molgan_config_from_json(const json& j) {
  molgan::MolganConfig c;
  c.spec.max_atoms = j.at("max_atoms").get<int>();
  c.spec.node_types = j.at("node_types").get<int>();
  c.spec.edge_types = j.at("edge_types").get<int>();
  c.latent_dim = j.at("latent_dim").get<int>();
  c.generator_hidden = j.at("generator_hidden").get<std::vector<int>>();
  c.discriminator_conv = j.at("discriminator_conv").get<std::vector<int>>();
  c.aggregation_width = j.at("aggregation_width").get<int>();
  c.discriminator_mlp = j.at("discriminator_mlp").get<std::vector<int>>();
  c.penalty_coefficient = j.at("penalty_coefficient").get<double>();
  c.sampling_mode = molgan::sampling_mode_from(j.at("sampling_mode").get<std::string>());
  c.temperature = j.at("temperature").get<double>();
  c.generator_steps_ratio = j.at("generator_steps_ratio").get<double>();
  c.batch_size = j.at("batch_size").get<int>();
  c.dropout = j.at("dropout").get<double>();
  c.learning_rate = j.at("learning_rate").get<double>();
  c.weight_decay = j.at("weight_decay").get<double>();
  c.validate();
  return c;
}

inline json flow_config_to_json(const nflow::FlowConfig& c) {
  return json{{"dim", c.dim},
              {"coupling_layers", c.coupling_layers},
              {"hidden", c.hidden},
              {"use_actnorm", c.use_actnorm},
              {"use_linear", c.use_linear}};
}

inline nflow::FlowConfig flow_config_from_json(const json& j) {
  nflow::FlowConfig c;
  c.dim = j.at("dim").get<int>();
  c.coupling_layers = j.at("coupling_layers").get<int>();
  c.hidden = j.at("hidden").get<int>();
  c.use_actnorm = j.at("use_actnorm").get<bool>();
  c.use_linear = j.at("use_linear").get<bool>();
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// MolGAN checkpoints
// ---------------------------------------------------------------------------

inline json molgan_train_state_to_json(const molgan::TrainState& s) {
  return json{{"adam_g", detail::adam_to_json(s.adam_g)},
              {"adam_d", detail::adam_to_json(s.adam_d)},
              {"step", s.step},
              {"gen_accumulator", s.gen_accumulator}};
}

inline molgan::TrainState molgan_train_state_from_json(const json& j) {
  molgan::TrainState s;
  s.adam_g = detail::adam_from_json(j.at("adam_g"));
  s.adam_d = detail::adam_from_json(j.at("adam_d"));
  s.step = j.at("step").get<long long>();
  s.gen_accumulator = j.at("gen_accumulator").get<double>();
  return s;
}

inline void save_molgan(const std::string& path, const molgan::MolganModel& model,
                        const molgan::TrainState& state) {
  json j;
  j["format_version"] = kFormatVersion;
  j["kind"] = "molgan";
  j["config"] = molgan_config_to_json(model.config);
  j["config_digest"] = digest(j["config"]);
  j["rng"] = detail::rng_to_json(model.rng);
  j["train_state"] = molgan_train_state_to_json(state);
  json params;
  for (const auto& [name, t] : model.gen.named_params())
    params["gen." + name] = detail::tensor_to_json(t);
  for (const auto& [name, t] : model.dis.named_params())
    params["dis." + name] = detail::tensor_to_json(t);
  j["params"] = std::move(params);
  std::ofstream out(path);
  if (!out) throw CheckpointError("cannot write checkpoint '" + path + "'");
  out << j.dump() << "\n";
}

struct MolganCheckpoint {
  molgan::MolganModel model;
  molgan::TrainState state;
  std::string config_digest;
};

inline MolganCheckpoint load_molgan_json(const json& j) {
  if (j.at("format_version").get<int>() != kFormatVersion)
    throw CheckpointError("unsupported checkpoint format version");
  if (j.at("kind").get<std::string>() != "molgan")
    throw CheckpointError("checkpoint kind is not molgan");
  auto cfg = molgan_config_from_json(j.at("config"));
  molgan::MolganModel model = molgan::make_molgan(cfg, 0);
  const auto& params = j.at("params");
  for (auto [name, t] : model.gen.named_params())
    detail::tensor_from_json(params.at("gen." + name), t);
  for (auto [name, t] : model.dis.named_params())
    detail::tensor_from_json(params.at("dis." + name), t);
  model.rng = detail::rng_from_json(j.at("rng"));
  return {std::move(model), molgan_train_state_from_json(j.at("train_state")),
          j.at("config_digest").get<std::string>()};
}

inline MolganCheckpoint load_molgan(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw CheckpointError("cannot open checkpoint '" + path + "'");
  json j;
  in >> j;
  return load_molgan_json(j);
}

// ---------------------------------------------------------------------------
// Flow checkpoints
// ---------------------------------------------------------------------------

inline void save_flow(const std::string& path, const nflow::FlowModel& model,
                      const nflow::FlowConfig& cfg, const Rng& rng,
                      const optim::Adam::State* adam = nullptr) {
  json j;
  j["format_version"] = kFormatVersion;
  j["kind"] = "nflow";
  j["config"] = flow_config_to_json(cfg);
  j["config_digest"] = digest(j["config"]);
  j["rng"] = detail::rng_to_json(rng);
  json params;
  for (const auto& [name, t] : model.named_params())
    params[name] = detail::tensor_to_json(t);
  j["params"] = std::move(params);
  json flags = json::array();
  for (const auto& layer : model.layers()) {
    json f{{"kind", layer->kind()}};
    if (auto* an = dynamic_cast<nflow::ActNorm*>(layer.get()))
      f["initialized"] = an->initialized();
    flags.push_back(std::move(f));
  }
  j["layers"] = std::move(flags);
  if (adam) j["adam"] = detail::adam_to_json(*adam);
  std::ofstream out(path);
  if (!out) throw CheckpointError("cannot write checkpoint '" + path + "'");
  out << j.dump() << "\n";
}

struct FlowCheckpoint {
  nflow::FlowConfig config;
  nflow::FlowModel model;
  Rng rng;
  std::optional<optim::Adam::State> adam;
  std::string config_digest;
};

inline FlowCheckpoint load_flow(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw CheckpointError("cannot open checkpoint '" + path + "'");
  json j;
  in >> j;
  if (j.at("format_version").get<int>() != kFormatVersion)
    throw CheckpointError("unsupported checkpoint format version");
  if (j.at("kind").get<std::string>() != "nflow")
    throw CheckpointError("checkpoint kind is not nflow");
  auto cfg = flow_config_from_json(j.at("config"));
  Rng dummy(0);
  nflow::FlowModel model = nflow::build_flow_model(cfg, dummy);
  const auto& params = j.at("params");
  for (auto [name, t] : model.named_params())
    detail::tensor_from_json(params.at(name), t);
  const auto& flags = j.at("layers");
  const auto& layers = model.layers();
  for (std::size_t i = 0; i < layers.size() && i < flags.size(); ++i) {
    if (auto* an = dynamic_cast<nflow::ActNorm*>(layers[i].get()))
      an->mark_initialized(flags[i].value("initialized", false));
  }
  FlowCheckpoint out{cfg, std::move(model), detail::rng_from_json(j.at("rng")),
                     std::nullopt, j.at("config_digest").get<std::string>()};
  if (j.contains("adam")) out.adam = detail::adam_from_json(j.at("adam"));
  return out;
}

/// Peeks at a checkpoint without reconstructing the model.
struct CheckpointSummary {
  std::string kind;
  int format_version = 0;
  std::string config_digest;
  json config;
  std::vector<std::pair<std::string, std::vector<int>>> tensors;
  long long total_params = 0;
  std::uint64_t rng_key = 0, rng_counter = 0;
};

inline CheckpointSummary inspect(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw CheckpointError("cannot open checkpoint '" + path + "'");
  json j;
  in >> j;
  CheckpointSummary s;
  s.kind = j.at("kind").get<std::string>();
  s.format_version = j.at("format_version").get<int>();
  s.config_digest = j.at("config_digest").get<std::string>();
  s.config = j.at("config");
  for (auto& [name, tj] : j.at("params").items()) {
    auto shape = tj.at("shape").get<std::vector<int>>();
    long long n = 1;
    for (int d : shape) n *= d;
    s.total_params += n;
    s.tensors.emplace_back(name, std::move(shape));
  }
  s.rng_key = j.at("rng").at("key").get<std::uint64_t>();
  s.rng_counter = j.at("rng").at("counter").get<std::uint64_t>();
  return s;
}

}  // namespace molgen::checkpoint
