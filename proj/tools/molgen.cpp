// Command-line front end: train / generate / evaluate / inspect-checkpoint
// over JSON run configs. Exit codes: 0 success, 2 config error, 3 runtime.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "molgen/molgen.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace molgen;

namespace {

class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

int log_level() {
  const char* env = std::getenv("MOLGEN_LOG");
  if (!env) return 1;
  const std::string v = env;
  if (v == "quiet") return 0;
  if (v == "debug") return 2;
  return 1;
}

void log_info(const std::string& msg) {
  if (log_level() >= 1) std::cerr << "[molgen] " << msg << "\n";
}

// ---------------------------------------------------------------------------
// Run configuration
// ---------------------------------------------------------------------------

struct RunConfig {
  std::string model;  // "molgan" | "nflow"
  std::string dataset_path;
  std::string dataset_column;
  std::uint64_t seed = 1;
  int epochs = 30;
  long long max_steps = 0;
  std::string out_dir = "run_out";
  long long checkpoint_interval = 0;
  long long eval_interval = 0;
  double early_stop_uniqueness = -1.0;  // percent; negative disables
  int subsample = 0;

  molgan::MolganConfig molgan_cfg;
  std::optional<optim::ExponentialDecaySchedule> lr_schedule;

  struct FlowSection {
    int coupling_layers = 2;
    int hidden = 64;
    int batch_size = 1024;
    double learning_rate = 1e-4;
    double weight_decay = 1e-4;
    bool use_actnorm = true;
    bool use_linear = false;
    int fixed_length = 0;  // 0: longest training sequence
  } flow;

  json echo;  // fully resolved config for output embedding
};

void reject_unknown_keys(const json& j, const std::set<std::string>& allowed,
                         const std::string& where) {
  for (auto& [key, _] : j.items())
    if (!allowed.count(key))
      throw ConfigError("unknown key '" + key + "' in " + where);
}

template <class T>
T get_or(const json& j, const std::string& key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("field '" + key + "' has the wrong type");
  }
}

RunConfig parse_run_config(const json& j) {
  RunConfig rc;
  reject_unknown_keys(j, {"model", "dataset", "seed", "epochs", "max_steps", "out_dir",
                          "checkpoint_interval", "eval_interval", "early_stop_uniqueness",
                          "subsample", "molgan", "nflow", "lr_schedule"},
                      "config root");
  if (!j.contains("model")) throw ConfigError("missing required field 'model'");
  rc.model = j.at("model").get<std::string>();
  if (rc.model != "molgan" && rc.model != "nflow")
    throw ConfigError("field 'model' must be 'molgan' or 'nflow', got '" + rc.model + "'");

  if (!j.contains("dataset")) throw ConfigError("missing required field 'dataset'");
  const json& ds = j.at("dataset");
  reject_unknown_keys(ds, {"path", "column"}, "dataset");
  if (!ds.contains("path")) throw ConfigError("missing required field 'dataset.path'");
  rc.dataset_path = ds.at("path").get<std::string>();
  rc.dataset_column = get_or<std::string>(ds, "column", "");

  rc.seed = get_or<std::uint64_t>(j, "seed", 1);
  rc.epochs = get_or<int>(j, "epochs", 30);
  rc.max_steps = get_or<long long>(j, "max_steps", 0);
  rc.out_dir = get_or<std::string>(j, "out_dir", "run_out");
  rc.checkpoint_interval = get_or<long long>(j, "checkpoint_interval", 0);
  rc.eval_interval = get_or<long long>(j, "eval_interval", 0);
  rc.early_stop_uniqueness = get_or<double>(j, "early_stop_uniqueness", -1.0);
  rc.subsample = get_or<int>(j, "subsample", 0);
  if (rc.epochs < 1 && rc.max_steps <= 0)
    throw ConfigError("field 'epochs' must be >= 1 (or set max_steps)");

  if (j.contains("molgan")) {
    const json& m = j.at("molgan");
    reject_unknown_keys(m, {"max_atoms", "node_types", "edge_types", "latent_dim",
                            "generator_hidden", "discriminator_conv", "aggregation_width",
                            "discriminator_mlp", "penalty_coefficient", "sampling_mode",
                            "temperature", "generator_steps_ratio", "batch_size",
                            "dropout", "learning_rate", "weight_decay"},
                        "molgan");
    auto& c = rc.molgan_cfg;
    c.spec.max_atoms = get_or<int>(m, "max_atoms", c.spec.max_atoms);
    c.spec.node_types = get_or<int>(m, "node_types", c.spec.node_types);
    c.spec.edge_types = get_or<int>(m, "edge_types", c.spec.edge_types);
    c.latent_dim = get_or<int>(m, "latent_dim", c.latent_dim);
    c.generator_hidden = get_or<std::vector<int>>(m, "generator_hidden", c.generator_hidden);
    c.discriminator_conv =
        get_or<std::vector<int>>(m, "discriminator_conv", c.discriminator_conv);
    c.aggregation_width = get_or<int>(m, "aggregation_width", c.aggregation_width);
    c.discriminator_mlp =
        get_or<std::vector<int>>(m, "discriminator_mlp", c.discriminator_mlp);
    c.penalty_coefficient = get_or<double>(m, "penalty_coefficient", c.penalty_coefficient);
    if (m.contains("sampling_mode")) {
      try {
        c.sampling_mode = molgan::sampling_mode_from(m.at("sampling_mode").get<std::string>());
      } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("field 'molgan.sampling_mode': ") + e.what());
      }
    }
    c.temperature = get_or<double>(m, "temperature", c.temperature);
    c.generator_steps_ratio =
        get_or<double>(m, "generator_steps_ratio", c.generator_steps_ratio);
    c.batch_size = get_or<int>(m, "batch_size", c.batch_size);
    c.dropout = get_or<double>(m, "dropout", c.dropout);
    c.learning_rate = get_or<double>(m, "learning_rate", c.learning_rate);
    c.weight_decay = get_or<double>(m, "weight_decay", c.weight_decay);
    try {
      c.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("molgan config: ") + e.what());
    }
  }

  if (j.contains("nflow")) {
    const json& f = j.at("nflow");
    reject_unknown_keys(f, {"coupling_layers", "hidden", "batch_size", "learning_rate",
                            "weight_decay", "use_actnorm", "use_linear", "fixed_length"},
                        "nflow");
    rc.flow.coupling_layers = get_or<int>(f, "coupling_layers", rc.flow.coupling_layers);
    rc.flow.hidden = get_or<int>(f, "hidden", rc.flow.hidden);
    rc.flow.batch_size = get_or<int>(f, "batch_size", rc.flow.batch_size);
    rc.flow.learning_rate = get_or<double>(f, "learning_rate", rc.flow.learning_rate);
    rc.flow.weight_decay = get_or<double>(f, "weight_decay", rc.flow.weight_decay);
    rc.flow.use_actnorm = get_or<bool>(f, "use_actnorm", rc.flow.use_actnorm);
    rc.flow.use_linear = get_or<bool>(f, "use_linear", rc.flow.use_linear);
    rc.flow.fixed_length = get_or<int>(f, "fixed_length", rc.flow.fixed_length);
  }

  if (j.contains("lr_schedule")) {
    const json& s = j.at("lr_schedule");
    reject_unknown_keys(s, {"initial", "decay", "steps"}, "lr_schedule");
    optim::ExponentialDecaySchedule sch;
    sch.initial_rate = get_or<double>(s, "initial", 0.001);
    sch.decay_rate = get_or<double>(s, "decay", 0.9);
    sch.decay_steps = get_or<long long>(s, "steps", 5000);
    if (sch.decay_rate <= 0.0 || sch.decay_rate > 1.0)
      throw ConfigError("field 'lr_schedule.decay' must be in (0, 1]");
    if (sch.decay_steps <= 0) throw ConfigError("field 'lr_schedule.steps' must be > 0");
    rc.lr_schedule = sch;
  }

  // Full resolved echo.
  rc.echo = json{{"model", rc.model},
                 {"dataset", {{"path", rc.dataset_path}, {"column", rc.dataset_column}}},
                 {"seed", rc.seed},
                 {"epochs", rc.epochs},
                 {"max_steps", rc.max_steps},
                 {"out_dir", rc.out_dir},
                 {"checkpoint_interval", rc.checkpoint_interval},
                 {"eval_interval", rc.eval_interval},
                 {"early_stop_uniqueness", rc.early_stop_uniqueness},
                 {"subsample", rc.subsample},
                 {"molgan", checkpoint::molgan_config_to_json(rc.molgan_cfg)},
                 {"nflow",
                  {{"coupling_layers", rc.flow.coupling_layers},
                   {"hidden", rc.flow.hidden},
                   {"batch_size", rc.flow.batch_size},
                   {"learning_rate", rc.flow.learning_rate},
                   {"weight_decay", rc.flow.weight_decay},
                   {"use_actnorm", rc.flow.use_actnorm},
                   {"use_linear", rc.flow.use_linear},
                   {"fixed_length", rc.flow.fixed_length}}}};
  if (rc.lr_schedule)
    rc.echo["lr_schedule"] = {{"initial", rc.lr_schedule->initial_rate},
                              {"decay", rc.lr_schedule->decay_rate},
                              {"steps", rc.lr_schedule->decay_steps}};
  return rc;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config parse error in '" + path + "': " + e.what());
  }
  return parse_run_config(j);
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

void write_header(std::ofstream& out, const std::string& digest, std::uint64_t seed) {
  out << "# config_digest=" << digest << "\n# seed=" << seed << "\n";
}

int cmd_train(const std::string& config_path, std::optional<std::uint64_t> seed_override,
              std::optional<std::string> out_override) {
  RunConfig rc = load_run_config(config_path);
  if (seed_override) {
    rc.seed = *seed_override;
    rc.echo["seed"] = rc.seed;
  }
  if (out_override) {
    rc.out_dir = *out_override;
    rc.echo["out_dir"] = rc.out_dir;
  }
  // The digest identifies the run configuration; output location is not
  // part of it so redirected reruns stay comparable.
  json digest_view = rc.echo;
  digest_view.erase("out_dir");
  const std::string dig = checkpoint::digest(digest_view);
  fs::create_directories(rc.out_dir);
  {
    std::ofstream echo_out(rc.out_dir + "/config_echo.json");
    json echo = rc.echo;
    echo["config_digest"] = dig;
    echo_out << echo.dump(2) << "\n";
  }

  data::MoleculeDataset ds = data::load_smiles_file(rc.dataset_path, rc.dataset_column);
  if (ds.dropped_rows > 0)
    log_info("dropped " + std::to_string(ds.dropped_rows) + " unparseable rows from " +
             rc.dataset_path);
  if (rc.subsample > 0) ds = data::subsample(ds, rc.subsample, rc.seed);

  if (rc.model == "molgan") {
    data::MoleculeDataset filtered = data::filter_for_molgan(ds, rc.molgan_cfg.spec);
    log_info("molgan training set: " + std::to_string(filtered.molecules.size()) +
             " molecules after filtering (from " + std::to_string(ds.molecules.size()) + ")");
    auto feats = data::featurize_all(filtered, rc.molgan_cfg.spec);

    molgan::MolganModel model = molgan::make_molgan(rc.molgan_cfg, rc.seed);
    molgan::TrainOptions opt;
    opt.epochs = rc.epochs;
    opt.max_steps = rc.max_steps;
    opt.eval_interval = rc.eval_interval;
    if (rc.early_stop_uniqueness >= 0.0)
      opt.early_stop_uniqueness = rc.early_stop_uniqueness;
    opt.checkpoint_interval = rc.checkpoint_interval;
    opt.lr_schedule = rc.lr_schedule;
    std::string ckpt_dir = rc.out_dir;
    opt.checkpoint_hook = [&model, ckpt_dir](const molgan::TrainState& st, long long step) {
      checkpoint::save_molgan(ckpt_dir + "/checkpoint_step" + std::to_string(step) + ".json",
                              model, st);
    };

    auto result = molgan::train(model, feats, opt);

    std::ofstream hist(rc.out_dir + "/history.csv");
    write_header(hist, dig, rc.seed);
    hist << "step,d_loss,g_loss,wasserstein,learning_rate\n";
    hist.precision(17);
    for (const auto& r : result.history) {
      hist << r.step << "," << r.d_loss << ",";
      if (std::isfinite(r.g_loss)) hist << r.g_loss;
      hist << "," << r.wasserstein << "," << r.learning_rate << "\n";
    }
    checkpoint::save_molgan(rc.out_dir + "/checkpoint.json", model, result.state);
    log_info("trained molgan for " + std::to_string(result.history.size()) + " steps (" +
             std::to_string(result.generator_updates) + " generator updates)" +
             (result.early_stopped ? ", early-stopped on uniqueness" : ""));
  } else {
    nflow::TokenDataset tokens;
    {
      nflow::TokenDataset built = nflow::build_token_dataset(ds.molecules, rc.flow.fixed_length);
      tokens = std::move(built);
    }
    if (tokens.skipped > 0)
      log_info("skipped " + std::to_string(tokens.skipped) +
               " molecules outside the token vocabulary");
    if (rc.flow.fixed_length > 0 && tokens.fixed_length > rc.flow.fixed_length)
      throw ConfigError("nflow.fixed_length " + std::to_string(rc.flow.fixed_length) +
                        " is shorter than the longest training sequence (" +
                        std::to_string(tokens.fixed_length) + ")");
    nflow::FlowConfig fc;
    fc.dim = tokens.fixed_length;
    fc.coupling_layers = rc.flow.coupling_layers;
    fc.hidden = rc.flow.hidden;
    fc.use_actnorm = rc.flow.use_actnorm;
    fc.use_linear = rc.flow.use_linear;
    Rng rng(rc.seed);
    nflow::FlowModel model = nflow::build_flow_model(fc, rng);
    nflow::FlowTrainOptions opt;
    opt.epochs = rc.epochs;
    opt.batch_size = rc.flow.batch_size;
    opt.learning_rate = rc.flow.learning_rate;
    opt.weight_decay = rc.flow.weight_decay;
    auto result = nflow::train_flow(model, tokens, opt, rng);

    std::ofstream hist(rc.out_dir + "/history.csv");
    write_header(hist, dig, rc.seed);
    hist << "epoch,nll\n";
    hist.precision(17);
    for (std::size_t e = 0; e < result.epoch_nll.size(); ++e)
      hist << e << "," << result.epoch_nll[e] << "\n";
    checkpoint::save_flow(rc.out_dir + "/checkpoint.json", model, fc, rng, &result.adam);
    log_info("trained nflow for " + std::to_string(result.epoch_nll.size()) +
             " epochs, final NLL " +
             (result.epoch_nll.empty() ? std::string("n/a")
                                       : std::to_string(result.epoch_nll.back())));
  }
  return 0;
}

// ---------------------------------------------------------------------------
// generate
// ---------------------------------------------------------------------------

struct GeneratedBatch {
  std::vector<chem::Molecule> molecules;
  std::string config_digest;
};

GeneratedBatch generate_from_checkpoint(const std::string& ckpt_path, int count,
                                        std::uint64_t seed) {
  std::ifstream probe(ckpt_path);
  if (!probe) throw ConfigError("cannot open checkpoint '" + ckpt_path + "'");
  json j;
  probe >> j;
  const std::string kind = j.at("kind").get<std::string>();
  GeneratedBatch out;
  Rng rng(seed);
  if (kind == "molgan") {
    auto ck = checkpoint::load_molgan_json(j);
    out.molecules = molgan::predict_generator(ck.model, count, rng);
    out.config_digest = ck.config_digest;
  } else if (kind == "nflow") {
    auto ck = checkpoint::load_flow(ckpt_path);
    out.molecules = nflow::generate_molecules(ck.model, count, rng);
    out.config_digest = ck.config_digest;
  } else {
    throw ConfigError("unknown checkpoint kind '" + kind + "'");
  }
  return out;
}

std::string graph_dump(const chem::Molecule& m) {
  std::string s = "atoms=";
  for (int i = 0; i < m.atom_count(); ++i) s += chem::symbol(m.atom(i));
  s += " bonds=";
  for (const auto& b : m.bonds())
    s += std::to_string(b.a) + "-" + std::to_string(b.b) + "x" + std::to_string(b.order) + ";";
  return s;
}

int cmd_generate(const std::string& ckpt, int count, std::uint64_t seed,
                 const std::string& out_path) {
  auto batch = generate_from_checkpoint(ckpt, count, seed);
  std::ofstream out(out_path);
  if (!out) throw std::runtime_error("cannot write '" + out_path + "'");
  out << "# config_digest=" << batch.config_digest << " seed=" << seed
      << " count=" << count << "\n";
  int invalid = 0;
  for (const auto& m : batch.molecules) {
    if (metrics::is_valid(m)) {
      out << chem::write_smiles(m) << "\n";
    } else {
      ++invalid;
      const char* reason = m.atom_count() == 0          ? "empty"
                           : !chem::check_valence(m)    ? "valence"
                                                        : "disconnected";
      out << "INVALID: reason=" << reason << " smiles=" << chem::write_smiles(m) << " "
          << graph_dump(m) << "\n";
    }
  }
  log_info("wrote " + std::to_string(batch.molecules.size()) + " molecules (" +
           std::to_string(invalid) + " invalid) to " + out_path);
  return 0;
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

struct ParsedGenerated {
  std::vector<chem::Molecule> molecules;  // invalid entries become empty molecules
};

ParsedGenerated read_generated_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open generated file '" + path + "'");
  ParsedGenerated out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (line.rfind("INVALID:", 0) == 0) {
      out.molecules.emplace_back();  // counts against validity
      continue;
    }
    try {
      out.molecules.push_back(chem::parse_smiles(line));
    } catch (const chem::ParseError&) {
      out.molecules.emplace_back();
    }
  }
  return out;
}

void write_reports(const std::string& out_dir,
                   const std::vector<metrics::GenerationReport>& reports,
                   const std::string& digest_str) {
  fs::create_directories(out_dir);
  std::ofstream txt(out_dir + "/report.txt");
  std::ofstream kv(out_dir + "/report.kv");
  txt.precision(6);
  kv.precision(17);

  kv << "report_version=1\n";
  kv << "config_digest=" << digest_str << "\n";
  kv << "denominator_convention=valid_only\n";
  kv << "n_seeds=" << reports.size() << "\n";

  txt << "Generation report (config_digest=" << digest_str << ")\n";
  txt << "Uni/Nov denominators count valid molecules only.\n\n";
  txt << "# label     n_gen   n_valid   Val%      Uni%      Nov%\n";

  auto emit = [&](const std::string& label, const metrics::GenerationReport& r) {
    txt << label;
    for (std::size_t i = label.size(); i < 12; ++i) txt << ' ';
    txt << r.n_generated << "\t" << r.n_valid << "\t" << r.validity << "\t"
        << r.uniqueness << "\t" << r.novelty;
    if (r.degenerate) txt << "\t(degenerate: no valid molecules)";
    txt << "\n";
  };

  metrics::GenerationReport mean;
  for (std::size_t i = 0; i < reports.size(); ++i) {
    const auto& r = reports[i];
    const std::string p = "seed." + std::to_string(i) + ".";
    kv << p << "seed=" << r.seed << "\n";
    kv << p << "n_generated=" << r.n_generated << "\n";
    kv << p << "n_valid=" << r.n_valid << "\n";
    kv << p << "validity=" << r.validity << "\n";
    kv << p << "uniqueness=" << r.uniqueness << "\n";
    kv << p << "novelty=" << r.novelty << "\n";
    kv << p << "degenerate=" << (r.degenerate ? 1 : 0) << "\n";
    emit("seed " + std::to_string(r.seed), r);
    mean.n_generated += r.n_generated;
    mean.n_valid += r.n_valid;
    mean.validity += r.validity;
    mean.uniqueness += r.uniqueness;
    mean.novelty += r.novelty;
  }
  const double k = static_cast<double>(reports.size());
  mean.validity /= k;
  mean.uniqueness /= k;
  mean.novelty /= k;
  kv << "mean.validity=" << mean.validity << "\n";
  kv << "mean.uniqueness=" << mean.uniqueness << "\n";
  kv << "mean.novelty=" << mean.novelty << "\n";
  if (reports.size() > 1) emit("mean", mean);
}

int cmd_evaluate(const std::vector<std::string>& generated_files,
                 const std::string& ckpt, const std::string& seeds_arg, int count,
                 const std::string& training_path, const std::string& training_column,
                 const std::string& out_dir) {
  data::MoleculeDataset training = data::load_smiles_file(training_path, training_column);

  std::vector<metrics::GenerationReport> reports;
  std::string digest_str = "none";

  if (!generated_files.empty()) {
    for (std::size_t i = 0; i < generated_files.size(); ++i) {
      auto parsed = read_generated_file(generated_files[i]);
      reports.push_back(metrics::evaluate(parsed.molecules, training.canonical_set,
                                          static_cast<std::uint64_t>(i),
                                          /*keep_records=*/false));
    }
    json src = json{{"generated_files", generated_files}, {"training", training_path}};
    digest_str = checkpoint::digest(src);
  } else {
    if (ckpt.empty())
      throw ConfigError("evaluate needs --generated files or --checkpoint with --seeds");
    std::vector<std::uint64_t> seeds;
    std::stringstream ss(seeds_arg.empty() ? std::string("1") : seeds_arg);
    std::string item;
    while (std::getline(ss, item, ','))
      if (!item.empty()) seeds.push_back(std::stoull(item));
    for (std::uint64_t s : seeds) {
      auto batch = generate_from_checkpoint(ckpt, count, s);
      digest_str = batch.config_digest;
      reports.push_back(
          metrics::evaluate(batch.molecules, training.canonical_set, s, false));
    }
  }
  write_reports(out_dir, reports, digest_str);
  log_info("wrote " + out_dir + "/report.txt and report.kv (" +
           std::to_string(reports.size()) + " seed row(s))");
  return 0;
}

// ---------------------------------------------------------------------------
// inspect-checkpoint
// ---------------------------------------------------------------------------

int cmd_inspect(const std::string& path) {
  auto s = checkpoint::inspect(path);
  std::cout << "kind: " << s.kind << "\n";
  std::cout << "format_version: " << s.format_version << "\n";
  std::cout << "config_digest: " << s.config_digest << "\n";
  std::cout << "rng: key=" << s.rng_key << " counter=" << s.rng_counter << "\n";
  std::cout << "config: " << s.config.dump() << "\n";
  std::cout << "tensors (" << s.tensors.size() << ", " << s.total_params
            << " parameters):\n";
  for (const auto& [name, shape] : s.tensors) {
    std::cout << "  " << name << " (";
    for (std::size_t i = 0; i < shape.size(); ++i)
      std::cout << (i ? "," : "") << shape[i];
    std::cout << ")\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"molgen: graph-GAN and normalizing-flow molecular generation"};
  app.require_subcommand(1);

  std::string config_path, ckpt, out_path = "generated.smi", out_dir = "eval_out";
  std::string training_path, training_column, seeds_arg;
  std::vector<std::string> generated_files;
  int count = 6400;
  std::uint64_t seed = 1;
  bool seed_set = false;
  std::string out_override;

  auto* train = app.add_subcommand("train", "train a model from a JSON config");
  train->add_option("--config", config_path, "run config (JSON)")->required();
  train->add_option("--seed", seed, "override the config seed")->trigger_on_parse()
      ->each([&](const std::string&) { seed_set = true; });
  train->add_option("--out", out_override, "override the config out_dir");

  auto* gen = app.add_subcommand("generate", "sample molecules from a checkpoint");
  gen->add_option("--checkpoint", ckpt, "checkpoint file")->required();
  gen->add_option("--count", count, "number of molecules (default 6400)");
  gen->add_option("--seed", seed, "sampling seed");
  gen->add_option("--out", out_path, "output SMILES file");

  auto* eval = app.add_subcommand("evaluate", "score generated molecules");
  eval->add_option("--generated", generated_files, "generated SMILES file (repeatable)");
  eval->add_option("--checkpoint", ckpt, "checkpoint to sample from");
  eval->add_option("--seeds", seeds_arg, "comma-separated seed list for --checkpoint mode");
  eval->add_option("--count", count, "molecules per seed (default 6400)");
  eval->add_option("--training", training_path, "training set for novelty")->required();
  eval->add_option("--column", training_column, "SMILES column if training set is CSV");
  eval->add_option("--out", out_dir, "report output directory");

  auto* inspect = app.add_subcommand("inspect-checkpoint", "print checkpoint summary");
  inspect->add_option("--checkpoint", ckpt, "checkpoint file")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (app.got_subcommand(train))
      return cmd_train(config_path,
                       seed_set ? std::optional<std::uint64_t>(seed) : std::nullopt,
                       out_override.empty() ? std::nullopt
                                            : std::optional<std::string>(out_override));
    if (app.got_subcommand(gen)) return cmd_generate(ckpt, count, seed, out_path);
    if (app.got_subcommand(eval))
      return cmd_evaluate(generated_files, ckpt, seeds_arg, count, training_path,
                          training_column, out_dir);
    if (app.got_subcommand(inspect)) return cmd_inspect(ckpt);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const data::FileNotFoundError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
