#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <set>

#include "fixtures.hpp"
#include "molgen/data.hpp"
#include "molgen/molgan.hpp"
#include "oracles.hpp"

using namespace molgen;
using diff::Tensor;
using molgan::MolganConfig;
using molgan::SamplingMode;

namespace {

MolganConfig tiny_config() {
  MolganConfig cfg;
  cfg.latent_dim = 8;
  cfg.generator_hidden = {16, 24};
  cfg.discriminator_conv = {12, 8};
  cfg.aggregation_width = 16;
  cfg.discriminator_mlp = {8};
  cfg.batch_size = 8;
  return cfg;
}

std::vector<graphs::GraphTensors> fixture_graphs(int count, std::uint64_t seed) {
  auto mols = fixtures::cnof_fixture(count, seed);
  std::vector<graphs::GraphTensors> out;
  graphs::GraphSpec spec;
  for (const auto& m : mols) out.push_back(graphs::featurize(m, spec));
  return out;
}

// Applies one atom permutation to a featurized graph.
graphs::GraphTensors permute_graph(const graphs::GraphTensors& g,
                                   const std::vector<int>& perm) {
  graphs::GraphTensors out(g.n, g.d, g.y);
  for (int i = 0; i < g.n; ++i)
    for (int k = 0; k < g.d; ++k)
      out.xat(perm[static_cast<std::size_t>(i)], k) = g.xat(i, k);
  for (int i = 0; i < g.n; ++i)
    for (int j = 0; j < g.n; ++j)
      for (int k = 0; k < g.y; ++k)
        out.aat(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(j)], k) =
            g.aat(i, j, k);
  return out;
}

}  // namespace

TEST_CASE("config validation catches bad fields") {
  auto cfg = tiny_config();
  cfg.generator_steps_ratio = 0.0;
  REQUIRE_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = tiny_config();
  cfg.temperature = -1.0;
  REQUIRE_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = tiny_config();
  cfg.penalty_coefficient = -0.1;
  REQUIRE_THROWS_AS(cfg.validate(), std::invalid_argument);
  REQUIRE_THROWS_AS(molgan::sampling_mode_from("bogus"), std::invalid_argument);
}

TEST_CASE("latent samples are standard normal") {
  Rng rng(1);
  auto z = molgan::sample_latent(1000, 32, rng);
  double sum = 0.0, sq = 0.0;
  for (double v : z.data()) {
    sum += v;
    sq += v * v;
  }
  const double n = static_cast<double>(z.size());
  REQUIRE(std::abs(sum / n) < 0.02);
  REQUIRE(std::abs(sq / n - 1.0) < 0.03);

  Rng r1(7), r2(7);
  auto a = molgan::sample_latent(4, 8, r1);
  auto b = molgan::sample_latent(4, 8, r2);
  REQUIRE(std::equal(a.data().begin(), a.data().end(), b.data().begin()));
}

TEST_CASE("generator output shapes and adjacency symmetry") {
  auto cfg = tiny_config();
  auto model = molgan::make_molgan(cfg, 3);
  Rng rng(4);
  auto z = molgan::sample_latent(5, cfg.latent_dim, rng);
  auto [xt, at] = molgan::generate(model.gen, z, SamplingMode::Gumbel, 1.0, rng);
  REQUIRE(xt.shape() == diff::Shape{5, 9, 5});
  REQUIRE(at.shape() == diff::Shape{5, 9, 9, 4});
  for (int b = 0; b < 5; ++b)
    for (int i = 0; i < 9; ++i)
      for (int j = 0; j < 9; ++j)
        for (int y = 0; y < 4; ++y) {
          const auto at_idx = [&](int ii, int jj) {
            return at.data()[static_cast<std::size_t>(((b * 9 + ii) * 9 + jj) * 4 + y)];
          };
          REQUIRE(at_idx(i, j) == Catch::Approx(at_idx(j, i)).margin(1e-12));
        }
  // rows are distributions
  for (int r = 0; r < 5 * 9; ++r) {
    double s = 0.0;
    for (int k = 0; k < 5; ++k) s += xt.data()[static_cast<std::size_t>(r * 5 + k)];
    REQUIRE(s == Catch::Approx(1.0).margin(1e-9));
  }
}

TEST_CASE("softmax mode on zero logits is uniform") {
  auto zero_logits = Tensor::zeros({2, 3, 5});
  auto sm = softmax(zero_logits, 2);
  for (double v : sm.data()) REQUIRE(v == Catch::Approx(0.2).margin(1e-12));
}

TEST_CASE("gumbel relaxation at tiny temperature is one-hot at the perturbed argmax") {
  auto cfg = tiny_config();
  auto model = molgan::make_molgan(cfg, 5);
  Rng r1(11), r2(11);
  auto z = molgan::sample_latent(3, cfg.latent_dim, r1);
  auto z_copy = molgan::sample_latent(3, cfg.latent_dim, r2);
  // identical rng state: reproduce logits and noise, check the hard limit
  auto [soft_x, soft_a] = molgan::generate(model.gen, z, SamplingMode::Gumbel, 1e-6, r1);
  auto [logits_x, logits_a] = model.gen.forward(z_copy, false, r2);
  auto noise_x = diff::gumbel_noise(logits_x.shape(), r2);
  auto perturbed = add(logits_x, noise_x);
  for (int row = 0; row < 3 * 9; ++row) {
    int argmax = 0;
    for (int k = 1; k < 5; ++k)
      if (perturbed.data()[static_cast<std::size_t>(row * 5 + k)] >
          perturbed.data()[static_cast<std::size_t>(row * 5 + argmax)])
        argmax = k;
    for (int k = 0; k < 5; ++k) {
      const double v = soft_x.data()[static_cast<std::size_t>(row * 5 + k)];
      REQUIRE(v == Catch::Approx(k == argmax ? 1.0 : 0.0).margin(1e-9));
    }
  }
}

TEST_CASE("gumbel draw frequencies follow the softmax distribution") {
  const std::vector<double> logits{0.5, -0.3, 1.2, 0.0};
  std::vector<double> probs(4);
  double denom = 0.0;
  for (int k = 0; k < 4; ++k) denom += std::exp(logits[static_cast<std::size_t>(k)]);
  for (int k = 0; k < 4; ++k) probs[static_cast<std::size_t>(k)] =
      std::exp(logits[static_cast<std::size_t>(k)]) / denom;

  Rng rng(12);
  std::array<int, 4> counts{};
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    int best = 0;
    double best_v = -1e300;
    for (int k = 0; k < 4; ++k) {
      const double v = logits[static_cast<std::size_t>(k)] + rng.gumbel();
      if (v > best_v) {
        best_v = v;
        best = k;
      }
    }
    ++counts[static_cast<std::size_t>(best)];
  }
  for (int k = 0; k < 4; ++k)
    REQUIRE(std::abs(counts[static_cast<std::size_t>(k)] / static_cast<double>(n) -
                     probs[static_cast<std::size_t>(k)]) < 0.02);
}

TEST_CASE("straight-through output is hard with soft gradients") {
  auto cfg = tiny_config();
  cfg.sampling_mode = SamplingMode::StraightThrough;
  auto model = molgan::make_molgan(cfg, 6);
  Rng rng(13);
  auto z = molgan::sample_latent(2, cfg.latent_dim, rng);
  auto [xt, at] = molgan::generate(model.gen, z, SamplingMode::StraightThrough, 1.0, rng);
  for (double v : xt.data()) REQUIRE((v == 0.0 || v == 1.0));
  // gradients flow to generator parameters through the soft path
  auto loss = sum(mul(xt, xt));
  auto grads = diff::grad(loss, model.gen.params());
  bool any_nonzero = false;
  for (const auto& g : grads)
    for (double v : g.data())
      if (v != 0.0) any_nonzero = true;
  REQUIRE(any_nonzero);
}

TEST_CASE("discriminator scores are permutation invariant") {
  auto cfg = tiny_config();
  auto model = molgan::make_molgan(cfg, 7);
  Rng rng(14);
  auto graphs_fixture = fixture_graphs(20, 15);
  for (int trial = 0; trial < 200; ++trial) {
    const auto& g = graphs_fixture[static_cast<std::size_t>(
        rng.below(graphs_fixture.size()))];
    auto perm = oracle::random_permutation(g.n, rng);
    auto pg = permute_graph(g, perm);
    const double s1 = molgan::discriminate(model.dis, g);
    const double s2 = molgan::discriminate(model.dis, pg);
    REQUIRE(std::abs(s1 - s2) < 1e-9);
  }
}

TEST_CASE("two featurizations of the same molecule score identically") {
  auto cfg = tiny_config();
  auto model = molgan::make_molgan(cfg, 8);
  auto m = chem::parse_smiles("CC(=O)N");
  graphs::GraphSpec spec;
  auto g1 = graphs::featurize(m, spec);
  Rng rng(16);
  auto perm = oracle::random_permutation(m.atom_count(), rng);
  auto m2 = oracle::permute_atoms(m, perm);
  auto g2 = graphs::featurize(m2, spec);
  REQUIRE(std::abs(molgan::discriminate(model.dis, g1) -
                   molgan::discriminate(model.dis, g2)) < 1e-9);
}

TEST_CASE("the all-PAD graph gets a finite score") {
  auto cfg = tiny_config();
  auto model = molgan::make_molgan(cfg, 9);
  graphs::GraphSpec spec;
  graphs::GraphTensors g(spec.max_atoms, spec.node_types, spec.edge_types);
  for (int i = 0; i < g.n; ++i) g.xat(i, spec.pad_index()) = 1.0;
  for (int i = 0; i < g.n; ++i)
    for (int j = 0; j < g.n; ++j) g.aat(i, j, 0) = 1.0;
  REQUIRE(std::isfinite(molgan::discriminate(model.dis, g)));
}

TEST_CASE("a constant discriminator earns exactly the unit penalty") {
  auto cfg = tiny_config();
  cfg.penalty_coefficient = 10.0;
  auto model = molgan::make_molgan(cfg, 10);
  // zero every parameter: the score is the final bias, a constant
  for (auto& t : model.dis.params())
    for (auto& v : t.mutable_data()) v = 0.0;

  auto batch = fixture_graphs(4, 17);
  std::vector<double> xb, ab;
  for (int i = 0; i < 4; ++i) {
    xb.insert(xb.end(), batch[static_cast<std::size_t>(i)].x.begin(),
              batch[static_cast<std::size_t>(i)].x.end());
    ab.insert(ab.end(), batch[static_cast<std::size_t>(i)].a.begin(),
              batch[static_cast<std::size_t>(i)].a.end());
  }
  auto xr = Tensor::from({4, 9, 5}, xb);
  auto ar = Tensor::from({4, 9, 9, 4}, ab);
  Rng rng(18);
  auto z = molgan::sample_latent(4, cfg.latent_dim, rng);
  auto [xf, af] = molgan::generate(model.gen, z, cfg.sampling_mode, 1.0, rng);
  std::vector<double> eps{0.3, 0.6, 0.1, 0.9};
  auto losses = molgan::wgan_gp_loss(model.dis, xr, ar, xf, af, 10.0, eps, rng);
  REQUIRE(losses.d_loss.item() == Catch::Approx(10.0).epsilon(1e-4));
  REQUIRE(losses.wasserstein == 0.0);
}

TEST_CASE("epsilon one reproduces the real sample exactly") {
  Rng rng(19);
  auto real = diff::randn({3, 2, 2}, rng);
  auto fake = diff::randn({3, 2, 2}, rng);
  std::vector<double> eps{1.0, 1.0, 1.0};
  auto xh = molgan::detail::interpolate(real, fake, eps);
  REQUIRE(std::equal(xh.data().begin(), xh.data().end(), real.data().begin()));
  std::vector<double> eps0{0.0, 0.0, 0.0};
  auto xh0 = molgan::detail::interpolate(real, fake, eps0);
  REQUIRE(std::equal(xh0.data().begin(), xh0.data().end(), fake.data().begin()));
}

TEST_CASE("critic loss gradient matches finite differences on a small model") {
  auto cfg = tiny_config();
  cfg.spec.max_atoms = 4;
  cfg.discriminator_conv = {6};
  cfg.aggregation_width = 6;
  cfg.discriminator_mlp = {4};
  cfg.batch_size = 3;
  auto model = molgan::make_molgan(cfg, 20);

  auto mols = fixtures::cnof_fixture(3, 21, 4);
  std::vector<double> xb, ab;
  graphs::GraphSpec spec = cfg.spec;
  for (const auto& m : mols) {
    auto g = graphs::featurize(m, spec);
    xb.insert(xb.end(), g.x.begin(), g.x.end());
    ab.insert(ab.end(), g.a.begin(), g.a.end());
  }
  auto xr = Tensor::from({3, 4, 5}, xb);
  auto ar = Tensor::from({3, 4, 4, 4}, ab);
  Rng zr(22);
  auto z = molgan::sample_latent(3, cfg.latent_dim, zr);
  Rng gen_rng(23);
  auto [xf, af] = molgan::generate(model.gen, z, SamplingMode::Softmax, 1.0, gen_rng);
  auto xfc = xf.detach();
  auto afc = af.detach();
  std::vector<double> eps{0.25, 0.5, 0.75};

  auto make_loss = [&]() {
    Rng r(1);  // dropout unused (0.0), rng inert
    return molgan::detail::critic_loss(model.dis, xr, ar, xfc, afc, 10.0, eps, r, false)
        .d_loss;
  };
  auto params = model.dis.params();
  auto analytic = diff::grad(make_loss(), params);
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto eval = [&]() { return make_loss().item(); };
    auto fd = oracle::finite_diff(eval, params[pi], 1e-5);
    INFO("param " << pi);
    REQUIRE(oracle::relative_error(analytic[pi].data(), fd) < 1e-4);
  }
}

TEST_CASE("train schedules exactly one generator update per five critic steps") {
  auto cfg = tiny_config();
  auto model = molgan::make_molgan(cfg, 24);
  auto data = fixture_graphs(20, 25);
  molgan::TrainOptions opt;
  opt.max_steps = 100;
  auto result = molgan::train(model, data, opt);
  REQUIRE(result.history.size() == 100);
  REQUIRE(result.generator_updates == 20);
}

TEST_CASE("training histories are bitwise identical across reruns") {
  auto data = fixture_graphs(20, 26);
  auto run = [&]() {
    auto model = molgan::make_molgan(tiny_config(), 27);
    molgan::TrainOptions opt;
    opt.max_steps = 12;
    return molgan::train(model, data, opt);
  };
  auto a = run(), b = run();
  REQUIRE(a.history.size() == b.history.size());
  for (std::size_t i = 0; i < a.history.size(); ++i) {
    REQUIRE(a.history[i].d_loss == b.history[i].d_loss);
    REQUIRE(a.history[i].wasserstein == b.history[i].wasserstein);
  }
}

TEST_CASE("NaN input data aborts with a diagnostic error") {
  auto cfg = tiny_config();
  auto model = molgan::make_molgan(cfg, 28);
  auto data = fixture_graphs(8, 29);
  data[0].x[0] = std::nan("");
  molgan::TrainOptions opt;
  opt.max_steps = 5;
  REQUIRE_THROWS_AS(molgan::train(model, data, opt), optim::NaNLossError);
}

TEST_CASE("empty dataset is rejected") {
  auto model = molgan::make_molgan(tiny_config(), 30);
  REQUIRE_THROWS_AS(molgan::train(model, {}, {}), optim::EmptyDatasetError);
}

TEST_CASE("predict_generator is total and deterministic") {
  auto cfg = tiny_config();
  auto model = molgan::make_molgan(cfg, 31);
  Rng r1(5), r2(5);
  auto a = molgan::predict_generator(model, 10, r1);
  auto b = molgan::predict_generator(model, 10, r2);
  REQUIRE(a.size() == 10);
  REQUIRE(b.size() == 10);
  for (std::size_t i = 0; i < a.size(); ++i) REQUIRE(a[i] == b[i]);
  // untrained outputs are molecules (possibly invalid), never errors
  for (const auto& m : a) REQUIRE(m.atom_count() >= 0);
}

TEST_CASE("early stopping triggers on low uniqueness") {
  auto cfg = tiny_config();
  auto model = molgan::make_molgan(cfg, 32);
  auto data = fixture_graphs(16, 33);
  molgan::TrainOptions opt;
  opt.max_steps = 40;
  opt.eval_interval = 10;
  opt.eval_count = 64;
  opt.early_stop_uniqueness = 101.0;  // impossible bar, stops at first eval
  auto result = molgan::train(model, data, opt);
  REQUIRE(result.early_stopped);
  REQUIRE(result.history.size() == 10);
}
