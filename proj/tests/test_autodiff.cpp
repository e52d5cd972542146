#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <functional>

#include "molgen/autodiff.hpp"
#include "oracles.hpp"

using namespace molgen;
using diff::Tensor;

namespace {

Tensor rand_tensor(diff::Shape shape, Rng& rng, double lo = -2.0, double hi = 2.0) {
  std::vector<double> data(static_cast<std::size_t>(diff::numel(shape)));
  for (auto& v : data) v = lo + (hi - lo) * rng.uniform();
  return Tensor::from(std::move(shape), std::move(data)).set_requires_grad(true);
}

using Builder = std::function<Tensor(const std::vector<Tensor>&)>;

// Checks d(sum(build(inputs) * W))/d(input_i) against central differences.
void gradcheck(const Builder& build, std::vector<Tensor> inputs, double tol = 1e-6,
               double h = 1e-6) {
  Tensor probe = build(inputs);
  Rng wr(999);
  std::vector<double> w(static_cast<std::size_t>(probe.size()));
  for (auto& v : w) v = wr.normal();
  Tensor weights = Tensor::from(probe.shape(), std::move(w));
  auto make_loss = [&]() { return sum(mul(build(inputs), weights)); };

  auto analytic = diff::grad(make_loss(), inputs);
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    auto eval = [&]() { return make_loss().item(); };
    auto fd = oracle::finite_diff(eval, inputs[i], h);
    INFO("input " << i);
    CHECK(oracle::relative_error(analytic[i].data(), fd) < tol);
  }
}

}  // namespace

TEST_CASE("forward values match closed forms") {
  REQUIRE(tanh(Tensor::scalar(0.0)).item() == 0.0);
  REQUIRE(sigmoid(Tensor::scalar(0.0)).item() == 0.5);
  auto sm = softmax(Tensor::from({4}, {0.0, 0.0, 0.0, 0.0}), 0);
  for (double v : sm.data()) REQUIRE(v == Catch::Approx(0.25).epsilon(1e-12));
  REQUIRE(exp(Tensor::scalar(1.0)).item() == Catch::Approx(std::exp(1.0)));
  REQUIRE(diff::log(Tensor::scalar(std::exp(2.0))).item() == Catch::Approx(2.0));
}

TEST_CASE("matmul values match the reference triple loop") {
  Rng rng(1);
  for (int trial = 0; trial < 10; ++trial) {
    auto a = rand_tensor({2, 3}, rng);
    auto b = rand_tensor({3, 4}, rng);
    auto c = matmul(a, b);
    auto ref = oracle::matmul_reference(a.data(), b.data(), 2, 3, 4);
    for (std::size_t i = 0; i < ref.size(); ++i)
      REQUIRE(c.data()[i] == Catch::Approx(ref[i]).margin(1e-12));
  }
}

TEST_CASE("matmul shape mismatch raises ShapeError") {
  Rng rng(2);
  auto a = rand_tensor({2, 3}, rng);
  auto b = rand_tensor({4, 2}, rng);
  REQUIRE_THROWS_AS(matmul(a, b), diff::ShapeError);
  REQUIRE_THROWS_AS(add(rand_tensor({2, 3}, rng), rand_tensor({2, 4}, rng)),
                    diff::ShapeError);
}

TEST_CASE("gradients of elementwise ops match finite differences") {
  Rng rng(10);
  for (int trial = 0; trial < 8; ++trial) {
    gradcheck([](const auto& in) { return add(in[0], in[1]); },
              {rand_tensor({3, 4}, rng), rand_tensor({3, 4}, rng)});
    gradcheck([](const auto& in) { return sub(in[0], in[1]); },
              {rand_tensor({3, 4}, rng), rand_tensor({3, 4}, rng)});
    gradcheck([](const auto& in) { return mul(in[0], in[1]); },
              {rand_tensor({3, 4}, rng), rand_tensor({3, 4}, rng)});
    gradcheck([](const auto& in) { return div(in[0], in[1]); },
              {rand_tensor({3, 4}, rng), rand_tensor({3, 4}, rng, 0.5, 2.0)});
    gradcheck([](const auto& in) { return neg(in[0]); }, {rand_tensor({5}, rng)});
    gradcheck([](const auto& in) { return tanh(in[0]); }, {rand_tensor({3, 4}, rng)});
    gradcheck([](const auto& in) { return sigmoid(in[0]); }, {rand_tensor({3, 4}, rng)});
    gradcheck([](const auto& in) { return exp(in[0]); }, {rand_tensor({3, 4}, rng)});
    gradcheck([](const auto& in) { return diff::log(in[0]); },
              {rand_tensor({3, 4}, rng, 0.2, 3.0)});
    gradcheck([](const auto& in) { return sqrt(in[0]); },
              {rand_tensor({3, 4}, rng, 0.2, 3.0)});
    gradcheck([](const auto& in) { return pow(in[0], 2.5); },
              {rand_tensor({3, 4}, rng, 0.2, 3.0)});
  }
}

TEST_CASE("gradients of broadcasting arithmetic") {
  Rng rng(11);
  gradcheck([](const auto& in) { return add(in[0], in[1]); },
            {rand_tensor({3, 4}, rng), rand_tensor({4}, rng)});
  gradcheck([](const auto& in) { return mul(in[0], in[1]); },
            {rand_tensor({2, 3, 4}, rng), rand_tensor({3, 1}, rng)});
  gradcheck([](const auto& in) { return diff::broadcast_to(in[0], {5, 2, 3}); },
            {rand_tensor({2, 3}, rng)});
  gradcheck([](const auto& in) { return diff::sum_to(in[0], {3}); },
            {rand_tensor({4, 2, 3}, rng)});
}

TEST_CASE("gradients of matrix products and structure ops") {
  Rng rng(12);
  for (int trial = 0; trial < 5; ++trial) {
    gradcheck([](const auto& in) { return matmul(in[0], in[1]); },
              {rand_tensor({4, 3}, rng), rand_tensor({3, 5}, rng)});
    gradcheck([](const auto& in) { return bmm(in[0], in[1]); },
              {rand_tensor({2, 3, 4}, rng), rand_tensor({2, 4, 2}, rng)});
    gradcheck([](const auto& in) { return transpose(in[0]); },
              {rand_tensor({3, 5}, rng)});
    gradcheck([](const auto& in) { return swap_axes(in[0], 1, 2); },
              {rand_tensor({2, 3, 4}, rng)});
    gradcheck([](const auto& in) { return reshape(in[0], {6, 2}); },
              {rand_tensor({3, 4}, rng)});
    gradcheck([](const auto& in) { return diff::concat({in[0], in[1]}, 1); },
              {rand_tensor({2, 3}, rng), rand_tensor({2, 2}, rng)});
    gradcheck([](const auto& in) { return slice(in[0], 1, 1, 3); },
              {rand_tensor({2, 4, 2}, rng)});
  }
}

TEST_CASE("gradients of reductions, softmax and norms") {
  Rng rng(13);
  for (int trial = 0; trial < 5; ++trial) {
    gradcheck([](const auto& in) { return sum(in[0]); }, {rand_tensor({3, 4}, rng)});
    gradcheck([](const auto& in) { return sum(in[0], 1); }, {rand_tensor({3, 4}, rng)});
    gradcheck([](const auto& in) { return sum(in[0], 0, true); },
              {rand_tensor({3, 4}, rng)});
    gradcheck([](const auto& in) { return mean(in[0]); }, {rand_tensor({3, 4}, rng)});
    gradcheck([](const auto& in) { return mean(in[0], 1); }, {rand_tensor({3, 4}, rng)});
    gradcheck([](const auto& in) { return softmax(in[0], 1); },
              {rand_tensor({3, 5}, rng)});
    gradcheck([](const auto& in) { return l2_norm(in[0]); },
              {rand_tensor({3, 4}, rng, 0.5, 2.0)});
  }
}

TEST_CASE("dropout gradient uses the drawn mask") {
  Rng rng(14);
  auto x = rand_tensor({4, 4}, rng);
  gradcheck(
      [](const auto& in) {
        Rng drop_rng(77);  // identical mask for every re-evaluation
        return dropout(in[0], 0.5, true, drop_rng);
      },
      {x});
  // not training: identity, same node
  Rng r2(1);
  auto y = dropout(x, 0.5, false, r2);
  REQUIRE(y.node() == x.node());
}

TEST_CASE("fan-out accumulates gradients") {
  auto x = Tensor::scalar(3.0).set_requires_grad(true);
  auto y = add(x, x);
  auto g = diff::grad(y, {x});
  REQUIRE(g[0].item() == 2.0);
}

TEST_CASE("product rule at a point") {
  auto x = Tensor::scalar(3.0).set_requires_grad(true);
  auto y = mul(x, x);
  auto g = diff::grad(y, {x});
  REQUIRE(g[0].item() == 6.0);
}

TEST_CASE("backward refuses non-scalar losses") {
  Rng rng(5);
  auto x = rand_tensor({2, 2}, rng);
  REQUIRE_THROWS_AS(diff::backward(x), diff::NonScalarLossError);
}

TEST_CASE("backward is deterministic") {
  Rng rng(15);
  auto a = rand_tensor({4, 4}, rng);
  auto b = rand_tensor({4, 4}, rng);
  auto loss = [&]() { return sum(mul(tanh(matmul(a, b)), sigmoid(a))); };
  auto g1 = diff::grad(loss(), {a, b});
  auto g2 = diff::grad(loss(), {a, b});
  for (int i = 0; i < 2; ++i) {
    REQUIRE(std::equal(g1[static_cast<std::size_t>(i)].data().begin(),
                       g1[static_cast<std::size_t>(i)].data().end(),
                       g2[static_cast<std::size_t>(i)].data().begin()));
  }
}

// ---------------------------------------------------------------------------
// Second order
// ---------------------------------------------------------------------------

TEST_CASE("second-order chain rule on x^3") {
  auto x = Tensor::scalar(2.0).set_requires_grad(true);
  auto y = mul(mul(x, x), x);
  auto g = diff::grad(y, {x}, /*create_graph=*/true);
  REQUIRE(g[0].item() == Catch::Approx(12.0).epsilon(1e-12));
  auto z = mul(g[0], g[0]);  // (3x^2)^2 = 9x^4, d/dx = 36x^3 = 288 at x=2
  auto gg = diff::grad(z, {x});
  REQUIRE(gg[0].item() == Catch::Approx(288.0).epsilon(1e-12));
}

TEST_CASE("tanh second derivative vanishes at zero") {
  auto x = Tensor::scalar(0.0).set_requires_grad(true);
  auto y = tanh(x);
  auto g = diff::grad(y, {x}, true);
  auto gg = diff::grad(g[0], {x});
  REQUIRE(gg[0].item() == Catch::Approx(0.0).margin(1e-15));
}

TEST_CASE("second derivatives match finite differences of first gradients") {
  Rng rng(16);
  auto w = rand_tensor({3, 3}, rng);
  auto x = rand_tensor({2, 3}, rng);
  // f = sum(tanh(x W)); compare d/dw of ||d f/d x||^2 against FD.
  auto norm_sq = [&]() {
    auto f = sum(tanh(matmul(x, w)));
    auto gx = diff::grad(f, {x}, true)[0];
    return sum(square(gx));
  };
  auto analytic = diff::grad(norm_sq(), {w});
  auto eval = [&]() { return norm_sq().item(); };
  auto fd = oracle::finite_diff(eval, w, 1e-5);
  REQUIRE(oracle::relative_error(analytic[0].data(), fd) < 1e-5);
}

TEST_CASE("dropout refuses second-order differentiation") {
  Rng rng(17);
  auto x = rand_tensor({3, 3}, rng);
  Rng drop_rng(3);
  auto y = sum(dropout(x, 0.3, true, drop_rng));
  REQUIRE_THROWS_AS(diff::backward(y, /*create_graph=*/true),
                    diff::SecondOrderUnsupportedError);
}

TEST_CASE("detach cuts the graph") {
  auto x = Tensor::scalar(2.0).set_requires_grad(true);
  auto y = mul(x.detach(), x);
  auto g = diff::grad(y, {x});
  REQUIRE(g[0].item() == 2.0);  // only the tracked factor contributes
}

TEST_CASE("mat_inverse and logabsdet against hand values and FD") {
  auto w = Tensor::from({2, 2}, {2.0, 0.0, 0.0, 2.0}).set_requires_grad(true);
  REQUIRE(diff::logabsdet(w).item() == Catch::Approx(std::log(4.0)));
  auto inv = diff::mat_inverse(w);
  REQUIRE(inv.data()[0] == Catch::Approx(0.5));

  Rng rng(18);
  auto m = Tensor::from({3, 3}, {2.0, 0.3, 0.1, -0.2, 1.5, 0.0, 0.1, 0.2, 1.8})
               .set_requires_grad(true);
  gradcheck([](const auto& in) { return diff::logabsdet(in[0]); }, {m}, 1e-5, 1e-6);
  gradcheck([](const auto& in) { return diff::mat_inverse(in[0]); }, {m}, 1e-5, 1e-6);

  auto sing = Tensor::from({2, 2}, {1.0, 2.0, 2.0, 4.0});
  REQUIRE_THROWS_AS(diff::logabsdet(sing), diff::SingularMatrixError);
}
