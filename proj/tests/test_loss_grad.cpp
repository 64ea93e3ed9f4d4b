#include <cmath>
#include <numbers>

#include "doctest.h"
#include "snn/loss.hpp"
#include "test_helpers.hpp"

using namespace snn;
using snn::testing::random_tensor;

namespace {

constexpr double kPhi1 = 0.8413447461;  // Phi(1)

GaussianTensor gvec(std::initializer_list<double> mu, std::initializer_list<double> var) {
  Tensor m({static_cast<Index>(mu.size())}), v({static_cast<Index>(var.size())});
  Index i = 0;
  for (double d : mu) m[i++] = d;
  i = 0;
  for (double d : var) v[i++] = d;
  return GaussianTensor(m, v);
}

}  // namespace

TEST_CASE("pairwise_win_probability") {
  CHECK(pairwise_win_probability(0.3, 0.7, 0.3, 0.7) == 0.5);
  CHECK(std::abs(pairwise_win_probability(1.0, 0.5, 0.0, 0.5) - kPhi1) <= 1e-6);
  CHECK(pairwise_win_probability(1.0, kVarFloor, 0.0, kVarFloor) >= 1.0 - 1e-9);
  CHECK(pairwise_win_probability(0.0, kVarFloor, 1.0, kVarFloor) <= 1e-9);
  CHECK_THROWS_AS(pairwise_win_probability(NAN, 1, 0, 1), std::invalid_argument);
  CHECK_THROWS_AS(pairwise_win_probability(0, INFINITY, 0, 1), std::invalid_argument);
  SUBCASE("complementary order sums to one") {
    SeededRng rng(3);
    for (int t = 0; t < 100; ++t) {
      const double a = rng.uniform(-3, 3), b = rng.uniform(-3, 3), va = rng.uniform(0.01, 2), vb = rng.uniform(0.01, 2);
      CHECK(std::abs(pairwise_win_probability(a, va, b, vb) + pairwise_win_probability(b, vb, a, va) - 1.0) <= 1e-14);
    }
  }
}

TEST_CASE("stochastic_loss") {
  const GaussianTensor out = gvec({1, 0}, {0.5, 0.5});
  const Eigen::VectorXd y = one_hot(0, 2);
  SUBCASE("hand example") {
    const LossBreakdown l = stochastic_loss(out, 0, y);
    CHECK(l.mse == 0.0);
    CHECK(std::abs(l.win_term - kPhi1) <= 1e-9);
    CHECK(std::abs(l.total + kPhi1) <= 1e-9);
    CHECK(l.sigma_reg == 0.0);
    CHECK(l.win_probabilities[0] == 0.5);
  }
  SUBCASE("Bimodel subtracts alpha sigma squared") {
    const LossBreakdown l = stochastic_loss(out, 0, y, LossPolicy::bimodel(0.25), 2.0);
    CHECK(l.sigma_reg == -1.0);
    CHECK(std::abs(l.total - (-kPhi1 - 1.0)) <= 1e-9);
    CHECK_THROWS_AS(LossPolicy::bimodel(0.0), std::invalid_argument);
  }
  SUBCASE("equal means give mse minus one half") {
    const GaussianTensor eq = gvec({0.2, 0.2, 0.2, 0.2}, {0.3, 0.3, 0.3, 0.3});
    const LossBreakdown l = stochastic_loss(eq, 2, one_hot(2, 4));
    CHECK(l.total == doctest::Approx(l.mse - 0.5).epsilon(1e-15));
    CHECK(l.mse == doctest::Approx((3 * 0.04 + 0.64) / 4).epsilon(1e-15));
  }
  SUBCASE("raising the true-class mean lowers the loss") {
    const GaussianTensor base = gvec({0.1, 0.4, -0.2}, {0.2, 0.1, 0.3});
    const GaussianTensor up = gvec({0.1, 0.5, -0.2}, {0.2, 0.1, 0.3});
    // the mean moves toward its one-hot target as well, so both terms agree
    CHECK(stochastic_loss(up, 1, one_hot(1, 3)).total < stochastic_loss(base, 1, one_hot(1, 3)).total);
  }
  SUBCASE("invalid targets") {
    CHECK_THROWS_AS(stochastic_loss(out, 2, y), std::invalid_argument);
    CHECK_THROWS_AS(stochastic_loss(out, 1, y), std::invalid_argument);
    Eigen::VectorXd soft(2);
    soft << 0.5, 0.5;
    CHECK_THROWS_AS(stochastic_loss(out, 0, soft), std::invalid_argument);
  }
  SUBCASE("translation invariance of the win probabilities") {
    SeededRng rng(8);
    for (int t = 0; t < 20; ++t) {
      Tensor mu = random_tensor({10}, 100 + t, -2, 2), var = random_tensor({10}, 200 + t, 0.01, 1.0);
      const double c = rng.uniform(-5, 5);
      Tensor shifted(mu.shape(), (mu.data().array() + c).matrix());
      const Index k = static_cast<Index>(rng.below(10));
      const auto a = stochastic_loss(GaussianTensor(mu, var), k, one_hot(k, 10)).win_probabilities;
      const auto b = stochastic_loss(GaussianTensor(shifted, var), k, one_hot(k, 10)).win_probabilities;
      CHECK((a - b).cwiseAbs().maxCoeff() <= 1e-12);
    }
  }
}

TEST_CASE("loss_grad_output") {
  SUBCASE("equal means, n = 2") {
    for (double v : {0.1, 0.5, 2.0}) {
      const OutputGradient g = loss_grad_output(gvec({0, 0}, {v, v}), 0, one_hot(0, 2));
      const double kernel = 1.0 / std::sqrt(4.0 * std::numbers::pi * v);
      CHECK(g.dmu[1] == doctest::Approx(kernel).epsilon(1e-14));
      CHECK(g.dmu[0] == doctest::Approx(-1.0 - kernel).epsilon(1e-14));
      CHECK(g.dvar[0] == 0.0);
    }
  }
  SUBCASE("saturated win term leaves only the MSE gradient") {
    const GaussianTensor out = gvec({100, 0, -3}, {1e-4, 1e-4, 1e-4});
    const Eigen::VectorXd y = one_hot(0, 3);
    const OutputGradient g = loss_grad_output(out, 0, y);
    const Eigen::VectorXd mse = 2.0 / 3.0 * (out.mean().data() - y);
    CHECK((g.dmu - mse).cwiseAbs().maxCoeff() <= 1e-30);
    CHECK(g.dvar.cwiseAbs().maxCoeff() <= 1e-30);
  }
  SUBCASE("win-term components sum to zero") {
    for (std::uint64_t t = 0; t < 20; ++t) {
      const Tensor mu = random_tensor({10}, 300 + t, -2, 2), var = random_tensor({10}, 400 + t, 0.01, 1.0);
      const Index k = static_cast<Index>(t % 10);
      const Eigen::VectorXd y = one_hot(k, 10);
      const OutputGradient g = loss_grad_output(GaussianTensor(mu, var), k, y);
      const Eigen::VectorXd win = g.dmu - 2.0 / 10.0 * (mu.data() - y);
      CHECK(std::abs(win.sum()) <= 1e-10);
    }
  }
  SUBCASE("matches finite differences on random draws") {
    SeededRng rng(9);
    double worst = 0.0;
    for (int t = 0; t < 20; ++t) {
      const Index n = 2 + static_cast<Index>(rng.below(9));
      Tensor mu = random_tensor({n}, 500 + t, -1.5, 1.5), var = random_tensor({n}, 600 + t, 0.05, 1.0);
      const Index k = static_cast<Index>(rng.below(static_cast<std::uint64_t>(n)));
      const Eigen::VectorXd y = one_hot(k, n);
      const OutputGradient g = loss_grad_output(GaussianTensor(mu, var), k, y);
      auto total = [&] { return stochastic_loss(GaussianTensor(mu, var), k, y).total; };
      for (Index i = 0; i < n; ++i) {
        worst = std::max(worst, relative_error(g.dmu[i], central_difference(mu[i], 1e-6, total)));
        worst = std::max(worst, relative_error(g.dvar[i], central_difference(var[i], 1e-6, total)));
      }
    }
    CHECK(worst <= 1e-6);
  }
}

TEST_CASE("central differences are exact on a quadratic") {
  Eigen::VectorXd w(5), a(5), b(5);
  w << 0.3, -1.2, 2.0, 0.0, 5.0;
  a << 1.0, 2.0, 0.5, 3.0, 0.1;
  b << -1.0, 0.0, 0.25, 2.0, 1.0;
  auto f = [&] { return (a.array() * w.array().square()).sum() + b.dot(w); };
  for (Index i = 0; i < 5; ++i) {
    const double exact = 2.0 * a[i] * w[i] + b[i];
    CHECK(relative_error(exact, central_difference(w[i], 1e-3, f)) <= 1e-10);
  }
  CHECK(w[4] == 5.0);  // slot restored
}

TEST_CASE("backprop contract") {
  for (const ModelConfig& cfg : {preset_configs().mnist_lenet, preset_configs().cifar_cnn}) {
    ParameterSet p = init_params(cfg, 1);
    p.sigma = 0.3;
    const Tensor x = random_tensor(cfg.input_shape(), 2, 0, 1);
    for (VarianceMode mode : {VarianceMode::DiagonalExact, VarianceMode::IdentityVariance}) {
      const auto [loss, g] = backprop(p, x, 3, one_hot(3, 10), mode);
      CHECK(std::isfinite(loss.total));
      REQUIRE(g.layers.size() == p.layers.size());
      for (std::size_t i = 0; i < g.layers.size(); ++i) {
        CHECK(g.layers[i].weight.shape() == p.layers[i].weight.shape());
        CHECK(g.layers[i].bias.shape() == p.layers[i].bias.shape());
        CHECK(g.layers[i].weight.all_finite());
        CHECK(g.layers[i].bias.all_finite());
      }
      CHECK(g.dx.shape() == cfg.input_shape());
      CHECK(g.dx.all_finite());
      CHECK(std::isfinite(g.dsigma));
    }
  }
}

TEST_CASE("sigma zero identity-variance backprop is the deterministic gradient") {
  const ModelConfig cfg = tiny_config();
  for (std::uint64_t s = 0; s < 5; ++s) {
    ParameterSet p = init_params(cfg, 10 + s);
    p.sigma = 0.0;
    const Tensor x = random_tensor(cfg.input_shape(), 20 + s, 0, 1);
    const Index k = static_cast<Index>(s);
    const auto [loss, g] = backprop(p, x, k, one_hot(k, 10), VarianceMode::IdentityVariance);
    const DeterministicPass det = forward_deterministic(p, x);
    const GaussianTensor at_floor(Tensor({10}, det.logits), Tensor::full({10}, kVarFloor));
    const OutputGradient og = loss_grad_output(at_floor, k, one_hot(k, 10), false);
    CHECK((og.dmu - 0.2 * (det.logits - one_hot(k, 10))).cwiseAbs().maxCoeff() <= 1e-15);
    const Gradients ref = backward(p, det.cache, og.dmu, nullptr);
    for (std::size_t i = 0; i < g.layers.size(); ++i) {
      if (g.layers[i].empty()) continue;
      CHECK((g.layers[i].weight.data() - ref.layers[i].weight.data()).cwiseAbs().maxCoeff() <= 1e-10);
      CHECK((g.layers[i].bias.data() - ref.layers[i].bias.data()).cwiseAbs().maxCoeff() <= 1e-10);
    }
    CHECK(g.dsigma == 0.0);
  }
}

TEST_CASE("near-tied logits without noise do not produce gradient spikes") {
  const GaussianTensor tied(Tensor({3}, Eigen::Vector3d(0.4, 0.4 + 1e-7, -0.2)), Tensor::full({3}, kVarFloor));
  const OutputGradient full = loss_grad_output(tied, 0, one_hot(0, 3));
  CHECK(full.dmu.cwiseAbs().maxCoeff() > 1e4);
  const OutputGradient mse_only = loss_grad_output(tied, 0, one_hot(0, 3), false);
  CHECK(mse_only.dvar.isZero());
  CHECK(mse_only.dmu.cwiseAbs().maxCoeff() < 1.0);
  CHECK(noise_active(1e-3));
  CHECK_FALSE(noise_active(0.0));
  CHECK_FALSE(noise_active(1e-7));
}

TEST_CASE("finite-difference check on the tiny net") {
  const ModelConfig cfg = tiny_config();
  const double h = 1e-5;
  for (VarianceMode mode : {VarianceMode::DiagonalExact, VarianceMode::IdentityVariance}) {
    for (const LossPolicy& policy : {LossPolicy::plain(), LossPolicy::bimodel(0.25)}) {
      for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const GradCheckCase c = gradcheck_case(cfg, seed, 0.2 + 0.2 * static_cast<double>(seed), mode, h);
        const GradCheckReport r =
            finite_difference_check(c.params, c.x, c.k, one_hot(c.k, 10), mode, policy, {h, 0, seed});
        REQUIRE(r.groups.size() == 4);
        CHECK(r.groups[0].name == "W");
        CHECK(r.groups[1].name == "B");
        CHECK(r.groups[2].name == "sigma");
        CHECK(r.groups[3].name == "x");
        CHECK(r.groups[3].count == 64);
        CHECK(r.max_rel_error() <= 1e-4);
      }
    }
  }
}

TEST_CASE("Bimodel adds exactly -2 alpha sigma to dsigma") {
  const ModelConfig cfg = tiny_config();
  ParameterSet p = init_params(cfg, 5);
  p.sigma = 0.7;
  const Tensor x = random_tensor(cfg.input_shape(), 6, 0, 1);
  const auto plain = backprop(p, x, 1, one_hot(1, 10), VarianceMode::DiagonalExact).second;
  const auto bim = backprop(p, x, 1, one_hot(1, 10), VarianceMode::DiagonalExact, LossPolicy::bimodel(0.25)).second;
  CHECK(bim.dsigma - plain.dsigma == doctest::Approx(-2.0 * 0.25 * 0.7).epsilon(1e-12));
}

TEST_CASE("a small gradient step lowers the loss") {
  const ModelConfig cfg = tiny_config();
  for (std::uint64_t s = 0; s < 20; ++s) {
    ParameterSet p = init_params(cfg, 700 + s);
    p.sigma = 0.5;
    const Tensor x = random_tensor(cfg.input_shape(), 800 + s, 0, 1);
    const Index k = static_cast<Index>(s % 10);
    const auto [loss, g] = backprop(p, x, k, one_hot(k, 10), VarianceMode::DiagonalExact);
    ParameterSet q = p;
    for (std::size_t i = 0; i < q.layers.size(); ++i) {
      q.layers[i].weight.data() -= 1e-4 * g.layers[i].weight.data();
      q.layers[i].bias.data() -= 1e-4 * g.layers[i].bias.data();
    }
    q.sigma -= 1e-4 * g.dsigma;
    const double after = stochastic_loss(forward_stochastic(q, x, VarianceMode::DiagonalExact).output, k,
                                         one_hot(k, 10)).total;
    CHECK(after < loss.total);
  }
}

TEST_CASE("softmax cross-entropy") {
  Eigen::VectorXd logits(3);
  logits << 1.0, 2.0, 0.5;
  const CrossEntropy ce = softmax_cross_entropy(logits, 1);
  const double z = std::exp(1.0) + std::exp(2.0) + std::exp(0.5);
  CHECK(ce.loss == doctest::Approx(std::log(z) - 2.0).epsilon(1e-14));
  CHECK(ce.dlogits.sum() == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(ce.dlogits[1] == doctest::Approx(std::exp(2.0) / z - 1.0).epsilon(1e-14));
  SUBCASE("input gradient matches finite differences") {
    const ModelConfig cfg = tiny_config();
    const ParameterSet p = init_params(cfg, 4);
    Tensor x = random_tensor(cfg.input_shape(), 5, 0, 1);
    const auto [loss, g] = cross_entropy_backprop(p, x, 2);
    auto f = [&] { return softmax_cross_entropy(forward_expectation(p, x), 2).loss; };
    if (gate_margin(forward_deterministic(p, x).cache) > 1e-4) {
      for (Index j = 0; j < x.size(); ++j) CHECK(relative_error(g.dx[j], central_difference(x[j], 1e-6, f)) <= 1e-5);
    }
  }
}
