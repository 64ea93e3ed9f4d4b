#include <cmath>
#include <sstream>

#include "doctest.h"
#include "snn/attacks.hpp"
#include "snn/loss.hpp"
#include "snn/train.hpp"
#include "test_helpers.hpp"

using namespace snn;
using snn::testing::random_tensor;

namespace {

double linf(const Tensor& a, const Tensor& b) { return (a.data() - b.data()).cwiseAbs().maxCoeff(); }

const ParameterSet& blob_model() {
  static const ParameterSet model = [] {
    TrainSchedule s;
    s.epochs = 30;
    s.batch_size = 16;
    s.learning_rate = 0.05;
    s.seed = 5;
    return train(config_by_name("blobs"), make_blob_dataset(200, 1), s, SigmaPolicy::fixed(0.3)).params;
  }();
  return model;
}

}  // namespace

TEST_CASE("fgsm") {
  const ModelConfig cfg = tiny_config();
  const ParameterSet p = init_params(cfg, 1);
  for (std::uint64_t s = 0; s < 10; ++s) {
    const Tensor x = random_tensor(cfg.input_shape(), 10 + s, 0, 1);
    CHECK(fgsm(p, x, 3, 0.0) == x);
    const double eps = 0.1;
    const Tensor adv = fgsm(p, x, static_cast<Index>(s), eps);
    CHECK(linf(adv, x) <= eps + 1e-12);
    CHECK(adv.data().minCoeff() >= 0.0);
    CHECK(adv.data().maxCoeff() <= 1.0);
    for (Index i = 0; i < x.size(); ++i) {
      if (adv[i] == 0.0 || adv[i] == 1.0) continue;  // clipped
      const double d = adv[i] - x[i];
      CHECK((std::abs(d - eps) <= 1e-15 || std::abs(d + eps) <= 1e-15 || d == 0.0));
    }
  }
  CHECK_THROWS_AS(fgsm(p, Tensor({1, 7, 7}), 0, 0.1), ShapeError);

  SUBCASE("linear softmax model follows the hand-computed gradient sign") {
    const ModelConfig lin({1, 1, 3}, {Flatten{}, FullyConnected{2}}, 2);
    ParameterSet q = init_params(lin, 0);
    q.layers[1].weight.data() << 1.0, -2.0, 0.5, -1.0, 1.0, -0.3;
    q.layers[1].bias.data() << 0.1, -0.1;
    Tensor x({1, 1, 3});
    x.data() << 0.5, 0.5, 0.5;
    // logits z = W x + b; dCE/dx = W^T (softmax(z) - e_y)
    const double z0 = 0.5 * (1.0 - 2.0 + 0.5) + 0.1, z1 = 0.5 * (-1.0 + 1.0 - 0.3) - 0.1;
    const double p0 = std::exp(z0) / (std::exp(z0) + std::exp(z1)), p1 = 1.0 - p0;
    const double g[3] = {(p0 - 1.0) * 1.0 + p1 * -1.0, (p0 - 1.0) * -2.0 + p1 * 1.0, (p0 - 1.0) * 0.5 + p1 * -0.3};
    const Tensor adv = fgsm(q, x, 0, 0.05);
    for (Index i = 0; i < 3; ++i) {
      REQUIRE(std::abs(g[i]) > 1e-3);
      const double expected = g[i] > 0 ? 0.55 : 0.45;
      CHECK(adv[i] == doctest::Approx(expected).epsilon(1e-15));
    }
  }
}

TEST_CASE("pgd") {
  const ModelConfig cfg = tiny_config();
  const ParameterSet p = init_params(cfg, 2);
  SUBCASE("one full step without random start is fgsm") {
    for (std::uint64_t s = 0; s < 20; ++s) {
      const Tensor x = random_tensor(cfg.input_shape(), 40 + s, 0, 1);
      const double eps = 0.02 * static_cast<double>(s + 1);
      const AttackConfig one{eps, eps, 1, false, 0};
      CHECK(pgd(p, x, static_cast<Index>(s % 10), one) == fgsm(p, x, static_cast<Index>(s % 10), eps));
    }
  }
  SUBCASE("stays in the eps ball and the unit box") {
    for (std::uint64_t s = 0; s < 20; ++s) {
      const Tensor x = random_tensor(cfg.input_shape(), 60 + s, 0, 1);
      const double eps = 0.05 * static_cast<double>(s % 6);
      const Tensor adv = pgd(p, x, 1, AttackConfig::pgd_default(eps, s));
      CHECK(linf(adv, x) <= eps + 1e-12);
      CHECK(adv.data().minCoeff() >= 0.0);
      CHECK(adv.data().maxCoeff() <= 1.0);
    }
  }
  SUBCASE("seeded random start is reproducible") {
    const Tensor x = random_tensor(cfg.input_shape(), 80, 0, 1);
    CHECK(pgd(p, x, 4, AttackConfig::pgd_default(0.1, 9)) == pgd(p, x, 4, AttackConfig::pgd_default(0.1, 9)));
  }
  SUBCASE("config validation") {
    const Tensor x = random_tensor(cfg.input_shape(), 81, 0, 1);
    CHECK_THROWS_AS(pgd(p, x, 0, AttackConfig{0.1, 0.0, 40, true, 0}), std::invalid_argument);
    CHECK_THROWS_AS(pgd(p, x, 0, AttackConfig{0.1, 0.01, 0, true, 0}), std::invalid_argument);
    CHECK_THROWS_AS(pgd(p, x, 0, AttackConfig{-0.1, 0.01, 40, true, 0}), std::invalid_argument);
    CHECK(pgd(p, x, 0, AttackConfig{0.0, 0.0, 40, true, 0}) == x);
  }
}

TEST_CASE("pgd is at least as strong as fgsm on the blob model") {
  const ParameterSet& model = blob_model();
  const Dataset blobs = make_blob_dataset(200, 7);
  const std::vector<double> grid{0.0, 0.1, 0.2, 0.3, 0.4};
  AttackSpec pgd_spec;
  pgd_spec.seed = 3;
  AttackSpec fgsm_spec;
  fgsm_spec.kind = AttackSpec::Kind::Fgsm;
  const EvalCurve pgd_curve = robustness_curve(model, blobs, pgd_spec, grid, InferenceSpec::expectation());
  const EvalCurve fgsm_curve = robustness_curve(model, blobs, fgsm_spec, grid, InferenceSpec::expectation());
  int inversions = 0;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    CHECK(pgd_curve.points[i].accuracy <= fgsm_curve.points[i].accuracy);
    if (i > 0 && pgd_curve.points[i].accuracy > pgd_curve.points[i - 1].accuracy) ++inversions;
  }
  CHECK(inversions <= 1);
  CHECK(pgd_curve.points[0].accuracy == evaluate(model, blobs));
  CHECK(pgd_curve.points.back().accuracy < pgd_curve.points[0].accuracy);
}

TEST_CASE("randomized_predict") {
  const ModelConfig cfg = tiny_config();
  const ParameterSet p = init_params(cfg, 3);
  const Tensor x = random_tensor(cfg.input_shape(), 90, 0, 1);
  SUBCASE("sigma zero votes for the expectation label") {
    const VoteResult v = randomized_predict(p, 0.0, x, 50, 1);
    CHECK(v.label == argmax_label(forward_expectation(p, x)));
    CHECK(v.histogram[static_cast<std::size_t>(v.label)] == 50);
  }
  SUBCASE("seeded") {
    CHECK(randomized_predict(p, 0.6, x, 200, 5).histogram == randomized_predict(p, 0.6, x, 200, 5).histogram);
  }
  SUBCASE("vote fractions agree with a long reference run") {
    const VoteResult small = randomized_predict(p, 0.6, x, 1000, 11);
    const VoteResult big = randomized_predict(p, 0.6, x, 100000, 12);
    for (std::size_t c = 0; c < small.histogram.size(); ++c) {
      const double ref = static_cast<double>(big.histogram[c]) / 100000.0;
      const double frac = static_cast<double>(small.histogram[c]) / 1000.0;
      const double se = std::sqrt(std::max(ref * (1.0 - ref), 1e-4) / 1000.0);
      CHECK(std::abs(frac - ref) <= 4.0 * se);
    }
  }
  SUBCASE("ties go to the lowest class") {
    // Two classes with identical logits everywhere: every vote goes to class 0 by argmax.
    const ModelConfig lin({1, 1, 2}, {Flatten{}, FullyConnected{2}}, 2);
    ParameterSet q = init_params(lin, 0);
    q.layers[1].weight.data().setZero();
    CHECK(randomized_predict(q, 1.0, Tensor({1, 1, 2}), 10, 0).label == 0);
  }
  CHECK_THROWS_AS(randomized_predict(p, 0.5, x, 0, 1), std::invalid_argument);
  CHECK_THROWS_AS(randomized_predict(p, -0.5, x, 1, 1), std::invalid_argument);
}

TEST_CASE("adaptive attack") {
  const ModelConfig cfg = tiny_config();
  ParameterSet p = init_params(cfg, 4);
  const Tensor x = random_tensor(cfg.input_shape(), 100, 0, 1);
  CHECK(adaptive_attack(p, 0.6, x, one_hot(2, 10), 2, 0.0) == x);
  const Tensor adv = adaptive_attack(p, 0.6, x, one_hot(2, 10), 2, 0.1);
  CHECK(linf(adv, x) <= 0.1 + 1e-12);
  CHECK(adv.data().minCoeff() >= 0.0);
  CHECK(adv.data().maxCoeff() <= 1.0);

  SUBCASE("input gradient matches finite differences of the stochastic loss") {
    for (VarianceMode mode : {VarianceMode::DiagonalExact, VarianceMode::IdentityVariance}) {
      const double sigma = 0.6, h = 1e-5;
      SeededRng rng(5);
      Tensor xp;
      for (int tries = 0; tries < 1000; ++tries) {
        xp = random_tensor(cfg.input_shape(), rng.next_u64(), 0, 1);
        if (gate_margin(forward_stochastic(p, xp, mode, sigma).cache) >= 10 * h) break;
      }
      const Tensor g = stochastic_input_gradient(p, sigma, xp, one_hot(7, 10), 7, mode);
      auto f = [&] { return stochastic_loss(forward_stochastic(p, xp, mode, sigma).output, 7, one_hot(7, 10)).total; };
      double worst = 0.0;
      for (Index j = 0; j < 50; ++j) {
        const Index pix = static_cast<Index>(rng.below(64));
        worst = std::max(worst, relative_error(g[pix], central_difference(xp[pix], h, f)));
      }
      CHECK(worst <= 1e-4);
    }
  }
  SUBCASE("vanishing noise reduces to the stochastic-loss step on the expectation model") {
    const DeterministicPass det = forward_deterministic(p, x);
    const OutputGradient og = loss_grad_output(
        GaussianTensor(Tensor({10}, det.logits), Tensor::full({10}, kVarFloor)), 2, one_hot(2, 10), false);
    const Tensor dx = backward(p, det.cache, og.dmu, nullptr).dx;
    const Tensor near_zero = adaptive_attack(p, 1e-9, x, one_hot(2, 10), 2, 0.1, VarianceMode::IdentityVariance);
    for (Index i = 0; i < x.size(); ++i) {
      const double expected = std::clamp(x[i] + 0.1 * (dx[i] > 0 ? 1.0 : (dx[i] < 0 ? -1.0 : 0.0)), 0.0, 1.0);
      CHECK(near_zero[i] == expected);
    }
  }
  CHECK_THROWS_AS(adaptive_attack(p, -1.0, x, one_hot(2, 10), 2, 0.1), std::invalid_argument);
  CHECK_THROWS_AS(adaptive_attack(p, 0.1, Tensor({1, 8, 7}), one_hot(2, 10), 2, 0.1), ShapeError);
}

TEST_CASE("robustness_curve") {
  const ParameterSet& model = blob_model();
  const Dataset blobs = make_blob_dataset(100, 9);
  AttackSpec spec;
  spec.seed = 1;
  SUBCASE("grid validation") {
    CHECK_THROWS_AS(robustness_curve(model, blobs, spec, {}, InferenceSpec::expectation()), std::invalid_argument);
    CHECK_THROWS_AS(robustness_curve(model, blobs, spec, {0.1, 0.1}, InferenceSpec::expectation()),
                    std::invalid_argument);
    CHECK_THROWS_AS(robustness_curve(model, blobs, spec, {-0.1, 0.1}, InferenceSpec::expectation()),
                    std::invalid_argument);
    Dataset empty = blobs;
    empty.labels.clear();
    CHECK_THROWS_AS(robustness_curve(model, empty, spec, {0.1}, InferenceSpec::expectation()), std::invalid_argument);
  }
  SUBCASE("bit-reproducible csv") {
    const auto inf = InferenceSpec::randomized(0.3, 20, 4);
    std::ostringstream a, b;
    write_curve_csv(a, robustness_curve(model, blobs, spec, {0.0, 0.2}, inf));
    write_curve_csv(b, robustness_curve(model, blobs, spec, {0.0, 0.2}, inf));
    CHECK(a.str() == b.str());
    CHECK(a.str().rfind("eps,accuracy,attack,inference,sigma,seed\n0,", 0) == 0);
    CHECK(a.str().find(",pgd,randomized,0.29999999999999999,1\n") != std::string::npos);
  }
  SUBCASE("adaptive curve against randomized inference") {
    AttackSpec adaptive;
    adaptive.kind = AttackSpec::Kind::Adaptive;
    adaptive.sigma = 0.3;
    const EvalCurve c =
        robustness_curve(model, blobs, adaptive, {0.0, 0.3}, InferenceSpec::randomized(0.3, 20, 1));
    CHECK(c.attack == "adaptive");
    CHECK(c.inference == "randomized");
    CHECK(c.points.size() == 2);
  }
}
