#include <doctest.h>

#include <random>

#include "../support/oracles.hpp"
#include "ogen/embedding_store.hpp"
#include "ogen/objective.hpp"

using namespace ogen;

TEST_CASE("per-class probabilities are the mean of per-feature softmaxes") {
  std::mt19937_64 rng(1);
  const Mat Z = 2.0 * oracle::random_unit_columns(8, 3, rng);
  const Mat W = oracle::random_unit_columns(8, 6, rng);
  const ClassScores s = prob_per_class_scheme(Z, W, 0.1);
  Vec want = Vec::Zero(6);
  for (int k = 0; k < 3; ++k) {
    const auto p = oracle::naive_cosine_softmax(Z.col(k), W, 0.1);
    for (int c = 0; c < 6; ++c) want[c] += p[c] / 3;
  }
  CHECK((s.probs - want).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(std::abs(s.probs.sum() - 1.0) < 1e-9);

  const ClassScores j = prob_joint_scheme(Z.col(0), W, 0.1);
  CHECK((j.probs - class_probabilities(Z.col(0), W, 0.1)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("cross-entropy values") {
  const Vec p = (Vec(3) << 0.2, 0.5, 0.3).finished();
  CHECK(cross_entropy(p, 1) == doctest::Approx(-std::log(0.5)));
  CHECK_THROWS_AS(cross_entropy(p, 3), ValidationError);

  std::mt19937_64 rng(2);
  const Mat Z = oracle::random_unit_columns(8, 2, rng);
  const Mat W = oracle::random_unit_columns(8, 5, rng);
  const ClassScores s = prob_per_class_scheme(Z, W, 0.05);
  CHECK(cross_entropy(s, 2).loss == doctest::Approx(-std::log(s.probs[2])).epsilon(1e-10));
}

TEST_CASE("cross-entropy stays finite when the target probability underflows") {
  Mat W(2, 2);
  W << 1, -1, 0, 0;
  const Vec z = (Vec(2) << 1, 0).finished();
  const ClassScores s = prob_joint_scheme(z, W, 1e-3);
  const LossGrad g = cross_entropy(s, 1);
  CHECK(std::isfinite(g.loss));
  CHECK(g.loss == doctest::Approx(2000.0).epsilon(1e-9));
  CHECK(g.d_logits.allFinite());
}

TEST_CASE("MSE distillation") {
  const Vec t = (Vec(4) << 0.1, 0.2, 0.3, 0.4).finished();
  const MseGrad same = distill_mse(t, t);
  CHECK(same.loss == 0.0);
  CHECK(same.d_student.isZero());
  const Vec s = (Vec(4) << 0.4, 0.3, 0.2, 0.1).finished();
  const MseGrad g = distill_mse(t, s);
  CHECK(g.loss == doctest::Approx((0.09 + 0.01 + 0.01 + 0.09) / 4));
  CHECK(g.d_student[0] == doctest::Approx(2 * (0.4 - 0.1) / 4));
  CHECK(distill_mse(t, s).loss == distill_mse(s, t).loss);
  CHECK_THROWS_AS(distill_mse(t, Vec::Ones(3)), ValidationError);
}

TEST_CASE("loss breakdown total") {
  LossBreakdown b{1.0, 2.0, 3.0, 0.5, 2.0};
  CHECK(b.total() == doctest::Approx(1.0 + 1.0 + 6.0));
}

namespace {

// Loss through cosine scores for one of three heads: joint CE, per-class CE,
// or MSE against a fixed teacher.
double scored_loss(int head, const Mat& Z, const Mat& W, double tau, int target, const ClassScores* teacher,
                   Mat* d_logits = nullptr) {
  const ClassScores s = Z.cols() == 1 ? prob_joint_scheme(Z.col(0), W, tau) : prob_per_class_scheme(Z, W, tau);
  LossGrad g = head == 2 ? distill_mse(*teacher, s) : cross_entropy(s, target);
  if (d_logits) *d_logits = g.d_logits;
  return g.loss;
}

}  // namespace

TEST_CASE("objective gradients match central differences") {
  std::mt19937_64 rng(3);
  double worst = 0;
  for (int trial = 0; trial < 20; ++trial) {
    for (int head = 0; head < 3; ++head) {
      const int K = head == 0 ? 1 : 3;
      Mat Z = 1.5 * oracle::random_unit_columns(8, K, rng);
      Mat W = 0.8 * oracle::random_unit_columns(8, 5, rng);
      const double tau = 0.2;
      const ClassScores teacher = prob_per_class_scheme(oracle::random_unit_columns(8, K, rng), W, tau);
      Mat d_logits;
      scored_loss(head, Z, W, tau, trial % 5, &teacher, &d_logits);
      const ClassScores s = K == 1 ? prob_joint_scheme(Z.col(0), W, tau) : prob_per_class_scheme(Z, W, tau);
      const CosineGrads cg = cosine_logits_backward(s, W, d_logits);
      auto f = [&]() { return scored_loss(head, Z, W, tau, trial % 5, &teacher); };
      worst = std::max(worst, oracle::rel_error(cg.d_features, oracle::numeric_grad(Z, f)));
      worst = std::max(worst, oracle::rel_error(cg.d_classes, oracle::numeric_grad(W, f)));
    }
  }
  MESSAGE("worst relative error " << worst);
  CHECK(worst < 1e-4);
}

TEST_CASE("batch cross-entropy averages independent columns") {
  std::mt19937_64 rng(4);
  Mat Z = oracle::random_unit_columns(8, 4, rng);
  Mat W = oracle::random_unit_columns(8, 6, rng);
  const std::vector<int> targets = {0, 3, 5, 3};
  const ClassScores s = prob_per_class_scheme(Z, W, 0.1);
  const LossGrad g = batch_cross_entropy(s, targets);
  double want = 0;
  for (int k = 0; k < 4; ++k) want -= std::log(oracle::naive_cosine_softmax(Z.col(k), W, 0.1)[targets[k]]) / 4;
  CHECK(g.loss == doctest::Approx(want).epsilon(1e-10));

  auto f = [&]() { return batch_cross_entropy(prob_per_class_scheme(Z, W, 0.1), targets).loss; };
  const CosineGrads cg = cosine_logits_backward(s, W, g.d_logits);
  CHECK(oracle::rel_error(cg.d_features, oracle::numeric_grad(Z, f)) < 1e-4);
  CHECK(oracle::rel_error(cg.d_classes, oracle::numeric_grad(W, f)) < 1e-4);
}

TEST_CASE("reference loss values") {
  for (int n : {2, 5, 50}) CHECK(cross_entropy(Vec::Constant(n, 1.0 / n), 0) == doctest::Approx(std::log(n)));
  const Vec a = (Vec(2) << 1, 0).finished();
  const Vec b = (Vec(2) << 0, 1).finished();
  CHECK(distill_mse(a, b).loss == doctest::Approx(1.0));
}

TEST_CASE("distillation gradient does not depend on how the teacher was produced") {
  std::mt19937_64 rng(6);
  const Mat W = oracle::random_unit_columns(8, 5, rng);
  const Mat zs = oracle::random_unit_columns(8, 1, rng);
  const ClassScores student = prob_joint_scheme(zs.col(0), W, 0.1);
  const ClassScores t1 = prob_joint_scheme(oracle::random_unit(8, rng), W, 0.1);
  // Same teacher probabilities reached through different logits.
  ClassScores t2 = t1;
  t2.logits.array() += 3.0;
  const LossGrad g1 = distill_mse(t1, student), g2 = distill_mse(t2, student);
  CHECK(g1.loss == g2.loss);
  CHECK(g1.d_logits == g2.d_logits);
  CHECK(g1.d_logits.rows() == student.num_classes());
}
