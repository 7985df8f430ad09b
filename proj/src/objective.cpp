#include "ogen/objective.hpp"

#include <cmath>

namespace ogen {

namespace {

double log_sum_exp(const Eigen::Ref<const Vec>& v) {
  const double m = v.maxCoeff();
  return m + std::log((v.array() - m).exp().sum());
}

void check_tau(double tau) {
  if (!(tau > 0.0)) throw ValidationError("temperature must be positive");
}

}  // namespace

ClassScores prob_per_class_scheme(const Mat& features, const Mat& class_matrix, double tau) {
  check_tau(tau);
  if (features.rows() != class_matrix.rows()) throw ValidationError("feature / class matrix dimension mismatch");
  if (features.cols() < 1) throw ValidationError("need at least one feature column");
  ClassScores s;
  s.tau = tau;
  s.feature_norms = features.colwise().norm().transpose();
  if (!(s.feature_norms.minCoeff() > 0.0)) throw NumericalError("zero-norm synthesized feature");
  s.unit_features = features.array().rowwise() / s.feature_norms.transpose().array();
  s.logits = class_matrix.transpose() * s.unit_features / tau;
  s.log_softmax.resize(s.logits.rows(), s.logits.cols());
  s.probs = Vec::Zero(s.logits.rows());
  for (Eigen::Index k = 0; k < s.logits.cols(); ++k) {
    s.log_softmax.col(k) = s.logits.col(k).array() - log_sum_exp(s.logits.col(k));
    s.probs += s.log_softmax.col(k).array().exp().matrix();
  }
  s.probs /= static_cast<double>(s.logits.cols());
  return s;
}

ClassScores prob_joint_scheme(const Vec& feature, const Mat& class_matrix, double tau) {
  return prob_per_class_scheme(feature, class_matrix, tau);
}

LossGrad cross_entropy(const ClassScores& scores, int target) {
  if (target < 0 || target >= scores.num_classes()) throw ValidationError("target class out of range");
  const Eigen::Index K = scores.num_columns();
  const Vec target_logs = scores.log_softmax.row(target).transpose();
  const double lse = log_sum_exp(target_logs);
  LossGrad r;
  r.loss = std::log(static_cast<double>(K)) - lse;
  // Responsibility of column k for the averaged target probability.
  const Vec resp = (target_logs.array() - lse).exp();
  r.d_logits = scores.log_softmax.array().exp();
  for (Eigen::Index k = 0; k < K; ++k) {
    r.d_logits(target, k) -= 1.0;
    r.d_logits.col(k) *= resp[k];
  }
  return r;
}

double cross_entropy(const Vec& probs, int target) {
  if (target < 0 || target >= probs.size()) throw ValidationError("target class out of range");
  return -std::log(probs[target]);
}

LossGrad batch_cross_entropy(const ClassScores& scores, const std::vector<int>& targets) {
  const Eigen::Index K = scores.num_columns();
  if (static_cast<Eigen::Index>(targets.size()) != K) throw ValidationError("one target per column required");
  LossGrad r;
  r.d_logits = scores.log_softmax.array().exp();
  for (Eigen::Index k = 0; k < K; ++k) {
    const int t = targets[k];
    if (t < 0 || t >= scores.num_classes()) throw ValidationError("target class out of range");
    r.loss -= scores.log_softmax(t, k);
    r.d_logits(t, k) -= 1.0;
  }
  r.loss /= static_cast<double>(K);
  r.d_logits /= static_cast<double>(K);
  return r;
}

MseGrad distill_mse(const Vec& p_teacher, const Vec& p_student) {
  if (p_teacher.size() != p_student.size()) throw ValidationError("teacher / student probability length mismatch");
  const double n = static_cast<double>(p_student.size());
  const Vec diff = p_student - p_teacher;
  return {diff.squaredNorm() / n, 2.0 * diff / n};
}

LossGrad distill_mse(const ClassScores& teacher, const ClassScores& student) {
  const MseGrad m = distill_mse(teacher.probs, student.probs);
  LossGrad r;
  r.loss = m.loss;
  const Eigen::Index K = student.num_columns();
  const Vec dp = m.d_student / static_cast<double>(K);
  r.d_logits.resize(student.num_classes(), K);
  for (Eigen::Index k = 0; k < K; ++k) {
    const Vec s = student.log_softmax.col(k).array().exp();
    r.d_logits.col(k) = s.array() * (dp.array() - s.dot(dp));
  }
  return r;
}

CosineGrads cosine_logits_backward(const ClassScores& scores, const Mat& class_matrix, const Mat& d_logits) {
  const double tau = scores.tau;
  CosineGrads g;
  g.d_classes = scores.unit_features * d_logits.transpose() / tau;
  const Mat cos = scores.logits * tau;
  g.d_features.resize(scores.unit_features.rows(), scores.unit_features.cols());
  for (Eigen::Index k = 0; k < d_logits.cols(); ++k) {
    const double radial = d_logits.col(k).dot(cos.col(k));
    g.d_features.col(k) =
        (class_matrix * d_logits.col(k) - radial * scores.unit_features.col(k)) / (tau * scores.feature_norms[k]);
  }
  return g;
}

}  // namespace ogen
