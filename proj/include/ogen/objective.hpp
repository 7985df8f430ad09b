#pragma once

#include <vector>

#include "ogen/common.hpp"

namespace ogen {

// Cosine-softmax scores of K features against C unit class columns. For K > 1
// the class probabilities are the mean of the K per-feature softmax vectors.
struct ClassScores {
  double tau = 1.0;
  Mat unit_features;  // d x K
  Vec feature_norms;  // K
  Mat logits;         // C x K, cos / tau
  Mat log_softmax;    // C x K
  Vec probs;          // C

  int num_classes() const { return static_cast<int>(logits.rows()); }
  int num_columns() const { return static_cast<int>(logits.cols()); }
};

// Score-level aggregation over the K synthesized features of one class.
ClassScores prob_per_class_scheme(const Mat& features, const Mat& class_matrix, double tau);

// Single synthesized feature against the union class matrix.
ClassScores prob_joint_scheme(const Vec& feature, const Mat& class_matrix, double tau);

struct LossGrad {
  double loss = 0.0;
  Mat d_logits;  // C x K
};

// -log p_target, evaluated in log space so it stays finite for tiny tau.
LossGrad cross_entropy(const ClassScores& scores, int target);
double cross_entropy(const Vec& probs, int target);

// Mean cross-entropy over columns treated as independent examples, column k
// labeled targets[k].
LossGrad batch_cross_entropy(const ClassScores& scores, const std::vector<int>& targets);

struct MseGrad {
  double loss = 0.0;
  Vec d_student;
};

// Mean over classes of (p_T - p_S)^2. Only the student receives a gradient.
MseGrad distill_mse(const Vec& p_teacher, const Vec& p_student);
LossGrad distill_mse(const ClassScores& teacher, const ClassScores& student);

struct CosineGrads {
  Mat d_features;  // d x K, w.r.t. the raw (unnormalized) features
  Mat d_classes;   // d x C, w.r.t. the class columns as given
};

// Pulls a logit gradient back through cos(w_c, z_k) / tau.
CosineGrads cosine_logits_backward(const ClassScores& scores, const Mat& class_matrix, const Mat& d_logits);

struct LossBreakdown {
  double known_ce = 0.0;
  double synth_ce = 0.0;
  double distill_mse = 0.0;
  double lambda_syn = 1.0;
  double lambda_distill = 1.0;

  double total() const { return known_ce + lambda_syn * synth_ce + lambda_distill * distill_mse; }
};

}  // namespace ogen
