#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "ogen/distillation.hpp"
#include "ogen/embedding_store.hpp"
#include "ogen/generator.hpp"
#include "ogen/objective.hpp"

namespace ogen {

// kNone trains the class-embedding proxies alone. kDirect maps the class
// embedding to a feature without neighbor extrapolation.
enum class Scheme { kNone, kDirect, kPerClass, kJoint };
enum class DistillMode { kNone, kMeanTeacher, kAlmt, kFixedWindow };
enum class NeighborMode { kKnn, kRandom };

std::string to_string(Scheme s);
std::string to_string(DistillMode d);
std::string to_string(NeighborMode n);
Scheme parse_scheme(const std::string& s);
DistillMode parse_distill(const std::string& s);
NeighborMode parse_neighbor_mode(const std::string& s);

struct TrainConfig {
  int epochs = 200;
  int batch_size = 32;
  int k = 3;
  Scheme scheme = Scheme::kJoint;
  DistillMode distill = DistillMode::kAlmt;
  int fixed_window = 2;  // used by kFixedWindow
  NeighborMode neighbors = NeighborMode::kKnn;
  double tau = 0.05;
  double learning_rate = 0.005;            // class-embedding proxies
  double generator_learning_rate = 0.002;  // generator
  double momentum = 0.9;
  double lambda_syn = 1.0;
  double lambda_distill = 100.0;  // the class-mean MSE of near one-hot probabilities is tiny
  double pseudo_unknown_fraction = 0.5;
  int shots = 16;  // training images per base class; the rest are held out
  int heads = 4;
  int ffn_dim = 0;  // 0 means 2 * dim
  double ema_alpha = 0.99;
  int m_min = 2;
  int m_max = 9;
  bool known_loss_base_only = false;
  std::uint64_t seed = 0;
};

// Throws ValidationError on inconsistent settings (e.g. distillation without
// a generator).
void validate(const TrainConfig& cfg);

struct EpochMetrics {
  int epoch = 0;
  double base_acc = 0.0;
  double new_acc = 0.0;
  double harmonic = 0.0;
  double known_ce = 0.0;
  double synth_ce = 0.0;
  double distill_mse = 0.0;
  int window = 0;  // m_t of the teacher used this epoch, 0 without distillation
  int teacher_first = -1;
  int teacher_last = -1;
};

struct RunMetrics {
  std::vector<EpochMetrics> epochs;
  std::vector<std::string> warnings;
};

struct Accuracy {
  double base = 0.0;
  double novel = 0.0;
  double harmonic = 0.0;
};

// 2ab / (a + b), 0 when a + b == 0. Throws ValidationError on negative input.
double harmonic_mean(double a, double b);

// Scores held-out base images (index >= shots) and all new-class images
// against [normalize(base_embeddings), frozen new-class embeddings].
// `base_embeddings` is d x C_b in split.base order.
Accuracy evaluate(const Mat& base_embeddings, const EmbeddingSet& set, double tau, int shots);

// Everything needed to continue a run bit-exactly.
struct TrainState {
  int epoch = 0;  // completed epochs
  GeneratorParams params;
  Mat embeddings;  // d x C_b
  GeneratorTensors params_velocity;
  Mat embedding_velocity;
  std::string rng_state;
  std::vector<TeacherQueue::Entry> queue;
  std::optional<GeneratorParams> mean_teacher;
  RunMetrics metrics;
};

struct TrainResult {
  GeneratorParams params;
  Mat embeddings;
  RunMetrics metrics;
  long contexts_built = 0;
};

// Called after every epoch with the state at its end.
using EpochCallback = std::function<void(const TrainState&, const EpochMetrics&)>;

TrainResult train(const EmbeddingSet& set, const TrainConfig& cfg, const EpochCallback& on_epoch = {},
                  std::optional<TrainState> resume = std::nullopt);

}  // namespace ogen
