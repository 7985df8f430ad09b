#include "ogen/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>

#include "ogen/knn_retrieval.hpp"

namespace ogen {

std::string to_string(Scheme s) {
  switch (s) {
    case Scheme::kNone: return "none";
    case Scheme::kDirect: return "direct";
    case Scheme::kPerClass: return "per_class";
    case Scheme::kJoint: return "joint";
  }
  return "?";
}

std::string to_string(DistillMode d) {
  switch (d) {
    case DistillMode::kNone: return "none";
    case DistillMode::kMeanTeacher: return "mt";
    case DistillMode::kAlmt: return "almt";
    case DistillMode::kFixedWindow: return "fixed";
  }
  return "?";
}

std::string to_string(NeighborMode n) { return n == NeighborMode::kKnn ? "knn" : "random"; }

Scheme parse_scheme(const std::string& s) {
  if (s == "none") return Scheme::kNone;
  if (s == "direct") return Scheme::kDirect;
  if (s == "per_class" || s == "per-class") return Scheme::kPerClass;
  if (s == "joint") return Scheme::kJoint;
  throw ValidationError("unknown scheme '" + s + "' (expected none, direct, per_class, joint)");
}

DistillMode parse_distill(const std::string& s) {
  if (s == "none") return DistillMode::kNone;
  if (s == "mt") return DistillMode::kMeanTeacher;
  if (s == "almt") return DistillMode::kAlmt;
  if (s == "fixed") return DistillMode::kFixedWindow;
  throw ValidationError("unknown distillation mode '" + s + "' (expected none, mt, almt, fixed)");
}

NeighborMode parse_neighbor_mode(const std::string& s) {
  if (s == "knn") return NeighborMode::kKnn;
  if (s == "random") return NeighborMode::kRandom;
  throw ValidationError("unknown neighbor mode '" + s + "' (expected knn, random)");
}

void validate(const TrainConfig& cfg) {
  if (cfg.epochs < 1) throw ValidationError("epochs must be >= 1");
  if (cfg.batch_size < 1) throw ValidationError("batch_size must be >= 1");
  if (cfg.k < 1) throw ValidationError("k must be >= 1");
  if (!(cfg.tau > 0.0)) throw ValidationError("tau must be positive");
  if (!(cfg.learning_rate >= 0.0) || !(cfg.generator_learning_rate >= 0.0))
    throw ValidationError("learning rates must be non-negative");
  if (!(cfg.momentum >= 0.0 && cfg.momentum < 1.0)) throw ValidationError("momentum must lie in [0, 1)");
  if (!(cfg.lambda_syn >= 0.0) || !(cfg.lambda_distill >= 0.0))
    throw ValidationError("loss weights must be non-negative");
  if (!(cfg.pseudo_unknown_fraction > 0.0 && cfg.pseudo_unknown_fraction < 1.0))
    throw ValidationError("pseudo_unknown_fraction must lie in (0, 1)");
  if (cfg.shots < 1) throw ValidationError("shots must be >= 1");
  if (cfg.heads < 1 || cfg.ffn_dim < 0) throw ValidationError("invalid generator shape");
  if (cfg.scheme == Scheme::kNone && cfg.distill != DistillMode::kNone)
    throw ValidationError("distillation needs a feature generator: scheme=none requires distill=none");
  if (cfg.distill == DistillMode::kFixedWindow && cfg.fixed_window < 1)
    throw ValidationError("fixed window must be >= 1");
  validate(ScheduleConfig{cfg.m_min, cfg.m_max, cfg.epochs, cfg.ema_alpha});
}

double harmonic_mean(double a, double b) {
  if (a < 0.0 || b < 0.0) throw ValidationError("harmonic mean of negative accuracy");
  return a + b > 0.0 ? 2.0 * a * b / (a + b) : 0.0;
}

namespace {

int train_count(int n, int shots) { return std::min(shots, n - 1); }

Mat normalize_columns(const Mat& m, Vec* norms = nullptr) {
  const Vec n = m.colwise().norm().transpose();
  if (!(n.minCoeff() > 0.0)) throw NumericalError("class-embedding proxy collapsed to zero norm");
  if (norms) *norms = n;
  return m.array().rowwise() / n.transpose().array();
}

Synthesis synthesize(Scheme scheme, const NeighborContext& ctx, const Vec& w, const GeneratorParams& p) {
  switch (scheme) {
    case Scheme::kPerClass: return extrapolate_per_class(ctx, w, p);
    case Scheme::kJoint: return extrapolate_jointly(ctx, w, p);
    case Scheme::kDirect: return project_directly(w, p);
    case Scheme::kNone: break;
  }
  throw std::logic_error("no generator for scheme none");
}

void sgd_step(Eigen::Ref<Mat> param, Eigen::Ref<Mat> velocity, const Mat& grad, double momentum, double lr) {
  velocity = momentum * velocity + grad;
  round_to_float(velocity);
  param -= lr * velocity;
  round_to_float(param);
}

}  // namespace

Accuracy evaluate(const Mat& base_embeddings, const EmbeddingSet& set, double tau, int shots) {
  if (!(tau > 0.0)) throw ValidationError("tau must be positive");
  const auto& base = set.split.base;
  const auto& novel = set.split.new_classes;
  if (base_embeddings.cols() != static_cast<Eigen::Index>(base.size()) || base_embeddings.rows() != set.dim)
    throw ValidationError("base embedding matrix does not match the split");
  const Eigen::Index Cb = base_embeddings.cols();
  Mat W(set.dim, Cb + static_cast<Eigen::Index>(novel.size()));
  W.leftCols(Cb) = normalize_columns(base_embeddings);
  W.rightCols(novel.size()) = set.embeddings_of(novel);

  auto count_correct = [&](int cls, Eigen::Index label, int first, long& correct, long& total) {
    const Mat feats = set.image_features[cls].cast<double>();
    if (first >= feats.cols()) return;
    const Mat scores = W.transpose() * feats.rightCols(feats.cols() - first);
    for (Eigen::Index i = 0; i < scores.cols(); ++i) {
      Eigen::Index best;
      scores.col(i).maxCoeff(&best);
      correct += (best == label);
      ++total;
    }
  };
  long bc = 0, bt = 0, nc = 0, nt = 0;
  for (Eigen::Index j = 0; j < Cb; ++j) {
    const int c = base[j];
    count_correct(c, j, train_count(set.num_features(c), shots), bc, bt);
  }
  for (std::size_t j = 0; j < novel.size(); ++j) count_correct(novel[j], Cb + j, 0, nc, nt);
  Accuracy a;
  a.base = bt ? static_cast<double>(bc) / bt : 0.0;
  a.novel = nt ? static_cast<double>(nc) / nt : 0.0;
  a.harmonic = harmonic_mean(a.base, a.novel);
  return a;
}

TrainResult train(const EmbeddingSet& set, const TrainConfig& cfg, const EpochCallback& on_epoch,
                  std::optional<TrainState> resume) {
  validate(set);
  validate(cfg);
  const auto& base = set.split.base;
  const auto& novel = set.split.new_classes;
  const int Cb = static_cast<int>(base.size());
  const int Cn = static_cast<int>(novel.size());
  const int d = set.dim;
  const bool generative = cfg.scheme != Scheme::kNone;
  const bool distilling = cfg.distill != DistillMode::kNone;
  if (generative && Cb < 2) throw ValidationError("feature synthesis needs at least two base classes");

  // Training view: base classes keep only their first `shots` images.
  EmbeddingSet train_set = set;
  std::vector<Mat> train_feats(Cb);
  for (int j = 0; j < Cb; ++j) {
    const int c = base[j];
    const int n = set.num_features(c);
    if (n < 2) throw ValidationError("base class " + set.class_names[c] + " needs at least 2 image features");
    train_set.image_features[c] = set.image_features[c].leftCols(train_count(n, cfg.shots));
    train_feats[j] = train_set.image_features[c].cast<double>();
  }
  const Mat new_embeddings = set.embeddings_of(novel);

  const ScheduleConfig schedule{cfg.m_min, cfg.m_max, cfg.epochs, cfg.ema_alpha};
  const int capacity =
      (cfg.distill == DistillMode::kFixedWindow ? std::max(cfg.m_max, cfg.fixed_window) : cfg.m_max) + 1;
  const int ffn_dim = cfg.ffn_dim > 0 ? cfg.ffn_dim : 2 * d;

  TrainState st;
  Rng rng;
  TeacherQueue queue(schedule, capacity);
  if (resume) {
    st = std::move(*resume);
    std::istringstream in(st.rng_state);
    in >> rng;
    if (!in) throw ValidationError("corrupt rng state in resume data");
    for (const auto& e : st.queue) queue.push_checkpoint(e.epoch, e.params);
    if (st.epoch > cfg.epochs) throw ValidationError("resume state is past the configured epoch count");
  } else {
    rng.seed(cfg.seed);
    st.params = init_params(cfg.heads, d, ffn_dim, cfg.seed ^ 0x9E3779B97F4A7C15ULL);
    st.embeddings = set.embeddings_of(base);
    st.params_velocity = st.params.zeros_like();
    st.embedding_velocity = Mat::Zero(d, Cb);
    if (distilling) queue.push_checkpoint(0, st.params);
    if (cfg.distill == DistillMode::kMeanTeacher) st.mean_teacher = st.params;
  }

  TrainResult result;
  auto& warnings = st.metrics.warnings;

  for (int epoch = st.epoch + 1; epoch <= cfg.epochs; ++epoch) {
    const double lr_scale = 0.5 * (1.0 + std::cos(std::numbers::pi * (epoch - 1) / cfg.epochs));

    std::vector<int> unknown, known;
    if (generative) {
      // Shuffled from the identity every epoch so the split depends on the rng alone.
      std::vector<int> positions(Cb);
      std::iota(positions.begin(), positions.end(), 0);
      std::shuffle(positions.begin(), positions.end(), rng);
      const int nu = std::min(Cb - 1, static_cast<int>(std::ceil(cfg.pseudo_unknown_fraction * Cb - 1e-9)));
      unknown.assign(positions.begin(), positions.begin() + nu);
      known.assign(positions.begin() + nu, positions.end());
      std::sort(unknown.begin(), unknown.end());
      std::sort(known.begin(), known.end());
    } else {
      known.resize(Cb);
      std::iota(known.begin(), known.end(), 0);
    }

    std::optional<GeneratorParams> teacher;
    EpochMetrics m;
    m.epoch = epoch;
    if (distilling) {
      TeacherWindow info;
      switch (cfg.distill) {
        case DistillMode::kAlmt: teacher = almt_teacher(queue, epoch - 1, &info); break;
        case DistillMode::kFixedWindow: teacher = queue.window_teacher(cfg.fixed_window, &info); break;
        case DistillMode::kMeanTeacher: teacher = *st.mean_teacher; info = {0, epoch - 1, epoch - 1}; break;
        case DistillMode::kNone: break;
      }
      m.window = info.window;
      m.teacher_first = info.first_epoch;
      m.teacher_last = info.last_epoch;
    }

    std::vector<std::pair<int, int>> examples;
    for (int j : known)
      for (int i = 0; i < train_feats[j].cols(); ++i) examples.emplace_back(j, i);
    std::shuffle(examples.begin(), examples.end(), rng);

    double known_sum = 0.0, synth_sum = 0.0, distill_sum = 0.0;
    int steps = 0;
    for (std::size_t start = 0; start < examples.size(); start += cfg.batch_size) {
      const std::size_t stop = std::min(examples.size(), start + cfg.batch_size);
      Vec norms;
      const Mat base_unit = normalize_columns(st.embeddings, &norms);
      Mat union_matrix(d, Cb + Cn);
      union_matrix.leftCols(Cb) = base_unit;
      union_matrix.rightCols(Cn) = new_embeddings;
      Mat d_union = Mat::Zero(d, Cb + Cn);

      // Real images of pseudo-known classes.
      Mat batch(d, static_cast<Eigen::Index>(stop - start));
      std::vector<int> targets;
      for (std::size_t b = start; b < stop; ++b) {
        batch.col(b - start) = train_feats[examples[b].first].col(examples[b].second);
        targets.push_back(examples[b].first);
      }
      const Eigen::Index known_cols = cfg.known_loss_base_only ? Cb : Cb + Cn;
      const Mat known_matrix = union_matrix.leftCols(known_cols);
      const ClassScores known_scores = prob_per_class_scheme(batch, known_matrix, cfg.tau);
      const LossGrad known_ce = batch_cross_entropy(known_scores, targets);
      d_union.leftCols(known_cols) += cosine_logits_backward(known_scores, known_matrix, known_ce.d_logits).d_classes;
      double synth_loss = 0.0, distill_loss = 0.0;

      // Synthesized features of pseudo-unknown classes.
      GeneratorGrads gen_grads = zero_grads(st.params);
      const double per_class = unknown.empty() ? 0.0 : 1.0 / static_cast<double>(unknown.size());
      for (int u : unknown) {
        const Vec w = base_unit.col(u);
        std::vector<int> nb;
        if (cfg.neighbors == NeighborMode::kKnn) {
          Mat candidates(d, static_cast<Eigen::Index>(known.size()));
          for (std::size_t j = 0; j < known.size(); ++j) candidates.col(j) = base_unit.col(known[j]);
          const Retrieval r = retrieve_knn(w, candidates, cfg.k);
          if (r.clamped) {
            const std::string msg = "k=" + std::to_string(cfg.k) + " exceeds the " + std::to_string(known.size()) +
                                    " pseudo-known classes; clamped";
            if (std::find(warnings.begin(), warnings.end(), msg) == warnings.end()) warnings.push_back(msg);
          }
          for (int idx : r.indices) nb.push_back(known[idx]);
        } else {
          std::vector<int> pool = known;
          const int kk = std::min<int>(cfg.k, static_cast<int>(pool.size()));
          for (int j = 0; j < kk; ++j) {
            std::uniform_int_distribution<int> pick(j, static_cast<int>(pool.size()) - 1);
            std::swap(pool[j], pool[pick(rng)]);
          }
          nb.assign(pool.begin(), pool.begin() + kk);
        }
        std::vector<int> nb_classes;
        for (int j : nb) nb_classes.push_back(base[j]);
        NeighborContext ctx = sample_support(nb_classes, train_set, rng);
        for (std::size_t j = 0; j < nb.size(); ++j) ctx.neighbor_embeddings.col(j) = base_unit.col(nb[j]);
        ctx.conditioning = w;
        ++result.contexts_built;

        Synthesis syn = synthesize(cfg.scheme, ctx, w, st.params);
        const ClassScores scores = prob_per_class_scheme(syn.features, union_matrix, cfg.tau);
        const LossGrad ce = cross_entropy(scores, u);
        synth_loss += per_class * ce.loss;
        Mat d_logits = (cfg.lambda_syn * per_class) * ce.d_logits;
        if (teacher) {
          const Synthesis t_syn = synthesize(cfg.scheme, ctx, w, *teacher);
          const ClassScores t_scores = prob_per_class_scheme(t_syn.features, union_matrix, cfg.tau);
          const LossGrad mse = distill_mse(t_scores, scores);
          distill_loss += per_class * mse.loss;
          d_logits += (cfg.lambda_distill * per_class) * mse.d_logits;
        }
        const CosineGrads cg = cosine_logits_backward(scores, union_matrix, d_logits);
        d_union += cg.d_classes;
        const GeneratorBackward gb = backward(syn.tape, cg.d_features);
        gen_grads += gb.grads;
        d_union.col(u) += gb.d_conditioning;
        if (gb.d_keys.size() > 0)
          for (std::size_t j = 0; j < nb.size(); ++j) d_union.col(nb[j]) += gb.d_keys.col(j);
      }

      const double total = known_ce.loss + cfg.lambda_syn * synth_loss + cfg.lambda_distill * distill_loss;
      if (!std::isfinite(total)) {
        std::ostringstream os;
        os << "non-finite loss at epoch " << epoch << ", step " << steps << ": known_ce=" << known_ce.loss
           << " synth_ce=" << synth_loss << " distill_mse=" << distill_loss;
        throw NumericalError(os.str());
      }
      known_sum += known_ce.loss;
      synth_sum += synth_loss;
      distill_sum += distill_loss;
      ++steps;

      // Back through column normalization of the proxies.
      Mat d_emb(d, Cb);
      for (int j = 0; j < Cb; ++j) {
        const Vec g = d_union.col(j);
        const Vec u = base_unit.col(j);
        d_emb.col(j) = (g - u * u.dot(g)) / norms[j];
      }
      sgd_step(st.embeddings, st.embedding_velocity, d_emb, cfg.momentum, cfg.learning_rate * lr_scale);
      if (generative) {
        auto p = st.params.views();
        auto v = st.params_velocity.views();
        const auto g = gen_grads.views();
        for (int i = 0; i < kNumTensors; ++i)
          sgd_step(p[i], v[i], g[i], cfg.momentum, cfg.generator_learning_rate * lr_scale);
      }
    }
    if (!st.params.all_finite() || !st.embeddings.allFinite())
      throw NumericalError("non-finite parameters after epoch " + std::to_string(epoch));

    if (cfg.distill == DistillMode::kAlmt || cfg.distill == DistillMode::kFixedWindow)
      queue.push_checkpoint(epoch, st.params);
    if (cfg.distill == DistillMode::kMeanTeacher) {
      auto t = st.mean_teacher->views();
      const auto p = st.params.views();
      for (int i = 0; i < kNumTensors; ++i) {
        t[i] = cfg.ema_alpha * t[i] + (1.0 - cfg.ema_alpha) * p[i];
        round_to_float(t[i]);
      }
    }

    const Accuracy acc = evaluate(st.embeddings, set, cfg.tau, cfg.shots);
    m.base_acc = acc.base;
    m.new_acc = acc.novel;
    m.harmonic = acc.harmonic;
    if (steps > 0) {
      m.known_ce = known_sum / steps;
      m.synth_ce = synth_sum / steps;
      m.distill_mse = distill_sum / steps;
    }
    st.epoch = epoch;
    st.metrics.epochs.push_back(m);
    if (on_epoch) {
      std::ostringstream os;
      os << rng;
      st.rng_state = os.str();
      st.queue.assign(queue.entries().begin(), queue.entries().end());
      on_epoch(st, m);
    }
  }

  result.params = std::move(st.params);
  result.embeddings = std::move(st.embeddings);
  result.metrics = std::move(st.metrics);
  return result;
}

}  // namespace ogen
