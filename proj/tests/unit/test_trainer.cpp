#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "ogen/ablation.hpp"
#include "ogen/run_io.hpp"
#include "ogen/trainer.hpp"

using namespace ogen;

namespace {

EmbeddingSet small_set() {
  SynthConfig s;
  s.num_classes = 12;
  s.dim = 16;
  s.per_class = 20;
  s.groups = 3;
  return make_synthetic(s);
}

TrainConfig small_config(Scheme scheme = Scheme::kJoint, DistillMode distill = DistillMode::kAlmt) {
  TrainConfig c;
  c.epochs = 6;
  c.batch_size = 8;
  c.k = 2;
  c.scheme = scheme;
  c.distill = distill;
  c.shots = 8;
  return c;
}

bool same_metrics(const RunMetrics& a, const RunMetrics& b) {
  if (a.epochs.size() != b.epochs.size()) return false;
  for (std::size_t i = 0; i < a.epochs.size(); ++i)
    if (metrics_row(a.epochs[i]) != metrics_row(b.epochs[i])) return false;
  return true;
}

}  // namespace

TEST_CASE("harmonic mean") {
  CHECK(harmonic_mean(0.5, 0.5) == doctest::Approx(0.5));
  CHECK(harmonic_mean(1.0, 0.0) == 0.0);
  CHECK(harmonic_mean(0.0, 0.0) == 0.0);
  CHECK(std::abs(harmonic_mean(82.69, 63.22) - 71.66) <= 0.005);
  CHECK(harmonic_mean(0.3, 0.6) == doctest::Approx(0.4));
  CHECK_THROWS_AS(harmonic_mean(-1.0, 0.5), ValidationError);
}

TEST_CASE("config parsing and validation") {
  CHECK(parse_scheme("per_class") == Scheme::kPerClass);
  CHECK(parse_distill("mt") == DistillMode::kMeanTeacher);
  CHECK(to_string(parse_distill("almt")) == "almt");
  CHECK_THROWS_AS(parse_scheme("sideways"), ValidationError);
  TrainConfig c = small_config(Scheme::kNone, DistillMode::kAlmt);
  CHECK_THROWS_AS(validate(c), ValidationError);
  c.distill = DistillMode::kNone;
  CHECK_NOTHROW(validate(c));
  c.pseudo_unknown_fraction = 1.0;
  CHECK_THROWS_AS(validate(c), ValidationError);
}

TEST_CASE("config survives a JSON round-trip") {
  TrainConfig c = small_config(Scheme::kPerClass, DistillMode::kFixedWindow);
  c.fixed_window = 4;
  c.tau = 0.07;
  c.seed = 123;
  std::string path;
  const TrainConfig back = config_from_json(config_to_json(c, "/data/x.oef"), &path);
  CHECK(path == "/data/x.oef");
  CHECK(config_to_json(back, path) == config_to_json(c, path));
}

TEST_CASE("evaluation with untouched text embeddings is zero-shot classification") {
  const EmbeddingSet set = small_set();
  const Mat text = set.embeddings_of(set.split.base);
  const Accuracy a = evaluate(text, set, 0.05, 8);
  // Recount: held-out base images and every new image against all class embeddings.
  const Mat W = set.class_embeddings.cast<double>();
  std::vector<int> order = set.split.base;
  order.insert(order.end(), set.split.new_classes.begin(), set.split.new_classes.end());
  auto acc = [&](const std::vector<int>& classes, int first) {
    int ok = 0, n = 0;
    for (int c : classes)
      for (int i = first; i < set.num_features(c); ++i) {
        int best = 0;
        for (std::size_t j = 1; j < order.size(); ++j)
          if (set.image_feature(c, i).dot(W.col(order[j])) > set.image_feature(c, i).dot(W.col(order[best]))) best = j;
        ok += order[best] == c;
        ++n;
      }
    return static_cast<double>(ok) / n;
  };
  CHECK(a.base == doctest::Approx(acc(set.split.base, 8)));
  CHECK(a.novel == doctest::Approx(acc(set.split.new_classes, 0)));
  CHECK(a.harmonic == doctest::Approx(harmonic_mean(a.base, a.novel)));
}

TEST_CASE("scheme none is plain finetuning") {
  const TrainResult r = train(small_set(), small_config(Scheme::kNone, DistillMode::kNone));
  CHECK(r.contexts_built == 0);
  REQUIRE(r.metrics.epochs.size() == 6);
  for (const auto& m : r.metrics.epochs) {
    CHECK(m.synth_ce == 0.0);
    CHECK(m.distill_mse == 0.0);
    CHECK(m.known_ce > 0.0);
  }
}

TEST_CASE("zero learning rates leave the model and metrics unchanged") {
  TrainConfig c = small_config();
  c.learning_rate = 0.0;
  c.generator_learning_rate = 0.0;
  const EmbeddingSet set = small_set();
  const TrainResult r = train(set, c);
  for (const auto& m : r.metrics.epochs) {
    CHECK(m.base_acc == r.metrics.epochs[0].base_acc);
    CHECK(m.new_acc == r.metrics.epochs[0].new_acc);
  }
  CHECK(r.embeddings == set.embeddings_of(set.split.base));
  CHECK(r.params == init_params(c.heads, set.dim, 2 * set.dim, c.seed ^ 0x9E3779B97F4A7C15ULL));
}

TEST_CASE("every scheme and distillation mode trains deterministically") {
  const EmbeddingSet set = small_set();
  for (Scheme s : {Scheme::kDirect, Scheme::kPerClass, Scheme::kJoint}) {
    for (DistillMode d : {DistillMode::kNone, DistillMode::kMeanTeacher, DistillMode::kAlmt, DistillMode::kFixedWindow}) {
      const TrainConfig c = small_config(s, d);
      const TrainResult a = train(set, c);
      const TrainResult b = train(set, c);
      CHECK(same_metrics(a.metrics, b.metrics));
      CHECK(a.params == b.params);
      CHECK(a.contexts_built > 0);
      for (const auto& m : a.metrics.epochs) {
        CHECK(std::isfinite(m.known_ce));
        CHECK(m.synth_ce >= 0.0);
        CHECK(m.distill_mse >= 0.0);
        if (d == DistillMode::kNone) CHECK(m.distill_mse == 0.0);
      }
    }
  }
  TrainConfig other = small_config();
  other.seed = 1;
  CHECK_FALSE(same_metrics(train(set, other).metrics, train(set, small_config()).metrics));
}

TEST_CASE("ALMT metrics report the cosine window") {
  TrainConfig c = small_config();
  c.epochs = 10;
  const TrainResult r = train(small_set(), c);
  // Epoch e trains against the teacher of schedule step t = e - 1.
  const std::vector<int> want = {2, 2, 2, 3, 4, 5, 6, 7, 8, 8};
  for (int e = 0; e < 10; ++e) {
    CHECK(r.metrics.epochs[e].epoch == e + 1);
    CHECK(r.metrics.epochs[e].window == want[e]);
    CHECK(r.metrics.epochs[e].teacher_last == e);
  }
}

TEST_CASE("resuming from a saved state reproduces the uninterrupted run") {
  const EmbeddingSet set = small_set();
  const TrainConfig c = small_config();
  const TrainResult full = train(set, c);

  const auto dir = std::filesystem::temp_directory_path() / "ogen_unit_resume";
  std::filesystem::remove_all(dir);
  const RunPaths run{dir};
  std::filesystem::create_directories(dir);
  // Interrupt a 6-epoch run after its third epoch.
  struct Stop {};
  std::ofstream metrics(run.metrics());
  metrics << kMetricsHeader << '\n';
  try {
    train(set, c, [&](const TrainState& st, const EpochMetrics& m) {
      metrics << metrics_row(m) << '\n' << std::flush;
      save_train_state(run, st, c);
      if (st.epoch == 3) throw Stop{};
    });
  } catch (const Stop&) {
  }
  std::optional<TrainState> captured;
  try {
    train(set, c, [&](const TrainState& st, const EpochMetrics&) {
      if (st.epoch == 3) {
        captured = st;
        throw Stop{};
      }
    });
  } catch (const Stop&) {
  }
  const TrainResult in_memory = train(set, c, {}, *captured);
  CHECK(same_metrics(in_memory.metrics, full.metrics));

  TrainState st = load_train_state(run, c);
  CHECK(st.epoch == 3);
  const TrainResult resumed = train(set, c, {}, std::move(st));
  CHECK(same_metrics(resumed.metrics, full.metrics));
  CHECK(resumed.params == full.params);
  CHECK(resumed.embeddings == full.embeddings);
  std::filesystem::remove_all(dir);
}

TEST_CASE("metrics CSV round-trip") {
  const TrainResult r = train(small_set(), small_config());
  const auto path = std::filesystem::temp_directory_path() / "ogen_unit_metrics.csv";
  {
    std::ofstream out(path);
    out << kMetricsHeader << '\n';
    for (const auto& m : r.metrics.epochs) out << metrics_row(m) << '\n';
  }
  const auto back = read_metrics_csv(path);
  REQUIRE(back.size() == r.metrics.epochs.size());
  for (std::size_t i = 0; i < back.size(); ++i) CHECK(metrics_row(back[i]) == metrics_row(r.metrics.epochs[i]));
  std::filesystem::remove(path);
}

TEST_CASE("ablation grid and summary statistics") {
  const auto grid = ablation_grid(small_config());
  int rows[4] = {0, 0, 0, 0};
  for (const auto& cell : grid) {
    CHECK_NOTHROW(validate(cell.cfg));
    for (int t = 0; t < 4; ++t) rows[t] += cell.table == kAblationTables[t];
  }
  CHECK(rows[0] == 3);
  CHECK(rows[1] == 4);
  CHECK(rows[2] == 5);
  CHECK(rows[3] == 5);

  const auto [m, s] = mean_std({1.0, 2.0, 3.0});
  CHECK(m == doctest::Approx(2.0));
  CHECK(s == doctest::Approx(1.0));
  CHECK(mean_std({4.0}).second == 0.0);
}

TEST_CASE("ablation runs every cell for each seed and agrees with direct training") {
  const EmbeddingSet set = small_set();
  TrainConfig c = small_config();
  c.epochs = 2;
  const AblationReport rep = ablate(set, c, {0, 1}, 2);
  CHECK(rep.rows.size() == 17);
  for (const auto& r : rep.rows) CHECK(r.per_seed.size() == 2);
  TrainConfig direct = rep.find("scheme", "extrapolate per class").cell.cfg;
  direct.seed = 1;
  const auto last = train(set, direct).metrics.epochs.back();
  CHECK(rep.find("scheme", "extrapolate per class").per_seed[1].novel == last.new_acc);
  CHECK(rep.find("components", "generator off, ALMT off").per_seed[0].base ==
        rep.find("scheme", "no generator").per_seed[0].base);
  CHECK_THROWS(rep.find("scheme", "nonexistent"));
}
