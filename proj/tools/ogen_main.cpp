// ogen: synthetic data generation, training, evaluation and ablation runs.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <thread>

#include <CLI11.hpp>

#include "ogen/ablation.hpp"
#include "ogen/checkpoint.hpp"
#include "ogen/embedding_store.hpp"
#include "ogen/run_io.hpp"
#include "ogen/trainer.hpp"

namespace fs = std::filesystem;
using namespace ogen;

namespace {

enum ExitCode { kOk = 0, kUsage = 1, kData = 2, kNumerical = 3 };

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TrainFlags {
  TrainConfig cfg;
  std::string scheme = "joint";
  std::string distill = "almt";
  std::string neighbors = "knn";
  int window = 0;
};

void add_train_flags(CLI::App* app, TrainFlags& f) {
  app->add_option("--epochs", f.cfg.epochs, "Finetuning epochs (t_max)")->capture_default_str();
  app->add_option("--batch-size", f.cfg.batch_size, "Known-class minibatch size")->capture_default_str();
  app->add_option("--k", f.cfg.k, "Neighbor classes per synthesized feature")->capture_default_str();
  app->add_option("--scheme", f.scheme, "none | direct | per_class | joint")->capture_default_str();
  app->add_option("--distill", f.distill, "none | mt | almt | fixed")->capture_default_str();
  app->add_option("--window", f.window, "Fixed teacher window m (implies --distill fixed)");
  app->add_option("--neighbors", f.neighbors, "knn | random")->capture_default_str();
  app->add_option("--tau", f.cfg.tau, "Softmax temperature")->capture_default_str();
  app->add_option("--lr", f.cfg.learning_rate, "Learning rate of the class-embedding proxies")->capture_default_str();
  app->add_option("--generator-lr", f.cfg.generator_learning_rate, "Generator learning rate")->capture_default_str();
  app->add_option("--momentum", f.cfg.momentum)->capture_default_str();
  app->add_option("--lambda-syn", f.cfg.lambda_syn, "Weight of the synthesized-feature loss")->capture_default_str();
  app->add_option("--lambda-distill", f.cfg.lambda_distill, "Weight of the distillation loss")->capture_default_str();
  app->add_option("--pseudo-unknown", f.cfg.pseudo_unknown_fraction, "Fraction of base classes held out per epoch")
      ->capture_default_str();
  app->add_option("--shots", f.cfg.shots, "Training images per base class")->capture_default_str();
  app->add_option("--heads", f.cfg.heads)->capture_default_str();
  app->add_option("--ffn-dim", f.cfg.ffn_dim, "FFN width (0 = 2 * dim)")->capture_default_str();
  app->add_option("--ema-alpha", f.cfg.ema_alpha)->capture_default_str();
  app->add_option("--m-min", f.cfg.m_min)->capture_default_str();
  app->add_option("--m-max", f.cfg.m_max)->capture_default_str();
  app->add_flag("--known-base-only", f.cfg.known_loss_base_only,
                "Score known-class images against base classes only");
  app->add_option("--seed", f.cfg.seed)->capture_default_str();
}

TrainConfig resolve(TrainFlags& f, const CLI::App* app) {
  TrainConfig c = f.cfg;
  c.scheme = parse_scheme(f.scheme);
  c.distill = parse_distill(f.distill);
  c.neighbors = parse_neighbor_mode(f.neighbors);
  if (app->count("--window")) {
    if (app->count("--distill") && c.distill != DistillMode::kFixedWindow)
      throw UsageError("--window only applies to --distill fixed");
    c.distill = DistillMode::kFixedWindow;
    c.fixed_window = f.window;
  }
  validate(c);
  return c;
}

int thread_cap() {
  int n = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  if (const char* env = std::getenv("OGEN_THREADS")) {
    const int cap = std::atoi(env);
    if (cap > 0) n = std::min(n, cap);
  }
  return n;
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::trunc);
  if (!out) throw ValidationError("cannot write " + p.string());
  out << text;
}

int cmd_gen_data(SynthConfig cfg, const std::string& out) {
  const EmbeddingSet set = make_synthetic(cfg);
  save_embeddings(set, out);
  std::printf("wrote %s\n", out.c_str());
  std::printf("classes %d  dim %d  per-class %d  base %zu  new %zu\n", set.num_classes(), set.dim, cfg.per_class,
              set.split.base.size(), set.split.new_classes.size());
  std::printf("nearest-centroid accuracy %.4f\n", nearest_centroid_accuracy(set));
  return kOk;
}

int cmd_train(TrainFlags& flags, const CLI::App* app, const std::string& data, const std::string& run_dir,
              bool resume, bool plot, bool quiet) {
  RunPaths run{run_dir};
  TrainConfig cfg;
  std::string data_path = data;
  std::optional<TrainState> state;
  if (resume) {
    std::ifstream in(run.config());
    if (!in) throw ValidationError("nothing to resume: " + run.config().string() + " missing");
    std::stringstream ss;
    ss << in.rdbuf();
    cfg = config_from_json(ss.str(), &data_path);
    state = load_train_state(run, cfg);
  } else {
    if (data.empty()) throw UsageError("--data is required");
    cfg = resolve(flags, app);
  }
  const EmbeddingSet set = load_embeddings(data_path);

  fs::create_directories(run.root);
  if (!resume) {
    write_file(run.config(), config_to_json(cfg, fs::absolute(data_path).string()));
    write_file(run.metrics(), std::string(kMetricsHeader) + "\n");
    fs::remove_all(run.checkpoints());
    fs::remove_all(run.state());
  } else {
    // Rewrite metrics up to the saved epoch so a partially written tail is dropped.
    std::string text = std::string(kMetricsHeader) + "\n";
    for (const auto& m : state->metrics.epochs) text += metrics_row(m) + "\n";
    write_file(run.metrics(), text);
  }

  std::ofstream metrics(run.metrics(), std::ios::app);
  auto on_epoch = [&](const TrainState& st, const EpochMetrics& m) {
    metrics << metrics_row(m) << '\n';
    metrics.flush();
    save_train_state(run, st, cfg);
    if (!quiet)
      std::printf("epoch %4d  base %.4f  new %.4f  H %.4f  known %.4f  synth %.4f  mse %.3g  m_t %d\n", m.epoch,
                  m.base_acc, m.new_acc, m.harmonic, m.known_ce, m.synth_ce, m.distill_mse, m.window);
  };
  const TrainResult r = train(set, cfg, on_epoch, std::move(state));
  for (const auto& w : r.metrics.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());

  save_checkpoint({r.params, to_string(cfg.scheme), cfg.epochs, r.embeddings, set.split.base}, run.final_checkpoint());
  if (plot) write_file(run.root / "learning_curve.svg", learning_curve_svg(r.metrics.epochs, "scheme=" +
                                                                  to_string(cfg.scheme) + " distill=" +
                                                                  to_string(cfg.distill)));
  if (!r.metrics.epochs.empty()) {
    const auto& last = r.metrics.epochs.back();
    std::printf("final  base %.4f  new %.4f  H %.4f\n", last.base_acc, last.new_acc, last.harmonic);
  }
  return kOk;
}

int cmd_eval(const std::string& run_dir, const std::string& data, bool csv, const std::vector<double>& hmean) {
  if (!hmean.empty()) {
    const double h = harmonic_mean(hmean[0], hmean[1]);
    if (csv)
      std::printf("base,new,H\n%.4f,%.4f,%.4f\n", hmean[0], hmean[1], h);
    else
      std::printf("H(%.4f, %.4f) = %.4f\n", hmean[0], hmean[1], h);
    return kOk;
  }
  if (run_dir.empty()) throw UsageError("eval needs --run-dir (or --hmean A B)");
  RunPaths run{run_dir};
  std::ifstream in(run.config());
  if (!in) throw ValidationError("missing " + run.config().string());
  std::stringstream ss;
  ss << in.rdbuf();
  std::string data_path;
  const TrainConfig cfg = config_from_json(ss.str(), &data_path);
  if (!data.empty()) data_path = data;
  if (!fs::exists(run.final_checkpoint().string() + ".json"))
    throw ValidationError("missing checkpoint " + run.final_checkpoint().string());
  const Checkpoint ck = load_checkpoint(run.final_checkpoint());
  const EmbeddingSet set = load_embeddings(data_path);
  if (ck.embedding_classes != set.split.base) throw ValidationError("checkpoint was trained on a different split");
  const Accuracy a = evaluate(ck.class_embeddings, set, cfg.tau, cfg.shots);
  if (csv)
    std::printf("base,new,H\n%.6f,%.6f,%.6f\n", a.base, a.novel, a.harmonic);
  else
    std::printf("base %.2f  new %.2f  H %.2f\n", 100 * a.base, 100 * a.novel, 100 * a.harmonic);
  return kOk;
}

int cmd_ablate(TrainFlags& flags, const CLI::App* app, const std::string& data, const std::string& out, int seeds) {
  if (seeds < 1) throw UsageError("--seeds must be >= 1");
  TrainConfig base = resolve(flags, app);
  const EmbeddingSet set = load_embeddings(data);
  std::vector<std::uint64_t> seed_list;
  for (int s = 0; s < seeds; ++s) seed_list.push_back(base.seed + static_cast<std::uint64_t>(s));
  const AblationReport report =
      ablate(set, base, seed_list, thread_cap(), [](const AblationCell& c, std::uint64_t seed, const Accuracy& a) {
        std::printf("[%s] %-24s seed %llu  base %.4f  new %.4f  H %.4f\n", c.table.c_str(), c.row.c_str(),
                    static_cast<unsigned long long>(seed), a.base, a.novel, a.harmonic);
        std::fflush(stdout);
      });
  for (const auto& p : write_ablation_reports(report, out)) std::printf("wrote %s\n", p.string().c_str());
  std::printf("\n%-12s %-24s %16s %16s %16s\n", "table", "row", "base", "new", "H");
  for (const auto& r : report.rows)
    std::printf("%-12s %-24s %7.2f +- %5.2f %7.2f +- %5.2f %7.2f +- %5.2f\n", r.cell.table.c_str(),
                r.cell.row.c_str(), 100 * r.base_mean, 100 * r.base_std, 100 * r.new_mean, 100 * r.new_std,
                100 * r.h_mean, 100 * r.h_std);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"OGEN feature synthesis and self-distillation on embedding spaces"};
  app.require_subcommand(1);

  SynthConfig synth;
  std::string gen_out;
  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic embedding dataset (OEF)");
  gen->add_option("--classes", synth.num_classes)->capture_default_str();
  gen->add_option("--dim", synth.dim)->capture_default_str();
  gen->add_option("--per-class", synth.per_class)->capture_default_str();
  gen->add_option("--image-noise", synth.image_noise)->capture_default_str();
  gen->add_option("--text-noise", synth.text_noise)->capture_default_str();
  gen->add_option("--base-frac", synth.base_fraction)->capture_default_str();
  gen->add_option("--groups", synth.groups, "Superclasses (0 = independent class directions)")
      ->capture_default_str();
  gen->add_option("--group-spread", synth.group_spread)->capture_default_str();
  gen->add_option("--seed", synth.seed)->capture_default_str();
  gen->add_option("--out", gen_out, "Output OEF path")->required();

  TrainFlags train_flags;
  std::string train_data, run_dir = "run";
  bool resume = false, plot = false, quiet = false;
  auto* tr = app.add_subcommand("train", "Finetune class-embedding proxies with optional feature synthesis");
  tr->add_option("--data", train_data, "Input OEF file");
  tr->add_option("--run-dir", run_dir, "Run directory")->capture_default_str();
  tr->add_flag("--resume", resume, "Continue the run in --run-dir from its last saved epoch");
  tr->add_flag("--plot", plot, "Write learning_curve.svg");
  tr->add_flag("--quiet", quiet, "Only print the final line");
  add_train_flags(tr, train_flags);

  std::string eval_run, eval_data;
  bool eval_csv = false;
  std::vector<double> hmean;
  auto* ev = app.add_subcommand("eval", "Evaluate a finished run, or compute a harmonic mean");
  ev->add_option("--run-dir", eval_run);
  ev->add_option("--data", eval_data, "Override the data path stored in the run config");
  ev->add_flag("--csv", eval_csv, "Machine-readable output");
  ev->add_option("--hmean", hmean, "Harmonic mean of two accuracies A B")->expected(2);

  TrainFlags ablate_flags;
  std::string ablate_data, ablate_out = "ablation";
  int seeds = 3;
  auto* ab = app.add_subcommand("ablate", "Run the component / scheme / K / distillation ablation grid");
  ab->add_option("--data", ablate_data, "Input OEF file")->required();
  ab->add_option("--out", ablate_out, "Report directory")->capture_default_str();
  ab->add_option("--seeds", seeds, "Seeds per cell")->capture_default_str();
  add_train_flags(ab, ablate_flags);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  try {
    if (*gen) return cmd_gen_data(synth, gen_out);
    if (*tr) return cmd_train(train_flags, tr, train_data, run_dir, resume, plot, quiet);
    if (*ev) return cmd_eval(eval_run, eval_data, eval_csv, hmean);
    if (*ab) return cmd_ablate(ablate_flags, ab, ablate_data, ablate_out, seeds);
  } catch (const UsageError& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return kUsage;
  } catch (const NumericalError& e) {
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    return kNumerical;
  } catch (const ValidationError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kData;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kData;
  }
  return kUsage;
}
