#include "ogen/ablation.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <mutex>
#include <thread>
#include <tuple>

namespace ogen {

namespace {

// Identity of a training configuration for de-duplicating shared rows.
auto config_key(const TrainConfig& c) {
  return std::make_tuple(static_cast<int>(c.scheme), static_cast<int>(c.distill), c.fixed_window, c.k,
                         static_cast<int>(c.neighbors));
}

}  // namespace

const CellSummary& AblationReport::find(const std::string& table, const std::string& row) const {
  for (const auto& r : rows)
    if (r.cell.table == table && r.cell.row == row) return r;
  throw std::out_of_range("no ablation row " + table + "/" + row);
}

std::vector<AblationCell> ablation_grid(const TrainConfig& base) {
  auto with = [&](Scheme s, DistillMode d, int k = 3, NeighborMode n = NeighborMode::kKnn, int window = 2) {
    TrainConfig c = base;
    c.scheme = s;
    c.distill = d;
    c.k = k;
    c.neighbors = n;
    c.fixed_window = window;
    return c;
  };
  std::vector<AblationCell> g;
  g.push_back({"components", "generator off, ALMT off", with(Scheme::kNone, DistillMode::kNone)});
  g.push_back({"components", "generator on, ALMT off", with(Scheme::kJoint, DistillMode::kNone)});
  g.push_back({"components", "generator on, ALMT on", with(Scheme::kJoint, DistillMode::kAlmt)});

  g.push_back({"scheme", "no generator", with(Scheme::kNone, DistillMode::kNone)});
  g.push_back({"scheme", "no extrapolation", with(Scheme::kDirect, DistillMode::kNone)});
  g.push_back({"scheme", "extrapolate per class", with(Scheme::kPerClass, DistillMode::kNone)});
  g.push_back({"scheme", "extrapolate jointly", with(Scheme::kJoint, DistillMode::kNone)});

  for (int k = 1; k <= 4; ++k)
    g.push_back({"knn", "kNN K=" + std::to_string(k), with(Scheme::kJoint, DistillMode::kNone, k)});
  g.push_back({"knn", "random K=3", with(Scheme::kJoint, DistillMode::kNone, 3, NeighborMode::kRandom)});

  g.push_back({"distill", "no distillation", with(Scheme::kJoint, DistillMode::kNone)});
  g.push_back({"distill", "MT", with(Scheme::kJoint, DistillMode::kMeanTeacher)});
  g.push_back({"distill", "ALMT m=" + std::to_string(base.m_min),
               with(Scheme::kJoint, DistillMode::kFixedWindow, 3, NeighborMode::kKnn, base.m_min)});
  g.push_back({"distill", "ALMT m=" + std::to_string(base.m_max),
               with(Scheme::kJoint, DistillMode::kFixedWindow, 3, NeighborMode::kKnn, base.m_max)});
  g.push_back({"distill", "ALMT m_t", with(Scheme::kJoint, DistillMode::kAlmt)});
  return g;
}

std::pair<double, double> mean_std(const std::vector<double>& xs) {
  if (xs.empty()) return {0.0, 0.0};
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  if (xs.size() < 2) return {mean, 0.0};
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / static_cast<double>(xs.size() - 1))};
}

AblationReport ablate(const EmbeddingSet& set, const TrainConfig& base, const std::vector<std::uint64_t>& seeds,
                      int threads, const AblationProgress& progress) {
  if (seeds.empty()) throw ValidationError("ablation needs at least one seed");
  validate(base);
  const auto grid = ablation_grid(base);

  // Distinct configurations, each run once per seed.
  std::map<decltype(config_key(base)), std::size_t> index;
  std::vector<const AblationCell*> unique;
  for (const auto& cell : grid) {
    validate(cell.cfg);
    if (index.emplace(config_key(cell.cfg), unique.size()).second) unique.push_back(&cell);
  }
  struct Job {
    std::size_t config;
    std::size_t seed;
  };
  std::vector<Job> jobs;
  for (std::size_t c = 0; c < unique.size(); ++c)
    for (std::size_t s = 0; s < seeds.size(); ++s) jobs.push_back({c, s});
  std::vector<std::vector<Accuracy>> results(unique.size(), std::vector<Accuracy>(seeds.size()));

  std::atomic<std::size_t> next{0};
  std::mutex mu;
  std::exception_ptr failure;
  auto worker = [&] {
    for (;;) {
      const std::size_t j = next.fetch_add(1);
      if (j >= jobs.size()) return;
      const auto [c, s] = jobs[j];
      try {
        TrainConfig cfg = unique[c]->cfg;
        cfg.seed = seeds[s];
        const TrainResult r = train(set, cfg);
        const auto& last = r.metrics.epochs.back();
        const Accuracy acc{last.base_acc, last.new_acc, last.harmonic};
        results[c][s] = acc;
        if (progress) {
          std::lock_guard lock(mu);
          progress(*unique[c], seeds[s], acc);
        }
      } catch (...) {
        std::lock_guard lock(mu);
        if (!failure) failure = std::current_exception();
        next = jobs.size();
      }
    }
  };
  const int n_threads = std::max(1, std::min<int>(threads, static_cast<int>(jobs.size())));
  std::vector<std::thread> pool;
  for (int t = 1; t < n_threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);

  AblationReport report;
  report.seeds = seeds;
  for (const auto& cell : grid) {
    CellSummary row;
    row.cell = cell;
    row.per_seed = results[index.at(config_key(cell.cfg))];
    std::vector<double> b, n, h;
    for (const auto& a : row.per_seed) {
      b.push_back(a.base);
      n.push_back(a.novel);
      h.push_back(a.harmonic);
    }
    std::tie(row.base_mean, row.base_std) = mean_std(b);
    std::tie(row.new_mean, row.new_std) = mean_std(n);
    std::tie(row.h_mean, row.h_std) = mean_std(h);
    report.rows.push_back(std::move(row));
  }
  return report;
}

std::vector<std::filesystem::path> write_ablation_reports(const AblationReport& report,
                                                          const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> written;
  for (const auto& table : kAblationTables) {
    const auto path = dir / ("ablation_" + table + ".csv");
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw ValidationError("cannot write " + path.string());
    out << "row,scheme,distill,k,neighbors,window,seeds,base_mean,base_std,new_mean,new_std,H_mean,H_std\n";
    for (const auto& r : report.rows) {
      if (r.cell.table != table) continue;
      const TrainConfig& c = r.cell.cfg;
      const int window = c.distill == DistillMode::kFixedWindow ? c.fixed_window : 0;
      char buf[256];
      std::snprintf(buf, sizeof buf, "%.4f,%.4f,%.4f,%.4f,%.4f,%.4f", 100 * r.base_mean, 100 * r.base_std,
                    100 * r.new_mean, 100 * r.new_std, 100 * r.h_mean, 100 * r.h_std);
      out << '"' << r.cell.row << "\"," << to_string(c.scheme) << ',' << to_string(c.distill) << ',' << c.k << ','
          << to_string(c.neighbors) << ',' << window << ',' << r.per_seed.size() << ',' << buf << '\n';
    }
    written.push_back(path);
  }
  return written;
}

}  // namespace ogen
