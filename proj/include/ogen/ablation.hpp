#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "ogen/trainer.hpp"

namespace ogen {

// One row of one ablation table.
struct AblationCell {
  std::string table;  // components, scheme, knn, distill
  std::string row;
  TrainConfig cfg;
};

struct CellSummary {
  AblationCell cell;
  std::vector<Accuracy> per_seed;  // final-epoch accuracies, one per seed
  double base_mean = 0, base_std = 0;
  double new_mean = 0, new_std = 0;
  double h_mean = 0, h_std = 0;
};

struct AblationReport {
  std::vector<std::uint64_t> seeds;
  std::vector<CellSummary> rows;

  const CellSummary& find(const std::string& table, const std::string& row) const;
};

inline const std::vector<std::string> kAblationTables = {"components", "scheme", "knn", "distill"};

// Component, extrapolation-scheme, neighbor-count and distillation tables
// built around `base`.
std::vector<AblationCell> ablation_grid(const TrainConfig& base);

// Sample mean and standard deviation (n - 1 denominator, 0 for n = 1).
std::pair<double, double> mean_std(const std::vector<double>& xs);

using AblationProgress = std::function<void(const AblationCell&, std::uint64_t seed, const Accuracy&)>;

// Trains every distinct grid configuration once per seed, using up to
// `threads` workers, and aggregates final-epoch accuracies per cell.
AblationReport ablate(const EmbeddingSet& set, const TrainConfig& base, const std::vector<std::uint64_t>& seeds,
                      int threads = 1, const AblationProgress& progress = {});

// Writes ablation_<table>.csv for every table; returns the paths written.
std::vector<std::filesystem::path> write_ablation_reports(const AblationReport& report,
                                                          const std::filesystem::path& dir);

}  // namespace ogen
