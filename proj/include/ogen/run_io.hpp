#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "ogen/trainer.hpp"

namespace ogen {

// Run directory layout:
//   config.json              training configuration and data path
//   metrics.csv              one row per finished epoch
//   checkpoints/epoch_NNNN   teacher-queue checkpoints (.json + .bin)
//   checkpoints/final        generator and proxies after the last epoch
//   state/                   optimizer and rng state for --resume
struct RunPaths {
  std::filesystem::path root;
  std::filesystem::path config() const { return root / "config.json"; }
  std::filesystem::path metrics() const { return root / "metrics.csv"; }
  std::filesystem::path checkpoints() const { return root / "checkpoints"; }
  std::filesystem::path final_checkpoint() const { return checkpoints() / "final"; }
  std::filesystem::path state() const { return root / "state"; }
};

std::string config_to_json(const TrainConfig& cfg, const std::string& data_path);
TrainConfig config_from_json(const std::string& text, std::string* data_path = nullptr);

inline const char* kMetricsHeader =
    "epoch,base_acc,new_acc,H,known_ce,synth_ce,distill_mse,m_t,teacher_first,teacher_last";
std::string metrics_row(const EpochMetrics& m);
std::vector<EpochMetrics> read_metrics_csv(const std::filesystem::path& path);

void save_train_state(const RunPaths& run, const TrainState& state, const TrainConfig& cfg);
TrainState load_train_state(const RunPaths& run, const TrainConfig& cfg);

// Base/new accuracy learning curves as a standalone SVG line chart.
std::string learning_curve_svg(const std::vector<EpochMetrics>& epochs, const std::string& title);

}  // namespace ogen
