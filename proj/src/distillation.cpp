#include "ogen/distillation.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace ogen {

void validate(const ScheduleConfig& cfg) {
  if (cfg.m_min < 1 || cfg.m_min > cfg.m_max) throw ValidationError("schedule needs 1 <= m_min <= m_max");
  if (cfg.t_max < 1) throw ValidationError("schedule needs t_max >= 1");
  if (!(cfg.ema_alpha > 0.0 && cfg.ema_alpha < 1.0)) throw ValidationError("ema_alpha must lie in (0, 1)");
}

int window_size(int t, const ScheduleConfig& cfg) {
  validate(cfg);
  if (t < 0 || t > cfg.t_max)
    throw ValidationError("epoch " + std::to_string(t) + " outside [0, " + std::to_string(cfg.t_max) + "]");
  const double phase = static_cast<double>(cfg.t_max + t) / cfg.t_max * std::numbers::pi;
  const double m = (1.0 + std::cos(phase)) * 0.5 * (cfg.m_max - cfg.m_min) + cfg.m_min;
  // The slack keeps exactly-integral values from flooring one short.
  const int floored = static_cast<int>(std::floor(m + 1e-9));
  return std::clamp(floored, cfg.m_min, cfg.m_max);
}

GeneratorParams ema_mean_teacher(const std::vector<const GeneratorParams*>& checkpoints, double alpha) {
  if (checkpoints.empty()) throw ValidationError("EMA teacher needs at least one checkpoint");
  GeneratorParams teacher = *checkpoints.front();
  auto acc = teacher.views();
  for (std::size_t i = 1; i < checkpoints.size(); ++i) {
    if (!teacher.same_shape(*checkpoints[i])) throw ValidationError("checkpoint shapes differ");
    const auto next = checkpoints[i]->views();
    for (int j = 0; j < kNumTensors; ++j) acc[j] = alpha * acc[j] + (1.0 - alpha) * next[j];
  }
  return teacher;
}

GeneratorParams ema_mean_teacher(std::span<const GeneratorParams> checkpoints, double alpha) {
  std::vector<const GeneratorParams*> ptrs;
  for (const auto& c : checkpoints) ptrs.push_back(&c);
  return ema_mean_teacher(ptrs, alpha);
}

TeacherQueue::TeacherQueue(ScheduleConfig cfg, int capacity)
    : cfg_(cfg), capacity_(capacity > 0 ? capacity : cfg.m_max + 1) {
  validate(cfg_);
}

void TeacherQueue::push_checkpoint(int epoch, const GeneratorParams& params) {
  if (!entries_.empty() && epoch <= entries_.back().epoch)
    throw ValidationError("checkpoint epoch " + std::to_string(epoch) + " does not follow " +
                          std::to_string(entries_.back().epoch));
  entries_.push_back({epoch, params});
  while (static_cast<int>(entries_.size()) > capacity_) entries_.pop_front();
}

GeneratorParams TeacherQueue::window_teacher(int m, TeacherWindow* info) const {
  if (entries_.empty()) throw ValidationError("teacher queue is empty");
  const std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(m) + 1, entries_.size());
  std::vector<const GeneratorParams*> window;
  for (std::size_t i = entries_.size() - n; i < entries_.size(); ++i) window.push_back(&entries_[i].params);
  if (info) *info = {entries_[entries_.size() - n].epoch, entries_.back().epoch, m};
  return ema_mean_teacher(window, cfg_.ema_alpha);
}

GeneratorParams almt_teacher(const TeacherQueue& queue, int t, TeacherWindow* info) {
  return queue.window_teacher(window_size(t, queue.schedule()), info);
}

}  // namespace ogen
