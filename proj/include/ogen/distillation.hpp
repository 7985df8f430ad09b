#pragma once

#include <deque>
#include <span>
#include <utility>
#include <vector>

#include "ogen/generator.hpp"

namespace ogen {

struct ScheduleConfig {
  int m_min = 2;
  int m_max = 9;
  int t_max = 200;
  double ema_alpha = 0.99;
};

void validate(const ScheduleConfig& cfg);

// Adaptive window size m_t: grows from m_min at t = 0 to m_max at t = t_max
// along half a cosine period.
int window_size(int t, const ScheduleConfig& cfg);

// EMA over checkpoints in order: the teacher starts at the first checkpoint,
// then teacher = alpha * teacher + (1 - alpha) * next for each later one.
GeneratorParams ema_mean_teacher(std::span<const GeneratorParams> checkpoints, double alpha);
GeneratorParams ema_mean_teacher(const std::vector<const GeneratorParams*>& checkpoints, double alpha);

struct TeacherWindow {
  int first_epoch = -1;
  int last_epoch = -1;
  int window = 0;  // m used to pick the window
};

// Bounded FIFO of (epoch, params) checkpoints, epochs strictly increasing.
class TeacherQueue {
 public:
  struct Entry {
    int epoch;
    GeneratorParams params;
  };

  // capacity 0 means m_max + 1.
  explicit TeacherQueue(ScheduleConfig cfg, int capacity = 0);

  // Stores a deep copy; evicts the oldest entry beyond capacity. Throws
  // ValidationError unless epoch exceeds the last stored epoch.
  void push_checkpoint(int epoch, const GeneratorParams& params);

  // EMA over the last min(m + 1, size()) checkpoints.
  GeneratorParams window_teacher(int m, TeacherWindow* info = nullptr) const;

  const ScheduleConfig& schedule() const { return cfg_; }
  int capacity() const { return capacity_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  const std::deque<Entry>& entries() const { return entries_; }

 private:
  ScheduleConfig cfg_;
  int capacity_;
  std::deque<Entry> entries_;
};

// Adaptive local mean teacher at epoch t: window_teacher(window_size(t)).
GeneratorParams almt_teacher(const TeacherQueue& queue, int t, TeacherWindow* info = nullptr);

}  // namespace ogen
