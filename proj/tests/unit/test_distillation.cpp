#include <doctest.h>

#include "../support/oracles.hpp"
#include "ogen/distillation.hpp"

using namespace ogen;

namespace {

GeneratorParams filled(double v) {
  GeneratorParams p = init_params(2, 4, 8, 0);
  for (auto t : p.views()) t.setConstant(v);
  return p;
}

ScheduleConfig schedule(int t_max, double alpha = 0.9) {
  ScheduleConfig c;
  c.t_max = t_max;
  c.ema_alpha = alpha;
  return c;
}

}  // namespace

TEST_CASE("window schedule endpoints and monotonicity") {
  for (int t_max : {1, 2, 5, 10, 100, 200, 1000}) {
    const ScheduleConfig c = schedule(t_max);
    CHECK(window_size(0, c) == 2);
    CHECK(window_size(t_max, c) == 9);
    for (int t = 1; t <= t_max; ++t) CHECK(window_size(t, c) >= window_size(t - 1, c));
  }
  CHECK_THROWS_AS(window_size(11, schedule(10)), ValidationError);
  CHECK_THROWS_AS(window_size(-1, schedule(10)), ValidationError);
}

TEST_CASE("window schedule reference values") {
  // Independently tabulated: floor((1 + cos((T + t) / T * pi)) * 3.5 + 2).
  const std::vector<int> want = {2, 2, 2, 3, 4, 5, 6, 7, 8, 8, 9};
  for (int t = 0; t <= 10; ++t) CHECK(window_size(t, schedule(10)) == want[t]);
  for (int i = 0; i <= 10; ++i) CHECK(window_size(20 * i, schedule(200)) == want[i]);
}

TEST_CASE("schedule validation") {
  ScheduleConfig c;
  c.m_min = 5;
  c.m_max = 3;
  CHECK_THROWS_AS(validate(c), ValidationError);
  c = {};
  c.ema_alpha = 1.0;
  CHECK_THROWS_AS(validate(c), ValidationError);
}

TEST_CASE("EMA of identical checkpoints is a fixed point") {
  const GeneratorParams p = oracle::random_params(2, 4, 8, 1);
  const std::vector<GeneratorParams> same(6, p);
  const GeneratorParams t = ema_mean_teacher(same, 0.7);
  for (int i = 0; i < kNumTensors; ++i) CHECK((t.views()[i] - p.views()[i]).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("EMA is a convex combination with the documented weights") {
  const std::vector<GeneratorParams> ck = {filled(1.0), filled(2.0), filled(4.0)};
  const double a = 0.9;
  const GeneratorParams t = ema_mean_teacher(ck, a);
  const double want = (a * 1.0 + (1 - a) * 2.0) * a + (1 - a) * 4.0;
  CHECK(t.w_q(0, 0) == doctest::Approx(want));
  // Entries stay inside the hull of the inputs.
  const std::vector<GeneratorParams> mixed = {oracle::random_params(2, 4, 8, 2), oracle::random_params(2, 4, 8, 3),
                                              oracle::random_params(2, 4, 8, 4)};
  const GeneratorParams m = ema_mean_teacher(mixed, 0.6);
  for (int i = 0; i < kNumTensors; ++i)
    for (Eigen::Index j = 0; j < m.views()[i].size(); ++j) {
      double lo = 1e9, hi = -1e9;
      for (const auto& c : mixed) {
        lo = std::min(lo, c.views()[i].data()[j]);
        hi = std::max(hi, c.views()[i].data()[j]);
      }
      CHECK(m.views()[i].data()[j] >= lo - 1e-12);
      CHECK(m.views()[i].data()[j] <= hi + 1e-12);
    }
  CHECK_THROWS_AS(ema_mean_teacher(std::vector<GeneratorParams>{}, 0.5), ValidationError);
}

TEST_CASE("teacher queue stores deep copies, evicts the oldest and keeps epochs increasing") {
  TeacherQueue q(schedule(100));
  CHECK(q.capacity() == 10);
  GeneratorParams p = filled(0.0);
  for (int e = 0; e < 15; ++e) {
    p.w_q.setConstant(e);
    q.push_checkpoint(e, p);
  }
  CHECK(q.size() == 10);
  CHECK(q.entries().front().epoch == 5);
  CHECK(q.entries().front().params.w_q(0, 0) == 5.0);
  p.w_q.setConstant(-1);
  CHECK(q.entries().back().params.w_q(0, 0) == 14.0);
  CHECK_THROWS_AS(q.push_checkpoint(14, p), ValidationError);
  CHECK_THROWS_AS(q.push_checkpoint(3, p), ValidationError);
  CHECK_THROWS_AS(TeacherQueue(schedule(10)).window_teacher(2), ValidationError);
}

TEST_CASE("window teacher uses the last m+1 checkpoints") {
  TeacherQueue q(schedule(100, 0.5));
  for (int e = 0; e < 6; ++e) q.push_checkpoint(e, filled(e));
  TeacherWindow info;
  const GeneratorParams t = q.window_teacher(2, &info);
  CHECK(info.first_epoch == 3);
  CHECK(info.last_epoch == 5);
  CHECK(t.w_k(0, 0) == doctest::Approx((0.5 * 3 + 0.5 * 4) * 0.5 + 0.5 * 5));
  q.window_teacher(50, &info);
  CHECK(info.first_epoch == 0);
}

TEST_CASE("ALMT teacher ignores checkpoints outside its window") {
  const ScheduleConfig c = schedule(10);
  TeacherQueue a(c), b(c);
  for (int e = 0; e < 10; ++e) {
    const GeneratorParams p = oracle::random_params(2, 4, 8, e);
    a.push_checkpoint(e, p);
    b.push_checkpoint(e, p);
  }
  // At t = 3 the window is m = 3: epochs 6..9. Rebuild b with epochs 0..5 perturbed.
  TeacherQueue perturbed(c);
  for (int e = 0; e < 10; ++e) {
    GeneratorParams p = b.entries()[e].params;
    if (e < 6) p.w_v.array() += 10.0;
    perturbed.push_checkpoint(e, p);
  }
  TeacherWindow info;
  const GeneratorParams ta = almt_teacher(a, 3, &info);
  CHECK(info.first_epoch == 6);
  CHECK(almt_teacher(perturbed, 3) == ta);
  // Perturbing inside the window does change it.
  TeacherQueue inside(c);
  for (int e = 0; e < 10; ++e) {
    GeneratorParams p = a.entries()[e].params;
    if (e == 7) p.w_v.array() += 10.0;
    inside.push_checkpoint(e, p);
  }
  CHECK_FALSE(almt_teacher(inside, 3) == ta);
}
