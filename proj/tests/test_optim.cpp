// Optimizer arithmetic against closed forms, the reference-Adam equivalence,
// gradient clipping, the warmup/restart schedule, and the early stopper.

#include <cmath>
#include <vector>

#include "doctest.h"
#include "tenext/optim.hpp"
#include "tenext/rng.hpp"

using namespace tenext;

namespace {

Var<float> scalar_param(float v, const std::string& name) {
  return Var<float>::param(Tensor<float>::full({1, 1}, v), name);
}

void set_grad(Var<float>& p, float g) {
  p.grad();  // materialize the lazily allocated gradient buffer
  p.node().grad.fill(g);
}

}  // namespace

TEST_CASE("zero gradient with no decay leaves parameters untouched") {
  std::vector<Var<float>> params{scalar_param(1.25f, "w")};
  AdamWConfig cfg;
  cfg.weight_decay = 0.0;
  AdamW opt(&params, cfg);
  set_grad(params[0], 0.0f);
  for (int i = 0; i < 5; ++i) opt.step(0.1);
  CHECK(params[0].value().data[0] == 1.25f);
}

TEST_CASE("decay applies even at zero gradient (decoupling)") {
  // theta <- theta - lr * lambda * theta = 1 - 0.1 * 0.05 = 0.995
  std::vector<Var<float>> params{scalar_param(1.0f, "w")};
  AdamWConfig cfg;
  cfg.weight_decay = 0.05;
  AdamW opt(&params, cfg);
  set_grad(params[0], 0.0f);
  opt.step(0.1);
  // The parameter is stored in float, so compare against 0.995 rounded the
  // same way rather than the exact decimal.
  CHECK(params[0].value().data[0] == doctest::Approx(0.995).epsilon(1e-6));
  CHECK(params[0].value().data[0] != 1.0f);
}

TEST_CASE("first step with unit gradient moves by almost exactly lr") {
  // m-hat = v-hat = 1 after bias correction, so the step is lr/(1+eps).
  std::vector<Var<float>> params{scalar_param(1.0f, "w")};
  AdamWConfig cfg;
  cfg.weight_decay = 0.0;
  AdamW opt(&params, cfg);
  set_grad(params[0], 1.0f);
  opt.step(0.1);
  CHECK(params[0].value().data[0] == doctest::Approx(0.9).epsilon(1e-6));
}

TEST_CASE("quadratic bowl converges") {
  // f(theta) = theta^2, gradient 2*theta, 200 steps at lr 0.1.
  std::vector<Var<float>> params{scalar_param(3.0f, "w")};
  AdamWConfig cfg;
  cfg.weight_decay = 0.0;
  AdamW opt(&params, cfg);
  for (int i = 0; i < 200; ++i) {
    set_grad(params[0], 2.0f * params[0].value().data[0]);
    opt.step(0.1);
  }
  CHECK(std::abs(params[0].value().data[0]) < 1e-2);
}

TEST_CASE("with zero decay AdamW follows plain Adam elementwise") {
  const int n = 32;
  Rng rng(99);
  Tensor<float> init = Tensor<float>::zeros({n, 1});
  for (auto& v : init.data) v = static_cast<float>(rng.uniform(-1.0, 1.0));

  std::vector<Var<float>> params{Var<float>::param(init, "w")};
  AdamWConfig cfg;
  cfg.weight_decay = 0.0;
  AdamW opt(&params, cfg);

  // Reference Adam carried alongside: the same recursion with no decay term.
  // Moments live in float between steps but each step is taken from the
  // unrounded update, mirroring the optimizer's storage discipline.
  std::vector<float> theta(init.data.begin(), init.data.end());
  std::vector<float> m(n, 0.0f), v(n, 0.0f);

  Rng grads(123);
  for (int t = 1; t <= 50; ++t) {
    Tensor<float> g = Tensor<float>::zeros({n, 1});
    for (auto& x : g.data) x = static_cast<float>(grads.uniform(-2.0, 2.0));
    params[0].node().grad = g;
    opt.step(2e-3);

    const double bc1 = 1.0 - std::pow(0.9, t), bc2 = 1.0 - std::pow(0.999, t);
    for (size_t i = 0; i < n; ++i) {
      const double gi = g.data[i];
      const double mi = 0.9 * m[i] + 0.1 * gi;
      const double vi = 0.999 * v[i] + 0.001 * gi * gi;
      m[i] = static_cast<float>(mi);
      v[i] = static_cast<float>(vi);
      theta[i] = static_cast<float>(theta[i] -
                                    2e-3 * (mi / bc1) / (std::sqrt(vi / bc2) + 1e-8));
    }
  }
  for (size_t i = 0; i < static_cast<size_t>(n); ++i)
    CHECK(params[0].value().data[i] == theta[i]);
}

TEST_CASE("non-finite gradients are reported with the parameter name") {
  std::vector<Var<float>> params{scalar_param(1.0f, "enc0.down.w")};
  AdamW opt(&params, AdamWConfig{});
  set_grad(params[0], std::numeric_limits<float>::quiet_NaN());
  CHECK_THROWS_WITH_AS(opt.step(0.1), doctest::Contains("enc0.down.w"), std::runtime_error);
}

TEST_CASE("global-norm clip rescales only past the threshold") {
  std::vector<Var<float>> params{scalar_param(0.0f, "a"), scalar_param(0.0f, "b")};
  set_grad(params[0], 3.0f);
  set_grad(params[1], 4.0f);  // joint norm 5

  SUBCASE("above the cap") {
    const double pre = clip_global_norm(params, 1.0);
    CHECK(pre == doctest::Approx(5.0));
    const double g0 = params[0].grad().data[0], g1 = params[1].grad().data[0];
    CHECK(std::sqrt(g0 * g0 + g1 * g1) == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(g0 / g1 == doctest::Approx(0.75));  // direction preserved
  }
  SUBCASE("below the cap") {
    clip_global_norm(params, 10.0);
    CHECK(params[0].grad().data[0] == 3.0f);
    CHECK(params[1].grad().data[0] == 4.0f);
  }
  SUBCASE("disabled at zero") {
    clip_global_norm(params, 0.0);
    CHECK(params[0].grad().data[0] == 3.0f);
  }
}

namespace {

// Independent closed form of the schedule: warmup ramp, then the restart
// segment located analytically from the geometric series of lengths.
double reference_lr(const LrSchedule& s, double e) {
  if (s.warmup_epochs > 0 && e < s.warmup_epochs) return s.lr0 * e / s.warmup_epochs;
  double tau = e - s.warmup_epochs;
  double len = s.t0;
  if (s.t_mult == 1) {
    tau = std::fmod(tau, len);
  } else {
    // Segment i covers [t0*(m^i - 1)/(m - 1), ...); invert with logs.
    const double m = s.t_mult;
    const double i = std::floor(std::log(tau * (m - 1.0) / s.t0 + 1.0) / std::log(m));
    const double seg_start = s.t0 * (std::pow(m, i) - 1.0) / (m - 1.0);
    len = s.t0 * std::pow(m, i);
    tau -= seg_start;
  }
  return s.lr_min + (s.lr0 - s.lr_min) * 0.5 * (1.0 + std::cos(M_PI * tau / len));
}

}  // namespace

TEST_CASE("schedule anchors: warmup start, restart tops, segment midpoint") {
  LrSchedule s;
  s.lr0 = 5e-3;
  s.lr_min = 5e-5;
  s.warmup_epochs = 80;
  s.t0 = 20;
  s.t_mult = 2;
  s.steps_per_epoch = 4;

  CHECK(s.lr_at(0, 0) == 0.0);
  CHECK(s.lr_at(80, 0) == doctest::Approx(5e-3).epsilon(1e-12));     // first cosine top
  CHECK(s.lr_at(100, 0) == doctest::Approx(5e-3).epsilon(1e-12));    // restart at 80+20
  CHECK(s.lr_at(140, 0) == doctest::Approx(5e-3).epsilon(1e-12));    // next at 80+20+40
  CHECK(s.lr_at(90, 0) ==
        doctest::Approx(5e-5 + 0.5 * (5e-3 - 5e-5)).epsilon(1e-12));  // midpoint
  // Warmup is linear in fractional epochs.
  CHECK(s.lr_at(40, 0) == doctest::Approx(2.5e-3).epsilon(1e-12));
  CHECK(s.lr_at(40, 2) == doctest::Approx(5e-3 * 40.5 / 80.0).epsilon(1e-12));
}

TEST_CASE("schedule matches the independent closed form everywhere") {
  for (int t_mult : {1, 2, 3}) {
    LrSchedule s;
    s.lr0 = 5e-3;
    s.lr_min = 5e-5;
    s.warmup_epochs = 80;
    s.t0 = 20;
    s.t_mult = t_mult;
    s.steps_per_epoch = 3;
    for (int epoch = 0; epoch < 400; epoch += 7)
      for (int step = 0; step < 3; ++step) {
        const double e = epoch + step / 3.0;
        INFO("t_mult ", t_mult, " epoch ", epoch, " step ", step);
        CHECK(s.lr_at(epoch, step) == doctest::Approx(reference_lr(s, e)).epsilon(1e-12));
      }
  }
}

TEST_CASE("schedule is continuous inside a segment") {
  LrSchedule s;
  s.lr0 = 1.0;
  s.lr_min = 0.01;
  s.warmup_epochs = 4;
  s.t0 = 8;
  s.t_mult = 2;
  s.steps_per_epoch = 100;
  double prev = s.lr_at(4, 0);
  for (int k = 1; k < 800; ++k) {  // epochs 4..12: one full segment
    const double cur = s.lr_at(4 + k / 100, k % 100);
    CHECK(std::abs(cur - prev) < 0.01);  // max slope of the cosine over 1/100 epoch
    prev = cur;
  }
}

TEST_CASE("early stopper: patience 1 with F1 falling from the second epoch") {
  EarlyStopper stop;
  stop.patience = 1;
  CHECK(!stop.observe(0, 0.8));  // best
  CHECK(stop.observe(1, 0.7));   // one epoch without improvement -> stop
  CHECK(stop.best_epoch == 0);
  CHECK(stop.best == 0.8);
}

TEST_CASE("early stopper requires strict improvement") {
  EarlyStopper stop;
  stop.patience = 2;
  CHECK(!stop.observe(0, 0.5));
  CHECK(!stop.observe(1, 0.5));  // tie is not improvement
  CHECK(stop.observe(2, 0.5));
  CHECK(stop.best_epoch == 0);
}
