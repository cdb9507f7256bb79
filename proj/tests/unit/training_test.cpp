#include <doctest.h>

#include <chrono>
#include <cmath>
#include <random>
#include <set>

#include "fsnt/errors.hpp"
#include "fsnt/training.hpp"
#include "synthetic.hpp"

using namespace fsnt;

namespace {

ModelConfig small_model(std::size_t width) {
  ModelConfig c;
  c.layers = 1;
  c.heads = 2;
  c.d_model = 8;
  c.d_ff = 8;
  c.window = 4;
  c.mlp_hidden = 8;
  c.seed = 1;
  (void)width;
  return c;
}

TrainConfig small_train() {
  TrainConfig t;
  t.batch_size = 16;
  t.max_epochs = 4;
  t.steps_per_epoch = 5;
  t.patience = 2;
  t.seed = 2;
  return t;
}

}  // namespace

TEST_CASE("train config validation") {
  TrainConfig t;
  CHECK_NOTHROW(t.validate());
  t.patience = 0;
  CHECK_THROWS_AS(t.validate(), ConfigError);
  t = TrainConfig{};
  t.monitor = "eval_f1";
  CHECK_THROWS_AS(t.validate(), ConfigError);
  t = TrainConfig{};
  t.learning_rate = 0.0;
  CHECK_THROWS_AS(t.validate(), ConfigError);
  t = TrainConfig{};
  CHECK(TrainConfig::from_json(t.to_json()).to_json() == t.to_json());
}

TEST_CASE("early stopping with patience 5") {
  EarlyStopping s(5);
  for (double v : {1.0, 0.9, 0.95, 0.9, 0.91, 0.92}) s.observe(v);
  CHECK_FALSE(s.should_stop());
  CHECK(s.best_epoch() == 2);
  CHECK(s.observe(0.89));
  for (double v : {0.95, 0.9, 0.89, 0.91}) s.observe(v);
  CHECK_FALSE(s.should_stop());
  s.observe(0.94);
  CHECK(s.should_stop());
  CHECK(s.best_epoch() == 7);
  CHECK(s.best_value() == 0.89);
}

TEST_CASE("batch sampler visits every index once per pass") {
  BatchSampler s(10, 4);
  std::multiset<std::size_t> seen;
  for (int i = 0; i < 5; ++i) {
    for (auto v : s.next(4)) seen.insert(v);
  }
  for (std::size_t i = 0; i < 10; ++i) CHECK(seen.count(i) == 2);
  CHECK_THROWS_AS(BatchSampler(0, 1), DataError);
  BatchSampler a(50, 7);
  BatchSampler b(50, 7);
  CHECK(a.next(20) == b.next(20));
}

TEST_CASE("training is deterministic, logs every epoch and restores the best weights") {
  const auto data = testing::last_flow_stream(400, 5, 4, 3);
  auto run = [&](std::vector<EpochLog>* logs) {
    Model m = Model::build(small_model(5), data.layout);
    TrainHooks hooks;
    FakeClock clock(std::chrono::milliseconds(1));
    hooks.clock = &clock;
    hooks.on_epoch = [&](const EpochLog& l, const Classifier&) { logs->push_back(l); };
    TrainResult r = train(m, data.train, data.eval, small_train(), hooks);
    return std::make_pair(std::move(m), std::move(r));
  };
  std::vector<EpochLog> la;
  std::vector<EpochLog> lb;
  auto [ma, ra] = run(&la);
  auto [mb, rb] = run(&lb);
  CHECK(ra.epochs.size() == la.size());
  CHECK(ra.optimizer_steps == static_cast<std::int64_t>(5 * ra.epochs.size()));
  CHECK(ra.step_seconds.size() == 5 * ra.epochs.size());
  for (double s : ra.step_seconds) CHECK(s == doctest::Approx(0.001));
  for (std::size_t i = 0; i < la.size(); ++i) {
    CHECK(la[i].epoch == i + 1);
    CHECK(la[i].eval_loss == lb[i].eval_loss);
  }
  for (const auto& [name, var] : ma.params()) CHECK(var.value() == mb.params().at(name).value());
  const Evaluation ev = evaluate_full(ma, data.eval, 0.5);
  const EpochLog& best = ra.epochs.at(ra.best_epoch - 1);
  CHECK(ev.loss == best.eval_loss);
  CHECK(ev.report == best.eval_metrics);
}

TEST_CASE("scripted monitor forces an early stop and restore") {
  const auto data = testing::last_flow_stream(200, 5, 4, 4);
  Model m = Model::build(small_model(5), data.layout);
  TrainConfig t = small_train();
  t.max_epochs = 10;
  const std::vector<double> script = {0.5, 0.4, 0.6, 0.7, 0.8, 0.9, 1.0};
  std::vector<Tensor> at_epoch2;
  TrainHooks hooks;
  hooks.monitor_override = [&](const EpochLog& l) { return script.at(l.epoch - 1); };
  hooks.on_epoch = [&](const EpochLog& l, const Classifier& c) {
    if (l.epoch == 2) at_epoch2 = c.params().snapshot();
  };
  const TrainResult r = train(m, data.train, data.eval, t, hooks);
  CHECK(r.epochs.size() == 4);
  CHECK(r.stopped_early);
  CHECK(r.best_epoch == 2);
  const auto now = m.params().snapshot();
  for (std::size_t i = 0; i < now.size(); ++i) CHECK(now[i] == at_epoch2[i]);
}

TEST_CASE("training input checks") {
  const auto data = testing::last_flow_stream(100, 5, 4, 5);
  Model m = Model::build(small_model(5), FeatureLayout{6, {}});
  CHECK_THROWS_AS(train(m, data.train, data.eval, small_train()), ShapeError);
  Model ok = Model::build(small_model(5), data.layout);
  CHECK_THROWS_AS(train(ok, WindowSet::from_windows({}), data.eval, small_train()), DataError);
}

TEST_CASE("threshold ties classify as attack") {
  const auto data = testing::last_flow_stream(40, 5, 4, 6);
  Model m = Model::build(small_model(5), data.layout);
  const auto probs = predict(m, data.eval);
  const Evaluation ev = evaluate_full(m, data.eval, probs[0]);
  CHECK(ev.predictions[0] == 1);
}
