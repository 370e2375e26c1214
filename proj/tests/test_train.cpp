// Copyright (C) 2026 the moefuse authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "moefuse/analytics.hpp"
#include "moefuse/train.hpp"
#include "testutil.hpp"

using namespace moefuse;

namespace {

/// Small hand-built two-modality dataset.
Dataset tiny_dataset(std::size_t subjects, std::uint64_t seed,
                     std::size_t d0 = 4, std::size_t d1 = 3) {
  Dataset data;
  data.header.modalities = default_modality_labels(2);
  data.header.feature_dims = {d0, d1};
  Rng rng(seed);
  for (std::size_t i = 0; i < subjects; ++i) {
    SubjectRecord s;
    s.subject_id = "s" + std::to_string(i);
    s.participant_id = "p" + std::to_string(i);
    s.availability = static_cast<AvailabilityBits>(1 + rng.uniform_index(3));
    for (std::size_t m = 0; m < 2; ++m)
      if ((s.availability >> m) & 1u)
        s.features[m] =
            testutil::random_vector(rng, m == 0 ? d0 : d1);
    s.baseline_score = rng.uniform(1.5, 8.0);
    s.target_delta = rng.normal(0.5, 1.0);
    data.subjects.push_back(std::move(s));
  }
  return data;
}

ModelConfig tiny_model_config() {
  ModelConfig mc;
  mc.modality_labels = default_modality_labels(2);
  mc.feature_dims = {4, 3};
  mc.model_dim = 8;
  mc.encoder_hidden = 6;
  mc.attention_heads = 2;
  mc.head_hidden = 6;
  return mc;
}

RoutingConfig tiny_routing() {
  RoutingConfig rc;
  rc.strategy = RoutingStrategy::PerModality;
  rc.expert_count = 4;
  rc.top_k = 2;
  rc.expert_hidden = 5;
  return rc;
}

TrainConfig tiny_train() {
  TrainConfig tc;
  tc.batch_size = 8;
  tc.max_epochs = 3;
  tc.patience = 3;
  tc.seeds = {1};
  tc.parallel_seeds = false;
  return tc;
}

}  // namespace

TEST_CASE("adam step with zero gradients leaves parameters unchanged") {
  FusionModel model(tiny_model_config(), tiny_routing(), 5);
  std::vector<std::vector<double>> before;
  for (const auto& p : model.parameters()) before.push_back(p.tensor.values());
  AdamOptimizer opt(model.parameters(), 1e-3);
  opt.zero_grad();
  opt.step();
  for (std::size_t i = 0; i < before.size(); ++i)
    CHECK(model.parameters()[i].tensor.values() == before[i]);
}

TEST_CASE("learning rate zero leaves parameters unchanged after training") {
  Dataset train = tiny_dataset(20, 1);
  Dataset val = tiny_dataset(8, 2);
  FusionModel model(tiny_model_config(), tiny_routing(), 7);
  std::vector<std::vector<double>> before;
  for (const auto& p : model.parameters()) before.push_back(p.tensor.values());
  TrainConfig tc = tiny_train();
  tc.learning_rate = 0.0;
  train_model(model, train, val, tc, 7);
  for (std::size_t i = 0; i < before.size(); ++i)
    CHECK(model.parameters()[i].tensor.values() == before[i]);
}

TEST_CASE("training is bit-deterministic for a fixed seed") {
  Dataset train = tiny_dataset(24, 3);
  Dataset val = tiny_dataset(8, 4);
  TrainConfig tc = tiny_train();

  FusionModel a(tiny_model_config(), tiny_routing(), 11);
  FusionModel b(tiny_model_config(), tiny_routing(), 11);
  TrainResult ra = train_model(a, train, val, tc, 11);
  TrainResult rb = train_model(b, train, val, tc, 11);
  REQUIRE(ra.history.size() == rb.history.size());
  for (std::size_t e = 0; e < ra.history.size(); ++e) {
    CHECK(ra.history[e].train_loss == rb.history[e].train_loss);
    CHECK(ra.history[e].val_rmse == rb.history[e].val_rmse);
  }
  for (std::size_t i = 0; i < a.parameters().size(); ++i)
    CHECK(a.parameters()[i].tensor.values() ==
          b.parameters()[i].tensor.values());

  // A different seed diverges.
  FusionModel c(tiny_model_config(), tiny_routing(), 12);
  train_model(c, train, val, tc, 12);
  bool same = true;
  for (std::size_t i = 0; i < a.parameters().size() && same; ++i)
    same = a.parameters()[i].tensor.values() ==
           c.parameters()[i].tensor.values();
  CHECK(!same);
}

TEST_CASE("a capacity-sufficient model overfits one sample") {
  Dataset train = tiny_dataset(1, 9);
  Dataset val = train;
  FusionModel model(tiny_model_config(), tiny_routing(), 21);
  TrainConfig tc;
  tc.learning_rate = 5e-3;
  tc.batch_size = 1;
  tc.max_epochs = 200;
  tc.patience = 200;
  tc.lambda_bal = 0.0;  // isolate the regression objective
  tc.lambda_spec = 0.0;
  tc.seeds = {21};
  tc.parallel_seeds = false;
  TrainResult r = train_model(model, train, val, tc, 21);
  double mse_final = 0.0;
  {
    double pred = model.predict(train.subjects[0]);
    double d = pred - train.subjects[0].target_delta;
    mse_final = d * d;
  }
  CHECK(mse_final < 1e-3);
  CHECK(r.epochs_run <= 200);
}

TEST_CASE("early stopping restores the best-validation snapshot") {
  Dataset train = tiny_dataset(10, 31);
  Dataset val = tiny_dataset(12, 32);
  FusionModel model(tiny_model_config(), tiny_routing(), 33);
  TrainConfig tc;
  tc.learning_rate = 2e-2;  // aggressive: validation will wobble
  tc.batch_size = 4;
  tc.max_epochs = 30;
  tc.patience = 6;
  tc.seeds = {33};
  tc.parallel_seeds = false;
  TrainResult r = train_model(model, train, val, tc, 33);
  // The returned parameters evaluate to exactly the recorded best.
  std::vector<double> preds, targets;
  for (const auto& s : val.subjects) {
    preds.push_back(model.predict(s));
    targets.push_back(s.target_delta);
  }
  CHECK(rmse(preds, targets) == r.best_val_rmse);
  CHECK(r.best_val_rmse <= r.history.back().val_rmse);
  // History val minimum equals the recorded best.
  double min_val = r.history.front().val_rmse;
  for (const auto& h : r.history) min_val = std::min(min_val, h.val_rmse);
  CHECK(min_val == r.best_val_rmse);
}

TEST_CASE("non-finite loss aborts naming batch and component") {
  Dataset train = tiny_dataset(6, 41);
  train.subjects[0].target_delta = std::nan("");
  Dataset val = tiny_dataset(4, 42);
  FusionModel model(tiny_model_config(), tiny_routing(), 43);
  TrainConfig tc = tiny_train();
  tc.batch_size = 6;
  try {
    train_model(model, train, val, tc, 43);
    FAIL("expected TrainError");
  } catch (const TrainError& e) {
    std::string msg = e.what();
    CHECK(msg.find("batch") != std::string::npos);
    CHECK(msg.find("mse") != std::string::npos);
  }
}

TEST_CASE("run_seeds summary statistics") {
  Dataset train = tiny_dataset(20, 51);
  Dataset val = tiny_dataset(8, 52);
  Dataset test = tiny_dataset(10, 53);

  // One seed: stddev reported as 0.
  TrainConfig tc = tiny_train();
  tc.seeds = {3};
  RunSeedsResult one =
      run_seeds(tiny_model_config(), tiny_routing(), tc, train, val, test);
  CHECK(one.failed == 0);
  CHECK(one.test_rmse_std == 0.0);
  CHECK(one.test_rmse_mean == one.outcomes[0].test_rmse);

  // Identical seeds with lr=0 share the init path: mean = value, std = 0.
  tc.seeds = {5, 5, 5};
  tc.learning_rate = 0.0;
  RunSeedsResult same =
      run_seeds(tiny_model_config(), tiny_routing(), tc, train, val, test);
  CHECK(same.failed == 0);
  CHECK(same.test_rmse_std == 0.0);
  CHECK(same.test_rmse_mean == same.outcomes[0].test_rmse);

  // Three distinct seeds: summary mean is the arithmetic mean.
  tc.seeds = {1, 2, 3};
  tc.learning_rate = 1e-3;
  tc.parallel_seeds = true;
  RunSeedsResult three =
      run_seeds(tiny_model_config(), tiny_routing(), tc, train, val, test);
  CHECK(three.failed == 0);
  double mean = (three.outcomes[0].test_rmse + three.outcomes[1].test_rmse +
                 three.outcomes[2].test_rmse) /
                3.0;
  CHECK(std::fabs(three.test_rmse_mean - mean) < 1e-12);

  // Parallel and serial execution agree bit-for-bit.
  tc.parallel_seeds = false;
  RunSeedsResult serial =
      run_seeds(tiny_model_config(), tiny_routing(), tc, train, val, test);
  for (std::size_t i = 0; i < 3; ++i)
    CHECK(serial.outcomes[i].test_rmse == three.outcomes[i].test_rmse);
}

TEST_CASE("a failing seed is flagged and the rest continue") {
  Dataset train = tiny_dataset(12, 61);
  Dataset val = tiny_dataset(6, 62);
  Dataset test = tiny_dataset(6, 63);
  TrainConfig tc = tiny_train();
  tc.seeds = {1, 2};
  tc.lambda_spec = 0.1;
  RoutingConfig bad = tiny_routing();
  bad.expert_count = 2;  // too few experts for the specialization loss
  RunSeedsResult r =
      run_seeds(tiny_model_config(), bad, tc, train, val, test);
  CHECK(r.failed == 2);
  for (const auto& o : r.outcomes) {
    CHECK(!o.ok);
    CHECK(!o.error.empty());
  }
}

TEST_CASE("specialization pressure raises target-expert gate probability") {
  // Frozen-encoder toy task: only routing (and everything downstream)
  // trains; the mean gate probability on the target expert must rise.
  Dataset train = tiny_dataset(40, 71);
  Dataset val = tiny_dataset(8, 72);
  FusionModel model(tiny_model_config(), tiny_routing(), 73);
  for (auto& p : model.parameters())
    if (p.name.rfind("encoder.", 0) == 0) p.tensor.set_requires_grad(false);

  auto mean_target_prob = [&]() {
    double acc = 0.0;
    std::size_t terms = 0;
    for (const auto& s : train.subjects) {
      auto t = model.trace(s);
      std::size_t target = s.availability - 1;
      for (const auto& slot : t.trace.slots) {
        acc += slot.probs[target];
        ++terms;
      }
    }
    return acc / static_cast<double>(terms);
  };

  double before = mean_target_prob();
  TrainConfig tc;
  tc.learning_rate = 5e-3;
  tc.batch_size = 8;
  tc.max_epochs = 15;
  tc.patience = 15;
  tc.lambda_spec = 0.1;
  tc.seeds = {73};
  tc.parallel_seeds = false;
  train_model(model, train, val, tc, 73);
  double after = mean_target_prob();
  CHECK(after > before);
}

TEST_CASE("train rejects inconsistent configs") {
  Dataset train = tiny_dataset(6, 81);
  Dataset val = tiny_dataset(4, 82);
  FusionModel model(tiny_model_config(), tiny_routing(), 83);
  TrainConfig tc = tiny_train();
  tc.patience = 10;
  tc.max_epochs = 5;  // patience > max_epochs
  CHECK_THROWS_AS(train_model(model, train, val, tc, 1), ConfigError);
  tc = tiny_train();
  tc.seeds.clear();
  CHECK_THROWS_AS(tc.validate(), ConfigError);
  tc = tiny_train();
  Dataset empty;
  empty.header = train.header;
  CHECK_THROWS_AS(train_model(model, empty, val, tc, 1), ContractError);
}
