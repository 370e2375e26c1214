// Copyright (C) 2026 the moefuse authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "moefuse/dataset.hpp"
#include "moefuse/model.hpp"

namespace moefuse {

struct TrainConfig {
  double learning_rate = 1e-3;
  std::size_t batch_size = 32;
  std::size_t max_epochs = 100;
  /// Epochs without validation improvement before stopping.
  std::size_t patience = 10;
  std::vector<std::uint64_t> seeds = {1, 2, 3};
  double lambda_bal = 0.01;
  double lambda_spec = 0.1;
  RoutingStrategy strategy = RoutingStrategy::PerModality;
  /// Global gradient-norm clip; 0 disables.
  double clip_norm = 5.0;
  /// Train the per-seed runs on separate threads.
  bool parallel_seeds = true;

  void validate() const;
};

/// Adam with bias correction (beta1=0.9, beta2=0.999, eps=1e-8) over a
/// model's parameter list. Moment arrays shape-match their parameters; a
/// step with zero gradients leaves parameters unchanged from a fresh state.
class AdamOptimizer {
 public:
  AdamOptimizer(std::vector<NamedParam>& params, double learning_rate);

  void zero_grad();
  /// Scales all gradients so their global norm is at most max_norm.
  void clip_global_norm(double max_norm);
  void step();
  std::size_t step_count() const { return steps_; }

  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;

 private:
  std::vector<NamedParam>* params_;
  double lr_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t steps_ = 0;
};

struct EpochStats {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double train_mse = 0.0;
  double bal_loss = 0.0;
  double spec_loss = 0.0;
  double val_rmse = 0.0;
};

struct TrainResult {
  std::vector<EpochStats> history;
  std::size_t best_epoch = 0;
  double best_val_rmse = std::numeric_limits<double>::infinity();
  std::size_t epochs_run = 0;
};

using HistorySink = std::function<void(const EpochStats&)>;

/// One optimization run: shuffled mini-batches, Adam on the total loss
/// (mse + lambda_bal * balancing + lambda_spec * specialization), early
/// stopping on validation RMSE. The model ends at the best-validation
/// snapshot. Deterministic given (model init, seed, config, data).
TrainResult train_model(FusionModel& model, const Dataset& train,
                        const Dataset& val, const TrainConfig& config,
                        std::uint64_t seed, const HistorySink& sink = {});

struct SeedOutcome {
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  TrainResult train;
  double test_rmse = 0.0;
  std::vector<double> test_predictions;
  std::shared_ptr<FusionModel> model;
};

struct RunSeedsResult {
  std::vector<SeedOutcome> outcomes;
  std::size_t failed = 0;
  /// Mean and population stddev of test RMSE over the successful seeds.
  double test_rmse_mean = 0.0;
  double test_rmse_std = 0.0;
};

/// Trains one model per seed (optionally in parallel), evaluates each on
/// the test set, and reports mean +- stddev. A failing seed is recorded and
/// the remaining seeds still run.
RunSeedsResult run_seeds(const ModelConfig& model_config,
                         const RoutingConfig& routing, const TrainConfig& config,
                         const Dataset& train, const Dataset& val,
                         const Dataset& test,
                         const std::function<HistorySink(std::uint64_t)>&
                             sink_for_seed = {});

}  // namespace moefuse
