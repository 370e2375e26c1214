// Copyright (C) 2026 the moefuse authors
// SPDX-License-Identifier: Apache-2.0

#include "moefuse/train.hpp"

#include <cmath>
#include <numeric>
#include <thread>

#include "moefuse/analytics.hpp"
#include "moefuse/kernels.hpp"

namespace moefuse {

void TrainConfig::validate() const {
  if (learning_rate < 0.0) throw ConfigError("train: negative learning rate");
  if (batch_size == 0) throw ConfigError("train: batch size must be positive");
  if (max_epochs == 0) throw ConfigError("train: max_epochs must be positive");
  if (patience == 0 || patience > max_epochs)
    throw ConfigError("train: patience " + std::to_string(patience) +
                      " outside [1, max_epochs=" + std::to_string(max_epochs) +
                      "]");
  if (seeds.empty()) throw ConfigError("train: needs at least one seed");
  if (clip_norm < 0.0) throw ConfigError("train: negative clip norm");
}

AdamOptimizer::AdamOptimizer(std::vector<NamedParam>& params,
                             double learning_rate)
    : params_(&params), lr_(learning_rate) {
  m_.reserve(params.size());
  v_.reserve(params.size());
  for (const auto& p : params) {
    m_.emplace_back(p.tensor.numel(), 0.0);
    v_.emplace_back(p.tensor.numel(), 0.0);
  }
}

void AdamOptimizer::zero_grad() {
  for (auto& p : *params_) p.tensor.zero_grad();
}

void AdamOptimizer::clip_global_norm(double max_norm) {
  double total = 0.0;
  for (auto& p : *params_) {
    if (!p.tensor.has_grad()) continue;
    const auto& g = p.tensor.grad();
    total += kernels::sq_norm(g.data(), g.size());
  }
  double norm = std::sqrt(total);
  if (norm <= max_norm || norm == 0.0) return;
  double factor = max_norm / norm;
  for (auto& p : *params_) {
    if (!p.tensor.has_grad()) continue;
    auto& g = p.tensor.grad_mut();
    kernels::scale(g.data(), g.data(), factor, g.size());
  }
}

void AdamOptimizer::step() {
  ++steps_;
  const double bias1 =
      1.0 / (1.0 - std::pow(kBeta1, static_cast<double>(steps_)));
  const double bias2 =
      1.0 / (1.0 - std::pow(kBeta2, static_cast<double>(steps_)));
  static thread_local std::vector<double> zeros;
  for (std::size_t i = 0; i < params_->size(); ++i) {
    Tensor& t = (*params_)[i].tensor;
    if (!t.requires_grad()) continue;
    const double* g;
    if (t.has_grad()) {
      g = t.grad().data();
    } else {
      // Untouched this batch: zero grad, and with zero moments the
      // bias-corrected update is exactly zero.
      zeros.assign(t.numel(), 0.0);
      g = zeros.data();
    }
    kernels::adam_step(t.values().data(), m_[i].data(), v_[i].data(), g,
                       t.numel(), lr_, kBeta1, kBeta2, kEps, bias1, bias2);
  }
}

namespace {

struct LossParts {
  Tensor total, mse_part, bal_part, spec_part;
};

LossParts batch_loss(const FusionModel& model,
                     const std::vector<const SubjectRecord*>& batch,
                     const TrainConfig& cfg) {
  std::vector<std::vector<Tensor>> slot_probs;
  std::vector<AvailabilityBits> avail;
  slot_probs.reserve(batch.size());
  avail.reserve(batch.size());
  Tensor mse_sum;
  for (const SubjectRecord* s : batch) {
    auto f = model.forward(*s);
    Tensor err =
        mse(f.prediction, Tensor::from_data({1, 1}, {s->target_delta}));
    mse_sum = mse_sum.defined() ? add(mse_sum, err) : err;
    slot_probs.push_back(std::move(f.slot_probs));
    avail.push_back(s->availability);
  }
  LossParts out;
  out.mse_part = scale(mse_sum, 1.0 / static_cast<double>(batch.size()));
  out.total = out.mse_part;
  if (cfg.lambda_bal != 0.0) {
    out.bal_part = balancing_loss(slot_probs, model.routing().strategy);
    out.total = add(out.total, scale(out.bal_part, cfg.lambda_bal));
  }
  if (cfg.lambda_spec != 0.0) {
    out.spec_part = specialization_loss(
        slot_probs, avail, model.config().n_modalities(),
        model.routing().expert_count, model.routing().spec_loss_on_imputed);
    out.total = add(out.total, scale(out.spec_part, cfg.lambda_spec));
  }
  return out;
}

double validation_rmse(const FusionModel& model, const Dataset& val) {
  std::vector<double> preds, targets;
  preds.reserve(val.size());
  targets.reserve(val.size());
  for (const auto& s : val.subjects) {
    preds.push_back(model.predict(s));
    targets.push_back(s.target_delta);
  }
  return rmse(preds, targets);
}

void check_finite(double v, const char* component, std::size_t epoch,
                  std::size_t batch_index) {
  if (!std::isfinite(v))
    throw TrainError("epoch " + std::to_string(epoch) + " batch " +
                     std::to_string(batch_index) + ": " + component +
                     " loss is not finite");
}

}  // namespace

TrainResult train_model(FusionModel& model, const Dataset& train,
                        const Dataset& val, const TrainConfig& cfg,
                        std::uint64_t seed, const HistorySink& sink) {
  cfg.validate();
  if (train.subjects.empty() || val.subjects.empty())
    throw ContractError("train: empty training or validation set");
  model.routing().validate(model.config().n_modalities(),
                           cfg.lambda_spec != 0.0);

  Rng shuffle_rng = Rng::stream(seed, "shuffle");
  AdamOptimizer opt(model.parameters(), cfg.learning_rate);

  TrainResult result;
  std::vector<std::vector<double>> best_params;
  std::size_t since_best = 0;

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double sum_total = 0.0, sum_mse = 0.0, sum_bal = 0.0, sum_spec = 0.0;
    std::size_t seen = 0;
    for (std::size_t start = 0, bi = 0; start < order.size();
         start += cfg.batch_size, ++bi) {
      std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::vector<const SubjectRecord*> batch;
      batch.reserve(end - start);
      for (std::size_t i = start; i < end; ++i)
        batch.push_back(&train.subjects[order[i]]);

      opt.zero_grad();
      LossParts loss = batch_loss(model, batch, cfg);
      double mse_v = loss.mse_part.item();
      double bal_v = loss.bal_part.defined() ? loss.bal_part.item() : 0.0;
      double spec_v = loss.spec_part.defined() ? loss.spec_part.item() : 0.0;
      check_finite(mse_v, "mse", epoch, bi);
      check_finite(bal_v, "balancing", epoch, bi);
      check_finite(spec_v, "specialization", epoch, bi);
      loss.total.backward();
      if (cfg.clip_norm > 0.0) opt.clip_global_norm(cfg.clip_norm);
      opt.step();

      double w = static_cast<double>(batch.size());
      sum_total += loss.total.item() * w;
      sum_mse += mse_v * w;
      sum_bal += bal_v * w;
      sum_spec += spec_v * w;
      seen += batch.size();
    }

    EpochStats stats;
    stats.epoch = epoch;
    stats.train_loss = sum_total / static_cast<double>(seen);
    stats.train_mse = sum_mse / static_cast<double>(seen);
    stats.bal_loss = sum_bal / static_cast<double>(seen);
    stats.spec_loss = sum_spec / static_cast<double>(seen);
    stats.val_rmse = validation_rmse(model, val);
    result.history.push_back(stats);
    result.epochs_run = epoch + 1;
    if (sink) sink(stats);

    if (stats.val_rmse < result.best_val_rmse) {
      result.best_val_rmse = stats.val_rmse;
      result.best_epoch = epoch;
      since_best = 0;
      best_params.clear();
      best_params.reserve(model.parameters().size());
      for (const auto& p : model.parameters())
        best_params.push_back(p.tensor.values());
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }

  // Return the best-validation snapshot, never the final epoch's
  // parameters, whenever they differ.
  if (!best_params.empty())
    for (std::size_t i = 0; i < best_params.size(); ++i)
      model.parameters()[i].tensor.values() = std::move(best_params[i]);
  return result;
}

RunSeedsResult run_seeds(
    const ModelConfig& model_config, const RoutingConfig& routing,
    const TrainConfig& cfg, const Dataset& train, const Dataset& val,
    const Dataset& test,
    const std::function<HistorySink(std::uint64_t)>& sink_for_seed) {
  cfg.validate();
  RoutingConfig rc = routing;
  rc.strategy = cfg.strategy;

  RunSeedsResult result;
  result.outcomes.resize(cfg.seeds.size());

  auto run_one = [&](std::size_t idx) {
    SeedOutcome& out = result.outcomes[idx];
    out.seed = cfg.seeds[idx];
    try {
      auto model = std::make_shared<FusionModel>(model_config, rc, out.seed);
      HistorySink sink = sink_for_seed ? sink_for_seed(out.seed) : HistorySink{};
      out.train = train_model(*model, train, val, cfg, out.seed, sink);
      out.test_predictions.reserve(test.size());
      std::vector<double> targets;
      targets.reserve(test.size());
      for (const auto& s : test.subjects) {
        out.test_predictions.push_back(model->predict(s));
        targets.push_back(s.target_delta);
      }
      out.test_rmse = rmse(out.test_predictions, targets);
      out.model = std::move(model);
      out.ok = true;
    } catch (const std::exception& e) {
      out.ok = false;
      out.error = e.what();
    }
  };

  if (cfg.parallel_seeds && cfg.seeds.size() > 1) {
    std::size_t workers = std::max<std::size_t>(
        1, std::min<std::size_t>(std::thread::hardware_concurrency(),
                                 cfg.seeds.size()));
    std::size_t next = 0;
    while (next < cfg.seeds.size()) {
      std::vector<std::thread> pool;
      for (std::size_t w = 0; w < workers && next < cfg.seeds.size(); ++w)
        pool.emplace_back(run_one, next++);
      for (auto& t : pool) t.join();
    }
  } else {
    for (std::size_t i = 0; i < cfg.seeds.size(); ++i) run_one(i);
  }

  std::vector<double> ok_rmse;
  for (const auto& o : result.outcomes) {
    if (o.ok)
      ok_rmse.push_back(o.test_rmse);
    else
      ++result.failed;
  }
  if (!ok_rmse.empty()) {
    double mean = 0.0;
    for (double v : ok_rmse) mean += v;
    mean /= static_cast<double>(ok_rmse.size());
    double var = 0.0;
    for (double v : ok_rmse) var += (v - mean) * (v - mean);
    var /= static_cast<double>(ok_rmse.size());
    result.test_rmse_mean = mean;
    result.test_rmse_std = std::sqrt(var);
  }
  return result;
}

}  // namespace moefuse
