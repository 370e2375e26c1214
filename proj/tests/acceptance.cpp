// Copyright (C) 2026 the moefuse authors
// SPDX-License-Identifier: Apache-2.0

// Acceptance suite: runs each release criterion end to end and prints one
// PASS/FAIL line per criterion. Exits nonzero when any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>
#include <set>
#include <sstream>
#include <vector>

#include "moefuse/analytics.hpp"
#include "moefuse/checkpoint.hpp"
#include "moefuse/config.hpp"
#include "moefuse/dataset.hpp"
#include "moefuse/train.hpp"
#include "testutil.hpp"

using namespace moefuse;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Check {
  bool ok = true;
  std::string detail;
  void fail(const std::string& why) {
    if (ok) detail = why;
    ok = false;
  }
  void expect(bool cond, const std::string& why) {
    if (!cond) fail(why);
  }
};

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

// --- shared fixtures -------------------------------------------------------

SubjectRecord random_subject(const ModelConfig& mc, AvailabilityBits bits,
                             Rng& rng, const std::string& id) {
  SubjectRecord s;
  s.subject_id = id;
  s.participant_id = id;
  s.availability = bits;
  for (std::size_t m = 0; m < mc.n_modalities(); ++m)
    if ((bits >> m) & 1u)
      s.features[m] = testutil::random_vector(rng, mc.feature_dims[m]);
  s.baseline_score = rng.uniform(1.5, 12.0);
  s.target_delta = rng.normal(0.5, 1.0);
  return s;
}

double min_topk_gap(const FusionModel& model,
                    const std::vector<SubjectRecord>& batch) {
  NoGradGuard ng;
  double min_gap = 1.0;
  const std::size_t k = model.routing().top_k;
  for (const auto& s : batch) {
    auto f = model.forward(s);
    for (const auto& probs : f.slot_probs) {
      auto v = probs.values();
      std::sort(v.begin(), v.end(), std::greater<>());
      min_gap = std::min(min_gap, v[k - 1] - v[k]);
    }
  }
  return min_gap;
}

// --- criterion 1: gradient suite ---------------------------------------------

void op_gradient_sweep(Check& c) {
  Rng rng(101);
  // Fixed operands are hoisted out of the lambdas so every loss_fn call
  // evaluates the same deterministic function of x.
  auto fd_op = [&](const char* name,
                   const std::function<Tensor(const Tensor&)>& f, Shape shape,
                   double rel_tol, double min_abs = 0.0) {
    auto data = testutil::random_vector(rng, Tensor::zeros(shape).numel());
    if (min_abs > 0.0)
      for (auto& v : data)
        if (std::fabs(v) < min_abs) v = v < 0 ? v - min_abs : v + min_abs;
    Tensor x = Tensor::from_data(shape, data, true);
    Tensor probe = f(Tensor::from_data(shape, data));
    Tensor w = Tensor::from_data(probe.shape(),
                                 testutil::random_vector(rng, probe.numel()));
    Tensor loss = sum(mul(f(x), w));
    loss.backward();
    auto loss_fn = [&]() {
      NoGradGuard ng;
      return sum(mul(f(x), w)).item();
    };
    auto r = testutil::finite_diff_check(x, loss_fn, x.grad(), 1e-5, 1e-6,
                                         rel_tol);
    c.expect(r.ok, std::string(name) + ": " + r.detail);
  };

  Tensor matmul_rhs = Tensor::from_data({4, 3}, testutil::random_vector(rng, 12));
  fd_op("matmul",
        [matmul_rhs](const Tensor& t) { return matmul(t, matmul_rhs); },
        {3, 4}, 1e-4);
  fd_op("transpose", [](const Tensor& t) { return transpose(t); }, {3, 4},
        1e-4);
  fd_op("add", [](const Tensor& t) { return add(t, scale(t, 0.5)); }, {2, 3},
        1e-4);
  fd_op("sub", [](const Tensor& t) { return sub(scale(t, 2.0), t); }, {2, 3},
        1e-4);
  fd_op("mul", [](const Tensor& t) { return mul(t, t); }, {2, 3}, 1e-4);
  Tensor bias = Tensor::from_data({3}, testutil::random_vector(rng, 3));
  fd_op("add_bias",
        [bias](const Tensor& t) { return add_bias(t, bias); }, {2, 3}, 1e-4);
  fd_op("scale", [](const Tensor& t) { return scale(t, -1.7); }, {2, 3},
        1e-4);
  fd_op("mul_scalar", [](const Tensor& t) {
    return mul_scalar(t, select(t, 0));
  }, {2, 3}, 1e-4);
  fd_op("reciprocal", [](const Tensor& t) {
    return reciprocal(sum(mul(t, t)));
  }, {3}, 1e-4, 0.3);
  fd_op("relu", [](const Tensor& t) { return relu(t); }, {3, 4}, 1e-4, 0.1);
  fd_op("gelu", [](const Tensor& t) { return gelu(t); }, {3, 4}, 1e-3);
  fd_op("softmax", [](const Tensor& t) { return softmax(t); }, {3, 4}, 1e-4);
  fd_op("layer_norm", [](const Tensor& t) {
    Tensor g = Tensor::from_data({4}, {1.2, 0.8, 1.0, 0.9});
    Tensor b = Tensor::from_data({4}, {0.0, 0.1, -0.1, 0.2});
    return layer_norm(t, g, b);
  }, {3, 4}, 1e-4);
  fd_op("concat+slice", [](const Tensor& t) {
    return slice_cols(concat({t, scale(t, 2.0)}), 1, 4);
  }, {2, 3}, 1e-4);
  fd_op("row+stack", [](const Tensor& t) {
    return stack_rows({row(t, 1), row(t, 0)});
  }, {2, 3}, 1e-4);
  fd_op("select", [](const Tensor& t) { return select(t, 3); }, {2, 3}, 1e-4);
  fd_op("sum", [](const Tensor& t) { return sum(t); }, {2, 3}, 1e-4);
  fd_op("mean", [](const Tensor& t) { return mean(t); }, {2, 3}, 1e-4);
  Tensor mse_target = Tensor::from_data({2, 3}, testutil::random_vector(rng, 6));
  fd_op("mse",
        [mse_target](const Tensor& t) { return mse(t, mse_target); }, {2, 3},
        1e-4);
  fd_op("cross_entropy", [](const Tensor& t) {
    return cross_entropy(softmax(t), 2);
  }, {1, 4}, 1e-4);
  fd_op("cv_squared", [](const Tensor& t) { return cv_squared(t); }, {6},
        1e-4, 0.5);
}

bool criterion_gradients(std::string& detail) {
  auto t0 = Clock::now();
  Check c;
  op_gradient_sweep(c);

  // Full composed model at N=4 with all three loss terms.
  ModelConfig mc;
  mc.feature_dims = {4, 5, 3, 4};
  mc.model_dim = 8;
  mc.encoder_hidden = 6;
  mc.attention_heads = 2;
  mc.head_hidden = 6;
  // A wider init separates the 16 gate probabilities so finite differences
  // cannot flip the top-k selection.
  mc.init_stddev = 0.25;
  mc.bank_init_stddev = 0.25;
  RoutingConfig rc;
  rc.strategy = RoutingStrategy::PerModality;
  rc.expert_count = 16;
  rc.top_k = 2;
  rc.expert_hidden = 4;

  Rng rng(103);
  std::vector<SubjectRecord> batch = {
      random_subject(mc, 0b1111, rng, "full"),
      random_subject(mc, 0b0110, rng, "fa"),
      random_subject(mc, 0b0001, rng, "m")};

  FusionModel model(mc, rc, 0);
  bool found = false;
  for (std::uint64_t seed = 1; seed < 40 && !found; ++seed) {
    model = FusionModel(mc, rc, seed);
    found = min_topk_gap(model, batch) > 1e-3;
  }
  c.expect(found, "no init with a safe top-k margin found");

  if (found) {
    // Experts never selected by this batch legitimately receive no
    // gradient; record which ones ran.
    std::set<std::size_t> used_experts;
    {
      NoGradGuard ng;
      for (const auto& s : batch) {
        auto f = model.forward(s);
        for (const auto& sel : f.selected)
          for (const auto& [j, w] : sel) used_experts.insert(j);
      }
    }
    auto total_loss = [&]() {
      std::vector<std::vector<Tensor>> slot_probs;
      std::vector<AvailabilityBits> avail;
      Tensor mse_sum;
      for (const auto& s : batch) {
        auto f = model.forward(s);
        Tensor err =
            mse(f.prediction, Tensor::from_data({1, 1}, {s.target_delta}));
        mse_sum = mse_sum.defined() ? add(mse_sum, err) : err;
        slot_probs.push_back(std::move(f.slot_probs));
        avail.push_back(s.availability);
      }
      Tensor loss = scale(mse_sum, 1.0 / 3.0);
      loss = add(loss, scale(balancing_loss(slot_probs, rc.strategy), 0.01));
      loss = add(loss,
                 scale(specialization_loss(slot_probs, avail, 4, 16, true),
                       0.1));
      return loss;
    };
    Tensor loss = total_loss();
    loss.backward();
    auto loss_fn = [&]() {
      NoGradGuard ng;
      return total_loss().item();
    };
    for (auto& p : model.parameters()) {
      if (!p.tensor.has_grad()) {
        bool unused_bank = p.name.rfind("bank.", 0) == 0;
        bool unused_expert = false;
        if (p.name.rfind("expert.", 0) == 0)
          unused_expert = !used_experts.count(std::stoul(p.name.substr(7)));
        c.expect(unused_bank || unused_expert,
                 p.name + " received no gradient");
        continue;
      }
      auto r = testutil::finite_diff_check(p.tensor, loss_fn, p.tensor.grad(),
                                           1e-5, 1e-6, 1e-3);
      c.expect(r.ok, p.name + ": " + r.detail);
      if (!c.ok) break;
    }
  }

  double secs = seconds_since(t0);
  c.expect(secs < 30.0, "gradient suite took " + std::to_string(secs) + "s");
  detail = c.detail;
  return c.ok;
}

// --- criterion 2: routing invariants -------------------------------------------

bool criterion_routing_invariants(std::string& detail) {
  Check c;
  Rng rng(201);
  for (int trial = 0; trial < 1000 && c.ok; ++trial) {
    std::size_t e = 2 + rng.uniform_index(30);
    std::size_t k = 1 + rng.uniform_index(e);
    auto logits = testutil::random_vector(rng, e, 5.0);
    std::vector<double> probs(e);
    double mx = *std::max_element(logits.begin(), logits.end());
    double total = 0.0;
    for (std::size_t i = 0; i < e; ++i) total += probs[i] = std::exp(logits[i] - mx);
    for (auto& p : probs) p /= total;

    auto mask = top_k_mask(probs, k);

    // Full-sort oracle.
    std::vector<std::size_t> idx(e);
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
      if (probs[a] != probs[b]) return probs[a] > probs[b];
      return a < b;
    });
    std::set<std::size_t> expect(idx.begin(), idx.begin() + k);

    std::size_t nonzero = 0;
    double wsum = 0.0;
    for (std::size_t i = 0; i < e; ++i) {
      if (mask[i] != 0.0) {
        ++nonzero;
        wsum += mask[i];
        c.expect(expect.count(i) == 1, "mask kept a non-top-k entry");
        c.expect(mask[i] > 0.0 && mask[i] <= 1.0, "weight outside (0,1]");
      } else {
        c.expect(expect.count(i) == 0, "mask dropped a top-k entry");
      }
    }
    c.expect(nonzero == k, "mask has " + std::to_string(nonzero) +
                               " nonzeros, expected " + std::to_string(k));
    c.expect(wsum <= 1.0 + 1e-12, "selected weights sum above 1");
    if (k == e)
      c.expect(std::fabs(wsum - 1.0) < 1e-12, "k=E weights do not sum to 1");
    else
      for (std::size_t i = 0; i < e; ++i)
        if (!expect.count(i))
          c.expect(probs[i] > 0.0, "unselected prob not positive");

    // Logit-shift invariance.
    double shift = rng.uniform(-40.0, 40.0);
    std::vector<double> probs2(e);
    double mx2 = mx + shift;
    double total2 = 0.0;
    for (std::size_t i = 0; i < e; ++i)
      total2 += probs2[i] = std::exp(logits[i] + shift - mx2);
    for (auto& p : probs2) p /= total2;
    auto mask2 = top_k_mask(probs2, k);
    for (std::size_t i = 0; i < e; ++i) {
      c.expect((mask[i] == 0.0) == (mask2[i] == 0.0),
               "selection changed under logit shift");
      c.expect(std::fabs(mask[i] - mask2[i]) < 1e-12,
               "weights changed under logit shift");
    }
  }
  detail = c.detail;
  return c.ok;
}

// --- criterion 3: tied-router equivalence ---------------------------------------

bool criterion_tied_router(std::string& detail) {
  Check c;
  ModelConfig mc;  // full default dims
  RoutingConfig shared_rc;
  shared_rc.strategy = RoutingStrategy::Shared;
  RoutingConfig perm_rc;
  perm_rc.strategy = RoutingStrategy::PerModality;

  FusionModel shared(mc, shared_rc, 301);
  FusionModel perm(mc, perm_rc, 302);
  for (const auto& p : shared.parameters()) {
    if (p.name == "gate.shared.w") {
      for (const auto& label : mc.modality_labels)
        perm.find_parameter("gate." + label + ".w")->values() =
            p.tensor.values();
    } else {
      perm.find_parameter(p.name)->values() = p.tensor.values();
    }
  }

  Rng rng(303);
  for (int i = 0; i < 100 && c.ok; ++i) {
    AvailabilityBits bits = static_cast<AvailabilityBits>(1 + (i % 15));
    SubjectRecord s = random_subject(mc, bits, rng, "s" + std::to_string(i));
    NoGradGuard ng;
    auto fs = shared.forward(s);
    auto fp = perm.forward(s);
    c.expect(std::fabs(fs.prediction.item() - fp.prediction.item()) <= 1e-12,
             "predictions diverge on subject " + s.subject_id);
    for (std::size_t slot = 0; slot < 4; ++slot) {
      c.expect(fs.selected[slot] == fp.selected[slot],
               "expert selections diverge");
      for (std::size_t j = 0; j < fs.slot_outputs[slot].numel(); ++j)
        c.expect(std::fabs(fs.slot_outputs[slot].values()[j] -
                           fp.slot_outputs[slot].values()[j]) <= 1e-12,
                 "slot outputs diverge beyond 1e-12");
    }
  }
  detail = c.detail;
  return c.ok;
}

// --- criterion 4: bank correctness ---------------------------------------------

bool criterion_bank(std::string& detail) {
  Check c;
  ModelConfig mc;
  mc.feature_dims = {6, 5, 4, 6};
  mc.model_dim = 16;
  mc.encoder_hidden = 10;
  mc.attention_heads = 4;
  mc.head_hidden = 8;
  RoutingConfig rc;
  rc.expert_count = 16;
  rc.top_k = 2;
  rc.expert_hidden = 6;
  FusionModel model(mc, rc, 401);
  c.expect(model.bank().size() == 28,
           "bank has " + std::to_string(model.bank().size()) +
               " entries, expected 28");

  Rng rng(402);
  SubjectRecord s = random_subject(mc, 0b1011, rng, "s");  // missing A (idx 2)

  std::vector<std::vector<double>> before;
  for (const auto& key : model.bank().keys())
    before.push_back(model.bank().entry(key.missing, key.available).values());

  // One real training step: total loss, backward, clip, Adam.
  TrainConfig tc;
  AdamOptimizer opt(model.parameters(), 1e-3);
  opt.zero_grad();
  std::vector<std::vector<Tensor>> slot_probs;
  auto f = model.forward(s);
  Tensor loss = mse(f.prediction, Tensor::from_data({1, 1}, {s.target_delta}));
  slot_probs.push_back(std::move(f.slot_probs));
  loss = add(loss, scale(balancing_loss(slot_probs, rc.strategy), 0.01));
  loss = add(loss, scale(specialization_loss(slot_probs, {s.availability}, 4,
                                             16, true),
                         0.1));
  loss.backward();
  opt.clip_global_norm(tc.clip_norm);
  opt.step();

  for (std::size_t i = 0; i < model.bank().keys().size(); ++i) {
    const auto& key = model.bank().keys()[i];
    const auto& now =
        model.bank().entry(key.missing, key.available).values();
    bool used = key.missing == 2 && key.available == 0b1011;
    if (used)
      c.expect(now != before[i], "used bank entry did not change");
    else
      c.expect(now == before[i],
               "unused bank entry " + std::to_string(i) + " changed");
  }
  detail = c.detail;
  return c.ok;
}

// --- criterion 5: specialization behavior ---------------------------------------

struct SpecStats {
  double mean_target_prob = 0.0;
  double target_hit_rate = 0.0;
};

SpecStats spec_stats(const FusionModel& model, const Dataset& data) {
  SpecStats out;
  std::size_t terms = 0, hits = 0, events = 0;
  for (const auto& s : data.subjects) {
    auto t = model.trace(s);
    std::size_t target = s.availability - 1;
    for (const auto& slot : t.trace.slots) {
      out.mean_target_prob += slot.probs[target];
      ++terms;
      ++events;
      for (const auto& [j, w] : slot.selected)
        if (j == target) {
          ++hits;
          break;
        }
    }
  }
  out.mean_target_prob /= static_cast<double>(terms);
  out.target_hit_rate =
      static_cast<double>(hits) / static_cast<double>(events);
  return out;
}

bool criterion_specialization(std::string& detail) {
  Check c;
  GeneratorConfig gc;
  gc.participants = 120;
  gc.seed = 501;
  Dataset data = generate(gc);
  c.expect(data.size() >= 200, "generated set too small");
  data.subjects.resize(200);

  ModelConfig mc;  // default dims, data dims from the generator
  TrainConfig tc;
  tc.max_epochs = 20;
  tc.patience = 20;
  tc.batch_size = 32;
  tc.seeds = {502};
  tc.parallel_seeds = false;

  RoutingConfig rc;  // defaults: E=16, k=2, per-modality

  FusionModel spec_model(mc, rc, 502);
  SpecStats at_init = spec_stats(spec_model, data);
  tc.lambda_spec = 0.1;
  train_model(spec_model, data, data, tc, 502);
  SpecStats spec_final = spec_stats(spec_model, data);

  FusionModel control(mc, rc, 502);  // same seed, no specialization pressure
  tc.lambda_spec = 0.0;
  train_model(control, data, data, tc, 502);
  SpecStats control_final = spec_stats(control, data);

  c.expect(spec_final.mean_target_prob > at_init.mean_target_prob,
           "mean target gate probability did not rise (" +
               std::to_string(at_init.mean_target_prob) + " -> " +
               std::to_string(spec_final.mean_target_prob) + ")");
  c.expect(spec_final.target_hit_rate > control_final.target_hit_rate,
           "top-k hit rate " + std::to_string(spec_final.target_hit_rate) +
               " not above control " +
               std::to_string(control_final.target_hit_rate));
  detail = c.detail;
  if (c.ok)
    detail = "target prob " + std::to_string(at_init.mean_target_prob) +
             " -> " + std::to_string(spec_final.mean_target_prob) +
             ", hit rate " + std::to_string(spec_final.target_hit_rate) +
             " vs control " + std::to_string(control_final.target_hit_rate);
  return c.ok;
}

// --- criteria 6 and 7: directional reproduction ----------------------------------

struct DirectionalOutcome {
  bool ran = false;
  double runtime_sec = 0.0;
  std::array<double, 4> perm_singleton{};
  std::array<double, 4> shared_singleton{};
  double perm_entropy = 0.0;
  double shared_entropy = 0.0;
  int perm_wins = 0;
  std::string error;
};

DirectionalOutcome run_directional() {
  DirectionalOutcome out;
  auto t0 = Clock::now();
  try {
    GeneratorConfig gc;  // defaults: 500 participants, modality-specialized
    gc.seed = 3;
    Dataset data = generate(gc);
    SplitResult sr = split_grouped(data, {0.70, 0.15, 0.15}, 1);
    Dataset aug_test = augment_withholding(sr.test);

    ModelConfig mc;  // defaults
    RoutingConfig rc;  // defaults
    TrainConfig tc;   // defaults: lr 1e-3, batch 32, 100 epochs, patience 10

    auto evaluate = [&](RoutingStrategy strategy, std::array<double, 4>& rows,
                        double& entropy) {
      TrainConfig cfg = tc;
      cfg.strategy = strategy;
      RunSeedsResult rs =
          run_seeds(mc, rc, cfg, sr.train, sr.val, sr.test);
      if (rs.failed > 0) throw TrainError("a seed failed");
      std::vector<std::vector<double>> preds;
      std::vector<RoutingTrace> pooled;
      for (const auto& o : rs.outcomes) {
        std::vector<double> p;
        p.reserve(aug_test.size());
        for (const auto& s : aug_test.subjects) {
          auto traced = o.model->trace(s);
          p.push_back(traced.prediction);
          pooled.push_back(std::move(traced.trace));
        }
        preds.push_back(std::move(p));
      }
      MetricsReport rep = tabulate(aug_test, preds);
      for (int m = 0; m < 4; ++m) {
        const CellStat& cell = rep.by_combination[(1u << m) - 1];
        rows[m] = cell.defined ? cell.rmse_mean
                               : std::numeric_limits<double>::quiet_NaN();
      }
      ActivationReport act = activation_stats(pooled, aug_test);
      entropy = act.aggregate_entropy;
    };

    evaluate(RoutingStrategy::PerModality, out.perm_singleton,
             out.perm_entropy);
    evaluate(RoutingStrategy::Shared, out.shared_singleton,
             out.shared_entropy);
    for (int m = 0; m < 4; ++m)
      if (out.perm_singleton[m] <= out.shared_singleton[m]) ++out.perm_wins;
    out.ran = true;
  } catch (const std::exception& e) {
    out.error = e.what();
  }
  out.runtime_sec = seconds_since(t0);
  return out;
}

bool criterion_table1(const DirectionalOutcome& d, std::string& detail) {
  if (!d.ran) {
    detail = d.error;
    return false;
  }
  std::ostringstream os;
  os.precision(4);
  os << "singleton RMSE per-modality [";
  for (int m = 0; m < 4; ++m) os << (m ? " " : "") << d.perm_singleton[m];
  os << "] vs shared [";
  for (int m = 0; m < 4; ++m) os << (m ? " " : "") << d.shared_singleton[m];
  os << "], per-modality <= shared on " << d.perm_wins << "/4 rows, "
     << static_cast<int>(d.runtime_sec) << "s";
  detail = os.str();
  return d.perm_wins >= 3 && d.runtime_sec < 600.0;
}

bool criterion_fig3(const DirectionalOutcome& d, std::string& detail) {
  if (!d.ran) {
    detail = d.error;
    return false;
  }
  std::ostringstream os;
  os.precision(6);
  os << "activation entropy per-modality " << d.perm_entropy << " vs shared "
     << d.shared_entropy << " (ln E = " << std::log(16.0) << ")";
  detail = os.str();
  return d.perm_entropy >= d.shared_entropy;
}

// --- criterion 8: data-protocol audits --------------------------------------------

bool criterion_data_protocol(std::string& detail) {
  Check c;
  // Grouped split: exhaustive leakage check.
  GeneratorConfig gc;
  gc.participants = 400;
  gc.seed = 801;
  Dataset data = generate(gc);
  SplitResult sr = split_grouped(data, {0.70, 0.15, 0.15}, 7);
  std::set<std::string> train_ids, val_ids, test_ids;
  for (const auto& s : sr.train.subjects) train_ids.insert(s.participant_id);
  for (const auto& s : sr.val.subjects) val_ids.insert(s.participant_id);
  for (const auto& s : sr.test.subjects) test_ids.insert(s.participant_id);
  for (const auto& id : train_ids) {
    c.expect(!val_ids.count(id), "participant in train and val");
    c.expect(!test_ids.count(id), "participant in train and test");
  }
  for (const auto& id : val_ids)
    c.expect(!test_ids.count(id), "participant in val and test");

  // Withholding: {M,A} yields exactly the {M} and {A} singletons.
  Dataset two;
  two.header = data.header;
  SubjectRecord ma;
  ma.subject_id = "s";
  ma.participant_id = "p";
  ma.features[0] = std::vector<double>(32, 1.0);
  ma.features[2] = std::vector<double>(32, 2.0);
  ma.availability = 0b0101;
  ma.baseline_score = 5.0;
  ma.target_delta = 1.0;
  two.subjects.push_back(ma);
  Dataset aug = augment_withholding(two);
  c.expect(aug.size() == 3, "augmentation produced " +
                                std::to_string(aug.size()) + " subjects");
  std::multiset<AvailabilityBits> derived;
  for (std::size_t i = 1; i < aug.size(); ++i)
    derived.insert(aug.subjects[i].availability);
  c.expect(derived == std::multiset<AvailabilityBits>{0b0001, 0b0100},
           "derived availability set is wrong");

  // Missingness marginals over >= 10k draws.
  GeneratorConfig big;
  big.participants = 5800;
  big.seed = 802;
  Dataset sample = generate(big);
  c.expect(sample.size() >= 10000, "fewer than 10k draws");
  std::size_t one = 0, four = 0;
  for (const auto& s : sample.subjects) {
    int bits = std::popcount(s.availability);
    one += bits == 1;
    four += bits == 4;
  }
  double fone = double(one) / double(sample.size());
  double ffour = double(four) / double(sample.size());
  c.expect(std::fabs(fone - 0.608) < 0.03,
           "exactly-one fraction " + std::to_string(fone));
  c.expect(std::fabs(ffour - 0.059) < 0.015,
           "all-four fraction " + std::to_string(ffour));
  if (c.ok)
    detail = "exactly-one " + std::to_string(fone) + ", all-four " +
             std::to_string(ffour) + " over " + std::to_string(sample.size()) +
             " draws";
  else
    detail = c.detail;
  return c.ok;
}

// --- criterion 9: metrics correctness ----------------------------------------------

bool criterion_metrics(std::string& detail) {
  Check c;
  Rng rng(901);
  // Random eval set across combinations and buckets.
  Dataset d;
  d.header.modalities = default_modality_labels(4);
  d.header.feature_dims = {1, 1, 1, 1};
  std::vector<double> preds;
  for (int i = 0; i < 300; ++i) {
    SubjectRecord s;
    s.subject_id = "s" + std::to_string(i);
    s.participant_id = s.subject_id;
    s.availability = static_cast<AvailabilityBits>(1 + rng.uniform_index(15));
    for (std::size_t m = 0; m < 4; ++m)
      if ((s.availability >> m) & 1u) s.features[m] = {0.0};
    s.baseline_score = 3.0;
    s.target_delta = rng.normal(0.5, 1.0);
    if (i % 17 == 0) s.target_delta = 0.0;
    d.subjects.push_back(s);
    preds.push_back(rng.normal(0.5, 1.0));
  }

  // Brute-force recomputation from raw residuals.
  std::vector<double> targets;
  for (const auto& s : d.subjects) targets.push_back(s.target_delta);
  double direct = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i)
    direct += (preds[i] - targets[i]) * (preds[i] - targets[i]);
  direct = std::sqrt(direct / double(preds.size()));
  c.expect(std::fabs(rmse(preds, targets) - direct) < 1e-12,
           "rmse disagrees with brute force");

  MetricsReport rep = tabulate(d, {preds});
  c.expect(std::fabs(rep.overall.rmse_mean - direct) < 1e-12,
           "tabulate overall disagrees with brute force");
  for (std::size_t combo = 1; combo <= 15; ++combo) {
    double acc = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < d.subjects.size(); ++i)
      if (d.subjects[i].availability == combo) {
        acc += (preds[i] - targets[i]) * (preds[i] - targets[i]);
        ++n;
      }
    const CellStat& cell = rep.by_combination[combo - 1];
    c.expect(cell.n == n, "cell count mismatch");
    if (n > 0)
      c.expect(std::fabs(cell.rmse_mean - std::sqrt(acc / double(n))) < 1e-12,
               "per-combination rmse disagrees with brute force");
  }

  // Bucket boundaries on the boundary values {0, 1}.
  c.expect(target_bucket(0.0) == 1, "0 must land in the =0 bucket");
  c.expect(target_bucket(1.0) == 2, "1 must land in the (0,1] bucket");
  c.expect(target_bucket(-1e-9) == 0, "negative must land in <0");
  c.expect(target_bucket(1.0 + 1e-9) == 3, "1+eps must land in >1");
  detail = c.detail;
  return c.ok;
}

// --- criterion 10: reproducibility ---------------------------------------------------

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

bool criterion_reproducibility(std::string& detail) {
  Check c;
  // Library level: identical seed + config -> bit-identical parameters.
  GeneratorConfig gc;
  gc.participants = 40;
  gc.seed = 1001;
  Dataset data = generate(gc);
  SplitResult sr = split_grouped(data, {0.70, 0.15, 0.15}, 2);
  ModelConfig mc;
  RoutingConfig rc;
  TrainConfig tc;
  tc.max_epochs = 3;
  tc.patience = 3;
  tc.seeds = {5};
  tc.parallel_seeds = false;

  FusionModel a(mc, rc, 5);
  FusionModel b(mc, rc, 5);
  train_model(a, sr.train, sr.val, tc, 5);
  train_model(b, sr.train, sr.val, tc, 5);
  for (std::size_t i = 0; i < a.parameters().size(); ++i)
    c.expect(a.parameters()[i].tensor.values() ==
                 b.parameters()[i].tensor.values(),
             "parameter " + a.parameters()[i].name +
                 " differs between identical runs");

  // CLI level: byte-identical dataset files and checkpoints.
  const char* bin = std::getenv("MOEFUSE_BIN");
  if (bin == nullptr) {
    c.fail("MOEFUSE_BIN not set");
  } else {
    fs::path dir = fs::temp_directory_path() / "moefuse_acceptance_repro";
    fs::remove_all(dir);
    fs::create_directories(dir);
    {
      std::ofstream cfg(dir / "cfg");
      cfg << "generator.participants = 40\ntrain.max_epochs = 3\n"
             "train.patience = 3\ntrain.seeds = 5\n";
    }
    auto sh = [&](const std::string& args) {
      std::string cmd = std::string(bin) + " " + args + " 2>> " +
                        (dir / "log").string();
      return std::system(cmd.c_str()) == 0;
    };
    std::string base = dir.string();
    bool ok = sh("gen-data --config " + base + "/cfg --out " + base + "/d1") &&
              sh("gen-data --config " + base + "/cfg --out " + base + "/d2") &&
              sh("split --config " + base + "/cfg --data " + base +
                 "/d1/dataset.jsonl --out " + base + "/s") &&
              sh("train --config " + base + "/cfg --data " + base +
                 "/s --out " + base + "/r1") &&
              sh("train --config " + base + "/cfg --data " + base +
                 "/s --out " + base + "/r2");
    c.expect(ok, "a CLI invocation failed; see " + (dir / "log").string());
    if (ok) {
      c.expect(slurp(dir / "d1/dataset.jsonl") == slurp(dir / "d2/dataset.jsonl"),
               "dataset files differ between identical gen-data runs");
      c.expect(slurp(dir / "r1/seed_5/checkpoint.json") ==
                   slurp(dir / "r2/seed_5/checkpoint.json"),
               "checkpoints differ between identical train runs");
      fs::remove_all(dir);
    }
  }
  detail = c.detail;
  return c.ok;
}

}  // namespace

int main() {
  struct Row {
    int id;
    const char* name;
    std::function<bool(std::string&)> fn;
  };

  // Criteria 6 and 7 share one pair of training runs.
  DirectionalOutcome directional;
  bool directional_ready = false;
  auto ensure_directional = [&]() {
    if (!directional_ready) {
      std::cerr << "[acceptance] training directional runs (2 strategies x 3 "
                   "seeds, default config)...\n";
      directional = run_directional();
      directional_ready = true;
    }
  };

  std::vector<Row> rows = {
      {1, "gradient suite (ops + composed model, <30s)", criterion_gradients},
      {2, "routing invariants (1000 random cases)",
       criterion_routing_invariants},
      {3, "tied-router equivalence (100 subjects, 15 patterns)",
       criterion_tied_router},
      {4, "bank enumeration and update isolation", criterion_bank},
      {5, "specialization raises target-gate probability",
       criterion_specialization},
      {6, "directional singleton-RMSE reproduction (<10min)",
       [&](std::string& d) {
         ensure_directional();
         return criterion_table1(directional, d);
       }},
      {7, "directional activation-entropy reproduction",
       [&](std::string& d) {
         ensure_directional();
         return criterion_fig3(directional, d);
       }},
      {8, "data-protocol audits (split, withholding, marginals)",
       criterion_data_protocol},
      {9, "metrics agree with brute-force recomputation", criterion_metrics},
      {10, "seeded reproducibility (library and CLI)",
       criterion_reproducibility},
  };

  int failures = 0;
  for (auto& row : rows) {
    auto t0 = Clock::now();
    std::string detail;
    bool ok = false;
    try {
      ok = row.fn(detail);
    } catch (const std::exception& e) {
      ok = false;
      detail = std::string("exception: ") + e.what();
    }
    double secs = seconds_since(t0);
    std::printf("%s [%2d] %s (%.1fs)%s%s\n", ok ? "PASS" : "FAIL", row.id,
                row.name, secs, detail.empty() ? "" : " -- ",
                detail.c_str());
    std::fflush(stdout);
    failures += !ok;
  }
  if (failures > 0)
    std::printf("%d of %zu criteria FAILED\n", failures, rows.size());
  else
    std::printf("all %zu criteria passed\n", rows.size());
  return failures == 0 ? 0 : 1;
}
