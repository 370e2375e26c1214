// Copyright (C) 2026 the moefuse authors
// SPDX-License-Identifier: Apache-2.0

#include "moefuse/analytics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <ostream>
#include <set>

#include <json.hpp>

#include "moefuse/textio.hpp"

namespace moefuse {

using nlohmann::json;

double rmse(std::span<const double> predictions,
            std::span<const double> targets) {
  if (predictions.empty())
    throw ContractError("rmse: empty input");
  if (predictions.size() != targets.size())
    throw ContractError("rmse: " + std::to_string(predictions.size()) +
                        " predictions vs " + std::to_string(targets.size()) +
                        " targets");
  double acc = 0.0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    double d = predictions[i] - targets[i];
    acc += d * d;
  }
  return std::sqrt(acc / static_cast<double>(predictions.size()));
}

std::size_t target_bucket(double delta) {
  if (delta < 0.0) return 0;
  if (delta == 0.0) return 1;
  if (delta <= 1.0) return 2;
  return 3;
}

namespace {

CellStat summarize(const std::vector<std::vector<double>>& sq_err_per_seed,
                   std::size_t n) {
  CellStat c;
  c.n = n;
  if (n == 0) return c;
  std::vector<double> per_seed;
  per_seed.reserve(sq_err_per_seed.size());
  for (const auto& errs : sq_err_per_seed) {
    double mean_sq = 0.0;
    for (double e : errs) mean_sq += e;
    per_seed.push_back(std::sqrt(mean_sq / static_cast<double>(n)));
  }
  double mean = 0.0;
  for (double v : per_seed) mean += v;
  mean /= static_cast<double>(per_seed.size());
  double var = 0.0;
  for (double v : per_seed) var += (v - mean) * (v - mean);
  var /= static_cast<double>(per_seed.size());
  c.rmse_mean = mean;
  c.rmse_std = std::sqrt(var);
  c.defined = true;
  return c;
}

}  // namespace

MetricsReport tabulate(
    const Dataset& eval,
    const std::vector<std::vector<double>>& predictions_per_seed) {
  if (predictions_per_seed.empty())
    throw ContractError("tabulate: no prediction sets");
  for (const auto& p : predictions_per_seed)
    if (p.size() != eval.size())
      throw ContractError("tabulate: " + std::to_string(p.size()) +
                          " predictions for " + std::to_string(eval.size()) +
                          " subjects");

  const std::size_t n_mod = eval.header.n_modalities();
  const std::size_t combos = combo_count(n_mod);
  const std::size_t seeds = predictions_per_seed.size();

  MetricsReport report;
  report.n_modalities = n_mod;
  report.seed_count = seeds;

  // Collect squared errors per cell per seed, then recombine.
  std::vector<std::vector<std::vector<double>>> combo_err(
      combos, std::vector<std::vector<double>>(seeds));
  std::array<std::vector<std::vector<double>>, 4> bucket_err;
  for (auto& b : bucket_err) b.resize(seeds);
  std::vector<std::vector<double>> overall_err(seeds);

  for (std::size_t s = 0; s < seeds; ++s) {
    for (std::size_t i = 0; i < eval.size(); ++i) {
      const SubjectRecord& r = eval.subjects[i];
      double d = predictions_per_seed[s][i] - r.target_delta;
      double sq = d * d;
      overall_err[s].push_back(sq);
      combo_err[r.availability - 1][s].push_back(sq);
      bucket_err[target_bucket(r.target_delta)][s].push_back(sq);
    }
  }

  report.overall = summarize(overall_err, eval.size());
  report.by_combination.resize(combos);
  for (std::size_t c = 0; c < combos; ++c)
    report.by_combination[c] =
        summarize(combo_err[c], combo_err[c][0].size());
  for (std::size_t b = 0; b < 4; ++b)
    report.by_bucket[b] = summarize(bucket_err[b], bucket_err[b][0].size());
  return report;
}

namespace {

json cell_json(const CellStat& c) {
  json j;
  j["n"] = c.n;
  if (c.defined) {
    j["rmse_mean"] = c.rmse_mean;
    j["rmse_std"] = c.rmse_std;
  } else {
    j["rmse_mean"] = nullptr;
    j["rmse_std"] = nullptr;
  }
  return j;
}

std::string combo_label_str(AvailabilityBits bits,
                            const std::vector<std::string>& labels) {
  std::string s;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if ((bits >> i) & 1u) s += labels[i];
  return s;
}

}  // namespace

void write_metrics_json(const MetricsReport& report,
                        const std::vector<std::string>& labels,
                        const std::string& path) {
  json j;
  j["format_version"] = 1;
  j["seed_count"] = report.seed_count;
  j["overall"] = cell_json(report.overall);
  json combos = json::array();
  for (std::size_t c = 0; c < report.by_combination.size(); ++c) {
    json row = cell_json(report.by_combination[c]);
    row["bits"] = c + 1;
    row["label"] = combo_label_str(static_cast<AvailabilityBits>(c + 1), labels);
    combos.push_back(std::move(row));
  }
  j["by_combination"] = std::move(combos);
  json buckets = json::array();
  for (std::size_t b = 0; b < 4; ++b) {
    json row = cell_json(report.by_bucket[b]);
    row["bucket"] = kBucketLabels[b];
    buckets.push_back(std::move(row));
  }
  j["by_bucket"] = std::move(buckets);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path + "' for writing");
  f << j.dump(2) << '\n';
  if (!f) throw IoError("write to '" + path + "' failed");
}

void write_metrics_csv(const MetricsReport& report,
                       const std::vector<std::string>& labels,
                       std::ostream& os) {
  os << "section,cell,bits,n,rmse_mean,rmse_std\n";
  auto put = [&](const char* section, const std::string& cell,
                 const std::string& bits, const CellStat& c) {
    os << section << ',' << cell << ',' << bits << ',' << c.n << ',';
    if (c.defined)
      os << double_str(c.rmse_mean) << ',' << double_str(c.rmse_std);
    else
      os << ',';
    os << '\n';
  };
  put("overall", "", "", report.overall);
  for (std::size_t c = 0; c < report.by_combination.size(); ++c)
    put("combination",
        combo_label_str(static_cast<AvailabilityBits>(c + 1), labels),
        std::to_string(c + 1), report.by_combination[c]);
  for (std::size_t b = 0; b < 4; ++b)
    put("bucket", kBucketLabels[b], "", report.by_bucket[b]);
}

ActivationReport activation_stats(std::span<const RoutingTrace> traces,
                                  const Dataset& eval, bool argmax_only) {
  if (traces.empty()) throw ContractError("activation_stats: no traces");
  // Traces must cover the evaluated set.
  std::set<std::string> traced;
  for (const auto& t : traces) traced.insert(t.sample_id);
  for (const auto& s : eval.subjects)
    if (!traced.count(s.subject_id))
      throw ContractError("activation_stats: no trace for subject " +
                          s.subject_id);

  ActivationReport rep;
  rep.n_modalities = traces.front().slots.size();
  rep.expert_count = traces.front().slots.front().probs.size();
  rep.argmax_only = argmax_only;
  const std::size_t combos = combo_count(rep.n_modalities);

  std::vector<double> expert_counts(rep.expert_count, 0.0);
  std::vector<std::vector<double>> expert_combo(
      rep.expert_count, std::vector<double>(combos, 0.0));
  std::vector<double> combo_events(combos, 0.0);
  std::vector<std::vector<double>> slot_counts(
      rep.n_modalities, std::vector<double>(rep.expert_count, 0.0));

  for (const auto& t : traces) {
    const std::size_t c = t.availability - 1;
    for (const auto& slot : t.slots) {
      rep.events++;
      combo_events[c] += 1.0;
      std::size_t take = argmax_only ? 1 : slot.selected.size();
      for (std::size_t s = 0; s < take; ++s) {
        std::size_t j = slot.selected[s].first;
        expert_counts[j] += 1.0;
        expert_combo[j][c] += 1.0;
        slot_counts[slot.modality][j] += 1.0;
      }
    }
  }

  rep.activation_frequency.resize(rep.expert_count);
  for (std::size_t j = 0; j < rep.expert_count; ++j)
    rep.activation_frequency[j] =
        expert_counts[j] / static_cast<double>(rep.events);

  // Inverse-prevalence reweighting: each combination contributes as if
  // equally prevalent, then rows normalize per expert.
  const double total_events = static_cast<double>(rep.events);
  rep.adjusted_combo_share.assign(rep.expert_count,
                                  std::vector<double>(combos, 0.0));
  for (std::size_t c = 0; c < combos; ++c)
    if (combo_events[c] == 0.0)
      rep.skipped_combos.push_back(static_cast<AvailabilityBits>(c + 1));
  for (std::size_t j = 0; j < rep.expert_count; ++j) {
    double row_sum = 0.0;
    for (std::size_t c = 0; c < combos; ++c) {
      if (combo_events[c] == 0.0) continue;  // skipped, reported above
      double adj = expert_combo[j][c] / (combo_events[c] / total_events);
      rep.adjusted_combo_share[j][c] = adj;
      row_sum += adj;
    }
    if (row_sum > 0.0)
      for (auto& v : rep.adjusted_combo_share[j]) v /= row_sum;
  }

  auto entropy = [](const std::vector<double>& counts) {
    double total = 0.0;
    for (double c : counts) total += c;
    if (total == 0.0) return 0.0;
    double h = 0.0;
    for (double c : counts)
      if (c > 0.0) {
        double p = c / total;
        h -= p * std::log(p);
      }
    return h;
  };
  rep.per_slot_entropy.resize(rep.n_modalities);
  for (std::size_t i = 0; i < rep.n_modalities; ++i)
    rep.per_slot_entropy[i] = entropy(slot_counts[i]);
  rep.aggregate_entropy = entropy(expert_counts);
  return rep;
}

void write_activation_csv(const ActivationReport& report, std::ostream& os) {
  os << "expert_index,activation_frequency";
  const std::size_t combos = combo_count(report.n_modalities);
  for (std::size_t c = 1; c <= combos; ++c) os << ",combo_" << c;
  os << '\n';
  for (std::size_t j = 0; j < report.expert_count; ++j) {
    os << j << ',' << double_str(report.activation_frequency[j]);
    for (std::size_t c = 0; c < combos; ++c)
      os << ',' << double_str(report.adjusted_combo_share[j][c]);
    os << '\n';
  }
}

}  // namespace moefuse
