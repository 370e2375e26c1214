// Copyright (C) 2026 the moefuse authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "moefuse/dataset.hpp"
#include "moefuse/smoe.hpp"

namespace moefuse {

double rmse(std::span<const double> predictions,
            std::span<const double> targets);

/// Target-delta buckets: <0, =0, (0,1], >1 (half-open as listed).
inline constexpr std::array<const char*, 4> kBucketLabels = {"<0", "=0",
                                                             "(0,1]", ">1"};
std::size_t target_bucket(double delta);

struct CellStat {
  std::size_t n = 0;
  double rmse_mean = 0.0;
  double rmse_std = 0.0;
  bool defined = false;  // false when the cell is empty
};

/// RMSE broken out overall, per availability combination, and per
/// target-delta bucket; mean +- population stddev across seeds when several
/// prediction sets are supplied.
struct MetricsReport {
  std::size_t n_modalities = 0;
  std::size_t seed_count = 0;
  CellStat overall;
  std::vector<CellStat> by_combination;  // indexed by mask-1
  std::array<CellStat, 4> by_bucket;
};

/// predictions_per_seed: one aligned prediction vector per seed.
MetricsReport tabulate(
    const Dataset& eval,
    const std::vector<std::vector<double>>& predictions_per_seed);

void write_metrics_json(const MetricsReport& report,
                        const std::vector<std::string>& labels,
                        const std::string& path);
void write_metrics_csv(const MetricsReport& report,
                       const std::vector<std::string>& labels,
                       std::ostream& os);

/// Expert activation statistics over a set of routing traces. "Activated"
/// counts top-k membership by default; argmax_only restricts to the highest
/// gate. Combination distributions are reweighted as if all combinations
/// were equally prevalent; zero-prevalence combinations are skipped and
/// listed.
struct ActivationReport {
  std::size_t expert_count = 0;
  std::size_t n_modalities = 0;
  std::size_t events = 0;  // (sample, modality) routing events
  bool argmax_only = false;
  /// Per expert: selections / events (sums to k, or 1 under argmax_only).
  std::vector<double> activation_frequency;
  /// Per expert: adjusted share per combination (rows sum to 1 for experts
  /// that were selected at least once).
  std::vector<std::vector<double>> adjusted_combo_share;
  std::vector<double> per_slot_entropy;  // nats, one per modality slot
  double aggregate_entropy = 0.0;        // nats, all events pooled
  std::vector<AvailabilityBits> skipped_combos;
};

ActivationReport activation_stats(std::span<const RoutingTrace> traces,
                                  const Dataset& eval,
                                  bool argmax_only = false);

void write_activation_csv(const ActivationReport& report, std::ostream& os);

}  // namespace moefuse
