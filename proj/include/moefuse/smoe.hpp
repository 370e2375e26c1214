// Copyright (C) 2026 the moefuse authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <span>
#include <string>
#include <utility>
#include <vector>

#include "moefuse/modality.hpp"
#include "moefuse/rng.hpp"
#include "moefuse/tensor.hpp"

namespace moefuse {

enum class RoutingStrategy { Shared, PerModality };

const char* routing_strategy_name(RoutingStrategy s);
RoutingStrategy parse_routing_strategy(const std::string& name);

/// Sparse mixture-of-experts configuration. Under PerModality every
/// modality gets its own gating network; under Shared a single gate serves
/// all modality slots. The specialization loss maps availability
/// combination mask b to target expert b-1 (bit 0 = first modality), which
/// leaves expert 2^N-1 as a buffer with no target combination; it requires
/// expert_count >= 2^N.
struct RoutingConfig {
  RoutingStrategy strategy = RoutingStrategy::PerModality;
  std::size_t expert_count = 16;
  std::size_t top_k = 2;
  std::size_t expert_hidden = 64;
  /// Renormalize the surviving top-k weights to sum to 1 (ablation only;
  /// the faithful mixture keeps raw softmax weights).
  bool renormalize = false;
  /// Apply the specialization loss to bank-imputed slots as well as
  /// observed ones.
  bool spec_loss_on_imputed = true;

  void validate(std::size_t n_modalities, bool specialization_enabled) const;
};

/// Keeps entries at least as large as the k-th highest value, zeroes the
/// rest; ties at the threshold break toward lower indices so the result has
/// exactly k survivors.
std::vector<double> top_k_mask(std::span<const double> v, std::size_t k);
/// Indices of the k kept entries, highest value first (index-ascending on
/// ties).
std::vector<std::size_t> top_k_indices(std::span<const double> v,
                                       std::size_t k);

/// Per-sample record of where each modality slot was routed.
struct SlotTrace {
  std::size_t modality = 0;
  bool imputed = false;
  std::vector<double> probs;  // full gate distribution, length E
  std::vector<std::pair<std::size_t, double>> selected;  // k (expert, weight)
};

struct RoutingTrace {
  std::string sample_id;
  AvailabilityBits availability = 0;
  std::vector<SlotTrace> slots;
};

/// CSV export: sample_id, modality_label, availability_bitmask,
/// expert_index, gate_weight, selected — one row per routed expert.
void write_traces_csv(std::ostream& os, std::span<const RoutingTrace> traces,
                      const std::vector<std::string>& labels);

/// Expert networks plus one gate (Shared) or N gates (PerModality).
class SmoeLayer {
 public:
  SmoeLayer(std::size_t n_modalities, std::size_t model_dim,
            RoutingConfig config);

  void init(Rng& rng, double stddev);

  struct SlotRoute {
    Tensor output;  // {1, d}
    Tensor probs;   // {1, E} pre-top-k softmax of the gate
    std::vector<std::pair<std::size_t, double>> selected;
  };

  /// Routes one modality slot embedding h ({1, d}) through the top-k
  /// mixture: o = sum_j f_j(h) * w_j with w_j the softmax gate values of
  /// the surviving experts (not renormalized unless configured).
  SlotRoute route_slot(const Tensor& h, std::size_t modality) const;

  const RoutingConfig& config() const { return config_; }
  std::size_t n_modalities() const { return n_modalities_; }

  /// Gate weight matrix {d, E} for a modality (the shared one under
  /// Shared).
  Tensor& gate(std::size_t modality);
  const Tensor& gate(std::size_t modality) const;
  std::size_t gate_count() const { return gates_.size(); }

  struct Expert {
    Tensor w1, b1, w2, b2;
  };
  std::vector<Expert>& experts() { return experts_; }
  const std::vector<Expert>& experts() const { return experts_; }

 private:
  std::size_t n_modalities_;
  std::size_t model_dim_;
  RoutingConfig config_;
  std::vector<Tensor> gates_;  // 1 under Shared, N under PerModality
  std::vector<Expert> experts_;
};

/// Importance balancing penalty over one batch: per router, importance_j =
/// sum over that router's events of gate probability j, and the loss is the
/// squared coefficient of variation of the importance vector. PerModality
/// sums the penalty over the N routers; Shared computes it once over all
/// routing events.
Tensor balancing_loss(
    const std::vector<std::vector<Tensor>>& batch_slot_probs,
    RoutingStrategy strategy);

/// Cross-entropy pressure routing availability combination b to expert
/// b-1, averaged over the included (sample, slot) pairs. When
/// include_imputed is false only observed slots contribute.
Tensor specialization_loss(
    const std::vector<std::vector<Tensor>>& batch_slot_probs,
    const std::vector<AvailabilityBits>& availability,
    std::size_t n_modalities, std::size_t expert_count, bool include_imputed);

}  // namespace moefuse
