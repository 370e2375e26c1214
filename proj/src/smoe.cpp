// Copyright (C) 2026 the moefuse authors
// SPDX-License-Identifier: Apache-2.0

#include "moefuse/smoe.hpp"

#include <algorithm>
#include <numeric>
#include <ostream>

#include "moefuse/textio.hpp"

namespace moefuse {

const char* routing_strategy_name(RoutingStrategy s) {
  return s == RoutingStrategy::Shared ? "shared" : "per-modality";
}

RoutingStrategy parse_routing_strategy(const std::string& name) {
  if (name == "shared") return RoutingStrategy::Shared;
  if (name == "per-modality") return RoutingStrategy::PerModality;
  throw ConfigError("unknown routing strategy '" + name +
                    "' (expected shared|per-modality)");
}

void RoutingConfig::validate(std::size_t n_modalities,
                             bool specialization_enabled) const {
  if (expert_count == 0)
    throw ConfigError("routing: expert count must be positive");
  if (top_k == 0 || top_k > expert_count)
    throw ConfigError("routing: top_k " + std::to_string(top_k) +
                      " outside [1, " + std::to_string(expert_count) + "]");
  if (expert_hidden == 0)
    throw ConfigError("routing: expert hidden dim must be positive");
  if (specialization_enabled) {
    std::size_t need = std::size_t{1} << n_modalities;
    if (expert_count < need)
      throw ConfigError(
          "routing: specialization loss needs at least " +
          std::to_string(need) + " experts (" +
          std::to_string(combo_count(n_modalities)) +
          " targets plus a buffer) but expert_count is " +
          std::to_string(expert_count));
  }
}

std::vector<std::size_t> top_k_indices(std::span<const double> v,
                                       std::size_t k) {
  if (k == 0 || k > v.size())
    throw ContractError("top_k: k=" + std::to_string(k) + " outside [1, " +
                        std::to_string(v.size()) + "]");
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k),
                    idx.end(), [&](std::size_t a, std::size_t b) {
                      if (v[a] != v[b]) return v[a] > v[b];
                      return a < b;  // ties at the threshold: lower index wins
                    });
  idx.resize(k);
  return idx;
}

std::vector<double> top_k_mask(std::span<const double> v, std::size_t k) {
  auto kept = top_k_indices(v, k);
  std::vector<double> out(v.size(), 0.0);
  for (std::size_t i : kept) out[i] = v[i];
  return out;
}

void write_traces_csv(std::ostream& os, std::span<const RoutingTrace> traces,
                      const std::vector<std::string>& labels) {
  os << "sample_id,modality_label,availability_bitmask,expert_index,"
        "gate_weight,selected\n";
  for (const auto& t : traces) {
    for (const auto& slot : t.slots) {
      for (const auto& [expert, weight] : slot.selected) {
        os << t.sample_id << ',' << labels[slot.modality] << ','
           << t.availability << ',' << expert << ',' << double_str(weight)
           << ",1\n";
      }
    }
  }
}

SmoeLayer::SmoeLayer(std::size_t n_modalities, std::size_t model_dim,
                     RoutingConfig config)
    : n_modalities_(n_modalities),
      model_dim_(model_dim),
      config_(config) {
  config_.validate(n_modalities, /*specialization_enabled=*/false);
  std::size_t gate_count =
      config_.strategy == RoutingStrategy::Shared ? 1 : n_modalities_;
  gates_.resize(gate_count);
  experts_.resize(config_.expert_count);
}

void SmoeLayer::init(Rng& rng, double stddev) {
  for (auto& g : gates_)
    g = Tensor::randn({model_dim_, config_.expert_count}, rng, stddev, true);
  for (auto& e : experts_) {
    e.w1 = Tensor::randn({model_dim_, config_.expert_hidden}, rng, stddev,
                         true);
    e.b1 = Tensor::zeros({1, config_.expert_hidden}, true);
    e.w2 = Tensor::randn({config_.expert_hidden, model_dim_}, rng, stddev,
                         true);
    e.b2 = Tensor::zeros({1, model_dim_}, true);
  }
}

Tensor& SmoeLayer::gate(std::size_t modality) {
  return gates_[config_.strategy == RoutingStrategy::Shared ? 0 : modality];
}

const Tensor& SmoeLayer::gate(std::size_t modality) const {
  return gates_[config_.strategy == RoutingStrategy::Shared ? 0 : modality];
}

SmoeLayer::SlotRoute SmoeLayer::route_slot(const Tensor& h,
                                           std::size_t modality) const {
  if (modality >= n_modalities_)
    throw IndexError("route_slot: modality " + std::to_string(modality) +
                     " out of " + std::to_string(n_modalities_));
  SlotRoute out;
  Tensor logits = matmul(h, gate(modality));
  out.probs = softmax(logits);
  auto kept = top_k_indices(out.probs.values(), config_.top_k);

  // Mixture over the surviving experts; gradients flow through the
  // selected gate probabilities, masked ones stay exactly zero.
  Tensor mix;
  Tensor weight_sum;
  for (std::size_t j : kept) {
    const Expert& e = experts_[j];
    Tensor fj = add_bias(
        matmul(gelu(add_bias(matmul(h, e.w1), e.b1)), e.w2), e.b2);
    Tensor wj = select(out.probs, j);
    Tensor term = mul_scalar(fj, wj);
    mix = mix.defined() ? add(mix, term) : term;
    if (config_.renormalize)
      weight_sum = weight_sum.defined() ? add(weight_sum, wj) : wj;
    out.selected.emplace_back(j, out.probs.values()[j]);
  }
  if (config_.renormalize) mix = mul_scalar(mix, reciprocal(weight_sum));
  out.output = std::move(mix);
  return out;
}

Tensor balancing_loss(
    const std::vector<std::vector<Tensor>>& batch_slot_probs,
    RoutingStrategy strategy) {
  if (batch_slot_probs.empty())
    throw ContractError("balancing_loss: empty batch");
  const std::size_t n_slots = batch_slot_probs.front().size();
  if (strategy == RoutingStrategy::Shared) {
    Tensor importance;
    for (const auto& slots : batch_slot_probs)
      for (const auto& p : slots)
        importance = importance.defined() ? add(importance, p) : p;
    return cv_squared(importance);
  }
  Tensor total;
  for (std::size_t i = 0; i < n_slots; ++i) {
    Tensor importance;
    for (const auto& slots : batch_slot_probs)
      importance = importance.defined() ? add(importance, slots[i]) : slots[i];
    Tensor term = cv_squared(importance);
    total = total.defined() ? add(total, term) : term;
  }
  return total;
}

Tensor specialization_loss(
    const std::vector<std::vector<Tensor>>& batch_slot_probs,
    const std::vector<AvailabilityBits>& availability,
    std::size_t n_modalities, std::size_t expert_count, bool include_imputed) {
  if (batch_slot_probs.empty())
    throw ContractError("specialization_loss: empty batch");
  if (batch_slot_probs.size() != availability.size())
    throw ContractError("specialization_loss: batch sizes disagree");
  std::size_t need = std::size_t{1} << n_modalities;
  if (expert_count < need)
    throw ConfigError("specialization_loss: needs at least " +
                      std::to_string(need) + " experts, got " +
                      std::to_string(expert_count));
  Tensor total;
  std::size_t terms = 0;
  for (std::size_t s = 0; s < batch_slot_probs.size(); ++s) {
    AvailabilityBits bits = availability[s];
    if (bits == 0)
      throw ContractError("specialization_loss: empty availability");
    std::size_t target = bits - 1;  // buffer expert 2^N-1 is never a target
    for (std::size_t i = 0; i < n_modalities; ++i) {
      if (!include_imputed && !((bits >> i) & 1u)) continue;
      Tensor ce = cross_entropy(batch_slot_probs[s][i], target);
      total = total.defined() ? add(total, ce) : ce;
      ++terms;
    }
  }
  return scale(total, 1.0 / static_cast<double>(terms));
}

}  // namespace moefuse
