// Copyright (C) 2026 the moefuse authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "moefuse/dataset.hpp"
#include "moefuse/modality.hpp"
#include "moefuse/smoe.hpp"
#include "moefuse/tensor.hpp"

namespace moefuse {

struct ModelConfig {
  std::vector<std::string> modality_labels = default_modality_labels(4);
  std::vector<std::size_t> feature_dims = {32, 32, 32, 32};
  std::size_t model_dim = 64;
  std::size_t encoder_hidden = 128;
  std::size_t attention_heads = 4;
  std::size_t head_hidden = 64;
  double init_stddev = 0.02;
  /// Bank vectors start with statistics comparable to encoder outputs so
  /// imputed slots are not trivially separable from observed ones.
  double bank_init_stddev = 0.02;

  std::size_t n_modalities() const { return modality_labels.size(); }
  void validate() const;
};

/// Learned imputation table: one vector of model dim per (missing modality
/// m, nonempty available set P not containing m). For N modalities that is
/// N * (2^(N-1) - 1) entries — 28 when N=4. Lookups are deterministic
/// functions of (m, P); an entry only receives gradient on batches where it
/// was used.
class ModalityBank {
 public:
  ModalityBank(std::size_t n_modalities, std::size_t dim);

  void init(Rng& rng, double stddev);

  struct Key {
    std::size_t missing;
    AvailabilityBits available;
  };

  std::size_t size() const { return entries_.size(); }
  const std::vector<Key>& keys() const { return keys_; }

  Tensor& entry(std::size_t missing, AvailabilityBits available);
  const Tensor& entry(std::size_t missing, AvailabilityBits available) const;

  std::string entry_name(std::size_t slot,
                         const std::vector<std::string>& labels) const;

 private:
  std::size_t slot_of(std::size_t missing, AvailabilityBits available) const;

  std::size_t n_;
  std::vector<Key> keys_;
  std::vector<Tensor> entries_;
};

/// Per-modality feedforward encoders D_i -> hidden -> d.
class EncoderStack {
 public:
  EncoderStack(std::vector<std::size_t> feature_dims, std::size_t hidden,
               std::size_t model_dim);

  void init(Rng& rng, double stddev);

  /// Embeds one observed feature vector ({1, D_i}) to {1, d}.
  Tensor encode(std::size_t modality, const Tensor& features) const;

  struct Params {
    Tensor w1, b1, w2, b2;
  };
  std::vector<Params>& params() { return params_; }
  const std::vector<Params>& params() const { return params_; }

 private:
  std::vector<std::size_t> feature_dims_;
  std::size_t hidden_;
  std::size_t model_dim_;
  std::vector<Params> params_;
};

/// One multi-head self-attention layer with a post-norm residual. No
/// positional encoding: modality identity is carried by the per-modality
/// encoders and bank entries, making the layer permutation-equivariant
/// over tokens.
class AttentionLayer {
 public:
  AttentionLayer(std::size_t model_dim, std::size_t heads);

  void init(Rng& rng, double stddev);

  /// tokens: {N, d} -> {N, d}.
  Tensor forward(const Tensor& tokens) const;

  Tensor wq, bq, wk, bk, wv, bv, wo, bo, ln_gamma, ln_beta;

 private:
  std::size_t dim_;
  std::size_t heads_;
};

struct NamedParam {
  std::string name;
  Tensor tensor;
};

/// The full fusion model: per-modality encoders, missing-modality bank,
/// self-attention over the N modality tokens, sparse mixture-of-experts
/// routing per modality slot, and an MLP head over the concatenated slot
/// outputs plus the baseline score.
class FusionModel {
 public:
  FusionModel(ModelConfig config, RoutingConfig routing, std::uint64_t seed);

  struct Encoded {
    std::vector<Tensor> tokens;  // N x {1, d}
    std::vector<bool> imputed;   // N
  };
  /// Fills every slot: encoder output for observed modalities, bank entry
  /// for missing ones (inserted before attention).
  Encoded encode(const SubjectRecord& subject) const;

  Tensor attend(const std::vector<Tensor>& tokens) const;

  struct Forward {
    Tensor prediction;               // {1, 1}
    std::vector<Tensor> slot_probs;  // N x {1, E}
    std::vector<Tensor> slot_outputs;
    std::vector<bool> imputed;
    std::vector<std::vector<std::pair<std::size_t, double>>> selected;
  };
  Forward forward(const SubjectRecord& subject) const;

  /// Inference-only prediction (no graph).
  double predict(const SubjectRecord& subject) const;

  struct Traced {
    double prediction = 0.0;
    RoutingTrace trace;
  };
  Traced trace(const SubjectRecord& subject) const;

  std::vector<NamedParam>& parameters() { return params_; }
  const std::vector<NamedParam>& parameters() const { return params_; }
  Tensor* find_parameter(const std::string& name);

  const ModelConfig& config() const { return config_; }
  const RoutingConfig& routing() const { return smoe_.config(); }

  ModalityBank& bank() { return bank_; }
  const ModalityBank& bank() const { return bank_; }
  SmoeLayer& smoe() { return smoe_; }
  const SmoeLayer& smoe() const { return smoe_; }
  EncoderStack& encoders() { return encoders_; }
  AttentionLayer& attention() { return attention_; }

 private:
  void register_params();

  ModelConfig config_;
  EncoderStack encoders_;
  ModalityBank bank_;
  AttentionLayer attention_;
  SmoeLayer smoe_;
  Tensor head_w1_, head_b1_, head_w2_, head_b2_;
  std::vector<NamedParam> params_;
};

}  // namespace moefuse
