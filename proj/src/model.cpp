// Copyright (C) 2026 the moefuse authors
// SPDX-License-Identifier: Apache-2.0

#include "moefuse/model.hpp"

#include <cmath>

namespace moefuse {

void ModelConfig::validate() const {
  if (modality_labels.empty())
    throw ConfigError("model: needs at least one modality");
  if (feature_dims.size() != modality_labels.size())
    throw ConfigError("model: feature_dims length " +
                      std::to_string(feature_dims.size()) +
                      " does not match " +
                      std::to_string(modality_labels.size()) + " modalities");
  if (model_dim == 0 || encoder_hidden == 0 || head_hidden == 0)
    throw ConfigError("model: dimensions must be positive");
  if (attention_heads == 0 || model_dim % attention_heads != 0)
    throw ConfigError("model: model_dim " + std::to_string(model_dim) +
                      " is not divisible by " +
                      std::to_string(attention_heads) + " attention heads");
}

// --- ModalityBank ---------------------------------------------------------

ModalityBank::ModalityBank(std::size_t n_modalities, std::size_t dim)
    : n_(n_modalities) {
  // Enumerate (missing m, available P) with P a nonempty subset of the
  // other modalities; slot order is (m asc, P-mask asc).
  for (std::size_t m = 0; m < n_; ++m) {
    for (AvailabilityBits bits = 1; bits < (1u << n_); ++bits) {
      if ((bits >> m) & 1u) continue;
      keys_.push_back({m, bits});
      entries_.push_back(Tensor::zeros({1, dim}, true));
    }
  }
}

void ModalityBank::init(Rng& rng, double stddev) {
  for (auto& e : entries_)
    for (auto& v : e.values()) v = rng.normal(0.0, stddev);
}

std::size_t ModalityBank::slot_of(std::size_t missing,
                                  AvailabilityBits available) const {
  if (missing >= n_)
    throw IndexError("bank: modality " + std::to_string(missing) +
                     " out of " + std::to_string(n_));
  if (available == 0 || available >= (1u << n_) ||
      ((available >> missing) & 1u))
    throw ContractError("bank: invalid available set " +
                        std::to_string(available) + " for missing modality " +
                        std::to_string(missing));
  // Compress out bit `missing`: the remaining N-1 bits index the
  // 2^(N-1)-1 nonempty subsets.
  AvailabilityBits low = available & ((1u << missing) - 1u);
  AvailabilityBits high = (available >> (missing + 1)) << missing;
  AvailabilityBits squeezed = low | high;
  const std::size_t per_modality = (std::size_t{1} << (n_ - 1)) - 1;
  return missing * per_modality + (squeezed - 1);
}

Tensor& ModalityBank::entry(std::size_t missing, AvailabilityBits available) {
  return entries_[slot_of(missing, available)];
}

const Tensor& ModalityBank::entry(std::size_t missing,
                                  AvailabilityBits available) const {
  return entries_[slot_of(missing, available)];
}

std::string ModalityBank::entry_name(
    std::size_t slot, const std::vector<std::string>& labels) const {
  const Key& k = keys_[slot];
  std::string avail;
  for (std::size_t i = 0; i < n_; ++i)
    if ((k.available >> i) & 1u) avail += labels[i];
  return "bank." + labels[k.missing] + "." + avail;
}

// --- EncoderStack -----------------------------------------------------------

EncoderStack::EncoderStack(std::vector<std::size_t> feature_dims,
                           std::size_t hidden, std::size_t model_dim)
    : feature_dims_(std::move(feature_dims)),
      hidden_(hidden),
      model_dim_(model_dim),
      params_(feature_dims_.size()) {}

void EncoderStack::init(Rng& rng, double stddev) {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    params_[i].w1 = Tensor::randn({feature_dims_[i], hidden_}, rng, stddev,
                                  true);
    params_[i].b1 = Tensor::zeros({1, hidden_}, true);
    params_[i].w2 = Tensor::randn({hidden_, model_dim_}, rng, stddev, true);
    params_[i].b2 = Tensor::zeros({1, model_dim_}, true);
  }
}

Tensor EncoderStack::encode(std::size_t modality,
                            const Tensor& features) const {
  const Params& p = params_[modality];
  Tensor h = gelu(add_bias(matmul(features, p.w1), p.b1));
  return add_bias(matmul(h, p.w2), p.b2);
}

// --- AttentionLayer -----------------------------------------------------------

AttentionLayer::AttentionLayer(std::size_t model_dim, std::size_t heads)
    : dim_(model_dim), heads_(heads) {
  if (heads_ == 0 || dim_ % heads_ != 0)
    throw ConfigError("attention: model_dim " + std::to_string(dim_) +
                      " is not divisible by " + std::to_string(heads_) +
                      " heads");
}

void AttentionLayer::init(Rng& rng, double stddev) {
  wq = Tensor::randn({dim_, dim_}, rng, stddev, true);
  bq = Tensor::zeros({1, dim_}, true);
  wk = Tensor::randn({dim_, dim_}, rng, stddev, true);
  bk = Tensor::zeros({1, dim_}, true);
  wv = Tensor::randn({dim_, dim_}, rng, stddev, true);
  bv = Tensor::zeros({1, dim_}, true);
  wo = Tensor::randn({dim_, dim_}, rng, stddev, true);
  bo = Tensor::zeros({1, dim_}, true);
  ln_gamma = Tensor::full({1, dim_}, 1.0, true);
  ln_beta = Tensor::zeros({1, dim_}, true);
}

Tensor AttentionLayer::forward(const Tensor& tokens) const {
  const std::size_t dh = dim_ / heads_;
  Tensor q = add_bias(matmul(tokens, wq), bq);
  Tensor k = add_bias(matmul(tokens, wk), bk);
  Tensor v = add_bias(matmul(tokens, wv), bv);
  std::vector<Tensor> head_outputs;
  head_outputs.reserve(heads_);
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  for (std::size_t h = 0; h < heads_; ++h) {
    Tensor qh = slice_cols(q, h * dh, dh);
    Tensor kh = slice_cols(k, h * dh, dh);
    Tensor vh = slice_cols(v, h * dh, dh);
    Tensor scores = scale(matmul(qh, transpose(kh)), inv_sqrt);
    head_outputs.push_back(matmul(softmax(scores), vh));
  }
  Tensor proj = add_bias(matmul(concat(head_outputs), wo), bo);
  return layer_norm(add(tokens, proj), ln_gamma, ln_beta);
}

// --- FusionModel ---------------------------------------------------------------

FusionModel::FusionModel(ModelConfig config, RoutingConfig routing,
                         std::uint64_t seed)
    : config_(std::move(config)),
      encoders_(config_.feature_dims, config_.encoder_hidden,
                config_.model_dim),
      bank_(config_.n_modalities(), config_.model_dim),
      attention_(config_.model_dim, config_.attention_heads),
      smoe_(config_.n_modalities(), config_.model_dim, routing) {
  config_.validate();
  Rng rng = Rng::stream(seed, "init");
  encoders_.init(rng, config_.init_stddev);
  bank_.init(rng, config_.bank_init_stddev);
  attention_.init(rng, config_.init_stddev);
  smoe_.init(rng, config_.init_stddev);
  const std::size_t head_in =
      config_.n_modalities() * config_.model_dim + 1;
  head_w1_ = Tensor::randn({head_in, config_.head_hidden}, rng,
                           config_.init_stddev, true);
  head_b1_ = Tensor::zeros({1, config_.head_hidden}, true);
  head_w2_ = Tensor::randn({config_.head_hidden, 1}, rng, config_.init_stddev,
                           true);
  head_b2_ = Tensor::zeros({1, 1}, true);
  register_params();
}

void FusionModel::register_params() {
  const auto& labels = config_.modality_labels;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    auto& p = encoders_.params()[i];
    params_.push_back({"encoder." + labels[i] + ".w1", p.w1});
    params_.push_back({"encoder." + labels[i] + ".b1", p.b1});
    params_.push_back({"encoder." + labels[i] + ".w2", p.w2});
    params_.push_back({"encoder." + labels[i] + ".b2", p.b2});
  }
  for (std::size_t s = 0; s < bank_.size(); ++s)
    params_.push_back(
        {bank_.entry_name(s, labels),
         bank_.entry(bank_.keys()[s].missing, bank_.keys()[s].available)});
  params_.push_back({"attn.wq", attention_.wq});
  params_.push_back({"attn.bq", attention_.bq});
  params_.push_back({"attn.wk", attention_.wk});
  params_.push_back({"attn.bk", attention_.bk});
  params_.push_back({"attn.wv", attention_.wv});
  params_.push_back({"attn.bv", attention_.bv});
  params_.push_back({"attn.wo", attention_.wo});
  params_.push_back({"attn.bo", attention_.bo});
  params_.push_back({"attn.ln_gamma", attention_.ln_gamma});
  params_.push_back({"attn.ln_beta", attention_.ln_beta});
  if (smoe_.config().strategy == RoutingStrategy::Shared) {
    params_.push_back({"gate.shared.w", smoe_.gate(0)});
  } else {
    for (std::size_t i = 0; i < labels.size(); ++i)
      params_.push_back({"gate." + labels[i] + ".w", smoe_.gate(i)});
  }
  for (std::size_t j = 0; j < smoe_.experts().size(); ++j) {
    auto& e = smoe_.experts()[j];
    std::string base = "expert." + std::to_string(j);
    params_.push_back({base + ".w1", e.w1});
    params_.push_back({base + ".b1", e.b1});
    params_.push_back({base + ".w2", e.w2});
    params_.push_back({base + ".b2", e.b2});
  }
  params_.push_back({"head.w1", head_w1_});
  params_.push_back({"head.b1", head_b1_});
  params_.push_back({"head.w2", head_w2_});
  params_.push_back({"head.b2", head_b2_});
}

Tensor* FusionModel::find_parameter(const std::string& name) {
  for (auto& p : params_)
    if (p.name == name) return &p.tensor;
  return nullptr;
}

FusionModel::Encoded FusionModel::encode(const SubjectRecord& subject) const {
  const std::size_t n = config_.n_modalities();
  if (subject.availability == 0)
    throw ContractError("encode: subject " + subject.subject_id +
                        " has empty availability");
  if (subject.availability >= (1u << n))
    throw ContractError("encode: availability mask " +
                        std::to_string(subject.availability) +
                        " does not fit " + std::to_string(n) + " modalities");
  Encoded out;
  out.tokens.resize(n);
  out.imputed.resize(n, false);
  for (std::size_t i = 0; i < n; ++i) {
    if ((subject.availability >> i) & 1u) {
      const auto& feats = subject.features.at(i);
      if (feats.size() != config_.feature_dims[i])
        throw ShapeError("encode: subject " + subject.subject_id +
                         " modality " + config_.modality_labels[i] + " has " +
                         std::to_string(feats.size()) +
                         " features, expected " +
                         std::to_string(config_.feature_dims[i]));
      out.tokens[i] = encoders_.encode(
          i, Tensor::from_data({1, feats.size()}, feats));
    } else {
      out.tokens[i] = bank_.entry(i, subject.availability);
      out.imputed[i] = true;
    }
  }
  return out;
}

Tensor FusionModel::attend(const std::vector<Tensor>& tokens) const {
  return attention_.forward(stack_rows(tokens));
}

FusionModel::Forward FusionModel::forward(const SubjectRecord& subject) const {
  const std::size_t n = config_.n_modalities();
  Encoded enc = encode(subject);
  Tensor routed = attend(enc.tokens);
  Forward out;
  out.imputed = std::move(enc.imputed);
  out.slot_probs.reserve(n);
  out.slot_outputs.reserve(n);
  std::vector<Tensor> pieces;
  pieces.reserve(n + 1);
  for (std::size_t i = 0; i < n; ++i) {
    auto slot = smoe_.route_slot(row(routed, i), i);
    pieces.push_back(slot.output);
    out.slot_probs.push_back(std::move(slot.probs));
    out.slot_outputs.push_back(pieces.back());
    out.selected.push_back(std::move(slot.selected));
  }
  pieces.push_back(Tensor::from_data({1, 1}, {subject.baseline_score}));
  Tensor h = gelu(add_bias(matmul(concat(pieces), head_w1_), head_b1_));
  out.prediction = add_bias(matmul(h, head_w2_), head_b2_);
  return out;
}

double FusionModel::predict(const SubjectRecord& subject) const {
  NoGradGuard ng;
  return forward(subject).prediction.item();
}

FusionModel::Traced FusionModel::trace(const SubjectRecord& subject) const {
  NoGradGuard ng;
  Forward f = forward(subject);
  Traced out;
  out.prediction = f.prediction.item();
  out.trace.sample_id = subject.subject_id;
  out.trace.availability = subject.availability;
  const std::size_t n = config_.n_modalities();
  out.trace.slots.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    SlotTrace& slot = out.trace.slots[i];
    slot.modality = i;
    slot.imputed = f.imputed[i];
    slot.probs = f.slot_probs[i].values();
    slot.selected = std::move(f.selected[i]);
  }
  return out;
}

}  // namespace moefuse
