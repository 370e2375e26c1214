// Copyright (C) 2026 the moefuse authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "moefuse/modality.hpp"

namespace moefuse {

/// One training/eval sample: per-modality feature vectors for the observed
/// modalities, the availability mask (which must match the feature keys
/// exactly), the baseline clinical score, and the two-year change target.
struct SubjectRecord {
  std::string subject_id;
  std::string participant_id;
  std::map<std::size_t, std::vector<double>> features;  // modality -> vector
  AvailabilityBits availability = 0;
  double baseline_score = 0.0;
  double target_delta = 0.0;
};

struct DatasetHeader {
  std::uint32_t format_version = 1;
  std::vector<std::string> modalities;
  std::vector<std::size_t> feature_dims;

  std::size_t n_modalities() const { return modalities.size(); }
};

struct Dataset {
  DatasetHeader header;
  std::vector<SubjectRecord> subjects;

  std::size_t size() const { return subjects.size(); }
};

/// Validates one record against a header: key set vs mask, feature lengths,
/// baseline range. Throws ContractError / ShapeError.
void validate_record(const SubjectRecord& r, const DatasetHeader& h);

// --- Synthetic generation -------------------------------------------------

struct GeneratorConfig {
  enum class TargetMode { SharedLatent, ModalitySpecialized };

  std::size_t participants = 500;
  /// Weights over 1..k subjects per participant.
  std::vector<double> subjects_per_participant_weights = {0.5, 0.3, 0.15,
                                                          0.05};
  std::vector<std::string> modality_labels = default_modality_labels(4);
  std::vector<std::size_t> feature_dims = {32, 32, 32, 32};
  std::size_t latent_dim = 8;
  double noise_scale = 0.1;
  /// Per-subject latent spread around the participant latent.
  double within_participant_spread = 0.3;
  /// Weights over the 2^N-1 nonempty availability combinations, indexed by
  /// mask-1. Empty selects default_pattern_weights().
  std::vector<double> pattern_weights;
  std::uint64_t seed = 1;
  TargetMode target_mode = TargetMode::ModalitySpecialized;

  std::size_t n_modalities() const { return modality_labels.size(); }
};

/// Default availability mix for N=4: 60.8% of subjects with exactly one
/// modality (evenly over the 4 singletons), 5.9% with all four, the rest
/// evenly over pairs and triples. Uniform for other N.
std::vector<double> default_pattern_weights(std::size_t n_modalities);

/// The fixed random maps and target functions behind a generated dataset,
/// exposed so tests can recover latents and verify the noiseless limit.
struct LatentModel {
  GeneratorConfig::TargetMode mode = GeneratorConfig::TargetMode::SharedLatent;
  std::size_t latent_dim = 0;
  /// Per modality: D_i x L row-major map from latent to features.
  std::vector<std::vector<double>> feature_maps;
  std::vector<double> baseline_dir;
  std::vector<double> shared_lin_dir;
  std::vector<double> shared_tanh_dir;
  double shared_tanh_bias = 0.0;
  std::vector<std::vector<double>> modality_dirs;
  std::vector<double> modality_biases;

  std::vector<double> feature_mean(std::size_t modality,
                                   const std::vector<double>& z) const;
  double baseline_mean(const std::vector<double>& z) const;
  /// Noise-free target for a subject with latent z and availability bits.
  double target_mean(const std::vector<double>& z, AvailabilityBits bits,
                     std::size_t n_modalities) const;
};

/// Draws a dataset from the generator. Deterministic per config.seed.
Dataset generate(const GeneratorConfig& config,
                 LatentModel* internals = nullptr);

// --- Splitting and augmentation --------------------------------------------

struct SplitResult {
  Dataset train, val, test;
  std::array<double, 3> realized_fractions{};
  /// True when every realized fraction is within 5 points of its target.
  bool within_tolerance = true;
};

/// Partition by participant: no participant ever spans two splits.
SplitResult split_grouped(const Dataset& data,
                          std::array<double, 3> fractions, std::uint64_t seed);

/// For every subject with two or more observed modalities, appends one
/// derived subject per observed modality holding only that modality.
/// Derived ids record the parent and the withheld set; originals are kept.
Dataset augment_withholding(const Dataset& data);

// --- File formats -----------------------------------------------------------

/// JSON-lines: a header object line, then one record object per line.
void write_jsonl(const Dataset& data, const std::string& path);
Dataset read_jsonl(const std::string& path);

/// Length-prefixed binary container (bit-exact round trip).
void write_binary(const Dataset& data, const std::string& path);
Dataset read_binary(const std::string& path);

}  // namespace moefuse
