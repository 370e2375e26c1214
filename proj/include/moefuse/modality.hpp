// Copyright (C) 2026 the moefuse authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <bit>
#include <cstdint>
#include <string>
#include <vector>

#include "moefuse/error.hpp"

namespace moefuse {

/// Index plus short display label of one input modality. Indices are dense
/// and stable for a configured model; bit i of an availability mask refers
/// to modality i.
struct ModalityId {
  std::size_t index = 0;
  std::string label;
};

using AvailabilityBits = std::uint32_t;

/// Default labels: T1 MRI, FLAIR, AB PET, tau PET for the four-modality
/// setup; generic m<i> beyond that.
std::vector<std::string> default_modality_labels(std::size_t n);

/// Bitmask over the N modalities of a configured model; bit i set means
/// modality i was observed. Indexes combinations, bank entries, and target
/// experts.
class AvailabilitySet {
 public:
  AvailabilitySet() = default;
  AvailabilitySet(AvailabilityBits bits, std::size_t n_modalities)
      : bits_(bits), n_(n_modalities) {
    if (n_ == 0 || n_ >= 31)
      throw ContractError("availability: modality count out of range");
    if (bits_ >= (1u << n_))
      throw ContractError("availability: mask " + std::to_string(bits_) +
                          " does not fit " + std::to_string(n_) +
                          " modalities");
  }

  static AvailabilitySet all(std::size_t n) {
    return AvailabilitySet((1u << n) - 1, n);
  }
  static AvailabilitySet single(std::size_t i, std::size_t n) {
    return AvailabilitySet(1u << i, n);
  }

  AvailabilityBits bits() const { return bits_; }
  std::size_t n_modalities() const { return n_; }
  bool observed(std::size_t i) const { return (bits_ >> i) & 1u; }
  bool empty() const { return bits_ == 0; }
  std::size_t count() const { return std::popcount(bits_); }

  /// Dense index over the 2^N-1 nonempty combinations: mask - 1.
  std::size_t combo_index() const {
    if (empty()) throw ContractError("combo_index of empty availability");
    return bits_ - 1;
  }

  std::vector<std::size_t> observed_indices() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < n_; ++i)
      if (observed(i)) out.push_back(i);
    return out;
  }

  std::vector<std::size_t> missing_indices() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < n_; ++i)
      if (!observed(i)) out.push_back(i);
    return out;
  }

  /// Concatenated labels of observed modalities, e.g. "MFA".
  std::string label(const std::vector<std::string>& labels) const {
    std::string s;
    for (std::size_t i = 0; i < n_; ++i)
      if (observed(i)) s += labels[i];
    return s;
  }

  bool operator==(const AvailabilitySet&) const = default;

 private:
  AvailabilityBits bits_ = 0;
  std::size_t n_ = 0;
};

inline std::size_t combo_count(std::size_t n_modalities) {
  return (std::size_t{1} << n_modalities) - 1;
}

}  // namespace moefuse
