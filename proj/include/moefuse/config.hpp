// Copyright (C) 2026 the moefuse authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <map>
#include <string>

#include "moefuse/dataset.hpp"
#include "moefuse/model.hpp"
#include "moefuse/train.hpp"

namespace moefuse {

/// Flat dotted-key configuration text: one `section.key = value` per line,
/// '#' starts a comment. Lists are comma-separated. Flag overrides merge on
/// top of file values; the fully resolved map is echoed to the output
/// directory and suffices to reproduce a run.
using KvMap = std::map<std::string, std::string>;

KvMap parse_kv_text(const std::string& text, const std::string& source);
KvMap load_kv_file(const std::string& path);
std::string serialize_kv(const KvMap& kv);
void write_kv_file(const KvMap& kv, const std::string& path);

struct RunConfig {
  GeneratorConfig generator;
  std::size_t model_dim = 64;
  std::size_t encoder_hidden = 128;
  std::size_t attention_heads = 4;
  std::size_t head_hidden = 64;
  double init_stddev = 0.02;
  double bank_init_stddev = 0.02;
  RoutingConfig routing;
  TrainConfig train;
  std::array<double, 3> split_fractions = {0.70, 0.15, 0.15};
  std::uint64_t split_seed = 1;

  /// Network dims from the config, data dims from the dataset header.
  ModelConfig model_for(const DatasetHeader& header) const;
};

/// Applies kv values over defaults. Unknown keys and malformed values are
/// configuration errors naming the key.
RunConfig resolve_config(const KvMap& kv);

/// Full echo of a resolved config, parseable by resolve_config.
KvMap config_to_kv(const RunConfig& config);

}  // namespace moefuse
