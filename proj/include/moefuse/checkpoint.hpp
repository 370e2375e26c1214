// Copyright (C) 2026 the moefuse authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>

#include "moefuse/model.hpp"

namespace moefuse {

/// Self-describing JSON checkpoint: format version, model and routing
/// configuration, and every named parameter array with its shape. Doubles
/// serialize shortest-round-trip, so save -> load -> save is byte-stable.
void save_checkpoint(const FusionModel& model, const std::string& path);
FusionModel load_checkpoint(const std::string& path);

}  // namespace moefuse
