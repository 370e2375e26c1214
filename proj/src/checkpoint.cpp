// Copyright (C) 2026 the moefuse authors
// SPDX-License-Identifier: Apache-2.0

#include "moefuse/checkpoint.hpp"

#include <fstream>

#include <json.hpp>

namespace moefuse {

using nlohmann::json;

namespace {
constexpr int kFormatVersion = 1;
}

void save_checkpoint(const FusionModel& model, const std::string& path) {
  const ModelConfig& mc = model.config();
  const RoutingConfig& rc = model.routing();
  json j;
  j["format_version"] = kFormatVersion;
  j["model"] = {{"modality_labels", mc.modality_labels},
                {"feature_dims", mc.feature_dims},
                {"model_dim", mc.model_dim},
                {"encoder_hidden", mc.encoder_hidden},
                {"attention_heads", mc.attention_heads},
                {"head_hidden", mc.head_hidden},
                {"init_stddev", mc.init_stddev},
                {"bank_init_stddev", mc.bank_init_stddev}};
  j["routing"] = {{"strategy", routing_strategy_name(rc.strategy)},
                  {"expert_count", rc.expert_count},
                  {"top_k", rc.top_k},
                  {"expert_hidden", rc.expert_hidden},
                  {"renormalize", rc.renormalize},
                  {"spec_loss_on_imputed", rc.spec_loss_on_imputed}};
  json params = json::object();
  for (const auto& p : model.parameters())
    params[p.name] = {{"shape", p.tensor.shape()},
                      {"data", p.tensor.values()}};
  j["params"] = std::move(params);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path + "' for writing");
  f << j.dump() << '\n';
  if (!f) throw IoError("write to '" + path + "' failed");
}

FusionModel load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path + "'");
  json j;
  try {
    f >> j;
  } catch (const json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
  try {
    if (j.at("format_version").get<int>() != kFormatVersion)
      throw ParseError(path + ": unsupported checkpoint format version");
    const json& m = j.at("model");
    ModelConfig mc;
    mc.modality_labels = m.at("modality_labels").get<std::vector<std::string>>();
    mc.feature_dims = m.at("feature_dims").get<std::vector<std::size_t>>();
    mc.model_dim = m.at("model_dim").get<std::size_t>();
    mc.encoder_hidden = m.at("encoder_hidden").get<std::size_t>();
    mc.attention_heads = m.at("attention_heads").get<std::size_t>();
    mc.head_hidden = m.at("head_hidden").get<std::size_t>();
    mc.init_stddev = m.at("init_stddev").get<double>();
    mc.bank_init_stddev = m.at("bank_init_stddev").get<double>();
    const json& r = j.at("routing");
    RoutingConfig rc;
    rc.strategy = parse_routing_strategy(r.at("strategy").get<std::string>());
    rc.expert_count = r.at("expert_count").get<std::size_t>();
    rc.top_k = r.at("top_k").get<std::size_t>();
    rc.expert_hidden = r.at("expert_hidden").get<std::size_t>();
    rc.renormalize = r.at("renormalize").get<bool>();
    rc.spec_loss_on_imputed = r.at("spec_loss_on_imputed").get<bool>();

    FusionModel model(mc, rc, /*seed=*/0);
    const json& params = j.at("params");
    std::size_t loaded = 0;
    for (auto& p : model.parameters()) {
      auto it = params.find(p.name);
      if (it == params.end())
        throw ParseError(path + ": missing parameter '" + p.name + "'");
      auto shape = it->at("shape").get<Shape>();
      if (shape != p.tensor.shape())
        throw ParseError(path + ": parameter '" + p.name + "' has shape " +
                         shape_str(shape) + ", expected " +
                         shape_str(p.tensor.shape()));
      auto data = it->at("data").get<std::vector<double>>();
      if (data.size() != p.tensor.numel())
        throw ParseError(path + ": parameter '" + p.name +
                         "' has wrong element count");
      p.tensor.values() = std::move(data);
      ++loaded;
    }
    if (loaded != params.size())
      throw ParseError(path + ": checkpoint has " +
                       std::to_string(params.size()) +
                       " parameters, model expects " + std::to_string(loaded));
    return model;
  } catch (const json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
}

}  // namespace moefuse
