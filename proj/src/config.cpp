// Copyright (C) 2026 the moefuse authors
// SPDX-License-Identifier: Apache-2.0

#include "moefuse/config.hpp"

#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

#include "moefuse/textio.hpp"

namespace moefuse {

namespace {

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  return out;
}

}  // namespace

KvMap parse_kv_text(const std::string& text, const std::string& source) {
  KvMap kv;
  std::stringstream ss(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ParseError(source + ":" + std::to_string(lineno) +
                       ": expected 'key = value'");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty())
      throw ParseError(source + ":" + std::to_string(lineno) + ": empty key");
    kv[key] = value;
  }
  return kv;
}

KvMap load_kv_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_kv_text(ss.str(), path);
}

std::string serialize_kv(const KvMap& kv) {
  std::string out;
  for (const auto& [k, v] : kv) {
    out += k;
    out += " = ";
    out += v;
    out += '\n';
  }
  return out;
}

void write_kv_file(const KvMap& kv, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path + "' for writing");
  f << serialize_kv(kv);
  if (!f) throw IoError("write to '" + path + "' failed");
}

namespace {

class KvReader {
 public:
  explicit KvReader(const KvMap& kv) : kv_(kv) {}

  bool has(const std::string& key) {
    used_.insert(key);
    return kv_.count(key) > 0;
  }

  std::string str(const std::string& key, const std::string& fallback) {
    used_.insert(key);
    auto it = kv_.find(key);
    return it == kv_.end() ? fallback : it->second;
  }

  double f64(const std::string& key, double fallback) {
    used_.insert(key);
    auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    return parse_f64(key, it->second);
  }

  std::uint64_t u64(const std::string& key, std::uint64_t fallback) {
    used_.insert(key);
    auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    return parse_u64(key, it->second);
  }

  bool boolean(const std::string& key, bool fallback) {
    used_.insert(key);
    auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    if (it->second == "true") return true;
    if (it->second == "false") return false;
    throw ConfigError(key + ": expected true|false, got '" + it->second + "'");
  }

  std::vector<double> f64_list(const std::string& key,
                               std::vector<double> fallback) {
    used_.insert(key);
    auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    std::vector<double> out;
    for (const auto& item : split_list(it->second))
      out.push_back(parse_f64(key, item));
    return out;
  }

  std::vector<std::uint64_t> u64_list(const std::string& key,
                                      std::vector<std::uint64_t> fallback) {
    used_.insert(key);
    auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    std::vector<std::uint64_t> out;
    for (const auto& item : split_list(it->second))
      out.push_back(parse_u64(key, item));
    return out;
  }

  std::vector<std::string> str_list(const std::string& key,
                                    std::vector<std::string> fallback) {
    used_.insert(key);
    auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    return split_list(it->second);
  }

  void reject_unknown() const {
    for (const auto& [k, _] : kv_)
      if (!used_.count(k))
        throw ConfigError("unknown configuration key '" + k + "'");
  }

 private:
  static double parse_f64(const std::string& key, const std::string& s) {
    double v = 0.0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc{} || res.ptr != s.data() + s.size())
      throw ConfigError(key + ": expected a number, got '" + s + "'");
    return v;
  }

  static std::uint64_t parse_u64(const std::string& key,
                                 const std::string& s) {
    std::uint64_t v = 0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc{} || res.ptr != s.data() + s.size())
      throw ConfigError(key + ": expected a nonnegative integer, got '" + s +
                        "'");
    return v;
  }

  const KvMap& kv_;
  std::set<std::string> used_;
};

}  // namespace

RunConfig resolve_config(const KvMap& kv) {
  KvReader r(kv);
  RunConfig c;

  c.generator.participants =
      r.u64("generator.participants", c.generator.participants);
  c.generator.subjects_per_participant_weights =
      r.f64_list("generator.subjects_per_participant_weights",
                 c.generator.subjects_per_participant_weights);
  c.generator.modality_labels =
      r.str_list("generator.modality_labels", c.generator.modality_labels);
  {
    std::vector<std::uint64_t> dims;
    for (std::size_t d : c.generator.feature_dims) dims.push_back(d);
    dims = r.u64_list("generator.feature_dims", dims);
    c.generator.feature_dims.assign(dims.begin(), dims.end());
  }
  c.generator.latent_dim = r.u64("generator.latent_dim", c.generator.latent_dim);
  c.generator.noise_scale =
      r.f64("generator.noise_scale", c.generator.noise_scale);
  c.generator.within_participant_spread =
      r.f64("generator.within_participant_spread",
            c.generator.within_participant_spread);
  {
    std::string pw = r.str("generator.pattern_weights", "default");
    if (pw != "default") {
      c.generator.pattern_weights.clear();
      KvMap one{{"generator.pattern_weights", pw}};
      KvReader pr(one);
      c.generator.pattern_weights =
          pr.f64_list("generator.pattern_weights", {});
    }
  }
  c.generator.seed = r.u64("generator.seed", c.generator.seed);
  {
    std::string mode = r.str("generator.target_mode", "modality-specialized");
    if (mode == "shared-latent")
      c.generator.target_mode = GeneratorConfig::TargetMode::SharedLatent;
    else if (mode == "modality-specialized")
      c.generator.target_mode =
          GeneratorConfig::TargetMode::ModalitySpecialized;
    else
      throw ConfigError(
          "generator.target_mode: expected shared-latent|"
          "modality-specialized, got '" +
          mode + "'");
  }

  c.model_dim = r.u64("model.dim", c.model_dim);
  c.encoder_hidden = r.u64("model.encoder_hidden", c.encoder_hidden);
  c.attention_heads = r.u64("model.attention_heads", c.attention_heads);
  c.head_hidden = r.u64("model.head_hidden", c.head_hidden);
  c.init_stddev = r.f64("model.init_stddev", c.init_stddev);
  c.bank_init_stddev = r.f64("model.bank_init_stddev", c.bank_init_stddev);

  c.routing.strategy =
      parse_routing_strategy(r.str("routing.strategy", "per-modality"));
  c.routing.expert_count = r.u64("routing.experts", c.routing.expert_count);
  c.routing.top_k = r.u64("routing.top_k", c.routing.top_k);
  c.routing.expert_hidden =
      r.u64("routing.expert_hidden", c.routing.expert_hidden);
  c.routing.renormalize = r.boolean("routing.renormalize", false);
  c.routing.spec_loss_on_imputed =
      r.boolean("routing.spec_loss_on_imputed", true);

  c.train.learning_rate = r.f64("train.learning_rate", c.train.learning_rate);
  c.train.batch_size = r.u64("train.batch_size", c.train.batch_size);
  c.train.max_epochs = r.u64("train.max_epochs", c.train.max_epochs);
  c.train.patience = r.u64("train.patience", c.train.patience);
  c.train.seeds = r.u64_list("train.seeds", c.train.seeds);
  c.train.lambda_bal = r.f64("train.lambda_bal", c.train.lambda_bal);
  c.train.lambda_spec = r.f64("train.lambda_spec", c.train.lambda_spec);
  c.train.clip_norm = r.f64("train.clip_norm", c.train.clip_norm);
  c.train.parallel_seeds = r.boolean("train.parallel_seeds", true);
  c.train.strategy = c.routing.strategy;

  {
    auto fr = r.f64_list("split.fractions",
                         {c.split_fractions[0], c.split_fractions[1],
                          c.split_fractions[2]});
    if (fr.size() != 3)
      throw ConfigError("split.fractions: expected 3 values");
    c.split_fractions = {fr[0], fr[1], fr[2]};
  }
  c.split_seed = r.u64("split.seed", c.split_seed);

  r.reject_unknown();

  // Cross-field contradictions fail here rather than mid-run.
  c.train.validate();
  c.routing.validate(c.generator.n_modalities(), c.train.lambda_spec != 0.0);
  return c;
}

ModelConfig RunConfig::model_for(const DatasetHeader& header) const {
  ModelConfig mc;
  mc.modality_labels = header.modalities;
  mc.feature_dims = header.feature_dims;
  mc.model_dim = model_dim;
  mc.encoder_hidden = encoder_hidden;
  mc.attention_heads = attention_heads;
  mc.head_hidden = head_hidden;
  mc.init_stddev = init_stddev;
  mc.bank_init_stddev = bank_init_stddev;
  mc.validate();
  return mc;
}

KvMap config_to_kv(const RunConfig& c) {
  KvMap kv;
  auto join_f64 = [](const std::vector<double>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (i) s += ',';
      s += double_str(v[i]);
    }
    return s;
  };
  kv["generator.participants"] = std::to_string(c.generator.participants);
  kv["generator.subjects_per_participant_weights"] =
      join_f64(c.generator.subjects_per_participant_weights);
  {
    std::string s;
    for (std::size_t i = 0; i < c.generator.modality_labels.size(); ++i) {
      if (i) s += ',';
      s += c.generator.modality_labels[i];
    }
    kv["generator.modality_labels"] = s;
  }
  {
    std::string s;
    for (std::size_t i = 0; i < c.generator.feature_dims.size(); ++i) {
      if (i) s += ',';
      s += std::to_string(c.generator.feature_dims[i]);
    }
    kv["generator.feature_dims"] = s;
  }
  kv["generator.latent_dim"] = std::to_string(c.generator.latent_dim);
  kv["generator.noise_scale"] = double_str(c.generator.noise_scale);
  kv["generator.within_participant_spread"] =
      double_str(c.generator.within_participant_spread);
  kv["generator.pattern_weights"] =
      c.generator.pattern_weights.empty()
          ? "default"
          : join_f64(c.generator.pattern_weights);
  kv["generator.seed"] = std::to_string(c.generator.seed);
  kv["generator.target_mode"] =
      c.generator.target_mode == GeneratorConfig::TargetMode::SharedLatent
          ? "shared-latent"
          : "modality-specialized";
  kv["model.dim"] = std::to_string(c.model_dim);
  kv["model.encoder_hidden"] = std::to_string(c.encoder_hidden);
  kv["model.attention_heads"] = std::to_string(c.attention_heads);
  kv["model.head_hidden"] = std::to_string(c.head_hidden);
  kv["model.init_stddev"] = double_str(c.init_stddev);
  kv["model.bank_init_stddev"] = double_str(c.bank_init_stddev);
  kv["routing.strategy"] = routing_strategy_name(c.routing.strategy);
  kv["routing.experts"] = std::to_string(c.routing.expert_count);
  kv["routing.top_k"] = std::to_string(c.routing.top_k);
  kv["routing.expert_hidden"] = std::to_string(c.routing.expert_hidden);
  kv["routing.renormalize"] = c.routing.renormalize ? "true" : "false";
  kv["routing.spec_loss_on_imputed"] =
      c.routing.spec_loss_on_imputed ? "true" : "false";
  kv["train.learning_rate"] = double_str(c.train.learning_rate);
  kv["train.batch_size"] = std::to_string(c.train.batch_size);
  kv["train.max_epochs"] = std::to_string(c.train.max_epochs);
  kv["train.patience"] = std::to_string(c.train.patience);
  {
    std::string s;
    for (std::size_t i = 0; i < c.train.seeds.size(); ++i) {
      if (i) s += ',';
      s += std::to_string(c.train.seeds[i]);
    }
    kv["train.seeds"] = s;
  }
  kv["train.lambda_bal"] = double_str(c.train.lambda_bal);
  kv["train.lambda_spec"] = double_str(c.train.lambda_spec);
  kv["train.clip_norm"] = double_str(c.train.clip_norm);
  kv["train.parallel_seeds"] = c.train.parallel_seeds ? "true" : "false";
  kv["split.fractions"] =
      join_f64({c.split_fractions[0], c.split_fractions[1],
                c.split_fractions[2]});
  kv["split.seed"] = std::to_string(c.split_seed);
  return kv;
}

}  // namespace moefuse
