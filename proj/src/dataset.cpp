// Copyright (C) 2026 the moefuse authors
// SPDX-License-Identifier: Apache-2.0

#include "moefuse/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "moefuse/rng.hpp"

namespace moefuse {

using nlohmann::json;

std::vector<std::string> default_modality_labels(std::size_t n) {
  static const std::vector<std::string> four = {"M", "F", "A", "T"};
  if (n <= 4) return {four.begin(), four.begin() + n};
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back("m" + std::to_string(i));
  return out;
}

void validate_record(const SubjectRecord& r, const DatasetHeader& h) {
  const std::size_t n = h.n_modalities();
  AvailabilityBits key_bits = 0;
  for (const auto& [idx, vec] : r.features) {
    if (idx >= n)
      throw ContractError("subject " + r.subject_id + ": modality index " +
                          std::to_string(idx) + " out of range");
    key_bits |= (1u << idx);
    if (vec.size() != h.feature_dims[idx])
      throw ShapeError("subject " + r.subject_id + ": modality " +
                       h.modalities[idx] + " has " +
                       std::to_string(vec.size()) + " features, expected " +
                       std::to_string(h.feature_dims[idx]));
  }
  if (key_bits != r.availability)
    throw ContractError("subject " + r.subject_id +
                        ": availability mask " +
                        std::to_string(r.availability) +
                        " does not match feature keys " +
                        std::to_string(key_bits));
  if (r.availability == 0)
    throw ContractError("subject " + r.subject_id + ": empty availability");
  if (r.baseline_score < 0.0 || r.baseline_score > 18.0)
    throw ContractError("subject " + r.subject_id + ": baseline score " +
                        std::to_string(r.baseline_score) +
                        " outside [0, 18]");
}

// --- Synthetic generation ---------------------------------------------------

std::vector<double> default_pattern_weights(std::size_t n) {
  const std::size_t combos = combo_count(n);
  std::vector<double> w(combos, 0.0);
  if (n != 4) {
    std::fill(w.begin(), w.end(), 1.0 / static_cast<double>(combos));
    return w;
  }
  // Marginals: 60.8% exactly one modality, 5.9% all four, rest spread
  // evenly over the six pairs and four triples.
  const double singleton = 0.608 / 4.0;
  const double full = 0.059;
  const double mid = (1.0 - 0.608 - full) / 10.0;
  for (AvailabilityBits bits = 1; bits <= combos; ++bits) {
    int c = std::popcount(bits);
    double v = c == 1 ? singleton : (c == 4 ? full : mid);
    w[bits - 1] = v;
  }
  return w;
}

namespace {

std::vector<double> unit_vector(Rng& rng, std::size_t n) {
  std::vector<double> v(n);
  double norm = 0.0;
  for (auto& x : v) {
    x = rng.normal();
    norm += x * x;
  }
  norm = std::sqrt(norm);
  for (auto& x : v) x /= norm;
  return v;
}

double dot_vec(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

constexpr double kBaselineCenter = 4.0;
constexpr double kBaselineSpread = 2.0;
constexpr double kBaselineNoise = 0.5;
constexpr double kBaselineFloor = 1.25;  // generator keeps scores above 1
constexpr double kTargetOffset = 0.5;
constexpr double kSharedTanhAmp = 1.5;
constexpr double kSharedLinAmp = 0.8;
constexpr double kSpecLinAmp = 0.4;
constexpr double kSpecTanhAmp = 1.8;

}  // namespace

std::vector<double> LatentModel::feature_mean(
    std::size_t modality, const std::vector<double>& z) const {
  const auto& map = feature_maps[modality];
  const std::size_t d = map.size() / latent_dim;
  std::vector<double> out(d, 0.0);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t l = 0; l < latent_dim; ++l)
      out[i] += map[i * latent_dim + l] * z[l];
  return out;
}

double LatentModel::baseline_mean(const std::vector<double>& z) const {
  return kBaselineCenter + kBaselineSpread * dot_vec(baseline_dir, z);
}

double LatentModel::target_mean(const std::vector<double>& z,
                                AvailabilityBits bits,
                                std::size_t n_modalities) const {
  if (mode == GeneratorConfig::TargetMode::SharedLatent) {
    return kTargetOffset +
           kSharedTanhAmp * std::tanh(dot_vec(shared_tanh_dir, z) +
                                      shared_tanh_bias) +
           kSharedLinAmp * dot_vec(shared_lin_dir, z);
  }
  // Combination-dependent mixture: the optimal regressor depends on which
  // modalities were observed.
  double acc = 0.0;
  int count = 0;
  for (std::size_t i = 0; i < n_modalities; ++i) {
    if ((bits >> i) & 1u) {
      acc += std::tanh(dot_vec(modality_dirs[i], z) + modality_biases[i]);
      ++count;
    }
  }
  return kTargetOffset + kSpecLinAmp * dot_vec(shared_lin_dir, z) +
         kSpecTanhAmp * acc / static_cast<double>(count);
}

Dataset generate(const GeneratorConfig& config, LatentModel* internals) {
  const std::size_t n = config.n_modalities();
  if (config.participants == 0)
    throw ContractError("generate: participant count must be positive");
  if (config.feature_dims.size() != n)
    throw ConfigError("generate: feature_dims length " +
                      std::to_string(config.feature_dims.size()) +
                      " does not match " + std::to_string(n) + " modalities");
  if (config.latent_dim == 0)
    throw ConfigError("generate: latent_dim must be positive");
  if (config.subjects_per_participant_weights.empty())
    throw ConfigError("generate: subjects-per-participant weights empty");

  std::vector<double> pattern = config.pattern_weights.empty()
                                    ? default_pattern_weights(n)
                                    : config.pattern_weights;
  if (pattern.size() != combo_count(n))
    throw ConfigError("generate: pattern_weights needs " +
                      std::to_string(combo_count(n)) + " entries, got " +
                      std::to_string(pattern.size()));
  double psum = 0.0;
  for (double w : pattern) {
    if (w < 0.0) throw ConfigError("generate: negative pattern weight");
    psum += w;
  }
  if (psum <= 0.0) throw ConfigError("generate: pattern weights sum to zero");

  const std::size_t L = config.latent_dim;
  Rng model_rng = Rng::stream(config.seed, "latent-model");
  LatentModel lm;
  lm.mode = config.target_mode;
  lm.latent_dim = L;
  lm.feature_maps.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto& map = lm.feature_maps[i];
    map.resize(config.feature_dims[i] * L);
    const double s = 1.0 / std::sqrt(static_cast<double>(L));
    for (auto& x : map) x = model_rng.normal(0.0, s);
  }
  lm.baseline_dir = unit_vector(model_rng, L);
  lm.shared_lin_dir = unit_vector(model_rng, L);
  lm.shared_tanh_dir = unit_vector(model_rng, L);
  lm.shared_tanh_bias = model_rng.normal(0.0, 0.3);
  lm.modality_dirs.resize(n);
  lm.modality_biases.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    lm.modality_dirs[i] = unit_vector(model_rng, L);
    lm.modality_biases[i] = model_rng.normal(0.0, 0.3);
  }

  Dataset data;
  data.header.modalities = config.modality_labels;
  data.header.feature_dims = config.feature_dims;

  Rng rng = Rng::stream(config.seed, "subjects");
  std::vector<double> z(L), u(L);
  for (std::size_t p = 0; p < config.participants; ++p) {
    char pid[16];
    std::snprintf(pid, sizeof pid, "p%05zu", p + 1);
    for (auto& x : u) x = rng.normal();
    std::size_t visits =
        1 + rng.categorical(config.subjects_per_participant_weights);
    for (std::size_t v = 0; v < visits; ++v) {
      SubjectRecord r;
      r.participant_id = pid;
      r.subject_id = std::string(pid) + "-v" + std::to_string(v + 1);
      // Subjects of one participant share the participant latent and drift
      // around it.
      for (std::size_t l = 0; l < L; ++l)
        z[l] = u[l] + config.within_participant_spread * rng.normal();
      r.availability = static_cast<AvailabilityBits>(1 + rng.categorical(pattern));
      for (std::size_t i = 0; i < n; ++i) {
        if (!((r.availability >> i) & 1u)) continue;
        auto x = lm.feature_mean(i, z);
        for (auto& xv : x) xv += config.noise_scale * rng.normal();
        r.features.emplace(i, std::move(x));
      }
      double b = lm.baseline_mean(z) +
                 kBaselineNoise * config.noise_scale * rng.normal();
      r.baseline_score = std::clamp(b, kBaselineFloor, 18.0);
      r.target_delta = lm.target_mean(z, r.availability, n) +
                       config.noise_scale * rng.normal();
      validate_record(r, data.header);
      data.subjects.push_back(std::move(r));
    }
  }
  if (internals != nullptr) *internals = std::move(lm);
  return data;
}

// --- Splitting and augmentation ----------------------------------------------

SplitResult split_grouped(const Dataset& data, std::array<double, 3> fractions,
                          std::uint64_t seed) {
  double fsum = fractions[0] + fractions[1] + fractions[2];
  if (std::fabs(fsum - 1.0) > 1e-9)
    throw ContractError("split: fractions sum to " + std::to_string(fsum) +
                        ", expected 1");
  std::map<std::string, std::size_t> participant_sizes;
  for (const auto& s : data.subjects) participant_sizes[s.participant_id]++;
  if (participant_sizes.size() < 3)
    throw ContractError("split: needs at least 3 participants, got " +
                        std::to_string(participant_sizes.size()));

  std::vector<std::string> order;
  order.reserve(participant_sizes.size());
  for (const auto& [id, _] : participant_sizes) order.push_back(id);
  Rng rng = Rng::stream(seed, "split");
  rng.shuffle(order);

  const double total = static_cast<double>(data.size());
  std::array<double, 3> want{fractions[0] * total, fractions[1] * total,
                             fractions[2] * total};
  std::array<double, 3> have{0.0, 0.0, 0.0};
  std::map<std::string, int> assignment;
  for (const auto& id : order) {
    int best = 0;
    double best_deficit = want[0] - have[0];
    for (int k = 1; k < 3; ++k) {
      double deficit = want[k] - have[k];
      if (deficit > best_deficit) {
        best = k;
        best_deficit = deficit;
      }
    }
    assignment[id] = best;
    have[best] += static_cast<double>(participant_sizes[id]);
  }

  SplitResult out;
  out.train.header = out.val.header = out.test.header = data.header;
  for (const auto& s : data.subjects) {
    switch (assignment[s.participant_id]) {
      case 0: out.train.subjects.push_back(s); break;
      case 1: out.val.subjects.push_back(s); break;
      default: out.test.subjects.push_back(s); break;
    }
  }
  const Dataset* splits[3] = {&out.train, &out.val, &out.test};
  for (int k = 0; k < 3; ++k) {
    out.realized_fractions[k] = static_cast<double>(splits[k]->size()) / total;
    if (std::fabs(out.realized_fractions[k] - fractions[k]) > 0.05)
      out.within_tolerance = false;
  }
  return out;
}

Dataset augment_withholding(const Dataset& data) {
  Dataset out;
  out.header = data.header;
  out.subjects = data.subjects;
  const std::size_t n = data.header.n_modalities();
  for (const auto& s : data.subjects) {
    AvailabilitySet avail(s.availability, n);
    if (avail.count() < 2) continue;
    for (std::size_t keep : avail.observed_indices()) {
      SubjectRecord d;
      AvailabilitySet withheld(s.availability & ~(1u << keep), n);
      d.subject_id =
          s.subject_id + "~hold" + withheld.label(data.header.modalities);
      d.participant_id = s.participant_id;
      d.features.emplace(keep, s.features.at(keep));
      d.availability = 1u << keep;
      d.baseline_score = s.baseline_score;
      d.target_delta = s.target_delta;
      out.subjects.push_back(std::move(d));
    }
  }
  return out;
}

// --- JSON-lines format --------------------------------------------------------

void write_jsonl(const Dataset& data, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path + "' for writing");
  json header = {{"format_version", data.header.format_version},
                 {"modalities", data.header.modalities},
                 {"feature_dims", data.header.feature_dims}};
  f << header.dump() << '\n';
  for (const auto& s : data.subjects) {
    json features = json::object();
    for (const auto& [idx, vec] : s.features)
      features[data.header.modalities[idx]] = vec;
    json rec = {{"subject_id", s.subject_id},
                {"participant_id", s.participant_id},
                {"availability", s.availability},
                {"baseline_score", s.baseline_score},
                {"target_delta", s.target_delta},
                {"features", features}};
    f << rec.dump() << '\n';
  }
  if (!f) throw IoError("write to '" + path + "' failed");
}

namespace {

[[noreturn]] void parse_fail(const std::string& path, std::size_t line,
                             const std::string& what) {
  throw ParseError(path + ":" + std::to_string(line) + ": " + what);
}

}  // namespace

Dataset read_jsonl(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path + "'");
  Dataset data;
  std::string line;
  std::size_t lineno = 0;

  if (!std::getline(f, line)) parse_fail(path, 1, "missing header line");
  ++lineno;
  try {
    json h = json::parse(line);
    data.header.format_version = h.at("format_version").get<std::uint32_t>();
    data.header.modalities =
        h.at("modalities").get<std::vector<std::string>>();
    data.header.feature_dims =
        h.at("feature_dims").get<std::vector<std::size_t>>();
  } catch (const json::exception& e) {
    parse_fail(path, lineno, std::string("bad header: ") + e.what());
  }
  if (data.header.modalities.empty() ||
      data.header.modalities.size() != data.header.feature_dims.size())
    parse_fail(path, lineno, "header modalities/feature_dims mismatch");

  std::map<std::string, std::size_t> index_of;
  for (std::size_t i = 0; i < data.header.modalities.size(); ++i)
    index_of[data.header.modalities[i]] = i;

  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    SubjectRecord r;
    try {
      json j = json::parse(line);
      r.subject_id = j.at("subject_id").get<std::string>();
      r.participant_id = j.at("participant_id").get<std::string>();
      r.availability = j.at("availability").get<AvailabilityBits>();
      r.baseline_score = j.at("baseline_score").get<double>();
      r.target_delta = j.at("target_delta").get<double>();
      for (const auto& [label, vec] : j.at("features").items()) {
        auto it = index_of.find(label);
        if (it == index_of.end())
          parse_fail(path, lineno, "unknown modality '" + label + "'");
        r.features[it->second] = vec.get<std::vector<double>>();
      }
    } catch (const json::exception& e) {
      parse_fail(path, lineno, e.what());
    }
    try {
      validate_record(r, data.header);
    } catch (const Error& e) {
      parse_fail(path, lineno, e.what());
    }
    data.subjects.push_back(std::move(r));
  }
  return data;
}

// --- Binary format --------------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'M', 'F', 'B', '1'};

template <typename T>
void put(std::string& buf, T v) {
  char raw[sizeof(T)];
  std::memcpy(raw, &v, sizeof(T));
  buf.append(raw, sizeof(T));
}

void put_str(std::string& buf, const std::string& s) {
  put<std::uint32_t>(buf, static_cast<std::uint32_t>(s.size()));
  buf.append(s);
}

class Reader {
 public:
  Reader(const std::string& buf, const std::string& path)
      : buf_(buf), path_(path) {}

  template <typename T>
  T get() {
    if (pos_ + sizeof(T) > buf_.size())
      throw ParseError(path_ + ": truncated binary dataset");
    T v;
    std::memcpy(&v, buf_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  std::string get_str() {
    auto len = get<std::uint32_t>();
    if (pos_ + len > buf_.size())
      throw ParseError(path_ + ": truncated binary dataset");
    std::string s = buf_.substr(pos_, len);
    pos_ += len;
    return s;
  }

  bool done() const { return pos_ == buf_.size(); }

 private:
  const std::string& buf_;
  std::string path_;
  std::size_t pos_ = 0;
};

}  // namespace

void write_binary(const Dataset& data, const std::string& path) {
  std::string buf;
  buf.append(kMagic, 4);
  put<std::uint32_t>(buf, data.header.format_version);
  put<std::uint32_t>(buf,
                     static_cast<std::uint32_t>(data.header.n_modalities()));
  for (std::size_t i = 0; i < data.header.n_modalities(); ++i) {
    put_str(buf, data.header.modalities[i]);
    put<std::uint32_t>(buf,
                       static_cast<std::uint32_t>(data.header.feature_dims[i]));
  }
  put<std::uint64_t>(buf, data.subjects.size());
  for (const auto& s : data.subjects) {
    std::string rec;
    put_str(rec, s.subject_id);
    put_str(rec, s.participant_id);
    put<std::uint32_t>(rec, s.availability);
    put<double>(rec, s.baseline_score);
    put<double>(rec, s.target_delta);
    for (const auto& [idx, vec] : s.features) {
      (void)idx;
      for (double v : vec) put<double>(rec, v);
    }
    put<std::uint32_t>(buf, static_cast<std::uint32_t>(rec.size()));
    buf.append(rec);
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path + "' for writing");
  f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!f) throw IoError("write to '" + path + "' failed");
}

Dataset read_binary(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  std::string buf = ss.str();
  if (buf.size() < 4 || std::memcmp(buf.data(), kMagic, 4) != 0)
    throw ParseError(path + ": not a binary dataset (bad magic)");
  Reader r(buf, path);
  r.get<std::uint32_t>();  // magic, already checked
  Dataset data;
  data.header.format_version = r.get<std::uint32_t>();
  auto n = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < n; ++i) {
    data.header.modalities.push_back(r.get_str());
    data.header.feature_dims.push_back(r.get<std::uint32_t>());
  }
  auto count = r.get<std::uint64_t>();
  for (std::uint64_t k = 0; k < count; ++k) {
    r.get<std::uint32_t>();  // record length prefix
    SubjectRecord s;
    s.subject_id = r.get_str();
    s.participant_id = r.get_str();
    s.availability = r.get<std::uint32_t>();
    s.baseline_score = r.get<double>();
    s.target_delta = r.get<double>();
    for (std::uint32_t i = 0; i < n; ++i) {
      if (!((s.availability >> i) & 1u)) continue;
      std::vector<double> vec(data.header.feature_dims[i]);
      for (auto& v : vec) v = r.get<double>();
      s.features.emplace(i, std::move(vec));
    }
    try {
      validate_record(s, data.header);
    } catch (const Error& e) {
      throw ParseError(path + ": record " + std::to_string(k) + ": " +
                       e.what());
    }
    data.subjects.push_back(std::move(s));
  }
  if (!r.done()) throw ParseError(path + ": trailing bytes");
  return data;
}

}  // namespace moefuse
