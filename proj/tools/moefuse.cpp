// Copyright (C) 2026 the moefuse authors
// SPDX-License-Identifier: Apache-2.0

// moefuse command line: gen-data, split, augment, train, eval,
// routing-stats. Logs go to stderr, data to files; exit code 0 on success,
// 1 with a single machine-parseable `error: <kind>: <message>` line on
// failure.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>

#include <json.hpp>

#include "moefuse/analytics.hpp"
#include "moefuse/checkpoint.hpp"
#include "moefuse/config.hpp"
#include "moefuse/dataset.hpp"
#include "moefuse/textio.hpp"
#include "moefuse/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace moefuse;

namespace {

struct CommonOpts {
  std::string config_path;
  std::string data;
  std::string out;
  std::string run;
  std::uint64_t seed = 0;
  bool have_seed = false;
  std::string strategy;
  std::int64_t top_k = -1;
  std::int64_t experts = -1;
  double lambda_bal = -1.0;
  double lambda_spec = -1.0;
  bool binary = false;
  bool argmax_only = false;
};

void require_file(const std::string& path) {
  if (!fs::exists(path)) throw IoError("no such file: '" + path + "'");
}

RunConfig resolve_with_overrides(const CommonOpts& o, const KvMap& extra) {
  KvMap kv;
  if (!o.config_path.empty()) {
    require_file(o.config_path);
    kv = load_kv_file(o.config_path);
  }
  if (!o.strategy.empty()) kv["routing.strategy"] = o.strategy;
  if (o.top_k >= 0) kv["routing.top_k"] = std::to_string(o.top_k);
  if (o.experts >= 0) kv["routing.experts"] = std::to_string(o.experts);
  if (o.lambda_bal >= 0.0) kv["train.lambda_bal"] = double_str(o.lambda_bal);
  if (o.lambda_spec >= 0.0)
    kv["train.lambda_spec"] = double_str(o.lambda_spec);
  for (const auto& [k, v] : extra) kv[k] = v;
  return resolve_config(kv);
}

void echo_config(const RunConfig& rc, const std::string& out_dir) {
  write_kv_file(config_to_kv(rc), out_dir + "/config.resolved.cfg");
}

void cmd_gen_data(const CommonOpts& o) {
  KvMap extra;
  if (o.have_seed) extra["generator.seed"] = std::to_string(o.seed);
  RunConfig rc = resolve_with_overrides(o, extra);
  fs::create_directories(o.out);
  Dataset ds = generate(rc.generator);
  write_jsonl(ds, o.out + "/dataset.jsonl");
  if (o.binary) write_binary(ds, o.out + "/dataset.bin");
  echo_config(rc, o.out);
  std::cerr << "gen-data: wrote " << ds.size() << " subjects to " << o.out
            << "/dataset.jsonl\n";
}

void cmd_split(const CommonOpts& o) {
  require_file(o.data);
  KvMap extra;
  if (o.have_seed) extra["split.seed"] = std::to_string(o.seed);
  RunConfig rc = resolve_with_overrides(o, extra);
  Dataset ds = read_jsonl(o.data);
  SplitResult sr = split_grouped(ds, rc.split_fractions, rc.split_seed);
  fs::create_directories(o.out);
  write_jsonl(sr.train, o.out + "/train.jsonl");
  write_jsonl(sr.val, o.out + "/val.jsonl");
  write_jsonl(sr.test, o.out + "/test.jsonl");
  echo_config(rc, o.out);
  std::cerr << "split: " << sr.train.size() << "/" << sr.val.size() << "/"
            << sr.test.size() << " subjects (fractions "
            << double_str(sr.realized_fractions[0]) << "/"
            << double_str(sr.realized_fractions[1]) << "/"
            << double_str(sr.realized_fractions[2]) << ")\n";
  if (!sr.within_tolerance)
    std::cerr << "split: warning: realized fractions deviate more than 5 "
                 "points from targets (grouping dominates)\n";
}

void cmd_augment(const CommonOpts& o) {
  require_file(o.data);
  Dataset ds = read_jsonl(o.data);
  Dataset aug = augment_withholding(ds);
  fs::create_directories(o.out);
  write_jsonl(aug, o.out + "/augmented.jsonl");
  std::cerr << "augment: " << ds.size() << " -> " << aug.size()
            << " subjects in " << o.out << "/augmented.jsonl\n";
}

json epoch_json(const EpochStats& h) {
  return {{"epoch", h.epoch},          {"train_loss", h.train_loss},
          {"train_mse", h.train_mse},  {"bal_loss", h.bal_loss},
          {"spec_loss", h.spec_loss},  {"val_rmse", h.val_rmse}};
}

void cmd_train(const CommonOpts& o) {
  KvMap extra;
  if (o.have_seed) extra["train.seeds"] = std::to_string(o.seed);
  RunConfig rc = resolve_with_overrides(o, extra);
  require_file(o.data + "/train.jsonl");
  require_file(o.data + "/val.jsonl");
  require_file(o.data + "/test.jsonl");
  Dataset train_set = read_jsonl(o.data + "/train.jsonl");
  Dataset val_set = read_jsonl(o.data + "/val.jsonl");
  Dataset test_set = read_jsonl(o.data + "/test.jsonl");
  ModelConfig mc = rc.model_for(train_set.header);

  fs::create_directories(o.out);
  echo_config(rc, o.out);

  auto sink_for_seed = [&](std::uint64_t seed) -> HistorySink {
    std::string dir = o.out + "/seed_" + std::to_string(seed);
    fs::create_directories(dir);
    auto file = std::make_shared<std::ofstream>(dir + "/history.jsonl",
                                                std::ios::binary);
    if (!*file)
      throw IoError("cannot open '" + dir + "/history.jsonl' for writing");
    return [file](const EpochStats& h) {
      *file << epoch_json(h).dump() << '\n';
      file->flush();
    };
  };

  RunSeedsResult rs = run_seeds(mc, rc.routing, rc.train, train_set, val_set,
                                test_set, sink_for_seed);

  json summary;
  summary["format_version"] = 1;
  summary["strategy"] = routing_strategy_name(rc.train.strategy);
  json seeds = json::array();
  for (const auto& out : rs.outcomes) {
    json s;
    s["seed"] = out.seed;
    s["status"] = out.ok ? "ok" : "error";
    if (out.ok) {
      s["best_val_rmse"] = out.train.best_val_rmse;
      s["best_epoch"] = out.train.best_epoch;
      s["epochs_run"] = out.train.epochs_run;
      s["test_rmse"] = out.test_rmse;
      save_checkpoint(*out.model, o.out + "/seed_" +
                                      std::to_string(out.seed) +
                                      "/checkpoint.json");
    } else {
      s["error"] = out.error;
    }
    seeds.push_back(std::move(s));
  }
  summary["seeds"] = std::move(seeds);
  summary["failed"] = rs.failed;
  if (rs.failed < rs.outcomes.size()) {
    summary["test_rmse_mean"] = rs.test_rmse_mean;
    summary["test_rmse_std"] = rs.test_rmse_std;
  }
  std::ofstream f(o.out + "/summary.json", std::ios::binary);
  if (!f) throw IoError("cannot open '" + o.out + "/summary.json'");
  f << summary.dump(2) << '\n';

  for (const auto& out : rs.outcomes) {
    if (out.ok)
      std::cerr << "train: seed " << out.seed << " best val RMSE "
                << double_str(out.train.best_val_rmse) << " (epoch "
                << out.train.best_epoch << "), test RMSE "
                << double_str(out.test_rmse) << "\n";
    else
      std::cerr << "train: seed " << out.seed << " failed: " << out.error
                << "\n";
  }
  if (rs.failed == rs.outcomes.size())
    throw TrainError("all seeds failed; see summary.json");
  std::cerr << "train: test RMSE " << double_str(rs.test_rmse_mean) << " +- "
            << double_str(rs.test_rmse_std) << " over "
            << (rs.outcomes.size() - rs.failed) << " seeds\n";
}

std::vector<std::pair<std::uint64_t, std::string>> run_checkpoints(
    const std::string& run_dir) {
  if (!fs::exists(run_dir)) throw IoError("no such directory: '" + run_dir + "'");
  std::vector<std::pair<std::uint64_t, std::string>> out;
  for (const auto& entry : fs::directory_iterator(run_dir)) {
    if (!entry.is_directory()) continue;
    std::string name = entry.path().filename().string();
    if (name.rfind("seed_", 0) != 0) continue;
    std::string ckpt = entry.path().string() + "/checkpoint.json";
    if (!fs::exists(ckpt)) continue;
    out.emplace_back(std::stoull(name.substr(5)), ckpt);
  }
  if (out.empty())
    throw IoError("no seed_*/checkpoint.json under '" + run_dir + "'");
  std::sort(out.begin(), out.end());
  return out;
}

void cmd_eval(const CommonOpts& o) {
  require_file(o.data);
  Dataset eval_set = read_jsonl(o.data);
  auto ckpts = run_checkpoints(o.run);
  fs::create_directories(o.out);

  std::vector<std::vector<double>> preds_per_seed;
  std::vector<std::uint64_t> seeds;
  for (const auto& [seed, path] : ckpts) {
    FusionModel model = load_checkpoint(path);
    std::vector<double> preds;
    preds.reserve(eval_set.size());
    for (const auto& s : eval_set.subjects) preds.push_back(model.predict(s));
    preds_per_seed.push_back(std::move(preds));
    seeds.push_back(seed);
  }

  MetricsReport report = tabulate(eval_set, preds_per_seed);
  write_metrics_json(report, eval_set.header.modalities,
                     o.out + "/metrics.json");
  {
    std::ofstream f(o.out + "/metrics.csv", std::ios::binary);
    if (!f) throw IoError("cannot open '" + o.out + "/metrics.csv'");
    write_metrics_csv(report, eval_set.header.modalities, f);
  }
  {
    std::ofstream f(o.out + "/predictions.csv", std::ios::binary);
    if (!f) throw IoError("cannot open '" + o.out + "/predictions.csv'");
    f << "subject_id,target_delta";
    for (std::uint64_t s : seeds) f << ",pred_seed_" << s;
    f << '\n';
    for (std::size_t i = 0; i < eval_set.size(); ++i) {
      f << eval_set.subjects[i].subject_id << ','
        << double_str(eval_set.subjects[i].target_delta);
      for (const auto& preds : preds_per_seed)
        f << ',' << double_str(preds[i]);
      f << '\n';
    }
  }
  std::cerr << "eval: overall RMSE "
            << double_str(report.overall.rmse_mean) << " +- "
            << double_str(report.overall.rmse_std) << " over "
            << preds_per_seed.size() << " seeds, " << eval_set.size()
            << " subjects\n";
}

void cmd_routing_stats(const CommonOpts& o) {
  require_file(o.data);
  Dataset eval_set = read_jsonl(o.data);
  auto ckpts = run_checkpoints(o.run);
  fs::create_directories(o.out);

  std::vector<RoutingTrace> pooled;
  json per_seed = json::array();
  std::size_t expert_count = 0, top_k = 0;
  std::string strategy;
  for (const auto& [seed, path] : ckpts) {
    FusionModel model = load_checkpoint(path);
    expert_count = model.routing().expert_count;
    top_k = model.routing().top_k;
    strategy = routing_strategy_name(model.routing().strategy);
    std::vector<RoutingTrace> traces;
    traces.reserve(eval_set.size());
    for (const auto& s : eval_set.subjects)
      traces.push_back(model.trace(s).trace);
    {
      std::ofstream f(o.out + "/traces_seed_" + std::to_string(seed) + ".csv",
                      std::ios::binary);
      if (!f) throw IoError("cannot open traces CSV for writing");
      write_traces_csv(f, traces, eval_set.header.modalities);
    }
    ActivationReport rep = activation_stats(traces, eval_set, o.argmax_only);
    per_seed.push_back({{"seed", seed},
                        {"aggregate_entropy", rep.aggregate_entropy}});
    pooled.insert(pooled.end(), std::make_move_iterator(traces.begin()),
                  std::make_move_iterator(traces.end()));
  }

  // Pooled stats treat every (seed, subject) trace as one sample.
  Dataset pooled_set = eval_set;
  ActivationReport rep = activation_stats(pooled, eval_set, o.argmax_only);
  {
    std::ofstream f(o.out + "/activation.csv", std::ios::binary);
    if (!f) throw IoError("cannot open activation CSV for writing");
    write_activation_csv(rep, f);
  }
  json entropy;
  entropy["format_version"] = 1;
  entropy["strategy"] = strategy;
  entropy["experts"] = expert_count;
  entropy["top_k"] = top_k;
  entropy["argmax_only"] = o.argmax_only;
  entropy["events"] = rep.events;
  entropy["aggregate_entropy"] = rep.aggregate_entropy;
  json slots = json::object();
  for (std::size_t i = 0; i < rep.per_slot_entropy.size(); ++i)
    slots[eval_set.header.modalities[i]] = rep.per_slot_entropy[i];
  entropy["per_slot_entropy"] = std::move(slots);
  entropy["per_seed"] = std::move(per_seed);
  json skipped = json::array();
  for (AvailabilityBits b : rep.skipped_combos) skipped.push_back(b);
  entropy["skipped_combos"] = std::move(skipped);
  {
    std::ofstream f(o.out + "/entropy.json", std::ios::binary);
    if (!f) throw IoError("cannot open entropy.json for writing");
    f << entropy.dump(2) << '\n';
  }
  for (AvailabilityBits b : rep.skipped_combos)
    std::cerr << "routing-stats: combination " << b
              << " has zero prevalence; skipped in adjustment\n";
  std::cerr << "routing-stats: aggregate entropy "
            << double_str(rep.aggregate_entropy) << " nats over "
            << rep.events << " events\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"trainable multimodal sparse mixture-of-experts fusion"};
  app.require_subcommand(1);
  CommonOpts o;

  auto add_config = [&](CLI::App* cmd) {
    cmd->add_option("--config", o.config_path, "configuration file (dotted key = value)");
  };
  auto add_seed = [&](CLI::App* cmd) {
    cmd->add_option("--seed", o.seed, "override the subcommand's seed")
        ->each([&](const std::string&) { o.have_seed = true; });
  };
  auto add_model_flags = [&](CLI::App* cmd) {
    cmd->add_option("--strategy", o.strategy,
                    "routing strategy: shared|per-modality");
    cmd->add_option("--top-k", o.top_k, "experts activated per modality slot");
    cmd->add_option("--experts", o.experts, "expert count");
    cmd->add_option("--lambda-bal", o.lambda_bal, "balancing loss weight");
    cmd->add_option("--lambda-spec", o.lambda_spec,
                    "specialization loss weight");
  };

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
  add_config(gen);
  add_seed(gen);
  gen->add_option("--out", o.out, "output directory")->required();
  gen->add_flag("--binary", o.binary, "also write the binary container");
  gen->callback([&] { cmd_gen_data(o); });

  auto* split = app.add_subcommand(
      "split", "participant-grouped train/val/test split");
  add_config(split);
  add_seed(split);
  split->add_option("--data", o.data, "dataset file (JSON-lines)")->required();
  split->add_option("--out", o.out, "output directory")->required();
  split->callback([&] { cmd_split(o); });

  auto* aug = app.add_subcommand(
      "augment", "add singleton withholding variants of multi-modality subjects");
  aug->add_option("--data", o.data, "dataset file to augment")->required();
  aug->add_option("--out", o.out, "output directory")->required();
  aug->callback([&] { cmd_augment(o); });

  auto* train = app.add_subcommand("train", "train one model per seed");
  add_config(train);
  add_seed(train);
  add_model_flags(train);
  train->add_option("--data", o.data,
                    "split directory (train/val/test.jsonl)")
      ->required();
  train->add_option("--out", o.out, "run output directory")->required();
  train->callback([&] { cmd_train(o); });

  auto* ev = app.add_subcommand("eval", "evaluate a trained run on a dataset");
  ev->add_option("--run", o.run, "train output directory")->required();
  ev->add_option("--data", o.data, "dataset file to evaluate")->required();
  ev->add_option("--out", o.out, "output directory")->required();
  ev->callback([&] { cmd_eval(o); });

  auto* rs = app.add_subcommand("routing-stats",
                                "expert activation statistics and entropy");
  rs->add_option("--run", o.run, "train output directory")->required();
  rs->add_option("--data", o.data, "dataset file to trace")->required();
  rs->add_option("--out", o.out, "output directory")->required();
  rs->add_flag("--argmax-only", o.argmax_only,
               "count only the top gate per routing event");
  rs->callback([&] { cmd_routing_stats(o); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const Error& e) {
    std::cerr << "error: " << e.kind() << ": " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: internal: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
