#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "calmix/aum.hpp"
#include "calmix/calibration.hpp"
#include "calmix/data.hpp"
#include "calmix/mixup.hpp"
#include "calmix/model.hpp"
#include "calmix/rng.hpp"
#include "calmix/trainer.hpp"
#include "json.hpp"

namespace calmix {

// A category manifest (or other prerequisite artifact) is absent or was
// produced by a different configuration.
class MissingManifest : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline Strategy strategy_from_string(const std::string& s) {
  if (s == "none") return Strategy::None;
  if (s == "proposed") return Strategy::Proposed;
  if (s == "input_mixup") return Strategy::InputMixup;
  if (s == "manifold_mixup") return Strategy::ManifoldMixup;
  throw std::invalid_argument(
      "unknown strategy '" + s +
      "' (expected none|proposed|input_mixup|manifold_mixup)");
}

inline Ablation ablation_from_string(const std::string& s) {
  if (s == "full") return Ablation::Full;
  if (s == "no_aum") return Ablation::NoAum;
  if (s == "no_saliency") return Ablation::NoSaliency;
  if (s == "no_similar") return Ablation::NoSimilar;
  if (s == "no_dissimilar") return Ablation::NoDissimilar;
  throw std::invalid_argument(
      "unknown ablation '" + s +
      "' (expected full|no_aum|no_saliency|no_similar|no_dissimilar)");
}

struct DatasetSpec {
  std::string kind = "synth";  // "synth" | "jsonl"
  // synth
  std::size_t n_train = 5000;
  std::size_t n_test = 1000;
  std::size_t num_classes = 3;
  double shift = 0.5;
  SynthParams synth;
  // jsonl
  std::string train_path;
  std::string dev_path;
  std::string test_id_path;
  std::string test_ood_path;
  JsonlSchema schema;

  void validate() const {
    if (kind == "synth") {
      if (n_train == 0 || n_test == 0)
        throw std::invalid_argument("dataset: split sizes must be positive");
      if (num_classes < 2)
        throw std::invalid_argument("dataset: need at least two classes");
      if (!(shift >= 0.0 && shift <= 1.0))
        throw std::invalid_argument("dataset: shift must lie in [0,1]");
    } else if (kind == "jsonl") {
      if (train_path.empty() || dev_path.empty() || test_id_path.empty() ||
          test_ood_path.empty())
        throw std::invalid_argument("dataset: all four jsonl paths required");
      if (schema.labels.size() < 2)
        throw std::invalid_argument("dataset: jsonl needs a label list");
    } else {
      throw std::invalid_argument("dataset: kind must be synth or jsonl");
    }
  }
};

struct RunConfig {
  DatasetSpec dataset;
  ModelConfig model;  // num_classes and seed are filled in per run
  MixupConfig mixup;
  TrainConfig training;
  bool temperature_scaling = true;
  std::vector<std::uint64_t> seeds = {1};
  std::string out_dir = "runs/out";

  void validate() const {
    dataset.validate();
    if (model.vocab_hash_buckets == 0 || model.embed_dim == 0 ||
        model.hidden_dim == 0)
      throw std::invalid_argument("model: dimensions must be positive");
    mixup.validate();
    training.validate();
    if (seeds.empty()) throw std::invalid_argument("seeds: need at least one");
    if (out_dir.empty()) throw std::invalid_argument("out_dir: required");
  }
};

namespace detail {

inline void check_keys(const nlohmann::json& j,
                       std::initializer_list<const char*> allowed,
                       const std::string& where) {
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (const char* a : allowed)
      if (key == a) ok = true;
    if (!ok)
      throw std::invalid_argument(where + ": unknown key '" + key + "'");
  }
}

}  // namespace detail

inline RunConfig parse_run_config(const nlohmann::json& j) {
  if (!j.is_object())
    throw std::invalid_argument("run config: expected a JSON object");
  detail::check_keys(j,
                     {"dataset", "model", "mixup", "training",
                      "label_smoothing", "temperature_scaling", "seeds",
                      "out_dir"},
                     "run config");
  RunConfig cfg;

  if (j.contains("dataset")) {
    const nlohmann::json& d = j.at("dataset");
    detail::check_keys(d,
                       {"kind", "n_train", "n_test", "num_classes", "shift",
                        "signal_tokens_per_class", "common_tokens", "p_signal",
                        "neighbor_overlap", "min_len", "max_len", "train",
                        "dev", "test_id", "test_ood", "text_key", "text_b_key",
                        "label_key", "labels"},
                       "dataset");
    DatasetSpec& ds = cfg.dataset;
    ds.kind = d.value("kind", ds.kind);
    ds.n_train = d.value("n_train", ds.n_train);
    ds.n_test = d.value("n_test", ds.n_test);
    ds.num_classes = d.value("num_classes", ds.num_classes);
    ds.shift = d.value("shift", ds.shift);
    ds.synth.signal_tokens_per_class =
        d.value("signal_tokens_per_class", ds.synth.signal_tokens_per_class);
    ds.synth.common_tokens = d.value("common_tokens", ds.synth.common_tokens);
    ds.synth.p_signal = d.value("p_signal", ds.synth.p_signal);
    ds.synth.neighbor_overlap =
        d.value("neighbor_overlap", ds.synth.neighbor_overlap);
    ds.synth.min_len = d.value("min_len", ds.synth.min_len);
    ds.synth.max_len = d.value("max_len", ds.synth.max_len);
    ds.train_path = d.value("train", ds.train_path);
    ds.dev_path = d.value("dev", ds.dev_path);
    ds.test_id_path = d.value("test_id", ds.test_id_path);
    ds.test_ood_path = d.value("test_ood", ds.test_ood_path);
    ds.schema.text_a_key = d.value("text_key", ds.schema.text_a_key);
    if (d.contains("text_b_key") && !d.at("text_b_key").is_null())
      ds.schema.text_b_key = d.at("text_b_key").get<std::string>();
    ds.schema.label_key = d.value("label_key", ds.schema.label_key);
    if (d.contains("labels"))
      ds.schema.labels = d.at("labels").get<std::vector<std::string>>();
  }

  if (j.contains("model")) {
    const nlohmann::json& m = j.at("model");
    detail::check_keys(m, {"vocab_hash_buckets", "embed_dim", "hidden_dim"},
                       "model");
    cfg.model.vocab_hash_buckets =
        m.value("vocab_hash_buckets", cfg.model.vocab_hash_buckets);
    cfg.model.embed_dim = m.value("embed_dim", cfg.model.embed_dim);
    cfg.model.hidden_dim = m.value("hidden_dim", cfg.model.hidden_dim);
  }

  if (j.contains("mixup")) {
    const nlohmann::json& m = j.at("mixup");
    detail::check_keys(
        m, {"alpha", "beta", "gamma", "delta", "strategy", "ablation"},
        "mixup");
    cfg.mixup.alpha = m.value("alpha", cfg.mixup.alpha);
    cfg.mixup.beta = m.value("beta", cfg.mixup.beta);
    cfg.mixup.gamma = m.value("gamma", cfg.mixup.gamma);
    cfg.mixup.delta = m.value("delta", cfg.mixup.delta);
    if (m.contains("strategy"))
      cfg.mixup.strategy =
          strategy_from_string(m.at("strategy").get<std::string>());
    if (m.contains("ablation"))
      cfg.mixup.ablation =
          ablation_from_string(m.at("ablation").get<std::string>());
  }

  if (j.contains("training")) {
    const nlohmann::json& t = j.at("training");
    detail::check_keys(t, {"epochs", "batch_size", "learning_rate"},
                       "training");
    cfg.training.epochs = t.value("epochs", cfg.training.epochs);
    cfg.training.batch_size = t.value("batch_size", cfg.training.batch_size);
    cfg.training.learning_rate =
        t.value("learning_rate", cfg.training.learning_rate);
  }

  if (j.contains("label_smoothing") && !j.at("label_smoothing").is_null())
    cfg.training.label_smoothing = j.at("label_smoothing").get<double>();
  cfg.temperature_scaling =
      j.value("temperature_scaling", cfg.temperature_scaling);
  if (j.contains("seeds"))
    cfg.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  cfg.out_dir = j.value("out_dir", cfg.out_dir);

  cfg.validate();
  return cfg;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in)
    throw std::invalid_argument("run config: cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw std::invalid_argument("run config: " + path + ": " + e.what());
  }
  return parse_run_config(j);
}

inline nlohmann::json run_config_json(const RunConfig& cfg) {
  nlohmann::json j;
  nlohmann::json d;
  d["kind"] = cfg.dataset.kind;
  if (cfg.dataset.kind == "synth") {
    d["n_train"] = cfg.dataset.n_train;
    d["n_test"] = cfg.dataset.n_test;
    d["num_classes"] = cfg.dataset.num_classes;
    d["shift"] = cfg.dataset.shift;
    d["signal_tokens_per_class"] = cfg.dataset.synth.signal_tokens_per_class;
    d["common_tokens"] = cfg.dataset.synth.common_tokens;
    d["p_signal"] = cfg.dataset.synth.p_signal;
    d["neighbor_overlap"] = cfg.dataset.synth.neighbor_overlap;
    d["min_len"] = cfg.dataset.synth.min_len;
    d["max_len"] = cfg.dataset.synth.max_len;
  } else {
    d["train"] = cfg.dataset.train_path;
    d["dev"] = cfg.dataset.dev_path;
    d["test_id"] = cfg.dataset.test_id_path;
    d["test_ood"] = cfg.dataset.test_ood_path;
    d["text_key"] = cfg.dataset.schema.text_a_key;
    if (cfg.dataset.schema.text_b_key.empty())
      d["text_b_key"] = nullptr;
    else
      d["text_b_key"] = cfg.dataset.schema.text_b_key;
    d["label_key"] = cfg.dataset.schema.label_key;
    d["labels"] = cfg.dataset.schema.labels;
  }
  j["dataset"] = std::move(d);
  j["model"] = {{"vocab_hash_buckets", cfg.model.vocab_hash_buckets},
                {"embed_dim", cfg.model.embed_dim},
                {"hidden_dim", cfg.model.hidden_dim}};
  j["mixup"] = {{"alpha", cfg.mixup.alpha},
                {"beta", cfg.mixup.beta},
                {"gamma", cfg.mixup.gamma},
                {"delta", cfg.mixup.delta},
                {"strategy", to_string(cfg.mixup.strategy)},
                {"ablation", to_string(cfg.mixup.ablation)}};
  j["training"] = {{"epochs", cfg.training.epochs},
                   {"batch_size", cfg.training.batch_size},
                   {"learning_rate", cfg.training.learning_rate}};
  if (cfg.training.label_smoothing)
    j["label_smoothing"] = *cfg.training.label_smoothing;
  else
    j["label_smoothing"] = nullptr;
  j["temperature_scaling"] = cfg.temperature_scaling;
  j["seeds"] = cfg.seeds;
  j["out_dir"] = cfg.out_dir;
  return j;
}

// Hash of the method-defining part of the config: placement (out_dir) and the
// seed list are excluded, so the same experiment hashed from different run
// directories matches.
inline std::string config_hash(const RunConfig& cfg) {
  nlohmann::json j = run_config_json(cfg);
  j.erase("seeds");
  j.erase("out_dir");
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(fnv1a64(j.dump())));
  return buf;
}

inline DatasetBundle load_bundle(const RunConfig& cfg, std::uint64_t seed) {
  const DatasetSpec& ds = cfg.dataset;
  if (ds.kind == "synth")
    return synth_task(seed, ds.n_train, ds.n_test, ds.num_classes, ds.shift,
                      ds.synth);
  std::vector<std::string> labels = ds.schema.labels;
  return assemble_bundle(load_jsonl(ds.train_path, ds.schema),
                         load_jsonl(ds.dev_path, ds.schema),
                         load_jsonl(ds.test_id_path, ds.schema),
                         load_jsonl(ds.test_ood_path, ds.schema),
                         std::move(labels));
}

inline ModelConfig model_config_for(const RunConfig& cfg,
                                    const DatasetBundle& bundle,
                                    std::uint64_t seed) {
  ModelConfig m = cfg.model;
  m.num_classes = bundle.num_classes;
  m.seed = seed;
  m.validate();
  return m;
}

namespace detail {

inline void write_text(const std::filesystem::path& path,
                       const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out)
    throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << content;
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

inline std::vector<std::size_t> ids_of(const std::vector<Sample>& xs) {
  std::vector<std::size_t> ids;
  ids.reserve(xs.size());
  for (const Sample& s : xs) ids.push_back(s.id);
  return ids;
}

inline std::filesystem::path ensure_run_dir(const RunConfig& cfg,
                                            std::uint64_t seed) {
  const std::filesystem::path dir(cfg.out_dir);
  std::filesystem::create_directories(dir);
  nlohmann::json j = run_config_json(cfg);
  j["config_hash"] = config_hash(cfg);
  j["active_seed"] = seed;
  write_text(dir / "run_config.json", j.dump(2) + "\n");
  return dir;
}

}  // namespace detail

inline nlohmann::json categories_json(const RunConfig& cfg, std::uint64_t seed,
                                      const Categorization& cat,
                                      const std::string& mode) {
  nlohmann::json j;
  j["config_hash"] = config_hash(cfg);
  j["seed"] = seed;
  j["mode"] = mode;
  if (std::isnan(cat.threshold))
    j["threshold"] = nullptr;
  else
    j["threshold"] = cat.threshold;
  j["degenerate"] = cat.degenerate;
  j["high"] = cat.high;
  j["low"] = cat.low;
  return j;
}

// Phase 1: train a throwaway copy of the model with plain cross entropy,
// recording one margin per sample per epoch, then split at the median mean
// margin. Writes margins.csv and categories.json.
inline Categorization run_categorize(const RunConfig& cfg,
                                     std::uint64_t seed) {
  cfg.validate();
  const std::filesystem::path dir = detail::ensure_run_dir(cfg, seed);
  const DatasetBundle bundle = load_bundle(cfg, seed);
  {
    nlohmann::json m = dataset_manifest(bundle);
    m["config_hash"] = config_hash(cfg);
    m["seed"] = seed;
    detail::write_text(dir / "dataset_manifest.json", m.dump(2) + "\n");
  }

  Classifier model{model_config_for(cfg, bundle, seed)};
  TrainConfig tcfg = cfg.training;
  tcfg.label_smoothing.reset();  // the categorization pass is plain CE
  MixupConfig mcfg = cfg.mixup;
  mcfg.strategy = Strategy::None;
  Trainer trainer(model, tcfg, mcfg, seed);
  MarginLedger ledger(detail::ids_of(bundle.train));
  for (std::size_t e = 0; e < tcfg.epochs; ++e)
    trainer.train_epoch_vanilla(bundle.train, e, &ledger);

  const Categorization cat = ledger.categorize();
  if (cat.degenerate)
    std::cerr << "warning: degenerate margin split (every sample is HIGH); "
                 "mixup pairing will fail for HIGH anchors\n";

  std::ostringstream csv;
  csv << "# config_hash=" << config_hash(cfg) << "\n# seed=" << seed << "\n";
  write_ledger_csv(ledger, cat, csv);
  detail::write_text(dir / "margins.csv", csv.str());
  detail::write_text(dir / "categories.json",
                     categories_json(cfg, seed, cat, "aum_median").dump(2) + "\n");
  return cat;
}

inline Categorization read_categories(const std::filesystem::path& path,
                                      const std::string& expected_hash,
                                      std::uint64_t expected_seed) {
  std::ifstream in(path);
  if (!in)
    throw MissingManifest("category manifest not found: " + path.string() +
                          " (run the categorize command first, or pass "
                          "--inline-categorize)");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw MissingManifest("category manifest unreadable: " + path.string() +
                          ": " + e.what());
  }
  if (j.value("config_hash", std::string{}) != expected_hash ||
      j.value("seed", std::uint64_t{0}) != expected_seed)
    throw MissingManifest("category manifest at " + path.string() +
                          " was produced by a different config or seed");
  Categorization cat;
  cat.high = j.at("high").get<std::vector<std::size_t>>();
  cat.low = j.at("low").get<std::vector<std::size_t>>();
  cat.threshold = j.at("threshold").is_null()
                      ? std::numeric_limits<double>::quiet_NaN()
                      : j.at("threshold").get<double>();
  cat.degenerate = j.value("degenerate", false);
  return cat;
}

// Phase 2: train the configured strategy from a fresh initialization and
// write model.ckpt plus a per-epoch train_log.jsonl.
inline std::vector<EpochStats> run_train(const RunConfig& cfg,
                                         std::uint64_t seed,
                                         bool inline_categorize = false) {
  cfg.validate();
  const std::filesystem::path dir = detail::ensure_run_dir(cfg, seed);
  const DatasetBundle bundle = load_bundle(cfg, seed);
  const std::string hash = config_hash(cfg);

  std::optional<Categorization> cat;
  if (cfg.mixup.strategy == Strategy::Proposed) {
    if (cfg.mixup.ablation == Ablation::NoAum) {
      cat = random_balanced_split(detail::ids_of(bundle.train), seed);
      detail::write_text(
          dir / "categories.json",
          categories_json(cfg, seed, *cat, "random_balanced").dump(2) + "\n");
    } else if (std::filesystem::exists(dir / "categories.json")) {
      cat = read_categories(dir / "categories.json", hash, seed);
    } else if (inline_categorize) {
      cat = run_categorize(cfg, seed);
    } else {
      throw MissingManifest(
          "category manifest not found in " + dir.string() +
          " (run the categorize command first, or pass --inline-categorize)");
    }
  }

  {
    nlohmann::json m = dataset_manifest(bundle);
    m["config_hash"] = hash;
    m["seed"] = seed;
    detail::write_text(dir / "dataset_manifest.json", m.dump(2) + "\n");
  }

  Classifier model{model_config_for(cfg, bundle, seed)};
  Trainer trainer(model, cfg.training, cfg.mixup, seed);
  std::vector<EpochStats> stats;
  std::ofstream log(dir / "train_log.jsonl", std::ios::binary);
  if (!log)
    throw std::runtime_error("cannot open train_log.jsonl for writing");
  for (std::size_t e = 0; e < cfg.training.epochs; ++e) {
    const EpochStats st =
        trainer.train_epoch(bundle.train, e, cat ? &*cat : nullptr);
    nlohmann::json line = epoch_stats_json(st);
    line["config_hash"] = hash;
    line["seed"] = seed;
    line["strategy"] = to_string(cfg.mixup.strategy);
    line["ablation"] = to_string(cfg.mixup.ablation);
    log << line.dump() << "\n";
    stats.push_back(st);
  }
  log.flush();
  if (!log) throw std::runtime_error("failed writing train_log.jsonl");

  nlohmann::json meta;
  meta["config_hash"] = hash;
  meta["seed"] = seed;
  meta["strategy"] = to_string(cfg.mixup.strategy);
  meta["ablation"] = to_string(cfg.mixup.ablation);
  if (cfg.training.label_smoothing)
    meta["label_smoothing"] = *cfg.training.label_smoothing;
  else
    meta["label_smoothing"] = nullptr;
  meta["epochs"] = cfg.training.epochs;
  save_checkpoint((dir / "model.ckpt").string(), model, meta);
  return stats;
}

inline PredictionSet predict_set(const Classifier& model,
                                 const std::vector<Sample>& samples,
                                 double temperature = 1.0) {
  PredictionSet preds;
  preds.reserve(samples.size());
  for (const Sample& s : samples)
    preds.push_back(
        make_prediction(model.forward(s).logits, s.label, temperature));
  return preds;
}

struct EvalOutcome {
  CalibrationReport id_nots;
  CalibrationReport ood_nots;
  std::optional<CalibrationReport> id_ts;
  std::optional<CalibrationReport> ood_ts;
  std::optional<double> temperature;
};

// Scores the checkpoint on both test splits, optionally fitting a temperature
// on dev first; writes eval_*.json and reliability_*.csv per variant.
inline EvalOutcome run_evaluate(const RunConfig& cfg, std::uint64_t seed,
                                const std::string& checkpoint_path = "") {
  cfg.validate();
  const std::filesystem::path dir = detail::ensure_run_dir(cfg, seed);
  const DatasetBundle bundle = load_bundle(cfg, seed);
  const std::string ckpt = checkpoint_path.empty()
                               ? (dir / "model.ckpt").string()
                               : checkpoint_path;
  nlohmann::json meta;
  Classifier model = load_checkpoint_expecting(
      ckpt, model_config_for(cfg, bundle, seed), &meta);

  const std::string hash = config_hash(cfg);
  EvalOutcome out;
  const auto emit = [&](const CalibrationReport& rep, const std::string& tag,
                        const std::string& variant) {
    nlohmann::json j = report_json(rep);
    j["config_hash"] = hash;
    j["seed"] = seed;
    j["trained_config_hash"] = meta.value("config_hash", std::string{});
    detail::write_text(dir / ("eval_" + tag + "_" + variant + ".json"),
                       j.dump(2) + "\n");
    std::ostringstream csv;
    write_reliability_csv(rep, csv);
    detail::write_text(dir / ("reliability_" + tag + "_" + variant + ".csv"),
                       csv.str());
  };

  out.id_nots = ece(predict_set(model, bundle.test_id));
  out.id_nots.dataset_tag = "id";
  emit(out.id_nots, "id", "nots");
  out.ood_nots = ece(predict_set(model, bundle.test_ood));
  out.ood_nots.dataset_tag = "ood";
  emit(out.ood_nots, "ood", "nots");

  if (cfg.temperature_scaling) {
    std::vector<Vector> dev_logits;
    std::vector<std::size_t> dev_gold;
    dev_logits.reserve(bundle.dev.size());
    for (const Sample& s : bundle.dev) {
      dev_logits.push_back(model.forward(s).logits);
      dev_gold.push_back(s.label);
    }
    const double t = fit_temperature(dev_logits, dev_gold);
    out.temperature = t;

    CalibrationReport id_ts = ece(predict_set(model, bundle.test_id, t));
    id_ts.dataset_tag = "id";
    id_ts.temperature = t;
    emit(id_ts, "id", "ts");
    out.id_ts = std::move(id_ts);

    CalibrationReport ood_ts = ece(predict_set(model, bundle.test_ood, t));
    ood_ts.dataset_tag = "ood";
    ood_ts.temperature = t;
    emit(ood_ts, "ood", "ts");
    out.ood_ts = std::move(ood_ts);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Result matrix: 8 methods x seeds, mean and std per cell.

struct MethodSpec {
  std::string name;
  Strategy strategy = Strategy::None;
  bool label_smoothing = false;
};

inline std::vector<MethodSpec> matrix_methods() {
  return {{"vanilla", Strategy::None, false},
          {"vanilla_ls", Strategy::None, true},
          {"input_mixup", Strategy::InputMixup, false},
          {"input_mixup_ls", Strategy::InputMixup, true},
          {"manifold_mixup", Strategy::ManifoldMixup, false},
          {"manifold_mixup_ls", Strategy::ManifoldMixup, true},
          {"proposed", Strategy::Proposed, false},
          {"proposed_ls", Strategy::Proposed, true}};
}

// Per-cell config: the method overrides strategy and label smoothing, and the
// cell gets its own subdirectory. The base config's sigma (default 0.1) is
// used for the +LS methods.
inline RunConfig cell_config(const RunConfig& base, const MethodSpec& method,
                             std::uint64_t seed) {
  RunConfig cfg = base;
  cfg.mixup.strategy = method.strategy;
  if (method.label_smoothing)
    cfg.training.label_smoothing =
        base.training.label_smoothing ? *base.training.label_smoothing : 0.1;
  else
    cfg.training.label_smoothing.reset();
  cfg.seeds = {seed};
  cfg.out_dir = (std::filesystem::path(base.out_dir) / "cells" / method.name /
                 ("seed_" + std::to_string(seed)))
                    .string();
  return cfg;
}

struct MatrixCell {
  std::string method;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  EvalOutcome eval;
};

struct MatrixResult {
  std::vector<MatrixCell> cells;
  nlohmann::json table;
  std::size_t failures = 0;
};

namespace detail {

inline double mean_of(const std::vector<double>& xs) {
  double s = 0.0;
  for (double x : xs) s += x;
  return s / static_cast<double>(xs.size());
}

inline double pop_std(const std::vector<double>& xs) {
  if (xs.size() < 2) return 0.0;
  const double m = mean_of(xs);
  double s = 0.0;
  for (double x : xs) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(xs.size()));
}

inline std::size_t worker_count(std::size_t cells) {
  std::size_t n = std::thread::hardware_concurrency();
  if (const char* env = std::getenv("CALMIX_WORKERS")) {
    char* end = nullptr;
    const unsigned long v = std::strtoul(env, &end, 10);
    if (end == env || *end != '\0' || v == 0)
      throw std::invalid_argument("CALMIX_WORKERS must be a positive integer");
    n = v;
  }
  if (n == 0) n = 1;
  return std::min(n, cells);
}

}  // namespace detail

// Runs every (method, seed) cell, aggregates mean and population std per
// method, and writes matrix.json and matrix.csv. Failed cells are recorded
// and skipped in the aggregates; the matrix itself still completes.
inline MatrixResult run_matrix(const RunConfig& base) {
  base.validate();
  const std::filesystem::path dir(base.out_dir);
  std::filesystem::create_directories(dir);
  const std::vector<MethodSpec> methods = matrix_methods();

  std::vector<std::pair<MethodSpec, std::uint64_t>> jobs;
  for (const MethodSpec& m : methods)
    for (std::uint64_t seed : base.seeds) jobs.emplace_back(m, seed);

  MatrixResult result;
  result.cells.resize(jobs.size());
  std::atomic<std::size_t> next{0};
  const std::size_t workers = detail::worker_count(jobs.size());
  const auto worker = [&]() {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= jobs.size()) return;
      const auto& [method, seed] = jobs[i];
      MatrixCell& cell = result.cells[i];
      cell.method = method.name;
      cell.seed = seed;
      try {
        const RunConfig cfg = cell_config(base, method, seed);
        run_train(cfg, seed, /*inline_categorize=*/true);
        cell.eval = run_evaluate(cfg, seed);
        cell.ok = true;
      } catch (const std::exception& e) {
        cell.ok = false;
        cell.error = e.what();
      }
    }
  };
  if (workers <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();
  }

  nlohmann::json table;
  table["config_hash"] = config_hash(base);
  table["seeds"] = base.seeds;
  table["methods"] = nlohmann::json::array();
  std::ostringstream csv;
  csv << "method,runs,failures"
      << ",ece_id_nots_mean,ece_id_nots_std,ece_id_ts_mean,ece_id_ts_std"
      << ",ece_ood_nots_mean,ece_ood_nots_std,ece_ood_ts_mean,ece_ood_ts_std"
      << ",acc_id_mean,acc_id_std,acc_ood_mean,acc_ood_std\n";

  for (const MethodSpec& m : methods) {
    std::vector<double> id_nots, id_ts, ood_nots, ood_ts, acc_id, acc_ood;
    nlohmann::json runs = nlohmann::json::array();
    std::size_t failures = 0;
    for (const MatrixCell& cell : result.cells) {
      if (cell.method != m.name) continue;
      nlohmann::json r;
      r["seed"] = cell.seed;
      r["ok"] = cell.ok;
      if (!cell.ok) {
        r["error"] = cell.error;
        ++failures;
        runs.push_back(std::move(r));
        continue;
      }
      id_nots.push_back(cell.eval.id_nots.ece);
      ood_nots.push_back(cell.eval.ood_nots.ece);
      acc_id.push_back(cell.eval.id_nots.accuracy);
      acc_ood.push_back(cell.eval.ood_nots.accuracy);
      r["ece_id_nots"] = cell.eval.id_nots.ece;
      r["ece_ood_nots"] = cell.eval.ood_nots.ece;
      r["acc_id"] = cell.eval.id_nots.accuracy;
      r["acc_ood"] = cell.eval.ood_nots.accuracy;
      if (cell.eval.id_ts) {
        id_ts.push_back(cell.eval.id_ts->ece);
        ood_ts.push_back(cell.eval.ood_ts->ece);
        r["ece_id_ts"] = cell.eval.id_ts->ece;
        r["ece_ood_ts"] = cell.eval.ood_ts->ece;
        r["temperature"] = *cell.eval.temperature;
      }
      runs.push_back(std::move(r));
    }
    result.failures += failures;

    const auto agg = [](const std::vector<double>& xs) -> nlohmann::json {
      if (xs.empty()) return nullptr;
      return {{"mean", detail::mean_of(xs)}, {"std", detail::pop_std(xs)}};
    };
    nlohmann::json entry;
    entry["method"] = m.name;
    entry["runs"] = std::move(runs);
    entry["failures"] = failures;
    entry["ece_id_nots"] = agg(id_nots);
    entry["ece_id_ts"] = agg(id_ts);
    entry["ece_ood_nots"] = agg(ood_nots);
    entry["ece_ood_ts"] = agg(ood_ts);
    entry["acc_id"] = agg(acc_id);
    entry["acc_ood"] = agg(acc_ood);
    table["methods"].push_back(std::move(entry));

    char buf[64];
    const auto col = [&](const std::vector<double>& xs) {
      if (xs.empty()) {
        csv << ",,";  // metric unavailable for every run of this method
        return;
      }
      std::snprintf(buf, sizeof(buf), ",%.17g,%.17g", detail::mean_of(xs),
                    detail::pop_std(xs));
      csv << buf;
    };
    csv << m.name << "," << id_nots.size() << "," << failures;
    col(id_nots);
    col(id_ts);
    col(ood_nots);
    col(ood_ts);
    col(acc_id);
    col(acc_ood);
    csv << "\n";
  }

  table["failures"] = result.failures;
  result.table = std::move(table);
  detail::write_text(dir / "matrix.json", result.table.dump(2) + "\n");
  detail::write_text(dir / "matrix.csv", csv.str());
  return result;
}

}  // namespace calmix
