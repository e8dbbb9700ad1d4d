#pragma once

#include <cmath>
#include <cstddef>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "calmix/rng.hpp"
#include "json.hpp"

namespace calmix {

struct Sample {
  std::size_t id = 0;
  std::string text_a;
  std::optional<std::string> text_b;
  std::size_t label = 0;
};

struct DatasetBundle {
  std::vector<Sample> train;
  std::vector<Sample> dev;
  std::vector<Sample> test_id;
  std::vector<Sample> test_ood;
  std::size_t num_classes = 0;
  std::vector<std::string> label_names;
};

struct JsonlSchema {
  std::string text_a_key = "text";
  std::string text_b_key;  // empty for single-text tasks
  std::string label_key = "label";
  std::vector<std::string> labels;  // declared label table
};

// One JSON object per line. Ids follow sample order; blank lines are skipped;
// parse and schema problems report the 1-based line number.
inline std::vector<Sample> load_jsonl(const std::string& path,
                                      const JsonlSchema& schema) {
  if (schema.labels.empty())
    throw std::invalid_argument("load_jsonl: schema needs a label table");
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("load_jsonl: cannot open " + path);

  std::vector<Sample> samples;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path + ":" + std::to_string(line_no);
    nlohmann::json obj;
    try {
      obj = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw std::invalid_argument(where + ": malformed JSON: " + e.what());
    }
    if (!obj.is_object())
      throw std::invalid_argument(where + ": line is not a JSON object");
    if (!obj.contains(schema.text_a_key) || !obj[schema.text_a_key].is_string())
      throw std::invalid_argument(where + ": missing text key '" +
                                  schema.text_a_key + "'");
    if (!obj.contains(schema.label_key))
      throw std::invalid_argument(where + ": missing label key '" +
                                  schema.label_key + "'");

    Sample s;
    s.id = samples.size();
    s.text_a = obj[schema.text_a_key].get<std::string>();
    if (!schema.text_b_key.empty() && obj.contains(schema.text_b_key)) {
      if (!obj[schema.text_b_key].is_string())
        throw std::invalid_argument(where + ": text key '" +
                                    schema.text_b_key + "' is not a string");
      s.text_b = obj[schema.text_b_key].get<std::string>();
    }

    const nlohmann::json& lab = obj[schema.label_key];
    if (lab.is_string()) {
      const std::string name = lab.get<std::string>();
      std::size_t idx = schema.labels.size();
      for (std::size_t i = 0; i < schema.labels.size(); ++i)
        if (schema.labels[i] == name) idx = i;
      if (idx == schema.labels.size())
        throw std::invalid_argument(where + ": unknown label '" + name + "'");
      s.label = idx;
    } else if (lab.is_number_unsigned()) {
      s.label = lab.get<std::size_t>();
      if (s.label >= schema.labels.size())
        throw std::invalid_argument(where + ": label index " +
                                    std::to_string(s.label) +
                                    " outside the declared table");
    } else {
      throw std::invalid_argument(where + ": label must be string or index");
    }
    samples.push_back(std::move(s));
  }
  return samples;
}

// Seeded shuffle followed by a contiguous partition at cumulative-rounded
// boundaries, so (0.8, 0.1, 0.1) on 100 samples gives exactly 80/10/10.
inline std::vector<std::vector<Sample>> split(
    const std::vector<Sample>& samples, const std::vector<double>& fractions,
    uint64_t seed) {
  if (fractions.empty())
    throw std::invalid_argument("split: no fractions given");
  double sum = 0.0;
  for (double f : fractions) {
    if (f < 0.0) throw std::invalid_argument("split: negative fraction");
    sum += f;
  }
  if (std::abs(sum - 1.0) > 1e-9)
    throw std::invalid_argument("split: fractions must sum to 1");

  std::vector<Sample> shuffled = samples;
  if (fractions.size() > 1) {
    Rng rng = Rng::stream(seed, "split");
    rng.shuffle(shuffled);
  }

  std::vector<std::vector<Sample>> parts;
  const double n = static_cast<double>(shuffled.size());
  std::size_t start = 0;
  double cum = 0.0;
  for (std::size_t i = 0; i < fractions.size(); ++i) {
    cum += fractions[i];
    const std::size_t end =
        i + 1 == fractions.size()
            ? shuffled.size()
            : static_cast<std::size_t>(std::llround(n * cum));
    parts.emplace_back(shuffled.begin() + start, shuffled.begin() + end);
    start = end;
  }
  return parts;
}

struct SynthParams {
  std::size_t signal_tokens_per_class = 8;
  std::size_t common_tokens = 40;
  double p_signal = 0.8;
  double neighbor_overlap = 0.4;
  std::size_t min_len = 3;
  std::size_t max_len = 8;
};

namespace detail {

inline std::size_t skewed_class(Rng& rng, std::size_t num_classes) {
  // Prior proportional to 2^-c.
  double total = 0.0;
  for (std::size_t c = 0; c < num_classes; ++c) total += std::ldexp(1.0, -static_cast<int>(c));
  double u = rng.uniform() * total;
  for (std::size_t c = 0; c + 1 < num_classes; ++c) {
    const double w = std::ldexp(1.0, -static_cast<int>(c));
    if (u < w) return c;
    u -= w;
  }
  return num_classes - 1;
}

inline std::string synth_text(Rng& rng, std::size_t label,
                              std::size_t num_classes, double shift,
                              const SynthParams& p) {
  const std::size_t len =
      p.min_len + rng.uniform_index(p.max_len - p.min_len + 1);
  std::string text;
  for (std::size_t t = 0; t < len; ++t) {
    if (!text.empty()) text += ' ';
    if (rng.uniform() < p.p_signal) {
      std::size_t cls = label;
      if (rng.uniform() < p.neighbor_overlap) cls = (label + 1) % num_classes;
      const std::size_t j = rng.uniform_index(p.signal_tokens_per_class);
      // Out-of-domain text swaps a shift fraction of the class-signal
      // vocabulary for synonym tokens the training split never contains.
      const bool synonym = shift > 0.0 && rng.uniform() < shift;
      text += (synonym ? "o" : "s") + std::to_string(cls) + "_" +
              std::to_string(j);
    } else {
      text += "w" + std::to_string(rng.uniform_index(p.common_tokens));
    }
  }
  return text;
}

inline std::vector<Sample> synth_split(Rng& rng, std::size_t n,
                                       std::size_t num_classes, double shift,
                                       bool skew_priors, std::size_t id_base,
                                       const SynthParams& p) {
  std::vector<Sample> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Sample s;
    s.id = id_base + i;
    s.label = i % num_classes;
    if (skew_priors && shift > 0.0 && rng.uniform() < shift)
      s.label = skewed_class(rng, num_classes);
    s.text_a = synth_text(rng, s.label, num_classes, skew_priors ? shift : 0.0, p);
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace detail

// Seeded synthetic classification task. In-domain splits use balanced
// round-robin labels and class-signal tokens with some cross-class overlap;
// the out-of-domain split substitutes unseen synonym tokens and skews the
// class prior by the same shift fraction.
inline DatasetBundle synth_task(uint64_t seed, std::size_t n_train,
                                std::size_t n_test, std::size_t num_classes,
                                double shift,
                                const SynthParams& params = {}) {
  if (n_train == 0 || n_test == 0)
    throw std::invalid_argument("synth_task: split sizes must be positive");
  if (num_classes < 2)
    throw std::invalid_argument("synth_task: need at least two classes");
  if (!(shift >= 0.0 && shift <= 1.0))
    throw std::invalid_argument("synth_task: shift must lie in [0,1]");
  if (params.min_len == 0 || params.max_len < params.min_len)
    throw std::invalid_argument("synth_task: bad length range");

  Rng rng = Rng::stream(seed, "synth");
  DatasetBundle b;
  b.num_classes = num_classes;
  for (std::size_t c = 0; c < num_classes; ++c)
    b.label_names.push_back("class_" + std::to_string(c));
  std::size_t base = 0;
  b.train = detail::synth_split(rng, n_train, num_classes, 0.0, false, base, params);
  base += n_train;
  b.dev = detail::synth_split(rng, n_test, num_classes, 0.0, false, base, params);
  base += n_test;
  b.test_id = detail::synth_split(rng, n_test, num_classes, 0.0, false, base, params);
  base += n_test;
  b.test_ood = detail::synth_split(rng, n_test, num_classes, shift, true, base, params);
  return b;
}

// Re-ids four independently loaded splits into one disjoint sequence.
inline DatasetBundle assemble_bundle(std::vector<Sample> train,
                                     std::vector<Sample> dev,
                                     std::vector<Sample> test_id,
                                     std::vector<Sample> test_ood,
                                     std::vector<std::string> label_names) {
  if (train.empty() || dev.empty() || test_id.empty() || test_ood.empty())
    throw std::invalid_argument("assemble_bundle: every split must be nonempty");
  if (label_names.size() < 2)
    throw std::invalid_argument("assemble_bundle: need at least two classes");
  DatasetBundle b;
  b.num_classes = label_names.size();
  b.label_names = std::move(label_names);
  std::size_t next = 0;
  for (auto* part : {&train, &dev, &test_id, &test_ood})
    for (Sample& s : *part) {
      if (s.label >= b.num_classes)
        throw std::invalid_argument("assemble_bundle: label out of range");
      s.id = next++;
    }
  b.train = std::move(train);
  b.dev = std::move(dev);
  b.test_id = std::move(test_id);
  b.test_ood = std::move(test_ood);
  return b;
}

inline nlohmann::json dataset_manifest(const DatasetBundle& b) {
  nlohmann::json j;
  j["counts"] = {{"train", b.train.size()},
                 {"dev", b.dev.size()},
                 {"test_id", b.test_id.size()},
                 {"test_ood", b.test_ood.size()}};
  j["num_classes"] = b.num_classes;
  j["labels"] = b.label_names;
  return j;
}

}  // namespace calmix
