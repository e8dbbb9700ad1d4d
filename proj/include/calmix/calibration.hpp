#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "calmix/matrix.hpp"
#include "json.hpp"

namespace calmix {

struct Prediction {
  Vector logits;
  Vector probs;
  double confidence = 0.0;
  std::size_t predicted = 0;
  std::size_t gold = 0;
  bool correct = false;
};

using PredictionSet = std::vector<Prediction>;

// softmax(logits / T). Dividing by T never reorders the logits, so the
// predicted class is the same for every T > 0.
inline Vector apply_temperature(const Vector& logits, double temperature) {
  if (!(temperature > 0.0))
    throw std::invalid_argument("apply_temperature: T must be positive");
  Vector scaled(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i)
    scaled[i] = logits[i] / temperature;
  return softmax(scaled);
}

inline Prediction make_prediction(Vector logits, std::size_t gold,
                                  double temperature = 1.0) {
  Prediction p;
  p.probs = apply_temperature(logits, temperature);
  p.logits = std::move(logits);
  p.predicted = argmax(p.probs);
  p.confidence = p.probs[p.predicted];
  if (gold >= p.probs.size())
    throw std::invalid_argument("make_prediction: gold class out of range");
  p.gold = gold;
  p.correct = p.predicted == gold;
  return p;
}

struct CalibrationBin {
  double lo = 0.0;
  double hi = 0.0;
  std::size_t count = 0;
  double accuracy = 0.0;
  double mean_confidence = 0.0;
};

struct CalibrationReport {
  double ece = 0.0;
  double accuracy = 0.0;
  std::optional<double> temperature;
  std::string dataset_tag;
  std::vector<CalibrationBin> bins;
};

// Bin-weighted average gap between accuracy and mean confidence. Bin m covers
// confidences in ((m-1)/M, m/M]; the top bin includes 1.0 and empty bins
// contribute nothing. Per-bin confidences are summed in sorted order so the
// result does not depend on how the prediction set happens to be ordered.
inline CalibrationReport ece(const PredictionSet& preds, int num_bins = 10) {
  if (preds.empty()) throw std::invalid_argument("ece: empty prediction set");
  if (num_bins < 1) throw std::invalid_argument("ece: need at least one bin");
  const std::size_t m = static_cast<std::size_t>(num_bins);

  std::vector<std::vector<double>> confs(m);
  std::vector<std::size_t> correct(m, 0);
  std::size_t correct_total = 0;
  for (const Prediction& p : preds) {
    std::size_t idx = m - 1;
    for (std::size_t b = 0; b + 1 < m; ++b) {
      if (p.confidence <= static_cast<double>(b + 1) / static_cast<double>(m)) {
        idx = b;
        break;
      }
    }
    confs[idx].push_back(p.confidence);
    correct[idx] += p.correct ? 1 : 0;
    correct_total += p.correct ? 1 : 0;
  }

  CalibrationReport report;
  report.accuracy =
      static_cast<double>(correct_total) / static_cast<double>(preds.size());
  report.bins.resize(m);
  const double n = static_cast<double>(preds.size());
  for (std::size_t b = 0; b < m; ++b) {
    CalibrationBin& bin = report.bins[b];
    bin.lo = static_cast<double>(b) / static_cast<double>(m);
    bin.hi = static_cast<double>(b + 1) / static_cast<double>(m);
    bin.count = confs[b].size();
    if (bin.count == 0) continue;
    std::sort(confs[b].begin(), confs[b].end());
    double conf_sum = 0.0;
    for (double c : confs[b]) conf_sum += c;
    bin.mean_confidence = conf_sum / static_cast<double>(bin.count);
    bin.accuracy =
        static_cast<double>(correct[b]) / static_cast<double>(bin.count);
    report.ece += (static_cast<double>(bin.count) / n) *
                  std::abs(bin.accuracy - bin.mean_confidence);
  }
  return report;
}

// Gold class keeps 1 - sigma; the removed mass spreads evenly over the rest.
inline Vector smooth_targets(std::size_t gold, std::size_t num_classes,
                             double sigma) {
  if (num_classes < 2)
    throw std::invalid_argument("smooth_targets: need at least two classes");
  if (gold >= num_classes)
    throw std::invalid_argument("smooth_targets: gold class out of range");
  if (!(sigma > 0.0 && sigma < 1.0))
    throw std::invalid_argument("smooth_targets: sigma must lie in (0,1)");
  Vector t(num_classes, sigma / static_cast<double>(num_classes - 1));
  t[gold] = 1.0 - sigma;
  return t;
}

// Grid search for the temperature minimizing dev-set ECE. Ties go to the
// smallest T; scanning the grid in ascending order makes that automatic.
inline double fit_temperature(const std::vector<Vector>& dev_logits,
                              const std::vector<std::size_t>& gold_labels,
                              int num_bins = 10, double grid_start = 0.01,
                              double grid_step = 0.01, int grid_count = 500) {
  if (dev_logits.empty())
    throw std::invalid_argument("fit_temperature: empty dev set");
  if (dev_logits.size() != gold_labels.size())
    throw std::invalid_argument("fit_temperature: logits/labels size mismatch");
  if (!(grid_start > 0.0) || !(grid_step > 0.0) || grid_count < 1)
    throw std::invalid_argument("fit_temperature: bad grid");

  double best_t = grid_start;
  double best_ece = std::numeric_limits<double>::infinity();
  for (int k = 0; k < grid_count; ++k) {
    const double t = grid_start + grid_step * static_cast<double>(k);
    PredictionSet preds;
    preds.reserve(dev_logits.size());
    for (std::size_t i = 0; i < dev_logits.size(); ++i)
      preds.push_back(make_prediction(dev_logits[i], gold_labels[i], t));
    const double e = ece(preds, num_bins).ece;
    if (e < best_ece) {
      best_ece = e;
      best_t = t;
    }
  }
  return best_t;
}

inline nlohmann::json report_json(const CalibrationReport& report) {
  nlohmann::json j;
  j["ece"] = report.ece;
  j["accuracy"] = report.accuracy;
  if (report.temperature) j["temperature"] = *report.temperature;
  if (!report.dataset_tag.empty()) j["dataset"] = report.dataset_tag;
  j["bins"] = nlohmann::json::array();
  for (const CalibrationBin& b : report.bins)
    j["bins"].push_back({{"lo", b.lo},
                         {"hi", b.hi},
                         {"count", b.count},
                         {"acc", b.accuracy},
                         {"conf", b.mean_confidence}});
  return j;
}

// One row per bin, empty bins included with zero counts.
inline void write_reliability_csv(const CalibrationReport& report,
                                  std::ostream& out) {
  out << "bin_lo,bin_hi,count,accuracy,mean_confidence\n";
  char buf[128];
  for (const CalibrationBin& b : report.bins) {
    std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%zu,%.17g,%.17g\n", b.lo,
                  b.hi, b.count, b.accuracy, b.mean_confidence);
    out << buf;
  }
}

}  // namespace calmix
