#pragma once

#include <algorithm>
#include <cstdio>
#include <limits>
#include <ostream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "calmix/matrix.hpp"

namespace calmix {

// Gold logit minus the best competing logit: positive when the model favors
// the gold class, negative when some other class outscores it.
inline double margin(const Vector& logits, std::size_t gold) {
  if (logits.size() < 2)
    throw std::invalid_argument("margin: need at least two logits");
  if (gold >= logits.size())
    throw std::invalid_argument("margin: gold class out of range");
  double best_other = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < logits.size(); ++k)
    if (k != gold) best_other = std::max(best_other, logits[k]);
  return logits[gold] - best_other;
}

struct Categorization {
  std::vector<std::size_t> high;
  std::vector<std::size_t> low;
  double threshold = 0.0;
  // All aums equal: nothing falls below the median, so everything lands in
  // HIGH. Callers surface this as a warning instead of an error.
  bool degenerate = false;
};

// Per-sample margin history across the preliminary training epochs. Strict
// accounting: each sample must be recorded exactly once per epoch, in epoch
// order, before aums can be read.
class MarginLedger {
 public:
  explicit MarginLedger(std::vector<std::size_t> roster)
      : roster_(std::move(roster)), margins_(roster_.size()) {
    for (std::size_t i = 0; i < roster_.size(); ++i)
      if (!index_.emplace(roster_[i], i).second)
        throw std::invalid_argument("MarginLedger: duplicate sample id " +
                                    std::to_string(roster_[i]));
  }

  const std::vector<std::size_t>& roster() const { return roster_; }

  void record(std::size_t epoch, std::size_t sample_id, const Vector& logits,
              std::size_t gold) {
    const auto it = index_.find(sample_id);
    if (it == index_.end())
      throw std::invalid_argument("MarginLedger: unknown sample id " +
                                  std::to_string(sample_id));
    std::vector<double>& m = margins_[it->second];
    if (epoch < m.size())
      throw std::logic_error("MarginLedger: epoch " + std::to_string(epoch) +
                             " already recorded for sample " +
                             std::to_string(sample_id));
    if (epoch > m.size())
      throw std::logic_error("MarginLedger: sample " +
                             std::to_string(sample_id) + " skipped epoch " +
                             std::to_string(m.size()));
    m.push_back(margin(logits, gold));
  }

  const std::vector<double>& margins(std::size_t sample_id) const {
    const auto it = index_.find(sample_id);
    if (it == index_.end())
      throw std::invalid_argument("MarginLedger: unknown sample id " +
                                  std::to_string(sample_id));
    return margins_[it->second];
  }

  // Epochs fully recorded for every sample; throws if samples disagree.
  std::size_t completed_epochs() const {
    if (roster_.empty()) return 0;
    const std::size_t t = margins_[0].size();
    for (const auto& m : margins_)
      if (m.size() != t)
        throw std::logic_error("MarginLedger: epoch is partially recorded");
    return t;
  }

  // Mean margin per sample, in roster order.
  std::vector<double> compute_aum() const {
    if (completed_epochs() == 0)
      throw std::logic_error("MarginLedger: no epochs recorded");
    std::vector<double> aums(roster_.size());
    for (std::size_t i = 0; i < roster_.size(); ++i) {
      double s = 0.0;
      for (double m : margins_[i]) s += m;
      aums[i] = s / static_cast<double>(margins_[i].size());
    }
    return aums;
  }

  // Median split: below the median goes LOW, at or above goes HIGH.
  Categorization categorize() const {
    if (roster_.empty())
      throw std::invalid_argument("MarginLedger: nothing to categorize");
    const std::vector<double> aums = compute_aum();
    std::vector<double> sorted = aums;
    std::sort(sorted.begin(), sorted.end());
    const std::size_t n = sorted.size();
    Categorization cat;
    cat.threshold = (n % 2 == 1)
                        ? sorted[n / 2]
                        : (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (aums[i] < cat.threshold)
        cat.low.push_back(roster_[i]);
      else
        cat.high.push_back(roster_[i]);
    }
    cat.degenerate = cat.low.empty();
    return cat;
  }

 private:
  std::vector<std::size_t> roster_;
  std::vector<std::vector<double>> margins_;
  std::unordered_map<std::size_t, std::size_t> index_;
};

// sample_id, epoch_1..epoch_T, aum, category; one row per roster entry.
inline void write_ledger_csv(const MarginLedger& ledger,
                             const Categorization& cat, std::ostream& out) {
  const std::size_t t = ledger.completed_epochs();
  out << "sample_id";
  for (std::size_t e = 1; e <= t; ++e) out << ",epoch_" << e;
  out << ",aum,category\n";

  const std::vector<double> aums = ledger.compute_aum();
  std::vector<bool> is_high(ledger.roster().size(), false);
  {
    std::unordered_map<std::size_t, std::size_t> pos;
    for (std::size_t i = 0; i < ledger.roster().size(); ++i)
      pos[ledger.roster()[i]] = i;
    for (std::size_t id : cat.high) is_high[pos.at(id)] = true;
  }

  char buf[64];
  for (std::size_t i = 0; i < ledger.roster().size(); ++i) {
    out << ledger.roster()[i];
    for (double m : ledger.margins(ledger.roster()[i])) {
      std::snprintf(buf, sizeof(buf), ",%.17g", m);
      out << buf;
    }
    std::snprintf(buf, sizeof(buf), ",%.17g", aums[i]);
    out << buf << (is_high[i] ? ",high" : ",low") << "\n";
  }
}

}  // namespace calmix
