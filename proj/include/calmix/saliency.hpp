#pragma once

#include <cmath>
#include <cstddef>
#include <ostream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "calmix/matrix.hpp"
#include "json.hpp"

namespace calmix {

// Absolute gradient of the cross-entropy loss w.r.t. each logit. With the
// fused loss that gradient is softmax(z) - target, so the map has the closed
// form |softmax(z)_k - target_k| and needs no tape.
struct SaliencyMap {
  Vector s;
  std::size_t sample_id = 0;
  std::size_t epoch = 0;
};

inline SaliencyMap saliency_map(const Vector& logits, const Vector& target,
                                std::size_t sample_id = 0,
                                std::size_t epoch = 0) {
  if (logits.size() != target.size())
    throw std::invalid_argument("saliency_map: logits/target length mismatch");
  require_distribution(target, "saliency_map target");
  const Vector p = softmax(logits);
  SaliencyMap map;
  map.s.resize(p.size());
  for (std::size_t k = 0; k < p.size(); ++k) map.s[k] = std::abs(p[k] - target[k]);
  map.sample_id = sample_id;
  map.epoch = epoch;
  return map;
}

// Zero-norm inputs get similarity 0 (and a flag) so a perfectly fit sample
// still pairs instead of crashing the epoch.
inline double cosine_similarity(const Vector& a, const Vector& b,
                                bool* zero_norm = nullptr) {
  if (a.size() != b.size())
    throw std::invalid_argument("cosine_similarity: length mismatch");
  double d = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    d += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) {
    if (zero_norm) *zero_norm = true;
    return 0.0;
  }
  return d / (std::sqrt(na) * std::sqrt(nb));
}

inline double cosine_similarity(const SaliencyMap& a, const SaliencyMap& b,
                                bool* zero_norm = nullptr) {
  return cosine_similarity(a.s, b.s, zero_norm);
}

struct PairSelection {
  std::size_t similar_id = 0;
  std::size_t dissimilar_id = 0;
  double similar_cos = 0.0;
  double dissimilar_cos = 0.0;
  std::size_t comparisons = 0;
  bool zero_norm_seen = false;
};

// Exact scan over the opposite category: argmax and argmin of cosine
// similarity, ties broken by smallest sample id so pool order never matters.
inline PairSelection select_pair(const SaliencyMap& anchor,
                                 const std::vector<SaliencyMap>& pool) {
  if (pool.empty())
    throw std::logic_error("select_pair: opposite category pool is empty");
  PairSelection sel;
  bool first = true;
  for (const SaliencyMap& cand : pool) {
    bool zero = false;
    const double c = cosine_similarity(anchor, cand, &zero);
    sel.zero_norm_seen = sel.zero_norm_seen || zero;
    ++sel.comparisons;
    if (first || c > sel.similar_cos ||
        (c == sel.similar_cos && cand.sample_id < sel.similar_id)) {
      sel.similar_cos = c;
      sel.similar_id = cand.sample_id;
    }
    if (first || c < sel.dissimilar_cos ||
        (c == sel.dissimilar_cos && cand.sample_id < sel.dissimilar_id)) {
      sel.dissimilar_cos = c;
      sel.dissimilar_id = cand.sample_id;
    }
    first = false;
  }
  return sel;
}

// Per-epoch saliency store. Built once from that epoch's logits, then read
// by every pair selection in the epoch.
class SaliencyCache {
 public:
  explicit SaliencyCache(std::size_t epoch) : epoch_(epoch) {}

  std::size_t epoch() const { return epoch_; }
  std::size_t size() const { return maps_.size(); }
  bool contains(std::size_t sample_id) const { return maps_.count(sample_id) > 0; }

  void put(SaliencyMap map) {
    map.epoch = epoch_;
    maps_[map.sample_id] = std::move(map);
  }

  const SaliencyMap& get(std::size_t sample_id) const {
    const auto it = maps_.find(sample_id);
    if (it == maps_.end())
      throw std::logic_error("SaliencyCache: no map for sample " +
                             std::to_string(sample_id) +
                             "; epoch cache not built?");
    return it->second;
  }

  std::vector<SaliencyMap> collect(const std::vector<std::size_t>& ids) const {
    std::vector<SaliencyMap> out;
    out.reserve(ids.size());
    for (std::size_t id : ids) out.push_back(get(id));
    return out;
  }

 private:
  std::size_t epoch_;
  std::unordered_map<std::size_t, SaliencyMap> maps_;
};

inline PairSelection select_pair(const SaliencyMap& anchor,
                                 const SaliencyCache& cache,
                                 const std::vector<std::size_t>& pool_ids) {
  if (pool_ids.empty())
    throw std::logic_error("select_pair: opposite category pool is empty");
  return select_pair(anchor, cache.collect(pool_ids));
}

inline void append_saliency_debug(std::ostream& out, const SaliencyMap& map,
                                  const PairSelection& sel) {
  nlohmann::json j;
  j["sample_id"] = map.sample_id;
  j["epoch"] = map.epoch;
  j["saliency"] = map.s;
  j["similar_id"] = sel.similar_id;
  j["dissimilar_id"] = sel.dissimilar_id;
  out << j.dump() << "\n";
}

}  // namespace calmix
