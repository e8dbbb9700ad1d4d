#pragma once

#include <algorithm>
#include <chrono>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "calmix/aum.hpp"
#include "calmix/autograd.hpp"
#include "calmix/calibration.hpp"
#include "calmix/data.hpp"
#include "calmix/matrix.hpp"
#include "calmix/mixup.hpp"
#include "calmix/model.hpp"
#include "calmix/rng.hpp"
#include "calmix/saliency.hpp"
#include "json.hpp"

namespace calmix {

struct TrainConfig {
  std::size_t epochs = 3;
  std::size_t batch_size = 16;
  double learning_rate = 0.1;
  // Smoothing mass sigma; applied to every target before any mixing.
  std::optional<double> label_smoothing;

  void validate() const {
    if (epochs == 0) throw std::invalid_argument("TrainConfig: epochs must be >= 1");
    if (batch_size == 0)
      throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
    if (!(learning_rate > 0.0))
      throw std::invalid_argument("TrainConfig: learning_rate must be positive");
    if (label_smoothing && !(*label_smoothing > 0.0 && *label_smoothing < 1.0))
      throw std::invalid_argument("TrainConfig: label_smoothing outside (0,1)");
  }
};

struct EpochStats {
  std::size_t epoch = 0;
  std::size_t samples = 0;
  double loss_base = 0.0;      // mean plain or mixed CE term
  double loss_sim = 0.0;       // mean similar-mix CE term (0 if unused)
  double loss_dis = 0.0;       // mean dissimilar-mix CE term (0 if unused)
  double loss_combined = 0.0;  // mean of the per-sample training losses
  std::size_t lambda_draws = 0;
  double lambda_mean = 0.0;
  double lambda_min = 0.0;
  double lambda_max = 0.0;
  std::size_t similarity_computations = 0;
  std::size_t zero_saliency_pairs = 0;
  double seconds = 0.0;
};

inline nlohmann::json epoch_stats_json(const EpochStats& s) {
  nlohmann::json j;
  j["epoch"] = s.epoch;
  j["samples"] = s.samples;
  j["loss_base"] = s.loss_base;
  j["loss_sim"] = s.loss_sim;
  j["loss_dis"] = s.loss_dis;
  j["loss_combined"] = s.loss_combined;
  j["lambda_draws"] = s.lambda_draws;
  j["lambda_mean"] = s.lambda_mean;
  j["lambda_min"] = s.lambda_min;
  j["lambda_max"] = s.lambda_max;
  j["similarity_computations"] = s.similarity_computations;
  j["zero_saliency_pairs"] = s.zero_saliency_pairs;
  j["seconds"] = s.seconds;
  return j;
}

// Seeded substitute for the margin-based split: shuffles the ids and labels
// the first half LOW, the rest HIGH (sizes differ by at most one).
inline Categorization random_balanced_split(const std::vector<std::size_t>& ids,
                                            std::uint64_t seed) {
  if (ids.empty())
    throw std::invalid_argument("random_balanced_split: empty id list");
  std::vector<std::size_t> order = ids;
  Rng rng = Rng::stream(seed, "aum-random-split");
  rng.shuffle(order);
  Categorization cat;
  const std::size_t half = order.size() / 2;
  cat.low.assign(order.begin(), order.begin() + half);
  cat.high.assign(order.begin() + half, order.end());
  cat.threshold = std::numeric_limits<double>::quiet_NaN();
  cat.degenerate = cat.low.empty();
  return cat;
}

namespace detail {

inline void accumulate_lambda(EpochStats& st, double lambda) {
  if (st.lambda_draws == 0) {
    st.lambda_min = lambda;
    st.lambda_max = lambda;
  } else {
    st.lambda_min = std::min(st.lambda_min, lambda);
    st.lambda_max = std::max(st.lambda_max, lambda);
  }
  st.lambda_mean += lambda;
  ++st.lambda_draws;
}

inline void finalize_lambda(EpochStats& st) {
  if (st.lambda_draws > 0) st.lambda_mean /= static_cast<double>(st.lambda_draws);
}

// Every coordinate of the mixed vector must lie inside the parents' envelope.
inline void check_envelope(const Vector& mixed, const Vector& a,
                           const Vector& b) {
  for (std::size_t k = 0; k < mixed.size(); ++k) {
    const double lo = std::min(a[k], b[k]);
    const double hi = std::max(a[k], b[k]);
    if (mixed[k] < lo || mixed[k] > hi)
      throw std::logic_error("mixed representation left the parent envelope");
  }
}

}  // namespace detail

// Runs SGD epochs over one model. RNG streams are derived from the seed once
// at construction and advance across epochs, so a fresh Trainer with the same
// seed replays the same schedule.
class Trainer {
 public:
  Trainer(Classifier& model, TrainConfig train_cfg, MixupConfig mixup_cfg,
          std::uint64_t seed)
      : model_(model),
        tcfg_(train_cfg),
        mcfg_(mixup_cfg),
        shuffle_rng_(Rng::stream(seed, "shuffle")),
        lambda_rng_(Rng::stream(seed, "lambda")),
        partner_rng_(Rng::stream(seed, "partner")) {
    tcfg_.validate();
    mcfg_.validate();
  }

  // Observers for tests and debug dumps.
  std::function<void(std::size_t anchor, std::size_t partner)> pair_observer;
  std::ostream* saliency_debug_out = nullptr;

  // Plain cross-entropy epoch. When a ledger is given, each sample's margin
  // is recorded from the logits of its training forward pass.
  EpochStats train_epoch_vanilla(const std::vector<Sample>& train,
                                 std::size_t epoch,
                                 MarginLedger* ledger = nullptr) {
    require_nonempty(train);
    const auto t0 = std::chrono::steady_clock::now();
    EpochStats st;
    st.epoch = epoch;
    const std::vector<std::size_t> order = shuffled_indices(train.size());
    for (std::size_t start = 0; start < order.size(); start += tcfg_.batch_size) {
      const std::size_t stop = std::min(order.size(), start + tcfg_.batch_size);
      GradTape tape(&model_.params());
      std::vector<NodeId> losses;
      for (std::size_t k = start; k < stop; ++k) {
        const Sample& s = train[order[k]];
        const auto nodes = model_.record_forward(tape, s);
        if (ledger)
          ledger->record(epoch, s.id, tape.value(nodes.logits).to_vector(),
                         s.label);
        const NodeId ce = tape.cross_entropy_with_logits(
            nodes.logits, target_for(s.label));
        losses.push_back(ce);
        st.loss_base += tape.value(ce).data[0];
        st.loss_combined += tape.value(ce).data[0];
        ++st.samples;
      }
      step_batch(tape, losses);
    }
    finalize(st, t0);
    return st;
  }

  // Single-mixed-loss baseline: each sample is mixed with one uniformly
  // drawn partner, at the pooled-embedding (InputMixup) or encoder-output
  // (ManifoldMixup) level, and only the mixed CE is minimized.
  EpochStats train_epoch_baseline(const std::vector<Sample>& train,
                                  std::size_t epoch) {
    require_nonempty(train);
    if (mcfg_.strategy != Strategy::InputMixup &&
        mcfg_.strategy != Strategy::ManifoldMixup)
      throw std::logic_error("train_epoch_baseline: strategy is not a baseline");
    const auto t0 = std::chrono::steady_clock::now();
    EpochStats st;
    st.epoch = epoch;
    const std::vector<std::size_t> order = shuffled_indices(train.size());
    for (std::size_t start = 0; start < order.size(); start += tcfg_.batch_size) {
      const std::size_t stop = std::min(order.size(), start + tcfg_.batch_size);
      GradTape tape(&model_.params());
      std::vector<NodeId> losses;
      for (std::size_t k = start; k < stop; ++k) {
        const Sample& si = train[order[k]];
        const Sample& sj = train[partner_rng_.uniform_index(train.size())];
        if (pair_observer) pair_observer(si.id, sj.id);
        const double lambda = draw_lambda(st);
        NodeId mixed_logits = 0;
        Vector rep_i, rep_j, rep_mixed;
        if (mcfg_.strategy == Strategy::InputMixup) {
          const NodeId pi = record_pooled(tape, si);
          const NodeId pj = record_pooled(tape, sj);
          const NodeId mix = tape.lerp(pi, pj, lambda);
          rep_i = tape.value(pi).to_vector();
          rep_j = tape.value(pj).to_vector();
          rep_mixed = tape.value(mix).to_vector();
          mixed_logits =
              model_.record_head(tape, model_.record_encoder(tape, mix));
        } else {
          const NodeId hi = record_hidden(tape, si);
          const NodeId hj = record_hidden(tape, sj);
          const NodeId mix = tape.lerp(hi, hj, lambda);
          rep_i = tape.value(hi).to_vector();
          rep_j = tape.value(hj).to_vector();
          rep_mixed = tape.value(mix).to_vector();
          mixed_logits = model_.record_head(tape, mix);
        }
        detail::check_envelope(rep_mixed, rep_i, rep_j);
        const MixedExample mx =
            interpolate(rep_i, rep_j, target_for(si.label),
                        target_for(sj.label), lambda, si.id, sj.id);
        const NodeId ce =
            tape.cross_entropy_with_logits(mixed_logits, mx.target);
        losses.push_back(ce);
        st.loss_base += tape.value(ce).data[0];
        st.loss_combined += tape.value(ce).data[0];
        ++st.samples;
      }
      step_batch(tape, losses);
    }
    finalize(st, t0);
    return st;
  }

  // Margin-categorized, saliency-guided epoch. Every anchor keeps its plain
  // CE term and adds two encoder-output mixes against partners from the
  // opposite margin category: the most similar and the most dissimilar by
  // saliency cosine (or two uniform picks under NoSaliency). A fresh lambda
  // is drawn per mix.
  EpochStats train_epoch_proposed(const std::vector<Sample>& train,
                                  std::size_t epoch,
                                  const Categorization& cat) {
    require_nonempty(train);
    if (mcfg_.strategy != Strategy::Proposed)
      throw std::logic_error("train_epoch_proposed: strategy is not proposed");
    if (cat.high.empty() && cat.low.empty())
      throw std::logic_error("train_epoch_proposed: empty categorization");
    const auto t0 = std::chrono::steady_clock::now();

    std::unordered_map<std::size_t, const Sample*> by_id;
    by_id.reserve(train.size());
    for (const Sample& s : train) by_id.emplace(s.id, &s);
    std::unordered_set<std::size_t> high_set(cat.high.begin(), cat.high.end());
    std::unordered_set<std::size_t> low_set(cat.low.begin(), cat.low.end());
    for (const Sample& s : train)
      if (!high_set.count(s.id) && !low_set.count(s.id))
        throw std::logic_error(
            "train_epoch_proposed: sample missing from categorization");

    const bool use_saliency = mcfg_.ablation != Ablation::NoSaliency;
    SaliencyCache cache(epoch);
    if (use_saliency) build_cache(train, epoch, cache);

    const auto weights = mcfg_.effective_weights();
    const bool want_sim = mcfg_.ablation != Ablation::NoSimilar;
    const bool want_dis = mcfg_.ablation != Ablation::NoDissimilar;

    EpochStats st;
    st.epoch = epoch;
    const std::vector<std::size_t> order = shuffled_indices(train.size());
    for (std::size_t start = 0; start < order.size(); start += tcfg_.batch_size) {
      const std::size_t stop = std::min(order.size(), start + tcfg_.batch_size);
      GradTape tape(&model_.params());
      std::vector<NodeId> losses;
      for (std::size_t k = start; k < stop; ++k) {
        const Sample& s = train[order[k]];
        const auto nodes = model_.record_forward(tape, s);
        const Vector target = target_for(s.label);
        const NodeId ce_base =
            tape.cross_entropy_with_logits(nodes.logits, target);

        const std::vector<std::size_t>& pool =
            high_set.count(s.id) ? cat.low : cat.high;
        if (pool.empty())
          throw std::logic_error(
              "train_epoch_proposed: opposite category is empty");

        std::size_t sim_id = 0;
        std::size_t dis_id = 0;
        if (use_saliency) {
          const SaliencyMap anchor = saliency_map(
              tape.value(nodes.logits).to_vector(), target, s.id, epoch);
          const PairSelection sel = select_pair(anchor, cache, pool);
          sim_id = sel.similar_id;
          dis_id = sel.dissimilar_id;
          st.similarity_computations += sel.comparisons;
          if (sel.zero_norm_seen) ++st.zero_saliency_pairs;
          if (saliency_debug_out)
            append_saliency_debug(*saliency_debug_out, anchor, sel);
        } else {
          sim_id = pool[partner_rng_.uniform_index(pool.size())];
          dis_id = pool[partner_rng_.uniform_index(pool.size())];
        }

        std::vector<NodeId> terms{ce_base};
        Vector ws{weights[0]};
        if (want_sim) {
          const NodeId ce_sim = record_mix_term(tape, nodes.hidden, s, target,
                                                *by_id.at(sim_id), st);
          terms.push_back(ce_sim);
          ws.push_back(weights[1]);
          st.loss_sim += tape.value(ce_sim).data[0];
        }
        if (want_dis) {
          const NodeId ce_dis = record_mix_term(tape, nodes.hidden, s, target,
                                                *by_id.at(dis_id), st);
          terms.push_back(ce_dis);
          ws.push_back(weights[2]);
          st.loss_dis += tape.value(ce_dis).data[0];
        }
        const NodeId combined = tape.weighted_sum(terms, ws);
        losses.push_back(combined);
        st.loss_base += tape.value(ce_base).data[0];
        st.loss_combined += tape.value(combined).data[0];
        ++st.samples;
      }
      step_batch(tape, losses);
    }
    finalize(st, t0);
    return st;
  }

  // Dispatch on strategy; Proposed requires a categorization.
  EpochStats train_epoch(const std::vector<Sample>& train, std::size_t epoch,
                         const Categorization* cat = nullptr) {
    switch (mcfg_.strategy) {
      case Strategy::None:
        return train_epoch_vanilla(train, epoch);
      case Strategy::InputMixup:
      case Strategy::ManifoldMixup:
        return train_epoch_baseline(train, epoch);
      case Strategy::Proposed:
        if (!cat)
          throw std::logic_error("train_epoch: proposed needs a categorization");
        return train_epoch_proposed(train, epoch, *cat);
    }
    throw std::logic_error("train_epoch: unknown strategy");
  }

  const TrainConfig& train_config() const { return tcfg_; }
  const MixupConfig& mixup_config() const { return mcfg_; }

 private:
  static void require_nonempty(const std::vector<Sample>& train) {
    if (train.empty())
      throw std::invalid_argument("train epoch: empty training set");
  }

  Vector target_for(std::size_t label) const {
    if (tcfg_.label_smoothing)
      return smooth_targets(label, model_.config().num_classes,
                            *tcfg_.label_smoothing);
    return one_hot(label, model_.config().num_classes);
  }

  std::vector<std::size_t> shuffled_indices(std::size_t n) {
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    shuffle_rng_.shuffle(order);
    return order;
  }

  double draw_lambda(EpochStats& st) {
    if (mcfg_.fixed_lambda) return *mcfg_.fixed_lambda;
    const double lambda = sample_lambda(mcfg_.alpha, lambda_rng_);
    detail::accumulate_lambda(st, lambda);
    return lambda;
  }

  NodeId record_pooled(GradTape& tape, const Sample& s) {
    const NodeId rows =
        tape.gather_rows(model_.embedding_table(), model_.token_buckets(s));
    return tape.mean_rows(rows);
  }

  NodeId record_hidden(GradTape& tape, const Sample& s) {
    return model_.record_encoder(tape, record_pooled(tape, s));
  }

  // One mixed CE term: encoder-output interpolation scored by the head.
  NodeId record_mix_term(GradTape& tape, NodeId anchor_hidden,
                         const Sample& anchor, const Vector& anchor_target,
                         const Sample& partner, EpochStats& st) {
    if (pair_observer) pair_observer(anchor.id, partner.id);
    const NodeId partner_hidden = record_hidden(tape, partner);
    const double lambda = draw_lambda(st);
    const NodeId mix = tape.lerp(anchor_hidden, partner_hidden, lambda);
    const Vector rep_i = tape.value(anchor_hidden).to_vector();
    const Vector rep_j = tape.value(partner_hidden).to_vector();
    detail::check_envelope(tape.value(mix).to_vector(), rep_i, rep_j);
    const MixedExample mx =
        interpolate(rep_i, rep_j, anchor_target, target_for(partner.label),
                    lambda, anchor.id, partner.id);
    const NodeId logits = model_.record_head(tape, mix);
    return tape.cross_entropy_with_logits(logits, mx.target);
  }

  // Epoch-start saliency snapshot over the whole training set.
  void build_cache(const std::vector<Sample>& train, std::size_t epoch,
                   SaliencyCache& cache) {
    for (const Sample& s : train) {
      const auto fwd = model_.forward(s);
      cache.put(saliency_map(fwd.logits, target_for(s.label), s.id, epoch));
    }
  }

  void step_batch(GradTape& tape, const std::vector<NodeId>& losses) {
    const double inv = 1.0 / static_cast<double>(losses.size());
    const NodeId root = tape.weighted_sum(losses, Vector(losses.size(), inv));
    tape.backward(root);
    model_.params().sgd_step(tcfg_.learning_rate);
  }

  void finalize(EpochStats& st, std::chrono::steady_clock::time_point t0) {
    const double n = static_cast<double>(st.samples);
    st.loss_base /= n;
    st.loss_sim /= n;
    st.loss_dis /= n;
    st.loss_combined /= n;
    detail::finalize_lambda(st);
    st.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
  }

  Classifier& model_;
  TrainConfig tcfg_;
  MixupConfig mcfg_;
  Rng shuffle_rng_;
  Rng lambda_rng_;
  Rng partner_rng_;
};

}  // namespace calmix
