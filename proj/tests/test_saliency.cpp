#include "calmix/saliency.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <sstream>
#include <vector>

#include "calmix/matrix.hpp"
#include "calmix/rng.hpp"
#include "oracles.hpp"

namespace {

using calmix::PairSelection;
using calmix::Rng;
using calmix::SaliencyCache;
using calmix::SaliencyMap;
using calmix::Vector;

SaliencyMap raw_map(std::size_t id, Vector s) {
  SaliencyMap m;
  m.sample_id = id;
  m.s = std::move(s);
  return m;
}

TEST(Saliency, HandValues) {
  const SaliencyMap flat = calmix::saliency_map({0.0, 0.0}, {1.0, 0.0});
  EXPECT_EQ(flat.s[0], 0.5);
  EXPECT_EQ(flat.s[1], 0.5);

  const SaliencyMap m = calmix::saliency_map({2.0, 1.0, 0.0}, {1.0, 0.0, 0.0});
  EXPECT_NEAR(m.s[0], 0.3348, 1e-4);
  EXPECT_NEAR(m.s[1], 0.2447, 1e-4);
  EXPECT_NEAR(m.s[2], 0.0900, 1e-4);
}

TEST(Saliency, ConfidentCorrectPredictionVanishes) {
  const SaliencyMap m =
      calmix::saliency_map({30.0, 0.0, 0.0}, {1.0, 0.0, 0.0});
  for (double v : m.s) {
    EXPECT_GE(v, 0.0);
    EXPECT_LT(v, 1e-8);
  }
}

TEST(Saliency, OneHotSumIdentity) {
  Rng rng(53);
  for (int trial = 0; trial < 100; ++trial) {
    Vector z(4);
    for (double& v : z) v = rng.normal() * 3.0;
    const std::size_t gold = rng.uniform_index(4);
    const SaliencyMap m = calmix::saliency_map(z, calmix::one_hot(gold, 4));
    double sum = 0.0;
    for (double v : m.s) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
      sum += v;
    }
    EXPECT_NEAR(sum, 2.0 * (1.0 - calmix::softmax(z)[gold]), 1e-12);
  }
}

TEST(Saliency, Validation) {
  EXPECT_THROW(calmix::saliency_map({0.0, 0.0}, {1.0, 0.0, 0.0}),
               std::invalid_argument);
  EXPECT_THROW(calmix::saliency_map({0.0, 0.0}, {0.7, 0.7}),
               std::invalid_argument);
}

TEST(Cosine, KnownValues) {
  EXPECT_NEAR(calmix::cosine_similarity(Vector{1.0, 0.0}, Vector{1.0, 1.0}),
              1.0 / std::sqrt(2.0), 1e-12);
  EXPECT_EQ(calmix::cosine_similarity(Vector{1.0, 0.0}, Vector{0.0, 1.0}), 0.0);
  EXPECT_NEAR(calmix::cosine_similarity(Vector{0.2, 0.5}, Vector{0.2, 0.5}),
              1.0, 1e-12);
}

TEST(Cosine, ScaleInvariance) {
  Rng rng(59);
  for (int trial = 0; trial < 100; ++trial) {
    Vector a(5);
    for (double& v : a) v = rng.uniform();
    Vector b = a;
    const double c = 0.01 + rng.uniform() * 10.0;
    for (double& v : b) v *= c;
    EXPECT_NEAR(calmix::cosine_similarity(a, b), 1.0, 1e-12);
  }
}

TEST(Cosine, ZeroNormFlagged) {
  bool zero = false;
  EXPECT_EQ(calmix::cosine_similarity(Vector{0.0, 0.0}, Vector{1.0, 2.0}, &zero),
            0.0);
  EXPECT_TRUE(zero);
  zero = false;
  calmix::cosine_similarity(Vector{1.0, 2.0}, Vector{0.5, 0.5}, &zero);
  EXPECT_FALSE(zero);
  EXPECT_THROW(calmix::cosine_similarity(Vector{1.0}, Vector{1.0, 2.0}),
               std::invalid_argument);
}

TEST(SelectPair, HandCase) {
  const SaliencyMap anchor = raw_map(0, {1.0, 0.0, 0.0});
  const std::vector<SaliencyMap> pool{raw_map(5, {0.9, 0.05, 0.05}),
                                      raw_map(9, {0.0, 1.0, 0.0})};
  const PairSelection sel = calmix::select_pair(anchor, pool);
  EXPECT_EQ(sel.similar_id, 5u);
  EXPECT_EQ(sel.dissimilar_id, 9u);
  EXPECT_NEAR(sel.similar_cos, 0.9969, 1e-4);
  EXPECT_EQ(sel.dissimilar_cos, 0.0);
  EXPECT_EQ(sel.comparisons, 2u);
}

TEST(SelectPair, PoolOfOneIsBoth) {
  const PairSelection sel = calmix::select_pair(
      raw_map(0, {0.5, 0.5}), {raw_map(77, {0.3, 0.7})});
  EXPECT_EQ(sel.similar_id, 77u);
  EXPECT_EQ(sel.dissimilar_id, 77u);
}

TEST(SelectPair, TiesBreakBySmallestId) {
  const SaliencyMap anchor = raw_map(0, {1.0, 1.0});
  const std::vector<SaliencyMap> pool{raw_map(12, {0.4, 0.4}),
                                      raw_map(4, {0.4, 0.4})};
  const PairSelection sel = calmix::select_pair(anchor, pool);
  EXPECT_EQ(sel.similar_id, 4u);
  EXPECT_EQ(sel.dissimilar_id, 4u);
}

TEST(SelectPair, MatchesBruteForceOnRandomPools) {
  Rng rng(61);
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t n = 1 + rng.uniform_index(50);
    const SaliencyMap anchor = raw_map(1000, {});
    Vector av(6);
    for (double& v : av) v = rng.uniform();
    std::vector<SaliencyMap> pool;
    for (std::size_t i = 0; i < n; ++i) {
      Vector s(6);
      for (double& v : s) v = rng.uniform();
      pool.push_back(raw_map(i * 3 + 1, std::move(s)));
    }
    const PairSelection sel = calmix::select_pair(raw_map(1000, av), pool);

    std::size_t best_id = 0, worst_id = 0;
    double best = -2.0, worst = 2.0;
    for (const SaliencyMap& cand : pool) {
      const double c = oracles::cosine(av, cand.s);
      if (c > best || (c == best && cand.sample_id < best_id)) {
        best = c;
        best_id = cand.sample_id;
      }
      if (c < worst || (c == worst && cand.sample_id < worst_id)) {
        worst = c;
        worst_id = cand.sample_id;
      }
    }
    EXPECT_EQ(sel.similar_id, best_id);
    EXPECT_EQ(sel.dissimilar_id, worst_id);
    EXPECT_NEAR(sel.similar_cos, best, 1e-12);
    EXPECT_NEAR(sel.dissimilar_cos, worst, 1e-12);
  }
}

TEST(SelectPair, InvariantToPoolOrder) {
  Rng rng(67);
  std::vector<SaliencyMap> pool;
  for (std::size_t i = 0; i < 20; ++i) {
    Vector s(4);
    for (double& v : s) v = rng.uniform();
    pool.push_back(raw_map(i, std::move(s)));
  }
  const SaliencyMap anchor = raw_map(99, {0.4, 0.3, 0.2, 0.1});
  const PairSelection a = calmix::select_pair(anchor, pool);
  rng.shuffle(pool);
  const PairSelection b = calmix::select_pair(anchor, pool);
  EXPECT_EQ(a.similar_id, b.similar_id);
  EXPECT_EQ(a.dissimilar_id, b.dissimilar_id);
}

TEST(SelectPair, EmptyPoolIsStateError) {
  EXPECT_THROW(calmix::select_pair(raw_map(0, {1.0, 0.0}), {}),
               std::logic_error);
}

TEST(Cache, StoresAndValidates) {
  SaliencyCache cache(3);
  cache.put(raw_map(10, {0.1, 0.9}));
  cache.put(raw_map(11, {0.6, 0.4}));
  EXPECT_EQ(cache.epoch(), 3u);
  EXPECT_EQ(cache.size(), 2u);
  EXPECT_TRUE(cache.contains(10));
  EXPECT_FALSE(cache.contains(12));
  EXPECT_EQ(cache.get(10).epoch, 3u);
  EXPECT_THROW(cache.get(12), std::logic_error);

  const PairSelection sel =
      calmix::select_pair(raw_map(0, {0.5, 0.5}), cache, {10, 11});
  EXPECT_EQ(sel.comparisons, 2u);
  EXPECT_THROW(calmix::select_pair(raw_map(0, {0.5, 0.5}), cache, {}),
               std::logic_error);
  EXPECT_THROW(calmix::select_pair(raw_map(0, {0.5, 0.5}), cache, {10, 12}),
               std::logic_error);
}

TEST(DebugDump, EmitsParseableJsonl) {
  SaliencyMap m = raw_map(42, {0.25, 0.75});
  m.epoch = 2;
  PairSelection sel;
  sel.similar_id = 7;
  sel.dissimilar_id = 8;
  std::ostringstream out;
  calmix::append_saliency_debug(out, m, sel);
  const nlohmann::json j = nlohmann::json::parse(out.str());
  EXPECT_EQ(j["sample_id"], 42u);
  EXPECT_EQ(j["epoch"], 2u);
  EXPECT_EQ(j["saliency"].size(), 2u);
  EXPECT_EQ(j["similar_id"], 7u);
  EXPECT_EQ(j["dissimilar_id"], 8u);
}

}  // namespace
