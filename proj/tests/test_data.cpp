#include "calmix/data.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace {

using calmix::DatasetBundle;
using calmix::JsonlSchema;
using calmix::Sample;

std::string write_file(const std::string& name, const std::string& content) {
  const std::string path = testing::TempDir() + name;
  std::ofstream out(path);
  out << content;
  return path;
}

JsonlSchema three_way_schema() {
  JsonlSchema s;
  s.text_a_key = "premise";
  s.text_b_key = "hypothesis";
  s.label_key = "gold";
  s.labels = {"entailment", "neutral", "contradiction"};
  return s;
}

TEST(LoadJsonl, ParsesValidLinesWithSequentialIds) {
  const std::string path = write_file(
      "ok.jsonl",
      R"({"premise": "a b", "hypothesis": "c", "gold": "neutral"})"
      "\n"
      R"({"premise": "d", "gold": "entailment"})"
      "\n"
      R"({"premise": "e f g", "hypothesis": "h", "gold": 2})"
      "\n");
  const auto samples = calmix::load_jsonl(path, three_way_schema());
  ASSERT_EQ(samples.size(), 3u);
  EXPECT_EQ(samples[0].id, 0u);
  EXPECT_EQ(samples[1].id, 1u);
  EXPECT_EQ(samples[2].id, 2u);
  EXPECT_EQ(samples[0].text_a, "a b");
  ASSERT_TRUE(samples[0].text_b.has_value());
  EXPECT_EQ(*samples[0].text_b, "c");
  EXPECT_FALSE(samples[1].text_b.has_value());
  EXPECT_EQ(samples[0].label, 1u);
  EXPECT_EQ(samples[1].label, 0u);
  EXPECT_EQ(samples[2].label, 2u);
}

TEST(LoadJsonl, EmptyFileGivesEmptyList) {
  const std::string path = write_file("empty.jsonl", "");
  EXPECT_TRUE(calmix::load_jsonl(path, three_way_schema()).empty());
}

TEST(LoadJsonl, MalformedLineReportsPosition) {
  const std::string path = write_file(
      "bad.jsonl",
      R"({"premise": "a", "gold": "neutral"})"
      "\n"
      "{not json\n");
  try {
    calmix::load_jsonl(path, three_way_schema());
    FAIL() << "expected invalid_argument";
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find(":2"), std::string::npos) << e.what();
  }
}

TEST(LoadJsonl, MissingOrUnknownLabelRejectedWithPosition) {
  const std::string missing =
      write_file("missing.jsonl", R"({"premise": "a"})" "\n");
  try {
    calmix::load_jsonl(missing, three_way_schema());
    FAIL() << "expected invalid_argument";
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find(":1"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("gold"), std::string::npos);
  }

  const std::string unknown = write_file(
      "unknown.jsonl", R"({"premise": "a", "gold": "maybe"})" "\n");
  EXPECT_THROW(calmix::load_jsonl(unknown, three_way_schema()),
               std::invalid_argument);

  const std::string big_index =
      write_file("bigidx.jsonl", R"({"premise": "a", "gold": 3})" "\n");
  EXPECT_THROW(calmix::load_jsonl(big_index, three_way_schema()),
               std::invalid_argument);
}

TEST(LoadJsonl, MissingFileAndMissingTableRejected) {
  EXPECT_THROW(calmix::load_jsonl("/nonexistent/x.jsonl", three_way_schema()),
               std::invalid_argument);
  JsonlSchema no_table;
  EXPECT_THROW(calmix::load_jsonl("/tmp/whatever.jsonl", no_table),
               std::invalid_argument);
}

std::vector<Sample> numbered_samples(std::size_t n) {
  std::vector<Sample> out;
  for (std::size_t i = 0; i < n; ++i)
    out.push_back({i, "t" + std::to_string(i), std::nullopt, i % 2});
  return out;
}

TEST(Split, SingleFractionIsIdentity) {
  const auto samples = numbered_samples(10);
  const auto parts = calmix::split(samples, {1.0}, 77);
  ASSERT_EQ(parts.size(), 1u);
  ASSERT_EQ(parts[0].size(), 10u);
  for (std::size_t i = 0; i < 10; ++i) EXPECT_EQ(parts[0][i].id, i);
}

TEST(Split, FractionsGiveExactSizes) {
  const auto parts = calmix::split(numbered_samples(100), {0.8, 0.1, 0.1}, 5);
  ASSERT_EQ(parts.size(), 3u);
  EXPECT_EQ(parts[0].size(), 80u);
  EXPECT_EQ(parts[1].size(), 10u);
  EXPECT_EQ(parts[2].size(), 10u);

  std::set<std::size_t> ids;
  for (const auto& part : parts)
    for (const Sample& s : part) ids.insert(s.id);
  EXPECT_EQ(ids.size(), 100u);
}

TEST(Split, SameSeedSameAssignment) {
  const auto a = calmix::split(numbered_samples(50), {0.5, 0.5}, 9);
  const auto b = calmix::split(numbered_samples(50), {0.5, 0.5}, 9);
  for (int p : {0, 1})
    for (std::size_t i = 0; i < a[p].size(); ++i)
      EXPECT_EQ(a[p][i].id, b[p][i].id);
  const auto c = calmix::split(numbered_samples(50), {0.5, 0.5}, 10);
  bool differs = false;
  for (std::size_t i = 0; i < c[0].size(); ++i)
    differs = differs || c[0][i].id != a[0][i].id;
  EXPECT_TRUE(differs);
}

TEST(Split, RejectsBadFractions) {
  EXPECT_THROW(calmix::split(numbered_samples(4), {0.5, 0.4}, 1),
               std::invalid_argument);
  EXPECT_THROW(calmix::split(numbered_samples(4), {1.5, -0.5}, 1),
               std::invalid_argument);
  EXPECT_THROW(calmix::split(numbered_samples(4), {}, 1),
               std::invalid_argument);
}

bool bundles_equal(const DatasetBundle& a, const DatasetBundle& b) {
  const auto eq = [](const std::vector<Sample>& x,
                     const std::vector<Sample>& y) {
    if (x.size() != y.size()) return false;
    for (std::size_t i = 0; i < x.size(); ++i)
      if (x[i].id != y[i].id || x[i].text_a != y[i].text_a ||
          x[i].label != y[i].label)
        return false;
    return true;
  };
  return eq(a.train, b.train) && eq(a.dev, b.dev) &&
         eq(a.test_id, b.test_id) && eq(a.test_ood, b.test_ood);
}

TEST(SynthTask, DeterministicPerSeed) {
  const DatasetBundle a = calmix::synth_task(42, 200, 60, 3, 0.5);
  const DatasetBundle b = calmix::synth_task(42, 200, 60, 3, 0.5);
  EXPECT_TRUE(bundles_equal(a, b));
  const DatasetBundle c = calmix::synth_task(43, 200, 60, 3, 0.5);
  EXPECT_FALSE(bundles_equal(a, c));
}

TEST(SynthTask, SplitSizesAndDisjointIds) {
  const DatasetBundle b = calmix::synth_task(1, 100, 30, 4, 0.5);
  EXPECT_EQ(b.train.size(), 100u);
  EXPECT_EQ(b.dev.size(), 30u);
  EXPECT_EQ(b.test_id.size(), 30u);
  EXPECT_EQ(b.test_ood.size(), 30u);
  EXPECT_EQ(b.num_classes, 4u);
  std::set<std::size_t> ids;
  for (const auto* part : {&b.train, &b.dev, &b.test_id, &b.test_ood})
    for (const Sample& s : *part) ids.insert(s.id);
  EXPECT_EQ(ids.size(), 190u);
}

TEST(SynthTask, InDomainLabelsBalancedWithinOne) {
  const DatasetBundle b = calmix::synth_task(7, 250, 50, 3, 0.5);
  std::vector<int> counts(3, 0);
  for (const Sample& s : b.train) ++counts.at(s.label);
  const int lo = std::min({counts[0], counts[1], counts[2]});
  const int hi = std::max({counts[0], counts[1], counts[2]});
  EXPECT_LE(hi - lo, 1);
}

TEST(SynthTask, ZeroShiftMatchesInDomainGeneration) {
  const DatasetBundle b = calmix::synth_task(11, 60, 300, 3, 0.0);
  std::vector<int> counts(3, 0);
  for (const Sample& s : b.test_ood) {
    ++counts.at(s.label);
    EXPECT_EQ(s.text_a.find(" o"), std::string::npos) << s.text_a;
    EXPECT_NE(s.text_a.rfind("o", 0), 0u) << s.text_a;
  }
  EXPECT_LE(std::max({counts[0], counts[1], counts[2]}) -
                std::min({counts[0], counts[1], counts[2]}),
            1);
}

TEST(SynthTask, ShiftIntroducesUnseenTokensAndSkewsPriors) {
  const DatasetBundle b = calmix::synth_task(13, 60, 600, 3, 0.9);
  std::set<std::string> train_tokens;
  for (const Sample& s : b.train) {
    std::istringstream in(s.text_a);
    std::string tok;
    while (in >> tok) train_tokens.insert(tok);
  }
  std::size_t unseen = 0;
  std::vector<int> counts(3, 0);
  for (const Sample& s : b.test_ood) {
    ++counts.at(s.label);
    std::istringstream in(s.text_a);
    std::string tok;
    while (in >> tok)
      if (!train_tokens.count(tok)) ++unseen;
  }
  EXPECT_GT(unseen, 100u);
  // Prior proportional to 2^-c under a strong shift: class 0 dominates.
  EXPECT_GT(counts[0], counts[2] * 2);
}

TEST(SynthTask, Validation) {
  EXPECT_THROW(calmix::synth_task(1, 0, 10, 3, 0.5), std::invalid_argument);
  EXPECT_THROW(calmix::synth_task(1, 10, 0, 3, 0.5), std::invalid_argument);
  EXPECT_THROW(calmix::synth_task(1, 10, 10, 1, 0.5), std::invalid_argument);
  EXPECT_THROW(calmix::synth_task(1, 10, 10, 3, 1.5), std::invalid_argument);
  EXPECT_THROW(calmix::synth_task(1, 10, 10, 3, -0.1), std::invalid_argument);
}

TEST(AssembleBundle, ReassignsDisjointIds) {
  auto part = [](std::size_t n, std::size_t label) {
    std::vector<Sample> v;
    for (std::size_t i = 0; i < n; ++i) v.push_back({0, "x", std::nullopt, label});
    return v;
  };
  const DatasetBundle b = calmix::assemble_bundle(
      part(3, 0), part(2, 1), part(2, 0), part(2, 1), {"a", "b"});
  std::set<std::size_t> ids;
  for (const auto* p : {&b.train, &b.dev, &b.test_id, &b.test_ood})
    for (const Sample& s : *p) ids.insert(s.id);
  EXPECT_EQ(ids.size(), 9u);
  EXPECT_EQ(b.num_classes, 2u);

  EXPECT_THROW(
      calmix::assemble_bundle({}, part(1, 0), part(1, 0), part(1, 0), {"a", "b"}),
      std::invalid_argument);
  EXPECT_THROW(calmix::assemble_bundle(part(1, 5), part(1, 0), part(1, 0),
                                       part(1, 0), {"a", "b"}),
               std::invalid_argument);
}

TEST(Manifest, RecordsCountsAndLabels) {
  const DatasetBundle b = calmix::synth_task(3, 20, 10, 2, 0.25);
  const nlohmann::json j = calmix::dataset_manifest(b);
  EXPECT_EQ(j["counts"]["train"], 20u);
  EXPECT_EQ(j["counts"]["test_ood"], 10u);
  EXPECT_EQ(j["num_classes"], 2u);
  EXPECT_EQ(j["labels"].size(), 2u);
}

}  // namespace
