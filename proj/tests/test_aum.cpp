#include "calmix/aum.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <set>
#include <sstream>

#include "calmix/rng.hpp"

namespace {

using calmix::Categorization;
using calmix::MarginLedger;
using calmix::Rng;
using calmix::Vector;

TEST(Margin, HandValues) {
  EXPECT_EQ(calmix::margin({2.0, 0.5, -1.0}, 0), 1.5);
  EXPECT_EQ(calmix::margin({2.0, 0.5, -1.0}, 1), -1.5);
  EXPECT_EQ(calmix::margin({2.0, 0.5, -1.0}, 2), -3.0);
  EXPECT_EQ(calmix::margin({0.7, 0.7, 0.7}, 1), 0.0);
}

TEST(Margin, Validation) {
  EXPECT_THROW(calmix::margin({1.0}, 0), std::invalid_argument);
  EXPECT_THROW(calmix::margin({1.0, 2.0}, 2), std::invalid_argument);
}

TEST(Margin, ShiftInvarianceAndScaling) {
  Rng rng(41);
  for (int trial = 0; trial < 200; ++trial) {
    Vector z(4);
    for (double& v : z) v = rng.normal() * 3.0;
    const std::size_t gold = rng.uniform_index(4);
    const double base = calmix::margin(z, gold);

    const double c = rng.normal() * 5.0;
    Vector shifted = z;
    for (double& v : shifted) v += c;
    EXPECT_NEAR(calmix::margin(shifted, gold), base, 1e-12);

    const double s = 0.1 + rng.uniform() * 4.0;
    Vector scaled = z;
    for (double& v : scaled) v *= s;
    EXPECT_NEAR(calmix::margin(scaled, gold), s * base, 1e-12);
  }
}

MarginLedger ledger_with_aums(const std::vector<double>& aums) {
  std::vector<std::size_t> roster(aums.size());
  for (std::size_t i = 0; i < aums.size(); ++i) roster[i] = i + 10;
  MarginLedger ledger(roster);
  for (std::size_t i = 0; i < aums.size(); ++i)
    ledger.record(0, roster[i], {aums[i], 0.0}, 0);
  return ledger;
}

TEST(Ledger, StrictEpochAccounting) {
  MarginLedger ledger({1, 2});
  ledger.record(0, 1, {1.0, 0.0}, 0);
  EXPECT_THROW(ledger.record(0, 1, {1.0, 0.0}, 0), std::logic_error);
  EXPECT_THROW(ledger.record(2, 2, {1.0, 0.0}, 0), std::logic_error);
  EXPECT_THROW(ledger.record(0, 99, {1.0, 0.0}, 0), std::invalid_argument);
  EXPECT_THROW(ledger.compute_aum(), std::logic_error);

  ledger.record(0, 2, {3.0, 0.5}, 0);
  ledger.record(1, 1, {0.0, 2.0}, 0);
  ledger.record(1, 2, {1.0, 1.0}, 0);
  EXPECT_EQ(ledger.completed_epochs(), 2u);
  EXPECT_EQ(ledger.margins(1), (std::vector<double>{1.0, -2.0}));
  EXPECT_EQ(ledger.margins(2), (std::vector<double>{2.5, 0.0}));

  EXPECT_THROW(MarginLedger({5, 5}), std::invalid_argument);
}

TEST(Ledger, AumIsMeanOfMargins) {
  MarginLedger ledger({7});
  for (double m : {1.5, 0.9, 0.6}) ledger.record(ledger.margins(7).size(), 7, {m, 0.0}, 0);
  EXPECT_EQ(ledger.compute_aum()[0], 1.0);

  const MarginLedger single = ledger_with_aums({0.42});
  EXPECT_EQ(single.compute_aum()[0], 0.42);

  MarginLedger constant({3});
  for (int e = 0; e < 4; ++e) constant.record(e, 3, {-0.25, 0.0}, 0);
  EXPECT_EQ(constant.compute_aum()[0], -0.25);
}

TEST(Categorize, EvenCountHandCase) {
  const MarginLedger ledger = ledger_with_aums({0.1, 0.5, 0.9, 1.3});
  const Categorization cat = ledger.categorize();
  EXPECT_DOUBLE_EQ(cat.threshold, 0.7);
  EXPECT_EQ(cat.low, (std::vector<std::size_t>{10, 11}));
  EXPECT_EQ(cat.high, (std::vector<std::size_t>{12, 13}));
  EXPECT_FALSE(cat.degenerate);
}

TEST(Categorize, OddCountMedianGoesHigh) {
  const MarginLedger ledger = ledger_with_aums({0.1, 0.5, 0.9});
  const Categorization cat = ledger.categorize();
  EXPECT_DOUBLE_EQ(cat.threshold, 0.5);
  EXPECT_EQ(cat.low, (std::vector<std::size_t>{10}));
  EXPECT_EQ(cat.high, (std::vector<std::size_t>{11, 12}));
}

TEST(Categorize, AllEqualAumsDegenerateToHigh) {
  const MarginLedger ledger = ledger_with_aums({0.3, 0.3, 0.3, 0.3});
  const Categorization cat = ledger.categorize();
  EXPECT_TRUE(cat.degenerate);
  EXPECT_TRUE(cat.low.empty());
  EXPECT_EQ(cat.high.size(), 4u);
}

TEST(Categorize, DistinctEvenCountBalances) {
  Rng rng(43);
  std::vector<double> aums;
  std::set<double> seen;
  while (aums.size() < 100) {
    const double v = rng.normal();
    if (seen.insert(v).second) aums.push_back(v);
  }
  const Categorization cat = ledger_with_aums(aums).categorize();
  EXPECT_EQ(cat.high.size(), 50u);
  EXPECT_EQ(cat.low.size(), 50u);
}

TEST(Categorize, PartitionsTheRoster) {
  Rng rng(47);
  std::vector<double> aums(31);
  for (double& v : aums) v = rng.normal();
  const MarginLedger ledger = ledger_with_aums(aums);
  const Categorization cat = ledger.categorize();
  std::set<std::size_t> all(cat.high.begin(), cat.high.end());
  for (std::size_t id : cat.low) EXPECT_TRUE(all.insert(id).second);
  EXPECT_EQ(all.size(), ledger.roster().size());
  for (std::size_t id : cat.low) EXPECT_LT(ledger.compute_aum()[id - 10], cat.threshold);
}

TEST(Categorize, EmptyLedgerRejected) {
  const MarginLedger empty{std::vector<std::size_t>{}};
  EXPECT_THROW(empty.categorize(), std::invalid_argument);
}

TEST(LedgerCsv, OneRowPerSampleWithMarginsAndCategory) {
  MarginLedger ledger({10, 11});
  ledger.record(0, 10, {1.0, 0.0}, 0);
  ledger.record(0, 11, {0.0, 3.0}, 0);
  ledger.record(1, 10, {2.0, 0.0}, 0);
  ledger.record(1, 11, {0.0, 1.0}, 0);
  const Categorization cat = ledger.categorize();

  std::ostringstream out;
  calmix::write_ledger_csv(ledger, cat, out);
  std::istringstream in(out.str());
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "sample_id,epoch_1,epoch_2,aum,category");
  std::getline(in, line);
  EXPECT_EQ(line, "10,1,2,1.5,high");
  std::getline(in, line);
  EXPECT_EQ(line, "11,-3,-1,-2,low");
}

}  // namespace
