#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <set>

#include "support.hpp"
#include "twostage/mining/baseline.hpp"
#include "twostage/mining/mining.hpp"
#include "twostage/noise/transition.hpp"

using namespace twostage;
using testing_support::random_probs;

namespace {

std::vector<Survivor> survivors_with(const std::vector<double>& conf) {
  std::vector<Survivor> s;
  for (std::size_t i = 0; i < conf.size(); ++i) s.push_back({i, conf[i]});
  return s;
}

MiningConfig mining(double threshold, double floor) {
  MiningConfig c;
  c.confidence_threshold = threshold;
  c.floor_fraction = floor;
  return c;
}

// Features are one-hot rows of `labels`; the network reads them back.
Dataset one_hot_dataset(const std::vector<int>& labels, int classes) {
  Tensor x = Tensor::Zero(static_cast<Eigen::Index>(labels.size()), classes);
  for (std::size_t i = 0; i < labels.size(); ++i) x(static_cast<Eigen::Index>(i), labels[i]) = 1.0;
  Dataset d(x, labels, classes, "one-hot");
  d.set_true_labels(labels);
  return d;
}

Network reader_network(int classes, double gain) {
  Network net({LayerSpec::dense(static_cast<std::size_t>(classes), static_cast<std::size_t>(classes)),
               LayerSpec::softmax()});
  net.params()[0].weight = gain * Tensor::Identity(classes, classes);
  return net;
}

// Random labels and random probabilities where a share of rows agree with the label.
std::pair<Dataset, Tensor> random_mining_case(Rng& gen) {
  const int classes = 2 + static_cast<int>(gen() % 5);
  const std::size_t n = 1 + gen() % 200;
  std::vector<int> y(n);
  for (auto& v : y) v = static_cast<int>(gen() % static_cast<std::size_t>(classes));
  Tensor probs = random_probs(static_cast<Eigen::Index>(n), classes, gen);
  Dataset d(Tensor::Zero(static_cast<Eigen::Index>(n), 1), y, classes);
  return {d, probs};
}

}  // namespace

// ---- consistency filter ----------------------------------------------------

TEST(ConsistencyFilter, AgreeingNetworkKeepsAll) {
  const std::vector<int> y{0, 2, 1, 1, 2};
  const Dataset d = one_hot_dataset(y, 3);
  const auto f = consistency_filter(reader_network(3, 5.0), d);
  EXPECT_TRUE(f.rejected.empty());
  EXPECT_EQ(f.per_class[1].size(), 2u);
  EXPECT_EQ(f.per_class[2].size(), 2u);
}

TEST(ConsistencyFilter, DisagreeingNetworkKeepsNone) {
  const std::vector<int> y{0, 1, 1, 0};
  Tensor probs(4, 2);
  probs << 0.1, 0.9, 0.8, 0.2, 0.6, 0.4, 0.3, 0.7;
  const auto f = consistency_filter(probs, y, 2);
  EXPECT_EQ(f.rejected, (std::vector<std::size_t>{0, 1, 2, 3}));
  EXPECT_TRUE(f.per_class[0].empty() && f.per_class[1].empty());
}

TEST(ConsistencyFilter, FourExampleFixture) {
  const std::vector<int> y{0, 1, 1, 2};
  Tensor probs(4, 3);
  probs << 0.7, 0.2, 0.1,  // match
      0.5, 0.3, 0.2,       // predicts 0
      0.1, 0.6, 0.3,       // match
      0.4, 0.4, 0.2;       // predicts 0
  const auto f = consistency_filter(probs, y, 3);
  ASSERT_EQ(f.per_class[0].size(), 1u);
  ASSERT_EQ(f.per_class[1].size(), 1u);
  EXPECT_EQ(f.per_class[0][0].index, 0u);
  EXPECT_EQ(f.per_class[0][0].confidence, 0.7);
  EXPECT_EQ(f.per_class[1][0].index, 2u);
  EXPECT_EQ(f.per_class[1][0].confidence, 0.6);
  EXPECT_EQ(f.rejected, (std::vector<std::size_t>{1, 3}));
}

// ---- rank and select -------------------------------------------------------

TEST(RankAndSelect, ThresholdAlone) {
  std::vector<double> conf(20, 0.95);
  EXPECT_EQ(rank_and_select(survivors_with(conf), 100, mining(0.9, 0.1)).size(), 20u);
}

TEST(RankAndSelect, FloorExtendsToTopTen) {
  std::vector<double> conf{0.8, 0.7, 0.95};
  for (int k = 0; k < 8; ++k) conf.push_back(0.8);
  for (int k = 0; k < 39; ++k) conf.push_back(0.7);
  const auto sel = rank_and_select(survivors_with(conf), 100, mining(0.9, 0.1));
  ASSERT_EQ(sel.size(), 10u);
  EXPECT_EQ(sel[0], 2u);
  for (std::size_t k = 1; k < sel.size(); ++k) EXPECT_EQ(conf[sel[k]], 0.8);
}

TEST(RankAndSelect, FloorUnreachableKeepsAllSurvivors) {
  const auto sel = rank_and_select(survivors_with({0.5, 0.6, 0.7, 0.8}), 100, mining(0.9, 0.1));
  EXPECT_EQ(std::set<std::size_t>(sel.begin(), sel.end()), (std::set<std::size_t>{0, 1, 2, 3}));
}

TEST(RankAndSelect, TiesBreakByIndex) {
  const auto sel = rank_and_select(survivors_with({0.5, 0.5, 0.5, 0.5}), 20, mining(0.9, 0.1));
  EXPECT_EQ(sel, (std::vector<std::size_t>{0, 1}));
}

TEST(RankAndSelect, ThresholdOneMeansFloorOnly) {
  const auto sel = rank_and_select(survivors_with(std::vector<double>(30, 1.0)), 30, mining(1.0, 0.1));
  EXPECT_EQ(sel.size(), 3u);
}

TEST(RankAndSelect, FloorCountIsExactCeiling) {
  EXPECT_EQ(floor_count(0.1, 70), 7u);
  EXPECT_EQ(floor_count(0.1, 71), 8u);
  EXPECT_EQ(floor_count(0.1, 0), 0u);
}

TEST(RankAndSelect, RejectsBadConfig) {
  EXPECT_THROW(rank_and_select({}, 1, mining(1.5, 0.1)), ArgumentError);
  EXPECT_THROW(rank_and_select({}, 1, mining(0.9, 0.0)), ArgumentError);
  EXPECT_THROW(rank_and_select({}, 1, mining(0.9, 1.0)), ArgumentError);
}

TEST(RankAndSelect, PermutationInvariantWithDistinctConfidences) {
  Rng gen(5);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + gen() % 60;
    std::vector<Survivor> s;
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (std::size_t i = 0; i < n; ++i) s.push_back({i, u(gen)});
    const auto cfg = mining(std::uniform_real_distribution<double>(0.05, 0.99)(gen), 0.2);
    const std::size_t class_size = n + gen() % 50;
    const auto a = rank_and_select(s, class_size, cfg);
    std::shuffle(s.begin(), s.end(), gen);
    EXPECT_EQ(rank_and_select(s, class_size, cfg), a);
  }
}

// ---- mine ------------------------------------------------------------------

TEST(Mine, PerfectNetworkThresholdZeroKeepsEverything) {
  const std::vector<int> y{0, 1, 2, 2, 1, 0, 0};
  const Dataset d = one_hot_dataset(y, 3);
  auto [split, report] = mine(d, reader_network(3, 8.0), mining(0.0, 0.1));
  EXPECT_EQ(split.labeled.size(), y.size());
  EXPECT_TRUE(split.unlabeled.empty());
  ASSERT_TRUE(report.audit.has_value());
  EXPECT_EQ(report.audit->correct_pct(), 100.0);
}

TEST(Mine, ReportCountsAndAudit) {
  // rows 0..3 noisy labels 0,0,1,1; truth 0,1,1,1
  Dataset d(Tensor::Zero(4, 1), {0, 0, 1, 1}, 2);
  d.set_true_labels({0, 1, 1, 1});
  Tensor probs(4, 2);
  probs << 0.95, 0.05, 0.9, 0.1, 0.2, 0.8, 0.6, 0.4;
  auto [split, report] = mine(d, probs, mining(0.9, 0.1));
  EXPECT_EQ(report.retained_per_class, (std::vector<std::size_t>{2, 1}));
  EXPECT_EQ(split.unlabeled, (std::vector<std::size_t>{3}));
  ASSERT_TRUE(report.audit);
  EXPECT_EQ(report.audit->correct, 2u);
  EXPECT_EQ(report.audit->incorrect, 1u);
  EXPECT_EQ(report.audit->unlabeled, 1u);
  const auto j = to_json(report);
  EXPECT_TRUE(j.contains("incorrect_of_labeled_pct"));
  EXPECT_TRUE(j.contains("unlabeled_pct"));
}

TEST(Mine, PartitionAndNeverRelabel) {
  Rng gen(41);
  for (int trial = 0; trial < 300; ++trial) {
    auto [d, probs] = random_mining_case(gen);
    const auto cfg = mining(std::uniform_real_distribution<double>(0.0, 1.0)(gen),
                            std::uniform_real_distribution<double>(0.01, 0.99)(gen));
    auto [split, report] = mine(d, probs, cfg);
    EXPECT_NO_THROW(split.validate(&d.labels));
    std::size_t retained = 0;
    for (auto r : report.retained_per_class) retained += r;
    EXPECT_EQ(retained, split.labeled.size());
  }
}

TEST(Mine, RaisingThresholdNeverGrowsLabeledSet) {
  Rng gen(43);
  for (int trial = 0; trial < 200; ++trial) {
    auto [d, probs] = random_mining_case(gen);
    const double floor = std::uniform_real_distribution<double>(0.01, 0.5)(gen);
    std::size_t previous = d.size() + 1;
    for (double t : {0.0, 0.2, 0.4, 0.5, 0.6, 0.8, 0.9, 0.99, 1.0}) {
      const auto size = mine(d, probs, mining(t, floor)).first.labeled.size();
      EXPECT_LE(size, previous) << "threshold " << t;
      previous = size;
    }
  }
}

TEST(Mine, RowPermutationPermutesSelection) {
  Rng gen(47);
  for (int trial = 0; trial < 100; ++trial) {
    auto [d, probs] = random_mining_case(gen);
    std::vector<std::size_t> perm(d.size());
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::shuffle(perm.begin(), perm.end(), gen);
    const Dataset pd = d.subset(perm);
    const Tensor pp = gather_rows(probs, perm);
    const auto cfg = mining(0.5, 0.3);
    std::set<std::size_t> original, permuted;
    for (const auto& e : mine(d, probs, cfg).first.labeled) original.insert(e.index);
    for (const auto& e : mine(pd, pp, cfg).first.labeled) permuted.insert(perm[e.index]);
    EXPECT_EQ(original, permuted);
  }
}

TEST(MinedSplit, JsonRoundTripAndValidation) {
  MinedSplit s;
  s.source_size = 4;
  s.labeled = {{0, 2}, {3, 1}};
  s.unlabeled = {1, 2};
  const auto back = mined_split_from_json(to_json(s));
  EXPECT_EQ(back.labeled, s.labeled);
  EXPECT_EQ(back.unlabeled, s.unlabeled);
  auto j = to_json(s);
  j["unlabeled"] = std::vector<std::size_t>{1, 1};
  EXPECT_THROW(mined_split_from_json(j), ConsistencyError);
  EXPECT_THROW(mined_split_from_json(nlohmann::json::object()), FormatError);
  const std::vector<int> labels{2, 0, 0, 0};
  EXPECT_THROW(s.validate(&labels), ConsistencyError);
}

// ---- refine validation -----------------------------------------------------

TEST(RefineValidation, EmptyResultIsConfigError) {
  const Dataset d = one_hot_dataset({0, 1, 0, 1}, 2);
  Network wrong = reader_network(2, -5.0);  // always predicts the other class
  EXPECT_THROW(refine_validation(d, wrong, mining(0.9, 0.1)), ConfigError);
}

TEST(RefineValidation, ConfidentNetworkKeepsCleanSet) {
  const Dataset d = one_hot_dataset({0, 1, 2, 0, 1, 2, 2}, 3);
  EXPECT_EQ(refine_validation(d, reader_network(3, 20.0), mining(0.9, 0.1)).size(), d.size());
}

TEST(RefineValidation, ThresholdOneKeepsCeilingOfTenPercent) {
  std::vector<int> y;
  for (int k = 0; k < 25; ++k) y.push_back(0);
  for (int k = 0; k < 31; ++k) y.push_back(1);
  for (int k = 0; k < 10; ++k) y.push_back(2);
  const Dataset d = one_hot_dataset(y, 3);
  const Dataset r = refine_validation(d, reader_network(3, 60.0), mining(1.0, 0.1));
  EXPECT_EQ(class_counts(r.labels, 3), (std::vector<std::size_t>{3, 4, 1}));
}

// ---- baseline training -----------------------------------------------------

TEST(TrainBaseline, ZeroEpochsReturnsInit) {
  Dataset d = make_synthetic(2, 10, 3, 2.0, 1);
  const Network init = MlpSpec{{4}, 1.0, 0.0}.build(3, 2, 5);
  BaselineConfig cfg;
  cfg.epochs = 0;
  const auto out = train_baseline(init, d, d, cfg);
  EXPECT_EQ(out.network.flat_parameters(), init.flat_parameters());
  EXPECT_TRUE(out.history.empty());
}

TEST(TrainBaseline, SeparableDataIsFitted) {
  Dataset d = make_synthetic(3, 60, 6, 12.0, 2);
  normalize(d);
  BaselineConfig cfg;
  cfg.epochs = 15;
  cfg.batch_size = 20;
  const auto out = train_baseline(MlpSpec{{16}, 0.8, 0.0}.build(6, 3, 1), d, d, cfg);
  EXPECT_GE(accuracy_pct(out.network, d.features, d.labels), 99.0);
  EXPECT_GE(out.best_epoch, 1);
}

// Once validation accuracy is flat, the kept epoch is the one with the lowest validation loss.
TEST(TrainBaseline, SaturatedValidationFallsBackToLoss) {
  Dataset d = make_synthetic(3, 60, 6, 8.0, 21);
  normalize(d);
  BaselineConfig cfg;
  cfg.epochs = 12;
  cfg.batch_size = 30;
  cfg.seed = 2;
  cfg.early_stopping = false;
  const auto out = train_baseline(MlpSpec{{16}, 1.0, 0.0}.build(6, 3, 4), d, d, cfg);
  double top = 0.0;
  for (const auto& r : out.history) top = std::max(top, r.val_acc);
  ASSERT_EQ(top, 100.0);
  const EpochRecord* want = nullptr;
  for (const auto& r : out.history) {
    if (r.val_acc == top && (!want || r.val_loss < want->val_loss)) want = &r;
  }
  EXPECT_EQ(out.best_epoch, want->epoch);
  EXPECT_EQ(out.best_val_loss, want->val_loss);
  EXPECT_EQ(validation_score(out.network, d.features, d.labels).loss, want->val_loss);
}

TEST(TrainBaseline, IsDeterministic) {
  Dataset d = make_synthetic(3, 30, 4, 2.0, 3);
  BaselineConfig cfg;
  cfg.epochs = 4;
  cfg.batch_size = 16;
  cfg.balance_classes = true;
  cfg.seed = 11;
  const Network init = MlpSpec{{8}, 0.8, 0.1}.build(4, 3, 2);
  EXPECT_EQ(train_baseline(init, d, d, cfg).network.flat_parameters(),
            train_baseline(init, d, d, cfg).network.flat_parameters());
}

TEST(TrainBaseline, Errors) {
  Dataset d = make_synthetic(2, 5, 3, 2.0, 1);
  BaselineConfig cfg;
  cfg.batch_size = 0;
  EXPECT_THROW(train_baseline(MlpSpec{}.build(3, 2, 1), d, d, cfg), ArgumentError);
  cfg.batch_size = 4;
  EXPECT_THROW(train_baseline(MlpSpec{}.build(4, 2, 1), d, d, cfg), DimensionError);
}

// Planted noise, baseline of at least 90% accuracy: the mined set is purer than the input.
TEST(Mine, RetainedSetIsPurerThanInput) {
  for (std::uint64_t seed : {1, 2, 3}) {
    Dataset clean = make_synthetic(4, 150, 8, 6.0, seed);
    normalize(clean);
    auto [noisy, audit] = apply_noise(clean, build_transition(NoiseSpec::symmetric(0.3), 4), seed + 10);
    BaselineConfig cfg;
    cfg.epochs = 10;
    cfg.batch_size = 32;
    cfg.seed = seed;
    const auto trained = train_baseline(MlpSpec{{32}, 0.8, 0.0}.build(8, 4, seed), noisy, noisy, cfg);
    const auto& truth = noisy.true_labels(AuditAccess{});
    ASSERT_GE(accuracy_pct(trained.network, noisy.features, truth), 90.0);
    const auto report = mine(noisy, trained.network, MiningConfig{}).second;
    ASSERT_TRUE(report.audit);
    EXPECT_LT(report.audit->incorrect_of_labeled_pct(), 100.0 * audit.incorrect_fraction);
  }
}

// ---- binary filters --------------------------------------------------------

namespace {

BaselineConfig filter_training() {
  BaselineConfig cfg;
  cfg.epochs = 15;
  cfg.batch_size = 32;
  cfg.seed = 3;
  return cfg;
}

}  // namespace

TEST(BinaryFilters, IdenticalCleanSetRetainsNearlyAll) {
  Dataset d = make_synthetic(3, 80, 6, 4.0, 4);
  normalize(d);
  auto [split, report] = train_binary_filters(d, d, MlpSpec{{16}, 1.0, 0.0}, filter_training());
  EXPECT_GE(split.labeled.size(), d.size() * 95 / 100);
  EXPECT_TRUE(report.warnings.empty());
  EXPECT_NO_THROW(split.validate(&d.labels));
}

TEST(BinaryFilters, FarNegativePointLosesLabel) {
  Dataset clean = make_synthetic(2, 100, 2, 5.0, 6);
  normalize(clean);
  // A point placed deep inside class 1's blob but labeled 0.
  Tensor x(1, 2);
  x.row(0) = 3.0 * clean.features.row(1);  // row 1 is class 1
  Dataset noisy(x, {0}, 2);
  auto [split, report] = train_binary_filters(clean, noisy, MlpSpec{{8}, 1.0, 0.0}, filter_training());
  EXPECT_TRUE(split.labeled.empty());
  EXPECT_EQ(split.unlabeled, (std::vector<std::size_t>{0}));
}

TEST(BinaryFilters, PlantedFlipsAreScreened) {
  Dataset all = make_synthetic(3, 400, 8, 4.0, 8);
  normalize(all);
  std::vector<std::size_t> clean_rows, noisy_rows;
  for (std::size_t i = 0; i < all.size(); ++i) (i % 2 ? noisy_rows : clean_rows).push_back(i);
  const Dataset clean = all.subset(clean_rows);
  auto [noisy, audit] = apply_noise(all.subset(noisy_rows), build_transition(NoiseSpec::symmetric(0.3), 3), 9);
  ASSERT_NEAR(audit.incorrect_fraction, 0.3, 0.05);
  auto [split, report] = train_binary_filters(clean, noisy, MlpSpec{{16}, 1.0, 0.0}, filter_training());
  ASSERT_TRUE(report.audit);
  EXPECT_LE(report.audit->incorrect_of_labeled_pct(), 5.0);
  EXPECT_GT(split.labeled.size(), noisy.size() / 3);
}

TEST(BinaryFilters, AbsentCleanClassDropsLabelsWithWarning) {
  Dataset all = make_synthetic(3, 30, 4, 4.0, 10);
  std::vector<std::size_t> no_class_2;
  for (std::size_t i = 0; i < all.size(); ++i) {
    if (all.labels[i] != 2) no_class_2.push_back(i);
  }
  const Dataset clean = all.subset(no_class_2);
  auto [split, report] = train_binary_filters(clean, all, MlpSpec{{8}, 1.0, 0.0}, filter_training());
  ASSERT_EQ(report.warnings.size(), 1u);
  EXPECT_NE(report.warnings[0].find("class 2"), std::string::npos);
  EXPECT_EQ(report.retained_per_class[2], 0u);
}
