#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "bacnn/error.hpp"
#include "bacnn/metrics.hpp"
#include "bacnn/rng.hpp"
#include "doctest.h"

using namespace bacnn;

namespace {

struct Recount {
  double oa, aa, kappa;
};

// Brute force from the raw pairs; chance agreement counts ordered pairs (a, b)
// with truth[a] == pred[b].
Recount recount(const std::vector<int>& truth, const std::vector<int>& pred, int k) {
  const std::size_t n = truth.size();
  std::int64_t agree = 0;
  for (std::size_t i = 0; i < n; ++i) agree += truth[i] == pred[i];
  std::int64_t chance = 0;
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = 0; b < n; ++b) chance += truth[a] == pred[b];
  double aa = 0.0;
  for (int c = 0; c < k; ++c) {
    std::int64_t members = 0, hits = 0;
    for (std::size_t i = 0; i < n; ++i) {
      members += truth[i] == c;
      hits += truth[i] == c && pred[i] == c;
    }
    aa += static_cast<double>(hits) / static_cast<double>(members);
  }
  const double nn = static_cast<double>(n);
  const double p_o = static_cast<double>(agree) / nn;
  const double p_e = static_cast<double>(chance) / (nn * nn);
  return {p_o, aa / k, p_e == 1.0 ? (p_o == 1.0 ? 1.0 : 0.0) : (p_o - p_e) / (1.0 - p_e)};
}

void random_instance(Rng& rng, int& k, std::vector<int>& truth, std::vector<int>& pred) {
  k = 2 + static_cast<int>(rng.index(8));
  const Index n = k + rng.index(1000 - k + 1);
  truth.resize(static_cast<std::size_t>(n));
  pred.resize(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    // every class appears in truth at least once
    truth[static_cast<std::size_t>(i)] = i < k ? static_cast<int>(i) : static_cast<int>(rng.index(k));
    pred[static_cast<std::size_t>(i)] =
        rng.uniform() < 0.6 ? truth[static_cast<std::size_t>(i)] : static_cast<int>(rng.index(k));
  }
}

}  // namespace

TEST_CASE("confusion examples") {
  const std::vector<int> t{0, 1, 2};
  ConfusionMatrix diag = confusion(t, t, 3);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) CHECK(diag(i, j) == (i == j ? 1 : 0));

  ConfusionMatrix empty = confusion(std::vector<int>{}, std::vector<int>{}, 4);
  CHECK(empty.total() == 0);

  ConfusionMatrix hand = confusion(std::vector<int>{0, 0, 1}, std::vector<int>{0, 1, 1}, 2);
  CHECK(hand(0, 0) == 1);
  CHECK(hand(0, 1) == 1);
  CHECK(hand(1, 1) == 1);
  CHECK(hand(1, 0) == 0);

  CHECK_THROWS_AS(confusion(std::vector<int>{0, 3}, std::vector<int>{0, 1}, 3), ContractError);
  CHECK_THROWS_AS(confusion(std::vector<int>{0}, std::vector<int>{0, 1}, 3), ContractError);
}

TEST_CASE("perfect classifier and degenerate cases") {
  const std::vector<int> t{0, 1, 2, 2, 1};
  ConfusionMatrix cm = confusion(t, t, 3);
  CHECK(overall_accuracy(cm) == 1.0);
  CHECK(average_accuracy(cm) == 1.0);
  CHECK(kappa(cm) == 1.0);

  ConfusionMatrix single = confusion(std::vector<int>{1, 1}, std::vector<int>{1, 1}, 2);
  CHECK(kappa(single) == 1.0);
  CHECK_THROWS_AS(average_accuracy(single), MetricError);
  CHECK_THROWS_AS(overall_accuracy(ConfusionMatrix(3)), MetricError);
  CHECK(per_class_accuracy(single) == std::vector<double>{0.0, 1.0});
}

TEST_CASE("metrics equal a brute-force recount") {
  Rng rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    int k = 0;
    std::vector<int> truth, pred;
    random_instance(rng, k, truth, pred);
    ConfusionMatrix cm = confusion(truth, pred, k);
    const Recount r = recount(truth, pred, k);
    CHECK(overall_accuracy(cm) == r.oa);
    CHECK(average_accuracy(cm) == r.aa);
    CHECK(kappa(cm) == r.kappa);
    CHECK(cm.total() == static_cast<std::int64_t>(truth.size()));
    const double kp = kappa(cm);
    CHECK((kp > -1.0 && kp <= 1.0));
  }
}

TEST_CASE("random balanced classifier has kappa near zero") {
  Rng rng(2);
  const int k = 16;
  std::vector<int> truth(100000), pred(100000);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    truth[i] = static_cast<int>(i % k);
    pred[i] = static_cast<int>(rng.index(k));
  }
  CHECK(std::abs(kappa(confusion(truth, pred, k))) < 0.02);
}

TEST_CASE("metrics are invariant under class relabeling") {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    int k = 0;
    std::vector<int> truth, pred;
    random_instance(rng, k, truth, pred);
    std::vector<int> perm(static_cast<std::size_t>(k));
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm.begin(), perm.end());
    std::vector<int> t2, p2;
    for (std::size_t i = 0; i < truth.size(); ++i) {
      t2.push_back(perm[static_cast<std::size_t>(truth[i])]);
      p2.push_back(perm[static_cast<std::size_t>(pred[i])]);
    }
    ConfusionMatrix a = confusion(truth, pred, k);
    ConfusionMatrix b = confusion(t2, p2, k);
    CHECK(overall_accuracy(a) == overall_accuracy(b));
    CHECK(kappa(a) == kappa(b));
    CHECK(average_accuracy(a) == doctest::Approx(average_accuracy(b)).epsilon(1e-14));
  }
}

TEST_CASE("aggregate") {
  MetricsReport a{{0.90}, 0.90, 0.90, 0.90};
  MetricsReport b{{0.92}, 0.92, 0.92, 0.92};
  std::vector<MetricsReport> runs{a, b};
  AggregateReport agg = aggregate(runs);
  CHECK(agg.runs == 2);
  CHECK(agg.classes == 1);
  REQUIRE(agg.mean.size() == 4);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(agg.mean[i] == doctest::Approx(0.91).epsilon(1e-14));
    CHECK(agg.stddev[i] == doctest::Approx(0.01).epsilon(1e-12));
  }

  std::vector<MetricsReport> one{a};
  for (double s : aggregate(one).stddev) CHECK(s == 0.0);

  std::vector<MetricsReport> swapped{b, a};
  AggregateReport agg2 = aggregate(swapped);
  CHECK(agg2.mean == agg.mean);
  CHECK(agg2.stddev == agg.stddev);

  std::vector<MetricsReport> mixed{a, MetricsReport{{0.5, 0.5}, 0.5, 0.5, 0.5}};
  CHECK_THROWS_AS(aggregate(mixed), ContractError);
  CHECK_THROWS_AS(aggregate(std::vector<MetricsReport>{}), ContractError);
}

TEST_CASE("table csv layout") {
  std::vector<MetricsReport> runs{{{0.5, 1.0}, 0.75, 0.75, 0.5}, {{0.7, 1.0}, 0.85, 0.85, 0.7}};
  std::vector<NamedAggregate> cols{{"cm", aggregate(runs)}, {"bam_cm", aggregate(runs)}};
  std::ostringstream out;
  write_table_csv(out, cols);
  std::istringstream in(out.str());
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) lines.push_back(line);
  REQUIRE(lines.size() == 6);
  CHECK(lines[0] == "class,cm,bam_cm");
  CHECK(lines[1] == "1,60.00(10.00),60.00(10.00)");
  CHECK(lines[2] == "2,100.00(0.00),100.00(0.00)");
  CHECK(lines[3] == "OA,80.00(5.00),80.00(5.00)");
  CHECK(lines[4].rfind("AA,", 0) == 0);
  CHECK(lines[5] == "Kappa,60.00(10.00),60.00(10.00)");
}
