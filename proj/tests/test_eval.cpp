#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <set>

#include "rephop/eval.hpp"

using namespace rephop;

namespace {

// Brute-force AUC: P(score+ > score-) + P(tie)/2 over all pairs.
double auc_oracle(const std::vector<double>& scores, const std::vector<int>& labels) {
  double wins = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < scores.size(); ++i)
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[i] != 1 || labels[j] != 0) continue;
      ++pairs;
      if (scores[i] > scores[j])
        wins += 1.0;
      else if (scores[i] == scores[j])
        wins += 0.5;
    }
  return wins / static_cast<double>(pairs);
}

// Brute-force Mann-Whitney U of group A: pairs won plus half-ties.
double u_oracle(const std::vector<double>& a, const std::vector<double>& b) {
  double u = 0.0;
  for (double x : a)
    for (double y : b) {
      if (x > y)
        u += 1.0;
      else if (x == y)
        u += 0.5;
    }
  return u;
}

}  // namespace

TEST_CASE("auc basics") {
  CHECK(roc_auc({0.9, 0.8, 0.2, 0.1}, {1, 1, 0, 0}) == 1.0);
  CHECK(roc_auc({0.5, 0.5, 0.5, 0.5}, {1, 0, 1, 0}) == 0.5);
  CHECK_THAT(roc_auc({0.1, 0.4, 0.35, 0.8}, {0, 0, 1, 1}),
             Catch::Matchers::WithinAbs(0.75, 1e-15));
  CHECK_THROWS_AS(roc_auc({0.1, 0.2}, {1, 1}), std::invalid_argument);
}

TEST_CASE("auc equals the brute-force pairwise probability on random data") {
  RandomStream rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 2 + rng.below(49);
    std::vector<double> scores(n);
    std::vector<int> labels(n);
    for (std::size_t i = 0; i < n; ++i) {
      // Coarse grid to exercise ties.
      scores[i] = static_cast<double>(rng.below(8)) / 8.0;
      labels[i] = static_cast<int>(rng.below(2));
    }
    labels[0] = 1;
    labels[1] = 0;
    CHECK(roc_auc(scores, labels) == auc_oracle(scores, labels));
  }
}

TEST_CASE("auc is invariant under strictly monotone transforms") {
  RandomStream rng(2);
  std::vector<double> scores(30);
  std::vector<int> labels(30);
  for (std::size_t i = 0; i < 30; ++i) {
    scores[i] = rng.normal();
    labels[i] = static_cast<int>(rng.below(2));
  }
  labels[0] = 1;
  labels[1] = 0;
  const double base = roc_auc(scores, labels);
  auto transformed = scores;
  for (auto& s : transformed) s = std::exp(2.0 * s) + 5.0;
  CHECK(roc_auc(transformed, labels) == base);
}

TEST_CASE("classification metrics hand cases") {
  // Perfect predictions.
  const auto perfect = classification_metrics({0.9, 0.9, 0.1, 0.1}, {1, 1, 0, 0});
  CHECK(perfect.f1 == 1.0);
  CHECK(perfect.balanced_accuracy == 1.0);
  CHECK(perfect.accuracy == 1.0);

  // Everything predicted negative: F1 is 0 by convention.
  const auto all_neg = classification_metrics({0.1, 0.2, 0.3, 0.4}, {1, 1, 0, 0});
  CHECK(all_neg.f1 == 0.0);
  CHECK(all_neg.balanced_accuracy == 0.5);
  CHECK(all_neg.accuracy == 0.5);

  // TP=2, FP=1, FN=1, TN=6.
  std::vector<double> scores{0.9, 0.8, 0.2, 0.7, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1};
  std::vector<int> labels{1, 1, 1, 0, 0, 0, 0, 0, 0, 0};
  const auto m = classification_metrics(scores, labels);
  CHECK_THAT(m.f1, Catch::Matchers::WithinAbs(2.0 / 3.0, 1e-15));
  CHECK_THAT(m.balanced_accuracy,
             Catch::Matchers::WithinAbs(0.5 * (2.0 / 3.0 + 6.0 / 7.0), 1e-15));
  CHECK_THAT(m.accuracy, Catch::Matchers::WithinAbs(0.8, 1e-15));
}

TEST_CASE("mann-whitney hand cases and identity") {
  const auto low = mann_whitney_u({1.0, 2.0, 3.0}, {4.0, 5.0, 6.0});
  CHECK(low.u_a == 0.0);

  const auto same = mann_whitney_u({1.0, 2.0, 3.0}, {1.0, 2.0, 3.0});
  CHECK(same.p > 0.9);

  RandomStream rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> a(1 + rng.below(12)), b(1 + rng.below(12));
    for (auto& x : a) x = static_cast<double>(rng.below(6));
    for (auto& x : b) x = static_cast<double>(rng.below(6));
    const auto res = mann_whitney_u(a, b);
    CHECK_THAT(res.u_a, Catch::Matchers::WithinAbs(u_oracle(a, b), 1e-9));
    const auto flipped = mann_whitney_u(b, a);
    CHECK_THAT(res.u_a + flipped.u_a,
               Catch::Matchers::WithinAbs(static_cast<double>(a.size() * b.size()), 1e-9));
    CHECK(res.p >= 0.0);
    CHECK(res.p <= 1.0);
  }
}

TEST_CASE("mann-whitney separates clearly shifted groups") {
  RandomStream rng(4);
  std::vector<double> a(40), b(40);
  for (auto& x : a) x = rng.normal(2.0, 1.0);
  for (auto& x : b) x = rng.normal(0.0, 1.0);
  CHECK(mann_whitney_u(a, b).p < 0.01);
}

TEST_CASE("grid files parse and expand as cartesian products") {
  const std::string path = "grid_test.txt";
  {
    std::ofstream os(path);
    os << "# comment line\n";
    os << "lr=[0.1,0.01]\n";
    os << "kind = [a, b, c]\n";
    os << "fixed=7\n";
  }
  const auto grid = parse_grid_file(path);
  CHECK(grid.at("lr").size() == 2);
  CHECK(grid.at("kind").size() == 3);
  CHECK(grid.at("fixed") == std::vector<std::string>{"7"});
  const auto points = expand_grid(grid);
  CHECK(points.size() == 6);
  std::set<std::string> rendered;
  for (const auto& p : points) rendered.insert(grid_point_to_string(p));
  CHECK(rendered.size() == 6);
  CHECK(rendered.count("fixed=7;kind=a;lr=0.1") == 1);
  std::remove(path.c_str());
}

TEST_CASE("stratified folds preserve the class ratio within one") {
  RandomStream rng(5);
  std::vector<int> labels;
  for (int i = 0; i < 47; ++i) labels.push_back(i < 20 ? 1 : 0);
  const auto folds = stratified_folds(labels, 5, 99);
  std::set<std::size_t> seen;
  for (const auto& fold : folds) {
    std::size_t pos = 0;
    for (std::size_t id : fold) {
      CHECK(seen.insert(id).second);  // disjoint
      pos += labels[id] == 1;
    }
    CHECK(pos >= 4);
    CHECK(pos <= 5);
    CHECK(fold.size() >= 9);
    CHECK(fold.size() <= 10);
  }
  CHECK(seen.size() == labels.size());
}

TEST_CASE("nested cv with a grid of one equals plain cross validation") {
  // Method: score = stored value; fit ignores the grid entirely.
  std::vector<int> labels;
  std::vector<double> values;
  RandomStream rng(6);
  for (int i = 0; i < 40; ++i) {
    labels.push_back(i % 2);
    values.push_back(i % 2 == 1 ? rng.uniform(0.6, 1.0) : rng.uniform(0.0, 0.4));
  }
  const MethodFit fit = [&](const std::vector<std::size_t>&,
                            const std::vector<std::size_t>&, const GridPoint&,
                            std::uint64_t) {
    return MethodScorer([&](std::size_t id) { return values[id]; });
  };
  const auto results = nested_cv(labels, fit, {GridPoint{}}, 5, 7);
  REQUIRE(results.size() == 5);
  for (const auto& r : results) {
    CHECK(r.auc == 1.0);
    CHECK(r.hyperparams == "default");
  }
}

TEST_CASE("nested cv picks the better grid point") {
  std::vector<int> labels;
  std::vector<double> values;
  RandomStream rng(8);
  for (int i = 0; i < 40; ++i) {
    labels.push_back(i % 2);
    values.push_back(i % 2 == 1 ? rng.uniform(0.6, 1.0) : rng.uniform(0.0, 0.4));
  }
  GridPoint good{{"mode", "signal"}};
  GridPoint bad{{"mode", "noise"}};
  const MethodFit fit = [&](const std::vector<std::size_t>&,
                            const std::vector<std::size_t>&, const GridPoint& p,
                            std::uint64_t seed) {
    if (p.at("mode") == "signal")
      return MethodScorer([&](std::size_t id) { return values[id]; });
    RandomStream noise(seed);
    (void)noise;
    return MethodScorer([seed](std::size_t id) {
      return static_cast<double>(stream_seed(seed, "noise", id) % 1000) / 1000.0;
    });
  };
  const auto results = nested_cv(labels, fit, {bad, good}, 5, 9);
  for (const auto& r : results) {
    CHECK(r.hyperparams == "mode=signal");
    CHECK(r.auc == 1.0);
  }
}

TEST_CASE("constant scorers sit at chance level") {
  std::vector<int> labels;
  for (int i = 0; i < 30; ++i) labels.push_back(i % 2);
  const MethodFit fit = [](const std::vector<std::size_t>&,
                           const std::vector<std::size_t>&, const GridPoint&,
                           std::uint64_t) {
    return MethodScorer([](std::size_t) { return 0.5; });
  };
  const auto results = nested_cv(labels, fit, {GridPoint{}}, 5, 11);
  for (const auto& r : results) CHECK(r.auc == 0.5);
}

TEST_CASE("nested cv never hands test ids to the fit") {
  std::vector<int> labels;
  for (int i = 0; i < 40; ++i) labels.push_back(i % 2);
  // Folds come out of stratified_folds with the harness seed, so the test can
  // reconstruct which fold is under test from the call sequence (two grid
  // fits plus one retrain per fold).
  const auto folds = stratified_folds(labels, 5, 13);
  std::size_t call_count = 0;
  const MethodFit fit = [&](const std::vector<std::size_t>& train_ids,
                            const std::vector<std::size_t>& val_ids,
                            const GridPoint&, std::uint64_t) {
    const std::size_t fold_index = call_count / 3;
    ++call_count;
    std::set<std::size_t> train_set(train_ids.begin(), train_ids.end());
    for (std::size_t id : folds[fold_index]) {
      CHECK(train_set.count(id) == 0);
      CHECK(std::find(val_ids.begin(), val_ids.end(), id) == val_ids.end());
    }
    return MethodScorer([](std::size_t) { return 0.5; });
  };
  GridPoint a{{"p", "1"}}, b{{"p", "2"}};
  const auto results = nested_cv(labels, fit, {a, b}, 5, 13);
  CHECK(results.size() == 5);
  CHECK(call_count == 15);
}
