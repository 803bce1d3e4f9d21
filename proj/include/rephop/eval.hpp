#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "rephop/common.hpp"
#include "rephop/rng.hpp"

namespace rephop {

namespace detail {
// Midranks (1-based) of the given values.
inline std::vector<double> midranks(const std::vector<double>& values) {
  const std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = rank;
    i = j + 1;
  }
  return ranks;
}
}  // namespace detail

// Rank-based AUC with midrank tie handling. Equals the probability that a
// positive outscores a negative, ties counted half.
inline double roc_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size())
    throw std::invalid_argument("roc_auc: size mismatch");
  std::size_t n_pos = 0, n_neg = 0;
  for (int y : labels) {
    if (y == 1) ++n_pos;
    else if (y == 0) ++n_neg;
    else throw std::invalid_argument("roc_auc: labels must be 0 or 1");
  }
  if (n_pos == 0 || n_neg == 0)
    throw std::invalid_argument("roc_auc: both classes must be present");
  const auto ranks = detail::midranks(scores);
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] == 1) rank_sum += ranks[i];
  const double n_pos_d = static_cast<double>(n_pos);
  const double u = rank_sum - n_pos_d * (n_pos_d + 1.0) / 2.0;
  return u / (n_pos_d * static_cast<double>(n_neg));
}

struct ClassificationMetrics {
  double f1 = 0.0;
  double balanced_accuracy = 0.0;
  double accuracy = 0.0;
};

// Thresholded metrics; F1 is zero when there are no true positives.
inline ClassificationMetrics classification_metrics(const std::vector<double>& scores,
                                                    const std::vector<int>& labels,
                                                    double threshold = 0.5) {
  if (scores.size() != labels.size())
    throw std::invalid_argument("classification_metrics: size mismatch");
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool pred = scores[i] >= threshold;
    if (labels[i] == 1) {
      pred ? ++tp : ++fn;
    } else {
      pred ? ++fp : ++tn;
    }
  }
  ClassificationMetrics out;
  const double denom_f1 = static_cast<double>(2 * tp + fp + fn);
  out.f1 = denom_f1 > 0.0 ? 2.0 * static_cast<double>(tp) / denom_f1 : 0.0;
  const double tpr = tp + fn > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
  const double tnr = tn + fp > 0 ? static_cast<double>(tn) / static_cast<double>(tn + fp) : 0.0;
  out.balanced_accuracy = 0.5 * (tpr + tnr);
  out.accuracy = static_cast<double>(tp + tn) / static_cast<double>(scores.size());
  return out;
}

struct MannWhitneyResult {
  double u_a = 0.0;   // U statistic of group A
  double p = 1.0;     // two-sided, normal approximation with tie correction
};

inline MannWhitneyResult mann_whitney_u(const std::vector<double>& group_a,
                                        const std::vector<double>& group_b) {
  if (group_a.empty() || group_b.empty())
    throw std::invalid_argument("mann_whitney_u: both groups must be non-empty");
  const double n = static_cast<double>(group_a.size());
  const double m = static_cast<double>(group_b.size());
  std::vector<double> pooled(group_a);
  pooled.insert(pooled.end(), group_b.begin(), group_b.end());
  const auto ranks = detail::midranks(pooled);
  double rank_sum_a = 0.0;
  for (std::size_t i = 0; i < group_a.size(); ++i) rank_sum_a += ranks[i];
  MannWhitneyResult out;
  out.u_a = rank_sum_a - n * (n + 1.0) / 2.0;

  // Tie counts for the variance correction.
  std::vector<double> sorted(pooled);
  std::sort(sorted.begin(), sorted.end());
  double tie_term = 0.0;
  std::size_t i = 0;
  while (i < sorted.size()) {
    std::size_t j = i;
    while (j + 1 < sorted.size() && sorted[j + 1] == sorted[i]) ++j;
    const double t = static_cast<double>(j - i + 1);
    tie_term += t * t * t - t;
    i = j + 1;
  }
  const double total = n + m;
  const double var =
      n * m / 12.0 * ((total + 1.0) - tie_term / (total * (total - 1.0)));
  if (var <= 0.0) {
    out.p = 1.0;
    return out;
  }
  const double diff = std::max(0.0, std::abs(out.u_a - n * m / 2.0) - 0.5);
  const double z = diff / std::sqrt(var);
  out.p = std::min(1.0, std::erfc(z / std::sqrt(2.0)));
  return out;
}

// ---------------------------------------------------------------------------
// Hyperparameter grids: flat key-value text, one name=[v1,v2,...] per line.

using GridPoint = std::map<std::string, std::string>;

inline std::map<std::string, std::vector<std::string>> parse_grid_file(
    const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open grid file: " + path);
  std::map<std::string, std::vector<std::string>> grid;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    auto strip = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    line = strip(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw DataError(path + ":" + std::to_string(line_no) + ": expected name=[...]");
    const std::string name = strip(line.substr(0, eq));
    std::string rest = strip(line.substr(eq + 1));
    if (rest.size() >= 2 && rest.front() == '[' && rest.back() == ']')
      rest = rest.substr(1, rest.size() - 2);
    std::vector<std::string> values;
    std::stringstream vs(rest);
    std::string item;
    while (std::getline(vs, item, ',')) {
      item = strip(item);
      if (!item.empty()) values.push_back(item);
    }
    if (values.empty())
      throw DataError(path + ":" + std::to_string(line_no) + ": empty value list");
    grid[name] = values;
  }
  return grid;
}

// Cartesian product in key order.
inline std::vector<GridPoint> expand_grid(
    const std::map<std::string, std::vector<std::string>>& grid) {
  std::vector<GridPoint> points{GridPoint{}};
  for (const auto& [name, values] : grid) {
    std::vector<GridPoint> next;
    next.reserve(points.size() * values.size());
    for (const auto& point : points)
      for (const auto& value : values) {
        GridPoint p = point;
        p[name] = value;
        next.push_back(std::move(p));
      }
    points = std::move(next);
  }
  return points;
}

inline std::string grid_point_to_string(const GridPoint& point) {
  std::string out;
  for (const auto& [k, v] : point) {
    if (!out.empty()) out += ';';
    out += k + "=" + v;
  }
  return out.empty() ? "default" : out;
}

// ---------------------------------------------------------------------------
// Nested cross-validation.

struct FoldResult {
  std::size_t fold = 0;
  std::string hyperparams;
  double auc = 0.0;
  double f1 = 0.0;
  double balanced_accuracy = 0.0;
  double accuracy = 0.0;
};

// A method is a fit function: given train ids, validation ids (for early
// stopping or ignored), one grid point, and a seed, it returns a scorer over
// dataset indices. Scorers must never touch ids outside those they were given
// plus the id being scored.
using MethodScorer = std::function<double(std::size_t)>;
using MethodFit = std::function<MethodScorer(const std::vector<std::size_t>& train_ids,
                                             const std::vector<std::size_t>& val_ids,
                                             const GridPoint& point,
                                             std::uint64_t seed)>;

// Stratified k-fold assignment: per class, shuffled then dealt round-robin,
// so fold class ratios differ by at most one repertoire.
inline std::vector<std::vector<std::size_t>> stratified_folds(
    const std::vector<int>& labels, std::size_t k, std::uint64_t seed) {
  if (k < 2) throw std::invalid_argument("stratified_folds: need k >= 2");
  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < labels.size(); ++i)
    (labels[i] == 1 ? pos : neg).push_back(i);
  if (pos.size() < k || neg.size() < k)
    throw std::invalid_argument("stratified_folds: a class has fewer samples than folds");
  RandomStream rng(stream_seed(seed, "folds"));
  auto shuffle = [&](std::vector<std::size_t>& v) {
    for (std::size_t i = v.size(); i > 1; --i)
      std::swap(v[i - 1], v[rng.below(i)]);
  };
  shuffle(pos);
  shuffle(neg);
  std::vector<std::vector<std::size_t>> folds(k);
  for (std::size_t i = 0; i < pos.size(); ++i) folds[i % k].push_back(pos[i]);
  for (std::size_t i = 0; i < neg.size(); ++i) folds[i % k].push_back(neg[i]);
  for (auto& f : folds) std::sort(f.begin(), f.end());
  return folds;
}

// Stratified split of `ids` into (train, val) with roughly val_fraction in val.
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> stratified_split(
    const std::vector<std::size_t>& ids, const std::vector<int>& labels,
    double val_fraction, std::uint64_t seed) {
  std::vector<std::size_t> pos, neg;
  for (std::size_t id : ids) (labels[id] == 1 ? pos : neg).push_back(id);
  RandomStream rng(stream_seed(seed, "inner-split"));
  auto shuffle = [&](std::vector<std::size_t>& v) {
    for (std::size_t i = v.size(); i > 1; --i)
      std::swap(v[i - 1], v[rng.below(i)]);
  };
  shuffle(pos);
  shuffle(neg);
  std::vector<std::size_t> train, val;
  auto deal = [&](std::vector<std::size_t>& cls) {
    std::size_t n_val = static_cast<std::size_t>(
        std::round(val_fraction * static_cast<double>(cls.size())));
    n_val = std::max<std::size_t>(1, std::min(n_val, cls.size() - 1));
    for (std::size_t i = 0; i < cls.size(); ++i)
      (i < n_val ? val : train).push_back(cls[i]);
  };
  deal(pos);
  deal(neg);
  std::sort(train.begin(), train.end());
  std::sort(val.begin(), val.end());
  return {train, val};
}

// Outer stratified k-fold; per fold an 80/20 inner split of the training
// portion selects the grid point with the highest inner-validation AUC, then
// the winner is retrained on the whole outer-train portion and evaluated on
// the untouched test fold.
inline std::vector<FoldResult> nested_cv(const std::vector<int>& labels,
                                         const MethodFit& fit,
                                         const std::vector<GridPoint>& grid,
                                         std::size_t outer_k, std::uint64_t seed) {
  if (grid.empty()) throw std::invalid_argument("nested_cv: empty grid");
  const auto folds = stratified_folds(labels, outer_k, seed);
  std::vector<FoldResult> results;
  for (std::size_t f = 0; f < outer_k; ++f) {
    const std::vector<std::size_t>& test_ids = folds[f];
    std::vector<std::size_t> outer_train;
    for (std::size_t g = 0; g < outer_k; ++g)
      if (g != f) outer_train.insert(outer_train.end(), folds[g].begin(), folds[g].end());
    std::sort(outer_train.begin(), outer_train.end());

    {  // Leakage guard: the test fold must be disjoint from the training ids.
      std::set<std::size_t> train_set(outer_train.begin(), outer_train.end());
      for (std::size_t id : test_ids)
        if (train_set.count(id))
          throw NumericError("nested_cv: train/test overlap detected");
    }

    const auto [inner_train, inner_val] =
        stratified_split(outer_train, labels, 0.2, stream_seed(seed, "inner", f));

    std::size_t best_g = 0;
    double best_auc = -1.0;
    if (grid.size() > 1) {
      for (std::size_t g = 0; g < grid.size(); ++g) {
        const MethodScorer scorer =
            fit(inner_train, inner_val, grid[g], stream_seed(seed, "inner-fit", f * 1000 + g));
        std::vector<double> scores;
        std::vector<int> val_labels;
        for (std::size_t id : inner_val) {
          scores.push_back(scorer(id));
          val_labels.push_back(labels[id]);
        }
        const double auc = roc_auc(scores, val_labels);
        if (auc > best_auc) {
          best_auc = auc;
          best_g = g;
        }
      }
    }

    const MethodScorer scorer =
        fit(outer_train, inner_val, grid[best_g], stream_seed(seed, "outer-fit", f));
    std::vector<double> scores;
    std::vector<int> test_labels;
    for (std::size_t id : test_ids) {
      scores.push_back(scorer(id));
      test_labels.push_back(labels[id]);
    }
    FoldResult result;
    result.fold = f;
    result.hyperparams = grid_point_to_string(grid[best_g]);
    result.auc = roc_auc(scores, test_labels);
    const ClassificationMetrics cm = classification_metrics(scores, test_labels);
    result.f1 = cm.f1;
    result.balanced_accuracy = cm.balanced_accuracy;
    result.accuracy = cm.accuracy;
    results.push_back(std::move(result));
  }
  return results;
}

}  // namespace rephop
