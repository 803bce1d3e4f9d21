#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "rephop/encoding.hpp"
#include "rephop/model.hpp"
#include "rephop/train.hpp"

namespace rephop {

// Sequences of a bag ordered by their first-head attention weight,
// descending. Weights sum to one over the full bag.
inline std::vector<std::pair<std::size_t, double>> attention_ranking(
    const ModelParams& params, const ModelConfig& config,
    const std::vector<EncodedSequence>& bag) {
  const ForwardResult result = forward(params, config, bag);
  std::vector<std::pair<std::size_t, double>> ranked(bag.size());
  for (std::size_t i = 0; i < bag.size(); ++i)
    ranked[i] = {i, result.attention_weights(0, i)};
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  return ranked;
}

// Per-position per-feature contributions plus the completeness bookkeeping.
struct AttributionMap {
  Matrix values;
  double completeness_residual = 0.0;
  double f_input = 0.0;
  double f_baseline = 0.0;
};

// Midpoint-rule path integral: IG_j = (x_j - b_j) / steps * sum_s grad_j at
// b + (s - 1/2)/steps * (x - b). `grad` maps a point to the gradient of the
// scalar target at that point.
template <class GradFn>
Matrix ig_path_integral(const Matrix& input, const Matrix& baseline,
                        std::size_t steps, GradFn&& grad) {
  if (steps < 1) throw std::invalid_argument("ig_path_integral: steps must be >= 1");
  if (input.rows != baseline.rows || input.cols != baseline.cols)
    throw std::invalid_argument("ig_path_integral: baseline shape mismatch");
  Matrix total(input.rows, input.cols);
  Matrix point(input.rows, input.cols);
  for (std::size_t s = 1; s <= steps; ++s) {
    const double t = (static_cast<double>(s) - 0.5) / static_cast<double>(steps);
    for (std::size_t i = 0; i < point.size(); ++i)
      point.data[i] = baseline.data[i] + t * (input.data[i] - baseline.data[i]);
    const Matrix g = grad(point);
    for (std::size_t i = 0; i < total.size(); ++i) total.data[i] += g.data[i];
  }
  for (std::size_t i = 0; i < total.size(); ++i)
    total.data[i] = (input.data[i] - baseline.data[i]) * total.data[i] /
                    static_cast<double>(steps);
  return total;
}

// Attribution of the pre-sigmoid output to the features of one sequence, with
// the rest of the bag held fixed. Baseline defaults to the zero input.
inline AttributionMap integrated_gradients_input(
    const ModelParams& params, const ModelConfig& config,
    const std::vector<EncodedSequence>& bag, std::size_t seq_index,
    std::size_t steps, const Matrix* baseline = nullptr) {
  if (seq_index >= bag.size())
    throw std::invalid_argument("integrated_gradients_input: sequence index out of range");
  const Matrix& x = bag[seq_index].features;
  Matrix zero(x.rows, x.cols);
  const Matrix& base = baseline ? *baseline : zero;

  std::vector<EncodedSequence> work = bag;
  const auto logit_at = [&](const Matrix& point) {
    work[seq_index].features = point;
    return logit_gradients(params, config, work, false).logit;
  };
  const auto grad_at = [&](const Matrix& point) {
    work[seq_index].features = point;
    const auto g = logit_gradients(params, config, work, true);
    return g.inputs[seq_index];
  };

  AttributionMap out;
  out.values = ig_path_integral(x, base, steps, grad_at);
  out.f_input = logit_at(x);
  out.f_baseline = logit_at(base);
  double total = 0.0;
  for (double v : out.values.data) total += v;
  out.completeness_residual = std::abs(total - (out.f_input - out.f_baseline));
  return out;
}

// Attribution of the pre-sigmoid output to the convolution kernels for one
// bag: the path scales all kernels from zero (biases stay put). Returns one
// 23 x kernel_size map per kernel.
inline std::vector<AttributionMap> integrated_gradients_kernels(
    const ModelParams& params, const ModelConfig& config,
    const std::vector<EncodedSequence>& bag, std::size_t steps) {
  if (steps < 1) throw std::invalid_argument("integrated_gradients_kernels: steps must be >= 1");
  ModelParams work = params;
  const Matrix& full = params.conv_w;

  Matrix sum(full.rows, full.cols);
  double f_input = 0.0, f_baseline = 0.0;
  for (std::size_t s = 1; s <= steps; ++s) {
    const double t = (static_cast<double>(s) - 0.5) / static_cast<double>(steps);
    for (std::size_t i = 0; i < full.size(); ++i)
      work.conv_w.data[i] = t * full.data[i];
    const auto g = logit_gradients(work, config, bag, false);
    for (std::size_t i = 0; i < full.size(); ++i)
      sum.data[i] += g.params.conv_w.data[i];
  }
  {
    const auto at_input = logit_gradients(params, config, bag, false);
    f_input = at_input.logit;
    ModelParams zero_kernels = params;
    for (auto& w : zero_kernels.conv_w.data) w = 0.0;
    f_baseline = logit_gradients(zero_kernels, config, bag, false).logit;
  }

  std::vector<AttributionMap> maps(config.n_kernels);
  double total = 0.0;
  for (std::size_t f = 0; f < config.n_kernels; ++f) {
    maps[f].values = Matrix(kPositionFeatures, config.kernel_size);
    for (std::size_t tap = 0; tap < config.kernel_size; ++tap)
      for (std::size_t c = 0; c < kPositionFeatures; ++c) {
        const std::size_t flat = tap * kPositionFeatures + c;
        const double ig =
            full(f, flat) * sum(f, flat) / static_cast<double>(steps);
        maps[f].values(c, tap) = ig;
        total += ig;
      }
  }
  const double residual = std::abs(total - (f_input - f_baseline));
  for (auto& map : maps) {
    map.f_input = f_input;
    map.f_baseline = f_baseline;
    map.completeness_residual = residual;
  }
  return maps;
}

struct MotifSummary {
  std::vector<Matrix> mean_maps;          // per kernel, 23 x kernel_size
  std::vector<double> contributions;      // total positive contribution per kernel
  std::vector<std::size_t> ranked;        // kernels strictly above the mean, descending
  double threshold = 0.0;
};

// Averages per-repertoire kernel attributions, ranks kernels by total
// positive contribution, and keeps those strictly above the mean.
inline MotifSummary aggregate_motifs(
    const std::vector<std::vector<AttributionMap>>& per_repertoire) {
  if (per_repertoire.empty())
    throw std::invalid_argument("aggregate_motifs: need at least one repertoire");
  const std::size_t n_kernels = per_repertoire.front().size();
  MotifSummary out;
  out.mean_maps.resize(n_kernels);
  out.contributions.assign(n_kernels, 0.0);
  for (std::size_t f = 0; f < n_kernels; ++f) {
    const Matrix& shape = per_repertoire.front()[f].values;
    out.mean_maps[f] = Matrix(shape.rows, shape.cols);
    for (const auto& maps : per_repertoire) {
      if (maps.size() != n_kernels || maps[f].values.rows != shape.rows ||
          maps[f].values.cols != shape.cols)
        throw std::invalid_argument("aggregate_motifs: inconsistent attribution shapes");
      for (std::size_t i = 0; i < shape.size(); ++i)
        out.mean_maps[f].data[i] += maps[f].values.data[i];
    }
    double positive = 0.0;
    for (auto& v : out.mean_maps[f].data) {
      v /= static_cast<double>(per_repertoire.size());
      if (v > 0.0) positive += v;
    }
    out.contributions[f] = positive;
  }
  out.threshold =
      std::accumulate(out.contributions.begin(), out.contributions.end(), 0.0) /
      static_cast<double>(n_kernels);
  std::vector<std::size_t> order(n_kernels);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return out.contributions[a] > out.contributions[b];
  });
  for (std::size_t f : order)
    if (out.contributions[f] > out.threshold) out.ranked.push_back(f);
  return out;
}

// Argmax amino acid per kernel tap, reading the aggregated attribution map.
inline std::string kernel_consensus(const Matrix& mean_map) {
  std::string consensus;
  for (std::size_t tap = 0; tap < mean_map.cols; ++tap) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < kAlphabetSize; ++c)
      if (mean_map(c, tap) > mean_map(best, tap)) best = c;
    consensus += kAminoAcids[best];
  }
  return consensus;
}

}  // namespace rephop
