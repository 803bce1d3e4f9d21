#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "rephop/common.hpp"
#include "rephop/encoding.hpp"
#include "rephop/linalg.hpp"
#include "rephop/motif.hpp"
#include "rephop/rng.hpp"

namespace rephop {

// Sparse non-negative k-mer feature vector. std::map keeps iteration
// deterministic for kernels and serialization.
using KmerVector = std::map<std::string, double>;

inline KmerVector sequence_kmers(const std::string& residues, std::size_t k) {
  KmerVector out;
  if (k < 1) throw std::invalid_argument("sequence_kmers: k must be >= 1");
  if (residues.size() < k) return out;  // too short, contributes nothing
  for (std::size_t i = 0; i + k <= residues.size(); ++i)
    out[residues.substr(i, k)] += 1.0;
  return out;
}

// Bag representation: per-sequence k-mer counts averaged over the bag. The
// binary variant reports repertoire-level presence in {0, 1} instead.
inline KmerVector kmer_representation(const Repertoire& rep, std::size_t k,
                                      bool binary) {
  rep.validate();
  KmerVector out;
  for (const auto& seq : rep.sequences)
    for (const auto& [kmer, count] : sequence_kmers(seq.residues, k))
      out[kmer] += count;
  if (binary) {
    for (auto& [kmer, value] : out) value = 1.0;
  } else {
    const double inv_n = 1.0 / static_cast<double>(rep.sequences.size());
    for (auto& [kmer, value] : out) value *= inv_n;
  }
  return out;
}

// sum min / sum max over the union of keys. Two all-zero vectors count as
// identical empty objects and score 1.
inline double minmax_kernel(const KmerVector& u, const KmerVector& v) {
  double num = 0.0, den = 0.0;
  auto iu = u.begin();
  auto iv = v.begin();
  while (iu != u.end() || iv != v.end()) {
    double a = 0.0, b = 0.0;
    if (iv == v.end() || (iu != u.end() && iu->first < iv->first)) {
      a = (iu++)->second;
    } else if (iu == u.end() || iv->first < iu->first) {
      b = (iv++)->second;
    } else {
      a = (iu++)->second;
      b = (iv++)->second;
    }
    if (a < 0.0 || b < 0.0)
      throw std::invalid_argument("minmax_kernel: negative entry");
    num += std::min(a, b);
    den += std::max(a, b);
  }
  return den == 0.0 ? 1.0 : num / den;
}

inline KmerVector binarize(const KmerVector& u) {
  KmerVector out;
  for (const auto& [kmer, value] : u)
    if (value > 0.0) out[kmer] = 1.0;
  return out;
}

inline double jaccard_kernel(const KmerVector& u, const KmerVector& v) {
  return minmax_kernel(binarize(u), binarize(v));
}

enum class KernelKind { minmax, jaccard };

inline double kernel_value(KernelKind kind, const KmerVector& u, const KmerVector& v) {
  return kind == KernelKind::minmax ? minmax_kernel(u, v) : jaccard_kernel(u, v);
}

inline Matrix gram_matrix(KernelKind kind, const std::vector<KmerVector>& vectors) {
  Matrix gram(vectors.size(), vectors.size());
  for (std::size_t i = 0; i < vectors.size(); ++i) {
    gram(i, i) = kernel_value(kind, vectors[i], vectors[i]);
    for (std::size_t j = 0; j < i; ++j) {
      const double k = kernel_value(kind, vectors[i], vectors[j]);
      gram(i, j) = k;
      gram(j, i) = k;
    }
  }
  return gram;
}

// ---------------------------------------------------------------------------
// C-SVM dual solved by SMO with maximal-violating-pair selection.

struct SmoSolution {
  std::vector<double> alpha;
  double bias = 0.0;
  std::size_t iterations = 0;
  double kkt_gap = 0.0;
};

inline SmoSolution svm_fit(const Matrix& gram, const std::vector<int>& labels,
                           double c, double tol = 1e-5,
                           std::size_t max_iterations = 1000000) {
  const std::size_t n = labels.size();
  if (gram.rows != n || gram.cols != n)
    throw std::invalid_argument("svm_fit: gram size does not match labels");
  if (!(c > 0.0)) throw std::invalid_argument("svm_fit: C must be positive");
  for (int y : labels)
    if (y != 1 && y != -1)
      throw std::invalid_argument("svm_fit: labels must be +1 or -1");

  SmoSolution sol;
  sol.alpha.assign(n, 0.0);
  std::vector<double> g(n, 1.0);  // g_k = 1 - y_k * sum_t alpha_t y_t K_tk
  const auto upper = [&](std::size_t k) {
    return labels[k] == 1 ? sol.alpha[k] < c : sol.alpha[k] > 0.0;
  };
  const auto lower = [&](std::size_t k) {
    return labels[k] == 1 ? sol.alpha[k] > 0.0 : sol.alpha[k] < c;
  };

  for (;;) {
    double i_max = -std::numeric_limits<double>::infinity();
    double j_min = std::numeric_limits<double>::infinity();
    std::size_t i = n, j = n;
    for (std::size_t k = 0; k < n; ++k) {
      const double v = labels[k] * g[k];
      if (upper(k) && v > i_max) {
        i_max = v;
        i = k;
      }
      if (lower(k) && v < j_min) {
        j_min = v;
        j = k;
      }
    }
    sol.kkt_gap = (i < n && j < n) ? i_max - j_min
                                   : -std::numeric_limits<double>::infinity();
    if (i == n || j == n || sol.kkt_gap <= tol) {
      if (i < n && j < n)
        sol.bias = 0.5 * (i_max + j_min);
      else if (i < n)
        sol.bias = i_max;
      else if (j < n)
        sol.bias = j_min;
      return sol;
    }
    if (sol.iterations >= max_iterations)
      throw NumericError("svm_fit: SMO did not converge (gap " +
                         std::to_string(sol.kkt_gap) + " after " +
                         std::to_string(sol.iterations) + " iterations)");
    ++sol.iterations;

    const double quad =
        std::max(gram(i, i) + gram(j, j) - 2.0 * gram(i, j), 1e-12);
    double lambda = (i_max - j_min) / quad;
    const double room_i = labels[i] == 1 ? c - sol.alpha[i] : sol.alpha[i];
    const double room_j = labels[j] == 1 ? sol.alpha[j] : c - sol.alpha[j];
    lambda = std::min({lambda, room_i, room_j});
    sol.alpha[i] += labels[i] * lambda;
    sol.alpha[j] -= labels[j] * lambda;
    sol.alpha[i] = std::clamp(sol.alpha[i], 0.0, c);
    sol.alpha[j] = std::clamp(sol.alpha[j], 0.0, c);
    for (std::size_t k = 0; k < n; ++k)
      g[k] += lambda * labels[k] * (gram(j, k) - gram(i, k));
  }
}

inline double svm_dual_objective(const Matrix& gram, const std::vector<int>& labels,
                                 const std::vector<double>& alpha) {
  double obj = 0.0;
  for (std::size_t i = 0; i < alpha.size(); ++i) {
    obj += alpha[i];
    for (std::size_t j = 0; j < alpha.size(); ++j)
      obj -= 0.5 * alpha[i] * alpha[j] * labels[i] * labels[j] * gram(i, j);
  }
  return obj;
}

struct SvmModel {
  std::vector<double> coef;          // alpha_i y_i of the support vectors
  std::vector<KmerVector> support;
  double bias = 0.0;
  double c = 1.0;
  KernelKind kind = KernelKind::minmax;
};

inline SvmModel fit_svm_model(const std::vector<KmerVector>& vectors,
                              const std::vector<int>& labels, double c,
                              KernelKind kind) {
  const Matrix gram = gram_matrix(kind, vectors);
  const SmoSolution sol = svm_fit(gram, labels, c);
  SvmModel model;
  model.bias = sol.bias;
  model.c = c;
  model.kind = kind;
  for (std::size_t i = 0; i < vectors.size(); ++i) {
    if (sol.alpha[i] <= 0.0) continue;
    model.coef.push_back(sol.alpha[i] * labels[i]);
    model.support.push_back(vectors[i]);
  }
  return model;
}

inline double svm_score(const SvmModel& model, const KmerVector& u) {
  double score = model.bias;
  for (std::size_t i = 0; i < model.coef.size(); ++i)
    score += model.coef[i] * kernel_value(model.kind, model.support[i], u);
  return score;
}

// ---------------------------------------------------------------------------
// KNN on kernel distances d = 1 - k. Ties break towards the lowest index; the
// score is the positive fraction among the n nearest neighbours.

inline double knn_predict(const std::vector<KmerVector>& train,
                          const std::vector<int>& labels, const KmerVector& query,
                          std::size_t n_neighbors, KernelKind kind) {
  if (train.empty()) throw std::invalid_argument("knn_predict: empty training set");
  if (train.size() != labels.size())
    throw std::invalid_argument("knn_predict: label count mismatch");
  if (n_neighbors < 1 || n_neighbors > train.size())
    throw std::invalid_argument("knn_predict: n_neighbors out of range");
  std::vector<std::pair<double, std::size_t>> dist(train.size());
  for (std::size_t i = 0; i < train.size(); ++i)
    dist[i] = {1.0 - kernel_value(kind, train[i], query), i};
  std::sort(dist.begin(), dist.end());
  std::size_t positives = 0;
  for (std::size_t i = 0; i < n_neighbors; ++i)
    positives += labels[dist[i].second] == 1;
  return static_cast<double>(positives) / static_cast<double>(n_neighbors);
}

// ---------------------------------------------------------------------------
// Logistic regression on the averaged k-mer representation.

struct LogRegConfig {
  double learning_rate = 1e-3;
  double l1 = 0.0;
  double l2 = 0.0;
  std::size_t batch_size = 4;
  std::size_t max_updates = 2000;
  std::uint64_t seed = 0;
};

struct LogRegModel {
  std::vector<std::string> vocab;  // sorted; fixed from the training fold
  std::vector<double> weights;
  double bias = 0.0;
};

inline double logreg_score(const LogRegModel& model, const KmerVector& u) {
  double logit = model.bias;
  // Unseen k-mers are dropped; the vocabulary is frozen at fit time.
  auto iw = model.vocab.begin();
  for (const auto& [kmer, value] : u) {
    iw = std::lower_bound(iw, model.vocab.end(), kmer);
    if (iw == model.vocab.end()) break;
    if (*iw == kmer)
      logit += model.weights[static_cast<std::size_t>(iw - model.vocab.begin())] * value;
  }
  return sigmoid(logit);
}

inline LogRegModel logreg_fit(const std::vector<KmerVector>& xs,
                              const std::vector<int>& ys, const LogRegConfig& cfg) {
  if (xs.empty() || xs.size() != ys.size())
    throw std::invalid_argument("logreg_fit: bad training data");
  LogRegModel model;
  {
    std::set<std::string> vocab;
    for (const auto& x : xs)
      for (const auto& [kmer, value] : x) vocab.insert(kmer);
    model.vocab.assign(vocab.begin(), vocab.end());
  }
  const std::size_t d = model.vocab.size();
  model.weights.assign(d, 0.0);

  // Sparse index form of the training vectors.
  std::vector<std::vector<std::pair<std::size_t, double>>> sparse(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i)
    for (const auto& [kmer, value] : xs[i]) {
      const auto it = std::lower_bound(model.vocab.begin(), model.vocab.end(), kmer);
      sparse[i].emplace_back(static_cast<std::size_t>(it - model.vocab.begin()), value);
    }

  std::vector<double> m(d + 1, 0.0), v(d + 1, 0.0);  // last slot is the bias
  std::vector<double> grad(d + 1, 0.0);
  RandomStream rng(stream_seed(cfg.seed, "logreg"));
  const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  for (std::size_t update = 1; update <= cfg.max_updates; ++update) {
    std::fill(grad.begin(), grad.end(), 0.0);
    const double inv_b = 1.0 / static_cast<double>(cfg.batch_size);
    for (std::size_t s = 0; s < cfg.batch_size; ++s) {
      const std::size_t i = rng.below(xs.size());
      double logit = model.bias;
      for (const auto& [idx, value] : sparse[i]) logit += model.weights[idx] * value;
      const double err = (sigmoid(logit) - static_cast<double>(ys[i])) * inv_b;
      for (const auto& [idx, value] : sparse[i]) grad[idx] += err * value;
      grad[d] += err;
    }
    for (std::size_t idx = 0; idx < d; ++idx) {
      const double w = model.weights[idx];
      grad[idx] += 2.0 * cfg.l2 * w + cfg.l1 * (w > 0.0 ? 1.0 : (w < 0.0 ? -1.0 : 0.0));
    }
    const double bc1 = 1.0 - std::pow(b1, static_cast<double>(update));
    const double bc2 = 1.0 - std::pow(b2, static_cast<double>(update));
    for (std::size_t idx = 0; idx <= d; ++idx) {
      m[idx] = b1 * m[idx] + (1.0 - b1) * grad[idx];
      v[idx] = b2 * v[idx] + (1.0 - b2) * grad[idx] * grad[idx];
      const double step =
          cfg.learning_rate * (m[idx] / bc1) / (std::sqrt(v[idx] / bc2) + eps);
      if (idx < d)
        model.weights[idx] -= step;
      else
        model.bias -= step;
    }
  }
  return model;
}

// ---------------------------------------------------------------------------
// Burden test: phi-ranked feature selection, score = count of associated
// features present in a repertoire.

enum class BurdenFeatureKind { fourmer, sequence };

inline double phi_coefficient(double n11, double n10, double n01, double n00) {
  const double row1 = n11 + n10;
  const double row0 = n01 + n00;
  const double col1 = n11 + n01;
  const double col0 = n10 + n00;
  const double denom = std::sqrt(row1 * row0 * col1 * col0);
  if (denom == 0.0) return 0.0;  // degenerate marginal
  return (n11 * n00 - n10 * n01) / denom;
}

struct BurdenModel {
  std::vector<std::string> features;  // top-J by signed phi, descending
  std::vector<double> phi;
  BurdenFeatureKind kind = BurdenFeatureKind::fourmer;
};

namespace detail {
inline std::set<std::string> burden_presence(const Repertoire& rep,
                                             BurdenFeatureKind kind) {
  std::set<std::string> present;
  for (const auto& seq : rep.sequences) {
    if (kind == BurdenFeatureKind::sequence) {
      present.insert(seq.residues);
    } else {
      if (seq.residues.size() < 4) continue;
      for (std::size_t i = 0; i + 4 <= seq.residues.size(); ++i)
        present.insert(seq.residues.substr(i, 4));
    }
  }
  return present;
}
}  // namespace detail

inline BurdenModel burden_fit(const std::vector<Repertoire>& reps,
                              const std::vector<int>& labels, std::size_t top_j,
                              BurdenFeatureKind kind) {
  if (top_j < 1) throw std::invalid_argument("burden_fit: J must be >= 1");
  if (reps.size() != labels.size())
    throw std::invalid_argument("burden_fit: label count mismatch");
  std::size_t positives = 0;
  for (int y : labels) positives += y == 1;
  const std::size_t negatives = labels.size() - positives;

  std::map<std::string, std::pair<std::size_t, std::size_t>> counts;  // (pos, neg)
  for (std::size_t r = 0; r < reps.size(); ++r) {
    for (const auto& feature : detail::burden_presence(reps[r], kind)) {
      auto& c = counts[feature];
      if (labels[r] == 1)
        ++c.first;
      else
        ++c.second;
    }
  }
  std::vector<std::pair<double, std::string>> ranked;
  ranked.reserve(counts.size());
  for (const auto& [feature, c] : counts) {
    const double n11 = static_cast<double>(c.first);
    const double n10 = static_cast<double>(c.second);
    const double n01 = static_cast<double>(positives - c.first);
    const double n00 = static_cast<double>(negatives - c.second);
    ranked.emplace_back(phi_coefficient(n11, n10, n01, n00), feature);
  }
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  BurdenModel model;
  model.kind = kind;
  const std::size_t keep = std::min(top_j, ranked.size());
  for (std::size_t i = 0; i < keep; ++i) {
    model.phi.push_back(ranked[i].first);
    model.features.push_back(ranked[i].second);
  }
  return model;
}

inline double burden_score(const BurdenModel& model, const Repertoire& rep) {
  const auto present = detail::burden_presence(rep, model.kind);
  std::size_t count = 0;
  for (const auto& feature : model.features) count += present.count(feature);
  return static_cast<double>(count);
}

// ---------------------------------------------------------------------------
// Logistic MIL over 4-mers with Atchley-factor features.

struct AtchleyTable {
  std::array<std::array<double, 5>, kAlphabetSize> values{};

  const std::array<double, 5>& row(char aa) const { return values[aa_index(aa)]; }

  static AtchleyTable load(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw DataError("cannot open Atchley factor table: " + path);
    AtchleyTable table;
    std::array<bool, kAlphabetSize> seen{};
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(is, line)) {
      ++line_no;
      if (line.empty() || line[0] == '#') continue;
      std::istringstream ls(line);
      std::string aa;
      ls >> aa;
      if (aa == "aa") continue;  // header
      if (aa.size() != 1 || !is_amino_acid(aa[0]))
        throw DataError(path + ":" + std::to_string(line_no) + ": bad amino acid");
      auto& row = table.values[aa_index(aa[0])];
      for (double& x : row)
        if (!(ls >> x))
          throw DataError(path + ":" + std::to_string(line_no) + ": expected 5 factors");
      seen[aa_index(aa[0])] = true;
    }
    for (std::size_t i = 0; i < kAlphabetSize; ++i)
      if (!seen[i])
        throw DataError(path + ": missing row for " + std::string(1, kAminoAcids[i]));
    return table;
  }
};

// 4 x 5 Atchley factors plus one relative-frequency feature.
inline std::array<double, 21> atchley_encode(const AtchleyTable& table,
                                             const std::string& fourmer,
                                             double rel_freq) {
  if (fourmer.size() != 4)
    throw std::invalid_argument("atchley_encode: need a 4-mer");
  std::array<double, 21> features{};
  for (std::size_t i = 0; i < 4; ++i) {
    const auto& row = table.row(fourmer[i]);
    for (std::size_t j = 0; j < 5; ++j) features[i * 5 + j] = row[j];
  }
  features[20] = rel_freq;
  return features;
}

enum class MilFrequencyMode { fourmer, tcrb };

struct LogisticMilConfig {
  double learning_rate = 1e-3;
  std::size_t batch_size = 4;
  std::size_t max_epochs = 100;
  MilFrequencyMode mode = MilFrequencyMode::fourmer;
  std::uint64_t seed = 0;
};

struct LogisticMilModel {
  std::array<double, 21> weights{};
  double bias = 0.0;
  MilFrequencyMode mode = MilFrequencyMode::fourmer;
};

namespace detail {
// All 4-mer instances of a repertoire with their relative-frequency feature.
inline std::vector<std::array<double, 21>> mil_instances(const AtchleyTable& table,
                                                         const Repertoire& rep,
                                                         MilFrequencyMode mode) {
  std::map<std::string, double> fourmer_weight;
  double total_abundance = 0.0;
  double total_fourmers = 0.0;
  for (const auto& seq : rep.sequences) {
    total_abundance += static_cast<double>(seq.abundance);
    if (seq.residues.size() < 4) continue;
    const double w = static_cast<double>(seq.abundance);
    total_fourmers += w * static_cast<double>(seq.residues.size() - 3);
    for (std::size_t i = 0; i + 4 <= seq.residues.size(); ++i)
      fourmer_weight[seq.residues.substr(i, 4)] += w;
  }
  std::vector<std::array<double, 21>> instances;
  if (mode == MilFrequencyMode::fourmer) {
    for (const auto& [fourmer, weight] : fourmer_weight)
      instances.push_back(
          atchley_encode(table, fourmer, total_fourmers > 0 ? weight / total_fourmers : 0.0));
  } else {
    // Frequency of the sequence the 4-mer appeared in; one instance per
    // distinct (4-mer, sequence frequency) pair.
    std::set<std::pair<std::string, double>> distinct;
    for (const auto& seq : rep.sequences) {
      if (seq.residues.size() < 4) continue;
      const double freq = static_cast<double>(seq.abundance) / total_abundance;
      for (std::size_t i = 0; i + 4 <= seq.residues.size(); ++i)
        distinct.emplace(seq.residues.substr(i, 4), freq);
    }
    for (const auto& [fourmer, freq] : distinct)
      instances.push_back(atchley_encode(table, fourmer, freq));
  }
  return instances;
}
}  // namespace detail

// Bag score: the maximum per-instance logistic score, squashed once.
inline double logistic_mil_score(const AtchleyTable& table,
                                 const LogisticMilModel& model,
                                 const Repertoire& rep) {
  const auto instances = detail::mil_instances(table, rep, model.mode);
  double best = -std::numeric_limits<double>::infinity();
  for (const auto& inst : instances) {
    double logit = model.bias;
    for (std::size_t j = 0; j < 21; ++j) logit += model.weights[j] * inst[j];
    best = std::max(best, logit);
  }
  if (instances.empty()) best = model.bias;
  return sigmoid(best);
}

inline LogisticMilModel logistic_mil_fit(const AtchleyTable& table,
                                         const std::vector<Repertoire>& reps,
                                         const std::vector<int>& labels,
                                         const LogisticMilConfig& cfg) {
  if (reps.empty() || reps.size() != labels.size())
    throw std::invalid_argument("logistic_mil_fit: bad training data");
  LogisticMilModel model;
  model.mode = cfg.mode;

  std::vector<std::vector<std::array<double, 21>>> bags(reps.size());
  for (std::size_t i = 0; i < reps.size(); ++i)
    bags[i] = detail::mil_instances(table, reps[i], cfg.mode);

  std::array<double, 22> m{}, v{}, grad{};
  RandomStream rng(stream_seed(cfg.seed, "logmil"));
  const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  std::size_t t = 0;
  std::vector<std::size_t> order(reps.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[rng.below(i)]);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(start + cfg.batch_size, order.size());
      grad.fill(0.0);
      const double inv_b = 1.0 / static_cast<double>(end - start);
      for (std::size_t s = start; s < end; ++s) {
        const std::size_t i = order[s];
        const auto& instances = bags[i];
        double best = -std::numeric_limits<double>::infinity();
        std::size_t best_inst = 0;
        for (std::size_t q = 0; q < instances.size(); ++q) {
          double logit = model.bias;
          for (std::size_t j = 0; j < 21; ++j)
            logit += model.weights[j] * instances[q][j];
          if (logit > best) {
            best = logit;
            best_inst = q;
          }
        }
        if (instances.empty()) continue;
        const double err =
            (sigmoid(best) - static_cast<double>(labels[i])) * inv_b;
        for (std::size_t j = 0; j < 21; ++j)
          grad[j] += err * instances[best_inst][j];
        grad[21] += err;
      }
      ++t;
      const double bc1 = 1.0 - std::pow(b1, static_cast<double>(t));
      const double bc2 = 1.0 - std::pow(b2, static_cast<double>(t));
      for (std::size_t j = 0; j < 22; ++j) {
        m[j] = b1 * m[j] + (1.0 - b1) * grad[j];
        v[j] = b2 * v[j] + (1.0 - b2) * grad[j] * grad[j];
        const double step =
            cfg.learning_rate * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + eps);
        if (j < 21)
          model.weights[j] -= step;
        else
          model.bias -= step;
      }
    }
  }
  return model;
}

// ---------------------------------------------------------------------------
// Known-motif scoring.

enum class MotifScoreMode { binary, continuous };

namespace detail {
// Concrete search patterns for a motif: one string per allowed gap length,
// '.' marking match-anything positions. Deletable positions are kept; the
// probabilistic noise of the generator is not modelled here.
inline std::vector<std::string> motif_patterns(const MotifSpec& spec) {
  std::string base;
  for (std::size_t i = 0; i < spec.letters.size(); ++i)
    base += spec.wildcard_positions.count(i) ? '.' : spec.letters[i];
  std::vector<std::string> patterns;
  if (!spec.gap) {
    patterns.push_back(base);
    return patterns;
  }
  for (std::size_t g : spec.gap->lengths) {
    std::string p = base.substr(0, spec.gap->position);
    p.append(g, '.');
    p += base.substr(spec.gap->position);
    patterns.push_back(p);
  }
  return patterns;
}
}  // namespace detail

// Binary: total count of motif occurrences over all sequences (wildcards and
// gap fillers match anything). Continuous: per sequence the maximum number of
// literal motif letters matching at any alignment, summed over the bag.
inline double known_motif_score(const Repertoire& rep, const MotifSpec& spec,
                                MotifScoreMode mode) {
  spec.validate();
  const auto patterns = detail::motif_patterns(spec);
  double total = 0.0;
  for (const auto& seq : rep.sequences) {
    const std::string& s = seq.residues;
    if (mode == MotifScoreMode::binary) {
      for (const auto& p : patterns) {
        if (p.size() > s.size()) continue;
        for (std::size_t off = 0; off + p.size() <= s.size(); ++off) {
          bool match = true;
          for (std::size_t i = 0; i < p.size() && match; ++i)
            match = p[i] == '.' || p[i] == s[off + i];
          if (match) total += 1.0;
        }
      }
    } else {
      double best = 0.0;
      for (const auto& p : patterns) {
        if (p.size() > s.size()) continue;
        for (std::size_t off = 0; off + p.size() <= s.size(); ++off) {
          double overlap = 0.0;
          for (std::size_t i = 0; i < p.size(); ++i)
            if (p[i] != '.' && p[i] == s[off + i]) overlap += 1.0;
          best = std::max(best, overlap);
        }
      }
      total += best;
    }
  }
  return total;
}

}  // namespace rephop
