#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "rephop/encoding.hpp"
#include "rephop/eval.hpp"
#include "rephop/model.hpp"
#include "rephop/rng.hpp"
#include "rephop/threads.hpp"

namespace rephop {

struct LabeledBag {
  std::string id;
  std::vector<EncodedSequence> sequences;
  int label = kLabelUnknown;
};

struct TrainConfig {
  std::size_t batch_size = 4;
  std::size_t subsample_n = 10000;
  double top_fraction = 0.1;
  std::size_t eval_interval = 200;
  std::size_t max_updates = 5000;
  double l2_penalty = 0.0;
  double learning_rate = 1e-4;
  std::uint64_t seed = 0;

  void validate() const {
    if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
    if (!(top_fraction > 0.0 && top_fraction <= 1.0))
      throw std::invalid_argument("TrainConfig: top_fraction must lie in (0, 1]");
    if (subsample_n < 1) throw std::invalid_argument("TrainConfig: subsample_n must be >= 1");
  }
};

struct AdamState {
  ModelParams m;
  ModelParams v;
  std::size_t t = 0;
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-4;

  explicit AdamState(const ModelConfig& config, double learning_rate = 1e-4)
      : m(zeros_like(config)), v(zeros_like(config)), lr(learning_rate) {}
};

// Standard Adam with bias correction; eps is added to sqrt(v_hat).
inline void adam_step(AdamState& state, ModelParams& params, const ModelParams& grads) {
  ++state.t;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
  auto pr = tensor_refs(params);
  auto mr = tensor_refs(state.m);
  auto vr = tensor_refs(state.v);
  auto gr = tensor_refs(grads);
  for (std::size_t k = 0; k < pr.size(); ++k) {
    if (pr[k].size != gr[k].size)
      throw std::invalid_argument("adam_step: parameter/gradient shape mismatch");
    for (std::size_t i = 0; i < pr[k].size; ++i) {
      const double g = gr[k].data[i];
      double& m = mr[k].data[i];
      double& v = vr[k].data[i];
      m = state.beta1 * m + (1.0 - state.beta1) * g;
      v = state.beta2 * v + (1.0 - state.beta2) * g * g;
      const double m_hat = m / bc1;
      const double v_hat = v / bc2;
      pr[k].data[i] -= state.lr * m_hat / (std::sqrt(v_hat) + state.eps);
    }
  }
}

inline double bce_loss(double p, int y) {
  const double q = std::clamp(p, 1e-12, 1.0 - 1e-12);
  return y == 1 ? -std::log(q) : -std::log(1.0 - q);
}

// ---------------------------------------------------------------------------
// Bag forward/backward with cached intermediates.

namespace detail {

struct BagCache {
  std::vector<SeqEmbedding> seqs;
  Matrix z;            // N x n_kernels
  KeyCache keys;
  Matrix attn;         // n_heads x N
  std::vector<double> pooled;
  double logit = 0.0;
  double prob = 0.5;
};

inline BagCache bag_forward(const ModelParams& params, const ModelConfig& config,
                            const std::vector<const EncodedSequence*>& bag,
                            std::vector<SeqEmbedding> precomputed = {}) {
  BagCache cache;
  const std::size_t n = bag.size();
  if (n == 0) throw std::invalid_argument("bag_forward: empty repertoire");
  if (precomputed.size() == n) {
    cache.seqs = std::move(precomputed);
  } else {
    cache.seqs.resize(n);
    for (std::size_t i = 0; i < n; ++i)
      cache.seqs[i] = embed_sequence_cached(params, config, *bag[i]);
  }
  cache.z = Matrix(n, config.n_kernels);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t f = 0; f < config.n_kernels; ++f)
      cache.z(i, f) = cache.seqs[i].z[f];
  cache.keys = compute_keys_cached(params, cache.z);
  PoolResult pool =
      attention_pool(params.queries, cache.keys.keys, cache.z, config.beta());
  cache.attn = std::move(pool.weights);
  cache.pooled = std::move(pool.pooled);
  cache.logit = dot(params.out_w, cache.pooled) + params.out_b;
  cache.prob = sigmoid(cache.logit);
  return cache;
}

// Exact gradients of dlogit * logit(bag) with respect to every parameter
// tensor, accumulated into `grads`. The max-pool routes its gradient to the
// first maximal position; the SELU and attention softmax are differentiated
// exactly. When `input_grads` is given, d logit / d features is accumulated
// per sequence as well.
inline void backprop_bag(const ModelParams& params, const ModelConfig& config,
                         const std::vector<const EncodedSequence*>& bag,
                         const BagCache& cache, double dlogit, ModelParams& grads,
                         std::vector<Matrix>* input_grads = nullptr) {
  const std::size_t n = bag.size();
  const std::size_t dv = config.n_kernels;
  const std::size_t dk = config.d_k;
  const std::size_t units = config.key_units;
  const std::size_t heads = config.n_heads;
  const double beta = config.beta();

  grads.out_b += dlogit;
  for (std::size_t j = 0; j < cache.pooled.size(); ++j)
    grads.out_w[j] += dlogit * cache.pooled[j];

  Matrix gz(n, dv);   // d logit / d z_i
  Matrix gk(n, dk);   // d logit / d k_i
  std::vector<double> ga(n), gs(n);
  for (std::size_t h = 0; h < heads; ++h) {
    const double* a = cache.attn.row(h);
    // d logit / d pooled_h
    std::vector<double> gp(dv);
    for (std::size_t f = 0; f < dv; ++f) gp[f] = dlogit * params.out_w[h * dv + f];
    double mix = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      ga[i] = dot(gp.data(), cache.z.row(i), dv);
      mix += a[i] * ga[i];
      for (std::size_t f = 0; f < dv; ++f) gz(i, f) += a[i] * gp[f];
    }
    const double* q = params.queries.row(h);
    double* gq = grads.queries.row(h);
    for (std::size_t i = 0; i < n; ++i) {
      gs[i] = a[i] * (ga[i] - mix);
      const double* ki = cache.keys.keys.row(i);
      for (std::size_t c = 0; c < dk; ++c) {
        gq[c] += beta * gs[i] * ki[c];
        gk(i, c) += beta * gs[i] * q[c];
      }
    }
  }

  // Key network backward, adds the key path into gz.
  std::vector<double> gh1(units), gpre1(units);
  for (std::size_t i = 0; i < n; ++i) {
    const double* gki = gk.row(i);
    const double* h1 = cache.keys.h1.row(i);
    const double* pre1 = cache.keys.pre1.row(i);
    std::fill(gh1.begin(), gh1.end(), 0.0);
    for (std::size_t k = 0; k < dk; ++k) {
      const double g = gki[k];
      if (g == 0.0) continue;
      const double* w2 = params.key_w2.row(k);
      double* gw2 = grads.key_w2.row(k);
      for (std::size_t u = 0; u < units; ++u) {
        gh1[u] += g * w2[u];
        gw2[u] += g * h1[u];
      }
      grads.key_b2[k] += g;
    }
    const double* zi = cache.z.row(i);
    for (std::size_t u = 0; u < units; ++u) {
      gpre1[u] = gh1[u] * selu_grad(pre1[u]);
      if (gpre1[u] == 0.0) continue;
      double* gw1 = grads.key_w1.row(u);
      const double* w1 = params.key_w1.row(u);
      for (std::size_t f = 0; f < dv; ++f) {
        gw1[f] += gpre1[u] * zi[f];
        gz(i, f) += gpre1[u] * w1[f];
      }
      grads.key_b1[u] += gpre1[u];
    }
  }

  // Convolution backward through the winning position of each kernel.
  const std::size_t ks = config.kernel_size;
  const std::size_t pad = (ks - 1) / 2;
  for (std::size_t i = 0; i < n; ++i) {
    const EncodedSequence& enc = *bag[i];
    const std::size_t length = enc.length;
    Matrix* gx = input_grads ? &(*input_grads)[i] : nullptr;
    for (std::size_t f = 0; f < dv; ++f) {
      const double gzf = gz(i, f);
      if (gzf == 0.0) continue;
      const double gpre = gzf * selu_grad(cache.seqs[i].pre_winner[f]);
      grads.conv_b[f] += gpre;
      const std::size_t t = static_cast<std::size_t>(cache.seqs[i].winner[f]);
      double* gw = grads.conv_w.row(f);
      const double* w = params.conv_w.row(f);
      for (std::size_t tap = 0; tap < ks; ++tap) {
        const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t + tap) -
                                   static_cast<std::ptrdiff_t>(pad);
        if (src < 0 || src >= static_cast<std::ptrdiff_t>(length)) continue;
        const double* x = enc.features.row(static_cast<std::size_t>(src));
        for (std::size_t c = 0; c < kPositionFeatures; ++c)
          gw[tap * kPositionFeatures + c] += gpre * x[c];
        if (gx)
          for (std::size_t c = 0; c < kPositionFeatures; ++c)
            (*gx)(static_cast<std::size_t>(src), c) +=
                gpre * w[tap * kPositionFeatures + c];
      }
    }
  }
}

inline std::vector<const EncodedSequence*> bag_view(const LabeledBag& bag) {
  std::vector<const EncodedSequence*> view;
  view.reserve(bag.sequences.size());
  for (const auto& s : bag.sequences) view.push_back(&s);
  return view;
}

}  // namespace detail

// Gradients of the pre-sigmoid output of the model over one bag, with respect
// to the parameters and optionally the input features. Used by attribution.
struct LogitGradients {
  double logit = 0.0;
  ModelParams params;
  std::vector<Matrix> inputs;
};

inline LogitGradients logit_gradients(const ModelParams& params,
                                      const ModelConfig& config,
                                      const std::vector<EncodedSequence>& bag,
                                      bool want_inputs = false) {
  std::vector<const EncodedSequence*> view;
  view.reserve(bag.size());
  for (const auto& s : bag) view.push_back(&s);
  const auto cache = detail::bag_forward(params, config, view);
  LogitGradients out;
  out.logit = cache.logit;
  out.params = zeros_like(config);
  if (want_inputs) {
    out.inputs.reserve(bag.size());
    for (const auto& s : bag)
      out.inputs.emplace_back(s.features.rows, s.features.cols);
  }
  detail::backprop_bag(params, config, view, cache, 1.0, out.params,
                       want_inputs ? &out.inputs : nullptr);
  return out;
}

enum class Phase { train, eval };

// Bag reduction: in the train phase a uniform random subsample (without
// replacement) down to subsample_n, then in both phases the ceil(top_fraction
// * n) sequences with the highest first-head attention weight are kept. The
// selection itself is a hard cut; gradients only ever flow through the
// retained sequences.
inline std::vector<std::size_t> reduce_bag_indices(
    const ModelParams& params, const ModelConfig& config, const TrainConfig& tc,
    const std::vector<EncodedSequence>& bag, RandomStream& rng, Phase phase,
    std::vector<SeqEmbedding>* cache_out = nullptr) {
  if (bag.empty()) throw std::invalid_argument("reduce_bag: empty repertoire");
  std::vector<std::size_t> indices(bag.size());
  std::iota(indices.begin(), indices.end(), 0);
  if (phase == Phase::train && bag.size() > tc.subsample_n) {
    // Partial Fisher-Yates: the first subsample_n slots become the sample.
    for (std::size_t i = 0; i < tc.subsample_n; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(rng.below(indices.size() - i));
      std::swap(indices[i], indices[j]);
    }
    indices.resize(tc.subsample_n);
    std::sort(indices.begin(), indices.end());
  }
  const std::size_t n = indices.size();
  const std::size_t keep = std::min<std::size_t>(
      n, static_cast<std::size_t>(
             std::ceil(tc.top_fraction * static_cast<double>(n))));

  std::vector<SeqEmbedding> embeddings(n);
  parallel_for(n, [&](std::size_t i) {
    embeddings[i] = embed_sequence_cached(params, config, bag[indices[i]]);
  });

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  if (keep < n) {
    Matrix z(n, config.n_kernels);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t f = 0; f < config.n_kernels; ++f)
        z(i, f) = embeddings[i].z[f];
    const Matrix keys = compute_keys(params, z);
    std::vector<double> weight(n);
    for (std::size_t i = 0; i < n; ++i)
      weight[i] = config.beta() * dot(keys.row(i), params.queries.row(0), config.d_k);
    softmax_inplace(weight);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return weight[a] > weight[b];
    });
    order.resize(keep);
    std::sort(order.begin(), order.end());
  }

  std::vector<std::size_t> kept;
  kept.reserve(order.size());
  for (std::size_t slot : order) kept.push_back(indices[slot]);
  if (cache_out) {
    cache_out->clear();
    cache_out->reserve(order.size());
    for (std::size_t slot : order) cache_out->push_back(std::move(embeddings[slot]));
  }
  return kept;
}

inline LabeledBag reduce_bag(const ModelParams& params, const ModelConfig& config,
                             const TrainConfig& tc, const LabeledBag& bag,
                             RandomStream& rng, Phase phase) {
  const auto kept = reduce_bag_indices(params, config, tc, bag.sequences, rng, phase);
  LabeledBag out;
  out.id = bag.id;
  out.label = bag.label;
  out.sequences.reserve(kept.size());
  for (std::size_t i : kept) out.sequences.push_back(bag.sequences[i]);
  return out;
}

struct BackwardResult {
  double loss = 0.0;
  ModelParams grads;
};

namespace detail {
inline void add_l2_penalty(const ModelParams& params, double l2, double& loss,
                           ModelParams& grads) {
  if (l2 == 0.0) return;
  auto pr = tensor_refs(params);
  auto gr = tensor_refs(grads);
  for (std::size_t k = 0; k < pr.size(); ++k) {
    if (pr[k].is_bias) continue;
    for (std::size_t i = 0; i < pr[k].size; ++i) {
      loss += l2 * pr[k].data[i] * pr[k].data[i];
      gr[k].data[i] += 2.0 * l2 * pr[k].data[i];
    }
  }
}
}  // namespace detail

// Mean batch loss (plus l2 penalty on the weights) and its exact analytic
// gradients. The batch holds already-reduced repertoires.
inline BackwardResult backward(const ModelParams& params, const ModelConfig& config,
                               const TrainConfig& tc,
                               const std::vector<LabeledBag>& batch) {
  if (batch.empty()) throw std::invalid_argument("backward: empty batch");
  BackwardResult out;
  out.grads = zeros_like(config);
  std::vector<detail::BagCache> caches(batch.size());
  parallel_for(batch.size(), [&](std::size_t b) {
    caches[b] = detail::bag_forward(params, config, detail::bag_view(batch[b]));
  });
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  for (std::size_t b = 0; b < batch.size(); ++b) {
    out.loss += bce_loss(caches[b].prob, batch[b].label) * inv_b;
    const double dlogit =
        (caches[b].prob - static_cast<double>(batch[b].label)) * inv_b;
    detail::backprop_bag(params, config, detail::bag_view(batch[b]), caches[b],
                         dlogit, out.grads);
  }
  detail::add_l2_penalty(params, tc.l2_penalty, out.loss, out.grads);
  return out;
}

// Loss-only evaluation used by the finite-difference oracle.
inline double batch_loss(const ModelParams& params, const ModelConfig& config,
                         const TrainConfig& tc, const std::vector<LabeledBag>& batch) {
  double loss = 0.0;
  for (const auto& bag : batch) {
    const auto cache = detail::bag_forward(params, config, detail::bag_view(bag));
    loss += bce_loss(cache.prob, bag.label);
  }
  loss /= static_cast<double>(batch.size());
  if (tc.l2_penalty != 0.0) {
    auto pr = tensor_refs(params);
    for (const auto& ref : pr) {
      if (ref.is_bias) continue;
      for (std::size_t i = 0; i < ref.size; ++i)
        loss += tc.l2_penalty * ref.data[i] * ref.data[i];
    }
  }
  return loss;
}

namespace detail {

// Straight-line re-implementation of the batch loss in extended precision.
// This is the finite-difference oracle's function evaluation: independent of
// the production forward pass and precise enough that the central difference
// is not dominated by rounding noise, even along directions where the true
// gradient vanishes (a key bias shifts every attention score equally, so the
// softmax ignores it exactly).
inline long double batch_loss_ld(const std::vector<long double>& theta,
                                 const std::size_t* off, const ModelConfig& cfg,
                                 const TrainConfig& tc,
                                 const std::vector<LabeledBag>& batch) {
  const std::size_t dv = cfg.n_kernels;
  const std::size_t ks = cfg.kernel_size;
  const std::size_t units = cfg.key_units;
  const std::size_t dk = cfg.d_k;
  const std::size_t heads = cfg.n_heads;
  const std::size_t pad = (ks - 1) / 2;
  const long double lambda = kSeluLambda;
  const long double alpha = kSeluAlpha;
  const long double beta =
      cfg.attention_beta > 0.0
          ? static_cast<long double>(cfg.attention_beta)
          : 1.0L / sqrtl(static_cast<long double>(dk));
  const long double* conv_w = theta.data() + off[0];
  const long double* conv_b = theta.data() + off[1];
  const long double* key_w1 = theta.data() + off[2];
  const long double* key_b1 = theta.data() + off[3];
  const long double* key_w2 = theta.data() + off[4];
  const long double* key_b2 = theta.data() + off[5];
  const long double* queries = theta.data() + off[6];
  const long double* out_w = theta.data() + off[7];
  const long double out_b = theta[off[8]];

  long double loss = 0.0L;
  for (const auto& bag : batch) {
    const std::size_t n = bag.sequences.size();
    std::vector<long double> z(n * dv), h1(units), keys(n * dk);
    for (std::size_t i = 0; i < n; ++i) {
      const EncodedSequence& enc = bag.sequences[i];
      for (std::size_t f = 0; f < dv; ++f) {
        long double best = -1e300L;
        for (std::size_t t = 0; t < enc.length; ++t) {
          long double pre = conv_b[f];
          for (std::size_t tap = 0; tap < ks; ++tap) {
            const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t + tap) -
                                       static_cast<std::ptrdiff_t>(pad);
            if (src < 0 || src >= static_cast<std::ptrdiff_t>(enc.length)) continue;
            const double* x = enc.features.row(static_cast<std::size_t>(src));
            const long double* w = conv_w + (f * ks + tap) * kPositionFeatures;
            for (std::size_t c = 0; c < kPositionFeatures; ++c)
              pre += w[c] * static_cast<long double>(x[c]);
          }
          const long double act =
              pre > 0.0L ? lambda * pre : lambda * alpha * (expl(pre) - 1.0L);
          if (act > best) best = act;
        }
        z[i * dv + f] = best;
      }
      for (std::size_t u = 0; u < units; ++u) {
        long double pre = key_b1[u];
        for (std::size_t f = 0; f < dv; ++f)
          pre += key_w1[u * dv + f] * z[i * dv + f];
        h1[u] = pre > 0.0L ? lambda * pre : lambda * alpha * (expl(pre) - 1.0L);
      }
      for (std::size_t k = 0; k < dk; ++k) {
        long double acc = key_b2[k];
        for (std::size_t u = 0; u < units; ++u) acc += key_w2[k * units + u] * h1[u];
        keys[i * dk + k] = acc;
      }
    }
    long double logit = out_b;
    std::vector<long double> weight(n);
    for (std::size_t h = 0; h < heads; ++h) {
      long double top = -1e300L;
      for (std::size_t i = 0; i < n; ++i) {
        long double s = 0.0L;
        for (std::size_t k = 0; k < dk; ++k)
          s += keys[i * dk + k] * queries[h * dk + k];
        weight[i] = beta * s;
        if (weight[i] > top) top = weight[i];
      }
      long double norm = 0.0L;
      for (std::size_t i = 0; i < n; ++i) {
        weight[i] = expl(weight[i] - top);
        norm += weight[i];
      }
      for (std::size_t f = 0; f < dv; ++f) {
        long double pooled = 0.0L;
        for (std::size_t i = 0; i < n; ++i) pooled += weight[i] * z[i * dv + f];
        logit += out_w[h * dv + f] * pooled / norm;
      }
    }
    const long double p = logit >= 0.0L ? 1.0L / (1.0L + expl(-logit))
                                        : expl(logit) / (1.0L + expl(logit));
    const long double q =
        std::min(std::max(p, 1e-12L), 1.0L - 1e-12L);
    loss += bag.label == 1 ? -logl(q) : -logl(1.0L - q);
  }
  loss /= static_cast<long double>(batch.size());
  if (tc.l2_penalty != 0.0) {
    // Weight tensors only (conv_w, key_w1, key_w2, queries, out_w).
    const std::size_t weight_tensors[] = {0, 2, 4, 6, 7};
    const std::size_t ends[] = {off[1], off[3], off[5], off[7], off[8]};
    for (std::size_t j = 0; j < 5; ++j)
      for (std::size_t i = off[weight_tensors[j]]; i < ends[j]; ++i)
        loss += static_cast<long double>(tc.l2_penalty) * theta[i] * theta[i];
  }
  return loss;
}

}  // namespace detail

// Central differences (L(th+h) - L(th-h)) / 2h per scalar parameter, with the
// loss evaluated by the extended-precision straight-line oracle.
inline ModelParams finite_diff_grad(const ModelParams& params,
                                    const ModelConfig& config, const TrainConfig& tc,
                                    const std::vector<LabeledBag>& batch, double h) {
  if (!(h > 0.0)) throw std::invalid_argument("finite_diff_grad: h must be positive");
  if (batch.empty()) throw std::invalid_argument("finite_diff_grad: empty batch");
  ModelParams grads = zeros_like(config);
  auto pr = tensor_refs(params);
  auto gr = tensor_refs(grads);

  std::vector<long double> theta;
  std::size_t off[9];
  for (std::size_t k = 0; k < pr.size(); ++k) {
    off[k] = theta.size();
    for (std::size_t i = 0; i < pr[k].size; ++i)
      theta.push_back(static_cast<long double>(pr[k].data[i]));
  }

  std::size_t flat = 0;
  for (std::size_t k = 0; k < pr.size(); ++k) {
    for (std::size_t i = 0; i < pr[k].size; ++i, ++flat) {
      const long double original = theta[flat];
      theta[flat] = original + static_cast<long double>(h);
      const long double up = detail::batch_loss_ld(theta, off, config, tc, batch);
      theta[flat] = original - static_cast<long double>(h);
      const long double down = detail::batch_loss_ld(theta, off, config, tc, batch);
      theta[flat] = original;
      gr[k].data[i] =
          static_cast<double>((up - down) / (2.0L * static_cast<long double>(h)));
    }
  }
  return grads;
}

struct HistoryRow {
  std::size_t update = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_auc = 0.0;
};

struct TrainResult {
  ModelParams params;           // best validation loss seen
  std::vector<HistoryRow> history;
  double best_val_loss = 0.0;
  std::size_t best_update = 0;
};

struct EvalScores {
  double loss = 0.0;
  double auc = 0.0;
  std::vector<double> scores;
};

// Scores every bag through the eval-phase reduction and forward pass.
inline EvalScores evaluate_bags(const ModelParams& params, const ModelConfig& config,
                                const TrainConfig& tc,
                                const std::vector<LabeledBag>& bags) {
  EvalScores out;
  out.scores.resize(bags.size());
  std::vector<double> losses(bags.size());
  parallel_for(bags.size(), [&](std::size_t b) {
    RandomStream unused(0);  // eval reduction draws nothing
    std::vector<SeqEmbedding> cache;
    const auto kept = reduce_bag_indices(params, config, tc, bags[b].sequences,
                                         unused, Phase::eval, &cache);
    std::vector<const EncodedSequence*> view;
    view.reserve(kept.size());
    for (std::size_t i : kept) view.push_back(&bags[b].sequences[i]);
    const auto fwd = detail::bag_forward(params, config, view, std::move(cache));
    out.scores[b] = fwd.prob;
    losses[b] = bce_loss(fwd.prob, bags[b].label);
  });
  for (double l : losses) out.loss += l;
  out.loss /= static_cast<double>(bags.size());
  std::vector<int> labels;
  labels.reserve(bags.size());
  for (const auto& b : bags) labels.push_back(b.label);
  const bool has_pos = std::find(labels.begin(), labels.end(), 1) != labels.end();
  const bool has_neg = std::find(labels.begin(), labels.end(), 0) != labels.end();
  out.auc = (has_pos && has_neg) ? roc_auc(out.scores, labels)
                                 : std::numeric_limits<double>::quiet_NaN();
  return out;
}

// Adam training with random bag subsampling, attention-based bag reduction,
// periodic validation, and best-validation-loss checkpointing. Deterministic
// for a fixed (seed, data, config) regardless of the worker count.
inline TrainResult train_loop(const std::vector<LabeledBag>& train_bags,
                              const std::vector<LabeledBag>& val_bags,
                              const TrainConfig& tc, const ModelConfig& config) {
  tc.validate();
  config.validate();
  if (train_bags.empty() || val_bags.empty())
    throw std::invalid_argument("train_loop: empty train or validation set");

  TrainResult result;
  ModelParams params = init_params(config, tc.seed);
  AdamState adam(config, tc.learning_rate);
  result.params = params;
  result.best_val_loss = std::numeric_limits<double>::infinity();
  result.best_update = 0;

  RandomStream order_rng(stream_seed(tc.seed, "batch-order"));
  std::vector<std::size_t> order(train_bags.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();  // force shuffle on first use

  double running_loss = 0.0;
  std::size_t running_count = 0;

  for (std::size_t update = 1; update <= tc.max_updates; ++update) {
    std::vector<std::size_t> batch_ids(tc.batch_size);
    for (std::size_t s = 0; s < tc.batch_size; ++s) {
      if (cursor >= order.size()) {
        for (std::size_t i = order.size(); i > 1; --i)
          std::swap(order[i - 1], order[order_rng.below(i)]);
        cursor = 0;
      }
      batch_ids[s] = order[cursor++];
    }

    // Rank-and-reduce each bag, reusing the embeddings for the update.
    std::vector<std::vector<const EncodedSequence*>> views(tc.batch_size);
    std::vector<std::vector<SeqEmbedding>> caches(tc.batch_size);
    for (std::size_t s = 0; s < tc.batch_size; ++s) {
      const LabeledBag& bag = train_bags[batch_ids[s]];
      RandomStream rng(stream_seed(tc.seed, "subsample",
                                   (update - 1) * tc.batch_size + s));
      const auto kept = reduce_bag_indices(params, config, tc, bag.sequences, rng,
                                           Phase::train, &caches[s]);
      views[s].reserve(kept.size());
      for (std::size_t i : kept) views[s].push_back(&bag.sequences[i]);
    }

    ModelParams grads = zeros_like(config);
    double loss = 0.0;
    const double inv_b = 1.0 / static_cast<double>(tc.batch_size);
    for (std::size_t s = 0; s < tc.batch_size; ++s) {
      const auto cache = detail::bag_forward(params, config, views[s],
                                             std::move(caches[s]));
      const int label = train_bags[batch_ids[s]].label;
      loss += bce_loss(cache.prob, label) * inv_b;
      const double dlogit = (cache.prob - static_cast<double>(label)) * inv_b;
      detail::backprop_bag(params, config, views[s], cache, dlogit, grads);
    }
    detail::add_l2_penalty(params, tc.l2_penalty, loss, grads);
    adam_step(adam, params, grads);
    running_loss += loss;
    ++running_count;

    if (update % tc.eval_interval == 0 || update == tc.max_updates) {
      const EvalScores val = evaluate_bags(params, config, tc, val_bags);
      HistoryRow row;
      row.update = update;
      row.train_loss = running_loss / static_cast<double>(running_count);
      row.val_loss = val.loss;
      row.val_auc = val.auc;
      result.history.push_back(row);
      running_loss = 0.0;
      running_count = 0;
      if (val.loss < result.best_val_loss) {
        result.best_val_loss = val.loss;
        result.best_update = update;
        result.params = params;
      }
    }
  }
  return result;
}

}  // namespace rephop
