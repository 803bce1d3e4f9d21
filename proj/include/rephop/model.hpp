#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <utility>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "rephop/common.hpp"
#include "rephop/encoding.hpp"
#include "rephop/linalg.hpp"
#include "rephop/rng.hpp"
#include "rephop/threads.hpp"

namespace rephop {

// Self-normalizing activation constants (Klambauer et al. values).
inline constexpr double kSeluLambda = 1.0507009873554804934193349852946;
inline constexpr double kSeluAlpha = 1.6732632423543772848170429916717;

inline double selu(double x) {
  return x > 0.0 ? kSeluLambda * x : kSeluLambda * kSeluAlpha * (std::exp(x) - 1.0);
}

inline double selu_grad(double pre) {
  return pre > 0.0 ? kSeluLambda : kSeluLambda * kSeluAlpha * std::exp(pre);
}

struct ModelConfig {
  std::size_t n_kernels = 16;    // d_v, width of the sequence embedding
  std::size_t kernel_size = 5;   // odd
  std::size_t d_k = 32;          // key / query width
  std::size_t key_units = 32;    // hidden units of the key network
  std::size_t n_heads = 1;
  double attention_beta = 0.0;   // 0 = default 1/sqrt(d_k)

  double beta() const {
    return attention_beta > 0.0 ? attention_beta
                                : 1.0 / std::sqrt(static_cast<double>(d_k));
  }

  void validate() const {
    if (n_kernels < 1 || kernel_size < 1 || d_k < 1 || key_units < 1 || n_heads < 1)
      throw std::invalid_argument("ModelConfig: sizes must be positive");
    if (kernel_size % 2 == 0)
      throw std::invalid_argument("ModelConfig: kernel size must be odd");
    if (attention_beta < 0.0 || !std::isfinite(attention_beta))
      throw std::invalid_argument("ModelConfig: attention beta must be finite and >= 0");
  }
};

// All trainable tensors. conv_w rows are kernels, each row laid out as
// [tap][feature] with 23 features per tap.
struct ModelParams {
  Matrix conv_w;                // n_kernels x (kernel_size * 23)
  std::vector<double> conv_b;   // n_kernels
  Matrix key_w1;                // key_units x n_kernels
  std::vector<double> key_b1;   // key_units
  Matrix key_w2;                // d_k x key_units
  std::vector<double> key_b2;   // d_k
  Matrix queries;               // n_heads x d_k
  std::vector<double> out_w;    // n_kernels * n_heads
  double out_b = 0.0;
};

// View over the named tensors of a parameter set, in a fixed order shared by
// the optimizer, the checkpoint format, and the gradient checker.
struct TensorRef {
  std::string_view name;
  double* data;
  std::size_t size;
  std::vector<std::size_t> shape;
  bool is_bias;
};

inline std::vector<TensorRef> tensor_refs(ModelParams& p) {
  return {
      {"conv_w", p.conv_w.data.data(), p.conv_w.size(), {p.conv_w.rows, p.conv_w.cols}, false},
      {"conv_b", p.conv_b.data(), p.conv_b.size(), {p.conv_b.size()}, true},
      {"key_w1", p.key_w1.data.data(), p.key_w1.size(), {p.key_w1.rows, p.key_w1.cols}, false},
      {"key_b1", p.key_b1.data(), p.key_b1.size(), {p.key_b1.size()}, true},
      {"key_w2", p.key_w2.data.data(), p.key_w2.size(), {p.key_w2.rows, p.key_w2.cols}, false},
      {"key_b2", p.key_b2.data(), p.key_b2.size(), {p.key_b2.size()}, true},
      {"queries", p.queries.data.data(), p.queries.size(), {p.queries.rows, p.queries.cols}, false},
      {"out_w", p.out_w.data(), p.out_w.size(), {p.out_w.size()}, false},
      {"out_b", &p.out_b, 1, {1}, true},
  };
}

inline std::vector<TensorRef> tensor_refs(const ModelParams& p) {
  return tensor_refs(const_cast<ModelParams&>(p));
}

inline ModelParams zeros_like(const ModelConfig& config) {
  ModelParams p;
  p.conv_w = Matrix(config.n_kernels, config.kernel_size * kPositionFeatures);
  p.conv_b.assign(config.n_kernels, 0.0);
  p.key_w1 = Matrix(config.key_units, config.n_kernels);
  p.key_b1.assign(config.key_units, 0.0);
  p.key_w2 = Matrix(config.d_k, config.key_units);
  p.key_b2.assign(config.d_k, 0.0);
  p.queries = Matrix(config.n_heads, config.d_k);
  p.out_w.assign(config.n_kernels * config.n_heads, 0.0);
  p.out_b = 0.0;
  return p;
}

// Deterministic initialization: weights zero-mean Gaussian with variance
// 1/fan_in, biases zero, queries with variance 1/d_k.
inline ModelParams init_params(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  ModelParams p = zeros_like(config);
  RandomStream rng(stream_seed(seed, "init"));
  const auto fill = [&](Matrix& m, double fan_in) {
    const double sigma = 1.0 / std::sqrt(fan_in);
    for (auto& x : m.data) x = rng.normal(0.0, sigma);
  };
  fill(p.conv_w, static_cast<double>(config.kernel_size * kPositionFeatures));
  fill(p.key_w1, static_cast<double>(config.n_kernels));
  fill(p.key_w2, static_cast<double>(config.key_units));
  fill(p.queries, static_cast<double>(config.d_k));
  const double out_sigma = 1.0 / std::sqrt(static_cast<double>(p.out_w.size()));
  for (auto& x : p.out_w) x = rng.normal(0.0, out_sigma);
  return p;
}

// Per-sequence embedding with everything backward needs: the max-pooled
// activations, the winning position per kernel, and the pre-activation there.
struct SeqEmbedding {
  std::vector<double> z;           // n_kernels
  std::vector<std::int32_t> winner;  // position per kernel
  std::vector<double> pre_winner;  // pre-activation at the winner
};

// 1D convolution with zero "same" padding, SELU, and masked global max over
// the real (non-padded) positions. Ties go to the first maximal position.
inline SeqEmbedding embed_sequence_cached(const ModelParams& params,
                                          const ModelConfig& config,
                                          const EncodedSequence& enc) {
  if (enc.length < 1)
    throw std::invalid_argument("embed_sequence: sequence has no real positions");
  const std::size_t length = enc.length;
  const std::size_t ks = config.kernel_size;
  const std::size_t pad = (ks - 1) / 2;
  SeqEmbedding out;
  out.z.resize(config.n_kernels);
  out.winner.resize(config.n_kernels);
  out.pre_winner.resize(config.n_kernels);
  for (std::size_t f = 0; f < config.n_kernels; ++f) {
    const double* w = params.conv_w.row(f);
    double best_act = -std::numeric_limits<double>::infinity();
    double best_pre = 0.0;
    std::int32_t best_t = -1;
    for (std::size_t t = 0; t < length; ++t) {
      double pre = params.conv_b[f];
      for (std::size_t tap = 0; tap < ks; ++tap) {
        const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t + tap) -
                                   static_cast<std::ptrdiff_t>(pad);
        if (src < 0 || src >= static_cast<std::ptrdiff_t>(length)) continue;
        pre += dot(w + tap * kPositionFeatures,
                   enc.features.row(static_cast<std::size_t>(src)),
                   kPositionFeatures);
      }
      const double act = selu(pre);
      if (act > best_act) {
        best_act = act;
        best_pre = pre;
        best_t = static_cast<std::int32_t>(t);
      }
    }
    out.z[f] = best_act;
    out.winner[f] = best_t;
    out.pre_winner[f] = best_pre;
  }
  return out;
}

inline std::vector<double> embed_sequence(const ModelParams& params,
                                          const ModelConfig& config,
                                          const EncodedSequence& enc) {
  return embed_sequence_cached(params, config, enc).z;
}

// Key-network intermediates for one bag (row per sequence).
struct KeyCache {
  Matrix pre1;  // N x key_units
  Matrix h1;    // N x key_units
  Matrix keys;  // N x d_k
};

// k_i = W2 selu(W1 z_i + b1) + b2, applied row-wise to the embeddings.
inline KeyCache compute_keys_cached(const ModelParams& params, const Matrix& z) {
  if (z.cols != params.key_w1.cols)
    throw std::invalid_argument("compute_keys: embedding width mismatch");
  KeyCache cache;
  const std::size_t n = z.rows;
  const std::size_t units = params.key_w1.rows;
  const std::size_t dk = params.key_w2.rows;
  cache.pre1 = Matrix(n, units);
  cache.h1 = Matrix(n, units);
  cache.keys = Matrix(n, dk);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t u = 0; u < units; ++u) {
      const double pre = dot(params.key_w1.row(u), z.row(i), z.cols) + params.key_b1[u];
      cache.pre1(i, u) = pre;
      cache.h1(i, u) = selu(pre);
    }
    for (std::size_t k = 0; k < dk; ++k)
      cache.keys(i, k) =
          dot(params.key_w2.row(k), cache.h1.row(i), units) + params.key_b2[k];
  }
  return cache;
}

inline Matrix compute_keys(const ModelParams& params, const Matrix& z) {
  return compute_keys_cached(params, z).keys;
}

struct PoolResult {
  std::vector<double> pooled;  // n_kernels * n_heads, heads concatenated
  Matrix weights;              // n_heads x N
};

// Weighted mean of the embeddings; per head the weights are
// softmax(beta * keys * query).
inline PoolResult attention_pool(const Matrix& queries, const Matrix& keys,
                                 const Matrix& z, double beta) {
  if (queries.cols != keys.cols)
    throw std::invalid_argument("attention_pool: query/key width mismatch");
  if (keys.rows != z.rows)
    throw std::invalid_argument("attention_pool: key/value count mismatch");
  PoolResult out;
  const std::size_t heads = queries.rows;
  const std::size_t n = keys.rows;
  out.weights = Matrix(heads, n);
  out.pooled.assign(heads * z.cols, 0.0);
  for (std::size_t h = 0; h < heads; ++h) {
    double* w = out.weights.row(h);
    for (std::size_t i = 0; i < n; ++i)
      w[i] = beta * dot(keys.row(i), queries.row(h), keys.cols);
    softmax_inplace(w, n);
    double* dst = out.pooled.data() + h * z.cols;
    for (std::size_t i = 0; i < n; ++i) {
      const double wi = w[i];
      const double* zi = z.row(i);
      for (std::size_t j = 0; j < z.cols; ++j) dst[j] += wi * zi[j];
    }
  }
  return out;
}

struct ForwardResult {
  double probability = 0.5;
  double logit = 0.0;
  Matrix attention_weights;      // n_heads x N
  Matrix sequence_embeddings;    // N x n_kernels
  std::vector<double> repertoire_representation;  // n_kernels * n_heads
};

// Full forward pass over a bag. Invariant to the order of the sequences.
inline ForwardResult forward(const ModelParams& params, const ModelConfig& config,
                             const std::vector<EncodedSequence>& bag) {
  config.validate();
  if (bag.empty()) throw std::invalid_argument("forward: empty repertoire");
  ForwardResult out;
  const std::size_t n = bag.size();
  out.sequence_embeddings = Matrix(n, config.n_kernels);
  parallel_for(n, [&](std::size_t i) {
    const auto emb = embed_sequence_cached(params, config, bag[i]);
    for (std::size_t f = 0; f < config.n_kernels; ++f)
      out.sequence_embeddings(i, f) = emb.z[f];
  });
  const Matrix keys = compute_keys(params, out.sequence_embeddings);
  PoolResult pool =
      attention_pool(params.queries, keys, out.sequence_embeddings, config.beta());
  out.attention_weights = std::move(pool.weights);
  out.repertoire_representation = std::move(pool.pooled);
  out.logit = dot(params.out_w, out.repertoire_representation) + params.out_b;
  out.probability = sigmoid(out.logit);
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoint format: a text header (version tag, config metadata, one
// "tensor <name> <dims...>" line per tensor) terminated by "payload", then the
// tensor values as little-endian 64-bit floats in header order.

namespace detail {
inline void write_f64_le(std::ostream& os, double value) {
  std::uint64_t bits;
  std::memcpy(&bits, &value, sizeof bits);
  std::array<unsigned char, 8> bytes;
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<unsigned char>(bits >> (8 * i));
  os.write(reinterpret_cast<const char*>(bytes.data()), 8);
}

inline double read_f64_le(std::istream& is) {
  std::array<unsigned char, 8> bytes;
  is.read(reinterpret_cast<char*>(bytes.data()), 8);
  if (!is) throw DataError("checkpoint: truncated payload");
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  double value;
  std::memcpy(&value, &bits, sizeof value);
  return value;
}
}  // namespace detail

inline void save_checkpoint(const std::string& path, const ModelParams& params,
                            const ModelConfig& config) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open checkpoint for writing: " + path);
  os << kVersionTag << " checkpoint 1\n";
  os << "meta n_kernels " << config.n_kernels << "\n";
  os << "meta kernel_size " << config.kernel_size << "\n";
  os << "meta d_k " << config.d_k << "\n";
  os << "meta key_units " << config.key_units << "\n";
  os << "meta n_heads " << config.n_heads << "\n";
  char beta_buf[64];
  std::snprintf(beta_buf, sizeof beta_buf, "%.17g", config.attention_beta);
  os << "meta attention_beta " << beta_buf << "\n";
  const auto refs = tensor_refs(params);
  for (const auto& ref : refs) {
    os << "tensor " << ref.name;
    for (auto d : ref.shape) os << ' ' << d;
    os << "\n";
  }
  os << "payload\n";
  for (const auto& ref : refs)
    for (std::size_t i = 0; i < ref.size; ++i) detail::write_f64_le(os, ref.data[i]);
  if (!os) throw DataError("checkpoint write failed: " + path);
}

struct Checkpoint {
  ModelConfig config;
  ModelParams params;
};

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint: " + path);
  std::string line;
  if (!std::getline(is, line) ||
      line.rfind(std::string(kVersionTag) + " checkpoint", 0) != 0)
    throw DataError("checkpoint: bad version tag line");
  ModelConfig config;
  std::vector<std::pair<std::string, std::vector<std::size_t>>> tensors;
  while (std::getline(is, line)) {
    if (line == "payload") break;
    std::istringstream ls(line);
    std::string kind;
    ls >> kind;
    if (kind == "meta") {
      std::string key;
      ls >> key;
      if (key == "n_kernels") ls >> config.n_kernels;
      else if (key == "kernel_size") ls >> config.kernel_size;
      else if (key == "d_k") ls >> config.d_k;
      else if (key == "key_units") ls >> config.key_units;
      else if (key == "n_heads") ls >> config.n_heads;
      else if (key == "attention_beta") ls >> config.attention_beta;
      else throw DataError("checkpoint: unknown meta key " + key);
    } else if (kind == "tensor") {
      std::string name;
      ls >> name;
      std::vector<std::size_t> shape;
      std::size_t d;
      while (ls >> d) shape.push_back(d);
      tensors.emplace_back(name, shape);
    } else {
      throw DataError("checkpoint: unexpected header line: " + line);
    }
  }
  config.validate();
  Checkpoint out;
  out.config = config;
  out.params = zeros_like(config);
  auto refs = tensor_refs(out.params);
  if (tensors.size() != refs.size())
    throw DataError("checkpoint: tensor list does not match model layout");
  for (std::size_t i = 0; i < refs.size(); ++i) {
    if (tensors[i].first != refs[i].name || tensors[i].second != refs[i].shape)
      throw DataError("checkpoint: tensor " + tensors[i].first +
                      " has unexpected name or shape");
    for (std::size_t j = 0; j < refs[i].size; ++j)
      refs[i].data[j] = detail::read_f64_le(is);
  }
  return out;
}

}  // namespace rephop
