#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "rephop/common.hpp"
#include "rephop/linalg.hpp"

namespace rephop {

// Canonical one-letter amino-acid alphabet, alphabetical order.
inline constexpr std::string_view kAminoAcids = "ACDEFGHIKLMNPQRSTVWY";
inline constexpr std::size_t kAlphabetSize = 20;
// 20 one-hot dims + 3 positional dims per sequence position.
inline constexpr std::size_t kPositionFeatures = 23;

inline bool is_amino_acid(char c) {
  return kAminoAcids.find(c) != std::string_view::npos;
}

inline std::size_t aa_index(char c) {
  const auto pos = kAminoAcids.find(c);
  if (pos == std::string_view::npos)
    throw DataError(std::string("character outside amino-acid alphabet: '") + c + "'");
  return pos;
}

struct AminoAcidSequence {
  std::string residues;
  std::uint64_t abundance = 1;

  void validate() const {
    if (residues.empty()) throw DataError("sequence must have length >= 1");
    if (abundance < 1) throw DataError("abundance must be >= 1");
    for (char c : residues) aa_index(c);
  }
};

inline constexpr int kLabelNegative = 0;
inline constexpr int kLabelPositive = 1;
inline constexpr int kLabelUnknown = -1;

struct Repertoire {
  std::string id;
  std::vector<AminoAcidSequence> sequences;
  int label = kLabelUnknown;

  void validate() const {
    if (sequences.empty()) throw DataError("repertoire must contain at least one sequence");
    for (const auto& s : sequences) s.validate();
  }
};

enum class AbundanceMode { none, log, log1p };

inline AbundanceMode abundance_mode_from_string(std::string_view s) {
  if (s == "none") return AbundanceMode::none;
  if (s == "log") return AbundanceMode::log;
  if (s == "log1p") return AbundanceMode::log1p;
  throw DataError("unknown abundance mode: " + std::string(s));
}

// One encoded sequence: `features` has at least `length` rows of 23 features;
// rows at index >= length are zero padding.
struct EncodedSequence {
  Matrix features;
  std::size_t length = 0;
};

// Relative-position features (start, center, end). Triangular: with
// r = t/(L-1) the start feature is max(0, 1-2r), the end feature max(0, 2r-1)
// and the center feature the remainder, so each row is non-negative and sums
// to one. A length-one sequence is all center.
inline Matrix positional_features(std::size_t length) {
  if (length < 1) throw std::invalid_argument("positional_features: length must be >= 1");
  Matrix out(length, 3);
  for (std::size_t t = 0; t < length; ++t) {
    const double r =
        length == 1 ? 0.5 : static_cast<double>(t) / static_cast<double>(length - 1);
    const double f_start = std::max(0.0, 1.0 - 2.0 * r);
    const double f_end = std::max(0.0, 2.0 * r - 1.0);
    out(t, 0) = f_start;
    out(t, 1) = 1.0 - f_start - f_end;
    out(t, 2) = f_end;
  }
  return out;
}

inline double abundance_scale(std::uint64_t abundance, AbundanceMode mode) {
  switch (mode) {
    case AbundanceMode::none:
      return 1.0;
    case AbundanceMode::log:
      return std::log(static_cast<double>(abundance));
    case AbundanceMode::log1p:
      return std::log1p(static_cast<double>(abundance));
  }
  return 1.0;
}

// One-hot amino-acid block (scaled by the abundance factor) concatenated with
// the positional features.
inline EncodedSequence encode_sequence(const AminoAcidSequence& seq,
                                       AbundanceMode mode) {
  seq.validate();
  const std::size_t length = seq.residues.size();
  EncodedSequence out;
  out.length = length;
  out.features = Matrix(length, kPositionFeatures);
  const Matrix pos = positional_features(length);
  const double scale = abundance_scale(seq.abundance, mode);
  for (std::size_t t = 0; t < length; ++t) {
    out.features(t, aa_index(seq.residues[t])) = scale;
    for (std::size_t j = 0; j < 3; ++j)
      out.features(t, kAlphabetSize + j) = pos(t, j);
  }
  return out;
}

inline EncodedSequence encode_sequence(const AminoAcidSequence& seq,
                                       bool use_abundance) {
  return encode_sequence(seq, use_abundance ? AbundanceMode::log : AbundanceMode::none);
}

// Scales every feature value in the bag by the inverse population standard
// deviation of all values, so the repertoire-wide variance becomes one. The
// mean is not subtracted. A zero-variance bag is returned unchanged.
inline void normalize_repertoire(std::vector<EncodedSequence>& bag) {
  if (bag.empty()) throw std::invalid_argument("normalize_repertoire: empty bag");
  std::size_t count = 0;
  double mean = 0.0;
  for (const auto& enc : bag)
    for (std::size_t t = 0; t < enc.length; ++t)
      for (std::size_t j = 0; j < kPositionFeatures; ++j) {
        mean += enc.features(t, j);
        ++count;
      }
  mean /= static_cast<double>(count);
  double var = 0.0;
  for (const auto& enc : bag)
    for (std::size_t t = 0; t < enc.length; ++t)
      for (std::size_t j = 0; j < kPositionFeatures; ++j) {
        const double e = enc.features(t, j) - mean;
        var += e * e;
      }
  var /= static_cast<double>(count);
  if (var <= 0.0) return;
  const double inv_std = 1.0 / std::sqrt(var);
  for (auto& enc : bag)
    for (std::size_t t = 0; t < enc.length; ++t)
      for (std::size_t j = 0; j < kPositionFeatures; ++j)
        enc.features(t, j) *= inv_std;
}

inline std::vector<EncodedSequence> encode_repertoire(const Repertoire& rep,
                                                      AbundanceMode mode,
                                                      bool normalize = true) {
  rep.validate();
  std::vector<EncodedSequence> bag;
  bag.reserve(rep.sequences.size());
  for (const auto& seq : rep.sequences) bag.push_back(encode_sequence(seq, mode));
  if (normalize) normalize_repertoire(bag);
  return bag;
}

struct PaddedBatch {
  std::vector<std::vector<EncodedSequence>> bags;  // all sequences padded
  std::vector<std::vector<std::vector<std::uint8_t>>> masks;  // 1 = real position
  std::size_t padded_length = 0;
};

// Right-pads every sequence with zero rows to the batch maximum length and
// produces the matching position masks.
inline PaddedBatch pad_batch(const std::vector<std::vector<EncodedSequence>>& bags) {
  if (bags.empty()) throw std::invalid_argument("pad_batch: empty batch");
  PaddedBatch out;
  for (const auto& bag : bags)
    for (const auto& enc : bag)
      out.padded_length = std::max(out.padded_length, enc.length);

  out.bags.resize(bags.size());
  out.masks.resize(bags.size());
  for (std::size_t b = 0; b < bags.size(); ++b) {
    out.bags[b].reserve(bags[b].size());
    out.masks[b].reserve(bags[b].size());
    for (const auto& enc : bags[b]) {
      EncodedSequence padded;
      padded.length = enc.length;
      padded.features = Matrix(out.padded_length, kPositionFeatures);
      for (std::size_t t = 0; t < enc.length; ++t)
        for (std::size_t j = 0; j < kPositionFeatures; ++j)
          padded.features(t, j) = enc.features(t, j);
      std::vector<std::uint8_t> mask(out.padded_length, 0);
      for (std::size_t t = 0; t < enc.length; ++t) mask[t] = 1;
      out.bags[b].push_back(std::move(padded));
      out.masks[b].push_back(std::move(mask));
    }
  }
  return out;
}

inline std::vector<std::vector<EncodedSequence>> unpad_batch(const PaddedBatch& batch) {
  std::vector<std::vector<EncodedSequence>> out(batch.bags.size());
  for (std::size_t b = 0; b < batch.bags.size(); ++b) {
    out[b].reserve(batch.bags[b].size());
    for (const auto& enc : batch.bags[b]) {
      EncodedSequence trimmed;
      trimmed.length = enc.length;
      trimmed.features = Matrix(enc.length, kPositionFeatures);
      for (std::size_t t = 0; t < enc.length; ++t)
        for (std::size_t j = 0; j < kPositionFeatures; ++j)
          trimmed.features(t, j) = enc.features(t, j);
      out[b].push_back(std::move(trimmed));
    }
  }
  return out;
}

}  // namespace rephop
