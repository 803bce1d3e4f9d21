#pragma once

#include <cctype>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "rephop/common.hpp"
#include "rephop/encoding.hpp"

namespace rephop {

// Probability that a deletion-marked position is dropped from an instance.
inline constexpr double kDeletionProb = 0.5;

struct MotifGap {
  std::size_t position = 0;               // gap opens before letters[position]
  std::vector<std::size_t> lengths{0, 1, 2};
};

// A short signal pattern: fixed letters, wildcard positions (any amino acid),
// deletable positions (dropped with probability 0.5), optional per-position
// keep probabilities, an optional single-position substitution rule, and an
// optional gap of variable length.
struct MotifSpec {
  std::string letters;
  std::set<std::size_t> wildcard_positions;
  std::set<std::size_t> deletion_positions;
  std::vector<double> per_position_keep_prob;  // empty = always implanted
  std::vector<double> substitution_probs;      // empty = no substitution noise
  std::optional<MotifGap> gap;

  void validate() const {
    if (letters.empty()) throw DataError("motif must have at least one position");
    for (std::size_t i = 0; i < letters.size(); ++i)
      if (!wildcard_positions.count(i) && !is_amino_acid(letters[i]))
        throw DataError("motif letter outside the alphabet");
    for (std::size_t p : wildcard_positions)
      if (p >= letters.size()) throw DataError("wildcard position out of range");
    for (std::size_t p : deletion_positions)
      if (p >= letters.size()) throw DataError("deletion position out of range");
    if (!per_position_keep_prob.empty() &&
        per_position_keep_prob.size() != letters.size())
      throw DataError("keep probability vector length mismatch");
    for (double p : per_position_keep_prob)
      if (p < 0.0 || p > 1.0) throw DataError("keep probability outside [0, 1]");
    if (!substitution_probs.empty()) {
      if (substitution_probs.size() != letters.size())
        throw DataError("substitution probability vector length mismatch");
      double total = 0.0;
      for (double p : substitution_probs) {
        if (p < 0.0 || p > 1.0) throw DataError("substitution probability outside [0, 1]");
        total += p;
      }
      if (total > 1.0 + 1e-12)
        throw DataError("substitution probabilities must sum to at most 1");
    }
    if (gap) {
      if (gap->position == 0 || gap->position > letters.size())
        throw DataError("gap position out of range");
      if (gap->lengths.empty()) throw DataError("gap needs at least one length");
    }
  }
};

// Text form: uppercase letter = fixed, 'Z' = wildcard, lowercase letter =
// deletable, 'z' = deletable wildcard, '-' = gap location with lengths 0-2.
// Example: "SfEN" is S F(deletable) E N; "GL-N" is G L <gap> N.
inline MotifSpec parse_motif(const std::string& text) {
  MotifSpec spec;
  for (char c : text) {
    if (c == '-') {
      if (spec.gap) throw DataError("motif may contain at most one gap");
      if (spec.letters.empty()) throw DataError("gap cannot open the motif");
      spec.gap = MotifGap{spec.letters.size(), {0, 1, 2}};
      continue;
    }
    const std::size_t index = spec.letters.size();
    if (c == 'Z') {
      spec.wildcard_positions.insert(index);
      spec.letters += 'A';  // placeholder, never emitted
    } else if (c == 'z') {
      spec.wildcard_positions.insert(index);
      spec.deletion_positions.insert(index);
      spec.letters += 'A';
    } else if (std::isupper(static_cast<unsigned char>(c))) {
      if (!is_amino_acid(c)) throw DataError(std::string("bad motif letter: ") + c);
      spec.letters += c;
    } else if (std::islower(static_cast<unsigned char>(c))) {
      const char upper = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
      if (!is_amino_acid(upper)) throw DataError(std::string("bad motif letter: ") + c);
      spec.deletion_positions.insert(index);
      spec.letters += upper;
    } else {
      throw DataError(std::string("bad motif character: ") + c);
    }
  }
  if (spec.gap && spec.gap->position >= spec.letters.size())
    throw DataError("gap cannot close the motif");
  spec.validate();
  return spec;
}

}  // namespace rephop
