#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <set>

#include "rephop/encoding.hpp"
#include "rephop/rng.hpp"

using namespace rephop;

namespace {

AminoAcidSequence random_sequence(RandomStream& rng, std::size_t min_len = 1,
                                  std::size_t max_len = 20) {
  AminoAcidSequence seq;
  const std::size_t len = min_len + rng.below(max_len - min_len + 1);
  for (std::size_t i = 0; i < len; ++i)
    seq.residues += kAminoAcids[rng.below(kAlphabetSize)];
  seq.abundance = 1 + rng.below(50);
  return seq;
}

}  // namespace

TEST_CASE("positional features hit the documented anchor values") {
  const Matrix p5 = positional_features(5);
  CHECK(p5(0, 0) == 1.0);
  CHECK(p5(0, 1) == 0.0);
  CHECK(p5(0, 2) == 0.0);
  CHECK(p5(2, 0) == 0.0);
  CHECK(p5(2, 1) == 1.0);
  CHECK(p5(2, 2) == 0.0);
  CHECK(p5(1, 0) == 0.5);
  CHECK(p5(1, 1) == 0.5);
  CHECK(p5(1, 2) == 0.0);
  CHECK(p5(4, 2) == 1.0);
}

TEST_CASE("positional features are non-negative and sum to one") {
  for (std::size_t length : {1u, 2u, 3u, 7u, 40u, 41u}) {
    const Matrix p = positional_features(length);
    for (std::size_t t = 0; t < length; ++t) {
      double sum = 0.0;
      for (std::size_t j = 0; j < 3; ++j) {
        CHECK(p(t, j) >= 0.0);
        sum += p(t, j);
      }
      CHECK_THAT(sum, Catch::Matchers::WithinAbs(1.0, 1e-15));
    }
  }
  CHECK_THROWS_AS(positional_features(0), std::invalid_argument);
}

TEST_CASE("single residue encodes as one hot plus center feature") {
  const auto enc = encode_sequence(AminoAcidSequence{"A", 1}, false);
  REQUIRE(enc.features.rows == 1);
  REQUIRE(enc.features.cols == 23);
  CHECK(enc.features(0, 0) == 1.0);
  for (std::size_t j = 1; j < 20; ++j) CHECK(enc.features(0, j) == 0.0);
  CHECK(enc.features(0, 20) == 0.0);
  CHECK(enc.features(0, 21) == 1.0);
  CHECK(enc.features(0, 22) == 0.0);
}

TEST_CASE("abundance one with log scaling zeroes the one-hot block") {
  const auto enc = encode_sequence(AminoAcidSequence{"CW", 1}, true);
  for (std::size_t t = 0; t < 2; ++t)
    for (std::size_t j = 0; j < 20; ++j) CHECK(enc.features(t, j) == 0.0);
  // Positional features are untouched by the scaling.
  CHECK(enc.features(0, 20) == 1.0);
  CHECK(enc.features(1, 22) == 1.0);
}

TEST_CASE("one-hot entries carry exactly log of the abundance") {
  for (std::uint64_t abundance : {std::uint64_t{2}, std::uint64_t{7}, std::uint64_t{20}}) {
    AminoAcidSequence seq{"ACD", abundance};
    const auto enc = encode_sequence(seq, AbundanceMode::log);
    const double expected = std::log(static_cast<double>(abundance));
    CHECK(enc.features(0, aa_index('A')) == expected);
    CHECK(enc.features(1, aa_index('C')) == expected);
    CHECK(enc.features(2, aa_index('D')) == expected);
  }
  // The scaling is the plain natural log, so log(e^2) would scale to 2.
  CHECK_THAT(std::log(std::exp(2.0)), Catch::Matchers::WithinAbs(2.0, 1e-12));
}

TEST_CASE("characters outside the alphabet are rejected") {
  CHECK_THROWS_AS(encode_sequence(AminoAcidSequence{"AXB", 1}, false), DataError);
  CHECK_THROWS_AS(encode_sequence(AminoAcidSequence{"", 1}, false), DataError);
}

TEST_CASE("encoding is injective over residue strings of fixed length") {
  RandomStream rng(31);
  std::set<std::string> seen;
  std::vector<std::pair<std::string, EncodedSequence>> encoded;
  for (int i = 0; i < 60; ++i) {
    auto seq = random_sequence(rng, 6, 6);
    seq.abundance = 1;
    if (!seen.insert(seq.residues).second) continue;
    encoded.emplace_back(seq.residues, encode_sequence(seq, false));
  }
  for (std::size_t a = 0; a < encoded.size(); ++a)
    for (std::size_t b = a + 1; b < encoded.size(); ++b)
      CHECK(!(encoded[a].second.features == encoded[b].second.features));
}

TEST_CASE("normalization yields unit population variance") {
  RandomStream rng(77);
  Repertoire rep;
  rep.id = "bag";
  for (int i = 0; i < 12; ++i) rep.sequences.push_back(random_sequence(rng, 3, 15));
  auto bag = encode_repertoire(rep, AbundanceMode::log, true);

  // Independent two-pass variance over every entry.
  std::vector<double> values;
  for (const auto& enc : bag)
    for (std::size_t t = 0; t < enc.length; ++t)
      for (std::size_t j = 0; j < kPositionFeatures; ++j)
        values.push_back(enc.features(t, j));
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(values.size());
  double var = 0.0;
  for (double v : values) var += (v - mean) * (v - mean);
  var /= static_cast<double>(values.size());
  CHECK_THAT(var, Catch::Matchers::WithinAbs(1.0, 1e-9));
}

TEST_CASE("normalization is idempotent") {
  RandomStream rng(78);
  Repertoire rep;
  rep.id = "bag";
  for (int i = 0; i < 6; ++i) rep.sequences.push_back(random_sequence(rng));
  auto bag = encode_repertoire(rep, AbundanceMode::none, true);
  auto again = bag;
  normalize_repertoire(again);
  for (std::size_t i = 0; i < bag.size(); ++i)
    for (std::size_t k = 0; k < bag[i].features.size(); ++k)
      CHECK_THAT(again[i].features.data[k],
                 Catch::Matchers::WithinAbs(bag[i].features.data[k], 1e-9));
}

TEST_CASE("zero variance bags pass through unchanged") {
  std::vector<EncodedSequence> bag;
  EncodedSequence enc;
  enc.length = 4;
  enc.features = Matrix(4, kPositionFeatures, 0.0);
  bag.push_back(enc);
  auto copy = bag;
  normalize_repertoire(copy);
  CHECK(copy[0].features == bag[0].features);
}

TEST_CASE("already unit variance bags stay put") {
  // Construct values with population variance exactly 1 around mean 0.5:
  // half the entries 1.5 and half -0.5 gives variance 1.
  EncodedSequence enc;
  enc.length = 2;
  enc.features = Matrix(2, kPositionFeatures);
  for (std::size_t j = 0; j < kPositionFeatures; ++j) {
    enc.features(0, j) = 1.5;
    enc.features(1, j) = -0.5;
  }
  std::vector<EncodedSequence> bag{enc};
  normalize_repertoire(bag);
  for (std::size_t j = 0; j < kPositionFeatures; ++j) {
    CHECK_THAT(bag[0].features(0, j), Catch::Matchers::WithinAbs(1.5, 1e-12));
    CHECK_THAT(bag[0].features(1, j), Catch::Matchers::WithinAbs(-0.5, 1e-12));
  }
}

TEST_CASE("pad batch pads to the maximum length with masks") {
  RandomStream rng(9);
  std::vector<std::vector<EncodedSequence>> bags(2);
  bags[0].push_back(encode_sequence(AminoAcidSequence{"ACD", 1}, false));
  bags[1].push_back(encode_sequence(AminoAcidSequence{"WYWYW", 1}, false));
  const auto padded = pad_batch(bags);
  CHECK(padded.padded_length == 5);
  CHECK(padded.bags[0][0].features.rows == 5);
  CHECK(padded.bags[1][0].features.rows == 5);
  for (std::size_t t = 3; t < 5; ++t) {
    for (std::size_t j = 0; j < kPositionFeatures; ++j)
      CHECK(padded.bags[0][0].features(t, j) == 0.0);
    CHECK(padded.masks[0][0][t] == 0);
  }
  for (std::size_t t = 0; t < 3; ++t) CHECK(padded.masks[0][0][t] == 1);
  for (std::size_t t = 0; t < 5; ++t) CHECK(padded.masks[1][0][t] == 1);
}

TEST_CASE("single sequence pad batch is the identity with an all-true mask") {
  std::vector<std::vector<EncodedSequence>> bags(1);
  bags[0].push_back(encode_sequence(AminoAcidSequence{"GHIK", 3}, true));
  const auto padded = pad_batch(bags);
  CHECK(padded.bags[0][0].features == bags[0][0].features);
  for (auto m : padded.masks[0][0]) CHECK(m == 1);
}

TEST_CASE("pad then unpad restores the batch exactly") {
  RandomStream rng(55);
  std::vector<std::vector<EncodedSequence>> bags(3);
  for (auto& bag : bags) {
    const std::size_t n = 1 + rng.below(5);
    for (std::size_t i = 0; i < n; ++i)
      bag.push_back(encode_sequence(random_sequence(rng, 2, 18), true));
  }
  const auto round = unpad_batch(pad_batch(bags));
  REQUIRE(round.size() == bags.size());
  for (std::size_t b = 0; b < bags.size(); ++b) {
    REQUIRE(round[b].size() == bags[b].size());
    for (std::size_t i = 0; i < bags[b].size(); ++i) {
      CHECK(round[b][i].length == bags[b][i].length);
      CHECK(round[b][i].features == bags[b][i].features);
    }
  }
}
