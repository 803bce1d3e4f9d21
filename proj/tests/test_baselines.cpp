#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "rephop/baselines.hpp"

using namespace rephop;

namespace {

const std::string kAtchleyPath = std::string(REPHOP_SOURCE_DIR) + "/data/atchley_factors.tsv";

KmerVector from_pairs(std::initializer_list<std::pair<const char*, double>> pairs) {
  KmerVector v;
  for (const auto& [k, value] : pairs) v[k] = value;
  return v;
}

KmerVector random_sparse(RandomStream& rng) {
  KmerVector v;
  const std::size_t n = rng.below(8);
  for (std::size_t i = 0; i < n; ++i) {
    std::string key;
    for (int c = 0; c < 4; ++c) key += kAminoAcids[rng.below(kAlphabetSize)];
    v[key] = rng.uniform(0.0, 5.0);
  }
  return v;
}

Repertoire make_rep(std::initializer_list<const char*> seqs, int label = 1) {
  Repertoire rep;
  rep.id = "r";
  rep.label = label;
  for (const char* s : seqs) rep.sequences.push_back({s, 1});
  return rep;
}

// Exhaustive pairwise coordinate-descent oracle for the SVM dual: sweeps all
// (i, j) pairs with the analytic two-variable solve until the objective stops
// moving. Slow but independent of the SMO working-set logic.
std::vector<double> slow_svm_oracle(const Matrix& gram, const std::vector<int>& y,
                                    double c) {
  const std::size_t n = y.size();
  std::vector<double> alpha(n, 0.0), g(n, 1.0);
  for (int sweep = 0; sweep < 20000; ++sweep) {
    double moved = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        if (i == j) continue;
        const double vi = y[i] * g[i];
        const double vj = y[j] * g[j];
        if (vi <= vj) continue;
        const bool up_ok = y[i] == 1 ? alpha[i] < c : alpha[i] > 0.0;
        const bool lo_ok = y[j] == 1 ? alpha[j] > 0.0 : alpha[j] < c;
        if (!up_ok || !lo_ok) continue;
        const double quad =
            std::max(gram(i, i) + gram(j, j) - 2.0 * gram(i, j), 1e-12);
        const double room_i = y[i] == 1 ? c - alpha[i] : alpha[i];
        const double room_j = y[j] == 1 ? alpha[j] : c - alpha[j];
        const double lambda = std::min({(vi - vj) / quad, room_i, room_j});
        if (lambda <= 0.0) continue;
        alpha[i] += y[i] * lambda;
        alpha[j] -= y[j] * lambda;
        for (std::size_t k = 0; k < n; ++k)
          g[k] += lambda * y[k] * (gram(j, k) - gram(i, k));
        moved += lambda;
      }
    if (moved < 1e-12) break;
  }
  return alpha;
}

}  // namespace

TEST_CASE("k-mer counting on single sequences") {
  const auto v = sequence_kmers("CASSL", 4);
  REQUIRE(v.size() == 2);
  CHECK(v.at("CASS") == 1.0);
  CHECK(v.at("ASSL") == 1.0);

  const auto rep = sequence_kmers("AAAAA", 4);
  REQUIRE(rep.size() == 1);
  CHECK(rep.at("AAAA") == 2.0);

  CHECK(sequence_kmers("ACD", 4).empty());
}

TEST_CASE("repertoire k-mer representation averages over the bag") {
  const auto rep = make_rep({"CASS", "CASS"});
  const auto v = kmer_representation(rep, 4, false);
  REQUIRE(v.size() == 1);
  CHECK(v.at("CASS") == 1.0);

  const auto mixed = make_rep({"CASS", "WYWW"});
  const auto mv = kmer_representation(mixed, 4, false);
  CHECK(mv.at("CASS") == 0.5);
  CHECK(mv.at("WYWW") == 0.5);

  const auto binary = kmer_representation(mixed, 4, true);
  CHECK(binary.at("CASS") == 1.0);
  CHECK(binary.at("WYWW") == 1.0);
}

TEST_CASE("minmax kernel examples") {
  const auto u = from_pairs({{"AAAA", 2.0}, {"CCCC", 1.0}});
  const auto v = from_pairs({{"AAAA", 1.0}, {"CCCC", 3.0}});
  CHECK_THAT(minmax_kernel(u, v), Catch::Matchers::WithinAbs(0.4, 1e-15));
  CHECK(minmax_kernel(u, u) == 1.0);
  const auto w = from_pairs({{"DDDD", 5.0}});
  CHECK(minmax_kernel(u, w) == 0.0);
  CHECK(minmax_kernel(KmerVector{}, KmerVector{}) == 1.0);
}

TEST_CASE("jaccard kernel examples") {
  const auto ab = from_pairs({{"AAAA", 3.0}, {"CCCC", 0.5}});
  const auto bc = from_pairs({{"CCCC", 9.0}, {"DDDD", 1.0}});
  CHECK_THAT(jaccard_kernel(ab, bc), Catch::Matchers::WithinAbs(1.0 / 3.0, 1e-15));
  CHECK(jaccard_kernel(ab, ab) == 1.0);
  const auto disjoint = from_pairs({{"EEEE", 1.0}});
  CHECK(jaccard_kernel(ab, disjoint) == 0.0);
}

TEST_CASE("kernel axioms hold on random sparse vectors") {
  RandomStream rng(1);
  for (int trial = 0; trial < 300; ++trial) {
    const auto u = random_sparse(rng);
    const auto v = random_sparse(rng);
    const double mm = minmax_kernel(u, v);
    const double jj = jaccard_kernel(u, v);
    CHECK(mm == minmax_kernel(v, u));
    CHECK(jj == jaccard_kernel(v, u));
    CHECK(mm >= 0.0);
    CHECK(mm <= 1.0);
    CHECK(jj >= 0.0);
    CHECK(jj <= 1.0);
    CHECK(minmax_kernel(u, u) == 1.0);
    CHECK(jaccard_kernel(binarize(u), binarize(v)) == jj);
    // Distances d = 1 - k: symmetric with d(u, u) = 0.
    CHECK(1.0 - minmax_kernel(u, u) == 0.0);
  }
}

TEST_CASE("svm solves the two-point hard margin problem analytically") {
  Matrix gram(2, 2);
  gram.data = {1.0, -1.0, -1.0, 1.0};
  const std::vector<int> y{1, -1};
  const auto sol = svm_fit(gram, y, 1000.0);
  CHECK_THAT(sol.alpha[0], Catch::Matchers::WithinAbs(0.5, 1e-9));
  CHECK_THAT(sol.alpha[1], Catch::Matchers::WithinAbs(0.5, 1e-9));
  CHECK_THAT(sol.bias, Catch::Matchers::WithinAbs(0.0, 1e-9));
}

TEST_CASE("svm with a single class keeps a constant score sign") {
  RandomStream rng(2);
  std::vector<KmerVector> vectors;
  for (int i = 0; i < 5; ++i) vectors.push_back(random_sparse(rng));
  const std::vector<int> y(5, 1);
  const auto model = fit_svm_model(vectors, y, 10.0, KernelKind::minmax);
  for (int i = 0; i < 10; ++i)
    CHECK(svm_score(model, random_sparse(rng)) > 0.0);
}

TEST_CASE("smo matches the exhaustive pairwise oracle on random problems") {
  RandomStream rng(3);
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<KmerVector> vectors;
    std::vector<int> y;
    for (int i = 0; i < 20; ++i) {
      auto v = random_sparse(rng);
      v["ANCH"] = rng.uniform(0.0, 2.0);  // shared key, keeps the gram dense
      vectors.push_back(v);
      y.push_back(rng.below(2) ? 1 : -1);
    }
    const Matrix gram = gram_matrix(KernelKind::minmax, vectors);
    const auto sol = svm_fit(gram, y, 5.0);
    const auto oracle = slow_svm_oracle(gram, y, 5.0);
    const double obj_smo = svm_dual_objective(gram, y, sol.alpha);
    const double obj_oracle = svm_dual_objective(gram, y, oracle);
    CHECK_THAT(obj_smo, Catch::Matchers::WithinAbs(obj_oracle, 1e-4));
    // KKT: box constraints exactly, gap within tolerance.
    for (double a : sol.alpha) {
      CHECK(a >= 0.0);
      CHECK(a <= 5.0);
    }
    CHECK(sol.kkt_gap <= 1e-5);
    double balance = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) balance += sol.alpha[i] * y[i];
    CHECK_THAT(balance, Catch::Matchers::WithinAbs(0.0, 1e-9));
  }
}

TEST_CASE("knn on a training point returns that label") {
  RandomStream rng(4);
  std::vector<KmerVector> train;
  std::vector<int> labels;
  for (int i = 0; i < 6; ++i) {
    train.push_back(random_sparse(rng));
    labels.push_back(i % 2);
  }
  for (std::size_t i = 0; i < train.size(); ++i) {
    if (train[i].empty()) continue;
    const double score = knn_predict(train, labels, train[i], 1, KernelKind::minmax);
    CHECK(score == static_cast<double>(labels[i]));
  }
}

TEST_CASE("knn with all neighbours returns the global positive fraction") {
  RandomStream rng(5);
  std::vector<KmerVector> train;
  std::vector<int> labels{1, 1, 0, 1, 0};
  for (int i = 0; i < 5; ++i) train.push_back(random_sparse(rng));
  const double score =
      knn_predict(train, labels, random_sparse(rng), 5, KernelKind::jaccard);
  CHECK_THAT(score, Catch::Matchers::WithinAbs(0.6, 1e-15));
}

TEST_CASE("knn agrees with an exhaustive sort oracle") {
  const auto a = from_pairs({{"AAAA", 1.0}});
  const auto b = from_pairs({{"AAAA", 1.0}, {"CCCC", 1.0}});
  const auto c = from_pairs({{"DDDD", 1.0}});
  const std::vector<KmerVector> train{a, b, c};
  const std::vector<int> labels{1, 0, 0};
  // Query equals a: distances are 0, 0.5, 1 -> 2 nearest are a (1) and b (0).
  const double score = knn_predict(train, labels, a, 2, KernelKind::minmax);
  CHECK_THAT(score, Catch::Matchers::WithinAbs(0.5, 1e-15));
  CHECK_THROWS_AS(knn_predict(train, labels, a, 4, KernelKind::minmax),
                  std::invalid_argument);
}

TEST_CASE("logistic regression basics") {
  LogRegModel zero;
  zero.vocab = {"AAAA"};
  zero.weights = {0.0};
  CHECK(logreg_score(zero, from_pairs({{"AAAA", 3.0}})) == 0.5);

  // Separable on one key.
  std::vector<KmerVector> xs;
  std::vector<int> ys;
  RandomStream rng(6);
  for (int i = 0; i < 20; ++i) {
    KmerVector v = random_sparse(rng);
    if (i % 2 == 0) v["SFEN"] = 1.0;
    else v.erase("SFEN");
    xs.push_back(v);
    ys.push_back(i % 2 == 0 ? 1 : 0);
  }
  LogRegConfig cfg;
  cfg.learning_rate = 0.05;
  cfg.max_updates = 1500;
  cfg.seed = 7;
  const auto model = logreg_fit(xs, ys, cfg);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < xs.size(); ++i)
    correct += (logreg_score(model, xs[i]) >= 0.5) == (ys[i] == 1);
  CHECK(correct == xs.size());
}

TEST_CASE("logistic regression coefficients shrink with the l2 penalty") {
  RandomStream rng(8);
  std::vector<KmerVector> xs;
  std::vector<int> ys;
  for (int i = 0; i < 30; ++i) {
    KmerVector v = random_sparse(rng);
    if (i % 2 == 0) v["SFEN"] = 1.0;
    xs.push_back(v);
    ys.push_back(i % 2 == 0 ? 1 : 0);
  }
  std::vector<double> norms;
  for (double l2 : {0.0, 0.01, 0.1}) {
    LogRegConfig cfg;
    cfg.learning_rate = 0.05;
    cfg.max_updates = 800;
    cfg.l2 = l2;
    cfg.seed = 9;
    const auto model = logreg_fit(xs, ys, cfg);
    norms.push_back(norm2(model.weights));
  }
  CHECK(norms[0] > norms[1]);
  CHECK(norms[1] > norms[2]);
}

TEST_CASE("phi coefficient hand values") {
  CHECK(phi_coefficient(5, 0, 0, 5) == 1.0);
  CHECK(phi_coefficient(4, 4, 4, 4) == 0.0);
  CHECK_THAT(phi_coefficient(8, 2, 2, 8), Catch::Matchers::WithinAbs(0.6, 1e-15));
  CHECK(phi_coefficient(0, 0, 10, 10) == 0.0);  // degenerate marginal
}

TEST_CASE("burden test selects the class-linked feature and scores presence") {
  std::vector<Repertoire> reps;
  std::vector<int> labels;
  RandomStream rng(10);
  for (int i = 0; i < 16; ++i) {
    Repertoire rep;
    rep.id = "r" + std::to_string(i);
    for (int s = 0; s < 5; ++s) {
      std::string body;
      for (int c = 0; c < 8; ++c) body += kAminoAcids[rng.below(kAlphabetSize)];
      rep.sequences.push_back({body, 1});
    }
    if (i % 2 == 0) rep.sequences.push_back({"WSFENW", 1});
    reps.push_back(rep);
    labels.push_back(i % 2 == 0 ? 1 : 0);
  }
  const auto model = burden_fit(reps, labels, 3, BurdenFeatureKind::fourmer);
  REQUIRE(model.features.size() == 3);
  CHECK(model.phi[0] == 1.0);
  // The top features must be 4-mers of the implanted WSFENW witness.
  const std::set<std::string> witness{"WSFE", "SFEN", "FENW"};
  CHECK(witness.count(model.features[0]) == 1);

  CHECK(burden_score(model, reps[0]) > burden_score(model, reps[1]));

  const auto seq_model = burden_fit(reps, labels, 2, BurdenFeatureKind::sequence);
  CHECK(seq_model.features[0] == "WSFENW");
}

TEST_CASE("burden phi matches the brute-force contingency on random data") {
  RandomStream rng(11);
  std::vector<Repertoire> reps;
  std::vector<int> labels;
  for (int i = 0; i < 12; ++i) {
    Repertoire rep;
    rep.id = "r" + std::to_string(i);
    for (int s = 0; s < 3; ++s) {
      std::string body;
      for (int c = 0; c < 6; ++c) body += kAminoAcids[rng.below(3)];  // tiny alphabet
      rep.sequences.push_back({body, 1});
    }
    reps.push_back(rep);
    labels.push_back(static_cast<int>(rng.below(2)));
  }
  if (std::count(labels.begin(), labels.end(), 1) == 0) labels[0] = 1;
  if (std::count(labels.begin(), labels.end(), 0) == 0) labels[1] = 0;
  const auto model = burden_fit(reps, labels, 1000, BurdenFeatureKind::fourmer);
  for (std::size_t f = 0; f < model.features.size(); ++f) {
    double n11 = 0, n10 = 0, n01 = 0, n00 = 0;
    for (std::size_t r = 0; r < reps.size(); ++r) {
      bool present = false;
      for (const auto& seq : reps[r].sequences)
        if (seq.residues.find(model.features[f]) != std::string::npos) present = true;
      if (present)
        (labels[r] == 1 ? n11 : n10) += 1.0;
      else
        (labels[r] == 1 ? n01 : n00) += 1.0;
    }
    const double denom = std::sqrt((n11 + n10) * (n01 + n00) * (n11 + n01) * (n10 + n00));
    const double expected = denom == 0.0 ? 0.0 : (n11 * n00 - n10 * n01) / denom;
    CHECK(model.phi[f] == expected);
  }
}

TEST_CASE("atchley table loads and encodes 4-mers") {
  const auto table = AtchleyTable::load(kAtchleyPath);
  CHECK_THAT(table.row('A')[0], Catch::Matchers::WithinAbs(-0.591, 1e-12));
  CHECK_THAT(table.row('Y')[4], Catch::Matchers::WithinAbs(1.512, 1e-12));
  const auto f = atchley_encode(table, "ACDY", 0.25);
  CHECK(f[0] == table.row('A')[0]);
  CHECK(f[5] == table.row('C')[0]);
  CHECK(f[10] == table.row('D')[0]);
  CHECK(f[15] == table.row('Y')[0]);
  CHECK(f[20] == 0.25);
  CHECK_THROWS_AS(AtchleyTable::load("no_such_file.tsv"), DataError);
}

TEST_CASE("logistic mil with zero weights scores one half") {
  const auto table = AtchleyTable::load(kAtchleyPath);
  LogisticMilModel model;  // zero weights, zero bias
  const auto rep = make_rep({"ACDEFG"});
  CHECK(logistic_mil_score(table, model, rep) == 0.5);
}

TEST_CASE("logistic mil bag score is the maximum instance score") {
  const auto table = AtchleyTable::load(kAtchleyPath);
  LogisticMilModel model;
  RandomStream rng(12);
  for (auto& w : model.weights) w = rng.normal();
  model.bias = 0.2;
  const auto rep = make_rep({"ACDEFGH", "WWYY", "SSSST"});

  // Brute force over every 4-mer instance.
  double best = -1e300;
  std::map<std::string, double> weight;
  double total = 0.0;
  for (const auto& seq : rep.sequences) {
    if (seq.residues.size() < 4) continue;
    total += static_cast<double>(seq.residues.size() - 3);
    for (std::size_t i = 0; i + 4 <= seq.residues.size(); ++i)
      weight[seq.residues.substr(i, 4)] += 1.0;
  }
  for (const auto& [fourmer, w] : weight) {
    const auto feats = atchley_encode(table, fourmer, w / total);
    double logit = model.bias;
    for (std::size_t j = 0; j < 21; ++j) logit += model.weights[j] * feats[j];
    best = std::max(best, logit);
  }
  CHECK_THAT(logistic_mil_score(table, model, rep),
             Catch::Matchers::WithinAbs(sigmoid(best), 1e-12));

  // A single-4-mer bag scores exactly that 4-mer.
  const auto lone = make_rep({"ACDE"});
  const auto feats = atchley_encode(table, "ACDE", 1.0);
  double logit = model.bias;
  for (std::size_t j = 0; j < 21; ++j) logit += model.weights[j] * feats[j];
  CHECK_THAT(logistic_mil_score(table, model, lone),
             Catch::Matchers::WithinAbs(sigmoid(logit), 1e-12));
}

TEST_CASE("logistic mil training separates an easy dataset") {
  const auto table = AtchleyTable::load(kAtchleyPath);
  RandomStream rng(13);
  std::vector<Repertoire> reps;
  std::vector<int> labels;
  for (int i = 0; i < 12; ++i) {
    Repertoire rep;
    rep.id = "r" + std::to_string(i);
    for (int s = 0; s < 4; ++s) {
      std::string body;
      for (int c = 0; c < 8; ++c) body += kAminoAcids[rng.below(kAlphabetSize)];
      if (i % 2 == 0 && s == 0) body = "WSFENWWW";
      rep.sequences.push_back({body, 1});
    }
    reps.push_back(rep);
    labels.push_back(i % 2 == 0 ? 1 : 0);
  }
  LogisticMilConfig cfg;
  cfg.learning_rate = 0.02;
  cfg.max_epochs = 60;
  cfg.seed = 14;
  const auto model = logistic_mil_fit(table, reps, labels, cfg);
  std::vector<double> scores;
  std::vector<int> ys;
  for (std::size_t i = 0; i < reps.size(); ++i) {
    scores.push_back(logistic_mil_score(table, model, reps[i]));
    ys.push_back(labels[i]);
  }
  std::size_t correct = 0;
  for (std::size_t i = 0; i < scores.size(); ++i)
    correct += (scores[i] >= 0.5) == (ys[i] == 1);
  CHECK(correct >= 10);
}

TEST_CASE("known motif binary counting") {
  const auto spec = parse_motif("SFZN");
  const auto rep = make_rep({"AASFQNAA"});
  CHECK(known_motif_score(rep, spec, MotifScoreMode::binary) == 1.0);

  const auto absent = make_rep({"WWWWWWWW"});
  CHECK(known_motif_score(absent, spec, MotifScoreMode::binary) == 0.0);
  // Wildcards never count towards the overlap.
  CHECK(known_motif_score(absent, spec, MotifScoreMode::continuous) == 0.0);
}

TEST_CASE("known motif continuous overlap") {
  const auto spec = parse_motif("LDR");
  const auto rep = make_rep({"ADRQ"});
  // Best alignment matches D and R.
  CHECK(known_motif_score(rep, spec, MotifScoreMode::continuous) == 2.0);
  CHECK(known_motif_score(rep, spec, MotifScoreMode::binary) == 0.0);
}

TEST_CASE("known motif with a gap expands to all gap lengths") {
  const auto spec = parse_motif("GL-N");
  const auto rep = make_rep({"AGLNA", "AGLWNA", "AGLWWNA", "AGLWWWNA"});
  // Gap lengths 0, 1, 2 match the first three sequences once each.
  CHECK(known_motif_score(rep, spec, MotifScoreMode::binary) == 3.0);
}

TEST_CASE("motif longer than every sequence scores zero") {
  const auto spec = parse_motif("WWWWWWWWWW");
  const auto rep = make_rep({"ACD", "WW"});
  CHECK(known_motif_score(rep, spec, MotifScoreMode::binary) == 0.0);
  CHECK(known_motif_score(rep, spec, MotifScoreMode::continuous) == 0.0);
}
