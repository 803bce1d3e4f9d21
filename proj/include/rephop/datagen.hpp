#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "rephop/common.hpp"
#include "rephop/encoding.hpp"
#include "rephop/motif.hpp"
#include "rephop/rng.hpp"
#include "rephop/threads.hpp"

namespace rephop {

// ---------------------------------------------------------------------------
// Motif realization.

// Standalone noisy realization of a motif: substitution noise picks at most
// one position (categorical over substitution_probs) and replaces it with a
// uniform amino acid, wildcards draw uniform amino acids, keep-probability
// failures also draw uniform (there is no host sequence to preserve),
// deletion positions drop with probability 0.5, and the gap inserts 0-2
// uniform amino acids. Result length = letters - deletions + gap.
inline std::string noisy_motif_instance(const MotifSpec& spec, RandomStream& rng) {
  spec.validate();
  std::string out;
  const std::size_t n = spec.letters.size();

  std::size_t substituted = n;  // n = none
  if (!spec.substitution_probs.empty()) {
    double u = rng.uniform();
    for (std::size_t i = 0; i < n; ++i) {
      if (u < spec.substitution_probs[i]) {
        substituted = i;
        break;
      }
      u -= spec.substitution_probs[i];
    }
  }

  for (std::size_t i = 0; i < n; ++i) {
    if (spec.gap && spec.gap->position == i) {
      const std::size_t g = spec.gap->lengths[rng.below(spec.gap->lengths.size())];
      for (std::size_t x = 0; x < g; ++x)
        out += kAminoAcids[rng.below(kAlphabetSize)];
    }
    if (spec.deletion_positions.count(i) && rng.bernoulli(kDeletionProb)) continue;
    char c = spec.letters[i];
    if (spec.wildcard_positions.count(i) || i == substituted ||
        (!spec.per_position_keep_prob.empty() &&
         !rng.bernoulli(spec.per_position_keep_prob[i])))
      c = kAminoAcids[rng.below(kAlphabetSize)];
    out += c;
  }
  return out;
}

enum class PositionBias { uniform, center };

namespace detail {

// Offset of an implant of width `span` into a host of length `host_len`.
// The center-biased scheme anchors at mid-1, mid+1, and mid+4 with
// probabilities 0.3, 0.35, and 0.2, and anywhere else with 0.15.
inline std::size_t implant_offset(std::size_t host_len, std::size_t span,
                                  PositionBias bias, RandomStream& rng) {
  const std::size_t max_offset = host_len - span;
  if (bias == PositionBias::uniform || max_offset == 0)
    return rng.below(max_offset + 1);
  const double u = rng.uniform();
  const std::size_t mid = host_len / 2;
  std::ptrdiff_t anchor;
  if (u < 0.3)
    anchor = static_cast<std::ptrdiff_t>(mid) - 1;
  else if (u < 0.65)
    anchor = static_cast<std::ptrdiff_t>(mid) + 1;
  else if (u < 0.85)
    anchor = static_cast<std::ptrdiff_t>(mid) + 4;
  else
    return rng.below(max_offset + 1);
  anchor = std::clamp<std::ptrdiff_t>(anchor, 0,
                                      static_cast<std::ptrdiff_t>(max_offset));
  return static_cast<std::size_t>(anchor);
}

}  // namespace detail

struct ImplantResult {
  bool implanted = false;
  std::size_t offset = 0;
  std::string window;  // the characters now occupying the implant span
};

// Writes one noisy motif instance over `host` at a biased offset. Positions
// skipped by keep-probability noise and gap positions retain the host
// characters; everything else is overwritten, so the host length is
// unchanged. Hosts shorter than the instance are left alone.
inline ImplantResult implant_motif(std::string& host, const MotifSpec& spec,
                                   PositionBias bias, RandomStream& rng) {
  const std::size_t n = spec.letters.size();

  std::size_t substituted = n;
  if (!spec.substitution_probs.empty()) {
    double u = rng.uniform();
    for (std::size_t i = 0; i < n; ++i) {
      if (u < spec.substitution_probs[i]) {
        substituted = i;
        break;
      }
      u -= spec.substitution_probs[i];
    }
  }
  std::vector<bool> deleted(n, false);
  for (std::size_t p : spec.deletion_positions)
    deleted[p] = rng.bernoulli(kDeletionProb);
  const std::size_t gap_len =
      spec.gap ? spec.gap->lengths[rng.below(spec.gap->lengths.size())] : 0;

  std::size_t span = gap_len;
  for (std::size_t i = 0; i < n; ++i) span += deleted[i] ? 0 : 1;

  ImplantResult result;
  if (span == 0 || span > host.size()) return result;
  const std::size_t offset = detail::implant_offset(host.size(), span, bias, rng);

  std::size_t cursor = offset;
  for (std::size_t i = 0; i < n; ++i) {
    if (spec.gap && spec.gap->position == i) cursor += gap_len;  // host kept
    if (deleted[i]) continue;
    const bool keep =
        spec.per_position_keep_prob.empty() || rng.bernoulli(spec.per_position_keep_prob[i]);
    if (keep) {
      char c = spec.letters[i];
      if (spec.wildcard_positions.count(i) || i == substituted)
        c = kAminoAcids[rng.below(kAlphabetSize)];
      host[cursor] = c;
    }
    ++cursor;
  }
  result.implanted = true;
  result.offset = offset;
  result.window = host.substr(offset, span);
  return result;
}

// ---------------------------------------------------------------------------
// Datasets.

struct SequenceTruth {
  std::string repertoire_file;
  std::size_t seq_index = 0;
  std::string motif;
  std::size_t offset = 0;
};

struct Dataset {
  std::vector<Repertoire> repertoires;
  std::vector<std::string> files;  // manifest-relative file per repertoire
  std::vector<SequenceTruth> ground_truth;
};

struct SimConfig {
  std::size_t n_per_class = 2500;
  double seq_count_mu = 316000.0;
  double seq_count_sigma = 132000.0;
  double min_seqs = 5000.0;
  double len_mu = 14.5;
  double len_sigma = 1.8;
  double rho = 0.1;                      // witness rate
  std::vector<double> aa_frequencies;   // empty = uniform over the alphabet
  PositionBias position_bias = PositionBias::uniform;
  double scale = 1.0;                    // shrinks counts for desk-size runs
  std::uint64_t seed = 0;

  void validate() const {
    if (n_per_class < 1) throw std::invalid_argument("SimConfig: n_per_class must be >= 1");
    if (!(rho >= 0.0 && rho <= 1.0))
      throw std::invalid_argument("SimConfig: rho must lie in [0, 1]");
    if (!(scale > 0.0)) throw std::invalid_argument("SimConfig: scale must be positive");
    if (!aa_frequencies.empty()) {
      if (aa_frequencies.size() != kAlphabetSize)
        throw std::invalid_argument("SimConfig: need 20 amino-acid frequencies");
      double total = 0.0;
      for (double f : aa_frequencies) {
        if (f < 0.0) throw std::invalid_argument("SimConfig: negative frequency");
        total += f;
      }
      if (total <= 0.0) throw std::invalid_argument("SimConfig: zero frequency mass");
    }
  }
};

namespace detail {

inline char sample_amino_acid(const std::vector<double>& cumulative, RandomStream& rng) {
  if (cumulative.empty()) return kAminoAcids[rng.below(kAlphabetSize)];
  const double u = rng.uniform() * cumulative.back();
  const auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u);
  const std::size_t idx = std::min<std::size_t>(
      static_cast<std::size_t>(it - cumulative.begin()), kAlphabetSize - 1);
  return kAminoAcids[idx];
}

inline std::size_t sample_length(double mu, double sigma, RandomStream& rng) {
  for (;;) {
    const long v = std::lround(rng.normal(mu, sigma));
    if (v >= 1) return static_cast<std::size_t>(v);
  }
}

inline std::string repertoire_file_name(std::size_t index) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "repertoires/rep_%06zu.tsv", index);
  return buf;
}

inline std::string repertoire_id(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "rep_%06zu", index);
  return buf;
}

}  // namespace detail

// Random-sequence repertoires with motif implants in the positive class.
// Generation is per-repertoire seeded, so the result is byte-identical for a
// fixed seed no matter how many workers run.
inline Dataset generate_simulated_dataset(const SimConfig& config,
                                          const MotifSpec& motif) {
  config.validate();
  motif.validate();
  const std::size_t per_class = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::llround(config.scale *
                                               static_cast<double>(config.n_per_class))));
  const double mu = config.seq_count_mu * config.scale;
  const double sigma = config.seq_count_sigma * config.scale;
  const double min_seqs = std::max(1.0, config.min_seqs * config.scale);
  const std::size_t total = 2 * per_class;

  std::vector<double> cumulative;
  if (!config.aa_frequencies.empty()) {
    cumulative.resize(kAlphabetSize);
    std::partial_sum(config.aa_frequencies.begin(), config.aa_frequencies.end(),
                     cumulative.begin());
  }

  std::vector<int> labels(total, 0);
  std::fill(labels.begin(), labels.begin() + per_class, 1);
  RandomStream label_rng(stream_seed(config.seed, "labels"));
  for (std::size_t i = total; i > 1; --i)
    std::swap(labels[i - 1], labels[label_rng.below(i)]);

  Dataset dataset;
  dataset.repertoires.resize(total);
  dataset.files.resize(total);
  std::vector<std::vector<SequenceTruth>> truths(total);

  parallel_for(total, [&](std::size_t r) {
    RandomStream rng(stream_seed(config.seed, "repertoire", r));
    Repertoire rep;
    rep.id = detail::repertoire_id(r);
    rep.label = labels[r];
    std::size_t count = 0;
    for (;;) {
      const long v = std::lround(rng.normal(mu, sigma));
      if (v >= static_cast<long>(min_seqs)) {
        count = static_cast<std::size_t>(v);
        break;
      }
    }
    rep.sequences.reserve(count);
    const std::string file = detail::repertoire_file_name(r);
    for (std::size_t s = 0; s < count; ++s) {
      const std::size_t len = detail::sample_length(config.len_mu, config.len_sigma, rng);
      std::string body(len, 'A');
      for (auto& c : body) c = detail::sample_amino_acid(cumulative, rng);
      if (rep.label == 1 && rng.bernoulli(config.rho)) {
        const ImplantResult implant =
            implant_motif(body, motif, config.position_bias, rng);
        if (implant.implanted)
          truths[r].push_back({file, s, implant.window, implant.offset});
      }
      rep.sequences.push_back({std::move(body), 1});
    }
    dataset.repertoires[r] = std::move(rep);
    dataset.files[r] = file;
  });
  for (auto& t : truths)
    dataset.ground_truth.insert(dataset.ground_truth.end(), t.begin(), t.end());
  return dataset;
}

enum class SignalKind { om, mm };

inline std::vector<MotifSpec> signal_motifs(SignalKind kind) {
  MotifSpec ldr;
  ldr.letters = "LDR";
  ldr.substitution_probs = {0.2, 0.6, 0.2};
  if (kind == SignalKind::om) return {ldr};
  MotifSpec cas;
  cas.letters = "CAS";
  cas.substitution_probs = {0.3, 0.6, 0.0};
  MotifSpec gln;
  gln.letters = "GLN";
  gln.substitution_probs = {0.6, 0.0, 0.0};
  gln.gap = MotifGap{2, {0, 1, 2}};
  return {ldr, cas, gln};
}

// Implants one-motif or multi-motif signals into sequences drawn from a pool
// of observed (or stand-in) healthy sequences. Sampling within a repertoire
// is without replacement; the pool is reused across repertoires.
inline Dataset generate_implanted_signal_dataset(SignalKind kind, double rho,
                                                 const std::vector<std::string>& base_pool,
                                                 std::size_t n_per_class,
                                                 std::size_t seqs_per_rep,
                                                 std::uint64_t seed) {
  if (base_pool.size() < seqs_per_rep)
    throw DataError("base sequence pool is smaller than one repertoire");
  if (!(rho >= 0.0 && rho <= 1.0))
    throw std::invalid_argument("generate_implanted_signal_dataset: bad rho");
  const auto motifs = signal_motifs(kind);
  const std::size_t total = 2 * n_per_class;

  std::vector<int> labels(total, 0);
  std::fill(labels.begin(), labels.begin() + n_per_class, 1);
  RandomStream label_rng(stream_seed(seed, "labels"));
  for (std::size_t i = total; i > 1; --i)
    std::swap(labels[i - 1], labels[label_rng.below(i)]);

  Dataset dataset;
  dataset.repertoires.resize(total);
  dataset.files.resize(total);
  std::vector<std::vector<SequenceTruth>> truths(total);

  parallel_for(total, [&](std::size_t r) {
    RandomStream rng(stream_seed(seed, "repertoire", r));
    Repertoire rep;
    rep.id = detail::repertoire_id(r);
    rep.label = labels[r];
    const std::string file = detail::repertoire_file_name(r);

    std::vector<std::size_t> picks(base_pool.size());
    std::iota(picks.begin(), picks.end(), 0);
    for (std::size_t i = 0; i < seqs_per_rep; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(rng.below(picks.size() - i));
      std::swap(picks[i], picks[j]);
    }
    rep.sequences.reserve(seqs_per_rep);
    for (std::size_t s = 0; s < seqs_per_rep; ++s) {
      std::string body = base_pool[picks[s]];
      if (rep.label == 1 && rng.bernoulli(rho)) {
        const MotifSpec& motif = motifs[rng.below(motifs.size())];
        const ImplantResult implant =
            implant_motif(body, motif, PositionBias::center, rng);
        if (implant.implanted)
          truths[r].push_back({file, s, implant.window, implant.offset});
      }
      rep.sequences.push_back({std::move(body), 1});
    }
    dataset.repertoires[r] = std::move(rep);
    dataset.files[r] = file;
  });
  for (auto& t : truths)
    dataset.ground_truth.insert(dataset.ground_truth.end(), t.begin(), t.end());
  return dataset;
}

// ---------------------------------------------------------------------------
// Dataset files: a manifest CSV, one TSV per repertoire, and an optional
// implantation ground-truth log.

inline void write_dataset(const Dataset& dataset, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(dir) / "repertoires");
  {
    std::ofstream manifest(fs::path(dir) / "manifest.csv");
    if (!manifest) throw DataError("cannot write manifest in " + dir);
    manifest << "repertoire_file,label\n";
    for (std::size_t r = 0; r < dataset.repertoires.size(); ++r) {
      const int label = dataset.repertoires[r].label;
      manifest << dataset.files[r] << ','
               << (label == kLabelUnknown ? std::string("unknown") : std::to_string(label))
               << '\n';
    }
  }
  for (std::size_t r = 0; r < dataset.repertoires.size(); ++r) {
    std::ofstream tsv(fs::path(dir) / dataset.files[r]);
    if (!tsv) throw DataError("cannot write " + dataset.files[r]);
    tsv << "amino_acid\ttemplates\n";
    for (const auto& seq : dataset.repertoires[r].sequences)
      tsv << seq.residues << '\t' << seq.abundance << '\n';
  }
  if (!dataset.ground_truth.empty()) {
    std::ofstream log(fs::path(dir) / "ground_truth.csv");
    log << "repertoire_file,seq_index,motif,offset\n";
    for (const auto& t : dataset.ground_truth)
      log << t.repertoire_file << ',' << t.seq_index << ',' << t.motif << ','
          << t.offset << '\n';
  }
}

namespace detail {
inline std::vector<std::string> split_line(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::stringstream ss(line);
  while (std::getline(ss, item, sep)) {
    if (!item.empty() && item.back() == '\r') item.pop_back();
    out.push_back(item);
  }
  if (!line.empty() && line.back() == sep) out.push_back("");
  return out;
}
}  // namespace detail

// Strict loader for generated datasets: every file and label must be valid.
inline Dataset load_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  std::ifstream manifest(fs::path(dir) / "manifest.csv");
  if (!manifest) throw DataError("cannot open manifest.csv in " + dir);
  Dataset dataset;
  std::string line;
  std::size_t row = 0;
  if (!std::getline(manifest, line) || detail::split_line(line, ',').size() < 2)
    throw DataError("manifest.csv: missing header row");
  while (std::getline(manifest, line)) {
    ++row;
    if (line.empty()) continue;
    const auto fields = detail::split_line(line, ',');
    if (fields.size() != 2 || fields[0].empty() || fields[1].empty())
      throw DataError("manifest.csv row " + std::to_string(row) +
                      ": expected repertoire_file,label");
    int label;
    if (fields[1] == "0")
      label = 0;
    else if (fields[1] == "1")
      label = 1;
    else if (fields[1] == "unknown")
      label = kLabelUnknown;
    else
      throw DataError("manifest.csv row " + std::to_string(row) + ": bad label '" +
                      fields[1] + "'");

    const fs::path file = fs::path(dir) / fields[0];
    std::ifstream tsv(file);
    if (!tsv) throw DataError("cannot open repertoire file " + file.string());
    Repertoire rep;
    rep.id = fs::path(fields[0]).stem().string();
    rep.label = label;
    std::string tline;
    std::size_t tno = 0;
    if (!std::getline(tsv, tline))
      throw DataError(file.string() + ": empty file");
    {
      const auto header = detail::split_line(tline, '\t');
      if (header.size() < 2 || header[0] != "amino_acid" || header[1] != "templates")
        throw DataError(file.string() + ": expected header amino_acid<TAB>templates");
    }
    while (std::getline(tsv, tline)) {
      ++tno;
      if (tline.empty()) continue;
      const auto fields2 = detail::split_line(tline, '\t');
      if (fields2.size() < 2)
        throw DataError(file.string() + ":" + std::to_string(tno + 1) +
                        ": expected two tab-separated columns");
      AminoAcidSequence seq;
      seq.residues = fields2[0];
      try {
        const long long v = std::stoll(fields2[1]);
        if (v < 1)
          throw DataError(file.string() + ":" + std::to_string(tno + 1) +
                          ": template count must be >= 1");
        seq.abundance = static_cast<std::uint64_t>(v);
      } catch (const std::invalid_argument&) {
        throw DataError(file.string() + ":" + std::to_string(tno + 1) +
                        ": bad template count '" + fields2[1] + "'");
      }
      seq.validate();
      rep.sequences.push_back(std::move(seq));
    }
    if (rep.sequences.empty())
      throw DataError(file.string() + ": repertoire has no sequences");
    dataset.repertoires.push_back(std::move(rep));
    dataset.files.push_back(fields[0]);
  }
  if (dataset.repertoires.empty()) throw DataError("manifest.csv lists no repertoires");

  const fs::path truth_file = fs::path(dir) / "ground_truth.csv";
  if (fs::exists(truth_file)) {
    std::ifstream log(truth_file);
    std::string tline;
    std::getline(log, tline);  // header
    while (std::getline(log, tline)) {
      if (tline.empty()) continue;
      const auto fields = detail::split_line(tline, ',');
      if (fields.size() != 4) throw DataError("ground_truth.csv: malformed row");
      dataset.ground_truth.push_back({fields[0],
                                      static_cast<std::size_t>(std::stoull(fields[1])),
                                      fields[2],
                                      static_cast<std::size_t>(std::stoull(fields[3]))});
    }
  }
  return dataset;
}

struct CmvLoadReport {
  std::size_t loaded = 0;
  std::size_t excluded_unknown_status = 0;
  std::size_t excluded_unknown_abundance = 0;
  std::size_t counts_fixed = 0;  // non-positive counts replaced by 1
};

// Tolerant loader for cohort-style files: repertoires with an unknown label
// or no usable abundance information are excluded (and tallied) rather than
// rejected; individual counts <= 0 are replaced by 1.
inline Dataset load_cmv_format(const std::string& dir, CmvLoadReport* report = nullptr,
                               const std::string& manifest_name = "manifest.csv") {
  namespace fs = std::filesystem;
  std::ifstream manifest(fs::path(dir) / manifest_name);
  if (!manifest) throw DataError("cannot open " + manifest_name + " in " + dir);
  Dataset dataset;
  CmvLoadReport tally;
  std::string line;
  std::size_t row = 0;
  if (!std::getline(manifest, line) || detail::split_line(line, ',').size() < 2)
    throw DataError(manifest_name + ": missing header row");
  while (std::getline(manifest, line)) {
    ++row;
    if (line.empty()) continue;
    const auto fields = detail::split_line(line, ',');
    if (fields.size() != 2)
      throw DataError(manifest_name + " row " + std::to_string(row) +
                      ": expected repertoire_file,label");
    int label = kLabelUnknown;
    if (fields[1] == "0") label = 0;
    else if (fields[1] == "1") label = 1;
    if (label == kLabelUnknown) {
      ++tally.excluded_unknown_status;
      continue;
    }

    const fs::path file = fs::path(dir) / fields[0];
    std::ifstream tsv(file);
    if (!tsv) throw DataError("cannot open repertoire file " + file.string());
    std::string tline;
    if (!std::getline(tsv, tline))
      throw DataError(file.string() + ": empty file");
    const auto header = detail::split_line(tline, '\t');
    std::size_t aa_col = header.size(), count_col = header.size();
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (header[i] == "amino_acid") aa_col = i;
      if (header[i] == "templates") count_col = i;
    }
    if (aa_col == header.size() || count_col == header.size())
      throw DataError(file.string() + ": missing amino_acid or templates column");

    Repertoire rep;
    rep.id = fs::path(fields[0]).stem().string();
    rep.label = label;
    std::size_t known_counts = 0;
    std::size_t fixed = 0;
    while (std::getline(tsv, tline)) {
      if (tline.empty()) continue;
      const auto cells = detail::split_line(tline, '\t');
      if (cells.size() <= std::max(aa_col, count_col)) continue;
      AminoAcidSequence seq;
      seq.residues = cells[aa_col];
      bool valid_residues = !seq.residues.empty();
      for (char c : seq.residues)
        if (!is_amino_acid(c)) valid_residues = false;
      if (!valid_residues) continue;
      long long v = -1;
      bool numeric = true;
      try {
        v = std::stoll(cells[count_col]);
      } catch (...) {
        numeric = false;
      }
      if (numeric) ++known_counts;
      if (!numeric || v <= 0) {
        seq.abundance = 1;  // counts changed to 1
        if (numeric) ++fixed;
      } else {
        seq.abundance = static_cast<std::uint64_t>(v);
      }
      rep.sequences.push_back(std::move(seq));
    }
    if (rep.sequences.empty() || known_counts == 0) {
      ++tally.excluded_unknown_abundance;
      continue;
    }
    tally.counts_fixed += fixed;
    ++tally.loaded;
    dataset.repertoires.push_back(std::move(rep));
    dataset.files.push_back(fields[0]);
  }
  if (report) *report = tally;
  return dataset;
}

}  // namespace rephop
