// rephop: repertoire classification and Hopfield retrieval toolkit.
//
// Subcommands: generate, train, evaluate, baseline, capacity, interpret.
// Every run writes a run_manifest.json next to its outputs. All randomness
// flows from --seed through named substreams, so reruns with the same seed
// and thread cap reproduce outputs byte for byte.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "rephop/baselines.hpp"
#include "rephop/datagen.hpp"
#include "rephop/eval.hpp"
#include "rephop/hopfield.hpp"
#include "rephop/interpret.hpp"
#include "rephop/manifest.hpp"
#include "rephop/model.hpp"
#include "rephop/pipeline.hpp"
#include "rephop/train.hpp"

namespace fs = std::filesystem;
using namespace rephop;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

std::vector<std::string> collect_args(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return args;
}

struct CommonFlags {
  std::uint64_t seed = 0;
  int threads = 0;
};

void add_common(CLI::App* cmd, CommonFlags& flags) {
  cmd->add_option("--seed", flags.seed, "Root random seed");
  cmd->add_option("--threads", flags.threads, "Worker thread cap (RH_THREADS also works)");
}

void apply_threads(const CommonFlags& flags) {
  if (flags.threads > 0) set_max_threads(flags.threads);
}

std::vector<std::string> load_sequence_pool(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open base sequence pool: " + path);
  std::vector<std::string> pool;
  std::string line;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    for (char c : line)
      if (!is_amino_acid(c))
        throw DataError(path + ": sequence with non-alphabet character: " + line);
    pool.push_back(line);
  }
  if (pool.empty()) throw DataError(path + ": no sequences");
  return pool;
}

std::vector<double> load_frequencies(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open amino-acid frequency file: " + path);
  std::vector<double> freqs(kAlphabetSize, 0.0);
  std::string aa;
  double value;
  while (is >> aa >> value) {
    if (aa.size() != 1) throw DataError(path + ": bad amino acid " + aa);
    freqs[aa_index(aa[0])] = value;
  }
  return freqs;
}

// ---------------------------------------------------------------------------

int run_generate(const std::string& kind, const std::string& motif_text, double rho,
                 std::size_t n_per_class, std::size_t seqs_per_rep, double scale,
                 const std::string& bias_name, const std::string& pool_file,
                 std::size_t pool_size, double seq_mu, double seq_sigma,
                 double min_seqs, double len_mu, double len_sigma,
                 const std::string& freq_file, const std::string& out,
                 const CommonFlags& flags) {
  Dataset dataset;
  if (kind == "simulated") {
    SimConfig config;
    config.n_per_class = n_per_class;
    config.rho = rho;
    config.scale = scale;
    config.seq_count_mu = seq_mu;
    config.seq_count_sigma = seq_sigma;
    config.min_seqs = min_seqs;
    config.len_mu = len_mu;
    config.len_sigma = len_sigma;
    config.seed = flags.seed;
    config.position_bias =
        bias_name == "center" ? PositionBias::center : PositionBias::uniform;
    if (!freq_file.empty()) config.aa_frequencies = load_frequencies(freq_file);
    dataset = generate_simulated_dataset(config, parse_motif(motif_text));
  } else {
    const SignalKind signal = kind == "om" ? SignalKind::om : SignalKind::mm;
    std::vector<std::string> pool;
    if (!pool_file.empty()) {
      pool = load_sequence_pool(pool_file);
    } else {
      // Stand-in pool of healthy sequences from the length model.
      RandomStream rng(stream_seed(flags.seed, "base-pool"));
      pool.reserve(pool_size);
      for (std::size_t i = 0; i < pool_size; ++i) {
        const std::size_t len = rephop::detail::sample_length(len_mu, len_sigma, rng);
        std::string s(len, 'A');
        for (auto& c : s) c = kAminoAcids[rng.below(kAlphabetSize)];
        pool.push_back(std::move(s));
      }
    }
    const std::size_t per_class = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::llround(scale * static_cast<double>(n_per_class))));
    const std::size_t per_rep = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::llround(scale * static_cast<double>(seqs_per_rep))));
    dataset = generate_implanted_signal_dataset(signal, rho, pool, per_class, per_rep,
                                                flags.seed);
  }
  write_dataset(dataset, out);
  std::size_t sequences = 0;
  for (const auto& rep : dataset.repertoires) sequences += rep.sequences.size();
  std::cout << "wrote " << dataset.repertoires.size() << " repertoires ("
            << sequences << " sequences, " << dataset.ground_truth.size()
            << " implants) to " << out << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------

int run_train(const std::string& data_dir, const std::string& config_file,
              const std::string& out, const CommonFlags& flags) {
  ModelConfig mc;
  TrainConfig tc;
  AbundanceMode abundance = AbundanceMode::log;
  double val_fraction = 0.2;
  if (!config_file.empty()) {
    const auto settings = parse_config_file(config_file);
    apply_settings(settings, mc, tc, &abundance, &val_fraction);
  }
  tc.seed = flags.seed;

  const Dataset dataset = load_dataset(data_dir);
  MethodContext context(dataset, abundance, "", std::nullopt);
  const auto& bags = context.encoded();

  std::vector<std::size_t> ids(bags.size());
  std::iota(ids.begin(), ids.end(), 0);
  const auto [train_ids, val_ids] =
      stratified_split(ids, context.labels(), val_fraction, stream_seed(flags.seed, "split"));
  std::vector<LabeledBag> train, val;
  for (std::size_t id : train_ids) train.push_back(bags[id]);
  for (std::size_t id : val_ids) val.push_back(bags[id]);

  const TrainResult result = train_loop(train, val, tc, mc);

  fs::create_directories(out);
  save_checkpoint((fs::path(out) / "model.rph").string(), result.params, mc);
  std::ofstream history(fs::path(out) / "history.csv");
  history << "update,train_loss,val_loss,val_auc\n";
  char buf[160];
  for (const auto& row : result.history) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g\n", row.update,
                  row.train_loss, row.val_loss, row.val_auc);
    history << buf;
  }
  std::cout << "trained " << tc.max_updates << " updates; best val loss "
            << result.best_val_loss << " at update " << result.best_update << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------

void write_results_csv(const std::string& path, const std::string& method,
                       const std::vector<FoldResult>& results) {
  fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream os(path);
  if (!os) throw DataError("cannot write results to " + path);
  os << "method,fold,hyperparams,auc,f1,balanced_accuracy,accuracy\n";
  char buf[256];
  for (const auto& r : results) {
    std::snprintf(buf, sizeof buf, "%s,%zu,%s,%.6f,%.6f,%.6f,%.6f\n", method.c_str(),
                  r.fold, r.hyperparams.c_str(), r.auc, r.f1, r.balanced_accuracy,
                  r.accuracy);
    os << buf;
  }
}

int run_evaluate(const std::string& data_dir, const std::string& method,
                 const std::string& grid_file, std::size_t folds,
                 const std::string& out_csv, const std::string& motif_text,
                 const std::string& atchley_path, const std::string& abundance_name,
                 const CommonFlags& flags) {
  const Dataset dataset = load_dataset(data_dir);
  std::optional<MotifSpec> motif;
  if (!motif_text.empty()) motif = parse_motif(motif_text);
  MethodContext context(dataset, abundance_mode_from_string(abundance_name),
                        atchley_path, motif);

  std::vector<GridPoint> grid{GridPoint{}};
  if (!grid_file.empty()) grid = expand_grid(parse_grid_file(grid_file));

  const MethodFit fit = make_method_fit(method, context);
  const auto results = nested_cv(context.labels(), fit, grid, folds, flags.seed);
  write_results_csv(out_csv, method, results);

  double mean_auc = 0.0;
  for (const auto& r : results) mean_auc += r.auc;
  mean_auc /= static_cast<double>(results.size());
  std::cout << method << ": mean test AUC " << mean_auc << " over " << results.size()
            << " folds -> " << out_csv << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------

int run_capacity(double beta, double k, long d, double p, bool empirical,
                 std::size_t n_patterns, std::size_t trials, double noise,
                 const CommonFlags& flags) {
  const CapacityBound bound = capacity_bound(beta, k, d, p);
  char buf[256];
  if (!empirical) {
    std::printf("a,b,c,n_bound,feasible\n");
    std::snprintf(buf, sizeof buf, "%.10g,%.10g,%.10g,%.10g,%d\n", bound.a, bound.b,
                  bound.c, bound.n_bound, bound.feasible ? 1 : 0);
    std::fputs(buf, stdout);
  } else {
    const double rate = empirical_capacity_experiment(d, n_patterns, k, beta, noise,
                                                      trials, flags.seed);
    std::printf("a,b,c,n_bound,feasible,success_rate\n");
    std::snprintf(buf, sizeof buf, "%.10g,%.10g,%.10g,%.10g,%d,%.6f\n", bound.a,
                  bound.b, bound.c, bound.n_bound, bound.feasible ? 1 : 0, rate);
    std::fputs(buf, stdout);
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------

int run_interpret(const std::string& model_file, const std::string& data_dir,
                  std::size_t steps, const std::string& out,
                  const std::string& abundance_name, const CommonFlags& flags) {
  (void)flags;
  const Checkpoint checkpoint = load_checkpoint(model_file);
  const Dataset dataset = load_dataset(data_dir);
  MethodContext context(dataset, abundance_mode_from_string(abundance_name), "",
                        std::nullopt);
  const auto& bags = context.encoded();

  // Kernel attributions per repertoire, averaged into motif summaries.
  std::vector<std::vector<AttributionMap>> per_rep(bags.size());
  parallel_for(bags.size(), [&](std::size_t i) {
    per_rep[i] = integrated_gradients_kernels(checkpoint.params, checkpoint.config,
                                              bags[i].sequences, steps);
  });
  const MotifSummary summary = aggregate_motifs(per_rep);

  fs::create_directories(out);
  for (std::size_t f = 0; f < summary.mean_maps.size(); ++f) {
    char name[64];
    std::snprintf(name, sizeof name, "kernel_%02zu.csv", f);
    std::ofstream os(fs::path(out) / name);
    os << "feature";
    for (std::size_t tap = 0; tap < summary.mean_maps[f].cols; ++tap)
      os << ",tap" << tap;
    os << "\n";
    for (std::size_t c = 0; c < summary.mean_maps[f].rows; ++c) {
      if (c < kAlphabetSize)
        os << kAminoAcids[c];
      else
        os << (c == 20 ? "pos_start" : c == 21 ? "pos_center" : "pos_end");
      for (std::size_t tap = 0; tap < summary.mean_maps[f].cols; ++tap) {
        char cell[32];
        std::snprintf(cell, sizeof cell, ",%.10g", summary.mean_maps[f](c, tap));
        os << cell;
      }
      os << "\n";
    }
  }

  std::ofstream report(fs::path(out) / "motif_report.txt");
  report << "kernels ranked by total positive contribution (threshold "
         << summary.threshold << ")\n";
  for (std::size_t f : summary.ranked) {
    report << "kernel " << f << "  contribution " << summary.contributions[f]
           << "  consensus " << kernel_consensus(summary.mean_maps[f]) << "\n";
  }
  report << "\ncompleteness residual (first repertoire): "
         << (per_rep.empty() ? 0.0 : per_rep[0][0].completeness_residual) << "\n";

  // Attention statistics against the implantation ground truth when present.
  if (!dataset.ground_truth.empty()) {
    std::map<std::string, std::set<std::size_t>> carriers;
    for (const auto& t : dataset.ground_truth)
      carriers[t.repertoire_file].insert(t.seq_index);
    std::vector<double> carrier_weights, other_weights;
    for (std::size_t i = 0; i < bags.size(); ++i) {
      const auto it = carriers.find(dataset.files[i]);
      if (it == carriers.end()) continue;
      const auto ranked =
          attention_ranking(checkpoint.params, checkpoint.config, bags[i].sequences);
      for (const auto& [seq_index, weight] : ranked) {
        if (it->second.count(seq_index))
          carrier_weights.push_back(weight);
        else
          other_weights.push_back(weight);
      }
    }
    if (!carrier_weights.empty() && !other_weights.empty()) {
      const auto mw = mann_whitney_u(carrier_weights, other_weights);
      report << "\nattention: " << carrier_weights.size()
             << " motif carriers vs " << other_weights.size()
             << " others, Mann-Whitney U " << mw.u_a << ", two-sided p " << mw.p
             << "\n";
    }
  }
  std::cout << "wrote kernel attributions and motif report to " << out << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"repertoire classification and Hopfield retrieval toolkit"};
  app.require_subcommand(1);

  // generate
  auto* generate = app.add_subcommand("generate", "Create a synthetic dataset");
  std::string g_kind = "simulated", g_motif = "SFEN", g_bias = "uniform";
  std::string g_pool, g_freqs, g_out = "dataset";
  double g_rho = 0.01, g_scale = 1.0;
  std::size_t g_n_per_class = 2500, g_seqs = 10000, g_pool_size = 20000;
  double g_seq_mu = 316000.0, g_seq_sigma = 132000.0, g_min_seqs = 5000.0;
  double g_len_mu = 14.5, g_len_sigma = 1.8;
  CommonFlags g_flags;
  generate->add_option("--kind", g_kind, "simulated, om, or mm")
      ->check(CLI::IsMember({"simulated", "om", "mm"}));
  generate->add_option("--motif", g_motif,
                       "Motif text (Z wildcard, lowercase deletable, - gap)");
  generate->add_option("--rho", g_rho, "Witness rate");
  generate->add_option("--n-per-class", g_n_per_class, "Repertoires per class");
  generate->add_option("--seqs", g_seqs, "Sequences per repertoire (om/mm)");
  generate->add_option("--scale", g_scale, "Scale factor on counts and sizes");
  generate->add_option("--position-bias", g_bias, "uniform or center")
      ->check(CLI::IsMember({"uniform", "center"}));
  generate->add_option("--base-pool", g_pool, "File of base sequences (om/mm)");
  generate->add_option("--pool-size", g_pool_size, "Stand-in pool size (om/mm)");
  generate->add_option("--seqs-mu", g_seq_mu, "Mean sequences per repertoire");
  generate->add_option("--seqs-sigma", g_seq_sigma, "Stddev of sequences per repertoire");
  generate->add_option("--min-seqs", g_min_seqs, "Resample below this size");
  generate->add_option("--len-mu", g_len_mu, "Mean sequence length");
  generate->add_option("--len-sigma", g_len_sigma, "Stddev of sequence length");
  generate->add_option("--aa-freqs", g_freqs, "Empirical amino-acid frequency file");
  generate->add_option("--out", g_out, "Output directory")->required();
  add_common(generate, g_flags);

  // train
  auto* train = app.add_subcommand("train", "Train the attention classifier");
  std::string t_data, t_config, t_out = "run";
  CommonFlags t_flags;
  train->add_option("--data", t_data, "Dataset directory")->required();
  train->add_option("--config", t_config, "key=value configuration file");
  train->add_option("--out", t_out, "Output directory")->required();
  add_common(train, t_flags);

  // evaluate
  auto* evaluate = app.add_subcommand("evaluate", "Nested cross-validation");
  std::string e_data, e_method = "attention", e_grid, e_out = "results.csv";
  std::string e_motif, e_atchley = "data/atchley_factors.tsv", e_abundance = "log";
  std::size_t e_folds = 5;
  CommonFlags e_flags;
  evaluate->add_option("--data", e_data, "Dataset directory")->required();
  evaluate->add_option("--method", e_method, "Method name")
      ->check(CLI::IsMember(method_names()));
  evaluate->add_option("--grid", e_grid, "Hyperparameter grid file");
  evaluate->add_option("--folds", e_folds, "Outer folds");
  evaluate->add_option("--out", e_out, "Results CSV path");
  evaluate->add_option("--motif", e_motif, "Known motif (known-motif methods)");
  evaluate->add_option("--atchley", e_atchley, "Atchley factor table (logmil)");
  evaluate->add_option("--abundance", e_abundance, "none, log, or log1p")
      ->check(CLI::IsMember({"none", "log", "log1p"}));
  add_common(evaluate, e_flags);

  // baseline
  auto* baseline = app.add_subcommand("baseline", "Nested CV for one baseline");
  std::string b_data, b_method, b_grid, b_out = "baseline_run";
  std::string b_motif, b_atchley = "data/atchley_factors.tsv", b_abundance = "log";
  std::size_t b_folds = 5;
  CommonFlags b_flags;
  baseline->add_option("--method", b_method, "Baseline method")
      ->required()
      ->check(CLI::IsMember({"svm-mm", "svm-j", "knn-mm", "knn-j", "logreg", "burden",
                             "logmil-4mer", "logmil-tcrb", "known-motif-b",
                             "known-motif-c"}));
  baseline->add_option("--data", b_data, "Dataset directory")->required();
  baseline->add_option("--grid", b_grid, "Hyperparameter grid file");
  baseline->add_option("--folds", b_folds, "Outer folds");
  baseline->add_option("--out", b_out, "Output directory");
  baseline->add_option("--motif", b_motif, "Known motif (known-motif methods)");
  baseline->add_option("--atchley", b_atchley, "Atchley factor table (logmil)");
  baseline->add_option("--abundance", b_abundance, "none, log, or log1p")
      ->check(CLI::IsMember({"none", "log", "log1p"}));
  add_common(baseline, b_flags);

  // capacity
  auto* capacity = app.add_subcommand("capacity", "Storage-capacity constants");
  double c_beta = 1.0, c_k = 3.0, c_p = 0.001, c_noise = 0.1;
  long c_d = 20;
  bool c_empirical = false;
  std::size_t c_n = 100, c_trials = 1000;
  CommonFlags c_flags;
  capacity->add_option("--beta", c_beta, "Inverse temperature")->required();
  capacity->add_option("--k", c_k, "Sphere radius factor K")->required();
  capacity->add_option("--d", c_d, "Pattern dimension")->required();
  capacity->add_option("--p", c_p, "Failure probability")->required();
  capacity->add_flag("--empirical", c_empirical, "Run the retrieval experiment");
  capacity->add_option("--n", c_n, "Patterns per trial (empirical)");
  capacity->add_option("--trials", c_trials, "Trials (empirical)");
  capacity->add_option("--noise", c_noise, "Noise scale relative to M (empirical)");
  add_common(capacity, c_flags);

  // interpret
  auto* interpret = app.add_subcommand("interpret", "Attribution and motif report");
  std::string i_model, i_data, i_out = "interpretation", i_abundance = "log";
  std::size_t i_steps = 50;
  CommonFlags i_flags;
  interpret->add_option("--model", i_model, "Checkpoint file")->required();
  interpret->add_option("--data", i_data, "Dataset directory")->required();
  interpret->add_option("--steps", i_steps, "Path integral steps");
  interpret->add_option("--out", i_out, "Output directory");
  interpret->add_option("--abundance", i_abundance, "none, log, or log1p")
      ->check(CLI::IsMember({"none", "log", "log1p"}));
  add_common(interpret, i_flags);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitUsage;
  }

  const auto args = collect_args(argc, argv);
  std::string manifest_path = "rephop_manifest.json";
  CommonFlags flags;
  std::string name;
  if (generate->parsed()) {
    flags = g_flags;
    name = "generate";
    manifest_path = (fs::path(g_out) / "run_manifest.json").string();
  } else if (train->parsed()) {
    flags = t_flags;
    name = "train";
    manifest_path = (fs::path(t_out) / "run_manifest.json").string();
  } else if (evaluate->parsed()) {
    flags = e_flags;
    name = "evaluate";
    manifest_path = fs::path(e_out).string() + ".run_manifest.json";
  } else if (baseline->parsed()) {
    flags = b_flags;
    name = "baseline";
    manifest_path = (fs::path(b_out) / "run_manifest.json").string();
  } else if (capacity->parsed()) {
    flags = c_flags;
    name = "capacity";
  } else if (interpret->parsed()) {
    flags = i_flags;
    name = "interpret";
    manifest_path = (fs::path(i_out) / "run_manifest.json").string();
  }
  apply_threads(flags);

  RunManifest manifest(name, args, flags.seed, manifest_path);
  try {
    if (train->parsed()) {
      manifest.add_input("manifest", (fs::path(t_data) / "manifest.csv").string());
      if (!t_config.empty()) manifest.add_input("config", t_config);
    } else if (evaluate->parsed()) {
      manifest.add_input("manifest", (fs::path(e_data) / "manifest.csv").string());
      if (!e_grid.empty()) manifest.add_input("grid", e_grid);
    } else if (baseline->parsed()) {
      manifest.add_input("manifest", (fs::path(b_data) / "manifest.csv").string());
      if (!b_grid.empty()) manifest.add_input("grid", b_grid);
    } else if (interpret->parsed()) {
      manifest.add_input("model", i_model);
      manifest.add_input("manifest", (fs::path(i_data) / "manifest.csv").string());
    }
    manifest.write();

    int code = kExitOk;
    if (generate->parsed()) {
      code = run_generate(g_kind, g_motif, g_rho, g_n_per_class, g_seqs, g_scale,
                          g_bias, g_pool, g_pool_size, g_seq_mu, g_seq_sigma,
                          g_min_seqs, g_len_mu, g_len_sigma, g_freqs, g_out, g_flags);
    } else if (train->parsed()) {
      code = run_train(t_data, t_config, t_out, t_flags);
    } else if (evaluate->parsed()) {
      code = run_evaluate(e_data, e_method, e_grid, e_folds, e_out, e_motif,
                          e_atchley, e_abundance, e_flags);
    } else if (baseline->parsed()) {
      fs::create_directories(b_out);
      code = run_evaluate(b_data, b_method, b_grid, b_folds,
                          (fs::path(b_out) / "results.csv").string(), b_motif,
                          b_atchley, b_abundance, b_flags);
    } else if (capacity->parsed()) {
      code = run_capacity(c_beta, c_k, c_d, c_p, c_empirical, c_n, c_trials, c_noise,
                          c_flags);
    } else if (interpret->parsed()) {
      code = run_interpret(i_model, i_data, i_steps, i_out, i_abundance, i_flags);
    }
    manifest.finalize(code == kExitOk);
    return code;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    manifest.finalize(false);
    return kExitData;
  } catch (const NumericError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    manifest.finalize(false);
    return kExitNumeric;
  } catch (const std::invalid_argument& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    manifest.finalize(false);
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    manifest.finalize(false);
    return kExitNumeric;
  }
}
