#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "rephop/baselines.hpp"
#include "rephop/datagen.hpp"
#include "rephop/eval.hpp"
#include "rephop/interpret.hpp"
#include "rephop/model.hpp"
#include "rephop/train.hpp"

namespace rephop {

// Flat key=value configuration text (same grammar as grid files, but every
// key carries exactly one value).
inline std::map<std::string, std::string> parse_config_file(const std::string& path) {
  std::map<std::string, std::string> out;
  for (const auto& [key, values] : parse_grid_file(path)) {
    if (values.size() != 1)
      throw DataError(path + ": key '" + key + "' must have exactly one value");
    out[key] = values[0];
  }
  return out;
}

namespace detail {
inline double to_double(const std::string& s, const std::string& what) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (...) {
    throw DataError("bad numeric value for " + what + ": '" + s + "'");
  }
}

inline std::size_t to_size(const std::string& s, const std::string& what) {
  const double v = to_double(s, what);
  if (v < 0 || v != std::floor(v))
    throw DataError("expected a non-negative integer for " + what + ": '" + s + "'");
  return static_cast<std::size_t>(v);
}

template <class Map>
const std::string* find_key(const Map& map, const std::string& key) {
  const auto it = map.find(key);
  return it == map.end() ? nullptr : &it->second;
}
}  // namespace detail

// Model and train settings from a key=value map; unknown keys are rejected so
// typos in grids and configs surface immediately.
inline void apply_settings(const std::map<std::string, std::string>& settings,
                           ModelConfig& model, TrainConfig& train,
                           AbundanceMode* abundance = nullptr,
                           double* val_fraction = nullptr,
                           std::set<std::string>* consumed = nullptr) {
  for (const auto& [key, value] : settings) {
    if (key == "n_kernels") model.n_kernels = detail::to_size(value, key);
    else if (key == "kernel_size") model.kernel_size = detail::to_size(value, key);
    else if (key == "d_k") model.d_k = detail::to_size(value, key);
    else if (key == "key_units") model.key_units = detail::to_size(value, key);
    else if (key == "n_heads") model.n_heads = detail::to_size(value, key);
    else if (key == "beta") model.attention_beta = detail::to_double(value, key);
    else if (key == "learning_rate") train.learning_rate = detail::to_double(value, key);
    else if (key == "batch_size") train.batch_size = detail::to_size(value, key);
    else if (key == "subsample") train.subsample_n = detail::to_size(value, key);
    else if (key == "top_fraction") train.top_fraction = detail::to_double(value, key);
    else if (key == "eval_interval") train.eval_interval = detail::to_size(value, key);
    else if (key == "max_updates") train.max_updates = detail::to_size(value, key);
    else if (key == "l2") train.l2_penalty = detail::to_double(value, key);
    else if (key == "abundance_mode" && abundance)
      *abundance = abundance_mode_from_string(value);
    else if (key == "val_fraction" && val_fraction)
      *val_fraction = detail::to_double(value, key);
    else if (consumed && consumed->count(key))
      continue;  // handled by the caller
    else
      throw DataError("unknown configuration key: " + key);
  }
}

// Shared per-dataset state for the method adapters. Expensive representations
// are built once on first use.
class MethodContext {
 public:
  MethodContext(const Dataset& dataset, AbundanceMode abundance,
                std::string atchley_path, std::optional<MotifSpec> known_motif)
      : dataset_(dataset),
        abundance_(abundance),
        atchley_path_(std::move(atchley_path)),
        known_motif_(std::move(known_motif)) {
    for (const auto& rep : dataset.repertoires) {
      if (rep.label == kLabelUnknown)
        throw DataError("repertoire " + rep.id + " has no label; cannot evaluate");
      labels_.push_back(rep.label);
    }
  }

  const Dataset& dataset() const { return dataset_; }
  const std::vector<int>& labels() const { return labels_; }
  AbundanceMode abundance() const { return abundance_; }

  const std::vector<KmerVector>& kmer_counts() {
    if (kmer_counts_.empty()) {
      kmer_counts_.resize(dataset_.repertoires.size());
      parallel_for(dataset_.repertoires.size(), [&](std::size_t i) {
        kmer_counts_[i] = kmer_representation(dataset_.repertoires[i], 4, false);
      });
    }
    return kmer_counts_;
  }

  const std::vector<KmerVector>& kmer_binary() {
    if (kmer_binary_.empty()) {
      kmer_binary_.resize(dataset_.repertoires.size());
      parallel_for(dataset_.repertoires.size(), [&](std::size_t i) {
        kmer_binary_[i] = kmer_representation(dataset_.repertoires[i], 4, true);
      });
    }
    return kmer_binary_;
  }

  const std::vector<LabeledBag>& encoded() {
    if (encoded_.empty()) {
      encoded_.resize(dataset_.repertoires.size());
      parallel_for(dataset_.repertoires.size(), [&](std::size_t i) {
        LabeledBag bag;
        bag.id = dataset_.repertoires[i].id;
        bag.label = dataset_.repertoires[i].label;
        bag.sequences = encode_repertoire(dataset_.repertoires[i], abundance_, true);
        encoded_[i] = std::move(bag);
      });
    }
    return encoded_;
  }

  const AtchleyTable& atchley() {
    if (!atchley_) atchley_ = std::make_unique<AtchleyTable>(AtchleyTable::load(atchley_path_));
    return *atchley_;
  }

  const MotifSpec& known_motif() const {
    if (!known_motif_)
      throw DataError("this method needs --motif (the known implanted motif)");
    return *known_motif_;
  }

 private:
  const Dataset& dataset_;
  std::vector<int> labels_;
  AbundanceMode abundance_;
  std::string atchley_path_;
  std::optional<MotifSpec> known_motif_;
  std::vector<KmerVector> kmer_counts_;
  std::vector<KmerVector> kmer_binary_;
  std::vector<LabeledBag> encoded_;
  std::unique_ptr<AtchleyTable> atchley_;
};

inline const std::vector<std::string>& method_names() {
  static const std::vector<std::string> names{
      "attention",   "svm-mm",       "svm-j",         "knn-mm",
      "knn-j",       "logreg",       "burden",        "logmil-4mer",
      "logmil-tcrb", "known-motif-b", "known-motif-c"};
  return names;
}

// Builds the nested-CV fit function for one method. Adapters train on
// train_ids minus val_ids (the harness hands outer-train plus its inner
// validation split on the final fit) and use val_ids for early stopping where
// the method has any.
inline MethodFit make_method_fit(const std::string& method, MethodContext& context) {
  const auto effective_train = [](const std::vector<std::size_t>& train_ids,
                                  const std::vector<std::size_t>& val_ids) {
    std::set<std::size_t> val(val_ids.begin(), val_ids.end());
    std::vector<std::size_t> out;
    out.reserve(train_ids.size());
    for (std::size_t id : train_ids)
      if (!val.count(id)) out.push_back(id);
    return out;
  };

  if (method == "attention") {
    return [&context, effective_train](const std::vector<std::size_t>& train_ids,
                                       const std::vector<std::size_t>& val_ids,
                                       const GridPoint& point, std::uint64_t seed) {
      ModelConfig mc;
      TrainConfig tc;
      AbundanceMode unused_mode = context.abundance();
      apply_settings(point, mc, tc, &unused_mode);
      tc.seed = seed;
      const auto& bags = context.encoded();
      std::vector<LabeledBag> train, val;
      for (std::size_t id : effective_train(train_ids, val_ids))
        train.push_back(bags[id]);
      for (std::size_t id : val_ids) val.push_back(bags[id]);
      auto result = std::make_shared<TrainResult>(train_loop(train, val, tc, mc));
      return MethodScorer([&context, result, mc, tc](std::size_t id) {
        const auto scores =
            evaluate_bags(result->params, mc, tc, {context.encoded()[id]});
        return scores.scores[0];
      });
    };
  }

  if (method == "svm-mm" || method == "svm-j") {
    const KernelKind kind = method == "svm-mm" ? KernelKind::minmax : KernelKind::jaccard;
    return [&context, kind, effective_train](const std::vector<std::size_t>& train_ids,
                                             const std::vector<std::size_t>& val_ids,
                                             const GridPoint& point, std::uint64_t) {
      double c = 1.0;
      for (const auto& [key, value] : point) {
        if (key == "C") c = detail::to_double(value, key);
        else throw DataError("unknown svm grid key: " + key);
      }
      const auto& vectors =
          kind == KernelKind::minmax ? context.kmer_counts() : context.kmer_binary();
      const auto ids = effective_train(train_ids, val_ids);
      std::vector<KmerVector> train;
      std::vector<int> y;
      for (std::size_t id : ids) {
        train.push_back(vectors[id]);
        y.push_back(context.labels()[id] == 1 ? 1 : -1);
      }
      auto model = std::make_shared<SvmModel>(fit_svm_model(train, y, c, kind));
      return MethodScorer([&context, model, kind](std::size_t id) {
        const auto& vecs =
            kind == KernelKind::minmax ? context.kmer_counts() : context.kmer_binary();
        return svm_score(*model, vecs[id]);
      });
    };
  }

  if (method == "knn-mm" || method == "knn-j") {
    const KernelKind kind = method == "knn-mm" ? KernelKind::minmax : KernelKind::jaccard;
    return [&context, kind, effective_train](const std::vector<std::size_t>& train_ids,
                                             const std::vector<std::size_t>& val_ids,
                                             const GridPoint& point, std::uint64_t) {
      std::size_t n_neighbors = 1;
      for (const auto& [key, value] : point) {
        if (key == "n_neighbors") n_neighbors = detail::to_size(value, key);
        else throw DataError("unknown knn grid key: " + key);
      }
      const auto& vectors =
          kind == KernelKind::minmax ? context.kmer_counts() : context.kmer_binary();
      auto ids = std::make_shared<std::vector<std::size_t>>(
          effective_train(train_ids, val_ids));
      auto train = std::make_shared<std::vector<KmerVector>>();
      auto y = std::make_shared<std::vector<int>>();
      for (std::size_t id : *ids) {
        train->push_back(vectors[id]);
        y->push_back(context.labels()[id]);
      }
      const std::size_t n = std::min<std::size_t>(n_neighbors, train->size());
      return MethodScorer([&context, train, y, n, kind](std::size_t id) {
        const auto& vecs =
            kind == KernelKind::minmax ? context.kmer_counts() : context.kmer_binary();
        return knn_predict(*train, *y, vecs[id], n, kind);
      });
    };
  }

  if (method == "logreg") {
    return [&context, effective_train](const std::vector<std::size_t>& train_ids,
                                       const std::vector<std::size_t>& val_ids,
                                       const GridPoint& point, std::uint64_t seed) {
      LogRegConfig cfg;
      cfg.seed = seed;
      for (const auto& [key, value] : point) {
        if (key == "learning_rate") cfg.learning_rate = detail::to_double(value, key);
        else if (key == "l1") cfg.l1 = detail::to_double(value, key);
        else if (key == "l2") cfg.l2 = detail::to_double(value, key);
        else if (key == "batch_size") cfg.batch_size = detail::to_size(value, key);
        else if (key == "max_updates") cfg.max_updates = detail::to_size(value, key);
        else throw DataError("unknown logreg grid key: " + key);
      }
      std::vector<KmerVector> xs;
      std::vector<int> ys;
      for (std::size_t id : effective_train(train_ids, val_ids)) {
        xs.push_back(context.kmer_counts()[id]);
        ys.push_back(context.labels()[id]);
      }
      auto model = std::make_shared<LogRegModel>(logreg_fit(xs, ys, cfg));
      return MethodScorer([&context, model](std::size_t id) {
        return logreg_score(*model, context.kmer_counts()[id]);
      });
    };
  }

  if (method == "burden") {
    return [&context, effective_train](const std::vector<std::size_t>& train_ids,
                                       const std::vector<std::size_t>& val_ids,
                                       const GridPoint& point, std::uint64_t) {
      std::size_t top_j = 100;
      BurdenFeatureKind kind = BurdenFeatureKind::fourmer;
      for (const auto& [key, value] : point) {
        if (key == "J") top_j = detail::to_size(value, key);
        else if (key == "features") {
          if (value == "4mer") kind = BurdenFeatureKind::fourmer;
          else if (value == "sequence") kind = BurdenFeatureKind::sequence;
          else throw DataError("burden features must be 4mer or sequence");
        } else {
          throw DataError("unknown burden grid key: " + key);
        }
      }
      std::vector<Repertoire> reps;
      std::vector<int> ys;
      for (std::size_t id : effective_train(train_ids, val_ids)) {
        reps.push_back(context.dataset().repertoires[id]);
        ys.push_back(context.labels()[id]);
      }
      auto model = std::make_shared<BurdenModel>(burden_fit(reps, ys, top_j, kind));
      return MethodScorer([&context, model](std::size_t id) {
        return burden_score(*model, context.dataset().repertoires[id]);
      });
    };
  }

  if (method == "logmil-4mer" || method == "logmil-tcrb") {
    const MilFrequencyMode mode =
        method == "logmil-4mer" ? MilFrequencyMode::fourmer : MilFrequencyMode::tcrb;
    return [&context, mode, effective_train](const std::vector<std::size_t>& train_ids,
                                             const std::vector<std::size_t>& val_ids,
                                             const GridPoint& point, std::uint64_t seed) {
      LogisticMilConfig cfg;
      cfg.mode = mode;
      cfg.seed = seed;
      for (const auto& [key, value] : point) {
        if (key == "learning_rate") cfg.learning_rate = detail::to_double(value, key);
        else if (key == "batch_size") cfg.batch_size = detail::to_size(value, key);
        else if (key == "max_epochs") cfg.max_epochs = detail::to_size(value, key);
        else throw DataError("unknown logmil grid key: " + key);
      }
      std::vector<Repertoire> reps;
      std::vector<int> ys;
      for (std::size_t id : effective_train(train_ids, val_ids)) {
        reps.push_back(context.dataset().repertoires[id]);
        ys.push_back(context.labels()[id]);
      }
      auto model = std::make_shared<LogisticMilModel>(
          logistic_mil_fit(context.atchley(), reps, ys, cfg));
      return MethodScorer([&context, model](std::size_t id) {
        return logistic_mil_score(context.atchley(), *model,
                                  context.dataset().repertoires[id]);
      });
    };
  }

  if (method == "known-motif-b" || method == "known-motif-c") {
    const MotifScoreMode mode =
        method == "known-motif-b" ? MotifScoreMode::binary : MotifScoreMode::continuous;
    return [&context, mode](const std::vector<std::size_t>&,
                            const std::vector<std::size_t>&, const GridPoint&,
                            std::uint64_t) {
      const MotifSpec& motif = context.known_motif();
      return MethodScorer([&context, motif, mode](std::size_t id) {
        return known_motif_score(context.dataset().repertoires[id], motif, mode);
      });
    };
  }

  throw DataError("unknown method: " + method);
}

}  // namespace rephop
