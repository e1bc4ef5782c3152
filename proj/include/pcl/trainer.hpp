#pragma once

#include <algorithm>
#include <array>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "pcl/adam.hpp"
#include "pcl/checkpoint.hpp"
#include "pcl/features.hpp"
#include "pcl/models.hpp"

namespace pcl {

// ---------------------------------------------------------------------------
// Speaker-diverse corpus split. Speakers are walked in descending duration
// order (seeded tiebreak) and each goes to the side whose fill ratio lags,
// so train ends up with the most distinct speakers while durations track
// the requested ratio.
// ---------------------------------------------------------------------------

struct SplitPlan {
  std::vector<std::string> train_utterances, val_utterances;
  std::set<std::string> train_speakers, val_speakers;
  double achieved_ratio = 0.0;  // train duration / total duration
  std::vector<std::string> warnings;
};

inline SplitPlan split_corpus(const CorpusManifest& manifest, double ratio, std::uint64_t seed) {
  if (ratio <= 0.0 || ratio >= 1.0)
    throw ParameterError("split ratio must be in (0,1); a side may not be empty");
  if (manifest.entries.empty()) throw ParameterError("split_corpus: empty manifest");

  std::map<std::string, double> speaker_duration;
  for (const auto& e : manifest.entries) speaker_duration[e.speaker_id] += e.duration;

  std::vector<std::pair<std::string, double>> speakers(speaker_duration.begin(),
                                                       speaker_duration.end());
  std::sort(speakers.begin(), speakers.end(), [&](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    std::uint64_t ha = mix64(seed ^ std::hash<std::string>{}(a.first));
    std::uint64_t hb = mix64(seed ^ std::hash<std::string>{}(b.first));
    if (ha != hb) return ha < hb;
    return a.first < b.first;
  });

  double total = 0.0;
  for (const auto& [_, d] : speakers) total += d;
  const double target_train = total * ratio;
  const double target_val = total * (1.0 - ratio);

  SplitPlan plan;
  double train_d = 0.0, val_d = 0.0;
  for (const auto& [spk, dur] : speakers) {
    const double r_train = train_d / target_train;
    const double r_val = val_d / target_val;
    if (r_train <= r_val) {
      plan.train_speakers.insert(spk);
      train_d += dur;
    } else {
      plan.val_speakers.insert(spk);
      val_d += dur;
    }
  }
  if (plan.val_speakers.empty())
    plan.warnings.push_back(
        "single-speaker corpus: validation side is empty; across-speaker ABX will be empty");
  for (const auto& e : manifest.entries) {
    if (plan.train_speakers.count(e.speaker_id))
      plan.train_utterances.push_back(e.utterance_id());
    else
      plan.val_utterances.push_back(e.utterance_id());
  }
  plan.achieved_ratio = total > 0 ? train_d / total : 0.0;
  if (std::abs(plan.achieved_ratio - ratio) > 0.02) {
    std::ostringstream os;
    os << "achieved train ratio " << plan.achieved_ratio << " deviates more than 2pp from "
       << ratio << " (speaker durations are too skewed)";
    plan.warnings.push_back(os.str());
  }
  return plan;
}

inline void write_split(const std::string& path, const SplitPlan& plan) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot create " + path);
  out << "utterance,side\n";
  for (const auto& u : plan.train_utterances) out << u << ",train\n";
  for (const auto& u : plan.val_utterances) out << u << ",validation\n";
}

inline SplitPlan read_split(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::string line;
  std::getline(in, line);
  if (line != "utterance,side") throw ParseError(path + ": unexpected split header");
  SplitPlan plan;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto comma = line.find(',');
    if (comma == std::string::npos) throw ParseError(path + ": malformed split row: " + line);
    const std::string utt = line.substr(0, comma), side = line.substr(comma + 1);
    if (side == "train")
      plan.train_utterances.push_back(utt);
    else if (side == "validation")
      plan.val_utterances.push_back(utt);
    else
      throw ParseError(path + ": unknown side: " + side);
  }
  return plan;
}

// Seeded prefix of a permutation: the kept sets nest across fractions.
template <typename T>
std::vector<T> subsample(const std::vector<T>& items, double fraction, std::uint64_t seed) {
  if (fraction <= 0.0 || fraction > 1.0)
    throw ParameterError("subsample fraction must be in (0,1], got " + std::to_string(fraction));
  if (fraction == 1.0) return items;
  const std::size_t keep = std::size_t(double(items.size()) * fraction);
  std::vector<std::size_t> order(items.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  CounterRng rng(seed, streams::subsample);
  shuffle(order, rng);
  order.resize(keep);
  std::sort(order.begin(), order.end());
  std::vector<T> out;
  out.reserve(keep);
  for (auto i : order) out.push_back(items[i]);
  return out;
}

// ---------------------------------------------------------------------------
// Trainer
// ---------------------------------------------------------------------------

struct TrainerConfig {
  double lr = 1e-4;
  int batch_size = 32;
  int max_epochs = 100;
  std::vector<int> checkpoint_epochs;
  std::uint64_t seed = 1;
  double fraction = 1.0;

  void validate() const {
    if (lr <= 0) throw ParameterError("learning rate must be positive");
    if (batch_size < 1) throw ParameterError("batch size must be at least 1");
    for (int e : checkpoint_epochs)
      if (e < 1 || e > max_epochs)
        throw ParameterError("checkpoint epoch " + std::to_string(e) + " outside 1.." +
                             std::to_string(max_epochs));
  }
};

struct Preset {
  std::string name;
  ModelKind kind;
  double lr;
  std::vector<int> checkpoint_epochs;
  int max_epochs = 100;
};

inline std::vector<int> every_ten_epochs() {
  std::vector<int> v;
  for (int e = 10; e <= 100; e += 10) v.push_back(e);
  return v;
}

inline std::vector<int> first_ten_then_every_ten() {
  std::vector<int> v;
  for (int e = 1; e <= 10; ++e) v.push_back(e);
  for (int e = 20; e <= 100; e += 10) v.push_back(e);
  return v;
}

inline Preset preset_by_name(const std::string& name) {
  if (name == "apc-1") return {name, ModelKind::apc, 1e-4, every_ten_epochs()};
  if (name == "apc-2") return {name, ModelKind::apc, 1e-5, every_ten_epochs()};
  if (name == "cpc-1") return {name, ModelKind::cpc, 1e-3, every_ten_epochs()};
  if (name == "cpc-2") return {name, ModelKind::cpc, 1e-3, first_ten_then_every_ten()};
  throw ParameterError("unknown preset: " + name + " (expected apc-1|apc-2|cpc-1|cpc-2)");
}

struct RunRecord {
  struct Row {
    int epoch;
    double train_loss;
    double val_loss;
  };
  std::vector<Row> rows;
  std::vector<std::string> warnings;
  double max_grad_norm = 0.0;
};

inline void write_run_record(const std::string& path, const RunRecord& record) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot create " + path);
  out << "epoch,train_loss,val_loss\n";
  char buf[96];
  for (const auto& r : record.rows) {
    std::snprintf(buf, sizeof buf, "%d,%.6f,%.6f\n", r.epoch, r.train_loss, r.val_loss);
    out << buf;
  }
}

inline RunRecord read_run_record(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::string line;
  std::getline(in, line);
  if (line != "epoch,train_loss,val_loss")
    throw ParseError(path + ": unexpected run record header");
  RunRecord rec;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string e, t, v;
    if (!std::getline(ss, e, ',') || !std::getline(ss, t, ',') || !std::getline(ss, v))
      throw ParseError(path + ": malformed run record row: " + line);
    rec.rows.push_back({std::stoi(e), std::stod(t), std::stod(v)});
  }
  return rec;
}

struct DatasetSplit {
  std::vector<TrainingSample> train, validation;
  int dim = 0;
};

// Chunk a raw feature archive according to the split plan; normalization is
// applied first when stats are provided. Sample subsets nest across
// fractions under the same seed.
inline DatasetSplit build_dataset(std::vector<FeatureSequence> seqs, const SplitPlan& plan,
                                  const NormStats* stats, double fraction, std::uint64_t seed) {
  std::set<std::string> train_ids(plan.train_utterances.begin(), plan.train_utterances.end());
  std::set<std::string> val_ids(plan.val_utterances.begin(), plan.val_utterances.end());
  DatasetSplit ds;
  for (auto& f : seqs) {
    if (stats) normalize(f, *stats);
    auto samples = chunk(f);
    if (train_ids.count(f.source_id))
      for (auto& s : samples) ds.train.push_back(std::move(s));
    else if (val_ids.count(f.source_id))
      for (auto& s : samples) ds.validation.push_back(std::move(s));
    if (ds.dim == 0) ds.dim = f.dim;
  }
  ds.train = subsample(ds.train, fraction, seed);
  ds.validation = subsample(ds.validation, fraction, seed + 1);
  return ds;
}

namespace detail {

inline std::vector<const TrainingSample*> sorted_pointers(const std::vector<TrainingSample>& v) {
  std::vector<const TrainingSample*> p;
  p.reserve(v.size());
  for (const auto& s : v) p.push_back(&s);
  std::sort(p.begin(), p.end(), [](const TrainingSample* a, const TrainingSample* b) {
    if (a->source_id != b->source_id) return a->source_id < b->source_id;
    return a->chunk_index < b->chunk_index;
  });
  return p;
}

}  // namespace detail

// Task adapters: the train loop below is model-agnostic.
template <typename S>
struct ApcTask {
  ApcModel<S>& model;
  std::uint64_t seed;

  ModelKind kind() const { return ModelKind::apc; }
  std::map<std::string, std::string> config_kv() const { return apc_config_kv(model.cfg); }
  Tape<S>& tape() { return model.tape; }
  ParamRegistry<S>& params() { return model.params; }

  Tensor<S> loss(const SequenceBatch<S>& batch, bool training, CounterRng& dropout_rng,
                 CounterRng& /*negatives*/) {
    auto fwd = model.forward(batch, training, dropout_rng);
    return mae_loss(fwd.predictions, fwd.input, batch, model.cfg.horizon);
  }
};

template <typename S>
struct CpcTask {
  CpcModel<S>& model;
  std::uint64_t seed;

  ModelKind kind() const { return ModelKind::cpc; }
  std::map<std::string, std::string> config_kv() const { return cpc_config_kv(model.cfg); }
  Tape<S>& tape() { return model.tape; }
  ParamRegistry<S>& params() { return model.params; }

  Tensor<S> loss(const SequenceBatch<S>& batch, bool training, CounterRng& dropout_rng,
                 CounterRng& negatives) {
    auto fwd = model.forward(batch, training, dropout_rng);
    return infonce_loss(model, fwd, batch, negatives);
  }
};

// Per-epoch: seeded reshuffle, batches of `batch_size` with the final partial
// batch kept, one Adam step per batch, then a full validation pass in
// inference mode over a canonical sample order (so the reported value cannot
// depend on dataset order). Checkpoints carry parameters, Adam state and the
// losses of their epoch.
template <typename S, class Task>
RunRecord train(Task task, const TrainerConfig& cfg, const DatasetSplit& data,
                const std::string& out_dir) {
  cfg.validate();
  if (data.train.empty() || data.validation.empty())
    throw ParameterError("train: both dataset sides must be non-empty");
  std::filesystem::create_directories(out_dir);

  RunRecord record;
  AdamState<S> adam_state;
  auto params = task.params().all();
  adam_state.init_like(params);
  AdamConfig adam;
  adam.lr = cfg.lr;

  auto evaluate = [&](const std::vector<TrainingSample>& side) {
    auto order = detail::sorted_pointers(side);
    NoGradGuard<S> guard(task.tape());
    double total = 0.0, weight = 0.0;
    for (std::size_t begin = 0; begin < order.size(); begin += std::size_t(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), begin + std::size_t(cfg.batch_size));
      std::vector<const TrainingSample*> ptrs(order.begin() + std::ptrdiff_t(begin),
                                              order.begin() + std::ptrdiff_t(end));
      auto batch = make_batch<S>(ptrs, data.dim);
      CounterRng drop(cfg.seed, streams::dropout, 0xE7A1);  // unused, inference mode
      CounterRng negs(cfg.seed, streams::negatives, 0xE7A1);
      const double v = double(task.loss(batch, false, drop, negs).scalar());
      task.tape().reset();
      total += v * double(end - begin);
      weight += double(end - begin);
    }
    return total / weight;
  };

  auto save = [&](int epoch, double train_loss, double val_loss) {
    Checkpoint c;
    c.kind = task.kind();
    c.config = task.config_kv();
    fill_checkpoint_params(c, task.params());
    c.adam_m.resize(params.size());
    c.adam_v.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      c.adam_m[i].assign(adam_state.m[i].begin(), adam_state.m[i].end());
      c.adam_v[i].assign(adam_state.v[i].begin(), adam_state.v[i].end());
    }
    c.adam_t = adam_state.t;
    c.epoch = epoch;
    c.train_loss = float(train_loss);
    c.val_loss = float(val_loss);
    c.seed = cfg.seed;
    char name[32];
    std::snprintf(name, sizeof name, "epoch_%04d.pckp", epoch);
    save_checkpoint(out_dir + "/" + name, c);
  };

  const std::set<int> checkpoint_set(cfg.checkpoint_epochs.begin(),
                                     cfg.checkpoint_epochs.end());

  double initial_val = evaluate(data.validation);
  record.rows.push_back({0, evaluate(data.train), initial_val});

  std::vector<const TrainingSample*> train_ptrs = detail::sorted_pointers(data.train);
  CounterRng dropout_rng(cfg.seed, streams::dropout);
  CounterRng negatives_rng(cfg.seed, streams::negatives);

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    CounterRng shuffle_rng(cfg.seed, streams::shuffle, std::uint64_t(epoch));
    shuffle(train_ptrs, shuffle_rng);

    double train_total = 0.0, train_weight = 0.0;
    int batch_index = 0;
    for (std::size_t begin = 0; begin < train_ptrs.size();
         begin += std::size_t(cfg.batch_size), ++batch_index) {
      const std::size_t end =
          std::min(train_ptrs.size(), begin + std::size_t(cfg.batch_size));
      std::vector<const TrainingSample*> ptrs(train_ptrs.begin() + std::ptrdiff_t(begin),
                                              train_ptrs.begin() + std::ptrdiff_t(end));
      auto batch = make_batch<S>(ptrs, data.dim);
      auto loss = task.loss(batch, true, dropout_rng, negatives_rng);
      const double v = double(loss.scalar());
      backward(loss);
      const double gn = adam_step(params, adam_state, adam, {epoch, batch_index});
      record.max_grad_norm = std::max(record.max_grad_norm, gn);
      task.tape().reset();
      train_total += v * double(end - begin);
      train_weight += double(end - begin);
    }

    const double train_loss = train_total / train_weight;
    const double val_loss = evaluate(data.validation);
    record.rows.push_back({epoch, train_loss, val_loss});
    if (val_loss > 10.0 * initial_val) {
      std::ostringstream os;
      os << "validation loss " << val_loss << " at epoch " << epoch << " exceeds 10x initial "
         << initial_val << " (run continues)";
      record.warnings.push_back(os.str());
    }
    if (checkpoint_set.count(epoch)) save(epoch, train_loss, val_loss);
  }
  write_run_record(out_dir + "/record.csv", record);
  return record;
}

}  // namespace pcl
