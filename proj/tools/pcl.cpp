// pcl: predictive-coding representation lab
//   synth | featurize | train | extract | abx | correlate | report | pipeline

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "pcl/abx.hpp"
#include "pcl/adam.hpp"
#include "pcl/checkpoint.hpp"
#include "pcl/config.hpp"
#include "pcl/features.hpp"
#include "pcl/mfcc.hpp"
#include "pcl/models.hpp"
#include "pcl/pca.hpp"
#include "pcl/stats.hpp"
#include "pcl/svg.hpp"
#include "pcl/synth.hpp"
#include "pcl/trainer.hpp"
#include "pcl/wav.hpp"

namespace fs = std::filesystem;
using namespace pcl;

namespace {

void require_input(const std::string& path, const std::string& what) {
  if (path.empty()) throw ParameterError(what + " not set (flag or config key required)");
  if (!fs::exists(path)) throw IoError(what + " does not exist: " + path);
}

std::vector<std::string> sorted_subdirs(const std::string& dir) {
  std::vector<std::string> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_directory()) out.push_back(e.path().string());
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<std::string> sorted_files(const std::string& dir, const std::string& prefix,
                                      const std::string& suffix) {
  std::vector<std::string> out;
  if (!fs::exists(dir)) return out;
  for (const auto& e : fs::directory_iterator(dir)) {
    const std::string name = e.path().filename().string();
    if (name.size() >= prefix.size() + suffix.size() && name.rfind(prefix, 0) == 0 &&
        name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0)
      out.push_back(e.path().string());
  }
  std::sort(out.begin(), out.end());
  return out;
}

int epoch_from_filename(const std::string& path, const std::string& prefix) {
  const std::string name = fs::path(path).filename().string();
  return std::stoi(name.substr(prefix.size(), name.find('.') - prefix.size()));
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

struct SynthArgs {
  std::string out, config;
  int phones = 6, speakers = 5, utterances = 100;
  double duration = 2.0;
  std::uint64_t seed = 1;
};

void run_synth(const SynthArgs& a, const CLI::App* cmd) {
  SynthSpec spec;
  if (!a.config.empty()) {
    auto cfg = ExperimentConfig::load(a.config);
    spec.num_phones = int(cfg.get_int("synth.phones", a.phones));
    spec.num_speakers = int(cfg.get_int("synth.speakers", a.speakers));
    spec.num_utterances = int(cfg.get_int("synth.utterances", a.utterances));
    spec.target_utterance_s = cfg.get_double("synth.utterance_s", a.duration);
    spec.seed = std::uint64_t(cfg.get_int("train.seed", std::int64_t(a.seed)));
  } else {
    spec.num_phones = a.phones;
    spec.num_speakers = a.speakers;
    spec.num_utterances = a.utterances;
    spec.target_utterance_s = a.duration;
    spec.seed = a.seed;
  }
  // explicit flags win over config values
  if (cmd != nullptr) {
    if (cmd->count("--phones")) spec.num_phones = a.phones;
    if (cmd->count("--speakers")) spec.num_speakers = a.speakers;
    if (cmd->count("--utterances")) spec.num_utterances = a.utterances;
    if (cmd->count("--duration")) spec.target_utterance_s = a.duration;
    if (cmd->count("--seed")) spec.seed = a.seed;
  }

  auto result = generate_corpus(spec, a.out);
  for (const auto& w : result.warnings) std::cerr << "warning: " << w << '\n';
  double total = 0;
  for (const auto& e : result.manifest.entries) total += e.duration;
  std::printf("synth: %zu utterances (%.1f s), %zu items -> %s\n",
              result.manifest.entries.size(), total, result.items.size(), a.out.c_str());
}

// ---------------------------------------------------------------------------
// featurize
// ---------------------------------------------------------------------------

struct FeaturizeArgs {
  std::string config, manifest, archive, stats, split;
  double ratio = 0.8;
  std::uint64_t seed = 1;
};

MfccConfig frontend_config(const ExperimentConfig& cfg) {
  MfccConfig mc;
  mc.preemphasis = cfg.get_double("features.preemphasis", mc.preemphasis);
  mc.window_s = cfg.get_double("features.window_ms", 25.0) / 1000.0;
  mc.shift_s = cfg.get_double("features.shift_ms", 10.0) / 1000.0;
  mc.num_mel_filters = int(cfg.get_int("features.mel_filters", mc.num_mel_filters));
  mc.num_ceps = int(cfg.get_int("features.ceps", mc.num_ceps));
  return mc;
}

void run_featurize(const FeaturizeArgs& a) {
  ExperimentConfig cfg;
  if (!a.config.empty()) cfg = ExperimentConfig::load(a.config);
  const std::string manifest_path =
      !a.manifest.empty() ? a.manifest : cfg.get("corpus.manifest");
  require_input(manifest_path, "corpus manifest");
  const std::string archive_path =
      !a.archive.empty() ? a.archive : cfg.get("features.archive");
  if (archive_path.empty()) throw ParameterError("features archive output path not set");
  const std::string stats_path =
      !a.stats.empty() ? a.stats : cfg.get("features.stats", archive_path + ".stats.csv");
  const std::string split_path =
      !a.split.empty() ? a.split : cfg.get("features.split", archive_path + ".split.csv");
  const MfccConfig mc = frontend_config(cfg);
  const int expected_rate = int(cfg.get_int("features.sample_rate", 0));

  auto manifest = read_manifest(manifest_path);
  if (manifest.entries.empty()) throw ParameterError(manifest_path + ": empty manifest");

  std::vector<FeatureSequence> seqs(manifest.entries.size());
  std::vector<std::string> errors(manifest.entries.size());
  parallel_for(
      std::int64_t(manifest.entries.size()),
      [&](std::int64_t lo, std::int64_t hi) {
        for (std::int64_t i = lo; i < hi; ++i) {
          const auto& e = manifest.entries[std::size_t(i)];
          try {
            auto w = read_wav(manifest.resolve(e));
            w.source_id = e.utterance_id();
            w.speaker_id = e.speaker_id;
            seqs[std::size_t(i)] = append_deltas(compute_mfcc(w, mc));
          } catch (const Error& err) {
            errors[std::size_t(i)] = "manifest row " + std::to_string(i + 2) + " (" + e.path +
                                     "): " + err.what();
          }
        }
      },
      1);
  for (const auto& err : errors)
    if (!err.empty()) throw IoError(err);
  if (expected_rate > 0) {
    // rates are validated against the configured value; resampling is out of scope
    for (std::size_t i = 0; i < manifest.entries.size(); ++i) {
      auto w = read_wav(manifest.resolve(manifest.entries[i]));
      if (w.sample_rate != expected_rate)
        throw FormatError(manifest.entries[i].path + ": sample rate " +
                          std::to_string(w.sample_rate) + " != configured " +
                          std::to_string(expected_rate));
      break;  // rates are homogeneous per corpus; first file suffices
    }
  }

  auto plan = split_corpus(manifest, a.ratio, a.seed);
  for (const auto& w : plan.warnings) std::cerr << "warning: " << w << '\n';
  write_split(split_path, plan);

  std::set<std::string> train_ids(plan.train_utterances.begin(), plan.train_utterances.end());
  std::vector<const FeatureSequence*> train_side;
  for (const auto& f : seqs)
    if (train_ids.count(f.source_id)) train_side.push_back(&f);
  if (train_side.empty()) throw ContractError("featurize: empty training side after split");
  save_norm_stats(stats_path, compute_norm_stats(train_side));

  write_feature_archive(archive_path, seqs);
  std::int64_t frames = 0;
  for (const auto& f : seqs) frames += f.num_frames;
  std::printf("featurize: %zu utterances, %lld frames, dim %d -> %s\n", seqs.size(),
              (long long)frames, seqs.empty() ? 0 : seqs[0].dim, archive_path.c_str());
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string config, preset, archive, stats, split, out, exp = "exp", kind;
  double lr = 0.0, fraction = 1.0;
  int epochs = 0, batch_size = 0, runs = 1;
  std::string checkpoint_epochs;
  std::uint64_t seed = 1;
};

struct ResolvedTraining {
  ModelKind kind = ModelKind::apc;
  TrainerConfig trainer;
  ApcConfig apc;
  CpcConfig cpc;
  std::string preset_name = "custom";
};

ResolvedTraining resolve_training(const TrainArgs& a, const ExperimentConfig& cfg) {
  ResolvedTraining r;
  bool have_preset = false;
  if (!a.preset.empty()) {
    const Preset p = preset_by_name(a.preset);
    r.kind = p.kind;
    r.trainer.lr = p.lr;
    r.trainer.max_epochs = p.max_epochs;
    r.trainer.checkpoint_epochs = p.checkpoint_epochs;
    r.preset_name = p.name;
    have_preset = true;
  }
  const std::string kind_s = !a.kind.empty() ? a.kind : cfg.get("model.kind");
  if (!kind_s.empty()) {
    if (kind_s != "apc" && kind_s != "cpc")
      throw ParameterError("model kind must be apc or cpc, got " + kind_s);
    r.kind = kind_s == "apc" ? ModelKind::apc : ModelKind::cpc;
  } else if (!have_preset) {
    throw ParameterError("set --preset or a model kind");
  }
  if (!have_preset) r.trainer.lr = r.kind == ModelKind::apc ? 1e-4 : 1e-3;

  r.trainer.lr = cfg.get_double("train.lr", r.trainer.lr);
  r.trainer.batch_size = int(cfg.get_int("train.batch_size", r.trainer.batch_size));
  r.trainer.max_epochs = int(cfg.get_int("train.max_epochs", r.trainer.max_epochs));
  r.trainer.seed = std::uint64_t(cfg.get_int("train.seed", std::int64_t(r.trainer.seed)));
  r.trainer.fraction = cfg.get_double("train.fraction", r.trainer.fraction);
  if (cfg.has("train.checkpoint_epochs"))
    r.trainer.checkpoint_epochs = parse_epoch_list(cfg.get("train.checkpoint_epochs"));

  if (a.lr > 0) r.trainer.lr = a.lr;
  if (a.batch_size > 0) r.trainer.batch_size = a.batch_size;
  if (a.epochs > 0) {
    const int old_max = r.trainer.max_epochs;
    r.trainer.max_epochs = a.epochs;
    if (a.checkpoint_epochs.empty()) {
      if (have_preset && a.epochs < old_max) {
        // a capped preset keeps per-epoch checkpoints so short runs stay usable
        r.trainer.checkpoint_epochs.clear();
        for (int e = 1; e <= a.epochs; ++e) r.trainer.checkpoint_epochs.push_back(e);
      } else {
        std::vector<int> kept;
        for (int e : r.trainer.checkpoint_epochs)
          if (e <= a.epochs) kept.push_back(e);
        r.trainer.checkpoint_epochs = std::move(kept);
      }
    }
  }
  if (!a.checkpoint_epochs.empty())
    r.trainer.checkpoint_epochs = parse_epoch_list(a.checkpoint_epochs);
  if (a.seed != 1 || r.trainer.seed == 0) r.trainer.seed = a.seed;
  r.trainer.fraction = a.fraction != 1.0 ? a.fraction : r.trainer.fraction;

  r.apc.horizon = int(cfg.get_int("model.horizon", r.apc.horizon));
  r.apc.dropout = cfg.get_double("model.dropout", r.apc.dropout);
  r.cpc.prediction_steps = int(cfg.get_int("model.prediction_steps", r.cpc.prediction_steps));
  r.cpc.num_negatives = int(cfg.get_int("model.negatives", r.cpc.num_negatives));
  r.cpc.dropout = cfg.get_double("model.dropout", r.cpc.dropout);
  r.cpc.negatives_same_utterance =
      cfg.get_bool("model.negatives_same_utterance", r.cpc.negatives_same_utterance);
  return r;
}

void write_run_meta(const std::string& dir, const ResolvedTraining& r, std::uint64_t seed) {
  std::ofstream out(dir + "/run_meta.csv");
  if (!out) throw IoError("cannot create " + dir + "/run_meta.csv");
  out << "model,preset,seed,fraction,lr,batch_size,max_epochs,checkpoint_epochs\n";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%g,%d,%d", r.trainer.lr, r.trainer.batch_size,
                r.trainer.max_epochs);
  out << to_string(r.kind) << ',' << r.preset_name << ',' << seed << ',' << r.trainer.fraction
      << ',' << buf << ',' << '"' << format_epoch_list(r.trainer.checkpoint_epochs) << '"'
      << '\n';
}

DatasetSplit load_dataset(const ExperimentConfig& cfg, const std::string& archive,
                          const std::string& split, const std::string& stats, double fraction,
                          std::uint64_t seed) {
  require_input(archive, "feature archive");
  require_input(split, "split plan");
  auto seqs = read_feature_archive(archive);
  auto plan = read_split(split);
  NormStats st;
  const bool norm = cfg.get_bool("features.normalize", true);
  if (norm) {
    require_input(stats, "normalization stats");
    st = load_norm_stats(stats);
  }
  return build_dataset(std::move(seqs), plan, norm ? &st : nullptr, fraction, seed);
}

void run_train(const TrainArgs& a) {
  ExperimentConfig cfg;
  if (!a.config.empty()) cfg = ExperimentConfig::load(a.config);
  ResolvedTraining r = resolve_training(a, cfg);
  const std::string archive = !a.archive.empty() ? a.archive : cfg.get("features.archive");
  const std::string split =
      !a.split.empty() ? a.split : cfg.get("features.split", archive + ".split.csv");
  const std::string stats =
      !a.stats.empty() ? a.stats : cfg.get("features.stats", archive + ".stats.csv");
  const std::string out_root = !a.out.empty() ? a.out : cfg.get("out.dir", "runs");
  const std::string exp = a.exp;

  for (int run = 0; run < a.runs; ++run) {
    const std::uint64_t seed = r.trainer.seed + std::uint64_t(run);
    TrainerConfig tc = r.trainer;
    tc.seed = seed;
    auto data = load_dataset(cfg, archive, split, stats, tc.fraction, seed);
    const std::string dir =
        out_root + "/" + exp + "/" + to_string(r.kind) + "/" + std::to_string(seed);
    fs::create_directories(dir);
    write_run_meta(dir, r, seed);
    RunRecord record;
    if (r.kind == ModelKind::apc) {
      ApcModel<float> model(r.apc, seed);
      record = train<float>(ApcTask<float>{model, seed}, tc, data, dir);
    } else {
      CpcModel<float> model(r.cpc, seed);
      record = train<float>(CpcTask<float>{model, seed}, tc, data, dir);
    }
    for (const auto& w : record.warnings) std::cerr << "warning: " << w << '\n';
    std::printf("train: %s seed %llu, %zu epochs, final val %.6f, max |grad| %.3g -> %s\n",
                to_string(r.kind).c_str(), (unsigned long long)seed, record.rows.size() - 1,
                record.rows.back().val_loss, record.max_grad_norm, dir.c_str());
  }
}

// ---------------------------------------------------------------------------
// extract
// ---------------------------------------------------------------------------

struct ExtractArgs {
  std::string config, checkpoint, features, stats, out, repr = "z";
  int layer = -1;
};

void run_extract(const ExtractArgs& a) {
  ExperimentConfig cfg;
  if (!a.config.empty()) cfg = ExperimentConfig::load(a.config);
  require_input(a.checkpoint, "checkpoint");
  const std::string archive = !a.features.empty() ? a.features : cfg.get("features.archive");
  require_input(archive, "feature archive");
  if (a.out.empty()) throw ParameterError("latent archive output path not set");
  const Repr repr = a.repr == "z" ? Repr::z : Repr::c;
  if (a.repr != "z" && a.repr != "c") throw ParameterError("--repr must be z or c");

  auto ck = load_checkpoint(a.checkpoint);
  auto seqs = read_feature_archive(archive);
  const bool norm = cfg.get_bool("features.normalize", true);
  if (norm) {
    const std::string stats =
        !a.stats.empty() ? a.stats : cfg.get("features.stats", archive + ".stats.csv");
    require_input(stats, "normalization stats");
    auto st = load_norm_stats(stats);
    for (auto& f : seqs) normalize(f, st);
  }

  std::vector<FeatureSequence> latents;
  latents.reserve(seqs.size());
  if (ck.kind == ModelKind::apc) {
    ApcModel<float> model(apc_config_from(ck.config), ck.seed);
    restore_params(ck, model.params);
    for (const auto& f : seqs)
      latents.push_back(extract_representations(model, f, repr, a.layer));
  } else {
    CpcModel<float> model(cpc_config_from(ck.config), ck.seed);
    restore_params(ck, model.params);
    for (const auto& f : seqs) latents.push_back(extract_representations(model, f, repr));
  }
  write_feature_archive(a.out, latents);
  std::printf("extract: %zu utterances, dim %d (%s) -> %s\n", latents.size(),
              latents.empty() ? 0 : latents[0].dim, a.repr.c_str(), a.out.c_str());
}

// ---------------------------------------------------------------------------
// abx
// ---------------------------------------------------------------------------

struct AbxArgs {
  std::string config, latents, features, items, out, metric = "angular";
  bool mfcc_baseline = false, no_pca = false;
  double pca_variance = 0.95;
  std::int64_t max_pca_frames = 200000;
  std::uint64_t seed = 1;
};

void run_abx_cmd(const AbxArgs& a) {
  ExperimentConfig cfg;
  if (!a.config.empty()) cfg = ExperimentConfig::load(a.config);
  const std::string items_path = !a.items.empty() ? a.items : cfg.get("corpus.items");
  require_input(items_path, "item file");
  std::string source;
  if (a.mfcc_baseline) {
    source = !a.features.empty() ? a.features : cfg.get("features.archive");
    require_input(source, "feature archive");
  } else {
    source = a.latents;
    require_input(source, "latent archive");
  }
  if (a.out.empty()) throw ParameterError("report output path not set");

  auto latents = read_feature_archive(source);
  auto items = parse_items(items_path);
  if (items.empty()) std::cerr << "warning: empty item file\n";

  AbxOptions opt;
  opt.metric = frame_metric_by_name(!a.metric.empty() ? a.metric : cfg.get("abx.metric", "angular"));
  opt.pca_variance = cfg.get_double("abx.pca_variance", a.pca_variance);
  opt.max_pca_frames = cfg.get_int("abx.max_pca_frames", a.max_pca_frames);
  opt.seed = a.seed;
  const int dim = latents.empty() ? 0 : latents[0].dim;
  opt.use_pca = !(a.no_pca && dim <= 39);
  if (a.no_pca && dim > 39)
    std::cerr << "warning: --no-pca ignored for dimension " << dim << " > 39\n";

  auto report = run_abx(latents, items, opt);
  for (const auto& w : report.warnings) std::cerr << "warning: " << w << '\n';
  write_abx_report(a.out, report);
  std::printf("abx: %lld tokens, %lld cells (%lld skipped), %lld triplets -> %s\n",
              (long long)report.tokens, (long long)report.cells_scored,
              (long long)report.cells_skipped, (long long)report.triplets, a.out.c_str());
  for (const auto& [cond, err] : report.error_percent)
    std::printf("abx %s-speaker error: %.3f%%\n", cond.c_str(), err);
}

// ---------------------------------------------------------------------------
// correlate
// ---------------------------------------------------------------------------

struct CorrelateArgs {
  std::string runs_dir, out;
  bool ratio_change = false;
};

struct RunPoints {
  std::string name, model;
  std::vector<int> epochs;
  std::vector<double> val_loss, abx_across, abx_within;
};

RunPoints load_run_points(const std::string& dir, const std::string& name) {
  RunPoints pts;
  pts.name = name;
  pts.model = "model";
  if (fs::exists(dir + "/run_meta.csv")) {
    std::ifstream in(dir + "/run_meta.csv");
    std::string header, row;
    std::getline(in, header);
    if (std::getline(in, row)) {
      const auto comma = row.find(',');
      if (comma != std::string::npos) pts.model = row.substr(0, comma);
    }
  }
  auto record = read_run_record(dir + "/record.csv");
  std::map<int, double> loss_by_epoch;
  for (const auto& r : record.rows) loss_by_epoch[r.epoch] = r.val_loss;

  std::vector<int> missing;
  for (const auto& path : sorted_files(dir, "abx_epoch_", ".csv")) {
    const int epoch = epoch_from_filename(path, "abx_epoch_");
    auto summary = read_abx_summary(path);
    if (!loss_by_epoch.count(epoch)) {
      missing.push_back(epoch);
      continue;
    }
    if (!summary.count("across") || !summary.count("within")) continue;
    pts.epochs.push_back(epoch);
    pts.val_loss.push_back(loss_by_epoch[epoch]);
    pts.abx_across.push_back(summary["across"]);
    pts.abx_within.push_back(summary["within"]);
  }
  if (!missing.empty()) {
    std::string list;
    for (int e : missing) list += (list.empty() ? "" : ", ") + std::to_string(e);
    throw AlignmentError(dir + ": abx checkpoints without matching record epochs: " + list);
  }
  return pts;
}

void run_correlate(const CorrelateArgs& a) {
  require_input(a.runs_dir, "runs directory");
  const std::string out_dir = a.out.empty() ? a.runs_dir : a.out;
  fs::create_directories(out_dir);

  std::vector<RunPoints> runs;
  if (fs::exists(a.runs_dir + "/record.csv")) {
    runs.push_back(load_run_points(a.runs_dir, "1"));
  } else {
    int index = 1;
    for (const auto& sub : sorted_subdirs(a.runs_dir))
      if (fs::exists(sub + "/record.csv"))
        runs.push_back(load_run_points(sub, fs::path(sub).filename().string())), ++index;
  }
  if (runs.empty()) throw ParameterError(a.runs_dir + ": no run records found");

  std::vector<CorrelationRow> rows;
  std::vector<CorrelationRow> ratio_rows;
  std::map<std::string, std::vector<ScatterSeries>> scatter;  // condition -> series
  const char markers[3] = {'+', '.', '*'};
  std::map<std::string, std::vector<double>> pooled_loss, pooled_abx;

  for (std::size_t i = 0; i < runs.size(); ++i) {
    const auto& run = runs[i];
    if (run.epochs.size() < 3)
      throw ContractError(run.name + ": need at least 3 matched (checkpoint, loss, ABX) points, have " +
                          std::to_string(run.epochs.size()));
    for (const std::string cond : {"across", "within"}) {
      const auto& abx = cond == "across" ? run.abx_across : run.abx_within;
      CorrelationRow row;
      row.model = run.model;
      row.run = run.name;
      row.condition = cond;
      row.verdict = significance(run.val_loss, abx);
      rows.push_back(row);
      pooled_loss[cond].insert(pooled_loss[cond].end(), run.val_loss.begin(),
                               run.val_loss.end());
      pooled_abx[cond].insert(pooled_abx[cond].end(), abx.begin(), abx.end());

      ScatterSeries series;
      series.label = "run " + run.name;
      series.marker = markers[i % 3];
      for (std::size_t p = 0; p < run.val_loss.size(); ++p)
        series.points.emplace_back(run.val_loss[p], abx[p]);
      scatter[cond].push_back(std::move(series));

      if (a.ratio_change) {
        auto deltas = ratio_change(run.val_loss);
        std::vector<double> abx_tail(abx.begin() + 1, abx.end());
        if (deltas.size() >= 3) {
          CorrelationRow rrow;
          rrow.model = run.model;
          rrow.run = run.name;
          rrow.condition = cond;
          rrow.verdict = significance(deltas, abx_tail);
          ratio_rows.push_back(rrow);
        }
      }
    }
  }
  if (runs.size() > 1) {
    for (const std::string cond : {"across", "within"}) {
      CorrelationRow row;
      row.model = runs[0].model;
      row.run = "pooled";
      row.condition = cond;
      row.verdict = significance(pooled_loss[cond], pooled_abx[cond]);
      rows.push_back(row);
    }
  }

  write_correlation_report(out_dir + "/correlation.csv", rows);
  if (a.ratio_change && !ratio_rows.empty())
    write_correlation_report(out_dir + "/ratio_correlation.csv", ratio_rows);
  for (const auto& [cond, series] : scatter)
    write_scatter_svg(out_dir + "/scatter_" + cond + ".svg",
                      "ABX " + cond + "-speaker vs validation loss", "validation loss",
                      "ABX error (%)", series);

  for (const auto& row : rows)
    std::printf("correlate %s run %s %s: r=%.3f (t=%.2f%s) r_s=%.3f%s n=%d\n",
                row.model.c_str(), row.run.c_str(), row.condition.c_str(), row.verdict.r,
                row.verdict.t, row.verdict.significant_r ? ", significant" : "",
                row.verdict.r_s,
                row.verdict.rs_in_table
                    ? (row.verdict.significant_rs ? ", significant" : ", n.s.")
                    : ", n/a",
                row.verdict.n);
  std::printf("correlate: wrote %s/correlation.csv\n", out_dir.c_str());
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

struct ReportArgs {
  std::string experiment;
};

struct RunSummary {
  std::string model, run;
  double fraction = 1.0;
  int best_epoch = 0;
  double best_val = 0.0, across_at_best = 0.0, within_at_best = 0.0;
  double best_across = 0.0, best_within = 0.0;
  int best_across_epoch = 0, best_within_epoch = 0;
};

void run_report(const ReportArgs& a) {
  require_input(a.experiment, "experiment directory");
  std::vector<RunSummary> runs;
  for (const auto& model_dir : sorted_subdirs(a.experiment)) {
    for (const auto& run_dir : sorted_subdirs(model_dir)) {
      if (!fs::exists(run_dir + "/record.csv")) continue;
      RunPoints pts = load_run_points(run_dir, fs::path(run_dir).filename().string());
      if (pts.epochs.empty()) continue;
      RunSummary s;
      s.model = pts.model;
      s.run = pts.name;
      if (fs::exists(run_dir + "/run_meta.csv")) {
        std::ifstream in(run_dir + "/run_meta.csv");
        std::string header, row;
        std::getline(in, header);
        std::getline(in, row);
        std::istringstream ss(row);
        std::string model, preset, seed, fraction;
        std::getline(ss, model, ',');
        std::getline(ss, preset, ',');
        std::getline(ss, seed, ',');
        std::getline(ss, fraction, ',');
        if (!fraction.empty()) s.fraction = std::stod(fraction);
      }
      std::size_t best = 0;
      for (std::size_t i = 1; i < pts.epochs.size(); ++i)
        if (pts.val_loss[i] < pts.val_loss[best]) best = i;
      s.best_epoch = pts.epochs[best];
      s.best_val = pts.val_loss[best];
      s.across_at_best = pts.abx_across[best];
      s.within_at_best = pts.abx_within[best];
      std::size_t ba = 0, bw = 0;
      for (std::size_t i = 1; i < pts.epochs.size(); ++i) {
        if (pts.abx_across[i] < pts.abx_across[ba]) ba = i;
        if (pts.abx_within[i] < pts.abx_within[bw]) bw = i;
      }
      s.best_across = pts.abx_across[ba];
      s.best_across_epoch = pts.epochs[ba];
      s.best_within = pts.abx_within[bw];
      s.best_within_epoch = pts.epochs[bw];
      runs.push_back(s);
    }
  }
  if (runs.empty()) throw ParameterError(a.experiment + ": nothing to report");

  {
    std::ofstream out(a.experiment + "/report_best.csv");
    out << "model,run,fraction,best_epoch,val_loss,abx_across,abx_within,"
           "best_abx_across,best_abx_across_epoch,best_abx_within,best_abx_within_epoch\n";
    for (const auto& s : runs) {
      char buf[256];
      std::snprintf(buf, sizeof buf, "%s,%s,%g,%d,%.6f,%.3f,%.3f,%.3f,%d,%.3f,%d",
                    s.model.c_str(), s.run.c_str(), s.fraction, s.best_epoch, s.best_val,
                    s.across_at_best, s.within_at_best, s.best_across, s.best_across_epoch,
                    s.best_within, s.best_within_epoch);
      out << buf << '\n';
    }
  }
  std::printf("%-6s %-8s %-9s %-6s %-9s %-9s\n", "model", "run", "fraction", "epoch", "across",
              "within");
  for (const auto& s : runs)
    std::printf("%-6s %-8s %-9g %-6d %-9.3f %-9.3f\n", s.model.c_str(), s.run.c_str(),
                s.fraction, s.best_epoch, s.across_at_best, s.within_at_best);

  // mean +/- SD across runs per model (best-epoch scores)
  {
    std::map<std::string, std::vector<double>> across, within;
    for (const auto& s : runs) {
      across[s.model].push_back(s.across_at_best);
      within[s.model].push_back(s.within_at_best);
    }
    std::ofstream out(a.experiment + "/report_mean_sd.csv");
    out << "model,condition,mean,sd,n_runs\n";
    for (const auto& [model, values] : across) {
      auto ms = summarize_runs(values);
      out << model << ",across," << format_fixed(ms.mean, 3) << ','
          << (ms.has_sd ? format_fixed(ms.sd, 3) : std::string("")) << ',' << values.size()
          << '\n';
      auto msw = summarize_runs(within[model]);
      out << model << ",within," << format_fixed(msw.mean, 3) << ','
          << (msw.has_sd ? format_fixed(msw.sd, 3) : std::string("")) << ',' << values.size()
          << '\n';
    }
  }

  // dataset-fraction table: rows per fraction plus a mean +/- SD row
  {
    std::map<std::string, std::map<double, std::vector<std::pair<double, double>>>> by_model;
    for (const auto& s : runs)
      by_model[s.model][s.fraction].push_back({s.across_at_best, s.within_at_best});
    std::ofstream out(a.experiment + "/report_fractions.csv");
    out << "model,fraction,abx_across,abx_within\n";
    for (const auto& [model, by_frac] : by_model) {
      std::vector<double> acc_a, acc_w;
      for (auto it = by_frac.rbegin(); it != by_frac.rend(); ++it) {
        double ma = 0, mw = 0;
        for (const auto& [x, y] : it->second) {
          ma += x;
          mw += y;
        }
        ma /= double(it->second.size());
        mw /= double(it->second.size());
        acc_a.push_back(ma);
        acc_w.push_back(mw);
        out << model << ',' << it->first << ',' << format_fixed(ma, 3) << ','
            << format_fixed(mw, 3) << '\n';
      }
      if (acc_a.size() > 1) {
        auto sa = summarize_runs(acc_a);
        auto sw = summarize_runs(acc_w);
        out << model << ",mean_sd," << format_fixed(sa.mean, 3) << "+/-"
            << format_fixed(sa.sd, 3) << ',' << format_fixed(sw.mean, 3) << "+/-"
            << format_fixed(sw.sd, 3) << '\n';
      }
    }
  }
  std::printf("report: wrote report_best.csv, report_mean_sd.csv, report_fractions.csv in %s\n",
              a.experiment.c_str());
}

// ---------------------------------------------------------------------------
// pipeline: synth -> featurize -> train -> extract+abx per checkpoint ->
// correlate -> report
// ---------------------------------------------------------------------------

struct PipelineArgs {
  std::string config, out, preset = "apc-1", exp = "exp";
  int runs = 1, epochs = 0;
  std::uint64_t seed = 1;
  double fraction = 1.0;
  bool mfcc_baseline = true;
};

void run_pipeline(const PipelineArgs& a) {
  if (a.out.empty()) throw ParameterError("pipeline output directory not set");
  fs::create_directories(a.out);
  const std::string corpus_dir = a.out + "/corpus";

  SynthArgs synth_args;
  synth_args.out = corpus_dir;
  synth_args.config = a.config;
  synth_args.seed = a.seed;
  run_synth(synth_args, nullptr);

  FeaturizeArgs feat;
  feat.config = a.config;
  feat.manifest = corpus_dir + "/manifest.csv";
  feat.archive = a.out + "/features.pcf";
  feat.seed = a.seed;
  run_featurize(feat);

  TrainArgs train_args;
  train_args.config = a.config;
  train_args.preset = a.preset;
  train_args.archive = a.out + "/features.pcf";
  train_args.out = a.out + "/runs";
  train_args.exp = a.exp;
  train_args.runs = a.runs;
  train_args.epochs = a.epochs;
  train_args.seed = a.seed;
  train_args.fraction = a.fraction;
  run_train(train_args);

  const Preset preset = preset_by_name(a.preset);
  const std::string model_dir = a.out + "/runs/" + a.exp + "/" + to_string(preset.kind);
  for (const auto& run_dir : sorted_subdirs(model_dir)) {
    for (const auto& ck_path : sorted_files(run_dir, "epoch_", ".pckp")) {
      const int epoch = epoch_from_filename(ck_path, "epoch_");
      char suffix[32];
      std::snprintf(suffix, sizeof suffix, "epoch_%04d", epoch);
      ExtractArgs ex;
      ex.config = a.config;
      ex.checkpoint = ck_path;
      ex.features = a.out + "/features.pcf";
      ex.out = run_dir + "/latents_" + suffix + ".pcf";
      run_extract(ex);
      AbxArgs abx;
      abx.config = a.config;
      abx.latents = ex.out;
      abx.items = corpus_dir + "/items.item";
      abx.out = run_dir + "/abx_" + suffix + ".csv";
      abx.seed = a.seed;
      run_abx_cmd(abx);
    }
  }

  if (a.mfcc_baseline) {
    AbxArgs abx;
    abx.config = a.config;
    abx.mfcc_baseline = true;
    abx.features = a.out + "/features.pcf";
    abx.items = corpus_dir + "/items.item";
    abx.out = a.out + "/abx_mfcc_baseline.csv";
    abx.no_pca = true;
    abx.seed = a.seed;
    run_abx_cmd(abx);
  }

  CorrelateArgs corr;
  corr.runs_dir = model_dir;
  corr.out = a.out;
  corr.ratio_change = true;
  run_correlate(corr);

  ReportArgs rep;
  rep.experiment = a.out + "/runs/" + a.exp;
  run_report(rep);
  std::printf("pipeline: complete -> %s\n", a.out.c_str());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"pcl: predictive-coding representation lab"};
  app.require_subcommand(1);

  SynthArgs synth_args;
  auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic corpus");
  synth_cmd->add_option("--out", synth_args.out, "output corpus directory")->required();
  synth_cmd->add_option("--config", synth_args.config, "config file");
  synth_cmd->add_option("--phones", synth_args.phones, "phone categories");
  synth_cmd->add_option("--speakers", synth_args.speakers, "speaker count");
  synth_cmd->add_option("--utterances", synth_args.utterances, "utterance count");
  synth_cmd->add_option("--duration", synth_args.duration, "target utterance seconds");
  synth_cmd->add_option("--seed", synth_args.seed, "corpus seed");
  synth_cmd->callback([&] { run_synth(synth_args, synth_cmd); });

  FeaturizeArgs feat_args;
  auto* feat_cmd = app.add_subcommand("featurize", "compute MFCC features and the split");
  feat_cmd->add_option("--config", feat_args.config, "config file");
  feat_cmd->add_option("--manifest", feat_args.manifest, "corpus manifest CSV");
  feat_cmd->add_option("--archive", feat_args.archive, "output feature archive (PCF1)");
  feat_cmd->add_option("--stats", feat_args.stats, "output normalization stats");
  feat_cmd->add_option("--split", feat_args.split, "output split plan CSV");
  feat_cmd->add_option("--ratio", feat_args.ratio, "train split ratio");
  feat_cmd->add_option("--seed", feat_args.seed, "split seed");
  feat_cmd->callback([&] { run_featurize(feat_args); });

  TrainArgs train_args;
  auto* train_cmd = app.add_subcommand("train", "train a predictive-coding model");
  train_cmd->add_option("--config", train_args.config, "config file");
  train_cmd->add_option("--preset", train_args.preset, "apc-1|apc-2|cpc-1|cpc-2");
  train_cmd->add_option("--kind", train_args.kind, "model kind apc|cpc");
  train_cmd->add_option("--archive", train_args.archive, "feature archive");
  train_cmd->add_option("--stats", train_args.stats, "normalization stats");
  train_cmd->add_option("--split", train_args.split, "split plan");
  train_cmd->add_option("--out", train_args.out, "runs root directory");
  train_cmd->add_option("--exp", train_args.exp, "experiment id");
  train_cmd->add_option("--lr", train_args.lr, "learning rate");
  train_cmd->add_option("--epochs", train_args.epochs, "cap on training epochs");
  train_cmd->add_option("--batch-size", train_args.batch_size, "batch size");
  train_cmd->add_option("--checkpoint-epochs", train_args.checkpoint_epochs,
                        "epoch list, e.g. 1-10,20-100:10");
  train_cmd->add_option("--runs", train_args.runs, "seed-varied repetitions");
  train_cmd->add_option("--seed", train_args.seed, "base seed");
  train_cmd->add_option("--fraction", train_args.fraction, "training sample fraction");
  train_cmd->callback([&] { run_train(train_args); });

  ExtractArgs ex_args;
  auto* ex_cmd = app.add_subcommand("extract", "extract latent representations");
  ex_cmd->add_option("--config", ex_args.config, "config file");
  ex_cmd->add_option("--checkpoint", ex_args.checkpoint, "PCKP checkpoint")->required();
  ex_cmd->add_option("--features", ex_args.features, "feature archive");
  ex_cmd->add_option("--stats", ex_args.stats, "normalization stats");
  ex_cmd->add_option("--out", ex_args.out, "output latent archive")->required();
  ex_cmd->add_option("--repr", ex_args.repr, "z or c");
  ex_cmd->add_option("--layer", ex_args.layer, "APC GRU layer (0-based, -1 = top)");
  ex_cmd->callback([&] { run_extract(ex_args); });

  AbxArgs abx_args;
  auto* abx_cmd = app.add_subcommand("abx", "minimal-pair ABX scoring");
  abx_cmd->add_option("--config", abx_args.config, "config file");
  abx_cmd->add_option("--latents", abx_args.latents, "latent archive");
  abx_cmd->add_flag("--mfcc-baseline", abx_args.mfcc_baseline, "score raw MFCC features");
  abx_cmd->add_option("--features", abx_args.features, "feature archive (baseline mode)");
  abx_cmd->add_option("--items", abx_args.items, "item file");
  abx_cmd->add_option("--out", abx_args.out, "output report CSV")->required();
  abx_cmd->add_option("--metric", abx_args.metric, "angular|cosine|euclidean");
  abx_cmd->add_flag("--no-pca", abx_args.no_pca, "skip PCA (dimension <= 39 only)");
  abx_cmd->add_option("--pca-variance", abx_args.pca_variance, "retained variance target");
  abx_cmd->add_option("--max-pca-frames", abx_args.max_pca_frames, "PCA fit subsample cap");
  abx_cmd->add_option("--seed", abx_args.seed, "PCA subsample seed");
  abx_cmd->callback([&] { run_abx_cmd(abx_args); });

  CorrelateArgs corr_args;
  auto* corr_cmd = app.add_subcommand("correlate", "loss vs ABX correlation analysis");
  corr_cmd->add_option("--runs", corr_args.runs_dir, "run directory or parent of runs")
      ->required();
  corr_cmd->add_option("--out", corr_args.out, "output directory (default: runs dir)");
  corr_cmd->add_flag("--ratio-change", corr_args.ratio_change,
                     "also correlate consecutive-epoch loss ratio changes");
  corr_cmd->callback([&] { run_correlate(corr_args); });

  ReportArgs rep_args;
  auto* rep_cmd = app.add_subcommand("report", "summary tables for an experiment");
  rep_cmd->add_option("--experiment", rep_args.experiment, "experiment directory")->required();
  rep_cmd->callback([&] { run_report(rep_args); });

  PipelineArgs pipe_args;
  auto* pipe_cmd = app.add_subcommand("pipeline", "full synthetic-corpus experiment");
  pipe_cmd->add_option("--config", pipe_args.config, "config file");
  pipe_cmd->add_option("--out", pipe_args.out, "output directory")->required();
  pipe_cmd->add_option("--preset", pipe_args.preset, "training preset");
  pipe_cmd->add_option("--exp", pipe_args.exp, "experiment id");
  pipe_cmd->add_option("--runs", pipe_args.runs, "seed-varied repetitions");
  pipe_cmd->add_option("--epochs", pipe_args.epochs, "cap on training epochs");
  pipe_cmd->add_option("--seed", pipe_args.seed, "base seed");
  pipe_cmd->add_option("--fraction", pipe_args.fraction, "training sample fraction");
  pipe_cmd->callback([&] { run_pipeline(pipe_args); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
