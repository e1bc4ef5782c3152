#include <catch2/catch_amalgamated.hpp>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "pcl/trainer.hpp"

using namespace pcl;
using Catch::Approx;

namespace {

CorpusManifest equal_speakers(int n, double minutes) {
  CorpusManifest m;
  for (int i = 0; i < n; ++i)
    m.entries.push_back({"wav/u" + std::to_string(i) + ".wav", "spk" + std::to_string(i),
                         minutes * 60.0});
  return m;
}

std::string temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / name;
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p.string();
}

// samples with short-memory temporal structure, so predicting ahead from
// context is actually learnable
std::vector<TrainingSample> structured_samples(int count, int dim, std::uint64_t seed,
                                               const std::string& prefix) {
  CounterRng rng(seed, 0);
  std::vector<TrainingSample> out;
  for (int i = 0; i < count; ++i) {
    TrainingSample s;
    s.source_id = prefix + std::to_string(i);
    s.chunk_index = 0;
    s.valid_frames = 200;
    s.frames.resize(std::size_t(200) * dim);
    s.mask.assign(200, 1.0f);
    const double phase = rng.uniform(0, 6.28);
    const double speed = 0.05 + 0.1 * rng.next_double();
    for (int t = 0; t < 200; ++t)
      for (int d = 0; d < dim; ++d)
        s.frames[std::size_t(t) * dim + d] =
            float(std::sin(speed * t + phase + 0.7 * d) + 0.05 * rng.next_gaussian());
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace

TEST_CASE("split: five equal speakers give the exact 80/20") {
  auto plan = split_corpus(equal_speakers(5, 10.0), 0.8, 7);
  REQUIRE(plan.train_speakers.size() == 4);
  REQUIRE(plan.val_speakers.size() == 1);
  REQUIRE(plan.achieved_ratio == Approx(0.8));
  REQUIRE(plan.warnings.empty());
  REQUIRE(plan.train_utterances.size() == 4);
  REQUIRE(plan.val_utterances.size() == 1);
}

TEST_CASE("split: skewed two-speaker corpus puts the long speaker in train") {
  CorpusManifest m;
  m.entries.push_back({"wav/long.wav", "long_speaker", 2.0 * 3600.0});
  m.entries.push_back({"wav/short.wav", "short_speaker", 10.0 * 60.0});
  auto plan = split_corpus(m, 0.8, 3);
  REQUIRE(plan.train_speakers.count("long_speaker") == 1);
  REQUIRE(plan.val_speakers.count("short_speaker") == 1);
  // 92/8 split cannot satisfy the 2pp tolerance; a warning records that
  REQUIRE_FALSE(plan.warnings.empty());
}

TEST_CASE("split: degenerate ratios are rejected") {
  REQUIRE_THROWS_AS(split_corpus(equal_speakers(3, 5.0), 1.0, 1), ParameterError);
  REQUIRE_THROWS_AS(split_corpus(equal_speakers(3, 5.0), 0.0, 1), ParameterError);
}

TEST_CASE("split: single-speaker corpus still splits, with a warning") {
  auto plan = split_corpus(equal_speakers(1, 30.0), 0.8, 1);
  REQUIRE(plan.train_utterances.size() == 1);
  REQUIRE(plan.val_utterances.empty());
  bool mentions_abx = false;
  for (const auto& w : plan.warnings)
    mentions_abx = mentions_abx || w.find("across-speaker") != std::string::npos;
  REQUIRE(mentions_abx);
}

TEST_CASE("split: deterministic under a fixed seed") {
  auto m = equal_speakers(7, 12.0);
  auto a = split_corpus(m, 0.8, 11);
  auto b = split_corpus(m, 0.8, 11);
  REQUIRE(a.train_utterances == b.train_utterances);
  REQUIRE(a.val_utterances == b.val_utterances);
}

TEST_CASE("split roundtrip through disk") {
  auto plan = split_corpus(equal_speakers(5, 10.0), 0.8, 7);
  const std::string path = temp_dir("pcl_split") + "/split.csv";
  write_split(path, plan);
  auto back = read_split(path);
  REQUIRE(back.train_utterances == plan.train_utterances);
  REQUIRE(back.val_utterances == plan.val_utterances);
}

TEST_CASE("subsample reproduces the published fraction arithmetic") {
  std::vector<int> train(36031), val(9182);
  for (std::size_t i = 0; i < train.size(); ++i) train[i] = int(i);
  for (std::size_t i = 0; i < val.size(); ++i) val[i] = int(i);
  REQUIRE(subsample(train, 0.75, 5).size() == 27023);
  REQUIRE(subsample(train, 0.50, 5).size() == 18015);
  REQUIRE(subsample(train, 0.25, 5).size() == 9007);
  REQUIRE(subsample(val, 0.75, 5).size() == 6886);
  REQUIRE(subsample(val, 0.50, 5).size() == 4591);
  REQUIRE(subsample(val, 0.25, 5).size() == 2295);
  REQUIRE(subsample(train, 1.0, 5).size() == 36031);
  REQUIRE_THROWS_AS(subsample(train, 0.0, 5), ParameterError);
  REQUIRE_THROWS_AS(subsample(train, 1.5, 5), ParameterError);
}

TEST_CASE("subsample nests across fractions under one seed") {
  std::vector<int> items(400);
  for (std::size_t i = 0; i < items.size(); ++i) items[i] = int(i);
  auto q25 = subsample(items, 0.25, 9);
  auto q50 = subsample(items, 0.50, 9);
  auto q75 = subsample(items, 0.75, 9);
  std::set<int> s50(q50.begin(), q50.end()), s75(q75.begin(), q75.end());
  for (int v : q25) REQUIRE(s50.count(v) == 1);
  for (int v : q50) REQUIRE(s75.count(v) == 1);
}

TEST_CASE("epoch shuffle is a permutation") {
  std::vector<int> v(100);
  for (int i = 0; i < 100; ++i) v[std::size_t(i)] = i;
  CounterRng rng(3, streams::shuffle, 1);
  auto w = v;
  shuffle(w, rng);
  REQUIRE(w != v);
  auto ws = w;
  std::sort(ws.begin(), ws.end());
  REQUIRE(ws == v);
}

TEST_CASE("preset schedules") {
  REQUIRE(preset_by_name("apc-1").checkpoint_epochs.size() == 10);
  REQUIRE(preset_by_name("apc-2").lr == Approx(1e-5));
  REQUIRE(preset_by_name("cpc-1").lr == Approx(1e-3));
  auto cpc2 = preset_by_name("cpc-2");
  REQUIRE(cpc2.checkpoint_epochs.size() == 19);
  REQUIRE(cpc2.checkpoint_epochs.front() == 1);
  REQUIRE(cpc2.checkpoint_epochs[9] == 10);
  REQUIRE(cpc2.checkpoint_epochs[10] == 20);
  REQUIRE(cpc2.checkpoint_epochs.back() == 100);
  REQUIRE_THROWS_AS(preset_by_name("apc-3"), ParameterError);
}

TEST_CASE("trainer config validation") {
  TrainerConfig cfg;
  cfg.max_epochs = 10;
  cfg.checkpoint_epochs = {5, 11};
  REQUIRE_THROWS_AS(cfg.validate(), ParameterError);
  cfg.checkpoint_epochs = {5, 10};
  REQUIRE_NOTHROW(cfg.validate());
  cfg.lr = 0.0;
  REQUIRE_THROWS_AS(cfg.validate(), ParameterError);
}

TEST_CASE("run record roundtrip") {
  RunRecord rec;
  rec.rows = {{0, 2.5, 2.75}, {1, 2.0, 2.25}, {2, 1.5, 1.75}};
  const std::string path = temp_dir("pcl_record") + "/record.csv";
  write_run_record(path, rec);
  auto back = read_run_record(path);
  REQUIRE(back.rows.size() == 3);
  REQUIRE(back.rows[1].epoch == 1);
  REQUIRE(back.rows[2].val_loss == Approx(1.75));
}

TEST_CASE("train: checkpoints written per schedule, record includes epoch 0") {
  DatasetSplit data;
  data.dim = 5;
  data.train = structured_samples(6, 5, 21, "tr");
  data.validation = structured_samples(2, 5, 22, "va");

  ApcConfig mc;
  mc.input_dim = 5;
  mc.prenet_units = 8;
  mc.gru_units = 8;
  mc.horizon = 2;
  ApcModel<float> model(mc, 31);
  TrainerConfig cfg;
  cfg.lr = 1e-3;
  cfg.batch_size = 4;
  cfg.max_epochs = 3;
  cfg.checkpoint_epochs = {1, 3};
  cfg.seed = 31;
  const std::string dir = temp_dir("pcl_train1");
  auto record = train<float>(ApcTask<float>{model, cfg.seed}, cfg, data, dir);

  REQUIRE(record.rows.size() == 4);
  REQUIRE(record.rows[0].epoch == 0);
  REQUIRE(std::filesystem::exists(dir + "/epoch_0001.pckp"));
  REQUIRE_FALSE(std::filesystem::exists(dir + "/epoch_0002.pckp"));
  REQUIRE(std::filesystem::exists(dir + "/epoch_0003.pckp"));
  REQUIRE(std::filesystem::exists(dir + "/record.csv"));

  auto ck = load_checkpoint(dir + "/epoch_0003.pckp");
  REQUIRE(ck.epoch == 3);
  REQUIRE(ck.val_loss == Approx(record.rows[3].val_loss).margin(1e-5));
  REQUIRE(ck.adam_t > 0);
}

TEST_CASE("train: validation MAE decreases over the first 5 epochs") {
  DatasetSplit data;
  data.dim = 5;
  data.train = structured_samples(8, 5, 41, "tr");
  data.validation = structured_samples(3, 5, 42, "va");
  ApcConfig mc;
  mc.input_dim = 5;
  mc.prenet_units = 8;
  mc.gru_units = 8;
  mc.horizon = 2;
  ApcModel<float> model(mc, 43);
  TrainerConfig cfg;
  cfg.lr = 2e-3;
  cfg.batch_size = 4;
  cfg.max_epochs = 5;
  cfg.seed = 43;
  const std::string dir = temp_dir("pcl_train2");
  auto record = train<float>(ApcTask<float>{model, cfg.seed}, cfg, data, dir);
  REQUIRE(record.rows[5].val_loss < record.rows[0].val_loss);
}

TEST_CASE("train: bit-identical across reruns with one seed") {
  auto run = [&](const std::string& dir) {
    DatasetSplit data;
    data.dim = 5;
    data.train = structured_samples(5, 5, 51, "tr");
    data.validation = structured_samples(2, 5, 52, "va");
    ApcConfig mc;
    mc.input_dim = 5;
    mc.prenet_units = 8;
    mc.gru_units = 8;
    mc.horizon = 2;
    ApcModel<float> model(mc, 53);
    TrainerConfig cfg;
    cfg.lr = 1e-3;
    cfg.batch_size = 4;
    cfg.max_epochs = 2;
    cfg.checkpoint_epochs = {2};
    cfg.seed = 53;
    train<float>(ApcTask<float>{model, cfg.seed}, cfg, data, temp_dir(dir));
  };
  run("pcl_det_a");
  run("pcl_det_b");
  auto bytes = [](const std::string& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
  };
  const std::string base_a = (std::filesystem::temp_directory_path() / "pcl_det_a").string();
  const std::string base_b = (std::filesystem::temp_directory_path() / "pcl_det_b").string();
  REQUIRE(bytes(base_a + "/record.csv") == bytes(base_b + "/record.csv"));
  REQUIRE(bytes(base_a + "/epoch_0002.pckp") == bytes(base_b + "/epoch_0002.pckp"));
  REQUIRE_FALSE(bytes(base_a + "/record.csv").empty());
}

TEST_CASE("train: validation loss independent of dataset order") {
  DatasetSplit data;
  data.dim = 5;
  data.train = structured_samples(4, 5, 61, "tr");
  data.validation = structured_samples(4, 5, 62, "va");
  auto shuffled = data;
  std::swap(shuffled.validation[0], shuffled.validation[3]);
  std::swap(shuffled.validation[1], shuffled.validation[2]);

  auto run = [&](const DatasetSplit& d, const std::string& dir) {
    CpcConfig mc;
    mc.input_dim = 5;
    mc.encoder_units = 8;
    mc.context_units = 8;
    mc.prediction_steps = 2;
    mc.num_negatives = 3;
    CpcModel<float> model(mc, 63);
    TrainerConfig cfg;
    cfg.lr = 1e-3;
    cfg.batch_size = 3;
    cfg.max_epochs = 1;
    cfg.seed = 63;
    return train<float>(CpcTask<float>{model, cfg.seed}, cfg, d, temp_dir(dir));
  };
  auto a = run(data, "pcl_vo_a");
  auto b = run(shuffled, "pcl_vo_b");
  REQUIRE(a.rows[0].val_loss == b.rows[0].val_loss);
  REQUIRE(a.rows[1].val_loss == b.rows[1].val_loss);
}

TEST_CASE("build_dataset splits, normalizes and subsamples") {
  std::vector<FeatureSequence> seqs;
  CounterRng rng(71, 0);
  for (int i = 0; i < 6; ++i) {
    FeatureSequence f;
    f.num_frames = 450;  // 3 chunks
    f.dim = 4;
    f.source_id = "u" + std::to_string(i);
    f.speaker_id = i < 4 ? "a" : "b";
    f.frames.resize(std::size_t(450) * 4);
    for (auto& v : f.frames) v = float(rng.uniform(-2.0, 2.0));
    seqs.push_back(std::move(f));
  }
  SplitPlan plan;
  for (int i = 0; i < 4; ++i) plan.train_utterances.push_back("u" + std::to_string(i));
  plan.val_utterances = {"u4", "u5"};

  std::vector<const FeatureSequence*> train_side;
  for (int i = 0; i < 4; ++i) train_side.push_back(&seqs[std::size_t(i)]);
  auto stats = compute_norm_stats(train_side);

  auto full = build_dataset(seqs, plan, &stats, 1.0, 5);
  REQUIRE(full.train.size() == 12);
  REQUIRE(full.validation.size() == 6);
  auto half = build_dataset(seqs, plan, &stats, 0.5, 5);
  REQUIRE(half.train.size() == 6);
  REQUIRE(half.validation.size() == 3);
}
