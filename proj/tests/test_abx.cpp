#include <catch2/catch_amalgamated.hpp>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "pcl/abx.hpp"

using namespace pcl;
using Catch::Approx;

namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

FeatureSequence sequence_of(const std::vector<std::vector<float>>& rows,
                            const std::string& utt = "u", const std::string& spk = "s") {
  FeatureSequence f;
  f.num_frames = int(rows.size());
  f.dim = int(rows[0].size());
  f.source_id = utt;
  f.speaker_id = spk;
  for (const auto& r : rows) f.frames.insert(f.frames.end(), r.begin(), r.end());
  return f;
}

// synthetic evaluation corpus: one utterance per speaker, tokens every 10
// frames; `emit` provides the latent for (speaker, phone, token instance)
template <class Emit>
std::pair<std::vector<FeatureSequence>, std::vector<AbxItem>> synth_eval(
    int speakers, int tokens_per_group, const std::vector<std::string>& phones,
    const std::vector<std::pair<std::string, std::string>>& contexts, int dim, Emit&& emit) {
  std::vector<FeatureSequence> seqs;
  std::vector<AbxItem> items;
  const int frames_per_token = 6;
  for (int s = 0; s < speakers; ++s) {
    const std::string spk = "spk" + std::to_string(s);
    std::vector<std::vector<float>> rows;
    int t0 = 0;
    for (const auto& [prev, next] : contexts)
      for (const auto& phone : phones)
        for (int i = 0; i < tokens_per_group; ++i) {
          for (int t = 0; t < frames_per_token; ++t) rows.push_back(emit(s, phone, i, t));
          AbxItem item;
          item.utterance = "utt_" + spk;
          item.onset = t0 * 0.01;
          item.offset = (t0 + frames_per_token) * 0.01;
          item.phone = phone;
          item.prev = prev;
          item.next = next;
          item.speaker = spk;
          items.push_back(item);
          t0 += frames_per_token;
        }
    auto f = sequence_of(rows, "utt_" + spk, spk);
    seqs.push_back(std::move(f));
    (void)dim;
  }
  return {std::move(seqs), std::move(items)};
}

}  // namespace

TEST_CASE("parse_items maps fields directly") {
  const std::string path = temp_path("pcl_items.item");
  {
    std::ofstream out(path);
    out << kItemHeader << '\n';
    out << "u1 0.25 0.40 a t k s1\n";
  }
  auto items = parse_items(path);
  REQUIRE(items.size() == 1);
  REQUIRE(items[0].utterance == "u1");
  REQUIRE(items[0].onset == 0.25);
  REQUIRE(items[0].offset == 0.40);
  REQUIRE(items[0].phone == "a");
  REQUIRE(items[0].prev == "t");
  REQUIRE(items[0].next == "k");
  REQUIRE(items[0].speaker == "s1");
}

TEST_CASE("parse_items rejections") {
  const std::string path = temp_path("pcl_items_bad.item");
  {
    std::ofstream out(path);
    out << kItemHeader << '\n';
    out << "u1 0.40 0.25 a t k s1\n";
  }
  try {
    parse_items(path);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    REQUIRE(std::string(e.what()).find(":2") != std::string::npos);
  }
  {
    std::ofstream out(path);
    out << kItemHeader << '\n';
  }
  REQUIRE(parse_items(path).empty());
  {
    std::ofstream out(path);
    out << "u1 0.1 0.2 a t k s1\n";
  }
  REQUIRE_THROWS_AS(parse_items(path), ParseError);
}

TEST_CASE("items roundtrip") {
  std::vector<AbxItem> items = {{"u1", 0.25, 0.4, "a", "t", "k", "s1"},
                                {"u2", 1.0, 1.25, "b", "a", "a", "s2"}};
  const std::string path = temp_path("pcl_items_rt.item");
  write_items(path, items);
  auto back = parse_items(path);
  REQUIRE(back.size() == 2);
  REQUIRE(back[1].phone == "b");
  REQUIRE(back[1].onset == Approx(1.0));
}

TEST_CASE("slice_token frame selection") {
  FeatureSequence f;
  f.num_frames = 100;
  f.dim = 2;
  f.frames.assign(200, 0.0f);
  f.frame_shift = 0.010;

  SECTION("150 ms window covers 15 frames") {
    AbxItem item{"u", 0.0, 0.15, "a", "x", "y", "s"};
    auto s = slice_token(f, item);
    REQUIRE(s.num_frames == 15);
    REQUIRE(s.first_frame == 0);
  }
  SECTION("minimum one frame for a 5 ms interval") {
    AbxItem item{"u", 0.202, 0.207, "a", "x", "y", "s"};
    auto s = slice_token(f, item);
    REQUIRE(s.num_frames == 1);
    REQUIRE(s.first_frame == 20);
  }
  SECTION("interval beyond the utterance is a range error") {
    AbxItem item{"u", 0.95, 1.05, "a", "x", "y", "s"};
    REQUIRE_THROWS_AS(slice_token(f, item), RangeError);
  }
}

TEST_CASE("dtw closed forms") {
  std::vector<float> u = {1.0f, 0.0f, 0.0f};
  std::vector<float> v = {0.0f, 1.0f, 0.0f};
  SECTION("identical tokens") {
    std::vector<float> tok = {1, 0, 0, 0.5f, 0.5f, 0, 0, 1, 0};
    REQUIRE(dtw_distance(tok.data(), 3, tok.data(), 3, 3) == 0.0);
  }
  SECTION("orthogonal single frames") {
    REQUIRE(dtw_distance(u.data(), 1, v.data(), 1, 3) == Approx(0.5).epsilon(1e-12));
  }
  SECTION("repeating an identical frame costs nothing") {
    std::vector<float> uu = {1, 0, 0, 1, 0, 0};
    REQUIRE(dtw_distance(u.data(), 1, uu.data(), 2, 3) == 0.0);
  }
  SECTION("zero-vector conventions") {
    std::vector<float> z = {0, 0, 0};
    REQUIRE(frame_distance(z.data(), z.data(), 3, FrameMetric::angular) == 0.0);
    REQUIRE(frame_distance(z.data(), u.data(), 3, FrameMetric::angular) == 1.0);
  }
  SECTION("empty token is a contract error") {
    REQUIRE_THROWS_AS(dtw_distance(u.data(), 0, v.data(), 1, 3), ContractError);
  }
  SECTION("symmetry") {
    CounterRng rng(5, 0);
    std::vector<float> a(5 * 4), b(7 * 4);
    for (auto& x : a) x = float(rng.uniform(-1, 1));
    for (auto& x : b) x = float(rng.uniform(-1, 1));
    REQUIRE(dtw_distance(a.data(), 5, b.data(), 7, 4) ==
            dtw_distance(b.data(), 7, a.data(), 5, 4));
  }
  SECTION("angular metric ignores positive scaling") {
    CounterRng rng(6, 0);
    std::vector<float> a(4 * 3), b(6 * 3), a3(4 * 3);
    for (auto& x : a) x = float(rng.uniform(-1, 1));
    for (auto& x : b) x = float(rng.uniform(-1, 1));
    for (std::size_t i = 0; i < a.size(); ++i) a3[i] = 4.0f * a[i];
    REQUIRE(dtw_distance(a.data(), 4, b.data(), 6, 3) ==
            Approx(dtw_distance(a3.data(), 4, b.data(), 6, 3)).epsilon(1e-9));
  }
}

TEST_CASE("pca recovers exact low-rank structure") {
  CounterRng rng(11, 0);
  const int D = 10, N = 600;
  // three fixed directions
  std::vector<std::vector<double>> basis(3, std::vector<double>(D));
  for (auto& v : basis)
    for (auto& x : v) x = rng.next_gaussian();
  std::vector<float> frames(std::size_t(N) * D);
  for (int i = 0; i < N; ++i) {
    double c0 = rng.next_gaussian(), c1 = rng.next_gaussian(), c2 = rng.next_gaussian();
    for (int d = 0; d < D; ++d)
      frames[std::size_t(i) * D + d] =
          float(c0 * basis[0][std::size_t(d)] + c1 * basis[1][std::size_t(d)] +
                c2 * basis[2][std::size_t(d)]);
  }
  auto pca = fit_pca(frames.data(), N, D, 0.95);
  REQUIRE(pca.output_dim == 3);
  REQUIRE(pca.retained_variance == Approx(1.0).margin(1e-9));

  // projection rows orthonormal
  for (int r1 = 0; r1 < pca.output_dim; ++r1)
    for (int r2 = r1; r2 < pca.output_dim; ++r2) {
      double dot = 0;
      for (int d = 0; d < D; ++d)
        dot += pca.projection[std::size_t(r1) * D + d] * pca.projection[std::size_t(r2) * D + d];
      REQUIRE(dot == Approx(r1 == r2 ? 1.0 : 0.0).margin(1e-9));
    }
}

TEST_CASE("pca keeps everything for isotropic data") {
  CounterRng rng(12, 0);
  const int D = 10, N = 20000;
  std::vector<float> frames(std::size_t(N) * D);
  for (auto& v : frames) v = float(rng.next_gaussian());
  auto pca = fit_pca(frames.data(), N, D, 0.95);
  REQUIRE(pca.output_dim == 10);
  REQUIRE(pca.retained_variance == 1.0);
}

TEST_CASE("pca reconstruction error equals discarded eigenvalue mass") {
  CounterRng rng(13, 0);
  const int D = 8, N = 2000;
  std::vector<float> frames(std::size_t(N) * D);
  for (int i = 0; i < N; ++i)
    for (int d = 0; d < D; ++d)
      frames[std::size_t(i) * D + d] = float(rng.next_gaussian() * (1.0 + d));
  auto pca = fit_pca(frames.data(), N, D, 0.90);
  REQUIRE(pca.output_dim < D);

  double recon_err = 0.0;
  for (int i = 0; i < N; ++i) {
    const float* row = frames.data() + std::size_t(i) * D;
    std::vector<double> coeff(std::size_t(pca.output_dim), 0.0);
    for (int r = 0; r < pca.output_dim; ++r)
      for (int d = 0; d < D; ++d)
        coeff[std::size_t(r)] +=
            pca.projection[std::size_t(r) * D + d] * (row[d] - pca.mean[std::size_t(d)]);
    for (int d = 0; d < D; ++d) {
      double rec = pca.mean[std::size_t(d)];
      for (int r = 0; r < pca.output_dim; ++r)
        rec += coeff[std::size_t(r)] * pca.projection[std::size_t(r) * D + d];
      recon_err += (row[d] - rec) * (row[d] - rec);
    }
  }
  recon_err /= double(N - 1);
  double discarded = 0.0;
  for (int i = pca.output_dim; i < D; ++i) discarded += pca.eigenvalues[std::size_t(i)];
  REQUIRE(recon_err == Approx(discarded).epsilon(1e-6));
}

TEST_CASE("pca contracts") {
  std::vector<float> few(5 * 10, 1.0f);
  REQUIRE_THROWS_AS(fit_pca(few.data(), 5, 10, 0.95), ParameterError);
  // rank-1 data: all frames on one line
  CounterRng rng(14, 0);
  const int D = 6, N = 50;
  std::vector<double> dir(D);
  for (auto& v : dir) v = rng.next_gaussian();
  std::vector<float> frames(std::size_t(N) * D);
  for (int i = 0; i < N; ++i) {
    const double c = rng.next_gaussian();
    for (int d = 0; d < D; ++d) frames[std::size_t(i) * D + d] = float(c * dir[std::size_t(d)]);
  }
  REQUIRE_THROWS_AS(fit_pca(frames.data(), N, D, 0.95), NumericError);
}

TEST_CASE("score_cell closed forms and brute force") {
  // tokens: ids 0..4; A/X class at {0,1}, B class at {2,3}
  std::vector<Token> tokens(5);
  auto set = [&](int id, std::vector<float> frames, int dim) {
    tokens[std::size_t(id)].id = id;
    tokens[std::size_t(id)].dim = dim;
    tokens[std::size_t(id)].num_frames = int(frames.size()) / dim;
    tokens[std::size_t(id)].frames = std::move(frames);
  };
  set(0, {1, 0, 1, 0}, 2);
  set(1, {1, 0.1f, 1, 0}, 2);
  set(2, {0, 1, 0, 1}, 2);
  set(3, {0.1f, 1, 0, 1}, 2);
  set(4, {1, 0.05f}, 2);

  detail::DistanceCache cache;
  TripletCell cell;
  cell.condition = AbxCondition::within;
  cell.phone_a = "a";
  cell.phone_b = "b";
  cell.a_tokens = {0, 1};
  cell.b_tokens = {2, 3};
  cell.x_tokens = {0, 1};
  auto s = score_cell(cell, tokens, cache, FrameMetric::angular);
  // A close to X, B orthogonal: all triplets score 1
  REQUIRE(s.n_triplets == 4);  // 2 X * 1 A (self skipped) * 2 B
  REQUIRE(s.score == 1.0);

  // brute force over a random 2x2x1 cell must match exactly
  CounterRng rng(15, 0);
  std::vector<Token> rt(5);
  for (int i = 0; i < 5; ++i) {
    std::vector<float> fr(std::size_t(4) * 3);
    for (auto& v : fr) v = float(rng.uniform(-1, 1));
    rt[std::size_t(i)].id = i;
    rt[std::size_t(i)].dim = 3;
    rt[std::size_t(i)].num_frames = 4;
    rt[std::size_t(i)].frames = std::move(fr);
  }
  TripletCell rc;
  rc.condition = AbxCondition::across;
  rc.phone_a = "a";
  rc.phone_b = "b";
  rc.a_tokens = {0, 1};
  rc.b_tokens = {2, 3};
  rc.x_tokens = {4};
  detail::DistanceCache rcache;
  auto rs = score_cell(rc, rt, rcache, FrameMetric::angular);
  double acc = 0.0;
  int n = 0;
  for (int x : rc.x_tokens)
    for (int a : rc.a_tokens)
      for (int b : rc.b_tokens) {
        const double dax = dtw_distance(rt[std::size_t(a)].frames.data(), 4,
                                        rt[std::size_t(x)].frames.data(), 4, 3);
        const double dbx = dtw_distance(rt[std::size_t(b)].frames.data(), 4,
                                        rt[std::size_t(x)].frames.data(), 4, 3);
        acc += dax < dbx ? 1.0 : (dax == dbx ? 0.5 : 0.0);
        ++n;
      }
  REQUIRE(rs.n_triplets == n);
  REQUIRE(rs.score == acc / n);
}

TEST_CASE("tie rule scores one half") {
  std::vector<Token> tokens(3);
  for (int i = 0; i < 3; ++i) {
    tokens[std::size_t(i)].id = i;
    tokens[std::size_t(i)].dim = 2;
    tokens[std::size_t(i)].num_frames = 1;
  }
  tokens[0].frames = {1, 0};
  tokens[1].frames = {0, 1};   // d(A,X) = 0.5
  tokens[2].frames = {-1, 0};  // d(B,X) = ... X={1,0}: d = 1 -> not tie; make both orthogonal
  tokens[2].frames = {0, -1};  // d(B,X) = 0.5 too
  TripletCell cell;
  cell.condition = AbxCondition::across;
  cell.phone_a = "a";
  cell.phone_b = "b";
  cell.a_tokens = {1};
  cell.b_tokens = {2};
  cell.x_tokens = {0};
  detail::DistanceCache cache;
  auto s = score_cell(cell, tokens, cache, FrameMetric::angular);
  REQUIRE(s.n_triplets == 1);
  REQUIRE(s.score == 0.5);
}

TEST_CASE("aggregate closed forms") {
  auto mk = [](AbxCondition c, const std::string& a, const std::string& b,
               const std::string& spk_b, const std::string& spk_ax, const std::string& prev,
               const std::string& next, double score) {
    CellScore s;
    s.cell.condition = c;
    s.cell.phone_a = a;
    s.cell.phone_b = b;
    s.cell.speaker_b = spk_b;
    s.cell.speaker_ax = spk_ax;
    s.cell.prev = prev;
    s.cell.next = next;
    s.score = score;
    s.n_triplets = 10;
    return s;
  };
  SECTION("perfect cells give zero error") {
    std::vector<CellScore> scores = {mk(AbxCondition::within, "a", "b", "s", "s", "p", "q", 1.0),
                                     mk(AbxCondition::within, "b", "a", "s", "s", "p", "q", 1.0)};
    auto rep = aggregate(scores);
    REQUIRE(rep.error_percent.at("within") == Approx(0.0));
    REQUIRE(rep.error_percent.count("across") == 0);
  }
  SECTION("chance cells give 50 percent") {
    std::vector<CellScore> scores = {mk(AbxCondition::across, "a", "b", "s1", "s2", "p", "q", 0.5)};
    auto rep = aggregate(scores);
    REQUIRE(rep.error_percent.at("across") == Approx(50.0));
  }
  SECTION("two-pair toy set matches the hand-computed mean") {
    // pair {a,b}: contexts (p,q) scores 0.8/0.6 -> ctx mean symmetrized:
    //   ctx (p,q): ordered cells 0.8 and 0.6 -> 0.7; ctx (p,r): single 1.0
    //   speaker mean: (0.7 + 1.0)/2 = 0.85
    // pair {a,c}: single cell 0.5
    // condition score: (0.85 + 0.5)/2 = 0.675 -> error 32.5%
    std::vector<CellScore> scores = {
        mk(AbxCondition::within, "a", "b", "s", "s", "p", "q", 0.8),
        mk(AbxCondition::within, "b", "a", "s", "s", "p", "q", 0.6),
        mk(AbxCondition::within, "a", "b", "s", "s", "p", "r", 1.0),
        mk(AbxCondition::within, "a", "c", "s", "s", "p", "q", 0.5)};
    auto rep = aggregate(scores);
    REQUIRE(rep.error_percent.at("within") == Approx(32.5).margin(1e-9));
    REQUIRE(rep.pairs.size() == 2);
  }
}

TEST_CASE("random representations score at chance, separable ones near zero") {
  std::vector<std::string> phones = {"p", "q", "r", "s"};
  std::vector<std::pair<std::string, std::string>> contexts = {{"k", "k"}, {"m", "n"}};

  SECTION("gaussian noise: 50 +/- 2 percent") {
    CounterRng rng(31, 0);
    auto [seqs, items] = synth_eval(3, 8, phones, contexts, 8,
                                    [&](int, const std::string&, int, int) {
                                      std::vector<float> row(8);
                                      for (auto& v : row) v = float(rng.next_gaussian());
                                      return row;
                                    });
    AbxOptions opt;
    opt.use_pca = false;
    auto rep = run_abx(seqs, items, opt);
    REQUIRE(rep.triplets >= 10000);
    REQUIRE(rep.error_percent.at("within") == Approx(50.0).margin(2.0));
    REQUIRE(rep.error_percent.at("across") == Approx(50.0).margin(2.0));
  }

  SECTION("two separated clusters: < 5 percent error") {
    CounterRng rng(32, 0);
    std::vector<std::string> two = {"p", "q"};
    auto [seqs, items] = synth_eval(3, 8, two, contexts, 8,
                                    [&](int, const std::string& phone, int, int) {
                                      std::vector<float> row(8, 0.0f);
                                      const int base = phone == "p" ? 0 : 4;
                                      for (int d = 0; d < 4; ++d)
                                        row[std::size_t(base + d)] =
                                            1.0f + 0.05f * float(rng.next_gaussian());
                                      return row;
                                    });
    AbxOptions opt;
    opt.use_pca = false;
    auto rep = run_abx(seqs, items, opt);
    REQUIRE(rep.error_percent.at("within") < 5.0);
    REQUIRE(rep.error_percent.at("across") < 5.0);
  }
}

TEST_CASE("relabeling speakers and phones leaves scores unchanged") {
  std::vector<std::string> phones = {"p", "q", "r"};
  std::vector<std::pair<std::string, std::string>> contexts = {{"k", "k"}};
  CounterRng rng(33, 0);
  std::map<std::string, std::vector<float>> cache;
  auto emit = [&](int s, const std::string& phone, int i, int t) {
    const std::string key = std::to_string(s) + phone + std::to_string(i) + "_" +
                            std::to_string(t);
    auto it = cache.find(key);
    if (it != cache.end()) return it->second;
    std::vector<float> row(6);
    for (auto& v : row) v = float(rng.next_gaussian());
    cache[key] = row;
    return row;
  };
  auto [seqs, items] = synth_eval(3, 5, phones, contexts, 6, emit);
  AbxOptions opt;
  opt.use_pca = false;
  auto rep1 = run_abx(seqs, items, opt);

  auto seqs2 = seqs;
  auto items2 = items;
  auto rename_spk = [](const std::string& s) { return "zz_" + s; };
  auto rename_phone = [](const std::string& p) { return p + "_x"; };
  for (auto& f : seqs2) f.speaker_id = rename_spk(f.speaker_id);
  for (auto& it : items2) {
    it.speaker = rename_spk(it.speaker);
    it.phone = rename_phone(it.phone);
    it.prev = rename_phone(it.prev);
    it.next = rename_phone(it.next);
  }
  auto rep2 = run_abx(seqs2, items2, opt);
  REQUIRE(rep1.error_percent.at("within") == rep2.error_percent.at("within"));
  REQUIRE(rep1.error_percent.at("across") == rep2.error_percent.at("across"));

  // positive scaling of every latent vector
  auto seqs3 = seqs;
  for (auto& f : seqs3)
    for (auto& v : f.frames) v *= 7.5f;
  auto rep3 = run_abx(seqs3, items, opt);
  REQUIRE(rep1.error_percent.at("within") == Approx(rep3.error_percent.at("within")).margin(1e-9));
  REQUIRE(rep1.error_percent.at("across") == Approx(rep3.error_percent.at("across")).margin(1e-9));
}

TEST_CASE("abx report roundtrip") {
  AbxReport rep;
  rep.pairs = {{"across", "a", "b", 0.875, 120}, {"within", "a", "b", 0.9, 48}};
  rep.error_percent["across"] = 12.5;
  rep.error_percent["within"] = 10.0;
  const std::string path = temp_path("pcl_abx.csv");
  write_abx_report(path, rep);
  auto summary = read_abx_summary(path);
  REQUIRE(summary.at("across") == Approx(12.5));
  REQUIRE(summary.at("within") == Approx(10.0));
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  REQUIRE(line == "condition,phone_a,phone_b,score,n_triplets");
}
