#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "pcl/common.hpp"
#include "pcl/mfcc.hpp"
#include "pcl/features.hpp"
#include "pcl/tensor.hpp"

namespace pcl {

// ---------------------------------------------------------------------------
// Parameter registry: ordered (name, tensor) pairs, the unit of
// checkpointing and optimizer state.
// ---------------------------------------------------------------------------

template <typename S>
struct NamedParam {
  std::string name;
  Tensor<S> tensor;
};

template <typename S>
class ParamRegistry {
 public:
  Tensor<S> add(const std::string& name, Tensor<S> t) {
    params_.push_back({name, t});
    return t;
  }
  const std::vector<NamedParam<S>>& all() const { return params_; }
  Tensor<S> find(const std::string& name) const {
    for (const auto& p : params_)
      if (p.name == name) return p.tensor;
    throw ParameterError("unknown parameter: " + name);
  }

 private:
  std::vector<NamedParam<S>> params_;
};

template <typename S>
struct LinearLayer {
  Tensor<S> w, b;

  LinearLayer() = default;
  LinearLayer(Tape<S>& tape, ParamRegistry<S>& reg, const std::string& name, int in, int out,
              CounterRng& rng) {
    const S a = S(std::sqrt(6.0 / (in + out)));
    w = reg.add(name + ".w", tape.uniform({in, out}, a, rng));
    b = reg.add(name + ".b", tape.zeros({out}, true));
  }

  Tensor<S> apply(const Tensor<S>& x) const { return affine(x, w, b); }
};

template <typename S>
struct GruLayer {
  GruWeights<S> w;
  int input_dim = 0, hidden = 0;

  GruLayer() = default;
  GruLayer(Tape<S>& tape, ParamRegistry<S>& reg, const std::string& name, int in, int units,
           CounterRng& rng)
      : input_dim(in), hidden(units) {
    const S ax = S(std::sqrt(6.0 / (in + units)));
    const S ah = S(std::sqrt(6.0 / (units + units)));
    w.wr = reg.add(name + ".wr", tape.uniform({in, units}, ax, rng));
    w.wu = reg.add(name + ".wu", tape.uniform({in, units}, ax, rng));
    w.wn = reg.add(name + ".wn", tape.uniform({in, units}, ax, rng));
    w.ur = reg.add(name + ".ur", tape.uniform({units, units}, ah, rng));
    w.uu = reg.add(name + ".uu", tape.uniform({units, units}, ah, rng));
    w.un = reg.add(name + ".un", tape.uniform({units, units}, ah, rng));
    w.br = reg.add(name + ".br", tape.zeros({units}, true));
    w.bu = reg.add(name + ".bu", tape.zeros({units}, true));
    w.bn = reg.add(name + ".bn", tape.zeros({units}, true));
  }

  // x is time-major flattened (T*B, input_dim); returns (T*B, hidden).
  // Zero initial state.
  Tensor<S> forward(const Tensor<S>& x, int T, int B) const {
    Tape<S>& tape = *x.tape();
    Tensor<S> h = tape.zeros({B, hidden});
    std::vector<Tensor<S>> steps;
    steps.reserve(std::size_t(T));
    for (int t = 0; t < T; ++t) {
      auto xt = slice_rows(x, std::int64_t(t) * B, B);
      h = gru_cell(xt, h, w);
      steps.push_back(h);
    }
    return concat_rows(steps);
  }
};

// ---------------------------------------------------------------------------
// Batches. Storage convention is batch-major samples (B x T x D); the
// recurrent forward pass runs on a time-major flattening so each step is a
// contiguous row window.
// ---------------------------------------------------------------------------

template <typename S>
struct SequenceBatch {
  int T = 0, B = 0, D = 0;
  std::vector<S> frames;  // time-major: (T*B) x D
  std::vector<S> mask;    // time-major: T*B

  std::int64_t rows() const { return std::int64_t(T) * B; }
};

template <typename S>
SequenceBatch<S> make_batch(const std::vector<const TrainingSample*>& samples, int dim) {
  if (samples.empty()) throw ParameterError("make_batch: empty batch");
  SequenceBatch<S> batch;
  batch.B = int(samples.size());
  batch.T = int(samples[0]->mask.size());
  batch.D = dim;
  batch.frames.assign(std::size_t(batch.rows()) * dim, S(0));
  batch.mask.assign(std::size_t(batch.rows()), S(0));
  for (int b = 0; b < batch.B; ++b) {
    const TrainingSample& s = *samples[std::size_t(b)];
    if (int(s.mask.size()) != batch.T || s.frames.size() != std::size_t(batch.T) * dim)
      throw DimensionError("make_batch: inconsistent sample shapes");
    for (int t = 0; t < batch.T; ++t) {
      const float* src = s.frames.data() + std::size_t(t) * dim;
      S* dst = batch.frames.data() + (std::size_t(t) * batch.B + b) * dim;
      for (int d = 0; d < dim; ++d) dst[d] = S(src[d]);
      batch.mask[std::size_t(t) * batch.B + b] = S(s.mask[std::size_t(t)]);
    }
  }
  return batch;
}

template <typename S>
SequenceBatch<S> make_batch(const FeatureSequence& f) {
  SequenceBatch<S> batch;
  batch.B = 1;
  batch.T = f.num_frames;
  batch.D = f.dim;
  batch.frames.assign(f.frames.begin(), f.frames.end());
  batch.mask.assign(std::size_t(batch.T), S(1));
  return batch;
}

// ---------------------------------------------------------------------------
// APC: PreNet (3 x FC 128, ReLU, dropout) -> 3 residual GRU layers of 512
// -> width-1 convolution (per-frame affine) back to the input dimension.
// Predicts the input `horizon` frames ahead; the top GRU layer output is the
// latent representation.
// ---------------------------------------------------------------------------

struct ApcConfig {
  int input_dim = 39;
  int prenet_units = 128;
  int prenet_layers = 3;
  int gru_units = 512;
  int gru_layers = 3;
  int horizon = 5;
  double dropout = 0.2;
};

struct CpcConfig {
  int input_dim = 39;
  int encoder_units = 512;
  int encoder_layers = 3;
  int context_units = 256;
  int prediction_steps = 12;
  int num_negatives = 10;
  double dropout = 0.2;
  bool negatives_same_utterance = false;
};

enum class ModelKind { apc, cpc };

inline std::string to_string(ModelKind k) { return k == ModelKind::apc ? "apc" : "cpc"; }

template <typename S>
class ApcModel {
 public:
  ApcConfig cfg;
  Tape<S> tape;
  ParamRegistry<S> params;

  explicit ApcModel(const ApcConfig& config, std::uint64_t init_seed) : cfg(config) {
    CounterRng rng(init_seed, streams::init);
    int in = cfg.input_dim;
    for (int i = 0; i < cfg.prenet_layers; ++i) {
      prenet_.emplace_back(tape, params, "prenet." + std::to_string(i), in, cfg.prenet_units,
                           rng);
      in = cfg.prenet_units;
    }
    for (int i = 0; i < cfg.gru_layers; ++i) {
      grus_.emplace_back(tape, params, "gru." + std::to_string(i),
                         i == 0 ? cfg.prenet_units : cfg.gru_units, cfg.gru_units, rng);
    }
    postnet_ = LinearLayer<S>(tape, params, "postnet", cfg.gru_units, cfg.input_dim, rng);
    tape.freeze_parameters();
  }

  struct Forward {
    Tensor<S> latents;      // (T*B) x gru_units, time-major
    Tensor<S> predictions;  // (T*B) x input_dim, time-major
    Tensor<S> input;        // leaf
    std::vector<Tensor<S>> layer_outputs;
    int T = 0, B = 0;
  };

  Forward forward(const SequenceBatch<S>& batch, bool training, CounterRng& dropout_rng) {
    if (batch.D != cfg.input_dim)
      throw DimensionError("apc_forward: input dim " + std::to_string(batch.D) + " != " +
                           std::to_string(cfg.input_dim));
    Forward out;
    out.T = batch.T;
    out.B = batch.B;
    out.input = tape.make({batch.rows(), batch.D}, batch.frames, false);
    Tensor<S> h = out.input;
    for (auto& layer : prenet_)
      h = dropout(relu(layer.apply(h)), cfg.dropout, training, dropout_rng);
    Tensor<S> g = h;
    for (std::size_t i = 0; i < grus_.size(); ++i) {
      Tensor<S> y = grus_[i].forward(g, batch.T, batch.B);
      if (i > 0) y = add(y, g);  // residual once widths match
      g = y;
      out.layer_outputs.push_back(g);
    }
    out.latents = g;
    out.predictions = postnet_.apply(g);
    return out;
  }

 private:
  std::vector<LinearLayer<S>> prenet_;
  std::vector<GruLayer<S>> grus_;
  LinearLayer<S> postnet_;
};

// Sum of per-frame absolute errors between predictions at t and inputs at
// t+k, averaged over valid (unmasked) frame pairs across the batch.
template <typename S>
Tensor<S> mae_loss(const Tensor<S>& predictions, const Tensor<S>& inputs,
                   const SequenceBatch<S>& batch, int horizon) {
  const int T = batch.T, B = batch.B, k = horizon;
  if (k < 1 || k >= T)
    throw ContractError("mae_loss: horizon " + std::to_string(k) + " must be in [1," +
                        std::to_string(T) + ")");
  if (predictions.shape() != inputs.shape())
    throw DimensionError("mae_loss: prediction shape " + shape_str(predictions.shape()) +
                         " != target shape " + shape_str(inputs.shape()));
  const std::int64_t rows = std::int64_t(T - k) * B;
  auto pred = slice_rows(predictions, 0, rows);
  auto target = slice_rows(inputs, std::int64_t(k) * B, rows);
  std::vector<S> weights(static_cast<std::size_t>(rows));
  double valid = 0.0;
  for (std::int64_t i = 0; i < rows; ++i) {
    const S w = batch.mask[std::size_t(i)] * batch.mask[std::size_t(i + std::int64_t(k) * B)];
    weights[std::size_t(i)] = w;
    valid += double(w);
  }
  if (valid == 0.0) throw ContractError("mae_loss undefined: all frame pairs masked");
  auto total = masked_abs_error_sum(pred, target, std::move(weights));
  return scale(total, S(1.0 / valid));
}

// ---------------------------------------------------------------------------
// CPC: frame-local encoder (3 x FC 512, ReLU, dropout) -> z, single GRU 256
// with output dropout -> c, and one affine predictor per step k.
// ---------------------------------------------------------------------------

template <typename S>
class CpcModel {
 public:
  CpcConfig cfg;
  Tape<S> tape;
  ParamRegistry<S> params;

  explicit CpcModel(const CpcConfig& config, std::uint64_t init_seed) : cfg(config) {
    CounterRng rng(init_seed, streams::init);
    int in = cfg.input_dim;
    for (int i = 0; i < cfg.encoder_layers; ++i) {
      encoder_.emplace_back(tape, params, "enc." + std::to_string(i), in, cfg.encoder_units,
                            rng);
      in = cfg.encoder_units;
    }
    gru_ = GruLayer<S>(tape, params, "ar", cfg.encoder_units, cfg.context_units, rng);
    for (int k = 1; k <= cfg.prediction_steps; ++k)
      predictors_.emplace_back(tape, params, "pred." + std::to_string(k), cfg.context_units,
                               cfg.encoder_units, rng);
    tape.freeze_parameters();
  }

  struct Forward {
    Tensor<S> z;  // (T*B) x encoder_units
    Tensor<S> c;  // (T*B) x context_units
    int T = 0, B = 0;
  };

  Forward forward(const SequenceBatch<S>& batch, bool training, CounterRng& dropout_rng) {
    if (batch.D != cfg.input_dim)
      throw DimensionError("cpc_forward: input dim " + std::to_string(batch.D) + " != " +
                           std::to_string(cfg.input_dim));
    Forward out;
    out.T = batch.T;
    out.B = batch.B;
    Tensor<S> h = tape.make({batch.rows(), batch.D}, batch.frames, false);
    for (auto& layer : encoder_)
      h = dropout(relu(layer.apply(h)), cfg.dropout, training, dropout_rng);
    out.z = h;
    Tensor<S> c = gru_.forward(h, batch.T, batch.B);
    out.c = dropout(c, cfg.dropout, training, dropout_rng);
    return out;
  }

  const LinearLayer<S>& predictor(int k) const { return predictors_.at(std::size_t(k - 1)); }

 private:
  std::vector<LinearLayer<S>> encoder_;
  GruLayer<S> gru_;
  std::vector<LinearLayer<S>> predictors_;
};

// Uniform draws without replacement from `valid` excluding `positive`.
inline std::vector<std::int64_t> sample_negatives(const std::vector<std::int64_t>& valid,
                                                  std::int64_t positive, int count,
                                                  CounterRng& rng) {
  std::int64_t candidates = 0;
  for (auto v : valid) candidates += v != positive ? 1 : 0;
  if (candidates < count)
    throw SamplingError("sample_negatives: need " + std::to_string(count) +
                        " candidates, have " + std::to_string(candidates));
  std::vector<std::int64_t> out;
  out.reserve(std::size_t(count));
  while (int(out.size()) < count) {
    const std::int64_t pick = valid[std::size_t(rng.next_below(valid.size()))];
    if (pick == positive) continue;
    bool dup = false;
    for (auto v : out) dup = dup || v == pick;
    if (!dup) out.push_back(pick);
  }
  return out;
}

// InfoNCE over all valid (b, t, k): the positive z_{t+k} is classified
// against `num_negatives` z vectors drawn from the batch, scored by the
// bilinear product z^T (W_k c_t + b_k). exp() never materializes; the logits
// feed a stable softmax cross-entropy directly.
template <typename S>
Tensor<S> infonce_loss(CpcModel<S>& model, const typename CpcModel<S>::Forward& fwd,
                       const SequenceBatch<S>& batch, CounterRng& rng) {
  const int T = batch.T, B = batch.B;
  const int negs = model.cfg.num_negatives;

  std::vector<std::int64_t> valid_all;
  for (std::int64_t i = 0; i < batch.rows(); ++i)
    if (batch.mask[std::size_t(i)] != S(0)) valid_all.push_back(i);
  if (std::int64_t(valid_all.size()) < negs + 2)
    throw SamplingError("infonce_loss: batch has " + std::to_string(valid_all.size()) +
                        " valid frames, need more than " + std::to_string(negs + 1));

  // same-utterance sampling keeps speaker identity uninformative
  std::vector<std::vector<std::int64_t>> valid_per_seq;
  if (model.cfg.negatives_same_utterance) {
    valid_per_seq.resize(std::size_t(B));
    for (auto i : valid_all) valid_per_seq[std::size_t(i % B)].push_back(i);
  }

  Tensor<S> total;
  double total_weight = 0.0;
  for (int k = 1; k <= model.cfg.prediction_steps; ++k) {
    if (T - k <= 0) continue;
    const std::int64_t rows = std::int64_t(T - k) * B;
    auto c_part = slice_rows(fwd.c, 0, rows);
    auto pred = model.predictor(k).apply(c_part);

    std::vector<std::int64_t> pos(static_cast<std::size_t>(rows));
    std::vector<std::int64_t> neg(static_cast<std::size_t>(rows * negs));
    std::vector<S> weights(static_cast<std::size_t>(rows));
    for (std::int64_t i = 0; i < rows; ++i) {
      const std::int64_t target = i + std::int64_t(k) * B;
      const S w = batch.mask[std::size_t(i)] * batch.mask[std::size_t(target)];
      weights[std::size_t(i)] = w;
      pos[std::size_t(i)] = w != S(0) ? target : valid_all[0];
      if (w != S(0)) {
        const auto& pool = model.cfg.negatives_same_utterance
                               ? valid_per_seq[std::size_t(i % B)]
                               : valid_all;
        auto draws = sample_negatives(pool, target, negs, rng);
        std::copy(draws.begin(), draws.end(), neg.begin() + i * negs);
        total_weight += double(w);
      }
    }
    auto term = nce_cross_entropy_sum(pred, fwd.z, std::move(pos), std::move(neg),
                                      std::move(weights));
    total = total.valid() ? add(total, term) : term;
  }
  if (!total.valid() || total_weight == 0.0)
    throw ContractError("infonce_loss undefined: no valid (t, k) pairs");
  return scale(total, S(1.0 / total_weight));
}

// ---------------------------------------------------------------------------
// Representation extraction: inference mode, full utterance, one latent per
// input frame.
// ---------------------------------------------------------------------------

enum class Repr { z, c };

template <typename S>
FeatureSequence extract_representations(ApcModel<S>& model, const FeatureSequence& f,
                                        Repr which, int layer = -1) {
  if (which == Repr::c)
    throw CapabilityError("APC has no context representation; extract z instead");
  NoGradGuard<S> guard(model.tape);
  CounterRng unused(0, streams::dropout);
  auto batch = make_batch<S>(f);
  auto fwd = model.forward(batch, false, unused);
  const Tensor<S> src = layer < 0 ? fwd.latents : fwd.layer_outputs.at(std::size_t(layer));
  FeatureSequence out;
  out.num_frames = f.num_frames;
  out.dim = int(src.dim(1));
  out.frame_shift = f.frame_shift;
  out.frame_length = f.frame_length;
  out.source_id = f.source_id;
  out.speaker_id = f.speaker_id;
  out.frames.resize(std::size_t(out.num_frames) * out.dim);
  for (std::size_t i = 0; i < out.frames.size(); ++i) out.frames[i] = float(src.values()[i]);
  model.tape.reset();
  return out;
}

template <typename S>
FeatureSequence extract_representations(CpcModel<S>& model, const FeatureSequence& f,
                                        Repr which) {
  NoGradGuard<S> guard(model.tape);
  CounterRng unused(0, streams::dropout);
  auto batch = make_batch<S>(f);
  auto fwd = model.forward(batch, false, unused);
  const Tensor<S> src = which == Repr::z ? fwd.z : fwd.c;
  FeatureSequence out;
  out.num_frames = f.num_frames;
  out.dim = int(src.dim(1));
  out.frame_shift = f.frame_shift;
  out.frame_length = f.frame_length;
  out.source_id = f.source_id;
  out.speaker_id = f.speaker_id;
  out.frames.resize(std::size_t(out.num_frames) * out.dim);
  for (std::size_t i = 0; i < out.frames.size(); ++i) out.frames[i] = float(src.values()[i]);
  model.tape.reset();
  return out;
}

}  // namespace pcl
