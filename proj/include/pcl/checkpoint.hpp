#pragma once

#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "pcl/adam.hpp"
#include "pcl/models.hpp"

namespace pcl {

// PCKP container: model kind, config key-values, named float32 parameters,
// Adam moments, epoch, losses, seed. Little-endian throughout.

struct Checkpoint {
  ModelKind kind = ModelKind::apc;
  std::map<std::string, std::string> config;
  std::vector<std::pair<std::string, std::pair<Shape, std::vector<float>>>> parameters;
  std::vector<std::vector<float>> adam_m, adam_v;
  std::int64_t adam_t = 0;
  int epoch = 0;
  float train_loss = 0.0f;
  float val_loss = 0.0f;
  std::uint64_t seed = 0;
};

inline void save_checkpoint(const std::string& path, const Checkpoint& c) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot create " + path);
  out.write("PCKP", 4);
  write_u32(out, 1);  // version
  write_u32(out, c.kind == ModelKind::apc ? 1u : 2u);
  write_u32(out, std::uint32_t(c.config.size()));
  for (const auto& [k, v] : c.config) {
    write_string(out, k);
    write_string(out, v);
  }
  write_u32(out, std::uint32_t(c.parameters.size()));
  for (const auto& [name, sv] : c.parameters) {
    write_string(out, name);
    write_u32(out, std::uint32_t(sv.first.size()));
    for (auto e : sv.first) write_u32(out, std::uint32_t(e));
    write_f32_array(out, sv.second.data(), sv.second.size());
  }
  const bool has_adam = !c.adam_m.empty();
  write_u32(out, has_adam ? 1u : 0u);
  if (has_adam) {
    write_u64(out, std::uint64_t(c.adam_t));
    for (std::size_t i = 0; i < c.parameters.size(); ++i) {
      write_f32_array(out, c.adam_m[i].data(), c.adam_m[i].size());
      write_f32_array(out, c.adam_v[i].data(), c.adam_v[i].size());
    }
  }
  write_u32(out, std::uint32_t(c.epoch));
  write_f32(out, c.train_loss);
  write_f32(out, c.val_loss);
  write_u64(out, c.seed);
  if (!out) throw IoError("write failed: " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  char magic[4];
  read_bytes(in, magic, 4);
  if (std::string(magic, 4) != "PCKP") throw FormatError(path + ": bad magic, expected PCKP");
  const std::uint32_t version = read_u32(in);
  if (version != 1) throw FormatError(path + ": unsupported version " + std::to_string(version));
  Checkpoint c;
  const std::uint32_t kind = read_u32(in);
  if (kind != 1 && kind != 2) throw FormatError(path + ": unknown model kind tag");
  c.kind = kind == 1 ? ModelKind::apc : ModelKind::cpc;
  const std::uint32_t nconf = read_u32(in);
  for (std::uint32_t i = 0; i < nconf; ++i) {
    std::string k = read_string(in);
    c.config[k] = read_string(in);
  }
  const std::uint32_t nparams = read_u32(in);
  for (std::uint32_t i = 0; i < nparams; ++i) {
    std::string name = read_string(in);
    const std::uint32_t rank = read_u32(in);
    Shape shape(rank);
    for (auto& e : shape) e = std::int64_t(read_u32(in));
    std::vector<float> data(static_cast<std::size_t>(numel(shape)));
    read_f32_array(in, data.data(), data.size());
    c.parameters.emplace_back(std::move(name), std::make_pair(std::move(shape), std::move(data)));
  }
  const std::uint32_t has_adam = read_u32(in);
  if (has_adam) {
    c.adam_t = std::int64_t(read_u64(in));
    for (std::uint32_t i = 0; i < nparams; ++i) {
      const std::size_t n = c.parameters[i].second.second.size();
      c.adam_m.emplace_back(n);
      c.adam_v.emplace_back(n);
      read_f32_array(in, c.adam_m.back().data(), n);
      read_f32_array(in, c.adam_v.back().data(), n);
    }
  }
  c.epoch = int(read_u32(in));
  c.train_loss = read_f32(in);
  c.val_loss = read_f32(in);
  c.seed = read_u64(in);
  return c;
}

template <typename S>
void fill_checkpoint_params(Checkpoint& c, const ParamRegistry<S>& reg) {
  c.parameters.clear();
  for (const auto& p : reg.all()) {
    std::vector<float> data(p.tensor.values().size());
    for (std::size_t i = 0; i < data.size(); ++i) data[i] = float(p.tensor.values()[i]);
    c.parameters.emplace_back(p.name, std::make_pair(p.tensor.shape(), std::move(data)));
  }
}

template <typename S>
void restore_params(const Checkpoint& c, ParamRegistry<S>& reg) {
  if (c.parameters.size() != reg.all().size())
    throw FormatError("checkpoint parameter count does not match the model");
  for (std::size_t i = 0; i < c.parameters.size(); ++i) {
    const auto& [name, sv] = c.parameters[i];
    Tensor<S> t = reg.find(name);
    if (t.shape() != sv.first)
      throw FormatError("checkpoint parameter " + name + " has shape mismatch");
    auto w = t.mutable_values();
    for (std::size_t j = 0; j < w.size(); ++j) w[j] = S(sv.second[j]);
  }
}

inline ApcConfig apc_config_from(const std::map<std::string, std::string>& kv) {
  ApcConfig cfg;
  auto geti = [&](const char* key, int dflt) {
    auto it = kv.find(key);
    return it == kv.end() ? dflt : std::stoi(it->second);
  };
  auto getd = [&](const char* key, double dflt) {
    auto it = kv.find(key);
    return it == kv.end() ? dflt : std::stod(it->second);
  };
  cfg.input_dim = geti("input_dim", cfg.input_dim);
  cfg.prenet_units = geti("prenet_units", cfg.prenet_units);
  cfg.prenet_layers = geti("prenet_layers", cfg.prenet_layers);
  cfg.gru_units = geti("gru_units", cfg.gru_units);
  cfg.gru_layers = geti("gru_layers", cfg.gru_layers);
  cfg.horizon = geti("horizon", cfg.horizon);
  cfg.dropout = getd("dropout", cfg.dropout);
  return cfg;
}

inline CpcConfig cpc_config_from(const std::map<std::string, std::string>& kv) {
  CpcConfig cfg;
  auto geti = [&](const char* key, int dflt) {
    auto it = kv.find(key);
    return it == kv.end() ? dflt : std::stoi(it->second);
  };
  auto getd = [&](const char* key, double dflt) {
    auto it = kv.find(key);
    return it == kv.end() ? dflt : std::stod(it->second);
  };
  cfg.input_dim = geti("input_dim", cfg.input_dim);
  cfg.encoder_units = geti("encoder_units", cfg.encoder_units);
  cfg.encoder_layers = geti("encoder_layers", cfg.encoder_layers);
  cfg.context_units = geti("context_units", cfg.context_units);
  cfg.prediction_steps = geti("prediction_steps", cfg.prediction_steps);
  cfg.num_negatives = geti("num_negatives", cfg.num_negatives);
  cfg.dropout = getd("dropout", cfg.dropout);
  auto it = kv.find("negatives_same_utterance");
  if (it != kv.end()) cfg.negatives_same_utterance = it->second == "1" || it->second == "true";
  return cfg;
}

inline std::map<std::string, std::string> apc_config_kv(const ApcConfig& cfg) {
  return {{"input_dim", std::to_string(cfg.input_dim)},
          {"prenet_units", std::to_string(cfg.prenet_units)},
          {"prenet_layers", std::to_string(cfg.prenet_layers)},
          {"gru_units", std::to_string(cfg.gru_units)},
          {"gru_layers", std::to_string(cfg.gru_layers)},
          {"horizon", std::to_string(cfg.horizon)},
          {"dropout", std::to_string(cfg.dropout)}};
}

inline std::map<std::string, std::string> cpc_config_kv(const CpcConfig& cfg) {
  return {{"input_dim", std::to_string(cfg.input_dim)},
          {"encoder_units", std::to_string(cfg.encoder_units)},
          {"encoder_layers", std::to_string(cfg.encoder_layers)},
          {"context_units", std::to_string(cfg.context_units)},
          {"prediction_steps", std::to_string(cfg.prediction_steps)},
          {"num_negatives", std::to_string(cfg.num_negatives)},
          {"dropout", std::to_string(cfg.dropout)},
          {"negatives_same_utterance", cfg.negatives_same_utterance ? "1" : "0"}};
}

}  // namespace pcl
