#pragma once

#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "pcl/common.hpp"

namespace pcl {

// Plain-text experiment configuration: `key = value` lines, '#' comments.
// The key set is closed; unknown keys are rejected at load time.

inline const std::set<std::string>& known_config_keys() {
  static const std::set<std::string> keys = {
      "corpus.dir",          "corpus.manifest",      "corpus.items",
      "features.archive",    "features.stats",       "features.split",
      "features.normalize",  "features.preemphasis", "features.window_ms",
      "features.shift_ms",   "features.mel_filters", "features.ceps",
      "features.sample_rate",
      "model.kind",          "model.horizon",        "model.prediction_steps",
      "model.negatives",     "model.negatives_same_utterance", "model.dropout",
      "train.lr",            "train.batch_size",     "train.max_epochs",
      "train.checkpoint_epochs", "train.seed",       "train.runs",
      "train.fraction",      "train.split_ratio",
      "extract.repr",        "extract.layer",
      "abx.metric",          "abx.pca",              "abx.pca_variance",
      "abx.max_pca_frames",
      "synth.phones",        "synth.speakers",       "synth.utterances",
      "synth.utterance_s",
      "out.dir",             "exp.id"};
  return keys;
}

class ExperimentConfig {
 public:
  ExperimentConfig() = default;

  static ExperimentConfig load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path);
    ExperimentConfig cfg;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line = line.substr(0, hash);
      auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t\r");
        if (b == std::string::npos) return std::string();
        const auto e = s.find_last_not_of(" \t\r");
        return s.substr(b, e - b + 1);
      };
      line = trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos)
        throw ParseError(path + ":" + std::to_string(line_no) + ": expected key = value");
      const std::string key = trim(line.substr(0, eq));
      const std::string value = trim(line.substr(eq + 1));
      if (!known_config_keys().count(key))
        throw ParameterError(path + ":" + std::to_string(line_no) + ": unknown key: " + key);
      cfg.values_[key] = value;
    }
    return cfg;
  }

  void save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw IoError("cannot create config " + path);
    for (const auto& [k, v] : values_) out << k << " = " << v << '\n';
  }

  bool has(const std::string& key) const { return values_.count(key) != 0; }

  void set(const std::string& key, const std::string& value) {
    if (!known_config_keys().count(key)) throw ParameterError("unknown config key: " + key);
    values_[key] = value;
  }

  std::string get(const std::string& key, const std::string& dflt = "") const {
    auto it = values_.find(key);
    return it == values_.end() ? dflt : it->second;
  }

  double get_double(const std::string& key, double dflt) const {
    auto it = values_.find(key);
    if (it == values_.end()) return dflt;
    try {
      return std::stod(it->second);
    } catch (const std::exception&) {
      throw ParameterError("config key " + key + " is not a number: " + it->second);
    }
  }

  std::int64_t get_int(const std::string& key, std::int64_t dflt) const {
    auto it = values_.find(key);
    if (it == values_.end()) return dflt;
    try {
      return std::stoll(it->second);
    } catch (const std::exception&) {
      throw ParameterError("config key " + key + " is not an integer: " + it->second);
    }
  }

  bool get_bool(const std::string& key, bool dflt) const {
    auto it = values_.find(key);
    if (it == values_.end()) return dflt;
    if (it->second == "on" || it->second == "true" || it->second == "1") return true;
    if (it->second == "off" || it->second == "false" || it->second == "0") return false;
    throw ParameterError("config key " + key + " expects on/off, got " + it->second);
  }

  const std::map<std::string, std::string>& all() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

// "1-10,20-100:10" -> 1..10 plus 20,30,...,100
inline std::vector<int> parse_epoch_list(const std::string& text) {
  std::vector<int> out;
  std::istringstream ss(text);
  std::string part;
  while (std::getline(ss, part, ',')) {
    if (part.empty()) continue;
    int step = 1;
    std::string range = part;
    const auto colon = part.find(':');
    if (colon != std::string::npos) {
      step = std::stoi(part.substr(colon + 1));
      range = part.substr(0, colon);
    }
    if (step < 1) throw ParameterError("epoch list step must be positive: " + part);
    const auto dash = range.find('-');
    try {
      if (dash == std::string::npos) {
        out.push_back(std::stoi(range));
      } else {
        const int lo = std::stoi(range.substr(0, dash));
        const int hi = std::stoi(range.substr(dash + 1));
        if (lo > hi) throw ParameterError("backwards epoch range: " + part);
        for (int e = lo; e <= hi; e += step) out.push_back(e);
      }
    } catch (const std::invalid_argument&) {
      throw ParameterError("malformed epoch list entry: " + part);
    }
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

inline std::string format_epoch_list(const std::vector<int>& epochs) {
  std::ostringstream os;
  for (std::size_t i = 0; i < epochs.size(); ++i) os << (i ? "," : "") << epochs[i];
  return os.str();
}

}  // namespace pcl
