#pragma once

// INI experiment configuration.
//
//   [experiment]  name, seed (required), dataset (required: two_moons | idx),
//                 mapping (assignment | majority)
//   [two_moons]   train_samples, test_samples, noise, ood_samples, ood_lower,
//                 ood_upper, blob_centers ("x,y; x,y; ..."), blob_std, blob_samples
//   [idx]         train_images, train_labels, test_images, test_labels,
//                 held_out ("0,5,7"), train_limit, test_limit (0 = all)
//   [model]       hidden ("32,32,32")
//   [initial]     optimizer (adam | sgd), learning_rate, momentum, weight_decay,
//                 beta1, beta2, epsilon, epochs, batch_size, lambda_em,
//                 known_unknowns (uniform | mixup), mixup_samples (0 = batch size)
//   [detect]      tau, oracle, false_positive_rate
//   [distances]   source (euclidean | precomputed), file, oracle
//   [extend]      k, init_scale (omit for 1/sqrt(fan_in))
//   [finetune]    optimizer fields as in [initial], epochs, batch_size, alpha,
//                 lambda1, lambda2, lambda3, freeze_encoder
//   [check]       min_recall, max_fpr, min_acc_known, min_acc_novel,
//                 min_novel_in_empty, min_purity (all optional)
//
// Omitted keys take the defaults of ExperimentConfig. Unknown sections or
// keys, malformed values and failed validation raise ConfigError naming the
// key as "section.key".

#include <array>
#include <charconv>
#include <concepts>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "novelty/errors.hpp"
#include "novelty/optim.hpp"
#include "novelty/pipeline.hpp"

namespace novelty {

namespace config_detail {

inline constexpr std::array<std::pair<DatasetKind, std::string_view>, 2> kDatasetNames{
    {{DatasetKind::kTwoMoons, "two_moons"}, {DatasetKind::kIdx, "idx"}}};
inline constexpr std::array<std::pair<MappingRule, std::string_view>, 2> kMappingNames{
    {{MappingRule::kAssignment, "assignment"}, {MappingRule::kMajority, "majority"}}};
inline constexpr std::array<std::pair<KnownUnknowns, std::string_view>, 2> kKnownUnknownNames{
    {{KnownUnknowns::kUniform, "uniform"}, {KnownUnknowns::kMixup, "mixup"}}};
inline constexpr std::array<std::pair<DistanceSource, std::string_view>, 2> kDistanceNames{
    {{DistanceSource::kEuclidean, "euclidean"}, {DistanceSource::kPrecomputed, "precomputed"}}};
inline constexpr std::array<std::pair<OptimizerKind, std::string_view>, 2> kOptimizerNames{
    {{OptimizerKind::kAdam, "adam"}, {OptimizerKind::kSgd, "sgd"}}};

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.push_back(trim(s.substr(start, pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

// Text <-> value conversions. Parsers return false on malformed input.
template <typename T>
bool parse_number(const std::string& text, T& out) {
  if (text.empty() || text[0] == '+') return false;
  if constexpr (std::is_unsigned_v<T>)
    if (text[0] == '-') return false;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), out);
  return res.ec == std::errc() && res.ptr == text.data() + text.size();
}

inline bool parse_value(const std::string& t, std::string& out) {
  out = t;
  return true;
}
inline bool parse_value(const std::string& t, double& out) { return parse_number(t, out); }
template <std::unsigned_integral T>
bool parse_value(const std::string& t, T& out) {
  return parse_number(t, out);
}
inline bool parse_value(const std::string& t, bool& out) {
  if (t == "true" || t == "1") out = true;
  else if (t == "false" || t == "0") out = false;
  else return false;
  return true;
}
inline bool parse_value(const std::string& t, std::vector<std::size_t>& out) {
  out.clear();
  if (t.empty()) return true;
  for (const auto& item : split(t, ',')) {
    std::size_t v = 0;
    if (!parse_number(item, v)) return false;
    out.push_back(v);
  }
  return true;
}
inline bool parse_value(const std::string& t, std::set<int>& out) {
  out.clear();
  if (t.empty()) return true;
  for (const auto& item : split(t, ',')) {
    int v = 0;
    if (!parse_number(item, v) || !out.insert(v).second) return false;
  }
  return true;
}
inline bool parse_value(const std::string& t, std::vector<std::vector<double>>& out) {
  out.clear();
  if (t.empty()) return true;
  for (const auto& point : split(t, ';')) {
    auto& row = out.emplace_back();
    for (const auto& item : split(point, ',')) {
      double v = 0.0;
      if (!parse_number(item, v)) return false;
      row.push_back(v);
    }
  }
  return true;
}

inline std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline std::string format_value(const std::string& v) { return v; }
inline std::string format_value(double v) { return format_double(v); }
template <std::unsigned_integral T>
std::string format_value(T v) {
  return std::to_string(v);
}
inline std::string format_value(bool v) { return v ? "true" : "false"; }
inline std::string format_value(const std::vector<std::size_t>& v) {
  std::string out;
  for (auto x : v) out += (out.empty() ? "" : ",") + std::to_string(x);
  return out;
}
inline std::string format_value(const std::set<int>& v) {
  std::string out;
  for (int x : v) out += (out.empty() ? "" : ",") + std::to_string(x);
  return out;
}
inline std::string format_value(const std::vector<std::vector<double>>& v) {
  std::string out;
  for (const auto& row : v) {
    if (!out.empty()) out += "; ";
    std::string point;
    for (double x : row) point += (point.empty() ? "" : ",") + format_double(x);
    out += point;
  }
  return out;
}

// Reads fields out of a parsed ptree and remembers which keys were consumed.
class Reader {
 public:
  explicit Reader(const boost::property_tree::ptree& tree) : tree_(tree) {}

  template <typename T>
  void field(const char* section, const char* key, T& value, bool required = false) {
    if (auto text = take(section, key, required)) {
      if (!parse_value(*text, value))
        throw ConfigError(name(section, key), "cannot parse value '" + *text + "'");
    }
  }

  void field(const char* section, const char* key, std::optional<double>& value) {
    if (auto text = take(section, key, false)) {
      double v = 0.0;
      if (!parse_value(*text, v))
        throw ConfigError(name(section, key), "cannot parse value '" + *text + "'");
      value = v;
    }
  }

  template <typename E, std::size_t N>
  void choice(const char* section, const char* key, E& value,
              const std::array<std::pair<E, std::string_view>, N>& names,
              bool required = false) {
    auto text = take(section, key, required);
    if (!text) return;
    for (const auto& [e, n] : names)
      if (n == *text) {
        value = e;
        return;
      }
    std::string allowed;
    for (const auto& entry : names) allowed += (allowed.empty() ? "" : ", ") + std::string(entry.second);
    throw ConfigError(name(section, key), "unknown value '" + *text + "' (expected " + allowed + ")");
  }

  // Rejects anything in the file that no field asked for.
  void reject_unknown() const {
    for (const auto& [section, body] : tree_) {
      if (body.empty()) throw ConfigError(section, "key outside of any section");
      for (const auto& [key, value] : body) {
        (void)value;
        const std::string full = name(section.c_str(), key.c_str());
        if (!consumed_.count(full)) throw ConfigError(full, "unknown key");
      }
    }
  }

 private:
  static std::string name(const char* section, const char* key) {
    return std::string(section) + "." + key;
  }

  std::optional<std::string> take(const char* section, const char* key, bool required) {
    const std::string full = name(section, key);
    consumed_.insert(full);
    const auto sec = tree_.get_child_optional(section);
    const auto node = sec ? sec->get_child_optional(key) : boost::none;
    if (!node) {
      if (required) throw ConfigError(full, "missing required key");
      return std::nullopt;
    }
    return trim(node->data());
  }

  const boost::property_tree::ptree& tree_;
  std::set<std::string> consumed_;
};

// Emits fields as INI text in visiting order.
class Writer {
 public:
  template <typename T>
  void field(const char* section, const char* key, const T& value, bool = false) {
    line(section, key, format_value(value));
  }

  void field(const char* section, const char* key, const std::optional<double>& value) {
    if (value) line(section, key, format_double(*value));
  }

  template <typename E, std::size_t N>
  void choice(const char* section, const char* key, const E& value,
              const std::array<std::pair<E, std::string_view>, N>& names, bool = false) {
    for (const auto& [e, n] : names)
      if (e == value) line(section, key, std::string(n));
  }

  std::string str() const { return out_.str(); }

 private:
  void line(const char* section, const char* key, const std::string& value) {
    if (current_ != section) {
      if (!current_.empty()) out_ << '\n';
      out_ << '[' << section << "]\n";
      current_ = section;
    }
    out_ << key << " = " << value << '\n';
  }

  std::ostringstream out_;
  std::string current_;
};

template <typename Visitor, typename Optimizer>
void visit_optimizer(Visitor& v, const char* section, Optimizer& o) {
  v.choice(section, "optimizer", o.kind, kOptimizerNames);
  v.field(section, "learning_rate", o.learning_rate);
  v.field(section, "momentum", o.momentum);
  v.field(section, "weight_decay", o.weight_decay);
  v.field(section, "beta1", o.adam_beta1);
  v.field(section, "beta2", o.adam_beta2);
  v.field(section, "epsilon", o.adam_epsilon);
}

// Single source of truth for the key layout, shared by parsing and serializing.
// Dataset sections are visited only for the selected dataset.
template <typename Visitor, typename Config>
void visit_config(Visitor& v, Config& c) {
  v.field("experiment", "name", c.name);
  v.field("experiment", "seed", c.seed, true);
  v.choice("experiment", "dataset", c.dataset, kDatasetNames, true);
  v.choice("experiment", "mapping", c.mapping, kMappingNames);

  if (c.dataset == DatasetKind::kTwoMoons) {
    auto& t = c.two_moons;
    v.field("two_moons", "train_samples", t.train_samples);
    v.field("two_moons", "test_samples", t.test_samples);
    v.field("two_moons", "noise", t.noise);
    v.field("two_moons", "ood_samples", t.ood_samples);
    v.field("two_moons", "ood_lower", t.ood_lower);
    v.field("two_moons", "ood_upper", t.ood_upper);
    v.field("two_moons", "blob_centers", t.blob_centers);
    v.field("two_moons", "blob_std", t.blob_std);
    v.field("two_moons", "blob_samples", t.blob_samples);
  } else {
    auto& i = c.idx;
    v.field("idx", "train_images", i.train_images);
    v.field("idx", "train_labels", i.train_labels);
    v.field("idx", "test_images", i.test_images);
    v.field("idx", "test_labels", i.test_labels);
    v.field("idx", "held_out", i.held_out);
    v.field("idx", "train_limit", i.train_limit);
    v.field("idx", "test_limit", i.test_limit);
  }

  v.field("model", "hidden", c.hidden);

  visit_optimizer(v, "initial", c.initial.optimizer);
  v.field("initial", "epochs", c.initial.epochs);
  v.field("initial", "batch_size", c.initial.batch_size);
  v.field("initial", "lambda_em", c.lambda_em);
  v.choice("initial", "known_unknowns", c.known_unknowns, kKnownUnknownNames);
  v.field("initial", "mixup_samples", c.mixup_samples);

  v.field("detect", "tau", c.tau);
  v.field("detect", "oracle", c.oracle_detection);
  v.field("detect", "false_positive_rate", c.false_positive_rate);

  v.choice("distances", "source", c.distance_source, kDistanceNames);
  v.field("distances", "file", c.distance_file);
  v.field("distances", "oracle", c.oracle_distance);

  v.field("extend", "k", c.k);
  v.field("extend", "init_scale", c.init_scale);

  visit_optimizer(v, "finetune", c.finetune.optimizer);
  v.field("finetune", "epochs", c.finetune.epochs);
  v.field("finetune", "batch_size", c.finetune.batch_size);
  v.field("finetune", "alpha", c.weights.alpha);
  v.field("finetune", "lambda1", c.weights.lambda1);
  v.field("finetune", "lambda2", c.weights.lambda2);
  v.field("finetune", "lambda3", c.weights.lambda3);
  v.field("finetune", "freeze_encoder", c.freeze_encoder);

  v.field("check", "min_recall", c.check.min_recall);
  v.field("check", "max_fpr", c.check.max_fpr);
  v.field("check", "min_acc_known", c.check.min_acc_known);
  v.field("check", "min_acc_novel", c.check.min_acc_novel);
  v.field("check", "min_novel_in_empty", c.check.min_novel_in_empty);
  v.field("check", "min_purity", c.check.min_purity);
}

}  // namespace config_detail

// Parses INI text. Relative paths are kept as written.
inline ExperimentConfig parse_config_string(const std::string& text) {
  boost::property_tree::ptree tree;
  std::istringstream in(text);
  try {
    boost::property_tree::ini_parser::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError("<file>", e.message() + " (line " + std::to_string(e.line()) + ")");
  }
  ExperimentConfig config;
  config_detail::Reader reader(tree);
  config_detail::visit_config(reader, config);
  reader.reject_unknown();
  config.validate();
  return config;
}

// Parses a config file. Relative data paths are resolved against the
// directory containing the file.
inline ExperimentConfig parse_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  ExperimentConfig config = parse_config_string(buf.str());
  const auto base = path.parent_path();
  auto resolve = [&](std::string& p) {
    if (!p.empty() && std::filesystem::path(p).is_relative())
      p = (base / p).lexically_normal().string();
  };
  resolve(config.idx.train_images);
  resolve(config.idx.train_labels);
  resolve(config.idx.test_images);
  resolve(config.idx.test_labels);
  resolve(config.distance_file);
  return config;
}

// Writes every key of the selected dataset layout, so parse(serialize(c)) == c.
inline std::string serialize_config(const ExperimentConfig& config) {
  config_detail::Writer writer;
  config_detail::visit_config(writer, config);
  return writer.str();
}

}  // namespace novelty
