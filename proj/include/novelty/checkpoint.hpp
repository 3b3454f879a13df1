#pragma once

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>

#include "novelty/errors.hpp"
#include "novelty/nn.hpp"

namespace novelty {

// Text checkpoint. Values are written as C99 hex floats so a save/load
// round-trip is bit-exact.
//
//   novelty-checkpoint 1
//   layers <L>
//   layer <in> <out> <relu|identity>
//   w <out*in hex floats, row-major>
//   b <out hex floats>
//   ...
inline constexpr int kCheckpointVersion = 1;

namespace detail {
inline std::string hex_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%a", v);
  return buf;
}

inline double parse_hex_double(const std::string& tok, std::size_t offset) {
  char* end = nullptr;
  const double v = std::strtod(tok.c_str(), &end);
  if (end != tok.c_str() + tok.size() || tok.empty())
    throw FormatError("checkpoint: bad number '" + tok + "'", offset);
  return v;
}
}  // namespace detail

inline void save_checkpoint(const FeedforwardClassifier& model, std::ostream& os) {
  os << "novelty-checkpoint " << kCheckpointVersion << '\n';
  os << "layers " << model.num_layers() << '\n';
  for (const auto& layer : model.layers()) {
    os << "layer " << layer.in() << ' ' << layer.out() << ' '
       << to_string(layer.activation) << '\n';
    os << 'w';
    for (double v : layer.weights.data()) os << ' ' << detail::hex_double(v);
    os << "\nb";
    for (double v : layer.biases) os << ' ' << detail::hex_double(v);
    os << '\n';
  }
}

inline FeedforwardClassifier load_checkpoint(std::istream& is) {
  std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  std::istringstream in(text);
  auto offset = [&] {
    const auto pos = in.tellg();
    return pos < 0 ? text.size() : static_cast<std::size_t>(pos);
  };
  auto expect = [&](const std::string& word) {
    std::string tok;
    if (!(in >> tok) || tok != word)
      throw FormatError("checkpoint: expected '" + word + "'", offset());
  };
  auto read_count = [&] {
    long long v = -1;
    if (!(in >> v) || v < 0) throw FormatError("checkpoint: expected count", offset());
    return static_cast<std::size_t>(v);
  };

  expect("novelty-checkpoint");
  const auto version = read_count();
  if (version != static_cast<std::size_t>(kCheckpointVersion))
    throw FormatError("checkpoint: unsupported version " + std::to_string(version), 0);
  expect("layers");
  const auto count = read_count();
  std::vector<DenseLayer> layers;
  for (std::size_t l = 0; l < count; ++l) {
    expect("layer");
    const auto n_in = read_count();
    const auto n_out = read_count();
    std::string act;
    in >> act;
    DenseLayer layer;
    if (act == "relu")
      layer.activation = Activation::kRelu;
    else if (act == "identity")
      layer.activation = Activation::kIdentity;
    else
      throw FormatError("checkpoint: unknown activation '" + act + "'", offset());
    layer.weights = Matrix(n_out, n_in);
    expect("w");
    for (double& v : layer.weights.data()) {
      std::string tok;
      if (!(in >> tok)) throw FormatError("checkpoint: truncated weights", offset());
      v = detail::parse_hex_double(tok, offset());
    }
    expect("b");
    layer.biases.resize(n_out);
    for (double& v : layer.biases) {
      std::string tok;
      if (!(in >> tok)) throw FormatError("checkpoint: truncated biases", offset());
      v = detail::parse_hex_double(tok, offset());
    }
    layers.push_back(std::move(layer));
  }
  try {
    return FeedforwardClassifier(std::move(layers));
  } catch (const Error& e) {
    throw FormatError(std::string("checkpoint: ") + e.what(), offset());
  }
}

inline void save_checkpoint(const FeedforwardClassifier& model, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  save_checkpoint(model, os);
  if (!os) throw IoError("write failed: " + path);
}

inline FeedforwardClassifier load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open '" + path + "'");
  return load_checkpoint(is);
}

}  // namespace novelty
