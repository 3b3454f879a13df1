#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iterator>
#include <numbers>
#include <numeric>
#include <ostream>
#include <random>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "novelty/errors.hpp"
#include "novelty/matrix.hpp"
#include "novelty/random.hpp"

namespace novelty {

// Samples (one per row) with optional integer labels 0..C-1.
struct LabeledDataset {
  Matrix samples;
  std::vector<int> labels;  // empty when unlabeled
  std::vector<std::string> class_names;

  std::size_t size() const { return samples.rows(); }
  bool has_labels() const { return !labels.empty(); }

  int num_classes() const {
    return labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end()) + 1;
  }

  void validate() const {
    if (!labels.empty() && labels.size() != samples.rows())
      throw ShapeError("dataset: label count != sample count");
    for (int y : labels)
      if (y < 0) throw ArgumentError("dataset: negative label");
  }
};

inline LabeledDataset subset(const LabeledDataset& ds, std::span<const std::size_t> indices) {
  LabeledDataset out;
  out.samples = select_rows(ds.samples, indices);
  if (ds.has_labels())
    for (std::size_t i : indices) out.labels.push_back(ds.labels[i]);
  out.class_names = ds.class_names;
  return out;
}

inline LabeledDataset concat(const LabeledDataset& a, const LabeledDataset& b) {
  if (a.has_labels() != b.has_labels() && a.size() && b.size())
    throw ArgumentError("concat: mixing labeled and unlabeled datasets");
  LabeledDataset out;
  out.samples = stack_rows(a.samples, b.samples);
  out.labels = a.labels;
  out.labels.insert(out.labels.end(), b.labels.begin(), b.labels.end());
  return out;
}

// Random subset of n samples (order of the original preserved).
inline LabeledDataset subsample(const LabeledDataset& ds, std::size_t n, std::uint64_t seed) {
  if (n >= ds.size()) return ds;
  std::vector<std::size_t> idx(ds.size());
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(n);
  std::sort(idx.begin(), idx.end());
  return subset(ds, idx);
}

// Two interleaving half circles. Class 0: (cos t, sin t), t in [0, pi];
// class 1: (1 - cos t, 0.5 - sin t). Angles are evenly spaced per class,
// samples are shuffled, then isotropic Gaussian noise with std `noise` is added.
inline LabeledDataset generate_two_moons(std::size_t n, double noise, std::uint64_t seed) {
  if (n < 2) throw ArgumentError("generate_two_moons: n must be >= 2");
  if (!(noise >= 0.0)) throw ArgumentError("generate_two_moons: noise must be >= 0");
  const std::size_t n_outer = n / 2, n_inner = n - n_outer;
  auto angle = [](std::size_t i, std::size_t count) {
    return count < 2 ? 0.0
                     : std::numbers::pi * static_cast<double>(i) /
                           static_cast<double>(count - 1);
  };
  LabeledDataset ds;
  ds.samples = Matrix(n, 2);
  ds.labels.resize(n);
  for (std::size_t i = 0; i < n_outer; ++i) {
    const double t = angle(i, n_outer);
    ds.samples(i, 0) = std::cos(t);
    ds.samples(i, 1) = std::sin(t);
    ds.labels[i] = 0;
  }
  for (std::size_t i = 0; i < n_inner; ++i) {
    const double t = angle(i, n_inner);
    ds.samples(n_outer + i, 0) = 1.0 - std::cos(t);
    ds.samples(n_outer + i, 1) = 0.5 - std::sin(t);
    ds.labels[n_outer + i] = 1;
  }
  Rng rng(seed);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  ds = subset(ds, order);
  if (noise > 0.0) {
    std::normal_distribution<double> gauss(0.0, noise);
    for (double& v : ds.samples.data()) v += gauss(rng);
  }
  ds.class_names = {"moon_0", "moon_1"};
  return ds;
}

// Isotropic Gaussian blobs; blob b gets counts[b] samples with label b.
inline LabeledDataset generate_blobs(const std::vector<std::vector<double>>& centers,
                                     double std_dev, std::span<const std::size_t> counts,
                                     std::uint64_t seed) {
  if (centers.empty()) throw ArgumentError("generate_blobs: no centers");
  if (!(std_dev > 0.0)) throw ArgumentError("generate_blobs: std must be > 0");
  if (counts.size() != centers.size())
    throw ArgumentError("generate_blobs: one count per center required");
  const std::size_t dim = centers.front().size();
  for (const auto& c : centers)
    if (c.size() != dim || dim == 0) throw ShapeError("generate_blobs: ragged centers");
  const std::size_t total = std::accumulate(counts.begin(), counts.end(), std::size_t{0});
  LabeledDataset ds;
  ds.samples = Matrix(total, dim);
  Rng rng(seed);
  std::normal_distribution<double> gauss(0.0, std_dev);
  std::size_t r = 0;
  for (std::size_t b = 0; b < centers.size(); ++b)
    for (std::size_t i = 0; i < counts[b]; ++i, ++r) {
      for (std::size_t d = 0; d < dim; ++d) ds.samples(r, d) = centers[b][d] + gauss(rng);
      ds.labels.push_back(static_cast<int>(b));
    }
  return ds;
}

inline LabeledDataset generate_blobs(const std::vector<std::vector<double>>& centers,
                                     double std_dev, std::size_t n_per, std::uint64_t seed) {
  std::vector<std::size_t> counts(centers.size(), n_per);
  return generate_blobs(centers, std_dev, counts, seed);
}

// `total` samples spread as evenly as possible over the centers, earlier
// blobs taking the remainder.
inline std::vector<std::size_t> balanced_counts(std::size_t total, std::size_t groups) {
  std::vector<std::size_t> counts(groups, groups ? total / groups : 0);
  for (std::size_t i = 0; i < (groups ? total % groups : 0); ++i) ++counts[i];
  return counts;
}

// ---------------------------------------------------------------------------
// IDX (big-endian) containers as used by MNIST.

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

namespace detail {
inline std::vector<unsigned char> read_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open '" + path + "'");
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

inline std::uint32_t read_be32(const std::vector<unsigned char>& buf, std::size_t offset,
                               const std::string& what) {
  if (offset + 4 > buf.size()) throw FormatError(what + ": truncated header", offset);
  return (std::uint32_t{buf[offset]} << 24) | (std::uint32_t{buf[offset + 1]} << 16) |
         (std::uint32_t{buf[offset + 2]} << 8) | std::uint32_t{buf[offset + 3]};
}

inline void write_be32(std::ostream& os, std::uint32_t v) {
  const char bytes[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16),
                         static_cast<char>(v >> 8), static_cast<char>(v)};
  os.write(bytes, 4);
}
}  // namespace detail

// Pixels are u8 scaled to [0,1] by /255; each image is flattened row-major.
inline Matrix parse_idx_images(const std::vector<unsigned char>& buf) {
  const auto magic = detail::read_be32(buf, 0, "idx images");
  if (magic != kIdxImagesMagic)
    throw FormatError("idx images: bad magic number " + std::to_string(magic), 0);
  const std::size_t n = detail::read_be32(buf, 4, "idx images");
  const std::size_t h = detail::read_be32(buf, 8, "idx images");
  const std::size_t w = detail::read_be32(buf, 12, "idx images");
  const std::size_t need = 16 + n * h * w;
  if (buf.size() < need) throw FormatError("idx images: truncated pixel data", buf.size());
  Matrix m(n, h * w);
  auto data = m.data();
  for (std::size_t i = 0; i < n * h * w; ++i) data[i] = buf[16 + i] / 255.0;
  return m;
}

inline std::vector<int> parse_idx_labels(const std::vector<unsigned char>& buf) {
  const auto magic = detail::read_be32(buf, 0, "idx labels");
  if (magic != kIdxLabelsMagic)
    throw FormatError("idx labels: bad magic number " + std::to_string(magic), 0);
  const std::size_t n = detail::read_be32(buf, 4, "idx labels");
  if (buf.size() < 8 + n) throw FormatError("idx labels: truncated label data", buf.size());
  return {buf.begin() + 8, buf.begin() + 8 + static_cast<std::ptrdiff_t>(n)};
}

inline LabeledDataset load_idx(const std::string& images_path, const std::string& labels_path) {
  LabeledDataset ds;
  ds.samples = parse_idx_images(detail::read_file(images_path));
  ds.labels = parse_idx_labels(detail::read_file(labels_path));
  if (ds.labels.size() != ds.samples.rows())
    throw FormatError("idx: " + std::to_string(ds.samples.rows()) + " images but " +
                          std::to_string(ds.labels.size()) + " labels",
                      4);
  return ds;
}

// Writes u8 pixels (values in [0,1] scaled by 255 and rounded) of
// height x width images.
inline void write_idx_images(std::ostream& os, const Matrix& samples, std::uint32_t height,
                             std::uint32_t width) {
  if (samples.cols() != std::size_t{height} * width)
    throw ShapeError("write_idx_images: sample width != height*width");
  detail::write_be32(os, kIdxImagesMagic);
  detail::write_be32(os, static_cast<std::uint32_t>(samples.rows()));
  detail::write_be32(os, height);
  detail::write_be32(os, width);
  for (double v : samples.data())
    os.put(static_cast<char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)));
}

inline void write_idx_labels(std::ostream& os, std::span<const int> labels) {
  detail::write_be32(os, kIdxLabelsMagic);
  detail::write_be32(os, static_cast<std::uint32_t>(labels.size()));
  for (int y : labels) os.put(static_cast<char>(y));
}

// ---------------------------------------------------------------------------
// Class-based splits.

struct SplitSpec {
  std::set<int> held_out_classes;
  std::uint64_t seed = 0;
};

struct SplitResult {
  LabeledDataset train;    // labels remapped to 0..q-1
  LabeledDataset heldout;  // original labels
  std::vector<int> retained_classes;  // retained_classes[new label] = original label
};

// Removes the held-out classes. Training labels are remapped densely in
// ascending order of the original class ids.
inline SplitResult split_by_class(const LabeledDataset& ds, const SplitSpec& spec) {
  if (!ds.has_labels()) throw ArgumentError("split_by_class: dataset has no labels");
  std::set<int> present(ds.labels.begin(), ds.labels.end());
  for (int c : spec.held_out_classes)
    if (!present.count(c))
      throw ArgumentError("split_by_class: held-out class " + std::to_string(c) +
                          " does not occur in the data");
  SplitResult out;
  std::vector<int> remap(static_cast<std::size_t>(*present.rbegin()) + 1, -1);
  for (int c : present)
    if (!spec.held_out_classes.count(c)) {
      remap[static_cast<std::size_t>(c)] = static_cast<int>(out.retained_classes.size());
      out.retained_classes.push_back(c);
    }
  std::vector<std::size_t> keep, drop;
  for (std::size_t i = 0; i < ds.size(); ++i)
    (spec.held_out_classes.count(ds.labels[i]) ? drop : keep).push_back(i);
  out.train = subset(ds, keep);
  for (int& y : out.train.labels) y = remap[static_cast<std::size_t>(y)];
  out.heldout = subset(ds, drop);
  out.train.class_names.clear();
  out.heldout.class_names.clear();
  return out;
}

// ---------------------------------------------------------------------------
// CSV: header x0,x1,...,label (label column omitted for unlabeled data).

inline void export_csv(const LabeledDataset& ds, std::ostream& os) {
  for (std::size_t c = 0; c < ds.samples.cols(); ++c) os << (c ? "," : "") << 'x' << c;
  if (ds.has_labels()) os << ",label";
  os << '\n';
  char buf[64];
  for (std::size_t r = 0; r < ds.size(); ++r) {
    for (std::size_t c = 0; c < ds.samples.cols(); ++c) {
      std::snprintf(buf, sizeof(buf), "%.17g", ds.samples(r, c));
      os << (c ? "," : "") << buf;
    }
    if (ds.has_labels()) os << ',' << ds.labels[r];
    os << '\n';
  }
}

inline LabeledDataset load_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw FormatError("csv: empty input", 0);
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string tok;
    while (std::getline(ss, tok, ',')) header.push_back(tok);
  }
  const bool labeled = !header.empty() && header.back() == "label";
  const std::size_t dim = header.size() - (labeled ? 1 : 0);
  if (dim == 0) throw FormatError("csv: no feature columns", 0);
  std::vector<double> values;
  LabeledDataset ds;
  std::size_t offset = line.size() + 1;
  while (std::getline(is, line)) {
    if (line.empty()) {
      ++offset;
      continue;
    }
    std::stringstream ss(line);
    std::string tok;
    std::size_t col = 0;
    while (std::getline(ss, tok, ',')) {
      char* end = nullptr;
      if (labeled && col == dim) {
        const long y = std::strtol(tok.c_str(), &end, 10);
        if (*end || y < 0) throw FormatError("csv: bad label '" + tok + "'", offset);
        ds.labels.push_back(static_cast<int>(y));
      } else {
        const double v = std::strtod(tok.c_str(), &end);
        if (*end || tok.empty()) throw FormatError("csv: bad value '" + tok + "'", offset);
        values.push_back(v);
      }
      ++col;
    }
    if (col != header.size()) throw FormatError("csv: wrong column count", offset);
    offset += line.size() + 1;
  }
  const std::size_t rows = values.size() / dim;
  ds.samples = Matrix(rows, dim, std::move(values));
  return ds;
}

}  // namespace novelty
