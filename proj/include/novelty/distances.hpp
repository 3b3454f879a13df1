#pragma once

#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "novelty/errors.hpp"
#include "novelty/matrix.hpp"

namespace novelty {

// Symmetric, non-negative n x n table with zero diagonal.
class DistanceMatrix {
 public:
  DistanceMatrix() = default;
  explicit DistanceMatrix(Matrix entries) : entries_(std::move(entries)) { validate(); }

  std::size_t size() const noexcept { return entries_.rows(); }

  double operator()(std::size_t i, std::size_t j) const { return entries_(i, j); }

  double at(std::size_t i, std::size_t j) const {
    if (i >= size() || j >= size())
      throw ConsistencyError("distance entry (" + std::to_string(i) + "," +
                             std::to_string(j) + ") missing from " +
                             std::to_string(size()) + "x" + std::to_string(size()) +
                             " table");
    return entries_(i, j);
  }

  const Matrix& entries() const noexcept { return entries_; }

  // Sub-table over `indices` (in order).
  DistanceMatrix subset(std::span<const std::size_t> indices) const {
    Matrix m(indices.size(), indices.size());
    for (std::size_t a = 0; a < indices.size(); ++a)
      for (std::size_t b = 0; b < indices.size(); ++b)
        m(a, b) = at(indices[a], indices[b]);
    return DistanceMatrix(std::move(m));
  }

  friend bool operator==(const DistanceMatrix&, const DistanceMatrix&) = default;

 private:
  void validate() const {
    if (entries_.rows() != entries_.cols())
      throw ShapeError("DistanceMatrix: table must be square");
    for (std::size_t i = 0; i < size(); ++i) {
      if (entries_(i, i) != 0.0) throw ArgumentError("DistanceMatrix: non-zero diagonal");
      for (std::size_t j = 0; j < size(); ++j) {
        const double v = entries_(i, j);
        if (!std::isfinite(v) || v < 0.0)
          throw ArgumentError("DistanceMatrix: entries must be finite and >= 0");
        if (v != entries_(j, i)) throw ArgumentError("DistanceMatrix: not symmetric");
      }
    }
  }

  Matrix entries_;
};

// Euclidean distance between every pair of rows (flattened samples).
inline DistanceMatrix pairwise_euclidean(const Matrix& samples) {
  const std::size_t n = samples.rows();
  Matrix d(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto a = samples.row(i);
    for (std::size_t j = i + 1; j < n; ++j) {
      const auto b = samples.row(j);
      double acc = 0.0;
      for (std::size_t c = 0; c < a.size(); ++c) {
        const double diff = a[c] - b[c];
        acc += diff * diff;
      }
      d(i, j) = d(j, i) = std::sqrt(acc);
    }
  }
  return DistanceMatrix(std::move(d));
}

// 0 for same label, 1 otherwise.
inline DistanceMatrix oracle_distance(std::span<const int> labels) {
  if (labels.empty()) throw ArgumentError("oracle_distance: no labels");
  const std::size_t n = labels.size();
  Matrix d(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) d(i, j) = labels[i] == labels[j] ? 0.0 : 1.0;
  return DistanceMatrix(std::move(d));
}

// Writes `i,j,distance` rows for i < j. Values use 17 significant digits.
inline void save_distance_csv(const DistanceMatrix& d, std::ostream& os) {
  os << "i,j,distance\n";
  char buf[64];
  for (std::size_t i = 0; i < d.size(); ++i)
    for (std::size_t j = i + 1; j < d.size(); ++j) {
      std::snprintf(buf, sizeof(buf), "%.17g", d(i, j));
      os << i << ',' << j << ',' << buf << '\n';
    }
}

// Reads a precomputed table with header `i,j,distance`. Each unordered pair
// must appear at least once; a pair listed in both orders must agree exactly;
// listed diagonal entries must be 0. The size is 1 + the largest index.
inline DistanceMatrix load_distance_csv(std::istream& is) {
  std::string line;
  std::size_t offset = 0;
  if (!std::getline(is, line)) throw FormatError("distance csv: empty input", 0);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "i,j,distance")
    throw FormatError("distance csv: expected header 'i,j,distance'", 0);
  offset += line.size() + 1;

  struct Entry {
    std::size_t i, j;
    double d;
  };
  std::vector<Entry> entries;
  std::size_t n = 0;
  while (std::getline(is, line)) {
    const std::size_t line_len = line.size() + 1;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) {
      offset += line_len;
      continue;
    }
    Entry e{};
    const char* p = line.data();
    const char* end = line.data() + line.size();
    auto r1 = std::from_chars(p, end, e.i);
    if (r1.ec != std::errc() || r1.ptr == end || *r1.ptr != ',')
      throw FormatError("distance csv: bad index", offset);
    auto r2 = std::from_chars(r1.ptr + 1, end, e.j);
    if (r2.ec != std::errc() || r2.ptr == end || *r2.ptr != ',')
      throw FormatError("distance csv: bad index", offset);
    auto r3 = std::from_chars(r2.ptr + 1, end, e.d);
    if (r3.ec != std::errc() || r3.ptr != end)
      throw FormatError("distance csv: bad distance value", offset);
    if (!std::isfinite(e.d) || e.d < 0.0)
      throw FormatError("distance csv: distance must be finite and >= 0", offset);
    if (e.i == e.j && e.d != 0.0)
      throw FormatError("distance csv: non-zero diagonal entry", offset);
    n = std::max(n, std::max(e.i, e.j) + 1);
    entries.push_back(e);
    offset += line_len;
  }
  if (n == 0) throw FormatError("distance csv: no entries", offset);

  const double unset = std::numeric_limits<double>::quiet_NaN();
  Matrix m(n, n, unset);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 0.0;
  for (const auto& e : entries) {
    for (auto [a, b] : {std::pair{e.i, e.j}, std::pair{e.j, e.i}}) {
      const double cur = m(a, b);
      if (!std::isnan(cur) && cur != e.d && a != b)
        throw FormatError("distance csv: asymmetric entry for pair (" +
                              std::to_string(e.i) + "," + std::to_string(e.j) + ")",
                          0);
      m(a, b) = e.d;
    }
  }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (std::isnan(m(i, j)))
        throw FormatError("distance csv: missing pair (" + std::to_string(i) + "," +
                              std::to_string(j) + ")",
                          offset);
  return DistanceMatrix(std::move(m));
}

inline DistanceMatrix load_distance_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open '" + path + "'");
  return load_distance_csv(is);
}

}  // namespace novelty
