#pragma once

#include <array>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <algorithm>
#include <fstream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "focus/error.hpp"

namespace focus {

/// Row-major feature matrix with integer class labels.
class Dataset {
 public:
  Dataset() = default;

  Dataset(std::size_t dim, std::size_t num_classes, std::vector<double> features,
          std::vector<std::uint32_t> labels)
      : dim_(dim), num_classes_(num_classes), features_(std::move(features)), labels_(std::move(labels)) {
    if (num_classes_ < 2) throw InvalidInput("dataset needs at least 2 classes");
    if (dim_ == 0) throw InvalidInput("dataset feature dimension must be positive");
    if (features_.size() != labels_.size() * dim_)
      throw InvalidInput("feature matrix size does not match label count");
    for (auto y : labels_)
      if (y >= num_classes_) throw InvalidInput("label " + std::to_string(y) + " out of range");
  }

  /// Empty dataset with a fixed shape, to be filled with push_back.
  static Dataset empty_like(const Dataset& other) {
    Dataset d;
    d.dim_ = other.dim_;
    d.num_classes_ = other.num_classes_;
    return d;
  }

  std::size_t size() const noexcept { return labels_.size(); }
  bool empty() const noexcept { return labels_.empty(); }
  std::size_t dim() const noexcept { return dim_; }
  std::size_t num_classes() const noexcept { return num_classes_; }

  std::span<const double> row(std::size_t i) const { return {features_.data() + i * dim_, dim_}; }
  std::uint32_t label(std::size_t i) const { return labels_[i]; }

  const std::vector<double>& features() const noexcept { return features_; }
  const std::vector<std::uint32_t>& labels() const noexcept { return labels_; }

  void set_label(std::size_t i, std::uint32_t y) {
    if (y >= num_classes_) throw InvalidInput("label out of range");
    labels_[i] = y;
  }

  void push_back(std::span<const double> x, std::uint32_t y) {
    if (x.size() != dim_) throw InvalidInput("row dimension mismatch");
    if (y >= num_classes_) throw InvalidInput("label out of range");
    features_.insert(features_.end(), x.begin(), x.end());
    labels_.push_back(y);
  }

  /// Rows at the given indices, in that order.
  Dataset subset(std::span<const std::size_t> indices) const {
    Dataset d = empty_like(*this);
    d.features_.reserve(indices.size() * dim_);
    d.labels_.reserve(indices.size());
    for (auto i : indices) d.push_back(row(i), label(i));
    return d;
  }

  std::vector<std::size_t> class_counts() const {
    std::vector<std::size_t> counts(num_classes_, 0);
    for (auto y : labels_) ++counts[y];
    return counts;
  }

  friend bool operator==(const Dataset&, const Dataset&) = default;

 private:
  std::size_t dim_ = 0;
  std::size_t num_classes_ = 0;
  std::vector<double> features_;
  std::vector<std::uint32_t> labels_;
};

namespace io {

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// CSV with header `f0,...,f{D-1},label`. The class count is not stored in
/// CSV; pass it explicitly or 0 to infer it as max(label) + 1.
inline void write_csv(const Dataset& d, std::ostream& out) {
  for (std::size_t j = 0; j < d.dim(); ++j) out << 'f' << j << ',';
  out << "label\n";
  for (std::size_t i = 0; i < d.size(); ++i) {
    for (double v : d.row(i)) out << format_double(v) << ',';
    out << d.label(i) << '\n';
  }
}

inline Dataset read_csv(std::istream& in, std::size_t num_classes = 0) {
  std::string line;
  if (!std::getline(in, line)) throw InvalidInput("csv: missing header");
  std::size_t dim = 0;
  {
    std::stringstream header(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(header, cell, ',')) cells.push_back(cell);
    if (cells.size() < 2 || cells.back() != "label") throw InvalidInput("csv: header must end with 'label'");
    dim = cells.size() - 1;
    for (std::size_t j = 0; j < dim; ++j)
      if (cells[j] != "f" + std::to_string(j)) throw InvalidInput("csv: unexpected header column '" + cells[j] + "'");
  }
  std::vector<double> features;
  std::vector<std::uint32_t> labels;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::stringstream row(line);
    std::string cell;
    std::size_t col = 0;
    while (std::getline(row, cell, ',')) {
      try {
        if (col < dim) {
          features.push_back(std::stod(cell));
        } else if (col == dim) {
          labels.push_back(static_cast<std::uint32_t>(std::stoul(cell)));
        }
      } catch (const std::exception&) {
        throw InvalidInput("csv: bad value on line " + std::to_string(line_no));
      }
      ++col;
    }
    if (col != dim + 1) throw InvalidInput("csv: wrong column count on line " + std::to_string(line_no));
  }
  if (num_classes == 0) {
    std::uint32_t max_label = 0;
    for (auto y : labels) max_label = std::max(max_label, y);
    num_classes = std::max<std::size_t>(2, max_label + 1);
  }
  return Dataset(dim, num_classes, std::move(features), std::move(labels));
}

namespace detail {

inline void put_u32(std::ostream& out, std::uint32_t v) {
  std::array<unsigned char, 4> b{};
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b.data()), 4);
}

inline void put_f64(std::ostream& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  std::array<unsigned char, 8> b{};
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(bits >> (8 * i));
  out.write(reinterpret_cast<const char*>(b.data()), 8);
}

inline std::uint32_t get_u32(std::istream& in) {
  std::array<unsigned char, 4> b{};
  if (!in.read(reinterpret_cast<char*>(b.data()), 4)) throw InvalidInput("binary: truncated input");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

inline double get_f64(std::istream& in) {
  std::array<unsigned char, 8> b{};
  if (!in.read(reinterpret_cast<char*>(b.data()), 8)) throw InvalidInput("binary: truncated input");
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

inline void expect_magic(std::istream& in, const char (&magic)[9]) {
  char buf[8];
  if (!in.read(buf, 8) || std::memcmp(buf, magic, 8) != 0)
    throw InvalidInput(std::string("binary: missing magic ") + magic);
}

}  // namespace detail

inline constexpr char kDatasetMagic[9] = "FOCUSDS1";

/// `FOCUSDS1`, u32 N, u32 D, u32 C, N*D f64 row-major, N u32 labels; little-endian.
inline void write_binary(const Dataset& d, std::ostream& out) {
  out.write(kDatasetMagic, 8);
  detail::put_u32(out, static_cast<std::uint32_t>(d.size()));
  detail::put_u32(out, static_cast<std::uint32_t>(d.dim()));
  detail::put_u32(out, static_cast<std::uint32_t>(d.num_classes()));
  for (double v : d.features()) detail::put_f64(out, v);
  for (auto y : d.labels()) detail::put_u32(out, y);
}

inline Dataset read_binary(std::istream& in) {
  detail::expect_magic(in, kDatasetMagic);
  const std::size_t n = detail::get_u32(in);
  const std::size_t dim = detail::get_u32(in);
  const std::size_t classes = detail::get_u32(in);
  std::vector<double> features(n * dim);
  for (auto& v : features) v = detail::get_f64(in);
  std::vector<std::uint32_t> labels(n);
  for (auto& y : labels) y = detail::get_u32(in);
  return Dataset(dim, classes, std::move(features), std::move(labels));
}

/// Loads by sniffing the magic bytes; anything else is parsed as CSV.
inline Dataset load(const std::string& path, std::size_t num_classes = 0) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidConfig("cannot open dataset file '" + path + "'");
  char buf[8] = {};
  in.read(buf, 8);
  const bool is_binary = in.gcount() == 8 && std::memcmp(buf, kDatasetMagic, 8) == 0;
  in.clear();
  in.seekg(0);
  return is_binary ? read_binary(in) : read_csv(in, num_classes);
}

}  // namespace io
}  // namespace focus
