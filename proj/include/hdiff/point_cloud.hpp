#pragma once

#include <charconv>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "hdiff/core.hpp"

namespace hdiff {

// Weighted point cloud alpha = sum_i w_i delta_{y_i}, optionally labelled.
class PointCloud {
 public:
  PointCloud() = default;
  explicit PointCloud(std::size_t dim) : dim_(dim) {}

  static PointCloud from_points(const std::vector<Vec>& points) {
    require(!points.empty(), "PointCloud: no points");
    PointCloud pc(points.front().size());
    for (const auto& p : points) pc.add(p);
    return pc;
  }

  void add(std::span<const double> p, double weight = 1.0) {
    require_dim(p, dim_, "PointCloud::add");
    require(std::isfinite(weight) && weight > 0.0, "PointCloud: weights must be positive");
    require(!labels_, "PointCloud: labelled cloud needs add_labelled");
    coords_.insert(coords_.end(), p.begin(), p.end());
    weights_.push_back(weight);
  }

  void add_labelled(std::span<const double> p, std::int64_t label, double weight = 1.0) {
    require_dim(p, dim_, "PointCloud::add_labelled");
    require(std::isfinite(weight) && weight > 0.0, "PointCloud: weights must be positive");
    require(labels_ || weights_.empty(), "PointCloud: cannot mix labelled and unlabelled points");
    if (!labels_) labels_.emplace();
    coords_.insert(coords_.end(), p.begin(), p.end());
    weights_.push_back(weight);
    labels_->push_back(label);
  }

  std::size_t dim() const { return dim_; }
  std::size_t size() const { return weights_.size(); }
  bool empty() const { return weights_.empty(); }

  std::span<const double> point(std::size_t i) const {
    return {coords_.data() + i * dim_, dim_};
  }
  double weight(std::size_t i) const { return weights_[i]; }
  const std::vector<double>& weights() const { return weights_; }
  const std::vector<double>& coords() const { return coords_; }

  bool has_labels() const { return labels_.has_value(); }
  std::int64_t label(std::size_t i) const { return labels_.value()[i]; }
  const std::vector<std::int64_t>& labels() const {
    if (!labels_) throw PreconditionError("PointCloud: no labels");
    return *labels_;
  }

  // label -> indices, in increasing label order
  std::map<std::int64_t, std::vector<std::size_t>> class_partition() const {
    std::map<std::int64_t, std::vector<std::size_t>> out;
    const auto& l = labels();
    for (std::size_t i = 0; i < l.size(); ++i) out[l[i]].push_back(i);
    return out;
  }

  // Index of the nearest point; lowest index on ties.
  std::size_t nearest_index(std::span<const double> x) const {
    std::size_t best = 0;
    double best_d = INFINITY;
    for (std::size_t i = 0; i < size(); ++i) {
      const double d2 = squared_distance(x, point(i));
      if (d2 < best_d) {
        best_d = d2;
        best = i;
      }
    }
    return best;
  }

  // Sets raw coordinate/weight/label storage. Used by deserialisers.
  static PointCloud from_storage(std::size_t dim, std::vector<double> coords,
                                 std::vector<double> weights,
                                 std::optional<std::vector<std::int64_t>> labels) {
    require(dim >= 1, "PointCloud: dimension must be >= 1");
    require(coords.size() == weights.size() * dim, "PointCloud: inconsistent storage");
    require(!labels || labels->size() == weights.size(), "PointCloud: inconsistent labels");
    PointCloud pc(dim);
    pc.coords_ = std::move(coords);
    pc.weights_ = std::move(weights);
    pc.labels_ = std::move(labels);
    return pc;
  }

 private:
  std::size_t dim_ = 0;
  std::vector<double> coords_;
  std::vector<double> weights_;
  std::optional<std::vector<std::int64_t>> labels_;
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r' && c != ' ' && c != '\t') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

inline double parse_double(const std::string& s, std::size_t line_no) {
  double v = 0.0;
  const auto* first = s.data();
  const auto* last = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last || s.empty())
    throw FormatError("dataset line " + std::to_string(line_no) + ": bad number '" + s + "'");
  return v;
}

}  // namespace detail

// Dataset CSV: header "x0,...,x{d-1}[,label]", one row per point.
inline PointCloud read_dataset_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw FormatError("dataset: missing header");
  const auto header = detail::split_csv_line(line);
  std::size_t dim = header.size();
  bool labelled = false;
  if (!header.empty() && header.back() == "label") {
    labelled = true;
    --dim;
  }
  if (dim == 0) throw FormatError("dataset: header has no coordinate columns");
  for (std::size_t i = 0; i < dim; ++i)
    if (header[i] != "x" + std::to_string(i))
      throw FormatError("dataset: header column " + std::to_string(i) + " should be x" +
                        std::to_string(i));
  PointCloud pc(dim);
  Vec p(dim);
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto cells = detail::split_csv_line(line);
    if (cells.size() != header.size())
      throw FormatError("dataset line " + std::to_string(line_no) + ": expected " +
                        std::to_string(header.size()) + " columns");
    for (std::size_t i = 0; i < dim; ++i) p[i] = detail::parse_double(cells[i], line_no);
    if (labelled) {
      std::int64_t label = 0;
      const auto& s = cells.back();
      auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), label);
      if (ec != std::errc() || ptr != s.data() + s.size() || s.empty())
        throw FormatError("dataset line " + std::to_string(line_no) + ": bad label '" + s + "'");
      pc.add_labelled(p, label);
    } else {
      pc.add(p);
    }
  }
  if (pc.empty()) throw EmptyDataError("dataset: no rows");
  return pc;
}

inline PointCloud read_dataset_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open dataset " + path);
  return read_dataset_csv(in);
}

inline void write_dataset_csv(std::ostream& out, const PointCloud& pc) {
  for (std::size_t i = 0; i < pc.dim(); ++i) out << (i ? "," : "") << 'x' << i;
  if (pc.has_labels()) out << ",label";
  out << '\n' << std::setprecision(17);
  for (std::size_t n = 0; n < pc.size(); ++n) {
    const auto p = pc.point(n);
    for (std::size_t i = 0; i < pc.dim(); ++i) out << (i ? "," : "") << p[i];
    if (pc.has_labels()) out << ',' << pc.label(n);
    out << '\n';
  }
}

}  // namespace hdiff
