#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <unordered_map>
#include <vector>

#include "hdiff/binary_io.hpp"
#include "hdiff/core.hpp"
#include "hdiff/point_cloud.hpp"

namespace hdiff {

struct NearestPoint {
  std::size_t index;
  double distance;
};

// Devroye-Wise support estimate: the union of closed epsilon-balls around
// the base points. Queries are answered from a uniform hash grid with cell
// size ~epsilon when dim <= 8 and by a linear scan otherwise.
class SupportEstimate {
 public:
  static constexpr std::size_t kMaxGridDim = 8;

  SupportEstimate() = default;

  static SupportEstimate build(PointCloud data, double epsilon) {
    if (data.empty()) throw EmptyDataError("SupportEstimate: empty point cloud");
    require(epsilon > 0.0 && std::isfinite(epsilon), "SupportEstimate: epsilon must be positive");
    SupportEstimate s;
    s.points_ = std::move(data);
    s.epsilon_ = epsilon;
    s.index_grid();
    return s;
  }

  const PointCloud& points() const { return points_; }
  double epsilon() const { return epsilon_; }
  std::size_t dim() const { return points_.dim(); }
  bool uses_grid() const { return !cells_.empty(); }
  bool has_classes() const { return points_.has_labels(); }

  bool contains(std::span<const double> x) const {
    require_dim(x, dim(), "SupportEstimate::contains");
    if (!uses_grid()) {
      for (std::size_t i = 0; i < points_.size(); ++i)
        if (point_distance(x, i) <= epsilon_) return true;
      return false;
    }
    bool hit = false;
    visit_ring(cell_of(x), 0, [&](std::size_t i) { hit = hit || point_distance(x, i) <= epsilon_; });
    if (!hit)
      visit_ring(cell_of(x), 1, [&](std::size_t i) { hit = hit || point_distance(x, i) <= epsilon_; });
    return hit;
  }

  // Exact nearest base point, lowest index on ties.
  NearestPoint nearest(std::span<const double> x) const {
    require_dim(x, dim(), "SupportEstimate::nearest");
    NearestPoint best{0, INFINITY};
    auto consider = [&](std::size_t i) {
      const double d = point_distance(x, i);
      if (d < best.distance || (d == best.distance && i < best.index)) best = {i, d};
    };
    if (!uses_grid()) {
      for (std::size_t i = 0; i < points_.size(); ++i) consider(i);
      return best;
    }
    const auto center = cell_of(x);
    std::size_t visited_cells = 0;
    for (std::int64_t k = 0;; ++k) {
      visit_ring(center, k, consider);
      // Unvisited points lie at distance >= k * cell_.
      if (best.distance < static_cast<double>(k) * cell_) return best;
      visited_cells = ipow(2 * k + 3, dim());
      if (visited_cells > 4 * points_.size() + 64) break;
    }
    for (std::size_t i = 0; i < points_.size(); ++i) consider(i);
    return best;
  }

  double distance(std::span<const double> x) const { return nearest(x).distance; }

  // Class whose base points are closest to x; lowest label on ties.
  std::int64_t nearest_class(std::span<const double> x) const {
    require_dim(x, dim(), "SupportEstimate::nearest_class");
    if (!points_.has_labels()) throw PreconditionError("SupportEstimate: point cloud has no labels");
    std::map<std::int64_t, double> best;
    for (std::size_t i = 0; i < points_.size(); ++i) {
      const double d = point_distance(x, i);
      auto [it, inserted] = best.emplace(points_.label(i), d);
      if (!inserted && d < it->second) it->second = d;
    }
    std::int64_t label = best.begin()->first;
    double dmin = best.begin()->second;
    for (const auto& [l, d] : best)
      if (d < dmin) {
        dmin = d;
        label = l;
      }
    return label;
  }

  std::map<std::int64_t, std::vector<std::size_t>> class_partition() const {
    return points_.class_partition();
  }

  void save(std::ostream& out) const {
    binio::write_magic(out, kMagic);
    binio::write<std::uint32_t>(out, 1);
    binio::write<std::uint32_t>(out, static_cast<std::uint32_t>(dim()));
    binio::write<std::uint64_t>(out, points_.size());
    binio::write<double>(out, epsilon_);
    binio::write<std::uint8_t>(out, points_.has_labels() ? 1 : 0);
    for (double v : points_.coords()) binio::write<double>(out, v);
    for (double w : points_.weights()) binio::write<double>(out, w);
    if (points_.has_labels())
      for (auto l : points_.labels()) binio::write<std::int64_t>(out, l);
  }

  static SupportEstimate load(std::istream& in) {
    binio::expect_magic(in, kMagic, "support estimate");
    if (binio::read<std::uint32_t>(in) != 1) throw FormatError("support estimate: unsupported version");
    const auto dim = binio::read<std::uint32_t>(in);
    const auto n = binio::read<std::uint64_t>(in);
    const double eps = binio::read<double>(in);
    const bool labelled = binio::read<std::uint8_t>(in) != 0;
    if (dim == 0 || n == 0) throw FormatError("support estimate: empty");
    std::vector<double> coords(n * dim), weights(n);
    for (auto& v : coords) v = binio::read<double>(in);
    for (auto& w : weights) w = binio::read<double>(in);
    std::optional<std::vector<std::int64_t>> labels;
    if (labelled) {
      labels.emplace(n);
      for (auto& l : *labels) l = binio::read<std::int64_t>(in);
    }
    return build(PointCloud::from_storage(dim, std::move(coords), std::move(weights), std::move(labels)),
                 eps);
  }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot write " + path);
    save(out);
  }

  static SupportEstimate load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open support estimate " + path);
    return load(in);
  }

 private:
  static constexpr char kMagic[9] = "HDIFFSE1";

  struct CellHash {
    std::size_t operator()(const std::vector<std::int64_t>& c) const {
      std::uint64_t h = 0x9e3779b97f4a7c15ULL;
      for (auto v : c) h = (h ^ static_cast<std::uint64_t>(v)) * 0x100000001b3ULL + (h >> 29);
      return static_cast<std::size_t>(h);
    }
  };

  static std::size_t ipow(std::int64_t base, std::size_t e) {
    std::size_t out = 1;
    for (std::size_t i = 0; i < e; ++i) {
      out *= static_cast<std::size_t>(base);
      if (out > (std::size_t{1} << 40)) break;
    }
    return out;
  }

  double point_distance(std::span<const double> x, std::size_t i) const {
    return hdiff::distance(x, points_.point(i));
  }

  std::vector<std::int64_t> cell_of(std::span<const double> x) const {
    std::vector<std::int64_t> c(x.size());
    for (std::size_t i = 0; i < x.size(); ++i)
      c[i] = static_cast<std::int64_t>(std::floor(x[i] / cell_));
    return c;
  }

  void index_grid() {
    cells_.clear();
    // Slightly inflated so that rounding in x/cell never separates points
    // within epsilon by more than one cell.
    cell_ = epsilon_ * (1.0 + 1e-9);
    if (dim() > kMaxGridDim || ipow(3, dim()) > points_.size() + 64) return;
    for (std::size_t i = 0; i < points_.size(); ++i) cells_[cell_of(points_.point(i))].push_back(i);
  }

  // Calls fn(i) for every point in cells at Chebyshev offset exactly k.
  template <typename Fn>
  void visit_ring(const std::vector<std::int64_t>& center, std::int64_t k, Fn&& fn) const {
    const std::size_t d = center.size();
    std::vector<std::int64_t> off(d, -k), cell(d);
    while (true) {
      std::int64_t m = 0;
      for (auto o : off) m = std::max(m, o < 0 ? -o : o);
      if (m == k) {
        for (std::size_t i = 0; i < d; ++i) cell[i] = center[i] + off[i];
        auto it = cells_.find(cell);
        if (it != cells_.end())
          for (auto idx : it->second) fn(idx);
      }
      std::size_t j = 0;
      while (j < d && off[j] == k) off[j++] = -k;
      if (j == d) break;
      ++off[j];
    }
  }

  PointCloud points_;
  double epsilon_ = 0.0;
  double cell_ = 0.0;
  std::unordered_map<std::vector<std::int64_t>, std::vector<std::size_t>, CellHash> cells_;
};

}  // namespace hdiff
