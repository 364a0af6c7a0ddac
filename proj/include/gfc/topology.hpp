#pragma once

// Connected components of excursion sets {f >= l} and level sets {f = l}
// contained in a box: components meeting the outermost grid layer are
// counted as boundary-touching and excluded from count_interior.

#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "gfc/domain.hpp"
#include "gfc/error.hpp"
#include "gfc/grid.hpp"
#include "gfc/sampler.hpp"

namespace gfc {

enum class CountKind { ES, LS };

inline const char* kind_name(CountKind k) { return k == CountKind::ES ? "ES" : "LS"; }

inline CountKind parse_kind(const std::string& s) {
  if (s == "ES" || s == "es") return CountKind::ES;
  if (s == "LS" || s == "ls") return CountKind::LS;
  throw InvalidArgument("kind must be ES or LS, got " + s);
}

/// Disjoint-set forest with path compression and union by rank.
class UnionFind {
 public:
  explicit UnionFind(std::size_t n = 0) { reset(n); }

  void reset(std::size_t n) {
    parent_.resize(n);
    std::iota(parent_.begin(), parent_.end(), std::uint32_t{0});
    rank_.assign(n, 0);
  }

  std::uint32_t find(std::uint32_t x) {
    std::uint32_t root = x;
    while (parent_[root] != root) root = parent_[root];
    while (parent_[x] != root) {
      const std::uint32_t next = parent_[x];
      parent_[x] = root;
      x = next;
    }
    return root;
  }

  void unite(std::uint32_t a, std::uint32_t b) {
    a = find(a);
    b = find(b);
    if (a == b) return;
    if (rank_[a] < rank_[b]) std::swap(a, b);
    parent_[b] = a;
    if (rank_[a] == rank_[b]) ++rank_[a];
  }

 private:
  std::vector<std::uint32_t> parent_;
  std::vector<std::uint8_t> rank_;
};

/// A level-set contour traced by marching squares, as the list of crossed grid edges.
struct Contour {
  std::vector<std::uint32_t> edges;
  bool touches_boundary = false;
};

struct ComponentCensus {
  double level = 0.0;
  CountKind kind = CountKind::ES;
  long count_interior = 0;
  long count_boundary_touching = 0;
  std::vector<int> labels;        // ES: component id per node, -1 outside the set
  std::vector<bool> label_touches;  // ES: per component id, whether it meets the boundary layer
  std::vector<Contour> contours;  // LS, d = 2
  long total() const { return count_interior + count_boundary_touching; }
};

/// Values of slot 0 minus `level` on the sub-grid of `domain`.
inline std::vector<double> shifted_values(const FieldRealization& real, const BoxDomain& domain, double level,
                                          GridShape& shape) {
  const SubGrid g = sub_grid(real, domain);
  shape = g.shape;
  std::vector<double> out(g.shape.size());
  const int d = domain.dim();
  const auto& src = real.values();
  if (d == 2) {
    const std::size_t n0 = g.shape.extent(0), n1 = g.shape.extent(1);
    const std::size_t s0 = real.shape().stride(0);
    for (std::size_t i = 0; i < n0; ++i) {
      const double* row = src.data() + (g.offset[0] + i) * s0 + g.offset[1];
      for (std::size_t j = 0; j < n1; ++j) out[i * n1 + j] = row[j] - level;
    }
    return out;
  }
  std::vector<std::size_t> idx(static_cast<std::size_t>(d)), full(static_cast<std::size_t>(d));
  for (std::size_t f = 0; f < out.size(); ++f) {
    g.shape.unflatten(f, idx);
    for (int i = 0; i < d; ++i) full[static_cast<std::size_t>(i)] = idx[static_cast<std::size_t>(i)] + g.offset[static_cast<std::size_t>(i)];
    out[f] = src[real.shape().flat(full)] - level;
  }
  return out;
}

/// Face-adjacency labeling of the nodes where mask is true.
inline ComponentCensus label_components(const std::vector<char>& mask, const GridShape& shape) {
  const int d = shape.dim();
  const std::size_t n = shape.size();
  UnionFind uf(n);
  std::vector<std::size_t> idx(static_cast<std::size_t>(d), 0), zero(static_cast<std::size_t>(d), 0);
  std::vector<char> on_boundary(n, 0);
  std::size_t f = 0;
  do {
    bool boundary = false;
    for (int i = 0; i < d; ++i) {
      const std::size_t k = idx[static_cast<std::size_t>(i)];
      if (k == 0 || k + 1 == shape.extent(i)) boundary = true;
    }
    on_boundary[f] = boundary;
    if (mask[f]) {
      for (int i = 0; i < d; ++i) {
        if (idx[static_cast<std::size_t>(i)] > 0 && mask[f - shape.stride(i)])
          uf.unite(static_cast<std::uint32_t>(f), static_cast<std::uint32_t>(f - shape.stride(i)));
      }
    }
    ++f;
  } while (next_index<std::size_t>(idx, zero, shape.extents()));

  ComponentCensus c;
  c.kind = CountKind::ES;
  c.labels.assign(n, -1);
  std::vector<int> root_label(n, -1);
  for (std::size_t i = 0; i < n; ++i) {
    if (!mask[i]) continue;
    const std::uint32_t r = uf.find(static_cast<std::uint32_t>(i));
    if (root_label[r] < 0) {
      root_label[r] = static_cast<int>(c.label_touches.size());
      c.label_touches.push_back(false);
    }
    c.labels[i] = root_label[r];
    if (on_boundary[i]) c.label_touches[static_cast<std::size_t>(root_label[r])] = true;
  }
  for (bool t : c.label_touches) (t ? c.count_boundary_touching : c.count_interior)++;
  return c;
}

/// Components of {f >= level} on the grid nodes of `domain` under face adjacency.
inline ComponentCensus count_excursion_components(const FieldRealization& real, const BoxDomain& domain, double level) {
  GridShape shape;
  const auto v = shifted_values(real, domain, level, shape);
  std::vector<char> mask(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) mask[i] = v[i] >= 0.0;
  ComponentCensus c = label_components(mask, shape);
  c.level = level;
  return c;
}

/// Marching squares on a 2D array of values g = f - level. Nodes with g >= 0 are "above".
/// Saddle cells connect the diagonal whose sign matches the cell mean.
inline ComponentCensus marching_squares(const std::vector<double>& g, std::size_t n0, std::size_t n1) {
  // Edge ids: horizontal edges (i, j)-(i, j+1) first, then vertical edges (i, j)-(i+1, j).
  const std::size_t n_h = n0 * (n1 - 1);
  const std::size_t n_edges = n_h + (n0 - 1) * n1;
  auto h_edge = [&](std::size_t i, std::size_t j) { return static_cast<std::uint32_t>(i * (n1 - 1) + j); };
  auto v_edge = [&](std::size_t i, std::size_t j) { return static_cast<std::uint32_t>(n_h + i * n1 + j); };
  auto above = [&](std::size_t i, std::size_t j) { return g[i * n1 + j] >= 0.0; };

  UnionFind uf(n_edges);
  std::vector<char> crossed(n_edges, 0), boundary(n_edges, 0);
  for (std::size_t i = 0; i < n0; ++i)
    for (std::size_t j = 0; j + 1 < n1; ++j) {
      crossed[h_edge(i, j)] = above(i, j) != above(i, j + 1);
      boundary[h_edge(i, j)] = (i == 0 || i + 1 == n0);
    }
  for (std::size_t i = 0; i + 1 < n0; ++i)
    for (std::size_t j = 0; j < n1; ++j) {
      crossed[v_edge(i, j)] = above(i, j) != above(i + 1, j);
      boundary[v_edge(i, j)] = (j == 0 || j + 1 == n1);
    }

  for (std::size_t i = 0; i + 1 < n0; ++i) {
    for (std::size_t j = 0; j + 1 < n1; ++j) {
      // Corners counter-clockwise: a=(i,j), b=(i,j+1), c=(i+1,j+1), e=(i+1,j).
      const bool a = above(i, j), b = above(i, j + 1), c = above(i + 1, j + 1), e = above(i + 1, j);
      const std::uint32_t bottom = h_edge(i, j), right = v_edge(i, j + 1), top = h_edge(i + 1, j), left = v_edge(i, j);
      const int n_above = a + b + c + e;
      if (n_above == 0 || n_above == 4) continue;
      if (a == c && b == e && a != b) {
        const double mean = 0.25 * (g[i * n1 + j] + g[i * n1 + j + 1] + g[(i + 1) * n1 + j + 1] + g[(i + 1) * n1 + j]);
        const bool center_above = mean >= 0.0;
        if (center_above == a) {
          // a and c connected through the center: b and e are cut off.
          uf.unite(bottom, right);  // around b
          uf.unite(top, left);      // around e
        } else {
          uf.unite(left, bottom);   // around a
          uf.unite(right, top);     // around c
        }
        continue;
      }
      // Exactly two crossed edges.
      std::uint32_t first = 0;
      bool have = false;
      for (std::uint32_t edge : {bottom, right, top, left}) {
        if (!crossed[edge]) continue;
        if (have) uf.unite(first, edge);
        else { first = edge; have = true; }
      }
    }
  }

  ComponentCensus census;
  census.kind = CountKind::LS;
  std::vector<int> root_id(n_edges, -1);
  for (std::uint32_t e = 0; e < n_edges; ++e) {
    if (!crossed[e]) continue;
    const std::uint32_t r = uf.find(e);
    if (root_id[r] < 0) {
      root_id[r] = static_cast<int>(census.contours.size());
      census.contours.emplace_back();
    }
    Contour& c = census.contours[static_cast<std::size_t>(root_id[r])];
    c.edges.push_back(e);
    if (boundary[e]) c.touches_boundary = true;
  }
  for (const auto& c : census.contours) (c.touches_boundary ? census.count_boundary_touching : census.count_interior)++;
  return census;
}

/// Components of {f = level} contained in `domain` (d <= 2).
inline ComponentCensus count_level_components(const FieldRealization& real, const BoxDomain& domain, double level) {
  if (domain.dim() > 2) throw UnsupportedDimension("level-set counting supports d <= 2");
  GridShape shape;
  const auto g = shifted_values(real, domain, level, shape);
  ComponentCensus c;
  if (domain.dim() == 1) {
    c.kind = CountKind::LS;
    for (std::size_t k = 0; k + 1 < g.size(); ++k)
      if ((g[k] >= 0.0) != (g[k + 1] >= 0.0)) ++c.count_interior;
  } else {
    c = marching_squares(g, shape.extent(0), shape.extent(1));
  }
  c.level = level;
  return c;
}

inline ComponentCensus count_components(const FieldRealization& real, const BoxDomain& domain, double level, CountKind kind) {
  return kind == CountKind::ES ? count_excursion_components(real, domain, level) : count_level_components(real, domain, level);
}

}  // namespace gfc
