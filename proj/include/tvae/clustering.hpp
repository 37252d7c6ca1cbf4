#pragma once

// Ward agglomerative clustering and matched cluster accuracy.

#include <algorithm>
#include <limits>
#include <numeric>
#include <vector>

#include <Eigen/Dense>

#include "tvae/errors.hpp"

namespace tvae {

struct Merge {
  int a, b;         // cluster ids; ids >= N refer to earlier merges
  double height;    // Ward distance
};

// Full Ward dendrogram by the nearest-neighbour chain algorithm. Distances
// come from cluster centroids and sizes, so memory stays O(N d):
//   d(A, B) = sqrt(2 |A||B| / (|A| + |B|)) * ||c_A - c_B||
// Merges are returned in order of increasing height.
inline std::vector<Merge> ward_linkage(const Eigen::MatrixXd& points) {
  const int n = static_cast<int>(points.rows());
  std::vector<Merge> merges;
  if (n < 2) return merges;
  Eigen::MatrixXd centroid(2 * n - 1, points.cols());
  centroid.topRows(n) = points;
  std::vector<double> size(2 * n - 1, 1.0);
  std::vector<int> active(n);
  std::iota(active.begin(), active.end(), 0);
  auto dist = [&](int i, int j) {
    const double w = 2.0 * size[i] * size[j] / (size[i] + size[j]);
    return std::sqrt(w * (centroid.row(i) - centroid.row(j)).squaredNorm());
  };
  std::vector<int> chain;
  int next_id = n;
  while (active.size() > 1) {
    if (chain.empty()) chain.push_back(active.front());
    for (;;) {
      const int top = chain.back();
      const int prev = chain.size() > 1 ? chain[chain.size() - 2] : -1;
      int best = -1;
      double best_d = std::numeric_limits<double>::infinity();
      for (int c : active) {
        if (c == top) continue;
        const double d = dist(top, c);
        // Prefer the previous chain element on ties so the chain terminates.
        if (d < best_d || (d == best_d && c == prev)) {
          best_d = d;
          best = c;
        }
      }
      if (best == prev) {
        chain.pop_back();
        chain.pop_back();
        const int id = next_id++;
        size[id] = size[top] + size[prev];
        centroid.row(id) = (size[top] * centroid.row(top) + size[prev] * centroid.row(prev)) / size[id];
        merges.push_back({std::min(top, prev), std::max(top, prev), best_d});
        active.erase(std::remove_if(active.begin(), active.end(), [&](int c) { return c == top || c == prev; }),
                     active.end());
        active.push_back(id);
        break;
      }
      chain.push_back(best);
    }
  }
  // Re-express the merges in height order. A child never sits above its
  // parent (Ward is reducible) and was created earlier, so the stable sort
  // keeps children ahead of parents and ids can be remapped in one pass.
  std::vector<int> order(merges.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int i, int j) { return merges[i].height < merges[j].height; });
  std::vector<int> remap(2 * n - 1);
  std::iota(remap.begin(), remap.begin() + n, 0);
  std::vector<Merge> sorted;
  for (int k : order) {
    const Merge& m = merges[k];
    remap[n + k] = n + static_cast<int>(sorted.size());
    sorted.push_back({std::min(remap[m.a], remap[m.b]), std::max(remap[m.a], remap[m.b]), m.height});
  }
  return sorted;
}

// Flat labels 0..k-1 from the first N - k merges of a height-ordered dendrogram.
inline std::vector<int> cut_tree(const std::vector<Merge>& merges, int n, int k) {
  if (k < 1 || k > n) throw InvalidArgument("cluster count must be in [1, N]");
  std::vector<int> parent(2 * n - 1);
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](int x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  for (int m = 0; m < n - k; ++m) {
    parent[find(merges[m].a)] = n + m;
    parent[find(merges[m].b)] = n + m;
  }
  std::vector<int> labels(n), root_to_label(2 * n - 1, -1);
  int next = 0;
  for (int i = 0; i < n; ++i) {
    const int r = find(i);
    if (root_to_label[r] < 0) root_to_label[r] = next++;
    labels[i] = root_to_label[r];
  }
  return labels;
}

inline std::vector<int> ward_clustering(const Eigen::MatrixXd& points, int k) {
  const int n = static_cast<int>(points.rows());
  if (n < k) throw InvalidArgument("fewer points (" + std::to_string(n) + ") than clusters (" + std::to_string(k) + ")");
  return cut_tree(ward_linkage(points), n, k);
}

// Minimum-cost perfect assignment on a square cost matrix (Hungarian
// method, O(n^3)). Returns column assigned to each row.
inline std::vector<int> hungarian_min_cost(const Eigen::MatrixXd& cost) {
  const int n = static_cast<int>(cost.rows());
  if (cost.cols() != n) throw ShapeError("assignment cost matrix must be square");
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  std::vector<char> used(n + 1);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  std::vector<int> row_to_col(n);
  for (int j = 1; j <= n; ++j) row_to_col[p[j] - 1] = j - 1;
  return row_to_col;
}

// Percentage of points whose cluster maps to their label under the
// one-to-one cluster/label assignment maximising agreement.
inline double cluster_accuracy(const std::vector<int>& clusters, const std::vector<int>& labels) {
  if (clusters.size() != labels.size() || clusters.empty())
    throw InvalidArgument("cluster and label vectors must have equal nonzero length");
  std::vector<int> cs = clusters, ls = labels;
  std::sort(cs.begin(), cs.end());
  cs.erase(std::unique(cs.begin(), cs.end()), cs.end());
  std::sort(ls.begin(), ls.end());
  ls.erase(std::unique(ls.begin(), ls.end()), ls.end());
  const int m = static_cast<int>(std::max(cs.size(), ls.size()));
  Eigen::MatrixXd counts = Eigen::MatrixXd::Zero(m, m);
  for (std::size_t i = 0; i < clusters.size(); ++i) {
    const auto ci = std::lower_bound(cs.begin(), cs.end(), clusters[i]) - cs.begin();
    const auto li = std::lower_bound(ls.begin(), ls.end(), labels[i]) - ls.begin();
    counts(ci, li) += 1.0;
  }
  const auto assign = hungarian_min_cost(-counts);
  double matched = 0.0;
  for (int r = 0; r < m; ++r) matched += counts(r, assign[r]);
  return 100.0 * matched / static_cast<double>(clusters.size());
}

}  // namespace tvae
