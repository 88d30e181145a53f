#include "fedclust/clustering.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <tuple>

#include "fedclust/errors.hpp"

namespace fedclust::clustering {

ProximityMatrix::ProximityMatrix(Eigen::MatrixXd entries) : entries_(std::move(entries)) {
  if (entries_.rows() != entries_.cols()) throw ShapeError("proximity matrix must be square");
  const Eigen::Index m = entries_.rows();
  for (Eigen::Index i = 0; i < m; ++i) {
    if (entries_(i, i) != 0.0) throw ShapeError("proximity matrix diagonal must be zero");
    for (Eigen::Index j = 0; j < m; ++j) {
      const double v = entries_(i, j);
      if (!std::isfinite(v) || v < 0.0)
        throw ShapeError("proximity entries must be finite and nonnegative");
      if (v != entries_(j, i)) throw ShapeError("proximity matrix must be symmetric");
    }
  }
}

std::vector<std::vector<std::size_t>> ClusterAssignment::members() const {
  std::vector<std::vector<std::size_t>> out(num_clusters);
  for (std::size_t i = 0; i < labels.size(); ++i) out[labels[i]].push_back(i);
  return out;
}

ClusterAssignment canonicalize(std::span<const std::size_t> raw_labels) {
  ClusterAssignment out;
  std::map<std::size_t, std::size_t> renumber;
  out.labels.reserve(raw_labels.size());
  for (std::size_t raw : raw_labels) {
    auto [it, inserted] = renumber.try_emplace(raw, renumber.size());
    out.labels.push_back(it->second);
  }
  out.num_clusters = renumber.size();
  return out;
}

ProximityMatrix proximity_matrix(std::span<const Eigen::VectorXd> vectors) {
  if (vectors.empty()) throw ShapeError("proximity_matrix needs at least one vector");
  const Eigen::Index len = vectors.front().size();
  for (const auto& v : vectors) {
    if (v.size() != len) throw ShapeError("proximity_matrix: vectors have different lengths");
    if (!v.allFinite()) throw ShapeError("proximity_matrix: non-finite entry");
  }
  const auto m = static_cast<Eigen::Index>(vectors.size());
  Eigen::MatrixXd d = Eigen::MatrixXd::Zero(m, m);
  for (Eigen::Index i = 0; i < m; ++i) {
    for (Eigen::Index j = i + 1; j < m; ++j) {
      const double dist = (vectors[static_cast<std::size_t>(i)] -
                           vectors[static_cast<std::size_t>(j)]).norm();
      d(i, j) = dist;
      d(j, i) = dist;
    }
  }
  return ProximityMatrix(std::move(d));
}

ProximityMatrix per_layer_proximity(std::span<const nn::Model> models, std::size_t layer_index) {
  if (models.empty()) throw ShapeError("per_layer_proximity needs at least one model");
  std::vector<Eigen::VectorXd> flat;
  flat.reserve(models.size());
  for (const auto& model : models) {
    if (!model.same_shape(models.front()))
      throw ShapeError("per_layer_proximity: models have different architectures");
    flat.push_back(nn::flatten_layer(model, layer_index));
  }
  return proximity_matrix(flat);
}

namespace {

// Generic agglomerative scheme: Lance-Williams updates on a working copy of
// the distance matrix plus a cached nearest neighbour per active slot. Pair
// order is (distance, smaller node id, larger node id).
class Agglomerator {
 public:
  Agglomerator(const ProximityMatrix& matrix, Linkage linkage)
      : m_(matrix.size()),
        linkage_(linkage),
        dist_(matrix.entries()),
        node_(m_),
        size_(m_, 1),
        active_(m_, true),
        nn_(m_, 0) {
    std::iota(node_.begin(), node_.end(), std::size_t{0});
    for (std::size_t i = 0; i < m_; ++i) refresh(i);
  }

  Dendrogram run() {
    Dendrogram out;
    out.num_leaves = m_;
    for (std::size_t step = 0; step + 1 < m_; ++step) {
      std::size_t a = m_;
      for (std::size_t i = 0; i < m_; ++i)
        if (active_[i] && (a == m_ || key(i, nn_[i]) < key(a, nn_[a]))) a = i;
      const std::size_t b = nn_[a];
      const double d = at(a, b);
      const std::size_t new_node = m_ + step;
      out.merges.push_back(
          {std::min(node_[a], node_[b]), std::max(node_[a], node_[b]), d, new_node});

      for (std::size_t k = 0; k < m_; ++k) {
        if (!active_[k] || k == a || k == b) continue;
        const double updated = combine(at(a, k), at(b, k), size_[a], size_[b]);
        dist_(idx(a), idx(k)) = updated;
        dist_(idx(k), idx(a)) = updated;
      }
      active_[b] = false;
      size_[a] += size_[b];
      node_[a] = new_node;

      for (std::size_t k = 0; k < m_; ++k) {
        if (!active_[k]) continue;
        if (k == a || nn_[k] == a || nn_[k] == b) {
          refresh(k);
        } else if (key(k, a) < key(k, nn_[k])) {
          nn_[k] = a;
        }
      }
    }
    return out;
  }

 private:
  static Eigen::Index idx(std::size_t i) { return static_cast<Eigen::Index>(i); }
  double at(std::size_t i, std::size_t j) const { return dist_(idx(i), idx(j)); }

  std::tuple<double, std::size_t, std::size_t> key(std::size_t i, std::size_t j) const {
    return {at(i, j), std::min(node_[i], node_[j]), std::max(node_[i], node_[j])};
  }

  void refresh(std::size_t i) {
    bool found = false;
    for (std::size_t j = 0; j < m_; ++j) {
      if (j == i || !active_[j]) continue;
      if (!found || key(i, j) < key(i, nn_[i])) {
        nn_[i] = j;
        found = true;
      }
    }
  }

  double combine(double da, double db, std::size_t sa, std::size_t sb) const {
    switch (linkage_) {
      case Linkage::Single:
        return std::min(da, db);
      case Linkage::Complete:
        return std::max(da, db);
      case Linkage::Average: {
        const double wa = static_cast<double>(sa);
        const double wb = static_cast<double>(sb);
        // the weighted mean can round an ulp outside [min, max]
        return std::clamp((wa * da + wb * db) / (wa + wb), std::min(da, db), std::max(da, db));
      }
    }
    return da;
  }

  std::size_t m_;
  Linkage linkage_;
  Eigen::MatrixXd dist_;
  std::vector<std::size_t> node_;
  std::vector<std::size_t> size_;
  std::vector<bool> active_;
  std::vector<std::size_t> nn_;
};

ClusterAssignment apply_merges(const Dendrogram& dendrogram, const std::vector<char>& keep) {
  const std::size_t m = dendrogram.num_leaves;
  std::vector<std::size_t> parent(2 * m, 0);
  std::iota(parent.begin(), parent.end(), std::size_t{0});
  auto find = [&](std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  for (std::size_t s = 0; s < dendrogram.merges.size(); ++s) {
    const auto& merge = dendrogram.merges[s];
    // node ids chain even when a merge is not kept; keep them addressable
    parent[merge.node] = merge.node;
    if (keep[s]) {
      parent[find(merge.left)] = merge.node;
      parent[find(merge.right)] = merge.node;
    }
  }
  std::vector<std::size_t> roots(m);
  for (std::size_t i = 0; i < m; ++i) roots[i] = find(i);
  return canonicalize(roots);
}

}  // namespace

Dendrogram build_dendrogram(const ProximityMatrix& matrix, Linkage linkage) {
  if (matrix.size() == 0) throw ShapeError("cannot cluster an empty proximity matrix");
  return Agglomerator(matrix, linkage).run();
}

ClusterAssignment cut_dendrogram(const Dendrogram& dendrogram, const CutCriterion& cut) {
  const std::size_t m = dendrogram.num_leaves;
  const std::size_t num_merges = dendrogram.merges.size();
  if (m == 0 || num_merges + 1 != m) throw ShapeError("dendrogram must have m-1 merges");
  std::vector<char> keep_vec(num_merges, 0);

  if (const auto* fixed = std::get_if<FixedK>(&cut)) {
    if (fixed->k < 1) throw ConfigError("fixed_k requires k >= 1");
    if (fixed->k > m)
      throw ConfigError("fixed_k = " + std::to_string(fixed->k) + " exceeds " +
                        std::to_string(m) + " clients");
    for (std::size_t s = 0; s < m - fixed->k; ++s) keep_vec[s] = 1;
  } else if (const auto* thr = std::get_if<DistanceThreshold>(&cut)) {
    if (!(thr->tau > 0.0)) throw ConfigError("distance_threshold requires tau > 0");
    for (std::size_t s = 0; s < num_merges; ++s)
      keep_vec[s] = dendrogram.merges[s].distance <= thr->tau;
  } else {
    std::vector<double> sorted(num_merges);
    for (std::size_t s = 0; s < num_merges; ++s) sorted[s] = dendrogram.merges[s].distance;
    std::sort(sorted.begin(), sorted.end());
    double best_gap = 0.0;
    std::size_t best = num_merges;  // sentinel: no positive gap -> one cluster
    for (std::size_t s = 0; s + 1 < num_merges; ++s) {
      const double gap = sorted[s + 1] - sorted[s];
      if (gap > best_gap) {
        best_gap = gap;
        best = s;
      }
    }
    if (best == num_merges) {
      std::fill(keep_vec.begin(), keep_vec.end(), 1);
    } else {
      for (std::size_t s = 0; s < num_merges; ++s)
        keep_vec[s] = dendrogram.merges[s].distance <= sorted[best];
    }
  }

  return apply_merges(dendrogram, keep_vec);
}

HierarchicalResult agglomerative_cluster(const ProximityMatrix& matrix, Linkage linkage,
                                         const CutCriterion& cut) {
  if (const auto* fixed = std::get_if<FixedK>(&cut); fixed && fixed->k > matrix.size())
    throw ConfigError("fixed_k = " + std::to_string(fixed->k) + " exceeds " +
                      std::to_string(matrix.size()) + " clients");
  HierarchicalResult out;
  out.dendrogram = build_dendrogram(matrix, linkage);
  out.assignment = cut_dendrogram(out.dendrogram, cut);
  return out;
}

std::size_t assign_newcomer(const Eigen::VectorXd& vector,
                            const std::map<std::size_t, std::vector<Eigen::VectorXd>>& members,
                            NewcomerRule rule) {
  if (members.empty()) throw StateError("newcomer registry is empty");
  std::size_t best_id = 0;
  double best = std::numeric_limits<double>::infinity();
  bool found = false;
  for (const auto& [cluster_id, stored] : members) {
    if (stored.empty())
      throw StateError("cluster " + std::to_string(cluster_id) + " has no stored members");
    for (const auto& v : stored)
      if (v.size() != vector.size()) throw ShapeError("newcomer vector length mismatch");
    double d = 0.0;
    if (rule == NewcomerRule::Centroid) {
      Eigen::VectorXd centroid = Eigen::VectorXd::Zero(vector.size());
      for (const auto& v : stored) centroid += v;
      centroid /= static_cast<double>(stored.size());
      d = (vector - centroid).norm();
    } else {
      d = std::numeric_limits<double>::infinity();
      for (const auto& v : stored) d = std::min(d, (vector - v).norm());
    }
    // std::map iterates ids ascending, so strict < keeps the smallest on ties
    if (!found || d < best) {
      best = d;
      best_id = cluster_id;
      found = true;
    }
  }
  return best_id;
}

double adjusted_rand_index(const ClusterAssignment& a, const ClusterAssignment& b) {
  if (a.size() != b.size()) throw ConfigError("ARI: assignments cover different client sets");
  const std::size_t n = a.size();
  if (n < 2) return 1.0;
  auto comb2 = [](double x) { return x * (x - 1.0) / 2.0; };

  std::map<std::pair<std::size_t, std::size_t>, std::size_t> table;
  std::map<std::size_t, std::size_t> rows;
  std::map<std::size_t, std::size_t> cols;
  for (std::size_t i = 0; i < n; ++i) {
    ++table[{a.labels[i], b.labels[i]}];
    ++rows[a.labels[i]];
    ++cols[b.labels[i]];
  }
  double index = 0.0;
  for (const auto& [cell, count] : table) index += comb2(static_cast<double>(count));
  double sum_a = 0.0;
  for (const auto& [label, count] : rows) sum_a += comb2(static_cast<double>(count));
  double sum_b = 0.0;
  for (const auto& [label, count] : cols) sum_b += comb2(static_cast<double>(count));

  const double total = comb2(static_cast<double>(n));
  const double expected = sum_a * sum_b / total;
  const double max_index = 0.5 * (sum_a + sum_b);
  if (max_index == expected) return 1.0;  // both all-singletons or both one cluster
  return (index - expected) / (max_index - expected);
}

double block_contrast(const ProximityMatrix& matrix, std::span<const std::size_t> groups) {
  if (groups.size() != matrix.size()) throw ShapeError("group labels must cover every client");
  double intra = 0.0;
  double inter = 0.0;
  std::size_t n_intra = 0;
  std::size_t n_inter = 0;
  for (std::size_t i = 0; i < groups.size(); ++i) {
    for (std::size_t j = i + 1; j < groups.size(); ++j) {
      if (groups[i] == groups[j]) {
        intra += matrix(i, j);
        ++n_intra;
      } else {
        inter += matrix(i, j);
        ++n_inter;
      }
    }
  }
  if (n_intra == 0 || n_inter == 0)
    throw ConfigError("block contrast needs both intra- and inter-group pairs");
  return (inter / static_cast<double>(n_inter)) / (intra / static_cast<double>(n_intra));
}

Linkage parse_linkage(std::string_view name) {
  if (name == "single") return Linkage::Single;
  if (name == "complete") return Linkage::Complete;
  if (name == "average") return Linkage::Average;
  throw ConfigError("unknown linkage '" + std::string(name) + "'");
}

std::string_view to_string(Linkage linkage) {
  switch (linkage) {
    case Linkage::Single:
      return "single";
    case Linkage::Complete:
      return "complete";
    case Linkage::Average:
      return "average";
  }
  return "average";
}

}  // namespace fedclust::clustering
