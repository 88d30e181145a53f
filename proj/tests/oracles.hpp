#pragma once

// Test-only reference implementations. Each one takes a deliberately naive
// route so it shares no code path with the library function it checks.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <random>
#include <tuple>
#include <vector>

#include "fedclust/clustering.hpp"
#include "fedclust/nn.hpp"

namespace oracle {

using fedclust::nn::Index;
using fedclust::nn::Model;

/// Seeded generator of random test inputs.
class Gen {
 public:
  explicit Gen(std::uint64_t seed) : rng_(seed) {}

  Index dim(Index lo, Index hi) {
    return std::uniform_int_distribution<Index>(lo, hi)(rng_);
  }
  double real(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng_); }
  double normal() { return std::normal_distribution<double>(0.0, 1.0)(rng_); }

  Eigen::MatrixXd matrix(Index rows, Index cols) {
    Eigen::MatrixXd m(rows, cols);
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = normal();
    return m;
  }
  Eigen::VectorXd vector(Index n) { return matrix(n, 1); }

  std::vector<int> labels(Index n, int classes) {
    std::vector<int> y(static_cast<std::size_t>(n));
    for (auto& v : y) v = std::uniform_int_distribution<int>(0, classes - 1)(rng_);
    return y;
  }

  Model model(std::vector<Index> dims,
              fedclust::nn::Activation act = fedclust::nn::Activation::ReLU) {
    Model m;
    m.activation = act;
    for (std::size_t k = 0; k + 1 < dims.size(); ++k)
      m.layers.push_back({matrix(dims[k + 1], dims[k]), vector(dims[k + 1])});
    return m;
  }

  /// Random symmetric matrix with zero diagonal and positive off-diagonal entries.
  fedclust::clustering::ProximityMatrix distance_matrix(std::size_t m) {
    Eigen::MatrixXd d = Eigen::MatrixXd::Zero(static_cast<Index>(m), static_cast<Index>(m));
    for (Index i = 0; i < d.rows(); ++i)
      for (Index j = i + 1; j < d.cols(); ++j) d(i, j) = d(j, i) = real(0.01, 10.0);
    return fedclust::clustering::ProximityMatrix(d);
  }

  std::mt19937_64& engine() { return rng_; }

 private:
  std::mt19937_64 rng_;
};

/// Forward pass with explicit scalar loops.
inline Eigen::MatrixXd forward_loops(const Model& model, const Eigen::MatrixXd& x) {
  std::vector<std::vector<double>> act(static_cast<std::size_t>(x.rows()));
  for (Index i = 0; i < x.rows(); ++i)
    for (Index j = 0; j < x.cols(); ++j) act[static_cast<std::size_t>(i)].push_back(x(i, j));
  for (std::size_t k = 0; k < model.layers.size(); ++k) {
    const auto& layer = model.layers[k];
    for (auto& row : act) {
      std::vector<double> next(static_cast<std::size_t>(layer.out_dim()));
      for (Index o = 0; o < layer.out_dim(); ++o) {
        double s = layer.biases(o);
        for (Index c = 0; c < layer.in_dim(); ++c)
          s += layer.weights(o, c) * row[static_cast<std::size_t>(c)];
        if (k + 1 < model.layers.size()) {
          if (model.activation == fedclust::nn::Activation::ReLU) s = s > 0.0 ? s : 0.0;
          if (model.activation == fedclust::nn::Activation::Tanh) s = std::tanh(s);
        }
        next[static_cast<std::size_t>(o)] = s;
      }
      row = std::move(next);
    }
  }
  Eigen::MatrixXd out(x.rows(), model.num_classes());
  for (Index i = 0; i < out.rows(); ++i)
    for (Index j = 0; j < out.cols(); ++j) out(i, j) = act[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
  return out;
}

/// Mean cross-entropy + proximal term recomputed from the loop forward pass.
inline double loss_loops(const Model& model, const Eigen::MatrixXd& x, const std::vector<int>& y,
                         const Model* anchor, double mu) {
  const auto logits = forward_loops(model, x);
  double total = 0.0;
  for (Index i = 0; i < logits.rows(); ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (Index c = 0; c < logits.cols(); ++c) mx = std::max(mx, logits(i, c));
    double s = 0.0;
    for (Index c = 0; c < logits.cols(); ++c) s += std::exp(logits(i, c) - mx);
    total += std::log(s) + mx - logits(i, y[static_cast<std::size_t>(i)]);
  }
  double loss = total / static_cast<double>(logits.rows());
  if (mu > 0.0) {
    double sq = 0.0;
    for (std::size_t k = 0; k < model.layers.size(); ++k) {
      sq += (model.layers[k].weights - anchor->layers[k].weights).squaredNorm();
      sq += (model.layers[k].biases - anchor->layers[k].biases).squaredNorm();
    }
    loss += 0.5 * mu * sq;
  }
  return loss;
}

/// Largest |backprop - finite difference| / max(|a|, |b|, 1e-6) over all
/// parameters. The difference is the five-point central stencil with step 1e-4.
inline double max_gradient_error(const Model& model, const Eigen::MatrixXd& x,
                                 const std::vector<int>& y, const Model* anchor, double mu) {
  const auto analytic = fedclust::nn::loss_and_gradients(model, x, y, anchor, mu).gradients;
  constexpr double h = 1e-4;
  Model probe = model;
  double worst = 0.0;
  auto check = [&](double& param, double grad) {
    const double saved = param;
    auto at = [&](double offset) {
      param = saved + offset;
      return loss_loops(probe, x, y, anchor, mu);
    };
    const double numeric = (at(-2 * h) - 8 * at(-h) + 8 * at(h) - at(2 * h)) / (12 * h);
    param = saved;
    const double scale = std::max({std::abs(numeric), std::abs(grad), 1e-6});
    worst = std::max(worst, std::abs(numeric - grad) / scale);
  };
  for (std::size_t k = 0; k < probe.layers.size(); ++k) {
    auto& layer = probe.layers[k];
    for (Index r = 0; r < layer.weights.rows(); ++r)
      for (Index c = 0; c < layer.weights.cols(); ++c)
        check(layer.weights(r, c), analytic[k].weights(r, c));
    for (Index r = 0; r < layer.biases.size(); ++r) check(layer.biases(r), analytic[k].biases(r));
  }
  return worst;
}

/// Euclidean distances with a scalar double loop.
inline Eigen::MatrixXd distances_loops(const std::vector<Eigen::VectorXd>& v) {
  const auto m = static_cast<Index>(v.size());
  Eigen::MatrixXd d(m, m);
  for (Index i = 0; i < m; ++i)
    for (Index j = 0; j < m; ++j) {
      double s = 0.0;
      for (Index t = 0; t < v[static_cast<std::size_t>(i)].size(); ++t) {
        const double diff = v[static_cast<std::size_t>(i)](t) - v[static_cast<std::size_t>(j)](t);
        s += diff * diff;
      }
      d(i, j) = std::sqrt(s);
    }
  return d;
}

/// Textbook agglomerative clustering: every step recomputes the linkage of all
/// cluster pairs from member-to-member distances and merges the smallest pair
/// (ties by smallest node ids) until k clusters remain.
inline std::vector<std::size_t> naive_hc(const fedclust::clustering::ProximityMatrix& d,
                                         fedclust::clustering::Linkage linkage, std::size_t k) {
  using fedclust::clustering::Linkage;
  struct Cluster {
    std::size_t node;
    std::vector<std::size_t> members;
  };
  const std::size_t m = d.size();
  std::vector<Cluster> clusters;
  for (std::size_t i = 0; i < m; ++i) clusters.push_back({i, {i}});
  std::size_t next_node = m;
  while (clusters.size() > k) {
    std::tuple<double, std::size_t, std::size_t> best{std::numeric_limits<double>::infinity(), 0, 0};
    std::size_t bi = 0;
    std::size_t bj = 0;
    for (std::size_t i = 0; i < clusters.size(); ++i)
      for (std::size_t j = i + 1; j < clusters.size(); ++j) {
        double link = linkage == Linkage::Single ? std::numeric_limits<double>::infinity() : 0.0;
        for (std::size_t a : clusters[i].members)
          for (std::size_t b : clusters[j].members) {
            if (linkage == Linkage::Single) link = std::min(link, d(a, b));
            else if (linkage == Linkage::Complete) link = std::max(link, d(a, b));
            else link += d(a, b);
          }
        if (linkage == Linkage::Average)
          link /= static_cast<double>(clusters[i].members.size() * clusters[j].members.size());
        const std::tuple<double, std::size_t, std::size_t> key{
            link, std::min(clusters[i].node, clusters[j].node),
            std::max(clusters[i].node, clusters[j].node)};
        if (key < best) {
          best = key;
          bi = i;
          bj = j;
        }
      }
    Cluster merged{next_node++, clusters[bi].members};
    merged.members.insert(merged.members.end(), clusters[bj].members.begin(),
                          clusters[bj].members.end());
    clusters.erase(clusters.begin() + static_cast<std::ptrdiff_t>(bj));
    clusters[bi] = std::move(merged);
  }
  std::vector<std::size_t> raw(m);
  for (std::size_t c = 0; c < clusters.size(); ++c)
    for (std::size_t i : clusters[c].members) raw[i] = c;
  // canonical numbering: order of first appearance by client index
  std::map<std::size_t, std::size_t> renumber;
  std::vector<std::size_t> out(m);
  for (std::size_t i = 0; i < m; ++i)
    out[i] = renumber.try_emplace(raw[i], renumber.size()).first->second;
  return out;
}

/// ARI from explicit enumeration of all unordered pairs.
inline double pair_counting_ari(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b) {
  const std::size_t n = a.size();
  double both = 0, only_a = 0, only_b = 0, total = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const bool sa = a[i] == a[j];
      const bool sb = b[i] == b[j];
      both += sa && sb;
      only_a += sa;
      only_b += sb;
      total += 1;
    }
  const double expected = only_a * only_b / total;
  const double max_index = 0.5 * (only_a + only_b);
  if (max_index == expected) return 1.0;
  return (both - expected) / (max_index - expected);
}

/// Explicit sum_i (n_i / N) theta_i, parameter by parameter.
inline Model weighted_sum(const std::vector<std::pair<Model, std::size_t>>& updates) {
  double total = 0.0;
  for (const auto& u : updates) total += static_cast<double>(u.second);
  Model out = updates.front().first;
  for (std::size_t k = 0; k < out.layers.size(); ++k) {
    auto& layer = out.layers[k];
    for (Index i = 0; i < layer.weights.size(); ++i) {
      double s = 0.0;
      for (const auto& [m, n] : updates) s += static_cast<double>(n) / total * m.layers[k].weights.data()[i];
      layer.weights.data()[i] = s;
    }
    for (Index i = 0; i < layer.biases.size(); ++i) {
      double s = 0.0;
      for (const auto& [m, n] : updates) s += static_cast<double>(n) / total * m.layers[k].biases(i);
      layer.biases(i) = s;
    }
  }
  return out;
}

}  // namespace oracle
