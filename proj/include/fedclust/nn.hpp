#pragma once

// Dense multilayer perceptron: forward pass, softmax cross-entropy with an
// optional proximal term, backprop and plain mini-batch SGD. Everything is a
// template on the scalar type; the rest of the library instantiates double.

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <type_traits>
#include <string>
#include <vector>

#include "fedclust/errors.hpp"
#include "fedclust/random.hpp"

namespace fedclust::nn {

using Index = Eigen::Index;

enum class Activation { ReLU, Tanh, Identity };

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// One affine layer: y = W x + b with W of shape [out_dim x in_dim].
template <typename Scalar>
struct DenseLayer {
  Matrix<Scalar> weights;
  Vector<Scalar> biases;

  static DenseLayer zeros(Index out_dim, Index in_dim) {
    return {Matrix<Scalar>::Zero(out_dim, in_dim), Vector<Scalar>::Zero(out_dim)};
  }

  Index in_dim() const { return weights.cols(); }
  Index out_dim() const { return weights.rows(); }
  Index parameter_count() const { return weights.size() + biases.size(); }

  bool same_shape(const DenseLayer& other) const {
    return weights.rows() == other.weights.rows() && weights.cols() == other.weights.cols() &&
           biases.size() == other.biases.size();
  }

  bool operator==(const DenseLayer& other) const {
    return same_shape(other) && weights == other.weights && biases == other.biases;
  }
};

/// Ordered stack of dense layers. Hidden layers share one activation; the last
/// layer is the classifier head and emits logits.
template <typename Scalar>
struct LayeredModel {
  std::vector<DenseLayer<Scalar>> layers;
  Activation activation = Activation::ReLU;

  std::size_t num_layers() const { return layers.size(); }
  Index in_dim() const { return layers.front().in_dim(); }
  Index num_classes() const { return layers.back().out_dim(); }

  Index parameter_count() const {
    Index total = 0;
    for (const auto& layer : layers) total += layer.parameter_count();
    return total;
  }

  bool same_shape(const LayeredModel& other) const {
    if (layers.size() != other.layers.size()) return false;
    for (std::size_t k = 0; k < layers.size(); ++k)
      if (!layers[k].same_shape(other.layers[k])) return false;
    return true;
  }

  bool operator==(const LayeredModel& other) const {
    return activation == other.activation && layers == other.layers;
  }

  /// Throws ShapeError unless the layers chain and every entry is finite.
  void validate() const {
    if (layers.empty()) throw ShapeError("model has no layers");
    for (std::size_t k = 0; k < layers.size(); ++k) {
      const auto& layer = layers[k];
      if (layer.out_dim() < 1 || layer.in_dim() < 1)
        throw ShapeError("layer " + std::to_string(k) + " has an empty dimension");
      if (layer.biases.size() != layer.out_dim())
        throw ShapeError("layer " + std::to_string(k) + " bias length does not match out_dim");
      if (k + 1 < layers.size() && layer.out_dim() != layers[k + 1].in_dim())
        throw ShapeError("layer " + std::to_string(k) + " does not chain into layer " +
                         std::to_string(k + 1));
      if (!layer.weights.allFinite() || !layer.biases.allFinite())
        throw ShapeError("layer " + std::to_string(k) + " has non-finite parameters");
    }
  }
};

/// Per-layer gradient structure; mirrors LayeredModel::layers.
template <typename Scalar>
using Gradients = std::vector<DenseLayer<Scalar>>;

struct TrainConfig {
  std::size_t local_epochs = 1;
  std::size_t batch_size = 32;
  double learning_rate = 0.05;
  double prox_mu = 0.0;  // 0 disables the proximal term
  std::uint64_t seed = 0;

  void validate() const {
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
      throw ConfigError("learning_rate must be positive");
    if (!(prox_mu >= 0.0) || !std::isfinite(prox_mu)) throw ConfigError("prox_mu must be >= 0");
  }
};

/// Builds a model for `layer_dims` = [in, hidden..., classes]. Weights are
/// uniform in +-1/sqrt(in_dim), biases zero.
template <typename Scalar = double>
LayeredModel<Scalar> init_model(std::span<const Index> layer_dims, std::uint64_t seed,
                                Activation activation = Activation::ReLU) {
  if (layer_dims.size() < 2) throw ConfigError("layer_dims needs at least two entries");
  for (Index d : layer_dims)
    if (d < 1) throw ConfigError("layer dimensions must be >= 1");

  Rng rng(seed);
  LayeredModel<Scalar> model;
  model.activation = activation;
  for (std::size_t k = 0; k + 1 < layer_dims.size(); ++k) {
    const Index in = layer_dims[k];
    const Index out = layer_dims[k + 1];
    auto layer = DenseLayer<Scalar>::zeros(out, in);
    const double scale = 1.0 / std::sqrt(static_cast<double>(in));
    // row-major draw order so the stream does not depend on storage order
    for (Index r = 0; r < out; ++r)
      for (Index c = 0; c < in; ++c)
        layer.weights(r, c) = static_cast<Scalar>((2.0 * uniform01(rng) - 1.0) * scale);
    model.layers.push_back(std::move(layer));
  }
  return model;
}

template <typename Scalar = double>
LayeredModel<Scalar> init_model(std::initializer_list<Index> layer_dims, std::uint64_t seed,
                                Activation activation = Activation::ReLU) {
  return init_model<Scalar>(std::span<const Index>(layer_dims.begin(), layer_dims.size()), seed,
                            activation);
}

namespace detail {

template <typename Derived>
auto activate(const Eigen::MatrixBase<Derived>& z, Activation act) {
  using Scalar = typename Derived::Scalar;
  Matrix<Scalar> out;
  switch (act) {
    case Activation::ReLU:
      out = z.cwiseMax(Scalar(0));
      break;
    case Activation::Tanh:
      out = z.array().tanh().matrix();
      break;
    case Activation::Identity:
      out = z;
      break;
  }
  return out;
}

/// Multiplies `grad` in place by the activation derivative evaluated at `z`.
template <typename Scalar>
void backprop_activation(Matrix<Scalar>& grad, const Matrix<Scalar>& z, Activation act) {
  switch (act) {
    case Activation::ReLU:
      grad.array() *= (z.array() > Scalar(0)).template cast<Scalar>();
      break;
    case Activation::Tanh:
      grad.array() *= Scalar(1) - z.array().tanh().square();
      break;
    case Activation::Identity:
      break;
  }
}

template <typename Scalar>
void check_input(const LayeredModel<Scalar>& model, Index cols) {
  if (model.layers.empty()) throw ShapeError("model has no layers");
  if (cols != model.in_dim())
    throw ShapeError("input has " + std::to_string(cols) + " features, model expects " +
                     std::to_string(model.in_dim()));
}

}  // namespace detail

/// Logits for a batch of row-vector inputs [batch x in_dim].
template <typename Scalar, typename Derived>
Matrix<Scalar> forward(const LayeredModel<Scalar>& model,
                       const Eigen::MatrixBase<Derived>& inputs) {
  detail::check_input(model, inputs.cols());
  Matrix<Scalar> act = inputs.template cast<Scalar>();
  for (std::size_t k = 0; k < model.layers.size(); ++k) {
    const auto& layer = model.layers[k];
    Matrix<Scalar> z = act * layer.weights.transpose();
    z.rowwise() += layer.biases.transpose();
    act = (k + 1 < model.layers.size()) ? detail::activate(z, model.activation) : std::move(z);
  }
  return act;
}

template <typename Scalar>
struct LossAndGradients {
  Scalar loss{};
  Gradients<Scalar> gradients;
};

/// Sum of squared parameter differences between two same-shaped models.
template <typename Scalar>
Scalar squared_distance(const LayeredModel<Scalar>& a, const LayeredModel<Scalar>& b) {
  if (!a.same_shape(b)) throw ShapeError("models differ in shape");
  Scalar total(0);
  for (std::size_t k = 0; k < a.layers.size(); ++k) {
    total += (a.layers[k].weights - b.layers[k].weights).squaredNorm();
    total += (a.layers[k].biases - b.layers[k].biases).squaredNorm();
  }
  return total;
}

/// Mean softmax cross-entropy over the batch plus (prox_mu/2)*||theta - anchor||^2,
/// with exact backprop gradients. `anchor` may be null when prox_mu == 0.
template <typename Scalar, typename Derived>
LossAndGradients<Scalar> loss_and_gradients(const LayeredModel<Scalar>& model,
                                            const Eigen::MatrixBase<Derived>& batch_inputs,
                                            std::span<const int> batch_labels,
                                            const std::type_identity_t<LayeredModel<Scalar>>* anchor,
                                            std::type_identity_t<Scalar> prox_mu) {
  detail::check_input(model, batch_inputs.cols());
  const Index batch = batch_inputs.rows();
  if (batch < 1) throw DataError("empty batch");
  if (static_cast<Index>(batch_labels.size()) != batch)
    throw ShapeError("label count does not match batch size");
  const Index classes = model.num_classes();
  for (int y : batch_labels)
    if (y < 0 || y >= classes)
      throw DataError("label " + std::to_string(y) + " outside [0, " + std::to_string(classes) +
                      ")");
  if (prox_mu < Scalar(0)) throw ConfigError("prox_mu must be >= 0");
  const bool use_prox = prox_mu > Scalar(0);
  if (use_prox && (anchor == nullptr || !anchor->same_shape(model)))
    throw ShapeError("proximal anchor must have the model's shape");

  const std::size_t depth = model.layers.size();
  // activations[k] feeds layer k; preact[k] is layer k's output before activation
  std::vector<Matrix<Scalar>> activations(depth);
  std::vector<Matrix<Scalar>> preact(depth);
  activations[0] = batch_inputs.template cast<Scalar>();
  for (std::size_t k = 0; k < depth; ++k) {
    const auto& layer = model.layers[k];
    preact[k] = activations[k] * layer.weights.transpose();
    preact[k].rowwise() += layer.biases.transpose();
    if (k + 1 < depth) activations[k + 1] = detail::activate(preact[k], model.activation);
  }

  const Matrix<Scalar>& logits = preact.back();
  Matrix<Scalar> delta(batch, classes);
  Scalar loss_sum(0);
  const Scalar inv_batch = Scalar(1) / static_cast<Scalar>(batch);
  for (Index i = 0; i < batch; ++i) {
    const Scalar row_max = logits.row(i).maxCoeff();
    auto shifted = (logits.row(i).array() - row_max).exp();
    const Scalar denom = shifted.sum();
    loss_sum += std::log(denom) + row_max - logits(i, batch_labels[i]);
    delta.row(i) = shifted / denom;
    delta(i, batch_labels[i]) -= Scalar(1);
  }
  delta *= inv_batch;

  LossAndGradients<Scalar> out;
  out.loss = loss_sum * inv_batch;
  out.gradients.resize(depth);
  for (std::size_t k = depth; k-- > 0;) {
    const auto& layer = model.layers[k];
    auto& grad = out.gradients[k];
    grad.weights = delta.transpose() * activations[k];
    grad.biases = delta.colwise().sum().transpose();
    if (k > 0) {
      Matrix<Scalar> upstream = delta * layer.weights;
      detail::backprop_activation(upstream, preact[k - 1], model.activation);
      delta = std::move(upstream);
    }
  }

  if (use_prox) {
    out.loss += Scalar(0.5) * prox_mu * squared_distance(model, *anchor);
    for (std::size_t k = 0; k < depth; ++k) {
      out.gradients[k].weights += prox_mu * (model.layers[k].weights - anchor->layers[k].weights);
      out.gradients[k].biases += prox_mu * (model.layers[k].biases - anchor->layers[k].biases);
    }
  }
  return out;
}

template <typename Scalar>
LayeredModel<Scalar> sgd_step(LayeredModel<Scalar> model, const Gradients<Scalar>& gradients,
                              Scalar learning_rate) {
  if (gradients.size() != model.layers.size())
    throw ShapeError("gradient depth does not match model");
  for (std::size_t k = 0; k < gradients.size(); ++k) {
    if (!model.layers[k].same_shape(gradients[k]))
      throw ShapeError("gradient shape mismatch at layer " + std::to_string(k));
    model.layers[k].weights -= learning_rate * gradients[k].weights;
    model.layers[k].biases -= learning_rate * gradients[k].biases;
  }
  return model;
}

/// Runs cfg.local_epochs passes of mini-batch SGD over the rows `indices` of
/// (features, labels). Each epoch reshuffles with Fisher-Yates from a stream
/// seeded by cfg.seed. The anchor is consulted only when cfg.prox_mu > 0.
template <typename Scalar, typename Derived>
LayeredModel<Scalar> local_train(LayeredModel<Scalar> model,
                                 const Eigen::MatrixBase<Derived>& features,
                                 std::span<const int> labels,
                                 std::span<const std::size_t> indices, const TrainConfig& cfg,
                                 const LayeredModel<Scalar>* anchor = nullptr) {
  cfg.validate();
  if (indices.empty()) throw DataError("cannot train on an empty shard");
  if (static_cast<std::size_t>(features.rows()) != labels.size())
    throw ShapeError("features and labels disagree on sample count");
  for (std::size_t idx : indices)
    if (idx >= labels.size()) throw DataError("shard index out of range");
  if (cfg.local_epochs == 0) return model;

  const Scalar lr = static_cast<Scalar>(cfg.learning_rate);
  const Scalar mu = static_cast<Scalar>(cfg.prox_mu);
  const LayeredModel<Scalar>* prox_anchor = mu > Scalar(0) ? anchor : nullptr;
  if (mu > Scalar(0) && prox_anchor == nullptr)
    throw ConfigError("prox_mu > 0 requires an anchor model");

  Rng rng(cfg.seed);
  std::vector<std::size_t> order(indices.begin(), indices.end());
  Matrix<Scalar> batch_x;
  std::vector<int> batch_y;
  for (std::size_t epoch = 0; epoch < cfg.local_epochs; ++epoch) {
    fisher_yates(order, rng);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t len = std::min(cfg.batch_size, order.size() - start);
      batch_x.resize(static_cast<Index>(len), features.cols());
      batch_y.resize(len);
      for (std::size_t i = 0; i < len; ++i) {
        const auto row = static_cast<Index>(order[start + i]);
        batch_x.row(static_cast<Index>(i)) = features.row(row).template cast<Scalar>();
        batch_y[i] = labels[order[start + i]];
      }
      auto lg = loss_and_gradients(model, batch_x, batch_y, prox_anchor, mu);
      model = sgd_step(std::move(model), lg.gradients, lr);
    }
  }
  return model;
}

/// Row-major weights followed by biases; length out*in + out.
template <typename Scalar>
Vector<Scalar> flatten_layer(const LayeredModel<Scalar>& model, std::size_t layer_index) {
  if (layer_index >= model.layers.size())
    throw ConfigError("layer index " + std::to_string(layer_index) + " out of range (model has " +
                      std::to_string(model.layers.size()) + " layers)");
  const auto& layer = model.layers[layer_index];
  Vector<Scalar> flat(layer.parameter_count());
  Eigen::Map<Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      flat.data(), layer.out_dim(), layer.in_dim()) = layer.weights;
  flat.tail(layer.out_dim()) = layer.biases;
  return flat;
}

/// Inverse of flatten_layer for a known shape.
template <typename Derived>
DenseLayer<typename Derived::Scalar> unflatten_layer(const Eigen::MatrixBase<Derived>& flat,
                                                     Index out_dim, Index in_dim) {
  using Scalar = typename Derived::Scalar;
  if (flat.size() != out_dim * in_dim + out_dim)
    throw ShapeError("flat vector length does not match layer shape");
  const Vector<Scalar> v = flat;
  DenseLayer<Scalar> layer;
  layer.weights = Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic,
                                                 Eigen::RowMajor>>(v.data(), out_dim, in_dim);
  layer.biases = v.tail(out_dim);
  return layer;
}

/// Index of the largest logit per row; ties go to the smallest class id.
template <typename Derived>
std::vector<int> argmax_rows(const Eigen::MatrixBase<Derived>& logits) {
  std::vector<int> out(static_cast<std::size_t>(logits.rows()));
  for (Index i = 0; i < logits.rows(); ++i) {
    Index best = 0;
    for (Index c = 1; c < logits.cols(); ++c)
      if (logits(i, c) > logits(i, best)) best = c;
    out[static_cast<std::size_t>(i)] = static_cast<int>(best);
  }
  return out;
}

using Model = LayeredModel<double>;
using Layer = DenseLayer<double>;

}  // namespace fedclust::nn
