#include "spanprobe/scalar_mix.h"

#include <string>

#include "spanprobe/errors.h"

namespace spanprobe {

MixMode ParseMixMode(std::string_view name) {
  if (name == "learned") return MixMode::kLearned;
  if (name == "uniform") return MixMode::kUniform;
  throw ConfigError("unknown mix mode '" + std::string(name) +
                    "' (expected learned | uniform)");
}

std::string_view MixModeName(MixMode mode) {
  switch (mode) {
    case MixMode::kLearned: return "learned";
    case MixMode::kUniform: return "uniform";
    case MixMode::kFixed: return "fixed";
  }
  return "unknown";
}

ScalarMix::ScalarMix(int layer_count, MixMode mode)
    : layer_count_(layer_count), mode_(mode) {
  if (layer_count < 1) throw ConfigError("scalar mix needs at least one layer");
  if (mode == MixMode::kFixed) {
    throw ConfigError("fixed mixing weights must be given explicitly");
  }
}

ScalarMix ScalarMix::WithFixedWeights(Eigen::VectorXd weights) {
  ScalarMix mix(static_cast<int>(weights.size()), MixMode::kLearned);
  mix.mode_ = MixMode::kFixed;
  mix.fixed_weights_ = std::move(weights);
  return mix;
}

Eigen::VectorXd ScalarMix::Weights(const Eigen::VectorXd& logits) const {
  switch (mode_) {
    case MixMode::kUniform:
      return Eigen::VectorXd::Constant(layer_count_, 1.0 / layer_count_);
    case MixMode::kFixed:
      return fixed_weights_;
    case MixMode::kLearned:
      break;
  }
  if (logits.size() != layer_count_) {
    throw ShapeError("mix logits have length " + std::to_string(logits.size()) +
                     ", expected " + std::to_string(layer_count_));
  }
  const Eigen::VectorXd shifted = (logits.array() - logits.maxCoeff()).exp();
  return shifted / shifted.sum();
}

Eigen::MatrixXd ScalarMix::Forward(const LayerStack& layers,
                                   const Eigen::VectorXd& logits,
                                   MixCache* cache) const {
  if (static_cast<int>(layers.size()) != layer_count_) {
    throw ShapeError("expected " + std::to_string(layer_count_) +
                     " layers, got " + std::to_string(layers.size()));
  }
  for (const Eigen::MatrixXd& layer : layers) {
    if (layer.rows() != layers[0].rows() || layer.cols() != layers[0].cols()) {
      throw ShapeError("layer shapes differ");
    }
  }
  Eigen::VectorXd weights = Weights(logits);
  Eigen::MatrixXd mixed = Eigen::MatrixXd::Zero(layers[0].rows(), layers[0].cols());
  for (int l = 0; l < layer_count_; ++l) mixed += weights[l] * layers[l];
  if (cache != nullptr) cache->weights = std::move(weights);
  return mixed;
}

MixGradient ScalarMix::Backward(const LayerStack& layers, const MixCache& cache,
                                const Eigen::Ref<const Eigen::MatrixXd>& upstream,
                                bool want_layer_grads) const {
  if (cache.weights.size() != layer_count_ ||
      static_cast<int>(layers.size()) != layer_count_) {
    throw ShapeError("mix cache does not match this scalar mix");
  }
  const Eigen::VectorXd& weights = cache.weights;
  MixGradient grad;
  grad.logits = Eigen::VectorXd::Zero(layer_count_);
  if (mode_ == MixMode::kLearned) {
    Eigen::VectorXd weight_grads(layer_count_);
    for (int l = 0; l < layer_count_; ++l) {
      weight_grads[l] = (upstream.array() * layers[l].array()).sum();
    }
    const double expected = weights.dot(weight_grads);
    grad.logits = weights.array() * (weight_grads.array() - expected);
  }
  if (want_layer_grads) {
    grad.layers.reserve(layer_count_);
    for (int l = 0; l < layer_count_; ++l) {
      grad.layers.push_back(weights[l] * upstream);
    }
  }
  return grad;
}

}  // namespace spanprobe
