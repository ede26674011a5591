#ifndef SPANPROBE_SCALAR_MIX_H_
#define SPANPROBE_SCALAR_MIX_H_

#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace spanprobe {

// One T x d matrix per encoder layer, embedding layer first.
using LayerStack = std::vector<Eigen::MatrixXd>;

enum class MixMode {
  kLearned,  // softmax(logits)
  kUniform,  // 1 / (L + 1), logits ignored
  kFixed,    // caller-supplied weights, logits ignored
};

// Accepts learned | uniform.
MixMode ParseMixMode(std::string_view name);
std::string_view MixModeName(MixMode mode);

struct MixCache {
  Eigen::VectorXd weights;
};

struct MixGradient {
  Eigen::VectorXd logits;
  LayerStack layers;  // empty unless requested
};

// Convex combination of encoder layers. The logits are owned by the caller
// so that they can be optimized alongside the other probe parameters.
class ScalarMix {
 public:
  explicit ScalarMix(int layer_count, MixMode mode = MixMode::kLearned);
  static ScalarMix WithFixedWeights(Eigen::VectorXd weights);

  int layer_count() const { return layer_count_; }
  MixMode mode() const { return mode_; }

  Eigen::VectorXd Weights(const Eigen::VectorXd& logits) const;

  Eigen::MatrixXd Forward(const LayerStack& layers, const Eigen::VectorXd& logits,
                          MixCache* cache = nullptr) const;

  MixGradient Backward(const LayerStack& layers, const MixCache& cache,
                       const Eigen::Ref<const Eigen::MatrixXd>& upstream,
                       bool want_layer_grads = true) const;

 private:
  int layer_count_;
  MixMode mode_;
  Eigen::VectorXd fixed_weights_;
};

}  // namespace spanprobe

#endif  // SPANPROBE_SCALAR_MIX_H_
