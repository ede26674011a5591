#ifndef SPANPROBE_PROBE_NETWORK_H_
#define SPANPROBE_PROBE_NETWORK_H_

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include <Eigen/Dense>

#include "spanprobe/data_model.h"
#include "spanprobe/embedding_store.h"
#include "spanprobe/scalar_mix.h"
#include "spanprobe/span_repr.h"

namespace spanprobe {

struct ProbeConfig {
  Arity arity = Arity::kOneSpan;
  // One projection per span (SRL); otherwise both spans share one.
  bool separate_projections = false;
  int label_count = 2;
  int input_dim = 0;    // encoder width
  int layer_count = 0;  // encoder layers + embedding layer
  int proj_dim = 256;
  int hidden_dim = 256;
  double dropout = 0.3;
  double norm_eps = 1e-5;
  SpanMethod method = SpanMethod::kAvg;
  MixMode mix_mode = MixMode::kLearned;
  std::optional<CoherentSplit> coherent_split;

  int span_count() const { return static_cast<int>(arity); }
  int projection_count() const {
    return separate_projections && arity == Arity::kTwoSpan ? 2 : 1;
  }
  int span_output_dim() const { return OutputDim(method, proj_dim, coherent_split); }
  int mlp_input_dim() const { return span_output_dim() * span_count(); }

  // Throws ConfigError on inconsistent settings.
  void Validate() const;
};

struct Projection {
  Eigen::MatrixXd weight;  // proj_dim x input_dim
  Eigen::VectorXd bias;
};

struct ProbeParams {
  Eigen::VectorXd mix_logits;
  std::vector<Projection> projections;
  Eigen::VectorXd attn_vector;  // empty unless the method is attn
  Eigen::MatrixXd hidden_weight;
  Eigen::VectorXd hidden_bias;
  Eigen::VectorXd norm_gain;
  Eigen::VectorXd norm_offset;
  Eigen::MatrixXd output_weight;
  Eigen::VectorXd output_bias;

  // All tensors zero, shaped for `config`. Used for gradients and moments.
  static ProbeParams Zeros(const ProbeConfig& config);
  // Glorot-uniform weights, zero biases, unit gain, zero attention vector.
  static ProbeParams Initialize(const ProbeConfig& config, std::uint64_t seed);

  std::size_t ParameterCount() const;
};

// Calls f(name, tensor_a, tensor_b, ...) for every named tensor, in a fixed
// order, across parameter sets of identical shape.
template <typename F, typename First, typename... Rest>
void ForEachTensor(F&& f, First& first, Rest&... rest) {
  f(std::string("mix.logits"), first.mix_logits, rest.mix_logits...);
  for (std::size_t p = 0; p < first.projections.size(); ++p) {
    const std::string prefix = "proj" + std::to_string(p);
    f(prefix + ".weight", first.projections[p].weight,
      rest.projections[p].weight...);
    f(prefix + ".bias", first.projections[p].bias, rest.projections[p].bias...);
  }
  if (first.attn_vector.size() > 0) {
    f(std::string("span.attn_vector"), first.attn_vector, rest.attn_vector...);
  }
  f(std::string("mlp.hidden.weight"), first.hidden_weight, rest.hidden_weight...);
  f(std::string("mlp.hidden.bias"), first.hidden_bias, rest.hidden_bias...);
  f(std::string("mlp.norm.gain"), first.norm_gain, rest.norm_gain...);
  f(std::string("mlp.norm.offset"), first.norm_offset, rest.norm_offset...);
  f(std::string("mlp.output.weight"), first.output_weight, rest.output_weight...);
  f(std::string("mlp.output.bias"), first.output_bias, rest.output_bias...);
}

// Converts stored single-precision layers to the double-precision stack.
LayerStack ToLayerStack(const LayeredEmbeddings& sentence);

struct SubtokenTarget {
  SubtokenSpan span1;
  std::optional<SubtokenSpan> span2;
};

// Identifies the dropout mask of one target within one training step.
struct DropoutKey {
  std::uint64_t seed = 0;
  std::uint64_t step = 0;
  std::uint64_t slot = 0;
};

// Per-sentence work shared by all targets of that sentence.
struct SentenceEncoding {
  MixCache mix_cache;
  Eigen::MatrixXd mixed;                   // T x input_dim
  std::vector<Eigen::MatrixXd> projected;  // per projection, T x proj_dim
};

struct TargetCache {
  std::vector<PoolResult> pooled;
  Eigen::VectorXd mlp_input;
  Eigen::VectorXd hidden;      // tanh output
  Eigen::VectorXd normalized;  // layer norm output before gain/offset
  double inv_std = 0.0;
  Eigen::VectorXd dropout_mask;  // empty in eval mode
  Eigen::VectorXd dropped;       // second linear layer input
  Eigen::VectorXd probabilities;
};

struct Prediction {
  Eigen::VectorXd probabilities;
  std::vector<int> decided;  // labels with probability > threshold
  int argmax = 0;
};

Prediction MakePrediction(const Eigen::VectorXd& probabilities,
                          double threshold = 0.5);

// The probing classifier: mix -> projection -> span pooling -> concatenation
// -> linear -> tanh -> layer norm -> dropout -> linear -> sigmoid.
class ProbeNetwork {
 public:
  explicit ProbeNetwork(ProbeConfig config);

  const ProbeConfig& config() const { return config_; }
  const SpanPooler& pooler() const { return pooler_; }
  const ScalarMix& mix() const { return mix_; }

  // Throws ShapeError unless params match the configuration.
  void CheckShapes(const ProbeParams& params) const;

  SentenceEncoding Encode(const ProbeParams& params,
                          const LayerStack& layers) const;

  // Dropout is applied only when `dropout` is set (training mode).
  TargetCache ForwardTarget(const ProbeParams& params,
                            const SentenceEncoding& encoding,
                            const SubtokenTarget& target,
                            const std::optional<DropoutKey>& dropout) const;

  // Backpropagates dL/dlogits for one target. Parameter gradients are added
  // to `grads`; gradients w.r.t. the projected tokens are added to
  // `projected_grads` (one T x proj_dim matrix per projection).
  void BackwardTarget(const ProbeParams& params, const SentenceEncoding& encoding,
                      const SubtokenTarget& target, const TargetCache& cache,
                      const Eigen::VectorXd& logit_grad, ProbeParams* grads,
                      std::vector<Eigen::MatrixXd>* projected_grads) const;

  // Finishes a sentence: projection and mix gradients.
  void BackwardSentence(const ProbeParams& params, const LayerStack& layers,
                        const SentenceEncoding& encoding,
                        const std::vector<Eigen::MatrixXd>& projected_grads,
                        ProbeParams* grads) const;

  // Eval-mode forward for a single target.
  Prediction Predict(const ProbeParams& params, const LayerStack& layers,
                     const SubtokenTarget& target, double threshold = 0.5) const;

 private:
  void CheckTarget(const SentenceEncoding& encoding,
                   const SubtokenTarget& target) const;
  int ProjectionFor(int span_index) const;

  ProbeConfig config_;
  SpanPooler pooler_;
  ScalarMix mix_;
};

// Sum over labels of binary cross-entropy; probabilities clamped to
// [1e-12, 1 - 1e-12].
double BceLoss(const Eigen::VectorXd& probabilities, const Eigen::VectorXd& gold);

Eigen::VectorXd GoldIndicator(std::span<const int> gold_labels, int label_count);

struct LabeledTarget {
  SubtokenTarget spans;
  std::vector<int> gold;  // label indices
};

struct SentenceBatch {
  const LayerStack* layers = nullptr;
  std::vector<LabeledTarget> targets;
};

// Mean per-target loss over all targets in `sentences`. When `grads` is
// non-null it receives the gradient of that mean (it is overwritten). With a
// dropout key, slots are assigned in iteration order starting from key.slot.
double BatchLossAndGradient(const ProbeNetwork& network, const ProbeParams& params,
                            std::span<const SentenceBatch> sentences,
                            const std::optional<DropoutKey>& dropout,
                            ProbeParams* grads);

}  // namespace spanprobe

#endif  // SPANPROBE_PROBE_NETWORK_H_
