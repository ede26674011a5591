#ifndef SPANPROBE_SPAN_REPR_H_
#define SPANPROBE_SPAN_REPR_H_

#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace spanprobe {

enum class SpanMethod { kAvg, kAttn, kMax, kEndpoint, kDiffSum, kCoherent };

std::span<const SpanMethod> AllSpanMethods();
std::string_view MethodName(SpanMethod method);
// Accepts avg | attn | max | endpoint | diffsum | coherent.
SpanMethod ParseSpanMethod(std::string_view name);
// endpoint, diffsum and coherent look only at the span boundaries.
bool IsBoundaryMethod(SpanMethod method);

// Coherent splits each endpoint into [a; a; b; b] with 2a + 2b = dim.
struct CoherentSplit {
  int a = 0;
  int b = 0;

  bool operator==(const CoherentSplit&) const = default;
};

// a = round(dim * 480 / 1024), b = (dim - 2a) / 2. Throws ConfigError when
// dim is odd or b < 1.
CoherentSplit DefaultCoherentSplit(int dim);

int OutputDim(SpanMethod method, int dim,
              std::optional<CoherentSplit> split = std::nullopt);

// Backward data recorded by SpanPooler::Forward.
struct PoolCache {
  SpanMethod method = SpanMethod::kAvg;
  int length = 0;
  Eigen::VectorXd attn_weights;  // softmax weights, attn only
  std::vector<int> argmax;       // per output dimension, max only
};

struct PoolResult {
  Eigen::VectorXd value;
  PoolCache cache;
};

struct PoolGradient {
  Eigen::MatrixXd tokens;        // same shape as the pooled tokens
  Eigen::VectorXd attn_vector;   // empty unless attn
};

// Pools the rows of an n x dim token matrix into one vector. The attention
// vector is a trainable parameter owned by the caller; it is ignored by every
// method except attn.
class SpanPooler {
 public:
  SpanPooler(SpanMethod method, int dim,
             std::optional<CoherentSplit> split = std::nullopt);

  SpanMethod method() const { return method_; }
  int input_dim() const { return dim_; }
  int output_dim() const { return output_dim_; }
  const CoherentSplit& split() const { return split_; }

  PoolResult Forward(const Eigen::Ref<const Eigen::MatrixXd>& tokens,
                     const Eigen::VectorXd& attn_vector) const;

  PoolGradient Backward(const Eigen::Ref<const Eigen::MatrixXd>& tokens,
                        const Eigen::VectorXd& attn_vector,
                        const PoolCache& cache,
                        const Eigen::Ref<const Eigen::VectorXd>& upstream) const;

 private:
  SpanMethod method_;
  int dim_;
  CoherentSplit split_;
  int output_dim_;
};

}  // namespace spanprobe

#endif  // SPANPROBE_SPAN_REPR_H_
