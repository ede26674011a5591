#include "spanprobe/span_repr.h"

#include <array>
#include <cmath>
#include <string>

#include "spanprobe/errors.h"

namespace spanprobe {
namespace {

constexpr std::array<SpanMethod, 6> kMethods = {
    SpanMethod::kAvg,      SpanMethod::kAttn,    SpanMethod::kMax,
    SpanMethod::kEndpoint, SpanMethod::kDiffSum, SpanMethod::kCoherent};

// Sum of weights[k] * tokens.row(k), accumulated in row order. avg and attn
// share this so that uniform attention reproduces avg bit for bit.
Eigen::VectorXd WeightedRowSum(const Eigen::Ref<const Eigen::MatrixXd>& tokens,
                               const Eigen::VectorXd& weights) {
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(tokens.cols());
  for (Eigen::Index k = 0; k < tokens.rows(); ++k) {
    acc += weights[k] * tokens.row(k).transpose();
  }
  return acc;
}

double SumInOrder(const Eigen::VectorXd& values) {
  double total = 0.0;
  for (Eigen::Index k = 0; k < values.size(); ++k) total += values[k];
  return total;
}

}  // namespace

std::span<const SpanMethod> AllSpanMethods() { return kMethods; }

std::string_view MethodName(SpanMethod method) {
  switch (method) {
    case SpanMethod::kAvg: return "avg";
    case SpanMethod::kAttn: return "attn";
    case SpanMethod::kMax: return "max";
    case SpanMethod::kEndpoint: return "endpoint";
    case SpanMethod::kDiffSum: return "diffsum";
    case SpanMethod::kCoherent: return "coherent";
  }
  return "unknown";
}

SpanMethod ParseSpanMethod(std::string_view name) {
  for (SpanMethod method : kMethods) {
    if (MethodName(method) == name) return method;
  }
  throw ConfigError("unknown span method '" + std::string(name) +
                    "' (expected avg | attn | max | endpoint | diffsum | coherent)");
}

bool IsBoundaryMethod(SpanMethod method) {
  return method == SpanMethod::kEndpoint || method == SpanMethod::kDiffSum ||
         method == SpanMethod::kCoherent;
}

CoherentSplit DefaultCoherentSplit(int dim) {
  if (dim < 4 || dim % 2 != 0) {
    throw ConfigError("coherent pooling needs an even dimension >= 4, got " +
                      std::to_string(dim));
  }
  const int a = static_cast<int>(std::lround(dim * 480.0 / 1024.0));
  const int b = (dim - 2 * a) / 2;
  if (b < 1) {
    throw ConfigError("coherent split for dimension " + std::to_string(dim) +
                      " leaves no room for the coherence parts");
  }
  return {a, b};
}

int OutputDim(SpanMethod method, int dim, std::optional<CoherentSplit> split) {
  switch (method) {
    case SpanMethod::kAvg:
    case SpanMethod::kAttn:
    case SpanMethod::kMax:
      return dim;
    case SpanMethod::kEndpoint:
    case SpanMethod::kDiffSum:
      return 2 * dim;
    case SpanMethod::kCoherent: {
      const CoherentSplit s = split ? *split : DefaultCoherentSplit(dim);
      if (s.a < 1 || s.b < 1 || 2 * s.a + 2 * s.b != dim) {
        throw ConfigError("invalid coherent split a=" + std::to_string(s.a) +
                          " b=" + std::to_string(s.b) + " for dimension " +
                          std::to_string(dim));
      }
      return 2 * s.a + 1;
    }
  }
  return dim;
}

SpanPooler::SpanPooler(SpanMethod method, int dim,
                       std::optional<CoherentSplit> split)
    : method_(method), dim_(dim) {
  if (dim < 1) throw ConfigError("pooling dimension must be positive");
  if (method == SpanMethod::kCoherent) {
    split_ = split ? *split : DefaultCoherentSplit(dim);
  }
  output_dim_ = OutputDim(method, dim, split_);
}

PoolResult SpanPooler::Forward(const Eigen::Ref<const Eigen::MatrixXd>& tokens,
                               const Eigen::VectorXd& attn_vector) const {
  const Eigen::Index n = tokens.rows();
  if (n < 1) throw ShapeError("cannot pool an empty span");
  if (tokens.cols() != dim_) {
    throw ShapeError("token dimension " + std::to_string(tokens.cols()) +
                     " does not match pooler dimension " + std::to_string(dim_));
  }

  PoolResult result;
  result.cache.method = method_;
  result.cache.length = static_cast<int>(n);
  const auto first = tokens.row(0).transpose();
  const auto last = tokens.row(n - 1).transpose();

  switch (method_) {
    case SpanMethod::kAvg: {
      const Eigen::VectorXd ones = Eigen::VectorXd::Ones(n);
      result.value = WeightedRowSum(tokens, ones) / SumInOrder(ones);
      break;
    }
    case SpanMethod::kAttn: {
      if (attn_vector.size() != dim_) {
        throw ShapeError("attention vector has length " +
                         std::to_string(attn_vector.size()) + ", expected " +
                         std::to_string(dim_));
      }
      const Eigen::VectorXd logits = tokens * attn_vector;
      const Eigen::VectorXd weights = (logits.array() - logits.maxCoeff()).exp();
      const double total = SumInOrder(weights);
      result.value = WeightedRowSum(tokens, weights) / total;
      result.cache.attn_weights = weights / total;
      break;
    }
    case SpanMethod::kMax: {
      result.value.resize(dim_);
      result.cache.argmax.resize(dim_);
      for (int k = 0; k < dim_; ++k) {
        int best = 0;
        for (Eigen::Index t = 1; t < n; ++t) {
          if (tokens(t, k) > tokens(best, k)) best = static_cast<int>(t);
        }
        result.cache.argmax[k] = best;
        result.value[k] = tokens(best, k);
      }
      break;
    }
    case SpanMethod::kEndpoint:
      result.value.resize(2 * dim_);
      result.value << first, last;
      break;
    case SpanMethod::kDiffSum:
      result.value.resize(2 * dim_);
      result.value << last + first, last - first;
      break;
    case SpanMethod::kCoherent: {
      const int a = split_.a;
      const int b = split_.b;
      result.value.resize(2 * a + 1);
      result.value.head(a) = first.head(a);
      result.value.segment(a, a) = last.segment(a, a);
      result.value[2 * a] = first.segment(2 * a, b).dot(last.segment(2 * a + b, b));
      break;
    }
  }
  return result;
}

PoolGradient SpanPooler::Backward(
    const Eigen::Ref<const Eigen::MatrixXd>& tokens,
    const Eigen::VectorXd& attn_vector, const PoolCache& cache,
    const Eigen::Ref<const Eigen::VectorXd>& upstream) const {
  const Eigen::Index n = tokens.rows();
  if (cache.method != method_ || cache.length != n) {
    throw ShapeError("pool cache does not match this pooler or span");
  }
  if (upstream.size() != output_dim_) {
    throw ShapeError("upstream gradient has length " +
                     std::to_string(upstream.size()) + ", expected " +
                     std::to_string(output_dim_));
  }

  PoolGradient grad;
  grad.tokens = Eigen::MatrixXd::Zero(n, dim_);

  switch (method_) {
    case SpanMethod::kAvg:
      grad.tokens.rowwise() = (upstream / static_cast<double>(n)).transpose();
      break;
    case SpanMethod::kAttn: {
      const Eigen::VectorXd& weights = cache.attn_weights;
      // dL/dlogit_k = a_k (g.e_k - g.s) where s is the pooled value.
      const Eigen::VectorXd projections = tokens * upstream;
      const double pooled = weights.dot(projections);
      const Eigen::VectorXd dlogits =
          weights.array() * (projections.array() - pooled);
      grad.tokens = weights * upstream.transpose() + dlogits * attn_vector.transpose();
      grad.attn_vector = tokens.transpose() * dlogits;
      break;
    }
    case SpanMethod::kMax:
      for (int k = 0; k < dim_; ++k) {
        grad.tokens(cache.argmax[k], k) += upstream[k];
      }
      break;
    case SpanMethod::kEndpoint:
      grad.tokens.row(0) += upstream.head(dim_).transpose();
      grad.tokens.row(n - 1) += upstream.tail(dim_).transpose();
      break;
    case SpanMethod::kDiffSum: {
      const auto sum_grad = upstream.head(dim_);
      const auto diff_grad = upstream.tail(dim_);
      grad.tokens.row(0) += (sum_grad - diff_grad).transpose();
      grad.tokens.row(n - 1) += (sum_grad + diff_grad).transpose();
      break;
    }
    case SpanMethod::kCoherent: {
      const int a = split_.a;
      const int b = split_.b;
      const double coherence = upstream[2 * a];
      grad.tokens.row(0).head(a) += upstream.head(a).transpose();
      grad.tokens.row(n - 1).segment(a, a) += upstream.segment(a, a).transpose();
      grad.tokens.row(0).segment(2 * a, b) +=
          coherence * tokens.row(n - 1).segment(2 * a + b, b);
      grad.tokens.row(n - 1).segment(2 * a + b, b) +=
          coherence * tokens.row(0).segment(2 * a, b);
      break;
    }
  }
  return grad;
}

}  // namespace spanprobe
