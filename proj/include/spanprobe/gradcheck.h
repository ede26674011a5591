#ifndef SPANPROBE_GRADCHECK_H_
#define SPANPROBE_GRADCHECK_H_

#include <cstdint>
#include <string>
#include <vector>

#include "spanprobe/data_model.h"
#include "spanprobe/span_repr.h"

namespace spanprobe {

struct GradcheckConfig {
  std::uint64_t seed = 0;
  int instances = 20;
  int d_model = 8;
  int layer_count = 2;
  int label_count = 2;
  int proj_dim = 32;
  int hidden_dim = 8;
  int min_tokens = 3;
  int max_tokens = 6;
  double step = 1e-5;
  // Denominator floor: coordinates whose gradients are both below it are
  // compared on an absolute scale.
  double floor = 1e-4;
  std::vector<SpanMethod> methods;  // empty means all six
};

struct GradcheckCase {
  SpanMethod method = SpanMethod::kAvg;
  Arity arity = Arity::kOneSpan;
  bool separate_projections = false;
  double max_rel_error = 0.0;
  std::string worst_tensor;
  long long coordinates = 0;
};

struct GradcheckReport {
  std::vector<GradcheckCase> cases;
  double max_rel_error = 0.0;
};

double RelativeError(double analytic, double numeric, double floor);

// Compares BatchLossAndGradient against central differences of the loss on
// random sentences, parameters and targets, dropout off. Covers each method
// as a one-span probe, a two-span probe with a shared projection and a
// two-span probe with separate projections.
GradcheckReport RunGradcheck(const GradcheckConfig& config);

}  // namespace spanprobe

#endif  // SPANPROBE_GRADCHECK_H_
