#include "spanprobe/gradcheck.h"

#include <algorithm>
#include <cmath>
#include <random>

#include "spanprobe/errors.h"
#include "spanprobe/probe_network.h"
#include "spanprobe/random.h"

namespace spanprobe {
namespace {

struct Instance {
  std::vector<LayerStack> layers;
  std::vector<SentenceBatch> batch;
  ProbeParams params;
};

void Jitter(Eigen::Ref<Eigen::MatrixXd> m, double scale, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-scale, scale);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] += u(rng);
}

SubtokenSpan RandomSpan(int tokens, std::mt19937_64& rng) {
  const int start = std::uniform_int_distribution<int>(0, tokens - 1)(rng);
  const int end = std::uniform_int_distribution<int>(start + 1, tokens)(rng);
  return {start, end};
}

Instance MakeInstance(const ProbeConfig& probe, const GradcheckConfig& config,
                      std::mt19937_64& rng) {
  Instance inst;
  inst.params = ProbeParams::Initialize(probe, rng());
  ForEachTensor([&](const std::string&, auto& t) { Jitter(t, 0.3, rng); }, inst.params);

  std::uniform_real_distribution<double> value(-1.0, 1.0);
  std::uniform_int_distribution<int> token_count(config.min_tokens, config.max_tokens);
  const int sentences = 2;
  inst.layers.resize(sentences);
  for (int s = 0; s < sentences; ++s) {
    const int tokens = token_count(rng);
    for (int l = 0; l < probe.layer_count; ++l) {
      Eigen::MatrixXd m(tokens, probe.input_dim);
      for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = value(rng);
      inst.layers[s].push_back(std::move(m));
    }
  }
  for (int s = 0; s < sentences; ++s) {
    const int tokens = static_cast<int>(inst.layers[s][0].rows());
    SentenceBatch batch{&inst.layers[s], {}};
    const int targets = s == 0 ? 2 : 1;
    for (int k = 0; k < targets; ++k) {
      LabeledTarget target;
      target.spans.span1 = RandomSpan(tokens, rng);
      if (probe.arity == Arity::kTwoSpan) target.spans.span2 = RandomSpan(tokens, rng);
      for (int label = 0; label < probe.label_count; ++label) {
        if (std::bernoulli_distribution(0.5)(rng)) target.gold.push_back(label);
      }
      batch.targets.push_back(std::move(target));
    }
    inst.batch.push_back(std::move(batch));
  }
  return inst;
}

}  // namespace

double RelativeError(double analytic, double numeric, double floor) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / scale;
}

GradcheckReport RunGradcheck(const GradcheckConfig& config) {
  if (config.instances < 1 || config.d_model < 1 || config.layer_count < 1 ||
      config.label_count < 1 || config.min_tokens < 1 ||
      config.max_tokens < config.min_tokens || !(config.step > 0.0)) {
    throw ConfigError("invalid gradcheck configuration");
  }
  std::vector<SpanMethod> methods = config.methods;
  if (methods.empty()) {
    const auto all = AllSpanMethods();
    methods.assign(all.begin(), all.end());
  }
  struct Shape {
    Arity arity;
    bool separate;
  };
  const Shape shapes[] = {{Arity::kOneSpan, false},
                          {Arity::kTwoSpan, false},
                          {Arity::kTwoSpan, true}};

  GradcheckReport report;
  for (SpanMethod method : methods) {
    for (const Shape& shape : shapes) {
      ProbeConfig probe;
      probe.arity = shape.arity;
      probe.separate_projections = shape.separate;
      probe.label_count = config.label_count;
      probe.input_dim = config.d_model;
      probe.layer_count = config.layer_count;
      probe.proj_dim = config.proj_dim;
      probe.hidden_dim = config.hidden_dim;
      probe.method = method;
      probe.Validate();
      const ProbeNetwork network(probe);

      GradcheckCase result;
      result.method = method;
      result.arity = shape.arity;
      result.separate_projections = shape.separate;
      std::mt19937_64 rng(HashCounters({config.seed, static_cast<std::uint64_t>(method),
                                        static_cast<std::uint64_t>(shape.arity),
                                        shape.separate ? 1u : 0u}));
      for (int i = 0; i < config.instances; ++i) {
        Instance inst = MakeInstance(probe, config, rng);
        ProbeParams analytic;
        BatchLossAndGradient(network, inst.params, inst.batch, std::nullopt, &analytic);

        ProbeParams probe_params = inst.params;
        ForEachTensor(
            [&](const std::string& name, auto& p, const auto& g) {
              for (Eigen::Index k = 0; k < p.size(); ++k) {
                const double saved = p.data()[k];
                p.data()[k] = saved + config.step;
                const double up = BatchLossAndGradient(network, probe_params, inst.batch,
                                                       std::nullopt, nullptr);
                p.data()[k] = saved - config.step;
                const double down = BatchLossAndGradient(network, probe_params,
                                                         inst.batch, std::nullopt, nullptr);
                p.data()[k] = saved;
                const double numeric = (up - down) / (2.0 * config.step);
                const double err = RelativeError(g.data()[k], numeric, config.floor);
                ++result.coordinates;
                if (err > result.max_rel_error || result.worst_tensor.empty()) {
                  result.max_rel_error = std::max(result.max_rel_error, err);
                  result.worst_tensor = name;
                }
              }
            },
            probe_params, analytic);
      }
      report.max_rel_error = std::max(report.max_rel_error, result.max_rel_error);
      report.cases.push_back(std::move(result));
    }
  }
  return report;
}

}  // namespace spanprobe
