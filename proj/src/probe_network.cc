#include "spanprobe/probe_network.h"

#include <algorithm>
#include <cmath>
#include <random>

#include "spanprobe/errors.h"
#include "spanprobe/random.h"

namespace spanprobe {
namespace {

constexpr double kProbabilityFloor = 1e-12;

Eigen::MatrixXd GlorotUniform(int rows, int cols, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / (rows + cols));
  std::uniform_real_distribution<double> dist(-limit, limit);
  Eigen::MatrixXd m(rows, cols);
  // Row-major fill order so the draw sequence matches the checkpoint layout.
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) m(r, c) = dist(rng);
  }
  return m;
}

Eigen::VectorXd Sigmoid(const Eigen::VectorXd& z) {
  return (1.0 + (-z.array()).exp()).inverse().matrix();
}

template <typename A, typename B>
void RequireShape(const A& actual, const B& expected_rows, Eigen::Index cols,
                  const std::string& name) {
  if (actual.rows() != expected_rows || actual.cols() != cols) {
    throw ShapeError("parameter " + name + " has shape " +
                     std::to_string(actual.rows()) + "x" +
                     std::to_string(actual.cols()) + ", expected " +
                     std::to_string(expected_rows) + "x" + std::to_string(cols));
  }
}

}  // namespace

void ProbeConfig::Validate() const {
  if (label_count < 1) throw ConfigError("label_count must be positive");
  if (input_dim < 1) throw ConfigError("input_dim must be positive");
  if (layer_count < 1) throw ConfigError("layer_count must be positive");
  if (proj_dim < 1) throw ConfigError("proj_dim must be positive");
  if (hidden_dim < 1) throw ConfigError("hidden_dim must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) {
    throw ConfigError("dropout must be in [0, 1)");
  }
  if (!(norm_eps >= 0.0)) throw ConfigError("norm_eps must be non-negative");
  if (mix_mode == MixMode::kFixed) {
    throw ConfigError("probe mix mode must be learned or uniform");
  }
  // Throws for impossible coherent splits.
  (void)span_output_dim();
}

ProbeParams ProbeParams::Zeros(const ProbeConfig& config) {
  ProbeParams p;
  p.mix_logits = Eigen::VectorXd::Zero(config.layer_count);
  p.projections.resize(config.projection_count());
  for (Projection& proj : p.projections) {
    proj.weight = Eigen::MatrixXd::Zero(config.proj_dim, config.input_dim);
    proj.bias = Eigen::VectorXd::Zero(config.proj_dim);
  }
  if (config.method == SpanMethod::kAttn) {
    p.attn_vector = Eigen::VectorXd::Zero(config.proj_dim);
  }
  p.hidden_weight = Eigen::MatrixXd::Zero(config.hidden_dim, config.mlp_input_dim());
  p.hidden_bias = Eigen::VectorXd::Zero(config.hidden_dim);
  p.norm_gain = Eigen::VectorXd::Zero(config.hidden_dim);
  p.norm_offset = Eigen::VectorXd::Zero(config.hidden_dim);
  p.output_weight = Eigen::MatrixXd::Zero(config.label_count, config.hidden_dim);
  p.output_bias = Eigen::VectorXd::Zero(config.label_count);
  return p;
}

ProbeParams ProbeParams::Initialize(const ProbeConfig& config, std::uint64_t seed) {
  config.Validate();
  ProbeParams p = Zeros(config);
  std::mt19937_64 rng(seed);
  for (Projection& proj : p.projections) {
    proj.weight = GlorotUniform(config.proj_dim, config.input_dim, rng);
  }
  p.hidden_weight = GlorotUniform(config.hidden_dim, config.mlp_input_dim(), rng);
  p.norm_gain.setOnes();
  p.output_weight = GlorotUniform(config.label_count, config.hidden_dim, rng);
  return p;
}

std::size_t ProbeParams::ParameterCount() const {
  std::size_t count = 0;
  ForEachTensor([&](const std::string&, const auto& t) { count += t.size(); },
                *this);
  return count;
}

LayerStack ToLayerStack(const LayeredEmbeddings& sentence) {
  LayerStack layers(sentence.layer_count);
  for (std::uint32_t l = 0; l < sentence.layer_count; ++l) {
    Eigen::MatrixXd& m = layers[l];
    m.resize(sentence.subtoken_count, sentence.dim);
    for (std::uint32_t t = 0; t < sentence.subtoken_count; ++t) {
      for (std::uint32_t k = 0; k < sentence.dim; ++k) {
        m(t, k) = sentence.at(l, t, k);
      }
    }
  }
  return layers;
}

Prediction MakePrediction(const Eigen::VectorXd& probabilities, double threshold) {
  Prediction prediction;
  prediction.probabilities = probabilities;
  for (Eigen::Index i = 0; i < probabilities.size(); ++i) {
    if (probabilities[i] > threshold) prediction.decided.push_back(static_cast<int>(i));
  }
  Eigen::Index best = 0;
  if (probabilities.size() > 0) probabilities.maxCoeff(&best);
  prediction.argmax = static_cast<int>(best);
  return prediction;
}

ProbeNetwork::ProbeNetwork(ProbeConfig config)
    : config_((config.Validate(), std::move(config))),
      pooler_(config_.method, config_.proj_dim, config_.coherent_split),
      mix_(config_.layer_count, config_.mix_mode) {}

void ProbeNetwork::CheckShapes(const ProbeParams& params) const {
  const ProbeConfig& c = config_;
  RequireShape(params.mix_logits, c.layer_count, 1, "mix.logits");
  if (static_cast<int>(params.projections.size()) != c.projection_count()) {
    throw ShapeError("expected " + std::to_string(c.projection_count()) +
                     " projections, got " +
                     std::to_string(params.projections.size()));
  }
  for (const Projection& proj : params.projections) {
    RequireShape(proj.weight, c.proj_dim, c.input_dim, "proj.weight");
    RequireShape(proj.bias, c.proj_dim, 1, "proj.bias");
  }
  RequireShape(params.attn_vector, c.method == SpanMethod::kAttn ? c.proj_dim : 0,
               1, "span.attn_vector");
  RequireShape(params.hidden_weight, c.hidden_dim, c.mlp_input_dim(),
               "mlp.hidden.weight");
  RequireShape(params.hidden_bias, c.hidden_dim, 1, "mlp.hidden.bias");
  RequireShape(params.norm_gain, c.hidden_dim, 1, "mlp.norm.gain");
  RequireShape(params.norm_offset, c.hidden_dim, 1, "mlp.norm.offset");
  RequireShape(params.output_weight, c.label_count, c.hidden_dim,
               "mlp.output.weight");
  RequireShape(params.output_bias, c.label_count, 1, "mlp.output.bias");
}

SentenceEncoding ProbeNetwork::Encode(const ProbeParams& params,
                                      const LayerStack& layers) const {
  if (!layers.empty() && layers[0].cols() != config_.input_dim) {
    throw ShapeError("sentence embeddings have width " +
                     std::to_string(layers[0].cols()) + ", probe expects " +
                     std::to_string(config_.input_dim));
  }
  SentenceEncoding encoding;
  encoding.mixed = mix_.Forward(layers, params.mix_logits, &encoding.mix_cache);
  encoding.projected.reserve(params.projections.size());
  for (const Projection& proj : params.projections) {
    Eigen::MatrixXd projected = encoding.mixed * proj.weight.transpose();
    projected.rowwise() += proj.bias.transpose();
    encoding.projected.push_back(std::move(projected));
  }
  return encoding;
}

int ProbeNetwork::ProjectionFor(int span_index) const {
  return config_.projection_count() == 2 ? span_index : 0;
}

void ProbeNetwork::CheckTarget(const SentenceEncoding& encoding,
                               const SubtokenTarget& target) const {
  const auto tokens = static_cast<int>(encoding.mixed.rows());
  auto check = [&](const SubtokenSpan& span) {
    if (span.start < 0 || span.start >= span.end || span.end > tokens) {
      throw ShapeError("subtoken span [" + std::to_string(span.start) + "," +
                       std::to_string(span.end) + ") outside sentence of " +
                       std::to_string(tokens) + " subtokens");
    }
  };
  check(target.span1);
  if (config_.arity == Arity::kTwoSpan) {
    if (!target.span2) throw ShapeError("two-span task target is missing span2");
    check(*target.span2);
  } else if (target.span2) {
    throw ShapeError("one-span task target carries span2");
  }
}

TargetCache ProbeNetwork::ForwardTarget(const ProbeParams& params,
                                        const SentenceEncoding& encoding,
                                        const SubtokenTarget& target,
                                        const std::optional<DropoutKey>& dropout) const {
  CheckTarget(encoding, target);
  TargetCache cache;
  const int spans = config_.span_count();
  const int span_dim = pooler_.output_dim();
  cache.mlp_input.resize(static_cast<Eigen::Index>(span_dim) * spans);
  cache.pooled.reserve(spans);
  for (int s = 0; s < spans; ++s) {
    const SubtokenSpan& span = s == 0 ? target.span1 : *target.span2;
    const Eigen::MatrixXd& projected = encoding.projected[ProjectionFor(s)];
    cache.pooled.push_back(pooler_.Forward(
        projected.middleRows(span.start, span.length()), params.attn_vector));
    cache.mlp_input.segment(static_cast<Eigen::Index>(s) * span_dim, span_dim) =
        cache.pooled.back().value;
  }

  cache.hidden = (params.hidden_weight * cache.mlp_input + params.hidden_bias)
                     .array()
                     .tanh()
                     .matrix();
  const double mean = cache.hidden.mean();
  const Eigen::VectorXd centered = cache.hidden.array() - mean;
  const double variance = centered.squaredNorm() / centered.size();
  cache.inv_std = 1.0 / std::sqrt(variance + config_.norm_eps);
  cache.normalized = centered * cache.inv_std;
  Eigen::VectorXd normed =
      params.norm_gain.cwiseProduct(cache.normalized) + params.norm_offset;

  if (dropout && config_.dropout > 0.0) {
    const double keep_scale = 1.0 / (1.0 - config_.dropout);
    cache.dropout_mask.resize(normed.size());
    for (Eigen::Index i = 0; i < normed.size(); ++i) {
      const double u = UnitInterval(HashCounters(
          {dropout->seed, dropout->step, dropout->slot, static_cast<std::uint64_t>(i)}));
      cache.dropout_mask[i] = u < config_.dropout ? 0.0 : keep_scale;
    }
    cache.dropped = normed.cwiseProduct(cache.dropout_mask);
  } else {
    cache.dropped = std::move(normed);
  }

  cache.probabilities =
      Sigmoid(params.output_weight * cache.dropped + params.output_bias);
  return cache;
}

void ProbeNetwork::BackwardTarget(const ProbeParams& params,
                                  const SentenceEncoding& encoding,
                                  const SubtokenTarget& target,
                                  const TargetCache& cache,
                                  const Eigen::VectorXd& logit_grad,
                                  ProbeParams* grads,
                                  std::vector<Eigen::MatrixXd>* projected_grads) const {
  if (logit_grad.size() != config_.label_count ||
      static_cast<int>(cache.pooled.size()) != config_.span_count()) {
    throw ShapeError("target cache does not match this probe");
  }
  grads->output_weight.noalias() += logit_grad * cache.dropped.transpose();
  grads->output_bias += logit_grad;
  Eigen::VectorXd d_normed = params.output_weight.transpose() * logit_grad;
  if (cache.dropout_mask.size() > 0) d_normed.array() *= cache.dropout_mask.array();

  grads->norm_gain += d_normed.cwiseProduct(cache.normalized);
  grads->norm_offset += d_normed;
  const Eigen::VectorXd d_hat = d_normed.cwiseProduct(params.norm_gain);
  const double h = static_cast<double>(d_hat.size());
  const Eigen::VectorXd d_hidden =
      cache.inv_std * (d_hat.array() - d_hat.sum() / h -
                       cache.normalized.array() * (d_hat.dot(cache.normalized) / h))
                          .matrix();
  const Eigen::VectorXd d_pre =
      d_hidden.array() * (1.0 - cache.hidden.array().square());
  grads->hidden_weight.noalias() += d_pre * cache.mlp_input.transpose();
  grads->hidden_bias += d_pre;
  const Eigen::VectorXd d_input = params.hidden_weight.transpose() * d_pre;

  const int span_dim = pooler_.output_dim();
  for (int s = 0; s < config_.span_count(); ++s) {
    const SubtokenSpan& span = s == 0 ? target.span1 : *target.span2;
    const int p = ProjectionFor(s);
    const Eigen::MatrixXd& projected = encoding.projected[p];
    PoolGradient pg = pooler_.Backward(
        projected.middleRows(span.start, span.length()), params.attn_vector,
        cache.pooled[s].cache,
        d_input.segment(static_cast<Eigen::Index>(s) * span_dim, span_dim));
    (*projected_grads)[p].middleRows(span.start, span.length()) += pg.tokens;
    if (pg.attn_vector.size() > 0) grads->attn_vector += pg.attn_vector;
  }
}

void ProbeNetwork::BackwardSentence(const ProbeParams& params,
                                    const LayerStack& layers,
                                    const SentenceEncoding& encoding,
                                    const std::vector<Eigen::MatrixXd>& projected_grads,
                                    ProbeParams* grads) const {
  Eigen::MatrixXd d_mixed =
      Eigen::MatrixXd::Zero(encoding.mixed.rows(), encoding.mixed.cols());
  for (std::size_t p = 0; p < params.projections.size(); ++p) {
    const Eigen::MatrixXd& g = projected_grads[p];
    grads->projections[p].weight.noalias() += g.transpose() * encoding.mixed;
    grads->projections[p].bias += g.colwise().sum().transpose();
    d_mixed.noalias() += g * params.projections[p].weight;
  }
  if (mix_.mode() == MixMode::kLearned) {
    MixGradient mg = mix_.Backward(layers, encoding.mix_cache, d_mixed,
                                   /*want_layer_grads=*/false);
    grads->mix_logits += mg.logits;
  }
}

Prediction ProbeNetwork::Predict(const ProbeParams& params, const LayerStack& layers,
                                 const SubtokenTarget& target, double threshold) const {
  const SentenceEncoding encoding = Encode(params, layers);
  const TargetCache cache = ForwardTarget(params, encoding, target, std::nullopt);
  return MakePrediction(cache.probabilities, threshold);
}

double BceLoss(const Eigen::VectorXd& probabilities, const Eigen::VectorXd& gold) {
  if (probabilities.size() != gold.size()) {
    throw ShapeError("probability and gold vectors differ in length");
  }
  double loss = 0.0;
  for (Eigen::Index i = 0; i < probabilities.size(); ++i) {
    const double p =
        std::clamp(probabilities[i], kProbabilityFloor, 1.0 - kProbabilityFloor);
    loss -= gold[i] * std::log(p) + (1.0 - gold[i]) * std::log(1.0 - p);
  }
  return loss;
}

Eigen::VectorXd GoldIndicator(std::span<const int> gold_labels, int label_count) {
  Eigen::VectorXd y = Eigen::VectorXd::Zero(label_count);
  for (int label : gold_labels) {
    if (label < 0 || label >= label_count) {
      throw ShapeError("gold label index " + std::to_string(label) +
                       " outside vocabulary of " + std::to_string(label_count));
    }
    y[label] = 1.0;
  }
  return y;
}

double BatchLossAndGradient(const ProbeNetwork& network, const ProbeParams& params,
                            std::span<const SentenceBatch> sentences,
                            const std::optional<DropoutKey>& dropout,
                            ProbeParams* grads) {
  std::size_t total = 0;
  for (const SentenceBatch& sentence : sentences) total += sentence.targets.size();
  if (total == 0) throw ShapeError("empty batch");
  const double scale = 1.0 / static_cast<double>(total);
  const int labels = network.config().label_count;

  if (grads != nullptr) *grads = ProbeParams::Zeros(network.config());
  double loss_sum = 0.0;
  std::optional<DropoutKey> key = dropout;
  for (const SentenceBatch& sentence : sentences) {
    if (sentence.targets.empty()) continue;
    const SentenceEncoding encoding = network.Encode(params, *sentence.layers);
    std::vector<Eigen::MatrixXd> projected_grads;
    if (grads != nullptr) {
      for (const Eigen::MatrixXd& projected : encoding.projected) {
        projected_grads.push_back(
            Eigen::MatrixXd::Zero(projected.rows(), projected.cols()));
      }
    }
    for (const LabeledTarget& target : sentence.targets) {
      const TargetCache cache =
          network.ForwardTarget(params, encoding, target.spans, key);
      if (key) ++key->slot;
      const Eigen::VectorXd gold = GoldIndicator(target.gold, labels);
      loss_sum += BceLoss(cache.probabilities, gold);
      if (grads != nullptr) {
        const Eigen::VectorXd logit_grad = (cache.probabilities - gold) * scale;
        network.BackwardTarget(params, encoding, target.spans, cache, logit_grad,
                               grads, &projected_grads);
      }
    }
    if (grads != nullptr) {
      network.BackwardSentence(params, *sentence.layers, encoding, projected_grads,
                               grads);
    }
  }
  return loss_sum * scale;
}

}  // namespace spanprobe
