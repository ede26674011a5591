#include "spanprobe/trainer.h"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>

#include "spanprobe/csv.h"
#include "spanprobe/errors.h"
#include "spanprobe/random.h"

namespace spanprobe {
namespace {

// Groups targets (given as indices into `targets`) by sentence, loading each
// sentence once. Groups come out in ascending sentence order.
struct LoadedGroup {
  LayerStack layers;
  std::vector<std::size_t> members;
};

std::vector<LoadedGroup> LoadGroups(const EmbeddingStore& store,
                                    std::span<const PreparedTarget> targets,
                                    std::vector<std::size_t> indices) {
  std::stable_sort(indices.begin(), indices.end(), [&](std::size_t a, std::size_t b) {
    return targets[a].sentence < targets[b].sentence;
  });
  std::vector<LoadedGroup> groups;
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const std::size_t sentence = targets[indices[i]].sentence;
    if (i == 0 || sentence != targets[indices[i - 1]].sentence) {
      groups.push_back({ToLayerStack(store.Get(sentence)), {}});
    }
    groups.back().members.push_back(indices[i]);
  }
  return groups;
}

std::string EventName(const PlateauSchedule::Decision& d) {
  std::string event;
  auto add = [&](const char* name) {
    if (!event.empty()) event += '+';
    event += name;
  };
  if (d.improved) add("improved");
  if (d.reduce_lr) add("lr_reduced");
  if (d.stop) add("stop");
  return event;
}

}  // namespace

void TrainConfig::Validate() const {
  if (!(lr > 0.0)) throw ConfigError("lr must be positive");
  if (batch_size < 1) throw ConfigError("batch_size must be positive");
  if (eval_interval < 1) throw ConfigError("eval_interval must be positive");
  if (lr_patience < 1) throw ConfigError("lr_patience must be positive");
  if (!(lr_factor > 0.0 && lr_factor < 1.0)) {
    throw ConfigError("lr_factor must be in (0, 1)");
  }
  if (stop_patience < 1) throw ConfigError("stop_patience must be positive");
  if (!(adam_beta1 > 0.0 && adam_beta1 < 1.0) || !(adam_beta2 > 0.0 && adam_beta2 < 1.0)) {
    throw ConfigError("adam betas must be in (0, 1)");
  }
  if (!(adam_eps > 0.0)) throw ConfigError("adam_eps must be positive");
  if (max_steps < 1) throw ConfigError("max_steps must be positive");
  if (!(threshold > 0.0 && threshold < 1.0)) {
    throw ConfigError("threshold must be in (0, 1)");
  }
}

AdamState AdamState::For(const ProbeConfig& config) {
  return {ProbeParams::Zeros(config), ProbeParams::Zeros(config), 0};
}

void AdamStep(ProbeParams* params, const ProbeParams& grads, AdamState* state,
              double lr, const TrainConfig& config) {
  state->t += 1;
  const double b1 = config.adam_beta1;
  const double b2 = config.adam_beta2;
  const double correction1 = 1.0 - std::pow(b1, static_cast<double>(state->t));
  const double correction2 = 1.0 - std::pow(b2, static_cast<double>(state->t));
  ForEachTensor(
      [&](const std::string& name, auto& p, const auto& g, auto& m, auto& v) {
        if (g.rows() != p.rows() || g.cols() != p.cols() || m.rows() != p.rows() ||
            m.cols() != p.cols() || v.rows() != p.rows() || v.cols() != p.cols()) {
          throw ShapeError("adam: shape mismatch for " + name);
        }
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g.cwiseProduct(g);
        p.array() -= lr * (m.array() / correction1) /
                     ((v.array() / correction2).sqrt() + config.adam_eps);
      },
      *params, grads, state->m, state->v);
}

PlateauSchedule::PlateauSchedule(int lr_patience, int stop_patience)
    : lr_patience_(lr_patience), stop_patience_(stop_patience) {}

PlateauSchedule::Decision PlateauSchedule::Observe(double score) {
  Decision decision;
  if (!has_best_ || score > best_) {
    has_best_ = true;
    best_ = score;
    since_best_ = 0;
    since_lr_change_ = 0;
    decision.improved = true;
    return decision;
  }
  ++since_best_;
  ++since_lr_change_;
  if (since_lr_change_ >= lr_patience_) {
    decision.reduce_lr = true;
    since_lr_change_ = 0;
  }
  decision.stop = since_best_ >= stop_patience_;
  return decision;
}

std::vector<PreparedTarget> PrepareTargets(std::span<const ProbingExample> examples,
                                           const TaskSpec& task,
                                           const EmbeddingStore& store) {
  std::vector<PreparedTarget> prepared;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const ProbingExample& example = examples[i];
    if (example.targets.empty()) continue;
    const std::uint64_t id = SentenceIdOf(example, i);
    const auto ordinal = store.FindOrdinal(id);
    if (!ordinal) {
      throw StoreError("missing embeddings for sentence id " + std::to_string(id));
    }
    const std::vector<WordRange> alignment = store.Alignment(*ordinal);
    if (alignment.size() != example.words.size()) {
      throw DataError("sentence id " + std::to_string(id) + " has " +
                      std::to_string(example.words.size()) +
                      " words but the store aligns " +
                      std::to_string(alignment.size()));
    }
    for (const ProbingTarget& target : example.targets) {
      if ((task.arity == Arity::kTwoSpan) != target.span2.has_value()) {
        throw DataError("sentence id " + std::to_string(id) +
                        ": target arity does not match task " + task.name);
      }
      PreparedTarget p;
      p.sentence = *ordinal;
      p.span_words = target.span1.length();
      p.target.spans.span1 = MapSpan(alignment, target.span1);
      if (target.span2) p.target.spans.span2 = MapSpan(alignment, *target.span2);
      for (const std::string& label : target.labels) {
        const int index = task.LabelIndex(label);
        if (index < 0) {
          throw DataError("sentence id " + std::to_string(id) + ": label '" + label +
                          "' is not in the task vocabulary");
        }
        p.target.gold.push_back(index);
      }
      std::sort(p.target.gold.begin(), p.target.gold.end());
      prepared.push_back(std::move(p));
    }
  }
  return prepared;
}

EvalOutcome EvaluateProbe(const ProbeNetwork& network, const ProbeParams& params,
                          const EmbeddingStore& store,
                          std::span<const PreparedTarget> targets, double threshold) {
  EvalOutcome outcome;
  outcome.probabilities.resize(targets.size());
  outcome.golds.resize(targets.size());
  const int labels = network.config().label_count;
  double loss_sum = 0.0;

  std::vector<std::size_t> indices(targets.size());
  std::iota(indices.begin(), indices.end(), 0);
  for (const LoadedGroup& group : LoadGroups(store, targets, std::move(indices))) {
    const SentenceEncoding encoding = network.Encode(params, group.layers);
    for (std::size_t index : group.members) {
      const LabeledTarget& target = targets[index].target;
      const TargetCache cache =
          network.ForwardTarget(params, encoding, target.spans, std::nullopt);
      loss_sum += BceLoss(cache.probabilities, GoldIndicator(target.gold, labels));
      outcome.probabilities[index].assign(cache.probabilities.data(),
                                          cache.probabilities.data() + labels);
      outcome.golds[index] = target.gold;
    }
  }
  outcome.metrics = Score(outcome.probabilities, outcome.golds, labels, threshold);
  outcome.loss = targets.empty() ? 0.0 : loss_sum / static_cast<double>(targets.size());
  return outcome;
}

std::string TrainLogCsv(const TrainLog& log) {
  std::string out = "step,valid_micro_f1,valid_loss,lr,event\n";
  for (const EvalRecord& r : log.records) {
    const std::vector<std::string> row = {std::to_string(r.step), FormatReal(r.valid_f1),
                                          FormatReal(r.valid_loss),
                                          FormatReal(r.lr, 10), r.event};
    out += CsvRow(row);
  }
  return out;
}

TrainResult Train(const ProbeNetwork& network, ProbeParams initial,
                  const EmbeddingStore& store, std::span<const PreparedTarget> train,
                  std::span<const PreparedTarget> valid, const TrainConfig& config,
                  const TrainHooks& hooks) {
  config.Validate();
  network.CheckShapes(initial);
  if (train.empty()) throw DataError("training set has no targets");
  if (valid.empty() && !hooks.evaluator) throw DataError("validation set has no targets");

  auto evaluate = [&](const ProbeParams& params, std::int64_t step) -> ValidationScore {
    if (hooks.evaluator) return hooks.evaluator(params, step);
    const EvalOutcome outcome =
        EvaluateProbe(network, params, store, valid, config.threshold);
    return {outcome.metrics.f1, outcome.loss};
  };

  TrainResult result{initial, {}};
  ProbeParams params = std::move(initial);
  AdamState adam = AdamState::For(network.config());
  PlateauSchedule schedule(config.lr_patience, config.stop_patience);
  double lr = config.lr;

  std::mt19937_64 shuffle_rng(HashCounters({config.seed, 0x5368756666ull}));
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), shuffle_rng);
  std::size_t cursor = 0;
  const std::size_t batch_size =
      std::min<std::size_t>(static_cast<std::size_t>(config.batch_size), train.size());

  ProbeParams grads;
  std::vector<std::size_t> batch;
  std::int64_t step = 0;
  std::int64_t last_eval_step = -1;
  bool stopped = false;

  auto run_eval = [&] {
    const ValidationScore score = evaluate(params, step);
    const PlateauSchedule::Decision decision = schedule.Observe(score.f1);
    if (decision.improved) {
      result.params = params;
      result.log.best_step = step;
      result.log.best_f1 = score.f1;
    }
    if (decision.reduce_lr) lr *= config.lr_factor;
    EvalRecord record{step, score.f1, score.loss, lr, EventName(decision)};
    if (hooks.on_eval) hooks.on_eval(record);
    result.log.records.push_back(std::move(record));
    last_eval_step = step;
    if (decision.stop) {
      result.log.stop_reason = "early_stop";
      stopped = true;
    }
  };

  while (!stopped && step < config.max_steps) {
    batch.clear();
    while (batch.size() < batch_size) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        cursor = 0;
      }
      batch.push_back(order[cursor++]);
    }
    const std::vector<LoadedGroup> groups = LoadGroups(store, train, batch);
    std::vector<SentenceBatch> sentences;
    sentences.reserve(groups.size());
    for (const LoadedGroup& group : groups) {
      SentenceBatch sentence{&group.layers, {}};
      for (std::size_t index : group.members) sentence.targets.push_back(train[index].target);
      sentences.push_back(std::move(sentence));
    }

    const double loss = BatchLossAndGradient(
        network, params, sentences,
        DropoutKey{config.seed, static_cast<std::uint64_t>(step), 0}, &grads);
    if (!std::isfinite(loss)) {
      throw NumericError("non-finite training loss at step " + std::to_string(step) +
                         " (lr " + FormatReal(lr, 10) + ")");
    }
    AdamStep(&params, grads, &adam, lr, config);
    ++step;
    if (step % config.eval_interval == 0) run_eval();
  }
  if (!stopped) {
    if (last_eval_step != step) run_eval();
    if (!stopped) result.log.stop_reason = "max_steps";
  }
  result.log.steps = step;
  return result;
}

}  // namespace spanprobe
