#ifndef SPANPROBE_TRAINER_H_
#define SPANPROBE_TRAINER_H_

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "spanprobe/data_model.h"
#include "spanprobe/embedding_store.h"
#include "spanprobe/evaluation.h"
#include "spanprobe/probe_network.h"

namespace spanprobe {

struct TrainConfig {
  double lr = 5e-4;
  int batch_size = 64;
  int eval_interval = 1000;  // steps between validation passes
  int lr_patience = 5;       // stagnant evals before the lr is reduced
  double lr_factor = 0.5;
  int stop_patience = 20;    // stagnant evals before training stops
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  std::int64_t max_steps = 200000;
  double threshold = 0.5;

  // Throws ConfigError.
  void Validate() const;
};

struct AdamState {
  ProbeParams m;
  ProbeParams v;
  std::int64_t t = 0;

  static AdamState For(const ProbeConfig& config);
};

// Bias-corrected Adam update. Throws ShapeError when shapes disagree.
void AdamStep(ProbeParams* params, const ProbeParams& grads, AdamState* state,
              double lr, const TrainConfig& config);

// Reduce-on-plateau and early-stopping bookkeeping over a stream of
// validation scores. Improvement means a strict increase over the best score.
class PlateauSchedule {
 public:
  struct Decision {
    bool improved = false;
    bool reduce_lr = false;
    bool stop = false;
  };

  PlateauSchedule(int lr_patience, int stop_patience);

  Decision Observe(double score);
  bool has_best() const { return has_best_; }
  double best() const { return best_; }

 private:
  int lr_patience_;
  int stop_patience_;
  bool has_best_ = false;
  double best_ = 0.0;
  int since_best_ = 0;
  int since_lr_change_ = 0;
};

struct PreparedTarget {
  std::size_t sentence = 0;  // store ordinal
  LabeledTarget target;
  int span_words = 0;  // word length of span1
};

// Resolves every target against the store: sentence lookup, word to subtoken
// mapping, label ids. Throws StoreError for sentences missing from the store
// and DataError for word count or label mismatches.
std::vector<PreparedTarget> PrepareTargets(std::span<const ProbingExample> examples,
                                           const TaskSpec& task,
                                           const EmbeddingStore& store);

struct EvalOutcome {
  MetricsReport metrics;
  double loss = 0.0;
  std::vector<std::vector<double>> probabilities;  // in target order
  std::vector<std::vector<int>> golds;
};

EvalOutcome EvaluateProbe(const ProbeNetwork& network, const ProbeParams& params,
                          const EmbeddingStore& store,
                          std::span<const PreparedTarget> targets,
                          double threshold = 0.5);

struct EvalRecord {
  std::int64_t step = 0;
  double valid_f1 = 0.0;
  double valid_loss = 0.0;
  double lr = 0.0;  // in effect after this evaluation
  std::string event;
};

struct TrainLog {
  std::vector<EvalRecord> records;
  std::string stop_reason;  // early_stop | max_steps
  std::int64_t steps = 0;
  std::int64_t best_step = 0;
  double best_f1 = 0.0;
};

std::string TrainLogCsv(const TrainLog& log);

struct ValidationScore {
  double f1 = 0.0;
  double loss = 0.0;
};

struct TrainHooks {
  // Replaces the validation pass; used to script plateaus in tests.
  std::function<ValidationScore(const ProbeParams&, std::int64_t step)> evaluator;
  std::function<void(const EvalRecord&)> on_eval;
};

struct TrainResult {
  ProbeParams params;  // best on validation, not last
  TrainLog log;
};

// Throws NumericError on a non-finite loss.
TrainResult Train(const ProbeNetwork& network, ProbeParams initial,
                  const EmbeddingStore& store,
                  std::span<const PreparedTarget> train,
                  std::span<const PreparedTarget> valid, const TrainConfig& config,
                  const TrainHooks& hooks = {});

}  // namespace spanprobe

#endif  // SPANPROBE_TRAINER_H_
