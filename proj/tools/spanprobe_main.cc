// spanprobe: build datasets, train and evaluate span probes, analyze runs.
//
// Exit codes: 0 ok, 1 I/O or internal error, 2 usage / unknown method or
// task, 3 config file error, 4 data error, 5 store error, 6 numeric error,
// 7 gradient check above threshold.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "spanprobe/checkpoint.h"
#include "spanprobe/csv.h"
#include "spanprobe/data_model.h"
#include "spanprobe/dataset_builders.h"
#include "spanprobe/embedding_store.h"
#include "spanprobe/errors.h"
#include "spanprobe/evaluation.h"
#include "spanprobe/gradcheck.h"
#include "spanprobe/probe_network.h"
#include "spanprobe/trainer.h"

namespace fs = std::filesystem;
using namespace spanprobe;

namespace {

enum ExitCode {
  kOk = 0,
  kIoError = 1,
  kUsage = 2,
  kConfigFile = 3,
  kDataError = 4,
  kStoreError = 5,
  kNumericError = 6,
  kGradcheckFailed = 7,
};

struct GradcheckFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::vector<ProbingExample> ReadCorpus(const fs::path& path, std::optional<Arity> arity) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read corpus " + path.string());
  try {
    return ParseExamples(in, arity);
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

std::string CorpusText(std::span<const ProbingExample> examples) {
  std::string out;
  for (const ProbingExample& e : examples) out += SerializeExample(e) + "\n";
  return out;
}

void WriteOutput(const fs::path& path, std::string_view contents) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  WriteFileAtomically(path, contents);
}

fs::path SidecarPath(fs::path checkpoint) {
  return checkpoint.replace_extension(".json");
}

EmbeddingStore OpenStore(const fs::path& path) {
  if (!fs::exists(path)) throw StoreError("store not found: " + path.string());
  return EmbeddingStore::Open(path);
}

// ---- build-dataset

struct BuildOptions {
  std::string task;
  std::string input;
  std::string output;
  std::string report;
  std::uint64_t seed = 0;
  int negative_ratio = 0;  // 0: task default
  int max_attempts = 100;
};

int RunBuild(const BuildOptions& o, const fs::path& out_dir) {
  const bool constituents = o.task == "constituent_detection";
  if (!constituents && o.task != "mention_detection") {
    throw ConfigError("build-dataset supports constituent_detection and mention_detection, not '" +
                      o.task + "'");
  }
  SamplerConfig cfg;
  cfg.seed = o.seed;
  cfg.max_attempts = o.max_attempts;
  cfg.negative_ratio = o.negative_ratio != 0 ? o.negative_ratio : (constituents ? 1 : 5);
  cfg.Validate();

  const std::vector<ProbingExample> source = ReadCorpus(o.input, std::nullopt);
  const BuiltDataset built = constituents ? BuildConstituentDetection(source, cfg)
                                          : BuildMentionDetection(source, cfg);
  const fs::path output = o.output.empty() ? out_dir / (o.task + ".jsonl") : fs::path(o.output);
  const fs::path report =
      o.report.empty() ? out_dir / (o.task + "_report.csv") : fs::path(o.report);
  WriteOutput(output, CorpusText(built.examples));
  WriteOutput(report, SamplerReportCsv(built.report));

  const SamplerReport& r = built.report;
  std::cout << o.task << ": " << r.positives() << " positives, " << r.negatives()
            << " negatives\n";
  if (r.skipped() > 0) {
    std::cerr << "warning: " << r.skipped() << " positives skipped (no valid negative)\n";
  }
  if (r.shortfall() > 0) {
    std::cerr << "warning: negative quota short by " << r.shortfall() << "\n";
  }
  return kOk;
}

// ---- gen-synthetic

struct SyntheticOptions {
  std::string regime = "boundary";
  SyntheticConfig cfg;
};

int RunSynthetic(SyntheticOptions o, const fs::path& out_dir) {
  o.cfg.regime = ParseSyntheticRegime(o.regime);
  o.cfg.Validate();
  const SyntheticCorpus corpus = GenerateSynthetic(o.cfg);
  WriteOutput(out_dir / "train.jsonl", CorpusText(corpus.train));
  WriteOutput(out_dir / "valid.jsonl", CorpusText(corpus.valid));
  fs::create_directories(out_dir);
  WriteStore(corpus.sentences, out_dir / "store.spe");
  std::cout << "wrote " << corpus.sentences.size() << " sentences to "
            << (out_dir / "store.spe").string() << "\n";
  return kOk;
}

// ---- train

struct TrainOptions {
  std::string task;
  std::string train;
  std::string valid;
  std::string store;
  std::string method = "avg";
  std::string encoder = "unknown";
  std::string mix = "learned";
  int proj_dim = 256;
  int hidden_dim = 256;
  double dropout = 0.3;
  TrainConfig cfg;
};

int RunTrain(const TrainOptions& o, const fs::path& out_dir) {
  const TaskInfo& info = LookupTask(o.task);
  ProbeConfig probe;
  probe.method = ParseSpanMethod(o.method);
  probe.mix_mode = ParseMixMode(o.mix);
  probe.arity = info.arity;
  probe.separate_projections = info.separate_projections;
  probe.proj_dim = o.proj_dim;
  probe.hidden_dim = o.hidden_dim;
  probe.dropout = o.dropout;
  o.cfg.Validate();

  const std::vector<ProbingExample> train = ReadCorpus(o.train, info.arity);
  const std::vector<ProbingExample> valid = ReadCorpus(o.valid, info.arity);
  const EmbeddingStore store = OpenStore(o.store);
  const TaskSpec task = MakeTaskSpec(o.task, train);
  probe.label_count = static_cast<int>(task.label_vocabulary.size());
  probe.input_dim = static_cast<int>(store.dim());
  probe.layer_count = static_cast<int>(store.layer_count());
  probe.Validate();

  const std::vector<PreparedTarget> train_targets = PrepareTargets(train, task, store);
  const std::vector<PreparedTarget> valid_targets = PrepareTargets(valid, task, store);
  const ProbeNetwork network(probe);

  TrainHooks hooks;
  hooks.on_eval = [](const EvalRecord& r) {
    std::cerr << "step " << r.step << " valid_f1 " << FormatReal(r.valid_f1, 4) << " loss "
              << FormatReal(r.valid_loss, 4) << " lr " << r.lr
              << (r.event.empty() ? "" : " " + r.event) << "\n";
  };
  const TrainResult result = Train(network, ProbeParams::Initialize(probe, o.cfg.seed), store,
                                   train_targets, valid_targets, o.cfg, hooks);

  CheckpointMetadata meta;
  meta.task = o.task;
  meta.encoder = o.encoder;
  meta.seed = o.cfg.seed;
  meta.label_vocabulary = task.label_vocabulary;
  meta.probe = probe;
  meta.extra = {{"best_step", result.log.best_step},
                {"best_valid_f1", result.log.best_f1},
                {"steps", result.log.steps},
                {"stop_reason", result.log.stop_reason}};
  fs::create_directories(out_dir);
  SaveParams(result.params, out_dir / "probe.ckpt");
  SaveMetadata(meta, out_dir / "probe.json");
  WriteOutput(out_dir / "train_log.csv", TrainLogCsv(result.log));
  std::cout << "best valid micro-F1 " << FormatReal(result.log.best_f1, 4) << " at step "
            << result.log.best_step << " (" << result.log.stop_reason << " after "
            << result.log.steps << " steps)\n";
  return kOk;
}

// ---- eval

struct EvalOptions {
  std::string checkpoint;
  std::string data;
  std::string store;
  double threshold = 0.5;
  int min_span_words = 0;
};

int RunEval(const EvalOptions& o, const fs::path& out_dir) {
  if (!(o.threshold > 0.0 && o.threshold < 1.0)) {
    throw ConfigError("threshold must be in (0, 1)");
  }
  const CheckpointMetadata meta = LoadMetadata(SidecarPath(o.checkpoint));
  const ProbeParams params = LoadParams(o.checkpoint, meta.probe);
  const EmbeddingStore store = OpenStore(o.store);
  if (static_cast<int>(store.dim()) != meta.probe.input_dim ||
      static_cast<int>(store.layer_count()) != meta.probe.layer_count) {
    throw StoreError("store geometry does not match the checkpoint");
  }
  const std::vector<ProbingExample> data = ReadCorpus(o.data, meta.probe.arity);
  const TaskSpec task{meta.task, meta.probe.arity, meta.label_vocabulary};
  std::vector<PreparedTarget> targets = PrepareTargets(data, task, store);
  if (o.min_span_words > 0) {
    std::erase_if(targets, [&](const PreparedTarget& t) { return t.span_words < o.min_span_words; });
  }
  if (targets.empty()) throw DataError("no targets to evaluate");

  const ProbeNetwork network(meta.probe);
  const EvalOutcome outcome = EvaluateProbe(network, params, store, targets, o.threshold);
  const std::vector<std::string> summary_header = {"task", "encoder", "method", "micro_f1"};
  const std::vector<std::string> summary_row = {meta.task, meta.encoder,
                                                std::string(MethodName(meta.probe.method)),
                                                FormatReal(outcome.metrics.f1)};
  WriteOutput(out_dir / "metrics.csv", MetricsCsv(outcome.metrics, meta.label_vocabulary));
  WriteOutput(out_dir / "predictions.csv",
              PredictionsCsv(outcome.probabilities, outcome.golds, meta.label_vocabulary));
  WriteOutput(out_dir / "summary.csv", CsvRow(summary_header) + CsvRow(summary_row));
  std::cout << "micro-F1 " << FormatReal(outcome.metrics.f1, 4) << " over "
            << targets.size() << " targets\n";
  return kOk;
}

// ---- analyze

struct AnalyzeOptions {
  std::vector<std::string> group_a;
  std::vector<std::string> group_b;
  std::vector<std::string> summaries;
  std::int64_t min_support = 100;
  std::string rule = "mean";
  double threshold = 0.5;
};

int RunAnalyze(const AnalyzeOptions& o, const fs::path& out_dir) {
  if (o.group_a.empty() != o.group_b.empty()) {
    throw ConfigError("--group_a and --group_b must be given together");
  }
  if (o.group_a.empty() && o.summaries.empty()) {
    throw ConfigError("nothing to analyze: give --group_a/--group_b and/or --summaries");
  }
  PoolingRule rule = PoolingRule::kMeanRecall;
  if (o.rule == "union") {
    rule = PoolingRule::kUnion;
  } else if (o.rule != "mean") {
    throw ConfigError("unknown pooling rule '" + o.rule + "' (expected mean or union)");
  }

  std::optional<std::string> delta_csv;
  if (!o.group_a.empty()) {
    std::vector<RunDecisions> a, b;
    for (const auto& p : o.group_a) a.push_back(ReadPredictionsCsv(p, o.threshold));
    for (const auto& p : o.group_b) b.push_back(ReadPredictionsCsv(p, o.threshold));
    delta_csv = GroupDeltaCsv(GroupDeltaRecall(a, b, o.min_support, rule));
  }
  std::optional<std::string> grid_csv;
  if (!o.summaries.empty()) {
    std::vector<GridCell> cells;
    for (const auto& path : o.summaries) {
      const auto rows = ReadCsvFile(path);
      if (rows.empty() || rows[0] != std::vector<std::string>{"task", "encoder", "method",
                                                              "micro_f1"}) {
        throw DataError(path + ": expected header task,encoder,method,micro_f1");
      }
      for (std::size_t i = 1; i < rows.size(); ++i) {
        if (rows[i].size() != 4) throw DataError(path + ": malformed row " + std::to_string(i + 1));
        try {
          cells.push_back({rows[i][1], rows[i][2], std::stod(rows[i][3])});
        } catch (const std::logic_error&) {
          throw DataError(path + ": bad micro_f1 on row " + std::to_string(i + 1));
        }
      }
    }
    grid_csv = GridCsv(BuildGrid(cells));
  }
  if (delta_csv) WriteOutput(out_dir / "group_delta.csv", *delta_csv);
  if (grid_csv) WriteOutput(out_dir / "grid.csv", *grid_csv);
  return kOk;
}

// ---- gradcheck

struct GradcheckOptions {
  GradcheckConfig cfg;
  std::vector<std::string> methods;
  double threshold = 1e-5;
};

int RunGradcheckCommand(GradcheckOptions o) {
  for (const auto& m : o.methods) o.cfg.methods.push_back(ParseSpanMethod(m));
  const GradcheckReport report = RunGradcheck(o.cfg);
  for (const GradcheckCase& c : report.cases) {
    std::printf("%-9s %s%s  max_rel_err %.3e  (%s, %lld coords)\n",
                std::string(MethodName(c.method)).c_str(),
                c.arity == Arity::kOneSpan ? "one-span" : "two-span",
                c.arity == Arity::kOneSpan ? "         "
                                           : (c.separate_projections ? " separate" : " shared  "),
                c.max_rel_error, c.worst_tensor.c_str(), c.coordinates);
  }
  std::printf("max relative error %.3e (threshold %.1e)\n", report.max_rel_error, o.threshold);
  if (!(report.max_rel_error <= o.threshold)) {
    throw GradcheckFailure("gradient check failed");
  }
  return kOk;
}

// ---- export-layers

int RunExportLayers(const std::string& checkpoint, const fs::path& out_dir) {
  const CheckpointMetadata meta = LoadMetadata(SidecarPath(checkpoint));
  const ProbeParams params = LoadParams(checkpoint, meta.probe);
  const ScalarMix mix(meta.probe.layer_count, meta.probe.mix_mode);
  const Eigen::VectorXd w = mix.Weights(params.mix_logits);
  std::string out = "layer_index,weight\n";
  for (Eigen::Index l = 0; l < w.size(); ++l) {
    out += std::to_string(l) + "," + FormatReal(w[l], 8) + "\n";
  }
  WriteOutput(out_dir / "layer_weights.csv", out);
  return kOk;
}

void AddTrainConfig(CLI::App* cmd, TrainConfig* c) {
  cmd->add_option("--lr", c->lr, "initial learning rate")->capture_default_str();
  cmd->add_option("--batch_size", c->batch_size, "targets per step")->capture_default_str();
  cmd->add_option("--eval_interval", c->eval_interval, "steps between validation passes")
      ->capture_default_str();
  cmd->add_option("--lr_patience", c->lr_patience)->capture_default_str();
  cmd->add_option("--lr_factor", c->lr_factor)->capture_default_str();
  cmd->add_option("--stop_patience", c->stop_patience)->capture_default_str();
  cmd->add_option("--adam_beta1", c->adam_beta1)->capture_default_str();
  cmd->add_option("--adam_beta2", c->adam_beta2)->capture_default_str();
  cmd->add_option("--adam_eps", c->adam_eps)->capture_default_str();
  cmd->add_option("--seed", c->seed)->capture_default_str();
  cmd->add_option("--max_steps", c->max_steps)->capture_default_str();
  cmd->add_option("--threshold", c->threshold)->capture_default_str();
}

// Command line with the config file's keys inserted right after the
// subcommand name. Keys the user passed explicitly are left out.
std::vector<std::string> MergeConfigFile(std::vector<std::string> args, const CLI::App& sub,
                                         const std::string& path) {
  const std::vector<CLI::ConfigItem> items = CLI::ConfigBase().from_file(path);
  auto at = std::find(args.begin() + 1, args.end(), sub.get_name());
  std::set<std::string> given;
  for (auto it = at; it != args.end(); ++it) {
    if (it->starts_with("--")) given.insert(it->substr(2, it->find('=') - 2));
  }
  std::vector<std::string> inserted;
  for (const CLI::ConfigItem& item : items) {
    if (!item.parents.empty() && item.parents != std::vector<std::string>{"default"}) {
      throw CLI::ConfigError(path + ": sections are not supported (" + item.fullname() + ")");
    }
    if (item.name == "config" || sub.get_option_no_throw("--" + item.name) == nullptr) {
      throw CLI::ConfigError(path + ": unknown key '" + item.name + "' for " + sub.get_name());
    }
    if (given.contains(item.name)) continue;
    inserted.push_back("--" + item.name);
    inserted.insert(inserted.end(), item.inputs.begin(), item.inputs.end());
  }
  args.insert(at + 1, inserted.begin(), inserted.end());
  return args;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Span representation probing toolkit"};
  app.require_subcommand(1);
  std::string out_dir = ".";
  app.add_option("--out_dir", out_dir, "output directory")
      ->envname("SPANPROBE_OUT")
      ->capture_default_str();

  // CLI11 only reads config files declared on the top-level app, so each
  // subcommand takes a plain --config path merged into argv before parsing.
  std::map<const CLI::App*, std::string> config_paths;
  auto with_config = [&config_paths](CLI::App* cmd) {
    cmd->add_option("--config", config_paths[cmd], "flat key=value file; flags override it");
    return cmd;
  };

  BuildOptions build;
  CLI::App* build_cmd = with_config(
      app.add_subcommand("build-dataset", "derive a detection task by negative sampling"));
  build_cmd->add_option("--task", build.task, "constituent_detection | mention_detection")
      ->required();
  build_cmd->add_option("--input", build.input, "source edge-probing records")->required();
  build_cmd->add_option("--output", build.output, "output records (default <out_dir>/<task>.jsonl)");
  build_cmd->add_option("--report", build.report, "sampling report CSV");
  build_cmd->add_option("--seed", build.seed)->capture_default_str();
  build_cmd->add_option("--negative_ratio", build.negative_ratio, "default 1 or 5 by task");
  build_cmd->add_option("--max_attempts", build.max_attempts)->capture_default_str();

  SyntheticOptions synth;
  CLI::App* synth_cmd = with_config(
      app.add_subcommand("gen-synthetic", "write a synthetic corpus and embedding store"));
  synth_cmd->add_option("--regime", synth.regime, "boundary | content | separable")
      ->capture_default_str();
  synth_cmd->add_option("--train_targets", synth.cfg.train_targets)->capture_default_str();
  synth_cmd->add_option("--valid_targets", synth.cfg.valid_targets)->capture_default_str();
  synth_cmd->add_option("--d_model", synth.cfg.d_model)->capture_default_str();
  synth_cmd->add_option("--layer_count", synth.cfg.layer_count)->capture_default_str();
  synth_cmd->add_option("--class_count", synth.cfg.class_count)->capture_default_str();
  synth_cmd->add_option("--targets_per_sentence", synth.cfg.targets_per_sentence)
      ->capture_default_str();
  synth_cmd->add_option("--split_rate", synth.cfg.split_rate)->capture_default_str();
  synth_cmd->add_option("--seed", synth.cfg.seed)->capture_default_str();

  TrainOptions train;
  CLI::App* train_cmd = with_config(app.add_subcommand("train", "train one probe"));
  train_cmd->add_option("--task", train.task)->required();
  train_cmd->add_option("--train", train.train, "training records")->required();
  train_cmd->add_option("--valid", train.valid, "validation records")->required();
  train_cmd->add_option("--store", train.store, "embedding store")->required();
  train_cmd->add_option("--method", train.method, "avg | attn | max | endpoint | diffsum | coherent")
      ->capture_default_str();
  train_cmd->add_option("--encoder", train.encoder, "encoder id recorded in the metadata")
      ->capture_default_str();
  train_cmd->add_option("--mix", train.mix, "learned | uniform")->capture_default_str();
  train_cmd->add_option("--proj_dim", train.proj_dim)->capture_default_str();
  train_cmd->add_option("--hidden_dim", train.hidden_dim)->capture_default_str();
  train_cmd->add_option("--dropout", train.dropout)->capture_default_str();
  AddTrainConfig(train_cmd, &train.cfg);

  EvalOptions eval;
  CLI::App* eval_cmd = with_config(app.add_subcommand("eval", "score a trained probe"));
  eval_cmd->add_option("--checkpoint", eval.checkpoint, "probe.ckpt (probe.json alongside)")
      ->required();
  eval_cmd->add_option("--data", eval.data, "records to score")->required();
  eval_cmd->add_option("--store", eval.store, "embedding store")->required();
  eval_cmd->add_option("--threshold", eval.threshold)->capture_default_str();
  eval_cmd->add_option("--min_span_words", eval.min_span_words,
                       "only score targets whose first span has at least this many words")
      ->capture_default_str();

  AnalyzeOptions analyze;
  CLI::App* analyze_cmd =
      with_config(app.add_subcommand("analyze", "label-group recall deltas and result grids"));
  analyze_cmd->add_option("--group_a", analyze.group_a, "prediction CSVs of group A");
  analyze_cmd->add_option("--group_b", analyze.group_b, "prediction CSVs of group B");
  analyze_cmd->add_option("--summaries", analyze.summaries, "eval summary CSVs for the grid");
  analyze_cmd->add_option("--min_support", analyze.min_support)->capture_default_str();
  analyze_cmd->add_option("--rule", analyze.rule, "mean | union")->capture_default_str();
  analyze_cmd->add_option("--threshold", analyze.threshold)->capture_default_str();

  GradcheckOptions grad;
  CLI::App* grad_cmd =
      with_config(app.add_subcommand("gradcheck", "compare gradients with finite differences"));
  grad_cmd->add_option("--seed", grad.cfg.seed)->capture_default_str();
  grad_cmd->add_option("--instances", grad.cfg.instances)->capture_default_str();
  grad_cmd->add_option("--methods", grad.methods, "subset of methods (default all)");
  grad_cmd->add_option("--threshold", grad.threshold)->capture_default_str();
  grad_cmd->add_option("--floor", grad.cfg.floor, "denominator floor of the relative error")
      ->capture_default_str();

  std::string export_checkpoint;
  CLI::App* export_cmd =
      with_config(app.add_subcommand("export-layers", "write learned layer weights"));
  export_cmd->add_option("--checkpoint", export_checkpoint)->required();

  try {
    // Config keys must be in place before required options are checked.
    std::vector<std::string> args(argv, argv + argc);
    for (const auto& [sub, unused] : config_paths) {
      const auto at = std::find(args.begin() + 1, args.end(), sub->get_name());
      if (at == args.end()) continue;
      for (auto it = at + 1; it != args.end(); ++it) {
        std::string path;
        if (*it == "--config" && it + 1 != args.end()) path = *(it + 1);
        if (it->starts_with("--config=")) path = it->substr(9);
        if (!path.empty()) {
          args = MergeConfigFile(args, *sub, path);
          break;
        }
      }
      break;
    }
    std::vector<const char*> merged;
    for (const std::string& a : args) merged.push_back(a.c_str());
    app.parse(static_cast<int>(merged.size()), merged.data());
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigFile;
  } catch (const CLI::FileError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigFile;
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  const fs::path out(out_dir);
  try {
    if (*build_cmd) return RunBuild(build, out);
    if (*synth_cmd) return RunSynthetic(synth, out);
    if (*train_cmd) return RunTrain(train, out);
    if (*eval_cmd) return RunEval(eval, out);
    if (*analyze_cmd) return RunAnalyze(analyze, out);
    if (*grad_cmd) return RunGradcheckCommand(grad);
    if (*export_cmd) return RunExportLayers(export_checkpoint, out);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kDataError;
  } catch (const StoreError& e) {
    std::cerr << "store error: " << e.what() << "\n";
    return kStoreError;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kNumericError;
  } catch (const GradcheckFailure& e) {
    std::cerr << e.what() << "\n";
    return kGradcheckFailed;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kIoError;
  }
  return kUsage;
}
