#include "cli.hpp"

#include <cstdio>
#include <stdexcept>

#include <CLI11.hpp>
#include <json.hpp>

#include "tvmerge/checkpoint.hpp"
#include "tvmerge/merger.hpp"
#include "tvmerge/quad_metrics.hpp"
#include "tvmerge/toy_trainer.hpp"

namespace tvmerge::cli {

namespace {

struct MergeArgs {
  std::string base;
  std::vector<std::string> models;
  double alpha = 20.0;
  double beta = 20.0;
  double lambda = 1.0;
  std::string out;
  std::string stats;
  bool group_by_prefix = false;
};

struct ScoreArgs {
  std::string pred;
  std::string gold;
  std::string report;
  std::string matching = "greedy";
};

struct TrainArgs {
  std::string task;
  std::string out;
  std::string base;
  std::size_t epochs = 30;
  double lr = 1e-2;
  double reg_lambda = 1e-3;
  double weight_decay = 0.01;
  std::size_t batch_size = 16;
  std::size_t samples = 1000;
  bool bias_correction = false;
  std::string dtype = "F32";
};

struct SynthArgs {
  std::string out;
  std::size_t input_dim = kToyInputDim;
  std::size_t hidden_dim = kToyHiddenDim;
  std::string dtype = "F32";
};

struct EvalArgs {
  std::string model;
  std::string task;
  std::size_t samples = 1000;
};

// Exit-code classes.
struct UsageError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

Task parse_task(const std::string& s) {
  if (s == "A" || s == "a") return Task::A;
  if (s == "B" || s == "b") return Task::B;
  throw UsageError("--task must be A or B");
}

DType parse_dtype_flag(const std::string& s) {
  if (const auto d = parse_dtype(s)) return *d;
  throw UsageError("--dtype must be F64, F32, or F16");
}

void write_text(const std::string& path, const std::string& text) {
  write_file_atomic(path, text);
}

int run_merge(const MergeArgs& a, std::ostream& out, bool quiet) {
  MergeConfig cfg;
  cfg.prune.alpha = a.alpha;
  cfg.prune.beta = a.beta;
  cfg.prune.grouping = a.group_by_prefix ? LayerGrouping::kNamePrefix : LayerGrouping::kPerTensor;
  cfg.lambda = a.lambda;
  cfg.report_stats = !a.stats.empty();
  cfg.validate();

  const Checkpoint base = load_checkpoint(a.base);
  std::vector<Checkpoint> models;
  models.reserve(a.models.size());
  for (const auto& path : a.models) {
    models.push_back(load_checkpoint(path));
    try {
      validate_compatible(models.back(), base);
    } catch (const IncompatibleError& e) {
      throw IncompatibleError(e.name(), path + " is incompatible with the base: " + e.what());
    }
  }

  const auto result = merge_models_with_stats(base, models, cfg);
  save_checkpoint(result.merged, a.out);
  if (cfg.report_stats) write_text(a.stats, merge_stats_json(result.stats));
  if (!quiet) {
    out << "merged " << models.size() << " model(s) into " << a.out << " (alpha=" << a.alpha
        << " beta=" << a.beta << " lambda=" << a.lambda << ")\n";
  }
  return 0;
}

int run_score(const ScoreArgs& a, std::ostream& out, std::ostream& err, bool quiet) {
  std::unique_ptr<QuadMatcher> matcher;
  if (a.matching == "greedy") matcher = std::make_unique<GreedyMatcher>();
  else if (a.matching == "maximum") matcher = std::make_unique<MaximumMatcher>();
  else throw UsageError("--matching must be greedy or maximum");

  std::vector<std::string> warnings;
  const auto preds = read_extractions(a.pred, &warnings);
  const auto golds = read_extractions(a.gold, &warnings);
  const auto report = score(preds, golds, *matcher);
  if (!quiet) {
    for (const auto& w : warnings) err << "warning: " << w << '\n';
  }
  if (!a.report.empty()) write_text(a.report, score_report_json(report));
  out << score_summary(report) << '\n';
  return 0;
}

int run_train(const TrainArgs& a, std::uint64_t seed, std::ostream& out, bool quiet) {
  const Task task = parse_task(a.task);
  const DType dtype = parse_dtype_flag(a.dtype);
  TrainConfig cfg;
  cfg.seed = seed;
  cfg.epochs = a.epochs;
  cfg.eta = a.lr;
  cfg.reg_lambda = a.reg_lambda;
  cfg.weight_decay = a.weight_decay;
  cfg.batch_size = a.batch_size;
  cfg.bias_correction = a.bias_correction;
  cfg.validate();
  if (a.samples == 0) throw UsageError("--samples must be positive");

  const TinyModel base = a.base.empty() ? make_tiny_model(kToyInputDim, kToyHiddenDim, seed)
                                        : TinyModel::from_checkpoint(load_checkpoint(a.base));
  const auto data = make_task_dataset(task, a.samples, seed);
  const auto result = train_model(base, data, cfg);
  auto ckpt = result.model.to_checkpoint(dtype);
  ckpt.metadata()["task"] = a.task;
  save_checkpoint(ckpt, a.out);
  if (!quiet) {
    char buf[128];
    std::snprintf(buf, sizeof(buf), "trained task %s: final loss %.6f, train accuracy %.4f\n",
                  a.task.c_str(), result.epoch_loss.back(), accuracy(result.model, data));
    out << buf;
  }
  return 0;
}

int run_synth(const SynthArgs& a, std::uint64_t seed, std::ostream& out, bool quiet) {
  const DType dtype = parse_dtype_flag(a.dtype);
  if (a.input_dim == 0) throw UsageError("--input-dim must be positive");
  const auto model = make_tiny_model(a.input_dim, a.hidden_dim, seed);
  save_checkpoint(model.to_checkpoint(dtype), a.out);
  if (!quiet) out << "wrote base model with " << model.params.size() << " parameters to " << a.out << '\n';
  return 0;
}

int run_eval(const EvalArgs& a, std::uint64_t seed, std::ostream& out) {
  const Task task = parse_task(a.task);
  if (a.samples == 0) throw UsageError("--samples must be positive");
  const auto model = TinyModel::from_checkpoint(load_checkpoint(a.model));
  // Offset keeps the evaluation draw apart from a training draw with the same seed.
  const auto data = make_task_dataset(task, a.samples, seed + 1000003);
  nlohmann::ordered_json j{{"task", a.task}, {"n", a.samples}, {"accuracy", accuracy(model, data)}};
  out << j.dump() << '\n';
  return 0;
}

int run_inspect(const std::string& path, std::ostream& out) {
  const auto ckpt = load_checkpoint(path);
  nlohmann::ordered_json tensors = nlohmann::ordered_json::array();
  for (const auto& [name, t] : ckpt.tensors()) {
    tensors.push_back({{"name", name}, {"dtype", dtype_name(t.dtype)}, {"shape", t.shape}});
  }
  nlohmann::ordered_json j;
  j["tensors"] = std::move(tensors);
  j["parameter_count"] = ckpt.parameter_count();
  nlohmann::ordered_json meta = nlohmann::ordered_json::object();
  for (const auto& [k, v] : ckpt.metadata()) meta[k] = v;
  j["metadata"] = std::move(meta);
  out << j.dump(2) << '\n';
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Task-vector model merging, quadruple scoring, and toy fine-tuning"};
  app.name("tvmerge");
  app.require_subcommand(1);
  app.fallthrough();

  bool quiet = false;
  std::uint64_t seed = 0;
  app.add_flag("--quiet,-q", quiet, "Suppress progress messages and warnings");
  app.add_option("--seed", seed, "Seed for every random draw (default 0)");

  MergeArgs merge;
  auto* merge_cmd = app.add_subcommand("merge", "Merge fine-tuned checkpoints into a base");
  merge_cmd->add_option("--base", merge.base, "Base checkpoint")->required();
  merge_cmd->add_option("--model", merge.models, "Fine-tuned checkpoint (repeatable)")
      ->required()
      ->expected(1, -1);
  merge_cmd->add_option("--alpha", merge.alpha,
                        "Percent of largest-magnitude deltas dropped per layer")
      ->capture_default_str();
  merge_cmd->add_option("--beta", merge.beta,
                        "Percent of smallest-magnitude deltas dropped per layer")
      ->capture_default_str();
  merge_cmd->add_option("--lambda", merge.lambda, "Scale of the merged task vector")
      ->capture_default_str();
  merge_cmd->add_option("--out", merge.out, "Output checkpoint")->required();
  merge_cmd->add_option("--stats", merge.stats,
                        "Write per-layer JSON stats {layer: {n, dropped_top, dropped_bottom, "
                        "agreement_rate, ...}}");
  merge_cmd->add_flag("--group-by-prefix", merge.group_by_prefix,
                      "Prune tensors sharing a name prefix (up to the last '.') as one layer");

  ScoreArgs sc;
  auto* score_cmd = app.add_subcommand(
      "score", "Hard/soft F1 of quadruple predictions; inputs are JSONL {\"id\", \"output\"}");
  score_cmd->add_option("--pred", sc.pred, "Predictions JSONL")->required();
  score_cmd->add_option("--gold", sc.gold, "Gold JSONL")->required();
  score_cmd->add_option("--report", sc.report, "Write the full report as JSON");
  score_cmd->add_option("--matching", sc.matching, "greedy (default) or maximum")
      ->capture_default_str();

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train-toy", "Fine-tune a tiny model on synthetic task A or B");
  train_cmd->add_option("--task", tr.task, "A or B")->required();
  train_cmd->add_option("--out", tr.out, "Output checkpoint")->required();
  train_cmd->add_option("--base", tr.base, "Pre-trained checkpoint (default: synth from --seed)");
  train_cmd->add_option("--epochs", tr.epochs)->capture_default_str();
  train_cmd->add_option("--lr", tr.lr, "AdamW learning rate")->capture_default_str();
  train_cmd->add_option("--reg-lambda", tr.reg_lambda, "L2 pull toward the base weights")
      ->capture_default_str();
  train_cmd->add_option("--weight-decay", tr.weight_decay, "Decoupled weight decay")
      ->capture_default_str();
  train_cmd->add_option("--batch-size", tr.batch_size)->capture_default_str();
  train_cmd->add_option("--samples", tr.samples, "Training set size")->capture_default_str();
  train_cmd->add_flag("--bias-correction", tr.bias_correction,
                      "Use bias-corrected moments (off: raw moments)");
  train_cmd->add_option("--dtype", tr.dtype, "F64, F32, or F16")->capture_default_str();

  SynthArgs sy;
  auto* synth_cmd = app.add_subcommand("synth", "Write a randomly initialised tiny base model");
  synth_cmd->add_option("--out", sy.out, "Output checkpoint")->required();
  synth_cmd->add_option("--input-dim", sy.input_dim)->capture_default_str();
  synth_cmd->add_option("--hidden-dim", sy.hidden_dim)->capture_default_str();
  synth_cmd->add_option("--dtype", sy.dtype, "F64, F32, or F16")->capture_default_str();

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval-toy", "Accuracy of a tiny model on fresh task data");
  eval_cmd->add_option("--model", ev.model, "Checkpoint to evaluate")->required();
  eval_cmd->add_option("--task", ev.task, "A or B")->required();
  eval_cmd->add_option("--samples", ev.samples)->capture_default_str();

  std::string inspect_path;
  auto* inspect_cmd = app.add_subcommand("inspect", "List tensors, shapes, dtypes as JSON");
  inspect_cmd->add_option("file", inspect_path, "Checkpoint file")->required();

  std::vector<const char*> argv;
  argv.push_back("tvmerge");
  for (const auto& a : args) argv.push_back(a.c_str());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? 0 : 2;
  }

  try {
    if (merge_cmd->parsed()) return run_merge(merge, out, quiet);
    if (score_cmd->parsed()) return run_score(sc, out, err, quiet);
    if (train_cmd->parsed()) return run_train(tr, seed, out, quiet);
    if (synth_cmd->parsed()) return run_synth(sy, seed, out, quiet);
    if (eval_cmd->parsed()) return run_eval(ev, seed, out);
    if (inspect_cmd->parsed()) return run_inspect(inspect_path, out);
  } catch (const CheckpointError& e) {
    err << "error: " << e.what() << '\n';
    return 3;
  } catch (const FormatError& e) {
    err << "error: " << e.what() << '\n';
    return 3;
  } catch (const IncompatibleError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 3;
  }
  err << app.help();
  return 2;
}

}  // namespace tvmerge::cli
