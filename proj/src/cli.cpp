#include "fsnt/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "fsnt/bench.hpp"
#include "fsnt/checkpoint.hpp"
#include "fsnt/csv.hpp"
#include "fsnt/errors.hpp"
#include "fsnt/grid.hpp"
#include "fsnt/metrics.hpp"
#include "fsnt/run_config.hpp"
#include "fsnt/training.hpp"

namespace fsnt::cli {

namespace fs = std::filesystem;

namespace {

struct Options {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::size_t threads = 1;
  std::optional<double> threshold;
  std::string checkpoint;
  std::string preprocessor;
  std::string input;
  std::string spec;
  std::string manifest;
  std::string grid_csv;
  std::string metrics;
};

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

RunConfig load_config(const Options& o) {
  if (o.config.empty()) throw UsageError("--config is required");
  RunConfig c = RunConfig::load(o.config);
  if (o.seed) c.override_seed(*o.seed);
  return c;
}

fs::path output_dir(const Options& o, const RunConfig* c) {
  fs::path dir = !o.out.empty() ? fs::path(o.out) : c ? c->output_dir : fs::path();
  if (dir.empty()) throw UsageError("--out is required");
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw Error("cannot create output directory " + dir.string());
  return dir;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

double resolve_threshold(const Options& o, double fallback) {
  const double t = o.threshold.value_or(fallback);
  if (!(t > 0.0 && t < 1.0)) throw ConfigError("--threshold must lie in (0, 1)");
  return t;
}

// ---- subcommands ------------------------------------------------------------------

int cmd_validate(const Options& o, std::ostream& out) {
  if (o.config.empty() && o.manifest.empty() && o.spec.empty()) {
    throw UsageError("validate needs --config, --spec or --manifest");
  }
  if (!o.spec.empty()) {
    const DatasetSpec s = load_spec(o.spec);
    out << fmt::format("OK spec '{}': {} categorical, {} numerical fields\n", s.name,
                       s.categorical_fields.size(), s.numerical_fields.size());
  }
  if (!o.config.empty()) {
    const RunConfig c = load_config(o);
    std::string names;
    for (const auto& d : c.datasets) names += (names.empty() ? "" : ", ") + d.spec.name;
    out << fmt::format("OK config: datasets [{}], window {}, {} {}x{} d_model {}, head {}{}\n",
                       names, c.window, to_string(c.model.block_type), c.model.layers,
                       c.model.heads, c.model.d_model, to_string(c.model.head),
                       c.grid ? fmt::format(", grid of {} cells", c.grid->cell_count()) : "");
  }
  if (!o.manifest.empty()) {
    const auto problems = verify_manifest(o.manifest);
    if (!problems.empty()) {
      std::string msg = "manifest verification failed:";
      for (const auto& p : problems) msg += "\n  " + p;
      throw DataError(msg);
    }
    out << "OK manifest: all files match\n";
  }
  return kExitOk;
}

int cmd_preprocess(const Options& o, std::ostream& out) {
  const RunConfig c = load_config(o);
  const fs::path dir = output_dir(o, &c);
  const PreparedData data = prepare_data(c);
  save_preprocessor(dir / "preprocessor.json", data.state);
  const nlohmann::json summary = {{"feature_width", data.state.feature_width},
                                  {"train_flows", data.train_flows},
                                  {"eval_flows", data.eval_flows},
                                  {"window", c.window},
                                  {"preprocessor_hash", data.state.hash()}};
  write_text(dir / "preprocess.json", summary.dump(2) + "\n");
  run_manifest(dir, "preprocess", &c, {"preprocessor.json", "preprocess.json"});
  out << fmt::format("preprocessed {} train / {} eval flows, feature width {}\n", data.train_flows,
                     data.eval_flows, data.state.feature_width);
  return kExitOk;
}

void write_metrics(const fs::path& dir, const MetricsReport& report) {
  write_text(dir / "metrics.json", report_to_json(report).dump(2) + "\n");
  write_text(dir / "confusion.csv", render_confusion_csv(report));
}

int cmd_train(const Options& o, std::ostream& out) {
  const RunConfig c = load_config(o);
  const fs::path dir = output_dir(o, &c);
  const PreparedData data = prepare_data(c);
  save_preprocessor(dir / "preprocessor.json", data.state);

  Model model = Model::build(c.model, FeatureLayout::from_state(data.state));
  std::ofstream epochs(dir / "epochs.jsonl", std::ios::trunc);
  if (!epochs) throw Error("cannot write epochs.jsonl");
  TrainHooks hooks;
  hooks.on_epoch = [&](const EpochLog& log, const Classifier&) {
    epochs << log.to_json().dump() << '\n' << std::flush;
    out << fmt::format("epoch {:>3}  train_loss {:.6f}  eval_loss {:.6f}  f1 {:.4f}\n", log.epoch,
                       log.train_loss, log.eval_loss, log.eval_metrics.f1);
  };
  const TrainResult result = train(model, data.train, data.eval, c.train, hooks);
  epochs.close();

  const MetricsReport report = evaluate(model, data.eval, c.train.threshold);
  write_metrics(dir, report);
  write_checkpoint_file(dir / "model.ckpt", model, data.state.hash());
  const nlohmann::json summary = {{"best_epoch", result.best_epoch},
                                  {"epochs_run", result.epochs.size()},
                                  {"stopped_early", result.stopped_early},
                                  {"optimizer_steps", result.optimizer_steps},
                                  {"param_count", model.param_count()},
                                  {"model", c.model.to_json()},
                                  {"train", c.train.to_json()}};
  write_text(dir / "train.json", summary.dump(2) + "\n");
  run_manifest(dir, "train", &c,
               {"preprocessor.json", "epochs.jsonl", "metrics.json", "confusion.csv",
                "model.ckpt", "train.json"});
  out << fmt::format("best epoch {}: f1 {} accuracy {} far {}\n", result.best_epoch,
                     format_real(report.f1), format_real(report.accuracy),
                     format_real(report.false_alarm_rate));
  return kExitOk;
}

int cmd_grid(const Options& o, std::ostream& out, std::ostream& err) {
  const RunConfig c = load_config(o);
  if (!c.grid) throw ConfigError("run config has no 'grid' section");
  if (o.threads < 1) throw UsageError("--threads must be >= 1");
  const fs::path dir = output_dir(o, &c);
  const PreparedData data = prepare_data(c);
  save_preprocessor(dir / "preprocessor.json", data.state);
  GridOptions options;
  options.threads = o.threads;
  options.log = [&](const std::string& line) { err << line << '\n'; };
  const GridResult result = grid_search(*c.grid, c.model, FeatureLayout::from_state(data.state),
                                        data.train, data.eval, c.train, c.seed, options);
  write_text(dir / "grid.csv", result.to_csv());
  write_text(dir / "grid.json", result.to_json().dump(2) + "\n");
  run_manifest(dir, "grid", &c, {"preprocessor.json", "grid.csv", "grid.json"});
  out << fmt::format("{} cells trained, {} skipped\n", result.rows.size(), result.skipped.size());
  return kExitOk;
}

fs::path preprocessor_path(const Options& o) {
  if (!o.preprocessor.empty()) return o.preprocessor;
  return fs::path(o.checkpoint).parent_path() / "preprocessor.json";
}

LoadedCheckpoint load_model(const Options& o, const PreprocessorState& state, std::ostream& err) {
  if (o.checkpoint.empty()) throw UsageError("--checkpoint is required");
  LoadedCheckpoint ck = read_checkpoint_file(o.checkpoint, state.hash());
  for (const auto& w : ck.warnings) err << "warning: " << w << '\n';
  return ck;
}

int cmd_eval(const Options& o, std::ostream& out, std::ostream& err) {
  const RunConfig c = load_config(o);
  const PreprocessorState state = load_preprocessor(preprocessor_path(o));
  const LoadedCheckpoint ck = load_model(o, state, err);
  const PreparedData data = prepare_data(c, state);
  const MetricsReport report = evaluate(ck.model, data.eval, resolve_threshold(o, c.train.threshold));
  if (!o.out.empty()) {
    const fs::path dir = output_dir(o, nullptr);
    write_metrics(dir, report);
    run_manifest(dir, "eval", &c, {"metrics.json", "confusion.csv"});
  }
  out << report_to_json(report).dump(2) << '\n';
  return kExitOk;
}

int cmd_bench(const Options& o, std::ostream& out, std::ostream& err) {
  const RunConfig c = load_config(o);
  const fs::path dir = output_dir(o, &c);
  std::optional<PreprocessorState> state;
  if (!o.checkpoint.empty()) state = load_preprocessor(preprocessor_path(o));
  const PreparedData data = prepare_data(c, state);
  const Model model = o.checkpoint.empty()
                          ? Model::build(c.model, FeatureLayout::from_state(data.state))
                          : load_model(o, data.state, err).model;
  const BenchReport report = run_bench(model, data.train, c.bench, default_clock());
  write_text(dir / "bench.json", report.to_json().dump(2) + "\n");
  write_text(dir / "bench.csv", report.to_csv());
  run_manifest(dir, "bench", &c, {"bench.json", "bench.csv"});
  out << fmt::format("train {:.1f} flows/s, inference {:.1f} flows/s, {} outlier batches\n",
                     report.train_flows_per_sec, report.inference_flows_per_sec,
                     report.outlier_batch_indices.size());
  return kExitOk;
}

int cmd_predict(const Options& o, std::ostream& out, std::ostream& err) {
  if (o.input.empty() || o.spec.empty()) throw UsageError("predict needs --input and --spec");
  const PreprocessorState state = load_preprocessor(preprocessor_path(o));
  const LoadedCheckpoint ck = load_model(o, state, err);
  const DatasetSpec spec = load_spec(o.spec);
  const RawFlowTable table = ingest_csv(o.input, spec, IngestOptions{false});
  if (table.row_count() == 0) throw DataError("predict: input has no flows");
  const WindowSet windows = make_windows(transform(table, state), ck.model.window());
  const double threshold = resolve_threshold(o, 0.5);
  const std::vector<double> probs = predict(ck.model, windows);

  std::ostringstream csv_text;
  csv::write_row(csv_text, {"row", "probability", "verdict"});
  std::size_t attacks = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const bool attack = probs[i] >= threshold;
    attacks += attack;
    csv::write_row(csv_text, {std::to_string(i), format_real(probs[i]), attack ? "attack" : "benign"});
  }
  const fs::path dir = output_dir(o, nullptr);
  write_text(dir / "predictions.csv", csv_text.str());
  run_manifest(dir, "predict", nullptr, {"predictions.csv"});
  out << fmt::format("{} flows, {} flagged as attack\n", probs.size(), attacks);
  return kExitOk;
}

int cmd_report(const Options& o, std::ostream& out) {
  if (o.grid_csv.empty() && o.metrics.empty()) throw UsageError("report needs --grid or --metrics");
  const fs::path dir = output_dir(o, nullptr);
  std::vector<std::string> written;
  if (!o.metrics.empty()) {
    std::ifstream in(o.metrics);
    if (!in) throw DataError("cannot open " + o.metrics);
    MetricsReport report;
    try {
      report = report_from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::exception& e) {
      throw DataError("metrics " + o.metrics + ": " + e.what());
    }
    const std::string matrix = render_confusion_csv(report);
    write_text(dir / "confusion_matrix.csv", matrix);
    written.push_back("confusion_matrix.csv");
    out << matrix;
  }
  if (!o.grid_csv.empty()) {
    std::ifstream in(o.grid_csv);
    if (!in) throw DataError("cannot open " + o.grid_csv);
    csv::Reader reader(in);
    std::vector<std::string> header;
    std::vector<std::string> fields;
    if (!reader.next(header)) throw DataError("grid csv is empty");
    auto col = [&](const std::string& name) {
      auto it = std::find(header.begin(), header.end(), name);
      if (it == header.end()) throw DataError("grid csv has no '" + name + "' column");
      return static_cast<std::size_t>(it - header.begin());
    };
    const std::size_t head_col = col("head");
    const std::size_t enc_col = col("input_encoding");
    const std::size_t f1_col = col("f1");
    struct Agg {
      std::size_t cells = 0;
      double best = 0.0;
      double sum = 0.0;
    };
    std::map<std::pair<std::string, std::string>, Agg> by_head;
    while (reader.next(fields)) {
      if (fields.size() != header.size()) {
        throw DataError(fmt::format("grid csv line {}: expected {} fields", reader.line(),
                                    header.size()));
      }
      double f1 = 0.0;
      try {
        f1 = std::stod(fields[f1_col]);
      } catch (const std::exception&) {
        throw DataError(fmt::format("grid csv line {}: bad f1 '{}'", reader.line(), fields[f1_col]));
      }
      Agg& a = by_head[{fields[head_col], fields[enc_col]}];
      a.best = a.cells == 0 ? f1 : std::max(a.best, f1);
      a.sum += f1;
      ++a.cells;
    }
    std::ostringstream table;
    csv::write_row(table, {"head", "input_encoding", "cells", "best_f1", "mean_f1"});
    for (const auto& [key, a] : by_head) {
      csv::write_row(table, {key.first, key.second, std::to_string(a.cells), format_real(a.best),
                             format_real(a.sum / static_cast<double>(a.cells))});
    }
    write_text(dir / "head_f1.csv", table.str());
    written.push_back("head_f1.csv");
    out << table.str();
  }
  run_manifest(dir, "report", nullptr, written);
  return kExitOk;
}

}  // namespace

int command_dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Flow-sequence transformer for DDoS detection", "fsnt"};
  app.require_subcommand(1);
  Options o;

  auto add_config = [&](CLI::App* s) { s->add_option("--config", o.config, "Run config (JSON)"); };
  auto add_out = [&](CLI::App* s) { s->add_option("--out", o.out, "Output directory"); };
  auto add_seed = [&](CLI::App* s) { s->add_option("--seed", o.seed, "Master seed override"); };
  auto add_ckpt = [&](CLI::App* s) {
    s->add_option("--checkpoint", o.checkpoint, "Model checkpoint");
    s->add_option("--preprocessor", o.preprocessor,
                  "Preprocessor state (default: next to the checkpoint)");
  };

  auto* validate = app.add_subcommand("validate", "Check a run config, dataset spec or manifest");
  add_config(validate);
  validate->add_option("--spec", o.spec, "Dataset spec (JSON)");
  validate->add_option("--manifest", o.manifest, "Verify every file hash in a manifest");

  auto* preprocess = app.add_subcommand("preprocess", "Fit the preprocessor and persist its state");
  add_config(preprocess);
  add_out(preprocess);
  add_seed(preprocess);

  auto* train_cmd = app.add_subcommand("train", "Train one model");
  add_config(train_cmd);
  add_out(train_cmd);
  add_seed(train_cmd);

  auto* grid = app.add_subcommand("grid", "Grid search over the config's grid section");
  add_config(grid);
  add_out(grid);
  add_seed(grid);
  grid->add_option("--threads", o.threads, "Parallel grid cells");

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on the eval split");
  add_config(eval);
  add_out(eval);
  add_ckpt(eval);
  eval->add_option("--threshold", o.threshold, "Attack threshold on p");

  auto* bench = app.add_subcommand("bench", "Measure train and inference throughput");
  add_config(bench);
  add_out(bench);
  add_seed(bench);
  add_ckpt(bench);

  auto* predict_cmd = app.add_subcommand("predict", "Per-flow verdicts for a flow CSV");
  add_out(predict_cmd);
  add_ckpt(predict_cmd);
  predict_cmd->add_option("--input", o.input, "Flow CSV");
  predict_cmd->add_option("--spec", o.spec, "Dataset spec for the input");
  predict_cmd->add_option("--threshold", o.threshold, "Attack threshold on p");

  auto* report = app.add_subcommand("report", "Render confusion matrix and per-head F1 tables");
  add_out(report);
  report->add_option("--grid", o.grid_csv, "grid.csv from a grid run");
  report->add_option("--metrics", o.metrics, "metrics.json from train or eval");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  }

  try {
    if (validate->parsed()) return cmd_validate(o, out);
    if (preprocess->parsed()) return cmd_preprocess(o, out);
    if (train_cmd->parsed()) return cmd_train(o, out);
    if (grid->parsed()) return cmd_grid(o, out, err);
    if (eval->parsed()) return cmd_eval(o, out, err);
    if (bench->parsed()) return cmd_bench(o, out, err);
    if (predict_cmd->parsed()) return cmd_predict(o, out, err);
    if (report->parsed()) return cmd_report(o, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitData;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const FormatError& e) {
    err << "format error: " << e.what() << '\n';
    return kExitData;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  err << app.help();
  return kExitUsage;
}

}  // namespace fsnt::cli
