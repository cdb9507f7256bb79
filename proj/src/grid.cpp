#include "fsnt/grid.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

#include "fsnt/csv.hpp"
#include "fsnt/errors.hpp"
#include "fsnt/metrics.hpp"

namespace fsnt {

namespace {

template <typename T, typename F>
std::vector<T> parse_list(const nlohmann::json& doc, const char* key, F&& parse) {
  std::vector<T> out;
  for (const auto& v : doc.at(key)) out.push_back(parse(v));
  return out;
}

}  // namespace

void GridSpec::validate() const {
  if (input_encodings.empty() || block_types.empty() || layers.empty() || d_ff.empty() ||
      heads.empty() || classification_heads.empty() || learning_rates.empty()) {
    throw ConfigError("grid: every dimension needs at least one value");
  }
}

std::size_t GridSpec::cell_count() const {
  return input_encodings.size() * block_types.size() * layers.size() * d_ff.size() *
         heads.size() * classification_heads.size() * learning_rates.size();
}

nlohmann::json GridSpec::to_json() const {
  nlohmann::json doc;
  auto& enc = doc["input_encodings"] = nlohmann::json::array();
  for (auto e : input_encodings) enc.push_back(to_string(e));
  auto& bt = doc["block_types"] = nlohmann::json::array();
  for (auto b : block_types) bt.push_back(to_string(b));
  doc["layers"] = layers;
  doc["d_ff"] = d_ff;
  doc["heads"] = heads;
  auto& ch = doc["classification_heads"] = nlohmann::json::array();
  for (auto h : classification_heads) ch.push_back(to_string(h));
  doc["learning_rates"] = learning_rates;
  return doc;
}

GridSpec GridSpec::from_json(const nlohmann::json& doc) {
  GridSpec g;
  try {
    g.input_encodings = parse_list<InputEncodingKind>(
        doc, "input_encodings", [](const auto& v) { return parse_input_encoding(v.template get<std::string>()); });
    g.block_types = parse_list<BlockType>(
        doc, "block_types", [](const auto& v) { return parse_block_type(v.template get<std::string>()); });
    g.layers = doc.at("layers").get<std::vector<std::size_t>>();
    g.d_ff = doc.at("d_ff").get<std::vector<std::size_t>>();
    g.heads = doc.at("heads").get<std::vector<std::size_t>>();
    g.classification_heads = parse_list<HeadKind>(
        doc, "classification_heads", [](const auto& v) { return parse_head_kind(v.template get<std::string>()); });
    g.learning_rates = doc.at("learning_rates").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("grid spec: ") + e.what());
  }
  g.validate();
  return g;
}

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t cell, std::uint64_t repeat) {
  auto mix = [](std::uint64_t z) {
    z += 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  };
  return mix(mix(mix(master) ^ cell) ^ repeat);
}

std::vector<GridCell> enumerate_cells(const GridSpec& spec, const ModelConfig& base) {
  spec.validate();
  std::vector<GridCell> cells;
  for (auto enc : spec.input_encodings)
    for (auto bt : spec.block_types)
      for (auto l : spec.layers)
        for (auto ff : spec.d_ff)
          for (auto h : spec.heads)
            for (auto head : spec.classification_heads)
              for (double lr : spec.learning_rates) {
                GridCell c{base, lr};
                c.model.input_encoding = enc;
                c.model.block_type = bt;
                c.model.layers = l;
                c.model.d_ff = ff;
                c.model.heads = h;
                c.model.head = head;
                cells.push_back(c);
              }
  return cells;
}

namespace {

struct CellOutcome {
  bool valid = false;
  std::string reason;
  GridRow row;
};

CellOutcome run_cell(std::size_t index, const GridCell& cell, const FeatureLayout& layout,
                     const WindowSet& train_windows, const WindowSet& eval_windows,
                     const TrainConfig& base_train, std::uint64_t master_seed, Clock& clock) {
  CellOutcome out;
  try {
    if (!(cell.learning_rate > 0.0)) throw ConfigError("learning rate must be > 0");
    (void)Model::build(cell.model, layout);
  } catch (const ConfigError& e) {
    out.reason = e.what();
    return out;
  }
  out.valid = true;

  bool have_best = false;
  for (std::size_t r = 0; r < base_train.repeats; ++r) {
    const std::uint64_t seed = derive_seed(master_seed, index, r);
    ModelConfig mc = cell.model;
    mc.seed = seed;
    Model model = Model::build(mc, layout);
    TrainConfig tc = base_train;
    tc.learning_rate = cell.learning_rate;
    tc.seed = seed;
    TrainHooks hooks;
    hooks.clock = &clock;
    TrainResult tr = train(model, train_windows, eval_windows, tc, hooks);

    const auto start = clock.now();
    Evaluation ev = evaluate_full(model, eval_windows, tc.threshold);
    const double eval_seconds = clock.seconds_since(start);

    const bool better = !have_best || ev.report.f1 > out.row.f1 ||
                        (ev.report.f1 == out.row.f1 && ev.loss < out.row.eval_loss);
    if (!better) continue;
    have_best = true;
    GridRow& row = out.row;
    row.cell = index;
    row.config = cell;
    row.best_repeat = r;
    row.best_seed = seed;
    row.f1 = ev.report.f1;
    row.accuracy = ev.report.accuracy;
    row.false_alarm_rate = ev.report.false_alarm_rate;
    row.eval_loss = ev.loss;
    row.param_count = model.param_count();
    const double mean_step = std::accumulate(tr.step_seconds.begin(), tr.step_seconds.end(), 0.0) /
                             static_cast<double>(tr.step_seconds.size());
    row.train_flows_per_sec = mean_step > 0.0 ? static_cast<double>(tc.batch_size) / mean_step : 0.0;
    row.inference_flows_per_sec =
        eval_seconds > 0.0 ? static_cast<double>(eval_windows.size()) / eval_seconds : 0.0;
  }
  return out;
}

}  // namespace

GridResult grid_search(const GridSpec& spec, const ModelConfig& base_model,
                       const FeatureLayout& layout, const WindowSet& train_windows,
                       const WindowSet& eval_windows, const TrainConfig& train_config,
                       std::uint64_t master_seed, const GridOptions& options) {
  train_config.validate();
  const std::vector<GridCell> cells = enumerate_cells(spec, base_model);
  Clock& clock = options.clock ? *options.clock : default_clock();
  std::vector<CellOutcome> outcomes(cells.size());

  const std::size_t workers = std::clamp<std::size_t>(options.threads, 1, cells.size());
  std::atomic<std::size_t> next{0};
  std::mutex log_mutex;
  std::exception_ptr failure;
  auto worker = [&] {
    for (std::size_t i = next++; i < cells.size(); i = next++) {
      try {
        outcomes[i] = run_cell(i, cells[i], layout, train_windows, eval_windows, train_config,
                               master_seed, clock);
      } catch (...) {
        std::lock_guard lock(log_mutex);
        if (!failure) failure = std::current_exception();
        next = cells.size();
        return;
      }
      if (options.log) {
        std::lock_guard lock(log_mutex);
        const auto& o = outcomes[i];
        options.log("cell " + std::to_string(i) + ": " +
                    (o.valid ? "f1 " + format_real(o.row.f1) : "skipped (" + o.reason + ")"));
      }
    }
  };
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);

  GridResult result;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (outcomes[i].valid) {
      result.rows.push_back(outcomes[i].row);
    } else {
      result.skipped.push_back({i, cells[i], outcomes[i].reason});
    }
  }
  if (result.rows.empty()) throw ConfigError("grid: every cell is invalid");
  return result;
}

std::string GridResult::to_csv() const {
  std::ostringstream out;
  csv::write_row(out, {"cell", "input_encoding", "block_type", "layers", "d_model", "d_ff",
                       "heads", "head", "learning_rate", "best_repeat", "best_seed", "f1",
                       "accuracy", "false_alarm_rate", "eval_loss", "param_count",
                       "train_flows_per_sec", "inference_flows_per_sec"});
  for (const auto& r : rows) {
    const auto& m = r.config.model;
    csv::write_row(out, {std::to_string(r.cell), to_string(m.input_encoding),
                         to_string(m.block_type), std::to_string(m.layers),
                         std::to_string(m.d_model), std::to_string(m.d_ff),
                         std::to_string(m.heads), to_string(m.head),
                         format_real(r.config.learning_rate), std::to_string(r.best_repeat),
                         std::to_string(r.best_seed), format_real(r.f1),
                         format_real(r.accuracy), format_real(r.false_alarm_rate),
                         format_real(r.eval_loss), std::to_string(r.param_count),
                         format_real(r.train_flows_per_sec),
                         format_real(r.inference_flows_per_sec)});
  }
  return out.str();
}

nlohmann::json GridResult::to_json() const {
  nlohmann::json doc;
  doc["rows"] = nlohmann::json::array();
  for (const auto& r : rows) {
    doc["rows"].push_back({{"cell", r.cell},
                           {"model", r.config.model.to_json()},
                           {"learning_rate", r.config.learning_rate},
                           {"best_repeat", r.best_repeat},
                           {"best_seed", r.best_seed},
                           {"f1", r.f1},
                           {"accuracy", r.accuracy},
                           {"false_alarm_rate", r.false_alarm_rate},
                           {"eval_loss", r.eval_loss},
                           {"param_count", r.param_count},
                           {"train_flows_per_sec", r.train_flows_per_sec},
                           {"inference_flows_per_sec", r.inference_flows_per_sec}});
  }
  doc["skipped"] = nlohmann::json::array();
  for (const auto& s : skipped) {
    doc["skipped"].push_back({{"cell", s.cell},
                              {"model", s.config.model.to_json()},
                              {"learning_rate", s.config.learning_rate},
                              {"reason", s.reason}});
  }
  return doc;
}

}  // namespace fsnt
