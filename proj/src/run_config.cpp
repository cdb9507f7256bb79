#include "fsnt/run_config.hpp"

#include <fstream>
#include <sstream>

#include "fsnt/errors.hpp"
#include "fsnt/hash.hpp"

namespace fsnt {

namespace fs = std::filesystem;

std::string tool_version() { return "0.1.0"; }

namespace {

nlohmann::json read_json(const fs::path& path, const char* what) {
  std::ifstream in(path);
  if (!in) throw ConfigError(std::string("cannot open ") + what + " " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string(what) + " " + path.string() + ": " + e.what());
  }
}

fs::path resolve(const fs::path& base, const std::string& p) {
  fs::path path(p);
  return path.is_absolute() ? path : base / path;
}

void require_file(const fs::path& p, const char* what) {
  if (!fs::is_regular_file(p)) {
    throw ConfigError(std::string(what) + " does not exist: " + p.string());
  }
}

}  // namespace

RunConfig RunConfig::load(const fs::path& path) {
  RunConfig c = from_json(read_json(path, "run config"), path.parent_path());
  c.source_path = path;
  return c;
}

RunConfig RunConfig::from_json(const nlohmann::json& doc, const fs::path& base_dir) {
  RunConfig c;
  c.document = doc;
  try {
    if (!doc.is_object()) throw ConfigError("run config must be an object");
    if (!doc.contains("datasets") || doc.at("datasets").empty()) {
      throw ConfigError("run config: no datasets listed");
    }
    for (const auto& d : doc.at("datasets")) {
      DatasetSource src;
      src.spec_path = resolve(base_dir, d.at("spec").get<std::string>());
      src.csv_path = resolve(base_dir, d.at("csv").get<std::string>());
      require_file(src.spec_path, "dataset spec");
      require_file(src.csv_path, "dataset csv");
      src.spec = load_spec(src.spec_path);
      c.datasets.push_back(std::move(src));
    }
    c.fusion_seed = doc.value("fusion_seed", c.fusion_seed);
    if (doc.contains("split")) {
      const auto& s = doc.at("split");
      c.train_fraction = s.value("train_fraction", c.train_fraction);
      c.split_seed = s.value("seed", c.split_seed);
    }
    if (!(c.train_fraction > 0.0 && c.train_fraction < 1.0)) {
      throw ConfigError("split.train_fraction must lie in (0, 1)");
    }
    if (doc.contains("preprocess")) {
      const auto& p = doc.at("preprocess");
      c.n_top = p.value("n_top", c.n_top);
      c.mode = parse_encoding_mode(p.value("mode", to_string(c.mode)));
      c.window = p.value("window", c.window);
    }
    if (c.n_top < 1) throw ConfigError("preprocess.n_top must be >= 1");
    if (c.window < 1) throw ConfigError("preprocess.window must be >= 1");

    nlohmann::json model_doc = doc.value("model", nlohmann::json::object());
    if (model_doc.contains("window") && model_doc.at("window").get<std::size_t>() != c.window) {
      throw ConfigError("model.window disagrees with preprocess.window");
    }
    model_doc["window"] = c.window;
    c.model = ModelConfig::from_json(model_doc);
    if (c.model.input_encoding == InputEncodingKind::categorical_embed_lookup &&
        c.mode != EncodingMode::integer) {
      throw ConfigError("the categorical_embed_lookup encoding needs preprocess.mode 'integer'");
    }
    c.train = TrainConfig::from_json(doc.value("train", nlohmann::json::object()));
    c.bench = BenchConfig::from_json(doc.value("bench", nlohmann::json::object()));
    if (doc.contains("grid")) c.grid = GridSpec::from_json(doc.at("grid"));
    c.seed = doc.value("seed", c.seed);
    c.output_dir = resolve(base_dir, doc.value("output_dir", std::string("out")));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("run config: ") + e.what());
  }

  const auto& first = c.datasets.front().spec;
  for (const auto& d : c.datasets) {
    if (d.spec.categorical_fields != first.categorical_fields ||
        d.spec.numerical_fields != first.numerical_fields) {
      throw ConfigError("dataset '" + d.spec.name + "' declares different feature fields than '" +
                        first.name + "'");
    }
  }
  return c;
}

void RunConfig::override_seed(std::uint64_t s) {
  seed = s;
  model.seed = s;
  train.seed = s;
  bench.seed = s;
}

std::string RunConfig::hash() const {
  nlohmann::json doc = document;
  doc["__effective_seeds"] = {{"seed", seed}, {"model", model.seed}, {"train", train.seed},
                              {"bench", bench.seed}};
  return sha256_hex(doc.dump());
}

PreparedData prepare_data(const RunConfig& config, const std::optional<PreprocessorState>& state) {
  std::vector<RawFlowTable> tables;
  for (const auto& d : config.datasets) tables.push_back(ingest_csv(d.csv_path, d.spec));
  RawFlowTable fused = fuse(tables, config.fusion_seed);
  auto [train_part, eval_part] = split(fused, config.train_fraction, config.split_seed);
  if (train_part.row_count() == 0 || eval_part.row_count() == 0) {
    throw DataError("split leaves an empty part (" + std::to_string(fused.row_count()) + " rows)");
  }
  PreparedData out;
  out.state = state ? *state
                    : fit(train_part, config.datasets.front().spec, config.n_top, config.mode);
  out.train_flows = train_part.row_count();
  out.eval_flows = eval_part.row_count();
  out.train = make_windows(transform(train_part, out.state), config.window);
  out.eval = make_windows(transform(eval_part, out.state), config.window);
  return out;
}

PreprocessorState load_preprocessor(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open preprocessor state " + path.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError("preprocessor state " + path.string() + ": " + e.what());
  }
  return PreprocessorState::from_json(doc);
}

void save_preprocessor(const fs::path& path, const PreprocessorState& state) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << state.to_json().dump(2) << '\n';
}

// ---- manifests -----------------------------------------------------------------

nlohmann::json Manifest::to_json() const {
  auto entries = [](const std::vector<ManifestEntry>& v) {
    nlohmann::json a = nlohmann::json::array();
    for (const auto& e : v) a.push_back({{"path", e.path}, {"sha256", e.sha256}});
    return a;
  };
  return {{"tool", "fsnt"},
          {"tool_version", tool_version},
          {"command", command},
          {"config_hash", config_hash},
          {"seeds", seeds},
          {"datasets", entries(datasets)},
          {"files", entries(files)}};
}

Manifest Manifest::from_json(const nlohmann::json& doc) {
  Manifest m;
  try {
    m.tool_version = doc.at("tool_version").get<std::string>();
    m.command = doc.at("command").get<std::string>();
    m.config_hash = doc.at("config_hash").get<std::string>();
    m.seeds = doc.at("seeds");
    for (const auto& e : doc.at("datasets")) {
      m.datasets.push_back({e.at("path").get<std::string>(), e.at("sha256").get<std::string>()});
    }
    for (const auto& e : doc.at("files")) {
      m.files.push_back({e.at("path").get<std::string>(), e.at("sha256").get<std::string>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("manifest: ") + e.what());
  }
  return m;
}

Manifest run_manifest(const fs::path& out_dir, const std::string& command,
                      const RunConfig* config, const std::vector<std::string>& files) {
  Manifest m;
  m.command = command;
  m.tool_version = tool_version();
  m.seeds = nlohmann::json::object();
  if (config) {
    m.config_hash = config->hash();
    m.seeds = {{"seed", config->seed},           {"fusion", config->fusion_seed},
               {"split", config->split_seed},    {"model", config->model.seed},
               {"train", config->train.seed},    {"bench", config->bench.seed}};
    for (const auto& d : config->datasets) {
      m.datasets.push_back({fs::absolute(d.csv_path).lexically_normal().string(),
                            sha256_file(d.csv_path)});
    }
  }
  for (const auto& f : files) m.files.push_back({f, sha256_file(out_dir / f)});
  std::ofstream out(out_dir / "manifest.json");
  if (!out) throw Error("cannot write manifest in " + out_dir.string());
  out << m.to_json().dump(2) << '\n';
  return m;
}

std::vector<std::string> verify_manifest(const fs::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw DataError("cannot open manifest " + manifest_path.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError("manifest " + manifest_path.string() + ": " + e.what());
  }
  const Manifest m = Manifest::from_json(doc);
  const fs::path dir = manifest_path.parent_path();
  std::vector<std::string> problems;
  auto check = [&](const ManifestEntry& e, const fs::path& p) {
    if (!fs::is_regular_file(p)) {
      problems.push_back("missing: " + e.path);
    } else if (sha256_file(p) != e.sha256) {
      problems.push_back("modified: " + e.path);
    }
  };
  for (const auto& e : m.files) check(e, dir / e.path);
  for (const auto& e : m.datasets) check(e, fs::path(e.path));
  return problems;
}

}  // namespace fsnt
