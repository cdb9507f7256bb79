#include "fsnt/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "fsnt/errors.hpp"

namespace fsnt {

namespace {

constexpr char kMagic[4] = {'F', 'S', 'N', 'T'};

template <typename T>
void put_le(std::string& out, T value) {
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
  const U bits = std::bit_cast<U>(value);
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
  }
}

class Cursor {
 public:
  explicit Cursor(std::string_view bytes) : bytes_(bytes) {}

  template <typename T>
  T get(const char* what) {
    using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
    need(sizeof(U), what);
    U bits = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      bits |= static_cast<U>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(U);
    return std::bit_cast<T>(bits);
  }

  std::string_view take(std::size_t n, const char* what) {
    need(n, what);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool at_end() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) {
      throw FormatError(std::string("checkpoint truncated while reading ") + what);
    }
  }

  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string save_checkpoint(const Model& model, const std::string& preprocessor_hash) {
  nlohmann::json header;
  header["kind"] = "transformer";
  header["config"] = model.config().to_json();
  header["feature_width"] = model.layout().width;
  header["cardinalities"] = model.layout().cardinalities;
  header["preprocessor_hash"] = preprocessor_hash;
  const std::string header_text = header.dump();

  std::string out(kMagic, sizeof(kMagic));
  put_le(out, kCheckpointVersion);
  put_le(out, static_cast<std::uint32_t>(header_text.size()));
  out += header_text;
  put_le(out, static_cast<std::uint32_t>(model.params().size()));
  for (const auto& [name, var] : model.params()) {
    put_le(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    const Tensor& t = var.value();
    put_le(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t e : t.shape()) put_le(out, static_cast<std::uint64_t>(e));
    for (double v : t.values()) put_le(out, v);
  }
  return out;
}

LoadedCheckpoint load_checkpoint(std::string_view bytes,
                                 const std::string& expected_preprocessor_hash) {
  Cursor cur(bytes);
  if (cur.take(sizeof(kMagic), "magic") != std::string_view(kMagic, sizeof(kMagic))) {
    throw FormatError("not a checkpoint (bad magic)");
  }
  const auto version = cur.get<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint version " + std::to_string(version) +
                      " is not supported (expected " + std::to_string(kCheckpointVersion) + ")");
  }
  const auto header_len = cur.get<std::uint32_t>("header length");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(cur.take(header_len, "header"));
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("checkpoint header: ") + e.what());
  }

  ModelConfig config;
  FeatureLayout layout;
  std::string stored_hash;
  try {
    if (header.at("kind") != "transformer") throw FormatError("unsupported checkpoint kind");
    config = ModelConfig::from_json(header.at("config"));
    layout.width = header.at("feature_width").get<std::size_t>();
    layout.cardinalities = header.at("cardinalities").get<std::vector<std::size_t>>();
    stored_hash = header.at("preprocessor_hash").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint header: ") + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint config: ") + e.what());
  }

  Model model = Model::build(config, layout);
  auto& params = model.params();
  const auto count = cur.get<std::uint32_t>("tensor count");
  if (count != params.size()) {
    throw FormatError("checkpoint holds " + std::to_string(count) + " tensors, config implies " +
                      std::to_string(params.size()));
  }
  std::size_t i = 0;
  for (auto& [name, var] : params) {
    const auto name_len = cur.get<std::uint32_t>("tensor name length");
    const std::string_view stored_name = cur.take(name_len, "tensor name");
    if (stored_name != name) {
      throw FormatError("checkpoint tensor " + std::to_string(i) + " is '" +
                        std::string(stored_name) + "', expected '" + name + "'");
    }
    const auto rank = cur.get<std::uint32_t>("tensor rank");
    Shape shape;
    for (std::uint32_t r = 0; r < rank; ++r) {
      shape.push_back(static_cast<std::size_t>(cur.get<std::uint64_t>("tensor extent")));
    }
    if (shape != var.shape()) {
      throw FormatError("checkpoint tensor '" + name + "' has shape " + shape_str(shape) +
                        ", config implies " + shape_str(var.shape()));
    }
    Tensor& t = var.mutable_value();
    for (double& v : t.values()) v = cur.get<double>("tensor values");
    ++i;
  }
  if (!cur.at_end()) throw FormatError("checkpoint has trailing bytes");

  LoadedCheckpoint loaded{std::move(model), stored_hash, {}};
  if (!expected_preprocessor_hash.empty() && expected_preprocessor_hash != stored_hash) {
    loaded.warnings.push_back("checkpoint was trained against preprocessor " + stored_hash +
                              " but " + expected_preprocessor_hash + " was supplied");
  }
  return loaded;
}

void write_checkpoint_file(const std::filesystem::path& path, const Model& model,
                           const std::string& preprocessor_hash) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write checkpoint " + path.string());
  const std::string bytes = save_checkpoint(model, preprocessor_hash);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

LoadedCheckpoint read_checkpoint_file(const std::filesystem::path& path,
                                      const std::string& expected_preprocessor_hash) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read checkpoint " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return load_checkpoint(buf.str(), expected_preprocessor_hash);
}

}  // namespace fsnt
