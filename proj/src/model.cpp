#include "fsnt/model.hpp"

#include <algorithm>
#include <cmath>
#include <cctype>
#include <random>

#include "fsnt/errors.hpp"

namespace fsnt {

// ---- enum names ---------------------------------------------------------------

namespace {

template <typename E, std::size_t N>
E parse_enum(const std::string& s, const std::pair<E, const char*> (&table)[N],
             const char* what) {
  for (const auto& [value, name] : table) {
    if (s == name) return value;
  }
  std::string options;
  for (const auto& [value, name] : table) options += (options.empty() ? "" : ", ") + std::string(name);
  throw ConfigError("unknown " + std::string(what) + " '" + s + "' (expected one of: " + options + ")");
}

template <typename E, std::size_t N>
std::string enum_name(E v, const std::pair<E, const char*> (&table)[N]) {
  for (const auto& [value, name] : table) {
    if (v == value) return name;
  }
  return "?";
}

constexpr std::pair<BlockType, const char*> kBlockNames[] = {
    {BlockType::encoder, "encoder"}, {BlockType::decoder, "decoder"}};
constexpr std::pair<InputEncodingKind, const char*> kEncodingNames[] = {
    {InputEncodingKind::none, "none"},
    {InputEncodingKind::record_projection, "record_projection"},
    {InputEncodingKind::record_embed_dense, "record_embed_dense"},
    {InputEncodingKind::categorical_embed_lookup, "categorical_embed_lookup"}};
constexpr std::pair<HeadKind, const char*> kHeadNames[] = {
    {HeadKind::last_token, "last_token"},
    {HeadKind::flatten, "flatten"},
    {HeadKind::global_avg_pool, "global_avg_pool"},
    {HeadKind::featurewise_embedding, "featurewise_embedding"},
    {HeadKind::featurewise_projection, "featurewise_projection"},
    {HeadKind::cls_token, "cls_token"}};

}  // namespace

std::string to_string(BlockType v) { return enum_name(v, kBlockNames); }
std::string to_string(InputEncodingKind v) { return enum_name(v, kEncodingNames); }
std::string to_string(HeadKind v) { return enum_name(v, kHeadNames); }
BlockType parse_block_type(const std::string& s) { return parse_enum(s, kBlockNames, "block type"); }
InputEncodingKind parse_input_encoding(const std::string& s) {
  return parse_enum(s, kEncodingNames, "input encoding");
}
HeadKind parse_head_kind(const std::string& s) { return parse_enum(s, kHeadNames, "head kind"); }

// ---- config -------------------------------------------------------------------

void ModelConfig::validate() const {
  if (layers < 1) throw ConfigError("model: layers must be >= 1");
  if (heads < 1) throw ConfigError("model: heads must be >= 1");
  if (d_model < 1 || d_ff < 1 || mlp_hidden < 1) {
    throw ConfigError("model: d_model, d_ff and mlp_hidden must be >= 1");
  }
  if (d_model % heads != 0) {
    throw ConfigError("model: d_model " + std::to_string(d_model) +
                      " is not divisible by " + std::to_string(heads) + " heads");
  }
  if (window < 1) throw ConfigError("model: window must be >= 1");
  if (input_encoding == InputEncodingKind::categorical_embed_lookup && embed_dim < 1) {
    throw ConfigError("model: embed_dim must be >= 1 for the lookup encoding");
  }
}

std::size_t ModelConfig::sequence_length() const {
  return window + (head == HeadKind::cls_token ? 1 : 0);
}

nlohmann::json ModelConfig::to_json() const {
  return {{"block_type", to_string(block_type)},
          {"layers", layers},
          {"heads", heads},
          {"d_model", d_model},
          {"d_ff", d_ff},
          {"input_encoding", to_string(input_encoding)},
          {"head", to_string(head)},
          {"window", window},
          {"embed_dim", embed_dim},
          {"mlp_hidden", mlp_hidden},
          {"seed", seed}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& doc) {
  ModelConfig c;
  try {
    c.block_type = parse_block_type(doc.value("block_type", to_string(c.block_type)));
    c.layers = doc.value("layers", c.layers);
    c.heads = doc.value("heads", c.heads);
    c.d_model = doc.value("d_model", c.d_model);
    c.d_ff = doc.value("d_ff", c.d_ff);
    c.input_encoding = parse_input_encoding(doc.value("input_encoding", to_string(c.input_encoding)));
    c.head = parse_head_kind(doc.value("head", to_string(c.head)));
    c.window = doc.value("window", c.window);
    c.embed_dim = doc.value("embed_dim", c.embed_dim);
    c.mlp_hidden = doc.value("mlp_hidden", c.mlp_hidden);
    c.seed = doc.value("seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
  c.validate();
  return c;
}

FeatureLayout FeatureLayout::from_state(const PreprocessorState& state) {
  return {state.feature_width, state.cardinalities()};
}

// ---- batches -------------------------------------------------------------------

Batch make_batch(const WindowSet& windows, std::span<const std::size_t> indices) {
  Batch b;
  b.size = indices.size();
  b.window = windows.window();
  const std::size_t per = windows.window() * windows.width();
  b.features = Tensor({b.size * b.window, windows.width()});
  b.labels.reserve(b.size);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    windows.copy_features(indices[i], b.features.data() + i * per);
    b.labels.push_back(windows.label(indices[i]));
  }
  return b;
}

Batch make_batch(const EncodedWindow& window) {
  Batch b;
  b.size = 1;
  b.window = window.features.rows();
  b.features = window.features.reshaped({window.features.rows(), window.features.cols()});
  b.labels = {window.label};
  return b;
}

// ---- build ---------------------------------------------------------------------

namespace {

class Initializer {
 public:
  explicit Initializer(std::uint64_t seed) : rng_(seed) {}

  Tensor glorot(std::size_t fan_in, std::size_t fan_out) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    Tensor t({fan_in, fan_out});
    for (double& v : t.values()) v = dist(rng_);
    return t;
  }

  Tensor normal(std::size_t rows, std::size_t cols, double stddev) {
    std::normal_distribution<double> dist(0.0, stddev);
    Tensor t({rows, cols});
    for (double& v : t.values()) v = dist(rng_);
    return t;
  }

 private:
  std::mt19937_64 rng_;
};

std::string layer_prefix(std::size_t l) { return "layer" + std::to_string(l) + "."; }

std::size_t lookup_input_width(const ModelConfig& c, const FeatureLayout& layout) {
  const std::size_t n_cat = layout.cardinalities.size();
  return n_cat * c.embed_dim + (layout.width - n_cat);
}

void validate_against_layout(const ModelConfig& c, const FeatureLayout& layout) {
  c.validate();
  if (layout.width == 0) throw ConfigError("model: feature width must be >= 1");
  if (c.input_encoding == InputEncodingKind::none && layout.width > c.d_model) {
    throw ConfigError("model: feature width " + std::to_string(layout.width) +
                      " exceeds d_model " + std::to_string(c.d_model) +
                      " under the 'none' input encoding");
  }
  if (c.input_encoding == InputEncodingKind::categorical_embed_lookup) {
    if (layout.cardinalities.empty()) {
      throw ConfigError("model: lookup encoding needs at least one categorical field");
    }
    if (layout.cardinalities.size() > layout.width) {
      throw ConfigError("model: more categorical fields than feature columns");
    }
  }
}

}  // namespace

Model Model::build(const ModelConfig& config, const FeatureLayout& layout) {
  validate_against_layout(config, layout);
  Model m;
  m.config_ = config;
  m.layout_ = layout;
  Initializer init(config.seed);
  auto& p = m.params_;
  const std::size_t d = config.d_model;
  const std::size_t f = layout.width;
  const std::size_t s = config.sequence_length();

  switch (config.input_encoding) {
    case InputEncodingKind::none:
      break;
    case InputEncodingKind::record_projection:
      p.add("enc.W", init.glorot(f, d));
      p.add("enc.b", Tensor({d}, 0.0));
      break;
    case InputEncodingKind::record_embed_dense:
      p.add("enc.W1", init.glorot(f, d));
      p.add("enc.b1", Tensor({d}, 0.0));
      p.add("enc.W2", init.glorot(d, d));
      p.add("enc.b2", Tensor({d}, 0.0));
      break;
    case InputEncodingKind::categorical_embed_lookup:
      for (std::size_t i = 0; i < layout.cardinalities.size(); ++i) {
        p.add("enc.emb" + std::to_string(i), init.glorot(layout.cardinalities[i], config.embed_dim));
      }
      p.add("enc.W", init.glorot(lookup_input_width(config, layout), d));
      p.add("enc.b", Tensor({d}, 0.0));
      break;
  }
  if (config.head == HeadKind::cls_token) p.add("cls", init.normal(1, d, 0.02));
  p.add("pos", init.normal(s, d, 0.02));

  for (std::size_t l = 0; l < config.layers; ++l) {
    const std::string pre = layer_prefix(l);
    for (const char* name : {"Wq", "Wk", "Wv", "Wo"}) {
      p.add(pre + "attn." + name, init.glorot(d, d));
      p.add(pre + "attn.b" + std::string(1, static_cast<char>(std::tolower(name[1]))),
            Tensor({d}, 0.0));
    }
    p.add(pre + "ln1.gamma", Tensor({d}, 1.0));
    p.add(pre + "ln1.beta", Tensor({d}, 0.0));
    p.add(pre + "ffn.W1", init.glorot(d, config.d_ff));
    p.add(pre + "ffn.b1", Tensor({config.d_ff}, 0.0));
    p.add(pre + "ffn.W2", init.glorot(config.d_ff, d));
    p.add(pre + "ffn.b2", Tensor({d}, 0.0));
    p.add(pre + "ln2.gamma", Tensor({d}, 1.0));
    p.add(pre + "ln2.beta", Tensor({d}, 0.0));
  }

  std::size_t v_dim = d;
  switch (config.head) {
    case HeadKind::featurewise_projection:
      p.add("head.time_w", init.glorot(s, 1));
      break;
    case HeadKind::featurewise_embedding:
      p.add("head.time_w", init.glorot(s, d));
      break;
    case HeadKind::flatten:
      v_dim = s * d;
      break;
    default:
      break;
  }
  p.add("head.mlp.W1", init.glorot(v_dim, config.mlp_hidden));
  p.add("head.mlp.b1", Tensor({config.mlp_hidden}, 0.0));
  p.add("head.mlp.W2", init.glorot(config.mlp_hidden, 1));
  p.add("head.mlp.b2", Tensor({1}, 0.0));

  m.bind();
  return m;
}

void Model::bind() {
  blocks_.clear();
  for (std::size_t l = 0; l < config_.layers; ++l) {
    const std::string pre = layer_prefix(l);
    auto get = [&](const std::string& n) { return params_.at(pre + n); };
    blocks_.push_back({get("attn.Wq"), get("attn.bq"), get("attn.Wk"), get("attn.bk"),
                       get("attn.Wv"), get("attn.bv"), get("attn.Wo"), get("attn.bo"),
                       get("ln1.gamma"), get("ln1.beta"), get("ffn.W1"), get("ffn.b1"),
                       get("ffn.W2"), get("ffn.b2"), get("ln2.gamma"), get("ln2.beta")});
  }
}

Model::Model(const Model& other) : config_(other.config_), layout_(other.layout_) {
  for (const auto& [name, var] : other.params_) params_.add(name, var.value());
  bind();
}

Model& Model::operator=(const Model& other) {
  if (this != &other) {
    Model copy(other);
    *this = std::move(copy);
  }
  return *this;
}

std::size_t expected_param_count(const ModelConfig& c, const FeatureLayout& layout) {
  const std::size_t d = c.d_model;
  const std::size_t f = layout.width;
  const std::size_t s = c.sequence_length();
  const std::size_t h = c.mlp_hidden;
  std::size_t total = 0;
  switch (c.input_encoding) {
    case InputEncodingKind::none:
      break;
    case InputEncodingKind::record_projection:
      total += f * d + d;
      break;
    case InputEncodingKind::record_embed_dense:
      total += f * d + d + d * d + d;
      break;
    case InputEncodingKind::categorical_embed_lookup: {
      std::size_t card_sum = 0;
      for (std::size_t card : layout.cardinalities) card_sum += card;
      const std::size_t n_cat = layout.cardinalities.size();
      total += card_sum * c.embed_dim + (n_cat * c.embed_dim + f - n_cat) * d + d;
      break;
    }
  }
  if (c.head == HeadKind::cls_token) total += d;
  total += s * d;
  total += c.layers * (4 * (d * d + d) + 2 * d * c.d_ff + c.d_ff + d + 4 * d);
  if (c.head == HeadKind::featurewise_projection) total += s;
  if (c.head == HeadKind::featurewise_embedding) total += s * d;
  const std::size_t v = c.head == HeadKind::flatten ? s * d : d;
  total += v * h + h + h + 1;
  return total;
}

// ---- forward stages --------------------------------------------------------------

namespace {

ag::Var linear(const ag::Var& x, const ag::Var& w, const ag::Var& b) {
  return ag::add_row_vector(ag::matmul(x, w), b);
}

}  // namespace

ag::Var Model::encode_input(const Batch& batch) const {
  if (batch.features.cols() != layout_.width) {
    throw ShapeError("encode_input: window width " + std::to_string(batch.features.cols()) +
                     " does not match the fitted width " + std::to_string(layout_.width));
  }
  if (batch.window != config_.window) {
    throw ShapeError("encode_input: window length " + std::to_string(batch.window) +
                     " does not match the model's " + std::to_string(config_.window));
  }
  const std::size_t rows = batch.features.rows();
  const std::size_t d = config_.d_model;
  const std::size_t f = layout_.width;
  ag::Var x;
  switch (config_.input_encoding) {
    case InputEncodingKind::none: {
      Tensor padded({rows, d}, 0.0);
      for (std::size_t r = 0; r < rows; ++r) {
        std::copy_n(batch.features.data() + r * f, f, padded.data() + r * d);
      }
      x = ag::constant(std::move(padded));
      break;
    }
    case InputEncodingKind::record_projection:
      x = linear(ag::constant(batch.features), params_.at("enc.W"), params_.at("enc.b"));
      break;
    case InputEncodingKind::record_embed_dense: {
      ag::Var h = ag::relu(linear(ag::constant(batch.features), params_.at("enc.W1"),
                                  params_.at("enc.b1")));
      x = linear(h, params_.at("enc.W2"), params_.at("enc.b2"));
      break;
    }
    case InputEncodingKind::categorical_embed_lookup: {
      const std::size_t n_cat = layout_.cardinalities.size();
      std::vector<ag::Var> parts;
      std::vector<std::size_t> idx(rows);
      for (std::size_t i = 0; i < n_cat; ++i) {
        for (std::size_t r = 0; r < rows; ++r) {
          const double v = batch.features.at(r, i);
          if (v < 0.0 || v != std::floor(v) ||
              v >= static_cast<double>(layout_.cardinalities[i])) {
            throw ShapeError("encode_input: category index " + std::to_string(v) +
                             " out of range for field " + std::to_string(i) +
                             " with cardinality " + std::to_string(layout_.cardinalities[i]));
          }
          idx[r] = static_cast<std::size_t>(v);
        }
        parts.push_back(ag::embedding_lookup(params_.at("enc.emb" + std::to_string(i)), idx));
      }
      if (f > n_cat) {
        Tensor numeric({rows, f - n_cat});
        for (std::size_t r = 0; r < rows; ++r) {
          std::copy_n(batch.features.data() + r * f + n_cat, f - n_cat, numeric.data() + r * (f - n_cat));
        }
        parts.push_back(ag::constant(std::move(numeric)));
      }
      x = linear(ag::concat_cols(parts), params_.at("enc.W"), params_.at("enc.b"));
      break;
    }
  }
  if (config_.head == HeadKind::cls_token) {
    x = ag::append_row_per_sequence(x, params_.at("cls"), config_.window);
  }
  return ag::add_tiled(x, params_.at("pos"));
}

ag::Var Model::block_forward(const ag::Var& x, std::size_t layer,
                             ag::AttentionTrace* trace) const {
  const BlockParams& p = blocks_.at(layer);
  const bool causal = config_.block_type == BlockType::decoder;
  ag::Var attn = multi_head_attention(x, p, config_.heads, config_.sequence_length(), causal, trace);
  ag::Var y = ag::layer_norm(ag::add(x, attn), p.ln1_gamma, p.ln1_beta, kLayerNormEps);
  ag::Var ff = linear(ag::relu(linear(y, p.w1, p.b1)), p.w2, p.b2);
  return ag::layer_norm(ag::add(y, ff), p.ln2_gamma, p.ln2_beta, kLayerNormEps);
}

ag::Var Model::head_vector(const ag::Var& sequence) const {
  const std::size_t s = config_.sequence_length();
  const std::size_t batch = sequence.rows() / s;
  switch (config_.head) {
    case HeadKind::last_token:
    case HeadKind::cls_token: {
      // The CLS slot is appended after the flows, so both read the final row.
      std::vector<std::size_t> rows(batch);
      for (std::size_t b = 0; b < batch; ++b) rows[b] = b * s + s - 1;
      return ag::gather_rows(sequence, rows);
    }
    case HeadKind::flatten:
      return ag::reshape(sequence, {batch, s * config_.d_model});
    case HeadKind::global_avg_pool:
      return ag::mean_over_time(sequence, s);
    case HeadKind::featurewise_embedding:
    case HeadKind::featurewise_projection:
      return ag::time_weighted_sum(sequence, params_.at("head.time_w"), s);
  }
  throw ConfigError("unknown head kind");
}

ag::Var Model::head_logit(const ag::Var& v) const {
  ag::Var h = ag::relu(linear(v, params_.at("head.mlp.W1"), params_.at("head.mlp.b1")));
  return linear(h, params_.at("head.mlp.W2"), params_.at("head.mlp.b2"));
}

ag::Var Model::logits(const Batch& batch) const { return logits(batch, nullptr); }

ag::Var Model::logits(const Batch& batch, ForwardTrace* trace) const {
  ag::Var x = encode_input(batch);
  if (trace) trace->attention.assign(config_.layers, {});
  for (std::size_t l = 0; l < config_.layers; ++l) {
    x = block_forward(x, l, trace ? &trace->attention[l] : nullptr);
  }
  return head_logit(head_vector(x));
}

// ---- attention -------------------------------------------------------------------

ag::Var attention(const ag::Var& q, const ag::Var& k, const ag::Var& v, bool causal) {
  if (q.shape() != k.shape() || q.rows() != v.rows()) {
    throw ShapeError("attention: Q " + shape_str(q.shape()) + ", K " + shape_str(k.shape()) +
                     ", V " + shape_str(v.shape()) + " do not agree");
  }
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(q.cols()));
  ag::Var scores = ag::scale(ag::matmul(q, ag::transpose(k)), inv_sqrt);
  if (causal) {
    // A large finite negative keeps the primitive's finiteness check happy;
    // exp() underflows to exactly 0 for every masked entry.
    const std::size_t t = q.rows();
    Tensor mask({t, t}, 0.0);
    for (std::size_t i = 0; i < t; ++i) {
      for (std::size_t j = i + 1; j < t; ++j) mask.at(i, j) = -1e30;
    }
    scores = ag::add(scores, ag::constant(std::move(mask)));
  }
  return ag::matmul(ag::softmax_rows(scores), v);
}

ag::Var multi_head_attention(const ag::Var& x, const BlockParams& p, std::size_t heads,
                             std::size_t seq_len, bool causal, ag::AttentionTrace* trace) {
  ag::Var q = linear(x, p.wq, p.bq);
  ag::Var k = linear(x, p.wk, p.bk);
  ag::Var v = linear(x, p.wv, p.bv);
  ag::Var heads_out = ag::multi_head_attention_core(q, k, v, seq_len, heads, causal, trace);
  return linear(heads_out, p.wo, p.bo);
}

ag::Var multi_head_attention_reference(const ag::Var& x, const BlockParams& p,
                                       std::size_t heads, bool causal) {
  const std::size_t d = x.cols();
  if (heads == 0 || d % heads != 0) {
    throw ShapeError("multi_head_attention: d_model not divisible by heads");
  }
  const std::size_t dk = d / heads;
  ag::Var q = linear(x, p.wq, p.bq);
  ag::Var k = linear(x, p.wk, p.bk);
  ag::Var v = linear(x, p.wv, p.bv);
  std::vector<ag::Var> outs;
  for (std::size_t h = 0; h < heads; ++h) {
    outs.push_back(attention(ag::slice_cols(q, h * dk, dk), ag::slice_cols(k, h * dk, dk),
                             ag::slice_cols(v, h * dk, dk), causal));
  }
  return linear(ag::concat_cols(outs), p.wo, p.bo);
}

// ---- inference ---------------------------------------------------------------------

double forward(const EncodedWindow& window, const Classifier& model) {
  ag::NoGradGuard no_grad;
  return ag::sigmoid(model.logits(make_batch(window))).value()[0];
}

std::vector<double> predict(const Classifier& model, const WindowSet& windows,
                            std::size_t batch_size) {
  ag::NoGradGuard no_grad;
  std::vector<double> out;
  out.reserve(windows.size());
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < windows.size(); start += batch_size) {
    idx.clear();
    for (std::size_t i = start; i < std::min(windows.size(), start + batch_size); ++i) idx.push_back(i);
    const ag::Var p = ag::sigmoid(model.logits(make_batch(windows, idx)));
    out.insert(out.end(), p.value().values().begin(), p.value().values().end());
  }
  return out;
}

ag::Var batch_loss(const Classifier& model, const Batch& batch) {
  return ag::bce(ag::sigmoid(model.logits(batch)), batch.labels);
}

}  // namespace fsnt
