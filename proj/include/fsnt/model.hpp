#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fsnt/autograd.hpp"
#include "fsnt/preprocess.hpp"

namespace fsnt {

enum class BlockType { encoder, decoder };
enum class InputEncodingKind { none, record_projection, record_embed_dense, categorical_embed_lookup };
enum class HeadKind {
  last_token,
  flatten,
  global_avg_pool,
  featurewise_embedding,
  featurewise_projection,
  cls_token
};

inline constexpr InputEncodingKind kAllEncodings[] = {
    InputEncodingKind::none, InputEncodingKind::record_projection,
    InputEncodingKind::record_embed_dense, InputEncodingKind::categorical_embed_lookup};
inline constexpr HeadKind kAllHeads[] = {
    HeadKind::last_token,           HeadKind::flatten,
    HeadKind::global_avg_pool,      HeadKind::featurewise_embedding,
    HeadKind::featurewise_projection, HeadKind::cls_token};
inline constexpr BlockType kAllBlockTypes[] = {BlockType::encoder, BlockType::decoder};

std::string to_string(BlockType v);
std::string to_string(InputEncodingKind v);
std::string to_string(HeadKind v);
BlockType parse_block_type(const std::string& s);
InputEncodingKind parse_input_encoding(const std::string& s);
HeadKind parse_head_kind(const std::string& s);

inline constexpr double kLayerNormEps = 1e-5;

struct ModelConfig {
  BlockType block_type = BlockType::encoder;
  std::size_t layers = 2;
  std::size_t heads = 2;
  std::size_t d_model = 128;
  std::size_t d_ff = 128;
  InputEncodingKind input_encoding = InputEncodingKind::record_embed_dense;
  HeadKind head = HeadKind::last_token;
  std::size_t window = kDefaultWindow;
  std::size_t embed_dim = 8;  // per categorical field, lookup encoding only
  std::size_t mlp_hidden = 64;
  std::uint64_t seed = 0;

  // Throws ConfigError on invalid combinations.
  void validate() const;
  // Rows the transformer sees: window, plus one when a CLS slot is appended.
  std::size_t sequence_length() const;

  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& doc);
  bool operator==(const ModelConfig&) const = default;
};

// Shape of the encoded flow vectors the model consumes. For the lookup
// encoding the first cardinalities.size() columns hold category indices.
struct FeatureLayout {
  std::size_t width = 0;
  std::vector<std::size_t> cardinalities;

  static FeatureLayout from_state(const PreprocessorState& state);
  bool operator==(const FeatureLayout&) const = default;
};

// Windows packed as B*T rows of `width` features.
struct Batch {
  Tensor features;
  std::vector<int> labels;
  std::size_t size = 0;
  std::size_t window = 0;
};

Batch make_batch(const WindowSet& windows, std::span<const std::size_t> indices);
Batch make_batch(const EncodedWindow& window);

// Anything trainable that maps a batch of windows to one logit per window.
class Classifier {
 public:
  virtual ~Classifier() = default;

  virtual ag::Var logits(const Batch& batch) const = 0;  // [B, 1]
  virtual ag::ParameterSet& params() = 0;
  virtual const ag::ParameterSet& params() const = 0;
  virtual std::size_t window() const = 0;
  virtual std::size_t feature_width() const = 0;

  std::size_t param_count() const { return params().element_count(); }
};

struct ForwardTrace {
  std::vector<ag::AttentionTrace> attention;  // one per layer
};

// Weights of one transformer block.
struct BlockParams {
  ag::Var wq, bq, wk, bk, wv, bv, wo, bo;
  ag::Var ln1_gamma, ln1_beta;
  ag::Var w1, b1, w2, b2;
  ag::Var ln2_gamma, ln2_beta;
};

class Model final : public Classifier {
 public:
  // Allocates and initializes every parameter from config.seed: Glorot
  // uniform weights, zero biases, unit layer-norm gains, N(0, 0.02)
  // positional rows and CLS vector.
  static Model build(const ModelConfig& config, const FeatureLayout& layout);

  Model(const Model& other);
  Model& operator=(const Model& other);
  Model(Model&&) = default;
  Model& operator=(Model&&) = default;

  const ModelConfig& config() const { return config_; }
  const FeatureLayout& layout() const { return layout_; }

  ag::Var logits(const Batch& batch) const override;
  ag::Var logits(const Batch& batch, ForwardTrace* trace) const;
  ag::ParameterSet& params() override { return params_; }
  const ag::ParameterSet& params() const override { return params_; }
  std::size_t window() const override { return config_.window; }
  std::size_t feature_width() const override { return layout_.width; }

  // Pipeline stages, exposed for tests. Sequences are packed B*S rows.
  ag::Var encode_input(const Batch& batch) const;  // [B*S, d_model], incl. CLS + positions
  ag::Var block_forward(const ag::Var& x, std::size_t layer,
                        ag::AttentionTrace* trace = nullptr) const;
  ag::Var head_vector(const ag::Var& sequence) const;  // [B, v]
  ag::Var head_logit(const ag::Var& v) const;          // [B, 1]

  const BlockParams& block(std::size_t layer) const { return blocks_.at(layer); }

 private:
  Model() = default;
  void bind();  // refreshes the Var handles below from params_

  ModelConfig config_;
  FeatureLayout layout_;
  ag::ParameterSet params_;
  std::vector<BlockParams> blocks_;
};

// Closed-form trainable parameter count for (config, layout); equals
// Model::build(config, layout).param_count().
//
//   input encoder   none: 0
//                   record_projection: F*d + d
//                   record_embed_dense: F*d + d + d*d + d
//                   categorical_embed_lookup: sum(card_i)*e + (n_cat*e + F - n_cat)*d + d
//   CLS vector      d (cls_token head only)
//   positions       S*d, S = T (+1 with cls_token)
//   per block       4*(d*d + d) + 2*d*ff + ff + d + 4*d
//   head weights    featurewise_projection: S; featurewise_embedding: S*d
//   MLP             v*h + h + h + 1, v = S*d for flatten else d
std::size_t expected_param_count(const ModelConfig& config, const FeatureLayout& layout);

// ---- stand-alone attention -------------------------------------------------

// Eq.-1 style single-head attention for one sequence, composed from the
// generic primitives: softmax(Q K^T / sqrt(dk) + mask) V.
ag::Var attention(const ag::Var& q, const ag::Var& k, const ag::Var& v, bool causal);

// Projections, per-head attention, concatenation and output projection for
// B packed sequences of seq_len rows.
ag::Var multi_head_attention(const ag::Var& x, const BlockParams& p, std::size_t heads,
                             std::size_t seq_len, bool causal,
                             ag::AttentionTrace* trace = nullptr);

// Same result assembled head by head from attention() for one sequence.
ag::Var multi_head_attention_reference(const ag::Var& x, const BlockParams& p,
                                       std::size_t heads, bool causal);

// ---- inference helpers -----------------------------------------------------

// sigmoid(logit) for a single window.
double forward(const EncodedWindow& window, const Classifier& model);

// Probabilities for every window, computed without recording gradients.
std::vector<double> predict(const Classifier& model, const WindowSet& windows,
                            std::size_t batch_size = 512);

// Mean BCE of a batch (graph recorded, ready for backward()).
ag::Var batch_loss(const Classifier& model, const Batch& batch);

}  // namespace fsnt
