#include <doctest.h>

#include <random>

#include "fsnt/checkpoint.hpp"
#include "fsnt/errors.hpp"
#include "synthetic.hpp"

using namespace fsnt;

namespace {

Model sample_model(HeadKind head) {
  ModelConfig c;
  c.layers = 2;
  c.heads = 2;
  c.d_model = 8;
  c.d_ff = 12;
  c.window = 4;
  c.head = head;
  c.input_encoding = InputEncodingKind::categorical_embed_lookup;
  c.seed = 21;
  return Model::build(c, testing::tiny_layout());
}

}  // namespace

TEST_CASE("save, load, save is byte identical for every head") {
  for (auto head : kAllHeads) {
    const Model m = sample_model(head);
    const std::string bytes = save_checkpoint(m, "abc");
    const LoadedCheckpoint back = load_checkpoint(bytes, "abc");
    CHECK(back.warnings.empty());
    CHECK(back.preprocessor_hash == "abc");
    CHECK(save_checkpoint(back.model, "abc") == bytes);
    CHECK(back.model.config() == m.config());
    std::mt19937_64 rng(1);
    const Batch b = testing::tiny_batch(testing::tiny_layout(), 4, 5, rng);
    CHECK(back.model.logits(b).value() == m.logits(b).value());
  }
}

TEST_CASE("hash mismatch is a warning") {
  const std::string bytes = save_checkpoint(sample_model(HeadKind::flatten), "abc");
  const LoadedCheckpoint back = load_checkpoint(bytes, "def");
  REQUIRE(back.warnings.size() == 1);
  CHECK(back.warnings[0].find("abc") != std::string::npos);
}

TEST_CASE("corrupted checkpoints are rejected") {
  const std::string bytes = save_checkpoint(sample_model(HeadKind::last_token), "h");
  std::string bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_WITH_AS(load_checkpoint(bad), doctest::Contains("magic"), FormatError);
  bad = bytes;
  bad[4] = 2;
  CHECK_THROWS_WITH_AS(load_checkpoint(bad), doctest::Contains("version"), FormatError);
  for (std::size_t cut : {std::size_t{3}, std::size_t{10}, bytes.size() / 2, bytes.size() - 1}) {
    CAPTURE(cut);
    CHECK_THROWS_AS(load_checkpoint(bytes.substr(0, cut)), FormatError);
  }
  CHECK_THROWS_WITH_AS(load_checkpoint(bytes + "x"), doctest::Contains("trailing"), FormatError);
  bad = bytes;
  const auto pos = bad.find("enc.emb0");
  REQUIRE(pos != std::string::npos);
  bad[pos + 7] = '9';
  CHECK_THROWS_WITH_AS(load_checkpoint(bad), doctest::Contains("enc.emb9"), FormatError);
  CHECK_THROWS_AS(read_checkpoint_file("/nonexistent/model.ckpt"), DataError);
}
