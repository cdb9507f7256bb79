#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "fsnt/csv.hpp"
#include "fsnt/dataset.hpp"
#include "fsnt/errors.hpp"
#include "fsnt/preprocess.hpp"

using namespace fsnt;

namespace {

DatasetSpec flow_spec() {
  DatasetSpec s;
  s.name = "nf";
  s.categorical_fields = {"PROTOCOL", "L4_DST_PORT"};
  s.numerical_fields = {"IN_BYTES", "IN_PKTS"};
  s.label_column = "Label";
  s.benign_label = "0";
  s.class_column = "Attack";
  s.dropped_columns = {"IPV4_SRC_ADDR"};
  return s;
}

const char* kCsv =
    "IPV4_SRC_ADDR,PROTOCOL,L4_DST_PORT,IN_BYTES,IN_PKTS,Label,Attack\n"
    "10.0.0.1,6,80,100,2,1,DDoS\n"
    "10.0.0.2,17,53,,3,0,Benign\n"
    "10.0.0.3,,443,-5,1e3,0,Benign\n"
    "10.0.0.4,6,\"80\",1000,4,1,DDoS\n";

RawFlowTable sample_table() {
  std::istringstream in(kCsv);
  return ingest_csv(in, flow_spec());
}

}  // namespace

TEST_CASE("csv reader handles quotes, CRLF and embedded newlines") {
  std::istringstream in("a,\"b,c\",\"d\"\"e\"\r\n\"multi\nline\",x,\r\n");
  csv::Reader r(in);
  std::vector<std::string> f;
  REQUIRE(r.next(f));
  CHECK(f == std::vector<std::string>{"a", "b,c", "d\"e"});
  REQUIRE(r.next(f));
  CHECK(f == std::vector<std::string>{"multi\nline", "x", ""});
  CHECK(r.line() == 2);
  CHECK_FALSE(r.next(f));
  CHECK(csv::escape("a,b") == "\"a,b\"");
  CHECK(csv::escape("plain") == "plain");
}

TEST_CASE("spec validation names the problem") {
  DatasetSpec s = flow_spec();
  CHECK_NOTHROW(s.validate());
  s.numerical_fields.push_back("PROTOCOL");
  CHECK_THROWS_WITH_AS(s.validate(), doctest::Contains("overlapping field 'PROTOCOL'"), ConfigError);
  s = flow_spec();
  s.categorical_fields.clear();
  s.numerical_fields.clear();
  CHECK_THROWS_WITH_AS(s.validate(), doctest::Contains("no features"), ConfigError);
  s = flow_spec();
  s.label_column.clear();
  CHECK_THROWS_AS(s.validate(), ConfigError);
  CHECK(parse_spec(spec_to_json(flow_spec())).categorical_fields == flow_spec().categorical_fields);
}

TEST_CASE("ingest sanitizes cells row by row") {
  const RawFlowTable t = sample_table();
  REQUIRE(t.row_count() == 4);
  CHECK_FALSE(t.find_column("IPV4_SRC_ADDR").has_value());
  const auto bytes = t.column_index("IN_BYTES");
  const auto pkts = t.column_index("IN_PKTS");
  const auto proto = t.column_index("PROTOCOL");
  const auto port = t.column_index("L4_DST_PORT");
  // Oracle: the expected sanitized value of every cell, written out by hand.
  const double exp_bytes[] = {100, 0, 0, 1000};
  const double exp_pkts[] = {2, 3, 1000, 4};
  const char* exp_proto[] = {"6", "17", kMissingCategory, "6"};
  const char* exp_port[] = {"80", "53", "443", "80"};
  const int exp_label[] = {1, 0, 0, 1};
  for (std::size_t r = 0; r < 4; ++r) {
    CAPTURE(r);
    CHECK(std::get<double>(t.rows[r][bytes]) == exp_bytes[r]);
    CHECK(std::get<double>(t.rows[r][pkts]) == exp_pkts[r]);
    CHECK(std::get<std::string>(t.rows[r][proto]) == exp_proto[r]);
    CHECK(std::get<std::string>(t.rows[r][port]) == exp_port[r]);
    CHECK(t.labels[r] == exp_label[r]);
    CHECK(t.origin[r] == "nf");
  }
}

TEST_CASE("ingest errors") {
  DatasetSpec bare = flow_spec();
  bare.class_column.reset();
  bare.dropped_columns.clear();
  {
    std::istringstream in("PROTOCOL,IN_BYTES,Label\n6,1,0\n");
    CHECK_THROWS_WITH_AS(ingest_csv(in, bare), doctest::Contains("L4_DST_PORT"), DataError);
  }
  {
    std::istringstream in("PROTOCOL,L4_DST_PORT,IN_BYTES,IN_PKTS,Label\n6,80,abc,1,0\n");
    CHECK_THROWS_WITH_AS(ingest_csv(in, bare), doctest::Contains("row 0"), DataError);
  }
  {
    std::istringstream in("PROTOCOL,L4_DST_PORT,IN_BYTES,IN_PKTS,Label\n6,80,1\n");
    CHECK_THROWS_AS(ingest_csv(in, bare), DataError);
  }
  {
    std::istringstream in("\xEF\xBB\xBFPROTOCOL,L4_DST_PORT,IN_BYTES,IN_PKTS\n6,80,1,1\n");
    CHECK_THROWS_AS(ingest_csv(in, bare), DataError);
    std::istringstream again("\xEF\xBB\xBFPROTOCOL,L4_DST_PORT,IN_BYTES,IN_PKTS\n6,80,1,1\n");
    const RawFlowTable t = ingest_csv(again, bare, IngestOptions{false});
    CHECK_FALSE(t.has_labels);
    CHECK(t.labels == std::vector<int>{0});
  }
}

TEST_CASE("fuse keeps every row and is seed deterministic") {
  const RawFlowTable a = sample_table();
  DatasetSpec other = flow_spec();
  other.name = "iot";
  std::istringstream in(kCsv);
  const RawFlowTable b = ingest_csv(in, other);
  const RawFlowTable f1 = fuse({a, b}, 9);
  const RawFlowTable f2 = fuse({a, b}, 9);
  CHECK(f1.row_count() == 8);
  CHECK(f1.origin == f2.origin);
  CHECK(std::count(f1.origin.begin(), f1.origin.end(), "iot") == 4);
  CHECK(std::accumulate(f1.labels.begin(), f1.labels.end(), 0) == 4);

  RawFlowTable c = a;
  c.columns[0] = "SOMETHING_ELSE";
  CHECK_THROWS_WITH_AS(fuse({a, c}, 1), doctest::Contains("SOMETHING_ELSE"), DataError);
}

TEST_CASE("split sizes and order") {
  RawFlowTable t;
  t.columns = {"x"};
  for (int i = 0; i < 10; ++i) {
    t.rows.push_back({Cell{static_cast<double>(i)}});
    t.origin.push_back("d");
    t.labels.push_back(i % 2);
  }
  auto [train, eval] = split(t, 0.8, 3);
  CHECK(train.row_count() == 8);
  CHECK(eval.row_count() == 2);
  auto values = [](const RawFlowTable& p) {
    std::vector<double> v;
    for (const auto& r : p.rows) v.push_back(std::get<double>(r[0]));
    return v;
  };
  const auto tv = values(train);
  CHECK(std::is_sorted(tv.begin(), tv.end()));
  auto [train2, eval2] = split(t, 0.8, 3);
  CHECK(values(eval2) == values(eval));
  CHECK_THROWS_AS(split(t, 1.0, 0), ConfigError);
  CHECK_THROWS_AS(split(RawFlowTable{}, 0.5, 0), DataError);
  auto [tiny_train, tiny_eval] = split(t, 0.05, 0);
  CHECK(tiny_train.row_count() == 0);
  CHECK(tiny_eval.row_count() == 10);
}

TEST_CASE("top-N categories with lexicographic ties and an other bucket") {
  RawFlowTable t;
  t.columns = {"c", "n", "Label"};
  for (const char* v : {"b", "a", "c", "a", "b", "d"}) {
    t.rows.push_back({Cell{std::string(v)}, Cell{1.0}, Cell{std::string("0")}});
    t.labels.push_back(0);
  }
  DatasetSpec s;
  s.name = "t";
  s.categorical_fields = {"c"};
  s.numerical_fields = {"n"};
  s.label_column = "Label";
  const PreprocessorState st = fit(t, s, 2, EncodingMode::one_hot);
  CHECK(st.categorical[0].top_categories == std::vector<std::string>{"a", "b"});
  CHECK(st.categorical[0].cardinality() == 3);
  CHECK(st.feature_width == 4);
  CHECK(encode_categorical("c", st.categorical[0], EncodingMode::one_hot) ==
        std::vector<double>{0, 0, 1});
  CHECK(encode_categorical("b", st.categorical[0], EncodingMode::integer) ==
        std::vector<double>{1});
  CHECK(encode_categorical("never-seen", st.categorical[0], EncodingMode::integer) ==
        std::vector<double>{2});
  // a constant numerical column maps to 0.5
  const EncodedFlows e = transform(t, st);
  for (std::size_t r = 0; r < e.count(); ++r) CHECK(e.row(r)[3] == 0.5);
}

TEST_CASE("preprocessing contract on random tables") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    RawFlowTable train;
    train.columns = {"p", "q", "x", "y", "Label"};
    std::uniform_int_distribution<int> cat(0, 40);
    std::exponential_distribution<double> heavy(0.001);
    for (int i = 0; i < 200; ++i) {
      train.rows.push_back({Cell{std::to_string(cat(rng))}, Cell{std::to_string(cat(rng) % 3)},
                            Cell{heavy(rng)}, Cell{static_cast<double>(cat(rng))},
                            Cell{std::string("0")}});
      train.labels.push_back(0);
    }
    DatasetSpec s;
    s.name = "r";
    s.categorical_fields = {"p", "q"};
    s.numerical_fields = {"x", "y"};
    s.label_column = "Label";
    const PreprocessorState st = fit(train, s, 32, EncodingMode::one_hot);
    const EncodedFlows e = transform(train, st);
    const std::size_t num = st.numerical_offset();
    for (std::size_t f = 0; f < 2; ++f) {
      double lo = 2.0;
      double hi = -1.0;
      for (std::size_t r = 0; r < e.count(); ++r) {
        const double v = e.row(r)[num + f];
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
      CHECK(lo == 0.0);
      CHECK(hi == 1.0);
    }
    for (std::size_t r = 0; r < e.count(); ++r) {
      for (std::size_t f = 0; f < 2; ++f) {
        const std::size_t off = st.categorical_offset(f);
        double sum = 0.0;
        for (std::size_t j = 0; j < st.categorical[f].cardinality(); ++j) sum += e.row(r)[off + j];
        CHECK(sum == 1.0);
      }
    }
    // Values outside the training range clamp instead of leaking.
    RawFlowTable eval = train;
    eval.rows.resize(1);
    eval.labels.resize(1);
    eval.rows[0][2] = Cell{1e12};
    eval.rows[0][3] = Cell{0.0};
    eval.rows[0][0] = Cell{std::string("unseen")};
    const EncodedFlows ee = transform(eval, st);
    CHECK(ee.row(0)[num] == 1.0);
    CHECK(ee.row(0)[st.categorical_offset(0) + st.categorical[0].other_index()] == 1.0);
    const PreprocessorState refit = fit(train, s, 32, EncodingMode::one_hot);
    CHECK(refit.hash() == st.hash());
  }
}

TEST_CASE("preprocessor state round-trips and rejects bad documents") {
  std::istringstream in(kCsv);
  const RawFlowTable t = ingest_csv(in, flow_spec());
  const PreprocessorState st = fit(t, flow_spec(), 32, EncodingMode::integer);
  CHECK(st.feature_width == 4);
  const PreprocessorState back = PreprocessorState::from_json(st.to_json());
  CHECK(back.hash() == st.hash());
  auto doc = st.to_json();
  doc["feature_width"] = 9;
  CHECK_THROWS_AS(PreprocessorState::from_json(doc), FormatError);
  doc = st.to_json();
  doc["version"] = 2;
  CHECK_THROWS_AS(PreprocessorState::from_json(doc), FormatError);
  CHECK_THROWS_AS(parse_encoding_mode("binary"), ConfigError);
}

TEST_CASE("sliding windows pad on the left and keep the last flow's label") {
  EncodedFlows f;
  f.width = 2;
  for (int i = 0; i < 5; ++i) {
    f.values.push_back(i + 1);
    f.values.push_back(-(i + 1));
    f.labels.push_back(i == 3 ? 1 : 0);
  }
  const WindowSet w = make_windows(f, 3);
  CHECK(w.size() == 5);
  const EncodedWindow first = w.at(0);
  CHECK(first.pad_count == 2);
  CHECK(first.features.at(0, 0) == 0.0);
  CHECK(first.features.at(2, 0) == 1.0);
  const EncodedWindow fourth = w.at(3);
  CHECK(fourth.pad_count == 0);
  CHECK(fourth.label == 1);
  CHECK(fourth.features.at(0, 0) == 2.0);
  CHECK(fourth.features.at(2, 1) == -4.0);
  const WindowSet sub = w.subset({3, 0});
  CHECK(sub.at(0).features == fourth.features);
  CHECK_THROWS_AS(make_windows(f, 0), ConfigError);
}
