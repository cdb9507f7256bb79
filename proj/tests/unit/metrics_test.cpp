#include <doctest.h>

#include <random>

#include "fsnt/errors.hpp"
#include "fsnt/metrics.hpp"

using namespace fsnt;

TEST_CASE("hand-checked confusion and rates") {
  const std::vector<int> pred = {1, 1, 0, 0, 1, 0};
  const std::vector<int> lab = {1, 0, 0, 1, 1, 0};
  const MetricsReport r = derive(confusion(pred, lab));
  CHECK(r.counts == ConfusionCounts{2, 2, 1, 1});
  CHECK(r.accuracy == doctest::Approx(4.0 / 6.0));
  CHECK(r.precision == doctest::Approx(2.0 / 3.0));
  CHECK(r.recall == doctest::Approx(2.0 / 3.0));
  CHECK(r.f1 == doctest::Approx(2.0 / 3.0));
  CHECK(r.false_alarm_rate == doctest::Approx(1.0 / 3.0));
  CHECK(confusion_matrix(r.counts) == std::vector<std::vector<std::uint64_t>>{{2, 1}, {1, 2}});
}

TEST_CASE("degenerate ratios are zero") {
  const MetricsReport r = derive(ConfusionCounts{0, 5, 0, 0});
  CHECK(r.precision == 0.0);
  CHECK(r.recall == 0.0);
  CHECK(r.f1 == 0.0);
  CHECK(r.false_alarm_rate == 0.0);
  CHECK(r.accuracy == 1.0);
  CHECK_THROWS_AS(derive(ConfusionCounts{}), DataError);
  CHECK_THROWS_AS(confusion(std::vector<int>{1}, std::vector<int>{1, 0}), DataError);
}

TEST_CASE("json and csv renderings round-trip exactly") {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<std::uint64_t> n(0, 1000);
  std::vector<MetricsReport> reports;
  for (int i = 0; i < 25; ++i) reports.push_back(derive({n(rng) + 1, n(rng), n(rng), n(rng)}));
  for (const auto& r : reports) CHECK(report_from_json(report_to_json(r)) == r);
  const std::string text = render_reports_csv(reports);
  CHECK(parse_reports_csv(text) == reports);
  CHECK(report_to_json(reports[0]).at("false_alarm_rate_percent").get<double>() ==
        reports[0].false_alarm_rate * 100.0);
}

TEST_CASE("confusion csv has labeled axes") {
  const std::string s = render_confusion_csv(derive({3, 4, 1, 2}));
  CHECK(s == "actual\\predicted,benign,attack\nbenign,4,1\nattack,2,3\n");
}

TEST_CASE("format_real is shortest round-trip") {
  CHECK(format_real(0.1) == "0.1");
  CHECK(format_real(1.0) == "1");
  CHECK(std::stod(format_real(2.0 / 3.0)) == 2.0 / 3.0);
}
