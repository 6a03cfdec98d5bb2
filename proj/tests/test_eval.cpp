#include <cmath>
#include <vector>

#include "doctest.h"
#include "posr/errors.hpp"
#include "posr/eval.hpp"
#include "testutil.hpp"

using namespace posr;

namespace {

eval::MetricsRecord record(const std::string& method, int fold, double acc,
                           std::optional<double> auroc = {}) {
  eval::MetricsRecord r;
  r.run_id = "run";
  r.fold = fold;
  r.target_subject = fold;
  r.method = method;
  r.accuracy = acc;
  r.ossr_auroc = auroc;
  r.seed = 1;
  r.epochs = 10;
  return r;
}

}  // namespace

TEST_CASE("accuracy counts exact matches") {
  const std::vector<int> pred = {0, 1, 1, 0};
  const std::vector<int> want = {0, 1, 0, 0};
  CHECK(eval::accuracy(pred, want) == 0.75);
  CHECK(eval::accuracy(want, want) == 1.0);

  CHECK_THROWS_AS(eval::accuracy({}, {}), ValueError);
  const std::vector<int> short_labels = {0};
  CHECK_THROWS_AS(eval::accuracy(pred, short_labels), ValueError);
}

TEST_CASE("auroc ranks unknown scores above known scores") {
  const std::vector<double> low = {0.1, 0.2, 0.3};
  const std::vector<double> high = {0.9, 1.5};
  CHECK(eval::auroc(low, high) == 1.0);
  CHECK(eval::auroc(high, low) == 0.0);

  const std::vector<double> same = {0.5, 0.5};
  CHECK(eval::auroc(same, same) == 0.5);

  const std::vector<double> mixed_known = {1.0, 3.0};
  const std::vector<double> mixed_unknown = {2.0, 4.0};
  // Pairs: (1,2)+ (1,4)+ (3,2)- (3,4)+ => 3/4.
  CHECK(eval::auroc(mixed_known, mixed_unknown) == 0.75);

  CHECK_THROWS_AS(eval::auroc({}, high), ValueError);
  CHECK_THROWS_AS(eval::auroc(low, {}), ValueError);
}

TEST_CASE("auroc is invariant under increasing transforms") {
  const std::vector<double> known = {0.3, 1.2, 2.4, 2.5};
  const std::vector<double> unknown = {0.9, 2.6, 3.1};
  const double base = eval::auroc(known, unknown);

  auto warp = [](std::vector<double> v) {
    for (auto& x : v) x = std::exp(0.7 * x) + 5.0;
    return v;
  };
  CHECK(eval::auroc(warp(known), warp(unknown)) == base);
}

TEST_CASE("aggregation groups by method in first-appearance order") {
  const std::vector<eval::MetricsRecord> records = {
      record("B", 0, 0.7), record("A", 0, 0.5, 0.8),
      record("B", 1, 0.9), record("A", 1, 0.7, 0.6)};
  const auto aggs = eval::aggregate_runs(records);
  REQUIRE(aggs.size() == 2);
  CHECK(aggs[0].method == "B");
  CHECK(aggs[1].method == "A");

  CHECK(aggs[0].n_records == 2);
  CHECK(aggs[0].mean_accuracy == doctest::Approx(0.8).epsilon(1e-12));
  CHECK(aggs[0].std_accuracy ==
        doctest::Approx(std::sqrt(0.02)).epsilon(1e-12));
  CHECK_FALSE(aggs[0].mean_auroc.has_value());
  CHECK_FALSE(aggs[0].single_record);

  CHECK(aggs[1].mean_auroc.has_value());
  CHECK(*aggs[1].mean_auroc == doctest::Approx(0.7).epsilon(1e-12));
}

TEST_CASE("single-record aggregates report zero spread") {
  const std::vector<eval::MetricsRecord> records = {record("only", 0, 0.642)};
  const auto aggs = eval::aggregate_runs(records);
  REQUIRE(aggs.size() == 1);
  CHECK(aggs[0].single_record);
  CHECK(aggs[0].std_accuracy == 0.0);
  CHECK(eval::format_aggregate(aggs[0]) == "64.20 (±0.00)");
}

TEST_CASE("percent formatting matches the reporting convention") {
  CHECK(eval::format_percent(0.8, std::sqrt(0.02)) == "80.00 (±14.14)");
  CHECK(eval::format_percent(0.8, 0.0) == "80.00 (±0.00)");
  CHECK(eval::format_percent(1.0, 0.0) == "100.00 (±0.00)");

  // Means and spreads round half-up through the printf path.
  const std::vector<eval::MetricsRecord> records = {
      record("m", 0, 0.8288505842), record("m", 1, 0.6277494158)};
  const auto aggs = eval::aggregate_runs(records);
  CHECK(eval::format_aggregate(aggs[0]) == "72.83 (±14.22)");
}

TEST_CASE("aggregate rendering includes csv and table forms") {
  const std::vector<eval::MetricsRecord> records = {
      record("Baseline", 0, 0.7), record("Baseline", 1, 0.9),
      record("GCPL_clf+GCPL_ossr", 0, 0.8, 0.65),
      record("GCPL_clf+GCPL_ossr", 1, 0.6, 0.75)};
  const auto aggs = eval::aggregate_runs(records);

  const auto csv = eval::aggregate_csv_string(aggs);
  CHECK(csv.find("method,n,mean_accuracy,std_accuracy,mean_ossr_auroc,"
                 "accuracy\n") == 0);
  CHECK(csv.find("Baseline,2,") != std::string::npos);
  CHECK(csv.find("80.00 (±14.14)") != std::string::npos);

  const auto table = eval::aggregate_table_string(aggs);
  CHECK(table.find("Baseline") != std::string::npos);
  CHECK(table.find("GCPL_clf+GCPL_ossr") != std::string::npos);
  CHECK(table.find("0.7000") != std::string::npos);  // mean auroc column
  CHECK(table.find('-') != std::string::npos);       // absent auroc marker
}

TEST_CASE("metrics csv round-trips exactly") {
  testutil::TempDir tmp;
  const auto path = tmp.file("metrics.csv");
  const std::vector<eval::MetricsRecord> records = {
      record("Baseline", 0, 0.7312498321), record("Baseline", 1, 1.0),
      record("GCPL_clf+GCPL_ossr", 2, 0.625, 0.98765432101)};

  const auto text = eval::metrics_csv_string(records);
  CHECK(text.find(eval::kMetricsCsvHeader) == 0);
  CHECK(text.find("\r") == std::string::npos);

  eval::write_metrics_csv(path, records);
  const auto loaded = eval::read_metrics_csv(path);
  REQUIRE(loaded.size() == records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    CHECK(loaded[i].run_id == records[i].run_id);
    CHECK(loaded[i].fold == records[i].fold);
    CHECK(loaded[i].target_subject == records[i].target_subject);
    CHECK(loaded[i].method == records[i].method);
    CHECK(loaded[i].accuracy == records[i].accuracy);  // bit-exact
    CHECK(loaded[i].ossr_auroc == records[i].ossr_auroc);
    CHECK(loaded[i].seed == records[i].seed);
    CHECK(loaded[i].epochs == records[i].epochs);
  }
  CHECK(eval::metrics_csv_string(loaded) == text);
}

TEST_CASE("metrics csv parsing rejects malformed input") {
  testutil::TempDir tmp;
  const auto path = tmp.file("metrics.csv");

  SUBCASE("wrong header") {
    testutil::write_bytes(path, {'b', 'a', 'd', '\n'});
    CHECK_THROWS_AS(eval::read_metrics_csv(path), CsvParseError);
  }
  SUBCASE("missing fields") {
    const std::string text = std::string(eval::kMetricsCsvHeader) +
                             "\nrun,0,0,Baseline,0.5\n";
    testutil::write_bytes(path, {text.begin(), text.end()});
    CHECK_THROWS_AS(eval::read_metrics_csv(path), CsvParseError);
  }
  SUBCASE("accuracy out of range") {
    const std::string text = std::string(eval::kMetricsCsvHeader) +
                             "\nrun,0,0,Baseline,1.5,,1,10\n";
    testutil::write_bytes(path, {text.begin(), text.end()});
    CHECK_THROWS_AS(eval::read_metrics_csv(path), CsvParseError);
  }
  SUBCASE("unparseable number reports its line") {
    const std::string text = std::string(eval::kMetricsCsvHeader) +
                             "\nrun,zero,0,Baseline,0.5,,1,10\n";
    testutil::write_bytes(path, {text.begin(), text.end()});
    try {
      eval::read_metrics_csv(path);
      FAIL("expected CsvParseError");
    } catch (const CsvParseError& e) {
      CHECK(std::string(e.what()).find("line 2") != std::string::npos);
    }
  }
  SUBCASE("empty file") {
    testutil::write_bytes(path, {});
    CHECK_THROWS_AS(eval::read_metrics_csv(path), CsvParseError);
  }
  SUBCASE("crlf is tolerated") {
    const std::string text = std::string(eval::kMetricsCsvHeader) +
                             "\r\nrun,0,0,Baseline,0.5,,1,10\r\n";
    testutil::write_bytes(path, {text.begin(), text.end()});
    const auto loaded = eval::read_metrics_csv(path);
    REQUIRE(loaded.size() == 1);
    CHECK(loaded[0].accuracy == 0.5);
  }

  SUBCASE("fields with separators refuse to serialize") {
    const std::vector<eval::MetricsRecord> bad = {record("a,b", 0, 0.5)};
    CHECK_THROWS_AS(eval::metrics_csv_string(bad), ValueError);
  }
}
