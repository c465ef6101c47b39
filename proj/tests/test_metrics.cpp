#include <doctest.h>

#include <chrono>
#include <fstream>

#include <nlohmann/json.hpp>

#include "neil/error.hpp"
#include "neil/metrics.hpp"
#include "support.hpp"

using namespace neil;
using namespace neil::metrics;

namespace {

MeanRow row(SystemKind s, int it, double ann, double acc, std::optional<double> e = {}) {
  MeanRow r;
  r.system = s;
  r.iteration = it;
  r.seeds = 3;
  r.annotations_cum = ann;
  r.test_accuracy = acc;
  r.interactions_per_question = it * 0.5;
  if (e) r.diagnostics = Diagnostics{*e, 0.25, *e / 0.75};
  return r;
}

const Series& named(const std::vector<Series>& all, const std::string& system, const std::string& name) {
  for (const auto& s : all)
    if (s.system == system && s.name == name) return s;
  FAIL("missing " << system << "/" << name);
  return all.front();
}

}  // namespace

TEST_CASE("series from two iterations") {
  const ReportSet set{"exp", {row(SystemKind::Neil, 0, 0, 0.3), row(SystemKind::Neil, 1, 40, 0.4, 0.1)}};
  const auto all = build_series({set});
  const auto& acc = named(all, "neil", "acc_vs_annotations");
  REQUIRE(acc.points.size() == 2);
  CHECK(acc.points[1].x == 40.0);
  CHECK(acc.points[1].y == 0.4);
  CHECK(acc.points[1].x_kind == XKind::AnnotationsCum);
  CHECK(acc.experiment_id == "exp");
  // diagnostics start at iteration 1
  CHECK(named(all, "neil", "e_i").points.size() == 1);
  CHECK(named(all, "neil", "interactions_per_question").points.size() == 2);
}

TEST_CASE("self-training stacks at zero annotations") {
  std::vector<MeanRow> rows;
  for (int i = 0; i < 5; ++i) rows.push_back(row(SystemKind::SelfTrain, i, 0, 0.3 + 0.01 * i));
  const auto all = build_series({{"exp", rows}});
  for (const auto& p : named(all, "self-train", "acc_vs_annotations").points) CHECK(p.x == 0.0);
  for (const auto& s : all) CHECK(s.name != "interactions_per_question");
}

TEST_CASE("annotation axis is non-decreasing") {
  Rng rng(8);
  std::vector<MeanRow> rows;
  double ann = 0;
  for (int i = 0; i < 20; ++i) {
    rows.push_back(row(SystemKind::FullExpert, i, ann, rng.uniform()));
    ann += static_cast<double>(rng.index(50));
  }
  rng.shuffle(rows);
  const auto all = build_series({{"exp", rows}});
  const auto& pts = named(all, "full-expert", "acc_vs_annotations").points;
  for (std::size_t i = 1; i < pts.size(); ++i) {
    CHECK(pts[i].iteration == pts[i - 1].iteration + 1);
    CHECK(pts[i].x >= pts[i - 1].x);
  }
}

TEST_CASE("mixed experiments are rejected") {
  CHECK_THROWS_AS(build_series({{"a", {row(SystemKind::Neil, 0, 0, 0.1)}}, {"b", {row(SystemKind::Neil, 1, 3, 0.1)}}}),
                  ConsistencyError);
  CHECK_THROWS_AS(build_series({}), SpecError);
}

TEST_CASE("least-squares slope") {
  CHECK(slope({0, 1, 2}, {1, 3, 5}) == doctest::Approx(2.0));
  CHECK(slope({1, 2, 3, 4}, {4, 4, 4, 4}) == 0.0);
  CHECK(slope({0, 1, 2, 3}, {0.1, -1.1, -1.9, -3.1}) == doctest::Approx(-1.04));
  CHECK_THROWS_AS(slope({1}, {1}), SpecError);
  CHECK_THROWS_AS(slope({2, 2}, {1, 3}), SpecError);
}

TEST_CASE("trend checks") {
  std::vector<MeanRow> flat, falling;
  for (int i = 0; i < 6; ++i) {
    flat.push_back(row(SystemKind::Neil, i, 10.0 * i, 0.5, i > 0 ? std::optional<double>(0.2) : std::nullopt));
    falling.push_back(
        row(SystemKind::FullExpert, i, 30.0 * i, 0.6, i > 0 ? std::optional<double>(0.3 - 0.04 * i) : std::nullopt));
  }
  std::vector<MeanRow> all_rows = flat;
  all_rows.insert(all_rows.end(), falling.begin(), falling.end());
  const auto series = build_series({{"exp", all_rows}});

  TrendSpec spec;
  spec.trends.push_back({"neil", "e_i", Direction::Decreasing, 0.0, 1});
  spec.trends.push_back({"full-expert", "e_i", Direction::Decreasing, 0.0, 1});
  spec.trends.push_back({"neil", "e_i", Direction::NonIncreasing, 0.0, 1});
  const auto res = check_trends(series, spec);
  REQUIRE(res.size() == 3);
  CHECK_FALSE(res[0].passed);
  CHECK(res[1].passed);
  CHECK(res[2].passed);

  TrendSpec ord;
  ord.orderings.push_back({"neil", "full-expert", "annotations_cum", "every", 1, 0.0, true});
  ord.orderings.push_back({"full-expert", "neil", "test_acc", "final", 0, 0.0, false});
  ord.orderings.push_back({"full-expert", "neil", "test_acc", "final", 0, 0.2, false});
  const auto o = check_trends(series, ord);
  CHECK(o[0].passed);
  CHECK_FALSE(o[1].passed);
  CHECK(o[2].passed);

  TrendSpec missing;
  missing.trends.push_back({"binary-user", "e_i", Direction::Decreasing, 0.0, 1});
  CHECK_THROWS_AS(check_trends(series, missing), SpecError);
  TrendSpec bad_metric;
  bad_metric.orderings.push_back({"neil", "full-expert", "bleu", "final", 0, 0.0, false});
  CHECK_THROWS_AS(check_trends(series, bad_metric), SpecError);
}

TEST_CASE("trend spec json") {
  const auto j = nlohmann::json::parse(R"({
    "orderings": [{"lhs": "neil-star", "rhs": "neil", "metric": "annotations_cum", "at": "every",
                   "from_iteration": 1, "strict": true}],
    "trends": [{"system": "neil", "series": "e_i", "direction": "non_increasing"}]})");
  const TrendSpec spec = trend_spec_from_json(j);
  REQUIRE(spec.orderings.size() == 1);
  CHECK(spec.orderings[0].strict);
  CHECK(spec.orderings[0].at == "every");
  CHECK(spec.trends[0].direction == Direction::NonIncreasing);
  CHECK_THROWS_AS(trend_spec_from_json(nlohmann::json::parse(R"({"trends": [{"system": "neil"}]})")), SpecError);
  CHECK_THROWS_AS(trend_spec_from_json(nlohmann::json::parse(
                      R"({"trends": [{"system": "a", "series": "e_i", "direction": "sideways"}]})")),
                  SpecError);

  const auto shipped = load_trend_spec(std::filesystem::path(NEIL_SOURCE_DIR) / "configs" / "trends.json");
  CHECK_FALSE(shipped.orderings.empty());
  CHECK_FALSE(shipped.trends.empty());
}

TEST_CASE("emitted series round trip") {
  std::vector<MeanRow> rows;
  for (int i = 0; i < 4; ++i) rows.push_back(row(SystemKind::Neil, i, 7.0 * i, 0.125 * i, 0.046875 * i));
  const auto series = build_series({{"exp", rows}});
  const auto dir = test::scratch_dir("metrics-emit");

  const auto csv = emit(series, dir, "csv");
  CHECK(csv.size() == series.size());
  for (std::size_t i = 0; i < series.size(); ++i) {
    CHECK(csv[i] == dir / "exp" / "neil" / (series[i].name + ".csv"));
    std::ifstream in(csv[i]);
    std::string header;
    std::getline(in, header);
    CHECK(header == kSeriesHeader);
    CHECK(read_series_csv(csv[i], "exp") == series[i]);
  }
  const auto js = emit(series, dir, "json");
  for (std::size_t i = 0; i < series.size(); ++i) CHECK(read_series_json(js[i]) == series[i]);
  CHECK_THROWS_AS(emit(series, dir, "xml"), SpecError);

  std::ofstream(dir / "broken.csv") << "wrong header\n";
  CHECK_THROWS_AS(read_series_csv(dir / "broken.csv", "exp"), ParseError);
}

TEST_CASE("ten systems by fifty iterations") {
  const auto start = std::chrono::steady_clock::now();
  std::vector<MeanRow> rows;
  for (int s = 0; s < 10; ++s)
    for (int i = 0; i < 50; ++i)
      rows.push_back(row(kAllSystems[s % 6], i, i * 3.0, 0.01 * i, i > 0 ? std::optional<double>(0.1) : std::nullopt));
  const auto series = build_series({{"big", rows}});
  const auto dir = test::scratch_dir("metrics-big");
  emit(series, dir, "csv");
  CHECK(std::chrono::steady_clock::now() - start < std::chrono::seconds(1));
}
