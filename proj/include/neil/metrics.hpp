#pragma once

// Plot-ready series and trend checks over seed-averaged iteration reports.

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "neil/learning.hpp"

namespace neil::metrics {

enum class XKind { AnnotationsCum, Iteration };
enum class YKind { TestAcc, ValAcc, InteractionsPerQ, E, Beta, EpsTilde };

std::string_view to_string(XKind k);
std::string_view to_string(YKind k);
XKind parse_x_kind(std::string_view s);
YKind parse_y_kind(std::string_view s);

struct SeriesPoint {
  std::string system;
  int iteration = 0;
  XKind x_kind = XKind::Iteration;
  double x = 0.0;
  YKind y_kind = YKind::TestAcc;
  double y = 0.0;

  bool operator==(const SeriesPoint&) const = default;
};

struct Series {
  std::string experiment_id;
  std::string system;
  /// acc_vs_annotations, acc_vs_iterations, interactions_per_question, e_i, beta_i, eps_tilde_i
  std::string name;
  std::vector<SeriesPoint> points;

  bool operator==(const Series&) const = default;
};

struct ReportSet {
  std::string experiment_id;
  std::vector<MeanRow> rows;
};

/// Throws ConsistencyError when the sets come from different experiments.
std::vector<Series> build_series(const std::vector<ReportSet>& sets);

/// Least-squares slope of y against x.
double slope(const std::vector<double>& x, const std::vector<double>& y);

struct Ordering {
  std::string lhs, rhs;
  /// test_acc, annotations_cum, interactions_per_q, e_i, beta_i, eps_tilde_i
  std::string metric;
  /// "final" or "every" (every iteration from `from_iteration` on).
  std::string at = "final";
  int from_iteration = 0;
  double tol = 0.0;
  /// lhs < rhs + tol instead of lhs <= rhs + tol.
  bool strict = false;
};

enum class Direction { Decreasing, NonIncreasing, Increasing, NonDecreasing };

struct Trend {
  std::string system;
  std::string series;
  Direction direction = Direction::NonIncreasing;
  double tol = 0.0;
  int from_iteration = 1;
};

struct TrendSpec {
  std::vector<Ordering> orderings;
  std::vector<Trend> trends;
};

TrendSpec trend_spec_from_json(const nlohmann::json& j);
TrendSpec load_trend_spec(const std::filesystem::path& path);

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

/// Throws SpecError when a referenced series is missing.
std::vector<CheckResult> check_trends(const std::vector<Series>& series, const TrendSpec& spec);

/// Writes `{dir}/{experiment_id}/{system}/{series}.csv` (or .json); returns the paths.
std::vector<std::filesystem::path> emit(const std::vector<Series>& series, const std::filesystem::path& dir,
                                        const std::string& format);
Series read_series_csv(const std::filesystem::path& path, const std::string& experiment_id);
Series read_series_json(const std::filesystem::path& path);

inline constexpr const char* kSeriesHeader = "system,series,iteration,x_kind,x,y_kind,y";

}  // namespace neil::metrics
