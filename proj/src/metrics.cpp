#include "neil/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "neil/error.hpp"

namespace neil::metrics {

using nlohmann::json;

std::string_view to_string(XKind k) { return k == XKind::AnnotationsCum ? "annotations_cum" : "iteration"; }

std::string_view to_string(YKind k) {
  switch (k) {
    case YKind::TestAcc: return "test_acc";
    case YKind::ValAcc: return "val_acc";
    case YKind::InteractionsPerQ: return "interactions_per_q";
    case YKind::E: return "e_i";
    case YKind::Beta: return "beta_i";
    case YKind::EpsTilde: return "eps_tilde_i";
  }
  return "?";
}

XKind parse_x_kind(std::string_view s) {
  if (s == "annotations_cum") return XKind::AnnotationsCum;
  if (s == "iteration") return XKind::Iteration;
  throw ParseError(fmt::format("unknown x kind '{}'", s));
}

YKind parse_y_kind(std::string_view s) {
  for (auto k : {YKind::TestAcc, YKind::ValAcc, YKind::InteractionsPerQ, YKind::E, YKind::Beta, YKind::EpsTilde})
    if (to_string(k) == s) return k;
  throw ParseError(fmt::format("unknown y kind '{}'", s));
}

std::vector<Series> build_series(const std::vector<ReportSet>& sets) {
  if (sets.empty()) throw SpecError("no reports");
  const std::string id = sets.front().experiment_id;
  for (const auto& s : sets)
    if (s.experiment_id != id)
      throw ConsistencyError(fmt::format("mixed experiment ids '{}' and '{}'", id, s.experiment_id));

  std::map<SystemKind, std::vector<MeanRow>> by_system;
  for (const auto& s : sets)
    for (const auto& r : s.rows) by_system[r.system].push_back(r);

  std::vector<Series> out;
  for (auto& [system, rows] : by_system) {
    std::sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) { return a.iteration < b.iteration; });
    const std::string name(to_string(system));
    auto make = [&](std::string series, XKind xk, YKind yk, auto x_of, auto y_of, bool need_diag) {
      Series s{id, name, std::move(series), {}};
      for (const auto& r : rows) {
        if (need_diag && !r.diagnostics) continue;
        s.points.push_back({name, r.iteration, xk, x_of(r), yk, y_of(r)});
      }
      if (!s.points.empty()) out.push_back(std::move(s));
    };
    auto iter = [](const MeanRow& r) { return static_cast<double>(r.iteration); };
    make("acc_vs_annotations", XKind::AnnotationsCum, YKind::TestAcc,
         [](const MeanRow& r) { return r.annotations_cum; }, [](const MeanRow& r) { return r.test_accuracy; },
         false);
    make("acc_vs_iterations", XKind::Iteration, YKind::TestAcc, iter,
         [](const MeanRow& r) { return r.test_accuracy; }, false);
    if (system == SystemKind::Neil || system == SystemKind::NeilStar)
      make("interactions_per_question", XKind::Iteration, YKind::InteractionsPerQ, iter,
           [](const MeanRow& r) { return r.interactions_per_question; }, false);
    make("e_i", XKind::Iteration, YKind::E, iter, [](const MeanRow& r) { return r.diagnostics->e; }, true);
    make("beta_i", XKind::Iteration, YKind::Beta, iter, [](const MeanRow& r) { return r.diagnostics->beta; }, true);
    make("eps_tilde_i", XKind::Iteration, YKind::EpsTilde, iter,
         [](const MeanRow& r) { return r.diagnostics->eps_tilde; }, true);
  }
  return out;
}

double slope(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw SpecError("slope needs at least two points");
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i] / n;
    my += y[i] / n;
  }
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
  }
  if (sxx == 0) throw SpecError("slope undefined for constant x");
  return sxy / sxx;
}

namespace {

Direction parse_direction(const std::string& s) {
  if (s == "decreasing") return Direction::Decreasing;
  if (s == "non_increasing") return Direction::NonIncreasing;
  if (s == "increasing") return Direction::Increasing;
  if (s == "non_decreasing") return Direction::NonDecreasing;
  throw SpecError(fmt::format("unknown trend direction '{}'", s));
}

std::string_view direction_name(Direction d) {
  switch (d) {
    case Direction::Decreasing: return "decreasing";
    case Direction::NonIncreasing: return "non_increasing";
    case Direction::Increasing: return "increasing";
    case Direction::NonDecreasing: return "non_decreasing";
  }
  return "?";
}

const Series& find_series(const std::vector<Series>& all, const std::string& system, const std::string& name) {
  for (const auto& s : all)
    if (s.system == system && s.name == name) return s;
  throw SpecError(fmt::format("missing series {}/{}", system, name));
}

// Value of `metric` for `system` at each iteration.
std::map<int, double> metric_values(const std::vector<Series>& all, const std::string& system,
                                    const std::string& metric) {
  std::map<int, double> out;
  if (metric == "test_acc") {
    for (const auto& p : find_series(all, system, "acc_vs_iterations").points) out[p.iteration] = p.y;
  } else if (metric == "annotations_cum") {
    for (const auto& p : find_series(all, system, "acc_vs_annotations").points) out[p.iteration] = p.x;
  } else if (metric == "interactions_per_q") {
    for (const auto& p : find_series(all, system, "interactions_per_question").points) out[p.iteration] = p.y;
  } else if (metric == "e_i" || metric == "beta_i" || metric == "eps_tilde_i") {
    for (const auto& p : find_series(all, system, metric).points) out[p.iteration] = p.y;
  } else {
    throw SpecError(fmt::format("unknown metric '{}'", metric));
  }
  return out;
}

}  // namespace

TrendSpec trend_spec_from_json(const json& j) {
  TrendSpec spec;
  try {
    for (const auto& o : j.value("orderings", json::array())) {
      Ordering ord;
      ord.lhs = o.at("lhs").get<std::string>();
      ord.rhs = o.at("rhs").get<std::string>();
      ord.metric = o.at("metric").get<std::string>();
      ord.at = o.value("at", ord.at);
      ord.from_iteration = o.value("from_iteration", ord.from_iteration);
      ord.tol = o.value("tol", ord.tol);
      ord.strict = o.value("strict", ord.strict);
      if (ord.at != "final" && ord.at != "every") throw SpecError("ordering 'at' must be final or every");
      spec.orderings.push_back(ord);
    }
    for (const auto& t : j.value("trends", json::array())) {
      Trend tr;
      tr.system = t.at("system").get<std::string>();
      tr.series = t.at("series").get<std::string>();
      tr.direction = parse_direction(t.at("direction").get<std::string>());
      tr.tol = t.value("tol", tr.tol);
      tr.from_iteration = t.value("from_iteration", tr.from_iteration);
      spec.trends.push_back(tr);
    }
  } catch (const json::exception& e) {
    throw SpecError(e.what());
  }
  return spec;
}

TrendSpec load_trend_spec(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw SpecError(fmt::format("cannot open {}", path.string()));
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw SpecError(fmt::format("{}: {}", path.string(), e.what()));
  }
  return trend_spec_from_json(j);
}

std::vector<CheckResult> check_trends(const std::vector<Series>& series, const TrendSpec& spec) {
  std::vector<CheckResult> out;
  for (const auto& o : spec.orderings) {
    const auto lhs = metric_values(series, o.lhs, o.metric);
    const auto rhs = metric_values(series, o.rhs, o.metric);
    const char* rel = o.strict ? "<" : "<=";
    CheckResult r;
    r.name = fmt::format("{}({}) {} {}({}){} [{}]", o.metric, o.lhs, rel, o.metric, o.rhs,
                         o.tol != 0 ? fmt::format(" + {}", o.tol) : "", o.at);
    r.passed = true;
    auto holds = [&](double a, double b) { return o.strict ? a < b + o.tol : a <= b + o.tol; };
    if (o.at == "final") {
      if (lhs.empty() || rhs.empty()) throw SpecError("empty series in ordering");
      const double a = lhs.rbegin()->second, b = rhs.rbegin()->second;
      r.passed = holds(a, b);
      r.detail = fmt::format("{:.6f} vs {:.6f}", a, b);
    } else {
      int checked = 0;
      for (const auto& [it, a] : lhs) {
        if (it < o.from_iteration) continue;
        auto jt = rhs.find(it);
        if (jt == rhs.end()) continue;
        ++checked;
        if (!holds(a, jt->second)) {
          r.passed = false;
          r.detail = fmt::format("iteration {}: {:.6f} vs {:.6f}", it, a, jt->second);
          break;
        }
      }
      if (checked == 0) {
        r.passed = false;
        r.detail = "no common iterations";
      } else if (r.passed) {
        r.detail = fmt::format("{} iterations", checked);
      }
    }
    out.push_back(std::move(r));
  }
  for (const auto& t : spec.trends) {
    const auto& s = find_series(series, t.system, t.series);
    std::vector<double> x, y;
    for (const auto& p : s.points)
      if (p.iteration >= t.from_iteration) {
        x.push_back(static_cast<double>(p.iteration));
        y.push_back(p.y);
      }
    CheckResult r;
    r.name = fmt::format("{}/{} {}", t.system, t.series, direction_name(t.direction));
    if (x.size() < 2) {
      r.passed = false;
      r.detail = "fewer than two points";
    } else {
      const double b = slope(x, y);
      switch (t.direction) {
        case Direction::Decreasing: r.passed = b < -t.tol; break;
        case Direction::NonIncreasing: r.passed = b <= t.tol; break;
        case Direction::Increasing: r.passed = b > t.tol; break;
        case Direction::NonDecreasing: r.passed = b >= -t.tol; break;
      }
      r.detail = fmt::format("slope {:.6g}", b);
    }
    out.push_back(std::move(r));
  }
  return out;
}

namespace {

std::string fmt_num(double v) { return fmt::format("{:.6f}", v); }

}  // namespace

std::vector<std::filesystem::path> emit(const std::vector<Series>& series, const std::filesystem::path& dir,
                                        const std::string& format) {
  if (format != "csv" && format != "json") throw SpecError(fmt::format("unknown format '{}'", format));
  std::vector<std::filesystem::path> written;
  for (const auto& s : series) {
    const auto sub = dir / s.experiment_id / s.system;
    std::filesystem::create_directories(sub);
    const auto path = sub / (s.name + "." + format);
    std::ofstream out(path);
    if (format == "csv") {
      out << kSeriesHeader << '\n';
      for (const auto& p : s.points)
        out << fmt::format("{},{},{},{},{},{},{}\n", p.system, s.name, p.iteration, to_string(p.x_kind),
                           fmt_num(p.x), to_string(p.y_kind), fmt_num(p.y));
    } else {
      json pts = json::array();
      for (const auto& p : s.points)
        pts.push_back({{"iteration", p.iteration},
                       {"x_kind", to_string(p.x_kind)},
                       {"x", p.x},
                       {"y_kind", to_string(p.y_kind)},
                       {"y", p.y}});
      out << json{{"experiment_id", s.experiment_id}, {"system", s.system}, {"series", s.name}, {"points", pts}}
                 .dump(1)
          << '\n';
    }
    if (!out) throw Error(fmt::format("cannot write {}", path.string()));
    written.push_back(path);
  }
  return written;
}

Series read_series_csv(const std::filesystem::path& path, const std::string& experiment_id) {
  std::ifstream in(path);
  if (!in) throw ParseError(fmt::format("cannot open {}", path.string()));
  std::string line;
  if (!std::getline(in, line) || line != kSeriesHeader) throw ParseError("unexpected series header", 1);
  Series s;
  s.experiment_id = experiment_id;
  std::size_t n = 1;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    std::vector<std::string> c;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) c.push_back(cell);
    if (c.size() != 7) throw ParseError("expected 7 cells", n);
    try {
      s.system = c[0];
      s.name = c[1];
      s.points.push_back({c[0], std::stoi(c[2]), parse_x_kind(c[3]), std::stod(c[4]), parse_y_kind(c[5]),
                          std::stod(c[6])});
    } catch (const ParseError&) {
      throw;
    } catch (const std::exception& e) {
      throw ParseError(e.what(), n);
    }
  }
  return s;
}

Series read_series_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(fmt::format("cannot open {}", path.string()));
  json j;
  try {
    in >> j;
    Series s{j.at("experiment_id").get<std::string>(), j.at("system").get<std::string>(),
             j.at("series").get<std::string>(), {}};
    for (const auto& p : j.at("points"))
      s.points.push_back({s.system, p.at("iteration").get<int>(), parse_x_kind(p.at("x_kind").get<std::string>()),
                          p.at("x").get<double>(), parse_y_kind(p.at("y_kind").get<std::string>()),
                          p.at("y").get<double>()});
    return s;
  } catch (const json::exception& e) {
    throw ParseError(fmt::format("{}: {}", path.string(), e.what()));
  }
}

}  // namespace neil::metrics
