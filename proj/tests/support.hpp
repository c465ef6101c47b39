#pragma once

// Shared fixtures for the test binaries.

#include <algorithm>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "neil/corpus.hpp"
#include "neil/features.hpp"
#include "neil/policy.hpp"
#include "neil/rng.hpp"
#include "neil/sql.hpp"

namespace neil::test {

inline void fill_vocabulary(Table& t) {
  for (std::size_t c = 0; c < t.columns.size(); ++c) {
    std::set<Value> seen;
    t.columns[c].vocabulary.clear();
    for (const auto& r : t.rows)
      if (seen.insert(r[c]).second) t.columns[c].vocabulary.push_back(r[c]);
  }
}

// Toronto roster from the running example.
inline Table roster_table() {
  Table t;
  t.id = "raptors";
  t.columns = {{"player", ColumnKind::Text, {}},
               {"no.", ColumnKind::Number, {}},
               {"nationality", ColumnKind::Text, {}},
               {"position", ColumnKind::Text, {}},
               {"years in toronto", ColumnKind::Text, {}},
               {"school/club team", ColumnKind::Text, {}}};
  auto row = [](const char* p, double n, const char* nat, const char* pos, const char* y, const char* s) {
    return std::vector<Value>{std::string(p), n, std::string(nat), std::string(pos), std::string(y), std::string(s)};
  };
  t.rows = {row("aleksandar radojevic", 25, "serbia", "center", "1999-2000", "barton cc"),
            row("shawn respert", 31, "united states", "guard", "1997-98", "michigan state"),
            row("quentin richardson", 24, "united states", "forward", "2013-present", "depaul"),
            row("alvin robertson", 7, "united states", "guard", "1995-96", "arkansas"),
            row("jalen rose", 5, "united states", "guard-forward", "2003-06", "michigan")};
  fill_vocabulary(t);
  return t;
}

inline SqlQuery roster_gold() {
  return {"school/club team", Agg::Count, {{"player", Op::Eq, std::string("jalen rose")}}};
}

inline CorpusItem roster_item() {
  return {tokenize("how many school/club team has jalen rose played for ?"), "raptors", roster_gold()};
}

inline TableSet single(const Table& t) { return {{t.id, t}}; }

/// A desired action distribution at one state; unlisted candidates get 0.
struct Target {
  State state;
  std::vector<std::pair<Action, double>> dist;
};

/// Cross-entropy gradient steps toward the targets. A one-hot target stops
/// pulling once its action reaches `confident`.
inline Policy fit_targets(Policy p, const std::vector<Target>& targets, const TableSet& tables, int steps = 400,
                          double confident = 0.995) {
  for (int it = 0; it < steps; ++it) {
    bool moved = false;
    for (const auto& tg : targets) {
      const Table& t = lookup(tables, tg.state.table_id);
      const CandidateSet cs = featurize(tg.state, t, QuestionAnalysis(tg.state.question, t));
      std::vector<double> scores;
      for (const auto& f : cs.features) scores.push_back(f.dot(p.weights));
      const auto probs = softmax(scores);
      std::vector<double> q(cs.actions.size(), 0.0);
      for (const auto& [a, w] : tg.dist)
        for (std::size_t c = 0; c < cs.actions.size(); ++c)
          if (cs.actions[c] == a) q[c] = w;
      if (tg.dist.size() == 1) {
        const auto c = static_cast<std::size_t>(std::max_element(q.begin(), q.end()) - q.begin());
        if (probs[c] >= confident) continue;
      }
      moved = true;
      for (std::size_t c = 0; c < cs.actions.size(); ++c)
        for (const auto& [id, v] : cs.features[c].entries()) p.weights[id] += (q[c] - probs[c]) * v;
    }
    if (!moved) break;
  }
  return p;
}

/// Weights under which every gold step of every item is confident.
inline Policy gold_policy(const std::vector<CorpusItem>& items, const TableSet& tables) {
  std::vector<Target> targets;
  for (const auto& item : items) {
    const Trajectory tr = query_to_trajectory(item.gold, item.question, item.table_id);
    for (std::size_t i = 0; i < tr.actions.size(); ++i) targets.push_back({tr.states[i], {{tr.actions[i], 1.0}}});
  }
  return fit_targets(Policy::zero(), targets, tables);
}

inline std::string word(Rng& rng) {
  static const std::vector<std::string> w{"red", "blue", "oak", "pine", "lake", "hill", "fox", "owl"};
  return rng.pick(w);
}

/// Random table; NUMBER cells are small integers so comparisons tie often.
inline Table random_table(Rng& rng, std::size_t rows, std::size_t cols, const std::string& id = "t") {
  Table t;
  t.id = id;
  for (std::size_t c = 0; c < cols; ++c)
    t.columns.push_back({fmt::format("c{}", c), rng.bernoulli(0.5) ? ColumnKind::Number : ColumnKind::Text, {}});
  t.columns[0].kind = ColumnKind::Text;
  for (std::size_t r = 0; r < rows; ++r) {
    std::vector<Value> row;
    for (const auto& c : t.columns)
      row.push_back(c.kind == ColumnKind::Number ? Value(static_cast<double>(rng.index(10))) : Value(word(rng)));
    t.rows.push_back(std::move(row));
  }
  fill_vocabulary(t);
  return t;
}

/// Random valid query: ascending distinct condition columns, kind-correct
/// operators and aggregators, values from the column vocabulary.
inline SqlQuery random_query(Rng& rng, const Table& t) {
  SqlQuery q;
  const auto& sel = t.columns[rng.index(t.columns.size())];
  q.sel_col = sel.name;
  if (sel.kind == ColumnKind::Number)
    q.agg = static_cast<Agg>(rng.index(kNumAggs));
  else
    q.agg = rng.bernoulli(0.5) ? Agg::None : Agg::Count;
  std::vector<std::size_t> cols(t.columns.size());
  for (std::size_t i = 0; i < cols.size(); ++i) cols[i] = i;
  rng.shuffle(cols);
  const std::size_t k = rng.index(std::min<std::size_t>(kMaxConditions, cols.size()) + 1);
  cols.resize(k);
  std::sort(cols.begin(), cols.end());
  for (auto c : cols) {
    const auto& col = t.columns[c];
    Condition cond{col.name, Op::Eq, rng.pick(col.vocabulary)};
    if (col.kind == ColumnKind::Number) cond.op = static_cast<Op>(rng.index(kNumOps));
    q.conds.push_back(std::move(cond));
  }
  return q;
}

inline std::filesystem::path scratch_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / fmt::format("neil-test-{}", name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace neil::test
