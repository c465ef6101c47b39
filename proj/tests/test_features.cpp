#include <doctest.h>

#include <cctype>
#include <set>

#include "neil/error.hpp"
#include "neil/features.hpp"
#include "support.hpp"

using namespace neil;

namespace {

State at(const std::string& q, const Table& t, std::vector<Action> prefix) {
  return {tokenize(q), t.id, std::move(prefix)};
}

}  // namespace

TEST_CASE("aggregator candidates") {
  const Table t = test::roster_table();
  const auto num = candidate_actions(at("what is the largest no. ?", t, {SelectCol{"no."}}), t);
  CHECK(num.size() == 6);
  // TEXT select columns only take NONE and COUNT
  const auto text = candidate_actions(at("which player ?", t, {SelectCol{"player"}}), t);
  CHECK(text == std::vector<Action>{SetAgg{Agg::None}, SetAgg{Agg::Count}});
}

TEST_CASE("condition-column candidates on a 4-column table") {
  Table t;
  t.id = "four";
  t.columns = {{"a", ColumnKind::Text, {}}, {"b", ColumnKind::Number, {}}, {"c", ColumnKind::Text, {}},
               {"d", ColumnKind::Number, {}}};
  t.rows = {{std::string("x"), 1.0, std::string("y"), 2.0}};
  test::fill_vocabulary(t);
  const auto with_number = candidate_actions(at("a with 3", t, {SelectCol{"a"}, SetAgg{}}), t);
  CHECK(with_number == std::vector<Action>{WhereCol{"a"}, WhereCol{"b"}, WhereCol{"c"}, WhereCol{"d"}, EndWhere{}});
  // no number to copy, so NUMBER columns drop out
  const auto without = candidate_actions(at("a with x", t, {SelectCol{"a"}, SetAgg{}}), t);
  CHECK(without == std::vector<Action>{WhereCol{"a"}, WhereCol{"c"}, EndWhere{}});
  // canonical order: only columns after the last condition column
  const auto after_b = candidate_actions(
      at("a with 3", t, {SelectCol{"a"}, SetAgg{}, WhereCol{"b"}, WhereOp{Op::Gt}, WhereVal{3.0}}), t);
  CHECK(after_b == std::vector<Action>{WhereCol{"c"}, WhereCol{"d"}, EndWhere{}});
}

TEST_CASE("third condition forces EndWhere") {
  Table t;
  t.id = "five";
  for (int i = 0; i < 5; ++i) t.columns.push_back({fmt::format("k{}", i), ColumnKind::Text, {}});
  t.rows = {{std::string("p"), std::string("p"), std::string("p"), std::string("p"), std::string("p")}};
  test::fill_vocabulary(t);
  std::vector<Action> prefix{SelectCol{"k0"}, SetAgg{}};
  for (int i = 0; i < 3; ++i) {
    prefix.push_back(WhereCol{fmt::format("k{}", i)});
    prefix.push_back(WhereOp{});
    prefix.push_back(WhereVal{std::string("p")});
  }
  CHECK(candidate_actions(at("p", t, prefix), t) == std::vector<Action>{EndWhere{}});
}

TEST_CASE("operators") {
  const Table t = test::roster_table();
  CHECK(candidate_actions(at("no. 5", t, {SelectCol{"player"}, SetAgg{}, WhereCol{"no."}}), t).size() == 3);
  CHECK(candidate_actions(at("x", t, {SelectCol{"player"}, SetAgg{}, WhereCol{"position"}}), t) ==
        std::vector<Action>{WhereOp{Op::Eq}});
}

TEST_CASE("NUMBER values are exactly the numeric tokens") {
  const Table t = test::roster_table();
  const State s = at("players with no. above 7 and below 30 ?", t,
                     {SelectCol{"player"}, SetAgg{}, WhereCol{"no."}, WhereOp{Op::Gt}});
  CHECK(candidate_actions(s, t) == std::vector<Action>{WhereVal{7.0}, WhereVal{30.0}});
}

TEST_CASE("TEXT values match a span enumeration") {
  Rng rng(8);
  const Table t = test::roster_table();
  const std::vector<std::string> pool{"jalen", "rose", "guard", "michigan", "12", "?", ",", "who", "is"};
  for (int trial = 0; trial < 200; ++trial) {
    Tokens q;
    const std::size_t n = 1 + rng.index(9);
    for (std::size_t i = 0; i < n; ++i) q.push_back(rng.pick(pool));
    const State s{q, t.id, {SelectCol{"player"}, SetAgg{}, WhereCol{"player"}, WhereOp{}}};

    std::set<std::string> want;
    for (std::size_t i = 0; i < n; ++i) {
      const bool numeric = !q[i].empty() && std::isdigit(static_cast<unsigned char>(q[i][0]));
      if (numeric) continue;
      for (std::size_t len = 1; len <= 4 && i + len <= n; ++len) {
        bool bad = false;
        for (std::size_t j = i; j < i + len; ++j) bad = bad || q[j] == "?" || q[j] == ",";
        if (bad) break;
        Tokens span(q.begin() + static_cast<long>(i), q.begin() + static_cast<long>(i + len));
        want.insert(join_tokens(span));
      }
    }
    std::set<std::string> got;
    const auto cands = candidate_actions(s, t);
    for (const auto& a : cands) got.insert(std::get<std::string>(std::get<WhereVal>(a).val));
    CHECK(got.size() == cands.size());
    CHECK(got == want);
  }
}

TEST_CASE("features are deterministic and finite") {
  const Table t = test::roster_table();
  const CorpusItem item = test::roster_item();
  const Trajectory tr = query_to_trajectory(item.gold, item.question, t.id);
  const QuestionAnalysis qa(item.question, t);
  for (std::size_t i = 0; i < tr.states.size(); ++i) {
    const auto a = extract_features(tr.states[i], tr.actions[i], t, qa);
    const auto b = extract_features(tr.states[i], tr.actions[i], t, QuestionAnalysis(item.question, t));
    CHECK(a.entries() == b.entries());
    CHECK_FALSE(a.empty());
    for (const auto& [id, v] : a.entries()) {
      CHECK(id < FeatureSpace::kDim);
      CHECK(std::isfinite(v));
    }
  }
  CHECK_THROWS_AS(FeatureVector({{1, std::nan("")}}), DomainError);
  const FeatureVector merged({{3, 1.0}, {1, 2.0}, {3, -1.0}});
  CHECK(merged.entries() == std::vector<FeatureVector::Entry>{{1, 2.0}});
}
