#include <doctest.h>

#include <cmath>
#include <map>

#include "neil/error.hpp"
#include "neil/sql.hpp"
#include "support.hpp"

using namespace neil;

namespace {

// Row scan written without the library's helpers. Returns (kind, scalar, sorted bag).
struct Naive {
  int kind = 0;  // 0 scalar, 1 bag, 2 empty
  double scalar = 0;
  std::vector<std::string> bag;
};

std::string cell_text(const Value& v) {
  if (std::holds_alternative<double>(v)) return fmt::format("n:{}", std::get<double>(v));
  return "s:" + std::get<std::string>(v);
}

Naive naive_execute(const SqlQuery& q, const Table& t) {
  std::map<std::string, std::size_t> idx;
  for (std::size_t i = 0; i < t.columns.size(); ++i) idx[t.columns[i].name] = i;
  std::vector<Value> vals;
  for (const auto& row : t.rows) {
    bool ok = true;
    for (const auto& c : q.conds) {
      const Value& cell = row[idx[c.col]];
      if (std::holds_alternative<std::string>(cell)) {
        ok = ok && std::get<std::string>(cell) == std::get<std::string>(c.val);
      } else {
        double x = std::get<double>(cell), y = std::get<double>(c.val);
        if (c.op == Op::Eq) ok = ok && x == y;
        if (c.op == Op::Gt) ok = ok && x > y;
        if (c.op == Op::Lt) ok = ok && x < y;
      }
    }
    if (ok) vals.push_back(row[idx[q.sel_col]]);
  }
  Naive r;
  if (q.agg == Agg::Count) {
    r.scalar = static_cast<double>(vals.size());
    return r;
  }
  if (vals.empty()) {
    r.kind = 2;
    return r;
  }
  if (q.agg == Agg::None) {
    r.kind = 1;
    for (const auto& v : vals) r.bag.push_back(cell_text(v));
    std::sort(r.bag.begin(), r.bag.end());
    return r;
  }
  double s = 0, mx = -1e300, mn = 1e300;
  for (const auto& v : vals) {
    double x = std::get<double>(v);
    s += x;
    if (x > mx) mx = x;
    if (x < mn) mn = x;
  }
  if (q.agg == Agg::Sum) r.scalar = s;
  if (q.agg == Agg::Avg) r.scalar = s / vals.size();
  if (q.agg == Agg::Max) r.scalar = mx;
  if (q.agg == Agg::Min) r.scalar = mn;
  return r;
}

}  // namespace

TEST_CASE("roster query decomposes into six decisions") {
  const auto a = query_actions(test::roster_gold());
  REQUIRE(a.size() == 6);
  CHECK(std::holds_alternative<SelectCol>(a[0]));
  CHECK(std::holds_alternative<SetAgg>(a[1]));
  CHECK(std::holds_alternative<WhereCol>(a[2]));
  CHECK(std::holds_alternative<WhereOp>(a[3]));
  CHECK(std::holds_alternative<WhereVal>(a[4]));
  CHECK(std::holds_alternative<EndWhere>(a[5]));
}

TEST_CASE("query without conditions has three decisions") {
  CHECK(query_actions(SqlQuery{"player", Agg::None, {}}).size() == 3);
}

TEST_CASE("trajectory length is 3 + 3k") {
  Rng rng(11);
  const Table t = test::random_table(rng, 10, 6);
  for (int i = 0; i < 200; ++i) {
    const SqlQuery q = test::random_query(rng, t);
    CHECK(query_actions(q).size() == 3 + 3 * q.conds.size());
  }
}

TEST_CASE("actions and queries round-trip on 1000 random queries") {
  Rng rng(5);
  for (int i = 0; i < 1000; ++i) {
    const Table t = test::random_table(rng, 8, 2 + rng.index(5));
    const SqlQuery q = test::random_query(rng, t);
    validate(q, t);
    const auto actions = query_actions(q);
    CHECK(actions_to_query(actions) == q);
    const Trajectory tr = query_to_trajectory(q, {"x"}, t.id);
    CHECK(tr.complete);
    CHECK(trajectory_to_query(tr) == q);
    CHECK(tr.states.size() == tr.actions.size());
    for (std::size_t s = 0; s < tr.states.size(); ++s) CHECK(tr.states[s].prefix.size() == s);
  }
}

TEST_CASE("stage machine") {
  CHECK(stage_after({}) == Stage::SelectCol);
  CHECK(stage_after({SelectCol{"a"}}) == Stage::Agg);
  CHECK(stage_after({SelectCol{"a"}, SetAgg{}}) == Stage::WhereColOrEnd);
  CHECK(stage_after({SelectCol{"a"}, SetAgg{}, EndWhere{}}) == Stage::Done);
  CHECK_THROWS_AS(stage_after({SetAgg{}}), StageError);
  CHECK_THROWS_AS(stage_after({SelectCol{"a"}, SetAgg{}, WhereCol{"b"}, EndWhere{}}), StageError);
  std::vector<Action> full{SelectCol{"a"}, SetAgg{}};
  for (int k = 0; k < 3; ++k) {
    full.push_back(WhereCol{fmt::format("c{}", k)});
    full.push_back(WhereOp{});
    full.push_back(WhereVal{1.0});
  }
  CHECK_THROWS_AS(stage_after([&] {
                    auto p = full;
                    p.push_back(WhereCol{"z"});
                    return p;
                  }()),
                  StageError);
  CHECK_THROWS_AS(actions_to_query({SelectCol{"a"}}), IncompleteError);
}

TEST_CASE("rendering") {
  CHECK(render(test::roster_gold()) == "SELECT COUNT(school/club team) WHERE player = \"jalen rose\"");
  CHECK(render(SqlQuery{"no.", Agg::None, {{"no.", Op::Gt, 5.0}, {"position", Op::Eq, std::string("guard")}}}) ==
        "SELECT no. WHERE no. > 5 AND position = \"guard\"");
  CHECK(render_partial({}) == "SELECT ? ...");
  CHECK(render_partial({SelectCol{"player"}}) == "SELECT ?(player) ...");
  CHECK(render_partial({SelectCol{"player"}, SetAgg{Agg::None}}) == "SELECT player ...");
  CHECK(render_partial({SelectCol{"player"}, SetAgg{Agg::Count}, WhereCol{"no."}}) ==
        "SELECT COUNT(player) WHERE no. ? ? ...");
  CHECK(render_partial({SelectCol{"player"}, SetAgg{Agg::Count}, WhereCol{"no."}, WhereOp{Op::Lt}}) ==
        "SELECT COUNT(player) WHERE no. < ? ...");
  CHECK(render_partial({SelectCol{"player"}, SetAgg{Agg::Count}, WhereCol{"no."}, WhereOp{Op::Lt}, WhereVal{7.0}}) ==
        "SELECT COUNT(player) WHERE no. < 7 ...");
  CHECK(render_partial(query_actions(test::roster_gold())) == render(test::roster_gold()));
}

TEST_CASE("validation rejects ill-typed queries") {
  const Table t = test::roster_table();
  CHECK_NOTHROW(validate(test::roster_gold(), t));
  CHECK_THROWS_AS(validate(SqlQuery{"player", Agg::Sum, {}}, t), TypingError);
  CHECK_THROWS_AS(validate(SqlQuery{"nope", Agg::None, {}}, t), TypingError);
  CHECK_THROWS_AS(validate(SqlQuery{"player", Agg::None, {{"position", Op::Gt, std::string("x")}}}, t), TypingError);
  CHECK_THROWS_AS(validate(SqlQuery{"player", Agg::None, {{"no.", Op::Eq, std::string("x")}}}, t), TypingError);
  CHECK_THROWS_AS(validate(SqlQuery{"player",
                                    Agg::None,
                                    {{"position", Op::Eq, std::string("guard")}, {"no.", Op::Eq, 5.0}}},
                           t),
                  TypingError);
}

TEST_CASE("execution conventions") {
  const Table t = test::roster_table();
  auto r = execute(test::roster_gold(), t);
  REQUIRE(std::holds_alternative<Scalar>(r));
  CHECK(std::get<Scalar>(r).value == 1.0);

  r = execute(SqlQuery{"player", Agg::Count, {{"player", Op::Eq, std::string("nobody")}}}, t);
  REQUIRE(std::holds_alternative<Scalar>(r));
  CHECK(std::get<Scalar>(r).value == 0.0);

  r = execute(SqlQuery{"no.", Agg::Max, {{"player", Op::Eq, std::string("nobody")}}}, t);
  CHECK(std::holds_alternative<Empty>(r));

  r = execute(SqlQuery{"player", Agg::None, {}}, t);
  REQUIRE(std::holds_alternative<Bag>(r));
  CHECK(std::get<Bag>(r).items.size() == t.rows.size());
}

TEST_CASE("results_equal") {
  CHECK(results_equal(Scalar{3}, Scalar{3}));
  CHECK(results_equal(Scalar{3}, Scalar{3 + 1e-10}));
  CHECK_FALSE(results_equal(Scalar{3}, Scalar{3.001}));
  const Value a = std::string("a"), b = std::string("b");
  CHECK(results_equal(Bag{{a, a, b}}, Bag{{a, b, a}}));
  CHECK_FALSE(results_equal(Bag{{a, a, b}}, Bag{{a, b, b}}));
  CHECK_FALSE(results_equal(Scalar{0}, Empty{}));
  CHECK(results_equal(Empty{}, Empty{}));
}

TEST_CASE("execute agrees with a row-scan oracle on 1000 queries over 50-row tables") {
  Rng rng(99);
  for (int i = 0; i < 1000; ++i) {
    const Table t = test::random_table(rng, 50, 5, "r");
    const SqlQuery q = test::random_query(rng, t);
    const ExecResult got = execute(q, t);
    const Naive want = naive_execute(q, t);
    REQUIRE(static_cast<int>(got.index()) == want.kind);
    if (want.kind == 0) CHECK(std::abs(std::get<Scalar>(got).value - want.scalar) <= 1e-9);
    if (want.kind == 1) {
      std::vector<std::string> bag;
      for (const auto& v : std::get<Bag>(got).items) bag.push_back(cell_text(v));
      std::sort(bag.begin(), bag.end());
      CHECK(bag == want.bag);
    }
  }
}
