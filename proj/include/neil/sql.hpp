#pragma once

// Sketch SQL: SELECT Agg(SCol) WHERE WCol OP VAL AND ...
//
// A query is built by a fixed sequence of slot-filling decisions. The decode
// stage machine is
//
//   SelectCol -> Agg -> {WhereCol | EndWhere}
//   WhereCol  -> Op  -> Val -> {WhereCol | EndWhere}
//
// so a query with k conditions has trajectory length 3 + 3k.

#include <compare>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace neil {

enum class Agg { None, Count, Max, Min, Sum, Avg };
enum class Op { Eq, Gt, Lt };
enum class ColumnKind { Text, Number };

inline constexpr int kNumAggs = 6;
inline constexpr int kNumOps = 3;
inline constexpr std::size_t kMaxConditions = 3;

std::string_view to_string(Agg agg);
std::string_view to_string(Op op);
std::string_view to_string(ColumnKind kind);
Agg parse_agg(std::string_view s);
Op parse_op(std::string_view s);
ColumnKind parse_column_kind(std::string_view s);
/// SQL symbol for an operator: "=", ">", "<".
std::string_view op_symbol(Op op);

/// A cell or literal. NUMBER columns hold doubles, TEXT columns hold strings.
using Value = std::variant<double, std::string>;

/// Surface form of a value as it appears in question text ("42", "jalen rose").
std::string value_token(const Value& v);
bool is_number(const Value& v);

struct ColumnSpec {
  std::string name;
  ColumnKind kind = ColumnKind::Text;
  std::vector<Value> vocabulary;

  bool operator==(const ColumnSpec&) const = default;
};

struct Table {
  std::string id;
  std::vector<ColumnSpec> columns;
  std::vector<std::vector<Value>> rows;

  /// Index of the named column, or -1.
  int column_index(std::string_view name) const;
  const ColumnSpec& column(std::string_view name) const;
  /// Throws TypingError when an invariant is broken.
  void validate() const;

  bool operator==(const Table&) const = default;
};

struct Condition {
  std::string col;
  Op op = Op::Eq;
  Value val;

  auto operator<=>(const Condition&) const = default;
  bool operator==(const Condition&) const = default;
};

struct SqlQuery {
  std::string sel_col;
  Agg agg = Agg::None;
  std::vector<Condition> conds;

  auto operator<=>(const SqlQuery&) const = default;
  bool operator==(const SqlQuery&) const = default;
};

/// Throws TypingError if `q` is not a valid query against `table`.
void validate(const SqlQuery& q, const Table& table);

/// "SELECT COUNT(col) WHERE a = \"x\" AND b > 3"; grammar in docs/sql_rendering.md.
std::string render(const SqlQuery& q);

// ---------------------------------------------------------------------------
// Actions and decode states.

struct SelectCol {
  std::string col;
  auto operator<=>(const SelectCol&) const = default;
};
struct SetAgg {
  Agg agg = Agg::None;
  auto operator<=>(const SetAgg&) const = default;
};
struct WhereCol {
  std::string col;
  auto operator<=>(const WhereCol&) const = default;
};
struct WhereOp {
  Op op = Op::Eq;
  auto operator<=>(const WhereOp&) const = default;
};
struct WhereVal {
  Value val;
  auto operator<=>(const WhereVal&) const = default;
};
struct EndWhere {
  auto operator<=>(const EndWhere&) const = default;
};

using Action = std::variant<SelectCol, SetAgg, WhereCol, WhereOp, WhereVal, EndWhere>;

std::string describe(const Action& a);

enum class Stage { SelectCol, Agg, WhereColOrEnd, WhereOp, WhereVal, Done };

std::string_view to_string(Stage s);

/// Decision type of an action: the stage at which it is legal.
Stage action_stage(const Action& a);

/// Stage reached after `prefix`. Throws StageError if the prefix is not a
/// legal action sequence.
Stage stage_after(const std::vector<Action>& prefix);

/// Stage after `prefix` plus one more action; throws StageError if illegal.
Stage advance(Stage s, const Action& a, std::size_t conds_so_far);

struct State {
  std::vector<std::string> question;
  std::string table_id;
  std::vector<Action> prefix;

  Stage stage() const { return stage_after(prefix); }
  std::size_t num_conditions() const;

  auto operator<=>(const State&) const = default;
  bool operator==(const State&) const = default;
};

struct Trajectory {
  std::vector<State> states;
  std::vector<Action> actions;
  bool complete = false;
};

/// Decision sequence of a query: SCol, Agg, (WCol, Op, Val)*, EndWhere.
std::vector<Action> query_actions(const SqlQuery& q);
Trajectory query_to_trajectory(const SqlQuery& q, const std::vector<std::string>& question,
                               const std::string& table_id);
/// Throws IncompleteError unless the actions form a complete parse.
SqlQuery actions_to_query(const std::vector<Action>& actions);
SqlQuery trajectory_to_query(const Trajectory& traj);

/// Rendering of a possibly unfinished parse: unfilled slots print as "?" and
/// an unfinished parse ends in " ...". A complete prefix renders as its query.
std::string render_partial(const std::vector<Action>& prefix);

// ---------------------------------------------------------------------------
// Execution.

struct Scalar {
  double value = 0.0;
};
struct Bag {
  std::vector<Value> items;
};
struct Empty {};

using ExecResult = std::variant<Scalar, Bag, Empty>;

/// Runs `q` over `table`. Throws TypingError on kind mismatches.
ExecResult execute(const SqlQuery& q, const Table& table);

/// Scalars within 1e-9; bags as multisets; Empty equals only Empty.
bool results_equal(const ExecResult& a, const ExecResult& b);

std::string describe(const ExecResult& r);

}  // namespace neil
