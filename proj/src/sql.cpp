#include "neil/sql.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include <fmt/format.h>

#include "neil/error.hpp"

namespace neil {

namespace {

constexpr std::string_view kAggNames[] = {"NONE", "COUNT", "MAX", "MIN", "SUM", "AVG"};
constexpr std::string_view kOpNames[] = {"EQ", "GT", "LT"};
constexpr std::string_view kOpSymbols[] = {"=", ">", "<"};

bool needs_number(Agg agg) {
  return agg == Agg::Max || agg == Agg::Min || agg == Agg::Sum || agg == Agg::Avg;
}

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};

}  // namespace

std::string_view to_string(Agg agg) { return kAggNames[static_cast<int>(agg)]; }
std::string_view to_string(Op op) { return kOpNames[static_cast<int>(op)]; }
std::string_view op_symbol(Op op) { return kOpSymbols[static_cast<int>(op)]; }
std::string_view to_string(ColumnKind kind) {
  return kind == ColumnKind::Text ? "TEXT" : "NUMBER";
}

Agg parse_agg(std::string_view s) {
  for (int i = 0; i < kNumAggs; ++i)
    if (kAggNames[i] == s) return static_cast<Agg>(i);
  throw ParseError(fmt::format("unknown aggregator '{}'", s));
}

Op parse_op(std::string_view s) {
  for (int i = 0; i < kNumOps; ++i)
    if (kOpNames[i] == s || kOpSymbols[i] == s) return static_cast<Op>(i);
  throw ParseError(fmt::format("unknown operator '{}'", s));
}

ColumnKind parse_column_kind(std::string_view s) {
  if (s == "TEXT") return ColumnKind::Text;
  if (s == "NUMBER") return ColumnKind::Number;
  throw ParseError(fmt::format("unknown column kind '{}'", s));
}

std::string value_token(const Value& v) {
  if (const auto* d = std::get_if<double>(&v)) return fmt::format("{}", *d);
  return std::get<std::string>(v);
}

bool is_number(const Value& v) { return std::holds_alternative<double>(v); }

int Table::column_index(std::string_view name) const {
  for (std::size_t i = 0; i < columns.size(); ++i)
    if (columns[i].name == name) return static_cast<int>(i);
  return -1;
}

const ColumnSpec& Table::column(std::string_view name) const {
  const int i = column_index(name);
  if (i < 0) throw TypingError(fmt::format("table {} has no column '{}'", id, name));
  return columns[static_cast<std::size_t>(i)];
}

void Table::validate() const {
  std::unordered_set<std::string> names;
  for (const auto& c : columns) {
    if (!names.insert(c.name).second)
      throw TypingError(fmt::format("table {}: duplicate column '{}'", id, c.name));
    if (c.vocabulary.empty())
      throw TypingError(fmt::format("table {}: column '{}' has empty vocabulary", id, c.name));
    for (const auto& v : c.vocabulary) {
      if ((c.kind == ColumnKind::Number) != is_number(v))
        throw TypingError(fmt::format("table {}: vocabulary kind mismatch in '{}'", id, c.name));
      if (is_number(v) && !std::isfinite(std::get<double>(v)))
        throw TypingError(fmt::format("table {}: non-finite value in '{}'", id, c.name));
    }
  }
  for (const auto& row : rows) {
    if (row.size() != columns.size())
      throw TypingError(fmt::format("table {}: row width {} != {}", id, row.size(), columns.size()));
    for (std::size_t i = 0; i < row.size(); ++i)
      if ((columns[i].kind == ColumnKind::Number) != is_number(row[i]))
        throw TypingError(fmt::format("table {}: cell kind mismatch in '{}'", id, columns[i].name));
  }
}

void validate(const SqlQuery& q, const Table& table) {
  const int sel = table.column_index(q.sel_col);
  if (sel < 0) throw TypingError(fmt::format("unknown select column '{}'", q.sel_col));
  if (needs_number(q.agg) && table.columns[sel].kind != ColumnKind::Number)
    throw TypingError(fmt::format("{} over TEXT column '{}'", to_string(q.agg), q.sel_col));
  if (q.conds.size() > kMaxConditions) throw TypingError("more than 3 conditions");
  int last = -1;
  for (const auto& c : q.conds) {
    const int w = table.column_index(c.col);
    if (w < 0) throw TypingError(fmt::format("unknown condition column '{}'", c.col));
    if (w <= last) throw TypingError("conditions not in canonical column order");
    last = w;
    const bool numeric = table.columns[w].kind == ColumnKind::Number;
    if (c.op != Op::Eq && !numeric)
      throw TypingError(fmt::format("{} on TEXT column '{}'", to_string(c.op), c.col));
    if (numeric != is_number(c.val))
      throw TypingError(fmt::format("value kind mismatch on column '{}'", c.col));
  }
}

std::string render(const SqlQuery& q) {
  std::string out = "SELECT ";
  if (q.agg == Agg::None)
    out += q.sel_col;
  else
    out += fmt::format("{}({})", to_string(q.agg), q.sel_col);
  for (std::size_t i = 0; i < q.conds.size(); ++i) {
    const auto& c = q.conds[i];
    out += i == 0 ? " WHERE " : " AND ";
    const std::string val =
        is_number(c.val) ? value_token(c.val) : fmt::format("\"{}\"", value_token(c.val));
    out += fmt::format("{} {} {}", c.col, op_symbol(c.op), val);
  }
  return out;
}

std::string render_partial(const std::vector<Action>& prefix) {
  const Stage stage = stage_after(prefix);
  if (stage == Stage::Done) return render(actions_to_query(prefix));
  std::string sel = "?", agg = "?", out;
  std::vector<std::string> conds;
  for (const auto& a : prefix) {
    if (const auto* c = std::get_if<SelectCol>(&a)) sel = c->col;
    if (const auto* g = std::get_if<SetAgg>(&a)) agg = std::string(to_string(g->agg));
    if (const auto* w = std::get_if<WhereCol>(&a)) conds.push_back(w->col + " ? ?");
    if (const auto* o = std::get_if<WhereOp>(&a)) {
      auto& c = conds.back();
      c = c.substr(0, c.size() - 3) + fmt::format("{} ?", op_symbol(o->op));
    }
    if (const auto* v = std::get_if<WhereVal>(&a)) {
      auto& c = conds.back();
      c = c.substr(0, c.size() - 1) +
          (is_number(v->val) ? value_token(v->val) : fmt::format("\"{}\"", value_token(v->val)));
    }
  }
  out = "SELECT ";
  if (prefix.empty())
    out += "?";
  else if (agg == "NONE")
    out += sel;
  else
    out += fmt::format("{}({})", agg, sel);
  for (std::size_t i = 0; i < conds.size(); ++i) out += (i == 0 ? " WHERE " : " AND ") + conds[i];
  return out + " ...";
}

// ---------------------------------------------------------------------------

std::string describe(const Action& a) {
  return std::visit(
      overloaded{
          [](const SelectCol& x) { return fmt::format("SCol={}", x.col); },
          [](const SetAgg& x) { return fmt::format("Agg={}", to_string(x.agg)); },
          [](const WhereCol& x) { return fmt::format("WCol={}", x.col); },
          [](const WhereOp& x) { return fmt::format("Op={}", op_symbol(x.op)); },
          [](const WhereVal& x) { return fmt::format("Val={}", value_token(x.val)); },
          [](const EndWhere&) { return std::string("EndWhere"); },
      },
      a);
}

std::string_view to_string(Stage s) {
  switch (s) {
    case Stage::SelectCol: return "SCOL";
    case Stage::Agg: return "AGG";
    case Stage::WhereColOrEnd: return "WCOL";
    case Stage::WhereOp: return "OP";
    case Stage::WhereVal: return "VAL";
    case Stage::Done: return "DONE";
  }
  return "?";
}

Stage action_stage(const Action& a) {
  switch (a.index()) {
    case 0: return Stage::SelectCol;
    case 1: return Stage::Agg;
    case 2: return Stage::WhereColOrEnd;
    case 3: return Stage::WhereOp;
    case 4: return Stage::WhereVal;
    default: return Stage::WhereColOrEnd;
  }
}

Stage advance(Stage s, const Action& a, std::size_t conds_so_far) {
  if (action_stage(a) != s || s == Stage::Done)
    throw StageError(fmt::format("action {} illegal at stage {}", describe(a), to_string(s)));
  switch (s) {
    case Stage::SelectCol: return Stage::Agg;
    case Stage::Agg: return Stage::WhereColOrEnd;
    case Stage::WhereColOrEnd:
      if (std::holds_alternative<EndWhere>(a)) return Stage::Done;
      if (conds_so_far >= kMaxConditions) throw StageError("condition cap exceeded");
      return Stage::WhereOp;
    case Stage::WhereOp: return Stage::WhereVal;
    case Stage::WhereVal: return Stage::WhereColOrEnd;
    case Stage::Done: break;
  }
  throw StageError("advance past Done");
}

Stage stage_after(const std::vector<Action>& prefix) {
  Stage s = Stage::SelectCol;
  std::size_t conds = 0;
  for (const auto& a : prefix) {
    s = advance(s, a, conds);
    if (std::holds_alternative<WhereCol>(a)) ++conds;
  }
  return s;
}

std::size_t State::num_conditions() const {
  return static_cast<std::size_t>(std::count_if(prefix.begin(), prefix.end(), [](const Action& a) {
    return std::holds_alternative<WhereCol>(a);
  }));
}

std::vector<Action> query_actions(const SqlQuery& q) {
  std::vector<Action> out;
  out.reserve(3 + 3 * q.conds.size());
  out.emplace_back(SelectCol{q.sel_col});
  out.emplace_back(SetAgg{q.agg});
  for (const auto& c : q.conds) {
    out.emplace_back(WhereCol{c.col});
    out.emplace_back(WhereOp{c.op});
    out.emplace_back(WhereVal{c.val});
  }
  out.emplace_back(EndWhere{});
  return out;
}

Trajectory query_to_trajectory(const SqlQuery& q, const std::vector<std::string>& question,
                               const std::string& table_id) {
  Trajectory traj;
  traj.actions = query_actions(q);
  State s{question, table_id, {}};
  for (const auto& a : traj.actions) {
    traj.states.push_back(s);
    s.prefix.push_back(a);
  }
  traj.complete = true;
  return traj;
}

SqlQuery actions_to_query(const std::vector<Action>& actions) {
  Stage s;
  try {
    s = stage_after(actions);
  } catch (const StageError& e) {
    throw IncompleteError(std::string("illegal action sequence: ") + e.what());
  }
  if (s != Stage::Done) throw IncompleteError("trajectory is incomplete");
  SqlQuery q;
  for (const auto& a : actions) {
    std::visit(overloaded{
                   [&](const SelectCol& x) { q.sel_col = x.col; },
                   [&](const SetAgg& x) { q.agg = x.agg; },
                   [&](const WhereCol& x) { q.conds.push_back({x.col, Op::Eq, Value{}}); },
                   [&](const WhereOp& x) { q.conds.back().op = x.op; },
                   [&](const WhereVal& x) { q.conds.back().val = x.val; },
                   [](const EndWhere&) {},
               },
               a);
  }
  return q;
}

SqlQuery trajectory_to_query(const Trajectory& traj) {
  if (!traj.complete) throw IncompleteError("trajectory is incomplete");
  return actions_to_query(traj.actions);
}

// ---------------------------------------------------------------------------

namespace {

bool matches(const Value& cell, Op op, const Value& val) {
  if (op == Op::Eq) return cell == val;
  const double a = std::get<double>(cell);
  const double b = std::get<double>(val);
  return op == Op::Gt ? a > b : a < b;
}

}  // namespace

ExecResult execute(const SqlQuery& q, const Table& table) {
  validate(q, table);
  const auto sel = static_cast<std::size_t>(table.column_index(q.sel_col));
  std::vector<std::pair<std::size_t, const Condition*>> filters;
  for (const auto& c : q.conds)
    filters.emplace_back(static_cast<std::size_t>(table.column_index(c.col)), &c);

  std::vector<const Value*> picked;
  for (const auto& row : table.rows) {
    const bool keep = std::all_of(filters.begin(), filters.end(), [&](const auto& f) {
      return matches(row[f.first], f.second->op, f.second->val);
    });
    if (keep) picked.push_back(&row[sel]);
  }

  if (q.agg == Agg::Count) return Scalar{static_cast<double>(picked.size())};
  if (picked.empty()) return Empty{};
  if (q.agg == Agg::None) {
    Bag bag;
    for (const auto* v : picked) bag.items.push_back(*v);
    return bag;
  }
  double acc = q.agg == Agg::Max ? -INFINITY : q.agg == Agg::Min ? INFINITY : 0.0;
  for (const auto* v : picked) {
    const double x = std::get<double>(*v);
    switch (q.agg) {
      case Agg::Max: acc = std::max(acc, x); break;
      case Agg::Min: acc = std::min(acc, x); break;
      default: acc += x; break;
    }
  }
  if (q.agg == Agg::Avg) acc /= static_cast<double>(picked.size());
  return Scalar{acc};
}

bool results_equal(const ExecResult& a, const ExecResult& b) {
  if (a.index() != b.index()) return false;
  if (const auto* sa = std::get_if<Scalar>(&a))
    return std::abs(sa->value - std::get<Scalar>(b).value) <= 1e-9;
  if (const auto* ba = std::get_if<Bag>(&a)) {
    auto x = ba->items;
    auto y = std::get<Bag>(b).items;
    if (x.size() != y.size()) return false;
    std::sort(x.begin(), x.end());
    std::sort(y.begin(), y.end());
    return x == y;
  }
  return true;
}

std::string describe(const ExecResult& r) {
  if (const auto* s = std::get_if<Scalar>(&r)) return fmt::format("{}", s->value);
  if (const auto* b = std::get_if<Bag>(&r)) {
    std::string out = "[";
    for (std::size_t i = 0; i < b->items.size(); ++i)
      out += (i ? ", " : "") + value_token(b->items[i]);
    return out + "]";
  }
  return "(empty)";
}

}  // namespace neil
