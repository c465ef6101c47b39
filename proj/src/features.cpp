#include "neil/features.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <set>

#include <fmt/format.h>

#include "neil/error.hpp"

namespace neil {

FeatureVector::FeatureVector(std::vector<Entry> raw) {
  std::sort(raw.begin(), raw.end(), [](const Entry& a, const Entry& b) { return a.first < b.first; });
  for (const auto& [id, v] : raw) {
    if (!std::isfinite(v)) throw DomainError("non-finite feature value");
    if (!entries_.empty() && entries_.back().first == id)
      entries_.back().second += v;
    else
      entries_.emplace_back(id, v);
  }
  std::erase_if(entries_, [](const Entry& e) { return e.second == 0.0; });
}

std::uint64_t hash_token(std::string_view s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

namespace {

// Template registry. Order and names are part of the feature-space version.
enum Tpl : std::uint64_t {
  kStageBias,
  kScName,
  kScMentioned,
  kScPrev,
  kScPrev2,
  kScNext,
  kScRank,
  kScKindWord,
  kScLiteral,
  kAgBias,
  kAgKind,
  kAgWord,
  kAgBigram,
  kAgPrevSel,
  kAgPrev2Sel,
  kWcCount,
  kWcName,
  kWcMentioned,
  kWcPrev,
  kWcNext,
  kWcNext2,
  kWcIsSel,
  kWcLiteral,
  kWcNumAfter,
  kWcKind,
  kWcPending,
  kEwCount,
  kEwPending,
  kEwUnused,
  kOpBias,
  kOpKind,
  kOpNext1,
  kOpNext2,
  kOpWord,
  kVlLitSelf,
  kVlLitOther,
  kVlLen,
  kVlPrev,
  kVlNext,
  kVlDist,
  kVlHasColName,
  kVlUsed,
  kVlNumeric,
  kNumTemplates
};

const std::vector<std::string> kTemplateNames = {
    "stage_bias",   "scol_name",      "scol_mentioned", "scol_prev",     "scol_prev2",
    "scol_next",    "scol_rank",      "scol_kind_word", "scol_literal",  "agg_bias",
    "agg_kind",     "agg_word",       "agg_bigram",     "agg_prev_sel",  "agg_prev2_sel",
    "wcol_count",   "wcol_name",      "wcol_mentioned", "wcol_prev",     "wcol_next",
    "wcol_next2",   "wcol_is_sel",    "wcol_literal",   "wcol_num_after", "wcol_kind",
    "wcol_pending", "end_count",      "end_pending",    "end_unused",    "op_bias",
    "op_kind",      "op_next1",       "op_next2",       "op_word",       "val_lit_self",
    "val_lit_other", "val_len",       "val_prev",       "val_next",      "val_dist",
    "val_has_colname", "val_used",    "val_numeric"};

static_assert(kNumTemplates == 43);

constexpr std::uint64_t kBos = 0x9e3779b97f4a7c15ull;
constexpr std::uint64_t kEos = 0xc2b2ae3d27d4eb4full;

std::uint64_t mix(std::uint64_t h, std::uint64_t x) {
  h ^= x + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
  h ^= h >> 31;
  h *= 0xbf58476d1ce4e5b9ull;
  h ^= h >> 29;
  return h;
}

class Builder {
 public:
  void add(Tpl t, std::uint64_t a = 0, std::uint64_t b = 0, std::uint64_t c = 0, double v = 1.0) {
    std::uint64_t h = mix(mix(mix(mix(0x51ed270b27b2f3a1ull, t), a), b), c);
    raw_.emplace_back(static_cast<std::uint32_t>(h & (FeatureSpace::kDim - 1)), v);
  }
  FeatureVector finish() { return FeatureVector(std::move(raw_)); }

 private:
  std::vector<FeatureVector::Entry> raw_;
};

std::uint64_t bucket(long x, long cap) { return static_cast<std::uint64_t>(std::clamp(x, -cap, cap) + cap); }

struct Context {
  const State& state;
  const Table& table;
  const QuestionAnalysis& qa;

  std::uint64_t tok(long i) const {
    if (i < 0) return kBos;
    if (i >= static_cast<long>(qa.token_hash.size())) return kEos;
    return qa.token_hash[static_cast<std::size_t>(i)];
  }
  int sel_index() const {
    return table.column_index(std::get<SelectCol>(state.prefix.at(0)).col);
  }
  int last_where_index() const {
    for (auto it = state.prefix.rbegin(); it != state.prefix.rend(); ++it)
      if (const auto* w = std::get_if<WhereCol>(&*it)) return table.column_index(w->col);
    throw StageError("no condition column in prefix");
  }
  std::vector<int> used_where() const {
    std::vector<int> out;
    for (const auto& a : state.prefix)
      if (const auto* w = std::get_if<WhereCol>(&a)) out.push_back(table.column_index(w->col));
    return out;
  }
  std::vector<Value> used_values() const {
    std::vector<Value> out;
    for (const auto& a : state.prefix)
      if (const auto* v = std::get_if<WhereVal>(&a)) out.push_back(v->val);
    return out;
  }
  /// Distinct value evidence in the question not yet consumed by the prefix.
  long pending_values() const {
    std::set<std::size_t> positions;
    for (std::size_t i = 0; i < qa.numeric.size(); ++i)
      if (qa.numeric[i]) positions.insert(i);
    for (const auto& hits : qa.literal_hits)
      for (const auto& s : hits) positions.insert(s.start);
    return std::max(0L, static_cast<long>(positions.size()) - static_cast<long>(used_values().size()));
  }
  long unused_mentions() const {
    const auto used = used_where();
    const int sel = sel_index();
    long n = 0;
    for (std::size_t c = 0; c < qa.mentions.size(); ++c) {
      if (qa.mentions[c].empty() || static_cast<int>(c) == sel) continue;
      if (std::find(used.begin(), used.end(), static_cast<int>(c)) != used.end()) continue;
      ++n;
    }
    return n;
  }
};

std::optional<QuestionAnalysis::Span> find_span(const Tokens& q, const Tokens& needle) {
  if (needle.empty() || needle.size() > q.size()) return std::nullopt;
  for (std::size_t i = 0; i + needle.size() <= q.size(); ++i)
    if (std::equal(needle.begin(), needle.end(), q.begin() + static_cast<long>(i)))
      return QuestionAnalysis::Span{i, needle.size()};
  return std::nullopt;
}

std::optional<QuestionAnalysis::Span> value_span(const State& s, const QuestionAnalysis& qa, const Value& v) {
  if (const auto* d = std::get_if<double>(&v)) {
    for (std::size_t i = 0; i < qa.numeric.size(); ++i)
      if (qa.numeric[i] && qa.number[i] == *d) return QuestionAnalysis::Span{i, 1};
    return std::nullopt;
  }
  return find_span(s.question, tokenize(std::get<std::string>(v)));
}

void scol_features(Builder& b, const Context& cx, int c) {
  const auto& col = cx.table.columns[static_cast<std::size_t>(c)];
  const auto& ms = cx.qa.mentions[static_cast<std::size_t>(c)];
  b.add(kScName, hash_token(col.name));
  b.add(kScMentioned, !ms.empty());
  b.add(kScLiteral, !cx.qa.literal_hits[static_cast<std::size_t>(c)].empty());
  if (!ms.empty()) {
    const long p = static_cast<long>(ms.front());
    b.add(kScPrev, cx.tok(p - 1));
    b.add(kScPrev2, cx.tok(p - 2));
    b.add(kScNext, cx.tok(p + 1));
    long rank = 0;
    for (const auto& other : cx.qa.mentions)
      if (!other.empty() && static_cast<long>(other.front()) < p) ++rank;
    b.add(kScRank, static_cast<std::uint64_t>(std::min(rank, 3L)));
  }
  for (auto h : cx.qa.token_hash) b.add(kScKindWord, static_cast<std::uint64_t>(col.kind), h);
}

void agg_features(Builder& b, const Context& cx, Agg g) {
  const int sel = cx.sel_index();
  const auto gi = static_cast<std::uint64_t>(g);
  b.add(kAgBias, gi);
  b.add(kAgKind, gi, static_cast<std::uint64_t>(cx.table.columns[static_cast<std::size_t>(sel)].kind));
  const auto n = static_cast<long>(cx.qa.token_hash.size());
  for (long i = 0; i < n; ++i) {
    b.add(kAgWord, gi, cx.tok(i));
    b.add(kAgBigram, gi, cx.tok(i - 1), cx.tok(i));
  }
  const auto& ms = cx.qa.mentions[static_cast<std::size_t>(sel)];
  if (!ms.empty()) {
    const long p = static_cast<long>(ms.front());
    b.add(kAgPrevSel, gi, cx.tok(p - 1));
    b.add(kAgPrev2Sel, gi, cx.tok(p - 2), cx.tok(p - 1));
  }
}

void wcol_features(Builder& b, const Context& cx, int c, long k, long pending) {
  const auto& col = cx.table.columns[static_cast<std::size_t>(c)];
  const auto& ms = cx.qa.mentions[static_cast<std::size_t>(c)];
  b.add(kWcCount, static_cast<std::uint64_t>(k));
  b.add(kWcName, hash_token(col.name));
  b.add(kWcMentioned, !ms.empty());
  b.add(kWcIsSel, c == cx.sel_index());
  b.add(kWcLiteral, !cx.qa.literal_hits[static_cast<std::size_t>(c)].empty());
  b.add(kWcKind, static_cast<std::uint64_t>(col.kind));
  b.add(kWcPending, bucket(pending, 3));
  for (auto m : ms) {
    const long p = static_cast<long>(m);
    b.add(kWcPrev, cx.tok(p - 1));
    b.add(kWcNext, cx.tok(p + 1));
    b.add(kWcNext2, cx.tok(p + 1), cx.tok(p + 2));
    bool num_after = false;
    for (long j = p + 1; j <= p + 3 && j < static_cast<long>(cx.qa.numeric.size()); ++j)
      num_after = num_after || cx.qa.numeric[static_cast<std::size_t>(j)];
    b.add(kWcNumAfter, static_cast<std::uint64_t>(col.kind), num_after);
  }
}

void end_features(Builder& b, const Context& cx, long k, long pending) {
  b.add(kEwCount, static_cast<std::uint64_t>(k));
  b.add(kEwPending, bucket(pending, 3), static_cast<std::uint64_t>(k));
  b.add(kEwUnused, bucket(cx.unused_mentions(), 3));
}

void op_features(Builder& b, const Context& cx, Op o) {
  const int c = cx.last_where_index();
  const auto oi = static_cast<std::uint64_t>(o);
  b.add(kOpBias, oi);
  b.add(kOpKind, oi, static_cast<std::uint64_t>(cx.table.columns[static_cast<std::size_t>(c)].kind));
  for (auto m : cx.qa.mentions[static_cast<std::size_t>(c)]) {
    const long p = static_cast<long>(m);
    b.add(kOpNext1, oi, cx.tok(p + 1));
    b.add(kOpNext2, oi, cx.tok(p + 1), cx.tok(p + 2));
  }
  for (auto h : cx.qa.token_hash) b.add(kOpWord, oi, h);
}

void val_features(Builder& b, const Context& cx, const Value& v) {
  const int c = cx.last_where_index();
  const auto& col = cx.table.columns[static_cast<std::size_t>(c)];
  const auto kind = static_cast<std::uint64_t>(col.kind);
  const auto span = value_span(cx.state, cx.qa, v);
  b.add(kVlNumeric, is_number(v), kind);
  const auto used = cx.used_values();
  b.add(kVlUsed, std::find(used.begin(), used.end(), v) != used.end());
  if (!span) return;
  bool self = false, other = false;
  for (std::size_t k = 0; k < cx.qa.literal_hits.size(); ++k)
    for (const auto& h : cx.qa.literal_hits[k])
      if (h.start == span->start && h.len == span->len) (static_cast<int>(k) == c ? self : other) = true;
  b.add(kVlLitSelf, self, kind);
  b.add(kVlLitOther, other && !self, kind);
  b.add(kVlLen, span->len, kind);
  const long start = static_cast<long>(span->start);
  const long end = start + static_cast<long>(span->len);
  b.add(kVlPrev, cx.tok(start - 1));
  b.add(kVlNext, cx.tok(end));
  bool has_col = false;
  for (long i = start; i < end; ++i) has_col = has_col || cx.qa.column_at[static_cast<std::size_t>(i)] >= 0;
  b.add(kVlHasColName, has_col);
  long best = -1;
  for (auto m : cx.qa.mentions[static_cast<std::size_t>(c)])
    if (static_cast<long>(m) < start) best = static_cast<long>(m);
  b.add(kVlDist, best < 0 ? 99 : bucket(start - best, 6));
}

}  // namespace

std::uint64_t FeatureSpace::version() {
  static const std::uint64_t v = [] {
    std::uint64_t h = hash_token(fmt::format("neil-features/v1/dim{}", kDim));
    for (const auto& n : kTemplateNames) h = mix(h, hash_token(n));
    return h;
  }();
  return v;
}

const std::vector<std::string>& FeatureSpace::templates() { return kTemplateNames; }

QuestionAnalysis::QuestionAnalysis(const Tokens& question, const Table& table) {
  const std::size_t n = question.size();
  token_hash.resize(n);
  numeric.assign(n, false);
  number.assign(n, 0.0);
  column_at.assign(n, -1);
  mentions.resize(table.columns.size());
  literal_hits.resize(table.columns.size());
  for (std::size_t i = 0; i < n; ++i) {
    token_hash[i] = hash_token(question[i]);
    const char* s = question[i].c_str();
    char* end = nullptr;
    const double d = std::strtod(s, &end);
    if (end != s && *end == '\0' && std::isfinite(d)) {
      numeric[i] = true;
      number[i] = d;
    }
  }
  for (std::size_t c = 0; c < table.columns.size(); ++c) {
    const auto& col = table.columns[c];
    const Tokens name = tokenize(col.name);
    if (!name.empty())
      for (std::size_t i = 0; i + name.size() <= n; ++i)
        if (std::equal(name.begin(), name.end(), question.begin() + static_cast<long>(i))) {
          mentions[c].push_back(i);
          for (std::size_t j = 0; j < name.size(); ++j) column_at[i + j] = static_cast<int>(c);
        }
    for (const auto& v : col.vocabulary) {
      if (const auto* d = std::get_if<double>(&v)) {
        for (std::size_t i = 0; i < n; ++i)
          if (numeric[i] && number[i] == *d) literal_hits[c].push_back({i, 1});
      } else {
        const Tokens lit = tokenize(std::get<std::string>(v));
        if (lit.empty()) continue;
        for (std::size_t i = 0; i + lit.size() <= n; ++i)
          if (std::equal(lit.begin(), lit.end(), question.begin() + static_cast<long>(i)))
            literal_hits[c].push_back({i, lit.size()});
      }
    }
  }
}

std::vector<Action> candidate_actions(const State& state, const Table& table) {
  return candidate_actions(state, table, QuestionAnalysis(state.question, table));
}

std::vector<Action> candidate_actions(const State& state, const Table& table, const QuestionAnalysis& qa) {
  const Stage stage = state.stage();
  std::vector<Action> out;
  switch (stage) {
    case Stage::SelectCol:
      for (const auto& c : table.columns) out.emplace_back(SelectCol{c.name});
      break;
    case Stage::Agg: {
      const auto& sel = table.column(std::get<SelectCol>(state.prefix.front()).col);
      for (int g = 0; g < kNumAggs; ++g) {
        const auto agg = static_cast<Agg>(g);
        if (sel.kind == ColumnKind::Text && agg != Agg::None && agg != Agg::Count) continue;
        out.emplace_back(SetAgg{agg});
      }
      break;
    }
    case Stage::WhereColOrEnd: {
      if (state.num_conditions() < kMaxConditions) {
        int last = -1;
        for (const auto& a : state.prefix)
          if (const auto* w = std::get_if<WhereCol>(&a)) last = table.column_index(w->col);
        const bool has_number = std::find(qa.numeric.begin(), qa.numeric.end(), true) != qa.numeric.end();
        for (std::size_t c = static_cast<std::size_t>(last + 1); c < table.columns.size(); ++c) {
          // A NUMBER condition needs a numeric token to copy its value from.
          if (table.columns[c].kind == ColumnKind::Number && !has_number) continue;
          out.emplace_back(WhereCol{table.columns[c].name});
        }
      }
      out.emplace_back(EndWhere{});
      break;
    }
    case Stage::WhereOp: {
      const auto* w = std::get_if<WhereCol>(&state.prefix.back());
      const auto& col = table.column(w->col);
      out.emplace_back(WhereOp{Op::Eq});
      if (col.kind == ColumnKind::Number) {
        out.emplace_back(WhereOp{Op::Gt});
        out.emplace_back(WhereOp{Op::Lt});
      }
      break;
    }
    case Stage::WhereVal: {
      const auto* w = std::get_if<WhereCol>(&state.prefix[state.prefix.size() - 2]);
      const int ci = table.column_index(w->col);
      const auto& col = table.columns[static_cast<std::size_t>(ci)];
      const auto n = state.question.size();
      std::set<Value> seen;
      auto push = [&](Value v) {
        if (seen.insert(v).second) out.emplace_back(WhereVal{std::move(v)});
      };
      if (col.kind == ColumnKind::Number) {
        for (std::size_t i = 0; i < n; ++i)
          if (qa.numeric[i]) push(qa.number[i]);
      } else {
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t len = 1; len <= 4 && i + len <= n; ++len) {
            const auto& last = state.question[i + len - 1];
            if (last == "?" || last == ",") break;
            if (len == 1 && qa.numeric[i]) break;
            Tokens span(state.question.begin() + static_cast<long>(i),
                        state.question.begin() + static_cast<long>(i + len));
            push(join_tokens(span));
          }
        }
      }
      for (const auto& hit : qa.literal_hits[static_cast<std::size_t>(ci)]) {
        if (col.kind == ColumnKind::Number) {
          push(qa.number[hit.start]);
        } else {
          Tokens span(state.question.begin() + static_cast<long>(hit.start),
                      state.question.begin() + static_cast<long>(hit.start + hit.len));
          push(join_tokens(span));
        }
      }
      break;
    }
    case Stage::Done:
      throw StageError("no actions after EndWhere");
  }
  return out;
}

FeatureVector extract_features(const State& state, const Action& action, const Table& table,
                               const QuestionAnalysis& qa) {
  Context cx{state, table, qa};
  Builder b;
  const Stage stage = action_stage(action);
  b.add(kStageBias, static_cast<std::uint64_t>(stage));
  if (const auto* a = std::get_if<SelectCol>(&action)) {
    scol_features(b, cx, table.column_index(a->col));
  } else if (const auto* g = std::get_if<SetAgg>(&action)) {
    agg_features(b, cx, g->agg);
  } else if (const auto* w = std::get_if<WhereCol>(&action)) {
    wcol_features(b, cx, table.column_index(w->col), static_cast<long>(state.num_conditions()),
                  cx.pending_values());
  } else if (std::holds_alternative<EndWhere>(action)) {
    end_features(b, cx, static_cast<long>(state.num_conditions()), cx.pending_values());
  } else if (const auto* o = std::get_if<WhereOp>(&action)) {
    op_features(b, cx, o->op);
  } else if (const auto* v = std::get_if<WhereVal>(&action)) {
    val_features(b, cx, v->val);
  }
  return b.finish();
}

CandidateSet featurize(const State& state, const Table& table, const QuestionAnalysis& qa) {
  CandidateSet cs;
  cs.actions = candidate_actions(state, table, qa);
  cs.features.reserve(cs.actions.size());
  for (const auto& a : cs.actions) cs.features.push_back(extract_features(state, a, table, qa));
  return cs;
}

}  // namespace neil
