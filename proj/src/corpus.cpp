#include "neil/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "neil/error.hpp"
#include "neil/rng.hpp"

namespace neil {

using nlohmann::json;

Tokens tokenize(const std::string& text) {
  Tokens out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) out.push_back(std::move(cur));
    cur.clear();
  };
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      flush();
    } else if (ch == '?' || ch == ',') {
      flush();
      out.emplace_back(1, ch);
    } else {
      cur.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  flush();
  return out;
}

std::string join_tokens(const Tokens& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out.push_back(' ');
    out += tokens[i];
  }
  return out;
}

const Table& lookup(const TableSet& tables, const std::string& id) {
  auto it = tables.find(id);
  if (it == tables.end()) throw DomainError(fmt::format("unknown table '{}'", id));
  return it->second;
}

// ---------------------------------------------------------------------------
// Lexicon.

namespace {

struct NumberRange {
  const char* name;
  int lo;
  int hi;
};

const std::vector<std::string> kTextColumns = {
    "player", "team",   "position", "city",     "nation",   "school", "coach",
    "venue",  "league", "club",     "country",  "opponent", "director", "album",
    "artist", "driver", "party",    "district", "region",   "station"};

const std::vector<NumberRange> kNumberColumns = {
    {"year", 1950, 2020},     {"points", 0, 120},   {"goals", 0, 40},    {"rank", 1, 50},
    {"age", 17, 45},          {"wins", 0, 30},      {"losses", 0, 30},   {"games", 1, 82},
    {"assists", 0, 60},       {"height", 160, 220}, {"weight", 60, 140}, {"score", 0, 100},
    {"attendance", 500, 9000}, {"round", 1, 12},    {"pick", 1, 60},     {"laps", 10, 200},
    {"votes", 100, 5000},     {"seats", 1, 300},    {"episodes", 1, 150}, {"population", 1000, 90000}};

const std::vector<std::string> kSyllables = {"ka", "lo", "mi", "ren", "dor", "vel", "tis", "bra",
                                             "nu",  "zo", "fen", "qua", "sil", "mar", "tho", "ves",
                                             "gri", "pal", "dun", "eko", "ja",  "lin", "rho", "sy"};

struct Phrases {
  std::vector<std::string> plain;
  std::vector<std::string> variant;
};

const Phrases kAggPhrases[] = {
    {{"what is the", "which"}, {"name the", "list the", "give the"}},
    {{"how many"}, {"count the", "number of", "what number of"}},
    {{"what is the highest", "maximum"}, {"largest", "greatest", "top"}},
    {{"what is the lowest", "minimum"}, {"smallest", "least", "bottom"}},
    {{"what is the total", "sum of"}, {"combined", "overall", "aggregate"}},
    {{"what is the average", "mean"}, {"typical", "avg", "expected"}},
};

const Phrases kOpPhrases[] = {
    {{"is", "equals"}, {"of", "being", "="}},
    {{"greater than", "more than"}, {"above", "over", "exceeding"}},
    {{"less than", "fewer than"}, {"below", "under", "beneath"}},
};

const std::vector<std::string> kCondIntro = {"when", "where", "with", "for"};
const std::vector<std::string> kDistractors = {"ignoring", "regardless of", "not by"};

const std::string& phrase(Rng& rng, const Phrases& p, double variation) {
  return rng.bernoulli(variation) ? rng.pick(p.variant) : rng.pick(p.plain);
}

void append_words(Tokens& out, const std::string& words) {
  for (auto& t : tokenize(words)) out.push_back(std::move(t));
}

std::string make_word(Rng& rng, const std::set<std::string>& reserved) {
  for (;;) {
    std::string w;
    const std::size_t n = 2 + rng.index(2);
    for (std::size_t i = 0; i < n; ++i) w += rng.pick(kSyllables);
    if (!reserved.contains(w)) return w;
  }
}

std::set<std::string> reserved_words() {
  std::set<std::string> r(kTextColumns.begin(), kTextColumns.end());
  for (const auto& n : kNumberColumns) r.insert(n.name);
  auto add = [&](const std::vector<std::string>& v) {
    for (const auto& s : v)
      for (auto& t : tokenize(s)) r.insert(t);
  };
  for (const auto& p : kAggPhrases) add(p.plain), add(p.variant);
  for (const auto& p : kOpPhrases) add(p.plain), add(p.variant);
  add(kCondIntro);
  add(kDistractors);
  return r;
}

Table make_table(Rng& rng, const GenConfig& cfg, int index, const std::set<std::string>& reserved) {
  Table t;
  t.id = fmt::format("t{:04d}", index);
  const int ncols = cfg.min_columns + static_cast<int>(rng.index(
                                          static_cast<std::size_t>(cfg.max_columns - cfg.min_columns + 1)));
  const int ntext = std::clamp(ncols / 2 + static_cast<int>(rng.index(2)), 1, ncols - 1);
  std::vector<std::size_t> text_ids(kTextColumns.size()), num_ids(kNumberColumns.size());
  for (std::size_t i = 0; i < text_ids.size(); ++i) text_ids[i] = i;
  for (std::size_t i = 0; i < num_ids.size(); ++i) num_ids[i] = i;
  rng.shuffle(text_ids);
  rng.shuffle(num_ids);

  std::vector<ColumnSpec> cols;
  for (int i = 0; i < ntext; ++i) {
    ColumnSpec c{kTextColumns[text_ids[static_cast<std::size_t>(i)]], ColumnKind::Text, {}};
    std::set<std::string> seen;
    while (static_cast<int>(c.vocabulary.size()) < cfg.text_vocab_size) {
      std::string v = make_word(rng, reserved);
      if (rng.bernoulli(0.3)) v += " " + make_word(rng, reserved);
      if (seen.insert(v).second) c.vocabulary.emplace_back(v);
    }
    cols.push_back(std::move(c));
  }
  for (int i = 0; i < ncols - ntext; ++i) {
    const auto& spec = kNumberColumns[num_ids[static_cast<std::size_t>(i)]];
    ColumnSpec c{spec.name, ColumnKind::Number, {}};
    std::set<int> seen;
    const int span = spec.hi - spec.lo + 1;
    const int want = std::min(cfg.number_vocab_size, span);
    while (static_cast<int>(seen.size()) < want)
      seen.insert(spec.lo + static_cast<int>(rng.index(static_cast<std::size_t>(span))));
    for (int v : seen) c.vocabulary.emplace_back(static_cast<double>(v));
    cols.push_back(std::move(c));
  }
  rng.shuffle(cols);
  t.columns = std::move(cols);
  for (int r = 0; r < cfg.rows_per_table; ++r) {
    std::vector<Value> row;
    for (const auto& c : t.columns) row.push_back(rng.pick(c.vocabulary));
    t.rows.push_back(std::move(row));
  }
  return t;
}

Condition make_condition(Rng& rng, const Table& t, std::size_t col) {
  const auto& spec = t.columns[col];
  Condition c{spec.name, Op::Eq, {}};
  if (spec.kind == ColumnKind::Number) c.op = static_cast<Op>(rng.index(kNumOps));
  if (c.op == Op::Eq && !t.rows.empty())
    c.val = rng.pick(t.rows)[col];
  else
    c.val = rng.pick(spec.vocabulary);
  return c;
}

void append_condition(Tokens& out, Rng& rng, const Condition& c, double variation) {
  out.push_back(c.col);
  append_words(out, phrase(rng, kOpPhrases[static_cast<int>(c.op)], variation));
  append_words(out, value_token(c.val));
}

bool is_aggregated_numeric(Agg a) { return a != Agg::None && a != Agg::Count; }

}  // namespace

std::vector<QuestionTemplate> GenConfig::default_templates() {
  return {{"<agg> <sel> <conds> ?", std::nullopt},
          {"tell me <agg> <sel> <conds>", std::nullopt},
          {"<agg> <sel> in the table <conds> ?", std::nullopt}};
}

void GenConfig::validate() const {
  if (num_tables <= 0) throw ConfigError("num_tables must be positive");
  if (templates.empty()) throw ConfigError("template set is empty");
  if (num_items < 0 || rows_per_table <= 0) throw ConfigError("item and row counts must be positive");
  if (min_columns < 2 || max_columns < min_columns)
    throw ConfigError("column range must satisfy 2 <= min_columns <= max_columns");
  if (max_columns > static_cast<int>(std::min(kTextColumns.size(), kNumberColumns.size())))
    throw ConfigError("max_columns too large for the column lexicon");
  if (text_vocab_size <= 0 || number_vocab_size <= 0) throw ConfigError("vocab sizes must be positive");
  if (cond_count_weights.size() != 3) throw ConfigError("cond_count_weights needs 3 entries");
  if (agg_weights.size() != static_cast<std::size_t>(kNumAggs))
    throw ConfigError("agg_weights needs 6 entries");
  auto check = [](const std::vector<double>& w, const char* what) {
    double s = 0;
    for (double x : w) {
      if (!(x >= 0)) throw ConfigError(fmt::format("{} must be non-negative", what));
      s += x;
    }
    if (s <= 0) throw ConfigError(fmt::format("{} must not all be zero", what));
  };
  check(cond_count_weights, "cond_count_weights");
  check(agg_weights, "agg_weights");
  if (lexical_variation < 0 || lexical_variation > 1 || distractor_rate < 0 || distractor_rate > 1)
    throw ConfigError("rates must lie in [0, 1]");
}

Corpus generate_corpus(const GenConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  const auto reserved = reserved_words();
  Corpus corpus;
  std::vector<const Table*> tables;
  for (int i = 0; i < cfg.num_tables; ++i) {
    Table t = make_table(rng, cfg, i, reserved);
    auto [it, _] = corpus.tables.emplace(t.id, std::move(t));
    tables.push_back(&it->second);
  }

  for (int n = 0; n < cfg.num_items; ++n) {
    const Table& t = *tables[rng.index(tables.size())];
    const QuestionTemplate& tpl = rng.pick(cfg.templates);
    const bool inline_cond = tpl.pattern.find("<col>") != std::string::npos;
    const bool has_sel = tpl.pattern.find("<sel>") != std::string::npos;

    SqlQuery q;
    std::vector<std::size_t> numeric, all;
    for (std::size_t c = 0; c < t.columns.size(); ++c) {
      all.push_back(c);
      if (t.columns[c].kind == ColumnKind::Number) numeric.push_back(c);
    }
    q.agg = tpl.agg ? *tpl.agg : static_cast<Agg>(rng.categorical(cfg.agg_weights));
    if (!has_sel) {
      if (is_aggregated_numeric(q.agg) && t.columns[0].kind != ColumnKind::Number) q.agg = Agg::Count;
      q.sel_col = t.columns[0].name;
    } else {
      if (is_aggregated_numeric(q.agg) && numeric.empty()) q.agg = Agg::Count;
      const auto& pool = is_aggregated_numeric(q.agg) ? numeric : all;
      q.sel_col = t.columns[rng.pick(pool)].name;
    }
    const auto sel_index = static_cast<std::size_t>(t.column_index(q.sel_col));

    std::size_t k = inline_cond ? 1 : rng.categorical(cfg.cond_count_weights);
    std::vector<std::size_t> others;
    for (std::size_t c : all)
      if (c != sel_index) others.push_back(c);
    rng.shuffle(others);
    k = std::min(k, others.size());
    std::vector<std::size_t> cond_cols(others.begin(), others.begin() + static_cast<long>(k));
    std::sort(cond_cols.begin(), cond_cols.end());
    for (std::size_t c : cond_cols) q.conds.push_back(make_condition(rng, t, c));

    // Realize the question text; condition phrases appear in random order.
    std::vector<std::size_t> order(q.conds.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order);

    Tokens question;
    std::istringstream pattern(tpl.pattern);
    std::string slot;
    while (pattern >> slot) {
      if (slot == "<agg>") {
        append_words(question, phrase(rng, kAggPhrases[static_cast<int>(q.agg)], cfg.lexical_variation));
      } else if (slot == "<sel>") {
        question.push_back(q.sel_col);
      } else if (slot == "<conds>") {
        for (std::size_t i = 0; i < order.size(); ++i) {
          append_words(question, i == 0 ? rng.pick(kCondIntro) : std::string("and"));
          append_condition(question, rng, q.conds[order[i]], cfg.lexical_variation);
        }
      } else if (slot == "<col>") {
        if (!q.conds.empty()) question.push_back(q.conds[0].col);
      } else if (slot == "<op>") {
        if (!q.conds.empty())
          append_words(question,
                       phrase(rng, kOpPhrases[static_cast<int>(q.conds[0].op)], cfg.lexical_variation));
      } else if (slot == "<val>") {
        if (!q.conds.empty()) append_words(question, value_token(q.conds[0].val));
      } else {
        append_words(question, slot);
      }
    }
    if (rng.bernoulli(cfg.distractor_rate)) {
      std::vector<std::size_t> unused;
      for (std::size_t c : all)
        if (c != sel_index && std::find(cond_cols.begin(), cond_cols.end(), c) == cond_cols.end())
          unused.push_back(c);
      if (!unused.empty()) {
        if (!question.empty() && question.back() == "?") question.pop_back();
        append_words(question, rng.pick(kDistractors));
        question.push_back(t.columns[rng.pick(unused)].name);
      }
    }
    corpus.items.push_back({std::move(question), t.id, std::move(q)});
  }
  return corpus;
}

CorpusSplits split_corpus(const std::vector<CorpusItem>& items, double init_fraction,
                          std::uint64_t seed, std::size_t validation_size, std::size_t test_size) {
  if (!(init_fraction > 0.0 && init_fraction <= 1.0))
    throw RangeError(fmt::format("init_fraction {} outside (0, 1]", init_fraction));
  if (items.empty()) throw RangeError("cannot split an empty corpus");
  if (validation_size + test_size >= items.size())
    throw RangeError("holdouts leave an empty train pool");
  CorpusSplits s;
  s.seed = seed;
  s.init_fraction = init_fraction;
  auto it = items.begin();
  s.validation.assign(it, it + static_cast<long>(validation_size));
  it += static_cast<long>(validation_size);
  s.test.assign(it, it + static_cast<long>(test_size));
  it += static_cast<long>(test_size);
  const auto pool = static_cast<std::size_t>(items.end() - it);
  const auto n_init = static_cast<std::size_t>(std::llround(init_fraction * static_cast<double>(pool)));
  s.init_train.assign(it, it + static_cast<long>(n_init));
  s.stream.assign(it + static_cast<long>(n_init), items.end());
  Rng rng(seed);
  rng.shuffle(s.stream);
  return s;
}

// ---------------------------------------------------------------------------
// JSON.

json value_to_json(const Value& v) {
  if (const auto* d = std::get_if<double>(&v)) return *d;
  return std::get<std::string>(v);
}

Value value_from_json(const json& j) {
  if (j.is_number()) return j.get<double>();
  if (j.is_string()) return j.get<std::string>();
  throw ParseError("value must be a number or string");
}

json query_to_json(const SqlQuery& q) {
  json conds = json::array();
  for (const auto& c : q.conds)
    conds.push_back(json::array({c.col, std::string(to_string(c.op)), value_to_json(c.val)}));
  return {{"sel", q.sel_col}, {"agg", std::string(to_string(q.agg))}, {"conds", conds}};
}

SqlQuery query_from_json(const json& j, const Table& table) {
  SqlQuery q;
  q.sel_col = j.at("sel").get<std::string>();
  q.agg = parse_agg(j.at("agg").get<std::string>());
  for (const auto& c : j.at("conds")) {
    if (!c.is_array() || c.size() != 3) throw ParseError("condition must be [col, op, val]");
    Condition cond{c[0].get<std::string>(), parse_op(c[1].get<std::string>()), value_from_json(c[2])};
    // Numeric literals written as strings are accepted for NUMBER columns.
    const int idx = table.column_index(cond.col);
    if (idx >= 0 && table.columns[idx].kind == ColumnKind::Number && !is_number(cond.val)) {
      try {
        cond.val = std::stod(std::get<std::string>(cond.val));
      } catch (const std::exception&) {
        throw ParseError(fmt::format("non-numeric value for NUMBER column '{}'", cond.col));
      }
    }
    q.conds.push_back(std::move(cond));
  }
  validate(q, table);
  return q;
}

json item_to_json(const CorpusItem& item) {
  return {{"question", join_tokens(item.question)}, {"table_id", item.table_id}, {"gold", query_to_json(item.gold)}};
}

CorpusItem item_from_json(const json& j, const TableSet& tables) {
  CorpusItem item;
  item.question = tokenize(j.at("question").get<std::string>());
  if (item.question.empty()) throw ParseError("empty question");
  item.table_id = j.at("table_id").get<std::string>();
  auto it = tables.find(item.table_id);
  if (it == tables.end()) throw ParseError(fmt::format("unknown table '{}'", item.table_id));
  item.gold = query_from_json(j.at("gold"), it->second);
  return item;
}

json table_to_json(const Table& t) {
  json cols = json::array();
  for (const auto& c : t.columns) {
    json vocab = json::array();
    for (const auto& v : c.vocabulary) vocab.push_back(value_to_json(v));
    cols.push_back({{"name", c.name}, {"kind", std::string(to_string(c.kind))}, {"vocabulary", vocab}});
  }
  json rows = json::array();
  for (const auto& r : t.rows) {
    json row = json::array();
    for (const auto& v : r) row.push_back(value_to_json(v));
    rows.push_back(std::move(row));
  }
  return {{"id", t.id}, {"columns", cols}, {"rows", rows}};
}

Table table_from_json(const json& j) {
  Table t;
  t.id = j.at("id").get<std::string>();
  for (const auto& c : j.at("columns"))
    t.columns.push_back({c.at("name").get<std::string>(), parse_column_kind(c.at("kind").get<std::string>()), {}});
  for (const auto& r : j.at("rows")) {
    std::vector<Value> row;
    for (const auto& v : r) row.push_back(value_from_json(v));
    t.rows.push_back(std::move(row));
  }
  const auto& cols = j.at("columns");
  for (std::size_t i = 0; i < t.columns.size(); ++i) {
    auto& spec = t.columns[i];
    if (cols[i].contains("vocabulary")) {
      for (const auto& v : cols[i]["vocabulary"]) spec.vocabulary.push_back(value_from_json(v));
    } else {
      std::set<Value> distinct;
      for (const auto& r : t.rows)
        if (i < r.size()) distinct.insert(r[i]);
      spec.vocabulary.assign(distinct.begin(), distinct.end());
    }
  }
  t.validate();
  return t;
}

namespace {

template <class F>
void for_each_line(const std::filesystem::path& path, F&& f) {
  std::ifstream in(path);
  if (!in) throw ParseError(fmt::format("cannot open {}", path.string()));
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      f(json::parse(line));
    } catch (const ParseError& e) {
      throw ParseError(fmt::format("{}: {}", path.filename().string(), e.what()), n);
    } catch (const std::exception& e) {
      throw ParseError(fmt::format("{}: {}", path.filename().string(), e.what()), n);
    }
  }
}

}  // namespace

TableSet load_tables(const std::filesystem::path& path) {
  TableSet tables;
  for_each_line(path, [&](const json& j) {
    Table t = table_from_json(j);
    tables.emplace(t.id, std::move(t));
  });
  return tables;
}

std::vector<CorpusItem> load_items(const std::filesystem::path& path, const TableSet& tables) {
  std::vector<CorpusItem> items;
  for_each_line(path, [&](const json& j) { items.push_back(item_from_json(j, tables)); });
  return items;
}

void save_corpus(const Corpus& corpus, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream tables(dir / "tables.jsonl");
  for (const auto& [id, t] : corpus.tables) tables << table_to_json(t).dump() << '\n';
  std::ofstream items(dir / "corpus.jsonl");
  for (const auto& item : corpus.items) items << item_to_json(item).dump() << '\n';
  if (!tables || !items) throw Error(fmt::format("failed writing corpus to {}", dir.string()));
}

Corpus load_corpus(const std::filesystem::path& dir) {
  Corpus c;
  c.tables = load_tables(dir / "tables.jsonl");
  c.items = load_items(dir / "corpus.jsonl", c.tables);
  return c;
}

// ---------------------------------------------------------------------------

void to_json(json& j, const GenConfig& c) {
  json tpls = json::array();
  for (const auto& t : c.templates) {
    json tj = {{"pattern", t.pattern}};
    if (t.agg) tj["agg"] = std::string(to_string(*t.agg));
    tpls.push_back(tj);
  }
  j = {{"num_tables", c.num_tables},
       {"rows_per_table", c.rows_per_table},
       {"min_columns", c.min_columns},
       {"max_columns", c.max_columns},
       {"num_items", c.num_items},
       {"text_vocab_size", c.text_vocab_size},
       {"number_vocab_size", c.number_vocab_size},
       {"templates", tpls},
       {"lexical_variation", c.lexical_variation},
       {"distractor_rate", c.distractor_rate},
       {"cond_count_weights", c.cond_count_weights},
       {"agg_weights", c.agg_weights}};
}

void from_json(const json& j, GenConfig& c) {
  c.num_tables = j.value("num_tables", c.num_tables);
  c.rows_per_table = j.value("rows_per_table", c.rows_per_table);
  c.min_columns = j.value("min_columns", c.min_columns);
  c.max_columns = j.value("max_columns", c.max_columns);
  c.num_items = j.value("num_items", c.num_items);
  c.text_vocab_size = j.value("text_vocab_size", c.text_vocab_size);
  c.number_vocab_size = j.value("number_vocab_size", c.number_vocab_size);
  c.lexical_variation = j.value("lexical_variation", c.lexical_variation);
  c.distractor_rate = j.value("distractor_rate", c.distractor_rate);
  c.cond_count_weights = j.value("cond_count_weights", c.cond_count_weights);
  c.agg_weights = j.value("agg_weights", c.agg_weights);
  if (j.contains("templates")) {
    c.templates.clear();
    for (const auto& t : j.at("templates")) {
      QuestionTemplate tpl;
      if (t.is_string()) {
        tpl.pattern = t.get<std::string>();
      } else {
        tpl.pattern = t.at("pattern").get<std::string>();
        if (t.contains("agg")) tpl.agg = parse_agg(t.at("agg").get<std::string>());
      }
      c.templates.push_back(std::move(tpl));
    }
  }
}

}  // namespace neil
