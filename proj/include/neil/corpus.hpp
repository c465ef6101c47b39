#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "neil/sql.hpp"

namespace neil {

using Tokens = std::vector<std::string>;

/// Lowercases and splits on whitespace; '?' and ',' become their own tokens.
Tokens tokenize(const std::string& text);
std::string join_tokens(const Tokens& tokens);

struct CorpusItem {
  Tokens question;
  std::string table_id;
  SqlQuery gold;

  bool operator==(const CorpusItem&) const = default;
};

/// Tables by id.
using TableSet = std::map<std::string, Table>;

const Table& lookup(const TableSet& tables, const std::string& id);

/// A question pattern. Slots:
///   <agg> <sel> <conds>   aggregator phrase, select column, 0-2 condition phrases
///   <col> <op> <val>      exactly one inline condition
/// A pattern without <sel> selects the table's first column.
struct QuestionTemplate {
  std::string pattern;
  std::optional<Agg> agg;
};

struct GenConfig {
  int num_tables = 200;
  int rows_per_table = 15;
  int min_columns = 4;
  int max_columns = 7;
  int num_items = 6500;
  int text_vocab_size = 8;
  int number_vocab_size = 10;
  std::vector<QuestionTemplate> templates = default_templates();
  /// Probability of replacing aggregator/operator wording with a synonym.
  double lexical_variation = 0.3;
  /// Probability of appending a mention of an unused column.
  double distractor_rate = 0.15;
  /// Weights over 0, 1, 2 conditions.
  std::vector<double> cond_count_weights{0.2, 0.5, 0.3};
  /// Weights over NONE, COUNT, MAX, MIN, SUM, AVG.
  std::vector<double> agg_weights{0.4, 0.15, 0.1, 0.1, 0.1, 0.15};

  static std::vector<QuestionTemplate> default_templates();
  /// Throws ConfigError.
  void validate() const;
};

void to_json(nlohmann::json& j, const GenConfig& c);
void from_json(const nlohmann::json& j, GenConfig& c);

struct Corpus {
  TableSet tables;
  std::vector<CorpusItem> items;
};

/// Deterministic in (config, seed).
Corpus generate_corpus(const GenConfig& config, std::uint64_t seed);

struct CorpusSplits {
  std::vector<CorpusItem> init_train;
  std::vector<CorpusItem> stream;
  std::vector<CorpusItem> validation;
  std::vector<CorpusItem> test;
  std::uint64_t seed = 0;
  double init_fraction = 1.0;
};

/// Validation and test are the first `validation_size` and next `test_size`
/// items; the remainder is the train pool, whose first
/// round(init_fraction * |pool|) items initialize the parser. Only the stream
/// order depends on `seed`.
CorpusSplits split_corpus(const std::vector<CorpusItem>& items, double init_fraction,
                          std::uint64_t seed, std::size_t validation_size = 500,
                          std::size_t test_size = 1000);

nlohmann::json item_to_json(const CorpusItem& item);
/// Needs the table to type the condition values.
CorpusItem item_from_json(const nlohmann::json& j, const TableSet& tables);
nlohmann::json table_to_json(const Table& t);
Table table_from_json(const nlohmann::json& j);
nlohmann::json value_to_json(const Value& v);
Value value_from_json(const nlohmann::json& j);
nlohmann::json query_to_json(const SqlQuery& q);
SqlQuery query_from_json(const nlohmann::json& j, const Table& table);

/// Writes `corpus.jsonl` and `tables.jsonl` under `dir`.
void save_corpus(const Corpus& corpus, const std::filesystem::path& dir);
/// Throws ParseError naming the 1-based line of a malformed record.
Corpus load_corpus(const std::filesystem::path& dir);
TableSet load_tables(const std::filesystem::path& path);
std::vector<CorpusItem> load_items(const std::filesystem::path& path, const TableSet& tables);

}  // namespace neil
