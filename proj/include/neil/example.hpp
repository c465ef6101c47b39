#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "neil/sql.hpp"

namespace neil {

enum class Provenance { Confident, DemonstratedValid, DemonstratedInvalid };

std::string_view to_string(Provenance p);
Provenance parse_provenance(std::string_view s);

/// One (state, action, weight) triple of the aggregated training set.
/// Confident and valid demonstrations carry weight 1, invalid ones weight 0.
struct CollectedExample {
  State state;
  Action action;
  double weight = 1.0;
  Provenance provenance = Provenance::Confident;
  int iteration = 0;
  std::string question_id;

  bool operator==(const CollectedExample&) const = default;
};

/// Throws DomainError if weight and provenance disagree.
void check_provenance(const CollectedExample& ex);

// JSON forms used by transcripts, the feedback store and dataset dumps.
//   action:  {"kind": "WhereCol", "col": "player"}, {"kind": "EndWhere"}, ...
//   state:   {"question": [tokens], "table_id": ..., "prefix": [action, ...]}
nlohmann::json action_to_json(const Action& a);
Action action_from_json(const nlohmann::json& j);
nlohmann::json state_to_json(const State& s);
State state_from_json(const nlohmann::json& j);
nlohmann::json example_to_json(const CollectedExample& ex);
CollectedExample example_from_json(const nlohmann::json& j);

/// One JSON object per line.
void save_examples(const std::vector<CollectedExample>& data, const std::filesystem::path& path);
/// Throws ParseError naming the line of a malformed record.
std::vector<CollectedExample> load_examples(const std::filesystem::path& path);

}  // namespace neil
