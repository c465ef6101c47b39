#include "neil/example.hpp"

#include <fstream>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "neil/corpus.hpp"

#include "neil/error.hpp"

namespace neil {

std::string_view to_string(Provenance p) {
  switch (p) {
    case Provenance::Confident: return "CONFIDENT";
    case Provenance::DemonstratedValid: return "DEMONSTRATED_VALID";
    case Provenance::DemonstratedInvalid: return "DEMONSTRATED_INVALID";
  }
  return "?";
}

Provenance parse_provenance(std::string_view s) {
  if (s == "CONFIDENT") return Provenance::Confident;
  if (s == "DEMONSTRATED_VALID") return Provenance::DemonstratedValid;
  if (s == "DEMONSTRATED_INVALID") return Provenance::DemonstratedInvalid;
  throw ParseError(fmt::format("unknown provenance '{}'", s));
}

void check_provenance(const CollectedExample& ex) {
  const double expected = ex.provenance == Provenance::DemonstratedInvalid ? 0.0 : 1.0;
  if (ex.weight != expected)
    throw DomainError(fmt::format("{} example must carry weight {}, got {}", to_string(ex.provenance),
                                  expected, ex.weight));
}

using nlohmann::json;

json action_to_json(const Action& a) {
  return std::visit(
      [](const auto& x) -> json {
        using T = std::decay_t<decltype(x)>;
        if constexpr (std::is_same_v<T, SelectCol>) return {{"kind", "SelectCol"}, {"col", x.col}};
        if constexpr (std::is_same_v<T, SetAgg>) return {{"kind", "SetAgg"}, {"agg", to_string(x.agg)}};
        if constexpr (std::is_same_v<T, WhereCol>) return {{"kind", "WhereCol"}, {"col", x.col}};
        if constexpr (std::is_same_v<T, WhereOp>) return {{"kind", "WhereOp"}, {"op", to_string(x.op)}};
        if constexpr (std::is_same_v<T, WhereVal>) return {{"kind", "WhereVal"}, {"val", value_to_json(x.val)}};
        if constexpr (std::is_same_v<T, EndWhere>) return {{"kind", "EndWhere"}};
      },
      a);
}

Action action_from_json(const json& j) {
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "SelectCol") return SelectCol{j.at("col").get<std::string>()};
  if (kind == "SetAgg") return SetAgg{parse_agg(j.at("agg").get<std::string>())};
  if (kind == "WhereCol") return WhereCol{j.at("col").get<std::string>()};
  if (kind == "WhereOp") return WhereOp{parse_op(j.at("op").get<std::string>())};
  if (kind == "WhereVal") return WhereVal{value_from_json(j.at("val"))};
  if (kind == "EndWhere") return EndWhere{};
  throw ParseError(fmt::format("unknown action kind '{}'", kind));
}

json state_to_json(const State& s) {
  json prefix = json::array();
  for (const auto& a : s.prefix) prefix.push_back(action_to_json(a));
  return {{"question", s.question}, {"table_id", s.table_id}, {"prefix", prefix}};
}

State state_from_json(const json& j) {
  State s;
  s.question = j.at("question").get<std::vector<std::string>>();
  s.table_id = j.at("table_id").get<std::string>();
  for (const auto& a : j.at("prefix")) s.prefix.push_back(action_from_json(a));
  stage_after(s.prefix);
  return s;
}

json example_to_json(const CollectedExample& ex) {
  return {{"state", state_to_json(ex.state)},
          {"action", action_to_json(ex.action)},
          {"weight", ex.weight},
          {"provenance", to_string(ex.provenance)},
          {"iteration", ex.iteration},
          {"question_id", ex.question_id}};
}

CollectedExample example_from_json(const json& j) {
  CollectedExample ex;
  ex.state = state_from_json(j.at("state"));
  ex.action = action_from_json(j.at("action"));
  ex.weight = j.at("weight").get<double>();
  ex.provenance = parse_provenance(j.at("provenance").get<std::string>());
  ex.iteration = j.value("iteration", 0);
  ex.question_id = j.value("question_id", std::string{});
  check_provenance(ex);
  return ex;
}

void save_examples(const std::vector<CollectedExample>& data, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  for (const auto& ex : data) out << example_to_json(ex).dump() << '\n';
  if (!out) throw Error(fmt::format("cannot write {}", path.string()));
}

std::vector<CollectedExample> load_examples(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(fmt::format("cannot open {}", path.string()));
  std::vector<CollectedExample> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    try {
      out.push_back(example_from_json(json::parse(line)));
    } catch (const ParseError& e) {
      throw ParseError(e.what(), n);
    } catch (const std::exception& e) {
      throw ParseError(e.what(), n);
    }
  }
  return out;
}

}  // namespace neil
