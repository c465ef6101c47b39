#include "neil/interaction.hpp"

#include <algorithm>
#include <numeric>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "neil/error.hpp"

namespace neil {

using nlohmann::json;

void InteractionConfig::validate() const {
  if (!(mu >= 0.0 && mu <= 1.0)) throw ConfigError("mu must lie in [0, 1]");
  if (k_options < 1) throw ConfigError("k_options must be >= 1");
}

bool is_uncertain(double prob, double mu) { return prob < mu; }

ActionDistribution rank(const ActionDistribution& dist) {
  std::vector<std::size_t> idx(dist.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return dist[a].prob > dist[b].prob; });
  ActionDistribution out;
  out.reserve(dist.size());
  for (auto i : idx) out.push_back(dist[i]);
  return out;
}

namespace {

std::string agg_phrase(Agg g) {
  switch (g) {
    case Agg::None: return "the values themselves";
    case Agg::Count: return "the number of";
    case Agg::Max: return "the maximum of";
    case Agg::Min: return "the minimum of";
    case Agg::Sum: return "the sum of";
    case Agg::Avg: return "the average of";
  }
  return "?";
}

std::string op_phrase(Op o) {
  switch (o) {
    case Op::Eq: return "equal to";
    case Op::Gt: return "greater than";
    case Op::Lt: return "less than";
  }
  return "?";
}

// Column of the condition currently being filled, if any.
std::string open_condition_column(const State& s) {
  for (auto it = s.prefix.rbegin(); it != s.prefix.rend(); ++it)
    if (const auto* w = std::get_if<WhereCol>(&*it)) return w->col;
  return {};
}

std::string selected_column(const State& s) {
  for (const auto& a : s.prefix)
    if (const auto* c = std::get_if<SelectCol>(&a)) return c->col;
  return {};
}

}  // namespace

std::string option_label(const Action& a) {
  return std::visit(
      [](const auto& x) -> std::string {
        using T = std::decay_t<decltype(x)>;
        if constexpr (std::is_same_v<T, SelectCol>) return fmt::format("column \"{}\"", x.col);
        if constexpr (std::is_same_v<T, SetAgg>) return agg_phrase(x.agg);
        if constexpr (std::is_same_v<T, WhereCol>) return fmt::format("a condition on \"{}\"", x.col);
        if constexpr (std::is_same_v<T, WhereOp>) return op_phrase(x.op);
        if constexpr (std::is_same_v<T, WhereVal>) return fmt::format("\"{}\"", value_token(x.val));
        if constexpr (std::is_same_v<T, EndWhere>) return "no more conditions";
      },
      a);
}

std::string question_text(const State& state, const Action& predicted) {
  return std::visit(
      [&](const auto& x) -> std::string {
        using T = std::decay_t<decltype(x)>;
        if constexpr (std::is_same_v<T, SelectCol>)
          return fmt::format("Should the answer be taken from column \"{}\"?", x.col);
        if constexpr (std::is_same_v<T, SetAgg>) {
          if (x.agg == Agg::None)
            return fmt::format("Should the system return the values of \"{}\" without aggregation?",
                               selected_column(state));
          return fmt::format("Should the system return {} \"{}\"?", agg_phrase(x.agg), selected_column(state));
        }
        if constexpr (std::is_same_v<T, WhereCol>)
          return fmt::format("Does the system need to consider a condition on column \"{}\"?", x.col);
        if constexpr (std::is_same_v<T, WhereOp>)
          return fmt::format("Should the condition require \"{}\" to be {} a value?", open_condition_column(state),
                             op_phrase(x.op));
        if constexpr (std::is_same_v<T, WhereVal>)
          return fmt::format("Should the condition on \"{}\" compare against \"{}\"?", open_condition_column(state),
                             value_token(x.val));
        if constexpr (std::is_same_v<T, EndWhere>)
          return state.num_conditions() == 0 ? std::string("Should the answer use all rows, with no condition?")
                                             : std::string("Are the conditions so far complete?");
      },
      predicted);
}

ClarificationQuestion make_question(const State& state, const Action& predicted, const ActionDistribution& dist,
                                    std::size_t k) {
  if (k < 1) throw RangeError("k must be >= 1");
  if (dist.empty()) throw DecodeError("empty distribution");
  ClarificationQuestion q;
  q.state = state;
  q.slot_kind = action_stage(predicted);
  q.text = question_text(state, predicted);
  q.ranked = rank(dist);
  // The prediction leads even if another candidate ties with it.
  auto pit = std::find_if(q.ranked.begin(), q.ranked.end(), [&](const auto& sa) { return sa.action == predicted; });
  if (pit == q.ranked.end()) throw StageError("predicted action is not a candidate");
  std::rotate(q.ranked.begin(), pit, pit + 1);
  for (std::size_t i = 0; i < std::min(k, q.ranked.size()); ++i) {
    q.options.push_back(q.ranked[i].action);
    q.option_probs.push_back(q.ranked[i].prob);
  }
  return q;
}

UserResponse simulate_user(const ClarificationQuestion& q, const SqlQuery& gold) {
  const auto gold_actions = query_actions(gold);
  const auto& prefix = q.state.prefix;
  if (prefix.size() >= gold_actions.size() || !std::equal(prefix.begin(), prefix.end(), gold_actions.begin()))
    return NoneOfAbove{};
  const Action& want = gold_actions[prefix.size()];
  for (std::size_t i = 0; i < q.options.size(); ++i)
    if (q.options[i] == want) return Choice{i};
  return NoneOfAbove{};
}

Feedback incorporate_feedback(const ClarificationQuestion& q, const UserResponse& r, int iteration,
                              const std::string& question_id) {
  if (const auto* c = std::get_if<Choice>(&r)) {
    if (c->index >= q.options.size())
      throw RangeError(fmt::format("choice {} out of range for {} options", c->index, q.options.size()));
    const Action& a = q.options[c->index];
    return {a, CollectedExample{q.state, a, 1.0, Provenance::DemonstratedValid, iteration, question_id}};
  }
  // Next available option: the most probable candidate that was not shown.
  const Action& a = q.ranked.size() > q.options.size() ? q.ranked[q.options.size()].action : q.options.back();
  return {a, CollectedExample{q.state, a, 0.0, Provenance::DemonstratedInvalid, iteration, question_id}};
}

UserResponse ScriptedUser::answer(const ClarificationQuestion&) {
  if (next_ >= answers_.size()) throw DomainError("scripted user ran out of answers");
  return answers_[next_++];
}

json response_to_json(const std::optional<UserResponse>& r) {
  if (!r) return nullptr;
  if (const auto* c = std::get_if<Choice>(&*r)) return c->index;
  return "none_of_above";
}

std::optional<UserResponse> response_from_json(const json& j) {
  if (j.is_null()) return std::nullopt;
  if (j.is_number_unsigned() || j.is_number_integer()) {
    if (j.get<long long>() < 0) throw ParseError("negative choice index");
    return Choice{j.get<std::size_t>()};
  }
  if (j == "none_of_above") return NoneOfAbove{};
  throw ParseError("response must be an index, \"none_of_above\" or null");
}

json step_to_json(const StepLog& s) {
  json options = json::array();
  for (const auto& a : s.options) options.push_back(action_to_json(a));
  return {{"t", s.t},
          {"stage", to_string(s.stage)},
          {"predicted", action_to_json(s.predicted)},
          {"prob", s.prob},
          {"triggered", s.triggered},
          {"options", options},
          {"response", response_to_json(s.response)},
          {"executed", action_to_json(s.executed)},
          {"weight", s.weight}};
}

// ---------------------------------------------------------------------------

ParseSession::ParseSession(const Policy& policy, Tokens question, const Table& table, InteractionConfig cfg,
                           std::string question_id, int iteration)
    : policy_(&policy),
      table_(&table),
      cfg_(cfg),
      question_id_(std::move(question_id)),
      iteration_(iteration),
      qa_(question, table),
      state_{std::move(question), table.id, {}} {
  cfg_.validate();
  if (state_.question.empty()) throw DecodeError("empty question");
}

void ParseSession::execute(Action a, StepLog entry, CollectedExample ex) {
  check_provenance(ex);
  entry.executed = a;
  entry.weight = ex.weight;
  log_.push_back(std::move(entry));
  examples_.push_back(std::move(ex));
  state_.prefix.push_back(std::move(a));
}

const ClarificationQuestion* ParseSession::advance() {
  while (!pending_ && !complete()) {
    const auto dist = action_distribution(*policy_, state_, *table_, qa_);
    const std::size_t best = argmax(dist);
    StepLog entry;
    entry.t = state_.prefix.size() + 1;
    entry.stage = state_.stage();
    entry.predicted = dist[best].action;
    entry.prob = dist[best].prob;
    if (!is_uncertain(entry.prob, cfg_.mu)) {
      Action a = dist[best].action;
      execute(a, std::move(entry),
              CollectedExample{state_, a, 1.0, Provenance::Confident, iteration_, question_id_});
      continue;
    }
    entry.triggered = true;
    pending_ = make_question(state_, dist[best].action, dist, cfg_.k_options);
    entry.options = pending_->options;
    pending_log_ = std::move(entry);
  }
  return pending();
}

void ParseSession::answer(const UserResponse& r) {
  if (!pending_) throw DomainError("no pending question");
  Feedback fb = incorporate_feedback(*pending_, r, iteration_, question_id_);
  StepLog entry = std::move(*pending_log_);
  entry.response = r;
  pending_.reset();
  pending_log_.reset();
  ++interactions_;
  execute(std::move(fb.executed), std::move(entry), std::move(fb.example));
}

SqlQuery ParseSession::query() const { return actions_to_query(state_.prefix); }

ParseOutcome parse_and_collect(const InteractionConfig& cfg, const CorpusItem& item, const Table& table,
                               const Policy& policy, UserOracle& user, const std::string& question_id,
                               int iteration) {
  ParseSession session(policy, item.question, table, cfg, question_id, iteration);
  while (const ClarificationQuestion* q = session.advance()) session.answer(user.answer(*q));
  return {session.query(), session.examples(), session.interaction_count(), session.log()};
}

}  // namespace neil
