#pragma once

// Confidence-triggered clarification: the parser previews its argmax at every
// step, executes it when p >= mu and otherwise asks the user a multi-choice
// question whose answer becomes a demonstration.

#include <cstddef>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "neil/corpus.hpp"
#include "neil/example.hpp"
#include "neil/features.hpp"
#include "neil/policy.hpp"
#include "neil/sql.hpp"

namespace neil {

struct InteractionConfig {
  double mu = 0.95;
  std::size_t k_options = 3;

  void validate() const;
};

/// True iff prob < mu.
bool is_uncertain(double prob, double mu);

struct ClarificationQuestion {
  State state;
  Stage slot_kind = Stage::SelectCol;
  std::string text;
  /// Top-K actions by probability; options[0] is the prediction.
  std::vector<Action> options;
  std::vector<double> option_probs;
  bool includes_none = true;
  /// Every candidate of the state, most probable first. Used to pick the
  /// substitute after a none-of-the-above answer.
  ActionDistribution ranked;
};

struct Choice {
  std::size_t index = 0;
  bool operator==(const Choice&) const = default;
};
struct NoneOfAbove {
  bool operator==(const NoneOfAbove&) const = default;
};
using UserResponse = std::variant<Choice, NoneOfAbove>;

/// Candidates sorted by descending probability; ties keep candidate order.
ActionDistribution rank(const ActionDistribution& dist);

/// Short option label, e.g. `column "player"`, `count`, `greater than`.
std::string option_label(const Action& a);

/// Question text for the slot, built around the predicted action.
std::string question_text(const State& state, const Action& predicted);

/// `predicted` must be the argmax of `dist`.
ClarificationQuestion make_question(const State& state, const Action& predicted,
                                    const ActionDistribution& dist, std::size_t k);

/// Answers from the gold query: the gold action when the prefix is a gold
/// prefix and the action is among the options, otherwise none-of-the-above.
UserResponse simulate_user(const ClarificationQuestion& q, const SqlQuery& gold);

struct Feedback {
  Action executed;
  CollectedExample example;
};

/// Throws RangeError on an out-of-range choice.
Feedback incorporate_feedback(const ClarificationQuestion& q, const UserResponse& r, int iteration = 0,
                              const std::string& question_id = {});

/// Supplies answers to clarification questions.
class UserOracle {
 public:
  virtual ~UserOracle() = default;
  virtual UserResponse answer(const ClarificationQuestion& q) = 0;
};

class SimulatedUser : public UserOracle {
 public:
  explicit SimulatedUser(SqlQuery gold) : gold_(std::move(gold)) {}
  UserResponse answer(const ClarificationQuestion& q) override { return simulate_user(q, gold_); }

 private:
  SqlQuery gold_;
};

/// Replays a fixed answer sequence; throws DomainError when exhausted.
class ScriptedUser : public UserOracle {
 public:
  explicit ScriptedUser(std::vector<UserResponse> answers) : answers_(std::move(answers)) {}
  UserResponse answer(const ClarificationQuestion& q) override;
  std::size_t used() const { return next_; }

 private:
  std::vector<UserResponse> answers_;
  std::size_t next_ = 0;
};

struct StepLog {
  std::size_t t = 0;  // 1-based
  Stage stage = Stage::SelectCol;
  Action predicted;
  double prob = 0.0;
  bool triggered = false;
  std::vector<Action> options;
  std::optional<UserResponse> response;
  Action executed;
  double weight = 1.0;
};

nlohmann::json response_to_json(const std::optional<UserResponse>& r);
std::optional<UserResponse> response_from_json(const nlohmann::json& j);
/// {t, stage, predicted, prob, triggered, options, response, executed, weight}
nlohmann::json step_to_json(const StepLog& s);

/// Resumable Parse&Collect over one question. `advance` executes confident
/// steps until a question is pending or the parse is complete; `answer`
/// resolves the pending question. The policy must outlive the session.
class ParseSession {
 public:
  ParseSession(const Policy& policy, Tokens question, const Table& table, InteractionConfig cfg,
               std::string question_id = {}, int iteration = 0);

  /// Returns the pending question, or nullptr once complete.
  const ClarificationQuestion* advance();
  /// Throws DomainError when nothing is pending, RangeError on a bad index.
  void answer(const UserResponse& r);

  bool complete() const { return state_.stage() == Stage::Done; }
  const ClarificationQuestion* pending() const { return pending_ ? &*pending_ : nullptr; }
  const State& cursor() const { return state_; }
  const std::vector<StepLog>& log() const { return log_; }
  const std::vector<CollectedExample>& examples() const { return examples_; }
  std::size_t interaction_count() const { return interactions_; }
  /// Query built from the executed prefix; throws IncompleteError before completion.
  SqlQuery query() const;

 private:
  void execute(Action a, StepLog entry, CollectedExample ex);

  const Policy* policy_;
  const Table* table_;
  InteractionConfig cfg_;
  std::string question_id_;
  int iteration_;
  QuestionAnalysis qa_;
  State state_;
  std::optional<ClarificationQuestion> pending_;
  std::optional<StepLog> pending_log_;
  std::vector<StepLog> log_;
  std::vector<CollectedExample> examples_;
  std::size_t interactions_ = 0;
};

struct ParseOutcome {
  SqlQuery query;
  std::vector<CollectedExample> examples;
  std::size_t interaction_count = 0;
  std::vector<StepLog> log;
};

ParseOutcome parse_and_collect(const InteractionConfig& cfg, const CorpusItem& item, const Table& table,
                               const Policy& policy, UserOracle& user, const std::string& question_id = {},
                               int iteration = 0);

}  // namespace neil
