#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "neil/corpus.hpp"
#include "neil/example.hpp"
#include "neil/features.hpp"
#include "neil/sql.hpp"

namespace neil {

/// Log-linear parser: p(a|s) ∝ exp(θ·φ(s,a)) over the stage-legal candidates.
struct Policy {
  Eigen::VectorXd weights = Eigen::VectorXd::Zero(FeatureSpace::kDim);
  std::uint64_t feature_space_version = FeatureSpace::version();

  static Policy zero() { return Policy{}; }
  bool operator==(const Policy& o) const {
    return feature_space_version == o.feature_space_version && weights == o.weights;
  }
};

struct TrainConfig {
  double l2_lambda = 1e-4;
  double learning_rate = 1.0;
  /// Heavy-ball momentum on the full-batch gradient step; 0 gives plain descent.
  double momentum = 0.9;
  int max_epochs = 150;
  int early_stop_patience = 3;
  /// Epochs between validation evaluations.
  int eval_every = 10;
  std::uint64_t seed = 0;

  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

struct ScoredAction {
  Action action;
  double prob = 0.0;
};
using ActionDistribution = std::vector<ScoredAction>;

/// Numerically stable softmax of `scores`; exact normalization.
std::vector<double> softmax(std::span<const double> scores);

ActionDistribution action_distribution(const Policy& policy, const State& state, const Table& table);
ActionDistribution action_distribution(const Policy& policy, const State& state, const Table& table,
                                       const QuestionAnalysis& qa);
/// Index of the most probable action; ties go to the earliest candidate.
std::size_t argmax(const ActionDistribution& dist);

/// Greedy decode. The condition cap forces EndWhere after three conditions.
Trajectory decode(const Policy& policy, const Tokens& question, const Table& table);

/// Π_t p(a_t | s_t) over the trajectory's own actions.
double sequence_probability(const Policy& policy, const Trajectory& traj, const Table& table);
double sequence_log_probability(const Policy& policy, const Trajectory& traj, const Table& table);

/// A training example with its candidate features resolved once.
struct CompiledExample {
  std::vector<FeatureVector> candidates;
  std::size_t target = 0;
  double weight = 1.0;
};

/// Throws DomainError for weights outside {0, 1} and StageError for actions
/// that are not candidates of their state.
CompiledExample compile_example(const CollectedExample& ex, const TableSet& tables);
std::vector<CompiledExample> compile_dataset(const std::vector<CollectedExample>& data,
                                             const TableSet& tables);

struct LossGrad {
  double loss = 0.0;
  Eigen::VectorXd grad;
};

/// −(1/|D|) Σ w log p(ã|s) + (λ/2)‖θ‖², with its exact gradient. |D| counts
/// every example, zero-weight ones included.
LossGrad loss_and_gradient(const Eigen::VectorXd& weights, const std::vector<CompiledExample>& data,
                           double l2_lambda);
/// The same loss without the gradient.
double loss_value(const Eigen::VectorXd& weights, const std::vector<CompiledExample>& data, double l2_lambda);
LossGrad loss_and_gradient(const Policy& policy, const std::vector<CollectedExample>& data,
                           const TableSet& tables, double l2_lambda);

/// Fraction of items whose greedy decode equals the gold query.
double query_match_accuracy(const Policy& policy, const std::vector<CorpusItem>& items,
                            const TableSet& tables);

struct TrainResult {
  Policy policy;
  int epochs = 0;
  double final_loss = 0.0;
  double validation_accuracy = 0.0;
};

/// Full-batch gradient descent on the weighted loss, starting from `init`.
/// Zero-weight examples are dropped before optimization. When `validation`
/// is non-empty, training keeps the best-scoring weights and stops after
/// `early_stop_patience` evaluations without improvement.
TrainResult train(const Policy& init, const std::vector<CompiledExample>& data, const TrainConfig& cfg,
                  const std::vector<CorpusItem>& validation, const TableSet& tables);
TrainResult train(const Policy& init, const std::vector<CollectedExample>& data, const TableSet& tables,
                  const TrainConfig& cfg, const std::vector<CorpusItem>& validation);

/// JSON checkpoint: {format, feature_space_version, dim, weights: [[id, w], ...]}.
void save_policy(const Policy& policy, const std::filesystem::path& path);
/// Throws VersionError on a feature-space mismatch.
Policy load_policy(const std::filesystem::path& path);
nlohmann::json policy_to_json(const Policy& policy);
Policy policy_from_json(const nlohmann::json& j);

}  // namespace neil
