#pragma once

// Exact analysis on small enumerable environments: expert and mixture state
// distributions, the cost J, the confident-error diagnostics, the L1 bound
// between mixture and expert distributions, and a tabular NEIL loop whose
// iterates are checked against the regret bound.
//
// A state is (observation, prefix). Questions that share an observation share
// their states, so two questions can disagree about the gold action at the
// same state. Mass that leaves a question's gold path is moved to an
// absorbing "failed" entry per step; the failed entries carry no loss.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json_fwd.hpp>

#include "neil/rng.hpp"

namespace neil::theory {

struct TabularEnv {
  int T = 1;
  int num_actions = 2;
  int num_obs = 1;
  /// Observation of each question.
  std::vector<int> obs;
  /// Gold action sequence of each question, length T.
  std::vector<std::vector<int>> gold;

  std::size_t num_questions() const { return gold.size(); }
  /// Number of prefixes of length 0..T-1.
  std::size_t prefixes() const;
  std::size_t num_states() const;
  /// Index of (obs, prefix); prefix length < T.
  std::size_t state_index(int o, const std::vector<int>& prefix) const;
  /// Gold state of question q before step t (1-based).
  std::size_t gold_state(std::size_t q, int t) const;
  /// Throws RangeError/DomainError when malformed or larger than 1e5 states.
  void validate() const;
};

/// Uniformly random gold actions. With `shared_obs`, questions draw one of
/// ceil(n/2) observations, so some share states until their gold paths split.
TabularEnv random_env(Rng& rng, int num_questions, int T, int num_actions, bool shared_obs = false);

/// Row-stochastic table over all states; a row of zeros marks an undefined state.
struct TabularPolicy {
  Eigen::MatrixXd probs;

  /// Uniform rows.
  static TabularPolicy uniform(const TabularEnv& env);
  /// Probability 1 on each state's gold action; conflicting states split evenly.
  static TabularPolicy expert(const TabularEnv& env);
  /// Rows drawn from a symmetric Dirichlet(alpha).
  static TabularPolicy random(const TabularEnv& env, Rng& rng, double alpha = 1.0);
  /// Ties go to the lowest action index.
  int argmax(std::size_t s) const;
};

/// Mass over states followed by one failed entry per step (size states + T).
struct StateDistribution {
  Eigen::VectorXd mass;
  /// Step index, or nullopt for the average over steps.
  std::optional<int> t;

  double total() const { return mass.sum(); }
};

StateDistribution expert_distribution(const TabularEnv& env, int t);
StateDistribution expert_average(const TabularEnv& env);
/// Executes the policy's argmax when its probability is >= mu, else the gold action.
StateDistribution mixture_distribution(const TabularEnv& env, const TabularPolicy& pi, double mu, int t);
StateDistribution mixture_average(const TabularEnv& env, const TabularPolicy& pi, double mu);

double l1_distance(const StateDistribution& a, const StateDistribution& b);

/// T * E_{s ~ averaged expert distribution}[1 - p(gold | s)]. Throws
/// CoverageError on an undefined row of a gold state.
double cost_J(const TabularEnv& env, const TabularPolicy& pi);

struct TheoryDiagnostics {
  std::vector<double> e_t, beta_t, eps_tilde_t;
  /// (1/T) sum_t eps_tilde_t (1 - beta_t).
  double e = 0.0;
  /// (1/T) sum_t beta_t.
  double beta = 0.0;
  /// e / (1 - beta), 0 when the expert is always queried.
  double eps_tilde = 0.0;
  /// Probability of (confident and wrong) under the averaged expert
  /// distribution, counted directly.
  double joint = 0.0;
};

TheoryDiagnostics diagnostics(const TabularEnv& env, const TabularPolicy& pi, double mu);

struct Lemma1Report {
  double lhs = 0.0;  // ||d_mix - d_expert||_1
  double rhs = 0.0;  // 2 T e
  double e = 0.0;
  bool holds = false;
};

Lemma1Report verify_lemma1(const TabularEnv& env, const TabularPolicy& pi, double mu);

// ---------------------------------------------------------------------------
// Tabular training.

struct NewtonConfig {
  double l2_lambda = 1e-9;
  double grad_tol = 1e-8;
  int max_iterations = 200;
};

/// Weighted per-state action counts.
using CountTable = Eigen::MatrixXd;

/// Gold action counts weighted by the averaged expert distribution.
CountTable expert_counts(const TabularEnv& env);

struct FitResult {
  TabularPolicy policy;
  double objective = 0.0;
  double grad_norm = 0.0;
  bool converged = false;
};

/// Minimizes sum_s sum_a -C[s,a] log softmax(theta_s)_a + (lambda/2)||theta||^2
/// by Newton's method per state. Rows without counts come out uniform.
FitResult fit_tabular(const CountTable& counts, const NewtonConfig& cfg = {});

/// sum_s sum_a C[s,a] (1 - p(a|s)), the expected single-step loss for counts
/// that form a distribution.
double expected_loss(const CountTable& counts, const TabularPolicy& pi);
/// Smallest expected loss any row-stochastic policy can reach on `counts`.
double loss_infimum(const CountTable& counts);

struct Theorem1Report {
  double J = 0.0;
  double epsilon_N = 0.0;
  double infimum = 0.0;
  double grad_norm = 0.0;
  bool converged = false;
  bool holds = false;
};

/// Fits the tabular class on the expert distribution and compares J with
/// T * eps_N read off the fitted policy.
Theorem1Report verify_theorem1(const TabularEnv& env, const NewtonConfig& cfg = {});

// ---------------------------------------------------------------------------
// Tabular NEIL.

struct TheoryReport {
  int N = 0;
  double mu = 0.0;
  double J = 0.0;  // of the best iterate
  int best_iterate = 0;
  double epsilon_N = 0.0;
  double l_max = 0.0;
  double bound = 0.0;
  std::vector<double> J_i, e_i, beta_i, eps_tilde_i, loss_i, empirical_regret, lemma1_lhs, lemma1_rhs;
  bool dominated = false;
};

/// Runs N iterations from `init`: collect mass-weighted examples along the
/// mixture rollouts (own argmax when confident, the gold action when
/// querying), aggregate, refit. Reports the regret curve and the bound
/// T [eps_N + (2 T l_max / N) sum_i e_i] next to min_i J(pi_i).
TheoryReport track_regret(const TabularEnv& env, const TabularPolicy& init, double mu, int N,
                          const NewtonConfig& cfg = {});

nlohmann::json to_json(const TheoryReport& r);

struct SweepRow {
  double mu = 0.0;
  double e_i = 0.0, beta_i = 0.0, eps_tilde_i = 0.0;
  double lemma1_lhs = 0.0, lemma1_rhs = 0.0;
  double J = 0.0, bound = 0.0;
};

/// "mu=start:step:end"; floor((end - start) / step + 1e-9) + 1 points.
std::vector<double> parse_sweep(const std::string& spec);

struct SweepConfig {
  int questions = 5;
  int T = 3;
  int num_actions = 3;
  bool shared_obs = true;
  int N = 20;
  double dirichlet_alpha = 0.5;
};

/// One tabular NEIL run per mu on an env and initial policy drawn from `seed`.
/// e_i, beta_i, eps_tilde_i and the two distance columns are means over iterates.
/// The full per-mu reports go to `reports` when given.
std::vector<SweepRow> run_sweep(const std::vector<double>& mus, const SweepConfig& cfg, std::uint64_t seed,
                                std::vector<TheoryReport>* reports = nullptr);

void write_sweep_csv(const std::vector<SweepRow>& rows, const std::string& path);

}  // namespace neil::theory
