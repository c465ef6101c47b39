#include "neil/policy.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "neil/error.hpp"

namespace neil {

using nlohmann::json;

void TrainConfig::validate() const {
  if (!(l2_lambda >= 0)) throw ConfigError("l2_lambda must be >= 0");
  if (!(learning_rate > 0)) throw ConfigError("learning_rate must be > 0");
  if (!(momentum >= 0 && momentum < 1)) throw ConfigError("momentum must lie in [0, 1)");
  if (max_epochs < 0) throw ConfigError("max_epochs must be >= 0");
  if (early_stop_patience <= 0) throw ConfigError("early_stop_patience must be > 0");
  if (eval_every <= 0) throw ConfigError("eval_every must be > 0");
}

void to_json(json& j, const TrainConfig& c) {
  j = {{"l2_lambda", c.l2_lambda},         {"learning_rate", c.learning_rate},
       {"momentum", c.momentum},           {"max_epochs", c.max_epochs},
       {"early_stop_patience", c.early_stop_patience}, {"eval_every", c.eval_every},
       {"seed", c.seed}};
}

void from_json(const json& j, TrainConfig& c) {
  c.l2_lambda = j.value("l2_lambda", c.l2_lambda);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.momentum = j.value("momentum", c.momentum);
  c.max_epochs = j.value("max_epochs", c.max_epochs);
  c.early_stop_patience = j.value("early_stop_patience", c.early_stop_patience);
  c.eval_every = j.value("eval_every", c.eval_every);
  c.seed = j.value("seed", c.seed);
}

std::vector<double> softmax(std::span<const double> scores) {
  if (scores.empty()) throw DecodeError("empty candidate set");
  const double m = *std::max_element(scores.begin(), scores.end());
  std::vector<double> p(scores.size());
  double z = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) z += (p[i] = std::exp(scores[i] - m));
  for (auto& x : p) x /= z;
  return p;
}

namespace {

std::vector<double> scores_of(const Eigen::VectorXd& w, const std::vector<FeatureVector>& feats) {
  std::vector<double> s(feats.size());
  for (std::size_t i = 0; i < feats.size(); ++i) s[i] = feats[i].dot(w);
  return s;
}

void check_version(const Policy& p) {
  if (p.feature_space_version != FeatureSpace::version() || p.weights.size() != FeatureSpace::kDim)
    throw VersionError("policy does not match the registered feature space");
}

}  // namespace

ActionDistribution action_distribution(const Policy& policy, const State& state, const Table& table) {
  return action_distribution(policy, state, table, QuestionAnalysis(state.question, table));
}

ActionDistribution action_distribution(const Policy& policy, const State& state, const Table& table,
                                       const QuestionAnalysis& qa) {
  check_version(policy);
  CandidateSet cs = featurize(state, table, qa);
  if (cs.actions.empty()) throw DecodeError("empty candidate set");
  const auto p = softmax(scores_of(policy.weights, cs.features));
  ActionDistribution out;
  out.reserve(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) out.push_back({std::move(cs.actions[i]), p[i]});
  return out;
}

std::size_t argmax(const ActionDistribution& dist) {
  if (dist.empty()) throw DecodeError("empty distribution");
  std::size_t best = 0;
  for (std::size_t i = 1; i < dist.size(); ++i)
    if (dist[i].prob > dist[best].prob) best = i;
  return best;
}

Trajectory decode(const Policy& policy, const Tokens& question, const Table& table) {
  if (question.empty()) throw DecodeError("empty question");
  const QuestionAnalysis qa(question, table);
  Trajectory traj;
  State s{question, table.id, {}};
  while (s.stage() != Stage::Done) {
    auto dist = action_distribution(policy, s, table, qa);
    Action a = std::move(dist[argmax(dist)].action);
    traj.states.push_back(s);
    traj.actions.push_back(a);
    s.prefix.push_back(std::move(a));
  }
  traj.complete = true;
  return traj;
}

double sequence_log_probability(const Policy& policy, const Trajectory& traj, const Table& table) {
  if (traj.states.size() != traj.actions.size()) throw StageError("states/actions length mismatch");
  if (traj.states.empty()) throw StageError("empty trajectory");
  const QuestionAnalysis qa(traj.states.front().question, table);
  double lp = 0.0;
  for (std::size_t t = 0; t < traj.actions.size(); ++t) {
    const auto dist = action_distribution(policy, traj.states[t], table, qa);
    auto it = std::find_if(dist.begin(), dist.end(),
                           [&](const ScoredAction& sa) { return sa.action == traj.actions[t]; });
    if (it == dist.end())
      throw StageError(fmt::format("action {} is not legal at step {}", describe(traj.actions[t]), t + 1));
    lp += std::log(it->prob);
  }
  return lp;
}

double sequence_probability(const Policy& policy, const Trajectory& traj, const Table& table) {
  if (traj.states.size() != traj.actions.size()) throw StageError("states/actions length mismatch");
  const QuestionAnalysis qa(traj.states.at(0).question, table);
  double p = 1.0;
  for (std::size_t t = 0; t < traj.actions.size(); ++t) {
    const auto dist = action_distribution(policy, traj.states[t], table, qa);
    auto it = std::find_if(dist.begin(), dist.end(),
                           [&](const ScoredAction& sa) { return sa.action == traj.actions[t]; });
    if (it == dist.end())
      throw StageError(fmt::format("action {} is not legal at step {}", describe(traj.actions[t]), t + 1));
    p *= it->prob;
  }
  return p;
}

// ---------------------------------------------------------------------------

CompiledExample compile_example(const CollectedExample& ex, const TableSet& tables) {
  if (ex.weight != 0.0 && ex.weight != 1.0)
    throw DomainError(fmt::format("example weight {} outside {{0, 1}}", ex.weight));
  const Table& table = lookup(tables, ex.state.table_id);
  const QuestionAnalysis qa(ex.state.question, table);
  CandidateSet cs = featurize(ex.state, table, qa);
  auto it = std::find(cs.actions.begin(), cs.actions.end(), ex.action);
  if (it == cs.actions.end())
    throw StageError(fmt::format("action {} is not a candidate of its state", describe(ex.action)));
  return {std::move(cs.features), static_cast<std::size_t>(it - cs.actions.begin()), ex.weight};
}

std::vector<CompiledExample> compile_dataset(const std::vector<CollectedExample>& data,
                                             const TableSet& tables) {
  std::vector<CompiledExample> out;
  out.reserve(data.size());
  for (const auto& ex : data) out.push_back(compile_example(ex, tables));
  return out;
}

namespace {

// Weighted NLL normalized by `n` plus the L2 term. Zero-weight examples are
// skipped, so normalizing by the nonzero count equals dropping them.
LossGrad weighted_loss(const Eigen::VectorXd& w, const std::vector<CompiledExample>& data, double n,
                       double l2_lambda, bool with_grad = true) {
  LossGrad lg{0.0, with_grad ? Eigen::VectorXd::Zero(w.size()) : Eigen::VectorXd()};
  if (n > 0) {
    const double inv_n = 1.0 / n;
    std::vector<double> scores;
    for (const auto& ex : data) {
      if (ex.weight == 0.0) continue;
      scores.resize(ex.candidates.size());
      for (std::size_t i = 0; i < scores.size(); ++i) scores[i] = ex.candidates[i].dot(w);
      const double m = *std::max_element(scores.begin(), scores.end());
      double z = 0.0;
      for (double s : scores) z += std::exp(s - m);
      const double log_z = m + std::log(z);
      const double c = ex.weight * inv_n;
      lg.loss -= c * (scores[ex.target] - log_z);
      if (!with_grad) continue;
      // ∇(−log p_target) = Σ_a p_a φ_a − φ_target
      for (std::size_t i = 0; i < scores.size(); ++i) {
        const double p = std::exp(scores[i] - log_z);
        const double coef = c * (p - (i == ex.target ? 1.0 : 0.0));
        if (coef == 0.0) continue;
        for (const auto& [id, v] : ex.candidates[i].entries()) lg.grad[id] += coef * v;
      }
    }
  }
  if (l2_lambda > 0.0) {
    lg.loss += 0.5 * l2_lambda * w.squaredNorm();
    if (with_grad) lg.grad += l2_lambda * w;
  }
  return lg;
}

void check_weights(const std::vector<CompiledExample>& data) {
  for (const auto& ex : data)
    if (ex.weight != 0.0 && ex.weight != 1.0)
      throw DomainError(fmt::format("example weight {} outside {{0, 1}}", ex.weight));
}

}  // namespace

LossGrad loss_and_gradient(const Eigen::VectorXd& w, const std::vector<CompiledExample>& data,
                           double l2_lambda) {
  check_weights(data);
  return weighted_loss(w, data, static_cast<double>(data.size()), l2_lambda);
}

double loss_value(const Eigen::VectorXd& w, const std::vector<CompiledExample>& data, double l2_lambda) {
  check_weights(data);
  return weighted_loss(w, data, static_cast<double>(data.size()), l2_lambda, false).loss;
}

LossGrad loss_and_gradient(const Policy& policy, const std::vector<CollectedExample>& data,
                           const TableSet& tables, double l2_lambda) {
  check_version(policy);
  return loss_and_gradient(policy.weights, compile_dataset(data, tables), l2_lambda);
}

double query_match_accuracy(const Policy& policy, const std::vector<CorpusItem>& items,
                            const TableSet& tables) {
  if (items.empty()) return 0.0;
  std::size_t hits = 0;
  for (const auto& item : items) {
    const Table& t = lookup(tables, item.table_id);
    if (trajectory_to_query(decode(policy, item.question, t)) == item.gold) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(items.size());
}

TrainResult train(const Policy& init, const std::vector<CompiledExample>& all, const TrainConfig& cfg,
                  const std::vector<CorpusItem>& validation, const TableSet& tables) {
  cfg.validate();
  check_version(init);
  check_weights(all);
  const auto n = static_cast<double>(
      std::count_if(all.begin(), all.end(), [](const CompiledExample& ex) { return ex.weight != 0.0; }));
  TrainResult result{init, 0, 0.0, 0.0};
  if (n == 0) return result;

  Eigen::VectorXd w = init.weights;
  Eigen::VectorXd velocity = Eigen::VectorXd::Zero(w.size());
  const bool early_stop = !validation.empty();
  Policy probe = init;
  double best_acc = -1.0;
  Eigen::VectorXd best_w = w;
  int stale = 0;
  int epoch = 0;
  double loss = 0.0;

  auto evaluate = [&] {
    probe.weights = w;
    const double acc = query_match_accuracy(probe, validation, tables);
    if (acc > best_acc) {
      best_acc = acc;
      best_w = w;
      stale = 0;
    } else {
      ++stale;
    }
  };

  if (early_stop) evaluate();
  for (epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    LossGrad lg = weighted_loss(w, all, n, cfg.l2_lambda);
    loss = lg.loss;
    if (!std::isfinite(loss) || !lg.grad.allFinite()) throw TrainingError("loss became non-finite", epoch);
    velocity = cfg.momentum * velocity - cfg.learning_rate * lg.grad;
    w += velocity;
    if (early_stop && epoch % cfg.eval_every == 0) {
      evaluate();
      if (stale >= cfg.early_stop_patience) break;
    }
  }
  result.epochs = std::min(epoch, cfg.max_epochs);
  if (early_stop) {
    if (result.epochs % cfg.eval_every != 0) evaluate();
    result.policy.weights = best_w;
    result.validation_accuracy = best_acc;
  } else {
    result.policy.weights = w;
  }
  result.final_loss = weighted_loss(result.policy.weights, all, n, cfg.l2_lambda).loss;
  return result;
}

TrainResult train(const Policy& init, const std::vector<CollectedExample>& data, const TableSet& tables,
                  const TrainConfig& cfg, const std::vector<CorpusItem>& validation) {
  return train(init, compile_dataset(data, tables), cfg, validation, tables);
}

// ---------------------------------------------------------------------------

json policy_to_json(const Policy& policy) {
  json w = json::array();
  for (Eigen::Index i = 0; i < policy.weights.size(); ++i)
    if (policy.weights[i] != 0.0) w.push_back(json::array({i, policy.weights[i]}));
  return {{"format", "neil-policy/1"},
          {"feature_space_version", fmt::format("{:016x}", policy.feature_space_version)},
          {"dim", policy.weights.size()},
          {"weights", w}};
}

Policy policy_from_json(const json& j) {
  if (j.value("format", "") != "neil-policy/1") throw ParseError("not a policy checkpoint");
  const auto version = std::stoull(j.at("feature_space_version").get<std::string>(), nullptr, 16);
  const auto dim = j.at("dim").get<std::int64_t>();
  if (version != FeatureSpace::version() || dim != FeatureSpace::kDim)
    throw VersionError(fmt::format("checkpoint feature space {:016x}/{} does not match {:016x}/{}", version,
                                   dim, FeatureSpace::version(), FeatureSpace::kDim));
  Policy p;
  for (const auto& e : j.at("weights")) {
    const auto id = e.at(0).get<std::int64_t>();
    if (id < 0 || id >= dim) throw ParseError("weight index out of range");
    p.weights[id] = e.at(1).get<double>();
  }
  return p;
}

void save_policy(const Policy& policy, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  out << policy_to_json(policy).dump() << '\n';
  if (!out) throw Error(fmt::format("cannot write {}", path.string()));
}

Policy load_policy(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(fmt::format("cannot open {}", path.string()));
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ParseError(fmt::format("{}: {}", path.string(), e.what()));
  }
  return policy_from_json(j);
}

}  // namespace neil
