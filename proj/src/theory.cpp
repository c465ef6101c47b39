#include "neil/theory.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "neil/error.hpp"

namespace neil::theory {

using nlohmann::json;

std::size_t TabularEnv::prefixes() const {
  std::size_t n = 0, pow = 1;
  for (int k = 0; k < T; ++k) {
    n += pow;
    pow *= static_cast<std::size_t>(num_actions);
  }
  return n;
}

std::size_t TabularEnv::num_states() const { return static_cast<std::size_t>(num_obs) * prefixes(); }

std::size_t TabularEnv::state_index(int o, const std::vector<int>& prefix) const {
  std::size_t offset = 0, pow = 1;
  for (std::size_t k = 0; k < prefix.size(); ++k) {
    offset += pow;
    pow *= static_cast<std::size_t>(num_actions);
  }
  std::size_t digits = 0;
  for (int a : prefix) digits = digits * static_cast<std::size_t>(num_actions) + static_cast<std::size_t>(a);
  return static_cast<std::size_t>(o) * prefixes() + offset + digits;
}

std::size_t TabularEnv::gold_state(std::size_t q, int t) const {
  const auto& g = gold[q];
  return state_index(obs[q], std::vector<int>(g.begin(), g.begin() + (t - 1)));
}

void TabularEnv::validate() const {
  if (T < 1) throw RangeError("T must be >= 1");
  if (num_actions < 1) throw RangeError("num_actions must be >= 1");
  if (num_obs < 1) throw RangeError("num_obs must be >= 1");
  if (gold.empty()) throw DomainError("environment has no questions");
  if (obs.size() != gold.size()) throw DomainError("one observation per question required");
  for (std::size_t q = 0; q < gold.size(); ++q) {
    if (obs[q] < 0 || obs[q] >= num_obs) throw DomainError("observation out of range");
    if (static_cast<int>(gold[q].size()) != T) throw DomainError("gold trajectories must have length T");
    for (int a : gold[q])
      if (a < 0 || a >= num_actions) throw DomainError("gold action out of range");
  }
  if (static_cast<double>(num_obs) * static_cast<double>(prefixes()) > 1e5)
    throw RangeError("environment exceeds 1e5 states");
}

TabularEnv random_env(Rng& rng, int num_questions, int T, int num_actions, bool shared_obs) {
  TabularEnv env;
  env.T = T;
  env.num_actions = num_actions;
  env.num_obs = shared_obs ? (num_questions + 1) / 2 : num_questions;
  for (int q = 0; q < num_questions; ++q) {
    env.obs.push_back(shared_obs ? static_cast<int>(rng.index(static_cast<std::size_t>(env.num_obs))) : q);
    std::vector<int> g(static_cast<std::size_t>(T));
    for (auto& a : g) a = static_cast<int>(rng.index(static_cast<std::size_t>(num_actions)));
    env.gold.push_back(std::move(g));
  }
  env.validate();
  return env;
}

TabularPolicy TabularPolicy::uniform(const TabularEnv& env) {
  const auto S = static_cast<Eigen::Index>(env.num_states());
  return {Eigen::MatrixXd::Constant(S, env.num_actions, 1.0 / env.num_actions)};
}

TabularPolicy TabularPolicy::expert(const TabularEnv& env) {
  TabularPolicy pi = uniform(env);
  const CountTable c = expert_counts(env);
  for (Eigen::Index s = 0; s < c.rows(); ++s) {
    const double tot = c.row(s).sum();
    if (tot > 0) pi.probs.row(s) = c.row(s) / tot;
  }
  return pi;
}

TabularPolicy TabularPolicy::random(const TabularEnv& env, Rng& rng, double alpha) {
  TabularPolicy pi = uniform(env);
  for (Eigen::Index s = 0; s < pi.probs.rows(); ++s) {
    double tot = 0.0;
    for (Eigen::Index a = 0; a < pi.probs.cols(); ++a) {
      // Gamma(alpha) via Marsaglia-Tsang with the alpha < 1 boost.
      const double k = alpha < 1.0 ? alpha + 1.0 : alpha;
      const double d = k - 1.0 / 3.0, c = 1.0 / std::sqrt(9.0 * d);
      double g;
      while (true) {
        double x, v;
        do {
          x = rng.normal();
          v = 1.0 + c * x;
        } while (v <= 0.0);
        v = v * v * v;
        const double u = rng.uniform();
        if (u < 1.0 - 0.0331 * x * x * x * x || std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) {
          g = d * v;
          break;
        }
      }
      if (alpha < 1.0) g *= std::pow(std::max(rng.uniform(), 1e-300), 1.0 / alpha);
      pi.probs(s, a) = std::max(g, 1e-300);
      tot += pi.probs(s, a);
    }
    pi.probs.row(s) /= tot;
  }
  return pi;
}

int TabularPolicy::argmax(std::size_t s) const {
  Eigen::Index best = 0;
  const auto row = probs.row(static_cast<Eigen::Index>(s));
  for (Eigen::Index a = 1; a < row.size(); ++a)
    if (row[a] > row[best]) best = a;
  return static_cast<int>(best);
}

namespace {

void check_t(const TabularEnv& env, int t) {
  if (t < 1 || t > env.T) throw RangeError(fmt::format("step {} outside 1..{}", t, env.T));
}

Eigen::Index failed_index(const TabularEnv& env, int t) {
  return static_cast<Eigen::Index>(env.num_states()) + (t - 1);
}

void check_row(const TabularPolicy& pi, std::size_t s) {
  const auto row = pi.probs.row(static_cast<Eigen::Index>(s));
  if (!(row.sum() > 0.0) || !row.allFinite())
    throw CoverageError(fmt::format("policy row of state {} is undefined", s));
}

void check_shape(const TabularEnv& env, const TabularPolicy& pi) {
  if (pi.probs.rows() != static_cast<Eigen::Index>(env.num_states()) || pi.probs.cols() != env.num_actions)
    throw DomainError("policy table does not match the environment");
}

// First step at which question q's mixture rollout leaves its gold path, or T + 1.
int failure_step(const TabularEnv& env, const TabularPolicy& pi, double mu, std::size_t q) {
  for (int t = 1; t <= env.T; ++t) {
    const auto s = env.gold_state(q, t);
    check_row(pi, s);
    const int a = pi.argmax(s);
    if (pi.probs(static_cast<Eigen::Index>(s), a) >= mu && a != env.gold[q][static_cast<std::size_t>(t - 1)])
      return t;
  }
  return env.T + 1;
}

StateDistribution empty_distribution(const TabularEnv& env, std::optional<int> t) {
  return {Eigen::VectorXd::Zero(static_cast<Eigen::Index>(env.num_states()) + env.T), t};
}

}  // namespace

StateDistribution expert_distribution(const TabularEnv& env, int t) {
  check_t(env, t);
  StateDistribution d = empty_distribution(env, t);
  const double w = 1.0 / static_cast<double>(env.num_questions());
  for (std::size_t q = 0; q < env.num_questions(); ++q) d.mass[static_cast<Eigen::Index>(env.gold_state(q, t))] += w;
  return d;
}

StateDistribution expert_average(const TabularEnv& env) {
  StateDistribution d = empty_distribution(env, std::nullopt);
  for (int t = 1; t <= env.T; ++t) d.mass += expert_distribution(env, t).mass / env.T;
  return d;
}

StateDistribution mixture_distribution(const TabularEnv& env, const TabularPolicy& pi, double mu, int t) {
  check_t(env, t);
  check_shape(env, pi);
  StateDistribution d = empty_distribution(env, t);
  const double w = 1.0 / static_cast<double>(env.num_questions());
  for (std::size_t q = 0; q < env.num_questions(); ++q) {
    // Leaving the gold path at step f puts the mass at failed from step f + 1 on.
    if (failure_step(env, pi, mu, q) < t)
      d.mass[failed_index(env, t)] += w;
    else
      d.mass[static_cast<Eigen::Index>(env.gold_state(q, t))] += w;
  }
  return d;
}

StateDistribution mixture_average(const TabularEnv& env, const TabularPolicy& pi, double mu) {
  StateDistribution d = empty_distribution(env, std::nullopt);
  for (int t = 1; t <= env.T; ++t) d.mass += mixture_distribution(env, pi, mu, t).mass / env.T;
  return d;
}

double l1_distance(const StateDistribution& a, const StateDistribution& b) {
  if (a.mass.size() != b.mass.size()) throw DomainError("distributions over different spaces");
  return (a.mass - b.mass).cwiseAbs().sum();
}

double cost_J(const TabularEnv& env, const TabularPolicy& pi) {
  check_shape(env, pi);
  double j = 0.0;
  const double w = 1.0 / static_cast<double>(env.num_questions());
  for (std::size_t q = 0; q < env.num_questions(); ++q) {
    for (int t = 1; t <= env.T; ++t) {
      const auto s = env.gold_state(q, t);
      check_row(pi, s);
      j += w * (1.0 - pi.probs(static_cast<Eigen::Index>(s), env.gold[q][static_cast<std::size_t>(t - 1)]));
    }
  }
  // T * (1/T) sum_t E_{d^t}[loss]
  return j;
}

TheoryDiagnostics diagnostics(const TabularEnv& env, const TabularPolicy& pi, double mu) {
  check_shape(env, pi);
  TheoryDiagnostics d;
  const double w = 1.0 / static_cast<double>(env.num_questions());
  double joint = 0.0;
  for (int t = 1; t <= env.T; ++t) {
    double beta = 0.0, wrong = 0.0;
    for (std::size_t q = 0; q < env.num_questions(); ++q) {
      const auto s = env.gold_state(q, t);
      check_row(pi, s);
      const int a = pi.argmax(s);
      if (pi.probs(static_cast<Eigen::Index>(s), a) < mu)
        beta += w;
      else if (a != env.gold[q][static_cast<std::size_t>(t - 1)])
        wrong += w;
    }
    d.beta_t.push_back(beta);
    d.e_t.push_back(wrong);
    d.eps_tilde_t.push_back(beta >= 1.0 ? 0.0 : wrong / (1.0 - beta));
  }
  for (int t = 0; t < env.T; ++t) {
    d.e += d.eps_tilde_t[t] * (1.0 - d.beta_t[t]) / env.T;
    d.beta += d.beta_t[t] / env.T;
  }
  d.eps_tilde = d.beta >= 1.0 ? 0.0 : d.e / (1.0 - d.beta);

  // Direct count of confident-and-wrong mass under the averaged distribution.
  for (std::size_t q = 0; q < env.num_questions(); ++q) {
    for (int t = 1; t <= env.T; ++t) {
      const auto s = env.gold_state(q, t);
      const int a = pi.argmax(s);
      const bool confident = pi.probs(static_cast<Eigen::Index>(s), a) >= mu;
      if (confident && a != env.gold[q][static_cast<std::size_t>(t - 1)]) joint += w / env.T;
    }
  }
  d.joint = joint;
  return d;
}

Lemma1Report verify_lemma1(const TabularEnv& env, const TabularPolicy& pi, double mu) {
  Lemma1Report r;
  r.lhs = l1_distance(mixture_average(env, pi, mu), expert_average(env));
  r.e = diagnostics(env, pi, mu).e;
  r.rhs = 2.0 * env.T * r.e;
  r.holds = r.lhs <= r.rhs + 1e-12 && (r.e > 0.0 || r.lhs == 0.0);
  return r;
}

// ---------------------------------------------------------------------------

CountTable expert_counts(const TabularEnv& env) {
  CountTable c = CountTable::Zero(static_cast<Eigen::Index>(env.num_states()), env.num_actions);
  const double w = 1.0 / (static_cast<double>(env.num_questions()) * env.T);
  for (std::size_t q = 0; q < env.num_questions(); ++q)
    for (int t = 1; t <= env.T; ++t)
      c(static_cast<Eigen::Index>(env.gold_state(q, t)), env.gold[q][static_cast<std::size_t>(t - 1)]) += w;
  return c;
}

namespace {

Eigen::VectorXd softmax_row(const Eigen::VectorXd& theta) {
  Eigen::VectorXd p = (theta.array() - theta.maxCoeff()).exp();
  return p / p.sum();
}

double row_objective(const Eigen::VectorXd& theta, const Eigen::VectorXd& c, double lambda) {
  const double m = theta.maxCoeff();
  const double log_z = m + std::log((theta.array() - m).exp().sum());
  return -(c.array() * (theta.array() - log_z)).sum() + 0.5 * lambda * theta.squaredNorm();
}

}  // namespace

FitResult fit_tabular(const CountTable& counts, const NewtonConfig& cfg) {
  const Eigen::Index S = counts.rows(), A = counts.cols();
  FitResult res;
  res.policy.probs = Eigen::MatrixXd::Constant(S, A, 1.0 / static_cast<double>(A));
  res.converged = true;
  double grad_sq = 0.0;
  for (Eigen::Index s = 0; s < S; ++s) {
    const Eigen::VectorXd c = counts.row(s).transpose();
    const double n = c.sum();
    if (n <= 0.0) continue;
    Eigen::VectorXd theta = Eigen::VectorXd::Zero(A);
    Eigen::VectorXd g;
    for (int it = 0;; ++it) {
      const Eigen::VectorXd p = softmax_row(theta);
      g = n * p - c + cfg.l2_lambda * theta;
      if (g.norm() < cfg.grad_tol * 1e-2 || it >= cfg.max_iterations) break;
      Eigen::MatrixXd H = n * Eigen::MatrixXd(p.asDiagonal()) - n * p * p.transpose();
      H.diagonal().array() += cfg.l2_lambda;
      const Eigen::VectorXd step = H.ldlt().solve(-g);
      // Backtracking keeps the iterates monotone on this strictly convex row.
      const double f0 = row_objective(theta, c, cfg.l2_lambda);
      double eta = 1.0;
      while (eta > 1e-12 && row_objective(theta + eta * step, c, cfg.l2_lambda) > f0 + 1e-4 * eta * g.dot(step))
        eta *= 0.5;
      if (eta <= 1e-12) break;
      theta += eta * step;
    }
    grad_sq += g.squaredNorm();
    res.objective += row_objective(theta, c, cfg.l2_lambda);
    res.policy.probs.row(s) = softmax_row(theta).transpose();
  }
  res.grad_norm = std::sqrt(grad_sq);
  res.converged = res.grad_norm < cfg.grad_tol;
  return res;
}

double expected_loss(const CountTable& counts, const TabularPolicy& pi) {
  return (counts.array() * (1.0 - pi.probs.array())).sum();
}

double loss_infimum(const CountTable& counts) {
  double v = 0.0;
  for (Eigen::Index s = 0; s < counts.rows(); ++s) v += counts.row(s).sum() - counts.row(s).maxCoeff();
  return v;
}

Theorem1Report verify_theorem1(const TabularEnv& env, const NewtonConfig& cfg) {
  env.validate();
  const CountTable c = expert_counts(env);
  const FitResult fit = fit_tabular(c, cfg);
  Theorem1Report r;
  r.epsilon_N = expected_loss(c, fit.policy);
  r.infimum = loss_infimum(c);
  r.J = cost_J(env, fit.policy);
  r.grad_norm = fit.grad_norm;
  r.converged = fit.converged;
  r.holds = r.converged && std::abs(r.J - env.T * r.epsilon_N) < 1e-3;
  return r;
}

// ---------------------------------------------------------------------------

TheoryReport track_regret(const TabularEnv& env, const TabularPolicy& init, double mu, int N,
                          const NewtonConfig& cfg) {
  env.validate();
  check_shape(env, init);
  if (N < 1) throw RangeError("N must be >= 1");
  TheoryReport rep;
  rep.N = N;
  rep.mu = mu;
  const auto S = static_cast<Eigen::Index>(env.num_states());
  const double w = 1.0 / (static_cast<double>(env.num_questions()) * env.T);

  CountTable data = CountTable::Zero(S, env.num_actions);
  // Gold-label mass of each iteration's distribution, for the loss of any policy.
  CountTable gold_mass = CountTable::Zero(S, env.num_actions);
  TabularPolicy pi = init;
  std::vector<TabularPolicy> iterates;

  for (int i = 1; i <= N; ++i) {
    iterates.push_back(pi);
    const auto diag = diagnostics(env, pi, mu);
    const auto l1 = verify_lemma1(env, pi, mu);
    rep.e_i.push_back(diag.e);
    rep.beta_i.push_back(diag.beta);
    rep.eps_tilde_i.push_back(diag.eps_tilde);
    rep.lemma1_lhs.push_back(l1.lhs);
    rep.lemma1_rhs.push_back(l1.rhs);
    rep.J_i.push_back(cost_J(env, pi));

    CountTable gm = CountTable::Zero(S, env.num_actions);
    double loss = 0.0, lmax = 0.0;
    for (std::size_t q = 0; q < env.num_questions(); ++q) {
      const int fail = failure_step(env, pi, mu, q);
      // Steps up to and including the failure are on the gold path.
      for (int t = 1; t <= std::min(fail, env.T); ++t) {
        const auto s = static_cast<Eigen::Index>(env.gold_state(q, t));
        const int gold = env.gold[q][static_cast<std::size_t>(t - 1)];
        const int a = pi.argmax(static_cast<std::size_t>(s));
        const bool confident = pi.probs(s, a) >= mu;
        data(s, confident ? a : gold) += w;
        gm(s, gold) += w;
        loss += w * (1.0 - pi.probs(s, gold));
        lmax = std::max(lmax, 1.0 - pi.probs(s, gold));
      }
    }
    gold_mass += gm;
    rep.loss_i.push_back(loss);
    rep.l_max = std::max(rep.l_max, lmax);

    // Best fixed tabular policy in hindsight on the first i losses.
    const double eps = loss_infimum(gold_mass) / i;
    const double avg_loss = std::accumulate(rep.loss_i.begin(), rep.loss_i.end(), 0.0) / i;
    rep.empirical_regret.push_back(avg_loss - eps);
    rep.epsilon_N = eps;

    pi = fit_tabular(data, cfg).policy;
  }

  rep.best_iterate = static_cast<int>(std::min_element(rep.J_i.begin(), rep.J_i.end()) - rep.J_i.begin()) + 1;
  rep.J = rep.J_i[static_cast<std::size_t>(rep.best_iterate - 1)];
  const double sum_e = std::accumulate(rep.e_i.begin(), rep.e_i.end(), 0.0);
  rep.bound = env.T * (rep.epsilon_N + 2.0 * env.T * rep.l_max / N * sum_e);
  rep.dominated = rep.J <= rep.bound + 1.0;
  return rep;
}

json to_json(const TheoryReport& r) {
  return {{"N", r.N},
          {"mu", r.mu},
          {"J", r.J},
          {"best_iterate", r.best_iterate},
          {"epsilon_N", r.epsilon_N},
          {"l_max", r.l_max},
          {"bound", r.bound},
          {"dominated", r.dominated},
          {"J_i", r.J_i},
          {"e_i", r.e_i},
          {"beta_i", r.beta_i},
          {"eps_tilde_i", r.eps_tilde_i},
          {"loss_i", r.loss_i},
          {"empirical_regret", r.empirical_regret},
          {"lemma1_lhs", r.lemma1_lhs},
          {"lemma1_rhs", r.lemma1_rhs}};
}

std::vector<double> parse_sweep(const std::string& spec) {
  const auto eq = spec.find('=');
  if (eq == std::string::npos || spec.substr(0, eq) != "mu")
    throw ConfigError(fmt::format("sweep '{}' must look like mu=start:step:end", spec));
  const std::string range = spec.substr(eq + 1);
  const auto c1 = range.find(':');
  const auto c2 = range.find(':', c1 == std::string::npos ? 0 : c1 + 1);
  if (c1 == std::string::npos || c2 == std::string::npos)
    throw ConfigError(fmt::format("sweep '{}' must look like mu=start:step:end", spec));
  double start, step, end;
  try {
    start = std::stod(range.substr(0, c1));
    step = std::stod(range.substr(c1 + 1, c2 - c1 - 1));
    end = std::stod(range.substr(c2 + 1));
  } catch (const std::exception&) {
    throw ConfigError(fmt::format("sweep '{}' has a non-numeric bound", spec));
  }
  if (!(step > 0) || end < start) throw RangeError("sweep needs step > 0 and end >= start");
  if (start < 0 || end > 1) throw RangeError("mu must lie in [0, 1]");
  const auto n = static_cast<long>(std::floor((end - start) / step + 1e-9)) + 1;
  std::vector<double> out;
  for (long i = 0; i < n; ++i) out.push_back(std::min(1.0, start + static_cast<double>(i) * step));
  return out;
}

std::vector<SweepRow> run_sweep(const std::vector<double>& mus, const SweepConfig& cfg, std::uint64_t seed,
                                std::vector<TheoryReport>* reports) {
  Rng rng(seed);
  const TabularEnv env = random_env(rng, cfg.questions, cfg.T, cfg.num_actions, cfg.shared_obs);
  const TabularPolicy init = TabularPolicy::random(env, rng, cfg.dirichlet_alpha);
  std::vector<SweepRow> rows;
  for (double mu : mus) {
    const TheoryReport r = track_regret(env, init, mu, cfg.N);
    auto mean = [](const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / v.size(); };
    rows.push_back({mu, mean(r.e_i), mean(r.beta_i), mean(r.eps_tilde_i), mean(r.lemma1_lhs), mean(r.lemma1_rhs),
                    r.J, r.bound});
    if (reports) reports->push_back(r);
  }
  return rows;
}

void write_sweep_csv(const std::vector<SweepRow>& rows, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error(fmt::format("cannot write {}", path));
  out << "mu,e_i,beta_i,eps_tilde_i,lemma1_lhs,lemma1_rhs,J,bound\n";
  for (const auto& r : rows)
    out << fmt::format("{:.6f},{:.9f},{:.9f},{:.9f},{:.9f},{:.9f},{:.9f},{:.9f}\n", r.mu, r.e_i, r.beta_i,
                       r.eps_tilde_i, r.lemma1_lhs, r.lemma1_rhs, r.J, r.bound);
}

}  // namespace neil::theory
