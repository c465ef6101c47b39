#include <doctest.h>

#include <cmath>

#include <nlohmann/json.hpp>

#include "neil/error.hpp"
#include "neil/policy.hpp"
#include "support.hpp"

using namespace neil;

namespace {

// Small random examples over feature ids below `span`.
std::vector<CompiledExample> random_examples(Rng& rng, std::size_t n, std::uint32_t span, bool zero_weights) {
  std::vector<CompiledExample> out;
  for (std::size_t i = 0; i < n; ++i) {
    CompiledExample ex;
    const std::size_t k = 2 + rng.index(4);
    for (std::size_t c = 0; c < k; ++c) {
      std::vector<FeatureVector::Entry> raw;
      for (std::size_t f = 0; f < 3 + rng.index(4); ++f)
        raw.emplace_back(static_cast<std::uint32_t>(rng.index(span)), rng.uniform(-1.0, 1.0));
      ex.candidates.emplace_back(std::move(raw));
    }
    ex.target = rng.index(k);
    ex.weight = zero_weights && rng.bernoulli(0.3) ? 0.0 : 1.0;
    out.push_back(std::move(ex));
  }
  return out;
}

// Loss written out directly from the definition.
double direct_loss(const Eigen::VectorXd& w, const std::vector<CompiledExample>& data, double l2) {
  double s = 0.0;
  for (const auto& ex : data) {
    double z = 0.0;
    for (const auto& c : ex.candidates) z += std::exp(c.dot(w));
    s += ex.weight * -std::log(std::exp(ex.candidates[ex.target].dot(w)) / z);
  }
  return s / static_cast<double>(data.size()) + 0.5 * l2 * w.squaredNorm();
}

}  // namespace

TEST_CASE("softmax") {
  const std::vector<double> u = softmax(std::vector<double>{0, 0, 0, 0});
  for (double p : u) CHECK(p == doctest::Approx(0.25).epsilon(1e-15));
  CHECK(softmax(std::vector<double>{3.7}) == std::vector<double>{1.0});
  const auto two = softmax(std::vector<double>{std::log(2.0), 0.0});
  CHECK(std::abs(two[0] - 2.0 / 3.0) < 1e-12);
  CHECK(std::abs(two[1] - 1.0 / 3.0) < 1e-12);

  Rng rng(4);
  for (int i = 0; i < 100; ++i) {
    std::vector<double> s(1 + rng.index(20));
    for (auto& x : s) x = rng.uniform(-50, 50);
    const auto p = softmax(s);
    double total = 0.0;
    for (double x : p) {
      CHECK(x > 0.0);
      total += x;
    }
    CHECK(std::abs(total - 1.0) < 1e-12);
    auto shifted = s;
    for (auto& x : shifted) x += 1234.5;
    const auto q = softmax(shifted);
    for (std::size_t k = 0; k < p.size(); ++k) CHECK(std::abs(p[k] - q[k]) < 1e-12);
  }
}

TEST_CASE("zero policy is uniform over the candidates") {
  const Table t = test::roster_table();
  const CorpusItem item = test::roster_item();
  const State s{item.question, t.id, {}};
  const auto dist = action_distribution(Policy::zero(), s, t);
  REQUIRE(dist.size() == t.columns.size());
  for (const auto& sa : dist) CHECK(std::abs(sa.prob - 1.0 / t.columns.size()) < 1e-15);
}

TEST_CASE("greedy decoding") {
  const Table t = test::roster_table();
  const TableSet ts = test::single(t);
  const CorpusItem item = test::roster_item();

  SUBCASE("weights fitted to the gold steps decode the gold query") {
    const Policy p = test::gold_policy({item}, ts);
    const Trajectory tr = decode(p, item.question, t);
    CHECK(tr.complete);
    CHECK(trajectory_to_query(tr) == item.gold);
    CHECK(decode(p, item.question, t).actions == tr.actions);
  }
  SUBCASE("zero policy on a one-column table takes the first candidate everywhere") {
    Table one;
    one.id = "one";
    one.columns = {{"name", ColumnKind::Text, {}}};
    one.rows = {{std::string("ann")}, {std::string("bob")}};
    test::fill_vocabulary(one);
    const Tokens q = tokenize("list the name ann");
    const Trajectory tr = decode(Policy::zero(), q, one);
    // SelectCol name, NONE, WhereCol name, EQ, first span "list", then EndWhere (no columns left)
    CHECK(trajectory_to_query(tr) ==
          SqlQuery{"name", Agg::None, {{"name", Op::Eq, std::string("list")}}});
    CHECK(decode(Policy::zero(), q, one).actions == tr.actions);
  }
}

TEST_CASE("sequence probability") {
  Table one;
  one.id = "one";
  one.columns = {{"name", ColumnKind::Text, {}}};
  one.rows = {{std::string("ann")}};
  test::fill_vocabulary(one);
  Policy zero = Policy::zero();
  // every step of this trajectory has a single candidate except Agg (2), WhereColOrEnd (2), Val (1)
  const Tokens q = tokenize("ann");
  const Trajectory tr = query_to_trajectory(SqlQuery{"name", Agg::None, {{"name", Op::Eq, std::string("ann")}}}, q,
                                            one.id);
  CHECK(std::abs(sequence_probability(zero, tr, one) - 0.25) < 1e-15);
  const Trajectory all_single = query_to_trajectory(SqlQuery{"name", Agg::None, {}}, q, one.id);
  CHECK(std::abs(sequence_probability(zero, all_single, one) - 0.25) < 1e-15);

  Rng rng(12);
  const Table t = test::roster_table();
  const CorpusItem item = test::roster_item();
  for (int i = 0; i < 20; ++i) {
    Policy p = Policy::zero();
    for (int k = 0; k < 2000; ++k) p.weights[static_cast<Eigen::Index>(rng.index(FeatureSpace::kDim))] = rng.normal();
    const Trajectory g = query_to_trajectory(item.gold, item.question, t.id);
    double prod = 1.0;
    for (std::size_t s = 0; s < g.states.size(); ++s) {
      const auto dist = action_distribution(p, g.states[s], t);
      for (const auto& sa : dist)
        if (sa.action == g.actions[s]) prod *= sa.prob;
    }
    CHECK(std::abs(sequence_probability(p, g, t) - prod) < 1e-12);
    CHECK(std::abs(std::exp(sequence_log_probability(p, g, t)) - sequence_probability(p, g, t)) < 1e-12);
  }
}

TEST_CASE("loss definition") {
  Rng rng(1);
  auto data = random_examples(rng, 5, 40, false);
  for (auto& ex : data) ex.weight = 0.0;
  Eigen::VectorXd w = Eigen::VectorXd::Zero(FeatureSpace::kDim);
  for (int i = 0; i < 40; ++i) w[i] = rng.normal();
  auto lg = loss_and_gradient(w, data, 0.0);
  CHECK(lg.loss == 0.0);
  CHECK(lg.grad.norm() == 0.0);

  CompiledExample half;
  half.candidates = {FeatureVector({{1, 1.0}}), FeatureVector({{2, 1.0}})};
  half.target = 0;
  lg = loss_and_gradient(Eigen::VectorXd::Zero(FeatureSpace::kDim), {half}, 0.0);
  CHECK(std::abs(lg.loss - std::log(2.0)) < 1e-15);

  for (int i = 0; i < 10; ++i) {
    const auto d = random_examples(rng, 6, 40, true);
    const double l2 = rng.uniform(0, 0.1);
    CHECK(std::abs(loss_and_gradient(w, d, l2).loss - direct_loss(w, d, l2)) < 1e-12);
  }
}

TEST_CASE("gradient matches central differences on 20 instances") {
  Rng rng(2024);
  const double h = 1e-5;
  for (int inst = 0; inst < 20; ++inst) {
    const auto data = random_examples(rng, 4 + rng.index(8), 30, true);
    const double l2 = rng.uniform(0.0, 0.05);
    Eigen::VectorXd w = Eigen::VectorXd::Zero(FeatureSpace::kDim);
    for (int i = 0; i < 30; ++i) w[i] = rng.normal();
    const Eigen::VectorXd g = loss_and_gradient(w, data, l2).grad;
    CHECK(loss_value(w, data, l2) == doctest::Approx(loss_and_gradient(w, data, l2).loss).epsilon(1e-14));
    Eigen::VectorXd fd(40), an(40);
    Eigen::VectorXd wp = w;
    for (int i = 0; i < 40; ++i) {
      const Eigen::Index id = i < 30 ? i : 1000 + i;
      wp[id] = w[id] + h;
      const double up = loss_value(wp, data, l2);
      wp[id] = w[id] - h;
      const double down = loss_value(wp, data, l2);
      wp[id] = w[id];
      fd[i] = (up - down) / (2 * h);
      an[i] = g[id];
    }
    const double rel = (fd - an).norm() / std::max(an.norm(), 1e-12);
    INFO("instance " << inst << " rel " << rel);
    CHECK(rel < 1e-5);
  }
}

TEST_CASE("training") {
  Rng rng(77);
  TrainConfig cfg;
  cfg.max_epochs = 300;

  SUBCASE("only zero weights returns the initialization") {
    auto data = random_examples(rng, 10, 50, false);
    for (auto& ex : data) ex.weight = 0.0;
    Policy init = Policy::zero();
    init.weights[3] = 0.7;
    CHECK(train(init, data, cfg, {}, {}).policy == init);
  }
  SUBCASE("weights outside {0, 1} are rejected") {
    auto data = random_examples(rng, 3, 50, false);
    data[1].weight = 0.5;
    CHECK_THROWS_AS(train(Policy::zero(), data, cfg, {}, {}), DomainError);
  }
  SUBCASE("two initializations reach the same loss") {
    const auto data = random_examples(rng, 30, 60, true);
    TrainConfig c = cfg;
    c.l2_lambda = 1e-2;
    c.max_epochs = 2000;
    Policy a = Policy::zero(), b = Policy::zero();
    for (int i = 0; i < 60; ++i) b.weights[i] = rng.normal() * 3.0;
    const double la = train(a, data, c, {}, {}).final_loss;
    const double lb = train(b, data, c, {}, {}).final_loss;
    CHECK(std::abs(la - lb) < 1e-4);
  }
  SUBCASE("separable data is fit exactly") {
    std::vector<CompiledExample> data;
    for (std::uint32_t i = 0; i < 20; ++i) {
      CompiledExample ex;
      const std::size_t k = 2 + i % 3;
      for (std::size_t c = 0; c < k; ++c)
        ex.candidates.emplace_back(std::vector<FeatureVector::Entry>{{static_cast<std::uint32_t>(c == i % k ? 7 : 8), 1.0},
                                                                     {100 + i * 5 + static_cast<std::uint32_t>(c), 0.1}});
      ex.target = i % k;
      data.push_back(std::move(ex));
    }
    const Policy p = train(Policy::zero(), data, cfg, {}, {}).policy;
    for (const auto& ex : data) {
      std::size_t best = 0;
      for (std::size_t c = 1; c < ex.candidates.size(); ++c)
        if (ex.candidates[c].dot(p.weights) > ex.candidates[best].dot(p.weights)) best = c;
      CHECK(best == ex.target);
    }
  }
  SUBCASE("training is deterministic") {
    const auto data = random_examples(rng, 15, 50, true);
    CHECK(train(Policy::zero(), data, cfg, {}, {}).policy == train(Policy::zero(), data, cfg, {}, {}).policy);
  }
}

TEST_CASE("removing zero-weight examples leaves training unchanged") {
  Rng rng(5);
  for (int i = 0; i < 5; ++i) {
    const auto data = random_examples(rng, 25, 60, true);
    std::vector<CompiledExample> kept;
    for (const auto& ex : data)
      if (ex.weight != 0.0) kept.push_back(ex);
    TrainConfig cfg;
    cfg.max_epochs = 100;
    const Policy a = train(Policy::zero(), data, cfg, {}, {}).policy;
    const Policy b = train(Policy::zero(), kept, cfg, {}, {}).policy;
    CHECK((a.weights - b.weights).lpNorm<Eigen::Infinity>() <= 1e-9);
  }
}

TEST_CASE("policy checkpoints") {
  const auto dir = test::scratch_dir("policy");
  Rng rng(3);
  Policy p = Policy::zero();
  for (int i = 0; i < 500; ++i) p.weights[static_cast<Eigen::Index>(rng.index(FeatureSpace::kDim))] = rng.normal();
  save_policy(p, dir / "p.json");
  CHECK(load_policy(dir / "p.json") == p);
  auto j = policy_to_json(p);
  j["feature_space_version"] = "0000000000000001";
  CHECK_THROWS_AS(policy_from_json(j), VersionError);
  CHECK_THROWS_AS(policy_from_json(nlohmann::json{{"format", "other"}}), ParseError);
}

TEST_CASE("training config validation") {
  TrainConfig c;
  c.learning_rate = -1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  TrainConfig d;
  d.max_epochs = -1;
  CHECK_THROWS_AS(d.validate(), ConfigError);
}
