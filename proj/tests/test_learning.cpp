#include <doctest.h>

#include <fstream>
#include <map>

#include <nlohmann/json.hpp>

#include "neil/error.hpp"
#include "neil/learning.hpp"
#include "support.hpp"

using namespace neil;

namespace {

ExperimentConfig small_config() {
  ExperimentConfig c;
  c.experiment_id = "small";
  c.gen.num_tables = 20;
  c.gen.num_items = 600;
  c.corpus_seed = 5;
  c.init_fraction = 0.2;
  c.validation_size = 100;
  c.test_size = 100;
  c.learn.m = 40;
  c.learn.iterations = 3;
  c.learn.train.max_epochs = 60;
  c.seeds = {1};
  return c;
}

using Pair = std::pair<std::string, std::string>;

std::multiset<Pair> state_actions(const std::vector<CollectedExample>& data) {
  std::multiset<Pair> out;
  for (const auto& ex : data) out.insert({state_to_json(ex.state).dump(), action_to_json(ex.action).dump()});
  return out;
}

}  // namespace

TEST_CASE("system names") {
  for (auto s : kAllSystems) CHECK(parse_system(to_string(s)) == s);
  CHECK(parse_system("NEIL_STAR") == SystemKind::NeilStar);
  CHECK(parse_system_list("neil,full-expert") == std::vector<SystemKind>{SystemKind::Neil, SystemKind::FullExpert});
  CHECK_THROWS_AS(parse_system("oracle"), ConfigError);
  CHECK(uses_compromise_metric(SystemKind::BinaryUser));
  CHECK_FALSE(uses_compromise_metric(SystemKind::Neil));
}

TEST_CASE("annotation counting") {
  std::vector<QuestionRecord> batch(3);
  batch[0].gold_length = 5;
  batch[1].gold_length = 6;
  batch[2].gold_length = 8;
  batch[0].interactions = 2;
  batch[2].interactions = 1;
  batch[1].expert_annotated = true;
  CHECK(count_annotations(SystemKind::FullExpert, batch) == 19);
  CHECK(count_annotations(SystemKind::BinaryUser, batch) == 19);
  CHECK(count_annotations(SystemKind::BinaryUserExpert, batch) == 25);
  CHECK(count_annotations(SystemKind::Neil, batch) == 3);
  CHECK(count_annotations(SystemKind::NeilStar, batch) == 3);
  CHECK(count_annotations(SystemKind::SelfTrain, batch) == 0);

  ParseOutcome po;
  po.interaction_count = 4;
  CHECK(count_annotations(SystemKind::Neil, po) == 4);
  CHECK_THROWS_AS(count_annotations(SystemKind::FullExpert, po), DomainError);
}

TEST_CASE("the running example costs the full expert six annotations") {
  const Table t = test::roster_table();
  const auto res = collect(SystemKind::FullExpert, Policy::zero(), {test::roster_item()}, test::single(t), {}, 1);
  CHECK(count_annotations(SystemKind::FullExpert, res.records) == 6);
  CHECK(res.examples.size() == 6);
  for (const auto& ex : res.examples) CHECK(ex.provenance == Provenance::DemonstratedValid);
}

TEST_CASE("collection per system") {
  const Corpus c = generate_corpus(small_config().gen, 9);
  const std::vector<CorpusItem> batch(c.items.begin(), c.items.begin() + 30);
  std::vector<CorpusItem> train_items(c.items.begin() + 30, c.items.begin() + 130);
  const Policy p = train(Policy::zero(), compile_dataset(expand_init(train_items), c.tables),
                         [] {
                           TrainConfig tc;
                           tc.max_epochs = 40;
                           return tc;
                         }(),
                         {}, {})
                       .policy;

  SUBCASE("neil-star fixes exactly the wrong argmax steps") {
    const auto res = collect(SystemKind::NeilStar, p, batch, c.tables, {}, 1);
    long mismatches = 0;
    for (const auto& item : batch) {
      const Table& t = lookup(c.tables, item.table_id);
      const Trajectory tr = query_to_trajectory(item.gold, item.question, item.table_id);
      for (std::size_t i = 0; i < tr.actions.size(); ++i) {
        // argmax by direct scoring
        const CandidateSet cs = featurize(tr.states[i], t, QuestionAnalysis(item.question, t));
        std::size_t best = 0;
        for (std::size_t k = 1; k < cs.actions.size(); ++k)
          if (cs.features[k].dot(p.weights) > cs.features[best].dot(p.weights)) best = k;
        if (!(cs.actions[best] == tr.actions[i])) ++mismatches;
      }
    }
    CHECK(count_annotations(SystemKind::NeilStar, res.records) == mismatches);
    CHECK(mismatches > 0);
    const auto fe = collect(SystemKind::FullExpert, p, batch, c.tables, {}, 1);
    CHECK(state_actions(res.examples) == state_actions(fe.examples));
  }
  SUBCASE("self-training asks nobody") {
    const auto res = collect(SystemKind::SelfTrain, p, batch, c.tables, {}, 1);
    CHECK(count_annotations(SystemKind::SelfTrain, res.records) == 0);
    for (const auto& ex : res.examples) CHECK(ex.provenance == Provenance::Confident);
  }
  SUBCASE("binary user keeps only result-correct parses") {
    const auto res = collect(SystemKind::BinaryUser, p, batch, c.tables, {}, 1);
    for (std::size_t j = 0; j < batch.size(); ++j) {
      const Table& t = lookup(c.tables, batch[j].table_id);
      const bool ok = results_equal(execute(trajectory_to_query(decode(p, batch[j].question, t)), t),
                                    execute(batch[j].gold, t));
      CHECK(res.records[j].kept == ok);
    }
    for (const auto& ex : res.examples) CHECK(ex.weight == 1.0);
  }
  SUBCASE("question ids") {
    const auto res = collect(SystemKind::Neil, p, batch, c.tables, {}, 2, 100);
    CHECK(res.records.front().question_id == "q100");
    for (const auto& ex : res.examples) CHECK(ex.iteration == 2);
  }
}

TEST_CASE("a confident correct policy needs no annotations") {
  const Corpus c = generate_corpus(small_config().gen, 3);
  const std::vector<CorpusItem> items(c.items.begin(), c.items.begin() + 5);
  const Policy p = test::gold_policy(items, c.tables);
  const auto res = collect(SystemKind::Neil, p, items, c.tables, {0.95, 3}, 1);
  CHECK(count_annotations(SystemKind::Neil, res.records) == 0);
  const Diagnostics d = gold_state_diagnostics(p, items, c.tables, 0.95);
  CHECK(d.e == 0.0);
  CHECK(d.beta == 0.0);
}

TEST_CASE("diagnostics of the zero policy") {
  const Table t = test::roster_table();
  const Diagnostics d = gold_state_diagnostics(Policy::zero(), {test::roster_item()}, test::single(t), 0.95);
  // the Op step has a single candidate; every other gold step is uniform over several
  CHECK(d.beta == doctest::Approx(5.0 / 6.0));
  CHECK(d.e == 0.0);
  CHECK(d.eps_tilde == 0.0);
}

TEST_CASE("experiment config json") {
  ExperimentConfig c = small_config();
  c.systems = {SystemKind::Neil, SystemKind::SelfTrain};
  nlohmann::json j = c;
  const ExperimentConfig back = j.get<ExperimentConfig>();
  CHECK(nlohmann::json(back) == j);
  j["bogus"] = 1;
  CHECK_THROWS_AS(j.get<ExperimentConfig>(), ConfigError);

  const auto dir = test::scratch_dir("learn-config");
  std::ofstream(dir / "bad.json") << R"({"m": 0})";
  CHECK_THROWS_AS(load_experiment_config(dir / "bad.json"), ConfigError);
  std::ofstream(dir / "frac.json") << R"({"init_fraction": 1.5})";
  CHECK_THROWS_AS(load_experiment_config(dir / "frac.json"), RangeError);
  CHECK_THROWS_AS(load_experiment_config(dir / "missing.json"), ConfigError);
}

TEST_CASE("report csv round trip") {
  std::vector<IterationReport> reps(3);
  for (int i = 0; i < 3; ++i) {
    reps[i].system = i == 2 ? SystemKind::SelfTrain : SystemKind::Neil;
    reps[i].seed = 7;
    reps[i].iteration = i;
    reps[i].questions_seen = 40u * static_cast<std::size_t>(i);
    reps[i].annotations_cum = 11 * i;
    reps[i].test_accuracy = 0.25 + 0.125 * i;
    reps[i].validation_accuracy = 0.5;
    if (i > 0) reps[i].diagnostics = Diagnostics{0.125, 0.5, 0.25};
  }
  reps[2].failed = true;
  const auto dir = test::scratch_dir("learn-csv");
  write_report_csv(reps, dir / "report.csv");
  const auto back = read_report_csv(dir / "report.csv");
  REQUIRE(back.size() == 3);
  for (int i = 0; i < 3; ++i) {
    CHECK(back[i].system == reps[i].system);
    CHECK(back[i].iteration == reps[i].iteration);
    CHECK(back[i].annotations_cum == reps[i].annotations_cum);
    CHECK(back[i].test_accuracy == reps[i].test_accuracy);
    CHECK(back[i].diagnostics.has_value() == reps[i].diagnostics.has_value());
    CHECK(back[i].failed == reps[i].failed);
  }
  CHECK(back[1].diagnostics->e == 0.125);

  const auto mean = average_over_seeds(reps);
  CHECK(mean.size() == 2);  // the failed row is dropped
  write_mean_csv(mean, dir / "mean.csv");
  const auto mb = read_mean_csv(dir / "mean.csv");
  REQUIRE(mb.size() == 2);
  CHECK(mb[1].annotations_cum == 11.0);
}

TEST_CASE("seed averaging") {
  std::vector<IterationReport> reps;
  for (std::uint64_t seed : {1, 2})
    for (int i = 0; i < 2; ++i) {
      IterationReport r;
      r.seed = seed;
      r.iteration = i;
      r.test_accuracy = seed == 1 ? 0.2 : 0.4;
      r.annotations_cum = static_cast<long>(seed) * 10 * i;
      reps.push_back(r);
    }
  const auto m = average_over_seeds(reps);
  REQUIRE(m.size() == 2);
  CHECK(m[0].seeds == 2);
  CHECK(m[0].test_accuracy == doctest::Approx(0.3));
  CHECK(m[1].annotations_cum == doctest::Approx(15.0));
}

TEST_CASE("small experiment") {
  ExperimentConfig c = small_config();
  c.systems = {SystemKind::Neil, SystemKind::NeilStar, SystemKind::FullExpert};
  std::map<SystemKind, std::vector<std::multiset<Pair>>> sets;
  ExperimentHooks hooks;
  hooks.on_iteration = [&](const RunState& st, const IterationReport&) {
    sets[st.system].push_back(state_actions(st.aggregated));
  };
  const auto dir = test::scratch_dir("learn-exp");
  const auto r1 = run_experiment(c, dir / "a", hooks);
  CHECK(r1.reports.size() == 3u * 4u);

  {  // neil-star and the full expert aggregate the same pairs
    REQUIRE(sets[SystemKind::NeilStar].size() == 4);
    for (std::size_t i = 0; i < 4; ++i) CHECK(sets[SystemKind::NeilStar][i] == sets[SystemKind::FullExpert][i]);
  }
  {  // iteration 0 is shared and above the zero policy
    std::set<double> acc0;
    for (const auto& r : r1.reports)
      if (r.iteration == 0) acc0.insert(r.test_accuracy);
    CHECK(acc0.size() == 1);
    CHECK(*acc0.begin() > 0.2);
  }
  {  // batches line up across systems
    std::map<int, std::set<std::string>> hashes;
    for (const auto& r : r1.reports)
      if (r.iteration > 0) hashes[r.iteration].insert(r.batch_hash);
    for (const auto& [it, h] : hashes) CHECK(h.size() == 1);
  }
  {  // annotation ordering
    std::map<SystemKind, long> final_ann;
    for (const auto& r : r1.reports) final_ann[r.system] = r.annotations_cum;
    CHECK(final_ann[SystemKind::NeilStar] < final_ann[SystemKind::Neil]);
    CHECK(final_ann[SystemKind::Neil] < final_ann[SystemKind::FullExpert]);
  }
  {  // pooled diagnostics keep the identity
    int seen = 0;
    for (const auto& r : r1.reports) {
      if (!r.diagnostics) continue;
      ++seen;
      const Diagnostics& d = *r.diagnostics;
      CHECK(std::abs(d.e - d.eps_tilde * (1.0 - d.beta)) <= 1e-12);
    }
    CHECK(seen == 3 * 3);
  }
  {  // reruns are byte-identical
    run_experiment(c, dir / "b");
    auto slurp = [](const std::filesystem::path& p) {
      std::ifstream in(p);
      return std::string(std::istreambuf_iterator<char>(in), {});
    };
    CHECK(slurp(dir / "a" / "report.csv") == slurp(dir / "b" / "report.csv"));
    CHECK(std::filesystem::exists(dir / "a" / "checkpoints" / "neil" / "seed-1" / "best.json"));
  }
}

TEST_CASE("threads do not change results") {
  ExperimentConfig c = small_config();
  c.learn.iterations = 1;
  c.systems = {SystemKind::Neil, SystemKind::SelfTrain};
  const auto a = run_experiment(c, {});
  c.jobs = 2;
  const auto b = run_experiment(c, {});
  REQUIRE(a.reports.size() == b.reports.size());
  for (std::size_t i = 0; i < a.reports.size(); ++i) {
    CHECK(a.reports[i].test_accuracy == b.reports[i].test_accuracy);
    CHECK(a.reports[i].annotations_cum == b.reports[i].annotations_cum);
  }
}
