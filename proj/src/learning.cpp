#include "neil/learning.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <future>
#include <map>
#include <mutex>
#include <sstream>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "neil/error.hpp"
#include "neil/features.hpp"

namespace neil {

using nlohmann::json;

std::string_view to_string(SystemKind s) {
  switch (s) {
    case SystemKind::Neil: return "neil";
    case SystemKind::NeilStar: return "neil-star";
    case SystemKind::FullExpert: return "full-expert";
    case SystemKind::BinaryUser: return "binary-user";
    case SystemKind::BinaryUserExpert: return "binary-user-expert";
    case SystemKind::SelfTrain: return "self-train";
  }
  return "?";
}

SystemKind parse_system(std::string_view s) {
  std::string norm(s);
  for (auto& c : norm) c = c == '_' ? '-' : static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  for (auto k : kAllSystems)
    if (to_string(k) == norm) return k;
  throw ConfigError(fmt::format("unknown system '{}'", s));
}

std::vector<SystemKind> parse_system_list(std::string_view csv) {
  std::vector<SystemKind> out;
  std::size_t pos = 0;
  while (pos <= csv.size()) {
    const auto end = std::min(csv.find(',', pos), csv.size());
    const auto item = csv.substr(pos, end - pos);
    if (!item.empty()) {
      const auto k = parse_system(item);
      if (std::find(out.begin(), out.end(), k) == out.end()) out.push_back(k);
    }
    pos = end + 1;
  }
  if (out.empty()) throw ConfigError("empty system list");
  return out;
}

bool uses_compromise_metric(SystemKind s) {
  return s == SystemKind::BinaryUser || s == SystemKind::BinaryUserExpert;
}

void LearnConfig::validate() const {
  interaction.validate();
  train.validate();
  if (m < 1) throw ConfigError("m must be >= 1");
  if (iterations < 0) throw ConfigError("iterations must be >= 0");
}

long count_annotations(SystemKind system, const ParseOutcome& outcome) {
  if (system != SystemKind::Neil && system != SystemKind::NeilStar)
    throw DomainError("parse outcomes are only counted for interactive systems");
  return static_cast<long>(outcome.interaction_count);
}

long count_annotations(SystemKind system, const std::vector<QuestionRecord>& batch) {
  long n = 0;
  for (const auto& r : batch) {
    switch (system) {
      case SystemKind::Neil:
      case SystemKind::NeilStar: n += static_cast<long>(r.interactions); break;
      case SystemKind::FullExpert:
      case SystemKind::BinaryUser: n += static_cast<long>(r.gold_length); break;
      case SystemKind::BinaryUserExpert:
        n += static_cast<long>(r.gold_length) * (r.expert_annotated ? 2 : 1);
        break;
      case SystemKind::SelfTrain: break;
    }
  }
  return n;
}

std::vector<CollectedExample> expert_examples(const CorpusItem& item, int iteration, const std::string& question_id) {
  const Trajectory tr = query_to_trajectory(item.gold, item.question, item.table_id);
  std::vector<CollectedExample> out;
  out.reserve(tr.actions.size());
  for (std::size_t t = 0; t < tr.actions.size(); ++t)
    out.push_back({tr.states[t], tr.actions[t], 1.0, Provenance::DemonstratedValid, iteration, question_id});
  return out;
}

namespace {

std::vector<CollectedExample> own_examples(const Trajectory& tr, int iteration, const std::string& question_id) {
  std::vector<CollectedExample> out;
  out.reserve(tr.actions.size());
  for (std::size_t t = 0; t < tr.actions.size(); ++t)
    out.push_back({tr.states[t], tr.actions[t], 1.0, Provenance::Confident, iteration, question_id});
  return out;
}

// Oracle detector: every wrong prediction is replaced by the gold action.
std::pair<std::vector<CollectedExample>, std::size_t> neil_star_pass(const Policy& policy, const CorpusItem& item,
                                                                      const Table& table, int iteration,
                                                                      const std::string& qid) {
  const auto gold = query_actions(item.gold);
  const QuestionAnalysis qa(item.question, table);
  State s{item.question, item.table_id, {}};
  std::vector<CollectedExample> out;
  std::size_t fixes = 0;
  for (const auto& want : gold) {
    const auto dist = action_distribution(policy, s, table, qa);
    const Action& predicted = dist[argmax(dist)].action;
    if (predicted == want) {
      out.push_back({s, want, 1.0, Provenance::Confident, iteration, qid});
    } else {
      ++fixes;
      out.push_back({s, want, 1.0, Provenance::DemonstratedValid, iteration, qid});
    }
    s.prefix.push_back(want);
  }
  return {std::move(out), fixes};
}

}  // namespace

CollectResult collect(SystemKind system, const Policy& policy, const std::vector<CorpusItem>& batch,
                      const TableSet& tables, const InteractionConfig& cfg, int iteration, std::size_t first_index) {
  CollectResult res;
  for (std::size_t j = 0; j < batch.size(); ++j) {
    const CorpusItem& item = batch[j];
    const Table& table = lookup(tables, item.table_id);
    QuestionRecord rec;
    rec.question_id = fmt::format("q{}", first_index + j);
    rec.gold_length = query_actions(item.gold).size();
    std::vector<CollectedExample> ex;
    switch (system) {
      case SystemKind::Neil: {
        SimulatedUser user(item.gold);
        ParseOutcome out = parse_and_collect(cfg, item, table, policy, user, rec.question_id, iteration);
        rec.interactions = out.interaction_count;
        ex = std::move(out.examples);
        break;
      }
      case SystemKind::NeilStar: {
        auto [e, fixes] = neil_star_pass(policy, item, table, iteration, rec.question_id);
        rec.interactions = fixes;
        ex = std::move(e);
        break;
      }
      case SystemKind::FullExpert: ex = expert_examples(item, iteration, rec.question_id); break;
      case SystemKind::BinaryUser:
      case SystemKind::BinaryUserExpert: {
        const Trajectory tr = decode(policy, item.question, table);
        const bool correct = results_equal(execute(trajectory_to_query(tr), table), execute(item.gold, table));
        if (correct) {
          ex = own_examples(tr, iteration, rec.question_id);
        } else if (system == SystemKind::BinaryUserExpert) {
          ex = expert_examples(item, iteration, rec.question_id);
          rec.expert_annotated = true;
        }
        break;
      }
      case SystemKind::SelfTrain: {
        const Trajectory tr = decode(policy, item.question, table);
        if (sequence_probability(policy, tr, table) > 0.5) ex = own_examples(tr, iteration, rec.question_id);
        break;
      }
    }
    rec.kept = !ex.empty();
    for (auto& e : ex) res.examples.push_back(std::move(e));
    res.records.push_back(std::move(rec));
  }
  return res;
}

Diagnostics gold_state_diagnostics(const Policy& policy, const std::vector<CorpusItem>& items, const TableSet& tables,
                                   double mu) {
  std::size_t n = 0, queried = 0, wrong = 0;
  for (const auto& item : items) {
    const Table& table = lookup(tables, item.table_id);
    const QuestionAnalysis qa(item.question, table);
    State s{item.question, item.table_id, {}};
    for (const auto& want : query_actions(item.gold)) {
      const auto dist = action_distribution(policy, s, table, qa);
      const auto best = argmax(dist);
      ++n;
      if (is_uncertain(dist[best].prob, mu))
        ++queried;
      else if (!(dist[best].action == want))
        ++wrong;
      s.prefix.push_back(want);
    }
  }
  Diagnostics d;
  if (n == 0) return d;
  d.e = static_cast<double>(wrong) / static_cast<double>(n);
  d.beta = static_cast<double>(queried) / static_cast<double>(n);
  d.eps_tilde = queried == n ? 0.0 : static_cast<double>(wrong) / static_cast<double>(n - queried);
  return d;
}

std::vector<CollectedExample> expand_init(const std::vector<CorpusItem>& init_split) {
  std::vector<CollectedExample> d0;
  for (std::size_t j = 0; j < init_split.size(); ++j) {
    auto ex = expert_examples(init_split[j], 0, fmt::format("init{}", j));
    d0.insert(d0.end(), std::make_move_iterator(ex.begin()), std::make_move_iterator(ex.end()));
  }
  return d0;
}

std::string batch_hash(const std::vector<CorpusItem>& batch, std::size_t first_index) {
  std::uint64_t h = 14695981039346656037ull;
  auto feed = [&](std::string_view s) {
    for (unsigned char c : s) {
      h ^= c;
      h *= 1099511628211ull;
    }
    h ^= 0xff;
    h *= 1099511628211ull;
  };
  feed(std::to_string(first_index));
  for (const auto& item : batch) {
    feed(item.table_id);
    feed(join_tokens(item.question));
  }
  return fmt::format("{:016x}", h);
}

std::pair<RunState, IterationReport> initialize(SystemKind system, const std::vector<CollectedExample>& d0,
                                                const std::vector<CompiledExample>& d0_compiled,
                                                const Policy& init_policy, const RunContext& ctx,
                                                std::uint64_t seed) {
  RunState st;
  st.system = system;
  st.init_policy = init_policy;
  st.policy = init_policy;
  st.aggregated = d0;
  st.compiled = d0_compiled;
  st.best_policy = init_policy;
  st.best_validation = query_match_accuracy(init_policy, *ctx.validation, *ctx.tables);
  st.seed = seed;

  IterationReport rep;
  rep.system = system;
  rep.seed = seed;
  rep.iteration = 0;
  rep.test_accuracy = query_match_accuracy(init_policy, *ctx.test, *ctx.tables);
  rep.validation_accuracy = st.best_validation;
  return {std::move(st), rep};
}

std::pair<RunState, IterationReport> initialize(SystemKind system, const std::vector<CorpusItem>& init_split,
                                                const RunContext& ctx, std::uint64_t seed) {
  if (init_split.empty()) throw DomainError("empty initialization split");
  ctx.cfg.validate();
  const auto d0 = expand_init(init_split);
  const auto compiled = compile_dataset(d0, *ctx.tables);
  const auto trained = train(Policy::zero(), compiled, ctx.cfg.train, *ctx.validation, *ctx.tables);
  return initialize(system, d0, compiled, trained.policy, ctx, seed);
}

IterationReport run_iteration(RunState& state, const std::vector<CorpusItem>& batch, const RunContext& ctx) {
  IterationReport rep;
  rep.system = state.system;
  rep.seed = state.seed;
  rep.iteration = state.iteration + 1;
  rep.batch_hash = batch_hash(batch, state.questions_seen);
  rep.diagnostics = gold_state_diagnostics(state.policy, *ctx.validation, *ctx.tables, ctx.cfg.interaction.mu);

  CollectResult cr = collect(state.system, state.policy, batch, *ctx.tables, ctx.cfg.interaction, rep.iteration,
                             state.questions_seen);
  const long annotations = count_annotations(state.system, cr.records);
  rep.new_examples = cr.examples.size();
  rep.new_annotations = annotations;
  rep.interactions_per_question =
      batch.empty() ? 0.0 : static_cast<double>(annotations) / static_cast<double>(batch.size());

  for (auto& ex : cr.examples) {
    state.compiled.push_back(compile_example(ex, *ctx.tables));
    state.aggregated.push_back(std::move(ex));
  }
  state.iteration = rep.iteration;
  state.questions_seen += batch.size();
  state.annotation_total += annotations;
  rep.questions_seen = state.questions_seen;
  rep.annotations_cum = state.annotation_total;

  try {
    TrainResult tr = train(state.init_policy, state.compiled, ctx.cfg.train, *ctx.validation, *ctx.tables);
    state.policy = std::move(tr.policy);
    rep.validation_accuracy = tr.validation_accuracy;
    rep.test_accuracy = query_match_accuracy(state.policy, *ctx.test, *ctx.tables);
    if (rep.validation_accuracy > state.best_validation) {
      state.best_validation = rep.validation_accuracy;
      state.best_policy = state.policy;
      state.best_iteration = rep.iteration;
    }
  } catch (const TrainingError& e) {
    rep.failed = true;
    rep.error = e.what();
  }
  return rep;
}

// ---------------------------------------------------------------------------

void ExperimentConfig::validate() const {
  if (experiment_id.empty()) throw ConfigError("experiment_id must be non-empty");
  if (!corpus_dir) gen.validate();
  if (!(init_fraction > 0.0 && init_fraction <= 1.0)) throw RangeError("init_fraction must lie in (0, 1]");
  learn.validate();
  if (systems.empty()) throw ConfigError("no systems configured");
  if (seeds.empty()) throw ConfigError("no seeds configured");
  if (jobs < 1) throw ConfigError("jobs must be >= 1");
}

void to_json(json& j, const ExperimentConfig& c) {
  json systems = json::array();
  for (auto s : c.systems) systems.push_back(to_string(s));
  j = {{"experiment_id", c.experiment_id},
       {"corpus", c.gen},
       {"corpus_seed", c.corpus_seed},
       {"init_fraction", c.init_fraction},
       {"validation_size", c.validation_size},
       {"test_size", c.test_size},
       {"mu", c.learn.interaction.mu},
       {"k_options", c.learn.interaction.k_options},
       {"m", c.learn.m},
       {"iterations", c.learn.iterations},
       {"train", c.learn.train},
       {"systems", systems},
       {"seeds", c.seeds},
       {"jobs", c.jobs},
       {"checkpoint_every_iteration", c.checkpoint_every_iteration}};
  if (c.corpus_dir) j["corpus_dir"] = c.corpus_dir->string();
}

void from_json(const json& j, ExperimentConfig& c) {
  static const std::vector<std::string> known{"experiment_id", "corpus", "corpus_seed", "corpus_dir",
                                              "init_fraction", "validation_size", "test_size", "mu",
                                              "k_options", "m", "iterations", "train", "systems", "seeds",
                                              "jobs", "checkpoint_every_iteration"};
  for (const auto& [key, _] : j.items())
    if (std::find(known.begin(), known.end(), key) == known.end())
      throw ConfigError(fmt::format("unknown experiment config key '{}'", key));
  c.experiment_id = j.value("experiment_id", c.experiment_id);
  if (j.contains("corpus")) c.gen = j.at("corpus").get<GenConfig>();
  c.corpus_seed = j.value("corpus_seed", c.corpus_seed);
  if (j.contains("corpus_dir")) c.corpus_dir = j.at("corpus_dir").get<std::string>();
  c.init_fraction = j.value("init_fraction", c.init_fraction);
  c.validation_size = j.value("validation_size", c.validation_size);
  c.test_size = j.value("test_size", c.test_size);
  c.learn.interaction.mu = j.value("mu", c.learn.interaction.mu);
  c.learn.interaction.k_options = j.value("k_options", c.learn.interaction.k_options);
  c.learn.m = j.value("m", c.learn.m);
  c.learn.iterations = j.value("iterations", c.learn.iterations);
  if (j.contains("train")) c.learn.train = j.at("train").get<TrainConfig>();
  if (j.contains("systems")) {
    c.systems.clear();
    for (const auto& s : j.at("systems")) c.systems.push_back(parse_system(s.get<std::string>()));
  }
  if (j.contains("seeds")) c.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  c.jobs = j.value("jobs", c.jobs);
  c.checkpoint_every_iteration = j.value("checkpoint_every_iteration", c.checkpoint_every_iteration);
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(fmt::format("cannot open {}", path.string()));
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError(fmt::format("{}: {}", path.string(), e.what()));
  }
  ExperimentConfig c;
  try {
    c = j.get<ExperimentConfig>();
  } catch (const json::exception& e) {
    throw ConfigError(fmt::format("{}: {}", path.string(), e.what()));
  }
  if (c.corpus_dir && c.corpus_dir->is_relative()) c.corpus_dir = path.parent_path() / *c.corpus_dir;
  c.validate();
  return c;
}

namespace {

struct RunOutput {
  std::vector<IterationReport> reports;
  std::vector<CollectedExample> dataset;
};

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& cfg, const std::filesystem::path& out,
                                const ExperimentHooks& hooks) {
  cfg.validate();
  const Corpus corpus = cfg.corpus_dir ? load_corpus(*cfg.corpus_dir) : generate_corpus(cfg.gen, cfg.corpus_seed);

  // Only the stream order depends on the seed, so D_0 and π̂_1 are shared.
  const CorpusSplits base = split_corpus(corpus.items, cfg.init_fraction, cfg.seeds.front(), cfg.validation_size,
                                         cfg.test_size);
  if (base.init_train.empty()) throw DomainError("empty initialization split");
  RunContext ctx{&corpus.tables, &base.validation, &base.test, cfg.learn};
  const auto d0 = expand_init(base.init_train);
  const auto d0_compiled = compile_dataset(d0, corpus.tables);
  const Policy init_policy = train(Policy::zero(), d0_compiled, cfg.learn.train, base.validation, corpus.tables).policy;

  std::mutex hook_mu;
  auto run_one = [&](SystemKind system, std::uint64_t seed) {
    const CorpusSplits splits =
        split_corpus(corpus.items, cfg.init_fraction, seed, cfg.validation_size, cfg.test_size);
    RunOutput ro;
    auto [state, rep0] = initialize(system, d0, d0_compiled, init_policy, ctx, seed);
    ro.reports.push_back(rep0);
    if (hooks.on_iteration) {
      std::lock_guard lock(hook_mu);
      hooks.on_iteration(state, rep0);
    }
    const auto dir = out / "checkpoints" / std::string(to_string(system)) / fmt::format("seed-{}", seed);
    for (int i = 0; i < cfg.learn.iterations; ++i) {
      const std::size_t begin = state.questions_seen;
      if (begin >= splits.stream.size()) break;
      const std::size_t end = std::min(begin + cfg.learn.m, splits.stream.size());
      const std::vector<CorpusItem> batch(splits.stream.begin() + static_cast<std::ptrdiff_t>(begin),
                                          splits.stream.begin() + static_cast<std::ptrdiff_t>(end));
      IterationReport rep = run_iteration(state, batch, ctx);
      ro.reports.push_back(rep);
      if (hooks.on_iteration) {
        std::lock_guard lock(hook_mu);
        hooks.on_iteration(state, rep);
      }
      if (rep.failed) break;
      if (!out.empty() && cfg.checkpoint_every_iteration)
        save_policy(state.policy, dir / fmt::format("iter-{:02}.json", rep.iteration));
    }
    if (!out.empty()) save_policy(state.best_policy, dir / "best.json");
    if (hooks.keep_datasets) ro.dataset = std::move(state.aggregated);
    return ro;
  };

  std::vector<std::pair<SystemKind, std::uint64_t>> tasks;
  for (auto seed : cfg.seeds)
    for (auto system : cfg.systems) tasks.emplace_back(system, seed);

  std::vector<RunOutput> outputs(tasks.size());
  if (cfg.jobs <= 1) {
    for (std::size_t i = 0; i < tasks.size(); ++i) outputs[i] = run_one(tasks[i].first, tasks[i].second);
  } else {
    std::size_t next = 0;
    while (next < tasks.size()) {
      std::vector<std::future<RunOutput>> wave;
      const std::size_t stop = std::min(tasks.size(), next + static_cast<std::size_t>(cfg.jobs));
      for (std::size_t i = next; i < stop; ++i)
        wave.push_back(std::async(std::launch::async, run_one, tasks[i].first, tasks[i].second));
      for (std::size_t i = next; i < stop; ++i) outputs[i] = wave[i - next].get();
      next = stop;
    }
  }

  ExperimentResult result;
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    for (auto& r : outputs[i].reports) result.reports.push_back(std::move(r));
    if (hooks.keep_datasets) result.datasets.push_back({tasks[i], std::move(outputs[i].dataset)});
  }
  std::stable_sort(result.reports.begin(), result.reports.end(), [](const auto& a, const auto& b) {
    return std::tie(a.system, a.seed, a.iteration) < std::tie(b.system, b.seed, b.iteration);
  });

  if (!out.empty()) {
    std::filesystem::create_directories(out);
    write_report_csv(result.reports, out / "report.csv");
    write_mean_csv(average_over_seeds(result.reports), out / "mean.csv");
    std::ofstream(out / "summary.json") << summary_json(cfg, result.reports).dump(2) << '\n';
  }
  return result;
}

// ---------------------------------------------------------------------------
// CSV

namespace {

const char* kReportHeader =
    "system,iteration,questions_seen,annotations_cum,test_acc,val_acc,seed,new_examples,new_annotations,"
    "interactions_per_q,e_i,beta_i,eps_tilde_i,failed";
const char* kMeanHeader =
    "system,iteration,questions_seen,annotations_cum,test_acc,val_acc,seeds,interactions_per_q,e_i,beta_i,"
    "eps_tilde_i";

std::string num(double x) { return fmt::format("{:.6f}", x); }

std::string diag_cells(const std::optional<Diagnostics>& d) {
  if (!d) return ",,";
  return fmt::format("{},{},{}", num(d->e), num(d->beta), num(d->eps_tilde));
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> cells;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

std::optional<Diagnostics> parse_diag(const std::vector<std::string>& c, std::size_t at) {
  if (c[at].empty()) return std::nullopt;
  return Diagnostics{std::stod(c[at]), std::stod(c[at + 1]), std::stod(c[at + 2])};
}

template <class Row, class Parse>
std::vector<Row> read_csv(const std::filesystem::path& path, const char* header, std::size_t ncols, Parse parse) {
  std::ifstream in(path);
  if (!in) throw ParseError(fmt::format("cannot open {}", path.string()));
  std::string line;
  if (!std::getline(in, line) || line != header) throw ParseError("unexpected CSV header", 1);
  std::vector<Row> rows;
  std::size_t n = 1;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    const auto c = split_csv(line);
    if (c.size() != ncols) throw ParseError(fmt::format("expected {} cells, got {}", ncols, c.size()), n);
    try {
      rows.push_back(parse(c));
    } catch (const std::exception& e) {
      throw ParseError(e.what(), n);
    }
  }
  return rows;
}

}  // namespace

void write_report_csv(const std::vector<IterationReport>& reports, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  out << kReportHeader << '\n';
  for (const auto& r : reports)
    out << fmt::format("{},{},{},{},{},{},{},{},{},{},{},{}\n", to_string(r.system), r.iteration, r.questions_seen,
                       r.annotations_cum, num(r.test_accuracy), num(r.validation_accuracy), r.seed, r.new_examples,
                       r.new_annotations, num(r.interactions_per_question), diag_cells(r.diagnostics),
                       r.failed ? 1 : 0);
  if (!out) throw Error(fmt::format("cannot write {}", path.string()));
}

std::vector<IterationReport> read_report_csv(const std::filesystem::path& path) {
  return read_csv<IterationReport>(path, kReportHeader, 14, [](const std::vector<std::string>& c) {
    IterationReport r;
    r.system = parse_system(c[0]);
    r.iteration = std::stoi(c[1]);
    r.questions_seen = std::stoul(c[2]);
    r.annotations_cum = std::stol(c[3]);
    r.test_accuracy = std::stod(c[4]);
    r.validation_accuracy = std::stod(c[5]);
    r.seed = std::stoull(c[6]);
    r.new_examples = std::stoul(c[7]);
    r.new_annotations = std::stol(c[8]);
    r.interactions_per_question = std::stod(c[9]);
    r.diagnostics = parse_diag(c, 10);
    r.failed = c[13] == "1";
    return r;
  });
}

std::vector<MeanRow> average_over_seeds(const std::vector<IterationReport>& reports) {
  std::map<std::pair<SystemKind, int>, std::vector<const IterationReport*>> groups;
  for (const auto& r : reports)
    if (!r.failed) groups[{r.system, r.iteration}].push_back(&r);
  std::vector<MeanRow> rows;
  for (const auto& [key, group] : groups) {
    MeanRow m;
    m.system = key.first;
    m.iteration = key.second;
    m.seeds = static_cast<int>(group.size());
    const double n = static_cast<double>(group.size());
    std::size_t with_diag = 0;
    Diagnostics d;
    for (const auto* r : group) {
      m.questions_seen += static_cast<double>(r->questions_seen) / n;
      m.annotations_cum += static_cast<double>(r->annotations_cum) / n;
      m.test_accuracy += r->test_accuracy / n;
      m.validation_accuracy += r->validation_accuracy / n;
      m.interactions_per_question += r->interactions_per_question / n;
      if (r->diagnostics) {
        ++with_diag;
        d.e += r->diagnostics->e;
        d.beta += r->diagnostics->beta;
        d.eps_tilde += r->diagnostics->eps_tilde;
      }
    }
    if (with_diag > 0) {
      const double k = static_cast<double>(with_diag);
      m.diagnostics = Diagnostics{d.e / k, d.beta / k, d.eps_tilde / k};
    }
    rows.push_back(m);
  }
  return rows;
}

void write_mean_csv(const std::vector<MeanRow>& rows, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  out << kMeanHeader << '\n';
  for (const auto& r : rows)
    out << fmt::format("{},{},{},{},{},{},{},{},{}\n", to_string(r.system), r.iteration, num(r.questions_seen),
                       num(r.annotations_cum), num(r.test_accuracy), num(r.validation_accuracy), r.seeds,
                       num(r.interactions_per_question), diag_cells(r.diagnostics));
  if (!out) throw Error(fmt::format("cannot write {}", path.string()));
}

std::vector<MeanRow> read_mean_csv(const std::filesystem::path& path) {
  return read_csv<MeanRow>(path, kMeanHeader, 11, [](const std::vector<std::string>& c) {
    MeanRow r;
    r.system = parse_system(c[0]);
    r.iteration = std::stoi(c[1]);
    r.questions_seen = std::stod(c[2]);
    r.annotations_cum = std::stod(c[3]);
    r.test_accuracy = std::stod(c[4]);
    r.validation_accuracy = std::stod(c[5]);
    r.seeds = std::stoi(c[6]);
    r.interactions_per_question = std::stod(c[7]);
    r.diagnostics = parse_diag(c, 8);
    return r;
  });
}

json summary_json(const ExperimentConfig& cfg, const std::vector<IterationReport>& reports) {
  json systems = json::object();
  for (auto s : cfg.systems) {
    json runs = json::array();
    for (auto seed : cfg.seeds) {
      const IterationReport* last = nullptr;
      const IterationReport* best = nullptr;
      bool failed = false;
      for (const auto& r : reports) {
        if (r.system != s || r.seed != seed) continue;
        failed = failed || r.failed;
        if (r.failed) continue;
        last = &r;
        if (!best || r.validation_accuracy > best->validation_accuracy) best = &r;
      }
      if (!last) continue;
      runs.push_back({{"seed", seed},
                      {"iterations", last->iteration},
                      {"final_test_acc", last->test_accuracy},
                      {"annotations", last->annotations_cum},
                      {"best_iteration", best->iteration},
                      {"best_val_acc", best->validation_accuracy},
                      {"best_test_acc", best->test_accuracy},
                      {"failed", failed}});
    }
    systems[std::string(to_string(s))] = {{"compromise_annotation_metric", uses_compromise_metric(s)},
                                          {"runs", runs}};
  }
  return {{"experiment_id", cfg.experiment_id},
          {"feature_space_version", fmt::format("{:016x}", FeatureSpace::version())},
          {"config", cfg},
          {"systems", systems}};
}

}  // namespace neil
