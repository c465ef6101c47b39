// neil: corpus generation, initial training, simulation runs, theory sweeps,
// report emission and the session service.
//
// Exit codes: 0 ok, 1 domain error, 2 usage error. Logs go to stderr.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "neil/corpus.hpp"
#include "neil/error.hpp"
#include "neil/learning.hpp"
#include "neil/metrics.hpp"
#include "neil/policy.hpp"
#include "neil/service.hpp"
#include "neil/theory.hpp"

// after Eigen: resolv.h, pulled in by httplib, defines a _res macro
#include <httplib.h>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace neil;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void setup_logging() {
  auto logger = spdlog::stderr_color_mt("neil");
  spdlog::set_default_logger(logger);
  spdlog::set_pattern("[%H:%M:%S.%e] [%^%l%$] %v");
  const char* env = std::getenv("NEIL_LOG_LEVEL");
  const std::string level = env ? env : "info";
  if (level == "error")
    spdlog::set_level(spdlog::level::err);
  else if (level == "warn")
    spdlog::set_level(spdlog::level::warn);
  else if (level == "info")
    spdlog::set_level(spdlog::level::info);
  else if (level == "debug")
    spdlog::set_level(spdlog::level::debug);
  else
    throw UsageError(fmt::format("NEIL_LOG_LEVEL must be one of error, warn, info, debug (got '{}')", level));
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw Error(fmt::format("cannot write {}", path.string()));
  out << j.dump(2) << '\n';
}

// Flags shared by commands that read an experiment config.
struct Overrides {
  std::string config;
  std::vector<std::uint64_t> seeds;
  std::optional<double> init_fraction, mu;
  std::optional<std::size_t> k_options, m;
  std::optional<int> iterations, jobs;
  std::string systems;
};

ExperimentConfig resolve(const Overrides& o) {
  ExperimentConfig c = o.config.empty() ? ExperimentConfig{} : load_experiment_config(o.config);
  if (!o.seeds.empty()) c.seeds = o.seeds;
  if (o.init_fraction) c.init_fraction = *o.init_fraction;
  if (o.mu) c.learn.interaction.mu = *o.mu;
  if (o.k_options) c.learn.interaction.k_options = *o.k_options;
  if (o.m) c.learn.m = *o.m;
  if (o.iterations) c.learn.iterations = *o.iterations;
  if (o.jobs) c.jobs = *o.jobs;
  if (!o.systems.empty()) c.systems = parse_system_list(o.systems);
  c.validate();
  return c;
}

Corpus corpus_for(const ExperimentConfig& c) {
  if (c.corpus_dir) {
    spdlog::info("loading corpus from {}", c.corpus_dir->string());
    return load_corpus(*c.corpus_dir);
  }
  spdlog::info("generating corpus ({} items, seed {})", c.gen.num_items, c.corpus_seed);
  return generate_corpus(c.gen, c.corpus_seed);
}

void add_experiment_flags(CLI::App* cmd, Overrides& o, bool learning) {
  cmd->add_option("--config", o.config, "experiment config JSON")->check(CLI::ExistingFile);
  cmd->add_option("--init-fraction", o.init_fraction, "fraction of the train pool used for initialization")
      ->check(CLI::Range(0.0, 1.0));
  if (!learning) return;
  cmd->add_option("--systems", o.systems,
                  "comma list of neil, neil-star, full-expert, binary-user, binary-user-expert, self-train");
  cmd->add_option("--mu", o.mu, "confidence threshold")->check(CLI::Range(0.0, 1.0));
  cmd->add_option("--k-options", o.k_options, "options per clarification question")->check(CLI::PositiveNumber);
  cmd->add_option("--m", o.m, "questions per iteration")->check(CLI::PositiveNumber);
  cmd->add_option("--iterations", o.iterations, "iterations per run")->check(CLI::NonNegativeNumber);
  cmd->add_option("--jobs", o.jobs, "runs executed in parallel (default 1)")->check(CLI::PositiveNumber);
}

// ---------------------------------------------------------------------------

int gen_corpus(const Overrides& o, const fs::path& out) {
  ExperimentConfig c = resolve(o);
  if (!o.seeds.empty()) c.corpus_seed = o.seeds.front();
  c.corpus_dir.reset();
  const Corpus corpus = corpus_for(c);
  save_corpus(corpus, out);
  spdlog::info("wrote {} items over {} tables to {}", corpus.items.size(), corpus.tables.size(), out.string());
  return 0;
}

int init_train(const Overrides& o, const fs::path& out) {
  const ExperimentConfig c = resolve(o);
  const Corpus corpus = corpus_for(c);
  const CorpusSplits s =
      split_corpus(corpus.items, c.init_fraction, c.seeds.front(), c.validation_size, c.test_size);
  if (s.init_train.empty()) throw DomainError("empty initialization split");
  fs::create_directories(out);
  const auto d0 = expand_init(s.init_train);
  spdlog::info("training on {} examples from {} questions", d0.size(), s.init_train.size());
  const TrainResult r = train(Policy::zero(), d0, corpus.tables, c.learn.train, s.validation);
  save_policy(r.policy, out / "policy.json");
  save_examples(d0, out / "d0.jsonl");
  const double test = query_match_accuracy(r.policy, s.test, corpus.tables);
  write_json(out / "init_report.json", {{"init_questions", s.init_train.size()},
                                        {"examples", d0.size()},
                                        {"epochs", r.epochs},
                                        {"final_loss", r.final_loss},
                                        {"val_acc", r.validation_accuracy},
                                        {"test_acc", test}});
  spdlog::info("val {:.4f} test {:.4f} after {} epochs", r.validation_accuracy, test, r.epochs);
  return 0;
}

int run_sim(const Overrides& o, const fs::path& out) {
  const ExperimentConfig c = resolve(o);
  ExperimentHooks hooks;
  hooks.on_iteration = [](const RunState&, const IterationReport& r) {
    if (r.failed)
      spdlog::error("{} seed {} iteration {} failed: {}", to_string(r.system), r.seed, r.iteration, r.error);
    else
      spdlog::info("{} seed {} iteration {}: annotations {} test {:.4f} val {:.4f}", to_string(r.system), r.seed,
                   r.iteration, r.annotations_cum, r.test_accuracy, r.validation_accuracy);
  };
  const ExperimentResult res = run_experiment(c, out, hooks);
  for (const auto& r : res.reports)
    if (r.failed) return 1;
  spdlog::info("reports in {}", out.string());
  return 0;
}

int theory_lab(const std::string& sweep, const theory::SweepConfig& sc, std::uint64_t seed, const fs::path& out) {
  std::vector<double> mus;
  try {
    mus = theory::parse_sweep(sweep);
  } catch (const RangeError& e) {
    throw UsageError(e.what());
  }
  fs::create_directories(out);
  std::vector<theory::TheoryReport> reports;
  const auto rows = theory::run_sweep(mus, sc, seed, &reports);
  theory::write_sweep_csv(rows, (out / "sweep.csv").string());
  json jr = json::array();
  for (const auto& r : reports) jr.push_back(theory::to_json(r));
  write_json(out / "theory_report.json", {{"seed", seed},
                                           {"questions", sc.questions},
                                           {"T", sc.T},
                                           {"num_actions", sc.num_actions},
                                           {"shared_obs", sc.shared_obs},
                                           {"N", sc.N},
                                           {"dirichlet_alpha", sc.dirichlet_alpha},
                                           {"reports", jr}});
  bool ok = true;
  for (const auto& r : reports) {
    if (!r.dominated) {
      spdlog::error("mu {:.4f}: J {:.6f} above bound {:.6f}", r.mu, r.J, r.bound);
      ok = false;
    }
    for (std::size_t i = 0; i < r.lemma1_lhs.size(); ++i)
      if (r.lemma1_lhs[i] > r.lemma1_rhs[i] + 1e-12) {
        spdlog::error("mu {:.4f} iterate {}: L1 {:.3e} above 2Te {:.3e}", r.mu, i + 1, r.lemma1_lhs[i],
                      r.lemma1_rhs[i]);
        ok = false;
      }
  }
  spdlog::info("{} sweep rows in {}", rows.size(), (out / "sweep.csv").string());
  return ok ? 0 : 1;
}

int report(const std::vector<std::string>& inputs, const std::string& trends, const std::string& format,
           const fs::path& out) {
  std::vector<metrics::ReportSet> sets;
  for (const auto& in : inputs) {
    const fs::path dir(in);
    std::ifstream sj(dir / "summary.json");
    if (!sj) throw Error(fmt::format("{} has no summary.json", dir.string()));
    const json summary = json::parse(sj);
    sets.push_back({summary.at("experiment_id").get<std::string>(), read_mean_csv(dir / "mean.csv")});
  }
  const auto series = metrics::build_series(sets);
  const auto files = metrics::emit(series, out, format);
  spdlog::info("wrote {} series files under {}", files.size(), out.string());
  if (trends.empty()) return 0;
  const auto results = metrics::check_trends(series, metrics::load_trend_spec(trends));
  json jr = json::array();
  bool ok = true;
  for (const auto& r : results) {
    jr.push_back({{"name", r.name}, {"passed", r.passed}, {"detail", r.detail}});
    spdlog::log(r.passed ? spdlog::level::info : spdlog::level::err, "{} {}: {}", r.passed ? "PASS" : "FAIL",
                r.name, r.detail);
    ok = ok && r.passed;
  }
  fs::create_directories(out);
  write_json(out / "checks.json", jr);
  return ok ? 0 : 1;
}

int serve(const Overrides& o, const fs::path& out, const std::string& policy_path, const std::string& static_dir,
          const std::string& host, int port) {
  const ExperimentConfig c = resolve(o);
  Corpus corpus = corpus_for(c);
  const CorpusSplits s =
      split_corpus(corpus.items, c.init_fraction, c.seeds.front(), c.validation_size, c.test_size);
  service::ServiceData data;
  data.d0 = expand_init(s.init_train);
  data.validation = s.validation;
  if (!policy_path.empty()) {
    data.init_policy = load_policy(policy_path);
  } else {
    spdlog::info("no --policy given; training on {} initialization examples", data.d0.size());
    data.init_policy = train(Policy::zero(), data.d0, corpus.tables, c.learn.train, s.validation).policy;
  }
  data.tables = std::move(corpus.tables);
  service::ServiceConfig sc;
  sc.interaction = c.learn.interaction;
  sc.train = c.learn.train;
  sc.data_dir = out;
  service::SessionService svc(std::move(data), sc);
  httplib::Server server;
  svc.mount(server, static_dir.empty() ? std::nullopt : std::optional<fs::path>(static_dir));
  server.set_logger([](const httplib::Request& req, const httplib::Response& res) {
    spdlog::debug("{} {} -> {}", req.method, req.path, res.status);
  });
  spdlog::info("listening on {}:{}, data in {}", host, port, out.string());
  if (!server.listen(host, port)) throw Error(fmt::format("cannot listen on {}:{}", host, port));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"NEIL workbench: interactive semantic parsing with confidence-triggered clarification"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "help for every command");

  Overrides o;
  std::string out;
  auto add_out = [&](CLI::App* cmd, bool required) {
    auto* opt = cmd->add_option("--out", out, "output directory");
    if (required) opt->required();
  };
  auto add_seed = [&](CLI::App* cmd, const char* help) { cmd->add_option("--seed", o.seeds, help); };

  auto* gen = app.add_subcommand("gen-corpus", "generate a synthetic table-question corpus");
  gen->add_option("--config", o.config, "experiment config JSON (its corpus section is used)")
      ->check(CLI::ExistingFile);
  add_seed(gen, "corpus seed");
  add_out(gen, true);

  auto* init = app.add_subcommand("init-train", "train the initial parser on the initialization split");
  add_experiment_flags(init, o, false);
  add_seed(init, "split seed");
  add_out(init, true);

  auto* sim = app.add_subcommand("run-sim", "run the simulated-user experiment");
  add_experiment_flags(sim, o, true);
  add_seed(sim, "stream seed; repeat for several seeds");
  add_out(sim, true);

  std::string sweep = "mu=0.5:0.05:1.0";
  theory::SweepConfig sc;
  auto* lab = app.add_subcommand("theory-lab", "exact analysis on small tabular environments");
  lab->add_option("--sweep", sweep, "threshold sweep, mu=start:step:end")->capture_default_str();
  lab->add_option("--questions", sc.questions, "questions per environment")->capture_default_str();
  lab->add_option("--horizon", sc.T, "trajectory length T")->capture_default_str();
  lab->add_option("--actions", sc.num_actions, "actions per state")->capture_default_str();
  lab->add_option("--iterations", sc.N, "NEIL iterations N")->capture_default_str();
  add_seed(lab, "environment seed");
  add_out(lab, true);

  std::vector<std::string> inputs;
  std::string trends, format = "csv";
  auto* rep = app.add_subcommand("report", "emit plot-ready series and check trend assertions");
  rep->add_option("--in", inputs, "run-sim output directory; repeatable")->required()->check(CLI::ExistingDirectory);
  rep->add_option("--trends", trends, "trend spec JSON")->check(CLI::ExistingFile);
  rep->add_option("--format", format, "csv or json")->check(CLI::IsMember({"csv", "json"}))->capture_default_str();
  add_out(rep, true);

  std::string policy_path, static_dir, host = "127.0.0.1";
  int port = 8080;
  auto* srv = app.add_subcommand("serve", "run the HTTP session service");
  add_experiment_flags(srv, o, false);
  add_seed(srv, "split seed");
  srv->add_option("--policy", policy_path, "initial policy checkpoint (trained when absent)")
      ->check(CLI::ExistingFile);
  srv->add_option("--static", static_dir, "directory of UI files served at /")->check(CLI::ExistingDirectory);
  srv->add_option("--host", host, "bind address")->capture_default_str();
  srv->add_option("--port", port, "port")->check(CLI::Range(1, 65535))->capture_default_str();
  add_out(srv, true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    setup_logging();
    if (*lab && o.seeds.size() > 1) throw UsageError("theory-lab takes one --seed");
    if ((*gen || *init || *srv) && o.seeds.size() > 1) throw UsageError("give one --seed");
    if (*gen) return gen_corpus(o, out);
    if (*init) return init_train(o, out);
    if (*sim) return run_sim(o, out);
    if (*lab) return theory_lab(sweep, sc, o.seeds.empty() ? 0 : o.seeds.front(), out);
    if (*rep) return report(inputs, trends, format, out);
    if (*srv) return serve(o, out, policy_path, static_dir, host, port);
  } catch (const UsageError& e) {
    fmt::print(stderr, "usage error: {}\n", e.what());
    return 2;
  } catch (const ConfigError& e) {
    spdlog::error("config: {}", e.what());
    return 2;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
  return 2;
}
