#pragma once

// The iterative collect / aggregate / retrain loop and the comparison systems.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "neil/corpus.hpp"
#include "neil/example.hpp"
#include "neil/interaction.hpp"
#include "neil/policy.hpp"

namespace neil {

enum class SystemKind { Neil, NeilStar, FullExpert, BinaryUser, BinaryUserExpert, SelfTrain };

inline constexpr SystemKind kAllSystems[] = {SystemKind::Neil,       SystemKind::NeilStar,
                                             SystemKind::FullExpert, SystemKind::BinaryUser,
                                             SystemKind::BinaryUserExpert, SystemKind::SelfTrain};

/// "neil", "neil-star", "full-expert", "binary-user", "binary-user-expert", "self-train".
std::string_view to_string(SystemKind s);
/// Accepts the names above and the upper-case enum spellings (NEIL_STAR, ...).
SystemKind parse_system(std::string_view s);
std::vector<SystemKind> parse_system_list(std::string_view csv);
/// Binary-user annotation counts follow the full-expert convention and are
/// not comparable with interaction counts.
bool uses_compromise_metric(SystemKind s);

struct LearnConfig {
  InteractionConfig interaction;
  TrainConfig train;
  std::size_t m = 200;
  int iterations = 15;

  void validate() const;
};

/// Per-question bookkeeping of one collection pass.
struct QuestionRecord {
  std::string question_id;
  std::size_t gold_length = 0;
  std::size_t interactions = 0;
  /// Binary user + expert: the gold trajectory replaced a wrong parse.
  bool expert_annotated = false;
  bool kept = false;
};

long count_annotations(SystemKind system, const ParseOutcome& outcome);
long count_annotations(SystemKind system, const std::vector<QuestionRecord>& batch);

struct CollectResult {
  std::vector<CollectedExample> examples;
  std::vector<QuestionRecord> records;
};

/// One collection pass of `system` over `batch` with the current policy.
/// `first_index` numbers the questions ("q<first_index + j>").
CollectResult collect(SystemKind system, const Policy& policy, const std::vector<CorpusItem>& batch,
                      const TableSet& tables, const InteractionConfig& cfg, int iteration,
                      std::size_t first_index = 0);

/// Gold trajectory of an item as weight-1 demonstrations.
std::vector<CollectedExample> expert_examples(const CorpusItem& item, int iteration, const std::string& question_id);

/// Confident-and-wrong rate e, query rate beta and conditional error
/// eps_tilde = e / (1 - beta), pooled over the gold states of `items`.
struct Diagnostics {
  double e = 0.0;
  double beta = 0.0;
  double eps_tilde = 0.0;
};

Diagnostics gold_state_diagnostics(const Policy& policy, const std::vector<CorpusItem>& items,
                                   const TableSet& tables, double mu);

struct IterationReport {
  SystemKind system = SystemKind::Neil;
  std::uint64_t seed = 0;
  int iteration = 0;
  std::size_t questions_seen = 0;
  std::size_t new_examples = 0;
  long new_annotations = 0;
  long annotations_cum = 0;
  double test_accuracy = 0.0;
  double validation_accuracy = 0.0;
  double interactions_per_question = 0.0;
  /// Of the policy that collected this iteration's batch; absent at iteration 0.
  std::optional<Diagnostics> diagnostics;
  /// Hash of the batch's question ids; equal across systems.
  std::string batch_hash;
  bool failed = false;
  std::string error;
};

struct RunState {
  SystemKind system = SystemKind::Neil;
  Policy init_policy;
  Policy policy;
  /// D_0 expansion followed by every collected example.
  std::vector<CollectedExample> aggregated;
  std::vector<CompiledExample> compiled;
  int iteration = 0;
  long annotation_total = 0;
  std::size_t questions_seen = 0;
  Policy best_policy;
  double best_validation = -1.0;
  int best_iteration = 0;
  std::uint64_t seed = 0;
};

/// Shared inputs of one run.
struct RunContext {
  const TableSet* tables = nullptr;
  const std::vector<CorpusItem>* validation = nullptr;
  const std::vector<CorpusItem>* test = nullptr;
  LearnConfig cfg;
};

/// D_0 as per-step gold demonstrations.
std::vector<CollectedExample> expand_init(const std::vector<CorpusItem>& init_split);

/// Trains the first policy on D_0 and reports iteration 0.
std::pair<RunState, IterationReport> initialize(SystemKind system, const std::vector<CorpusItem>& init_split,
                                                const RunContext& ctx, std::uint64_t seed);
/// Same, reusing an already trained initial policy and compiled D_0.
std::pair<RunState, IterationReport> initialize(SystemKind system, const std::vector<CollectedExample>& d0,
                                                const std::vector<CompiledExample>& d0_compiled,
                                                const Policy& init_policy, const RunContext& ctx,
                                                std::uint64_t seed);

IterationReport run_iteration(RunState& state, const std::vector<CorpusItem>& batch, const RunContext& ctx);

std::string batch_hash(const std::vector<CorpusItem>& batch, std::size_t first_index);

struct ExperimentConfig {
  std::string experiment_id = "default";
  GenConfig gen;
  std::uint64_t corpus_seed = 0;
  /// Load the corpus from here instead of generating it.
  std::optional<std::filesystem::path> corpus_dir;
  double init_fraction = 0.1;
  std::size_t validation_size = 500;
  std::size_t test_size = 1000;
  LearnConfig learn;
  std::vector<SystemKind> systems{std::begin(kAllSystems), std::end(kAllSystems)};
  std::vector<std::uint64_t> seeds{1, 2, 3};
  /// Systems run concurrently on this many threads.
  int jobs = 1;
  bool checkpoint_every_iteration = false;

  void validate() const;
};

void to_json(nlohmann::json& j, const ExperimentConfig& c);
void from_json(const nlohmann::json& j, ExperimentConfig& c);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

struct ExperimentResult {
  std::vector<IterationReport> reports;
  /// Aggregated datasets by (system, seed), kept when requested.
  std::vector<std::pair<std::pair<SystemKind, std::uint64_t>, std::vector<CollectedExample>>> datasets;
};

struct ExperimentHooks {
  bool keep_datasets = false;
  /// Called after every iteration with the state and its report.
  std::function<void(const RunState&, const IterationReport&)> on_iteration;
};

/// Runs every configured system for every seed. Writes reports and the best
/// checkpoints under `out` when it is non-empty.
ExperimentResult run_experiment(const ExperimentConfig& cfg, const std::filesystem::path& out,
                                const ExperimentHooks& hooks = {});

// Report files.
void write_report_csv(const std::vector<IterationReport>& reports, const std::filesystem::path& path);
std::vector<IterationReport> read_report_csv(const std::filesystem::path& path);
/// Seed-averaged view of one (system, iteration).
struct MeanRow {
  SystemKind system = SystemKind::Neil;
  int iteration = 0;
  int seeds = 0;
  double questions_seen = 0.0;
  double annotations_cum = 0.0;
  double test_accuracy = 0.0;
  double validation_accuracy = 0.0;
  double interactions_per_question = 0.0;
  std::optional<Diagnostics> diagnostics;
};

/// Failed iterations are left out; rows are ordered by system, then iteration.
std::vector<MeanRow> average_over_seeds(const std::vector<IterationReport>& reports);
void write_mean_csv(const std::vector<MeanRow>& rows, const std::filesystem::path& path);
std::vector<MeanRow> read_mean_csv(const std::filesystem::path& path);
nlohmann::json summary_json(const ExperimentConfig& cfg, const std::vector<IterationReport>& reports);

}  // namespace neil
