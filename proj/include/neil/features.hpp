#pragma once

// Feature templates of the log-linear slot-filling parser. Every feature is
// hashed into a fixed-size space so the weight vector never changes shape.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "neil/corpus.hpp"
#include "neil/sql.hpp"

namespace neil {

/// Sorted, duplicate-free (feature id, value) pairs; zero values are dropped.
class FeatureVector {
 public:
  using Entry = std::pair<std::uint32_t, double>;

  FeatureVector() = default;
  /// Sums duplicate ids and drops zeros; throws DomainError on non-finite values.
  explicit FeatureVector(std::vector<Entry> raw);

  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }

  template <class Weights>
  double dot(const Weights& w) const {
    double s = 0.0;
    for (const auto& [id, v] : entries_) s += w[id] * v;
    return s;
  }

 private:
  std::vector<Entry> entries_;
};

struct FeatureSpace {
  static constexpr int kDimBits = 18;
  static constexpr std::uint32_t kDim = 1u << kDimBits;

  /// Hash of the template registry and dimension.
  static std::uint64_t version();
  /// Names of the registered templates, in registry order.
  static const std::vector<std::string>& templates();
};

/// Per-question facts shared by every decision on one (question, table).
struct QuestionAnalysis {
  struct Span {
    std::size_t start = 0;
    std::size_t len = 0;
  };

  std::vector<std::uint64_t> token_hash;
  std::vector<bool> numeric;
  std::vector<double> number;
  /// Mention positions of each column name, per column index.
  std::vector<std::vector<std::size_t>> mentions;
  /// Occurrences of vocabulary literals, per column index.
  std::vector<std::vector<Span>> literal_hits;
  /// Column index mentioned at each token, or -1.
  std::vector<int> column_at;

  QuestionAnalysis(const Tokens& question, const Table& table);
};

std::uint64_t hash_token(std::string_view s);

/// Stage-legal candidates in deterministic order. VAL candidates are question
/// spans of at most four tokens compatible with the condition column's kind,
/// plus vocabulary literals of that column found in the question. NUMBER
/// columns are offered as condition columns only when the question contains
/// a number, so every offered column has at least one value candidate.
std::vector<Action> candidate_actions(const State& state, const Table& table);
std::vector<Action> candidate_actions(const State& state, const Table& table,
                                      const QuestionAnalysis& qa);

/// φ(s, a).
FeatureVector extract_features(const State& state, const Action& action, const Table& table,
                               const QuestionAnalysis& qa);

/// Candidates together with their feature vectors.
struct CandidateSet {
  std::vector<Action> actions;
  std::vector<FeatureVector> features;
};

CandidateSet featurize(const State& state, const Table& table, const QuestionAnalysis& qa);

}  // namespace neil
