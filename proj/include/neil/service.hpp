#pragma once

// Live parsing sessions over HTTP/JSON. A human answers the clarification
// questions; every executed step lands in an append-only feedback store that
// a retrain folds into the serving policy.

#include <atomic>
#include <cstddef>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "neil/corpus.hpp"
#include "neil/example.hpp"
#include "neil/interaction.hpp"
#include "neil/policy.hpp"

namespace httplib {
class Server;
}

namespace neil::service {

/// One store line: the transcript step fields plus session_id and the
/// collected example (state, action, provenance, iteration, question_id).
nlohmann::json feedback_record(const std::string& session_id, const StepLog& step, const CollectedExample& ex);
CollectedExample example_from_record(const nlohmann::json& j);

/// Append-only JSON-lines file. Appends are serialized and flushed per call.
class FeedbackStore {
 public:
  explicit FeedbackStore(std::filesystem::path path);

  void append(const std::vector<nlohmann::json>& records);
  /// Throws ParseError naming the line of a malformed record.
  std::vector<CollectedExample> read_all() const;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  mutable std::mutex mu_;
};

nlohmann::json exec_result_to_json(const ExecResult& r);

struct ServiceConfig {
  InteractionConfig interaction;
  TrainConfig train;
  /// Holds feedback.jsonl and sessions/<id>.json snapshots.
  std::filesystem::path data_dir = "service-data";
  /// Rows shown by the table preview.
  std::size_t preview_rows = 10;
};

struct ServiceData {
  TableSet tables;
  /// Initial training set; retraining starts from `init_policy` on d0 plus the store.
  std::vector<CollectedExample> d0;
  std::vector<CorpusItem> validation;
  Policy init_policy;
  /// Serving policy at startup; defaults to `init_policy`.
  std::optional<Policy> serving;
};

struct Response {
  int status = 200;
  nlohmann::json body;
};

class SessionService {
 public:
  SessionService(ServiceData data, ServiceConfig cfg);
  ~SessionService();

  /// POST /sessions {question, table_id}
  Response create_session(const std::string& body);
  /// POST /sessions/{id}/answer {choice_index} | {none_of_above: true}
  Response answer(const std::string& id, const std::string& body);
  /// GET /sessions/{id}
  Response get_session(const std::string& id) const;
  /// POST /admin/retrain
  Response retrain();
  /// GET /tables
  Response list_tables() const;
  /// GET /tables/{id}
  Response table_preview(const std::string& id) const;

  /// Wires the routes above, plus static files from `static_dir` when given.
  void mount(httplib::Server& server, const std::optional<std::filesystem::path>& static_dir = {});

  std::shared_ptr<const Policy> serving_policy() const;
  int policy_version() const;
  const FeedbackStore& store() const { return store_; }

 private:
  struct Session;

  std::shared_ptr<Session> find(const std::string& id) const;
  nlohmann::json view(const Session& s) const;
  void flush(Session& s);

  ServiceData data_;
  ServiceConfig cfg_;
  FeedbackStore store_;

  mutable std::mutex sessions_mu_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  std::size_t next_id_ = 1;

  mutable std::mutex policy_mu_;
  std::shared_ptr<const Policy> policy_;
  int version_ = 0;
  double val_accuracy_ = 0.0;
  std::size_t trained_on_ = 0;  // nonzero-weight store examples behind the serving policy
  std::atomic<bool> retraining_{false};
};

}  // namespace neil::service
