#include "neil/service.hpp"

#include <fstream>

#include <fmt/format.h>
#include <httplib.h>

#include "neil/error.hpp"
#include "neil/sql.hpp"

namespace neil::service {

using nlohmann::json;
namespace fs = std::filesystem;

json feedback_record(const std::string& session_id, const StepLog& step, const CollectedExample& ex) {
  json j = step_to_json(step);
  j["session_id"] = session_id;
  const json e = example_to_json(ex);
  for (const char* k : {"state", "action", "provenance", "iteration", "question_id"}) j[k] = e.at(k);
  return j;
}

CollectedExample example_from_record(const json& j) { return example_from_json(j); }

FeedbackStore::FeedbackStore(fs::path path) : path_(std::move(path)) {
  if (path_.has_parent_path()) fs::create_directories(path_.parent_path());
  std::ofstream touch(path_, std::ios::app);
  if (!touch) throw Error(fmt::format("cannot open feedback store {}", path_.string()));
}

void FeedbackStore::append(const std::vector<json>& records) {
  if (records.empty()) return;
  std::lock_guard lock(mu_);
  std::ofstream out(path_, std::ios::app);
  for (const auto& r : records) out << r.dump() << '\n';
  out.flush();
  if (!out) throw Error(fmt::format("write failed on {}", path_.string()));
}

std::vector<CollectedExample> FeedbackStore::read_all() const {
  std::lock_guard lock(mu_);
  return load_examples(path_);
}

json exec_result_to_json(const ExecResult& r) {
  if (const auto* s = std::get_if<Scalar>(&r)) return {{"kind", "scalar"}, {"value", s->value}};
  if (const auto* b = std::get_if<Bag>(&r)) {
    json items = json::array();
    for (const auto& v : b->items) items.push_back(value_to_json(v));
    return {{"kind", "bag"}, {"items", items}};
  }
  return {{"kind", "empty"}};
}

namespace {

Response error(int status, const std::string& msg, const std::string& field = {}) {
  json body{{"error", msg}};
  if (!field.empty()) body["field"] = field;
  return {status, body};
}

std::optional<json> parse_body(const std::string& body) {
  try {
    json j = json::parse(body);
    if (!j.is_object()) return std::nullopt;
    return j;
  } catch (const json::parse_error&) {
    return std::nullopt;
  }
}

json column_json(const ColumnSpec& c) { return {{"name", c.name}, {"kind", to_string(c.kind)}}; }

}  // namespace

struct SessionService::Session {
  std::string id;
  std::string question;
  std::shared_ptr<const Policy> policy;
  int policy_version = 0;
  const Table* table = nullptr;
  ParseSession parse;
  std::size_t stored = 0;  // log entries already in the feedback store
  json last_view;
  mutable std::mutex mu;

  Session(std::string id_, std::string q, std::shared_ptr<const Policy> p, int version, const Table& t,
          const InteractionConfig& cfg)
      : id(std::move(id_)),
        question(std::move(q)),
        policy(std::move(p)),
        policy_version(version),
        table(&t),
        parse(*policy, tokenize(question), t, cfg, id, version) {}
};

SessionService::SessionService(ServiceData data, ServiceConfig cfg)
    : data_(std::move(data)), cfg_(std::move(cfg)), store_(cfg_.data_dir / "feedback.jsonl") {
  cfg_.interaction.validate();
  cfg_.train.validate();
  fs::create_directories(cfg_.data_dir / "sessions");
  policy_ = std::make_shared<const Policy>(data_.serving ? *data_.serving : data_.init_policy);
  if (!data_.validation.empty()) val_accuracy_ = query_match_accuracy(*policy_, data_.validation, data_.tables);
}

SessionService::~SessionService() = default;

std::shared_ptr<const Policy> SessionService::serving_policy() const {
  std::lock_guard lock(policy_mu_);
  return policy_;
}

int SessionService::policy_version() const {
  std::lock_guard lock(policy_mu_);
  return version_;
}

std::shared_ptr<SessionService::Session> SessionService::find(const std::string& id) const {
  std::lock_guard lock(sessions_mu_);
  auto it = sessions_.find(id);
  return it == sessions_.end() ? nullptr : it->second;
}

json SessionService::view(const Session& s) const {
  const ParseSession& p = s.parse;
  json v{{"session_id", s.id},
         {"status", p.complete() ? "COMPLETE" : "ACTIVE"},
         {"question", s.question},
         {"tokens", p.cursor().question},
         {"table_id", s.table->id},
         {"policy_version", s.policy_version},
         {"partial_sql", render_partial(p.cursor().prefix)},
         {"interactions", p.interaction_count()}};
  json transcript = json::array();
  for (const auto& step : p.log()) transcript.push_back(step_to_json(step));
  v["transcript"] = transcript;
  v["pending"] = nullptr;
  if (const ClarificationQuestion* q = p.pending()) {
    json options = json::array();
    for (std::size_t i = 0; i < q->options.size(); ++i)
      options.push_back({{"index", i},
                         {"label", option_label(q->options[i])},
                         {"action", action_to_json(q->options[i])},
                         {"prob", q->option_probs[i]}});
    v["pending"] = {{"t", p.cursor().prefix.size() + 1},
                    {"slot", to_string(q->slot_kind)},
                    {"text", q->text},
                    {"options", options},
                    {"none_option", "None of the above options"}};
  }
  v["result"] = nullptr;
  if (p.complete()) {
    const SqlQuery q = p.query();
    json result{{"sql", render(q)}, {"query", query_to_json(q)}};
    try {
      result["execution"] = exec_result_to_json(execute(q, *s.table));
    } catch (const TypingError& e) {
      result["execution"] = {{"kind", "error"}, {"error", e.what()}};
    }
    v["result"] = result;
  }
  return v;
}

// Appends the steps executed since the last call and snapshots the view.
// Caller holds the session lock.
void SessionService::flush(Session& s) {
  const auto& log = s.parse.log();
  const auto& ex = s.parse.examples();
  std::vector<json> records;
  for (; s.stored < log.size(); ++s.stored) records.push_back(feedback_record(s.id, log[s.stored], ex[s.stored]));
  store_.append(records);
  s.last_view = view(s);
  const fs::path path = cfg_.data_dir / "sessions" / (s.id + ".json");
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp);
    out << s.last_view.dump(2) << '\n';
  }
  fs::rename(tmp, path);
}

Response SessionService::create_session(const std::string& body) {
  const auto j = parse_body(body);
  if (!j) return error(400, "body must be a JSON object");
  if (!j->contains("question") || !(*j)["question"].is_string())
    return error(400, "question must be a string", "question");
  if (!j->contains("table_id") || !(*j)["table_id"].is_string())
    return error(400, "table_id must be a string", "table_id");
  const std::string question = (*j)["question"];
  const std::string table_id = (*j)["table_id"];
  if (tokenize(question).empty()) return error(400, "question is empty", "question");
  auto t = data_.tables.find(table_id);
  if (t == data_.tables.end()) return error(404, fmt::format("unknown table {}", table_id), "table_id");

  std::shared_ptr<const Policy> policy;
  int version = 0;
  {
    std::lock_guard lock(policy_mu_);
    policy = policy_;
    version = version_;
  }
  std::string id;
  {
    std::lock_guard lock(sessions_mu_);
    id = fmt::format("s{:06d}", next_id_++);
  }
  auto s = std::make_shared<Session>(id, question, std::move(policy), version, t->second, cfg_.interaction);
  std::lock_guard lock(s->mu);
  s->parse.advance();
  flush(*s);
  {
    std::lock_guard slock(sessions_mu_);
    sessions_.emplace(id, s);
  }
  return {201, s->last_view};
}

Response SessionService::answer(const std::string& id, const std::string& body) {
  auto s = find(id);
  if (!s) return error(404, fmt::format("unknown session {}", id));
  const auto j = parse_body(body);
  if (!j) return error(400, "body must be a JSON object");
  const bool has_choice = j->contains("choice_index");
  const bool has_none = j->contains("none_of_above");
  if (has_choice == has_none) return error(400, "give exactly one of choice_index or none_of_above");
  UserResponse r;
  if (has_choice) {
    const json& c = (*j)["choice_index"];
    if (!c.is_number_integer() || c.get<long long>() < 0)
      return error(400, "choice_index must be a non-negative integer", "choice_index");
    r = Choice{c.get<std::size_t>()};
  } else {
    if ((*j)["none_of_above"] != true) return error(400, "none_of_above must be true", "none_of_above");
    r = NoneOfAbove{};
  }

  std::lock_guard lock(s->mu);
  const ClarificationQuestion* q = s->parse.pending();
  if (!q) return error(409, s->parse.complete() ? "session is complete" : "no pending question");
  if (const auto* c = std::get_if<Choice>(&r); c && c->index >= q->options.size())
    return error(400, fmt::format("choice_index {} out of range [0, {})", c->index, q->options.size()),
                 "choice_index");
  s->parse.answer(r);
  s->parse.advance();
  flush(*s);
  return {200, s->last_view};
}

Response SessionService::get_session(const std::string& id) const {
  auto s = find(id);
  if (!s) return error(404, fmt::format("unknown session {}", id));
  std::lock_guard lock(s->mu);
  return {200, s->last_view};
}

Response SessionService::retrain() {
  bool expected = false;
  if (!retraining_.compare_exchange_strong(expected, true)) return error(409, "retrain in progress");
  struct Release {
    std::atomic<bool>& flag;
    ~Release() { flag = false; }
  } release{retraining_};

  std::vector<CollectedExample> stored;
  try {
    stored = store_.read_all();
  } catch (const ParseError& e) {
    return error(500, fmt::format("feedback store unreadable: {}", e.what()));
  }
  std::size_t usable = 0;
  for (const auto& ex : stored) usable += ex.weight != 0.0;

  {
    std::lock_guard lock(policy_mu_);
    if (usable == trained_on_)
      return {200, {{"iteration", version_}, {"val_accuracy", val_accuracy_}, {"retrained", false},
                    {"examples", stored.size()}}};
  }

  std::vector<CollectedExample> all = data_.d0;
  all.insert(all.end(), stored.begin(), stored.end());
  TrainResult tr = train(data_.init_policy, all, data_.tables, cfg_.train, data_.validation);
  const double acc =
      data_.validation.empty() ? 0.0 : query_match_accuracy(tr.policy, data_.validation, data_.tables);

  std::lock_guard lock(policy_mu_);
  const double before = val_accuracy_;
  policy_ = std::make_shared<const Policy>(std::move(tr.policy));
  ++version_;
  val_accuracy_ = acc;
  trained_on_ = usable;
  return {200, {{"iteration", version_}, {"val_accuracy", acc}, {"val_accuracy_change", acc - before},
                {"retrained", true}, {"examples", stored.size()}}};
}

Response SessionService::list_tables() const {
  json out = json::array();
  for (const auto& [id, t] : data_.tables) {
    json cols = json::array();
    for (const auto& c : t.columns) cols.push_back(column_json(c));
    out.push_back({{"table_id", id}, {"columns", cols}, {"rows", t.rows.size()}});
  }
  return {200, out};
}

Response SessionService::table_preview(const std::string& id) const {
  auto it = data_.tables.find(id);
  if (it == data_.tables.end()) return error(404, fmt::format("unknown table {}", id));
  const Table& t = it->second;
  json cols = json::array(), rows = json::array();
  for (const auto& c : t.columns) cols.push_back(column_json(c));
  for (std::size_t i = 0; i < std::min(cfg_.preview_rows, t.rows.size()); ++i) {
    json row = json::array();
    for (const auto& v : t.rows[i]) row.push_back(value_to_json(v));
    rows.push_back(row);
  }
  return {200, {{"table_id", id}, {"columns", cols}, {"rows", rows}, {"total_rows", t.rows.size()}}};
}

void SessionService::mount(httplib::Server& server, const std::optional<fs::path>& static_dir) {
  auto send = [](httplib::Response& res, const Response& r) {
    res.status = r.status;
    res.set_content(r.body.dump(), "application/json");
  };
  server.Post("/sessions", [this, send](const httplib::Request& req, httplib::Response& res) {
    send(res, create_session(req.body));
  });
  server.Post(R"(/sessions/([^/]+)/answer)", [this, send](const httplib::Request& req, httplib::Response& res) {
    send(res, answer(req.matches[1], req.body));
  });
  server.Get(R"(/sessions/([^/]+))", [this, send](const httplib::Request& req, httplib::Response& res) {
    send(res, get_session(req.matches[1]));
  });
  server.Post("/admin/retrain",
              [this, send](const httplib::Request&, httplib::Response& res) { send(res, retrain()); });
  server.Get("/tables", [this, send](const httplib::Request&, httplib::Response& res) { send(res, list_tables()); });
  server.Get(R"(/tables/([^/]+))", [this, send](const httplib::Request& req, httplib::Response& res) {
    send(res, table_preview(req.matches[1]));
  });
  server.set_exception_handler([send](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
    try {
      std::rethrow_exception(ep);
    } catch (const std::exception& e) {
      send(res, error(500, e.what()));
    }
  });
  if (static_dir) server.set_mount_point("/", static_dir->string());
}

}  // namespace neil::service
