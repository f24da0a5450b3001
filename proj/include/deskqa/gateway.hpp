#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>

#include "deskqa/classify.hpp"
#include "deskqa/error.hpp"
#include "deskqa/harvest.hpp"
#include "deskqa/orchestrate.hpp"
#include "deskqa/store.hpp"
#include "deskqa/vision.hpp"

namespace deskqa::gateway {

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::filesystem::path data_dir = "data";

  orchestrate::OrchestratorConfig orchestrator;
  harvest::HarvestConfig harvest;
  classify::TrainOptions training;
  vision::PreprocessOptions vision;
  double gap_threshold = 0.8;
  std::size_t max_chunk_tokens = 512;
  double incident_similarity = 0.6;

  std::string agent_token;  // empty leaves agent and admin endpoints open
  std::string execution = "dry-run";  // or "subprocess"
  std::string ocr_command;
  std::filesystem::path ocr_fixtures;
  std::filesystem::path app_model;  // classifier trained on application labels
  std::size_t max_upload_bytes = 16u << 20;
  std::chrono::milliseconds max_wait{60000};

  /// Throws InvalidArgument naming the key for unknown keys or bad values.
  void set(std::string_view key, std::string_view value);

  /// Flat `key = value` lines; blank lines and lines starting with '#' are
  /// skipped. Errors name the offending line.
  static ServiceConfig load(const std::filesystem::path& path);
  void load_into(const std::filesystem::path& path);

  void validate() const;
};

struct Upload {
  std::string filename;
  std::string content_type;
  std::string content;
};

struct Request {
  std::string method;
  std::string path;
  std::map<std::string, std::string> query;
  std::map<std::string, std::string> headers;  // lowercase names
  std::string body;
  std::optional<Upload> upload;  // the multipart "file" part

  std::string header(std::string_view name) const;
};

struct Response {
  int status = 200;
  Json body = Json::object();
  std::optional<std::string> raw;  // non-JSON payload, e.g. JSONL export
  std::string content_type = "application/json";
};

int http_status(ErrorCode code);

/// {"code","message","details"} with the status matching the code.
Response api_error(int status, std::string code, std::string message, Json details = Json::object());
Response api_error(const Error& error);

/// "30s", "500ms", "2m" or plain seconds.
std::chrono::milliseconds parse_duration(std::string_view text);

/// The HTTP-free core of the service: routes requests onto the
/// orchestrator, harvester, store and trainer. Safe to call concurrently.
class Service {
 public:
  explicit Service(ServiceConfig config, Clock clock = system_clock());
  ~Service();

  Response handle(const Request& request);

  Json health() const;

  /// Trains on the current snapshot, saves the model next to the log and
  /// publishes it. Fewer than two answer units is FailedPrecondition.
  Json train();

  /// Rebuilds index and vocabulary from the store, keeping the model.
  void refresh();

  Store& store() { return *store_; }
  orchestrate::Orchestrator& orchestrator() { return *orchestrator_; }
  harvest::Harvester& harvester() { return *harvester_; }
  orchestrate::AgentQueue& queue() { return queue_; }
  const ServiceConfig& config() const { return config_; }

 private:
  struct Idempotent;

  Response dispatch(const Request& request);
  Response with_idempotency(const Request& request);
  bool authorized(const Request& request) const;

  Response create_session();
  Response get_session(const std::string& id);
  Response post_message(const std::string& id, const Json& body);
  Response post_feedback(const std::string& id, const Json& body);
  Response post_handoff(const std::string& id);
  Response post_close(const std::string& id);
  Response agent_queue(const Request& request);
  Response agent_message(const std::string& id, const Json& body);
  Response review_list(const Request& request);
  Response review_export();
  Response review_decide(const std::string& id, const Json& body);
  Response ingest_documents(const Json& body);
  Response ingest_transcripts(const Json& body);
  Response ingest_incidents(const Json& body);
  Response upload_image(const Request& request);

  Json session_view(const orchestrate::Session& s) const;
  std::filesystem::path image_path(const std::string& id) const;

  ServiceConfig config_;
  std::unique_ptr<Store> store_;
  orchestrate::KnowledgeSource knowledge_;
  orchestrate::AgentQueue queue_;
  std::unique_ptr<orchestrate::ExecutionAdapter> adapter_;
  std::unique_ptr<harvest::Harvester> harvester_;
  std::unique_ptr<orchestrate::Orchestrator> orchestrator_;
  std::unique_ptr<vision::OcrEngine> ocr_;
  std::shared_ptr<const classify::QuestionClassifier> app_model_;
  std::shared_ptr<const classify::LinearModel> model_;

  mutable std::mutex model_mu_;  // serializes training and publishing
  std::mutex idem_mu_;
  std::map<std::string, std::shared_ptr<Idempotent>> idempotent_;
  std::vector<std::string> idem_order_;
};

/// cpp-httplib front end. The constructor binds, so a busy port fails
/// there with Unavailable.
class HttpServer {
 public:
  HttpServer(Service& service, const std::string& host, int port);
  ~HttpServer();

  int port() const { return port_; }
  void run();  // blocks until stop()
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  int port_ = 0;
};

}  // namespace deskqa::gateway
