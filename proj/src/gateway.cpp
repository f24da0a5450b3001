#include "deskqa/gateway.hpp"

#include <httplib.h>

#include <algorithm>
#include <charconv>
#include <fstream>
#include <regex>
#include <sstream>

#include "deskqa/ingest.hpp"
#include "deskqa/text.hpp"

namespace deskqa::gateway {

namespace fs = std::filesystem;
using orchestrate::Phase;

namespace {

constexpr std::size_t kIdempotencyCapacity = 4096;
const char* const kModelFile = "model.json";

double parse_double(std::string_view key, std::string_view value) {
  const std::string s(trim(value));
  std::size_t used = 0;
  double v = 0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (s.empty() || used != s.size()) {
    throw Error(ErrorCode::InvalidArgument, "config key " + std::string(key) + " needs a number", std::string(key));
  }
  return v;
}

std::uint64_t parse_uint(std::string_view key, std::string_view value) {
  const std::string s(trim(value));
  std::uint64_t v = 0;
  auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || end != s.data() + s.size()) {
    throw Error(ErrorCode::InvalidArgument, "config key " + std::string(key) + " needs a non-negative integer",
                std::string(key));
  }
  return v;
}

bool parse_bool(std::string_view key, std::string_view value) {
  const std::string s = casefold(trim(value));
  if (s == "true" || s == "yes" || s == "1" || s == "on") return true;
  if (s == "false" || s == "no" || s == "0" || s == "off") return false;
  throw Error(ErrorCode::InvalidArgument, "config key " + std::string(key) + " needs true or false", std::string(key));
}

std::vector<std::string> split_path(std::string_view path) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < path.size()) {
    while (i < path.size() && path[i] == '/') ++i;
    std::size_t j = i;
    while (j < path.size() && path[j] != '/') ++j;
    if (j > i) out.emplace_back(path.substr(i, j - i));
    i = j;
  }
  return out;
}

Json parse_body(const Request& r) {
  if (trim(r.body).empty()) return Json::object();
  Json j;
  try {
    j = Json::parse(r.body);
  } catch (const Json::parse_error& e) {
    throw Error(ErrorCode::ParseError, std::string("request body is not JSON: ") + e.what(),
                std::to_string(e.byte));
  }
  if (!j.is_object()) throw Error(ErrorCode::InvalidArgument, "request body must be a JSON object");
  return j;
}

std::optional<std::string> opt_string(const Json& body, const char* field) {
  auto it = body.find(field);
  if (it == body.end() || it->is_null()) return std::nullopt;
  if (!it->is_string()) throw Error(ErrorCode::InvalidArgument, std::string(field) + " must be a string", field);
  return it->get<std::string>();
}

std::string req_string(const Json& body, const char* field) {
  auto v = opt_string(body, field);
  if (!v) throw Error(ErrorCode::InvalidArgument, std::string("missing field ") + field, field);
  return *v;
}

Response ok(Json body, int status = 200) {
  Response r;
  r.status = status;
  r.body = std::move(body);
  return r;
}

Polarity polarity_from(const Json& body) {
  const std::string p = casefold(req_string(body, "polarity"));
  if (p == "positive" || p == "up" || p == "+1") return Polarity::Positive;
  if (p == "negative" || p == "down" || p == "-1") return Polarity::Negative;
  throw Error(ErrorCode::InvalidArgument, "polarity must be positive or negative", "polarity");
}

/// Stands in for the application classifier when none is configured.
class NoApplications final : public classify::QuestionClassifier {
 public:
  classify::Prediction predict(std::string_view, std::size_t) const override {
    classify::Prediction p;
    p.no_signal = true;
    return p;
  }
  std::vector<std::string> class_ids() const override { return {}; }
};

std::vector<std::uint8_t> read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::NotFound, "unknown image", path.filename().string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Json chunk_ids(const std::vector<Chunk>& chunks) {
  Json ids = Json::array();
  for (const auto& c : chunks) ids.push_back(c.id);
  return ids;
}

}  // namespace

// ---- configuration ----

void ServiceConfig::set(std::string_view raw_key, std::string_view value) {
  const std::string key = casefold(trim(raw_key));
  const std::string v = trim(value);
  auto& o = orchestrator;
  if (key == "host") host = v;
  else if (key == "port") port = static_cast<int>(parse_uint(key, v));
  else if (key == "data_dir") data_dir = v;
  else if (key == "theta_answer") o.theta_answer = parse_double(key, v);
  else if (key == "theta_disambig") o.theta_disambig = parse_double(key, v);
  else if (key == "top_k") o.top_k = parse_uint(key, v);
  else if (key == "search_k" || key == "k") o.search_k = parse_uint(key, v);
  else if (key == "max_clarify_turns") o.max_clarify_turns = parse_uint(key, v);
  else if (key == "handoff_on_negative") o.handoff_on_negative = parse_bool(key, v);
  else if (key == "w_promote") harvest.w_promote = parse_uint(key, v);
  else if (key == "reject_suppression_days") {
    harvest.reject_suppression = static_cast<Timestamp>(parse_double(key, v) * 24 * 3600 * 1e6);
  } else if (key == "min_agent_tokens") harvest.min_agent_tokens = parse_uint(key, v);
  else if (key == "ack_cues") {
    harvest.ack_cues.clear();
    for (const auto& cue : tokenize(v)) harvest.ack_cues.push_back(cue);
  } else if (key == "ack_cues_file") harvest.ack_cues = harvest::HarvestConfig::load_cues(v);
  else if (key == "gap_threshold") gap_threshold = parse_double(key, v);
  else if (key == "max_chunk_tokens") max_chunk_tokens = parse_uint(key, v);
  else if (key == "incident_similarity") incident_similarity = parse_double(key, v);
  else if (key == "sigma1" || key == "dog_sigma1") vision.dog.sigma1 = parse_double(key, v);
  else if (key == "sigma2" || key == "dog_sigma2") vision.dog.sigma2 = parse_double(key, v);
  else if (key == "dog_gain") vision.dog.gain = parse_double(key, v);
  else if (key == "upscale") vision.upscale = static_cast<int>(parse_uint(key, v));
  else if (key == "epochs") training.epochs = static_cast<int>(parse_uint(key, v));
  else if (key == "lambda") training.lambda = parse_double(key, v);
  else if (key == "seed") training.seed = parse_uint(key, v);
  else if (key == "agent_token") agent_token = v;
  else if (key == "execution") execution = v;
  else if (key == "ocr_command") ocr_command = v;
  else if (key == "ocr_fixtures") ocr_fixtures = v;
  else if (key == "app_model") app_model = v;
  else if (key == "max_upload_bytes") max_upload_bytes = parse_uint(key, v);
  else if (key == "max_wait") max_wait = parse_duration(v);
  else throw Error(ErrorCode::InvalidArgument, "unknown config key " + key, key);
}

void ServiceConfig::load_into(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::NotFound, "config file not found: " + path.string(), path.string());
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw Error(ErrorCode::ParseError, path.string() + ":" + std::to_string(line_no) + ": expected key = value",
                  std::to_string(line_no));
    }
    try {
      set(t.substr(0, eq), t.substr(eq + 1));
    } catch (const Error& e) {
      throw Error(e.code(), path.string() + ":" + std::to_string(line_no) + ": " + e.what(),
                  std::to_string(line_no));
    }
  }
}

ServiceConfig ServiceConfig::load(const fs::path& path) {
  ServiceConfig c;
  c.load_into(path);
  return c;
}

void ServiceConfig::validate() const {
  orchestrator.validate();
  if (port < 0 || port > 65535) throw Error(ErrorCode::InvalidArgument, "port out of range", "port");
  if (harvest.w_promote == 0) throw Error(ErrorCode::InvalidArgument, "w_promote must be positive", "w_promote");
  if (!(gap_threshold > 0)) throw Error(ErrorCode::InvalidArgument, "gap_threshold must be positive", "gap_threshold");
  if (max_chunk_tokens == 0) {
    throw Error(ErrorCode::InvalidArgument, "max_chunk_tokens must be positive", "max_chunk_tokens");
  }
  if (!(incident_similarity > 0 && incident_similarity <= 1)) {
    throw Error(ErrorCode::InvalidArgument, "incident_similarity must be in (0, 1]", "incident_similarity");
  }
  if (!(vision.dog.sigma1 > 0 && vision.dog.sigma2 > vision.dog.sigma1)) {
    throw Error(ErrorCode::InvalidArgument, "need 0 < sigma1 < sigma2", "sigma1");
  }
  if (vision.upscale < 1) throw Error(ErrorCode::InvalidArgument, "upscale must be at least 1", "upscale");
  if (training.epochs < 1) throw Error(ErrorCode::InvalidArgument, "epochs must be positive", "epochs");
  if (!(training.lambda > 0)) throw Error(ErrorCode::InvalidArgument, "lambda must be positive", "lambda");
  if (execution != "dry-run" && execution != "subprocess") {
    throw Error(ErrorCode::InvalidArgument, "execution must be dry-run or subprocess", "execution");
  }
}

// ---- plumbing ----

std::string Request::header(std::string_view name) const {
  auto it = headers.find(casefold(name));
  return it == headers.end() ? std::string() : it->second;
}

int http_status(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument:
    case ErrorCode::ParseError: return 400;
    case ErrorCode::NotFound: return 404;
    case ErrorCode::Conflict:
    case ErrorCode::FailedPrecondition: return 409;
    case ErrorCode::Unavailable: return 503;
    case ErrorCode::Io: return 500;
  }
  return 500;
}

Response api_error(int status, std::string code, std::string message, Json details) {
  Response r;
  r.status = status;
  r.body = Json{{"code", std::move(code)}, {"message", std::move(message)}, {"details", std::move(details)}};
  return r;
}

Response api_error(const Error& error) {
  Json details = Json::object();
  if (!error.details().empty()) details["context"] = error.details();
  return api_error(http_status(error.code()), to_string(error.code()), error.what(), std::move(details));
}

std::chrono::milliseconds parse_duration(std::string_view text) {
  static const std::regex re(R"(^\s*(\d+(?:\.\d+)?)\s*(ms|s|m)?\s*$)");
  std::cmatch m;
  const std::string s(text);
  if (!std::regex_match(s.c_str(), m, re)) {
    throw Error(ErrorCode::InvalidArgument, "bad duration: " + s, s);
  }
  const double n = std::stod(m[1].str());
  const std::string unit = m[2].matched ? m[2].str() : "s";
  const double ms = unit == "ms" ? n : unit == "m" ? n * 60000 : n * 1000;
  return std::chrono::milliseconds(static_cast<std::int64_t>(ms));
}

struct Service::Idempotent {
  std::mutex mu;
  std::uint64_t body_hash = 0;
  std::optional<Response> response;
};

// ---- service ----

Service::Service(ServiceConfig config, Clock clock) : config_(std::move(config)) {
  config_.validate();
  std::error_code ec;
  fs::create_directories(config_.data_dir, ec);
  if (ec) throw Error(ErrorCode::Io, "cannot create data dir " + config_.data_dir.string() + ": " + ec.message());
  store_ = Store::open(config_.data_dir, std::move(clock));

  const fs::path model_path = config_.data_dir / kModelFile;
  if (fs::exists(model_path)) {
    try {
      model_ = std::make_shared<classify::LinearModel>(classify::LinearModel::load(model_path));
    } catch (const Error&) {
      throw;
    } catch (const std::exception& e) {
      throw Error(ErrorCode::ParseError, "corrupt model file " + model_path.string() + ": " + e.what());
    }
  }
  if (!config_.app_model.empty()) {
    app_model_ = std::make_shared<classify::LinearModel>(classify::LinearModel::load(config_.app_model));
  } else {
    app_model_ = std::make_shared<NoApplications>();
  }
  if (!config_.ocr_command.empty()) {
    ocr_ = std::make_unique<vision::SubprocessOcrEngine>(config_.ocr_command);
  } else if (!config_.ocr_fixtures.empty()) {
    ocr_ = std::make_unique<vision::FixtureOcrEngine>(vision::FixtureOcrEngine::from_directory(config_.ocr_fixtures));
  }
  if (config_.execution == "subprocess") {
    adapter_ = std::make_unique<orchestrate::SubprocessExecutionAdapter>();
  } else {
    adapter_ = std::make_unique<orchestrate::FakeExecutionAdapter>();
  }

  refresh();
  harvester_ = std::make_unique<harvest::Harvester>(*store_, config_.harvest);
  orchestrator_ = std::make_unique<orchestrate::Orchestrator>(*store_, knowledge_, *adapter_, queue_,
                                                              config_.orchestrator, harvester_.get());
  // Sessions handed off before a restart go back into the inbox.
  for (const auto& id : orchestrator_->session_ids()) {
    const auto s = orchestrator_->session(id);
    if (s.phase == Phase::HandedOff) {
      orchestrate::QueueEntry e{s.id, s.active_question, store_->now(), s.assigned_agent};
      queue_.enqueue(e);
    }
  }
}

Service::~Service() = default;

void Service::refresh() {
  std::lock_guard lock(model_mu_);
  knowledge_.publish(orchestrate::build_knowledge(*store_, model_));
}

Json Service::train() {
  std::lock_guard lock(model_mu_);
  const auto snap = store_->snapshot();
  if (snap->units.size() < 2) {
    throw Error(ErrorCode::FailedPrecondition, "training needs at least two answer units",
                std::to_string(snap->units.size()));
  }
  auto model = std::make_shared<classify::LinearModel>(
      classify::train(classify::training_set_from(*snap), config_.training, model_.get()));
  model->set_snapshot_id(snap->id);
  model->save(config_.data_dir / kModelFile);
  model_ = model;
  knowledge_.publish(orchestrate::build_knowledge(*store_, model_));
  const auto& meta = model->metadata();
  return Json{{"snapshot_id", meta.snapshot_id},
              {"classes", model->class_ids().size()},
              {"epochs", meta.epochs},
              {"final_objective", meta.final_objective},
              {"skipped_empty", meta.skipped_empty}};
}

Json Service::health() const {
  const auto k = knowledge_.current();
  const auto snap = store_->snapshot();
  std::shared_ptr<const classify::LinearModel> model;
  {
    std::lock_guard lock(model_mu_);
    model = model_;
  }
  Json m{{"trained", model != nullptr}, {"classes", model ? model->class_ids().size() : 0}};
  if (model) {
    m["snapshot_id"] = model->metadata().snapshot_id;
    m["needs_retrain"] = classify::needs_retrain(*model, *snap).needed;
  } else {
    m["snapshot_id"] = nullptr;
    m["needs_retrain"] = snap->units.size() >= 2;
  }
  Json index{{"built", k && k->index != nullptr},
             {"chunks", k && k->index ? k->index->size() : 0},
             {"snapshot_id", k ? k->snapshot->id : 0}};
  return Json{{"status", "ok"},
              {"snapshot_id", snap->id},
              {"units", snap->units.size()},
              {"model", std::move(m)},
              {"index", std::move(index)},
              {"ocr", ocr_ ? ocr_->id() : std::string()},
              {"sessions", orchestrator_->session_ids().size()},
              {"queue", queue_.entries().size()}};
}

bool Service::authorized(const Request& r) const {
  if (config_.agent_token.empty()) return true;
  if (r.header("x-agent-token") == config_.agent_token) return true;
  const std::string auth = r.header("authorization");
  return auth == "Bearer " + config_.agent_token;
}

Response Service::handle(const Request& request) {
  try {
    if (request.method == "POST" && !request.header("idempotency-key").empty()) return with_idempotency(request);
    return dispatch(request);
  } catch (const Error& e) {
    return api_error(e);
  } catch (const Json::exception& e) {
    return api_error(400, to_string(ErrorCode::InvalidArgument), e.what());
  } catch (const std::exception& e) {
    return api_error(500, "internal", e.what());
  }
}

Response Service::with_idempotency(const Request& request) {
  const std::string key = request.method + " " + request.path + " " + request.header("idempotency-key");
  const std::uint64_t body_hash =
      fnv1a64(request.body + (request.upload ? "\x1f" + request.upload->content : std::string()));
  std::shared_ptr<Idempotent> entry;
  {
    std::lock_guard lock(idem_mu_);
    auto& slot = idempotent_[key];
    if (!slot) {
      slot = std::make_shared<Idempotent>();
      slot->body_hash = body_hash;
      idem_order_.push_back(key);
      if (idem_order_.size() > kIdempotencyCapacity) {
        idempotent_.erase(idem_order_.front());
        idem_order_.erase(idem_order_.begin());
      }
    }
    entry = slot;
  }
  std::lock_guard lock(entry->mu);
  if (entry->body_hash != body_hash) {
    return api_error(409, to_string(ErrorCode::Conflict), "idempotency key reused with a different request",
                     Json{{"context", request.header("idempotency-key")}});
  }
  if (entry->response) return *entry->response;
  Response r;
  try {
    r = dispatch(request);
  } catch (const Error& e) {
    r = api_error(e);
  }
  // Server-side failures may be transient; let the client retry them.
  if (r.status < 500) entry->response = r;
  return r;
}

Response Service::dispatch(const Request& r) {
  const auto seg = split_path(r.path);
  const bool get = r.method == "GET";
  const bool post = r.method == "POST";
  auto method_not_allowed = [&] {
    return api_error(405, "method_not_allowed", r.method + " not allowed on " + r.path);
  };
  auto forbidden = [&] {
    return api_error(401, "unauthenticated", "missing or wrong agent token");
  };
  const std::size_t n = seg.size();

  if (n == 1 && seg[0] == "health") return get ? ok(health()) : method_not_allowed();

  if (n >= 1 && seg[0] == "sessions") {
    if (n == 1) return post ? create_session() : method_not_allowed();
    if (n == 2) return get ? get_session(seg[1]) : method_not_allowed();
    if (n == 3) {
      if (!post) return method_not_allowed();
      const std::string& action = seg[2];
      if (action == "messages") return post_message(seg[1], parse_body(r));
      if (action == "feedback") return post_feedback(seg[1], parse_body(r));
      if (action == "handoff") return post_handoff(seg[1]);
      if (action == "close") return post_close(seg[1]);
    }
  }

  if (n == 1 && seg[0] == "images") return post ? upload_image(r) : method_not_allowed();

  const bool admin = n >= 1 && (seg[0] == "agent" || seg[0] == "review" || seg[0] == "ingest" || seg[0] == "train");
  if (admin && !authorized(r)) return forbidden();

  if (n == 2 && seg[0] == "agent" && seg[1] == "queue") return get ? agent_queue(r) : method_not_allowed();
  if (n == 3 && seg[0] == "agent" && seg[1] == "sessions") return get ? get_session(seg[2]) : method_not_allowed();
  if (n == 4 && seg[0] == "agent" && seg[1] == "sessions") {
    if (!post) return method_not_allowed();
    if (seg[3] == "messages") return agent_message(seg[2], parse_body(r));
    if (seg[3] == "close") return post_close(seg[2]);
  }
  if (n == 2 && seg[0] == "review" && seg[1] == "candidates") return get ? review_list(r) : method_not_allowed();
  if (n == 2 && seg[0] == "review" && seg[1] == "export") return get ? review_export() : method_not_allowed();
  if (n == 2 && seg[0] == "review") return post ? review_decide(seg[1], parse_body(r)) : method_not_allowed();
  if (n == 2 && seg[0] == "ingest") {
    if (!post) return method_not_allowed();
    if (seg[1] == "documents") return ingest_documents(parse_body(r));
    if (seg[1] == "transcripts") return ingest_transcripts(parse_body(r));
    if (seg[1] == "incidents") return ingest_incidents(parse_body(r));
  }
  if (n == 1 && seg[0] == "train") return post ? ok(train()) : method_not_allowed();

  return api_error(404, "not_found", "no route for " + r.method + " " + r.path, Json{{"context", r.path}});
}

Json Service::session_view(const orchestrate::Session& s) const {
  Json turns = Json::array();
  for (const auto& t : s.turns) turns.push_back(t);
  Json j{{"id", s.id}, {"phase", orchestrate::to_string(s.phase)}, {"turns", std::move(turns)}};
  if (s.phase == Phase::Disambiguating) j["options"] = s.options();
  if (s.assigned_agent) j["assigned_agent"] = *s.assigned_agent;
  return j;
}

Response Service::create_session() {
  const auto id = orchestrator_->create_session();
  return ok(session_view(orchestrator_->session(id)), 201);
}

Response Service::get_session(const std::string& id) { return ok(session_view(orchestrator_->session(id))); }

Response Service::post_message(const std::string& id, const Json& body) {
  const bool has_text = body.contains("text");
  const bool has_option = body.contains("option");
  const bool has_image = body.contains("image");
  if (has_text + has_option + has_image != 1) {
    throw Error(ErrorCode::InvalidArgument, "send exactly one of text, option or image");
  }
  std::vector<orchestrate::Turn> turns;
  Json extra = Json::object();
  if (has_text) {
    turns = orchestrator_->handle_message(id, req_string(body, "text"));
  } else if (has_option) {
    const auto s = orchestrator_->session(id);
    if (s.phase != Phase::Disambiguating) {
      throw Error(ErrorCode::FailedPrecondition, "session has no pending options", orchestrate::to_string(s.phase));
    }
    const auto options = s.options();
    const Json& o = body["option"];
    std::string choice;
    if (o.is_number_unsigned() && o.get<std::size_t>() < options.size()) {
      choice = options[o.get<std::size_t>()];
    } else if (o.is_string() && std::find(options.begin(), options.end(), o.get<std::string>()) != options.end()) {
      choice = o.get<std::string>();
    } else {
      return api_error(400, to_string(ErrorCode::InvalidArgument), "option is not one of the pending options",
                       Json{{"options", options}});
    }
    turns = orchestrator_->handle_message(id, choice);
  } else {
    const std::string image_id = req_string(body, "image");
    if (!orchestrator_->has_session(id)) throw Error(ErrorCode::NotFound, "unknown session " + id, id);
    if (orchestrator_->session(id).phase == Phase::Closed) {
      throw Error(ErrorCode::FailedPrecondition, "session is closed", id);
    }
    if (!ocr_) throw Error(ErrorCode::Unavailable, "no OCR engine configured");
    const auto rgb = vision::decode_image(read_bytes(image_path(image_id)));
    const auto binary = vision::preprocess(rgb, config_.vision);
    const auto ocr = ocr_->recognize(binary);
    const auto k = knowledge_.current();
    const vision::Vocabulary* vocab = k->vocabulary->size() > 0 ? k->vocabulary.get() : nullptr;
    const auto query = vision::route_screenshot(ocr, *app_model_, vocab);
    turns = orchestrator_->handle_query(id, query);
    extra["query"] = query;
  }
  const auto s = orchestrator_->session(id);
  Json out_turns = Json::array();
  for (const auto& t : turns) out_turns.push_back(t);
  Json j{{"session", id}, {"phase", orchestrate::to_string(s.phase)}, {"turns", std::move(out_turns)}};
  if (s.phase == Phase::Disambiguating) j["options"] = s.options();
  for (auto& [key, value] : extra.items()) j[key] = value;
  return ok(std::move(j));
}

Response Service::post_feedback(const std::string& id, const Json& body) {
  if (!body.contains("turn") || !body["turn"].is_number_unsigned()) {
    throw Error(ErrorCode::InvalidArgument, "turn must be a non-negative integer", "turn");
  }
  const auto event = orchestrator_->record_feedback(id, body["turn"].get<std::size_t>(), polarity_from(body),
                                                    opt_string(body, "target"));
  const auto s = orchestrator_->session(id);
  return ok(Json{{"event", event}, {"phase", orchestrate::to_string(s.phase)}});
}

Response Service::post_handoff(const std::string& id) {
  const bool fresh = orchestrator_->handoff(id);
  const auto s = orchestrator_->session(id);
  return ok(Json{{"handed_off", fresh}, {"phase", orchestrate::to_string(s.phase)}});
}

Response Service::post_close(const std::string& id) {
  const bool fresh = orchestrator_->close(id);
  return ok(Json{{"closed", fresh}, {"phase", orchestrate::to_string(Phase::Closed)}});
}

Response Service::agent_queue(const Request& r) {
  std::chrono::milliseconds wait{0};
  if (auto it = r.query.find("wait"); it != r.query.end()) wait = std::min(parse_duration(it->second), config_.max_wait);
  std::uint64_t since = queue_.version();
  if (auto it = r.query.find("since"); it != r.query.end()) {
    const auto& s = it->second;
    auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), since);
    if (ec != std::errc() || end != s.data() + s.size()) {
      throw Error(ErrorCode::InvalidArgument, "since must be a queue version", "since");
    }
  } else {
    wait = std::chrono::milliseconds(0);
  }
  auto [entries, version] = queue_.wait(since, wait);
  Json list = Json::array();
  for (const auto& e : entries) list.push_back(e);
  return ok(Json{{"version", version}, {"entries", std::move(list)}});
}

Response Service::agent_message(const std::string& id, const Json& body) {
  const std::string agent = opt_string(body, "agent").value_or("agent");
  const auto turn = orchestrator_->agent_message(id, agent, req_string(body, "text"));
  return ok(Json{{"turn", turn}, {"phase", orchestrate::to_string(Phase::HandedOff)}});
}

Response Service::review_list(const Request& r) {
  bool ready = false;
  if (auto it = r.query.find("ready"); it != r.query.end()) ready = parse_bool("ready", it->second);
  Json list = Json::array();
  for (const auto& c : harvester_->queue(ready)) list.push_back(c);
  return ok(Json{{"candidates", std::move(list)}});
}

Response Service::review_export() {
  std::ostringstream os;
  harvester_->export_jsonl(os);
  Response r;
  r.raw = os.str();
  r.content_type = "application/x-ndjson";
  return r;
}

Response Service::review_decide(const std::string& id, const Json& body) {
  const std::string decision = casefold(req_string(body, "decision"));
  if (decision != "approve" && decision != "reject") {
    throw Error(ErrorCode::InvalidArgument, "decision must be approve or reject", "decision");
  }
  harvest::Decision d{decision == "approve", opt_string(body, "question"), opt_string(body, "answer")};
  const auto out = harvester_->review(id, d, opt_string(body, "reviewer").value_or("agent"));
  Json j{{"candidate", out.candidate}, {"unit_id", out.unit_id ? Json(*out.unit_id) : Json(nullptr)}};
  if (out.unit_id) refresh();
  j["needs_retrain"] = health()["model"]["needs_retrain"];
  return ok(std::move(j));
}

Response Service::ingest_documents(const Json& body) {
  const std::string source = req_string(body, "source_id");
  const std::string content = req_string(body, "content");
  const std::string format = casefold(opt_string(body, "format").value_or("html"));
  ingest::StructuredDoc doc;
  if (format == "html") doc = ingest::parse_html(content);
  else if (format == "markdown" || format == "md") doc = ingest::parse_markdown(content);
  else if (format == "text" || format == "txt") doc = ingest::induce_structure(content);
  else throw Error(ErrorCode::InvalidArgument, "format must be html, markdown or text", "format");
  auto chunks = ingest::chunk_document(doc, source, config_.max_chunk_tokens);
  Json ids = chunk_ids(chunks);
  if (!chunks.empty()) store_->put_chunks(std::move(chunks));
  refresh();
  return ok(Json{{"source_id", source}, {"chunks", std::move(ids)}}, 201);
}

Response Service::ingest_transcripts(const Json& body) {
  const std::string source = req_string(body, "source_id");
  std::vector<ingest::TimedWord> words;
  if (auto it = body.find("words"); it != body.end()) {
    if (!it->is_array()) throw Error(ErrorCode::InvalidArgument, "words must be an array", "words");
    for (const auto& w : *it) {
      words.push_back({w.at("word").get<std::string>(), w.at("start").get<double>(), w.at("end").get<double>()});
    }
  } else {
    words = ingest::parse_transcript_jsonl(req_string(body, "jsonl"));
  }
  auto chunks = ingest::segment_transcript(words, source, config_.gap_threshold, config_.max_chunk_tokens);
  Json ids = chunk_ids(chunks);
  if (!chunks.empty()) store_->put_chunks(std::move(chunks));
  refresh();
  return ok(Json{{"source_id", source}, {"chunks", std::move(ids)}}, 201);
}

Response Service::ingest_incidents(const Json& body) {
  std::vector<ingest::IncidentRecord> records;
  if (auto it = body.find("incidents"); it != body.end()) {
    if (!it->is_array()) throw Error(ErrorCode::InvalidArgument, "incidents must be an array", "incidents");
    for (const auto& r : *it) {
      records.push_back({r.at("id").get<std::string>(), r.at("problem").get<std::string>(),
                         r.value("resolution", std::string())});
    }
  } else {
    records = ingest::parse_incidents_csv(req_string(body, "csv"));
  }
  double similarity = config_.incident_similarity;
  if (auto it = body.find("similarity"); it != body.end()) similarity = it->get<double>();
  const auto clusters = ingest::mine_incidents(records, similarity);

  Json created = Json::array();
  Json conflicts = Json::array();
  Json curation = Json::array();
  for (const auto& c : clusters) {
    if (c.needs_manual_curation) curation.push_back(c.medoid_id);
  }
  for (auto& unit : ingest::units_from_clusters(clusters, records)) {
    const std::string uid = unit.id;
    try {
      store_->upsert_answer_unit(std::move(unit));
      created.push_back(uid);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::Conflict) throw;
      conflicts.push_back(Json{{"unit", uid}, {"conflicts_with", e.details()}});
    }
  }
  Json cl = Json::array();
  for (const auto& c : clusters) {
    cl.push_back(Json{{"medoid_id", c.medoid_id},
                      {"member_ids", c.member_ids},
                      {"question", c.question},
                      {"needs_manual_curation", c.needs_manual_curation}});
  }
  refresh();
  return ok(Json{{"clusters", std::move(cl)},
                 {"units", std::move(created)},
                 {"conflicts", std::move(conflicts)},
                 {"needs_manual_curation", std::move(curation)}},
            201);
}

fs::path Service::image_path(const std::string& id) const {
  static const std::regex re("^img-[0-9a-f]{16}$");
  if (!std::regex_match(id, re)) throw Error(ErrorCode::InvalidArgument, "malformed image id", id);
  return config_.data_dir / "images" / (id + ".bin");
}

Response Service::upload_image(const Request& r) {
  const std::string& bytes = r.upload ? r.upload->content : r.body;
  if (bytes.empty()) throw Error(ErrorCode::InvalidArgument, "no image in the request");
  if (bytes.size() > config_.max_upload_bytes) {
    return api_error(413, "too_large", "image exceeds the upload limit", Json{{"limit", config_.max_upload_bytes}});
  }
  const std::vector<std::uint8_t> data(bytes.begin(), bytes.end());
  const auto img = vision::decode_image(data);  // rejects anything that is not an image
  const std::string id = "img-" + hex64(fnv1a64(bytes));
  const fs::path path = image_path(id);
  fs::create_directories(path.parent_path());
  if (!fs::exists(path)) {
    const fs::path tmp = path.string() + ".tmp";
    {
      std::ofstream out(tmp, std::ios::binary);
      out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
      if (!out) throw Error(ErrorCode::Io, "cannot write image " + tmp.string());
    }
    fs::rename(tmp, path);
  }
  return ok(Json{{"id", id}, {"width", img.width}, {"height", img.height}}, 201);
}

// ---- HTTP front end ----

struct HttpServer::Impl {
  httplib::Server server;
};

HttpServer::HttpServer(Service& service, const std::string& host, int port) : impl_(std::make_unique<Impl>()) {
  auto& svr = impl_->server;
  // The library default sets SO_REUSEPORT, which lets a second instance
  // share the port silently.
  svr.set_socket_options([](socket_t sock) {
    int yes = 1;
    setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const void*>(&yes), sizeof(yes));
  });
  svr.set_payload_max_length(service.config().max_upload_bytes + (1u << 20));
  svr.set_read_timeout(std::chrono::seconds(10));
  svr.set_write_timeout(std::chrono::seconds(10));

  auto handler = [&service](const httplib::Request& hreq, httplib::Response& hres) {
    Request req;
    req.method = hreq.method;
    req.path = hreq.path;
    for (const auto& [k, v] : hreq.params) req.query.emplace(k, v);
    for (const auto& [k, v] : hreq.headers) req.headers.emplace(casefold(k), v);
    req.body = hreq.body;
    if (hreq.is_multipart_form_data() && hreq.has_file("file")) {
      const auto f = hreq.get_file_value("file");
      req.upload = Upload{f.filename, f.content_type, f.content};
      req.body.clear();
    }
    const Response res = service.handle(req);
    hres.status = res.status;
    if (res.raw) {
      hres.set_content(*res.raw, res.content_type);
    } else {
      hres.set_content(res.body.dump(), "application/json");
    }
  };
  svr.Get(".*", handler);
  svr.Post(".*", handler);
  svr.Put(".*", handler);
  svr.Delete(".*", handler);
  svr.Patch(".*", handler);

  if (port == 0) {
    port_ = svr.bind_to_any_port(host);
    if (port_ < 0) throw Error(ErrorCode::Unavailable, "cannot bind " + host);
  } else {
    if (!svr.bind_to_port(host, port)) {
      throw Error(ErrorCode::Unavailable, "port " + std::to_string(port) + " on " + host + " is busy",
                  std::to_string(port));
    }
    port_ = port;
  }
}

HttpServer::~HttpServer() { stop(); }

void HttpServer::run() { impl_->server.listen_after_bind(); }

void HttpServer::stop() {
  if (impl_) impl_->server.stop();
}

}  // namespace deskqa::gateway
