#include <CLI11.hpp>

#include <csignal>
#include <fstream>
#include <iostream>
#include <pthread.h>
#include <sstream>
#include <thread>

#include "deskqa/classify.hpp"
#include "deskqa/error.hpp"
#include "deskqa/gateway.hpp"
#include "deskqa/ingest.hpp"
#include "deskqa/qagen.hpp"
#include "deskqa/store.hpp"
#include "deskqa/text.hpp"
#include "deskqa/vision.hpp"

using namespace deskqa;
namespace fs = std::filesystem;

namespace {

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::NotFound, "cannot read " + path.string(), path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::shared_ptr<const Snapshot> resolve_snapshot(const Store& store, const std::string& which) {
  auto live = store.snapshot();
  if (which == "latest") return live;
  std::uint64_t id = 0;
  try {
    std::size_t used = 0;
    id = std::stoull(which, &used);
    if (used != which.size()) throw std::invalid_argument(which);
  } catch (const std::exception&) {
    throw Error(ErrorCode::InvalidArgument, "snapshot must be a number or 'latest'", which);
  }
  if (id == live->id) return live;
  char name[32];
  std::snprintf(name, sizeof name, "%04llu.json", static_cast<unsigned long long>(id));
  return Store::load_snapshot_file(*store.data_dir() / "snapshots" / name);
}

int ingest_docs(Store& store, const fs::path& dir, std::size_t max_tokens) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::size_t total = 0;
  for (const auto& f : files) {
    const std::string ext = casefold(f.extension().string());
    ingest::StructuredDoc doc;
    const std::string text = read_file(f);
    if (ext == ".html" || ext == ".htm") doc = ingest::parse_html(text);
    else if (ext == ".md" || ext == ".markdown") doc = ingest::parse_markdown(text);
    else if (ext == ".txt") doc = ingest::induce_structure(text);
    else continue;
    const std::string source = fs::relative(f, dir).generic_string();
    auto chunks = ingest::chunk_document(doc, source, max_tokens);
    std::cout << source << ": " << chunks.size() << " chunks\n";
    total += chunks.size();
    if (!chunks.empty()) store.put_chunks(std::move(chunks));
  }
  std::cout << total << " chunks from " << files.size() << " files\n";
  return 0;
}

int ingest_transcript(Store& store, const fs::path& file, std::string source, double gap, std::size_t max_tokens) {
  if (source.empty()) source = file.stem().string();
  const auto words = ingest::parse_transcript_jsonl(read_file(file));
  auto chunks = ingest::segment_transcript(words, source, gap, max_tokens);
  std::cout << source << ": " << words.size() << " words, " << chunks.size() << " chunks\n";
  if (!chunks.empty()) store.put_chunks(std::move(chunks));
  return 0;
}

int ingest_incidents(Store& store, const fs::path& file, double similarity) {
  const auto records = ingest::parse_incidents_csv(read_file(file));
  const auto clusters = ingest::mine_incidents(records, similarity);
  std::size_t created = 0;
  for (auto& unit : ingest::units_from_clusters(clusters, records)) {
    const std::string id = unit.id;
    try {
      store.upsert_answer_unit(std::move(unit));
      ++created;
    } catch (const Error& e) {
      if (e.code() != ErrorCode::Conflict) throw;
      std::cerr << "skipped " << id << ": same question as " << e.details() << "\n";
    }
  }
  for (const auto& c : clusters) {
    if (c.needs_manual_curation) std::cout << "needs curation: " << c.medoid_id << " " << c.question << "\n";
  }
  std::cout << records.size() << " incidents, " << clusters.size() << " clusters, " << created << " units\n";
  return 0;
}

int qagen_run(const Store& store, const std::string& which, double ratio, const fs::path& out_path) {
  const auto snap = resolve_snapshot(store, which);
  std::vector<Chunk> chunks;
  for (const auto& [id, c] : snap->chunks) chunks.push_back(c);
  qagen::PipelineOptions options;
  options.ratio = ratio;
  const auto questions = qagen::generate(chunks, options);
  std::ofstream out(out_path);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + out_path.string());
  for (const auto& q : questions) out << Json(q).dump() << "\n";
  std::cout << questions.size() << " questions from " << chunks.size() << " chunks of snapshot " << snap->id
            << "\n";
  return 0;
}

int classify_train(const Store& store, const std::string& which, const fs::path& out_path,
                   const classify::TrainOptions& options) {
  const auto snap = resolve_snapshot(store, which);
  std::optional<classify::LinearModel> previous;
  if (fs::exists(out_path)) previous = classify::LinearModel::load(out_path);
  auto model = classify::train(classify::training_set_from(*snap), options, previous ? &*previous : nullptr);
  model.set_snapshot_id(snap->id);
  model.save(out_path);
  const auto& m = model.metadata();
  std::cout << "trained " << model.class_ids().size() << " classes on snapshot " << snap->id << ", objective "
            << m.final_objective << ", skipped " << m.skipped_empty << " empty questions -> " << out_path.string()
            << "\n";
  return 0;
}

/// One {"question": ..., "class_id": ...} object per line.
int classify_eval(const fs::path& model_path, const fs::path& test_file) {
  const auto model = classify::LinearModel::load(model_path);
  std::vector<std::pair<std::string, std::string>> labelled;
  std::size_t line_no = 0;
  for (const auto& line : split_lines(read_file(test_file))) {
    ++line_no;
    if (trim(line).empty()) continue;
    try {
      const Json j = Json::parse(line);
      labelled.emplace_back(j.at("question").get<std::string>(), j.at("class_id").get<std::string>());
    } catch (const Json::exception& e) {
      throw Error(ErrorCode::ParseError, test_file.string() + ":" + std::to_string(line_no) + ": " + e.what(),
                  std::to_string(line_no));
    }
  }
  if (labelled.empty()) throw Error(ErrorCode::InvalidArgument, "no labelled questions in " + test_file.string());
  const double acc = classify::accuracy(model, labelled);
  std::cout << "accuracy " << acc << " on " << labelled.size() << " questions\n";
  return 0;
}

int vision_preprocess(const fs::path& image, const fs::path& out, const fs::path& debug_dir,
                      const vision::PreprocessOptions& options) {
  const auto stages = vision::preprocess_stages(vision::read_image(image), options);
  vision::write_png(out, stages.dilated);
  if (!debug_dir.empty()) {
    fs::create_directories(debug_dir);
    vision::write_png(debug_dir / "1-gray.png", stages.gray);
    vision::write_png(debug_dir / "2-sharpened.png", stages.sharpened);
    vision::write_png(debug_dir / "3-upscaled.png", stages.upscaled);
    vision::write_png(debug_dir / "4-binary.png", stages.binary.image);
    vision::write_png(debug_dir / "5-dilated.png", stages.dilated);
  }
  std::cout << "otsu threshold " << stages.binary.threshold << ", " << stages.dilated.width << "x"
            << stages.dilated.height << " -> " << out.string() << "\n";
  return 0;
}

int serve(gateway::ServiceConfig config) {
  // Signals are taken synchronously by a dedicated thread so stop() runs
  // outside signal context.
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);

  gateway::Service service(config);
  gateway::HttpServer server(service, config.host, config.port);
  std::cout << "listening on " << config.host << ":" << server.port() << " with data in "
            << config.data_dir.string() << std::endl;
  std::thread waiter([&] {
    int sig = 0;
    sigwait(&set, &sig);
    server.stop();
  });
  server.run();
  pthread_kill(waiter.native_handle(), SIGTERM);
  waiter.join();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Help desk question answering toolkit"};
  app.require_subcommand(1);
  std::string data_dir = "data";
  app.add_option("--data-dir", data_dir, "Knowledge store directory");

  auto* ingest_cmd = app.add_subcommand("ingest", "Load documents, transcripts or incidents into the store");
  ingest_cmd->require_subcommand(1);
  std::size_t max_tokens = ingest::kDefaultMaxChunkTokens;
  fs::path docs_dir, transcript_file, incidents_file;
  std::string source_id;
  double gap = 0.8, similarity = 0.6;
  auto* docs = ingest_cmd->add_subcommand("docs", "HTML, Markdown and text files under a directory");
  docs->add_option("dir", docs_dir)->required()->check(CLI::ExistingDirectory);
  docs->add_option("--max-chunk-tokens", max_tokens);
  auto* transcript = ingest_cmd->add_subcommand("transcript", "JSONL of timed words");
  transcript->add_option("file", transcript_file)->required()->check(CLI::ExistingFile);
  transcript->add_option("--source-id", source_id, "Defaults to the file stem");
  transcript->add_option("--gap-threshold", gap);
  transcript->add_option("--max-chunk-tokens", max_tokens);
  auto* incidents = ingest_cmd->add_subcommand("incidents", "CSV with id, problem and resolution columns");
  incidents->add_option("file", incidents_file)->required()->check(CLI::ExistingFile);
  incidents->add_option("--similarity", similarity);

  auto* qagen_cmd = app.add_subcommand("qagen", "Question generation");
  qagen_cmd->require_subcommand(1);
  std::string snapshot = "latest";
  double ratio = 0.10;
  fs::path qagen_out = "candidates.jsonl";
  auto* qrun = qagen_cmd->add_subcommand("run", "Generate candidate questions from a snapshot's chunks");
  qrun->add_option("snapshot", snapshot, "Snapshot id or 'latest'")->required();
  qrun->add_option("--ratio", ratio)->check(CLI::Range(0.0, 1.0));
  qrun->add_option("--out", qagen_out);

  auto* classify_cmd = app.add_subcommand("classify", "Question classifier");
  classify_cmd->require_subcommand(1);
  fs::path model_path;
  fs::path eval_file;
  classify::TrainOptions train_options;
  auto* ctrain = classify_cmd->add_subcommand("train", "Train on a snapshot's answer units");
  ctrain->add_option("--snapshot", snapshot);
  ctrain->add_option("--model", model_path, "Defaults to <data-dir>/model.json");
  ctrain->add_option("--epochs", train_options.epochs);
  ctrain->add_option("--lambda", train_options.lambda);
  ctrain->add_option("--seed", train_options.seed);
  auto* ceval = classify_cmd->add_subcommand("eval", "Accuracy on a JSONL file of {question, class_id}");
  ceval->add_option("testfile", eval_file)->required()->check(CLI::ExistingFile);
  ceval->add_option("--model", model_path);

  auto* serve_cmd = app.add_subcommand("serve", "Run the HTTP gateway");
  fs::path config_file;
  std::optional<int> port;
  std::optional<std::string> host;
  serve_cmd->add_option("--config", config_file, "Flat key = value file")->check(CLI::ExistingFile);
  serve_cmd->add_option("--port", port);
  serve_cmd->add_option("--host", host);

  auto* vision_cmd = app.add_subcommand("vision", "Screenshot preprocessing");
  vision_cmd->require_subcommand(1);
  fs::path image, image_out = "preprocessed.png", debug_dir;
  vision::PreprocessOptions vopts;
  auto* vpre = vision_cmd->add_subcommand("preprocess", "Sharpen, upscale, binarize and dilate an image");
  vpre->add_option("image", image)->required()->check(CLI::ExistingFile);
  vpre->add_option("--out", image_out);
  vpre->add_option("--debug-stages", debug_dir, "Directory for every intermediate stage");
  vpre->add_option("--sigma1", vopts.dog.sigma1);
  vpre->add_option("--sigma2", vopts.dog.sigma2);

  auto* store_cmd = app.add_subcommand("store", "Knowledge store maintenance");
  store_cmd->require_subcommand(1);
  auto* compact = store_cmd->add_subcommand("compact", "Write a snapshot file so replay can skip the log prefix");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*vpre) return vision_preprocess(image, image_out, debug_dir, vopts);
    if (*ceval) return classify_eval(model_path.empty() ? fs::path(data_dir) / "model.json" : model_path, eval_file);
    if (*serve_cmd) {
      gateway::ServiceConfig config;
      if (!config_file.empty()) config.load_into(config_file);
      if (app.get_option("--data-dir")->count() > 0 || config_file.empty()) config.data_dir = data_dir;
      if (port) config.port = *port;
      if (host) config.host = *host;
      return serve(std::move(config));
    }

    auto store = Store::open(data_dir);
    if (*docs) return ingest_docs(*store, docs_dir, max_tokens);
    if (*transcript) return ingest_transcript(*store, transcript_file, source_id, gap, max_tokens);
    if (*incidents) return ingest_incidents(*store, incidents_file, similarity);
    if (*qrun) return qagen_run(*store, snapshot, ratio, qagen_out);
    if (*ctrain) {
      return classify_train(*store, snapshot, model_path.empty() ? fs::path(data_dir) / "model.json" : model_path,
                            train_options);
    }
    if (*compact) {
      std::cout << store->compact().string() << "\n";
      return 0;
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
