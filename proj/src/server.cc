#include "chunkrag/server.h"

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <numeric>

#include "httplib.h"

namespace chunkrag {
namespace {

std::atomic<std::uint64_t> request_counter{0};

}  // namespace

Service::Service(RunConfig cfg, Dataset data, Memory memory, ScorerCheckpoint scorer)
    : pipeline_(std::move(cfg), std::move(data)),
      server_(std::make_unique<httplib::Server>()) {
  if (scorer.embedder_fingerprint != pipeline_.config().embedder.fingerprint()) {
    throw ConfigError("scorer checkpoint was trained with embedder " +
                      scorer.embedder_fingerprint + ", service uses " +
                      pipeline_.config().embedder.fingerprint());
  }
  if (scorer.params.dim() != pipeline_.config().embedder.dim) {
    throw ConfigError("scorer dim does not match embedder dim");
  }
  pipeline_.set_memory(std::move(memory));
  pipeline_.set_scorer(std::move(scorer.params));
  pipeline_.prepare();
  install_routes();
}

Service::~Service() = default;

std::unique_ptr<Service> Service::open(RunConfig cfg, const std::string& dataset_path,
                                       const std::string& memory_path,
                                       const std::string& scorer_path) {
  for (const auto& p : {dataset_path, memory_path, scorer_path}) {
    if (!std::filesystem::exists(p)) throw ConfigError("missing artifact: " + p);
  }
  const LabelInventory inventory =
      cfg.labels_path ? LabelInventory::load(*cfg.labels_path) : LabelInventory{};
  auto data = ingest(dataset_path, cfg.task, inventory);
  auto memory = Memory::load(memory_path);
  auto scorer = ScorerCheckpoint::load(scorer_path);
  return std::make_unique<Service>(std::move(cfg), std::move(data), std::move(memory),
                                   std::move(scorer));
}

SentenceRecord Service::parse_request(const nlohmann::json& request) const {
  if (!request.is_object()) throw BadRequest("request body must be a JSON object");
  const TaskKind task = pipeline_.config().task;
  SentenceRecord x;
  x.split = Split::kTest;
  x.id = request.contains("id") && request["id"].is_string()
             ? request["id"].get<std::string>()
             : "request-" + std::to_string(request_counter.fetch_add(1));
  auto str = [&](const char* key) -> std::optional<std::string> {
    if (!request.contains(key) || request[key].is_null()) return std::nullopt;
    if (!request[key].is_string()) {
      throw BadRequest(std::string("\"") + key + "\" must be a string");
    }
    return request[key].get<std::string>();
  };
  x.head_entity = str("head");
  x.tail_entity = str("tail");
  try {
    if (task.variant == TaskVariant::kLinkPrediction) {
      if (!x.head_entity || !x.tail_entity) {
        throw BadRequest("link prediction requests need \"head\" and \"tail\"");
      }
      x.text = normalize_text(*x.head_entity + ", " + *x.tail_entity);
    } else {
      auto text = str("text");
      if (!text) throw BadRequest("missing \"text\"");
      x.text = normalize_text(*text);
    }
  } catch (const EmptyText& e) {
    throw BadRequest(e.what());
  }
  if (task.requires_entities() && (!x.head_entity || !x.tail_entity)) {
    throw BadRequest("this task needs \"head\" and \"tail\"");
  }
  return x;
}

nlohmann::json Service::retrieve(const nlohmann::json& request) {
  const SentenceRecord x = parse_request(request);
  auto c = pipeline_.candidates(x);
  const auto& cfg = pipeline_.config();
  const auto params =
      cfg.ablate_scorer ? ScorerParams::identity(cfg.embedder.dim, cfg.eta) : pipeline_.scorer();
  const auto pt = score_documents(c.x_embedding, c.doc_embeddings, params);
  std::vector<std::size_t> order(c.docs.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return pt[a] > pt[b]; });
  nlohmann::json docs = nlohmann::json::array();
  for (std::size_t j : order) {
    docs.push_back({{"j", c.docs[j].id},
                    {"text", c.docs[j].text},
                    {"provenance", c.docs[j].provenance.to_string()},
                    {"p_t", pt[j]}});
  }
  nlohmann::json pairs = nlohmann::json::array();
  for (const auto& p : c.pairs) {
    pairs.push_back({{"rendered", p.rendered}, {"similarity", p.similarity}});
  }
  return {{"documents", std::move(docs)},
          {"pairs", std::move(pairs)},
          {"selected",
           select_document(c.x_embedding, c.doc_embeddings, pipeline_.scorer(),
                           cfg.ablate_scorer)}};
}

nlohmann::json Service::extract(const nlohmann::json& request) {
  const SentenceRecord x = parse_request(request);
  const TraceRow row = pipeline_.infer(x);
  auto j = output_to_json(row.output);
  j["example"] = {{"j", row.chosen.id},
                  {"text", row.chosen.text},
                  {"provenance", row.chosen.provenance.to_string()}};
  return j;
}

void Service::install_routes() {
  auto wrap = [this](nlohmann::json (Service::*handler)(const nlohmann::json&)) {
    return [this, handler](const httplib::Request& req, httplib::Response& res) {
      nlohmann::json body;
      try {
        body = nlohmann::json::parse(req.body);
      } catch (const nlohmann::json::exception& e) {
        res.status = 400;
        res.set_content(nlohmann::json{{"error", "BadRequest"}, {"message", e.what()}}.dump(),
                        "application/json");
        return;
      }
      try {
        res.set_content((this->*handler)(body).dump(), "application/json");
      } catch (const BadRequest& e) {
        res.status = 400;
        res.set_content(nlohmann::json{{"error", e.kind()}, {"message", e.what()}}.dump(),
                        "application/json");
      } catch (const Error& e) {
        res.status = 500;
        res.set_content(nlohmann::json{{"error", e.kind()}, {"message", e.what()}}.dump(),
                        "application/json");
      }
    };
  };
  server_->Post("/retrieve", wrap(&Service::retrieve));
  server_->Post("/extract", wrap(&Service::extract));
}

bool Service::listen(const std::string& host, int port) {
  return server_->listen(host, port);
}

int Service::bind_any_port(const std::string& host) { return server_->bind_to_any_port(host); }

bool Service::listen_after_bind() { return server_->listen_after_bind(); }

void Service::stop() { server_->stop(); }

}  // namespace chunkrag
