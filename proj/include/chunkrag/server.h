#pragma once

#include <memory>
#include <string>

#include "chunkrag/pipeline.h"

namespace httplib {
class Server;
}

namespace chunkrag {

class BadRequest : public Error {
 public:
  explicit BadRequest(const std::string& what) : Error("BadRequest", what) {}
};

// Read-only retrieval/extraction service over a loaded memory and scorer.
//   POST /retrieve {"text", "head"?, "tail"?} -> ranked candidates with P_T
//   POST /extract  {"text", "head"?, "tail"?} -> parsed extraction output
class Service {
 public:
  Service(RunConfig cfg, Dataset data, Memory memory, ScorerCheckpoint scorer);
  ~Service();

  // Loads artifacts from disk. Missing files fail with their explicit paths.
  static std::unique_ptr<Service> open(RunConfig cfg, const std::string& dataset_path,
                                       const std::string& memory_path,
                                       const std::string& scorer_path);

  nlohmann::json retrieve(const nlohmann::json& request);
  nlohmann::json extract(const nlohmann::json& request);

  // Blocking. Returns false if the socket could not be bound.
  bool listen(const std::string& host, int port);
  // Binds an ephemeral port and returns it; follow with listen_after_bind().
  int bind_any_port(const std::string& host);
  bool listen_after_bind();
  void stop();

 private:
  SentenceRecord parse_request(const nlohmann::json& request) const;
  void install_routes();

  Pipeline pipeline_;
  std::unique_ptr<httplib::Server> server_;
};

}  // namespace chunkrag
