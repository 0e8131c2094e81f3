// Command-line harness: build-memory, train-scorer, extract, evaluate,
// baseline-knn, sweep, serve, make-synthetic.
//
// Exit codes: 0 ok, 1 configuration error, 2 runtime error.

#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "binary_io.h"
#include "chunkrag/pipeline.h"
#include "chunkrag/server.h"
#include "chunkrag/synthetic.h"

namespace {

using namespace chunkrag;

constexpr int kOk = 0;
constexpr int kConfigError = 1;
constexpr int kRuntimeError = 2;

// Raw flag values; converted into a RunConfig once parsing is done.
struct Flags {
  std::string task = "triple";
  std::size_t chunk_len = 3;
  std::size_t top_n = 10;
  std::size_t diversity_cap = 4;
  std::string embedder = "local-hash";
  std::size_t embed_dim = 256;
  std::string embed_endpoint;
  std::string embed_cache;
  std::size_t embed_concurrency = 4;
  std::string llm = "mock";
  std::string llm_endpoint;
  std::size_t context_limit = 4096;
  std::size_t llm_concurrency = 4;
  std::string mock_rules;
  double mock_fallback = 0.1;
  std::size_t batch_size = 8;
  double learning_rate = 0.01;
  std::size_t epochs = 50;
  std::string loss_mode = "max-absdiff";
  double eta = 0.1;
  std::vector<std::string> ablation;
  std::string memory_split = "dev";
  std::uint64_t seed = 0;
  std::string labels;
  std::string prompt_template;
};

void add_run_flags(CLI::App& app, Flags& f) {
  app.add_option("--task", f.task, "triple | relation | classification | link");
  app.add_option("--chunk-len", f.chunk_len, "words per chunk (m)");
  app.add_option("--top-n", f.top_n, "retrieved key-value pairs");
  app.add_option("--diversity-cap", f.diversity_cap, "max pairs expanded into ordered pairs");
  app.add_option("--embedder", f.embedder, "local-hash | remote");
  app.add_option("--embed-dim", f.embed_dim);
  app.add_option("--embed-endpoint", f.embed_endpoint, "http://host:port/path");
  app.add_option("--embed-cache", f.embed_cache, "on-disk embedding cache file");
  app.add_option("--embed-concurrency", f.embed_concurrency);
  app.add_option("--llm", f.llm, "mock | remote");
  app.add_option("--llm-endpoint", f.llm_endpoint, "http://host:port (remote LM)");
  app.add_option("--context-limit", f.context_limit, "prompt limit in tokens");
  app.add_option("--llm-concurrency", f.llm_concurrency);
  app.add_option("--mock-rules", f.mock_rules, "JSON rule file for the mock LM");
  app.add_option("--mock-fallback", f.mock_fallback);
  app.add_option("--batch-size", f.batch_size);
  app.add_option("--learning-rate", f.learning_rate);
  app.add_option("--epochs", f.epochs);
  app.add_option("--loss-mode", f.loss_mode, "max-absdiff | full-kl");
  app.add_option("--eta", f.eta, "softmax temperature");
  app.add_option("--ablation", f.ablation, "WTCS and/or WD")->delimiter(',');
  app.add_option("--memory-split", f.memory_split, "train | dev");
  app.add_option("--seed", f.seed);
  app.add_option("--labels", f.labels, "label id -> description JSON");
  app.add_option("--template", f.prompt_template, "instruction template file");
}

RunConfig to_config(const Flags& f) {
  RunConfig cfg;
  cfg.task = TaskKind::parse(f.task);
  cfg.chunk_len = f.chunk_len;
  cfg.top_n = f.top_n;
  cfg.diversity_cap = f.diversity_cap;
  cfg.embedder.backend = parse_embedder_backend(f.embedder);
  cfg.embedder.dim = f.embed_dim;
  if (!f.embed_endpoint.empty()) cfg.embedder.endpoint = f.embed_endpoint;
  if (!f.embed_cache.empty()) cfg.embedder.cache_path = f.embed_cache;
  cfg.embedder.max_concurrent_requests = f.embed_concurrency;
  if (f.llm == "mock") {
    cfg.llm.kind = LmBackendKind::kMock;
  } else if (f.llm == "remote") {
    cfg.llm.kind = LmBackendKind::kRemote;
  } else {
    throw ConfigError("unknown llm backend: " + f.llm);
  }
  if (!f.llm_endpoint.empty()) cfg.llm.endpoint = f.llm_endpoint;
  cfg.llm.context_limit = f.context_limit;
  cfg.llm.max_concurrent_requests = f.llm_concurrency;
  cfg.llm.mock_fallback_probability = f.mock_fallback;
  if (!f.mock_rules.empty()) {
    cfg.mock_rules_path = f.mock_rules;
    if (!std::filesystem::exists(f.mock_rules)) {
      throw ConfigError("file not found: " + f.mock_rules);
    }
    cfg.llm.mock_rules = load_mock_rules(f.mock_rules);
  }
  cfg.train.batch_size = f.batch_size;
  cfg.train.learning_rate = f.learning_rate;
  cfg.train.epochs = f.epochs;
  cfg.train.loss_mode = parse_loss_mode(f.loss_mode);
  cfg.train.seed = f.seed;
  cfg.eta = f.eta;
  for (const auto& a : f.ablation) {
    if (a == "WTCS") {
      cfg.ablate_scorer = true;
    } else if (a == "WD") {
      cfg.ablate_diversity = true;
    } else if (a != "none") {
      throw ConfigError("unknown ablation: " + a);
    }
  }
  cfg.memory_split = parse_split(f.memory_split);
  if (cfg.memory_split == Split::kTest) throw ConfigError("memory_split must be train or dev");
  cfg.seed = f.seed;
  if (!f.labels.empty()) cfg.labels_path = f.labels;
  if (!f.prompt_template.empty()) cfg.template_path = f.prompt_template;
  cfg.validate();
  return cfg;
}

Dataset load_dataset(const RunConfig& cfg, const std::string& path) {
  if (!std::filesystem::exists(path)) throw ConfigError("file not found: " + path);
  LabelInventory inventory =
      cfg.labels_path ? LabelInventory::load(*cfg.labels_path) : LabelInventory{};
  Dataset data = ingest(path, cfg.task, inventory);
  for (const auto& [split, n] : data.split_counts()) {
    std::cerr << split << ": " << n << " records\n";
  }
  return data;
}

std::vector<std::size_t> require_positive(const std::vector<std::size_t>& v,
                                          const std::string& what) {
  for (auto x : v) {
    if (x == 0) throw ConfigError(what + " values must be positive");
  }
  return v;
}

// Exceptions that mean the user asked for something invalid, as opposed to a
// failure while running.
bool is_config_error(const Error& e) {
  const auto* wrapped = dynamic_cast<const PipelineError*>(&e);
  const std::string& k = wrapped ? wrapped->cause_kind() : e.kind();
  return k == "ConfigError" || k == "FormatError" || k == "IngestError" ||
         k == "EmptyDataset";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"chunk-level retrieval-augmented extraction harness"};
  app.set_config("--config", "", "TOML/INI file with flag values");
  app.require_subcommand(1);
  Flags flags;

  std::string data_path;
  std::string memory_path;
  std::string scorer_path;
  std::string out_path;
  std::string text;
  std::string head;
  std::string tail;
  std::string host = "127.0.0.1";
  int port = 8080;
  std::vector<std::size_t> n_values{0, 1, 5, 10, 15, 20};
  std::vector<std::size_t> m_values{3, 4, 5};
  SyntheticSpec synth;
  std::string synth_task = "classification";

  auto* build = app.add_subcommand("build-memory", "build the key-value memory");
  auto* train = app.add_subcommand("train-scorer", "train the chunk scorer");
  auto* extract = app.add_subcommand("extract", "extract from a single sentence");
  auto* evaluate = app.add_subcommand("evaluate", "full pipeline on the test split");
  auto* baseline = app.add_subcommand("baseline-knn", "KNN prompting baseline");
  auto* sweep = app.add_subcommand("sweep", "grid over chunk length and top-n");
  auto* serve = app.add_subcommand("serve", "HTTP retrieval/extraction service");
  auto* synthetic = app.add_subcommand("make-synthetic", "write a planted-marker corpus");

  for (auto* sub : {build, train, extract, evaluate, baseline, sweep, serve}) {
    add_run_flags(*sub, flags);
    sub->add_option("--data", data_path, "JSONL dataset")->required();
  }
  build->add_option("--out", out_path, "memory file")->required();
  train->add_option("--memory", memory_path, "memory file (built when omitted)");
  train->add_option("--out", out_path, "scorer checkpoint")->required();
  for (auto* sub : {extract, serve}) {
    sub->add_option("--memory", memory_path)->required();
    sub->add_option("--scorer", scorer_path)->required();
  }
  extract->add_option("--text", text)->required();
  extract->add_option("--head", head);
  extract->add_option("--tail", tail);
  evaluate->add_option("--out-dir", out_path, "artifact directory");
  baseline->add_option("--n", n_values, "n values (0 = no retrieval)")->delimiter(',');
  baseline->add_option("--out", out_path, "JSON report");
  sweep->add_option("--m", m_values, "chunk lengths")->delimiter(',');
  sweep->add_option("--n", n_values, "top-n values")->delimiter(',');
  sweep->add_option("--out", out_path, "JSON report");
  serve->add_option("--host", host);
  serve->add_option("--port", port);
  synthetic->add_option("--out-dir", out_path)->required();
  synthetic->add_option("--task", synth_task, "classification | relation");
  synthetic->add_option("--labels", synth.num_labels);
  synthetic->add_option("--vocabulary", synth.vocabulary);
  synthetic->add_option("--sentence-len", synth.sentence_len);
  synthetic->add_option("--train", synth.train);
  synthetic->add_option("--dev", synth.dev);
  synthetic->add_option("--test", synth.test);
  synthetic->add_option("--seed", synth.seed);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kConfigError;
  }

  try {
    if (synthetic->parsed()) {
      synth.task = TaskKind::parse(synth_task);
      write_synthetic(make_synthetic(synth), out_path);
      std::cout << "wrote " << out_path << "\n";
      return kOk;
    }

    const RunConfig cfg = to_config(flags);
    const Dataset data = load_dataset(cfg, data_path);

    if (build->parsed()) {
      Pipeline pipeline(cfg, data);
      pipeline.build_memory().save(out_path);
      std::cout << "memory: " << pipeline.memory().entries().size() << " entries -> "
                << out_path << "\n";
    } else if (train->parsed()) {
      Pipeline pipeline(cfg, data);
      if (memory_path.empty()) {
        pipeline.build_memory();
      } else {
        pipeline.set_memory(Memory::load(memory_path));
      }
      TrainResult result = pipeline.train();
      ScorerCheckpoint{result.params, cfg.train.loss_mode, cfg.embedder.fingerprint()}.save(
          out_path);
      io::write_file_atomic(out_path + ".loss.csv", loss_trace_csv(result.loss_trace));
      std::cout << "scorer -> " << out_path << "\n";
    } else if (extract->parsed()) {
      auto service = Service::open(cfg, data_path, memory_path, scorer_path);
      nlohmann::json request{{"text", text}};
      if (!head.empty()) request["head"] = head;
      if (!tail.empty()) request["tail"] = tail;
      std::cout << service->extract(request).dump(2) << "\n";
    } else if (evaluate->parsed()) {
      std::optional<std::string> dir;
      if (!out_path.empty()) dir = out_path;
      RunOutcome outcome = run_pipeline(cfg, data_path, dir);
      std::cout << outcome.evaluation.table;
    } else if (baseline->parsed()) {
      auto rows = run_baseline_knn(cfg, data, n_values);
      if (!out_path.empty()) {
        io::write_file_atomic(out_path, baseline_to_json(rows).dump(2) + "\n");
      }
      std::cout << baseline_table(rows);
    } else if (sweep->parsed()) {
      auto cells = run_sweep(cfg, data, require_positive(m_values, "--m"),
                             require_positive(n_values, "--n"));
      const auto report = sweep_to_json(cells);
      if (!out_path.empty()) io::write_file_atomic(out_path, report.dump(2) + "\n");
      std::cout << report.dump(2) << "\n";
    } else if (serve->parsed()) {
      auto service = Service::open(cfg, data_path, memory_path, scorer_path);
      std::cerr << "listening on " << host << ":" << port << "\n";
      if (!service->listen(host, port)) {
        std::cerr << "error: could not bind " << host << ":" << port << "\n";
        return kRuntimeError;
      }
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return is_config_error(e) ? kConfigError : kRuntimeError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntimeError;
  }
  return kOk;
}
