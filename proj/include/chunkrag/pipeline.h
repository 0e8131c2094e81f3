#pragma once

#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "chunkrag/core.h"
#include "chunkrag/embedding.h"
#include "chunkrag/extraction.h"
#include "chunkrag/llm.h"
#include "chunkrag/memory.h"
#include "chunkrag/metrics.h"
#include "chunkrag/retrieval.h"
#include "chunkrag/scorer.h"

namespace chunkrag {

struct RunConfig {
  TaskKind task;
  std::size_t chunk_len = 3;
  std::size_t top_n = 10;
  std::size_t diversity_cap = 4;
  EmbedderConfig embedder;
  LmBackendConfig llm;
  TrainConfig train;
  double eta = 0.1;
  bool ablate_scorer = false;     // WTCS: rank by raw cosine, skip training
  bool ablate_diversity = false;  // WD: no ordered-pair documents
  Split memory_split = Split::kDev;
  std::uint64_t seed = 0;
  std::optional<std::string> labels_path;
  std::optional<std::string> template_path;
  std::optional<std::string> mock_rules_path;

  void validate() const;
  // Canonical JSON; the config hash in every manifest is its SHA-256.
  nlohmann::json to_json() const;
  std::string hash() const;
  std::string ablation_tag() const;  // "none", "WTCS", "WD" or "WTCS+WD"
};

// A labelled JSONL file, validated against the task's invariants.
struct Dataset {
  TaskKind task;
  std::vector<SentenceRecord> records;
  LabelInventory inventory;

  std::vector<SentenceRecord> split(Split s) const;
  std::map<std::string, std::size_t> split_counts() const;
  // Inventory ids plus every label seen in the records (label tasks only).
  std::vector<Label> labels() const;
};

// Reads one record per non-blank line. Malformed JSON or a record that breaks
// the task's invariants raises IngestError with the 1-based line number; a
// file with no records raises EmptyDataset.
Dataset ingest(const std::string& path, TaskKind task,
               const LabelInventory& inventory = {});
Dataset ingest_lines(std::istream& in, TaskKind task, const LabelInventory& inventory);

// "[stage] Kind: message" wrapper raised by the pipeline.
class PipelineError : public Error {
 public:
  PipelineError(std::string stage, const Error& cause);
  const std::string& stage() const { return stage_; }
  const std::string& cause_kind() const { return cause_kind_; }

 private:
  std::string stage_;
  std::string cause_kind_;
};

struct Candidates {
  Embedding x_embedding;
  std::vector<RetrievedPair> pairs;
  Neighbor nearest;
  std::vector<DocumentCandidate> docs;
  std::vector<Embedding> doc_embeddings;
};

struct TraceRow {
  std::string id;
  DocumentCandidate chosen;
  double chosen_probability = 0.0;
  std::size_t candidate_count = 0;
  std::string completion;
  ExtractionOutput output;
  std::string gold;

  nlohmann::json to_json() const;
};

struct EvaluationReport {
  nlohmann::json report;  // source of truth
  std::string table;      // derived plain-text view
  MicroScore headline;    // triple score, or label score
};

// Owns the backends and the built artifacts for one configuration.
class Pipeline {
 public:
  Pipeline(RunConfig cfg, Dataset data);
  // Shares already-constructed backends (used by sweeps and the server).
  Pipeline(RunConfig cfg, Dataset data, std::shared_ptr<Embedder> embedder,
           std::shared_ptr<LmBackend> llm);

  const RunConfig& config() const { return cfg_; }
  const Dataset& data() const { return data_; }
  Embedder& embedder() { return *embedder_; }
  LmBackend& llm() { return *llm_; }
  const PromptTemplate& prompt_template() const { return template_; }

  const Memory& build_memory();
  void set_memory(Memory memory);
  const Memory& memory() const;

  void set_scorer(ScorerParams params) { scorer_ = std::move(params); }
  const ScorerParams& scorer() const { return scorer_; }

  // Retrieval, d_0 lookup, diversification and document embeddings for x.
  Candidates candidates(const SentenceRecord& x);

  // Builds frozen supervision for every train-split sentence and trains W.
  std::vector<TrainingExample> training_examples();
  TrainResult train();

  TraceRow infer(const SentenceRecord& x);
  std::vector<TraceRow> infer_all(std::span<const SentenceRecord> records);

  EvaluationReport evaluate(std::span<const SentenceRecord> records,
                            std::span<const TraceRow> traces) const;

  // Embeds the d_0 source sentences. Runs lazily on first use; call it up
  // front before sharing the pipeline across threads.
  void prepare();

 private:

  RunConfig cfg_;
  Dataset data_;
  std::shared_ptr<Embedder> embedder_;
  std::shared_ptr<LmBackend> llm_;
  PromptTemplate template_;
  std::optional<Memory> memory_;
  std::unique_ptr<ExampleIndex> examples_;
  std::vector<SentenceRecord> sources_;
  std::vector<Label> labels_;
  ScorerParams scorer_;
};

// Accumulates artifacts as "<name>.partial" files and renames them into
// place on commit(). An aborted run leaves only .partial files.
class ArtifactWriter {
 public:
  explicit ArtifactWriter(std::string dir);
  void write(const std::string& name, const std::string& content);
  void commit();
  const std::map<std::string, std::string>& hashes() const { return hashes_; }
  std::string path(const std::string& name) const;

 private:
  std::string dir_;
  std::vector<std::string> pending_;
  std::map<std::string, std::string> hashes_;
};

struct RunOutcome {
  EvaluationReport evaluation;
  std::vector<TraceRow> traces;
  TrainResult training;
  Memory memory;
  nlohmann::json manifest;
};

// build -> train (skipped under WTCS) -> retrieve/select/generate/parse on the
// test split -> score. When `out_dir` is set, writes memory.bin, scorer.ckpt,
// loss.csv, traces.jsonl, report.json, report.txt and manifest.json.
RunOutcome run_pipeline(const RunConfig& cfg, const Dataset& data,
                        const std::optional<std::string>& out_dir = std::nullopt);
RunOutcome run_pipeline(const RunConfig& cfg, const std::string& dataset_path,
                        const std::optional<std::string>& out_dir = std::nullopt);

// One row per requested n: either a score or the error kind that stopped it.
struct BaselineRow {
  std::size_t n = 0;
  std::optional<MicroScore> score;
  std::string error;
};

// Example text for the KNN baseline: the top-n "(sentence label)" renderings
// joined by newlines; empty for n = 0.
std::string knn_example_text(std::span<const Neighbor> neighbors);

// RA-KNN-n: prepend the top-n train-split (sentence, label) pairs, no scorer,
// no diversity. n = 0 is the bare model.
std::vector<BaselineRow> run_baseline_knn(const RunConfig& cfg, const Dataset& data,
                                          std::span<const std::size_t> n_values);
nlohmann::json baseline_to_json(std::span<const BaselineRow> rows);
std::string baseline_table(std::span<const BaselineRow> rows);

struct SweepCell {
  std::size_t chunk_len = 0;
  std::size_t top_n = 0;
  std::optional<MicroScore> score;
  std::string error;
};

std::vector<SweepCell> run_sweep(const RunConfig& cfg, const Dataset& data,
                                 std::span<const std::size_t> chunk_lens,
                                 std::span<const std::size_t> top_ns);
nlohmann::json sweep_to_json(std::span<const SweepCell> cells);

}  // namespace chunkrag
