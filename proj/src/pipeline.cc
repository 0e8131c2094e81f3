#include "chunkrag/pipeline.h"

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "binary_io.h"
#include "chunkrag/hash.h"
#include "chunkrag/parallel.h"

namespace chunkrag {

// ---------------------------------------------------------------------------
// RunConfig

void RunConfig::validate() const {
  if (chunk_len == 0) throw ConfigError("chunk_len must be at least 1");
  if (top_n == 0) throw ConfigError("top_n must be at least 1");
  if (diversity_cap == 0) throw ConfigError("diversity_cap must be at least 1");
  if (!(eta > 0.0)) throw ConfigError("eta must be positive");
  embedder.validate();
  llm.validate();
  train.validate();
  for (const auto* p : {&labels_path, &template_path, &mock_rules_path}) {
    if (*p && !std::filesystem::exists(**p)) {
      throw ConfigError("file not found: " + **p);
    }
  }
}

nlohmann::json RunConfig::to_json() const {
  nlohmann::json j;
  j["task"] = task.name();
  j["chunk_len"] = chunk_len;
  j["top_n"] = top_n;
  j["diversity_cap"] = diversity_cap;
  j["eta"] = eta;
  j["ablation"] = ablation_tag();
  j["memory_split"] = split_name(memory_split);
  j["seed"] = seed;
  j["embedder"] = {{"backend", backend_name(embedder.backend)},
                   {"dim", embedder.dim},
                   {"endpoint", embedder.endpoint.value_or("")},
                   {"fingerprint", embedder.fingerprint()}};
  j["llm"] = {{"kind", llm.kind == LmBackendKind::kMock ? "mock" : "remote"},
              {"endpoint", llm.endpoint.value_or("")},
              {"context_limit", llm.context_limit},
              {"words_per_token", llm.words_per_token},
              {"mock_fallback_probability", llm.mock_fallback_probability},
              {"mock_rules", mock_rules_to_json(llm.mock_rules)}};
  j["train"] = {{"batch_size", train.batch_size},
                {"learning_rate", train.learning_rate},
                {"epochs", train.epochs},
                {"loss_mode", loss_mode_name(train.loss_mode)}};
  j["labels_path"] = labels_path.value_or("");
  j["template_path"] = template_path.value_or("");
  return j;
}

std::string RunConfig::hash() const { return sha256_hex(to_json().dump()); }

std::string RunConfig::ablation_tag() const {
  if (ablate_scorer && ablate_diversity) return "WTCS+WD";
  if (ablate_scorer) return "WTCS";
  if (ablate_diversity) return "WD";
  return "none";
}

// ---------------------------------------------------------------------------
// Dataset

std::vector<SentenceRecord> Dataset::split(Split s) const {
  std::vector<SentenceRecord> out;
  for (const auto& r : records) {
    if (r.split == s) out.push_back(r);
  }
  return out;
}

std::map<std::string, std::size_t> Dataset::split_counts() const {
  std::map<std::string, std::size_t> counts{{"train", 0}, {"dev", 0}, {"test", 0}};
  for (const auto& r : records) ++counts[split_name(r.split)];
  return counts;
}

std::vector<Label> Dataset::labels() const {
  std::vector<Label> out;
  std::set<std::string> seen;
  for (const auto& [id, _] : inventory.descriptions()) {
    if (seen.insert(id).second) out.push_back(inventory.make_label(id));
  }
  if (task.variant != TaskVariant::kTripleExtraction) {
    for (const auto& r : records) {
      if (seen.insert(r.label.canonical_id).second) out.push_back(r.label);
    }
  }
  return out;
}

Dataset ingest_lines(std::istream& in, TaskKind task, const LabelInventory& inventory) {
  Dataset data{task, {}, inventory};
  std::set<std::string> ids;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (normalize_surface(line).empty()) continue;
    try {
      auto j = nlohmann::json::parse(line);
      auto record = record_from_json(j, task, inventory);
      if (!ids.insert(record.id).second) {
        throw ConfigError("duplicate id '" + record.id + "'");
      }
      data.records.push_back(std::move(record));
    } catch (const nlohmann::json::exception& e) {
      throw IngestError(line_no, e.what());
    } catch (const Error& e) {
      throw IngestError(line_no, e.kind() + ": " + e.what());
    }
  }
  if (data.records.empty()) throw EmptyDataset("dataset contains no records");
  return data;
}

Dataset ingest(const std::string& path, TaskKind task, const LabelInventory& inventory) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open dataset " + path);
  return ingest_lines(in, task, inventory);
}

// ---------------------------------------------------------------------------
// Pipeline

PipelineError::PipelineError(std::string stage, const Error& cause)
    : Error("PipelineError", "[" + stage + "] " + cause.kind() + ": " + cause.what()),
      stage_(std::move(stage)),
      cause_kind_(cause.kind()) {}

namespace {

PromptTemplate load_template(const RunConfig& cfg) {
  return cfg.template_path ? PromptTemplate::load(*cfg.template_path, cfg.task)
                           : PromptTemplate::default_for(cfg.task);
}

template <typename Fn>
auto stage(const char* name, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const PipelineError&) {
    throw;
  } catch (const Error& e) {
    throw PipelineError(name, e);
  }
}

}  // namespace

Pipeline::Pipeline(RunConfig cfg, Dataset data)
    : Pipeline(cfg, std::move(data), std::make_shared<Embedder>(cfg.embedder),
               std::shared_ptr<LmBackend>(LmBackend::create(cfg.llm))) {}

Pipeline::Pipeline(RunConfig cfg, Dataset data, std::shared_ptr<Embedder> embedder,
                   std::shared_ptr<LmBackend> llm)
    : cfg_(std::move(cfg)),
      data_(std::move(data)),
      embedder_(std::move(embedder)),
      llm_(std::move(llm)),
      template_(load_template(cfg_)),
      scorer_(ScorerParams::identity(cfg_.embedder.dim, cfg_.eta)) {
  cfg_.validate();
  if (!(data_.task == cfg_.task)) {
    throw ConfigError("dataset task " + data_.task.name() + " does not match run task " +
                      cfg_.task.name());
  }
  sources_ = data_.split(cfg_.memory_split);
  labels_ = data_.labels();
}

const Memory& Pipeline::build_memory() {
  if (sources_.empty()) {
    throw EmptyDataset("memory split '" + split_name(cfg_.memory_split) + "' is empty");
  }
  memory_ = chunkrag::build_memory(sources_, cfg_.task, cfg_.chunk_len, *embedder_);
  return *memory_;
}

void Pipeline::set_memory(Memory memory) {
  if (memory.embedder_fingerprint() != cfg_.embedder.fingerprint()) {
    throw ConfigError("memory was built with embedder " + memory.embedder_fingerprint() +
                      ", run uses " + cfg_.embedder.fingerprint());
  }
  if (!(memory.task() == cfg_.task)) throw ConfigError("memory task does not match run task");
  if (cfg_.task.noise_intensive() && memory.chunk_len() != cfg_.chunk_len) {
    throw ConfigError("memory chunk length " + std::to_string(memory.chunk_len()) +
                      " does not match run chunk length " + std::to_string(cfg_.chunk_len));
  }
  memory_ = std::move(memory);
}

const Memory& Pipeline::memory() const {
  if (!memory_) throw EmptyMemory("memory has not been built");
  return *memory_;
}

void Pipeline::prepare() {
  if (examples_) return;
  if (sources_.empty()) throw NoCandidate("source dataset for d_0 is empty");
  examples_ = std::make_unique<ExampleIndex>(sources_, *embedder_);
}

Candidates Pipeline::candidates(const SentenceRecord& x) {
  prepare();
  const Memory& mem = memory();
  Candidates c;
  c.x_embedding = embedder_->embed_one(x.text);
  c.pairs = cfg_.task.noise_intensive()
                ? retrieve_pairs(mem, x, cfg_.chunk_len, *embedder_)
                : retrieve_top_n(mem, x, cfg_.top_n, *embedder_);
  c.nearest = examples_->nearest(c.x_embedding, x.id);
  c.docs = diversify(c.pairs, *c.nearest.record,
                     {cfg_.diversity_cap, !cfg_.ablate_diversity});
  std::vector<Words> texts;
  texts.reserve(c.docs.size());
  for (const auto& d : c.docs) texts.push_back(normalize_text(d.text));
  c.doc_embeddings = embedder_->embed(texts);
  return c;
}

std::vector<TrainingExample> Pipeline::training_examples() {
  const auto train = data_.split(Split::kTrain);
  std::vector<TrainingExample> out;
  out.reserve(train.size());
  for (const auto& x : train) {
    auto c = candidates(x);
    auto lm = lm_likelihoods(x, c.docs, x.gold_output(), template_, *llm_);
    out.push_back(TrainingExample{x.id, to_vector(c.x_embedding),
                                  to_matrix(c.doc_embeddings), std::move(lm.values)});
  }
  return out;
}

TrainResult Pipeline::train() {
  const auto init = ScorerParams::identity(cfg_.embedder.dim, cfg_.eta);
  if (cfg_.ablate_scorer || cfg_.train.epochs == 0) {
    scorer_ = init;
    return TrainResult{init, {}};
  }
  const auto examples = training_examples();
  TrainConfig tc = cfg_.train;
  tc.seed = cfg_.seed;
  auto result = train_scorer(examples, init, tc);
  scorer_ = result.params;
  return result;
}

nlohmann::json TraceRow::to_json() const {
  return {{"id", id},
          {"chosen", {{"j", chosen.id},
                      {"text", chosen.text},
                      {"provenance", chosen.provenance.to_string()},
                      {"p_t", chosen_probability}}},
          {"candidates", candidate_count},
          {"completion", completion},
          {"output", output_to_json(output)},
          {"gold", gold}};
}

TraceRow Pipeline::infer(const SentenceRecord& x) {
  auto c = candidates(x);
  const std::size_t j =
      select_document(c.x_embedding, c.doc_embeddings, scorer_, cfg_.ablate_scorer);
  const auto& params =
      cfg_.ablate_scorer ? ScorerParams::identity(cfg_.embedder.dim, cfg_.eta) : scorer_;
  const auto pt = score_documents(c.x_embedding, c.doc_embeddings, params);
  const std::string prompt = assemble_prompt(template_, c.docs[j], x);
  TraceRow row;
  row.id = x.id;
  row.chosen = c.docs[j];
  row.chosen_probability = pt[j];
  row.candidate_count = c.docs.size();
  row.completion = llm_->generate(prompt);
  row.output = parse_output(row.completion, cfg_.task, labels_);
  row.gold = x.gold_output();
  return row;
}

std::vector<TraceRow> Pipeline::infer_all(std::span<const SentenceRecord> records) {
  prepare();
  std::vector<TraceRow> rows(records.size());
  parallel_for(records.size(), llm_->config().max_concurrent_requests,
               [&](std::size_t i) { rows[i] = infer(records[i]); });
  return rows;
}

EvaluationReport Pipeline::evaluate(std::span<const SentenceRecord> records,
                                    std::span<const TraceRow> traces) const {
  EvaluationReport out;
  nlohmann::json scores;
  std::vector<std::pair<std::string, MicroScore>> rows;
  if (cfg_.task.variant == TaskVariant::kTripleExtraction) {
    std::vector<TripleSet> pred, gold;
    for (const auto& t : traces) pred.push_back(t.output.triples.value_or(TripleSet{}));
    for (const auto& r : records) gold.push_back(r.triples.value_or(TripleSet{}));
    out.headline = score_triples(pred, gold);
    rows.emplace_back("Triple", out.headline);
    for (auto e : {TripleElement::kHead, TripleElement::kTail, TripleElement::kRelation}) {
      auto s = score_elements(pred, gold, e);
      std::string name = element_name(e);
      rows.emplace_back(std::string(1, static_cast<char>(std::toupper(name[0]))) + name.substr(1), s);
      scores[name] = s.to_json();
    }
    scores["triple"] = out.headline.to_json();
  } else {
    std::vector<std::string> pred, gold;
    for (const auto& t : traces) pred.push_back(t.output.label.value_or(""));
    for (const auto& r : records) gold.push_back(r.gold_output());
    out.headline = score_labels(pred, gold);
    rows.emplace_back("Label", out.headline);
    scores["label"] = out.headline.to_json();
  }
  nlohmann::json report;
  report["task"] = cfg_.task.name();
  report["ablation"] = cfg_.ablation_tag();
  report["chunk_len"] = cfg_.chunk_len;
  report["top_n"] = cfg_.top_n;
  report["diversity_cap"] = cfg_.diversity_cap;
  report["memory_split"] = split_name(cfg_.memory_split);
  report["memory_entries"] = memory_ ? memory_->size() : 0;
  report["evaluated_sentences"] = records.size();
  report["split_counts"] = data_.split_counts();
  report["config_hash"] = cfg_.hash();
  report["scores"] = std::move(scores);
  out.report = std::move(report);
  out.table = format_table(rows);
  return out;
}

// ---------------------------------------------------------------------------
// Artifacts and full runs

ArtifactWriter::ArtifactWriter(std::string dir) : dir_(std::move(dir)) {
  std::filesystem::create_directories(dir_);
}

std::string ArtifactWriter::path(const std::string& name) const {
  return (std::filesystem::path(dir_) / name).string();
}

void ArtifactWriter::write(const std::string& name, const std::string& content) {
  const std::string partial = path(name) + ".partial";
  std::ofstream out(partial, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + partial);
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw FormatError("write failed: " + partial);
  pending_.push_back(name);
  hashes_[name] = sha256_hex(content);
}

void ArtifactWriter::commit() {
  for (const auto& name : pending_) {
    std::filesystem::rename(path(name) + ".partial", path(name));
  }
  pending_.clear();
}

namespace {

std::string traces_jsonl(std::span<const TraceRow> traces) {
  std::string out;
  for (const auto& t : traces) out += t.to_json().dump() + "\n";
  return out;
}

}  // namespace

RunOutcome run_pipeline(const RunConfig& cfg, const Dataset& data,
                        const std::optional<std::string>& out_dir) {
  std::optional<ArtifactWriter> artifacts;
  if (out_dir) artifacts.emplace(*out_dir);
  Pipeline pipeline = stage("config", [&] { return Pipeline(cfg, data); });

  const Memory& memory = stage("build-memory", [&]() -> const Memory& {
    return pipeline.build_memory();
  });
  if (artifacts) artifacts->write("memory.bin", memory.serialize());

  TrainResult training = stage("train-scorer", [&] { return pipeline.train(); });
  if (artifacts) {
    artifacts->write("scorer.ckpt",
                     ScorerCheckpoint{training.params, cfg.train.loss_mode,
                                      cfg.embedder.fingerprint()}
                         .serialize());
    artifacts->write("loss.csv", loss_trace_csv(training.loss_trace));
  }

  const auto test = data.split(Split::kTest);
  if (test.empty()) throw PipelineError("extract", EmptyDataset("test split is empty"));
  auto traces = stage("extract", [&] { return pipeline.infer_all(test); });
  if (artifacts) artifacts->write("traces.jsonl", traces_jsonl(traces));

  auto evaluation = stage("evaluate", [&] { return pipeline.evaluate(test, traces); });
  nlohmann::json manifest;
  manifest["config"] = cfg.to_json();
  manifest["config_hash"] = cfg.hash();
  manifest["seed"] = cfg.seed;
  if (artifacts) {
    artifacts->write("report.json", evaluation.report.dump(2) + "\n");
    artifacts->write("report.txt", evaluation.table);
    manifest["artifacts"] = artifacts->hashes();
    artifacts->write("manifest.json", manifest.dump(2) + "\n");
    artifacts->commit();
  }
  return RunOutcome{std::move(evaluation), std::move(traces), std::move(training),
                    pipeline.memory(), std::move(manifest)};
}

RunOutcome run_pipeline(const RunConfig& cfg, const std::string& dataset_path,
                        const std::optional<std::string>& out_dir) {
  const LabelInventory inventory =
      cfg.labels_path ? LabelInventory::load(*cfg.labels_path) : LabelInventory{};
  const Dataset data =
      stage("ingest", [&] { return ingest(dataset_path, cfg.task, inventory); });
  auto outcome = run_pipeline(cfg, data, out_dir);
  outcome.manifest["dataset_sha256"] = sha256_file(dataset_path);
  if (out_dir) {
    io::write_file_atomic((std::filesystem::path(*out_dir) / "manifest.json").string(),
                          outcome.manifest.dump(2) + "\n");
  }
  return outcome;
}

// ---------------------------------------------------------------------------
// Baselines and sweeps

std::string knn_example_text(std::span<const Neighbor> neighbors) {
  std::string out;
  for (const auto& n : neighbors) {
    if (!out.empty()) out.push_back('\n');
    out += render_example(*n.record);
  }
  return out;
}

std::vector<BaselineRow> run_baseline_knn(const RunConfig& cfg, const Dataset& data,
                                          std::span<const std::size_t> n_values) {
  cfg.validate();
  Embedder embedder(cfg.embedder);
  auto llm = LmBackend::create(cfg.llm);
  const PromptTemplate tmpl = load_template(cfg);
  const auto train = data.split(Split::kTrain);
  const auto test = data.split(Split::kTest);
  if (train.empty()) throw EmptyDataset("baseline needs a non-empty train split");
  if (test.empty()) throw EmptyDataset("baseline needs a non-empty test split");
  const ExampleIndex index(train, embedder);
  const auto labels = data.labels();

  std::vector<BaselineRow> rows;
  for (std::size_t n : n_values) {
    BaselineRow row{n, std::nullopt, {}};
    std::vector<ExtractionOutput> outputs(test.size());
    try {
      parallel_for(test.size(), cfg.llm.max_concurrent_requests, [&](std::size_t i) {
        const auto& x = test[i];
        std::vector<Neighbor> neighbors;
        if (n > 0) neighbors = index.top_n(embedder.embed_one(x.text), n);
        const std::string prompt = assemble_prompt(tmpl, knn_example_text(neighbors), x);
        outputs[i] = parse_output(llm->generate(prompt), cfg.task, labels);
      });
    } catch (const ContextOverflow& e) {
      row.error = e.kind();
      rows.push_back(std::move(row));
      continue;
    }
    if (cfg.task.variant == TaskVariant::kTripleExtraction) {
      std::vector<TripleSet> pred, gold;
      for (const auto& o : outputs) pred.push_back(o.triples.value_or(TripleSet{}));
      for (const auto& r : test) gold.push_back(*r.triples);
      row.score = score_triples(pred, gold);
    } else {
      std::vector<std::string> pred, gold;
      for (const auto& o : outputs) pred.push_back(o.label.value_or(""));
      for (const auto& r : test) gold.push_back(r.gold_output());
      row.score = score_labels(pred, gold);
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

nlohmann::json baseline_to_json(std::span<const BaselineRow> rows) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& r : rows) {
    nlohmann::json j{{"n", r.n}};
    if (r.score) j["score"] = r.score->to_json();
    else j["error"] = r.error;
    arr.push_back(std::move(j));
  }
  return arr;
}

std::string baseline_table(std::span<const BaselineRow> rows) {
  std::ostringstream out;
  char line[160];
  std::snprintf(line, sizeof(line), "%6s  %9s  %9s  %9s\n", "top-n", "Precision", "Recall", "F1");
  out << line;
  for (const auto& r : rows) {
    if (r.score) {
      std::snprintf(line, sizeof(line), "%6zu  %9.2f  %9.2f  %9.2f\n", r.n,
                    100.0 * r.score->precision, 100.0 * r.score->recall, 100.0 * r.score->f1);
    } else {
      std::snprintf(line, sizeof(line), "%6zu  %s\n", r.n, r.error.c_str());
    }
    out << line;
  }
  return out.str();
}

std::vector<SweepCell> run_sweep(const RunConfig& cfg, const Dataset& data,
                                 std::span<const std::size_t> chunk_lens,
                                 std::span<const std::size_t> top_ns) {
  std::vector<SweepCell> cells;
  for (std::size_t m : chunk_lens) {
    for (std::size_t n : top_ns) {
      SweepCell cell{m, n, std::nullopt, {}};
      RunConfig c = cfg;
      c.chunk_len = m;
      c.top_n = n;
      try {
        cell.score = run_pipeline(c, data).evaluation.headline;
      } catch (const PipelineError& e) {
        cell.error = e.cause_kind();
      } catch (const Error& e) {
        cell.error = e.kind();
      }
      cells.push_back(std::move(cell));
    }
  }
  return cells;
}

nlohmann::json sweep_to_json(std::span<const SweepCell> cells) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& c : cells) {
    nlohmann::json j{{"chunk_len", c.chunk_len}, {"top_n", c.top_n}};
    if (c.score) j["score"] = c.score->to_json();
    else j["error"] = c.error;
    arr.push_back(std::move(j));
  }
  return arr;
}

}  // namespace chunkrag
