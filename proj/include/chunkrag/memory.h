#pragma once

#include <span>
#include <string>
#include <utility>
#include <vector>

#include "chunkrag/core.h"
#include "chunkrag/embedding.h"

namespace chunkrag {

// Splits `words` into ceil(w/m) consecutive chunks of length m; only the last
// chunk may be shorter.
std::vector<Chunk> split_chunks(std::span<const std::string> words,
                                std::size_t m, const std::string& source_id = {});

struct KeyValuePair {
  Words key_text;
  Label value;
  Embedding key_embedding;
  std::string source_id;
};

struct KeyMatch {
  const KeyValuePair* entry = nullptr;
  std::size_t index = 0;
  double similarity = 0.0;
};

// The relational key-value memory: (chunk key, label value) entries.
// Immutable once built.
class Memory {
 public:
  static constexpr std::uint32_t kFormatVersion = 1;

  Memory() = default;
  Memory(TaskKind task, std::size_t chunk_len, std::size_t dim,
         std::string embedder_fingerprint, std::vector<KeyValuePair> entries);

  TaskKind task() const { return task_; }
  std::size_t chunk_len() const { return chunk_len_; }
  std::size_t dim() const { return dim_; }
  const std::string& embedder_fingerprint() const { return fingerprint_; }
  const std::vector<KeyValuePair>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }

  // Exact scan; ties go to the lowest insertion index.
  KeyMatch lookup_best_key(const Embedding& probe) const;
  // The n most similar entries, descending, ties by insertion index.
  std::vector<KeyMatch> lookup_top_n(const Embedding& probe, std::size_t n) const;

  // File layout:
  //   u64 header_length | JSON header {format_version, task, m, dim,
  //                                   embedder_fingerprint, entries[...]}
  //   embedding block in the EmbeddingCache layout (magic + one record per
  //   entry, keyed by SHA-256 of the key text, in entry order).
  std::string serialize() const;
  static Memory deserialize(const std::string& bytes);
  void save(const std::string& path) const;
  static Memory load(const std::string& path);

 private:
  void check_probe(const Embedding& probe) const;

  TaskKind task_;
  std::size_t chunk_len_ = 0;
  std::size_t dim_ = 0;
  std::string fingerprint_;
  std::vector<KeyValuePair> entries_;
};

// Builds the memory from the source dataset.
//  - Noise-intensive tasks: each sentence is chunked with length m and the
//    two chunks most similar to the label description become keys (one key
//    when the sentence has a single chunk). Ties go to the lower chunk index.
//  - Link prediction: one entry per record keyed by "head tail".
Memory build_memory(std::span<const SentenceRecord> dataset, TaskKind task,
                    std::size_t m, Embedder& embedder);

KeyMatch lookup_best_key(const Memory& memory, const Embedding& probe);

// Words used as the link-prediction key for a record.
Words entity_pair_key(const SentenceRecord& record);

}  // namespace chunkrag
