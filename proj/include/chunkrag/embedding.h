#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "chunkrag/core.h"
#include "chunkrag/hash.h"

namespace chunkrag {

// A fixed-length embedding. Stored values are f32, which is also the on-disk
// precision, so a persisted and reloaded vector is bit-identical to the one
// computed in process. Arithmetic on embeddings is done in double.
struct Embedding {
  std::vector<float> values;

  std::size_t dim() const { return values.size(); }
  double norm() const;
  friend bool operator==(const Embedding&, const Embedding&) = default;
};

double dot(const Embedding& a, const Embedding& b);
// dot(a, b) / (|a| |b|). Throws DimensionMismatch. Returns 0 if either side
// is the zero vector.
double cosine(const Embedding& a, const Embedding& b);

enum class EmbedderBackend { kRemote, kLocalHash };

std::string backend_name(EmbedderBackend backend);
EmbedderBackend parse_embedder_backend(std::string_view name);

struct EmbedderConfig {
  EmbedderBackend backend = EmbedderBackend::kLocalHash;
  std::size_t dim = 256;
  std::optional<std::string> endpoint;
  std::optional<std::string> cache_path;
  std::size_t max_concurrent_requests = 4;
  // Remote tuning.
  std::size_t batch_size = 32;
  int max_retries = 3;
  std::chrono::milliseconds retry_backoff{100};
  std::chrono::milliseconds timeout{30000};

  void validate() const;
  // Identity of the embedding function: backend, dim and endpoint. Cache
  // location and concurrency settings do not change the vectors.
  std::string fingerprint() const;
};

// Hashed character trigrams of " " + text + " ", signed-hash projected onto
// `dim` buckets, L2-normalized. Returns the raw zero vector when every
// bucket cancels; Embedder handles that case.
Embedding local_hash_embed(std::string_view text, std::size_t dim);

// Content-addressed append-only cache of embeddings. File layout:
//   "BMRAGEMB" magic (8 bytes)
//   repeated records: u32 record_length | 32-byte SHA-256 key | u32 dim |
//                     dim x f32, all little-endian
// Safe for concurrent readers; writes are serialized.
class EmbeddingCache {
 public:
  explicit EmbeddingCache(std::string path);

  std::optional<Embedding> lookup(const Sha256Digest& key) const;
  void insert(const Sha256Digest& key, const Embedding& embedding);
  std::size_t size() const;

  static Sha256Digest key_for(std::string_view backend_id, std::size_t dim,
                              std::string_view text);

 private:
  struct DigestHash {
    std::size_t operator()(const Sha256Digest& d) const;
  };

  std::string path_;
  mutable std::shared_mutex mu_;
  std::unordered_map<Sha256Digest, Embedding, DigestHash> entries_;
};

// Encoder E(.) over word sequences. Thread-safe.
class Embedder {
 public:
  explicit Embedder(EmbedderConfig cfg);
  ~Embedder();

  std::vector<Embedding> embed(std::span<const Words> texts);
  Embedding embed_one(std::span<const std::string> words);
  Embedding embed_text(std::string_view joined);

  const EmbedderConfig& config() const { return cfg_; }
  // Number of inputs whose embedding was the zero vector and got replaced by
  // the basis vector e1.
  std::size_t zero_vector_count() const { return zero_vectors_.load(); }
  std::size_t remote_calls() const { return remote_calls_.load(); }

 private:
  std::vector<Embedding> compute(std::span<const std::string> texts);
  std::vector<Embedding> compute_remote(std::span<const std::string> texts);
  Embedding finalize(Embedding e);

  EmbedderConfig cfg_;
  std::unique_ptr<EmbeddingCache> cache_;
  std::atomic<std::size_t> zero_vectors_{0};
  std::atomic<std::size_t> remote_calls_{0};
};

}  // namespace chunkrag
