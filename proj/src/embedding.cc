#include "chunkrag/embedding.h"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <thread>

#include "binary_io.h"
#include "http_util.h"

namespace chunkrag {
namespace {

constexpr char kCacheMagic[8] = {'B', 'M', 'R', 'A', 'G', 'E', 'M', 'B'};

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  // splitmix64 finalizer so the low bits (bucket) and the top bit (sign)
  // are well mixed.
  h ^= h >> 30;
  h *= 0xbf58476d1ce4e5b9ULL;
  h ^= h >> 27;
  h *= 0x94d049bb133111ebULL;
  h ^= h >> 31;
  return h;
}

Embedding normalized(std::span<const double> raw) {
  double sq = 0.0;
  for (double v : raw) sq += v * v;
  Embedding e;
  e.values.resize(raw.size());
  if (sq == 0.0) return e;
  const double inv = 1.0 / std::sqrt(sq);
  for (std::size_t i = 0; i < raw.size(); ++i) {
    e.values[i] = static_cast<float>(raw[i] * inv);
  }
  return e;
}

}  // namespace

double Embedding::norm() const {
  double sq = 0.0;
  for (float v : values) sq += static_cast<double>(v) * v;
  return std::sqrt(sq);
}

double dot(const Embedding& a, const Embedding& b) {
  if (a.dim() != b.dim()) {
    throw DimensionMismatch("embedding dims " + std::to_string(a.dim()) +
                            " vs " + std::to_string(b.dim()));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < a.dim(); ++i) {
    s += static_cast<double>(a.values[i]) * b.values[i];
  }
  return s;
}

double cosine(const Embedding& a, const Embedding& b) {
  const double d = dot(a, b);
  const double na = a.norm();
  const double nb = b.norm();
  if (na == 0.0 || nb == 0.0) return 0.0;
  return std::clamp(d / (na * nb), -1.0, 1.0);
}

std::string backend_name(EmbedderBackend backend) {
  return backend == EmbedderBackend::kRemote ? "remote" : "local-hash";
}

EmbedderBackend parse_embedder_backend(std::string_view name) {
  if (name == "remote") return EmbedderBackend::kRemote;
  if (name == "local-hash" || name == "local") return EmbedderBackend::kLocalHash;
  throw ConfigError("unknown embedder backend '" + std::string(name) + "'");
}

void EmbedderConfig::validate() const {
  if (dim == 0) throw ConfigError("embedder dim must be positive");
  if (max_concurrent_requests == 0) {
    throw ConfigError("max_concurrent_requests must be positive");
  }
  if (batch_size == 0) throw ConfigError("embedder batch_size must be positive");
  if (backend == EmbedderBackend::kRemote && (!endpoint || endpoint->empty())) {
    throw ConfigError("remote embedder requires an endpoint");
  }
}

std::string EmbedderConfig::fingerprint() const {
  std::string id = backend_name(backend) + "|" + std::to_string(dim);
  if (backend == EmbedderBackend::kRemote) id += "|" + endpoint.value_or("");
  return sha256_hex(id).substr(0, 16);
}

Embedding local_hash_embed(std::string_view text, std::size_t dim) {
  std::vector<double> buckets(dim, 0.0);
  std::string padded;
  padded.reserve(text.size() + 2);
  padded.push_back(' ');
  padded.append(text);
  padded.push_back(' ');
  for (std::size_t i = 0; i + 3 <= padded.size(); ++i) {
    const std::uint64_t h = fnv1a(std::string_view(padded).substr(i, 3));
    const double sign = (h >> 63) ? -1.0 : 1.0;
    buckets[h % dim] += sign;
  }
  return normalized(buckets);
}

// ---------------------------------------------------------------------------
// EmbeddingCache

std::size_t EmbeddingCache::DigestHash::operator()(const Sha256Digest& d) const {
  std::size_t h;
  std::memcpy(&h, d.data(), sizeof(h));
  return h;
}

Sha256Digest EmbeddingCache::key_for(std::string_view backend_id,
                                     std::size_t dim, std::string_view text) {
  std::string material;
  material.reserve(backend_id.size() + text.size() + 24);
  material.append(backend_id);
  material.push_back('\0');
  material.append(std::to_string(dim));
  material.push_back('\0');
  material.append(text);
  return sha256(material);
}

EmbeddingCache::EmbeddingCache(std::string path) : path_(std::move(path)) {
  if (!std::filesystem::exists(path_)) {
    std::ofstream out(path_, std::ios::binary);
    if (!out) throw FormatError("cannot create embedding cache " + path_);
    out.write(kCacheMagic, sizeof(kCacheMagic));
    return;
  }
  std::ifstream in(path_, std::ios::binary);
  if (!in) throw FormatError("cannot open embedding cache " + path_);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (in.gcount() != 8 || std::memcmp(magic, kCacheMagic, 8) != 0) {
    throw FormatError(path_ + " is not an embedding cache (bad magic)");
  }
  while (in.peek() != std::char_traits<char>::eof()) {
    const std::uint32_t length = io::read_u32(in);
    Sha256Digest key;
    io::read_bytes(in, key);
    const std::uint32_t dim = io::read_u32(in);
    if (length != key.size() + 4 + 4ull * dim) {
      throw FormatError(path_ + ": corrupt record length");
    }
    Embedding e;
    e.values.resize(dim);
    for (auto& v : e.values) v = io::read_f32(in);
    entries_.emplace(key, std::move(e));
  }
}

std::optional<Embedding> EmbeddingCache::lookup(const Sha256Digest& key) const {
  std::shared_lock lock(mu_);
  auto it = entries_.find(key);
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

void EmbeddingCache::insert(const Sha256Digest& key, const Embedding& e) {
  std::unique_lock lock(mu_);
  if (entries_.count(key)) return;
  std::ofstream out(path_, std::ios::binary | std::ios::app);
  if (!out) throw FormatError("cannot append to embedding cache " + path_);
  io::write_u32(out, static_cast<std::uint32_t>(key.size() + 4 + 4 * e.dim()));
  io::write_bytes(out, key);
  io::write_u32(out, static_cast<std::uint32_t>(e.dim()));
  for (float v : e.values) io::write_f32(out, v);
  entries_.emplace(key, e);
}

std::size_t EmbeddingCache::size() const {
  std::shared_lock lock(mu_);
  return entries_.size();
}

// ---------------------------------------------------------------------------
// Embedder

Embedder::Embedder(EmbedderConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  if (cfg_.cache_path) cache_ = std::make_unique<EmbeddingCache>(*cfg_.cache_path);
}

Embedder::~Embedder() = default;

Embedding Embedder::finalize(Embedding e) {
  if (e.dim() != cfg_.dim) {
    throw BackendUnavailable("backend returned dim " + std::to_string(e.dim()) +
                             ", expected " + std::to_string(cfg_.dim));
  }
  for (float v : e.values) {
    if (!std::isfinite(v)) throw BackendUnavailable("backend returned a non-finite vector");
  }
  if (e.norm() == 0.0) {
    zero_vectors_.fetch_add(1);
    std::fill(e.values.begin(), e.values.end(), 0.0f);
    e.values[0] = 1.0f;
  }
  return e;
}

std::vector<Embedding> Embedder::compute(std::span<const std::string> texts) {
  if (cfg_.backend == EmbedderBackend::kRemote) return compute_remote(texts);
  std::vector<Embedding> out;
  out.reserve(texts.size());
  for (const auto& t : texts) out.push_back(finalize(local_hash_embed(t, cfg_.dim)));
  return out;
}

std::vector<Embedding> Embedder::compute_remote(std::span<const std::string> texts) {
  const auto endpoint = http::parse_endpoint(*cfg_.endpoint);
  const http::RetryPolicy policy{cfg_.max_retries, cfg_.retry_backoff, cfg_.timeout};
  const std::size_t batches = (texts.size() + cfg_.batch_size - 1) / cfg_.batch_size;
  std::vector<Embedding> out(texts.size());
  std::atomic<std::size_t> next{0};
  std::mutex error_mu;
  std::exception_ptr error;

  auto worker = [&] {
    while (true) {
      const std::size_t b = next.fetch_add(1);
      if (b >= batches) return;
      {
        std::lock_guard lock(error_mu);
        if (error) return;
      }
      const std::size_t begin = b * cfg_.batch_size;
      const std::size_t end = std::min(texts.size(), begin + cfg_.batch_size);
      try {
        nlohmann::json body;
        body["texts"] = std::vector<std::string>(texts.begin() + begin,
                                                 texts.begin() + end);
        remote_calls_.fetch_add(1);
        const auto reply = http::post_json(endpoint, body, policy);
        const auto& vectors = reply.at("vectors");
        if (!vectors.is_array() || vectors.size() != end - begin) {
          throw BackendUnavailable("embedding reply has " +
                                   std::to_string(vectors.size()) +
                                   " vectors for " +
                                   std::to_string(end - begin) + " texts");
        }
        for (std::size_t i = begin; i < end; ++i) {
          const auto raw = vectors[i - begin].get<std::vector<double>>();
          out[i] = finalize(normalized(raw));
        }
      } catch (const nlohmann::json::exception& e) {
        std::lock_guard lock(error_mu);
        if (!error) {
          error = std::make_exception_ptr(
              BackendUnavailable(std::string("malformed embedding reply: ") + e.what()));
        }
      } catch (...) {
        std::lock_guard lock(error_mu);
        if (!error) error = std::current_exception();
      }
    }
  };

  const std::size_t workers = std::min(cfg_.max_concurrent_requests, batches);
  {
    std::vector<std::jthread> pool;
    for (std::size_t i = 1; i < workers; ++i) pool.emplace_back(worker);
    worker();
  }
  if (error) std::rethrow_exception(error);
  return out;
}

std::vector<Embedding> Embedder::embed(std::span<const Words> texts) {
  std::vector<std::string> joined;
  joined.reserve(texts.size());
  for (const auto& words : texts) {
    if (words.empty()) throw EmptyText("cannot embed an empty word sequence");
    joined.push_back(join_words(words));
  }

  std::vector<Embedding> out(joined.size());
  std::vector<Sha256Digest> keys;
  std::vector<std::size_t> missing;
  const std::string backend_id = backend_name(cfg_.backend);
  if (cache_) {
    keys.reserve(joined.size());
    for (std::size_t i = 0; i < joined.size(); ++i) {
      keys.push_back(EmbeddingCache::key_for(backend_id, cfg_.dim, joined[i]));
      if (auto hit = cache_->lookup(keys.back())) {
        out[i] = std::move(*hit);
      } else {
        missing.push_back(i);
      }
    }
  } else {
    missing.resize(joined.size());
    for (std::size_t i = 0; i < joined.size(); ++i) missing[i] = i;
  }
  if (missing.empty()) return out;

  std::vector<std::string> pending;
  pending.reserve(missing.size());
  for (std::size_t i : missing) pending.push_back(joined[i]);
  auto computed = compute(pending);
  for (std::size_t k = 0; k < missing.size(); ++k) {
    if (cache_) cache_->insert(keys[missing[k]], computed[k]);
    out[missing[k]] = std::move(computed[k]);
  }
  return out;
}

Embedding Embedder::embed_one(std::span<const std::string> words) {
  Words w(words.begin(), words.end());
  return std::move(embed(std::span<const Words>(&w, 1)).front());
}

Embedding Embedder::embed_text(std::string_view joined) {
  return embed_one(normalize_text(joined));
}

}  // namespace chunkrag
