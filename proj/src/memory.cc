#include "chunkrag/memory.h"

#include <algorithm>
#include <cstring>
#include <numeric>
#include <sstream>

#include "binary_io.h"

namespace chunkrag {

std::vector<Chunk> split_chunks(std::span<const std::string> words,
                                std::size_t m, const std::string& source_id) {
  if (m == 0) throw ConfigError("chunk length must be positive");
  if (words.empty()) throw EmptyText("cannot chunk an empty sentence");
  std::vector<Chunk> chunks;
  chunks.reserve((words.size() + m - 1) / m);
  for (std::size_t begin = 0; begin < words.size(); begin += m) {
    const std::size_t end = std::min(words.size(), begin + m);
    chunks.push_back(Chunk{Words(words.begin() + begin, words.begin() + end),
                           source_id, chunks.size()});
  }
  return chunks;
}

Words entity_pair_key(const SentenceRecord& record) {
  if (!record.head_entity || !record.tail_entity) {
    throw MissingEntities("record " + record.id + " has no entity pair");
  }
  Words key = normalize_text(*record.head_entity);
  for (auto& w : normalize_text(*record.tail_entity)) key.push_back(std::move(w));
  return key;
}

Memory::Memory(TaskKind task, std::size_t chunk_len, std::size_t dim,
               std::string embedder_fingerprint, std::vector<KeyValuePair> entries)
    : task_(task),
      chunk_len_(chunk_len),
      dim_(dim),
      fingerprint_(std::move(embedder_fingerprint)),
      entries_(std::move(entries)) {}

void Memory::check_probe(const Embedding& probe) const {
  if (entries_.empty()) throw EmptyMemory("memory has no entries");
  if (probe.dim() != dim_) {
    throw DimensionMismatch("probe dim " + std::to_string(probe.dim()) +
                            " vs memory dim " + std::to_string(dim_));
  }
}

KeyMatch Memory::lookup_best_key(const Embedding& probe) const {
  check_probe(probe);
  KeyMatch best{&entries_[0], 0, cosine(probe, entries_[0].key_embedding)};
  for (std::size_t i = 1; i < entries_.size(); ++i) {
    const double s = cosine(probe, entries_[i].key_embedding);
    if (s > best.similarity) best = KeyMatch{&entries_[i], i, s};
  }
  return best;
}

std::vector<KeyMatch> Memory::lookup_top_n(const Embedding& probe,
                                           std::size_t n) const {
  check_probe(probe);
  std::vector<KeyMatch> all;
  all.reserve(entries_.size());
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    all.push_back(KeyMatch{&entries_[i], i, cosine(probe, entries_[i].key_embedding)});
  }
  const std::size_t k = std::min(n, all.size());
  std::partial_sort(all.begin(), all.begin() + k, all.end(),
                    [](const KeyMatch& a, const KeyMatch& b) {
                      if (a.similarity != b.similarity) return a.similarity > b.similarity;
                      return a.index < b.index;
                    });
  all.resize(k);
  return all;
}

KeyMatch lookup_best_key(const Memory& memory, const Embedding& probe) {
  return memory.lookup_best_key(probe);
}

Memory build_memory(std::span<const SentenceRecord> dataset, TaskKind task,
                    std::size_t m, Embedder& embedder) {
  if (m == 0) throw ConfigError("chunk length must be positive");
  std::vector<KeyValuePair> entries;

  if (!task.noise_intensive()) {
    std::vector<Words> keys;
    keys.reserve(dataset.size());
    for (const auto& r : dataset) keys.push_back(entity_pair_key(r));
    auto embs = embedder.embed(keys);
    for (std::size_t i = 0; i < dataset.size(); ++i) {
      entries.push_back(KeyValuePair{std::move(keys[i]), dataset[i].label,
                                     std::move(embs[i]), dataset[i].id});
    }
    return Memory(task, m, embedder.config().dim, embedder.config().fingerprint(),
                  std::move(entries));
  }

  for (const auto& record : dataset) {
    if (record.label.description_text.empty()) {
      throw ConfigError("record " + record.id + " has no label description");
    }
    const auto chunks = split_chunks(record.text, m, record.id);
    std::vector<Words> texts;
    texts.reserve(chunks.size() + 1);
    texts.push_back(record.label.description_text);
    for (const auto& c : chunks) texts.push_back(c.words);
    auto embs = embedder.embed(texts);

    std::vector<double> sims(chunks.size());
    for (std::size_t c = 0; c < chunks.size(); ++c) {
      sims[c] = cosine(embs[0], embs[c + 1]);
    }
    std::vector<std::size_t> order(chunks.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return sims[a] > sims[b];
    });
    const std::size_t keep = std::min<std::size_t>(2, chunks.size());
    for (std::size_t r = 0; r < keep; ++r) {
      const std::size_t c = order[r];
      entries.push_back(KeyValuePair{chunks[c].words, record.label,
                                     std::move(embs[c + 1]), record.id});
    }
  }
  return Memory(task, m, embedder.config().dim, embedder.config().fingerprint(),
                std::move(entries));
}

// ---------------------------------------------------------------------------
// Persistence

namespace {
constexpr char kEmbeddingMagic[8] = {'B', 'M', 'R', 'A', 'G', 'E', 'M', 'B'};
}

std::string Memory::serialize() const {
  nlohmann::json header;
  header["format_version"] = kFormatVersion;
  header["task"] = task_.name();
  header["m"] = chunk_len_;
  header["dim"] = dim_;
  header["embedder_fingerprint"] = fingerprint_;
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& e : entries_) {
    entries.push_back({{"key", join_words(e.key_text)},
                       {"value", e.value.canonical_id},
                       {"description", join_words(e.value.description_text)},
                       {"source_id", e.source_id}});
  }
  header["entries"] = std::move(entries);
  const std::string header_text = header.dump();

  std::ostringstream out(std::ios::binary);
  io::write_u64(out, header_text.size());
  out.write(header_text.data(), static_cast<std::streamsize>(header_text.size()));
  out.write(kEmbeddingMagic, sizeof(kEmbeddingMagic));
  for (const auto& e : entries_) {
    const auto key = sha256(join_words(e.key_text));
    io::write_u32(out, static_cast<std::uint32_t>(key.size() + 4 + 4 * e.key_embedding.dim()));
    io::write_bytes(out, key);
    io::write_u32(out, static_cast<std::uint32_t>(e.key_embedding.dim()));
    for (float v : e.key_embedding.values) io::write_f32(out, v);
  }
  return out.str();
}

Memory Memory::deserialize(const std::string& bytes) {
  std::istringstream in(bytes, std::ios::binary);
  const std::uint64_t header_len = io::read_u64(in);
  if (header_len > bytes.size()) throw FormatError("memory header length is corrupt");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(io::read_string(in, header_len));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("memory header: ") + e.what());
  }
  if (header.value("format_version", 0u) != kFormatVersion) {
    throw FormatError("unsupported memory format version");
  }
  char magic[8];
  in.read(magic, 8);
  if (in.gcount() != 8 || std::memcmp(magic, kEmbeddingMagic, 8) != 0) {
    throw FormatError("memory embedding block has a bad magic");
  }
  const TaskKind task = TaskKind::parse(header.at("task").get<std::string>());
  const auto dim = header.at("dim").get<std::size_t>();
  std::vector<KeyValuePair> entries;
  for (const auto& je : header.at("entries")) {
    KeyValuePair e;
    e.key_text = normalize_text(je.at("key").get<std::string>());
    e.value.canonical_id = je.at("value").get<std::string>();
    e.value.description_text = normalize_text(je.at("description").get<std::string>());
    e.source_id = je.at("source_id").get<std::string>();
    const std::uint32_t length = io::read_u32(in);
    Sha256Digest key;
    io::read_bytes(in, key);
    const std::uint32_t d = io::read_u32(in);
    if (d != dim || length != key.size() + 4 + 4ull * d) {
      throw FormatError("memory embedding record is corrupt");
    }
    if (key != sha256(join_words(e.key_text))) {
      throw FormatError("memory embedding record does not match its key");
    }
    e.key_embedding.values.resize(d);
    for (auto& v : e.key_embedding.values) v = io::read_f32(in);
    entries.push_back(std::move(e));
  }
  return Memory(task, header.at("m").get<std::size_t>(), dim,
                header.at("embedder_fingerprint").get<std::string>(),
                std::move(entries));
}

void Memory::save(const std::string& path) const {
  io::write_file_atomic(path, serialize());
}

Memory Memory::load(const std::string& path) {
  return deserialize(io::read_file(path));
}

}  // namespace chunkrag
