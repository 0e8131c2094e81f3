#include "chunkrag/retrieval.h"

#include <algorithm>

namespace chunkrag {

std::string render_pair(std::span<const std::string> key_text, const Label& value) {
  return join_words(key_text) + " " + value.canonical_id;
}

RetrievedPair RetrievedPair::from_match(const KeyMatch& match) {
  RetrievedPair p;
  p.key_text = match.entry->key_text;
  p.value = match.entry->value;
  p.rendered = render_pair(p.key_text, p.value);
  p.similarity = match.similarity;
  p.entry_index = match.index;
  return p;
}

std::string Provenance::to_string() const {
  switch (kind) {
    case Kind::kNearestExample: return "nearest-example";
    case Kind::kSingle: return "single(" + std::to_string(first) + ")";
    case Kind::kOrderedPair:
      return "ordered-pair(" + std::to_string(first) + "," + std::to_string(second) + ")";
  }
  return "nearest-example";
}

std::vector<RetrievedPair> retrieve_pairs(const Memory& memory,
                                          const SentenceRecord& x, std::size_t m,
                                          Embedder& embedder) {
  if (!memory.task().noise_intensive()) {
    throw ConfigError("retrieve_pairs needs a chunk memory; use retrieve_top_n");
  }
  if (memory.chunk_len() != m) {
    throw ConfigError("memory was built with m=" + std::to_string(memory.chunk_len()) +
                      ", retrieval asked for m=" + std::to_string(m));
  }
  if (memory.empty()) throw EmptyMemory("memory has no entries");
  const auto chunks = split_chunks(x.text, m, x.id);
  std::vector<Words> texts;
  texts.reserve(chunks.size());
  for (const auto& c : chunks) texts.push_back(c.words);
  const auto embs = embedder.embed(texts);
  std::vector<RetrievedPair> out;
  out.reserve(chunks.size());
  for (const auto& e : embs) {
    out.push_back(RetrievedPair::from_match(memory.lookup_best_key(e)));
  }
  return out;
}

std::vector<RetrievedPair> retrieve_top_n(const Memory& memory,
                                          const SentenceRecord& x, std::size_t n,
                                          Embedder& embedder) {
  if (memory.task().variant != TaskVariant::kLinkPrediction) {
    throw ConfigError("retrieve_top_n applies to link prediction memories");
  }
  if (n == 0) throw ConfigError("top_n must be positive");
  if (memory.empty()) throw EmptyMemory("memory has no entries");
  const auto probe = embedder.embed_one(x.text);
  std::vector<RetrievedPair> out;
  for (const auto& match : memory.lookup_top_n(probe, n)) {
    out.push_back(RetrievedPair::from_match(match));
  }
  return out;
}

ExampleIndex::ExampleIndex(std::span<const SentenceRecord> records,
                           Embedder& embedder)
    : records_(records.begin(), records.end()) {
  std::vector<Words> texts;
  texts.reserve(records_.size());
  for (const auto& r : records_) texts.push_back(r.text);
  embeddings_ = embedder.embed(texts);
}

Neighbor ExampleIndex::nearest(const Embedding& probe,
                               const std::string& exclude_id) const {
  Neighbor best;
  for (std::size_t i = 0; i < records_.size(); ++i) {
    if (records_[i].id == exclude_id) continue;
    const double s = cosine(probe, embeddings_[i]);
    if (!best.record || s > best.similarity) best = Neighbor{&records_[i], i, s};
  }
  if (!best.record) throw NoCandidate("no example other than the input itself");
  return best;
}

std::vector<Neighbor> ExampleIndex::top_n(const Embedding& probe,
                                          std::size_t n) const {
  std::vector<Neighbor> all;
  all.reserve(records_.size());
  for (std::size_t i = 0; i < records_.size(); ++i) {
    all.push_back(Neighbor{&records_[i], i, cosine(probe, embeddings_[i])});
  }
  const std::size_t k = std::min(n, all.size());
  std::partial_sort(all.begin(), all.begin() + k, all.end(),
                    [](const Neighbor& a, const Neighbor& b) {
                      if (a.similarity != b.similarity) return a.similarity > b.similarity;
                      return a.index < b.index;
                    });
  all.resize(k);
  return all;
}

Neighbor nearest_example(std::span<const SentenceRecord> dataset,
                         const SentenceRecord& x, Embedder& embedder) {
  if (dataset.empty()) throw NoCandidate("example dataset is empty");
  // Only the returned pointer's target must outlive this call, so resolve it
  // against the caller's span rather than the temporary index.
  ExampleIndex index(dataset, embedder);
  const Neighbor n = index.nearest(embedder.embed_one(x.text), x.id);
  return Neighbor{&dataset[n.index], n.index, n.similarity};
}

std::string render_example(const SentenceRecord& example) {
  return example.text_string() + " " + example.label.canonical_id;
}

std::vector<DocumentCandidate> diversify(std::span<const RetrievedPair> a_x,
                                         const SentenceRecord& nearest,
                                         const DiversifyOptions& options) {
  if (a_x.empty()) throw EmptyRetrieval("no retrieved pairs to diversify");
  std::vector<DocumentCandidate> docs;
  const std::size_t v = a_x.size();
  const bool pairs = options.diversity && v <= options.cap;
  docs.reserve(1 + v + (pairs ? v * (v - 1) : 0));
  docs.push_back({0, render_example(nearest), {Provenance::Kind::kNearestExample, 0, 0}});
  for (std::size_t i = 0; i < v; ++i) {
    docs.push_back({docs.size(), a_x[i].rendered, {Provenance::Kind::kSingle, i, 0}});
  }
  if (pairs) {
    for (std::size_t i = 0; i < v; ++i) {
      for (std::size_t k = 0; k < v; ++k) {
        if (i == k) continue;
        docs.push_back({docs.size(), a_x[i].rendered + " " + a_x[k].rendered,
                        {Provenance::Kind::kOrderedPair, i, k}});
      }
    }
  }
  return docs;
}

std::string reconstruct(const Provenance& provenance,
                        std::span<const RetrievedPair> a_x,
                        const SentenceRecord& nearest) {
  switch (provenance.kind) {
    case Provenance::Kind::kNearestExample: return render_example(nearest);
    case Provenance::Kind::kSingle: return a_x[provenance.first].rendered;
    case Provenance::Kind::kOrderedPair:
      return a_x[provenance.first].rendered + " " + a_x[provenance.second].rendered;
  }
  return {};
}

std::vector<Neighbor> knn_baseline(std::span<const SentenceRecord> dataset,
                                   const SentenceRecord& x, std::size_t n,
                                   Embedder& embedder) {
  if (dataset.empty()) return {};
  ExampleIndex index(dataset, embedder);
  auto top = index.top_n(embedder.embed_one(x.text), n);
  for (auto& nb : top) nb.record = &dataset[nb.index];
  return top;
}

nlohmann::json candidates_to_json(std::span<const DocumentCandidate> docs) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& d : docs) {
    arr.push_back({{"j", d.id}, {"text", d.text}, {"provenance", d.provenance.to_string()}});
  }
  return arr;
}

}  // namespace chunkrag
