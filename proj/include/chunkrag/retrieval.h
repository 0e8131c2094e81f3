#pragma once

#include <span>
#include <string>
#include <vector>

#include "chunkrag/core.h"
#include "chunkrag/embedding.h"
#include "chunkrag/memory.h"

namespace chunkrag {

// One retrieved key-value pair a_i. `rendered` is key text, one space, then
// the value's canonical id.
struct RetrievedPair {
  Words key_text;
  Label value;
  std::string rendered;
  double similarity = 0.0;
  std::size_t entry_index = 0;

  static RetrievedPair from_match(const KeyMatch& match);
};

std::string render_pair(std::span<const std::string> key_text, const Label& value);

struct Provenance {
  enum class Kind { kNearestExample, kSingle, kOrderedPair };
  Kind kind = Kind::kNearestExample;
  std::size_t first = 0;
  std::size_t second = 0;

  std::string to_string() const;
  friend bool operator==(const Provenance&, const Provenance&) = default;
};

struct DocumentCandidate {
  std::size_t id = 0;
  std::string text;
  Provenance provenance;
};

// Splits x into chunks of length m and returns the best memory key for each,
// in chunk order.
std::vector<RetrievedPair> retrieve_pairs(const Memory& memory,
                                          const SentenceRecord& x, std::size_t m,
                                          Embedder& embedder);

// Link prediction: the n keys closest to the entity-pair text.
std::vector<RetrievedPair> retrieve_top_n(const Memory& memory,
                                          const SentenceRecord& x, std::size_t n,
                                          Embedder& embedder);

struct Neighbor {
  const SentenceRecord* record = nullptr;
  std::size_t index = 0;
  double similarity = 0.0;
};

// Precomputed sentence embeddings over a labelled dataset; backs both the
// nearest labelled example d_0 and the KNN baseline.
class ExampleIndex {
 public:
  ExampleIndex(std::span<const SentenceRecord> records, Embedder& embedder);

  // Most similar record other than `exclude_id`; ties by dataset order.
  // Throws NoCandidate when nothing else is left.
  Neighbor nearest(const Embedding& probe, const std::string& exclude_id) const;
  // Top n by similarity, descending, ties by dataset order.
  std::vector<Neighbor> top_n(const Embedding& probe, std::size_t n) const;

  std::size_t size() const { return records_.size(); }

 private:
  std::vector<SentenceRecord> records_;
  std::vector<Embedding> embeddings_;
};

Neighbor nearest_example(std::span<const SentenceRecord> dataset,
                         const SentenceRecord& x, Embedder& embedder);

// d_0 text: the example sentence, one space, its label's canonical id.
std::string render_example(const SentenceRecord& example);

struct DiversifyOptions {
  std::size_t cap = 4;
  bool diversity = true;  // false is the no-diversity ablation
};

// [d_0] ++ singles ++ ordered pairs (i != k, lexicographic) when
// |a_x| <= cap and diversity is on, otherwise [d_0] ++ singles.
std::vector<DocumentCandidate> diversify(std::span<const RetrievedPair> a_x,
                                         const SentenceRecord& nearest,
                                         const DiversifyOptions& options = {});

// Rebuilds a candidate's text from its provenance.
std::string reconstruct(const Provenance& provenance,
                        std::span<const RetrievedPair> a_x,
                        const SentenceRecord& nearest);

std::vector<Neighbor> knn_baseline(std::span<const SentenceRecord> dataset,
                                   const SentenceRecord& x, std::size_t n,
                                   Embedder& embedder);

nlohmann::json candidates_to_json(std::span<const DocumentCandidate> docs);

}  // namespace chunkrag
