#pragma once

#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "chunkrag/errors.h"
#include "json.hpp"

namespace chunkrag {

using Words = std::vector<std::string>;

enum class TaskVariant {
  kTripleExtraction,
  kRelationExtraction,
  kTextClassification,
  kLinkPrediction,
};

// Task taxonomy. Everything except link prediction is noise-intensive: the
// label hinges on a short span of the sentence, so retrieval works on chunks.
struct TaskKind {
  TaskVariant variant = TaskVariant::kTripleExtraction;

  bool noise_intensive() const {
    return variant != TaskVariant::kLinkPrediction;
  }
  bool requires_entities() const {
    return variant == TaskVariant::kRelationExtraction ||
           variant == TaskVariant::kLinkPrediction;
  }
  std::string name() const;
  // Accepts short names ("triple", "relation", "classification", "link") and
  // the long forms ("TripleExtraction", ...).
  static TaskKind parse(std::string_view name);

  friend bool operator==(const TaskKind&, const TaskKind&) = default;
};

enum class Split { kTrain, kDev, kTest };

std::string split_name(Split split);
Split parse_split(std::string_view name);

// Whitespace tokenization. Throws EmptyText when nothing remains.
Words normalize_text(std::string_view raw);

std::string join_words(std::span<const std::string> words);

// Case-fold (ASCII) plus whitespace collapse. Used for every exact-match
// comparison on surface strings.
std::string normalize_surface(std::string_view raw);

struct Label {
  std::string canonical_id;
  Words description_text;

  friend bool operator==(const Label&, const Label&) = default;
};

// canonical_id -> description text. Ids without an entry describe themselves.
class LabelInventory {
 public:
  LabelInventory() = default;
  explicit LabelInventory(std::map<std::string, std::string> descriptions);

  static LabelInventory load(const std::string& path);

  Label make_label(const std::string& canonical_id) const;
  Words describe(const std::string& canonical_id) const;
  bool contains(const std::string& canonical_id) const {
    return descriptions_.count(canonical_id) > 0;
  }

  const std::map<std::string, std::string>& descriptions() const {
    return descriptions_;
  }

 private:
  std::map<std::string, std::string> descriptions_;
};

struct Triple {
  std::string head;
  std::string relation;
  std::string tail;

  // Builds a triple with every field passed through normalize_surface.
  static Triple normalized(std::string_view head, std::string_view relation,
                           std::string_view tail);

  auto operator<=>(const Triple&) const = default;
};

// Set of normalized triples. Insertion normalizes, so duplicates that differ
// only in case or spacing collapse.
class TripleSet {
 public:
  TripleSet() = default;
  TripleSet(std::initializer_list<Triple> triples);

  void insert(std::string_view head, std::string_view relation,
              std::string_view tail);
  void insert(const Triple& triple);

  bool contains(const Triple& triple) const;
  std::size_t size() const { return triples_.size(); }
  bool empty() const { return triples_.empty(); }

  auto begin() const { return triples_.begin(); }
  auto end() const { return triples_.end(); }

  // "(h, r, t) (h2, r2, t2)" in set order.
  std::string render() const;

  friend bool operator==(const TripleSet&, const TripleSet&) = default;

 private:
  std::set<Triple> triples_;
};

struct Chunk {
  Words words;
  std::string source_id;
  std::size_t index = 0;
};

struct SentenceRecord {
  std::string id;
  Words text;
  Label label;
  std::optional<TripleSet> triples;  // triple extraction only
  std::optional<std::string> head_entity;
  std::optional<std::string> tail_entity;
  Split split = Split::kTrain;

  std::string text_string() const { return join_words(text); }
  // The ground-truth output string y the LM is asked to produce.
  const std::string& gold_output() const { return label.canonical_id; }
};

// Extracts every parenthesized, comma-separated "(h, r, t)" group. Groups
// with a field count other than three or empty fields are skipped; only
// innermost groups count, so "((a, b, c))" yields (a, b, c). Never throws.
TripleSet parse_triple_list(std::string_view raw);

// Label used as the memory value for a triple-labelled sentence: the rendered
// triple list as id, and "head relation-description tail ..." as description.
Label triple_label(const TripleSet& triples, const LabelInventory& inventory);

// Validates the per-task invariants. Throws ConfigError describing the
// violated rule.
void validate_record(const SentenceRecord& record, TaskKind task);

// JSONL record schema {"id","text","label","head","tail","split"}.
SentenceRecord record_from_json(const nlohmann::json& j, TaskKind task,
                                const LabelInventory& inventory);
nlohmann::json record_to_json(const SentenceRecord& record);

}  // namespace chunkrag
