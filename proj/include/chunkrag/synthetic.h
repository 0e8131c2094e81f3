#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "chunkrag/core.h"
#include "chunkrag/llm.h"

namespace chunkrag {

// Planted-marker corpus. Every label owns a two-word marker that is also its
// description; each sentence is random filler with the two marker words
// planted at distinct random positions. With chunk_len 1 the two halves land
// in separate memory keys, and the mock LM only answers confidently when the
// example holds both halves, which takes an ordered-pair document. Label ids
// never occur in sentence text.
struct SyntheticSpec {
  TaskKind task{TaskVariant::kTextClassification};
  std::size_t num_labels = 8;
  std::size_t vocabulary = 200;
  std::size_t sentence_len = 4;  // words, marker included
  std::size_t train = 50;
  std::size_t dev = 40;
  std::size_t test = 20;
  std::uint64_t seed = 0;
  double hit_probability = 0.9;
};

struct SyntheticCorpus {
  std::vector<SentenceRecord> records;
  LabelInventory inventory;
  std::map<std::string, std::string> markers;  // label id -> marker phrase
  // "a LBL b LBL" and "b LBL a LBL" (a, b the marker halves) -> the hit
  // probability with the label as completion. Everything else falls back.
  std::vector<MockRule> rules;
};

SyntheticCorpus make_synthetic(const SyntheticSpec& spec);

// Writes data.jsonl, labels.json and rules.json into `dir`.
void write_synthetic(const SyntheticCorpus& corpus, const std::string& dir);

}  // namespace chunkrag
