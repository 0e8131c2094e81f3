#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "chunkrag/core.h"

namespace chunkrag {

// Micro-averaged counts. When a denominator is zero the corresponding ratio
// is 0, unless the whole corpus has neither gold items nor predictions, in
// which case precision, recall and F1 are all 1.
struct MicroScore {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;

  static MicroScore from_counts(std::size_t tp, std::size_t fp, std::size_t fn);
  nlohmann::json to_json() const;
};

enum class TripleElement { kHead, kRelation, kTail };

std::string element_name(TripleElement element);

MicroScore score_triples(std::span<const TripleSet> predictions,
                         std::span<const TripleSet> gold);

// Each sentence's triples are projected onto one element as a multiset;
// tp per value is min(count_pred, count_gold).
MicroScore score_elements(std::span<const TripleSet> predictions,
                          std::span<const TripleSet> gold, TripleElement element);

// Single-label scoring: a hit is one tp, a miss is one fp and one fn, so
// precision = recall = f1 = accuracy. Labels compare after normalize_surface.
MicroScore score_labels(std::span<const std::string> predictions,
                        std::span<const std::string> gold);

// Rows of (name, score) rendered as an aligned Precision/Recall/F1 table.
std::string format_table(const std::vector<std::pair<std::string, MicroScore>>& rows);

}  // namespace chunkrag
