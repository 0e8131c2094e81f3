#include "chunkrag/metrics.h"

#include <algorithm>
#include <cstdio>
#include <map>

namespace chunkrag {
namespace {

void check_aligned(std::size_t predictions, std::size_t gold) {
  if (predictions != gold) {
    throw AlignmentError(std::to_string(predictions) + " predictions for " +
                         std::to_string(gold) + " gold sentences");
  }
}

const std::string& element_of(const Triple& t, TripleElement e) {
  switch (e) {
    case TripleElement::kHead: return t.head;
    case TripleElement::kRelation: return t.relation;
    case TripleElement::kTail: return t.tail;
  }
  return t.head;
}

}  // namespace

MicroScore MicroScore::from_counts(std::size_t tp, std::size_t fp, std::size_t fn) {
  MicroScore s{tp, fp, fn, 0.0, 0.0, 0.0};
  if (tp + fp + fn == 0) {
    s.precision = s.recall = s.f1 = 1.0;
    return s;
  }
  s.precision = tp + fp == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
  s.recall = tp + fn == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fn);
  const double denom = s.precision + s.recall;
  s.f1 = denom == 0.0 ? 0.0 : 2.0 * s.precision * s.recall / denom;
  return s;
}

nlohmann::json MicroScore::to_json() const {
  return {{"tp", tp}, {"fp", fp}, {"fn", fn},
          {"precision", precision}, {"recall", recall}, {"f1", f1}};
}

std::string element_name(TripleElement element) {
  switch (element) {
    case TripleElement::kHead: return "head";
    case TripleElement::kRelation: return "relation";
    case TripleElement::kTail: return "tail";
  }
  return "head";
}

MicroScore score_triples(std::span<const TripleSet> predictions,
                         std::span<const TripleSet> gold) {
  check_aligned(predictions.size(), gold.size());
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    std::size_t hit = 0;
    for (const auto& t : predictions[i]) hit += gold[i].contains(t) ? 1 : 0;
    tp += hit;
    fp += predictions[i].size() - hit;
    fn += gold[i].size() - hit;
  }
  return MicroScore::from_counts(tp, fp, fn);
}

MicroScore score_elements(std::span<const TripleSet> predictions,
                          std::span<const TripleSet> gold, TripleElement element) {
  check_aligned(predictions.size(), gold.size());
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    std::map<std::string, std::size_t> p, g;
    for (const auto& t : predictions[i]) ++p[element_of(t, element)];
    for (const auto& t : gold[i]) ++g[element_of(t, element)];
    std::size_t hit = 0;
    for (const auto& [value, count] : p) {
      auto it = g.find(value);
      if (it != g.end()) hit += std::min(count, it->second);
    }
    tp += hit;
    fp += predictions[i].size() - hit;
    fn += gold[i].size() - hit;
  }
  return MicroScore::from_counts(tp, fp, fn);
}

MicroScore score_labels(std::span<const std::string> predictions,
                        std::span<const std::string> gold) {
  check_aligned(predictions.size(), gold.size());
  std::size_t tp = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    if (normalize_surface(predictions[i]) == normalize_surface(gold[i])) ++tp;
  }
  const std::size_t miss = gold.size() - tp;
  return MicroScore::from_counts(tp, miss, miss);
}

std::string format_table(const std::vector<std::pair<std::string, MicroScore>>& rows) {
  std::size_t width = 4;
  for (const auto& [name, _] : rows) width = std::max(width, name.size());
  std::string out;
  char line[256];
  std::snprintf(line, sizeof(line), "%-*s  %9s  %9s  %9s\n", static_cast<int>(width),
                "", "Precision", "Recall", "F1");
  out += line;
  for (const auto& [name, s] : rows) {
    std::snprintf(line, sizeof(line), "%-*s  %9.2f  %9.2f  %9.2f\n",
                  static_cast<int>(width), name.c_str(), 100.0 * s.precision,
                  100.0 * s.recall, 100.0 * s.f1);
    out += line;
  }
  return out;
}

}  // namespace chunkrag
