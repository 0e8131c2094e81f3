#include "chunkrag/synthetic.h"

#include <filesystem>
#include <algorithm>
#include <numeric>
#include <random>
#include <set>

#include "binary_io.h"

namespace chunkrag {
namespace {

std::string pseudo_word(std::mt19937_64& rng, std::size_t syllables) {
  static constexpr char kConsonants[] = "bcdfghjklmnprstvz";
  static constexpr char kVowels[] = "aeiou";
  std::uniform_int_distribution<std::size_t> c(0, sizeof(kConsonants) - 2);
  std::uniform_int_distribution<std::size_t> v(0, sizeof(kVowels) - 2);
  std::string w;
  for (std::size_t i = 0; i < syllables; ++i) {
    w.push_back(kConsonants[c(rng)]);
    w.push_back(kVowels[v(rng)]);
  }
  return w;
}

std::string label_id(std::size_t i) {
  std::string suffix;
  do {
    suffix.insert(suffix.begin(), static_cast<char>('A' + i % 26));
    i /= 26;
  } while (i > 0);
  return "LBL_" + suffix;
}

}  // namespace

SyntheticCorpus make_synthetic(const SyntheticSpec& spec) {
  if (spec.num_labels == 0 || spec.vocabulary == 0) {
    throw ConfigError("synthetic corpus needs labels and a vocabulary");
  }
  if (spec.sentence_len < 2) throw ConfigError("synthetic sentences need at least 2 words");
  std::mt19937_64 rng(spec.seed);
  std::set<std::string> used;
  auto fresh = [&](std::size_t syllables) {
    while (true) {
      auto w = pseudo_word(rng, syllables);
      if (used.insert(w).second) return w;
    }
  };
  std::vector<std::string> filler;
  for (std::size_t i = 0; i < spec.vocabulary; ++i) filler.push_back(fresh(2));

  SyntheticCorpus corpus;
  std::map<std::string, std::string> descriptions;
  std::vector<std::string> ids;
  for (std::size_t l = 0; l < spec.num_labels; ++l) {
    const std::string id = label_id(l);
    const std::string marker = fresh(3) + " " + fresh(3);
    ids.push_back(id);
    corpus.markers[id] = marker;
    descriptions[id] = marker;
  }
  corpus.inventory = LabelInventory(descriptions);

  for (const auto& id : ids) {
    const auto halves = normalize_text(corpus.markers[id]);
    for (const auto& [first, second] : {std::pair{halves[0], halves[1]},
                                        std::pair{halves[1], halves[0]}}) {
      corpus.rules.push_back(
          {first + " " + id + " " + second + " " + id, spec.hit_probability, id});
    }
  }

  std::uniform_int_distribution<std::size_t> pick_word(0, filler.size() - 1);
  std::uniform_int_distribution<std::size_t> pick_label(0, ids.size() - 1);
  std::vector<std::size_t> positions(spec.sentence_len);
  std::iota(positions.begin(), positions.end(), 0);
  const std::pair<Split, std::size_t> splits[] = {
      {Split::kTrain, spec.train}, {Split::kDev, spec.dev}, {Split::kTest, spec.test}};
  for (const auto& [split, count] : splits) {
    for (std::size_t i = 0; i < count; ++i) {
      const std::string& id = ids[pick_label(rng)];
      const auto marker = normalize_text(corpus.markers[id]);
      Words words(spec.sentence_len);
      for (auto& w : words) w = filler[pick_word(rng)];
      std::shuffle(positions.begin(), positions.end(), rng);
      words[positions[0]] = marker[0];
      words[positions[1]] = marker[1];
      SentenceRecord r;
      r.id = split_name(split) + "-" + std::to_string(i);
      r.split = split;
      if (spec.task.requires_entities()) {
        r.head_entity = words.front();
        r.tail_entity = words.back();
      }
      if (spec.task.variant == TaskVariant::kLinkPrediction) {
        r.head_entity = marker[0];
        r.tail_entity = filler[pick_word(rng)];
        r.text = normalize_text(*r.head_entity + ", " + *r.tail_entity);
      } else {
        r.text = std::move(words);
      }
      if (spec.task.variant == TaskVariant::kTripleExtraction) {
        TripleSet t;
        t.insert(marker[0], id, marker[1]);
        r.triples = t;
        r.label = triple_label(t, corpus.inventory);
      } else {
        r.label = corpus.inventory.make_label(id);
      }
      corpus.records.push_back(std::move(r));
    }
  }
  return corpus;
}

void write_synthetic(const SyntheticCorpus& corpus, const std::string& dir) {
  std::filesystem::create_directories(dir);
  const std::filesystem::path root(dir);
  std::string jsonl;
  for (const auto& r : corpus.records) jsonl += record_to_json(r).dump() + "\n";
  io::write_file_atomic((root / "data.jsonl").string(), jsonl);
  io::write_file_atomic((root / "labels.json").string(),
                        nlohmann::json(corpus.inventory.descriptions()).dump(2) + "\n");
  io::write_file_atomic((root / "rules.json").string(),
                        mock_rules_to_json(corpus.rules).dump(2) + "\n");
}

}  // namespace chunkrag
