#include "chunkrag/core.h"

#include <algorithm>
#include <cctype>
#include <fstream>

namespace chunkrag {
namespace {

bool is_space(char c) {
  return std::isspace(static_cast<unsigned char>(c)) != 0;
}

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && is_space(s[b])) ++b;
  while (e > b && is_space(s[e - 1])) --e;
  return std::string(s.substr(b, e - b));
}

}  // namespace

std::string TaskKind::name() const {
  switch (variant) {
    case TaskVariant::kTripleExtraction: return "triple";
    case TaskVariant::kRelationExtraction: return "relation";
    case TaskVariant::kTextClassification: return "classification";
    case TaskVariant::kLinkPrediction: return "link";
  }
  return "triple";
}

TaskKind TaskKind::parse(std::string_view name) {
  const std::string n = normalize_surface(name);
  if (n == "triple" || n == "tripleextraction") {
    return {TaskVariant::kTripleExtraction};
  }
  if (n == "relation" || n == "relationextraction") {
    return {TaskVariant::kRelationExtraction};
  }
  if (n == "classification" || n == "textclassification") {
    return {TaskVariant::kTextClassification};
  }
  if (n == "link" || n == "linkprediction") {
    return {TaskVariant::kLinkPrediction};
  }
  throw ConfigError("unknown task '" + std::string(name) + "'");
}

std::string split_name(Split split) {
  switch (split) {
    case Split::kTrain: return "train";
    case Split::kDev: return "dev";
    case Split::kTest: return "test";
  }
  return "train";
}

Split parse_split(std::string_view name) {
  const std::string n = normalize_surface(name);
  if (n == "train") return Split::kTrain;
  if (n == "dev" || n == "valid" || n == "validation") return Split::kDev;
  if (n == "test") return Split::kTest;
  throw ConfigError("unknown split '" + std::string(name) + "'");
}

Words normalize_text(std::string_view raw) {
  Words words;
  std::size_t i = 0;
  while (i < raw.size()) {
    while (i < raw.size() && is_space(raw[i])) ++i;
    std::size_t start = i;
    while (i < raw.size() && !is_space(raw[i])) ++i;
    if (i > start) words.emplace_back(raw.substr(start, i - start));
  }
  if (words.empty()) throw EmptyText("text is empty after normalization");
  return words;
}

std::string join_words(std::span<const std::string> words) {
  std::string out;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i) out.push_back(' ');
    out += words[i];
  }
  return out;
}

std::string normalize_surface(std::string_view raw) {
  std::string out;
  bool pending_space = false;
  for (char c : raw) {
    if (is_space(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  }
  return out;
}

LabelInventory::LabelInventory(std::map<std::string, std::string> descriptions)
    : descriptions_(std::move(descriptions)) {}

LabelInventory LabelInventory::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open label inventory " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("label inventory " + path + ": " + e.what());
  }
  if (!j.is_object()) {
    throw ConfigError("label inventory must be a JSON object: " + path);
  }
  std::map<std::string, std::string> d;
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!it.value().is_string()) {
      throw ConfigError("label description for '" + it.key() +
                        "' must be a string");
    }
    d[it.key()] = it.value().get<std::string>();
  }
  return LabelInventory(std::move(d));
}

Words LabelInventory::describe(const std::string& canonical_id) const {
  auto it = descriptions_.find(canonical_id);
  if (it == descriptions_.end()) {
    // Triple relations arrive case-folded; match the inventory the same way.
    const std::string folded = normalize_surface(canonical_id);
    it = std::find_if(descriptions_.begin(), descriptions_.end(),
                      [&](const auto& kv) { return normalize_surface(kv.first) == folded; });
  }
  if (it != descriptions_.end()) {
    try {
      return normalize_text(it->second);
    } catch (const EmptyText&) {
      // fall through to the id itself
    }
  }
  return normalize_text(canonical_id);
}

Label LabelInventory::make_label(const std::string& canonical_id) const {
  return Label{canonical_id, describe(canonical_id)};
}

Triple Triple::normalized(std::string_view head, std::string_view relation,
                          std::string_view tail) {
  return Triple{normalize_surface(head), normalize_surface(relation),
                normalize_surface(tail)};
}

TripleSet::TripleSet(std::initializer_list<Triple> triples) {
  for (const auto& t : triples) insert(t);
}

void TripleSet::insert(std::string_view head, std::string_view relation,
                       std::string_view tail) {
  triples_.insert(Triple::normalized(head, relation, tail));
}

void TripleSet::insert(const Triple& triple) {
  insert(triple.head, triple.relation, triple.tail);
}

bool TripleSet::contains(const Triple& triple) const {
  return triples_.count(
             Triple::normalized(triple.head, triple.relation, triple.tail)) > 0;
}

std::string TripleSet::render() const {
  std::string out;
  for (const auto& t : triples_) {
    if (!out.empty()) out.push_back(' ');
    out += "(" + t.head + ", " + t.relation + ", " + t.tail + ")";
  }
  return out;
}

TripleSet parse_triple_list(std::string_view raw) {
  TripleSet set;
  std::size_t pos = 0;
  while (pos < raw.size()) {
    const std::size_t open = raw.find('(', pos);
    if (open == std::string_view::npos) break;
    const std::size_t close = raw.find_first_of("()", open + 1);
    if (close == std::string_view::npos) break;
    if (raw[close] == '(') {  // nested or unbalanced: restart at inner paren
      pos = close;
      continue;
    }
    std::string_view body = raw.substr(open + 1, close - open - 1);
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
      const std::size_t comma = body.find(',', start);
      fields.push_back(trim(body.substr(start, comma - start)));
      if (comma == std::string_view::npos) break;
      start = comma + 1;
    }
    if (fields.size() == 3 && !fields[0].empty() && !fields[1].empty() &&
        !fields[2].empty()) {
      set.insert(fields[0], fields[1], fields[2]);
    }
    pos = close + 1;
  }
  return set;
}

Label triple_label(const TripleSet& triples, const LabelInventory& inventory) {
  Label label;
  label.canonical_id = triples.render();
  for (const auto& t : triples) {
    for (auto& w : normalize_text(t.head)) label.description_text.push_back(w);
    for (auto& w : inventory.describe(t.relation)) {
      label.description_text.push_back(std::move(w));
    }
    for (auto& w : normalize_text(t.tail)) label.description_text.push_back(w);
  }
  if (label.description_text.empty()) {
    throw ConfigError("triple label has no triples");
  }
  return label;
}

void validate_record(const SentenceRecord& record, TaskKind task) {
  if (record.id.empty()) throw ConfigError("record id is empty");
  if (record.text.empty()) throw EmptyText("record " + record.id + " has empty text");
  if (task.requires_entities()) {
    if (!record.head_entity || !record.tail_entity ||
        normalize_surface(*record.head_entity).empty() ||
        normalize_surface(*record.tail_entity).empty()) {
      throw MissingEntities("record " + record.id + " requires head and tail entities");
    }
  }
  if (task.variant == TaskVariant::kTripleExtraction) {
    if (!record.triples || record.triples->empty()) {
      throw ConfigError("record " + record.id + " has no gold triples");
    }
  }
  if (record.label.canonical_id.empty()) {
    throw ConfigError("record " + record.id + " has no label");
  }
  if (record.label.description_text.empty()) {
    throw ConfigError("record " + record.id + " has an empty label description");
  }
}

namespace {

std::optional<std::string> optional_string(const nlohmann::json& j,
                                           const char* key) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return std::nullopt;
  if (!it->is_string()) {
    throw ConfigError(std::string("field \"") + key + "\" must be a string");
  }
  return it->get<std::string>();
}

TripleSet triples_from_json(const nlohmann::json& label) {
  if (label.is_string()) return parse_triple_list(label.get<std::string>());
  if (!label.is_array()) {
    throw ConfigError("triple label must be a string or an array");
  }
  TripleSet set;
  for (const auto& t : label) {
    if (t.is_array() && t.size() == 3 && t[0].is_string() &&
        t[1].is_string() && t[2].is_string()) {
      set.insert(t[0].get<std::string>(), t[1].get<std::string>(),
                 t[2].get<std::string>());
    } else if (t.is_object() && t.contains("head") && t.contains("relation") &&
               t.contains("tail")) {
      set.insert(t.at("head").get<std::string>(),
                 t.at("relation").get<std::string>(),
                 t.at("tail").get<std::string>());
    } else {
      throw ConfigError("malformed triple in label: " + t.dump());
    }
  }
  return set;
}

}  // namespace

SentenceRecord record_from_json(const nlohmann::json& j, TaskKind task,
                                const LabelInventory& inventory) {
  if (!j.is_object()) throw ConfigError("record must be a JSON object");
  SentenceRecord r;
  auto id = j.find("id");
  if (id == j.end() || !(id->is_string() || id->is_number_integer())) {
    throw ConfigError("missing \"id\"");
  }
  r.id = id->is_string() ? id->get<std::string>() : id->dump();
  r.head_entity = optional_string(j, "head");
  r.tail_entity = optional_string(j, "tail");

  if (task.variant == TaskVariant::kLinkPrediction) {
    if (!r.head_entity || !r.tail_entity) {
      throw MissingEntities("link prediction record requires \"head\" and \"tail\"");
    }
    r.text = normalize_text(*r.head_entity + ", " + *r.tail_entity);
  } else {
    auto text = optional_string(j, "text");
    if (!text) throw ConfigError("missing \"text\"");
    r.text = normalize_text(*text);
  }

  auto label = j.find("label");
  if (label == j.end() || label->is_null()) throw ConfigError("missing \"label\"");
  if (task.variant == TaskVariant::kTripleExtraction) {
    r.triples = triples_from_json(*label);
    if (r.triples->empty()) throw ConfigError("label contains no triples");
    r.label = triple_label(*r.triples, inventory);
  } else {
    if (!label->is_string()) throw ConfigError("\"label\" must be a string");
    r.label = inventory.make_label(label->get<std::string>());
  }

  auto split = optional_string(j, "split");
  r.split = split ? parse_split(*split) : Split::kTrain;
  validate_record(r, task);
  return r;
}

nlohmann::json record_to_json(const SentenceRecord& record) {
  nlohmann::json j;
  j["id"] = record.id;
  j["text"] = record.text_string();
  if (record.triples) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& t : *record.triples) {
      arr.push_back({t.head, t.relation, t.tail});
    }
    j["label"] = arr;
  } else {
    j["label"] = record.label.canonical_id;
  }
  j["head"] = record.head_entity ? nlohmann::json(*record.head_entity)
                                 : nlohmann::json(nullptr);
  j["tail"] = record.tail_entity ? nlohmann::json(*record.tail_entity)
                                 : nlohmann::json(nullptr);
  j["split"] = split_name(record.split);
  return j;
}

}  // namespace chunkrag
