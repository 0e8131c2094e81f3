#include "chunkrag/extraction.h"

#include <algorithm>
#include <cctype>

#include "binary_io.h"

namespace chunkrag {
namespace {

std::size_t count_occurrences(std::string_view haystack, std::string_view needle) {
  std::size_t n = 0;
  for (auto pos = haystack.find(needle); pos != std::string_view::npos;
       pos = haystack.find(needle, pos + needle.size())) {
    ++n;
  }
  return n;
}

std::string replace_once(std::string s, std::string_view slot, std::string_view value) {
  const auto pos = s.find(slot);
  s.replace(pos, slot.size(), value);
  return s;
}

const char* default_text(TaskVariant v) {
  switch (v) {
    case TaskVariant::kTripleExtraction:
      return "Instruction: Extract every (head entity, relation, tail entity) triple "
             "stated in the input sentence. Answer only with triples in the form "
             "(head, relation, tail), separated by spaces. The example shows retrieved "
             "text followed by the triples it supports.\n"
             "Example: {example}\nInput: {input}\nOutput:";
    case TaskVariant::kRelationExtraction:
      return "Instruction: Identify the relation between the head entity and the tail "
             "entity in the input sentence. Answer only with the relation type. The "
             "example shows retrieved text followed by its relation type.\n"
             "Example: {example}\nInput: {input}\nOutput:";
    case TaskVariant::kTextClassification:
      return "Instruction: Classify the input text. Answer only with the class label. "
             "The example shows retrieved text followed by its label.\n"
             "Example: {example}\nInput: {input}\nOutput:";
    case TaskVariant::kLinkPrediction:
      return "Instruction: Predict the relation that links the head entity to the tail "
             "entity. Answer only with the relation type. The example lists related "
             "entity pairs followed by their relation types.\n"
             "Example: {example}\nInput: {input}\nOutput:";
  }
  return "";
}

bool is_word_char(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) != 0 || c == '_';
}

std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

}  // namespace

PromptTemplate::PromptTemplate(TaskKind task, std::string text)
    : task_(task), text_(std::move(text)) {
  if (count_occurrences(text_, kExampleSlot) != 1 ||
      count_occurrences(text_, kInputSlot) != 1) {
    throw ConfigError("prompt template must contain {example} and {input} exactly once");
  }
  if (text_.find(kExampleSlot) > text_.find(kInputSlot)) {
    throw ConfigError("prompt template must place {example} before {input}");
  }
}

PromptTemplate PromptTemplate::default_for(TaskKind task) {
  return PromptTemplate(task, default_text(task.variant));
}

PromptTemplate PromptTemplate::load(const std::string& path, TaskKind task) {
  std::string text = io::read_file(path);
  while (!text.empty() && (text.back() == '\n' || text.back() == '\r')) text.pop_back();
  return PromptTemplate(task, std::move(text));
}

std::string PromptTemplate::instruction() const {
  return trim(std::string_view(text_).substr(0, text_.find(kExampleSlot)));
}

std::string PromptTemplate::render(std::string_view example, std::string_view input) const {
  // Fill the input slot first so an example containing "{input}" is inert.
  const auto input_pos = text_.find(kInputSlot);
  std::string out = text_;
  out.replace(input_pos, kInputSlot.size(), input);
  return replace_once(std::move(out), kExampleSlot, example);
}

std::string render_input(const SentenceRecord& x, TaskKind task) {
  std::string input = x.text_string();
  if (task.requires_entities()) {
    if (!x.head_entity || !x.tail_entity) {
      throw MissingEntities("record " + x.id + " requires head and tail entities");
    }
    input += "\nHead entity: " + *x.head_entity + "\nTail entity: " + *x.tail_entity;
  }
  return input;
}

std::string assemble_prompt(const PromptTemplate& tmpl, std::string_view example_text,
                            const SentenceRecord& x) {
  return tmpl.render(example_text, render_input(x, tmpl.task()));
}

std::string assemble_prompt(const PromptTemplate& tmpl, const DocumentCandidate& example,
                            const SentenceRecord& x) {
  return assemble_prompt(tmpl, example.text, x);
}

ExtractionOutput parse_output(std::string_view raw, TaskKind task,
                              std::span<const Label> label_inventory) {
  ExtractionOutput out{task, std::string(raw), std::nullopt, std::nullopt, true};
  if (task.variant == TaskVariant::kTripleExtraction) {
    out.triples = parse_triple_list(raw);
    return out;
  }

  std::vector<std::pair<std::string, const Label*>> needles;
  for (const auto& l : label_inventory) {
    if (!l.canonical_id.empty()) needles.emplace_back(lower(l.canonical_id), &l);
  }
  std::stable_sort(needles.begin(), needles.end(), [](const auto& a, const auto& b) {
    return a.first.size() > b.first.size();
  });
  const std::string hay = lower(raw);
  for (std::size_t p = 0; p < hay.size(); ++p) {
    if (p > 0 && is_word_char(hay[p - 1]) && is_word_char(hay[p])) continue;
    for (const auto& [needle, label] : needles) {
      if (hay.compare(p, needle.size(), needle) != 0) continue;
      const std::size_t end = p + needle.size();
      if (end < hay.size() && is_word_char(hay[end - 1]) && is_word_char(hay[end])) {
        continue;
      }
      out.label = label->canonical_id;
      return out;
    }
  }
  out.label = trim(raw);
  out.parsed = false;
  return out;
}

nlohmann::json output_to_json(const ExtractionOutput& out) {
  nlohmann::json j;
  j["task"] = out.task.name();
  j["raw_text"] = out.raw_text;
  if (out.triples) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& t : *out.triples) arr.push_back({t.head, t.relation, t.tail});
    j["triples"] = std::move(arr);
  }
  if (out.label) j["label"] = *out.label;
  j["parsed"] = out.parsed;
  return j;
}

nlohmann::json instruction_record(const PromptTemplate& tmpl, std::string_view example,
                                  const SentenceRecord& x) {
  return {{"instruction", tmpl.instruction()},
          {"example", std::string(example)},
          {"input", render_input(x, tmpl.task())},
          {"output", x.gold_output()}};
}

}  // namespace chunkrag
