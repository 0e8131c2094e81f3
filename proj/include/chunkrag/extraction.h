#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>

#include "chunkrag/core.h"
#include "chunkrag/retrieval.h"

namespace chunkrag {

// Instruction template with one example slot and one input slot, rendered in
// the fixed order instruction, example, input.
class PromptTemplate {
 public:
  static constexpr std::string_view kExampleSlot = "{example}";
  static constexpr std::string_view kInputSlot = "{input}";

  // Throws ConfigError unless each slot appears exactly once, example first.
  PromptTemplate(TaskKind task, std::string text);

  static PromptTemplate default_for(TaskKind task);
  static PromptTemplate load(const std::string& path, TaskKind task);

  TaskKind task() const { return task_; }
  const std::string& text() const { return text_; }
  // Text preceding the example slot.
  std::string instruction() const;

  std::string render(std::string_view example, std::string_view input) const;

 private:
  TaskKind task_;
  std::string text_;
};

// Input text as shown to the model; entity tasks append the head and tail.
std::string render_input(const SentenceRecord& x, TaskKind task);

std::string assemble_prompt(const PromptTemplate& tmpl, const DocumentCandidate& example,
                            const SentenceRecord& x);
std::string assemble_prompt(const PromptTemplate& tmpl, std::string_view example_text,
                            const SentenceRecord& x);

struct ExtractionOutput {
  TaskKind task;
  std::string raw_text;
  std::optional<TripleSet> triples;
  std::optional<std::string> label;
  // False when a label task's completion named no inventory label and the
  // trimmed completion was kept verbatim.
  bool parsed = true;
};

// Never throws on arbitrary text.
ExtractionOutput parse_output(std::string_view raw, TaskKind task,
                              std::span<const Label> label_inventory);

nlohmann::json output_to_json(const ExtractionOutput& out);

// One row of the instruction dataset: {"instruction","example","input","output"}.
nlohmann::json instruction_record(const PromptTemplate& tmpl, std::string_view example,
                                  const SentenceRecord& x);

}  // namespace chunkrag
