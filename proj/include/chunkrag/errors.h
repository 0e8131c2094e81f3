#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace chunkrag {

// Root of every error raised by the library. `kind()` is a stable tag used in
// stage-tagged CLI diagnostics and in sweep tables.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(what), kind_(std::move(kind)) {}
  const std::string& kind() const { return kind_; }

 private:
  std::string kind_;
};

#define CHUNKRAG_DEFINE_ERROR(Name)                                  \
  class Name : public Error {                                        \
   public:                                                           \
    explicit Name(const std::string& what) : Error(#Name, what) {}   \
  }

CHUNKRAG_DEFINE_ERROR(EmptyText);
CHUNKRAG_DEFINE_ERROR(DimensionMismatch);
CHUNKRAG_DEFINE_ERROR(BackendUnavailable);
CHUNKRAG_DEFINE_ERROR(EmptyMemory);
CHUNKRAG_DEFINE_ERROR(NoCandidate);
CHUNKRAG_DEFINE_ERROR(EmptyRetrieval);
CHUNKRAG_DEFINE_ERROR(DegenerateSupervision);
CHUNKRAG_DEFINE_ERROR(NumericalInstability);
CHUNKRAG_DEFINE_ERROR(ContextOverflow);
CHUNKRAG_DEFINE_ERROR(InvalidPrompt);
CHUNKRAG_DEFINE_ERROR(MissingEntities);
CHUNKRAG_DEFINE_ERROR(AlignmentError);
CHUNKRAG_DEFINE_ERROR(EmptyDataset);
CHUNKRAG_DEFINE_ERROR(FormatError);
CHUNKRAG_DEFINE_ERROR(ConfigError);

#undef CHUNKRAG_DEFINE_ERROR

class IngestError : public Error {
 public:
  IngestError(std::size_t line, const std::string& what)
      : Error("IngestError",
              "line " + std::to_string(line) + ": " + what),
        line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

}  // namespace chunkrag
