#pragma once

#include <stdexcept>
#include <string>

namespace manic {

enum class ErrorKind {
  kInvalidTopology,
  kShape,
  kNumeric,
  kDiverged,
  kPrecondition,
  kEncoderAbsent,
  kStaleScores,
  kNotFound,
  kConflict,
  kConfig,
  kIo,
  kFormat,
};

const char* to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what);

  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

// Throws Error(kind, message) when cond is false.
inline void require(bool cond, ErrorKind kind, const std::string& message) {
  if (!cond) throw Error(kind, message);
}

}  // namespace manic
