#include "manic/error.hpp"

namespace manic {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kInvalidTopology: return "invalid-topology";
    case ErrorKind::kShape: return "shape";
    case ErrorKind::kNumeric: return "numeric";
    case ErrorKind::kDiverged: return "diverged";
    case ErrorKind::kPrecondition: return "precondition";
    case ErrorKind::kEncoderAbsent: return "encoder-absent";
    case ErrorKind::kStaleScores: return "stale-scores";
    case ErrorKind::kNotFound: return "not-found";
    case ErrorKind::kConflict: return "conflict";
    case ErrorKind::kConfig: return "config";
    case ErrorKind::kIo: return "io";
    case ErrorKind::kFormat: return "format";
  }
  return "unknown";
}

Error::Error(ErrorKind kind, const std::string& what)
    : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

}  // namespace manic
