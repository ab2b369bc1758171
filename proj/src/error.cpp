#include "fsa/error.hpp"

namespace fsa {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Shape: return "shape";
    case ErrorKind::DegenerateRow: return "degenerate-row";
    case ErrorKind::DegenerateVector: return "degenerate-vector";
    case ErrorKind::Validation: return "validation";
    case ErrorKind::MetricUndefined: return "metric-undefined";
    case ErrorKind::Config: return "config";
    case ErrorKind::Io: return "io";
    case ErrorKind::BadMagic: return "bad-magic";
    case ErrorKind::VersionMismatch: return "version-mismatch";
    case ErrorKind::Truncated: return "truncated";
    case ErrorKind::NonFinite: return "non-finite";
  }
  return "unknown";
}

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Config:
      return 1;
    case ErrorKind::Io:
    case ErrorKind::BadMagic:
    case ErrorKind::VersionMismatch:
    case ErrorKind::Truncated:
    case ErrorKind::NonFinite:
      return 2;
    case ErrorKind::Shape:
    case ErrorKind::DegenerateRow:
    case ErrorKind::DegenerateVector:
    case ErrorKind::Validation:
    case ErrorKind::MetricUndefined:
      return 3;
  }
  return 3;
}

}  // namespace fsa
