#include "faultrange/error.hpp"

namespace faultrange {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::config: return "config";
    case ErrorCode::shape: return "shape";
    case ErrorCode::io: return "io";
    case ErrorCode::format: return "format";
    case ErrorCode::schema: return "schema";
    case ErrorCode::training: return "training";
    case ErrorCode::attribution: return "attribution";
  }
  return "unknown";
}

}  // namespace faultrange
