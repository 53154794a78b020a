#include "periscope/error.hpp"

namespace periscope {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::invalid_argument: return "invalid_argument";
    case ErrorCode::parse_error: return "parse_error";
    case ErrorCode::duplicate_id: return "duplicate_id";
    case ErrorCode::missing_file: return "missing_file";
    case ErrorCode::missing_annotation: return "missing_annotation";
    case ErrorCode::degenerate_radius: return "degenerate_radius";
    case ErrorCode::infeasible_rule: return "infeasible_rule";
    case ErrorCode::image_too_small: return "image_too_small";
    case ErrorCode::dimension_mismatch: return "dimension_mismatch";
    case ErrorCode::zero_norm: return "zero_norm";
    case ErrorCode::empty_scores: return "empty_scores";
    case ErrorCode::missing_feature: return "missing_feature";
    case ErrorCode::malformed_graph: return "malformed_graph";
    case ErrorCode::unsupported_operator: return "unsupported_operator";
    case ErrorCode::layer_not_found: return "layer_not_found";
    case ErrorCode::shape_mismatch: return "shape_mismatch";
    case ErrorCode::io_error: return "io_error";
  }
  return "unknown";
}

}  // namespace periscope
