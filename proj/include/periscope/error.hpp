#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace periscope {

/// Machine-readable failure category. The CLI prints the lowercase name.
enum class ErrorCode {
  invalid_argument,
  parse_error,
  duplicate_id,
  missing_file,
  missing_annotation,
  degenerate_radius,
  infeasible_rule,
  image_too_small,
  dimension_mismatch,
  zero_norm,
  empty_scores,
  missing_feature,
  malformed_graph,
  unsupported_operator,
  layer_not_found,
  shape_mismatch,
  io_error,
};

std::string_view to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace periscope
