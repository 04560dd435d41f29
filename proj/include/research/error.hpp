#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace research {

enum class ErrorCode {
  kEmptyQuestion,
  kRetrieverUnavailable,
  kPolicyUnavailable,
  kGroupTooSmall,
  kDuplicateId,
  kEmptyCorpus,
  kMalformedResponse,
  kJudgeUnavailable,
  kUnparseableVerdict,
  kAlignmentError,
  kUnknownStateAction,
  kInvalidArgument,
  kIoError,
  kDataError,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kEmptyQuestion: return "EMPTY_QUESTION";
    case ErrorCode::kRetrieverUnavailable: return "RETRIEVER_UNAVAILABLE";
    case ErrorCode::kPolicyUnavailable: return "POLICY_UNAVAILABLE";
    case ErrorCode::kGroupTooSmall: return "GROUP_TOO_SMALL";
    case ErrorCode::kDuplicateId: return "DUPLICATE_ID";
    case ErrorCode::kEmptyCorpus: return "EMPTY_CORPUS";
    case ErrorCode::kMalformedResponse: return "MALFORMED_RESPONSE";
    case ErrorCode::kJudgeUnavailable: return "JUDGE_UNAVAILABLE";
    case ErrorCode::kUnparseableVerdict: return "UNPARSEABLE_VERDICT";
    case ErrorCode::kAlignmentError: return "ALIGNMENT_ERROR";
    case ErrorCode::kUnknownStateAction: return "UNKNOWN_STATE_ACTION";
    case ErrorCode::kInvalidArgument: return "INVALID_ARGUMENT";
    case ErrorCode::kIoError: return "IO_ERROR";
    case ErrorCode::kDataError: return "DATA_ERROR";
  }
  return "UNKNOWN";
}

/// Exception carrying a machine-readable code alongside the message.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& detail)
      : std::runtime_error(std::string(to_string(code)) + ": " + detail),
        code_(code),
        detail_(detail) {}

  ErrorCode code() const noexcept { return code_; }
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorCode code_;
  std::string detail_;
};

}  // namespace research
