// Copyright Contributors to the cofield project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace cofield {

enum class ErrorCode {
  kParseError,
  kIoError,
  kEmptyMesh,
  kNoSurfaceInVoxel,
  kShapeMismatch,
  kConfigMismatch,
  kNonFiniteLoss,
  kVersionMismatch,
  kRankDeficient,
  kZeroQuaternion,
  kEmptySet,
  kInvalidArgument,
};

const char* ErrorCodeName(ErrorCode code);

/// Domain error raised by every module. The CLI maps these to exit code 1.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(ErrorCodeName(code)) + ": " + message),
        code_(code) {}

  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace cofield
