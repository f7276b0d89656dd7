// Copyright Contributors to the cofield project
// SPDX-License-Identifier: Apache-2.0

#include "cofield/error.hpp"

namespace cofield {

const char* ErrorCodeName(ErrorCode code) {
  switch (code) {
    case ErrorCode::kParseError: return "ParseError";
    case ErrorCode::kIoError: return "IoError";
    case ErrorCode::kEmptyMesh: return "EmptyMesh";
    case ErrorCode::kNoSurfaceInVoxel: return "NoSurfaceInVoxel";
    case ErrorCode::kShapeMismatch: return "ShapeMismatch";
    case ErrorCode::kConfigMismatch: return "ConfigMismatch";
    case ErrorCode::kNonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::kVersionMismatch: return "VersionMismatch";
    case ErrorCode::kRankDeficient: return "RankDeficient";
    case ErrorCode::kZeroQuaternion: return "ZeroQuaternion";
    case ErrorCode::kEmptySet: return "EmptySet";
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
  }
  return "Error";
}

}  // namespace cofield
