// Copyright Contributors to the cofield project
// SPDX-License-Identifier: Apache-2.0

#pragma once

namespace cofield::cli {

/// Exit codes: 0 success, 1 domain error, 2 usage error.
int Run(int argc, char** argv);

}  // namespace cofield::cli
