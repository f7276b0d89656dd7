// Copyright Contributors to the cofield project
// SPDX-License-Identifier: Apache-2.0

#include "commands.hpp"

int main(int argc, char** argv) { return cofield::cli::Run(argc, argv); }
