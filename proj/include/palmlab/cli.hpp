// Copyright 2026 The palmlab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

namespace palmlab {

enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,
  kExitConfig = 2,
  kExitIo = 3,
  kExitData = 4,
  kExitNumerical = 5,
};

/// Entry point of the `palmlab` tool. `args` excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// "data/esc.jsonl" -> "data/esc.anchors.jsonl".
std::filesystem::path anchors_sidecar_path(const std::filesystem::path& data_path);

}  // namespace palmlab
