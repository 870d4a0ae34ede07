// Copyright 2026 The KVAF Toolkit Authors.
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "kvaf/io.hpp"

namespace kvaf::cli {

enum ExitCode : int { kOk = 0, kInternal = 1, kUsage = 2, kAcceptance = 3 };

/// Bad flags, unreadable config, or missing inputs.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Overrides {
  std::optional<std::filesystem::path> config;
  std::optional<uint64_t> seed;
  std::optional<std::filesystem::path> out;
  std::optional<std::string> stage;
};

/// Defaults, then the config file, then flags. Throws UsageError.
RunConfig resolve_config(const Overrides& flags);

const std::vector<std::string>& command_names();

/// Runs one subcommand and maps failures onto exit codes; messages go to `log`.
int run(const std::string& command, const Overrides& flags, std::ostream& log);

int cmd_synth(const RunConfig& cfg, std::ostream& log);
int cmd_render(const RunConfig& cfg, std::ostream& log);
int cmd_recover(const RunConfig& cfg, std::ostream& log);
int cmd_roundtrip(const RunConfig& cfg, std::ostream& log);
int cmd_fuse_train(const RunConfig& cfg, std::ostream& log);
int cmd_event_target(const RunConfig& cfg, std::ostream& log);

}  // namespace kvaf::cli
