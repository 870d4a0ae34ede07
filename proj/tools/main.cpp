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

// kvaf: single entry point for rendering, recovery and toy training.

#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "commands.hpp"

int main(int argc, char** argv) {
  using kvaf::cli::Overrides;
  CLI::App app{"Keypoint-and-visual-action-frame toolkit"};
  app.require_subcommand(1);

  std::string config, out, stage;
  uint64_t seed = 0;
  for (const auto& name : kvaf::cli::command_names()) {
    CLI::App* sub = app.add_subcommand(name);
    sub->add_option("--config", config, "JSON run configuration");
    sub->add_option("--seed", seed, "run seed");
    sub->add_option("--out", out, "output directory");
    sub->add_option("--stage", stage, "training stage")->check(CLI::IsMember({"frozen", "full"}));
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kvaf::cli::kUsage;
  }

  CLI::App* sub = app.get_subcommands().front();
  Overrides flags;
  if (sub->count("--config")) flags.config = config;
  if (sub->count("--seed")) flags.seed = seed;
  if (sub->count("--out")) flags.out = out;
  if (sub->count("--stage")) flags.stage = stage;
  return kvaf::cli::run(sub->get_name(), flags, std::cerr);
}
