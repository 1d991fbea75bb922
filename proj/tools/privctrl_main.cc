// Copyright 2026 The privctrl Authors
//
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

// privctrl command-line tool.

#include <cstdint>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "privctrl/harness.h"
#include "privctrl/io.h"

namespace {

void add_common(CLI::App* cmd, privctrl::CommandOptions& opts, std::uint64_t& seed) {
  cmd->add_option("--config", opts.config_path, "experiment config (JSON)")
      ->required()
      ->check(CLI::ExistingFile);
  cmd->add_option("--seed", seed, "master seed; overrides the config");
  cmd->add_option("--out", opts.out_dir, "output directory");
  cmd->add_option("--lambda", opts.lambdas, "privacy weight(s), comma separated")
      ->delimiter(',');
  cmd->add_option("--rollouts", opts.rollouts, "number of rollouts");
  cmd->add_option("--policy", opts.policy_path, "policy checkpoint");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"privacy-aware quantized control: simulate, train, sweep, verify"};
  app.set_version_flag("--version", std::string(privctrl::version()));
  app.require_subcommand(1);

  privctrl::CommandOptions opts;
  std::uint64_t seed = 0;
  struct Entry {
    const char* name;
    const char* help;
  };
  const std::vector<Entry> entries = {
      {"simulate", "roll out the configured policy and write trajectories.csv"},
      {"train", "train a policy at one lambda"},
      {"sweep", "train and evaluate across lambda values"},
      {"oracle-check", "run the exact enumeration identities on a tabular instance"},
      {"adversary-eval", "score the maximum-likelihood adversary"},
      {"estimate-mi", "estimate leakage with trained classifiers"},
  };
  std::vector<CLI::App*> commands;
  for (const Entry& e : entries) {
    CLI::App* cmd = app.add_subcommand(e.name, e.help);
    add_common(cmd, opts, seed);
    commands.push_back(cmd);
  }
  commands[4]->add_flag("--observe-z", opts.observe_z,
                        "estimate from raw observations instead of (s, u)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : privctrl::kExitValidation;
  }
  for (CLI::App* cmd : commands) {
    if (!cmd->parsed()) continue;
    if (cmd->count("--seed") > 0) opts.seed = seed;
    return privctrl::run_command(cmd->get_name(), opts, std::cerr);
  }
  return privctrl::kExitValidation;
}
