// Copyright 2026 The amend Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Command-line front end. Exit codes: 0 success, 1 other failure, 2 config
// or input error, 3 missing or stale artifact, 4 numeric failure.

#include <cstdint>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "amend/pipeline.hpp"

namespace
{

int exit_code(const amend::Error & e)
{
  if (dynamic_cast<const amend::MissingArtifactError *>(&e)) return 3;
  if (dynamic_cast<const amend::NumericError *>(&e)) return 4;
  if (dynamic_cast<const amend::ConfigError *>(&e) || dynamic_cast<const amend::ParseError *>(&e)) {
    return 2;
  }
  return 1;
}

}  // namespace

int main(int argc, char ** argv)
{
  CLI::App app{"amend: mixture-of-experts trajectory prediction toolkit"};
  app.require_subcommand(1, 1);

  std::string config_path;
  std::vector<std::string> overrides;
  std::int64_t seed = 0;
  std::string out_dir;

  std::vector<std::string> names = amend::pipeline::commands();
  names.push_back("run");
  for (const auto & name : names) {
    CLI::App * sub = app.add_subcommand(
        name, name == "run" ? "run every stage in order" : "pipeline stage " + name);
    sub->add_option("--config", config_path, "JSON config with dotted keys")->check(CLI::ExistingFile);
    sub->add_option("--set", overrides, "override a config key (key=value)");
    sub->add_option("--seed", seed, "global seed");
    sub->add_option("--out", out_dir, "output directory");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError & e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  const CLI::App * chosen = app.get_subcommands().front();
  try {
    amend::pipeline::Config config =
        config_path.empty() ? amend::pipeline::Config{} : amend::pipeline::Config::from_file(config_path);
    for (const auto & kv : overrides) config.set(kv);
    if (chosen->count("--seed")) config.set_value("seed", seed);
    if (chosen->count("--out")) config.set_value("out", out_dir);

    amend::pipeline::Context ctx(config);
    ctx.log = &std::cerr;
    if (chosen->get_name() == "run") {
      amend::pipeline::run_all(ctx);
    } else {
      amend::pipeline::run_command(ctx, chosen->get_name());
    }
  } catch (const amend::Error & e) {
    std::cerr << "amend " << chosen->get_name() << ": " << e.what() << '\n';
    return exit_code(e);
  } catch (const std::exception & e) {
    std::cerr << "amend " << chosen->get_name() << ": " << e.what() << '\n';
    return 1;
  }
  return 0;
}
