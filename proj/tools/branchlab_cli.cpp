// Command-line front end. Every subcommand accepts --config FILE plus one
// option per configuration key; command-line values override the file.
// Exit codes: 0 success, 2 invalid input, 3 numerical failure.

#include <iostream>
#include <map>
#include <string>

#include <CLI11.hpp>

#include "branchlab/errors.hpp"
#include "branchlab/lab.hpp"

int main(int argc, char** argv) {
  using namespace branchlab;
  CLI::App app{"branchlab: free-boundary experiments on the unit half ball"};
  app.require_subcommand(1);

  std::string config_path;
  std::map<std::string, std::string> overrides;
  std::map<std::string, CLI::App*> subs;
  for (const auto& name : subcommands()) {
    CLI::App* sub = app.add_subcommand(name, "run the " + name + " stage");
    sub->add_option("--config", config_path, "key = value configuration file");
    for (const auto& key : config_schema())
      sub->add_option("--" + key.name, overrides[key.name], key.help + " (default " + key.default_value + ")");
    subs[name] = sub;
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  ExperimentConfig cfg;
  try {
    if (!config_path.empty()) cfg = ExperimentConfig::load(config_path);
    for (const auto& [name, sub] : subs) {
      if (!sub->parsed()) continue;
      for (const auto& key : config_schema())
        if (sub->count("--" + key.name) > 0) cfg.set(key.name, overrides[key.name]);
      cfg.validate();
      return run_subcommand(name, cfg, std::cout);
    }
  } catch (const ValidationError& e) {
    std::cerr << "validation error: " << e.what() << '\n';
    return 2;
  }
  return 2;
}
