#include <CLI11.hpp>

#include <iostream>

#include "thinsec/commands.hpp"

using namespace thinsec;

int main(int argc, char** argv) {
  CLI::App app{"thin-section classifier toolkit: synth, train, xval, eval, explain"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  std::vector<std::string> overrides;
  int threads = -1;
  bool deterministic = false;
  app.add_option("--config", config_path, "key=value run config file");
  app.add_option("--set", overrides, "override one key (key=value); repeatable")->take_all();
  app.add_option("--threads", threads, "OpenMP threads (1 = deterministic)");
  app.add_flag("--deterministic", deterministic, "single-threaded, reproducible run");

  const std::vector<std::pair<std::string, std::string>> commands = {
      {"synth", "generate the synthetic corpus with masks and a manifest"},
      {"train", "train one model per seed; checkpoints, metrics and history"},
      {"xval", "k-fold grid search over learning rate and weight decay"},
      {"eval", "evaluate a checkpoint; metrics, confusion, misclassifications"},
      {"explain", "saliency maps, pointing game and rotation sequences"},
      {"config", "print the resolved config and exit"},
      {"keys", "list every config key"},
  };
  for (const auto& [name, help] : commands) app.add_subcommand(name, help);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  const std::string command = app.get_subcommands().front()->get_name();

  try {
    if (command == "keys") {
      for (const auto& k : config_keys()) std::cout << k.key << "  " << k.help << '\n';
      return 0;
    }
    RunConfig config = config_path.empty() ? RunConfig{} : load_config(config_path);
    for (const auto& kv : overrides) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
      apply_setting(config, kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (threads >= 0) config.threads = threads;
    if (deterministic) config.deterministic = true;
    config.validate();
    if (command == "config") {
      std::cout << resolved_config(config);
      return 0;
    }
    run_command(command, config, std::cout);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code_for(e);
  }
  return 0;
}
