#pragma once

#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

namespace nerfinv::cli {

// Settings of one subcommand. Each setting has a default, may be given in a
// flat JSON config file (--config) under its snake_case name and may be
// overridden by the matching kebab-case flag (max_steps -> --max-steps).
// Precedence: flag, then config file, then default.
class Options {
 public:
  explicit Options(CLI::App* app);

  void add(const std::string& name, nlohmann::json fallback, const std::string& help);

  // Merges defaults, the config file and the flags given on the command line.
  // Throws IoError if the config file cannot be read and
  // CLI::ValidationError on unknown keys or unparsable values.
  nlohmann::json resolve() const;

 private:
  CLI::App* app_;
  std::string config_path_;
  std::vector<std::string> order_;
  std::map<std::string, nlohmann::json> defaults_;
  std::map<std::string, std::string> raw_;
};

}  // namespace nerfinv::cli
