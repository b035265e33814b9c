#pragma once

#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "msaec/model.hpp"

namespace msaec {

// Bad flags, unknown config keys or values of the wrong type; exit code 2.
class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

// Resolved configuration with every accepted key at its default.
nlohmann::json default_cli_config();
// Dotted names of every accepted key, e.g. "model.num_filters".
std::vector<std::string> cli_config_keys();

// Layers `file` (possibly empty) and then key=value overrides onto the
// defaults. Values are parsed as JSON, falling back to a plain string.
nlohmann::json resolve_cli_config(const nlohmann::json& file, const std::vector<std::string>& overrides);

ModelConfig model_config_from_json(const nlohmann::json& model);
nlohmann::json to_json(const ModelConfig& config);

// Entry point behind the msaec executable. args excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace msaec
