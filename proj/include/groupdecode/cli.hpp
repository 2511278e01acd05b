#pragma once

#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>

#include "json.hpp"

namespace gdec {

/// Bad flags, unknown config keys or type mismatches; reported as usage errors.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Overlays `overlay` onto `base`. Every overlay key must exist in `base` (null base values
/// accept any type); scalar types must agree, integers being accepted where reals are expected.
nlohmann::json merge_config(const nlohmann::json& base, const nlohmann::json& overlay, const std::string& where = "");

/// Seed precedence: explicit flag, then config file, then GROUPDECODE_SEED, then 0.
std::uint64_t resolve_seed(const std::optional<std::uint64_t>& flag, const std::optional<std::uint64_t>& file);

/// Entry point of the command-line tool. Returns the process exit code:
/// 0 on success, 1 on runtime failure, 2 on usage or config errors.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace gdec
