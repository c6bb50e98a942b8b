#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>

#include <nlohmann/json.hpp>

#include "pirl/environment.hpp"
#include "pirl/oracle.hpp"
#include "pirl/training.hpp"

namespace pirl::config {

using Json = nlohmann::json;

/// Parses the TOML subset used for experiment files: [table] and [a.b]
/// headers, `key = value` with strings, integers, floats, booleans and
/// (possibly multi-line) arrays of those, and # comments. Throws ConfigError
/// with the offending line number.
Json parse_toml(const std::string& text);

/// Inverse of parse_toml for objects produced by it; floats are written in
/// shortest round-trip form so parse_toml(emit_toml(j)) == j.
std::string emit_toml(const Json& j);

/// Built-in defaults for an environment kind (brownian | cornering | drift).
Json defaults_for(const std::string& kind);

/// Overlays `user` on the defaults selected by user["env"]["kind"] (brownian
/// when absent). Unknown keys and type mismatches throw ConfigError; integers
/// are accepted where floats are expected. Tables listed as free-form
/// (map.fixed) accept any key.
Json resolve(const Json& user);

/// Reads and resolves a config file, then applies the PIRL_OUTPUT_DIR and
/// PIRL_SEED environment overrides. A missing file is a ConfigError.
Json load(const std::filesystem::path& path);

std::unique_ptr<Environment> make_environment(const Json& cfg);
training::TrainConfig train_config(const Json& cfg);
oracle::FdOptions oracle_options(const Json& cfg, const Environment& env);

}  // namespace pirl::config
