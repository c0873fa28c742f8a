#pragma once

#include <span>
#include <string>
#include <vector>

#include "csdm/tensor.hpp"
#include "json.hpp"

namespace csdm {

// Checkpoint layout: magic, u64 manifest length, manifest JSON, then one
// little-endian f64 blob per parameter in manifest order. The manifest's
// "params" array (name + shape) is appended here; callers provide the rest
// (kind, seed, schedule, ...).
void save_checkpoint(const std::string& path, nlohmann::json manifest,
                     std::span<Parameter* const> params);

// Loads values into the given parameters (matched by manifest order; names
// and shapes must agree) and returns the manifest.
nlohmann::json load_checkpoint(const std::string& path,
                               std::span<Parameter* const> params);

// Raw value bytes of all parameters, for byte-identity assertions.
std::vector<char> param_bytes(std::span<Parameter* const> params);

uint64_t fnv1a_hash(std::string_view s);

}  // namespace csdm
