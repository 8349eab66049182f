// SPDX-License-Identifier: Apache-2.0
#pragma once

// Checkpoint file layout (all integers little-endian):
//   "BPCK"  u32 version  u64 header_bytes  header JSON  float32 blob
// The header holds the stage tag, encoder config, vocabulary hash, optional
// run metadata and the tensor manifest {name, shape, offset}.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

#include <json.hpp>

#include "bugprio/model.hpp"

namespace bugprio {

inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Checkpoint {
    Stage stage = Stage::init;
    std::string vocab_hash;
    nlohmann::ordered_json run;
    Model<float> model;
};

std::string serialize_checkpoint(Model<float>& model, Stage stage, const std::string& vocab_hash,
                                 const nlohmann::ordered_json& run = nlohmann::ordered_json::object());

/// Validates magic, version, manifest names and shapes against the stored
/// config, the blob size and, when given, the vocabulary hash. Nothing is
/// returned unless every check passes.
Checkpoint parse_checkpoint(std::string_view bytes, std::optional<std::string_view> expected_vocab_hash = {});

/// Writes to a sibling temporary file and renames it into place.
void save_checkpoint(const std::filesystem::path& path, Model<float>& model, Stage stage,
                     const std::string& vocab_hash,
                     const nlohmann::ordered_json& run = nlohmann::ordered_json::object());

Checkpoint load_checkpoint(const std::filesystem::path& path,
                           std::optional<std::string_view> expected_vocab_hash = {});

}  // namespace bugprio
