#pragma once

#include <filesystem>
#include <optional>

#include "groupdecode/model.hpp"

namespace gdec {

/// Checkpoint layout: 8-byte magic "GDECKPT1", u32 format version, u64 header length,
/// UTF-8 JSON header {config, params:[{name, shape}], meta}, then each parameter as
/// little-endian float32 in the declared order (row-major).
void save_checkpoint(const WavenetClassifier<float>& model, const std::filesystem::path& path,
                     const nlohmann::json& meta = nlohmann::json::object());

/// Throws FormatError on corruption, or when `expected` is given and differs from the stored config.
WavenetClassifier<float> load_checkpoint(const std::filesystem::path& path,
                                         const std::optional<ModelConfig>& expected = std::nullopt);

/// The JSON header of a checkpoint without its parameters.
nlohmann::json read_checkpoint_header(const std::filesystem::path& path);

}  // namespace gdec
