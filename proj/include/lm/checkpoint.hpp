#pragma once

#include <cstdint>
#include <filesystem>

#include "lm/model.hpp"

namespace lm {

/// Versioned binary container: model config, then a name -> (shape, offset)
/// index, then all tensors as little-endian real64. Loading any other
/// format version is rejected.
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_target(const std::filesystem::path& path, const TargetModel& model,
                 std::uint64_t manifest_hash = 0);
void save_draft(const std::filesystem::path& path, const DraftModel& model,
                std::uint64_t manifest_hash = 0);

TargetModel load_target(const std::filesystem::path& path);
DraftModel load_draft(const std::filesystem::path& path);

std::uint64_t checkpoint_manifest_hash(const std::filesystem::path& path);

}  // namespace lm
