// SPDX-License-Identifier: Apache-2.0

// Model files are a sequence of chunks (see binary_io.hpp): one "ADVC" chunk
// with both encoder stacks, optionally followed by an "ADVA" chunk with the
// low-rank adapters and an "ADVP" chunk with linear-probe heads.

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "advlora/dual_encoder.hpp"

namespace advlora::checkpoint {

std::vector<std::uint8_t> encode(const model::AdaptedModel& model);
model::AdaptedModel decode(std::span<const std::uint8_t> bytes);

void save(const model::AdaptedModel& model, const std::filesystem::path& path);
model::AdaptedModel load(const std::filesystem::path& path);

}  // namespace advlora::checkpoint
