// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>

namespace advlora {

enum class Modality : std::uint8_t { kVision = 0, kText = 1 };

inline std::string to_string(Modality m) { return m == Modality::kVision ? "vision" : "text"; }

// Dense layer `index` of the encoder for `modality`.
struct LayerId {
  Modality modality = Modality::kVision;
  std::uint32_t index = 0;

  bool operator==(const LayerId&) const = default;
};

inline std::string to_string(const LayerId& id) { return to_string(id.modality) + "." + std::to_string(id.index); }

}  // namespace advlora
