#pragma once

#include <string>
#include <string_view>

namespace mis {

/// MisSa conditions on paired clean latents through the U-Net itself;
/// MisDino conditions on external per-image feature tokens.
enum class Variant { MisSa, MisDino };

std::string_view to_string(Variant v);
Variant parse_variant(std::string_view text);

}  // namespace mis
