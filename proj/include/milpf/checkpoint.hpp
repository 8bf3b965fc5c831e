#pragma once

// Model checkpoint: 8-byte magic "MILPF001", then little-endian uint32
// d, h1, h2, global kind, local kind, inference mode, then every parameter
// tensor as little-endian float64 in HeadParams::for_each_tensor order.

#include <filesystem>

#include "milpf/milhead.hpp"

namespace milpf {

void save_checkpoint(const HeadParams& p, const std::filesystem::path& path);
HeadParams load_checkpoint(const std::filesystem::path& path);

}  // namespace milpf
