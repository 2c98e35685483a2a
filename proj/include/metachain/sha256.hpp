#pragma once

#include <string>
#include <string_view>

namespace metachain {

/// SHA-256 hex digest. Used for content-addressed cache files and fixture
/// prompt hashes, where a truncated std::hash would be too collision-prone.
std::string sha256_hex(std::string_view data);

}  // namespace metachain
