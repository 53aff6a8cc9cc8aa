#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace hgp {

// 64-bit FNV-1a.
std::uint64_t fnv1a64(std::string_view bytes);
std::string hex64(std::uint64_t value);
std::uint64_t file_digest(const std::filesystem::path& path);

}  // namespace hgp
