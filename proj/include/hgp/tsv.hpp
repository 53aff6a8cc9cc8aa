#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace hgp::tsv {

// Splits on '\t' keeping empty fields; strips a trailing '\r'.
std::vector<std::string> split(std::string_view line);

// Whole-string numeric parse; rejects trailing garbage and empty input.
std::optional<double> parse_double(std::string_view text);

std::vector<std::string> read_lines(const std::filesystem::path& path);

// Renders with the shortest representation that round-trips.
std::string format_double(double value);

}  // namespace hgp::tsv
