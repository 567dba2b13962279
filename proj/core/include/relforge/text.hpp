#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace relforge {

// Normalizes an entity surface for lookup: Unicode NFC, lowercase, internal
// whitespace collapsed to one space, surrounding quotes and trailing periods
// stripped. Input must be UTF-8.
std::string normalize_surface(std::string_view text);

// Lowercase + trim + whitespace collapse, without quote/period stripping.
// Used for relation phrases.
std::string normalize_phrase(std::string_view text);

std::string trim(std::string_view text);

// Number of Unicode code points in a UTF-8 string.
std::size_t utf8_length(std::string_view text);

// Splits on '\n', dropping a trailing '\r' on each line.
std::vector<std::string> split_lines(std::string_view text);

std::string join(const std::vector<std::string>& parts, std::string_view sep);

}  // namespace relforge
