#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace osld {

// Lowercases ASCII letters, treats punctuation as removable and splits on
// Unicode whitespace. Non-ASCII letters pass through unchanged.
std::vector<std::string> tokenize(std::string_view text);

// Number of UTF-8 code points.
std::size_t codepoint_count(std::string_view s);

}  // namespace osld
