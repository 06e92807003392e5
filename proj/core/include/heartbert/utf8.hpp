#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace heartbert {

// The synthetic-language alphabet is stored as UTF-8 text; symbols are whole
// code points (a handful of alphabet entries are outside ASCII).

std::vector<uint32_t> utf8_decode(std::string_view text);
void utf8_append(std::string& out, uint32_t codepoint);
std::string utf8_encode(const std::vector<uint32_t>& codepoints);
size_t utf8_length(std::string_view text);

}  // namespace heartbert
