#pragma once

#include <string>
#include <string_view>

namespace tvmerge {

// Decodes UTF-8 into code points. Each byte of an invalid or truncated
// sequence decodes to U+DC80 + byte (the "surrogateescape" convention), so
// malformed input still yields a stable, lossless sequence.
std::u32string decode_utf8(std::string_view text);

// Trims ASCII whitespace from both ends.
std::string_view trim(std::string_view text);

}  // namespace tvmerge
