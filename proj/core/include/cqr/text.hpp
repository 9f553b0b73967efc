#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace cqr {

// Lowercases ASCII letters and splits on every byte that is not an ASCII
// letter or digit. Bytes >= 0x80 are kept inside terms so UTF-8 words survive.
std::vector<std::string> tokenize(std::string_view text);

}  // namespace cqr
