#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "manic/types.hpp"

namespace manic {

// 8-bit PNG encoding of a 1- or 3-channel frame (values rounded from [0, 1]).
std::vector<unsigned char> encode_png(const Observation& x);
void write_png(const Observation& x, const std::filesystem::path& path);
Observation decode_png(const std::vector<unsigned char>& bytes);

std::string base64_encode(const std::vector<unsigned char>& bytes);

}  // namespace manic
