#include "manic/binary_io.hpp"

#include <cstdio>

namespace manic::io {

std::string hex64(std::uint64_t value) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(value));
  return buf;
}

}  // namespace manic::io
