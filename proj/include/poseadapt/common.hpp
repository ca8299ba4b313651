// Shared scalar type, error handling, and small utilities.
#pragma once

#include <cstdint>
#include <cstdio>
#include <stdexcept>
#include <string>

namespace poseadapt {

using real = double;

class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Throws poseadapt::Error with a formatted location-free message.
#define POSEADAPT_CHECK(cond, msg)                                  \
  do {                                                              \
    if (!(cond)) throw ::poseadapt::Error(std::string(msg));        \
  } while (0)

// One-line diagnostic on stderr. Used for non-fatal contract warnings
// (e.g. empty pair sums when K < 2).
inline void warn(const std::string& msg) {
  std::fprintf(stderr, "[poseadapt] warning: %s\n", msg.c_str());
}

}  // namespace poseadapt
