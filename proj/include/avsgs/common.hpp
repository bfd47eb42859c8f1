#pragma once

#include <stdexcept>
#include <string>

namespace avsgs {

/// Raised on contract violations: malformed inputs, shape mismatches,
/// unreadable files, out-of-range arguments. The CLI maps these to exit
/// code 1; usage errors are handled separately by the argument parser.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Throw Error(msg) unless ok.
inline void require(bool ok, const std::string& msg) {
  if (!ok) throw Error(msg);
}

}  // namespace avsgs
