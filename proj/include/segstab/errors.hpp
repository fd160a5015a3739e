#pragma once

#include <stdexcept>

namespace segstab {

// Unreadable or malformed input files (NIfTI, JSON, transform text). CLI exit 3.
class parse_error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// Bad arguments, incompatible geometry, degenerate requests. CLI exit 2.
class usage_error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// A broken internal invariant; indicates a bug, not bad input. CLI exit 4.
class internal_error : public std::logic_error {
public:
  using std::logic_error::logic_error;
};

}  // namespace segstab
