// Copyright 2026 The coarseqca Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdio>
#include <stdexcept>
#include <string>

namespace coarseqca {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Mismatched spaces, malformed structure, inputs that are not what they claim.
class StructuralError : public Error {
 public:
  using Error::Error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// A configured size limit would be exceeded.
class ResourceError : public Error {
 public:
  using Error::Error;
};

// A numerical decision fell inside the ambiguity band of a tolerance.
class IndeterminateError : public Error {
 public:
  using Error::Error;
};

// Short scientific formatting for residuals in messages.
inline std::string fmt_g(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", x);
  return buf;
}

}  // namespace coarseqca
