// Copyright 2026 The Popcorn Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace popcorn {

/// Base class of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// An argument lies outside the domain of the operation (m >= n, c >= n^2,
/// non-invertible element, ...).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// A plaintext magnitude exceeds the certified bound of its codec.
class OverflowError : public Error {
 public:
  using Error::Error;
};

/// Tensor or layer dimensions are inconsistent.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Unsupported or contradictory configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A binary file or message could not be parsed.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Coarse abort reasons carried on the wire. Values are part of the wire
/// format; never add value-dependent detail.
enum class AbortReason : std::uint8_t {
  kUnspecified = 0,
  kProtocolOrder = 1,
  kMalformedFrame = 2,
  kBoundOverflow = 3,
  kVersionMismatch = 4,
  kShapeMismatch = 5,
  kConnectionLost = 6,
  kPeerAbort = 7,
};

const char* to_string(AbortReason reason);

/// Session-level failure. Thrown locally and mapped to an ABORT frame.
class ProtocolError : public Error {
 public:
  ProtocolError(AbortReason reason, const std::string& what)
      : Error(what), reason_(reason) {}

  AbortReason reason() const noexcept { return reason_; }

 private:
  AbortReason reason_;
};

}  // namespace popcorn
