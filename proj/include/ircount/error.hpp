// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace ircount {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor extents disagree with what an operation expects.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Architecture string could not be parsed or is geometrically infeasible.
class ArchError : public Error {
 public:
  ArchError(const std::string& msg, std::string token = {})
      : Error(token.empty() ? msg : msg + " (at token '" + token + "')"),
        token_(std::move(token)) {}

  const std::string& token() const noexcept { return token_; }

 private:
  std::string token_;
};

/// Malformed dataset file or inconsistent session data.
class DataError : public Error {
 public:
  using Error::Error;
};

/// The requested model family cannot be quantized (CNN-LSTM).
class QuantUnsupported : public Error {
 public:
  using Error::Error;
};

/// Corrupt or incompatible model container.
class FormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace ircount
