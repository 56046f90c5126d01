// Copyright 2026 The Tripletformer Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace tripletformer {

/// Operand shapes do not agree.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Softmax or attention was asked to normalize over zero unmasked entries.
class EmptyAttentionSupport : public std::runtime_error {
 public:
  EmptyAttentionSupport() : std::runtime_error("empty attention support: every key is masked") {}
};

/// Input data violates a domain invariant (channel range, duplicate triplets, ...).
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A file could not be parsed; the message carries the location.
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A numeric computation produced a non-finite value where none is allowed.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace tripletformer
