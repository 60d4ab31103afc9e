// Copyright 2026 The hetmerge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace hetmerge {

// Base of every error the library throws. The CLI maps ValidationError and
// its subclasses to exit code 2 and everything else to exit code 1.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Caller handed us something that violates a documented precondition.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Operand dimensions do not agree.
class ShapeError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// A container file is not an HMM1 file or its header is malformed.
class FormatError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// No segmentation exists (deep model shallower than the reference).
class InfeasibleError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// Filesystem failure or truncated payload.
class IoError : public Error {
 public:
  using Error::Error;
};

// Training diverged.
class TrainingError : public Error {
 public:
  using Error::Error;
};

}  // namespace hetmerge
