// Copyright 2026 The htr Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <stdexcept>
#include <string>

namespace htr {

// Every error raised by the library derives from Error so callers (the CLI in
// particular) can map categories onto exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Violated precondition or contract of an operation.
class ContractError : public Error {
 public:
  using Error::Error;
};

// Incompatible tensor shapes.
class DimensionError : public ContractError {
 public:
  using ContractError::ContractError;
};

// Input exceeds a configured capacity (positions, batch length).
class CapacityError : public ContractError {
 public:
  using ContractError::ContractError;
};

// NaN or otherwise unusable numeric input.
class NumericError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Corrupt or mismatching persisted state.
class IntegrityError : public IoError {
 public:
  using IoError::IoError;
};

}  // namespace htr
