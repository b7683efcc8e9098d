// Copyright 2026 The DAD Authors. All Rights Reserved.
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

namespace dad {

// Process exit codes used by the CLI.
enum class ExitCode : int {
  kOk = 0,
  kFailure = 1,
  kConfig = 2,
  kData = 3,
  kDivergence = 4,
};

class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what, ExitCode code = ExitCode::kFailure)
      : std::runtime_error(what), code_(code) {}
  ExitCode code() const { return code_; }

 private:
  ExitCode code_;
};

/// Malformed shapes, out-of-range values, mismatched lengths.
class InputError : public Error {
 public:
  explicit InputError(const std::string& what) : Error(what, ExitCode::kData) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(what, ExitCode::kConfig) {}
};

/// Operation invoked on an object that is not ready for it (e.g. an unloaded model).
class StateError : public Error {
 public:
  explicit StateError(const std::string& what) : Error(what) {}
};

/// The model cannot provide a requested behavior (e.g. stochastic inference).
class CapabilityError : public Error {
 public:
  explicit CapabilityError(const std::string& what) : Error(what, ExitCode::kConfig) {}
};

class DecodeError : public Error {
 public:
  explicit DecodeError(const std::string& what) : Error(what, ExitCode::kData) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(what, ExitCode::kData) {}
};

/// Loss became non-finite during training or adaptation.
class TrainingError : public Error {
 public:
  explicit TrainingError(const std::string& what) : Error(what, ExitCode::kDivergence) {}
};

class AdaptationError : public Error {
 public:
  explicit AdaptationError(const std::string& what) : Error(what, ExitCode::kData) {}
};

}  // namespace dad
