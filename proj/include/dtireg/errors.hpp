/*
 * Copyright 2026 the dtireg authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#pragma once

#include <stdexcept>
#include <string>

namespace dtireg {

/// Error taxonomy shared by the library and the CLI exit codes:
/// I/O and file-format problems exit 2, validation 3, degenerate data 4,
/// optimization failures 5.
class Error : public std::runtime_error {
public:
  enum class Kind { io, format, validation, degenerate, optimization };

  Error(Kind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}

  Kind kind() const { return kind_; }

  int exit_code() const {
    switch (kind_) {
      case Kind::io:
      case Kind::format: return 2;
      case Kind::validation: return 3;
      case Kind::degenerate: return 4;
      case Kind::optimization: return 5;
    }
    return 1;
  }

private:
  Kind kind_;
};

struct IoError : Error {
  explicit IoError(const std::string& msg) : Error(Kind::io, msg) {}
};

struct FormatError : Error {
  explicit FormatError(const std::string& msg) : Error(Kind::format, msg) {}
};

struct ValidationError : Error {
  explicit ValidationError(const std::string& msg) : Error(Kind::validation, msg) {}
};

struct DegenerateError : Error {
  explicit DegenerateError(const std::string& msg) : Error(Kind::degenerate, msg) {}
};

struct OptimizationError : Error {
  explicit OptimizationError(const std::string& msg) : Error(Kind::optimization, msg) {}
};

}  // namespace dtireg
