/*
 * Copyright 2026 The upage Authors
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

#include <cstddef>
#include <stdexcept>
#include <string>

namespace upage {

/// Thrown when a caller breaks an API precondition (touching a non-resident
/// page, an illegal residency transition, a misaligned region size, ...).
class ContractViolation : public std::logic_error {
 public:
  explicit ContractViolation(const std::string& what) : std::logic_error(what) {}
};

/// Thrown when a store backend cannot complete an operation (connection
/// refused, peer closed mid-reply, protocol garbage). Retryable by callers.
class TransportError : public std::runtime_error {
 public:
  explicit TransportError(const std::string& what) : std::runtime_error(what) {}
};

/// A multi_write that failed partway through. `applied` is the number of
/// leading batch entries known to have been stored.
class PartialWriteError : public TransportError {
 public:
  PartialWriteError(const std::string& what, std::size_t applied)
      : TransportError(what), applied_(applied) {}

  std::size_t applied() const noexcept { return applied_; }

 private:
  std::size_t applied_;
};

/// Malformed input text (trace files, config documents). Carries the
/// 1-based line number of the offending line.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : std::runtime_error(what + " (line " + std::to_string(line) + ")"),
        line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

}  // namespace upage
