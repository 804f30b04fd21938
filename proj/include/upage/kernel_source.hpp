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

#include <cstdint>
#include <functional>
#include <memory>
#include <string>

#include "upage/engine.hpp"

namespace upage {

/// OS-backed fault source: an anonymous mapping registered for user-space
/// fault notification, serviced through a MonitorEngine. Zero-fill and copy
/// resolutions install pages via the kernel interface; eviction copies the
/// victim's bytes out in-process and then discards the page mapping, so the
/// next touch faults again.
///
/// Availability is a runtime question (kernel support, seccomp policy,
/// privileges); callers must check available() or be ready for
/// ContractViolation from the constructor. Platforms without the interface
/// compile this class to an always-unavailable stub.
class KernelFaultSource {
 public:
  /// True when the current process can create and use a fault-notification
  /// descriptor. On false, `reason` (if given) says why.
  static bool available(std::string* reason = nullptr);

  /// Maps `size_bytes` (positive page multiple) and registers it with both
  /// the kernel interface and `engine`. The dispatch thread starts
  /// immediately.
  KernelFaultSource(MonitorEngine& engine, std::uint64_t size_bytes);
  ~KernelFaultSource();

  KernelFaultSource(const KernelFaultSource&) = delete;
  KernelFaultSource& operator=(const KernelFaultSource&) = delete;

  std::uint8_t* base() const;
  std::uint64_t size() const;
  std::uint64_t region_id() const;

  /// Faults serviced so far (reads of the dispatch thread's counter).
  std::uint64_t fault_count() const;

  struct Impl;

 private:
  std::unique_ptr<Impl> impl_;
};

}  // namespace upage
