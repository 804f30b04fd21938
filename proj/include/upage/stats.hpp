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

#include <algorithm>
#include <array>
#include <chrono>
#include <cstdint>
#include <optional>
#include <string_view>
#include <vector>

namespace upage {

/// Labeled code sections instrumented by the engine. The fault-path sections
/// nest: a whole fault is HANDLE_USERFAULT_ZERO or HANDLE_USERFAULT_COPY_EVICT;
/// on the copy path READ_FROM_EXTERNRAM covers acquiring the page (and any
/// synchronous eviction it forced), READ_VIA_PAGE_CACHE covers the cache/store
/// lookup with READ_PAGE as the raw store read, and EVICT_TO_EXTERNRAM covers
/// victim processing with WRITE_PAGE as the raw store write. The UFFD_*
/// sections time the install/extract primitives (or their simulated analogs).
enum class Section : std::size_t {
  ZeroCheck = 0,
  HandleUserfaultZero,
  HandleUserfaultCopyEvict,
  ReadFromExternram,
  ReadViaPageCache,
  EvictToExternram,
  WritePage,
  ReadPage,
  UffdZeropage,
  UffdCopy,
  UffdRemap,
};

inline constexpr std::size_t kSectionCount = 11;

inline constexpr std::array<std::string_view, kSectionCount> kSectionLabels = {
    "ZERO_CHECK",
    "HANDLE_USERFAULT_ZERO",
    "HANDLE_USERFAULT_COPY_EVICT",
    "READ_FROM_EXTERNRAM",
    "READ_VIA_PAGE_CACHE",
    "EVICT_TO_EXTERNRAM",
    "WRITE_PAGE",
    "READ_PAGE",
    "UFFD_ZEROPAGE",
    "UFFD_COPY",
    "UFFD_REMAP",
};

inline constexpr std::string_view section_label(Section s) {
  return kSectionLabels[static_cast<std::size_t>(s)];
}

/// Per-section latency samples. Samples are kept raw (nanoseconds, in record
/// order) so means and percentiles are recomputable exactly from an export;
/// microsecond views divide on the way out.
class SectionStats {
 public:
  void record(Section s, std::chrono::nanoseconds d) {
    samples_[static_cast<std::size_t>(s)].push_back(static_cast<std::uint64_t>(d.count()));
  }

  const std::vector<std::uint64_t>& samples_ns(Section s) const {
    return samples_[static_cast<std::size_t>(s)];
  }

  /// Appends all of `other`'s samples (used to merge per-trial snapshots).
  void append(const SectionStats& other) {
    for (std::size_t i = 0; i < kSectionCount; ++i) {
      samples_[i].insert(samples_[i].end(), other.samples_[i].begin(), other.samples_[i].end());
    }
  }

  std::size_t count(Section s) const { return samples_ns(s).size(); }

  double mean_us(Section s) const {
    const auto& v = samples_ns(s);
    if (v.empty()) return 0.0;
    long double sum = 0;
    for (auto ns : v) sum += static_cast<long double>(ns);
    return static_cast<double>(sum / static_cast<long double>(v.size()) / 1000.0L);
  }

  double median_us(Section s) const {
    auto v = samples_ns(s);  // copy; snapshots are small
    if (v.empty()) return 0.0;
    std::size_t mid = v.size() / 2;
    std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
    return static_cast<double>(v[mid]) / 1000.0;
  }

 private:
  std::array<std::vector<std::uint64_t>, kSectionCount> samples_;
};

/// Durations of the sections recorded within one fault's dynamic extent,
/// indexed by Section. Used to check the nesting property per fault;
/// background-worker samples never appear here.
struct FaultTrace {
  std::uint64_t seq = 0;
  bool zero_path = false;
  std::array<std::optional<std::uint64_t>, kSectionCount> ns{};

  std::optional<std::uint64_t> duration_ns(Section s) const {
    return ns[static_cast<std::size_t>(s)];
  }
};

/// Stopwatch on the steady clock.
class Stopwatch {
 public:
  Stopwatch() : start_(std::chrono::steady_clock::now()) {}
  std::chrono::nanoseconds elapsed() const {
    return std::chrono::steady_clock::now() - start_;
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

}  // namespace upage
