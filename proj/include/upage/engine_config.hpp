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
#include <iosfwd>
#include <optional>
#include <string>

namespace upage {

/// Which worker threads get pinned where when cpu_affinity is enabled.
/// Unset roles fall back to spreading workers across available cores.
struct AffinityMap {
  std::optional<int> flusher;
  std::optional<int> prefetcher;
  std::optional<int> reinit;
};

/// Engine tuning knobs. The seven optimization flags correspond to the
/// cumulative benchmark ladder; see upage/bench.hpp for the level mapping.
struct EngineConfig {
  std::size_t capacity = 1024;            // resident-page bound
  std::size_t page_cache_capacity = 1024; // entries in the prefetch-fed cache
  std::size_t evict_batch_threshold = 8;  // queued pages per multi_write flush
  std::size_t reinit_pool_size = 64;      // pre-zeroed scratch buffers

  bool page_cache = false;
  bool zero_page = false;
  bool prefetch = false;
  bool async_evict = false;
  bool async_prefetch = false;
  bool cpu_affinity = false;
  bool async_reinit = false;

  std::optional<AffinityMap> affinity_map;

  // When true, every write fault is answered with a zero page even if the
  // page has stored bytes. Off by default: the default mode fetches stored
  // bytes on write faults so no data is lost when a fault source cannot tell
  // first touches from re-accesses.
  bool paper_write_fault_mode = false;

  /// Throws ContractViolation when the combination is unusable
  /// (capacity or threshold of zero, prefetch without the page cache, ...).
  void validate() const;

  /// Parses a `key = value` configuration document ('#' comments and blank
  /// lines allowed; durations, where any appear, are integer microseconds).
  /// Unknown keys are rejected. The result is validated.
  static EngineConfig from_kv_text(std::istream& in);

  /// Inverse of from_kv_text (affinity keys emitted only when set).
  std::string to_kv_text() const;
};

}  // namespace upage
