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
#include <string>
#include <unordered_map>
#include <vector>

#include "upage/engine.hpp"
#include "upage/trace.hpp"

namespace upage {

/// What one access did.
struct ApplyResult {
  bool faulted = false;
  bool zero_fill = false;           // meaningful when faulted
  std::uint64_t fault_ns = 0;       // handle_fault wall time, when faulted
  std::uint64_t seq = 0;            // fault event seq, when faulted
  PageKey key;                      // engine key of the touched page
  FaultKind kind = FaultKind::Read;
};

/// Aggregate of one trace replay. `fault_ns` has one sample per fault, in
/// order; `hit_ns` one per non-faulting access.
struct ReplayReport {
  std::uint64_t faults = 0;
  std::uint64_t hits = 0;
  std::vector<std::uint64_t> fault_ns;
  std::vector<std::uint64_t> hit_ns;
  std::vector<ApplyResult> fault_log;  // faulting accesses only, in order
  bool aborted = false;
  std::string error;

  double mean_fault_us() const {
    if (fault_ns.empty()) return 0.0;
    long double sum = 0;
    for (auto ns : fault_ns) sum += static_cast<long double>(ns);
    return static_cast<double>(sum / static_cast<long double>(fault_ns.size()) / 1000.0L);
  }
};

/// The guest side of the split: owns the ground-truth bytes of every page
/// (its shadow memory) and the present-page set, faults absent pages through
/// the engine, and hands victim bytes back via the engine's capture callback
/// (after which the page is absent again and the next touch re-faults).
///
/// Single-threaded and deterministic; one guest drives one engine.
class SimulatedGuest {
 public:
  explicit SimulatedGuest(MonitorEngine& engine) : engine_(engine) {}

  /// Registers a region of `size_bytes` under the trace-visible `label`.
  /// Returns the engine's region handle.
  std::uint64_t add_region(std::uint64_t label, std::uint64_t size_bytes);

  bool has_region(std::uint64_t label) const { return regions_.count(label) > 0; }

  /// Applies one access: present pages are hits; absent pages synthesize a
  /// fault, install the engine's resolution into shadow memory, then perform
  /// the access (writes rewrite the whole page with the deterministic fill).
  ApplyResult apply_access(const Access& access);

  /// Ground truth bytes of one whole region (resident or not).
  const std::vector<std::uint8_t>& shadow(std::uint64_t label) const {
    return regions_.at(label).shadow;
  }

  /// Engine keys of the pages currently present, for presence/residency
  /// agreement checks.
  std::vector<PageKey> present_keys() const;

  std::uint64_t engine_region(std::uint64_t label) const {
    return regions_.at(label).engine_id;
  }

 private:
  struct Region {
    std::uint64_t engine_id = 0;
    std::uint64_t size = 0;
    std::vector<std::uint8_t> shadow;
    std::vector<bool> present;
    std::vector<bool> materialized;  // page ever held installed bytes
  };

  Region& region_for(const Access& access);

  MonitorEngine& engine_;
  std::unordered_map<std::uint64_t, Region> regions_;
  std::uint64_t next_seq_ = 1;
};

/// Replays a whole trace (regions must already cover it), flushes the evict
/// queue at the end, and aggregates counts and latency samples. The first
/// unrecoverable engine error aborts the replay; the partial report carries
/// the error text.
ReplayReport run_replay(SimulatedGuest& guest, MonitorEngine& engine, const AccessTrace& trace);

}  // namespace upage
