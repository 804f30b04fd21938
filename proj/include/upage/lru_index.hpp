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
#include <list>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "upage/errors.hpp"
#include "upage/page.hpp"

namespace upage {

/// Where a known page's bytes currently live.
///
///   Resident     — bytes are in the (simulated) guest address space.
///   InStore      — bytes were evicted and written to the external store.
///   ZeroMarked   — page was all-zero at eviction; nothing was written, the
///                  mark alone is enough to recreate it.
///   PendingEvict — chosen as a victim; bytes captured but not yet flushed.
enum class ResidencyState { Resident, InStore, ZeroMarked, PendingEvict };

inline const char* to_string(ResidencyState s) {
  switch (s) {
    case ResidencyState::Resident: return "Resident";
    case ResidencyState::InStore: return "InStore";
    case ResidencyState::ZeroMarked: return "ZeroMarked";
    case ResidencyState::PendingEvict: return "PendingEvict";
  }
  return "?";
}

/// Dual-indexed residency tracker: a hash map for O(1) lookup and a recency
/// list over the Resident subset for O(1) victim selection. Strict LRU; the
/// recency order is a total order over Resident keys, updated on every touch.
///
/// Not internally synchronized — the owning engine serializes access.
///
/// Build with UPAGE_PARANOID_INDEX defined to re-validate full dual-index
/// coherence after every mutation (test builds only; it is O(resident)).
class ResidencyIndex {
 public:
  explicit ResidencyIndex(std::size_t capacity) : capacity_(capacity) {
    if (capacity == 0) {
      throw ContractViolation("ResidencyIndex capacity must be >= 1");
    }
  }

  std::size_t capacity() const noexcept { return capacity_; }
  std::size_t resident_count() const noexcept { return recency_.size(); }
  std::size_t known_count() const noexcept { return entries_.size(); }

  std::optional<ResidencyState> state_of(const PageKey& key) const {
    auto it = entries_.find(key);
    if (it == entries_.end()) return std::nullopt;
    return it->second.state;
  }

  /// Marks `key` Resident and most-recently-used. If that would push the
  /// Resident count past capacity, the least-recently-used key is moved to
  /// PendingEvict and returned as the victim.
  ///
  /// `key` may be unknown or in any non-Resident state (InStore, ZeroMarked,
  /// PendingEvict — a re-fault before flush); it must not already be Resident.
  std::optional<PageKey> record_resident(const PageKey& key) {
    auto [it, inserted] = entries_.try_emplace(key);
    if (!inserted && it->second.state == ResidencyState::Resident) {
      throw ContractViolation("record_resident: key already Resident");
    }
    recency_.push_front(key);
    it->second.state = ResidencyState::Resident;
    it->second.pos = recency_.begin();

    std::optional<PageKey> victim;
    if (recency_.size() > capacity_) {
      victim = recency_.back();
      auto& ve = entries_.at(*victim);
      recency_.pop_back();
      ve.state = ResidencyState::PendingEvict;
      ve.pos = recency_.end();
    }
    check_coherence();
    return victim;
  }

  /// Moves a Resident key to most-recently-used.
  void touch(const PageKey& key) {
    auto it = entries_.find(key);
    if (it == entries_.end() || it->second.state != ResidencyState::Resident) {
      throw ContractViolation("touch: key not Resident");
    }
    recency_.splice(recency_.begin(), recency_, it->second.pos);
    it->second.pos = recency_.begin();
    check_coherence();
  }

  /// Applies one of the legal bookkeeping transitions:
  ///   Resident -> PendingEvict
  ///   PendingEvict -> InStore | ZeroMarked | Resident
  ///   InStore -> Resident
  ///   ZeroMarked -> Resident
  /// Anything else (or an unknown key) is a contract violation. A transition
  /// into Resident inserts the key at most-recently-used and must not push
  /// the Resident count past capacity.
  void set_state(const PageKey& key, ResidencyState to) {
    auto it = entries_.find(key);
    if (it == entries_.end()) {
      throw ContractViolation("set_state: unknown key");
    }
    ResidencyState from = it->second.state;
    if (!transition_legal(from, to)) {
      throw ContractViolation(std::string("set_state: illegal transition ") +
                              to_string(from) + " -> " + to_string(to));
    }
    if (from == ResidencyState::Resident) {
      recency_.erase(it->second.pos);
      it->second.pos = recency_.end();
    }
    if (to == ResidencyState::Resident) {
      if (recency_.size() == capacity_) {
        throw ContractViolation("set_state: transition to Resident would exceed capacity");
      }
      recency_.push_front(key);
      it->second.pos = recency_.begin();
    }
    it->second.state = to;
    check_coherence();
  }

  /// Changes the capacity. Shrinking below the current Resident count moves
  /// the excess least-recently-used keys to PendingEvict and returns them,
  /// LRU-first.
  std::vector<PageKey> resize(std::size_t new_capacity) {
    if (new_capacity == 0) {
      throw ContractViolation("resize: capacity must be >= 1");
    }
    capacity_ = new_capacity;
    std::vector<PageKey> victims;
    while (recency_.size() > capacity_) {
      PageKey victim = recency_.back();
      auto& ve = entries_.at(victim);
      recency_.pop_back();
      ve.state = ResidencyState::PendingEvict;
      ve.pos = recency_.end();
      victims.push_back(victim);
    }
    check_coherence();
    return victims;
  }

  /// Forgets a key entirely (region teardown). No-op if unknown.
  void erase(const PageKey& key) {
    auto it = entries_.find(key);
    if (it == entries_.end()) return;
    if (it->second.state == ResidencyState::Resident) {
      recency_.erase(it->second.pos);
    }
    entries_.erase(it);
    check_coherence();
  }

  template <typename Fn>
  void for_each(Fn&& fn) const {
    for (const auto& [key, entry] : entries_) fn(key, entry.state);
  }

  std::vector<PageKey> resident_keys_mru_first() const {
    return {recency_.begin(), recency_.end()};
  }

  /// Least-recently-used Resident key, if any. Does not change recency.
  std::optional<PageKey> peek_lru() const {
    if (recency_.empty()) return std::nullopt;
    return recency_.back();
  }

  /// Full dual-index coherence check: every Resident entry occupies exactly
  /// one recency slot, every slot points back at a Resident entry, and the
  /// capacity bound holds.
  void validate() const {
    if (recency_.size() > capacity_) {
      throw ContractViolation("coherence: resident count exceeds capacity");
    }
    std::size_t resident = 0;
    for (const auto& [key, entry] : entries_) {
      if (entry.state == ResidencyState::Resident) {
        ++resident;
        if (entry.pos == recency_.end() || !(*entry.pos == key)) {
          throw ContractViolation("coherence: resident entry not on its recency slot");
        }
      }
    }
    if (resident != recency_.size()) {
      throw ContractViolation("coherence: hash view and recency view disagree");
    }
  }

 private:
  struct Entry {
    ResidencyState state = ResidencyState::Resident;
    std::list<PageKey>::iterator pos;
  };

  static bool transition_legal(ResidencyState from, ResidencyState to) {
    switch (from) {
      case ResidencyState::Resident:
        return to == ResidencyState::PendingEvict;
      case ResidencyState::PendingEvict:
        return to == ResidencyState::InStore || to == ResidencyState::ZeroMarked ||
               to == ResidencyState::Resident;
      case ResidencyState::InStore:
      case ResidencyState::ZeroMarked:
        return to == ResidencyState::Resident;
    }
    return false;
  }

  void check_coherence() const {
#ifdef UPAGE_PARANOID_INDEX
    validate();
#endif
  }

  std::size_t capacity_;
  std::unordered_map<PageKey, Entry, PageKeyHash> entries_;
  std::list<PageKey> recency_;  // front = most recently used
};

}  // namespace upage
