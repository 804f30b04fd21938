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

#include <array>
#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <functional>
#include <list>
#include <memory>
#include <mutex>
#include <optional>
#include <thread>
#include <unordered_map>
#include <vector>

#include "upage/engine_config.hpp"
#include "upage/errors.hpp"
#include "upage/externram.hpp"
#include "upage/lru_index.hpp"
#include "upage/page.hpp"
#include "upage/page_cache.hpp"
#include "upage/stats.hpp"

namespace upage {

/// Monotonic totals of what the engine has done. Snapshot under the engine
/// lock, so the numbers in one snapshot are mutually consistent.
struct EngineCounters {
  std::uint64_t faults_total = 0;
  std::uint64_t faults_zero_path = 0;
  std::uint64_t faults_copy_path = 0;

  std::uint64_t cache_hits = 0;   // copy-path faults served from the page cache
  std::uint64_t cache_misses = 0; // cache consulted but page not there
  std::uint64_t queue_hits = 0;   // served from a pending eviction, flush canceled

  std::uint64_t store_reads = 0;   // single read calls (demanded + inline prefetch)
  std::uint64_t store_writes = 0;  // single write calls from the synchronous evict path
  std::uint64_t store_removes = 0;
  std::uint64_t multi_writes = 0;  // batched eviction flush calls
  std::uint64_t multi_write_pages = 0;
  std::uint64_t multi_reads = 0;   // background prefetch batch calls
  std::uint64_t multi_read_pages = 0;

  std::uint64_t evictions = 0;  // victims selected
  std::uint64_t evictions_queued = 0;
  std::uint64_t evictions_flushed = 0;
  std::uint64_t zero_elisions = 0;  // all-zero evictions that skipped the store

  std::uint64_t prefetches_issued = 0;
  std::uint64_t prefetch_waits = 0;  // faults that blocked on an in-flight prefetch

  std::uint64_t evictions_parked = 0;  // sync evict failures queued for retry
  std::uint64_t flush_errors = 0;
  std::uint64_t remove_errors = 0;
};

/// One prefetch issuance: the fault (by seq) that triggered it and the key
/// that was fetched. Kept as a log so tests can recompute the adjacency rule
/// independently.
struct PrefetchRecord {
  std::uint64_t trigger_seq = 0;
  PageKey key;
};

/// The monitor: resolves page faults against the residency index, page
/// cache, prefetcher and evict queue, and moves non-resident pages to and
/// from an externram backend.
///
/// Threading: one internal state lock serializes all residency / cache /
/// queue mutation. handle_fault may be called from several fault-delivery
/// threads (never concurrently for the same key). Background workers — the
/// eviction flusher, the prefetcher and the scratch-buffer refiller — take
/// the lock only for short bookkeeping sections and do their store I/O on
/// buffers snapshotted while locked. Destruction stops the workers and
/// flushes whatever is still queued.
class MonitorEngine {
 public:
  /// Fills `out` with the current bytes of `key` and marks the page absent
  /// in the source address space (the extract-leaving-a-hole step). Called
  /// with the engine lock held: it must not call back into the engine.
  using CaptureFn = std::function<void(const PageKey& key, PageBuffer& out)>;

  MonitorEngine(EngineConfig cfg, std::shared_ptr<StoreBackend> store);
  ~MonitorEngine();

  MonitorEngine(const MonitorEngine&) = delete;
  MonitorEngine& operator=(const MonitorEngine&) = delete;

  /// Registers a fault region of `size_bytes` (must be a positive multiple
  /// of the page size) and returns its fresh handle. Every page starts
  /// unknown: the first touch resolves to a zero fill.
  std::uint64_t register_region(std::uint64_t size_bytes, CaptureFn capture);

  /// Tears a region down: drops its residency entries, cached pages and
  /// queued evictions (without flushing them), and removes every key the
  /// store may still hold for it.
  void deregister_region(std::uint64_t region_id);

  /// Resolves one fault. The page must belong to a registered region and
  /// must not be resident; seq values must be strictly increasing.
  /// Store transport failures while fetching the page propagate as
  /// TransportError with the engine state unchanged for that key.
  Resolution handle_fault(const FaultEvent& event);

  /// Writes out everything in the evict queue (full batches of
  /// evict_batch_threshold, then the remainder) and returns how many pages
  /// were flushed. On a store failure the entries stay queued and the error
  /// propagates.
  std::size_t flush_evict_queue();

  SectionStats stats_snapshot() const;
  std::vector<FaultTrace> fault_traces_snapshot() const;
  EngineCounters counters() const;
  std::vector<PrefetchRecord> prefetch_log() const;

  std::size_t resident_count() const;
  std::vector<PageKey> resident_keys() const;  // most recently used first
  std::size_t evict_queue_depth() const;
  std::optional<ResidencyState> residency_of(const PageKey& key) const;

  const EngineConfig& config() const noexcept { return cfg_; }
  StoreBackend& store() noexcept { return *store_; }

 private:
  struct RegionInfo {
    std::uint64_t size = 0;
    CaptureFn capture;
  };

  struct RegionPrefetchState {
    std::optional<std::uint64_t> last_fault_addr;
    bool streak = false;  // last two faulted pages were ascending-adjacent
  };

  struct QueuedPage {
    PageKey key;
    PageBuffer buf;
  };

  // Hand-off cell for one background prefetch. The worker fills `buf` and
  // publishes via `state` with release ordering; a fault waiting for the
  // page polls the flag directly (no lock round trips on the wait path).
  struct PrefetchSlot {
    static constexpr int kPending = 0;
    static constexpr int kReady = 1;
    static constexpr int kMiss = 2;  // absent key or transport error
    std::atomic<int> state{kPending};
    PageBuffer buf;
  };

  struct PrefetchRequest {
    PageKey key;
    std::shared_ptr<PrefetchSlot> slot;
    std::uint64_t store_gen = 0;  // generation of the store copy being read
  };

  using ScratchPtr = std::unique_ptr<PageBuffer>;

  // All of the below assume mu_ is held.
  void validate_event_locked(const FaultEvent& event) const;
  PageBuffer acquire_page_locked(const PageKey& key, ResidencyState state, FaultTrace& trace);
  void process_victim_locked(const PageKey& victim, FaultTrace& trace);
  void evict_page_locked(const PageKey& key, const PageBuffer& buf, FaultTrace* trace);
  std::optional<PageKey> maybe_prefetch_locked(const PageKey& key, std::uint64_t seq);
  void commit_prefetch_batch_locked(const std::vector<PrefetchRequest>& batch,
                                    const std::vector<std::optional<PageBuffer>>& results,
                                    bool ok);
  std::size_t flush_batch_locked(std::size_t max_pages);
  void commit_flush_locked(const std::vector<std::pair<PageKey, PageBuffer>>& batch);
  void erase_queue_entry_locked(const PageKey& key);
  ScratchPtr acquire_scratch_locked();
  void release_scratch_locked(ScratchPtr buf);

  void flusher_main();
  void prefetcher_main();
  void reinit_main();
  void start_workers();
  void pin_worker(std::thread& t, std::optional<int> core, int fallback_slot);

  EngineConfig cfg_;
  std::shared_ptr<StoreBackend> store_;

  mutable std::mutex mu_;
  std::condition_variable cv_flush_;       // work for the flusher
  std::condition_variable cv_flush_idle_;  // flusher batch committed
  std::condition_variable cv_reinit_;      // dirty scratch buffers to re-zero

  // The cold prefetcher sleeps on its own mutex: waking it must never have
  // to wait for mu_, which a fault can hold while polling for a prefetch.
  std::mutex prefetch_cv_mu_;
  std::condition_variable cv_prefetch_;

  ResidencyIndex index_;
  PageCache cache_;
  std::unordered_map<std::uint64_t, RegionInfo> regions_;
  std::unordered_map<std::uint64_t, RegionPrefetchState> prefetch_state_;
  std::uint64_t next_region_id_ = 1;
  std::optional<std::uint64_t> last_seq_;

  // Pages whose bytes (possibly stale) are present in the store, tagged with
  // a generation that advances whenever the stored bytes change. Guards the
  // prefetcher against installing bytes from a superseded store incarnation.
  std::unordered_map<PageKey, std::uint64_t, PageKeyHash> store_copy_;
  std::uint64_t next_store_gen_ = 1;

  // Evict queue proper plus the batch currently being written by the
  // flusher (values point into the flusher's spliced-out nodes).
  std::list<QueuedPage> queued_;
  std::unordered_map<PageKey, std::list<QueuedPage>::iterator, PageKeyHash> queued_index_;
  std::unordered_map<PageKey, const PageBuffer*, PageKeyHash> inflight_flush_;
  bool flush_in_progress_ = false;
  bool flush_backoff_ = false;  // set after a failed flush until new activity

  // Prefetcher state. Requests flow through a single-producer (fault path,
  // serialized by mu_) single-consumer (worker) ring, so the worker can pick
  // work up without touching the engine lock — a fault holds that lock for
  // its whole duration, including while it polls for this very completion.
  static constexpr std::size_t kPrefetchRingSize = 64;
  std::array<PrefetchRequest, kPrefetchRingSize> prefetch_ring_;
  std::atomic<std::size_t> prefetch_ring_head_{0};  // next write (producer)
  std::atomic<std::size_t> prefetch_ring_tail_{0};  // next read (consumer)
  std::unordered_map<PageKey, std::shared_ptr<PrefetchSlot>, PageKeyHash> prefetch_inflight_;

  // Scratch buffer pool.
  std::vector<ScratchPtr> scratch_zeroed_;
  std::vector<ScratchPtr> scratch_dirty_;

  SectionStats stats_;
  std::vector<FaultTrace> traces_;
  EngineCounters counters_;
  std::vector<PrefetchRecord> prefetch_log_;

  std::atomic<bool> running_{true};
  std::thread flusher_thread_;
  std::thread prefetch_thread_;
  std::thread reinit_thread_;
};

}  // namespace upage
