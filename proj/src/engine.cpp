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

#include "upage/engine.hpp"

#include <algorithm>

#ifdef __linux__
#include <pthread.h>
#include <sched.h>
#endif

namespace upage {

namespace {

void record(SectionStats& stats, FaultTrace* trace, Section s, std::chrono::nanoseconds d) {
  stats.record(s, d);
  if (trace) {
    trace->ns[static_cast<std::size_t>(s)] = static_cast<std::uint64_t>(d.count());
  }
}

inline void cpu_relax() {
#if defined(__x86_64__) || defined(__i386__)
  __builtin_ia32_pause();
#else
  asm volatile("" ::: "memory");
#endif
}

}  // namespace

MonitorEngine::MonitorEngine(EngineConfig cfg, std::shared_ptr<StoreBackend> store)
    : cfg_(std::move(cfg)),
      store_(std::move(store)),
      index_(cfg_.capacity),
      cache_(cfg_.page_cache_capacity) {
  cfg_.validate();
  if (!store_) throw ContractViolation("engine: store backend is required");
  if (cfg_.async_reinit) {
    scratch_zeroed_.reserve(cfg_.reinit_pool_size);
    for (std::size_t i = 0; i < cfg_.reinit_pool_size; ++i) {
      scratch_zeroed_.push_back(std::make_unique<PageBuffer>());
    }
  }
  start_workers();
}

MonitorEngine::~MonitorEngine() {
  {
    std::lock_guard lk(mu_);
    running_ = false;
  }
  cv_flush_.notify_all();
  cv_reinit_.notify_all();
  {
    std::lock_guard g(prefetch_cv_mu_);
  }
  cv_prefetch_.notify_all();
  if (flusher_thread_.joinable()) flusher_thread_.join();
  if (prefetch_thread_.joinable()) prefetch_thread_.join();
  if (reinit_thread_.joinable()) reinit_thread_.join();
  try {
    flush_evict_queue();
  } catch (...) {
    // teardown is best-effort; unflushed pages stay in the (dying) queue
  }
}

void MonitorEngine::start_workers() {
  AffinityMap map = cfg_.affinity_map.value_or(AffinityMap{});
  if (cfg_.async_evict) {
    flusher_thread_ = std::thread(&MonitorEngine::flusher_main, this);
    pin_worker(flusher_thread_, map.flusher, 1);
  }
  if (cfg_.prefetch && cfg_.async_prefetch) {
    prefetch_thread_ = std::thread(&MonitorEngine::prefetcher_main, this);
    pin_worker(prefetch_thread_, map.prefetcher, 2);
  }
  if (cfg_.async_reinit) {
    reinit_thread_ = std::thread(&MonitorEngine::reinit_main, this);
    pin_worker(reinit_thread_, map.reinit, 3);
  }
}

void MonitorEngine::pin_worker(std::thread& t, std::optional<int> core, int fallback_slot) {
  if (!cfg_.cpu_affinity) return;
#ifdef __linux__
  unsigned ncores = std::max(1u, std::thread::hardware_concurrency());
  // Without an explicit map there is nothing sensible to dedicate on a
  // 1-2 core machine; pinning there just starves the fault path.
  if (!core && ncores <= 2) return;
  int cpu = core.value_or(fallback_slot % static_cast<int>(ncores));
  cpu_set_t set;
  CPU_ZERO(&set);
  CPU_SET(static_cast<unsigned>(cpu) % ncores, &set);
  pthread_setaffinity_np(t.native_handle(), sizeof(set), &set);
#else
  (void)t;
  (void)core;
  (void)fallback_slot;
  // affinity is a performance knob; unsupported platforms run unpinned
#endif
}

std::uint64_t MonitorEngine::register_region(std::uint64_t size_bytes, CaptureFn capture) {
  if (size_bytes == 0 || size_bytes % kPageSize != 0) {
    throw ContractViolation("register_region: size must be a positive multiple of the page size");
  }
  if (!capture) throw ContractViolation("register_region: capture callback is required");
  std::lock_guard lk(mu_);
  std::uint64_t id = next_region_id_++;
  regions_.emplace(id, RegionInfo{size_bytes, std::move(capture)});
  return id;
}

void MonitorEngine::deregister_region(std::uint64_t region_id) {
  std::unique_lock lk(mu_);
  auto rit = regions_.find(region_id);
  if (rit == regions_.end()) {
    throw ContractViolation("deregister_region: unknown region");
  }
  // Let any in-flight batch settle so its commits don't race the removal.
  cv_flush_idle_.wait(lk, [&] { return !flush_in_progress_; });

  std::vector<PageKey> keys;
  index_.for_each([&](const PageKey& key, ResidencyState) {
    if (key.region_id == region_id) keys.push_back(key);
  });

  // Store removals first: a transport error leaves the region intact so the
  // caller can retry the deregistration.
  for (const PageKey& key : keys) {
    if (store_copy_.count(key)) {
      store_->remove(key);
      ++counters_.store_removes;
      store_copy_.erase(key);
    }
  }

  for (const PageKey& key : keys) {
    erase_queue_entry_locked(key);  // queued evictions drain unflushed
    cache_.erase(key);
    index_.erase(key);
  }
  prefetch_state_.erase(region_id);
  regions_.erase(rit);
}

void MonitorEngine::validate_event_locked(const FaultEvent& event) const {
  auto rit = regions_.find(event.key.region_id);
  if (rit == regions_.end()) {
    throw ContractViolation("handle_fault: key does not belong to a registered region");
  }
  if (event.key.page_addr % kPageSize != 0) {
    throw ContractViolation("handle_fault: page_addr not page-aligned");
  }
  if (event.key.page_addr >= rit->second.size) {
    throw ContractViolation("handle_fault: page_addr outside region");
  }
  if (last_seq_ && event.seq <= *last_seq_) {
    throw ContractViolation("handle_fault: event seq not strictly increasing");
  }
  auto state = index_.state_of(event.key);
  if (state == ResidencyState::Resident) {
    throw ContractViolation("handle_fault: page is resident; resident accesses do not fault");
  }
}

Resolution MonitorEngine::handle_fault(const FaultEvent& event) {
  std::unique_lock lk(mu_);
  validate_event_locked(event);
  last_seq_ = event.seq;

  Stopwatch whole;
  FaultTrace trace;
  trace.seq = event.seq;

  auto state = index_.state_of(event.key);
  bool zero_path;
  if (cfg_.paper_write_fault_mode && event.kind == FaultKind::Write) {
    zero_path = true;  // a write fault is always served with a zero page
  } else {
    zero_path = !state || *state == ResidencyState::ZeroMarked;
  }
  trace.zero_path = zero_path;

  // Issue the prefetch first thing: on the background worker every
  // microsecond of head start counts against the next fault.
  maybe_prefetch_locked(event.key, event.seq);

  // At capacity, the victim goes out before the new page comes in.
  auto evict_if_full = [&] {
    if (index_.resident_count() < cfg_.capacity) return;
    PageKey victim = *index_.peek_lru();
    index_.set_state(victim, ResidencyState::PendingEvict);
    process_victim_locked(victim, trace);
  };

  Resolution resolution = Resolution::zero_fill();
  if (zero_path) {
    // The page either never existed, was marked all-zero at eviction, or is
    // being overwritten wholesale (paper write mode); no store read either
    // way, and any pending flush or cached copy for the key is now moot.
    erase_queue_entry_locked(event.key);
    cache_.erase(event.key);
    evict_if_full();
    index_.record_resident(event.key);

    Stopwatch zp;
    ScratchPtr zero_page_buf = acquire_scratch_locked();
    release_scratch_locked(std::move(zero_page_buf));
    record(stats_, &trace, Section::UffdZeropage, zp.elapsed());
    ++counters_.faults_zero_path;
  } else {
    Stopwatch rfe;
    evict_if_full();
    PageBuffer bytes = acquire_page_locked(event.key, *state, trace);
    index_.record_resident(event.key);
    cache_.erase(event.key);
    record(stats_, &trace, Section::ReadFromExternram, rfe.elapsed());

    Stopwatch uc;
    resolution = Resolution::copy(std::move(bytes));
    record(stats_, &trace, Section::UffdCopy, uc.elapsed());
    ++counters_.faults_copy_path;
  }

  ++counters_.faults_total;
  auto total = whole.elapsed();
  record(stats_, &trace,
         zero_path ? Section::HandleUserfaultZero : Section::HandleUserfaultCopyEvict, total);
  traces_.push_back(trace);
  return resolution;
}

/// Copy-path page acquisition: pending eviction first (canceling its flush),
/// then the in-flight flush batch, then the page cache, then the store,
/// adopting or briefly waiting out an in-flight prefetch of the same key
/// rather than issuing a duplicate read.
PageBuffer MonitorEngine::acquire_page_locked(const PageKey& key, ResidencyState state,
                                              FaultTrace& trace) {
  Stopwatch rvpc;
  std::optional<PageBuffer> bytes;

  if (auto qit = queued_index_.find(key); qit != queued_index_.end()) {
    bytes = qit->second->buf;
    erase_queue_entry_locked(key);
    ++counters_.queue_hits;
  } else if (auto fit = inflight_flush_.find(key); fit != inflight_flush_.end()) {
    // Write already on the wire; serve the same bytes. The commit will see
    // the key resident and leave it that way.
    bytes = *fit->second;
    ++counters_.queue_hits;
  } else {
    if (cfg_.page_cache) {
      bytes = cache_.get(key);
    }
    if (!bytes) {
      if (auto pit = prefetch_inflight_.find(key); pit != prefetch_inflight_.end()) {
        // The worker owns a read of this page (the pickup is lock-free, so
        // it proceeds even while we hold the engine lock). Poll the
        // completion flag in place rather than issue a duplicate read: a
        // futex round trip costs more than a store read on slow-timer
        // hosts, and a demanded read would serialize behind the in-flight
        // one anyway. The budget only guards against a wedged backend;
        // growing pause bursts keep the poll polite to the worker's core.
        ++counters_.prefetch_waits;
        std::shared_ptr<PrefetchSlot> slot = pit->second;
        auto deadline = std::chrono::steady_clock::now() + std::chrono::milliseconds(2);
        int burst = 32;
        int state = slot->state.load(std::memory_order_acquire);
        while (state == PrefetchSlot::kPending &&
               std::chrono::steady_clock::now() < deadline) {
          for (int i = 0; i < burst; ++i) cpu_relax();
          burst = std::min(burst * 2, 1024);
          state = slot->state.load(std::memory_order_acquire);
        }
        if (state == PrefetchSlot::kReady) {
          bytes = slot->buf;
        }
        // The slot is spent from this key's point of view either way; the
        // worker's own cleanup only erases entries it still recognizes.
        prefetch_inflight_.erase(key);
      }
    }
    if (bytes) {
      ++counters_.cache_hits;
    } else {
      if (cfg_.page_cache) ++counters_.cache_misses;
      Stopwatch rp;
      auto stored = store_->read(key);
      ++counters_.store_reads;
      record(stats_, &trace, Section::ReadPage, rp.elapsed());
      if (!stored) {
        throw TransportError("store lost page " + std::to_string(key.region_id) + ":" +
                             std::to_string(key.page_addr) + " expected in state " +
                             to_string(state));
      }
      bytes = std::move(stored);
    }
  }

  record(stats_, &trace, Section::ReadViaPageCache, rvpc.elapsed());
  return std::move(*bytes);
}

void MonitorEngine::process_victim_locked(const PageKey& victim, FaultTrace& trace) {
  ++counters_.evictions;
  Stopwatch remap;
  ScratchPtr buf = acquire_scratch_locked();
  regions_.at(victim.region_id).capture(victim, *buf);
  record(stats_, &trace, Section::UffdRemap, remap.elapsed());

  evict_page_locked(victim, *buf, &trace);
  release_scratch_locked(std::move(buf));
}

/// Disposes of a captured victim page: all-zero pages are only marked,
/// otherwise the bytes are queued (async) or written through (sync). A
/// synchronous write failure parks the page in the queue for a later flush.
void MonitorEngine::evict_page_locked(const PageKey& key, const PageBuffer& buf,
                                      FaultTrace* trace) {
  Stopwatch evict;

  if (cfg_.zero_page) {
    Stopwatch zc;
    bool zero = is_zero_page(buf);
    record(stats_, trace, Section::ZeroCheck, zc.elapsed());
    if (zero) {
      index_.set_state(key, ResidencyState::ZeroMarked);
      ++counters_.zero_elisions;
      if (store_copy_.count(key)) {
        // stale bytes from an earlier eviction; drop them so nothing can
        // resurrect them later
        try {
          store_->remove(key);
          ++counters_.store_removes;
          store_copy_.erase(key);
        } catch (const TransportError&) {
          ++counters_.remove_errors;  // the mark still wins; retried at deregister
        }
      }
      record(stats_, trace, Section::EvictToExternram, evict.elapsed());
      return;
    }
  }

  if (cfg_.async_evict) {
    queued_.push_back(QueuedPage{key, buf});
    queued_index_[key] = std::prev(queued_.end());
    ++counters_.evictions_queued;
    if (queued_.size() >= cfg_.evict_batch_threshold) {
      flush_backoff_ = false;
      cv_flush_.notify_one();
    }
    record(stats_, trace, Section::EvictToExternram, evict.elapsed());
    return;
  }

  try {
    Stopwatch wp;
    store_->write(key, buf);
    record(stats_, trace, Section::WritePage, wp.elapsed());
    ++counters_.store_writes;
    index_.set_state(key, ResidencyState::InStore);
    store_copy_[key] = next_store_gen_++;
  } catch (const TransportError&) {
    // keep the bytes; the page stays PendingEvict and goes out with the
    // next flush
    queued_.push_back(QueuedPage{key, buf});
    queued_index_[key] = std::prev(queued_.end());
    ++counters_.evictions_parked;
  }
  record(stats_, trace, Section::EvictToExternram, evict.elapsed());
}

void MonitorEngine::erase_queue_entry_locked(const PageKey& key) {
  auto it = queued_index_.find(key);
  if (it == queued_index_.end()) return;
  queued_.erase(it->second);
  queued_index_.erase(it);
}

std::optional<PageKey> MonitorEngine::maybe_prefetch_locked(const PageKey& key,
                                                            std::uint64_t seq) {
  auto& ps = prefetch_state_[key.region_id];
  bool streak = ps.last_fault_addr && key.page_addr == *ps.last_fault_addr + kPageSize;
  ps.last_fault_addr = key.page_addr;
  ps.streak = streak;

  if (!cfg_.prefetch || !streak) return std::nullopt;

  PageKey next{key.region_id, key.page_addr + kPageSize};
  if (next.page_addr >= regions_.at(key.region_id).size) return std::nullopt;
  if (index_.state_of(next) != ResidencyState::InStore) return std::nullopt;
  if (cache_.contains(next) || prefetch_inflight_.count(next)) return std::nullopt;

  if (cfg_.async_prefetch) {
    std::size_t head = prefetch_ring_head_.load(std::memory_order_relaxed);
    std::size_t tail = prefetch_ring_tail_.load(std::memory_order_acquire);
    if (head - tail >= kPrefetchRingSize) return std::nullopt;  // ring full: skip
    auto slot = std::make_shared<PrefetchSlot>();
    prefetch_inflight_.emplace(next, slot);
    prefetch_ring_[head % kPrefetchRingSize] =
        PrefetchRequest{next, std::move(slot), store_copy_.at(next)};
    prefetch_ring_head_.store(head + 1, std::memory_order_release);
    {
      std::lock_guard g(prefetch_cv_mu_);  // pairs with the worker's wait
    }
    cv_prefetch_.notify_one();
  } else {
    try {
      auto stored = store_->read(next);
      ++counters_.store_reads;
      if (stored) cache_.put(next, *stored);
    } catch (const TransportError&) {
      return std::nullopt;  // prefetch is best-effort
    }
  }
  ++counters_.prefetches_issued;
  prefetch_log_.push_back(PrefetchRecord{seq, next});
  return next;
}

std::size_t MonitorEngine::flush_evict_queue() {
  std::unique_lock lk(mu_);
  cv_flush_idle_.wait(lk, [&] { return !flush_in_progress_; });
  flush_backoff_ = false;
  std::size_t flushed = 0;
  while (!queued_.empty()) {
    flushed += flush_batch_locked(std::min(queued_.size(), cfg_.evict_batch_threshold));
  }
  return flushed;
}

/// Writes the first `max_pages` queue entries as one multi_write and commits
/// their transitions. Lock stays held; on failure the queue is untouched.
std::size_t MonitorEngine::flush_batch_locked(std::size_t max_pages) {
  std::vector<std::pair<PageKey, PageBuffer>> batch;
  batch.reserve(max_pages);
  for (auto it = queued_.begin(); it != queued_.end() && batch.size() < max_pages; ++it) {
    batch.emplace_back(it->key, it->buf);
  }
  if (batch.empty()) return 0;

  Stopwatch evict;
  store_->multi_write(batch);
  stats_.record(Section::EvictToExternram, evict.elapsed());

  ++counters_.multi_writes;
  counters_.multi_write_pages += batch.size();
  counters_.evictions_flushed += batch.size();
  for (const auto& [key, buf] : batch) erase_queue_entry_locked(key);
  commit_flush_locked(batch);
  return batch.size();
}

void MonitorEngine::commit_flush_locked(const std::vector<std::pair<PageKey, PageBuffer>>& batch) {
  for (const auto& [key, buf] : batch) {
    store_copy_[key] = next_store_gen_++;
    auto state = index_.state_of(key);
    // A key re-faulted (now Resident) or re-evicted (back in the queue with
    // newer bytes) keeps its state; the store copy is simply stale until
    // overwritten or removed.
    if (state == ResidencyState::PendingEvict && queued_index_.count(key) == 0) {
      index_.set_state(key, ResidencyState::InStore);
    }
  }
}

void MonitorEngine::flusher_main() {
  std::unique_lock lk(mu_);
  while (true) {
    cv_flush_.wait(lk, [&] {
      return !running_ || (queued_.size() >= cfg_.evict_batch_threshold && !flush_backoff_);
    });
    if (!running_) return;

    while (running_ && queued_.size() >= cfg_.evict_batch_threshold) {
      // Carve exactly one threshold-sized batch. Splicing list nodes keeps
      // the critical section free of page copies.
      std::list<QueuedPage> carved;
      auto batch_end = queued_.begin();
      std::advance(batch_end, cfg_.evict_batch_threshold);
      carved.splice(carved.begin(), queued_, queued_.begin(), batch_end);
      for (const QueuedPage& qp : carved) {
        queued_index_.erase(qp.key);
        inflight_flush_.emplace(qp.key, &qp.buf);
      }
      flush_in_progress_ = true;
      lk.unlock();

      std::vector<std::pair<PageKey, PageBuffer>> batch;
      batch.reserve(carved.size());
      for (const QueuedPage& qp : carved) batch.emplace_back(qp.key, qp.buf);

      bool ok = true;
      Stopwatch evict;
      try {
        store_->multi_write(batch);
      } catch (const TransportError&) {
        ok = false;
      }

      lk.lock();
      if (ok) {
        stats_.record(Section::EvictToExternram, evict.elapsed());
        ++counters_.multi_writes;
        counters_.multi_write_pages += batch.size();
        counters_.evictions_flushed += batch.size();
        commit_flush_locked(batch);
      } else {
        ++counters_.flush_errors;
        flush_backoff_ = true;  // wait for fresh activity before retrying
        // Put survivors back at the head in their original order; entries
        // whose page re-faulted while we were writing are resident again and
        // must not be re-queued.
        for (auto it = carved.end(); it != carved.begin();) {
          --it;
          if (index_.state_of(it->key) == ResidencyState::PendingEvict &&
              queued_index_.count(it->key) == 0) {
            auto node = it++;
            queued_.splice(queued_.begin(), carved, node);
            queued_index_[queued_.front().key] = queued_.begin();
          }
        }
      }
      for (const auto& [key, buf] : batch) inflight_flush_.erase(key);
      flush_in_progress_ = false;
      cv_flush_idle_.notify_all();
      if (!ok) break;
    }
  }
}

void MonitorEngine::prefetcher_main() {
  // Requests arrive a few microseconds before the page is needed, so pickup
  // latency decides whether prefetching helps at all. The ring is consumed
  // and the completion slots are published entirely without the engine
  // lock; bookkeeping (cache insert, counters, inflight cleanup) is
  // committed opportunistically, because a fault may hold the engine lock
  // for a long time precisely while it waits for a slot published here.
  constexpr auto kHotWindow = std::chrono::microseconds(500);
  auto hot_until = std::chrono::steady_clock::now();

  auto ring_empty = [&] {
    return prefetch_ring_tail_.load(std::memory_order_relaxed) ==
           prefetch_ring_head_.load(std::memory_order_acquire);
  };

  struct CompletedBatch {
    std::vector<PrefetchRequest> requests;
    std::vector<std::optional<PageBuffer>> results;
    bool ok = false;
  };
  std::vector<CompletedBatch> uncommitted;

  auto commit_all = [&](std::unique_lock<std::mutex>& lk) {
    for (const CompletedBatch& done : uncommitted) {
      commit_prefetch_batch_locked(done.requests, done.results, done.ok);
    }
    uncommitted.clear();
    (void)lk;
  };

  while (running_) {
    if (ring_empty()) {
      if (!uncommitted.empty()) {
        // Settle the books, but never block on the engine lock: a fault may
        // be holding it while polling for a slot whose request would then
        // rot in the ring behind us. Between faults the lock is free and
        // the try_lock lands within microseconds.
        if (std::unique_lock lk(mu_, std::try_to_lock); lk.owns_lock()) {
          commit_all(lk);
        } else {
          for (int i = 0; i < 32; ++i) cpu_relax();
        }
        continue;
      }
      if (std::chrono::steady_clock::now() < hot_until) {
        for (int i = 0; i < 32; ++i) cpu_relax();
        continue;
      }
      std::unique_lock cv_lk(prefetch_cv_mu_);
      cv_prefetch_.wait(cv_lk, [&] { return !running_ || !ring_empty(); });
      continue;
    }

    CompletedBatch done;
    std::size_t tail = prefetch_ring_tail_.load(std::memory_order_relaxed);
    std::size_t head = prefetch_ring_head_.load(std::memory_order_acquire);
    while (tail != head) {
      done.requests.push_back(std::move(prefetch_ring_[tail % kPrefetchRingSize]));
      ++tail;
    }
    prefetch_ring_tail_.store(tail, std::memory_order_release);

    std::vector<PageKey> keys;
    keys.reserve(done.requests.size());
    for (const PrefetchRequest& req : done.requests) keys.push_back(req.key);

    done.ok = true;
    try {
      done.results = store_->multi_read(keys);
    } catch (const TransportError&) {
      done.ok = false;  // best-effort: drop the whole batch
    }

    // Publish to any waiting fault first; the waiter polls the slot flag
    // while holding the engine lock.
    for (std::size_t i = 0; i < done.requests.size(); ++i) {
      if (done.ok && done.results[i]) {
        done.requests[i].slot->buf = *done.results[i];
        done.requests[i].slot->state.store(PrefetchSlot::kReady, std::memory_order_release);
      } else {
        done.requests[i].slot->state.store(PrefetchSlot::kMiss, std::memory_order_release);
      }
    }
    hot_until = std::chrono::steady_clock::now() + kHotWindow;

    uncommitted.push_back(std::move(done));
    if (std::unique_lock lk(mu_, std::try_to_lock); lk.owns_lock()) {
      commit_all(lk);
    }
  }

  std::unique_lock lk(mu_);
  commit_all(lk);
  for (auto& [key, slot] : prefetch_inflight_) {
    slot->state.store(PrefetchSlot::kMiss, std::memory_order_release);
  }
  prefetch_inflight_.clear();
}

void MonitorEngine::commit_prefetch_batch_locked(
    const std::vector<PrefetchRequest>& batch,
    const std::vector<std::optional<PageBuffer>>& results, bool ok) {
  if (ok) {
    ++counters_.multi_reads;
    counters_.multi_read_pages += batch.size();
  }
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const PrefetchRequest& req = batch[i];
    if (ok && results[i]) {
      // Install only pages that are still store-resident AND whose store
      // bytes are the same incarnation we read; the page may have gone
      // through a full refault-modify-flush cycle since.
      auto gen = store_copy_.find(req.key);
      if (index_.state_of(req.key) == ResidencyState::InStore &&
          gen != store_copy_.end() && gen->second == req.store_gen) {
        cache_.put(req.key, *results[i]);
      }
    }
    // Erase only the entry this request created; the consuming fault may
    // have erased it already and a newer request may own the key now.
    auto it = prefetch_inflight_.find(req.key);
    if (it != prefetch_inflight_.end() && it->second == req.slot) {
      prefetch_inflight_.erase(it);
    }
  }
}

void MonitorEngine::reinit_main() {
#ifdef __linux__
  // Re-zeroing scratch buffers is pure background hygiene; never let it
  // preempt the fault path or the latency-critical workers.
  sched_param param{};
  pthread_setschedparam(pthread_self(), SCHED_IDLE, &param);
#endif
  std::unique_lock lk(mu_);
  while (true) {
    cv_reinit_.wait(lk, [&] { return !running_ || !scratch_dirty_.empty(); });
    if (!running_) return;
    std::vector<ScratchPtr> dirty;
    dirty.swap(scratch_dirty_);
    lk.unlock();

    for (ScratchPtr& buf : dirty) buf->fill(0);

    lk.lock();
    for (ScratchPtr& buf : dirty) {
      if (scratch_zeroed_.size() < cfg_.reinit_pool_size) {
        scratch_zeroed_.push_back(std::move(buf));
      }
    }
  }
}

MonitorEngine::ScratchPtr MonitorEngine::acquire_scratch_locked() {
  if (cfg_.async_reinit && !scratch_zeroed_.empty()) {
    ScratchPtr buf = std::move(scratch_zeroed_.back());
    scratch_zeroed_.pop_back();
    return buf;
  }
  if (!scratch_dirty_.empty()) {
    ScratchPtr buf = std::move(scratch_dirty_.back());
    scratch_dirty_.pop_back();
    buf->fill(0);  // inline re-initialization
    return buf;
  }
  return std::make_unique<PageBuffer>();
}

void MonitorEngine::release_scratch_locked(ScratchPtr buf) {
  if (scratch_dirty_.size() + scratch_zeroed_.size() >= cfg_.reinit_pool_size) return;
  scratch_dirty_.push_back(std::move(buf));
  // batch wakeups: one refill pass per half pool, not one per fault
  if (cfg_.async_reinit &&
      scratch_dirty_.size() >= std::max<std::size_t>(1, cfg_.reinit_pool_size / 2)) {
    cv_reinit_.notify_one();
  }
}

SectionStats MonitorEngine::stats_snapshot() const {
  std::lock_guard lk(mu_);
  return stats_;
}

std::vector<FaultTrace> MonitorEngine::fault_traces_snapshot() const {
  std::lock_guard lk(mu_);
  return traces_;
}

EngineCounters MonitorEngine::counters() const {
  std::lock_guard lk(mu_);
  return counters_;
}

std::vector<PrefetchRecord> MonitorEngine::prefetch_log() const {
  std::lock_guard lk(mu_);
  return prefetch_log_;
}

std::size_t MonitorEngine::resident_count() const {
  std::lock_guard lk(mu_);
  return index_.resident_count();
}

std::vector<PageKey> MonitorEngine::resident_keys() const {
  std::lock_guard lk(mu_);
  return index_.resident_keys_mru_first();
}

std::size_t MonitorEngine::evict_queue_depth() const {
  std::lock_guard lk(mu_);
  return queued_.size();
}

std::optional<ResidencyState> MonitorEngine::residency_of(const PageKey& key) const {
  std::lock_guard lk(mu_);
  return index_.state_of(key);
}

}  // namespace upage
