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

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <chrono>
#include <sstream>
#include <thread>
#include <unordered_map>

#include "upage/engine.hpp"

using namespace upage;

namespace {

// Drives handle_fault directly: owns the "guest memory" for one region and
// wires the capture callback to it.
class FaultDriver {
 public:
  FaultDriver(MonitorEngine& engine, std::uint64_t size_bytes) : engine_(engine) {
    region_ = engine.register_region(size_bytes, [this](const PageKey& key, PageBuffer& out) {
      out = memory_.at(key);
      memory_.erase(key);
    });
  }

  PageKey key(std::uint64_t page) const { return PageKey{region_, page * kPageSize}; }

  Resolution fault(std::uint64_t page, FaultKind kind = FaultKind::Read) {
    PageKey k = key(page);
    Resolution res = engine_.handle_fault(FaultEvent{k, kind, seq_++});
    memory_[k] = res.is_copy() ? res.bytes() : PageBuffer{};
    return res;
  }

  // Guest-side write to a resident page (no engine involvement).
  void poke(std::uint64_t page, std::uint8_t fill) {
    PageBuffer buf;
    buf.fill(fill);
    memory_.at(key(page)) = buf;
  }

  PageBuffer peek(std::uint64_t page) const { return memory_.at(key(page)); }
  bool present(std::uint64_t page) const { return memory_.count(key(page)) > 0; }
  std::uint64_t region() const { return region_; }
  std::uint64_t next_seq() { return seq_++; }

 private:
  MonitorEngine& engine_;
  std::uint64_t region_ = 0;
  std::uint64_t seq_ = 1;
  std::unordered_map<PageKey, PageBuffer, PageKeyHash> memory_;
};

// LocalBackend whose multi_read blocks until released, for pinning down
// races between the prefetch worker and the fault path.
class GatedBackend : public LocalBackend {
 public:
  std::optional<PageBuffer> read(const PageKey& k) override {
    return LocalBackend::read(k);  // demanded reads pass through
  }

  std::vector<std::optional<PageBuffer>> multi_read(std::span<const PageKey> keys) override {
    entered.store(true);
    while (hold.load()) std::this_thread::sleep_for(std::chrono::microseconds(100));
    return LocalBackend::multi_read(keys);
  }

  std::atomic<bool> entered{false};
  std::atomic<bool> hold{true};
};

// LocalBackend with switchable failure injection.
class FlakyBackend : public LocalBackend {
 public:
  bool fail_writes = false;
  bool fail_reads = false;
  bool fail_multi_writes = false;

  void write(const PageKey& k, const PageBuffer& b) override {
    if (fail_writes) throw TransportError("injected write failure");
    LocalBackend::write(k, b);
  }
  std::optional<PageBuffer> read(const PageKey& k) override {
    if (fail_reads) throw TransportError("injected read failure");
    return LocalBackend::read(k);
  }
  void multi_write(std::span<const std::pair<PageKey, PageBuffer>> batch) override {
    if (fail_multi_writes) throw TransportError("injected multi_write failure");
    LocalBackend::multi_write(batch);
  }
  std::string name() const override { return "flaky"; }
};

EngineConfig sync_config(std::size_t capacity) {
  EngineConfig cfg;
  cfg.capacity = capacity;
  return cfg;
}

PageBuffer filled(std::uint8_t v) {
  PageBuffer buf;
  buf.fill(v);
  return buf;
}

bool wait_until(const std::function<bool()>& pred,
                std::chrono::milliseconds deadline = std::chrono::milliseconds(2000)) {
  auto until = std::chrono::steady_clock::now() + deadline;
  while (std::chrono::steady_clock::now() < until) {
    if (pred()) return true;
    std::this_thread::sleep_for(std::chrono::milliseconds(1));
  }
  return pred();
}

}  // namespace

TEST_CASE("region registration validates sizes and issues distinct handles") {
  auto store = std::make_shared<LocalBackend>();
  MonitorEngine engine(sync_config(4), store);

  auto r1 = engine.register_region(8192, [](const PageKey&, PageBuffer&) {});
  auto r2 = engine.register_region(4096, [](const PageKey&, PageBuffer&) {});
  CHECK(r1 != r2);

  CHECK_THROWS_AS(engine.register_region(4095, [](const PageKey&, PageBuffer&) {}),
                  ContractViolation);
  CHECK_THROWS_AS(engine.register_region(0, [](const PageKey&, PageBuffer&) {}),
                  ContractViolation);

  // 8192 bytes = two page slots; the third page is out of range
  CHECK_NOTHROW(engine.handle_fault(FaultEvent{PageKey{r1, 0}, FaultKind::Read, 1}));
  CHECK_NOTHROW(engine.handle_fault(FaultEvent{PageKey{r1, 4096}, FaultKind::Read, 2}));
  CHECK_THROWS_AS(engine.handle_fault(FaultEvent{PageKey{r1, 8192}, FaultKind::Read, 3}),
                  ContractViolation);
}

TEST_CASE("fault event validation") {
  auto store = std::make_shared<LocalBackend>();
  MonitorEngine engine(sync_config(4), store);
  FaultDriver guest(engine, 16 * kPageSize);

  CHECK_THROWS_AS(engine.handle_fault(FaultEvent{PageKey{999, 0}, FaultKind::Read, 50}),
                  ContractViolation);
  CHECK_THROWS_AS(engine.handle_fault(FaultEvent{PageKey{guest.region(), 12}, FaultKind::Read, 50}),
                  ContractViolation);

  guest.fault(0);
  // resident pages do not fault
  CHECK_THROWS_AS(engine.handle_fault(FaultEvent{guest.key(0), FaultKind::Read, 50}),
                  ContractViolation);
  // seq must strictly increase
  engine.handle_fault(FaultEvent{guest.key(1), FaultKind::Read, 50});
  CHECK_THROWS_AS(engine.handle_fault(FaultEvent{guest.key(2), FaultKind::Read, 50}),
                  ContractViolation);
}

TEST_CASE("a first-ever write fault is served a zero page") {
  auto store = std::make_shared<LocalBackend>();
  MonitorEngine engine(sync_config(1), store);
  FaultDriver guest(engine, 16 * kPageSize);

  CHECK(guest.fault(0, FaultKind::Write).is_zero_fill());
  CHECK(engine.resident_count() == 1);
  CHECK(engine.counters().store_reads == 0);
}

TEST_CASE("capacity-1 eviction stores the victim before resolving the fault") {
  auto store = std::make_shared<LocalBackend>();
  MonitorEngine engine(sync_config(1), store);
  FaultDriver guest(engine, 16 * kPageSize);

  guest.fault(0, FaultKind::Write);
  guest.poke(0, 0xAA);
  guest.fault(1);  // evicts page 0

  CHECK(store->contains(guest.key(0)));
  CHECK(store->read(guest.key(0)) == filled(0xAA));
  CHECK_FALSE(guest.present(0));
  CHECK(engine.residency_of(guest.key(0)) == ResidencyState::InStore);

  // read fault on the evicted page copies the stored bytes back
  Resolution res = guest.fault(0);
  REQUIRE(res.is_copy());
  CHECK(res.bytes() == filled(0xAA));
  CHECK(engine.residency_of(guest.key(0)) == ResidencyState::Resident);
}

TEST_CASE("zero-marked pages resolve with no store traffic") {
  auto store = std::make_shared<LocalBackend>();
  EngineConfig cfg = sync_config(1);
  cfg.zero_page = true;
  MonitorEngine engine(cfg, store);
  FaultDriver guest(engine, 16 * kPageSize);

  guest.fault(0);           // zero fill, untouched
  guest.fault(1);           // evicts all-zero page 0 -> ZeroMarked
  CHECK(engine.residency_of(guest.key(0)) == ResidencyState::ZeroMarked);
  CHECK(store->page_count() == 0);

  EngineCounters before = engine.counters();
  Resolution res = guest.fault(2);  // evicts page 1 (also zero)... and
  CHECK(res.is_zero_fill());
  res = guest.fault(0);             // re-fault the zero-marked page
  CHECK(res.is_zero_fill());
  EngineCounters after = engine.counters();
  CHECK(after.store_reads == before.store_reads);
  CHECK(after.store_writes == 0);
  CHECK(after.zero_elisions >= 2);
}

TEST_CASE("zero-page elision removes a stale store copy") {
  auto store = std::make_shared<LocalBackend>();
  EngineConfig cfg = sync_config(1);
  cfg.zero_page = true;
  MonitorEngine engine(cfg, store);
  FaultDriver guest(engine, 16 * kPageSize);

  guest.fault(0, FaultKind::Write);
  guest.poke(0, 0x42);
  guest.fault(1);  // page 0 evicted with data -> InStore
  CHECK(store->contains(guest.key(0)));

  guest.fault(0);       // back in with its bytes
  guest.poke(0, 0x00);  // guest zeroes the page
  guest.fault(2);       // page 0 evicted again, now all-zero
  CHECK(engine.residency_of(guest.key(0)) == ResidencyState::ZeroMarked);
  CHECK_FALSE(store->contains(guest.key(0)));  // stale copy removed
}

TEST_CASE("write faults fetch stored bytes by default but zero-fill in paper mode") {
  SUBCASE("default mode preserves data on write faults") {
    auto store = std::make_shared<LocalBackend>();
    MonitorEngine engine(sync_config(1), store);
    FaultDriver guest(engine, 16 * kPageSize);

    guest.fault(0, FaultKind::Write);
    guest.poke(0, 0x77);
    guest.fault(1);  // evict page 0
    Resolution res = guest.fault(0, FaultKind::Write);
    REQUIRE(res.is_copy());
    CHECK(res.bytes() == filled(0x77));
  }

  SUBCASE("paper mode always serves writes a zero page") {
    auto store = std::make_shared<LocalBackend>();
    EngineConfig cfg = sync_config(1);
    cfg.paper_write_fault_mode = true;
    MonitorEngine engine(cfg, store);
    FaultDriver guest(engine, 16 * kPageSize);

    guest.fault(0, FaultKind::Write);
    guest.poke(0, 0x77);
    guest.fault(1);  // evict page 0 -> store holds 0x77
    EngineCounters before = engine.counters();
    Resolution res = guest.fault(0, FaultKind::Write);
    CHECK(res.is_zero_fill());
    CHECK(engine.counters().store_reads == before.store_reads);
    // the old copy stays in the store until overwritten or removed
    CHECK(store->read(guest.key(0)) == filled(0x77));

    // read faults still fetch in paper mode
    guest.poke(0, 0x11);
    guest.fault(2);  // evict page 0 (overwrites store copy)
    Resolution read_back = guest.fault(0, FaultKind::Read);
    REQUIRE(read_back.is_copy());
    CHECK(read_back.bytes() == filled(0x11));
  }
}

TEST_CASE("async eviction batches exactly at the threshold") {
  auto store = std::make_shared<LocalBackend>();
  EngineConfig cfg = sync_config(4);
  cfg.async_evict = true;
  cfg.evict_batch_threshold = 8;
  MonitorEngine engine(cfg, store);
  FaultDriver guest(engine, 64 * kPageSize);

  // fill capacity with dirty pages
  for (std::uint64_t p = 0; p < 4; ++p) {
    guest.fault(p, FaultKind::Write);
    guest.poke(p, static_cast<std::uint8_t>(p + 1));
  }
  // 7 more faults -> 7 evictions queued, still no store traffic
  for (std::uint64_t p = 4; p < 11; ++p) {
    guest.fault(p, FaultKind::Write);
    guest.poke(p, static_cast<std::uint8_t>(p + 1));
  }
  CHECK(engine.counters().multi_writes == 0);
  CHECK(engine.counters().store_writes == 0);
  CHECK(store->page_count() == 0);
  CHECK(engine.evict_queue_depth() == 7);

  // the 8th eviction trips the background flush: one multi_write of 8
  guest.fault(11, FaultKind::Write);
  guest.poke(11, 12);
  CHECK(wait_until([&] { return engine.counters().multi_writes == 1; }));
  CHECK(engine.counters().multi_write_pages == 8);
  CHECK(engine.counters().store_writes == 0);
  CHECK(engine.evict_queue_depth() == 0);
  CHECK(store->page_count() == 8);
  CHECK(engine.residency_of(guest.key(0)) == ResidencyState::InStore);
}

TEST_CASE("explicit flush writes the whole queue and empties it") {
  auto store = std::make_shared<LocalBackend>();
  EngineConfig cfg = sync_config(1);
  cfg.async_evict = true;
  cfg.evict_batch_threshold = 100;  // never auto-flush
  MonitorEngine engine(cfg, store);
  FaultDriver guest(engine, 64 * kPageSize);

  CHECK(engine.flush_evict_queue() == 0);
  CHECK(store->page_count() == 0);

  for (std::uint64_t p = 0; p < 4; ++p) {
    guest.fault(p, FaultKind::Write);
    guest.poke(p, static_cast<std::uint8_t>(p + 1));
  }
  CHECK(engine.evict_queue_depth() == 3);
  CHECK(engine.flush_evict_queue() == 3);
  CHECK(engine.evict_queue_depth() == 0);
  CHECK(engine.counters().multi_writes == 1);
  CHECK(store->page_count() == 3);
  CHECK(engine.residency_of(guest.key(0)) == ResidencyState::InStore);
}

TEST_CASE("a re-faulted page is served from the queue and skipped by the flush") {
  auto store = std::make_shared<LocalBackend>();
  EngineConfig cfg = sync_config(1);
  cfg.async_evict = true;
  cfg.evict_batch_threshold = 100;
  MonitorEngine engine(cfg, store);
  FaultDriver guest(engine, 64 * kPageSize);

  guest.fault(0, FaultKind::Write);
  guest.poke(0, 0xEE);
  guest.fault(1);  // page 0 queued
  CHECK(engine.evict_queue_depth() == 1);

  EngineCounters before = engine.counters();
  Resolution res = guest.fault(0);  // re-fault before flush
  REQUIRE(res.is_copy());
  CHECK(res.bytes() == filled(0xEE));
  CHECK(engine.counters().queue_hits == before.queue_hits + 1);
  CHECK(engine.counters().store_reads == before.store_reads);

  // page 1 is now queued (evicted by the re-fault); page 0 must not be
  CHECK(engine.flush_evict_queue() == 1);
  CHECK(store->contains(guest.key(1)));
  CHECK_FALSE(store->contains(guest.key(0)));
}

TEST_CASE("sync evict failure parks the page for the next flush") {
  auto store = std::make_shared<FlakyBackend>();
  MonitorEngine engine(sync_config(1), store);
  FaultDriver guest(engine, 16 * kPageSize);

  guest.fault(0, FaultKind::Write);
  guest.poke(0, 0xBB);
  store->fail_writes = true;
  guest.fault(1);  // eviction write fails; page 0 parks in the queue
  CHECK(engine.counters().evictions_parked == 1);
  CHECK(engine.residency_of(guest.key(0)) == ResidencyState::PendingEvict);
  CHECK(engine.evict_queue_depth() == 1);
  CHECK_FALSE(store->contains(guest.key(0)));

  store->fail_writes = false;
  CHECK(engine.flush_evict_queue() == 1);
  CHECK(engine.residency_of(guest.key(0)) == ResidencyState::InStore);
  CHECK(store->read(guest.key(0)) == filled(0xBB));
}

TEST_CASE("flush failure keeps the queue intact and surfaces the error") {
  auto store = std::make_shared<FlakyBackend>();
  EngineConfig cfg = sync_config(1);
  cfg.async_evict = true;
  cfg.evict_batch_threshold = 100;
  MonitorEngine engine(cfg, store);
  FaultDriver guest(engine, 64 * kPageSize);

  for (std::uint64_t p = 0; p < 3; ++p) {
    guest.fault(p, FaultKind::Write);
    guest.poke(p, 1);
  }
  store->fail_multi_writes = true;
  CHECK_THROWS_AS(engine.flush_evict_queue(), TransportError);
  CHECK(engine.evict_queue_depth() == 2);
  CHECK(store->page_count() == 0);

  store->fail_multi_writes = false;
  CHECK(engine.flush_evict_queue() == 2);
  CHECK(store->page_count() == 2);
}

TEST_CASE("a failed fault read leaves the page fetchable") {
  auto store = std::make_shared<FlakyBackend>();
  MonitorEngine engine(sync_config(2), store);
  FaultDriver guest(engine, 16 * kPageSize);

  guest.fault(0, FaultKind::Write);
  guest.poke(0, 0xCD);
  guest.fault(1);
  guest.fault(2);  // page 0 evicted

  store->fail_reads = true;
  CHECK_THROWS_AS(engine.handle_fault(FaultEvent{guest.key(0), FaultKind::Read, guest.next_seq()}),
                  TransportError);
  CHECK(engine.residency_of(guest.key(0)) == ResidencyState::InStore);

  store->fail_reads = false;
  Resolution res = guest.fault(0);
  REQUIRE(res.is_copy());
  CHECK(res.bytes() == filled(0xCD));
}

TEST_CASE("deregistration scrubs the store, cache and queue") {
  auto store = std::make_shared<LocalBackend>();
  EngineConfig cfg = sync_config(2);
  cfg.async_evict = true;
  cfg.evict_batch_threshold = 100;
  MonitorEngine engine(cfg, store);

  SUBCASE("store keys for the region are removed") {
    FaultDriver guest(engine, 64 * kPageSize);
    for (std::uint64_t p = 0; p < 4; ++p) {
      guest.fault(p, FaultKind::Write);
      guest.poke(p, static_cast<std::uint8_t>(1 + p));
    }
    engine.flush_evict_queue();
    CHECK(store->page_count() == 2);
    engine.deregister_region(guest.region());
    CHECK(store->page_count() == 0);
    CHECK(engine.resident_count() == 0);
    CHECK_THROWS_AS(engine.deregister_region(guest.region()), ContractViolation);
  }

  SUBCASE("pending evictions drain without reaching the store") {
    FaultDriver guest(engine, 64 * kPageSize);
    for (std::uint64_t p = 0; p < 4; ++p) {
      guest.fault(p, FaultKind::Write);
      guest.poke(p, static_cast<std::uint8_t>(1 + p));
    }
    CHECK(engine.evict_queue_depth() == 2);
    engine.deregister_region(guest.region());
    CHECK(engine.evict_queue_depth() == 0);
    CHECK(store->page_count() == 0);
    CHECK(engine.flush_evict_queue() == 0);
  }
}

TEST_CASE("inline prefetch pulls the next ascending page into the cache") {
  auto store = std::make_shared<LocalBackend>();
  EngineConfig cfg = sync_config(2);
  cfg.page_cache = true;
  cfg.prefetch = true;
  MonitorEngine engine(cfg, store);
  FaultDriver guest(engine, 64 * kPageSize);

  // park pages 1..4 in the store with recognizable bytes
  for (std::uint64_t p = 1; p <= 4; ++p) {
    guest.fault(p, FaultKind::Write);
    guest.poke(p, static_cast<std::uint8_t>(p));
    guest.fault(p + 10, FaultKind::Write);  // force eviction of p
    guest.poke(p + 10, 0xFF);
  }
  guest.fault(20, FaultKind::Write);  // push the stragglers out too
  guest.fault(21, FaultKind::Write);
  for (std::uint64_t p : {1, 2, 3, 4}) {
    CHECK(engine.residency_of(guest.key(p)) == ResidencyState::InStore);
  }

  SUBCASE("ascending adjacent faults trigger a one-page prefetch") {
    EngineCounters before = engine.counters();
    guest.fault(1);
    guest.fault(2);  // adjacent to the previous fault -> prefetch page 3
    auto log = engine.prefetch_log();
    REQUIRE(engine.counters().prefetches_issued == before.prefetches_issued + 1);
    CHECK(log.back().key == guest.key(3));

    // the prefetched page is a cache hit: no demanded store read (the one
    // read that does happen is the chained prefetch of page 4)
    EngineCounters mid = engine.counters();
    std::size_t demanded_reads = engine.stats_snapshot().count(Section::ReadPage);
    Resolution res = guest.fault(3);
    REQUIRE(res.is_copy());
    CHECK(res.bytes() == filled(3));
    CHECK(engine.counters().cache_hits == mid.cache_hits + 1);
    CHECK(engine.stats_snapshot().count(Section::ReadPage) == demanded_reads);
    CHECK(engine.prefetch_log().back().key == guest.key(4));
  }

  SUBCASE("non-adjacent faults do not prefetch") {
    guest.fault(1);
    guest.fault(4);
    CHECK(engine.counters().prefetches_issued == 0);
  }

  SUBCASE("descending adjacency does not prefetch") {
    guest.fault(2);
    guest.fault(1);
    CHECK(engine.counters().prefetches_issued == 0);
  }
}

TEST_CASE("async prefetch lands in the cache and faults wait for it") {
  auto store = std::make_shared<LocalBackend>();
  EngineConfig cfg = sync_config(2);
  cfg.page_cache = true;
  cfg.prefetch = true;
  cfg.async_prefetch = true;
  MonitorEngine engine(cfg, store);
  FaultDriver guest(engine, 64 * kPageSize);

  for (std::uint64_t p = 1; p <= 3; ++p) {
    guest.fault(p, FaultKind::Write);
    guest.poke(p, static_cast<std::uint8_t>(p));
    guest.fault(p + 10, FaultKind::Write);
    guest.poke(p + 10, 0xFF);
  }

  guest.fault(1);
  guest.fault(2);  // queues an async prefetch of page 3
  CHECK(wait_until([&] { return engine.counters().prefetches_issued == 1; }));
  // once the worker has drained the request, page 3 sits in the cache
  CHECK(wait_until([&] { return engine.counters().multi_reads == 1; }));

  Resolution res = guest.fault(3);
  REQUIRE(res.is_copy());
  CHECK(res.bytes() == filled(3));
  CHECK(engine.counters().cache_hits == 1);
}

TEST_CASE("a fault racing its own async prefetch still gets the right bytes") {
  auto store = std::make_shared<LocalBackend>();
  EngineConfig cfg = sync_config(2);
  cfg.page_cache = true;
  cfg.prefetch = true;
  cfg.async_prefetch = true;
  MonitorEngine engine(cfg, store);
  FaultDriver guest(engine, 64 * kPageSize);

  for (std::uint64_t p = 1; p <= 3; ++p) {
    guest.fault(p, FaultKind::Write);
    guest.poke(p, static_cast<std::uint8_t>(p));
    guest.fault(p + 10, FaultKind::Write);
    guest.poke(p + 10, 0xFF);
  }

  guest.fault(1);
  guest.fault(2);
  // immediately fault the prefetched page: depending on worker timing this
  // is a steal of the queued request, a wait on the in-flight read, or a
  // cache hit; the bytes must be right in every case
  Resolution res = guest.fault(3);
  REQUIRE(res.is_copy());
  CHECK(res.bytes() == filled(3));
  CHECK(engine.residency_of(guest.key(3)) == ResidencyState::Resident);
}

TEST_CASE("a stalled prefetch cannot resurrect superseded store bytes") {
  auto store = std::make_shared<GatedBackend>();
  EngineConfig cfg = sync_config(2);
  cfg.page_cache = true;
  cfg.prefetch = true;
  cfg.async_prefetch = true;
  cfg.async_evict = true;
  cfg.evict_batch_threshold = 100;
  MonitorEngine engine(cfg, store);
  FaultDriver guest(engine, 64 * kPageSize);

  // pages 1..3 in the store with their original bytes
  for (std::uint64_t p = 1; p <= 3; ++p) {
    guest.fault(p, FaultKind::Write);
    guest.poke(p, static_cast<std::uint8_t>(p));
    guest.fault(p + 10, FaultKind::Write);
    guest.poke(p + 10, 0xFF);
  }
  guest.fault(20, FaultKind::Write);  // push the stragglers out too
  guest.fault(21, FaultKind::Write);
  engine.flush_evict_queue();
  REQUIRE(engine.residency_of(guest.key(3)) == ResidencyState::InStore);

  guest.fault(1);
  guest.fault(2);  // issues the async prefetch of page 3
  CHECK(wait_until([&] { return store->entered.load(); }));  // worker is mid-read, held

  // While the worker is stuck: fault page 3 (budget expires, demanded read),
  // rewrite it, evict it and flush, so the store now holds new bytes.
  Resolution res = guest.fault(3);  // evicts page 1
  REQUIRE(res.is_copy());
  CHECK(res.bytes() == filled(3));
  guest.poke(3, 0xA7);
  guest.fault(4, FaultKind::Write);  // evicts page 2
  guest.fault(5, FaultKind::Write);  // evicts page 3 with its new bytes
  engine.flush_evict_queue();
  CHECK(engine.residency_of(guest.key(3)) == ResidencyState::InStore);

  store->hold = false;  // let the stale prefetch complete and try to commit

  // the stale bytes must not be served: fault page 3 again
  CHECK(wait_until([&] { return engine.counters().multi_reads == 1; }));
  Resolution again = guest.fault(3);
  REQUIRE(again.is_copy());
  CHECK(again.bytes() == filled(0xA7));
}

TEST_CASE("per-fault sections count and nest") {
  auto store = std::make_shared<LocalBackend>();
  EngineConfig cfg = sync_config(2);
  MonitorEngine engine(cfg, store);
  FaultDriver guest(engine, 64 * kPageSize);

  for (std::uint64_t p = 0; p < 6; ++p) {
    guest.fault(p, FaultKind::Write);
    guest.poke(p, static_cast<std::uint8_t>(p + 1));
  }
  // re-fault the four evicted pages: four copy-path faults
  for (std::uint64_t p = 0; p < 4; ++p) guest.fault(p);

  SectionStats stats = engine.stats_snapshot();
  CHECK(stats.count(Section::HandleUserfaultZero) == 6);
  CHECK(stats.count(Section::HandleUserfaultCopyEvict) == 4);
  CHECK(stats.count(Section::ReadFromExternram) == 4);
  CHECK(stats.count(Section::ReadPage) == 4);
  CHECK(stats.median_us(Section::HandleUserfaultZero) >= stats.median_us(Section::UffdZeropage));

  for (const FaultTrace& trace : engine.fault_traces_snapshot()) {
    if (trace.zero_path) {
      CHECK_FALSE(trace.duration_ns(Section::ReadFromExternram).has_value());
      continue;
    }
    auto whole = trace.duration_ns(Section::HandleUserfaultCopyEvict);
    auto read_from = trace.duration_ns(Section::ReadFromExternram);
    auto read_via = trace.duration_ns(Section::ReadViaPageCache);
    REQUIRE(whole.has_value());
    REQUIRE(read_from.has_value());
    REQUIRE(read_via.has_value());
    CHECK(*whole >= *read_from);
    CHECK(*read_from >= *read_via);
    if (auto evict = trace.duration_ns(Section::EvictToExternram)) {
      CHECK(*read_from >= *evict);
      if (auto write = trace.duration_ns(Section::WritePage)) CHECK(*evict >= *write);
    }
  }
}

TEST_CASE("counters track path decisions") {
  auto store = std::make_shared<LocalBackend>();
  MonitorEngine engine(sync_config(2), store);
  FaultDriver guest(engine, 64 * kPageSize);

  guest.fault(0);
  guest.fault(1);
  EngineCounters c = engine.counters();
  CHECK(c.faults_total == 2);
  CHECK(c.faults_zero_path == 2);
  CHECK(c.faults_copy_path == 0);
  CHECK(c.store_reads == 0);

  guest.poke(0, 1);
  guest.fault(2);  // evict 0
  guest.fault(0);  // copy back
  c = engine.counters();
  CHECK(c.faults_copy_path == 1);
  CHECK(c.evictions >= 2);
  CHECK(c.store_reads == 1);
}

TEST_CASE("engine config documents parse and round-trip") {
  std::istringstream in(
      "# engine tuning\n"
      "capacity = 512\n"
      "page_cache_capacity = 256\n"
      "evict_batch_threshold = 16\n"
      "\n"
      "page_cache = true\n"
      "zero_page = on\n"
      "prefetch = 1\n"
      "async_evict = false\n"
      "paper_write_fault_mode = false\n"
      "affinity.flusher = 2\n");
  EngineConfig cfg = EngineConfig::from_kv_text(in);
  CHECK(cfg.capacity == 512);
  CHECK(cfg.page_cache_capacity == 256);
  CHECK(cfg.evict_batch_threshold == 16);
  CHECK(cfg.page_cache);
  CHECK(cfg.zero_page);
  CHECK(cfg.prefetch);
  CHECK_FALSE(cfg.async_evict);
  REQUIRE(cfg.affinity_map.has_value());
  CHECK(cfg.affinity_map->flusher == 2);

  std::istringstream again(cfg.to_kv_text());
  EngineConfig back = EngineConfig::from_kv_text(again);
  CHECK(back.capacity == cfg.capacity);
  CHECK(back.prefetch == cfg.prefetch);
  CHECK(back.affinity_map->flusher == cfg.affinity_map->flusher);
}

TEST_CASE("engine config rejects bad documents") {
  auto parse = [](const char* text) {
    std::istringstream in(text);
    return EngineConfig::from_kv_text(in);
  };
  CHECK_THROWS_AS(parse("capacity = 0\n"), ContractViolation);
  CHECK_THROWS_AS(parse("prefetch = true\n"), ContractViolation);  // needs page_cache
  CHECK_THROWS_AS(parse("bogus_key = 1\n"), ParseError);
  CHECK_THROWS_AS(parse("capacity 512\n"), ParseError);
  CHECK_THROWS_AS(parse("capacity = twelve\n"), ParseError);
}

TEST_CASE("shutdown flushes the queue") {
  auto store = std::make_shared<LocalBackend>();
  {
    EngineConfig cfg = sync_config(1);
    cfg.async_evict = true;
    cfg.evict_batch_threshold = 100;
    MonitorEngine engine(cfg, store);
    FaultDriver guest(engine, 64 * kPageSize);
    for (std::uint64_t p = 0; p < 3; ++p) {
      guest.fault(p, FaultKind::Write);
      guest.poke(p, 1);
    }
    CHECK(engine.evict_queue_depth() == 2);
  }
  CHECK(store->page_count() == 2);
}

TEST_CASE("concurrent faults from several threads keep per-key order") {
  auto store = std::make_shared<LocalBackend>();
  EngineConfig cfg = sync_config(8);
  cfg.page_cache = true;
  cfg.zero_page = true;
  cfg.prefetch = true;
  cfg.async_evict = true;
  cfg.async_prefetch = true;
  cfg.async_reinit = true;
  MonitorEngine engine(cfg, store);

  // One shared region; each thread faults its own page set, seq handed out
  // under a mutex to keep the engine's strict-increase contract.
  std::mutex guest_mu;
  std::uint64_t seq = 1;
  std::unordered_map<PageKey, PageBuffer, PageKeyHash> memory;
  auto region = engine.register_region(1024 * kPageSize,
                                       [&](const PageKey& key, PageBuffer& out) {
                                         out = memory.at(key);
                                         memory.erase(key);
                                       });

  auto worker = [&](std::uint64_t base) {
    for (std::uint64_t round = 0; round < 40; ++round) {
      for (std::uint64_t p = base; p < base + 4; ++p) {
        std::lock_guard lk(guest_mu);
        PageKey k{region, p * kPageSize};
        if (memory.count(k)) continue;  // still resident
        Resolution res = engine.handle_fault(FaultEvent{k, FaultKind::Write, seq++});
        PageBuffer buf = res.is_copy() ? res.bytes() : PageBuffer{};
        buf[0] = static_cast<std::uint8_t>(p);
        memory[k] = buf;
      }
    }
  };

  std::vector<std::thread> threads;
  for (int t = 0; t < 4; ++t) threads.emplace_back(worker, 100 + 8 * t);
  for (auto& t : threads) t.join();
  engine.flush_evict_queue();
  CHECK(engine.resident_count() <= 8);
  CHECK(engine.counters().faults_total >= 16);
}
