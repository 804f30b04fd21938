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
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "upage/engine.hpp"
#include "upage/guest.hpp"
#include "upage/memcached_client.hpp"
#include "upage/stats.hpp"
#include "upage/trace.hpp"

namespace upage {

/// Cumulative optimization ladder. Level n enables exactly the flags of all
/// levels <= n:
///   0 default, 1 +page_cache, 2 +zero_page, 3 +prefetch, 4 +async_evict,
///   5 +async_prefetch, 6 +cpu_affinity, 7 +async_reinit.
inline constexpr int kLadderLevels = 8;

/// Applies ladder level `level` (0..7) on top of `base` (capacities,
/// thresholds and the write-fault mode are taken from `base`).
EngineConfig ladder_config(int level, EngineConfig base);

enum class Workload { Sequential, Random, AllZeros };

std::string workload_label(Workload w);
Workload workload_from_label(const std::string& label);

// Benchmark traces use a single region under this trace label.
inline constexpr std::uint64_t kBenchRegion = 1;

/// Read-modify-write sweep: for every iteration, pages 0..n_pages-1 in
/// order, a Read then a Write per page. Write seeds vary per (iteration,
/// page) so page contents change across sweeps.
AccessTrace gen_sequential(std::size_t n_pages, std::size_t iterations);

/// n_pages * iterations read-modify-write pairs at uniformly drawn page
/// indices (mt19937_64 + multiply-shift mapping). Same seed, same trace.
AccessTrace gen_random(std::size_t n_pages, std::size_t iterations, std::uint64_t seed);

/// Sequential sweep whose writes carry no seed, so every page stays all
/// zeros end to end.
AccessTrace gen_zeros(std::size_t n_pages, std::size_t iterations);

AccessTrace gen_workload(Workload w, std::size_t n_pages, std::size_t iterations,
                         std::uint64_t seed);

/// Which store to run against. Parsed from the CLI form
/// "local" | "mock:BASE_US[:MARGINAL_US]" | "memcached:HOST:PORT".
/// An omitted mock marginal defaults to 2us, capped at the base.
struct BackendSpec {
  enum class Kind { Local, Mock, Memcached };
  Kind kind = Kind::Local;
  MockLatencyConfig mock;
  MemcachedConfig memcached;

  static BackendSpec parse(const std::string& text);
  std::shared_ptr<StoreBackend> make() const;
  std::string describe() const;
};

struct BenchOptions {
  std::size_t pages = 4096;  // 16 MiB region
  std::size_t iterations = 4;
  std::size_t capacity = 1024;
  std::size_t batch_threshold = 8;
  std::size_t cache_pages = 1024;
  std::uint64_t seed = 1;
  std::size_t trials = 3;
  bool paper_write_fault_mode = false;
};

/// One (workload, level) cell. mean_us is the mean over trials of the mean
/// whole-fault section latency, so it is recomputable from the exported
/// per-sample rows. Counts are from the first trial (replays are
/// deterministic, so trials agree on them).
struct BenchCell {
  Workload workload = Workload::Sequential;
  int level = 0;
  double mean_us = 0.0;
  double min_trial_us = 0.0;
  double max_trial_us = 0.0;
  std::uint64_t faults = 0;
  std::uint64_t hits = 0;
  std::uint64_t store_reads = 0;
  std::uint64_t store_writes = 0;
  std::uint64_t multi_writes = 0;
  std::uint64_t store_removes = 0;
  std::uint64_t cache_hits = 0;
  std::uint64_t evictions_flushed = 0;
  std::uint64_t zero_elisions = 0;
  SectionStats sections;  // merged across trials
};

struct BenchReport {
  std::vector<BenchCell> cells;
  bool valid = true;
  std::string error;
};

/// Runs the micro-benchmark grid: for every workload and level, `trials`
/// replays on a fresh engine/backend/guest triple, stats reset between
/// cells. A backend failure aborts the run and returns the partial report
/// with valid=false.
BenchReport run_ladder(const std::vector<Workload>& workloads, const std::vector<int>& levels,
                       const BackendSpec& backend, const BenchOptions& options);

/// Writes `ladder.csv` (one row per cell) and `sections.csv` (one row per
/// latency sample) under `destination`. Stable column order; re-exporting
/// the same report is byte-identical.
void export_csv(const BenchReport& report, const std::filesystem::path& destination);

// Parsed-back CSV rows, for round-trip checks and downstream tooling.
struct LadderRow {
  std::string workload;
  int level = 0;
  double mean_us = 0.0;
  std::uint64_t faults = 0;
  std::uint64_t hits = 0;
  std::uint64_t store_reads = 0;
  std::uint64_t store_writes = 0;
  std::uint64_t multi_writes = 0;
};

struct SectionRow {
  std::string workload;
  int level = 0;
  std::string section_label;
  double sample_us = 0.0;
};

std::vector<LadderRow> parse_ladder_csv(std::istream& in);
std::vector<SectionRow> parse_sections_csv(std::istream& in);

}  // namespace upage
