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

#include <cstdio>
#include <fstream>
#include <iostream>
#include <unordered_map>

#include <CLI11.hpp>

#include "upage/bench.hpp"
#include "upage/engine.hpp"
#include "upage/guest.hpp"
#include "upage/trace.hpp"

namespace {

using namespace upage;

struct CommonOpts {
  std::string backend = "local";
  std::size_t capacity = 1024;
  std::size_t batch = 8;
  std::size_t cache_pages = 1024;
  bool paper_write_mode = false;
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
  cmd->add_option("--backend", opts.backend,
                  "Store backend: local | mock:BASE_US[:MARGINAL_US] | memcached:HOST:PORT");
  cmd->add_option("--capacity", opts.capacity, "Resident-page bound")->check(CLI::PositiveNumber);
  cmd->add_option("--batch", opts.batch, "Eviction batch threshold")->check(CLI::PositiveNumber);
  cmd->add_option("--cache-pages", opts.cache_pages, "Page cache capacity in pages")
      ->check(CLI::PositiveNumber);
  cmd->add_flag("--paper-write-mode", opts.paper_write_mode,
                "Serve every write fault with a zero page (destructive on stored pages)");
}

int run_bench(const CommonOpts& common, const std::string& workload_name, std::size_t pages,
              std::size_t iters, int level, bool full_ladder, std::uint64_t seed,
              std::size_t trials, const std::string& out_dir) {
  BackendSpec backend = BackendSpec::parse(common.backend);

  BenchOptions options;
  options.pages = pages;
  options.iterations = iters;
  options.capacity = common.capacity;
  options.batch_threshold = common.batch;
  options.cache_pages = common.cache_pages;
  options.seed = seed;
  options.trials = trials;
  options.paper_write_fault_mode = common.paper_write_mode;

  std::vector<Workload> workloads;
  if (full_ladder && workload_name.empty()) {
    workloads = {Workload::Sequential, Workload::Random};
  } else {
    workloads = {workload_from_label(workload_name.empty() ? "seq" : workload_name)};
  }
  std::vector<int> levels;
  if (full_ladder) {
    for (int l = 0; l < kLadderLevels; ++l) levels.push_back(l);
  } else {
    levels.push_back(level);
  }

  BenchReport report = run_ladder(workloads, levels, backend, options);

  std::printf("backend=%s pages=%zu iters=%zu capacity=%zu batch=%zu trials=%zu\n",
              backend.describe().c_str(), options.pages, options.iterations, options.capacity,
              options.batch_threshold, options.trials);
  std::printf("%-6s %-5s %12s %10s %10s %12s %12s %12s\n", "work", "level", "mean_us", "faults",
              "hits", "store_reads", "store_writes", "multi_writes");
  for (const BenchCell& cell : report.cells) {
    std::printf("%-6s %-5d %12.3f %10llu %10llu %12llu %12llu %12llu\n",
                workload_label(cell.workload).c_str(), cell.level, cell.mean_us,
                static_cast<unsigned long long>(cell.faults),
                static_cast<unsigned long long>(cell.hits),
                static_cast<unsigned long long>(cell.store_reads),
                static_cast<unsigned long long>(cell.store_writes),
                static_cast<unsigned long long>(cell.multi_writes));
  }

  if (!out_dir.empty()) {
    export_csv(report, out_dir);
    std::printf("wrote %s/ladder.csv and %s/sections.csv\n", out_dir.c_str(), out_dir.c_str());
  }

  if (!report.valid) {
    std::fprintf(stderr, "error: report invalid: %s\n", report.error.c_str());
    return 1;
  }
  return 0;
}

int run_replay_cmd(const CommonOpts& common, const std::string& trace_path, int level,
                   const std::string& out_dir) {
  std::ifstream in(trace_path);
  if (!in) {
    std::fprintf(stderr, "error: cannot open trace file '%s'\n", trace_path.c_str());
    return 1;
  }
  AccessTrace trace = parse_trace(in);
  if (trace.accesses.empty()) {
    std::fprintf(stderr, "error: trace '%s' contains no accesses\n", trace_path.c_str());
    return 1;
  }

  EngineConfig base;
  base.capacity = common.capacity;
  base.page_cache_capacity = common.cache_pages;
  base.evict_batch_threshold = common.batch;
  base.paper_write_fault_mode = common.paper_write_mode;

  BackendSpec backend = BackendSpec::parse(common.backend);
  MonitorEngine engine(ladder_config(level, base), backend.make());
  SimulatedGuest guest(engine);

  // Regions sized to cover the highest address each label touches.
  std::unordered_map<std::uint64_t, std::uint64_t> max_addr;
  for (const Access& a : trace.accesses) {
    auto [it, fresh] = max_addr.try_emplace(a.region_id, a.addr);
    if (!fresh) it->second = std::max(it->second, a.addr);
  }
  for (const auto& [label, addr] : max_addr) {
    guest.add_region(label, (addr / kPageSize + 1) * kPageSize);
  }

  ReplayReport rr = run_replay(guest, engine, trace);
  EngineCounters c = engine.counters();
  std::printf("accesses=%zu faults=%llu hits=%llu mean_fault_us=%.3f\n", trace.accesses.size(),
              static_cast<unsigned long long>(rr.faults), static_cast<unsigned long long>(rr.hits),
              rr.mean_fault_us());
  std::printf("store_reads=%llu store_writes=%llu multi_writes=%llu store_removes=%llu "
              "cache_hits=%llu zero_elisions=%llu\n",
              static_cast<unsigned long long>(c.store_reads),
              static_cast<unsigned long long>(c.store_writes),
              static_cast<unsigned long long>(c.multi_writes),
              static_cast<unsigned long long>(c.store_removes),
              static_cast<unsigned long long>(c.cache_hits),
              static_cast<unsigned long long>(c.zero_elisions));

  if (!out_dir.empty()) {
    BenchReport report;
    BenchCell cell;
    cell.workload = Workload::Sequential;  // replay rows are labeled by level only
    cell.level = level;
    cell.mean_us = rr.mean_fault_us();
    cell.faults = rr.faults;
    cell.hits = rr.hits;
    cell.store_reads = c.store_reads;
    cell.store_writes = c.store_writes;
    cell.multi_writes = c.multi_writes;
    cell.sections = engine.stats_snapshot();
    report.cells.push_back(cell);
    export_csv(report, out_dir);
    std::printf("wrote %s/ladder.csv and %s/sections.csv\n", out_dir.c_str(), out_dir.c_str());
  }

  if (rr.aborted) {
    std::fprintf(stderr, "error: replay aborted: %s\n", rr.error.c_str());
    return 1;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"upage: user-space remote-memory pager benchmark harness"};
  app.require_subcommand(1);

  CommonOpts bench_common;
  std::string workload;
  std::size_t pages = 4096;
  std::size_t iters = 4;
  int level = 0;
  bool full_ladder = false;
  std::uint64_t seed = 1;
  std::size_t trials = 3;
  std::string out_dir;

  CLI::App* bench = app.add_subcommand("bench", "Run the optimization-ladder micro-benchmark");
  bench->add_option("--workload", workload, "seq | rand | zeros (ladder default: seq and rand)")
      ->check(CLI::IsMember({"seq", "rand", "zeros"}));
  bench->add_option("--pages", pages, "Region size in pages")->check(CLI::PositiveNumber);
  bench->add_option("--iters", iters, "Sweeps over the region")->check(CLI::PositiveNumber);
  auto* level_opt = bench->add_option("--level", level, "Single ladder level 0..7")
                        ->check(CLI::Range(0, 7));
  bench->add_flag("--ladder", full_ladder, "Run every level 0..7")->excludes(level_opt);
  bench->add_option("--seed", seed, "Random-workload seed");
  bench->add_option("--trials", trials, "Trials per cell")->check(CLI::PositiveNumber);
  bench->add_option("--out", out_dir, "Directory for ladder.csv / sections.csv");
  add_common(bench, bench_common);

  CommonOpts replay_common;
  std::string trace_path;
  int replay_level = 0;
  std::string replay_out;

  CLI::App* replay = app.add_subcommand("replay", "Replay a trace file through the engine");
  replay->add_option("--trace", trace_path, "Trace file")->required()->check(CLI::ExistingFile);
  replay->add_option("--level", replay_level, "Ladder level 0..7")->check(CLI::Range(0, 7));
  replay->add_option("--out", replay_out, "Directory for CSV export");
  add_common(replay, replay_common);

  CLI11_PARSE(app, argc, argv);

  try {
    if (bench->parsed()) {
      return run_bench(bench_common, workload, pages, iters, level, full_ladder, seed, trials,
                       out_dir);
    }
    return run_replay_cmd(replay_common, trace_path, replay_level, replay_out);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
