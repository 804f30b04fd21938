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

#include "upage/bench.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>

namespace upage {

EngineConfig ladder_config(int level, EngineConfig base) {
  if (level < 0 || level >= kLadderLevels) {
    throw ContractViolation("ladder level must be 0..7");
  }
  base.page_cache = level >= 1;
  base.zero_page = level >= 2;
  base.prefetch = level >= 3;
  base.async_evict = level >= 4;
  base.async_prefetch = level >= 5;
  base.cpu_affinity = level >= 6;
  base.async_reinit = level >= 7;
  base.validate();
  return base;
}

std::string workload_label(Workload w) {
  switch (w) {
    case Workload::Sequential: return "seq";
    case Workload::Random: return "rand";
    case Workload::AllZeros: return "zeros";
  }
  return "?";
}

Workload workload_from_label(const std::string& label) {
  if (label == "seq") return Workload::Sequential;
  if (label == "rand") return Workload::Random;
  if (label == "zeros") return Workload::AllZeros;
  throw ContractViolation("unknown workload '" + label + "'");
}

AccessTrace gen_sequential(std::size_t n_pages, std::size_t iterations) {
  if (n_pages < 1 || iterations < 1) {
    throw ContractViolation("gen_sequential: n_pages and iterations must be >= 1");
  }
  AccessTrace trace;
  trace.accesses.reserve(n_pages * iterations * 2);
  for (std::size_t iter = 0; iter < iterations; ++iter) {
    for (std::size_t page = 0; page < n_pages; ++page) {
      std::uint64_t addr = page * kPageSize;
      trace.accesses.push_back(Access{FaultKind::Read, kBenchRegion, addr, std::nullopt, 0});
      trace.accesses.push_back(Access{FaultKind::Write, kBenchRegion, addr,
                                      iter * n_pages + page + 1, 0});
    }
  }
  return trace;
}

AccessTrace gen_random(std::size_t n_pages, std::size_t iterations, std::uint64_t seed) {
  if (n_pages < 1 || iterations < 1) {
    throw ContractViolation("gen_random: n_pages and iterations must be >= 1");
  }
  AccessTrace trace;
  trace.accesses.reserve(n_pages * iterations * 2);
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < n_pages * iterations; ++i) {
    // multiply-shift keeps the draw uniform and identical on every platform
    std::uint64_t page = static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(rng()) * n_pages) >> 64);
    std::uint64_t addr = page * kPageSize;
    trace.accesses.push_back(Access{FaultKind::Read, kBenchRegion, addr, std::nullopt, 0});
    trace.accesses.push_back(Access{FaultKind::Write, kBenchRegion, addr, rng(), 0});
  }
  return trace;
}

AccessTrace gen_zeros(std::size_t n_pages, std::size_t iterations) {
  if (n_pages < 1 || iterations < 1) {
    throw ContractViolation("gen_zeros: n_pages and iterations must be >= 1");
  }
  AccessTrace trace;
  trace.accesses.reserve(n_pages * iterations * 2);
  for (std::size_t iter = 0; iter < iterations; ++iter) {
    for (std::size_t page = 0; page < n_pages; ++page) {
      std::uint64_t addr = page * kPageSize;
      trace.accesses.push_back(Access{FaultKind::Read, kBenchRegion, addr, std::nullopt, 0});
      trace.accesses.push_back(Access{FaultKind::Write, kBenchRegion, addr, std::nullopt, 0});
    }
  }
  return trace;
}

AccessTrace gen_workload(Workload w, std::size_t n_pages, std::size_t iterations,
                         std::uint64_t seed) {
  switch (w) {
    case Workload::Sequential: return gen_sequential(n_pages, iterations);
    case Workload::Random: return gen_random(n_pages, iterations, seed);
    case Workload::AllZeros: return gen_zeros(n_pages, iterations);
  }
  throw ContractViolation("unknown workload");
}

BackendSpec BackendSpec::parse(const std::string& text) {
  BackendSpec spec;
  if (text == "local") {
    spec.kind = Kind::Local;
    return spec;
  }
  if (text.rfind("mock", 0) == 0) {
    spec.kind = Kind::Mock;
    if (text == "mock") return spec;
    if (text[4] != ':') throw ContractViolation("bad backend spec '" + text + "'");
    std::string rest = text.substr(5);
    std::size_t colon = rest.find(':');
    auto parse_us = [&](const std::string& tok) {
      std::uint64_t v = 0;
      auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
      if (ec != std::errc() || p != tok.data() + tok.size()) {
        throw ContractViolation("bad microsecond value '" + tok + "' in backend spec");
      }
      return std::chrono::microseconds(v);
    };
    if (colon == std::string::npos) {
      spec.mock.base = parse_us(rest);
      spec.mock.marginal = std::min(std::chrono::microseconds(2), spec.mock.base);
    } else {
      spec.mock.base = parse_us(rest.substr(0, colon));
      spec.mock.marginal = parse_us(rest.substr(colon + 1));
    }
    return spec;
  }
  if (text.rfind("memcached:", 0) == 0) {
    spec.kind = Kind::Memcached;
    std::string rest = text.substr(10);
    std::size_t colon = rest.rfind(':');
    if (colon == std::string::npos || colon == 0 || colon + 1 == rest.size()) {
      throw ContractViolation("expected memcached:HOST:PORT, got '" + text + "'");
    }
    spec.memcached.host = rest.substr(0, colon);
    std::string port_tok = rest.substr(colon + 1);
    unsigned port = 0;
    auto [p, ec] = std::from_chars(port_tok.data(), port_tok.data() + port_tok.size(), port);
    if (ec != std::errc() || p != port_tok.data() + port_tok.size() || port == 0 || port > 65535) {
      throw ContractViolation("bad port '" + port_tok + "' in backend spec");
    }
    spec.memcached.port = static_cast<std::uint16_t>(port);
    return spec;
  }
  throw ContractViolation("unknown backend spec '" + text + "'");
}

std::shared_ptr<StoreBackend> BackendSpec::make() const {
  switch (kind) {
    case Kind::Local: return std::make_shared<LocalBackend>();
    case Kind::Mock: return std::make_shared<MockBackend>(mock);
    case Kind::Memcached: return std::make_shared<MemcachedBackend>(memcached);
  }
  throw ContractViolation("unknown backend kind");
}

std::string BackendSpec::describe() const {
  switch (kind) {
    case Kind::Local: return "local";
    case Kind::Mock:
      return "mock:" + std::to_string(mock.base.count()) + ":" +
             std::to_string(mock.marginal.count());
    case Kind::Memcached:
      return "memcached:" + memcached.host + ":" + std::to_string(memcached.port);
  }
  return "?";
}

BenchReport run_ladder(const std::vector<Workload>& workloads, const std::vector<int>& levels,
                       const BackendSpec& backend, const BenchOptions& options) {
  BenchReport report;
  if (options.trials < 1) throw ContractViolation("run_ladder: trials must be >= 1");

  EngineConfig base;
  base.capacity = options.capacity;
  base.page_cache_capacity = options.cache_pages;
  base.evict_batch_threshold = options.batch_threshold;
  base.paper_write_fault_mode = options.paper_write_fault_mode;

  for (Workload workload : workloads) {
    AccessTrace trace =
        gen_workload(workload, options.pages, options.iterations, options.seed);
    for (int level : levels) {
      BenchCell cell;
      cell.workload = workload;
      cell.level = level;
      double sum_means = 0.0;

      for (std::size_t trial = 0; trial < options.trials; ++trial) {
        try {
          auto store = backend.make();
          MonitorEngine engine(ladder_config(level, base), store);
          SimulatedGuest guest(engine);
          guest.add_region(kBenchRegion, options.pages * kPageSize);

          ReplayReport rr = run_replay(guest, engine, trace);
          if (rr.aborted) {
            report.valid = false;
            report.error = rr.error;
            report.cells.push_back(cell);
            return report;
          }

          SectionStats stats = engine.stats_snapshot();
          // Per-trial mean fault latency from the whole-fault sections, so
          // the exported samples reproduce it exactly.
          std::uint64_t n = stats.count(Section::HandleUserfaultZero) +
                            stats.count(Section::HandleUserfaultCopyEvict);
          double trial_mean = 0.0;
          if (n > 0) {
            trial_mean = (stats.mean_us(Section::HandleUserfaultZero) *
                              static_cast<double>(stats.count(Section::HandleUserfaultZero)) +
                          stats.mean_us(Section::HandleUserfaultCopyEvict) *
                              static_cast<double>(stats.count(Section::HandleUserfaultCopyEvict))) /
                         static_cast<double>(n);
          }
          sum_means += trial_mean;
          if (trial == 0) {
            cell.min_trial_us = cell.max_trial_us = trial_mean;
            cell.faults = rr.faults;
            cell.hits = rr.hits;
            EngineCounters c = engine.counters();
            cell.store_reads = c.store_reads;
            cell.store_writes = c.store_writes;
            cell.multi_writes = c.multi_writes;
            cell.store_removes = c.store_removes;
            cell.cache_hits = c.cache_hits;
            cell.evictions_flushed = c.evictions_flushed;
            cell.zero_elisions = c.zero_elisions;
          } else {
            cell.min_trial_us = std::min(cell.min_trial_us, trial_mean);
            cell.max_trial_us = std::max(cell.max_trial_us, trial_mean);
          }
          cell.sections.append(stats);
        } catch (const TransportError& e) {
          report.valid = false;
          report.error = e.what();
          report.cells.push_back(cell);
          return report;
        }
      }
      cell.mean_us = sum_means / static_cast<double>(options.trials);
      report.cells.push_back(cell);
    }
  }
  return report;
}

namespace {

std::string format_us(double us) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.3f", us);
  return buf;
}

}  // namespace

void export_csv(const BenchReport& report, const std::filesystem::path& destination) {
  std::filesystem::create_directories(destination);

  std::ofstream ladder(destination / "ladder.csv", std::ios::binary | std::ios::trunc);
  if (!ladder) throw std::runtime_error("cannot write " + (destination / "ladder.csv").string());
  ladder << "workload,level,mean_us,faults,hits,store_reads,store_writes,multi_writes\n";
  for (const BenchCell& cell : report.cells) {
    ladder << workload_label(cell.workload) << ',' << cell.level << ','
           << format_us(cell.mean_us) << ',' << cell.faults << ',' << cell.hits << ','
           << cell.store_reads << ',' << cell.store_writes << ',' << cell.multi_writes << '\n';
  }
  ladder.close();
  if (!ladder) throw std::runtime_error("write failed for ladder.csv");

  std::ofstream sections(destination / "sections.csv", std::ios::binary | std::ios::trunc);
  if (!sections) {
    throw std::runtime_error("cannot write " + (destination / "sections.csv").string());
  }
  sections << "workload,level,section_label,sample_us\n";
  for (const BenchCell& cell : report.cells) {
    for (std::size_t s = 0; s < kSectionCount; ++s) {
      for (std::uint64_t ns : cell.sections.samples_ns(static_cast<Section>(s))) {
        sections << workload_label(cell.workload) << ',' << cell.level << ','
                 << kSectionLabels[s] << ','
                 << format_us(static_cast<double>(ns) / 1000.0) << '\n';
      }
    }
  }
  sections.close();
  if (!sections) throw std::runtime_error("write failed for sections.csv");
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    std::size_t comma = line.find(',', start);
    if (comma == std::string::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
}

template <typename T>
T parse_num(const std::string& tok, std::size_t line_no) {
  if constexpr (std::is_floating_point_v<T>) {
    try {
      return static_cast<T>(std::stod(tok));
    } catch (const std::exception&) {
      throw ParseError("bad number '" + tok + "'", line_no);
    }
  } else {
    T v{};
    auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc() || p != tok.data() + tok.size()) {
      throw ParseError("bad number '" + tok + "'", line_no);
    }
    return v;
  }
}

}  // namespace

std::vector<LadderRow> parse_ladder_csv(std::istream& in) {
  std::vector<LadderRow> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line_no == 1) {
      if (line != "workload,level,mean_us,faults,hits,store_reads,store_writes,multi_writes") {
        throw ParseError("unexpected ladder.csv header", line_no);
      }
      continue;
    }
    if (line.empty()) continue;
    auto f = split_csv_line(line);
    if (f.size() != 8) throw ParseError("expected 8 columns", line_no);
    LadderRow row;
    row.workload = f[0];
    row.level = parse_num<int>(f[1], line_no);
    row.mean_us = parse_num<double>(f[2], line_no);
    row.faults = parse_num<std::uint64_t>(f[3], line_no);
    row.hits = parse_num<std::uint64_t>(f[4], line_no);
    row.store_reads = parse_num<std::uint64_t>(f[5], line_no);
    row.store_writes = parse_num<std::uint64_t>(f[6], line_no);
    row.multi_writes = parse_num<std::uint64_t>(f[7], line_no);
    rows.push_back(row);
  }
  return rows;
}

std::vector<SectionRow> parse_sections_csv(std::istream& in) {
  std::vector<SectionRow> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line_no == 1) {
      if (line != "workload,level,section_label,sample_us") {
        throw ParseError("unexpected sections.csv header", line_no);
      }
      continue;
    }
    if (line.empty()) continue;
    auto f = split_csv_line(line);
    if (f.size() != 4) throw ParseError("expected 4 columns", line_no);
    SectionRow row;
    row.workload = f[0];
    row.level = parse_num<int>(f[1], line_no);
    row.section_label = f[2];
    row.sample_us = parse_num<double>(f[3], line_no);
    rows.push_back(row);
  }
  return rows;
}

}  // namespace upage
