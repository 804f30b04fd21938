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

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "oracles.hpp"
#include "upage/bench.hpp"

using namespace upage;
using testing::PresenceSimulator;

namespace {

std::filesystem::path temp_dir(const char* tag) {
  auto dir = std::filesystem::temp_directory_path() /
             (std::string("upage_bench_test_") + tag + "_" + std::to_string(::getpid()));
  std::filesystem::remove_all(dir);
  return dir;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in);
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

}  // namespace

TEST_CASE("ladder levels enable flags cumulatively") {
  EngineConfig base;
  EngineConfig l0 = ladder_config(0, base);
  CHECK_FALSE(l0.page_cache);
  CHECK_FALSE(l0.async_reinit);

  EngineConfig l3 = ladder_config(3, base);
  CHECK(l3.page_cache);
  CHECK(l3.zero_page);
  CHECK(l3.prefetch);
  CHECK_FALSE(l3.async_evict);

  EngineConfig l7 = ladder_config(7, base);
  CHECK(l7.page_cache);
  CHECK(l7.zero_page);
  CHECK(l7.prefetch);
  CHECK(l7.async_evict);
  CHECK(l7.async_prefetch);
  CHECK(l7.cpu_affinity);
  CHECK(l7.async_reinit);

  CHECK_THROWS_AS(ladder_config(8, base), ContractViolation);
  CHECK_THROWS_AS(ladder_config(-1, base), ContractViolation);
}

TEST_CASE("gen_sequential sweeps pages in order as read-modify-write pairs") {
  AccessTrace t = gen_sequential(3, 1);
  REQUIRE(t.accesses.size() == 6);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(t.accesses[2 * i].kind == FaultKind::Read);
    CHECK(t.accesses[2 * i].addr == i * kPageSize);
    CHECK(t.accesses[2 * i + 1].kind == FaultKind::Write);
    CHECK(t.accesses[2 * i + 1].addr == i * kPageSize);
    CHECK(t.accesses[2 * i + 1].write_seed.has_value());
  }

  AccessTrace two = gen_sequential(3, 2);
  CHECK(two.accesses.size() == 12);
  CHECK(two.accesses[6].addr == 0);  // second sweep repeats the addresses
  // write seeds differ between sweeps so contents change
  CHECK(two.accesses[1].write_seed != two.accesses[7].write_seed);
}

TEST_CASE("first sweep faults everywhere, second sweep hits when capacity allows") {
  AccessTrace t = gen_sequential(3, 2);
  PresenceSimulator oracle(3);
  CHECK(oracle.count_faults(t) == 3);  // only first touches fault
}

TEST_CASE("gen_random is deterministic per seed") {
  AccessTrace a = gen_random(64, 2, 99);
  AccessTrace b = gen_random(64, 2, 99);
  AccessTrace c = gen_random(64, 2, 100);
  REQUIRE(a.accesses.size() == b.accesses.size());
  bool same = true;
  for (std::size_t i = 0; i < a.accesses.size(); ++i) {
    same = same && a.accesses[i].addr == b.accesses[i].addr &&
           a.accesses[i].write_seed == b.accesses[i].write_seed;
  }
  CHECK(same);

  bool differs = a.accesses.size() != c.accesses.size();
  for (std::size_t i = 0; !differs && i < a.accesses.size(); ++i) {
    differs = a.accesses[i].addr != c.accesses[i].addr;
  }
  CHECK(differs);
}

TEST_CASE("gen_random page frequencies pass a chi-square uniformity check") {
  const std::size_t n_pages = 97;
  const std::size_t draws = 500000;  // R,W pairs -> 1e6 accesses
  AccessTrace t = gen_random(n_pages, draws / n_pages + 1, 7);

  std::vector<std::uint64_t> counts(n_pages, 0);
  std::size_t used = 0;
  for (const Access& a : t.accesses) {
    if (a.kind != FaultKind::Read) continue;  // one count per R,W pair
    counts[a.addr / kPageSize]++;
    if (++used == draws) break;
  }
  REQUIRE(used == draws);

  double expected = static_cast<double>(draws) / static_cast<double>(n_pages);
  double chi2 = 0;
  for (std::uint64_t c : counts) {
    double d = static_cast<double>(c) - expected;
    chi2 += d * d / expected;
  }

  // Wilson-Hilferty approximation of the chi-square 99th percentile with
  // dof = n_pages - 1; z_0.99 = 2.326348.
  double dof = static_cast<double>(n_pages - 1);
  double h = 2.0 / (9.0 * dof);
  double crit = dof * std::pow(1.0 - h + 2.326348 * std::sqrt(h), 3.0);
  CHECK(chi2 < crit);
}

TEST_CASE("gen_zeros writes carry no seed") {
  AccessTrace t = gen_zeros(4, 1);
  REQUIRE(t.accesses.size() == 8);
  for (const Access& a : t.accesses) CHECK_FALSE(a.write_seed.has_value());
}

TEST_CASE("backend specs parse and describe") {
  BackendSpec local = BackendSpec::parse("local");
  CHECK(local.kind == BackendSpec::Kind::Local);

  BackendSpec mock = BackendSpec::parse("mock:30:2");
  CHECK(mock.kind == BackendSpec::Kind::Mock);
  CHECK(mock.mock.base.count() == 30);
  CHECK(mock.mock.marginal.count() == 2);
  CHECK(mock.describe() == "mock:30:2");

  BackendSpec mock_default = BackendSpec::parse("mock:45");
  CHECK(mock_default.mock.marginal.count() == 2);
  BackendSpec mock_tiny = BackendSpec::parse("mock:1");
  CHECK(mock_tiny.mock.marginal.count() == 1);  // capped at base

  BackendSpec mc = BackendSpec::parse("memcached:localhost:11211");
  CHECK(mc.kind == BackendSpec::Kind::Memcached);
  CHECK(mc.memcached.host == "localhost");
  CHECK(mc.memcached.port == 11211);

  CHECK_THROWS_AS(BackendSpec::parse("redis:1:2"), ContractViolation);
  CHECK_THROWS_AS(BackendSpec::parse("mock:abc"), ContractViolation);
  CHECK_THROWS_AS(BackendSpec::parse("memcached:hostonly"), ContractViolation);
}

TEST_CASE("run_ladder cells carry consistent counts") {
  BackendSpec backend;  // local
  BenchOptions options;
  options.pages = 64;
  options.iterations = 2;
  options.capacity = 16;
  options.trials = 2;
  options.seed = 5;

  BenchReport report =
      run_ladder({Workload::Sequential, Workload::Random}, {0, 2, 4, 7}, backend, options);
  REQUIRE(report.valid);
  REQUIRE(report.cells.size() == 8);

  for (const BenchCell& cell : report.cells) {
    AccessTrace trace = gen_workload(cell.workload, options.pages, options.iterations, options.seed);
    PresenceSimulator oracle(options.capacity);
    CHECK(cell.faults == oracle.count_faults(trace));
    CHECK(cell.faults + cell.hits == trace.accesses.size());

    // whole-fault section samples: one per fault per trial
    std::size_t whole_samples = cell.sections.count(Section::HandleUserfaultZero) +
                                cell.sections.count(Section::HandleUserfaultCopyEvict);
    CHECK(whole_samples == cell.faults * options.trials);
    CHECK(cell.mean_us > 0.0);
    CHECK(cell.min_trial_us <= cell.mean_us);
    CHECK(cell.mean_us <= cell.max_trial_us);
  }
}

TEST_CASE("all-zero workloads at level >= 2 never write the store") {
  BackendSpec backend;
  BenchOptions options;
  options.pages = 64;
  options.iterations = 2;
  options.capacity = 16;
  options.trials = 1;

  BenchReport report = run_ladder({Workload::AllZeros}, {2, 7}, backend, options);
  REQUIRE(report.valid);
  for (const BenchCell& cell : report.cells) {
    CHECK(cell.store_writes == 0);
    CHECK(cell.multi_writes == 0);
    CHECK(cell.store_removes == 0);
    CHECK(cell.zero_elisions > 0);
  }
}

TEST_CASE("csv export: headers, determinism, round-trip") {
  BackendSpec backend;
  BenchOptions options;
  options.pages = 32;
  options.iterations = 2;
  options.capacity = 8;
  options.trials = 1;

  auto dir = temp_dir("roundtrip");

  SUBCASE("empty report exports headers only") {
    BenchReport empty;
    export_csv(empty, dir);
    CHECK(slurp(dir / "ladder.csv") ==
          "workload,level,mean_us,faults,hits,store_reads,store_writes,multi_writes\n");
    CHECK(slurp(dir / "sections.csv") == "workload,level,section_label,sample_us\n");
  }

  SUBCASE("sections.csv has at least one whole-fault row per fault") {
    BenchReport report = run_ladder({Workload::Sequential}, {0}, backend, options);
    REQUIRE(report.valid);
    export_csv(report, dir);

    std::ifstream in(dir / "sections.csv");
    auto rows = parse_sections_csv(in);
    std::size_t handle_rows = 0;
    for (const SectionRow& row : rows) {
      if (row.section_label.rfind("HANDLE_", 0) == 0) ++handle_rows;
    }
    CHECK(handle_rows >= report.cells[0].faults);
  }

  SUBCASE("re-export is byte-identical and parses back to the report") {
    BenchReport report = run_ladder({Workload::Sequential, Workload::Random}, {0, 3}, backend,
                                    options);
    REQUIRE(report.valid);
    export_csv(report, dir);
    std::string ladder_once = slurp(dir / "ladder.csv");
    std::string sections_once = slurp(dir / "sections.csv");
    export_csv(report, dir);
    CHECK(slurp(dir / "ladder.csv") == ladder_once);
    CHECK(slurp(dir / "sections.csv") == sections_once);

    std::ifstream in(dir / "ladder.csv");
    auto rows = parse_ladder_csv(in);
    REQUIRE(rows.size() == report.cells.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const BenchCell& cell = report.cells[i];
      CHECK(rows[i].workload == workload_label(cell.workload));
      CHECK(rows[i].level == cell.level);
      CHECK(rows[i].mean_us == doctest::Approx(cell.mean_us).epsilon(1e-3));
      CHECK(rows[i].faults == cell.faults);
      CHECK(rows[i].hits == cell.hits);
      CHECK(rows[i].store_reads == cell.store_reads);
      CHECK(rows[i].store_writes == cell.store_writes);
      CHECK(rows[i].multi_writes == cell.multi_writes);
    }

    // the ladder means are recomputable from the exported samples
    std::ifstream sections_in(dir / "sections.csv");
    auto sample_rows = parse_sections_csv(sections_in);
    for (const BenchCell& cell : report.cells) {
      double sum = 0;
      std::size_t n = 0;
      for (const SectionRow& row : sample_rows) {
        if (row.workload == workload_label(cell.workload) && row.level == cell.level &&
            row.section_label.rfind("HANDLE_", 0) == 0) {
          sum += row.sample_us;
          ++n;
        }
      }
      REQUIRE(n > 0);
      CHECK(sum / static_cast<double>(n) == doctest::Approx(cell.mean_us).epsilon(0.01));
    }
  }

  std::filesystem::remove_all(dir);
}

TEST_CASE("invalid backend aborts the run with a flagged report") {
  BackendSpec backend = BackendSpec::parse("memcached:127.0.0.1:1");
  backend.memcached.max_retries = 0;
  backend.memcached.io_timeout = std::chrono::milliseconds(200);

  BenchOptions options;
  options.pages = 8;
  options.iterations = 1;
  options.capacity = 2;
  options.trials = 1;

  BenchReport report = run_ladder({Workload::Sequential}, {0}, backend, options);
  CHECK_FALSE(report.valid);
  CHECK_FALSE(report.error.empty());
}
