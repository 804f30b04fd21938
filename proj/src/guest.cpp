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

#include "upage/guest.hpp"

#include <cstring>

namespace upage {

std::uint64_t SimulatedGuest::add_region(std::uint64_t label, std::uint64_t size_bytes) {
  if (regions_.count(label)) {
    throw ContractViolation("guest: region label already registered");
  }
  Region region;
  region.size = size_bytes;
  // Engine region handles are issued by the engine; capture closes over the
  // label so victim bytes come from (and holes land in) the right shadow.
  region.engine_id = engine_.register_region(
      size_bytes, [this, label](const PageKey& key, PageBuffer& out) {
        Region& r = regions_.at(label);
        std::memcpy(out.data(), r.shadow.data() + key.page_addr, kPageSize);
        r.present[key.page_addr / kPageSize] = false;
      });
  region.shadow.assign(size_bytes, 0);
  std::size_t pages = size_bytes / kPageSize;
  region.present.assign(pages, false);
  region.materialized.assign(pages, false);
  auto [it, inserted] = regions_.emplace(label, std::move(region));
  return it->second.engine_id;
}

SimulatedGuest::Region& SimulatedGuest::region_for(const Access& access) {
  auto it = regions_.find(access.region_id);
  if (it == regions_.end()) {
    throw ContractViolation("guest: access to unregistered region " +
                            std::to_string(access.region_id) +
                            (access.line ? " (trace line " + std::to_string(access.line) + ")" : ""));
  }
  if (access.addr >= it->second.size) {
    throw ContractViolation("guest: address out of range" +
                            (access.line ? " (trace line " + std::to_string(access.line) + ")" : ""));
  }
  return it->second;
}

ApplyResult SimulatedGuest::apply_access(const Access& access) {
  Region& region = region_for(access);
  std::uint64_t page = access.addr / kPageSize;
  PageKey key = make_key(region.engine_id, access.addr);

  ApplyResult result;
  result.key = key;
  result.kind = access.kind;

  if (!region.present[page]) {
    FaultEvent event{key, access.kind, next_seq_++};
    Stopwatch sw;
    Resolution res = engine_.handle_fault(event);
    result.fault_ns = static_cast<std::uint64_t>(sw.elapsed().count());
    result.seq = event.seq;
    result.faulted = true;
    result.zero_fill = res.is_zero_fill();

    std::uint8_t* shadow_page = region.shadow.data() + key.page_addr;
    if (res.is_copy()) {
      std::memcpy(shadow_page, res.bytes().data(), kPageSize);
      region.materialized[page] = true;
    } else if (!region.materialized[page]) {
      // First materialization is genuinely zero; a zero fill for a page that
      // already held data (paper write mode) leaves the shadow's ground
      // truth alone.
      std::memset(shadow_page, 0, kPageSize);
      region.materialized[page] = true;
    }
    region.present[page] = true;
  }

  if (access.kind == FaultKind::Write) {
    fill_page(region.shadow.data() + key.page_addr, access.write_seed, key.page_addr);
  }
  return result;
}

std::vector<PageKey> SimulatedGuest::present_keys() const {
  std::vector<PageKey> keys;
  for (const auto& [label, region] : regions_) {
    for (std::size_t page = 0; page < region.present.size(); ++page) {
      if (region.present[page]) {
        keys.push_back(PageKey{region.engine_id, page * kPageSize});
      }
    }
  }
  return keys;
}

ReplayReport run_replay(SimulatedGuest& guest, MonitorEngine& engine, const AccessTrace& trace) {
  ReplayReport report;
  for (const Access& access : trace.accesses) {
    Stopwatch sw;
    ApplyResult r;
    try {
      r = guest.apply_access(access);
    } catch (const std::exception& e) {
      report.aborted = true;
      report.error = e.what();
      return report;
    }
    if (r.faulted) {
      ++report.faults;
      report.fault_ns.push_back(r.fault_ns);
      report.fault_log.push_back(r);
    } else {
      ++report.hits;
      report.hit_ns.push_back(static_cast<std::uint64_t>(sw.elapsed().count()));
    }
  }
  try {
    engine.flush_evict_queue();
  } catch (const std::exception& e) {
    report.aborted = true;
    report.error = e.what();
  }
  return report;
}

}  // namespace upage
