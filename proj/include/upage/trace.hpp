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
#include <iosfwd>
#include <optional>
#include <vector>

#include "upage/page.hpp"

namespace upage {

/// One memory access in a trace. `region_id` here is the trace's own label,
/// mapped to an engine region handle at replay time. A write with no seed
/// stores zeros; with a seed it stores the deterministic fill below.
struct Access {
  FaultKind kind = FaultKind::Read;
  std::uint64_t region_id = 0;
  std::uint64_t addr = 0;
  std::optional<std::uint64_t> write_seed;
  std::size_t line = 0;  // source line, for replay-time error messages
};

struct AccessTrace {
  std::vector<Access> accesses;
};

/// Parses the text trace format:
///
///   <R|W> <region_id decimal> <addr hex with 0x> [write_seed decimal]
///
/// '#' starts a comment; blank lines are ignored. Malformed lines raise
/// ParseError with their line number. Addresses are only range-checked at
/// replay time.
AccessTrace parse_trace(std::istream& in);

/// Deterministic page fill: byte j of a page written with `seed` is the low
/// byte of a mix of (seed, page_addr, j). Pure, so a flat replay of the same
/// accesses lands on identical bytes.
std::uint8_t fill_byte(std::uint64_t seed, std::uint64_t page_addr, std::uint64_t j);

/// Fills a whole page: zeros when `seed` is absent, fill_byte otherwise.
void fill_page(std::uint8_t* page, std::optional<std::uint64_t> seed, std::uint64_t page_addr);

}  // namespace upage
