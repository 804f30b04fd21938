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

#include "upage/trace.hpp"

#include <charconv>
#include <cstring>
#include <istream>
#include <sstream>
#include <string>

#include "upage/errors.hpp"

namespace upage {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t parse_u64(const std::string& tok, int base, const char* what, std::size_t line) {
  std::uint64_t out = 0;
  const char* first = tok.data();
  const char* last = tok.data() + tok.size();
  if (base == 16) {
    if (tok.size() < 3 || tok[0] != '0' || (tok[1] != 'x' && tok[1] != 'X')) {
      throw ParseError(std::string("expected 0x-prefixed hex ") + what + ", got '" + tok + "'", line);
    }
    first += 2;
  }
  auto [ptr, ec] = std::from_chars(first, last, out, base);
  if (ec != std::errc() || ptr != last) {
    throw ParseError(std::string("bad ") + what + " '" + tok + "'", line);
  }
  return out;
}

}  // namespace

std::uint8_t fill_byte(std::uint64_t seed, std::uint64_t page_addr, std::uint64_t j) {
  return static_cast<std::uint8_t>(
      splitmix64(seed * 0x9e3779b97f4a7c15ULL ^ page_addr * 0xc2b2ae3d27d4eb4fULL ^ j));
}

void fill_page(std::uint8_t* page, std::optional<std::uint64_t> seed, std::uint64_t page_addr) {
  if (!seed) {
    std::memset(page, 0, kPageSize);
    return;
  }
  for (std::uint64_t j = 0; j < kPageSize; ++j) {
    page[j] = fill_byte(*seed, page_addr, j);
  }
}

AccessTrace parse_trace(std::istream& in) {
  AccessTrace trace;
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    std::size_t hash = raw.find('#');
    if (hash != std::string::npos) raw.erase(hash);

    std::istringstream fields(raw);
    std::string kind_tok;
    if (!(fields >> kind_tok)) continue;  // blank or comment-only line

    Access a;
    a.line = line_no;
    if (kind_tok == "R") {
      a.kind = FaultKind::Read;
    } else if (kind_tok == "W") {
      a.kind = FaultKind::Write;
    } else {
      throw ParseError("bad access kind '" + kind_tok + "' (expected R or W)", line_no);
    }

    std::string region_tok, addr_tok;
    if (!(fields >> region_tok) || !(fields >> addr_tok)) {
      throw ParseError("expected '<R|W> <region> <addr>'", line_no);
    }
    a.region_id = parse_u64(region_tok, 10, "region id", line_no);
    a.addr = parse_u64(addr_tok, 16, "address", line_no);

    std::string seed_tok;
    if (fields >> seed_tok) {
      if (a.kind != FaultKind::Write) {
        throw ParseError("write_seed given for a read access", line_no);
      }
      a.write_seed = parse_u64(seed_tok, 10, "write seed", line_no);
      std::string extra;
      if (fields >> extra) {
        throw ParseError("trailing token '" + extra + "'", line_no);
      }
    }
    trace.accesses.push_back(a);
  }
  return trace;
}

}  // namespace upage
