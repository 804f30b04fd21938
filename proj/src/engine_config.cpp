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

#include "upage/engine_config.hpp"

#include <charconv>
#include <istream>
#include <sstream>

#include "upage/errors.hpp"

namespace upage {

namespace {

std::string trim(std::string_view s) {
  std::size_t b = s.find_first_not_of(" \t");
  if (b == std::string_view::npos) return {};
  std::size_t e = s.find_last_not_of(" \t");
  return std::string(s.substr(b, e - b + 1));
}

std::size_t parse_count(const std::string& v, std::size_t line) {
  std::size_t out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw ParseError("expected a non-negative integer, got '" + v + "'", line);
  }
  return out;
}

bool parse_bool(const std::string& v, std::size_t line) {
  if (v == "true" || v == "1" || v == "on") return true;
  if (v == "false" || v == "0" || v == "off") return false;
  throw ParseError("expected a boolean, got '" + v + "'", line);
}

}  // namespace

void EngineConfig::validate() const {
  if (capacity < 1) throw ContractViolation("config: capacity must be >= 1");
  if (evict_batch_threshold < 1) {
    throw ContractViolation("config: evict_batch_threshold must be >= 1");
  }
  if (reinit_pool_size < 1) {
    throw ContractViolation("config: reinit_pool_size must be >= 1");
  }
  if (prefetch && !page_cache) {
    throw ContractViolation("config: prefetch requires page_cache (prefetched pages land in the cache)");
  }
  if (page_cache && page_cache_capacity < 1) {
    throw ContractViolation("config: page_cache_capacity must be >= 1 when page_cache is enabled");
  }
}

EngineConfig EngineConfig::from_kv_text(std::istream& in) {
  EngineConfig cfg;
  AffinityMap affinity;
  bool affinity_set = false;

  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string line = trim(raw);
    if (line.empty() || line[0] == '#') continue;
    std::size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw ParseError("expected 'key = value'", line_no);
    }
    std::string key = trim(std::string_view(line).substr(0, eq));
    std::string value = trim(std::string_view(line).substr(eq + 1));
    if (key.empty() || value.empty()) {
      throw ParseError("expected 'key = value'", line_no);
    }

    if (key == "capacity") cfg.capacity = parse_count(value, line_no);
    else if (key == "page_cache_capacity") cfg.page_cache_capacity = parse_count(value, line_no);
    else if (key == "evict_batch_threshold") cfg.evict_batch_threshold = parse_count(value, line_no);
    else if (key == "reinit_pool_size") cfg.reinit_pool_size = parse_count(value, line_no);
    else if (key == "page_cache") cfg.page_cache = parse_bool(value, line_no);
    else if (key == "zero_page") cfg.zero_page = parse_bool(value, line_no);
    else if (key == "prefetch") cfg.prefetch = parse_bool(value, line_no);
    else if (key == "async_evict") cfg.async_evict = parse_bool(value, line_no);
    else if (key == "async_prefetch") cfg.async_prefetch = parse_bool(value, line_no);
    else if (key == "cpu_affinity") cfg.cpu_affinity = parse_bool(value, line_no);
    else if (key == "async_reinit") cfg.async_reinit = parse_bool(value, line_no);
    else if (key == "paper_write_fault_mode") cfg.paper_write_fault_mode = parse_bool(value, line_no);
    else if (key == "affinity.flusher") { affinity.flusher = static_cast<int>(parse_count(value, line_no)); affinity_set = true; }
    else if (key == "affinity.prefetcher") { affinity.prefetcher = static_cast<int>(parse_count(value, line_no)); affinity_set = true; }
    else if (key == "affinity.reinit") { affinity.reinit = static_cast<int>(parse_count(value, line_no)); affinity_set = true; }
    else throw ParseError("unknown key '" + key + "'", line_no);
  }
  if (affinity_set) cfg.affinity_map = affinity;
  cfg.validate();
  return cfg;
}

std::string EngineConfig::to_kv_text() const {
  std::ostringstream out;
  auto b = [](bool v) { return v ? "true" : "false"; };
  out << "capacity = " << capacity << '\n'
      << "page_cache_capacity = " << page_cache_capacity << '\n'
      << "evict_batch_threshold = " << evict_batch_threshold << '\n'
      << "reinit_pool_size = " << reinit_pool_size << '\n'
      << "page_cache = " << b(page_cache) << '\n'
      << "zero_page = " << b(zero_page) << '\n'
      << "prefetch = " << b(prefetch) << '\n'
      << "async_evict = " << b(async_evict) << '\n'
      << "async_prefetch = " << b(async_prefetch) << '\n'
      << "cpu_affinity = " << b(cpu_affinity) << '\n'
      << "async_reinit = " << b(async_reinit) << '\n'
      << "paper_write_fault_mode = " << b(paper_write_fault_mode) << '\n';
  if (affinity_map) {
    if (affinity_map->flusher) out << "affinity.flusher = " << *affinity_map->flusher << '\n';
    if (affinity_map->prefetcher) out << "affinity.prefetcher = " << *affinity_map->prefetcher << '\n';
    if (affinity_map->reinit) out << "affinity.reinit = " << *affinity_map->reinit << '\n';
  }
  return out.str();
}

}  // namespace upage
