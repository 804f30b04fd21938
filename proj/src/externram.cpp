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

#include "upage/externram.hpp"

#include <thread>

namespace upage {

void LocalBackend::write(const PageKey& key, const PageBuffer& buf) {
  std::lock_guard lk(mu_);
  pages_[key] = buf;
}

std::optional<PageBuffer> LocalBackend::read(const PageKey& key) {
  std::lock_guard lk(mu_);
  auto it = pages_.find(key);
  if (it == pages_.end()) return std::nullopt;
  return it->second;
}

void LocalBackend::remove(const PageKey& key) {
  std::lock_guard lk(mu_);
  pages_.erase(key);
}

void LocalBackend::multi_write(std::span<const std::pair<PageKey, PageBuffer>> batch) {
  if (batch.empty()) throw ContractViolation("multi_write: empty batch");
  std::lock_guard lk(mu_);
  // applied under one lock hold, so a failure cannot leave a visible prefix
  for (const auto& [key, buf] : batch) pages_[key] = buf;
}

std::vector<std::optional<PageBuffer>> LocalBackend::multi_read(std::span<const PageKey> keys) {
  if (keys.empty()) throw ContractViolation("multi_read: empty key list");
  std::lock_guard lk(mu_);
  std::vector<std::optional<PageBuffer>> out;
  out.reserve(keys.size());
  for (const PageKey& key : keys) {
    auto it = pages_.find(key);
    out.push_back(it == pages_.end() ? std::nullopt : std::optional<PageBuffer>(it->second));
  }
  return out;
}

std::size_t LocalBackend::page_count() const {
  std::lock_guard lk(mu_);
  return pages_.size();
}

bool LocalBackend::contains(const PageKey& key) const {
  std::lock_guard lk(mu_);
  return pages_.count(key) > 0;
}

std::vector<PageKey> LocalBackend::keys() const {
  std::lock_guard lk(mu_);
  std::vector<PageKey> out;
  out.reserve(pages_.size());
  for (const auto& [key, buf] : pages_) out.push_back(key);
  return out;
}

MockBackend::MockBackend(MockLatencyConfig cfg) : cfg_(cfg) {
  if (cfg_.base.count() < 0 || cfg_.marginal.count() < 0) {
    throw ContractViolation("mock latency durations must be >= 0");
  }
  if (cfg_.marginal > cfg_.base) {
    throw ContractViolation("mock marginal latency must not exceed base");
  }
}

void MockBackend::charge(std::size_t items) {
  auto delay = cfg_.base + cfg_.marginal * static_cast<std::int64_t>(items - 1);
  charged_us_ += static_cast<std::uint64_t>(delay.count());
  // Wall-clock spin. Sleeping is useless at this resolution (timer slack is
  // close to a millisecond on some hosts) and sched_yield can trap to the
  // hypervisor and cost more than the whole delay.
  auto until = std::chrono::steady_clock::now() + delay;
  while (std::chrono::steady_clock::now() < until) {
  }
}

void MockBackend::write(const PageKey& key, const PageBuffer& buf) {
  std::lock_guard conn(write_conn_mu_);
  charge(1);
  inner_.write(key, buf);
}

std::optional<PageBuffer> MockBackend::read(const PageKey& key) {
  std::lock_guard conn(read_conn_mu_);
  charge(1);
  return inner_.read(key);
}

void MockBackend::remove(const PageKey& key) {
  std::lock_guard conn(write_conn_mu_);
  charge(1);
  inner_.remove(key);
}

void MockBackend::multi_write(std::span<const std::pair<PageKey, PageBuffer>> batch) {
  if (batch.empty()) throw ContractViolation("multi_write: empty batch");
  std::lock_guard conn(write_conn_mu_);
  charge(batch.size());
  inner_.multi_write(batch);
}

std::vector<std::optional<PageBuffer>> MockBackend::multi_read(std::span<const PageKey> keys) {
  if (keys.empty()) throw ContractViolation("multi_read: empty key list");
  std::lock_guard conn(read_conn_mu_);
  charge(keys.size());
  return inner_.multi_read(keys);
}

}  // namespace upage
