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

#include <atomic>
#include <chrono>
#include <cstdint>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "upage/errors.hpp"
#include "upage/page.hpp"

namespace upage {

/// The externram interface: a page store keyed by PageKey. Implementations
/// must provide read-your-writes per key, and multi operations that are
/// semantically equivalent to the corresponding singles applied in batch
/// order.
///
/// Instances accept concurrent calls from the fault path and the background
/// workers; serializing internally per connection is fine, deadlocking is not.
class StoreBackend {
 public:
  virtual ~StoreBackend() = default;

  virtual void write(const PageKey& key, const PageBuffer& buf) = 0;
  virtual std::optional<PageBuffer> read(const PageKey& key) = 0;

  /// Removing an absent key is a no-op.
  virtual void remove(const PageKey& key) = 0;

  /// Batch write; duplicate keys allowed, last occurrence wins. The batch
  /// must be non-empty.
  virtual void multi_write(std::span<const std::pair<PageKey, PageBuffer>> batch) = 0;

  /// Batch read; result position i is read(keys[i]). `keys` must be non-empty.
  virtual std::vector<std::optional<PageBuffer>> multi_read(std::span<const PageKey> keys) = 0;

  virtual std::string name() const = 0;
};

/// In-memory map backend local to the process.
class LocalBackend : public StoreBackend {
 public:
  void write(const PageKey& key, const PageBuffer& buf) override;
  std::optional<PageBuffer> read(const PageKey& key) override;
  void remove(const PageKey& key) override;
  void multi_write(std::span<const std::pair<PageKey, PageBuffer>> batch) override;
  std::vector<std::optional<PageBuffer>> multi_read(std::span<const PageKey> keys) override;
  std::string name() const override { return "local"; }

  // Introspection for tests and teardown checks.
  std::size_t page_count() const;
  bool contains(const PageKey& key) const;
  std::vector<PageKey> keys() const;

 private:
  mutable std::mutex mu_;
  std::unordered_map<PageKey, PageBuffer, PageKeyHash> pages_;
};

/// Latency model for MockBackend. A single operation costs `base`; a batch
/// of n costs base + (n-1) * marginal, so batching a flush beats issuing the
/// same pages as singles. marginal must not exceed base.
struct MockLatencyConfig {
  std::chrono::microseconds base{30};
  std::chrono::microseconds marginal{2};
};

/// Stand-in for a remote key-value store: a local map behind an injected,
/// precisely accounted latency. The injected delay is a calibrated spin (a
/// sleep is useless at this resolution). Like a client with one connection
/// per traffic direction, reads serialize on one lane and writes/removes on
/// another; that also bounds how many threads can be spinning delays at
/// once.
class MockBackend : public StoreBackend {
 public:
  explicit MockBackend(MockLatencyConfig cfg);

  void write(const PageKey& key, const PageBuffer& buf) override;
  std::optional<PageBuffer> read(const PageKey& key) override;
  void remove(const PageKey& key) override;
  void multi_write(std::span<const std::pair<PageKey, PageBuffer>> batch) override;
  std::vector<std::optional<PageBuffer>> multi_read(std::span<const PageKey> keys) override;
  std::string name() const override { return "mock"; }

  /// Total simulated delay charged so far, in microseconds. Exact: every
  /// operation adds base + (n-1) * marginal for its item count n.
  std::uint64_t charged_micros() const noexcept { return charged_us_.load(); }

  const MockLatencyConfig& latency() const noexcept { return cfg_; }
  LocalBackend& inner() noexcept { return inner_; }

 private:
  void charge(std::size_t items);

  MockLatencyConfig cfg_;
  LocalBackend inner_;
  std::mutex read_conn_mu_;
  std::mutex write_conn_mu_;
  std::atomic<std::uint64_t> charged_us_{0};
};

}  // namespace upage
