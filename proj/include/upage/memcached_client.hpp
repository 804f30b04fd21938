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

#include <chrono>
#include <cstdint>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "upage/externram.hpp"

namespace upage {

struct MemcachedConfig {
  std::string host = "127.0.0.1";
  std::uint16_t port = 11211;
  int max_retries = 3;  // reconnect-and-retry attempts per operation
  std::chrono::milliseconds io_timeout{5000};
};

/// Store key as it appears on the wire: lowercase hex region id, a colon,
/// lowercase hex page address (e.g. "7:2000").
std::string memcached_key(const PageKey& key);

/// Memcached text-protocol backend. Pages are stored as 4096-byte values
/// with flags 0 and no expiry:
///
///   write       -> set <key> 0 0 4096
///   read        -> get <key>
///   remove      -> delete <key>
///   multi_write -> pipelined set commands on one connection
///   multi_read  -> one get with all keys
///
/// Transport failures are retried up to max_retries with a reconnect between
/// attempts, then surfaced as TransportError. A multi_write that dies partway
/// through raises PartialWriteError carrying the length of the stored prefix.
/// One mutex serializes the connection; fault path and workers may call
/// concurrently.
class MemcachedBackend : public StoreBackend {
 public:
  explicit MemcachedBackend(MemcachedConfig cfg);
  ~MemcachedBackend() override;

  MemcachedBackend(const MemcachedBackend&) = delete;
  MemcachedBackend& operator=(const MemcachedBackend&) = delete;

  void write(const PageKey& key, const PageBuffer& buf) override;
  std::optional<PageBuffer> read(const PageKey& key) override;
  void remove(const PageKey& key) override;
  void multi_write(std::span<const std::pair<PageKey, PageBuffer>> batch) override;
  std::vector<std::optional<PageBuffer>> multi_read(std::span<const PageKey> keys) override;
  std::string name() const override { return "memcached"; }

 private:
  class Connection;

  void ensure_connected();
  void drop_connection();

  // Runs `op` with retry-on-transport-failure. `op` returns normally or
  // throws TransportError; anything else propagates untouched.
  template <typename Fn>
  void with_retries(Fn&& op);

  MemcachedConfig cfg_;
  std::mutex mu_;
  std::unique_ptr<Connection> conn_;
};

}  // namespace upage
