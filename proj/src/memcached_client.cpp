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

#include "upage/memcached_client.hpp"

#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <charconv>
#include <cstdio>
#include <cstring>
#include <unordered_map>

namespace upage {

std::string memcached_key(const PageKey& key) {
  char buf[2 * 16 + 2];
  int n = std::snprintf(buf, sizeof(buf), "%llx:%llx",
                        static_cast<unsigned long long>(key.region_id),
                        static_cast<unsigned long long>(key.page_addr));
  return std::string(buf, static_cast<std::size_t>(n));
}

// Blocking TCP connection with a small read buffer for line parsing.
class MemcachedBackend::Connection {
 public:
  Connection(const std::string& host, std::uint16_t port, std::chrono::milliseconds timeout) {
    addrinfo hints{};
    hints.ai_family = AF_UNSPEC;
    hints.ai_socktype = SOCK_STREAM;
    addrinfo* res = nullptr;
    std::string port_str = std::to_string(port);
    int rc = ::getaddrinfo(host.c_str(), port_str.c_str(), &hints, &res);
    if (rc != 0) {
      throw TransportError("memcached: resolve " + host + ": " + gai_strerror(rc));
    }
    int last_errno = 0;
    for (addrinfo* ai = res; ai != nullptr; ai = ai->ai_next) {
      fd_ = ::socket(ai->ai_family, ai->ai_socktype, ai->ai_protocol);
      if (fd_ < 0) {
        last_errno = errno;
        continue;
      }
      if (::connect(fd_, ai->ai_addr, ai->ai_addrlen) == 0) break;
      last_errno = errno;
      ::close(fd_);
      fd_ = -1;
    }
    ::freeaddrinfo(res);
    if (fd_ < 0) {
      throw TransportError("memcached: connect " + host + ":" + port_str + ": " +
                           std::strerror(last_errno));
    }
    timeval tv{};
    tv.tv_sec = timeout.count() / 1000;
    tv.tv_usec = static_cast<suseconds_t>((timeout.count() % 1000) * 1000);
    ::setsockopt(fd_, SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof(tv));
    ::setsockopt(fd_, SOL_SOCKET, SO_SNDTIMEO, &tv, sizeof(tv));
    int one = 1;
    ::setsockopt(fd_, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
  }

  ~Connection() {
    if (fd_ >= 0) ::close(fd_);
  }

  Connection(const Connection&) = delete;
  Connection& operator=(const Connection&) = delete;

  void send_all(const void* data, std::size_t len) {
    const char* p = static_cast<const char*>(data);
    while (len > 0) {
      ssize_t n = ::send(fd_, p, len, MSG_NOSIGNAL);
      if (n <= 0) {
        if (n < 0 && errno == EINTR) continue;
        throw TransportError(std::string("memcached: send: ") + std::strerror(errno));
      }
      p += n;
      len -= static_cast<std::size_t>(n);
    }
  }

  // Reads up to and including CRLF; returns the line without the terminator.
  std::string read_line() {
    std::string line;
    for (;;) {
      if (pos_ == end_) fill();
      char c = rbuf_[pos_++];
      if (c == '\n') {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        return line;
      }
      line.push_back(c);
      if (line.size() > 8192) throw TransportError("memcached: oversized reply line");
    }
  }

  void read_exact(void* out, std::size_t len) {
    char* p = static_cast<char*>(out);
    while (len > 0) {
      if (pos_ == end_) fill();
      std::size_t take = std::min(len, end_ - pos_);
      std::memcpy(p, rbuf_ + pos_, take);
      pos_ += take;
      p += take;
      len -= take;
    }
  }

 private:
  void fill() {
    ssize_t n = ::recv(fd_, rbuf_, sizeof(rbuf_), 0);
    if (n <= 0) {
      if (n < 0 && errno == EINTR) return;
      throw TransportError(n == 0 ? "memcached: peer closed connection"
                                  : std::string("memcached: recv: ") + std::strerror(errno));
    }
    pos_ = 0;
    end_ = static_cast<std::size_t>(n);
  }

  int fd_ = -1;
  char rbuf_[16384];
  std::size_t pos_ = 0;
  std::size_t end_ = 0;
};

MemcachedBackend::MemcachedBackend(MemcachedConfig cfg) : cfg_(std::move(cfg)) {}

MemcachedBackend::~MemcachedBackend() = default;

void MemcachedBackend::ensure_connected() {
  if (!conn_) {
    conn_ = std::make_unique<Connection>(cfg_.host, cfg_.port, cfg_.io_timeout);
  }
}

void MemcachedBackend::drop_connection() { conn_.reset(); }

template <typename Fn>
void MemcachedBackend::with_retries(Fn&& op) {
  std::string last;
  for (int attempt = 0; attempt <= cfg_.max_retries; ++attempt) {
    try {
      ensure_connected();
      op();
      return;
    } catch (const TransportError& e) {
      drop_connection();
      last = e.what();
    }
  }
  throw TransportError(last + " (after " + std::to_string(cfg_.max_retries + 1) + " attempts)");
}

namespace {

std::string set_header(const std::string& key) {
  return "set " + key + " 0 0 " + std::to_string(kPageSize) + "\r\n";
}

}  // namespace

void MemcachedBackend::write(const PageKey& key, const PageBuffer& buf) {
  std::lock_guard lk(mu_);
  std::string k = memcached_key(key);
  with_retries([&] {
    std::string msg = set_header(k);
    msg.append(reinterpret_cast<const char*>(buf.data()), buf.size());
    msg.append("\r\n");
    conn_->send_all(msg.data(), msg.size());
    std::string reply = conn_->read_line();
    if (reply != "STORED") throw TransportError("memcached: set failed: " + reply);
  });
}

std::optional<PageBuffer> MemcachedBackend::read(const PageKey& key) {
  PageKey keys[1] = {key};
  return multi_read(keys).front();
}

void MemcachedBackend::remove(const PageKey& key) {
  std::lock_guard lk(mu_);
  std::string k = memcached_key(key);
  with_retries([&] {
    std::string msg = "delete " + k + "\r\n";
    conn_->send_all(msg.data(), msg.size());
    std::string reply = conn_->read_line();
    if (reply != "DELETED" && reply != "NOT_FOUND") {
      throw TransportError("memcached: delete failed: " + reply);
    }
  });
}

void MemcachedBackend::multi_write(std::span<const std::pair<PageKey, PageBuffer>> batch) {
  if (batch.empty()) throw ContractViolation("multi_write: empty batch");
  std::lock_guard lk(mu_);

  // Pipelined sets. On a transport failure, retry the unacknowledged suffix;
  // sets are idempotent so a duplicated store is harmless. If retries run
  // out, report how much of the batch is known to be applied.
  std::size_t applied = 0;
  std::string last;
  for (int attempt = 0; attempt <= cfg_.max_retries; ++attempt) {
    try {
      ensure_connected();
      std::string msg;
      msg.reserve((batch.size() - applied) * (kPageSize + 64));
      for (std::size_t i = applied; i < batch.size(); ++i) {
        msg += set_header(memcached_key(batch[i].first));
        msg.append(reinterpret_cast<const char*>(batch[i].second.data()), kPageSize);
        msg.append("\r\n");
      }
      conn_->send_all(msg.data(), msg.size());
      for (std::size_t i = applied; i < batch.size(); ++i) {
        std::string reply = conn_->read_line();
        if (reply != "STORED") throw TransportError("memcached: set failed: " + reply);
        ++applied;
      }
      return;
    } catch (const TransportError& e) {
      drop_connection();
      last = e.what();
    }
  }
  throw PartialWriteError("memcached: multi_write incomplete: " + last, applied);
}

std::vector<std::optional<PageBuffer>> MemcachedBackend::multi_read(std::span<const PageKey> keys) {
  if (keys.empty()) throw ContractViolation("multi_read: empty key list");
  std::lock_guard lk(mu_);

  std::vector<std::string> wire_keys;
  wire_keys.reserve(keys.size());
  std::string cmd = "get";
  for (const PageKey& key : keys) {
    wire_keys.push_back(memcached_key(key));
    cmd += ' ';
    cmd += wire_keys.back();
  }
  cmd += "\r\n";

  std::unordered_map<std::string, PageBuffer> found;
  with_retries([&] {
    found.clear();
    conn_->send_all(cmd.data(), cmd.size());
    for (;;) {
      std::string line = conn_->read_line();
      if (line == "END") break;
      if (line.rfind("VALUE ", 0) != 0) {
        throw TransportError("memcached: unexpected get reply: " + line);
      }
      // VALUE <key> <flags> <bytes>
      std::size_t key_end = line.find(' ', 6);
      std::size_t flags_end = line.find(' ', key_end + 1);
      if (key_end == std::string::npos || flags_end == std::string::npos) {
        throw TransportError("memcached: malformed VALUE line: " + line);
      }
      std::string k = line.substr(6, key_end - 6);
      unsigned long len = 0;
      auto [ptr, ec] = std::from_chars(line.data() + flags_end + 1, line.data() + line.size(), len);
      if (ec != std::errc() || len != kPageSize) {
        throw TransportError("memcached: unexpected value length in: " + line);
      }
      PageBuffer buf;
      conn_->read_exact(buf.data(), buf.size());
      char crlf[2];
      conn_->read_exact(crlf, 2);
      if (crlf[0] != '\r' || crlf[1] != '\n') {
        throw TransportError("memcached: value not terminated by CRLF");
      }
      found[k] = buf;
    }
  });

  std::vector<std::optional<PageBuffer>> out;
  out.reserve(keys.size());
  for (const std::string& k : wire_keys) {
    auto it = found.find(k);
    out.push_back(it == found.end() ? std::nullopt : std::optional<PageBuffer>(it->second));
  }
  return out;
}

}  // namespace upage
