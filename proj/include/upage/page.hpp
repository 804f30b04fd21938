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

#include <array>
#include <compare>
#include <cstdint>
#include <cstring>
#include <functional>
#include <optional>
#include <utility>

namespace upage {

// Page size is fixed; key arithmetic stays branch-free and the store layout
// never has to carry a length.
inline constexpr std::uint64_t kPageSize = 4096;
inline constexpr std::uint64_t kPageMask = ~(kPageSize - 1);

/// Identity of one page: an engine-issued region handle plus the page-aligned
/// byte offset of the page within that region.
struct PageKey {
  std::uint64_t region_id = 0;
  std::uint64_t page_addr = 0;

  friend auto operator<=>(const PageKey&, const PageKey&) = default;
};

/// Raw contents of one page. Exactly kPageSize bytes by construction.
using PageBuffer = std::array<std::uint8_t, kPageSize>;

struct PageKeyHash {
  std::size_t operator()(const PageKey& k) const noexcept {
    // splitmix64-style mix of both fields
    std::uint64_t x = k.region_id * 0x9e3779b97f4a7c15ULL ^ k.page_addr;
    x ^= x >> 30;
    x *= 0xbf58476d1ce4e5b9ULL;
    x ^= x >> 27;
    x *= 0x94d049bb133111ebULL;
    x ^= x >> 31;
    return static_cast<std::size_t>(x);
  }
};

enum class FaultKind { Read, Write };

/// One page fault as delivered by a fault source. `seq` values handed to a
/// single engine instance must be strictly increasing.
struct FaultEvent {
  PageKey key;
  FaultKind kind = FaultKind::Read;
  std::uint64_t seq = 0;
};

/// The engine's answer to a fault: install a fresh zero page, or install the
/// carried bytes.
class Resolution {
 public:
  static Resolution zero_fill() { return Resolution(std::nullopt); }
  static Resolution copy(PageBuffer bytes) { return Resolution(std::move(bytes)); }

  bool is_zero_fill() const noexcept { return !bytes_.has_value(); }
  bool is_copy() const noexcept { return bytes_.has_value(); }

  /// Only valid when is_copy().
  const PageBuffer& bytes() const { return bytes_.value(); }

 private:
  explicit Resolution(std::optional<PageBuffer> bytes) : bytes_(std::move(bytes)) {}

  std::optional<PageBuffer> bytes_;
};

/// Key for the page containing byte `addr` of region `region_id` (addr is
/// rounded down to the page boundary).
inline PageKey make_key(std::uint64_t region_id, std::uint64_t addr) {
  return PageKey{region_id, addr & kPageMask};
}

/// True iff every byte of `buf` is zero.
inline bool is_zero_page(const PageBuffer& buf) {
  // word-wise OR fold; the buffer is always 4096 bytes so the loop is exact
  std::uint64_t acc = 0;
  const std::uint8_t* p = buf.data();
  for (std::size_t i = 0; i < kPageSize; i += sizeof(std::uint64_t)) {
    std::uint64_t w;
    std::memcpy(&w, p + i, sizeof(w));
    acc |= w;
  }
  return acc == 0;
}

}  // namespace upage
