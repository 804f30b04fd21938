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

#include <cstddef>
#include <list>
#include <optional>
#include <unordered_map>
#include <utility>

#include "upage/page.hpp"

namespace upage {

/// Bounded LRU map of page contents, fed by the prefetcher. Slower-path
/// lookups fall through to the store; a hit here must always match what the
/// store would return, which the engine guarantees by invalidating entries
/// whenever a page leaves the InStore state.
class PageCache {
 public:
  explicit PageCache(std::size_t capacity) : capacity_(capacity) {}

  std::size_t size() const noexcept { return map_.size(); }
  std::size_t capacity() const noexcept { return capacity_; }

  void put(const PageKey& key, const PageBuffer& buf) {
    auto it = map_.find(key);
    if (it != map_.end()) {
      it->second->second = buf;
      lru_.splice(lru_.begin(), lru_, it->second);
      return;
    }
    lru_.emplace_front(key, buf);
    map_[key] = lru_.begin();
    if (map_.size() > capacity_) {
      map_.erase(lru_.back().first);
      lru_.pop_back();
    }
  }

  std::optional<PageBuffer> get(const PageKey& key) {
    auto it = map_.find(key);
    if (it == map_.end()) return std::nullopt;
    lru_.splice(lru_.begin(), lru_, it->second);
    return it->second->second;
  }

  bool contains(const PageKey& key) const { return map_.count(key) > 0; }

  void erase(const PageKey& key) {
    auto it = map_.find(key);
    if (it == map_.end()) return;
    lru_.erase(it->second);
    map_.erase(it);
  }

  template <typename Pred>
  void erase_if(Pred&& pred) {
    for (auto it = lru_.begin(); it != lru_.end();) {
      if (pred(it->first)) {
        map_.erase(it->first);
        it = lru_.erase(it);
      } else {
        ++it;
      }
    }
  }

 private:
  std::size_t capacity_;
  std::list<std::pair<PageKey, PageBuffer>> lru_;  // front = most recent
  std::unordered_map<PageKey, std::list<std::pair<PageKey, PageBuffer>>::iterator, PageKeyHash> map_;
};

}  // namespace upage
