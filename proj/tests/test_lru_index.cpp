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

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "oracles.hpp"
#include "upage/lru_index.hpp"

using namespace upage;
using testing::ListLruModel;

namespace {

PageKey key(std::uint64_t page) { return PageKey{1, page * kPageSize}; }

}  // namespace

TEST_CASE("record_resident evicts the least recently used key at capacity") {
  ResidencyIndex index(2);
  CHECK(index.record_resident(key(0)) == std::nullopt);
  CHECK(index.record_resident(key(1)) == std::nullopt);
  auto victim = index.record_resident(key(2));
  REQUIRE(victim.has_value());
  CHECK(*victim == key(0));
  CHECK(index.state_of(key(0)) == ResidencyState::PendingEvict);
  CHECK(index.resident_count() == 2);
}

TEST_CASE("touch refreshes recency") {
  ResidencyIndex index(2);
  index.record_resident(key(0));
  index.record_resident(key(1));
  index.touch(key(0));
  auto victim = index.record_resident(key(2));
  REQUIRE(victim.has_value());
  CHECK(*victim == key(1));
}

TEST_CASE("touching the most recent key leaves the order unchanged") {
  ResidencyIndex index(3);
  index.record_resident(key(0));
  index.record_resident(key(1));
  auto before = index.resident_keys_mru_first();
  index.touch(key(1));
  CHECK(index.resident_keys_mru_first() == before);
}

TEST_CASE("under capacity nothing is evicted") {
  ResidencyIndex index(3);
  CHECK(index.record_resident(key(0)) == std::nullopt);
  CHECK(index.record_resident(key(1)) == std::nullopt);
  CHECK(index.resident_count() == 2);
}

TEST_CASE("contract violations") {
  ResidencyIndex index(2);
  index.record_resident(key(0));
  CHECK_THROWS_AS(index.record_resident(key(0)), ContractViolation);
  CHECK_THROWS_AS(index.touch(key(7)), ContractViolation);

  // evicted (PendingEvict) keys cannot be touched
  index.record_resident(key(1));
  index.record_resident(key(2));  // evicts key 0
  CHECK_THROWS_AS(index.touch(key(0)), ContractViolation);

  CHECK_THROWS_AS(ResidencyIndex(0), ContractViolation);
  CHECK_THROWS_AS(index.resize(0), ContractViolation);
}

TEST_CASE("legal and illegal state transitions") {
  ResidencyIndex index(1);
  index.record_resident(key(0));
  index.record_resident(key(1));  // key 0 -> PendingEvict

  SUBCASE("PendingEvict -> ZeroMarked") {
    index.set_state(key(0), ResidencyState::ZeroMarked);
    CHECK(index.state_of(key(0)) == ResidencyState::ZeroMarked);
  }
  SUBCASE("PendingEvict -> Resident re-fault before flush") {
    index.set_state(key(1), ResidencyState::PendingEvict);  // make room
    index.set_state(key(0), ResidencyState::Resident);
    CHECK(index.state_of(key(0)) == ResidencyState::Resident);
  }
  SUBCASE("InStore -> PendingEvict is illegal") {
    index.set_state(key(0), ResidencyState::InStore);
    CHECK_THROWS_AS(index.set_state(key(0), ResidencyState::PendingEvict), ContractViolation);
  }
  SUBCASE("ZeroMarked -> InStore is illegal") {
    index.set_state(key(0), ResidencyState::ZeroMarked);
    CHECK_THROWS_AS(index.set_state(key(0), ResidencyState::InStore), ContractViolation);
  }
  SUBCASE("unknown key is rejected") {
    CHECK_THROWS_AS(index.set_state(key(9), ResidencyState::InStore), ContractViolation);
  }
}

TEST_CASE("resize returns excess keys LRU-first") {
  ResidencyIndex index(4);
  for (std::uint64_t i = 0; i < 4; ++i) index.record_resident(key(i));
  auto victims = index.resize(2);
  REQUIRE(victims.size() == 2);
  CHECK(victims[0] == key(0));
  CHECK(victims[1] == key(1));
  CHECK(index.resident_count() == 2);
  CHECK(index.state_of(key(0)) == ResidencyState::PendingEvict);

  CHECK(index.resize(10).empty());
  CHECK(index.resize(10).empty());
}

TEST_CASE("victim sequences match the brute-force LRU model") {
  std::mt19937_64 rng(2024);
  for (int round = 0; round < 60; ++round) {
    std::size_t capacity = 1 + rng() % 32;
    ResidencyIndex index(capacity);
    ListLruModel model(capacity);
    std::vector<PageKey> resident;  // mirror of the model's membership

    for (int op = 0; op < 2000; ++op) {
      std::uint64_t page = rng() % 64;
      PageKey k = key(page);
      bool is_resident = model.contains(k);
      switch (rng() % 3) {
        case 0: {  // record a non-resident key (new or re-faulting)
          if (is_resident) break;
          auto got = index.record_resident(k);
          auto want = model.record(k);
          CHECK(got == want);
          break;
        }
        case 1: {  // touch a resident key
          if (!is_resident) break;
          index.touch(k);
          model.touch(k);
          break;
        }
        case 2: {  // occasional resize
          if (rng() % 10 != 0) break;
          std::size_t new_capacity = 1 + rng() % 32;
          auto got = index.resize(new_capacity);
          auto want = model.resize(new_capacity);
          CHECK(got == want);
          break;
        }
      }
      CHECK(index.resident_count() <= index.capacity());
    }
    index.validate();
  }
}

TEST_CASE("dual-index views agree after heavy mutation") {
  // UPAGE_PARANOID_INDEX re-validates after every mutation in this binary;
  // this case just drives enough traffic through all the mutators.
  ResidencyIndex index(8);
  std::mt19937_64 rng(7);
  for (int op = 0; op < 5000; ++op) {
    PageKey k = key(rng() % 24);
    auto state = index.state_of(k);
    if (!state) {
      index.record_resident(k);
    } else if (*state == ResidencyState::Resident) {
      index.touch(k);
    } else if (*state == ResidencyState::PendingEvict) {
      if (rng() % 2) {
        index.set_state(k, rng() % 2 ? ResidencyState::InStore : ResidencyState::ZeroMarked);
      } else if (index.resident_count() < index.capacity()) {
        index.set_state(k, ResidencyState::Resident);
      }
    } else {
      index.record_resident(k);  // InStore/ZeroMarked -> Resident re-fault
    }
    if (op % 100 == 0) index.erase(key(rng() % 24));
  }
  index.validate();
}
