#include <random>

#include "doctest.h"
#include "mpolice/coordination.hpp"
#include "mpolice/policies.hpp"

using namespace mpolice;

namespace {

FlowEntry entry(std::uint64_t f) {
  FlowEntry e;
  e.f = SenderId{f};
  return e;
}

}  // namespace

TEST_CASE("natural share") {
  FlowEntry e;
  e.n_r = 100;
  e.n_d = 20;
  e.p_id = 50;
  for (int i = 0; i < 45; ++i) e.w_v.set(i);
  CHECK(natural_share(e) == 72);

  FlowEntry clean;
  clean.n_r = 50;
  CHECK(natural_share(clean) == 50);

  FlowEntry dropped;
  dropped.n_r = 50;
  dropped.n_d = 50;
  CHECK(natural_share(dropped) == 0);
}

TEST_CASE("per-sender fair share") {
  AllocationContext ctx;
  ctx.n_total_size = 1000;
  ctx.sender_count = 10;
  CHECK(per_sender_fairshare(ctx) == 100);
  ctx.n_total_size = 1001;
  CHECK(per_sender_fairshare(ctx) == 100);
  ctx.sender_count = 1;
  CHECK(per_sender_fairshare(ctx) == 1001);
  ctx.sender_count = 0;
  CHECK(per_sender_fairshare(ctx) == 0);
}

TEST_CASE("per-AS fair share") {
  auto map = std::make_shared<AsMap>();
  (*map)[SenderId{1}] = 1;
  for (std::uint64_t f = 2; f <= 10; ++f) (*map)[SenderId{f}] = 2;
  AllocationContext ctx;
  ctx.as_map = map;
  ctx.n_total_size = 200;
  ctx.sender_count = 10;
  ctx.per_as_counts = {{1, 1}, {2, 9}};
  CHECK(per_as_fairshare(ctx, entry(1)) == 100);
  for (std::uint64_t f = 2; f <= 10; ++f) CHECK(per_as_fairshare(ctx, entry(f)) == 11);
  CHECK(per_as_per_sender_fairshare(ctx, entry(5)) == 11);

  SUBCASE("single AS reduces to per sender") {
    AllocationContext one;
    one.as_map = map;
    one.n_total_size = 200;
    one.sender_count = 9;
    one.per_as_counts = {{2, 9}};
    CHECK(per_as_fairshare(one, entry(3)) == per_sender_fairshare(one));
  }
  SUBCASE("unmapped sender is its own AS") {
    CHECK(per_as_fairshare(ctx, entry(999)) == 200 / 3);
  }
}

TEST_CASE("equal AS populations match per-sender share") {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 500; ++i) {
    const std::size_t ases = 1 + rng() % 8;
    const std::size_t members = 1 + rng() % 20;
    auto map = std::make_shared<AsMap>();
    AllocationContext ctx;
    ctx.as_map = map;
    std::uint64_t f = 1;
    for (std::size_t a = 0; a < ases; ++a) {
      for (std::size_t m = 0; m < members; ++m) (*map)[SenderId{f++}] = static_cast<AsId>(a);
      ctx.per_as_counts[static_cast<AsId>(a)] = members;
    }
    ctx.sender_count = ases * members;
    ctx.n_total_size = static_cast<double>(rng() % 100000);
    const SenderId probe{1 + rng() % (f - 1)};
    CHECK(per_as_fairshare(ctx, entry(probe.value)) == per_sender_fairshare(ctx));
  }
}

TEST_CASE("premium overlay") {
  const auto base = make_policy("per_sender");
  const auto overlay = make_policy("per_sender", true);
  AllocationContext ctx;
  ctx.n_total_size = 1000;
  ctx.sender_count = 10;
  FlowEntry e = entry(1);

  SUBCASE("empty premium set is the base policy") {
    ctx.premium = std::make_shared<PremiumSet>();
    CHECK(overlay->allocate(ctx, e) == base->allocate(ctx, e));
    ctx.premium = nullptr;
    CHECK(overlay->allocate(ctx, e) == base->allocate(ctx, e));
  }
  SUBCASE("reservation") {
    auto prem = std::make_shared<PremiumSet>();
    prem->senders.insert(SenderId{1});
    prem->reserved_per_member = 500;
    ctx.premium = prem;
    ctx.premium_active = 1;
    CHECK(overlay->allocate(ctx, e) == 500);
    // Everybody else splits what is left.
    CHECK(overlay->allocate(ctx, entry(2)) == 500 / 9);
  }
  SUBCASE("member keeps the larger of reservation and base share") {
    auto prem = std::make_shared<PremiumSet>();
    prem->senders.insert(SenderId{1});
    prem->reserved_per_member = 10;
    ctx.premium = prem;
    ctx.premium_active = 1;
    CHECK(overlay->allocate(ctx, e) == 100);
  }
  CHECK(overlay->name() == "per_sender+premium");
}

TEST_CASE("policy names") {
  for (auto n : {"natural", "per_sender", "per_as", "per_as_per_sender"}) {
    CHECK(make_policy(n)->name() == n);
  }
  CHECK_THROWS_AS(make_policy("bogus"), std::invalid_argument);
}

TEST_CASE("merged contexts share the group total") {
  AllocationContext a;
  a.n_total_size = 600;
  a.sender_count = 6;
  AllocationContext b;
  b.n_total_size = 400;
  b.sender_count = 4;
  const auto m = merge_contexts(a, b);
  CHECK(per_sender_fairshare(m) == 100);

  const std::vector<AllocationContext> group{a, b};
  CHECK(per_sender_fairshare(aggregate_share(group)) == 100);
  const std::vector<AllocationContext> single{a};
  const auto s = aggregate_share(single);
  CHECK(s.n_total_size == 600);
  CHECK(s.sender_count == 6);
}
