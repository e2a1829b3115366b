#include <random>
#include <sstream>

#include "doctest.h"
#include "mpolice/policer.hpp"

using namespace mpolice;
using namespace std::chrono_literals;

namespace {

MacKey test_key() {
  std::array<std::uint8_t, 16> k{};
  for (std::size_t i = 0; i < k.size(); ++i) k[i] = static_cast<std::uint8_t>(i + 1);
  return MacKey(std::span<const std::uint8_t, 16>(k));
}

Policer make_policer(std::string_view policy = "natural") {
  return Policer(MboxAddr{1}, test_key(), PolicerParams{}, make_policy(policy));
}

SimTime ms(std::int64_t v) { return std::chrono::milliseconds{v}; }

const DistinctCapability& distinct(const PolicingDecision& d) {
  REQUIRE(d.capability.has_value());
  REQUIRE(std::holds_alternative<DistinctCapability>(*d.capability));
  return std::get<DistinctCapability>(*d.capability);
}

}  // namespace

TEST_CASE("fresh sender starts in best effort and is accepted") {
  auto p = make_policer();
  const auto d = p.handle_packet(SenderId{7}, ms(0));
  CHECK(d.verdict == AdmissionVerdict::best_effort_accepted);
  CHECK(d.queue == QueueClass::best_effort);
  CHECK(p.find(SenderId{7})->w_r == 0);
}

TEST_CASE("packet inside the window is privileged") {
  auto p = make_policer();
  auto& e = p.insert_entry(SenderId{7}, ms(0));
  e.w_r = 10;
  e.n_r = 4;
  const auto d = p.handle_packet(SenderId{7}, ms(10));
  CHECK(d.verdict == AdmissionVerdict::privileged);
  CHECK(d.queue == QueueClass::privileged);
}

TEST_CASE("lossy sender beyond its window is dropped") {
  auto p = make_policer();
  auto& e = p.insert_entry(SenderId{7}, ms(0));
  e.w_r = 2;
  e.l_r = 0.3;
  p.handle_packet(SenderId{7}, ms(1));
  const auto d = p.handle_packet(SenderId{7}, ms(2));
  CHECK(d.verdict == AdmissionVerdict::dropped);
  CHECK_FALSE(d.capability.has_value());
  CHECK(p.find(SenderId{7})->n_d == 1);
}

TEST_CASE("distinct capability cap") {
  auto p = make_policer();
  auto& e = p.insert_entry(SenderId{7}, ms(0));
  e.w_r = 1000;
  e.p_id = 127;
  CHECK(distinct(p.handle_packet(SenderId{7}, ms(10))).p_id == 128);
  const auto d = p.handle_packet(SenderId{7}, ms(11));
  REQUIRE(d.capability.has_value());
  CHECK(std::holds_alternative<CommonCapability>(*d.capability));
}

TEST_CASE("distinct capabilities stop at d_p - th_rtt") {
  auto p = make_policer();
  p.insert_entry(SenderId{7}, ms(0)).w_r = 1000;
  CHECK(distinct(p.handle_packet(SenderId{7}, ms(2999))).p_id == 1);
  const auto d = p.handle_packet(SenderId{7}, ms(3000));
  CHECK(std::holds_alternative<CommonCapability>(*d.capability));
}

TEST_CASE("best effort thresholds are strict") {
  const PolicerParams params;
  FlowEntry e;
  e.l_r = 0.01;
  CHECK(best_effort_handling(e, 0.02, params));
  CHECK(e.n_d == 0);
  CHECK_FALSE(best_effort_handling(e, 0.05, params));
  CHECK(e.n_d == 1);
  e.l_r = 0.10;
  CHECK_FALSE(best_effort_handling(e, 0.0, params));
  CHECK(e.n_d == 2);
}

TEST_CASE("feedback sets the verification bit") {
  auto p = make_policer();
  const SenderId f{7};
  p.handle_packet(f, ms(0));
  p.handle_packet(f, ms(1));
  const auto third = distinct(p.handle_packet(f, ms(2)));
  CHECK(third.p_id == 3);
  p.record_feedback(encode(third), ms(50));
  CHECK(p.find(f)->w_v.test(2));
  CHECK(p.find(f)->w_v.count() == 1);

  SUBCASE("replay is idempotent") {
    p.record_feedback(encode(third), ms(60));
    CHECK(p.find(f)->w_v.count() == 1);
    CHECK(p.find(f)->w_v.test(2));
  }
  SUBCASE("previous period is ignored") {
    // Packet after d_p closes the period.
    const auto d = p.handle_packet(f, ms(4001));
    REQUIRE(d.rollover.has_value());
    const auto before = p.feedback_counters().stale_period;
    p.record_feedback(encode(third), ms(4010));
    CHECK(p.find(f)->w_v.none());
    CHECK(p.feedback_counters().stale_period == before + 1);
  }
  SUBCASE("common capability is not feedback") {
    p.record_feedback(encode(generate_common(test_key(), 1, 2)), ms(60));
    CHECK(p.feedback_counters().common == 1);
    CHECK(p.find(f)->w_v.count() == 1);
  }
  SUBCASE("forged capability is counted") {
    auto frame = encode(third);
    frame[30] ^= 1;
    p.record_feedback(frame, ms(60));
    CHECK(p.feedback_counters().forged == 1);
  }
}

TEST_CASE("compute_llr examples") {
  const PolicerParams params;
  FlowEntry e;
  e.n_r = 100;
  e.n_d = 20;
  e.p_id = 50;
  for (int i = 0; i < 50; ++i) e.w_v.set(i);
  for (int i : {3, 9, 17, 30, 44}) e.w_v.reset(i);
  const auto est = compute_llr(e, params);
  CHECK(est.downstream_losses == doctest::Approx(8.0));
  CHECK(est.recent_loss == doctest::Approx(0.28));

  FlowEntry small;
  small.n_r = 4;
  small.n_d = 4;
  CHECK(compute_llr(small, params).recent_loss == 0.0);

  FlowEntry clean;
  clean.n_r = 50;
  clean.p_id = 50;
  for (int i = 0; i < 50; ++i) clean.w_v.set(i);
  CHECK(compute_llr(clean, params).recent_loss == 0.0);
}

// Each packet gets a fate (dropped at the mbox, lost downstream, delivered);
// the loss rate is the fraction of packets that did not make it.
TEST_CASE("compute_llr matches packet-fate counting") {
  std::mt19937_64 rng(2024);
  const PolicerParams params;
  for (int inst = 0; inst < 1000; ++inst) {
    auto p = make_policer();
    const SenderId f{static_cast<std::uint64_t>(inst) + 1};
    auto& e = p.insert_entry(f, ms(0));
    const int n = 1 + static_cast<int>(rng() % 128);
    const double p_drop = static_cast<double>(rng() % 100) / 100.0;
    const double p_lost = static_cast<double>(rng() % 100) / 100.0;
    int dropped = 0;
    int lost = 0;
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < n; ++i) {
      const bool drop = u(rng) < p_drop;
      e.l_r = drop ? 0.5 : 0.0;
      const auto d = p.handle_packet(f, ms(i + 1));
      if (drop) {
        REQUIRE(d.verdict == AdmissionVerdict::dropped);
        ++dropped;
        continue;
      }
      REQUIRE(d.verdict == AdmissionVerdict::best_effort_accepted);
      if (u(rng) < p_lost) {
        ++lost;
      } else {
        p.record_feedback(encode(*d.capability), ms(i + 2));
      }
    }
    const double expected =
        n < 5 ? 0.0 : static_cast<double>(lost + dropped) / static_cast<double>(n);
    CHECK(compute_llr(*p.find(f), params).recent_loss == expected);
  }
}

TEST_CASE("l_r EWMA on rollover") {
  auto p = make_policer();
  const SenderId f{9};
  auto& e = p.insert_entry(f, ms(0));
  e.l_r = 0.5;
  double expected = 0.5;
  SimTime t = ms(0);
  for (int period = 0; period < 4; ++period) {
    // Keep every packet privileged so nothing is dropped.
    e.w_r = 1000;
    for (int i = 0; i < 20; ++i) {
      t += ms(10);
      const auto d = p.handle_packet(f, t);
      if (std::holds_alternative<DistinctCapability>(*d.capability)) {
        p.record_feedback(encode(*d.capability), t + ms(1));
      }
    }
    t += ms(4000);
    const auto d = p.handle_packet(f, t);
    REQUIRE(d.rollover.has_value());
    expected *= 0.8;
    CHECK(d.rollover->recent_loss == 0.0);
    CHECK(d.rollover->l_r == doctest::Approx(expected));
    if (period == 0) CHECK(d.rollover->l_r == doctest::Approx(0.4));
  }
}

TEST_CASE("zero loss is a fixed point") {
  auto p = make_policer();
  const SenderId f{9};
  p.insert_entry(f, ms(0)).w_r = 100;
  const auto d = p.handle_packet(f, ms(4001));
  REQUIRE(d.rollover.has_value());
  CHECK(d.rollover->l_r == 0.0);
}

TEST_CASE("natural share window follows delivered estimate") {
  auto p = make_policer();
  const SenderId f{3};
  p.insert_entry(f, ms(0)).w_r = 1000;
  for (int i = 1; i <= 50; ++i) {
    const auto d = p.handle_packet(f, ms(i));
    p.record_feedback(encode(*d.capability), ms(i + 1));
  }
  const auto d = p.handle_packet(f, ms(4001));
  REQUIRE(d.rollover.has_value());
  CHECK(d.rollover->n_r == 51);
  // The closing packet carries a common capability and counts as delivered.
  CHECK(d.rollover->next_w_r == 51);
  CHECK(p.local_context().n_total_size == doctest::Approx(51.0));
}

namespace {

DistinctCapability cap_n(std::uint16_t i) {
  DistinctCapability c;
  c.f = 1 + i / 100;
  c.p_id = static_cast<std::uint16_t>(1 + i % 100);
  c.t_a = 0;
  return c;
}

}  // namespace

TEST_CASE("ctable SLR") {
  CTable t(100);
  for (std::uint16_t i = 0; i < 100; ++i) t.offer(cap_n(i), ms(i));
  REQUIRE(t.fill_time() == ms(99));
  for (std::uint16_t i = 0; i < 90; ++i) CHECK(t.mark_received(cap_n(i)));
  CHECK_FALSE(t.maybe_complete(ms(1099), ms(1000), ms(4000)).has_value());
  const auto slr = t.maybe_complete(ms(1100), ms(1000), ms(4000));
  REQUIRE(slr.has_value());
  CHECK(*slr == doctest::Approx(0.10));
  CHECK(t.size() == 0);

  SUBCASE("all returned") {
    for (std::uint16_t i = 0; i < 100; ++i) t.offer(cap_n(i), ms(2000));
    for (std::uint16_t i = 0; i < 100; ++i) t.mark_received(cap_n(i));
    CHECK(t.maybe_complete(ms(3001), ms(1000), ms(4000)) == 0.0);
  }
  SUBCASE("partial batch keeps the previous SLR") {
    for (std::uint16_t i = 0; i < 99; ++i) t.offer(cap_n(i), ms(2000));
    for (std::int64_t now = 2000; now <= 6000; now += 250) {
      CHECK_FALSE(t.maybe_complete(ms(now), ms(1000), ms(4000)).has_value());
      CHECK(t.slr() == doctest::Approx(0.10));
    }
  }
}

TEST_CASE("two-class queue serves privileged first") {
  TwoClassQueue<char> q;
  q.push(QueueClass::privileged, 'a');
  q.push(QueueClass::privileged, 'b');
  q.push(QueueClass::best_effort, 'c');
  CHECK(q.dequeue(2) == std::vector<char>{'a', 'b'});
  CHECK(q.dequeue(1) == std::vector<char>{'c'});
  CHECK(q.dequeue(1).empty());

  TwoClassQueue<char> bounded(1);
  CHECK(bounded.push(QueueClass::best_effort, 'x'));
  CHECK_FALSE(bounded.push(QueueClass::best_effort, 'y'));
  CHECK_FALSE(bounded.push(QueueClass::none, 'z'));
}

TEST_CASE("idle entries are evicted") {
  auto p = make_policer("per_sender");
  p.handle_packet(SenderId{1}, ms(0));
  p.handle_packet(SenderId{2}, ms(30000));
  CHECK(p.evict_idle(ms(40001)) == 1);
  CHECK(p.find(SenderId{1}) == nullptr);
  CHECK(p.local_context().sender_count == 1);
}

TEST_CASE("parameter validation") {
  PolicerParams bad;
  bad.rtt_threshold = 5000ms;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = {};
  bad.beta = 1.0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("itable dump") {
  auto p = make_policer();
  p.handle_packet(SenderId{2}, ms(0));
  p.handle_packet(SenderId{1}, ms(0));
  std::ostringstream out;
  p.dump_itable(out);
  const std::string s = out.str();
  CHECK(std::count(s.begin(), s.end(), '\n') == 3);
  CHECK(s.find("\n1\t") < s.find("\n2\t"));
}
