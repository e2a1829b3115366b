#include "doctest.h"
#include "mpolice/chm.hpp"

using namespace mpolice;
using namespace std::chrono_literals;

namespace {

MacKey test_key() {
  std::array<std::uint8_t, 16> k{};
  k.fill(0x5a);
  return MacKey(std::span<const std::uint8_t, 16>(k));
}

SimTime ms(std::int64_t v) { return std::chrono::milliseconds{v}; }

std::vector<std::uint8_t> packet_with(const Capability& cap, std::size_t payload = 100) {
  std::vector<std::uint8_t> p(payload, 0xee);
  const auto f = encode(cap);
  p.insert(p.end(), f.begin(), f.end());
  return p;
}

}  // namespace

TEST_CASE("valid distinct trailer is delivered and queued") {
  CapabilityHandler chm(test_key());
  const auto pkt = packet_with(generate_distinct(test_key(), 9, 10, 1, 5, 0));
  const auto r = chm.ingest(pkt, ms(10));
  CHECK(r.verdict == IngestVerdict::distinct_queued);
  CHECK(r.payload.size() == 100);
  CHECK(chm.pending() == 1);
  CHECK(chm.pending_for(MboxAddr{9}) == 1);

  SUBCASE("duplicates are queued once") {
    chm.ingest(pkt, ms(11));
    CHECK(chm.pending() == 1);
    CHECK(chm.counters().duplicates == 1);
  }
}

TEST_CASE("valid common trailer is delivered but not fed back") {
  CapabilityHandler chm(test_key());
  const auto r = chm.ingest(packet_with(generate_common(test_key(), 9, 10)), ms(10));
  CHECK(r.verdict == IngestVerdict::common_accepted);
  CHECK(r.payload.size() == 100);
  CHECK(chm.pending() == 0);
}

TEST_CASE("missing, forged and stale trailers count as invalid") {
  CapabilityHandler chm(test_key());
  std::vector<std::uint8_t> bare(20, 0);
  CHECK(chm.ingest(bare, ms(0)).verdict == IngestVerdict::invalid);
  CHECK(chm.ingest_trailer(std::nullopt, ms(0)).verdict == IngestVerdict::invalid);
  auto forged = packet_with(generate_distinct(test_key(), 9, 0, 1, 5, 0));
  forged.back() ^= 1;
  const auto r = chm.ingest(forged, ms(0));
  CHECK(r.verdict == IngestVerdict::invalid);
  CHECK(r.payload.empty());
  CHECK(chm.ingest(packet_with(generate_common(test_key(), 9, 0)), ms(1001)).verdict ==
        IngestVerdict::invalid);
  CHECK(chm.counters().invalid == 4);
  CHECK(chm.pending() == 0);
}

TEST_CASE("greedy feedback packing") {
  CapabilityHandler chm(test_key());
  for (std::uint16_t i = 1; i <= 40; ++i) {
    chm.ingest_trailer(encode(generate_distinct(test_key(), 9, 0, i, 5, 0)), ms(0));
  }
  const auto frames = chm.flush_feedback(15, ms(0));
  REQUIRE(frames.size() == 3);
  CHECK(frames[0].count() == 15);
  CHECK(frames[1].count() == 15);
  CHECK(frames[2].count() == 10);
  CHECK(frames[2].bytes.size() == 1 + 10 * kCapabilityFrameSize);
  for (const auto& f : frames) CHECK(f.dest == MboxAddr{9});
  CHECK(chm.pending() == 0);
  CHECK(chm.counters().returned == 40);
}

TEST_CASE("single capability frame") {
  CapabilityHandler chm(test_key());
  const auto cap = generate_distinct(test_key(), 9, 0, 1, 5, 0);
  chm.ingest_trailer(encode(cap), ms(0));
  const auto frames = chm.flush_feedback(15, ms(0));
  REQUIRE(frames.size() == 1);
  CHECK(frames[0].bytes[0] == 1);
  const auto parsed = parse_feedback_frame(frames[0].bytes);
  REQUIRE(parsed.has_value());
  REQUIRE(parsed->size() == 1);
  const auto enc = encode(cap);
  CHECK(std::equal(enc.begin(), enc.end(), (*parsed)[0].begin()));
}

TEST_CASE("frames never mix mboxes") {
  CapabilityHandler chm(test_key());
  for (std::uint16_t i = 1; i <= 5; ++i) {
    chm.ingest_trailer(encode(generate_distinct(test_key(), 1, 0, i, 5, 0)), ms(0));
    chm.ingest_trailer(encode(generate_distinct(test_key(), 2, 0, i, 5, 0)), ms(0));
  }
  const auto frames = chm.flush_feedback(15, ms(0));
  REQUIRE(frames.size() == 2);
  for (const auto& f : frames) {
    const auto caps = parse_feedback_frame(f.bytes);
    REQUIRE(caps.has_value());
    for (auto c : *caps) {
      const auto d = decode(c, test_key());
      CHECK(ip_mp_of(std::get<Capability>(d)) == f.dest.value);
    }
  }
}

TEST_CASE("due flushing and piggybacking") {
  ChmConfig cfg;
  cfg.flush_deadline = ms(200);
  CapabilityHandler chm(test_key(), cfg);
  for (std::uint16_t i = 1; i <= 3; ++i) {
    chm.ingest_trailer(encode(generate_distinct(test_key(), 1, 0, i, 5, 0)), ms(0));
  }
  CHECK(chm.flush_due(15, ms(100)).empty());
  const auto ride = chm.piggyback(MboxAddr{1}, 2);
  REQUIRE(ride.has_value());
  CHECK(ride->count() == 2);
  CHECK_FALSE(chm.piggyback(MboxAddr{2}, 15).has_value());
  const auto due = chm.flush_due(15, ms(200));
  REQUIRE(due.size() == 1);
  CHECK(due[0].count() == 1);
  CHECK_THROWS_AS(chm.flush_feedback(16, ms(0)), std::invalid_argument);
}

TEST_CASE("feedback frame parsing") {
  CHECK_FALSE(parse_feedback_frame(std::vector<std::uint8_t>{}).has_value());
  CHECK_FALSE(parse_feedback_frame(std::vector<std::uint8_t>{2, 0, 0}).has_value());
  std::vector<CapabilityFrame> many(16);
  CHECK_THROWS_AS(make_feedback_frame(MboxAddr{1}, many), std::invalid_argument);
}

TEST_CASE("bypass alarm") {
  CHECK_FALSE(bypass_alarm(0, 50));
  CHECK_FALSE(bypass_alarm(50, 50));
  CHECK(bypass_alarm(500, 50));

  ChmConfig cfg;
  cfg.alarm_threshold = 5;
  cfg.alarm_window = ms(100);
  CapabilityHandler chm(test_key(), cfg);
  CHECK_FALSE(chm.bypass_alarm(ms(0)));
  for (int i = 0; i < 50; ++i) chm.ingest_trailer(std::nullopt, ms(10));
  CHECK(chm.bypass_alarm(ms(50)));
  CHECK_FALSE(chm.bypass_alarm(ms(110)));
  for (int i = 0; i < 50; ++i) chm.ingest_trailer(std::nullopt, ms(200));
  chm.clear_alarm();
  CHECK_FALSE(chm.bypass_alarm(ms(200)));
}

TEST_CASE("sliding window counter") {
  SlidingWindowCounter c(ms(100));
  c.record(ms(0));
  c.record(ms(50));
  CHECK(c.count(ms(99)) == 2);
  CHECK(c.count(ms(100)) == 1);
  CHECK(c.count(ms(150)) == 0);
}
