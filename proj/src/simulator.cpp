#include "mpolice/simulator.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <queue>
#include <set>
#include <stdexcept>
#include <unordered_map>

#include <fmt/format.h>

#include "mpolice/coordination.hpp"
#include "mpolice/tcp.hpp"

namespace mpolice {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

Rng::Rng(std::uint64_t seed, std::uint64_t stream)
    : engine_(splitmix64(seed ^ splitmix64(stream + 0x5851f42d4c957f2dULL))) {}

namespace {

constexpr std::uint32_t kNone = 0xffffffffU;
constexpr std::uint32_t kMboxBase = 0x0a000001U;    // 10.0.0.1
constexpr std::uint32_t kSenderBase = 0x0b000001U;  // 11.0.0.1
constexpr std::uint32_t kVictimIp = 0xc0a80001U;    // 192.168.0.1
constexpr SimTime kFeedbackTick = std::chrono::milliseconds{10};
constexpr SimTime kFilterTick = std::chrono::seconds{1};
constexpr SimTime kControlDelay = std::chrono::milliseconds{5};

SimTime ms(double v) { return SimTime{std::llround(v * 1e6)}; }
SimTime secs(double v) { return SimTime{std::llround(v * 1e9)}; }

enum class Ev : std::uint8_t {
  udp_emit,
  tcp_start,
  tcp_timer,
  mbox_arrival,
  egress_done,
  router_arrival,
  router_done,
  victim_arrival,
  reverse_at_mbox,
  ack_at_sender,
  feedback_tick,
  filter_tick,
  evict_tick,
  coord_tick,
  remote_context,
  compromise,
};

struct Event {
  std::int64_t t;
  std::uint32_t node;
  std::uint64_t seq;
  Ev type;
  std::uint32_t a;

  bool operator>(const Event& o) const {
    if (t != o.t) return t > o.t;
    if (node != o.node) return node > o.node;
    return seq > o.seq;
  }
};

// Node ids only order simultaneous events.
constexpr std::uint32_t kControlNode = 0;
constexpr std::uint32_t kVictimNode = 1;
std::uint32_t mbox_node(std::size_t m) { return 100 + static_cast<std::uint32_t>(m); }
std::uint32_t router_node(std::size_t r) { return 10000 + static_cast<std::uint32_t>(r); }
std::uint32_t sender_node(std::size_t s) { return 1000000 + static_cast<std::uint32_t>(s); }

enum class PacketKind : std::uint8_t { data, ack, feedback };

// Links a packet can be on; used for conservation accounting.
enum Link : std::uint8_t { kAccess, kPolicer, kEgress, kBottleneck, kReverse, kLinkCount };
constexpr std::array<const char*, kLinkCount> kLinkNames = {"access", "policer", "mbox_egress",
                                                            "bottleneck", "reverse"};

struct Packet {
  PacketKind kind = PacketKind::data;
  std::uint32_t sender = 0;
  std::uint32_t flow = kNone;
  std::uint32_t seq = 0;
  std::uint32_t ack = 0;
  SimTime echo{};
  std::uint32_t size = 0;
  std::uint32_t period = 0;
  std::uint16_t mbox = 0;
  std::uint16_t router = 0;
  QueueClass cls = QueueClass::none;
  bool has_trailer = false;
  bool encapsulated = false;
  bool live = false;
  Link link = kAccess;
  PortPair ports;
  CapabilityFrame trailer{};
  std::vector<std::uint8_t> feedback;
};

struct Sender {
  std::uint32_t group = 0;
  SenderKind kind = SenderKind::legit_tcp;
  SenderId id;
  std::uint32_t ip = 0;
  std::uint32_t mbox = 0;
  std::uint32_t router = 0;
  bool direct = false;
  SimTime start{};
  SimTime stop{};
  SimTime access_free{};
  SimTime interval{};  // UDP inter-packet gap
  SimTime on{};
  SimTime cycle{};  // on + off, zero for constant-rate senders
  SimTime phase{};
  bool has_stolen = false;
  PortPair stolen;
  std::vector<std::uint32_t> flows;
};

struct Flow {
  std::uint32_t sender = 0;
  TcpSender tx;
  TcpReceiver rx;
  bool timer_pending = false;
  SimTime timer_at{};
};

struct Mbox {
  std::unique_ptr<Policer> policer;
  TwoClassQueue<std::uint32_t> queue;
  bool busy = false;
  std::uint32_t in_service = kNone;
  std::uint32_t router = 0;
  std::vector<SlrSample> slr;
  std::uint64_t slr_cycles = 0;

  explicit Mbox(std::size_t limit) : queue(limit) {}
};

struct Router {
  std::deque<std::uint32_t> fifo;
  bool busy = false;
  std::uint32_t in_service = kNone;
  std::size_t buffer = 0;
};

struct LinkCount {
  std::uint64_t injected = 0;
  std::uint64_t delivered = 0;
  std::uint64_t dropped = 0;
};

struct RawPeriod {
  std::uint32_t sender;
  PeriodSummary s;
};

std::array<std::uint8_t, 16> derive_key(std::uint64_t seed) {
  std::array<std::uint8_t, 16> k{};
  const std::uint64_t a = splitmix64(seed ^ 0x6d706f6c696365ULL);
  const std::uint64_t b = splitmix64(a);
  for (int i = 0; i < 8; ++i) {
    k[i] = static_cast<std::uint8_t>(a >> (8 * i));
    k[8 + i] = static_cast<std::uint8_t>(b >> (8 * i));
  }
  if (a == 0 && b == 0) k[0] = 1;
  return k;
}

}  // namespace

struct Simulator::Impl {
  const Scenario sc;
  Rng rng;
  MacKey key;
  SimTime now{};
  SimTime end{};
  std::uint64_t next_seq = 0;
  std::uint64_t event_count = 0;
  std::priority_queue<Event, std::vector<Event>, std::greater<>> events;

  std::vector<Packet> pool;
  std::vector<std::uint32_t> free_list;

  std::vector<Sender> senders;
  std::vector<Flow> flows;
  std::vector<Mbox> mboxes;
  std::vector<Router> routers;
  std::unordered_map<std::uint32_t, std::uint32_t> mbox_by_addr;
  std::unordered_map<SenderId, std::uint32_t> sender_by_id;
  std::vector<std::string> sender_as;
  std::vector<std::uint32_t> group_of_sender;

  CapabilityHandler chm;
  std::optional<PortFilter> filter;

  SimTime access_delay, mbox_delay, victim_delay, reverse_leg;
  double access_bps, egress_bps, bottleneck_bps;

  std::array<LinkCount, kLinkCount> links{};
  std::vector<RawPeriod> raw_periods;
  std::unordered_map<std::uint64_t, std::uint64_t> delivered_by_period;
  std::vector<std::vector<std::pair<std::uint64_t, std::uint64_t>>> bins;  // packets, bytes
  std::map<std::string, std::uint64_t> counters;
  std::size_t max_frame = 0;
  std::uint64_t priority_violations = 0;

  // Coordination state.
  std::vector<std::optional<AllocationContext>> pending_contexts;
  std::vector<std::pair<std::uint32_t, std::uint32_t>> context_target;
  std::map<std::pair<std::uint32_t, std::uint32_t>, double> detected_at;

  explicit Impl(const Scenario& s)
      : sc(s),
        rng(s.seed, 0),
        key(std::span<const std::uint8_t, 16>(derive_key(s.seed))),
        chm(key, make_chm_config(s)) {
    end = secs(sc.duration_s);
    const auto& t = sc.topology;
    access_delay = ms(t.access_delay_ms);
    mbox_delay = ms(t.mbox_delay_ms);
    victim_delay = ms(t.victim_delay_ms);
    reverse_leg = ms(t.reverse_delay_ms - t.access_delay_ms);
    access_bps = t.access_mbps * 1e6;
    egress_bps = t.egress_mbps() * 1e6;
    bottleneck_bps = t.bottleneck_mbps * 1e6;
    build();
  }

  static ChmConfig make_chm_config(const Scenario& s) {
    ChmConfig c;
    c.replay_window = s.policer.rtt_threshold;
    c.alarm_window = ms(s.filter.alarm_window_ms);
    c.alarm_threshold = s.filter.alarm_threshold;
    return c;
  }

  SimTime tx_time(std::uint32_t bytes, double bps) const {
    return SimTime{std::llround(static_cast<double>(bytes) * 8e9 / bps)};
  }

  void schedule(SimTime t, std::uint32_t node, Ev type, std::uint32_t a = 0) {
    events.push(Event{t.count(), node, next_seq++, type, a});
  }

  std::uint32_t alloc_packet() {
    std::uint32_t id;
    if (!free_list.empty()) {
      id = free_list.back();
      free_list.pop_back();
    } else {
      id = static_cast<std::uint32_t>(pool.size());
      pool.emplace_back();
    }
    Packet& p = pool[id];
    std::vector<std::uint8_t> keep = std::move(p.feedback);
    keep.clear();
    p = Packet{};
    p.feedback = std::move(keep);
    p.live = true;
    return id;
  }

  void free_packet(std::uint32_t id) {
    pool[id].live = false;
    free_list.push_back(id);
  }

  void inject(std::uint32_t id, Link l) {
    pool[id].link = l;
    ++links[l].injected;
  }
  void deliver(std::uint32_t id) { ++links[pool[id].link].delivered; }
  void drop(std::uint32_t id, const char* why) {
    ++links[pool[id].link].dropped;
    ++counters[why];
    free_packet(id);
  }

  // -------------------------------------------------------------------------
  // Setup

  void build() {
    const auto& t = sc.topology;
    const std::size_t routers_n = t.bottlenecks == "per_mbox" ? t.mbox_count : 1;
    const std::size_t rtt_buffer = static_cast<std::size_t>(
        std::ceil(bottleneck_bps * t.rtt_ms() / 1000.0 / (1500.0 * 8.0)));
    routers.resize(routers_n);
    for (auto& r : routers) r.buffer = t.buffer_packets.value_or(std::max<std::size_t>(rtt_buffer, 1));

    // AS ids: sorted labels so the mapping does not depend on group order.
    std::vector<std::uint32_t> mbox_of;
    std::size_t rr = 0;
    for (std::uint32_t gi = 0; gi < sc.senders.size(); ++gi) {
      const auto& g = sc.senders[gi];
      const std::string base_as = g.as.empty() ? g.label : g.as;
      for (std::size_t i = 0; i < g.count; ++i) {
        Sender s;
        s.group = gi;
        s.kind = g.kind;
        s.direct = g.direct;
        s.ip = kSenderBase + static_cast<std::uint32_t>(senders.size());
        s.id = sender_id_from_ipv4(s.ip);
        if (g.mbox) {
          s.mbox = static_cast<std::uint32_t>(*g.mbox);
        } else if (t.assignment == "random") {
          s.mbox = static_cast<std::uint32_t>(rng.next() % t.mbox_count);
        } else {
          s.mbox = static_cast<std::uint32_t>(rr++ % t.mbox_count);
        }
        s.router = routers_n == 1 ? 0 : s.mbox;
        s.start = secs(g.start_s);
        s.stop = g.stop_s < 0.0 ? end : std::min(end, secs(g.stop_s));
        sender_as.push_back(g.as_per_sender ? fmt::format("{}#{}", base_as, i) : base_as);
        sender_by_id.emplace(s.id, static_cast<std::uint32_t>(senders.size()));
        senders.push_back(std::move(s));
      }
    }
    std::set<std::string> labels(sender_as.begin(), sender_as.end());
    std::map<std::string, AsId> as_ids;
    AsId next_as = 1;
    for (const auto& l : labels) as_ids[l] = next_as++;
    auto as_map = std::make_shared<AsMap>();
    for (std::size_t i = 0; i < senders.size(); ++i) {
      (*as_map)[senders[i].id] = as_ids[sender_as[i]];
    }

    std::shared_ptr<PremiumSet> premium;
    if (!sc.policy.premium_ases.empty()) {
      premium = std::make_shared<PremiumSet>();
      for (const auto& a : sc.policy.premium_ases) {
        if (auto it = as_ids.find(a); it != as_ids.end()) premium->ases.insert(it->second);
      }
      premium->reserved_per_member =
          sc.policy.premium_fraction *
          period_capacity_packets(bottleneck_bps, to_seconds(SimTime{sc.policer.detection_period}));
    }
    const auto policy = make_policy(sc.policy.name, premium != nullptr);

    mboxes.reserve(t.mbox_count);
    for (std::size_t m = 0; m < t.mbox_count; ++m) {
      mboxes.emplace_back(t.mbox_buffer_packets);
      const MboxAddr addr{kMboxBase + static_cast<std::uint32_t>(m)};
      mboxes[m].policer =
          std::make_unique<Policer>(addr, key, sc.policer, policy, as_map, premium);
      mboxes[m].router = routers_n == 1 ? 0 : static_cast<std::uint32_t>(m);
      mbox_by_addr[addr.value] = static_cast<std::uint32_t>(m);
    }

    if (sc.filter.enabled) {
      FilterConfig fc;
      fc.control_delay = ms(sc.filter.control_delay_ms);
      fc.grace = ms(t.rtt_ms());
      fc.rotation_period = secs(sc.filter.rotation_s);
      filter.emplace(splitmix64(sc.seed ^ 0x66696c746572ULL), fc, SimTime{0});
    }

    const std::size_t seconds = static_cast<std::size_t>(std::ceil(sc.duration_s)) + 1;
    bins.assign(senders.size(), std::vector<std::pair<std::uint64_t, std::uint64_t>>(seconds));

    // Traffic sources. Each sender draws from its own stream so adding a
    // group does not perturb the others.
    for (std::uint32_t si = 0; si < senders.size(); ++si) {
      Sender& s = senders[si];
      const auto& g = sc.senders[s.group];
      Rng srng(sc.seed, 1000 + si);
      if (g.start_jitter_s > 0.0) s.start += secs(srng.uniform(0.0, g.start_jitter_s));
      if (g.is_tcp()) {
        for (std::size_t k = 0; k < g.flows; ++k) {
          const auto fi = static_cast<std::uint32_t>(flows.size());
          flows.push_back(Flow{si, TcpSender{}, TcpReceiver{}, false, SimTime{}});
          s.flows.push_back(fi);
          const SimTime at = s.start + secs(srng.uniform(0.0, 1.0));
          if (at < s.stop) schedule(at, sender_node(si), Ev::tcp_start, fi);
        }
      } else {
        const std::uint32_t bytes =
            static_cast<std::uint32_t>(kInnerPacket + (s.direct && g.kind == SenderKind::bypass_udp
                                                            ? kEncapOverhead
                                                            : 0));
        s.interval = tx_time(bytes, g.rate_mbps * 1e6);
        if (g.kind == SenderKind::shrew) {
          s.on = secs(g.on_s);
          s.cycle = secs(g.on_s + g.off_s);
          if (g.random_phase) s.phase = SimTime{static_cast<std::int64_t>(srng.uniform() * s.cycle.count())};
        }
        const SimTime at = s.start + SimTime{static_cast<std::int64_t>(srng.uniform() * s.interval.count())};
        if (at < s.stop) schedule(at, sender_node(si), Ev::udp_emit, si);
      }
      if (g.compromise_at_s >= 0.0) schedule(secs(g.compromise_at_s), sender_node(si), Ev::compromise, si);
    }

    schedule(kFeedbackTick, kVictimNode, Ev::feedback_tick);
    if (filter) schedule(kFilterTick, kVictimNode, Ev::filter_tick);
    schedule(SimTime{sc.policer.detection_period}, kControlNode, Ev::evict_tick);
    if (sc.coordination.mode != "none" && mboxes.size() > 1) {
      schedule(secs(sc.coordination.interval_s), kControlNode, Ev::coord_tick);
    }
  }

  // -------------------------------------------------------------------------
  // Event loop

  void run_until(SimTime until) {
    const SimTime stop = std::min(until, end);
    while (!events.empty() && events.top().t < stop.count()) {
      const Event e = events.top();
      events.pop();
      now = SimTime{e.t};
      ++event_count;
      dispatch(e);
    }
    if (now < stop) now = stop;
  }

  void dispatch(const Event& e) {
    switch (e.type) {
      case Ev::udp_emit: udp_emit(e.a); break;
      case Ev::tcp_start: tcp_send(e.a); break;
      case Ev::tcp_timer: tcp_timer(e.a); break;
      case Ev::mbox_arrival: mbox_arrival(e.a); break;
      case Ev::egress_done: egress_done(e.a); break;
      case Ev::router_arrival: router_arrival(e.a); break;
      case Ev::router_done: router_done(e.a); break;
      case Ev::victim_arrival: victim_arrival(e.a); break;
      case Ev::reverse_at_mbox: reverse_at_mbox(e.a); break;
      case Ev::ack_at_sender: ack_at_sender(e.a); break;
      case Ev::feedback_tick: feedback_tick(); break;
      case Ev::filter_tick: filter_tick(); break;
      case Ev::evict_tick: evict_tick(); break;
      case Ev::coord_tick: coord_tick(); break;
      case Ev::remote_context: remote_context(e.a); break;
      case Ev::compromise: compromise(e.a); break;
    }
  }

  // -------------------------------------------------------------------------
  // Senders

  void udp_emit(std::uint32_t si) {
    Sender& s = senders[si];
    if (now >= s.stop) return;
    if (s.cycle.count() > 0) {
      const std::int64_t pos = (now - s.start + s.phase).count() % s.cycle.count();
      if (pos >= s.on.count()) {
        schedule(now + SimTime{s.cycle.count() - pos}, sender_node(si), Ev::udp_emit, si);
        return;
      }
    }
    const std::uint32_t id = alloc_packet();
    Packet& p = pool[id];
    p.sender = si;
    p.size = static_cast<std::uint32_t>(kInnerPacket);
    p.mbox = static_cast<std::uint16_t>(s.mbox);
    p.router = static_cast<std::uint16_t>(s.router);
    if (s.direct) {
      if (s.kind == SenderKind::bypass_udp) {
        p.encapsulated = true;
        p.size += kEncapOverhead;
        p.ports = s.has_stolen ? s.stolen
                               : PortPair{static_cast<std::uint16_t>(rng.next()),
                                          static_cast<std::uint16_t>(rng.next())};
      }
      inject(id, kBottleneck);
      router_arrival(id);
    } else {
      // The access link is uncongested for constant-rate sources, so the
      // emission time doubles as the arrival time at the mbox.
      inject(id, kAccess);
      mbox_arrival(id);
    }
    // Up to 5% jitter keeps sources from phase-locking.
    const double jitter = 1.0 + rng.uniform(-0.05, 0.05);
    schedule(now + SimTime{static_cast<std::int64_t>(s.interval.count() * jitter)},
             sender_node(si), Ev::udp_emit, si);
  }

  void tcp_send(std::uint32_t fi) {
    Flow& f = flows[fi];
    Sender& s = senders[f.sender];
    if (now >= s.stop) return;
    for (const TcpSegment& seg : f.tx.transmit(now)) {
      const std::uint32_t id = alloc_packet();
      Packet& p = pool[id];
      p.sender = f.sender;
      p.flow = fi;
      p.seq = seg.seq;
      p.echo = now;
      p.size = static_cast<std::uint32_t>(kInnerPacket);
      p.mbox = static_cast<std::uint16_t>(s.mbox);
      p.router = static_cast<std::uint16_t>(s.router);
      const SimTime depart = std::max(now, s.access_free) + tx_time(p.size, access_bps);
      s.access_free = depart;
      inject(id, kAccess);
      schedule(depart + access_delay, mbox_node(s.mbox), Ev::mbox_arrival, id);
      if (seg.retransmission) ++counters["tcp_retransmissions"];
    }
    arm_timer(fi);
  }

  void arm_timer(std::uint32_t fi) {
    Flow& f = flows[fi];
    if (!f.tx.timer_armed()) return;
    // A reset RTO can pull the deadline in; the later event goes stale.
    if (f.timer_pending && f.timer_at <= f.tx.deadline()) return;
    f.timer_pending = true;
    f.timer_at = f.tx.deadline();
    schedule(f.timer_at, sender_node(f.sender), Ev::tcp_timer, fi);
  }

  void tcp_timer(std::uint32_t fi) {
    Flow& f = flows[fi];
    if (!f.timer_pending || now != f.timer_at) return;
    f.timer_pending = false;
    if (!f.tx.timer_armed()) return;
    if (f.tx.on_timer(now)) {
      ++counters["tcp_timeouts"];
      tcp_send(fi);
      return;
    }
    arm_timer(fi);
  }

  void compromise(std::uint32_t si) {
    if (!filter) return;
    senders[si].has_stolen = true;
    senders[si].stolen = ports_for(filter->active(now).value);
    ++counters["secret_compromised"];
  }

  // -------------------------------------------------------------------------
  // Mbox

  void mbox_arrival(std::uint32_t id) {
    deliver(id);  // off the access link
    Packet& p = pool[id];
    Mbox& m = mboxes[p.mbox];
    inject(id, kPolicer);
    const Sender& s = senders[p.sender];
    PolicingDecision d = m.policer->handle_packet(s.id, now);
    if (d.rollover) raw_periods.push_back(RawPeriod{p.sender, *d.rollover});
    if (d.slr_sample) {
      m.slr.push_back(SlrSample{m.slr_cycles++, now, *d.slr_sample});
    }
    if (d.verdict == AdmissionVerdict::dropped) {
      drop(id, "policer_drops");
      return;
    }
    deliver(id);
    ++counters[d.verdict == AdmissionVerdict::privileged ? "privileged" : "best_effort_accepted"];
    p.period = d.period_index;
    p.cls = d.queue;
    p.trailer = encode(*d.capability);
    p.has_trailer = true;
    p.size += kCapabilityBytes;
    if (filter) {
      p.encapsulated = true;
      p.size += kEncapOverhead;
    }
    max_frame = std::max<std::size_t>(max_frame, p.size);
    inject(id, kEgress);
    if (!m.queue.push(p.cls, id)) {
      drop(id, "mbox_queue_drops");
      return;
    }
    if (!m.busy) start_egress(p.mbox);
  }

  void start_egress(std::uint32_t mi) {
    Mbox& m = mboxes[mi];
    const bool privileged_waiting = m.queue.privileged_size() > 0;
    auto next = m.queue.pop();
    if (!next) {
      m.busy = false;
      return;
    }
    if (pool[*next].cls == QueueClass::best_effort && privileged_waiting) ++priority_violations;
    m.busy = true;
    m.in_service = *next;
    schedule(now + tx_time(pool[*next].size, egress_bps), mbox_node(mi), Ev::egress_done, mi);
  }

  void egress_done(std::uint32_t mi) {
    Mbox& m = mboxes[mi];
    const std::uint32_t id = m.in_service;
    m.in_service = kNone;
    Packet& p = pool[id];
    if (filter) p.ports = ports_for(filter->active(now).value);
    deliver(id);
    inject(id, kBottleneck);
    schedule(now + mbox_delay, router_node(p.router), Ev::router_arrival, id);
    start_egress(mi);
  }

  // -------------------------------------------------------------------------
  // Filtering point and bottleneck

  void router_arrival(std::uint32_t id) {
    Packet& p = pool[id];
    if (filter) {
      if (!p.encapsulated || filter->check(p.ports, now) == AclVerdict::drop) {
        drop(id, senders[p.sender].direct ? "filter_drops_direct" : "filter_drops_mbox");
        return;
      }
      if (senders[p.sender].direct) ++counters["filter_passed_direct"];
    }
    Router& r = routers[p.router];
    if (!r.busy) {
      r.busy = true;
      r.in_service = id;
      schedule(now + tx_time(p.size, bottleneck_bps), router_node(p.router), Ev::router_done, p.router);
      return;
    }
    if (r.fifo.size() >= r.buffer) {
      drop(id, "bottleneck_drops");
      return;
    }
    r.fifo.push_back(id);
  }

  void router_done(std::uint32_t ri) {
    Router& r = routers[ri];
    const std::uint32_t id = r.in_service;
    schedule(now + victim_delay, kVictimNode, Ev::victim_arrival, id);
    if (r.fifo.empty()) {
      r.busy = false;
      r.in_service = kNone;
      return;
    }
    r.in_service = r.fifo.front();
    r.fifo.pop_front();
    schedule(now + tx_time(pool[r.in_service].size, bottleneck_bps), router_node(ri),
             Ev::router_done, ri);
  }

  // -------------------------------------------------------------------------
  // Victim

  void victim_arrival(std::uint32_t id) {
    deliver(id);
    Packet& p = pool[id];
    const std::optional<CapabilityFrame> trailer =
        p.has_trailer ? std::optional<CapabilityFrame>(p.trailer) : std::nullopt;
    const IngestResult r = chm.ingest_trailer(trailer, now);
    if (r.verdict == IngestVerdict::invalid) {
      ++counters["victim_invalid"];
      if (filter && chm.bypass_alarm(now)) {
        if (filter->rekey(true, now)) {
          ++counters["rekeys_alarm"];
          if (counters.count("first_alarm_ms") == 0) {
            counters["first_alarm_ms"] = static_cast<std::uint64_t>(now.count() / 1000000);
          }
        }
        chm.clear_alarm();
      }
      free_packet(id);
      return;
    }

    const std::uint32_t si = p.sender;
    const auto sec = static_cast<std::size_t>(now.count() / 1000000000LL);
    if (sec < bins[si].size()) {
      ++bins[si][sec].first;
      bins[si][sec].second += kInnerPacket;
    }
    ++delivered_by_period[(std::uint64_t{si} << 32) | p.period];

    if (p.flow == kNone) {
      free_packet(id);
      return;
    }
    // Reuse the packet object as the ACK.
    const std::uint32_t ack_no = flows[p.flow].rx.on_segment(p.seq);
    p.kind = PacketKind::ack;
    p.ack = ack_no;
    p.has_trailer = false;
    p.encapsulated = false;
    p.size = static_cast<std::uint32_t>(kAckPacket);
    p.feedback.clear();
    if (auto fb = chm.piggyback(MboxAddr{kMboxBase + p.mbox}, kMaxCapabilitiesPerAck)) {
      p.feedback = std::move(fb->bytes);
      p.size += static_cast<std::uint32_t>(p.feedback.size());
      ++counters["feedback_piggybacked"];
    }
    inject(id, kReverse);
    schedule(now + reverse_leg, mbox_node(p.mbox), Ev::reverse_at_mbox, id);
  }

  void feedback_tick() {
    for (auto& frame : chm.flush_due(kMaxCapabilitiesPerAck, now)) {
      auto it = mbox_by_addr.find(frame.dest.value);
      if (it == mbox_by_addr.end()) continue;
      const std::uint32_t id = alloc_packet();
      Packet& p = pool[id];
      p.kind = PacketKind::feedback;
      p.mbox = static_cast<std::uint16_t>(it->second);
      p.feedback = std::move(frame.bytes);
      p.size = static_cast<std::uint32_t>(28 + p.feedback.size());
      inject(id, kReverse);
      ++counters["feedback_standalone"];
      schedule(now + reverse_leg, mbox_node(p.mbox), Ev::reverse_at_mbox, id);
    }
    if (now + kFeedbackTick < end) schedule(now + kFeedbackTick, kVictimNode, Ev::feedback_tick);
  }

  void reverse_at_mbox(std::uint32_t id) {
    Packet& p = pool[id];
    if (!p.feedback.empty()) {
      if (auto caps = parse_feedback_frame(p.feedback)) {
        for (auto frame : *caps) mboxes[p.mbox].policer->record_feedback(frame, now);
      }
    }
    if (p.kind == PacketKind::feedback) {
      deliver(id);
      free_packet(id);
      return;
    }
    schedule(now + access_delay, sender_node(p.sender), Ev::ack_at_sender, id);
  }

  void ack_at_sender(std::uint32_t id) {
    deliver(id);
    const Packet& p = pool[id];
    const std::uint32_t fi = p.flow;
    const std::uint32_t ack = p.ack;
    const SimTime echo = p.echo;
    free_packet(id);
    flows[fi].tx.on_ack(ack, echo, now);
    tcp_send(fi);
  }

  // -------------------------------------------------------------------------
  // Control plane

  void filter_tick() {
    if (filter->rekey(false, now)) ++counters["rekeys_scheduled"];
    if (now + kFilterTick < end) schedule(now + kFilterTick, kVictimNode, Ev::filter_tick);
  }

  void evict_tick() {
    for (auto& m : mboxes) counters["evicted"] += m.policer->evict_idle(now);
    const SimTime dp{sc.policer.detection_period};
    if (now + dp < end) schedule(now + dp, kControlNode, Ev::evict_tick);
  }

  SimTime alignment_tolerance(const SlrSeries& a) const {
    if (a.samples.size() < 2) return SimTime{sc.policer.rtt_threshold};
    const auto span = a.samples.back().completed - a.samples.front().completed;
    return span / static_cast<std::int64_t>(2 * (a.samples.size() - 1));
  }

  SlrSeries series(std::uint32_t m) const {
    return SlrSeries{MboxAddr{kMboxBase + m}, mboxes[m].slr};
  }

  std::vector<std::vector<std::size_t>> coordination_groups() {
    const std::size_t n = mboxes.size();
    std::vector<std::pair<std::size_t, std::size_t>> edges;
    if (sc.coordination.mode == "forced") {
      for (std::size_t a = 0; a < n; ++a) {
        for (std::size_t b = a + 1; b < n; ++b) {
          if (mboxes[a].router == mboxes[b].router) edges.emplace_back(a, b);
        }
      }
    } else {
      const CoBottleneckRule rule{sc.coordination.threshold, sc.coordination.rounds};
      for (std::uint32_t a = 0; a < n; ++a) {
        for (std::uint32_t b = a + 1; b < n; ++b) {
          const auto sa = series(a);
          const auto pairs = align_by_time(sa, series(b), alignment_tolerance(sa));
          const auto coefs = windowed_correlations(pairs);
          if (detect_cobottleneck(coefs, rule)) {
            edges.emplace_back(a, b);
            detected_at.try_emplace({a, b}, to_seconds(now));
          }
        }
      }
    }
    return bottleneck_groups(n, edges);
  }

  void coord_tick() {
    for (const auto& group : coordination_groups()) {
      for (std::size_t member : group) {
        std::vector<AllocationContext> others;
        for (std::size_t o : group) {
          if (o != member) others.push_back(mboxes[o].policer->local_context());
        }
        std::optional<AllocationContext> remote;
        if (!others.empty()) remote = aggregate_share(others);
        const auto slot = static_cast<std::uint32_t>(pending_contexts.size());
        pending_contexts.push_back(std::move(remote));
        context_target.emplace_back(slot, static_cast<std::uint32_t>(member));
        schedule(now + kControlDelay, mbox_node(member), Ev::remote_context, slot);
      }
    }
    ++counters["coordination_rounds"];
    const SimTime step = secs(sc.coordination.interval_s);
    if (now + step < end) schedule(now + step, kControlNode, Ev::coord_tick);
  }

  void remote_context(std::uint32_t slot) {
    const std::uint32_t member = context_target[slot].second;
    mboxes[member].policer->set_remote_context(std::move(pending_contexts[slot]));
    pending_contexts[slot].reset();
  }

  // -------------------------------------------------------------------------
  // Results

  std::vector<LinkRecord> link_records() const {
    std::array<std::uint64_t, kLinkCount> live{};
    for (const auto& p : pool) {
      if (p.live) ++live[p.link];
    }
    std::vector<LinkRecord> out;
    for (std::size_t l = 0; l < kLinkCount; ++l) {
      out.push_back(LinkRecord{kLinkNames[l], links[l].injected, links[l].delivered,
                               links[l].dropped, live[l]});
    }
    return out;
  }

  MetricsLog finish() {
    MetricsLog log;
    auto& meta = log.meta;
    meta.scenario = sc.name;
    meta.scenario_hash = scenario_hash(sc);
    meta.seed = sc.seed;
    meta.duration_s = sc.duration_s;
    meta.capacity_bps = bottleneck_bps;
    meta.d_p_s = to_seconds(SimTime{sc.policer.detection_period});
    meta.policy = sc.policy.name + (sc.policy.premium_ases.empty() ? "" : "+premium");
    meta.events = event_count;
    const auto& pp = sc.policer;
    meta.params = {
        {"d_p_s", fmt::format("{}", meta.d_p_s)},
        {"th_cap", fmt::format("{}", pp.cap_threshold)},
        {"th_rtt_s", fmt::format("{}", to_seconds(SimTime{pp.rtt_threshold}))},
        {"th_slr_drop", fmt::format("{}", pp.slr_drop_threshold)},
        {"beta", fmt::format("{}", pp.beta)},
        {"th_lpass", fmt::format("{}", pp.lowpass_threshold)},
        {"s_slr", fmt::format("{}", pp.slr_batch)},
        {"bottleneck_mbps", fmt::format("{}", sc.topology.bottleneck_mbps)},
        {"buffer_packets", fmt::format("{}", routers.front().buffer)},
        {"mbox_count", fmt::format("{}", sc.topology.mbox_count)},
        {"coordination", sc.coordination.mode},
        {"filter", sc.filter.enabled ? "on" : "off"},
    };

    for (std::uint32_t i = 0; i < senders.size(); ++i) {
      const Sender& s = senders[i];
      log.senders.push_back(SenderInfo{i, sc.senders[s.group].label, s.kind, sender_as[i],
                                       s.mbox, s.direct});
    }

    std::sort(raw_periods.begin(), raw_periods.end(), [](const RawPeriod& a, const RawPeriod& b) {
      return a.sender != b.sender ? a.sender < b.sender : a.s.period_index < b.s.period_index;
    });
    const double per_period = period_capacity_packets(bottleneck_bps, meta.d_p_s);
    for (const auto& rp : raw_periods) {
      PeriodRecord r;
      r.sender = rp.sender;
      r.period = rp.s.period_index;
      r.start_s = to_seconds(rp.s.start);
      r.end_s = to_seconds(rp.s.end);
      r.w_r = rp.s.w_r;
      r.n_r = rp.s.n_r;
      r.n_d = rp.s.n_d;
      r.p_id = rp.s.p_id;
      r.v0 = rp.s.v0;
      r.recent_loss = rp.s.recent_loss;
      r.l_r = rp.s.l_r;
      r.n_h = rp.s.n_h;
      r.next_w_r = rp.s.next_w_r;
      auto it = delivered_by_period.find((std::uint64_t{rp.sender} << 32) | rp.s.period_index);
      r.delivered = it == delivered_by_period.end() ? 0 : it->second;
      r.window = window_size(r.w_r, r.delivered);
      r.normalized_window = static_cast<double>(r.window) / per_period;
      log.periods.push_back(r);
    }

    for (std::uint32_t m = 0; m < mboxes.size(); ++m) {
      for (const auto& s : mboxes[m].slr) {
        log.slr.push_back(SlrRecord{m, s.cycle, to_seconds(s.completed), s.slr});
      }
    }
    for (std::uint32_t i = 0; i < senders.size(); ++i) {
      for (std::uint32_t sec = 0; sec < bins[i].size(); ++sec) {
        const auto& b = bins[i][sec];
        if (b.first) log.rates.push_back(RateRecord{i, sec, b.first, b.second});
      }
    }
    log.links = link_records();

    if (mboxes.size() > 1) {
      const CoBottleneckRule rule{sc.coordination.threshold, sc.coordination.rounds};
      for (std::uint32_t a = 0; a < mboxes.size(); ++a) {
        for (std::uint32_t b = a + 1; b < mboxes.size(); ++b) {
          const auto sa = series(a);
          const auto pairs = align_by_time(sa, series(b), alignment_tolerance(sa));
          const auto coefs = windowed_correlations(pairs);
          for (std::uint32_t w = 0; w < coefs.size(); ++w) {
            log.correlations.push_back(CorrelationRecord{a, b, w, coefs[w]});
          }
          DetectionRecord d{a, b, detect_cobottleneck(coefs, rule), -1.0};
          if (auto it = detected_at.find({a, b}); it != detected_at.end()) d.detected_at_s = it->second;
          log.detections.push_back(d);
        }
      }
    }

    log.counters = counters;
    std::uint64_t feedback_accepted = 0, feedback_stale = 0;
    for (const auto& m : mboxes) {
      feedback_accepted += m.policer->feedback_counters().accepted;
      feedback_stale += m.policer->feedback_counters().stale_period;
    }
    log.counters["feedback_accepted"] = feedback_accepted;
    log.counters["feedback_stale_period"] = feedback_stale;
    log.counters["chm_distinct"] = chm.counters().distinct;
    log.counters["chm_common"] = chm.counters().common;
    log.counters["chm_invalid"] = chm.counters().invalid;
    log.counters["max_mbox_frame"] = max_frame;
    log.counters["priority_violations"] = priority_violations;
    if (filter) log.counters["filter_epoch"] = filter->epoch(now);
    return log;
  }
};

Simulator::Simulator(const Scenario& scenario) : impl_(std::make_unique<Impl>(scenario)) {}
Simulator::~Simulator() = default;

void Simulator::run_until(SimTime until) { impl_->run_until(until); }
void Simulator::run() { impl_->run_until(impl_->end); }
SimTime Simulator::now() const { return impl_->now; }
std::uint64_t Simulator::events() const { return impl_->event_count; }
MetricsLog Simulator::finish() { return impl_->finish(); }
std::size_t Simulator::mbox_count() const { return impl_->mboxes.size(); }
const Policer& Simulator::policer(std::size_t mbox) const { return *impl_->mboxes.at(mbox).policer; }
const CapabilityHandler& Simulator::chm() const { return impl_->chm; }
const PortFilter* Simulator::filter() const {
  return impl_->filter ? &*impl_->filter : nullptr;
}
std::vector<LinkRecord> Simulator::link_counters() const { return impl_->link_records(); }
std::size_t Simulator::max_mbox_frame() const { return impl_->max_frame; }
std::uint64_t Simulator::priority_violations() const { return impl_->priority_violations; }

MetricsLog run_simulation(const Scenario& scenario) {
  Simulator sim(scenario);
  sim.run();
  return sim.finish();
}

}  // namespace mpolice
