#include "mpolice/policer.hpp"

#include <algorithm>
#include <ostream>
#include <stdexcept>
#include <string>

namespace mpolice {

void PolicerParams::validate() const {
  auto fail = [](const std::string& field, const std::string& why) {
    throw std::invalid_argument("policer." + field + ": " + why);
  };
  if (detection_period.count() <= 0) fail("d_p", "must be positive");
  if (rtt_threshold.count() <= 0) fail("th_rtt", "must be positive");
  if (rtt_threshold >= detection_period) fail("th_rtt", "must be shorter than d_p");
  if (cap_threshold == 0 || cap_threshold > kVerificationBits) {
    fail("th_cap", "must be in [1, 128]");
  }
  if (!(slr_drop_threshold > 0.0 && slr_drop_threshold < 1.0)) {
    fail("th_slr_drop", "must be in (0, 1)");
  }
  if (!(beta >= 0.0 && beta < 1.0)) fail("beta", "must be in [0, 1)");
  if (lowpass_threshold == 0) fail("th_lpass", "must be positive");
  if (slr_batch == 0) fail("s_slr", "must be positive");
}

LossEstimate compute_llr(const FlowEntry& entry, const PolicerParams& params) {
  LossEstimate est;
  est.downstream_losses = downstream_loss(entry);
  if (entry.n_r < params.lowpass_threshold) return est;
  est.recent_loss = (est.downstream_losses + entry.n_d) / static_cast<double>(entry.n_r);
  est.recent_loss = std::clamp(est.recent_loss, 0.0, 1.0);
  return est;
}

bool best_effort_handling(FlowEntry& entry, double slr, const PolicerParams& params) {
  if (slr < params.slr_drop_threshold && entry.l_r < params.slr_drop_threshold) {
    return true;
  }
  ++entry.n_d;
  return false;
}

// ---------------------------------------------------------------------------
// CTable

void CTable::offer(const DistinctCapability& cap, SimTime now) {
  if (entries_.size() >= capacity_) return;
  const Key key{cap.f, cap.t_a, cap.p_id};
  if (!entries_.emplace(key, received_.size()).second) return;
  received_.push_back(false);
  added_at_.push_back(now);
  if (entries_.size() == capacity_) t_slr_ = now;
}

bool CTable::mark_received(const DistinctCapability& cap) {
  auto it = entries_.find(Key{cap.f, cap.t_a, cap.p_id});
  if (it == entries_.end()) return false;
  received_[it->second] = true;
  return true;
}

std::size_t CTable::not_received() const {
  return static_cast<std::size_t>(std::count(received_.begin(), received_.end(), false));
}

std::optional<double> CTable::maybe_complete(SimTime now, SimTime rtt_threshold,
                                             SimTime stale_after) {
  if (entries_.empty()) return std::nullopt;
  if (entries_.size() == capacity_) {
    if (!(t_slr_ && now > *t_slr_ + rtt_threshold)) return std::nullopt;
  } else if (!(now - added_at_.front() > stale_after)) {
    return std::nullopt;
  }
  slr_ = static_cast<double>(not_received()) / static_cast<double>(entries_.size());
  reset();
  return slr_;
}

void CTable::reset() {
  entries_.clear();
  received_.clear();
  added_at_.clear();
  t_slr_.reset();
}

// ---------------------------------------------------------------------------
// Policer

Policer::Policer(MboxAddr addr, MacKey key, PolicerParams params,
                 std::shared_ptr<const AllocationPolicy> policy,
                 std::shared_ptr<const AsMap> as_map,
                 std::shared_ptr<const PremiumSet> premium)
    : addr_(addr),
      key_(std::move(key)),
      params_(params),
      policy_(std::move(policy)),
      ctable_(params.slr_batch) {
  params_.validate();
  if (!policy_) throw std::invalid_argument("policer needs an allocation policy");
  ctx_.as_map = std::move(as_map);
  ctx_.premium = std::move(premium);
}

FlowEntry& Policer::insert_entry(SenderId f, SimTime now) { return retrieve(f, now); }

FlowEntry& Policer::retrieve(SenderId f, SimTime now) {
  auto [it, inserted] = table_.try_emplace(f);
  FlowEntry& e = it->second;
  if (inserted) {
    e.f = f;
    e.period_start = now;
    e.last_seen = now;
    e.as_id = ctx_.as_of(f);
    ++ctx_.sender_count;
    ++ctx_.per_as_counts[e.as_id];
    if (ctx_.is_premium(f)) ++ctx_.premium_active;
  }
  return e;
}

const FlowEntry* Policer::find(SenderId f) const {
  auto it = table_.find(f);
  return it == table_.end() ? nullptr : &it->second;
}

PolicingDecision Policer::handle_packet(SenderId sender, SimTime now) {
  PolicingDecision d;
  d.slr_sample = ctable_.maybe_complete(now, SimTime{params_.rtt_threshold},
                                        SimTime{params_.detection_period});

  FlowEntry& e = retrieve(sender, now);
  e.last_seen = now;
  ++e.n_r;
  d.period_index = e.period_index;

  if (e.n_r < e.w_r) {
    d.capability = capability_handling(e, now);
    d.verdict = AdmissionVerdict::privileged;
    d.queue = QueueClass::privileged;
  } else if (best_effort_handling(e, ctable_.slr(), params_)) {
    d.capability = capability_handling(e, now);
    d.verdict = AdmissionVerdict::best_effort_accepted;
    d.queue = QueueClass::best_effort;
  }

  if (now - e.period_start > SimTime{params_.detection_period}) {
    d.rollover = itable_handling(e, now);
  }
  return d;
}

Capability Policer::capability_handling(FlowEntry& e, SimTime now) {
  const SimTime window = SimTime{params_.detection_period} - SimTime{params_.rtt_threshold};
  if (e.p_id < params_.cap_threshold && now - e.period_start < window) {
    ++e.p_id;
    DistinctCapability cap = generate_distinct(key_, addr_.value, to_wire_ms(now), e.p_id,
                                               e.f.value, to_wire_ms(e.period_start));
    ctable_.offer(cap, now);
    return cap;
  }
  return generate_common(key_, addr_.value, to_wire_ms(now));
}

PeriodSummary Policer::itable_handling(FlowEntry& e, SimTime now) {
  const LossEstimate est = compute_llr(e, params_);

  PeriodSummary s;
  s.f = e.f;
  s.period_index = e.period_index;
  s.start = e.period_start;
  s.end = now;
  s.w_r = e.w_r;
  s.n_r = e.n_r;
  s.n_d = e.n_d;
  s.p_id = e.p_id;
  s.v0 = missing_feedback(e);
  s.recent_loss = est.recent_loss;

  e.l_r = (1.0 - params_.beta) * est.recent_loss + params_.beta * e.l_r;

  ctx_.n_total_size -= e.n_h;
  e.n_h = std::max(0.0, static_cast<double>(e.n_r) - e.n_d - est.downstream_losses);
  ctx_.n_total_size = std::max(0.0, ctx_.n_total_size + e.n_h);

  if (remote_) {
    e.w_r = policy_->allocate(merge_contexts(ctx_, *remote_), e);
  } else {
    e.w_r = policy_->allocate(ctx_, e);
  }

  e.w_v.reset();
  e.p_id = 0;
  e.n_r = 0;
  e.n_d = 0;
  e.period_start = now;
  ++e.period_index;

  s.l_r = e.l_r;
  s.n_h = e.n_h;
  s.next_w_r = e.w_r;
  return s;
}

AllocationContext Policer::effective_context() const {
  if (!remote_) return ctx_;
  return merge_contexts(ctx_, *remote_);
}

void Policer::record_feedback(std::span<const std::uint8_t> frame, SimTime) {
  const DecodeResult r = decode(frame, key_);
  if (const auto* err = std::get_if<DecodeError>(&r)) {
    if (*err == DecodeError::mac_mismatch) {
      ++counters_.forged;
    } else {
      ++counters_.malformed;
    }
    return;
  }
  const auto* cap = std::get_if<DistinctCapability>(&std::get<Capability>(r));
  if (cap == nullptr) {
    ++counters_.common;
    return;
  }
  if (cap->ip_mp != addr_.value) {
    ++counters_.foreign_mbox;
    return;
  }
  // The SLR batch is mbox-wide, so it accepts late feedback across periods.
  ctable_.mark_received(*cap);

  auto it = table_.find(SenderId{cap->f});
  if (it == table_.end()) {
    ++counters_.unknown_sender;
    return;
  }
  FlowEntry& e = it->second;
  if (cap->t_a != to_wire_ms(e.period_start) || cap->p_id == 0 || cap->p_id > e.p_id) {
    ++counters_.stale_period;
    return;
  }
  e.w_v.set(cap->p_id - 1U);
  ++counters_.accepted;
}

void Policer::forget(const FlowEntry& e) {
  ctx_.n_total_size = std::max(0.0, ctx_.n_total_size - e.n_h);
  if (ctx_.sender_count > 0) --ctx_.sender_count;
  if (auto it = ctx_.per_as_counts.find(e.as_id); it != ctx_.per_as_counts.end()) {
    if (--it->second == 0) ctx_.per_as_counts.erase(it);
  }
  if (ctx_.is_premium(e.f) && ctx_.premium_active > 0) --ctx_.premium_active;
}

std::size_t Policer::evict_idle(SimTime now) {
  const SimTime limit = params_.idle_eviction();
  std::vector<SenderId> idle;
  for (const auto& [f, e] : table_) {
    if (now - e.last_seen > limit) idle.push_back(f);
  }
  // Fixed order keeps the floating-point aggregate independent of hashing.
  std::sort(idle.begin(), idle.end());
  for (SenderId f : idle) {
    auto it = table_.find(f);
    forget(it->second);
    table_.erase(it);
  }
  return idle.size();
}

void Policer::dump_itable(std::ostream& out) const {
  std::vector<const FlowEntry*> rows;
  rows.reserve(table_.size());
  for (const auto& [f, e] : table_) rows.push_back(&e);
  std::sort(rows.begin(), rows.end(),
            [](const FlowEntry* a, const FlowEntry* b) { return a->f < b->f; });
  out << "# f\tt_a_ms\tp_id\tn_r\tn_d\tw_r\tw_v_set\tl_r\tn_h\n";
  for (const FlowEntry* e : rows) {
    out << e->f.value << '\t' << to_wire_ms(e->period_start) << '\t' << e->p_id << '\t'
        << e->n_r << '\t' << e->n_d << '\t' << e->w_r << '\t' << e->w_v.count() << '\t'
        << e->l_r << '\t' << e->n_h << '\n';
  }
}

}  // namespace mpolice
