#pragma once

// Per-mbox traffic policer: iTable maintenance, loss-rate inference from
// capability feedback, privileged/best-effort admission and the two-class
// egress queue.

#include <chrono>
#include <cstdint>
#include <deque>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <unordered_map>
#include <vector>

#include "mpolice/capability.hpp"
#include "mpolice/itable.hpp"
#include "mpolice/policies.hpp"
#include "mpolice/types.hpp"

namespace mpolice {

struct PolicerParams {
  std::chrono::milliseconds detection_period{4000};  // D_p
  std::uint16_t cap_threshold = 128;                 // Th_cap
  std::chrono::milliseconds rtt_threshold{1000};     // Th_rtt
  double slr_drop_threshold = 0.05;                  // Th_slr^drop
  double beta = 0.8;                                 // weight of history in L_R
  std::uint32_t lowpass_threshold = 5;               // Th_lpass
  std::size_t slr_batch = 100;                       // S_slr

  /// Throws std::invalid_argument naming the offending field.
  void validate() const;

  SimTime idle_eviction() const { return 10 * SimTime{detection_period}; }
};

struct LossEstimate {
  double downstream_losses = 0.0;  // N_loss^dstream
  double recent_loss = 0.0;        // this period's loss rate after low-pass
};

/// Loss rate for the period just ended.
LossEstimate compute_llr(const FlowEntry& entry, const PolicerParams& params);

/// Accept iff both the mbox SLR and the sender's LLR are strictly below the
/// drop threshold. Increments n_d on drop.
bool best_effort_handling(FlowEntry& entry, double slr, const PolicerParams& params);

/// Batch of outstanding distinct capabilities used to estimate the SLR.
class CTable {
 public:
  explicit CTable(std::size_t capacity) : capacity_(capacity) {}

  /// Adds a capability while the batch is not full; stamps the fill time
  /// when the add completes the batch.
  void offer(const DistinctCapability& cap, SimTime now);

  /// Marks a resident capability as returned. Returns false if not resident.
  bool mark_received(const DistinctCapability& cap);

  /// Closes the cycle when the fill deadline has passed, or when a partial
  /// batch has gone stale. Returns the new SLR when a cycle closes.
  std::optional<double> maybe_complete(SimTime now, SimTime rtt_threshold,
                                       SimTime stale_after);

  double slr() const { return slr_; }
  std::size_t size() const { return entries_.size(); }
  std::size_t capacity() const { return capacity_; }
  std::size_t not_received() const;
  std::optional<SimTime> fill_time() const { return t_slr_; }

 private:
  struct Key {
    std::uint64_t f;
    std::uint32_t t_a;
    std::uint16_t p_id;
    friend bool operator==(const Key&, const Key&) = default;
  };
  struct KeyHash {
    std::size_t operator()(const Key& k) const noexcept {
      return static_cast<std::size_t>(k.f ^ (std::uint64_t{k.t_a} << 16) ^ k.p_id);
    }
  };

  std::size_t capacity_;
  std::vector<bool> received_;
  std::vector<SimTime> added_at_;
  std::unordered_map<Key, std::size_t, KeyHash> entries_;
  std::optional<SimTime> t_slr_;
  double slr_ = 0.0;

  void reset();
};

enum class AdmissionVerdict { privileged, best_effort_accepted, dropped };
enum class QueueClass { privileged, best_effort, none };

/// Statistics of a detection period, emitted when it rolls over.
struct PeriodSummary {
  SenderId f;
  std::uint32_t period_index = 0;
  SimTime start{};
  SimTime end{};
  std::uint32_t w_r = 0;  // window in force during the period
  std::uint32_t n_r = 0;
  std::uint32_t n_d = 0;
  std::uint16_t p_id = 0;
  std::uint32_t v0 = 0;
  double recent_loss = 0.0;
  double l_r = 0.0;       // after the EWMA update
  double n_h = 0.0;       // delivered estimate
  std::uint32_t next_w_r = 0;
};

struct PolicingDecision {
  AdmissionVerdict verdict = AdmissionVerdict::dropped;
  QueueClass queue = QueueClass::none;
  std::optional<Capability> capability;
  std::uint32_t period_index = 0;            // period the packet was counted in
  std::optional<PeriodSummary> rollover;     // set when this packet closed a period
  std::optional<double> slr_sample;          // set when an SLR cycle closed
};

struct FeedbackCounters {
  std::uint64_t accepted = 0;
  std::uint64_t common = 0;
  std::uint64_t forged = 0;
  std::uint64_t malformed = 0;
  std::uint64_t stale_period = 0;
  std::uint64_t unknown_sender = 0;
  std::uint64_t foreign_mbox = 0;
};

class Policer {
 public:
  Policer(MboxAddr addr, MacKey key, PolicerParams params,
          std::shared_ptr<const AllocationPolicy> policy,
          std::shared_ptr<const AsMap> as_map = nullptr,
          std::shared_ptr<const PremiumSet> premium = nullptr);

  /// Runs the admission procedure for one packet from `sender` at `now`.
  PolicingDecision handle_packet(SenderId sender, SimTime now);

  /// Consumes one returned capability frame.
  void record_feedback(std::span<const std::uint8_t> frame, SimTime now);

  /// Aggregates contributed by other mboxes of the same co-bottleneck group.
  void set_remote_context(std::optional<AllocationContext> remote) {
    remote_ = std::move(remote);
  }
  const AllocationContext& local_context() const { return ctx_; }
  AllocationContext effective_context() const;

  /// Drops entries idle longer than ten detection periods.
  std::size_t evict_idle(SimTime now);

  double slr() const { return ctable_.slr(); }
  const CTable& ctable() const { return ctable_; }
  const FlowEntry* find(SenderId f) const;
  std::size_t table_size() const { return table_.size(); }
  const FeedbackCounters& feedback_counters() const { return counters_; }
  const PolicerParams& params() const { return params_; }
  MboxAddr addr() const { return addr_; }

  /// Preloads an entry (tests and benchmarks).
  FlowEntry& insert_entry(SenderId f, SimTime now);

  /// One line per entry, tab-separated, ordered by sender id.
  void dump_itable(std::ostream& out) const;

 private:
  Capability capability_handling(FlowEntry& entry, SimTime now);
  PeriodSummary itable_handling(FlowEntry& entry, SimTime now);
  FlowEntry& retrieve(SenderId f, SimTime now);
  void forget(const FlowEntry& e);

  MboxAddr addr_;
  MacKey key_;
  PolicerParams params_;
  std::shared_ptr<const AllocationPolicy> policy_;
  std::unordered_map<SenderId, FlowEntry> table_;
  CTable ctable_;
  AllocationContext ctx_;
  std::optional<AllocationContext> remote_;
  FeedbackCounters counters_;
};

/// Two FIFO queues served with strict priority.
template <typename T>
class TwoClassQueue {
 public:
  explicit TwoClassQueue(std::size_t limit_per_class = SIZE_MAX) : limit_(limit_per_class) {}

  /// Returns false (and drops the item) if the class is at its limit.
  bool push(QueueClass cls, T item) {
    auto& q = cls == QueueClass::privileged ? privileged_ : best_effort_;
    if (cls == QueueClass::none || q.size() >= limit_) return false;
    q.push_back(std::move(item));
    return true;
  }

  std::optional<T> pop() {
    auto& q = !privileged_.empty() ? privileged_ : best_effort_;
    if (q.empty()) return std::nullopt;
    T item = std::move(q.front());
    q.pop_front();
    return item;
  }

  /// Serves up to `budget` items.
  std::vector<T> dequeue(std::size_t budget) {
    std::vector<T> out;
    while (out.size() < budget) {
      auto item = pop();
      if (!item) break;
      out.push_back(std::move(*item));
    }
    return out;
  }

  std::size_t privileged_size() const { return privileged_.size(); }
  std::size_t best_effort_size() const { return best_effort_.size(); }
  bool empty() const { return privileged_.empty() && best_effort_.empty(); }

 private:
  std::size_t limit_;
  std::deque<T> privileged_;
  std::deque<T> best_effort_;
};

}  // namespace mpolice
