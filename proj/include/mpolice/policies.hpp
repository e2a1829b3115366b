#pragma once

// Bandwidth allocation policies: each computes a sender's W_R for the next
// detection period.

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>

#include "mpolice/itable.hpp"

namespace mpolice {

using AsId = std::uint32_t;

/// Sender-to-AS mapping supplied by the scenario topology.
using AsMap = std::unordered_map<SenderId, AsId>;

/// AS id used for senders missing from the map; high bit marks it synthetic.
inline AsId synthetic_as(SenderId f) {
  return 0x80000000U | static_cast<AsId>(f.value & 0x7fffffffU);
}

/// Premium clients and their per-member reservation (packets per period).
struct PremiumSet {
  std::unordered_set<SenderId> senders;
  std::unordered_set<AsId> ases;
  double reserved_per_member = 0.0;

  bool contains(SenderId f, AsId as) const {
    return senders.count(f) != 0 || ases.count(as) != 0;
  }
  bool empty() const { return senders.empty() && ases.empty(); }
};

struct AllocationContext {
  double n_total_size = 0.0;  // sum of n_h over active senders
  std::size_t sender_count = 0;
  std::shared_ptr<const AsMap> as_map;
  std::map<AsId, std::size_t> per_as_counts;  // active senders per AS
  std::shared_ptr<const PremiumSet> premium;
  std::size_t premium_active = 0;  // active senders in the premium set

  AsId as_of(SenderId f) const;
  bool is_premium(SenderId f) const;
};

/// Sums the aggregates of several contexts. Mapping tables are taken from
/// the first context.
AllocationContext merge_contexts(const AllocationContext& a, const AllocationContext& b);

std::uint32_t natural_share(const FlowEntry& entry);
std::uint32_t per_sender_fairshare(const AllocationContext& ctx);
std::uint32_t per_as_fairshare(const AllocationContext& ctx, const FlowEntry& entry);
std::uint32_t per_as_per_sender_fairshare(const AllocationContext& ctx,
                                          const FlowEntry& entry);

class AllocationPolicy {
 public:
  virtual ~AllocationPolicy() = default;
  virtual std::uint32_t allocate(const AllocationContext& ctx,
                                 const FlowEntry& entry) const = 0;
  virtual std::string name() const = 0;
};

/// Reserved share for premium members; everybody else gets the base policy
/// computed over what is left after reservations.
std::uint32_t premium_overlay(const AllocationPolicy& base, const AllocationContext& ctx,
                              const FlowEntry& entry);

/// Builds a policy by name: natural | per_sender | per_as | per_as_per_sender.
/// Throws std::invalid_argument for unknown names.
std::shared_ptr<const AllocationPolicy> make_policy(std::string_view name,
                                                    bool premium = false);

}  // namespace mpolice
