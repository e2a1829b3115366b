#include "mpolice/policies.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace mpolice {

namespace {

std::uint32_t floor_packets(double v) {
  if (!(v > 0.0)) return 0;
  const double f = std::floor(v);
  return f >= 4294967295.0 ? 0xffffffffU : static_cast<std::uint32_t>(f);
}

}  // namespace

AsId AllocationContext::as_of(SenderId f) const {
  if (as_map) {
    if (auto it = as_map->find(f); it != as_map->end()) return it->second;
  }
  return synthetic_as(f);
}

bool AllocationContext::is_premium(SenderId f) const {
  return premium && premium->contains(f, as_of(f));
}

AllocationContext merge_contexts(const AllocationContext& a, const AllocationContext& b) {
  AllocationContext out = a;
  out.n_total_size += b.n_total_size;
  out.sender_count += b.sender_count;
  out.premium_active += b.premium_active;
  for (const auto& [as, n] : b.per_as_counts) out.per_as_counts[as] += n;
  return out;
}

std::uint32_t natural_share(const FlowEntry& entry) {
  return floor_packets(static_cast<double>(entry.n_r) - entry.n_d - downstream_loss(entry));
}

std::uint32_t per_sender_fairshare(const AllocationContext& ctx) {
  if (ctx.sender_count == 0) return 0;
  return floor_packets(ctx.n_total_size / static_cast<double>(ctx.sender_count));
}

std::uint32_t per_as_fairshare(const AllocationContext& ctx, const FlowEntry& entry) {
  // Members of an AS split its budget equally, which makes this coincide
  // with the hierarchical policy.
  return per_as_per_sender_fairshare(ctx, entry);
}

std::uint32_t per_as_per_sender_fairshare(const AllocationContext& ctx,
                                          const FlowEntry& entry) {
  std::size_t active_ases = 0;
  for (const auto& [as, n] : ctx.per_as_counts) {
    if (n > 0) ++active_ases;
  }
  const AsId as = ctx.as_of(entry.f);
  auto it = ctx.per_as_counts.find(as);
  const std::size_t members = (it == ctx.per_as_counts.end() || it->second == 0)
                                  ? 1
                                  : it->second;
  if (it == ctx.per_as_counts.end() || it->second == 0) ++active_ases;
  const std::uint32_t as_budget =
      floor_packets(ctx.n_total_size / static_cast<double>(active_ases));
  return as_budget / static_cast<std::uint32_t>(members);
}

std::uint32_t premium_overlay(const AllocationPolicy& base, const AllocationContext& ctx,
                              const FlowEntry& entry) {
  if (!ctx.premium || ctx.premium->empty()) return base.allocate(ctx, entry);
  const double reserved = ctx.premium->reserved_per_member;
  if (ctx.is_premium(entry.f)) {
    return std::max(floor_packets(reserved), base.allocate(ctx, entry));
  }
  AllocationContext rest = ctx;
  rest.n_total_size =
      std::max(0.0, ctx.n_total_size - reserved * static_cast<double>(ctx.premium_active));
  rest.sender_count = ctx.sender_count > ctx.premium_active
                          ? ctx.sender_count - ctx.premium_active
                          : 0;
  for (AsId as : ctx.premium->ases) rest.per_as_counts.erase(as);
  return base.allocate(rest, entry);
}

namespace {

class NaturalShare final : public AllocationPolicy {
 public:
  std::uint32_t allocate(const AllocationContext&, const FlowEntry& e) const override {
    return natural_share(e);
  }
  std::string name() const override { return "natural"; }
};

class PerSenderFairshare final : public AllocationPolicy {
 public:
  std::uint32_t allocate(const AllocationContext& ctx, const FlowEntry&) const override {
    return per_sender_fairshare(ctx);
  }
  std::string name() const override { return "per_sender"; }
};

class PerAsFairshare final : public AllocationPolicy {
 public:
  std::uint32_t allocate(const AllocationContext& ctx, const FlowEntry& e) const override {
    return per_as_fairshare(ctx, e);
  }
  std::string name() const override { return "per_as"; }
};

class PerAsPerSenderFairshare final : public AllocationPolicy {
 public:
  std::uint32_t allocate(const AllocationContext& ctx, const FlowEntry& e) const override {
    return per_as_per_sender_fairshare(ctx, e);
  }
  std::string name() const override { return "per_as_per_sender"; }
};

class PremiumOverlay final : public AllocationPolicy {
 public:
  explicit PremiumOverlay(std::shared_ptr<const AllocationPolicy> base)
      : base_(std::move(base)) {}
  std::uint32_t allocate(const AllocationContext& ctx, const FlowEntry& e) const override {
    return premium_overlay(*base_, ctx, e);
  }
  std::string name() const override { return base_->name() + "+premium"; }

 private:
  std::shared_ptr<const AllocationPolicy> base_;
};

}  // namespace

std::shared_ptr<const AllocationPolicy> make_policy(std::string_view name, bool premium) {
  std::shared_ptr<const AllocationPolicy> base;
  if (name == "natural") {
    base = std::make_shared<NaturalShare>();
  } else if (name == "per_sender") {
    base = std::make_shared<PerSenderFairshare>();
  } else if (name == "per_as") {
    base = std::make_shared<PerAsFairshare>();
  } else if (name == "per_as_per_sender") {
    base = std::make_shared<PerAsPerSenderFairshare>();
  } else {
    throw std::invalid_argument("unknown policy '" + std::string(name) + "'");
  }
  if (premium) return std::make_shared<PremiumOverlay>(std::move(base));
  return base;
}

}  // namespace mpolice
