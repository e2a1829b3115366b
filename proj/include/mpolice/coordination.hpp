#pragma once

// Multi-mbox support: shared-bottleneck detection from correlated SLR
// series, and merging allocation aggregates across a co-bottleneck group.

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "mpolice/policies.hpp"
#include "mpolice/types.hpp"

namespace mpolice {

inline constexpr std::size_t kCorrelationWindow = 100;

struct SlrSample {
  std::uint64_t cycle = 0;
  SimTime completed{};
  double slr = 0.0;
};

struct SlrSeries {
  MboxAddr mbox;
  std::vector<SlrSample> samples;
};

/// Pearson correlation. Zero when either side has zero variance. Throws
/// std::invalid_argument on mismatched or too-short inputs.
double slr_correlation(std::span<const double> a, std::span<const double> b);

/// Pairs samples of two asynchronous series by nearest completion time,
/// keeping pairs closer than `tolerance`. Each sample is used at most once.
std::vector<std::pair<double, double>> align_by_time(const SlrSeries& a, const SlrSeries& b,
                                                     SimTime tolerance);

/// One coefficient per consecutive block of `window` aligned pairs.
std::vector<double> windowed_correlations(const std::vector<std::pair<double, double>>& pairs,
                                          std::size_t window = kCorrelationWindow);

struct CoBottleneckRule {
  double threshold = 0.5;
  std::size_t rounds = 3;
};

/// True when the last `rounds` coefficients all exceed the threshold.
bool detect_cobottleneck(std::span<const double> history, CoBottleneckRule rule = {});

/// Merged aggregates for every member of a co-bottleneck group.
AllocationContext aggregate_share(std::span<const AllocationContext> locals);

/// Partitions mboxes into groups given a symmetric "shares a bottleneck"
/// relation (connected components). Groups are ordered by smallest member.
std::vector<std::vector<std::size_t>> bottleneck_groups(
    std::size_t mbox_count, const std::vector<std::pair<std::size_t, std::size_t>>& edges);

}  // namespace mpolice
