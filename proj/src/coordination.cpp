#include "mpolice/coordination.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace mpolice {

double slr_correlation(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("correlation windows differ in length");
  if (a.size() < 2) throw std::invalid_argument("correlation needs at least two samples");
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double cov = 0.0, va = 0.0, vb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - ma;
    const double db = b[i] - mb;
    cov += da * db;
    va += da * da;
    vb += db * db;
  }
  if (va <= 0.0 || vb <= 0.0) return 0.0;
  return std::clamp(cov / (std::sqrt(va) * std::sqrt(vb)), -1.0, 1.0);
}

std::vector<std::pair<double, double>> align_by_time(const SlrSeries& a, const SlrSeries& b,
                                                     SimTime tolerance) {
  std::vector<std::pair<double, double>> out;
  std::size_t j = 0;
  for (const SlrSample& s : a.samples) {
    while (j < b.samples.size() && b.samples[j].completed < s.completed - tolerance) ++j;
    if (j == b.samples.size()) break;
    // Prefer the closer of b[j] and b[j+1].
    std::size_t best = j;
    if (j + 1 < b.samples.size()) {
      const auto d0 = std::chrono::abs(b.samples[j].completed - s.completed);
      const auto d1 = std::chrono::abs(b.samples[j + 1].completed - s.completed);
      if (d1 < d0) best = j + 1;
    }
    if (std::chrono::abs(b.samples[best].completed - s.completed) <= tolerance) {
      out.emplace_back(s.slr, b.samples[best].slr);
      j = best + 1;
    }
  }
  return out;
}

std::vector<double> windowed_correlations(const std::vector<std::pair<double, double>>& pairs,
                                          std::size_t window) {
  std::vector<double> out;
  std::vector<double> xa(window), xb(window);
  for (std::size_t start = 0; start + window <= pairs.size(); start += window) {
    for (std::size_t i = 0; i < window; ++i) {
      xa[i] = pairs[start + i].first;
      xb[i] = pairs[start + i].second;
    }
    out.push_back(slr_correlation(xa, xb));
  }
  return out;
}

bool detect_cobottleneck(std::span<const double> history, CoBottleneckRule rule) {
  if (!(rule.threshold > 0.0 && rule.threshold < 1.0) || rule.rounds == 0) {
    throw std::invalid_argument("co-bottleneck rule needs threshold in (0,1), rounds >= 1");
  }
  if (history.size() < rule.rounds) return false;
  return std::all_of(history.end() - static_cast<std::ptrdiff_t>(rule.rounds), history.end(),
                     [&](double c) { return c > rule.threshold; });
}

AllocationContext aggregate_share(std::span<const AllocationContext> locals) {
  if (locals.empty()) return {};
  AllocationContext merged = locals.front();
  for (std::size_t i = 1; i < locals.size(); ++i) merged = merge_contexts(merged, locals[i]);
  return merged;
}

std::vector<std::vector<std::size_t>> bottleneck_groups(
    std::size_t mbox_count, const std::vector<std::pair<std::size_t, std::size_t>>& edges) {
  std::vector<std::size_t> parent(mbox_count);
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  for (auto [u, v] : edges) {
    if (u >= mbox_count || v >= mbox_count) throw std::out_of_range("mbox index");
    const auto ru = find(u), rv = find(v);
    if (ru != rv) parent[std::max(ru, rv)] = std::min(ru, rv);
  }
  std::vector<std::vector<std::size_t>> groups;
  std::vector<std::size_t> slot(mbox_count, SIZE_MAX);
  for (std::size_t i = 0; i < mbox_count; ++i) {
    const auto r = find(i);
    if (slot[r] == SIZE_MAX) {
      slot[r] = groups.size();
      groups.emplace_back();
    }
    groups[slot[r]].push_back(i);
  }
  return groups;
}

}  // namespace mpolice
