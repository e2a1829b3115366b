#include "mpolice/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include <fmt/format.h>
#include <fmt/ostream.h>

namespace mpolice {

std::optional<double> jains_index(std::span<const double> values) {
  if (values.empty()) return std::nullopt;
  double sum = 0.0, sq = 0.0;
  for (double v : values) {
    sum += v;
    sq += v * v;
  }
  if (sq == 0.0) return std::nullopt;
  return sum * sum / (static_cast<double>(values.size()) * sq);
}

std::vector<std::uint64_t> MetricsLog::windows_of(std::uint32_t sender) const {
  std::vector<std::uint64_t> out;
  for (const auto& p : periods) {
    if (p.sender == sender) out.push_back(p.window);
  }
  return out;
}

std::uint64_t MetricsLog::delivered_bytes(std::uint32_t sender, double from_s, double to_s) const {
  auto lo = std::lower_bound(rates.begin(), rates.end(), sender,
                             [](const RateRecord& r, std::uint32_t s) { return r.sender < s; });
  std::uint64_t total = 0;
  for (auto it = lo; it != rates.end() && it->sender == sender; ++it) {
    const double t = it->second;
    if (t >= from_s && t < to_s) total += it->bytes;
  }
  return total;
}

std::vector<double> delivered_rates(const MetricsLog& log, double from_s, double to_s) {
  std::vector<double> out;
  const double span = to_s - from_s;
  for (const auto& s : log.senders) {
    if (s.direct) continue;
    const double bytes = static_cast<double>(log.delivered_bytes(s.index, from_s, to_s));
    out.push_back(span > 0.0 ? bytes * 8.0 / span / 1e6 : 0.0);
  }
  return out;
}

Summary summarize(const MetricsLog& log) {
  Summary s;
  const double end = log.meta.duration_s;
  s.warmup_s = end / 2.0;

  double client_sum = 0.0, attacker_sum = 0.0;
  std::size_t client_n = 0, attacker_n = 0;
  for (const auto& p : log.periods) {
    if (p.start_s < s.warmup_s) continue;
    const auto& info = log.senders.at(p.sender);
    if (info.direct) continue;
    if (info.is_client()) {
      client_sum += p.normalized_window;
      ++client_n;
    } else {
      attacker_sum += p.normalized_window;
      ++attacker_n;
    }
  }
  if (client_n) s.mean_client_window = client_sum / static_cast<double>(client_n);
  if (attacker_n) s.mean_attacker_window = attacker_sum / static_cast<double>(attacker_n);
  if (attacker_n && s.mean_attacker_window > 0.0) {
    s.client_attacker_ratio = s.mean_client_window / s.mean_attacker_window;
  }

  const auto rates = delivered_rates(log, s.warmup_s, end);
  s.fairness_index = jains_index(rates);

  double client_bytes = 0.0, attacker_bytes = 0.0, total_rate = 0.0;
  std::size_t i = 0;
  for (const auto& info : log.senders) {
    const double bytes = static_cast<double>(log.delivered_bytes(info.index, s.warmup_s, end));
    if (info.is_client()) {
      client_bytes += bytes;
      ++s.clients;
    } else {
      attacker_bytes += bytes;
      ++s.attackers;
    }
    if (!info.direct) total_rate += rates[i++];
  }
  const double span = end - s.warmup_s;
  if (client_bytes + attacker_bytes > 0.0) {
    s.attacker_share = attacker_bytes / (client_bytes + attacker_bytes);
  }
  if (s.clients) s.client_rate_mbps = client_bytes * 8.0 / span / 1e6 / static_cast<double>(s.clients);
  if (!rates.empty()) s.fair_share_mbps = total_rate / static_cast<double>(rates.size());
  s.goodput_mbps = (client_bytes + attacker_bytes) * 8.0 / span / 1e6;
  return s;
}

namespace {

const char* kPeriodColumns =
    "sender,group,kind,as,mbox,period,start_s,end_s,w_r,n_r,n_d,p_id,v0,recent_loss,l_r,n_h,"
    "next_w_r,delivered,window,normalized_window";

std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    out.push_back(line.substr(start, comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

template <typename T>
T parse_int(std::string_view s) {
  T v{};
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) {
    throw std::runtime_error("metrics.csv: bad integer '" + std::string(s) + "'");
  }
  return v;
}

double parse_double(std::string_view s) {
  const std::string tmp(s);
  char* end = nullptr;
  const double v = std::strtod(tmp.c_str(), &end);
  if (end != tmp.c_str() + tmp.size()) throw std::runtime_error("metrics.csv: bad number '" + tmp + "'");
  return v;
}

}  // namespace

void write_metrics_csv(const MetricsLog& log, std::ostream& out) {
  out << kMetricsHeader << '\n' << kPeriodColumns << '\n';
  for (const auto& p : log.periods) {
    const auto& s = log.senders.at(p.sender);
    fmt::print(out, "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n", p.sender,
               s.group, to_string(s.kind), s.as, s.mbox, p.period, p.start_s, p.end_s, p.w_r,
               p.n_r, p.n_d, p.p_id, p.v0, p.recent_loss, p.l_r, p.n_h, p.next_w_r, p.delivered,
               p.window, p.normalized_window);
  }
}

std::vector<PeriodRecord> read_metrics_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kMetricsHeader) {
    throw std::runtime_error("metrics.csv: missing version header");
  }
  if (!std::getline(in, line) || line != kPeriodColumns) {
    throw std::runtime_error("metrics.csv: unexpected column header");
  }
  std::vector<PeriodRecord> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split_csv(line);
    if (f.size() != 20) throw std::runtime_error("metrics.csv: wrong field count");
    PeriodRecord p;
    p.sender = parse_int<std::uint32_t>(f[0]);
    p.period = parse_int<std::uint32_t>(f[5]);
    p.start_s = parse_double(f[6]);
    p.end_s = parse_double(f[7]);
    p.w_r = parse_int<std::uint32_t>(f[8]);
    p.n_r = parse_int<std::uint32_t>(f[9]);
    p.n_d = parse_int<std::uint32_t>(f[10]);
    p.p_id = parse_int<std::uint32_t>(f[11]);
    p.v0 = parse_int<std::uint32_t>(f[12]);
    p.recent_loss = parse_double(f[13]);
    p.l_r = parse_double(f[14]);
    p.n_h = parse_double(f[15]);
    p.next_w_r = parse_int<std::uint32_t>(f[16]);
    p.delivered = parse_int<std::uint64_t>(f[17]);
    p.window = parse_int<std::uint64_t>(f[18]);
    p.normalized_window = parse_double(f[19]);
    out.push_back(p);
  }
  return out;
}

void write_summary_csv(const Summary& s, std::ostream& out) {
  auto opt = [](const std::optional<double>& v) {
    return v ? fmt::format("{}", *v) : std::string("NA");
  };
  out << "metric,value\n";
  fmt::print(out, "warmup_s,{}\n", s.warmup_s);
  fmt::print(out, "fairness_index,{}\n", opt(s.fairness_index));
  fmt::print(out, "mean_client_window,{}\n", s.mean_client_window);
  fmt::print(out, "mean_attacker_window,{}\n", s.mean_attacker_window);
  fmt::print(out, "client_attacker_ratio,{}\n", opt(s.client_attacker_ratio));
  fmt::print(out, "attacker_share,{}\n", s.attacker_share);
  fmt::print(out, "client_rate_mbps,{}\n", s.client_rate_mbps);
  fmt::print(out, "fair_share_mbps,{}\n", s.fair_share_mbps);
  fmt::print(out, "goodput_mbps,{}\n", s.goodput_mbps);
  fmt::print(out, "clients,{}\n", s.clients);
  fmt::print(out, "attackers,{}\n", s.attackers);
}

void write_run_meta(const MetricsLog& log, const Summary& s, std::ostream& out) {
  const auto& m = log.meta;
  fmt::print(out, "scenario={}\n", m.scenario);
  fmt::print(out, "scenario_hash={:016x}\n", m.scenario_hash);
  fmt::print(out, "seed={}\n", m.seed);
  fmt::print(out, "duration_s={}\n", m.duration_s);
  fmt::print(out, "capacity_bps={}\n", m.capacity_bps);
  fmt::print(out, "d_p_s={}\n", m.d_p_s);
  fmt::print(out, "policy={}\n", m.policy);
  fmt::print(out, "averaging=final_half\n");
  fmt::print(out, "warmup_s={}\n", s.warmup_s);
  fmt::print(out, "events={}\n", m.events);
  for (const auto& [k, v] : m.params) fmt::print(out, "param.{}={}\n", k, v);
  for (const auto& [k, v] : log.counters) fmt::print(out, "counter.{}={}\n", k, v);
}

void write_slr_csv(const MetricsLog& log, std::ostream& out) {
  out << "mbox,cycle,time_s,slr\n";
  for (const auto& r : log.slr) fmt::print(out, "{},{},{},{}\n", r.mbox, r.cycle, r.time_s, r.slr);
}

void write_rates_csv(const MetricsLog& log, std::ostream& out) {
  out << "sender,second,packets,bytes\n";
  for (const auto& r : log.rates) {
    fmt::print(out, "{},{},{},{}\n", r.sender, r.second, r.packets, r.bytes);
  }
}

void write_links_csv(const MetricsLog& log, std::ostream& out) {
  out << "link,injected,delivered,dropped,in_flight\n";
  for (const auto& l : log.links) {
    fmt::print(out, "{},{},{},{},{}\n", l.name, l.injected, l.delivered, l.dropped, l.in_flight);
  }
}

void write_correlations_csv(const MetricsLog& log, std::ostream& out) {
  out << "mbox_a,mbox_b,window,coefficient\n";
  for (const auto& c : log.correlations) {
    fmt::print(out, "{},{},{},{}\n", c.mbox_a, c.mbox_b, c.window, c.coefficient);
  }
  for (const auto& d : log.detections) {
    fmt::print(out, "# detect {} {} shared={} at={}\n", d.mbox_a, d.mbox_b, d.shared,
               d.detected_at_s);
  }
}

}  // namespace mpolice
