#include "mpolice/scenario.hpp"

#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <fmt/format.h>

namespace mpolice {

namespace {

namespace fs = std::filesystem;

using KeySet = std::set<std::string>;

void check_keys(const YAML::Node& node, const std::string& path, const KeySet& allowed) {
  if (!node.IsMap()) throw ScenarioError(path.empty() ? "<root>" : path, "expected a mapping");
  for (const auto& kv : node) {
    const auto key = kv.first.as<std::string>();
    if (allowed.count(key) == 0) {
      throw ScenarioError(path.empty() ? key : path + "." + key, "unknown key");
    }
  }
}

template <typename T>
void read(const YAML::Node& node, const std::string& key, const std::string& path, T& out) {
  if (!node[key]) return;
  try {
    out = node[key].as<T>();
  } catch (const YAML::Exception&) {
    throw ScenarioError(path.empty() ? key : path + "." + key, "invalid value");
  }
}

template <typename T>
void read_opt(const YAML::Node& node, const std::string& key, const std::string& path,
              std::optional<T>& out) {
  if (!node[key]) return;
  T v{};
  read(node, key, path, v);
  out = v;
}

SenderKind parse_kind(const std::string& s, const std::string& path) {
  static const std::map<std::string, SenderKind> kinds = {
      {"legit_tcp", SenderKind::legit_tcp},   {"reactive_tcp", SenderKind::reactive_tcp},
      {"flat_udp", SenderKind::flat_udp},     {"shrew", SenderKind::shrew},
      {"bypass_udp", SenderKind::bypass_udp},
  };
  auto it = kinds.find(s);
  if (it == kinds.end()) throw ScenarioError(path, "unknown sender kind '" + s + "'");
  return it->second;
}

PolicerParams parse_policer(const YAML::Node& n) {
  const std::string p = "policer";
  check_keys(n, p, {"d_p_s", "th_cap", "th_rtt_s", "th_slr_drop", "beta", "th_lpass", "s_slr"});
  PolicerParams out;
  double d_p = 4.0, th_rtt = 1.0;
  int th_cap = out.cap_threshold;
  read(n, "d_p_s", p, d_p);
  read(n, "th_rtt_s", p, th_rtt);
  read(n, "th_cap", p, th_cap);
  read(n, "th_slr_drop", p, out.slr_drop_threshold);
  read(n, "beta", p, out.beta);
  read(n, "th_lpass", p, out.lowpass_threshold);
  read(n, "s_slr", p, out.slr_batch);
  if (th_cap < 1 || th_cap > 128) throw ScenarioError("policer.th_cap", "must be in [1, 128]");
  out.cap_threshold = static_cast<std::uint16_t>(th_cap);
  out.detection_period = std::chrono::milliseconds{static_cast<std::int64_t>(d_p * 1000.0)};
  out.rtt_threshold = std::chrono::milliseconds{static_cast<std::int64_t>(th_rtt * 1000.0)};
  return out;
}

SenderGroup parse_sender(const YAML::Node& n, std::size_t idx) {
  const std::string p = fmt::format("senders[{}]", idx);
  check_keys(n, p,
             {"label", "kind", "count", "as", "as_per_sender", "flows", "rate_mbps", "on_s",
              "off_s", "random_phase", "start_s", "start_jitter_s", "stop_s", "mbox", "compromise_at_s",
              "direct"});
  SenderGroup g;
  std::string kind;
  read(n, "label", p, g.label);
  read(n, "kind", p, kind);
  if (kind.empty()) throw ScenarioError(p + ".kind", "required");
  g.kind = parse_kind(kind, p + ".kind");
  if (g.kind == SenderKind::reactive_tcp) g.flows = 10;
  read(n, "count", p, g.count);
  read(n, "as", p, g.as);
  read(n, "as_per_sender", p, g.as_per_sender);
  read(n, "flows", p, g.flows);
  read(n, "rate_mbps", p, g.rate_mbps);
  read(n, "on_s", p, g.on_s);
  read(n, "off_s", p, g.off_s);
  read(n, "random_phase", p, g.random_phase);
  read(n, "start_s", p, g.start_s);
  read(n, "start_jitter_s", p, g.start_jitter_s);
  read(n, "stop_s", p, g.stop_s);
  read_opt(n, "mbox", p, g.mbox);
  read(n, "compromise_at_s", p, g.compromise_at_s);
  read(n, "direct", p, g.direct);
  if (g.kind == SenderKind::bypass_udp) g.direct = true;
  if (g.label.empty()) g.label = fmt::format("group{}", idx);
  return g;
}

Scenario from_yaml(const YAML::Node& root) {
  check_keys(root, "", {"name", "description", "duration_s", "seed", "topology", "policy",
                        "policer", "filter", "coordination", "senders"});
  Scenario s;
  read(root, "name", "", s.name);
  read(root, "description", "", s.description);
  read(root, "duration_s", "", s.duration_s);
  read(root, "seed", "", s.seed);

  if (const auto t = root["topology"]) {
    const std::string p = "topology";
    check_keys(t, p,
               {"bottleneck_mbps", "buffer_packets", "access_mbps", "access_delay_ms",
                "mbox_delay_ms", "victim_delay_ms", "reverse_delay_ms", "mbox_count",
                "mbox_egress_mbps", "mbox_buffer_packets", "assignment", "bottlenecks"});
    auto& tp = s.topology;
    read(t, "bottleneck_mbps", p, tp.bottleneck_mbps);
    read_opt(t, "buffer_packets", p, tp.buffer_packets);
    read(t, "access_mbps", p, tp.access_mbps);
    read(t, "access_delay_ms", p, tp.access_delay_ms);
    read(t, "mbox_delay_ms", p, tp.mbox_delay_ms);
    read(t, "victim_delay_ms", p, tp.victim_delay_ms);
    read(t, "reverse_delay_ms", p, tp.reverse_delay_ms);
    read(t, "mbox_count", p, tp.mbox_count);
    read_opt(t, "mbox_egress_mbps", p, tp.mbox_egress_mbps);
    read(t, "mbox_buffer_packets", p, tp.mbox_buffer_packets);
    read(t, "assignment", p, tp.assignment);
    read(t, "bottlenecks", p, tp.bottlenecks);
  }
  if (const auto n = root["policy"]) {
    const std::string p = "policy";
    check_keys(n, p, {"name", "premium"});
    read(n, "name", p, s.policy.name);
    if (const auto pr = n["premium"]) {
      check_keys(pr, "policy.premium", {"ases", "fraction"});
      read(pr, "ases", "policy.premium", s.policy.premium_ases);
      read(pr, "fraction", "policy.premium", s.policy.premium_fraction);
    }
  }
  if (const auto n = root["policer"]) s.policer = parse_policer(n);
  if (const auto n = root["filter"]) {
    const std::string p = "filter";
    check_keys(n, p, {"enabled", "rotation_s", "control_delay_ms", "alarm_window_ms",
                      "alarm_threshold"});
    read(n, "enabled", p, s.filter.enabled);
    read(n, "rotation_s", p, s.filter.rotation_s);
    read(n, "control_delay_ms", p, s.filter.control_delay_ms);
    read(n, "alarm_window_ms", p, s.filter.alarm_window_ms);
    read(n, "alarm_threshold", p, s.filter.alarm_threshold);
  }
  if (const auto n = root["coordination"]) {
    const std::string p = "coordination";
    check_keys(n, p, {"mode", "interval_s", "threshold", "rounds"});
    read(n, "mode", p, s.coordination.mode);
    read(n, "interval_s", p, s.coordination.interval_s);
    read(n, "threshold", p, s.coordination.threshold);
    read(n, "rounds", p, s.coordination.rounds);
  }
  if (const auto n = root["senders"]) {
    if (!n.IsSequence()) throw ScenarioError("senders", "expected a list");
    for (std::size_t i = 0; i < n.size(); ++i) s.senders.push_back(parse_sender(n[i], i));
  }
  return s;
}

const std::map<std::string, std::string>& short_params() {
  static const std::map<std::string, std::string> m = {
      {"d_p", "policer.d_p_s"},
      {"th_cap", "policer.th_cap"},
      {"th_rtt", "policer.th_rtt_s"},
      {"th_slr_drop", "policer.th_slr_drop"},
      {"beta", "policer.beta"},
      {"th_lpass", "policer.th_lpass"},
      {"s_slr", "policer.s_slr"},
      {"duration", "duration_s"},
      {"seed", "seed"},
      {"policy", "policy.name"},
      {"bottleneck_mbps", "topology.bottleneck_mbps"},
      {"mbox_count", "topology.mbox_count"},
      {"coordination", "coordination.mode"},
      {"filter", "filter.enabled"},
  };
  return m;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string part;
  while (std::getline(ss, part, sep)) out.push_back(part);
  return out;
}

void apply_override(YAML::Node& root, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ScenarioError(assignment, "override must look like key=value");
  }
  const std::string path = canonical_param_path(assignment.substr(0, eq));
  const std::string value = assignment.substr(eq + 1);
  const auto parts = split(path, '.');

  // yaml-cpp nodes are handles; rebinding through operator[] keeps edits in
  // the original document.
  std::vector<YAML::Node> chain{root};
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
    YAML::Node cur = chain.back();
    if (parts[i] == "senders") {
      YAML::Node list = cur["senders"];
      if (i + 2 >= parts.size() || !list.IsSequence()) {
        throw ScenarioError(path, "expected senders.<label>.<field>");
      }
      bool found = false;
      for (std::size_t k = 0; k < list.size(); ++k) {
        if (list[k]["label"] && list[k]["label"].as<std::string>() == parts[i + 1]) {
          chain.push_back(list[k]);
          found = true;
          break;
        }
      }
      if (!found) throw ScenarioError(path, "no sender group labelled '" + parts[i + 1] + "'");
      ++i;
      continue;
    }
    chain.push_back(cur[parts[i]]);
  }
  chain.back()[parts.back()] = value;
}

}  // namespace

std::string to_string(SenderKind k) {
  switch (k) {
    case SenderKind::legit_tcp: return "legit_tcp";
    case SenderKind::reactive_tcp: return "reactive_tcp";
    case SenderKind::flat_udp: return "flat_udp";
    case SenderKind::shrew: return "shrew";
    case SenderKind::bypass_udp: return "bypass_udp";
  }
  return "unknown";
}

std::string canonical_param_path(const std::string& key) {
  const auto& m = short_params();
  auto it = m.find(key);
  return it == m.end() ? key : it->second;
}

std::size_t Scenario::sender_count() const {
  std::size_t n = 0;
  for (const auto& g : senders) n += g.count;
  return n;
}

void Scenario::validate() const {
  if (!(duration_s > 0.0)) throw ScenarioError("duration_s", "must be positive");
  const auto& t = topology;
  if (!(t.bottleneck_mbps > 0.0)) throw ScenarioError("topology.bottleneck_mbps", "must be positive");
  if (!(t.access_mbps > 0.0)) throw ScenarioError("topology.access_mbps", "must be positive");
  if (!(t.egress_mbps() > 0.0)) throw ScenarioError("topology.mbox_egress_mbps", "must be positive");
  if (t.buffer_packets && *t.buffer_packets == 0) {
    throw ScenarioError("topology.buffer_packets", "must be positive");
  }
  for (auto [v, name] : {std::pair{t.access_delay_ms, "access_delay_ms"},
                         std::pair{t.mbox_delay_ms, "mbox_delay_ms"},
                         std::pair{t.victim_delay_ms, "victim_delay_ms"}}) {
    if (v < 0.0) throw ScenarioError(std::string("topology.") + name, "must be >= 0");
  }
  if (t.reverse_delay_ms < t.access_delay_ms) {
    throw ScenarioError("topology.reverse_delay_ms", "must be >= access_delay_ms");
  }
  if (t.mbox_count == 0) throw ScenarioError("topology.mbox_count", "must be >= 1");
  if (t.assignment != "round_robin" && t.assignment != "random") {
    throw ScenarioError("topology.assignment", "expected round_robin or random");
  }
  if (t.bottlenecks != "shared" && t.bottlenecks != "per_mbox") {
    throw ScenarioError("topology.bottlenecks", "expected shared or per_mbox");
  }
  try {
    policer.validate();
  } catch (const std::invalid_argument& e) {
    throw ScenarioError("policer", e.what());
  }
  if (policy.name != "natural" && policy.name != "per_sender" && policy.name != "per_as" &&
      policy.name != "per_as_per_sender") {
    throw ScenarioError("policy.name", "unknown policy '" + policy.name + "'");
  }
  if (policy.premium_fraction < 0.0) throw ScenarioError("policy.premium.fraction", "must be >= 0");
  if (!policy.premium_ases.empty()) {
    std::size_t members = 0;
    for (const auto& g : senders) {
      const bool premium = std::find(policy.premium_ases.begin(), policy.premium_ases.end(),
                                     g.as) != policy.premium_ases.end();
      if (premium && !g.as_per_sender) members += g.count;
    }
    if (members == 0) throw ScenarioError("policy.premium.ases", "no sender belongs to a premium AS");
    if (policy.premium_fraction * static_cast<double>(members) > 1.0) {
      throw ScenarioError("policy.premium.fraction", "reservations exceed the bottleneck capacity");
    }
  }
  if (filter.rotation_s <= 0.0) throw ScenarioError("filter.rotation_s", "must be positive");
  if (filter.control_delay_ms < 0.0) throw ScenarioError("filter.control_delay_ms", "must be >= 0");
  if (filter.alarm_window_ms <= 0.0) throw ScenarioError("filter.alarm_window_ms", "must be positive");
  if (filter.alarm_threshold == 0) throw ScenarioError("filter.alarm_threshold", "must be positive");
  if (coordination.mode != "none" && coordination.mode != "forced" &&
      coordination.mode != "detect") {
    throw ScenarioError("coordination.mode", "expected none, forced or detect");
  }
  if (coordination.interval_s <= 0.0) throw ScenarioError("coordination.interval_s", "must be positive");
  if (!(coordination.threshold > 0.0 && coordination.threshold < 1.0)) {
    throw ScenarioError("coordination.threshold", "must be in (0, 1)");
  }
  if (coordination.rounds == 0) throw ScenarioError("coordination.rounds", "must be >= 1");
  if (senders.empty()) throw ScenarioError("senders", "at least one sender group is required");

  std::set<std::string> labels;
  for (std::size_t i = 0; i < senders.size(); ++i) {
    const auto& g = senders[i];
    const std::string p = fmt::format("senders[{}]", i);
    if (!labels.insert(g.label).second) throw ScenarioError(p + ".label", "duplicate label");
    if (g.label.find_first_of(",\"\n.") != std::string::npos) {
      throw ScenarioError(p + ".label", "must not contain commas, quotes or dots");
    }
    if (g.as.find_first_of(",\"\n") != std::string::npos) {
      throw ScenarioError(p + ".as", "must not contain commas or quotes");
    }
    if (g.direct && g.is_tcp()) throw ScenarioError(p + ".direct", "only UDP senders can be direct");
    if (g.count == 0) throw ScenarioError(p + ".count", "must be >= 1");
    if (g.is_tcp() && g.flows == 0) throw ScenarioError(p + ".flows", "must be >= 1");
    if (!g.is_tcp() && !(g.rate_mbps > 0.0)) throw ScenarioError(p + ".rate_mbps", "must be positive");
    if (g.kind == SenderKind::shrew && !(g.on_s > 0.0 && g.off_s >= 0.0)) {
      throw ScenarioError(p + ".on_s", "shrew needs on_s > 0 and off_s >= 0");
    }
    if (g.start_s < 0.0) throw ScenarioError(p + ".start_s", "must be >= 0");
    if (g.start_jitter_s < 0.0) throw ScenarioError(p + ".start_jitter_s", "must be >= 0");
    if (g.mbox && *g.mbox >= t.mbox_count) throw ScenarioError(p + ".mbox", "no such mbox");
    if (g.kind == SenderKind::bypass_udp && !filter.enabled) {
      throw ScenarioError(p + ".kind", "bypass senders need filter.enabled");
    }
    if (g.compromise_at_s >= 0.0 && g.kind != SenderKind::bypass_udp) {
      throw ScenarioError(p + ".compromise_at_s", "only bypass senders steal the secret");
    }
  }
}

Scenario parse_scenario(const std::string& yaml_text, const std::vector<std::string>& overrides) {
  YAML::Node root;
  try {
    root = YAML::Load(yaml_text);
  } catch (const YAML::Exception& e) {
    throw ScenarioError("<root>", std::string("YAML parse error: ") + e.what());
  }
  for (const auto& o : overrides) apply_override(root, o);
  Scenario s = from_yaml(root);
  s.validate();
  return s;
}

std::string resolve_scenario_path(const std::string& path_or_name) {
  if (fs::exists(path_or_name)) return path_or_name;
  const fs::path bundled = fs::path(MPOLICE_SCENARIO_DIR) / (path_or_name + ".yaml");
  if (fs::exists(bundled)) return bundled.string();
  throw ScenarioError(path_or_name, "no such scenario file or bundled scenario");
}

Scenario load_scenario(const std::string& path_or_name, const std::vector<std::string>& overrides) {
  const std::string path = resolve_scenario_path(path_or_name);
  std::ifstream in(path);
  if (!in) throw ScenarioError(path, "cannot open");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_scenario(buf.str(), overrides);
}

std::vector<std::string> bundled_scenarios() {
  std::vector<std::string> out;
  for (const auto& entry : fs::directory_iterator(MPOLICE_SCENARIO_DIR)) {
    if (entry.path().extension() == ".yaml") out.push_back(entry.path().stem().string());
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::uint64_t scenario_hash(const Scenario& s) {
  std::string canon = fmt::format(
      "{}|{}|{}|{}|{}|{}|{}|{}|{}|{}|{}|{}|{}|{}|{}|{}|{}|{}|{}|{}|{}|{}|{}|{}|{}|{}", s.name,
      s.duration_s, s.seed, s.topology.bottleneck_mbps, s.topology.buffer_packets.value_or(0),
      s.topology.access_mbps, s.topology.access_delay_ms, s.topology.mbox_delay_ms,
      s.topology.victim_delay_ms, s.topology.reverse_delay_ms, s.topology.mbox_count,
      s.topology.egress_mbps(), s.topology.assignment, s.topology.bottlenecks, s.policy.name,
      s.policy.premium_fraction, s.policer.detection_period.count(), s.policer.cap_threshold,
      s.policer.rtt_threshold.count(), s.policer.slr_drop_threshold, s.policer.beta,
      s.policer.lowpass_threshold, s.policer.slr_batch, s.filter.enabled,
      s.coordination.mode, s.coordination.interval_s);
  for (const auto& a : s.policy.premium_ases) canon += "|p:" + a;
  for (const auto& g : s.senders) {
    canon += fmt::format("|{}:{}:{}:{}:{}:{}:{}:{}:{}:{}:{}:{}:{}:{}:{}", g.label, to_string(g.kind),
                         g.count, g.as, g.as_per_sender, g.flows, g.rate_mbps, g.on_s, g.off_s,
                         g.random_phase, g.start_s + 1e6 * g.start_jitter_s, g.stop_s, g.mbox.value_or(9999),
                         g.compromise_at_s, g.direct);
  }
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : canon) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace mpolice
