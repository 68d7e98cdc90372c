/*
 * Copyright (c) 2026 The Morpheus Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

// Desk-scale network simulator: switches with flow tables, hosts, links
// with capacities, and long-lived flows.
//
// Control traffic is simulated packet by packet: each flow sends a small
// number of probe packets per one-second bucket (a connection handshake,
// then one data probe per direction), and those packets hop through the
// switch tables exactly as real packets would — including becoming
// PacketIn events when no rule matches. Bulk throughput is modeled
// analytically: at the end of each bucket, every flow whose probes got
// through in both directions shares the links on its forward path
// max-min fairly with the other open flows, and byte counters advance by
// the resulting rate. This reproduces disruption windows and plateaus
// without simulating a transport protocol.
//
// Flow endings: delivering a mid-flow data packet to a host that has no
// record of the flow resets it (connection affinity break), as does being
// fully blocked for kBlockedTimeoutSec consecutive seconds once
// established. Flows still connecting just keep retrying.
//
// Unclaimed PacketIn buffers expire at the end of each bucket and count
// as drops; a controller that wants a diverted packet to continue must
// re-inject it (pkt_out) before then.

#pragma once

#include <algorithm>
#include <cstdint>
#include <deque>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "morpheus/document.hpp"
#include "morpheus/errors.hpp"
#include "morpheus/net/flowtable.hpp"
#include "morpheus/net/packet.hpp"
#include "morpheus/runtime.hpp"

namespace morpheus::sim {

// ---------------------------------------------------------------------------
// Topology

struct HostSpec {
  std::string id;
  std::string ip;
  std::string sw;       // attachment switch
  int64_t port = 0;     // attachment port on that switch
  double capacity_bps = 1e6;
};

struct LinkSpec {
  std::string node_a;
  int64_t port_a = 0;
  std::string node_b;
  int64_t port_b = 0;
  double capacity_bps = 1e6;
};

struct TopologySpec {
  std::vector<std::string> switches;
  std::vector<HostSpec> hosts;
  std::vector<LinkSpec> links;  // switch-to-switch links

  static TopologySpec from_json(const Document& j) {
    TopologySpec t;
    for (const auto& s : j.at("switches")) t.switches.push_back(s);
    for (const auto& h : j.at("hosts")) {
      HostSpec hs;
      hs.id = h.at("id");
      hs.ip = h.at("ip");
      hs.sw = h.at("switch");
      hs.port = h.at("port");
      hs.capacity_bps = h.value("capacity_bps", 1e6);
      t.hosts.push_back(hs);
    }
    for (const auto& l : j.value("links", Document::array())) {
      LinkSpec ls;
      ls.node_a = l.at("a").at(0);
      ls.port_a = l.at("a").at(1);
      ls.node_b = l.at("b").at(0);
      ls.port_b = l.at("b").at(1);
      ls.capacity_bps = l.value("capacity_bps", 1e6);
      t.links.push_back(ls);
    }
    return t;
  }

  static TopologySpec from_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open topology file: " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return from_json(parse_document(ss.str()));
  }
};

// ---------------------------------------------------------------------------
// Packets and events

enum class PktKind { kSyn, kSynAck, kData, kDataRev, kLldp };

inline const char* pkt_kind_name(PktKind k) {
  switch (k) {
    case PktKind::kSyn: return "syn";
    case PktKind::kSynAck: return "syn_ack";
    case PktKind::kData: return "data";
    case PktKind::kDataRev: return "data_rev";
    case PktKind::kLldp: return "lldp";
  }
  return "?";
}

struct SimPacket {
  net::Packet hdr;
  PktKind kind = PktKind::kData;
  int64_t flow_id = -1;
  std::string lldp_sw;      // kLldp: origin switch
  int64_t lldp_port = -1;   // kLldp: origin port
  std::string from_host;    // kSynAck: which host answered
  std::vector<std::string> switch_path;           // switches traversed
  std::vector<std::pair<std::string, int64_t>> link_path;  // (tx node, port)
  int ttl = 32;
  uint64_t uid = 0;
};

struct PacketInEvent {
  std::string sw;
  int64_t port = 0;
  SimPacket pkt;
  uint64_t buffer_id = 0;
};
struct SwitchUpEvent {
  std::string sw;
  std::vector<int64_t> ports;
};
struct SwitchDownEvent {
  std::string sw;
};
struct PortStatsEvent {
  std::string sw;
  int64_t port = 0;
  uint64_t tx_bytes = 0;
  uint64_t rx_bytes = 0;
  double at = 0;
};

using NetworkEvent =
    std::variant<PacketInEvent, SwitchUpEvent, SwitchDownEvent, PortStatsEvent>;

// ---------------------------------------------------------------------------
// Flows and metrics

enum class FlowState { kConnecting, kEstablished, kReset, kClosed };

inline const char* flow_state_name(FlowState s) {
  switch (s) {
    case FlowState::kConnecting: return "connecting";
    case FlowState::kEstablished: return "established";
    case FlowState::kReset: return "reset";
    case FlowState::kClosed: return "closed";
  }
  return "?";
}

struct Flow {
  int64_t id = 0;
  std::string src_host;
  std::string dst_ip;  // where the client aims; the answering host serves
  int64_t src_port = 0, dst_port = 0;
  net::Proto proto = net::Proto::kTcp;
  std::string src_ip;

  FlowState state = FlowState::kConnecting;
  std::string server_host;  // host holding the server-side record
  std::vector<std::string> current_path;  // forward path, switch ids
  std::vector<std::vector<std::string>> path_history;
  std::vector<std::pair<std::string, int64_t>> current_links;
  double bytes_acked = 0;
  uint64_t packets_delivered = 0;
  int blocked_streak = 0;
  double opened_at = 0;

  // per-bucket probe outcome
  bool fwd_ok = false, rev_ok = false;
  uint64_t parked_fwd = 0, parked_rev = 0;  // outstanding PacketIn buffers

  // forward path of the handshake, adopted once the answer arrives
  std::vector<std::string> pending_path;
  std::vector<std::pair<std::string, int64_t>> pending_links;
};

struct BucketSample {
  double time = 0;     // bucket start
  int64_t flow_id = 0;
  double bps = 0;
  std::string path;    // "s1-s2-s4" or "" while unknown
  std::string state;
};

struct DropRecord {
  double time = 0;
  std::string sw;
  int64_t port = 0;    // port the packet was at (ingress of the divert)
  PktKind kind = PktKind::kData;
  int64_t flow_id = -1;
  std::string reason;  // "expired" | "no_link" | "ttl" | ...
};

// ---------------------------------------------------------------------------

constexpr int kBlockedTimeoutSec = 5;  // established + fully blocked -> reset
constexpr int kProbeRounds = 3;        // probe attempts per bucket

// A directed link use: (transmitting node, its port).
using LinkSeg = std::pair<std::string, int64_t>;

// Max-min fair allocation by progressive filling: all flows' rates rise
// in lockstep; when a link saturates, the flows crossing it freeze at
// their current rate; repeat until every flow is frozen.
inline std::map<int64_t, double> maxmin_fair(
    const std::map<int64_t, std::vector<LinkSeg>>& flow_links,
    const std::map<LinkSeg, double>& caps) {
  std::map<int64_t, double> rates;
  if (flow_links.empty()) return rates;
  std::map<LinkSeg, double> remaining;
  std::map<LinkSeg, std::set<int64_t>> users;
  for (const auto& [id, links] : flow_links) {
    rates[id] = 0;
    for (const auto& seg : links) {
      remaining.emplace(seg, caps.at(seg));
      users[seg].insert(id);
    }
  }
  std::set<int64_t> frozen;
  while (frozen.size() < rates.size()) {
    double delta = -1;
    for (const auto& [seg, cap] : remaining) {
      size_t n = 0;
      for (int64_t id : users.at(seg))
        if (!frozen.count(id)) ++n;
      if (n == 0) continue;
      double d = cap / static_cast<double>(n);
      if (delta < 0 || d < delta) delta = d;
    }
    if (delta < 0) break;  // remaining flows use no link at all
    std::vector<LinkSeg> saturated;
    for (auto& [seg, cap] : remaining) {
      size_t n = 0;
      for (int64_t id : users.at(seg))
        if (!frozen.count(id)) ++n;
      cap -= delta * static_cast<double>(n);
      if (n > 0 && cap <= 1e-9) saturated.push_back(seg);
    }
    for (auto& [id, r] : rates)
      if (!frozen.count(id)) r += delta;
    for (const auto& seg : saturated)
      for (int64_t id : users.at(seg)) frozen.insert(id);
  }
  return rates;
}

class SimNet {
 public:
  SimNet(TopologySpec spec, Runtime* rt) : rt_(rt) {
    for (const auto& s : spec.switches) switches_[s];  // create
    for (const auto& l : spec.links) add_link(l);
    for (const auto& h : spec.hosts) add_host_internal(h);
    for (const auto& s : spec.switches) {
      if (!switches_.at(s).ports.empty()) continue;
      throw TopologyError("switch " + s + " has no ports");
    }
  }

  void set_event_handler(std::function<void(const NetworkEvent&)> h) {
    handler_ = std::move(h);
  }

  // Announces every switch; the platform fans the events out to apps.
  void start() {
    for (const auto& [sw, st] : switches_) emit(switch_up_event(sw));
  }

  SwitchUpEvent switch_up_event(const std::string& sw) const {
    const SwitchState& st = switches_.at(sw);
    return SwitchUpEvent{sw, {st.ports.begin(), st.ports.end()}};
  }

  std::vector<std::string> switch_ids() const {
    std::vector<std::string> out;
    for (const auto& [sw, st] : switches_)
      if (st.up) out.push_back(sw);
    return out;
  }

  // Hot-plugs a host (e.g. a server added mid-scenario). Re-announces the
  // switch so topology listeners see the new port.
  void add_host(const HostSpec& h) {
    add_host_internal(h);
    emit(switch_up_event(h.sw));
  }

  const std::map<std::string, HostSpec>& hosts() const { return hosts_; }

  // --- tables ----------------------------------------------------------------

  void install_table(const std::string& sw, net::FlowTable table) {
    require_switch(sw);
    switches_.at(sw).table = std::move(table);
  }

  const net::FlowTable& table(const std::string& sw) const {
    auto it = switches_.find(sw);
    if (it == switches_.end()) throw UnknownSwitch(sw);
    return it->second.table;
  }

  void wipe_tables() {
    for (auto& [sw, st] : switches_) st.table = net::FlowTable{sw, {}, {}};
  }

  // --- controller-side packet injection ---------------------------------------

  // Injects `pkt` at (sw, out_port). If the packet is a buffered PacketIn
  // (matched by uid), the buffer is claimed and will not count as a drop.
  // out_port may be kFloodPort.
  void pkt_out(const std::string& sw, SimPacket pkt, int64_t out_port) {
    require_switch(sw);
    claim_buffer(pkt.uid);
    if (out_port == net::kFloodPort) {
      flood_from(sw, pkt, pkt.hdr.port);
    } else {
      forward(sw, out_port, pkt);
    }
  }

  // --- port statistics ---------------------------------------------------------

  std::vector<PortStatsEvent> port_stats(const std::string& sw) const {
    auto it = switches_.find(sw);
    if (it == switches_.end() || !it->second.up) throw UnknownSwitch(sw);
    std::vector<PortStatsEvent> out;
    for (int64_t p : it->second.ports) {
      auto c = counters_.find({sw, p});
      out.push_back(PortStatsEvent{
          sw, p, c == counters_.end() ? 0 : c->second.tx,
          c == counters_.end() ? 0 : c->second.rx, rt_->now()});
    }
    return out;
  }

  // --- switch lifecycle (used by unit tests) -----------------------------------

  void take_switch_down(const std::string& sw) {
    require_switch(sw);
    switches_.at(sw).up = false;
    switches_.at(sw).table = net::FlowTable{sw, {}, {}};
    emit(SwitchDownEvent{sw});
  }

  void bring_switch_up(const std::string& sw) {
    auto it = switches_.find(sw);
    if (it == switches_.end()) throw UnknownSwitch(sw);
    it->second.up = true;
    for (int64_t p : it->second.ports) counters_[{sw, p}] = Counter{};
    emit(switch_up_event(sw));
  }

  // --- flows ---------------------------------------------------------------------

  int64_t open_flow(const std::string& src_host, const std::string& dst_ip,
                    int64_t src_port, int64_t dst_port,
                    net::Proto proto = net::Proto::kTcp) {
    const HostSpec& src = host(src_host);
    Flow f;
    f.id = next_flow_id_++;
    f.src_host = src_host;
    f.src_ip = src.ip;
    f.dst_ip = dst_ip;
    f.src_port = src_port;
    f.dst_port = dst_port;
    f.proto = proto;
    f.opened_at = rt_->now();
    records_[src_host].insert(f.id);  // the client knows its own flow
    flows_[f.id] = std::move(f);
    return flows_.rbegin()->first;
  }

  void close_flow(int64_t id) { flow_mut(id).state = FlowState::kClosed; }

  const Flow& flow(int64_t id) const {
    auto it = flows_.find(id);
    if (it == flows_.end()) throw MorpheusError("unknown flow");
    return it->second;
  }
  const std::map<int64_t, Flow>& flows() const { return flows_; }

  // Sends this round's outstanding probes. Call up to kProbeRounds times
  // per bucket, letting controller tasks run between rounds.
  void send_probes() {
    for (auto& [id, f] : flows_) {
      if (f.state == FlowState::kReset || f.state == FlowState::kClosed)
        continue;
      if (f.state == FlowState::kConnecting) {
        if (!f.fwd_ok && f.parked_fwd == 0) inject_probe(f, PktKind::kSyn);
        continue;
      }
      if (!f.fwd_ok && f.parked_fwd == 0) inject_probe(f, PktKind::kData);
      if (!f.rev_ok && f.parked_rev == 0) inject_probe(f, PktKind::kDataRev);
    }
  }

  // Closes the 1-second bucket beginning at `bucket_start`: computes
  // max-min fair shares for flows whose probes completed, advances byte
  // counters, expires unclaimed PacketIn buffers, applies the blocked
  // timeout, and appends one metrics sample per flow.
  void finish_bucket(double bucket_start) {
    std::vector<Flow*> open;
    for (auto& [id, f] : flows_) {
      if (f.state == FlowState::kEstablished && f.fwd_ok && f.rev_ok)
        open.push_back(&f);
    }
    std::map<int64_t, double> rates = fair_share(open);

    for (auto& [id, f] : flows_) {
      double bps = 0;
      if (auto it = rates.find(id); it != rates.end()) {
        bps = it->second;
        account_traffic(f, bps);
        f.blocked_streak = 0;
      } else if (f.state == FlowState::kEstablished) {
        if (++f.blocked_streak >= kBlockedTimeoutSec) {
          f.state = FlowState::kReset;
          drops_.push_back(DropRecord{rt_->now(), "", 0, PktKind::kData, id,
                                      "blocked_timeout"});
        }
      }
      if (f.state != FlowState::kClosed || bps > 0) {
        series_.push_back(BucketSample{bucket_start, id, bps,
                                       path_string(f.current_path),
                                       flow_state_name(f.state)});
      }
      f.fwd_ok = f.rev_ok = false;
      f.parked_fwd = f.parked_rev = 0;
    }
    expire_buffers();
  }

  // --- introspection ------------------------------------------------------------

  const std::vector<BucketSample>& series() const { return series_; }
  const std::vector<DropRecord>& drop_log() const { return drops_; }
  uint64_t packet_in_count() const { return packet_in_count_; }
  bool host_has_record(const std::string& host, int64_t flow_id) const {
    auto it = records_.find(host);
    return it != records_.end() && it->second.count(flow_id) > 0;
  }

  static std::string path_string(const std::vector<std::string>& p) {
    std::string out;
    for (const auto& s : p) {
      if (!out.empty()) out += "-";
      out += s;
    }
    return out;
  }

 private:
  struct SwitchState {
    net::FlowTable table;
    std::set<int64_t> ports;
    bool up = true;
  };
  struct Counter {
    uint64_t tx = 0, rx = 0;
  };
  struct Endpoint {
    std::string node;
    int64_t port = 0;
  };
  struct Buffered {
    std::string sw;
    int64_t port = 0;
    SimPacket pkt;
  };

  void add_link(const LinkSpec& l) {
    attach_port(l.node_a, l.port_a);
    attach_port(l.node_b, l.port_b);
    peers_[{l.node_a, l.port_a}] = Endpoint{l.node_b, l.port_b};
    peers_[{l.node_b, l.port_b}] = Endpoint{l.node_a, l.port_a};
    caps_[{l.node_a, l.port_a}] = l.capacity_bps;
    caps_[{l.node_b, l.port_b}] = l.capacity_bps;
  }

  void add_host_internal(const HostSpec& h) {
    if (hosts_.count(h.id)) throw TopologyError("duplicate host " + h.id);
    require_switch(h.sw);
    hosts_[h.id] = h;
    host_at_[{h.sw, h.port}] = h.id;
    add_link(LinkSpec{h.id, 0, h.sw, h.port, h.capacity_bps});
  }

  void attach_port(const std::string& node, int64_t port) {
    auto it = switches_.find(node);
    if (it == switches_.end()) return;  // host side
    if (!it->second.ports.insert(port).second)
      throw TopologyError("port " + std::to_string(port) + " reused on " +
                          node);
  }

  void require_switch(const std::string& sw) const {
    auto it = switches_.find(sw);
    if (it == switches_.end() || !it->second.up) throw UnknownSwitch(sw);
  }

  const HostSpec& host(const std::string& id) const {
    auto it = hosts_.find(id);
    if (it == hosts_.end()) throw TopologyError("unknown host " + id);
    return it->second;
  }

  Flow& flow_mut(int64_t id) {
    auto it = flows_.find(id);
    if (it == flows_.end()) throw MorpheusError("unknown flow");
    return it->second;
  }

  void emit(const NetworkEvent& ev) {
    if (handler_) handler_(ev);
  }

  // --- traversal ---------------------------------------------------------------

  void inject_probe(Flow& f, PktKind kind) {
    SimPacket pkt;
    pkt.kind = kind;
    pkt.flow_id = f.id;
    pkt.uid = next_uid_++;
    if (kind == PktKind::kDataRev) {
      const HostSpec& server = host(f.server_host);
      pkt.hdr.src_ip = f.dst_ip;
      pkt.hdr.dst_ip = f.src_ip;
      pkt.hdr.src_port = f.dst_port;
      pkt.hdr.dst_port = f.src_port;
      pkt.hdr.proto = f.proto;
      enter_network(server, pkt);
    } else {
      const HostSpec& src = host(f.src_host);
      pkt.hdr.src_ip = f.src_ip;
      pkt.hdr.dst_ip = f.dst_ip;
      pkt.hdr.src_port = f.src_port;
      pkt.hdr.dst_port = f.dst_port;
      pkt.hdr.proto = f.proto;
      enter_network(src, pkt);
    }
  }

  void enter_network(const HostSpec& from, SimPacket pkt) {
    pkt.link_path.push_back({from.id, 0});
    deliver_to(from.sw, from.port, std::move(pkt));
  }

  void deliver_to(const std::string& node, int64_t port, SimPacket pkt) {
    auto sw = switches_.find(node);
    if (sw != switches_.end()) {
      if (!sw->second.up) return drop(pkt, node, port, "switch_down");
      switch_receive(node, port, std::move(pkt));
      return;
    }
    host_receive(node, std::move(pkt));
  }

  void switch_receive(const std::string& sw, int64_t in_port, SimPacket pkt) {
    if (--pkt.ttl <= 0) return drop(pkt, sw, in_port, "ttl");
    pkt.hdr.sw = sw;
    pkt.hdr.port = in_port;
    pkt.switch_path.push_back(sw);
    if (pkt.kind == PktKind::kLldp) {
      // Discovery frames bypass the forwarding pipeline: switches always
      // punt them to the controller, and nothing ever claims them back.
      packet_in_count_++;
      emit(PacketInEvent{sw, in_port, std::move(pkt), 0});
      return;
    }
    const net::TableResult res =
        net::apply_table(switches_.at(sw).table, pkt.hdr);
    if (!res.matched || res.out.empty()) {
      // Either a miss or a residual drop rule: the policy has nothing
      // positive to say about this packet, so defer to the controller.
      // Deliberate denial stays the controller's call (it can just let the
      // buffered packet age out).
      park_packet_in(sw, in_port, std::move(pkt));
      return;
    }
    for (const net::Packet& out : res.out) {
      SimPacket copy = pkt;
      copy.hdr = out;
      if (out.port == net::kFloodPort) {
        copy.hdr.port = in_port;
        flood_from(sw, copy, in_port);
      } else {
        forward(sw, out.port, copy);
      }
    }
  }

  void flood_from(const std::string& sw, const SimPacket& pkt,
                  int64_t except_port) {
    for (int64_t p : switches_.at(sw).ports)
      if (p != except_port) forward(sw, p, pkt);
  }

  void forward(const std::string& node, int64_t out_port, SimPacket pkt) {
    auto peer = peers_.find({node, out_port});
    if (peer == peers_.end())
      return drop(pkt, node, out_port, "no_link");
    pkt.link_path.push_back({node, out_port});
    deliver_to(peer->second.node, peer->second.port, std::move(pkt));
  }

  void host_receive(const std::string& host_id, SimPacket pkt) {
    if (pkt.kind == PktKind::kLldp) return;  // hosts ignore discovery frames
    // Hosts only accept traffic addressed to them; stray copies (e.g. from
    // controller flooding) are ignored, not treated as misdelivery.
    if (pkt.hdr.dst_ip != hosts_.at(host_id).ip) return;
    auto fit = flows_.find(pkt.flow_id);
    if (fit == flows_.end()) return;
    Flow& f = fit->second;
    if (f.state == FlowState::kClosed || f.state == FlowState::kReset) return;
    switch (pkt.kind) {
      case PktKind::kSyn: {
        records_[host_id].insert(f.id);
        SimPacket ack;
        ack.kind = PktKind::kSynAck;
        ack.flow_id = f.id;
        ack.uid = next_uid_++;
        ack.from_host = host_id;
        ack.hdr.src_ip = pkt.hdr.dst_ip;
        ack.hdr.dst_ip = pkt.hdr.src_ip;
        ack.hdr.src_port = pkt.hdr.dst_port;
        ack.hdr.dst_port = pkt.hdr.src_port;
        ack.hdr.proto = pkt.hdr.proto;
        // Remember the forward path the handshake took.
        f.pending_path = pkt.switch_path;
        f.pending_links = pkt.link_path;
        enter_network(host(host_id), std::move(ack));
        return;
      }
      case PktKind::kSynAck: {
        if (host_id != f.src_host) return;  // stray copy
        if (f.state == FlowState::kConnecting) {
          f.state = FlowState::kEstablished;
          f.server_host = pkt.from_host;
          set_path(f, f.pending_path, f.pending_links);
        }
        f.fwd_ok = f.rev_ok = true;  // round trip proves both directions
        f.packets_delivered += 2;
        return;
      }
      case PktKind::kData: {
        if (!host_has_record(host_id, f.id)) {
          // Connection affinity break: the flow landed on a host that
          // never saw its handshake.
          f.state = FlowState::kReset;
          drops_.push_back(DropRecord{rt_->now(), host_id, 0, pkt.kind, f.id,
                                      "affinity_reset"});
          return;
        }
        f.fwd_ok = true;
        f.packets_delivered++;
        set_path(f, pkt.switch_path, pkt.link_path);
        return;
      }
      case PktKind::kDataRev: {
        if (host_id != f.src_host) return;
        f.rev_ok = true;
        f.packets_delivered++;
        return;
      }
      case PktKind::kLldp: return;
    }
  }

  void set_path(Flow& f, const std::vector<std::string>& sw_path,
                const std::vector<std::pair<std::string, int64_t>>& links) {
    if (sw_path.empty()) return;
    if (f.current_path != sw_path) {
      f.path_history.push_back(sw_path);
      f.current_path = sw_path;
      f.current_links = links;
    }
  }

  void park_packet_in(const std::string& sw, int64_t port, SimPacket pkt) {
    uint64_t buf_id = pkt.uid;
    // Track which probe is waiting so the flow does not retransmit while
    // the controller is still deciding.
    if (pkt.flow_id >= 0) {
      auto fit = flows_.find(pkt.flow_id);
      if (fit != flows_.end()) {
        if (pkt.kind == PktKind::kDataRev)
          fit->second.parked_rev = buf_id;
        else
          fit->second.parked_fwd = buf_id;
      }
    }
    buffers_[buf_id] = Buffered{sw, port, pkt};
    packet_in_count_++;
    emit(PacketInEvent{sw, port, std::move(pkt), buf_id});
  }

  void claim_buffer(uint64_t uid) {
    auto it = buffers_.find(uid);
    if (it == buffers_.end()) return;
    unpark(it->second.pkt);
    buffers_.erase(it);
  }

  void unpark(const SimPacket& pkt) {
    if (pkt.flow_id < 0) return;
    auto fit = flows_.find(pkt.flow_id);
    if (fit == flows_.end()) return;
    if (fit->second.parked_fwd == pkt.uid) fit->second.parked_fwd = 0;
    if (fit->second.parked_rev == pkt.uid) fit->second.parked_rev = 0;
  }

  void expire_buffers() {
    for (auto& [uid, b] : buffers_) {
      unpark(b.pkt);
      drops_.push_back(DropRecord{rt_->now(), b.sw, b.port, b.pkt.kind,
                                  b.pkt.flow_id, "expired"});
    }
    buffers_.clear();
  }

  void drop(const SimPacket& pkt, const std::string& node, int64_t port,
            const std::string& reason) {
    unpark(pkt);
    drops_.push_back(
        DropRecord{rt_->now(), node, port, pkt.kind, pkt.flow_id, reason});
  }

  // --- throughput ----------------------------------------------------------------

  std::map<int64_t, double> fair_share(const std::vector<Flow*>& open) const {
    std::map<int64_t, std::vector<LinkSeg>> usage;
    for (const Flow* f : open) usage[f->id] = f->current_links;
    return maxmin_fair(usage, caps_);
  }

  void account_traffic(Flow& f, double bps) {
    const double bytes = bps / 8.0;
    f.bytes_acked += bytes;
    f.packets_delivered += static_cast<uint64_t>(bytes / 1500.0);
    for (const auto& [node, port] : f.current_links) {
      counters_[{node, port}].tx += static_cast<uint64_t>(bytes);
      auto peer = peers_.find({node, port});
      if (peer != peers_.end())
        counters_[{peer->second.node, peer->second.port}].rx +=
            static_cast<uint64_t>(bytes);
    }
  }

  Runtime* rt_;
  std::function<void(const NetworkEvent&)> handler_;
  std::map<std::string, SwitchState> switches_;
  std::map<std::string, HostSpec> hosts_;
  std::map<std::pair<std::string, int64_t>, std::string> host_at_;
  std::map<std::pair<std::string, int64_t>, Endpoint> peers_;
  std::map<std::pair<std::string, int64_t>, double> caps_;
  std::map<std::pair<std::string, int64_t>, Counter> counters_;
  std::map<std::string, std::set<int64_t>> records_;  // host -> known flows
  std::map<int64_t, Flow> flows_;
  std::map<uint64_t, Buffered> buffers_;
  std::vector<BucketSample> series_;
  std::vector<DropRecord> drops_;
  uint64_t packet_in_count_ = 0;
  int64_t next_flow_id_ = 1;
  uint64_t next_uid_ = 1;
};

}  // namespace morpheus::sim
