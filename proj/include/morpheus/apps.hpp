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

// Control applications and the host that runs them.
//
// Apps are written against a small behavior interface and keep all durable
// state in the store, so a restarted instance (same or newer version)
// reconstructs itself entirely from what it reads back. The AppHost wraps a
// behavior in a runtime task: it boots the app after a start delay,
// connects its sessions, pumps events and notifications into it, and
// implements the graceful quiesce handshake used by coordinated updates.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <tuple>
#include <utility>
#include <variant>
#include <vector>

#include "morpheus/document.hpp"
#include "morpheus/errors.hpp"
#include "morpheus/nib.hpp"
#include "morpheus/platform.hpp"
#include "morpheus/runtime.hpp"
#include "morpheus/sim/simnet.hpp"

namespace morpheus {

// App process cost model, in simulated seconds.
constexpr double kBootDelaySec = 0.05;        // process start to connected
constexpr double kQuiesceFlushSec = 0.02;     // drain + final flush before ack
constexpr double kAppRestartDelaySec = 1.5;   // tear down + exec a new binary

struct AppCtx {
  Runtime* rt = nullptr;
  Platform* plat = nullptr;
  nib::NibStore* nib = nullptr;
  SessionPtr session;
  nib::NibSessionPtr nib_session;
  const Document* config = nullptr;
  std::string app_id;
  std::string version;
};

class AppBehavior {
 public:
  virtual ~AppBehavior() = default;

  // Namespace -> version the app requires at connect time.
  virtual std::vector<std::pair<std::string, std::string>> namespaces()
      const = 0;
  // Network event classes the app wants; empty means all.
  virtual std::set<std::string> event_classes() const { return {}; }
  // Store channels to subscribe to.
  virtual std::vector<std::string> channels() const { return {}; }
  // Period for on_tick, if the app does periodic work.
  virtual std::optional<double> tick_period() const { return std::nullopt; }

  virtual void on_start(AppCtx&) {}
  virtual void on_event(AppCtx&, const sim::NetworkEvent&) {}
  virtual void on_notify(AppCtx&, const nib::Notification&) {}
  // Called once after a non-empty batch of events/notifications.
  virtual void on_drained(AppCtx&) {}
  virtual void on_tick(AppCtx&) {}
};

// --- policy construction helpers ---------------------------------------------

namespace detail {

using FieldTest = std::pair<net::Field, net::FieldValue>;

// filter(t1 and t2 and ...) ; f1 := v1 ; ... ; port := out_port
inline net::PolicyPtr match_then(const std::vector<FieldTest>& tests,
                                 const std::vector<FieldTest>& sets,
                                 int64_t out_port) {
  net::PredPtr pred = net::pred_true();
  for (const auto& [f, v] : tests) pred = net::pred_and(pred, net::test(f, v));
  net::PolicyPtr pol = net::filter(pred);
  for (const auto& [f, v] : sets) pol = net::pseq(pol, net::modify(f, v));
  return net::pseq(pol,
                   net::modify(net::Field::kPort, net::FieldValue(out_port)));
}

inline std::string tuple_key(const std::string& a_ip, int64_t a_port,
                             const std::string& b_ip, int64_t b_port) {
  return a_ip + "_" + std::to_string(a_port) + "_" + b_ip + "_" +
         std::to_string(b_port);
}

inline void push_or_retract(AppCtx& ctx, net::PolicyClass cls,
                            std::vector<net::PolicyPtr> rules) {
  net::AppPolicy pol{ctx.app_id, cls, nullptr};
  if (!rules.empty()) pol.policy = net::union_all(std::move(rules));
  ctx.plat->update(ctx.session, std::move(pol));
}

}  // namespace detail

// --- firewall ----------------------------------------------------------------
//
// Guards a single switch between trusted and untrusted hosts. All durable
// state lives in the store:
//   fw_allowed: approved connections, keyed
//               <trusted_ip>_<trusted_port>_<untrusted_ip>_<untrusted_port>
//   fw_pending: outbound connections awaiting return traffic (v2+)
// Version 1 approves a pair the moment a trusted host initiates. Version 2
// forwards outbound immediately but approves the pair only when the
// untrusted side answers. Version 3 additionally sweeps idle entries every
// few seconds, using per-flow delivery counters published in flow_stats.
class FirewallApp : public AppBehavior {
 public:
  FirewallApp(int version, const Document& config) : version_(version) {
    for (const auto& ip : config.at("trusted"))
      trusted_.insert(ip.get<std::string>());
    for (const auto& [ip, port] : config.at("host_ports").items())
      host_ports_[ip] = port.get<int64_t>();
    sweep_period_ = config.value("sweep_period", 3.0);
  }

  std::vector<std::pair<std::string, std::string>> namespaces() const override {
    switch (version_) {
      case 1:
        return {{"fw_allowed", "ns_v0"}};
      case 2:
        return {{"fw_allowed", "ns_v0"}, {"fw_pending", "ns_v0"}};
      default:
        return {{"fw_allowed", "ns_v1"},
                {"fw_pending", "ns_v0"},
                {"flow_stats", "ns_v0"}};
    }
  }
  std::set<std::string> event_classes() const override { return {"packet_in"}; }
  std::optional<double> tick_period() const override {
    if (version_ >= 3) return sweep_period_;
    return std::nullopt;
  }

  void on_start(AppCtx& ctx) override { push(ctx); }

  void on_event(AppCtx& ctx, const sim::NetworkEvent& ev) override {
    const auto* pin = std::get_if<sim::PacketInEvent>(&ev);
    if (!pin || pin->pkt.kind == sim::PktKind::kLldp) return;
    const net::Packet& hdr = pin->pkt.hdr;
    if (trusted_.count(hdr.src_ip) > 0)
      outbound(ctx, *pin);
    else
      inbound(ctx, *pin);
  }

  // Sweep: an approved connection whose delivery counter has not moved
  // since the last sweep is idle and loses its entry.
  void on_tick(AppCtx& ctx) override {
    bool removed = false;
    for (const std::string& key :
         ctx.nib->list_keys(ctx.nib_session, "fw_allowed", "*")) {
      auto doc = ctx.nib->get(ctx.nib_session, "fw_allowed", key);
      if (!doc) continue;
      int64_t count = 0;
      if (auto fs = ctx.nib->get(ctx.nib_session, "flow_stats", key))
        count = fs->value("packets", static_cast<int64_t>(0));
      const int64_t last = doc->value("last_count", static_cast<int64_t>(0));
      if (count > last) {
        (*doc)["last_count"] = count;
        ctx.nib->put(ctx.nib_session, "fw_allowed", key, *doc);
      } else {
        ctx.nib->erase(ctx.nib_session, "fw_allowed", key);
        removed = true;
      }
    }
    if (removed) push(ctx);
  }

 private:
  void outbound(AppCtx& ctx, const sim::PacketInEvent& pin) {
    const net::Packet& hdr = pin.pkt.hdr;
    const std::string key =
        detail::tuple_key(hdr.src_ip, hdr.src_port, hdr.dst_ip, hdr.dst_port);
    if (ctx.nib->get(ctx.nib_session, "fw_allowed", key)) {
      send(ctx, pin);
      return;
    }
    if (version_ == 1) {
      ctx.nib->put(ctx.nib_session, "fw_allowed", key,
                   entry_doc(hdr.src_ip, hdr.src_port, hdr.dst_ip,
                             hdr.dst_port));
      push(ctx);
    } else if (!ctx.nib->get(ctx.nib_session, "fw_pending", key)) {
      ctx.nib->put(ctx.nib_session, "fw_pending", key,
                   entry_doc(hdr.src_ip, hdr.src_port, hdr.dst_ip,
                             hdr.dst_port));
      push(ctx);
    }
    send(ctx, pin);
  }

  void inbound(AppCtx& ctx, const sim::PacketInEvent& pin) {
    const net::Packet& hdr = pin.pkt.hdr;
    // Inbound traffic belongs to a pair keyed by its trusted endpoint.
    const std::string rkey =
        detail::tuple_key(hdr.dst_ip, hdr.dst_port, hdr.src_ip, hdr.src_port);
    if (ctx.nib->get(ctx.nib_session, "fw_allowed", rkey)) {
      send(ctx, pin);
      return;
    }
    if (version_ >= 2 && ctx.nib->get(ctx.nib_session, "fw_pending", rkey)) {
      // The untrusted side answered: promote to a full approval.
      ctx.nib->erase(ctx.nib_session, "fw_pending", rkey);
      ctx.nib->put(ctx.nib_session, "fw_allowed", rkey,
                   entry_doc(hdr.dst_ip, hdr.dst_port, hdr.src_ip,
                             hdr.src_port));
      push(ctx);
      send(ctx, pin);
      return;
    }
    // Unsolicited inbound traffic: no verdict, the packet stays parked and
    // ages out at the switch.
  }

  Document entry_doc(const std::string& t_ip, int64_t t_port,
                     const std::string& u_ip, int64_t u_port) const {
    Document d{{"trusted_ip", t_ip},
               {"trusted_port", t_port},
               {"untrusted_ip", u_ip},
               {"untrusted_port", u_port}};
    if (version_ >= 3) d["last_count"] = 0;
    return d;
  }

  void send(AppCtx& ctx, const sim::PacketInEvent& pin) {
    auto it = host_ports_.find(pin.pkt.hdr.dst_ip);
    if (it == host_ports_.end()) return;
    ctx.plat->pkt_out(ctx.session, pin.sw, pin.pkt, it->second);
  }

  void push(AppCtx& ctx) {
    using net::Field;
    std::vector<net::PolicyPtr> rules;
    auto add = [&](const Document& d, bool both_ways) {
      const std::string t_ip = d.at("trusted_ip").get<std::string>();
      const std::string u_ip = d.at("untrusted_ip").get<std::string>();
      const int64_t t_port = d.at("trusted_port").get<int64_t>();
      const int64_t u_port = d.at("untrusted_port").get<int64_t>();
      auto t_at = host_ports_.find(t_ip);
      auto u_at = host_ports_.find(u_ip);
      if (t_at == host_ports_.end() || u_at == host_ports_.end()) return;
      rules.push_back(detail::match_then(
          {{Field::kSrcIp, net::FieldValue(t_ip)},
           {Field::kSrcPort, net::FieldValue(t_port)},
           {Field::kDstIp, net::FieldValue(u_ip)},
           {Field::kDstPort, net::FieldValue(u_port)}},
          {}, u_at->second));
      if (both_ways) {
        rules.push_back(detail::match_then(
            {{Field::kSrcIp, net::FieldValue(u_ip)},
             {Field::kSrcPort, net::FieldValue(u_port)},
             {Field::kDstIp, net::FieldValue(t_ip)},
             {Field::kDstPort, net::FieldValue(t_port)}},
            {}, t_at->second));
      }
    };
    for (const std::string& key :
         ctx.nib->list_keys(ctx.nib_session, "fw_allowed", "*"))
      if (auto d = ctx.nib->get(ctx.nib_session, "fw_allowed", key))
        add(*d, true);
    if (version_ >= 2) {
      for (const std::string& key :
           ctx.nib->list_keys(ctx.nib_session, "fw_pending", "*"))
        if (auto d = ctx.nib->get(ctx.nib_session, "fw_pending", key))
          add(*d, false);
    }
    detail::push_or_retract(ctx, net::PolicyClass::kFiltering,
                            std::move(rules));
  }

  int version_;
  std::set<std::string> trusted_;
  std::map<std::string, int64_t> host_ports_;
  double sweep_period_ = 3.0;
};

// --- topology discovery --------------------------------------------------------
//
// Maintains the network map in the `topology` namespace:
//   node_<sw>:               {"id", "ports"}
//   edge_<a>_<pa>_<b>_<pb>:  {"a","a_port","b","b_port"} (+ "weight" in v2)
//   host_<ip>:               {"ip","switch","port"}
// Links are found with discovery frames sent out one switch per tick, round
// robin. Hosts are learned from the first diverted packet they send: a
// packet parked at its very first switch entered the network there.
// Version 2 additionally keeps an exponentially-smoothed congestion weight
// per edge, fed by the per-port counters the platform polls.
class TopologyApp : public AppBehavior {
 public:
  TopologyApp(int version, const Document& config) : version_(version) {
    period_ = config.value("lldp_period", 1.0);
    default_capacity_ = config.value("default_capacity_bps", 1e6);
  }

  std::vector<std::pair<std::string, std::string>> namespaces() const override {
    return {{"topology", version_ >= 2 ? "ns_v1" : "ns_v0"}};
  }
  std::optional<double> tick_period() const override { return period_; }

  void on_start(AppCtx& ctx) override {
    // A restarted instance resumes the discovery rotation over whatever
    // nodes it already knows; switch_up replays refresh the rest.
    for (const std::string& key :
         ctx.nib->list_keys(ctx.nib_session, "topology", "node_*"))
      remember_switch(key.substr(5));
    // Announce an empty contribution: discovery installs no rules, but a
    // coordinated update cannot complete until every participant has pushed.
    detail::push_or_retract(ctx, net::PolicyClass::kForwarding, {});
  }

  void on_event(AppCtx& ctx, const sim::NetworkEvent& ev) override {
    if (const auto* up = std::get_if<sim::SwitchUpEvent>(&ev)) {
      ctx.nib->put(ctx.nib_session, "topology", "node_" + up->sw,
                   Document{{"id", up->sw}, {"ports", up->ports}});
      remember_switch(up->sw);
      return;
    }
    if (const auto* down = std::get_if<sim::SwitchDownEvent>(&ev)) {
      ctx.nib->erase(ctx.nib_session, "topology", "node_" + down->sw);
      switches_.erase(std::remove(switches_.begin(), switches_.end(),
                                  down->sw),
                      switches_.end());
      return;
    }
    if (const auto* pin = std::get_if<sim::PacketInEvent>(&ev)) {
      if (pin->pkt.kind == sim::PktKind::kLldp)
        edge_seen(ctx, *pin);
      else
        host_seen(ctx, *pin);
      return;
    }
    if (version_ >= 2) {
      if (const auto* st = std::get_if<sim::PortStatsEvent>(&ev))
        port_sample(*st);
    }
  }

  void on_drained(AppCtx& ctx) override {
    if (version_ >= 2 && !fresh_rate_.empty()) apply_load_samples(ctx);
  }

  void on_tick(AppCtx& ctx) override {
    if (switches_.empty()) return;
    const std::string sw = switches_[rr_ % switches_.size()];
    rr_++;
    auto node = ctx.nib->get(ctx.nib_session, "topology", "node_" + sw);
    if (!node) return;
    for (const auto& port : node->at("ports")) {
      sim::SimPacket probe;
      probe.kind = sim::PktKind::kLldp;
      probe.lldp_sw = sw;
      probe.lldp_port = port.get<int64_t>();
      ctx.plat->pkt_out(ctx.session, sw, probe, probe.lldp_port);
    }
  }

 private:
  void remember_switch(const std::string& sw) {
    auto it = std::lower_bound(switches_.begin(), switches_.end(), sw);
    if (it == switches_.end() || *it != sw) switches_.insert(it, sw);
  }

  void edge_seen(AppCtx& ctx, const sim::PacketInEvent& pin) {
    std::string a = pin.pkt.lldp_sw, b = pin.sw;
    int64_t pa = pin.pkt.lldp_port, pb = pin.port;
    if (std::tie(b, pb) < std::tie(a, pa)) {
      std::swap(a, b);
      std::swap(pa, pb);
    }
    const std::string key = "edge_" + a + "_" + std::to_string(pa) + "_" + b +
                            "_" + std::to_string(pb);
    if (ctx.nib->get(ctx.nib_session, "topology", key)) return;
    Document d{{"a", a}, {"a_port", pa}, {"b", b}, {"b_port", pb}};
    if (version_ >= 2) d["weight"] = 1.0;
    ctx.nib->put(ctx.nib_session, "topology", key, d);
  }

  void host_seen(AppCtx& ctx, const sim::PacketInEvent& pin) {
    // Only trust packets diverted at their first switch; flooded copies
    // park deeper in the network and say nothing about attachment.
    if (pin.pkt.switch_path.size() != 1) return;
    const std::string& ip = pin.pkt.hdr.src_ip;
    if (ip.empty()) return;
    const std::string key = "host_" + ip;
    if (ctx.nib->get(ctx.nib_session, "topology", key)) return;
    ctx.nib->put(ctx.nib_session, "topology", key,
                 Document{{"ip", ip}, {"switch", pin.sw}, {"port", pin.port}});
  }

  void port_sample(const sim::PortStatsEvent& st) {
    const std::pair<std::string, int64_t> port{st.sw, st.port};
    auto it = last_tx_.find(port);
    if (it != last_tx_.end() && st.at > it->second.second) {
      const double bits = 8.0 * static_cast<double>(st.tx_bytes -
                                                    it->second.first);
      fresh_rate_[port] = bits / (st.at - it->second.second);
    }
    last_tx_[port] = {st.tx_bytes, st.at};
  }

  // One batch of port counters becomes one smoothing step per edge:
  //   w' = w + 0.5 * ((1 + load) - w), floored at 1,
  // where load is the busier direction's rate over the link capacity.
  void apply_load_samples(AppCtx& ctx) {
    for (const std::string& key :
         ctx.nib->list_keys(ctx.nib_session, "topology", "edge_*")) {
      auto doc = ctx.nib->get(ctx.nib_session, "topology", key);
      if (!doc) continue;
      auto ra = fresh_rate_.find({doc->at("a").get<std::string>(),
                                  doc->at("a_port").get<int64_t>()});
      auto rb = fresh_rate_.find({doc->at("b").get<std::string>(),
                                  doc->at("b_port").get<int64_t>()});
      if (ra == fresh_rate_.end() || rb == fresh_rate_.end()) continue;
      const double load =
          std::max(ra->second, rb->second) / default_capacity_;
      const double w = doc->value("weight", 1.0);
      const double next = std::max(1.0, w + 0.5 * ((1.0 + load) - w));
      if (std::abs(next - w) > 1e-9) {
        (*doc)["weight"] = next;
        ctx.nib->put(ctx.nib_session, "topology", key, *doc);
      }
    }
    fresh_rate_.clear();
  }

  int version_;
  double period_ = 1.0;
  double default_capacity_ = 1e6;
  std::vector<std::string> switches_;  // sorted; rotation order
  size_t rr_ = 0;
  std::map<std::pair<std::string, int64_t>, std::pair<uint64_t, double>>
      last_tx_;  // port -> (tx_bytes, at)
  std::map<std::pair<std::string, int64_t>, double> fresh_rate_;  // bits/sec
};

// --- routing -------------------------------------------------------------------
//
// Routes individual connections over the discovered topology. Each routed
// connection has a document in `routes` keyed by its client-oriented
// four-tuple, holding the switch path; the pushed policy pins both
// directions of every connection to its path. Version 1 picks shortest
// paths by hop count (ties broken lexicographically) and re-derives them
// whenever the map changes. Version 2 scores paths by the congestion
// weights, but moves traffic conservatively: a connection is reassigned
// only to a path at least 25% cheaper, and at most one connection moves
// per recomputation.
class RoutingApp : public AppBehavior {
 public:
  explicit RoutingApp(int version) : version_(version) {}

  std::vector<std::pair<std::string, std::string>> namespaces() const override {
    return {{"routes", "ns_v0"},
            {"topology", version_ >= 2 ? "ns_v1" : "ns_v0"}};
  }
  std::set<std::string> event_classes() const override { return {"packet_in"}; }
  std::vector<std::string> channels() const override { return {"ns:topology"}; }

  void on_start(AppCtx& ctx) override {
    recompute(ctx);
    push(ctx);  // unconditional: a fresh instance must announce itself
  }

  void on_event(AppCtx& ctx, const sim::NetworkEvent& ev) override {
    const auto* pin = std::get_if<sim::PacketInEvent>(&ev);
    if (!pin || pin->pkt.kind == sim::PktKind::kLldp) return;
    const net::Packet& hdr = pin->pkt.hdr;
    const bool from_client = pin->pkt.kind == sim::PktKind::kSyn ||
                             pin->pkt.kind == sim::PktKind::kData;
    const std::string key =
        from_client
            ? detail::tuple_key(hdr.src_ip, hdr.src_port, hdr.dst_ip,
                                hdr.dst_port)
            : detail::tuple_key(hdr.dst_ip, hdr.dst_port, hdr.src_ip,
                                hdr.src_port);
    auto route = ctx.nib->get(ctx.nib_session, "routes", key);
    if (!route) {
      route = try_create_route(ctx, key, hdr, from_client);
      if (!route) {
        // Cannot route yet. Handshake packets are flooded so discovery can
        // proceed; data waits for rules and ages out if none arrive.
        if (pin->pkt.kind == sim::PktKind::kSyn ||
            pin->pkt.kind == sim::PktKind::kSynAck)
          ctx.plat->pkt_out(ctx.session, pin->sw, pin->pkt, net::kFloodPort);
        return;
      }
    }
    release(ctx, *pin, *route, from_client);
  }

  void on_notify(AppCtx&, const nib::Notification&) override {
    topo_dirty_ = true;
  }

  void on_drained(AppCtx& ctx) override {
    if (!topo_dirty_) return;
    topo_dirty_ = false;
    if (recompute(ctx)) push(ctx);
  }

 private:
  struct Graph {
    // sw -> sorted neighbors (to, out_port, weight)
    std::map<std::string, std::vector<std::tuple<std::string, int64_t, double>>>
        adj;
    std::map<std::string, std::pair<std::string, int64_t>> host_at;
  };

  Graph load_graph(AppCtx& ctx) const {
    Graph g;
    for (const std::string& key :
         ctx.nib->list_keys(ctx.nib_session, "topology", "edge_*")) {
      auto d = ctx.nib->get(ctx.nib_session, "topology", key);
      if (!d) continue;
      const std::string a = d->at("a").get<std::string>();
      const std::string b = d->at("b").get<std::string>();
      const int64_t pa = d->at("a_port").get<int64_t>();
      const int64_t pb = d->at("b_port").get<int64_t>();
      const double w = version_ >= 2 ? d->value("weight", 1.0) : 1.0;
      g.adj[a].emplace_back(b, pa, w);
      g.adj[b].emplace_back(a, pb, w);
    }
    for (auto& [sw, nbrs] : g.adj) std::sort(nbrs.begin(), nbrs.end());
    for (const std::string& key :
         ctx.nib->list_keys(ctx.nib_session, "topology", "host_*")) {
      auto d = ctx.nib->get(ctx.nib_session, "topology", key);
      if (!d) continue;
      g.host_at[d->at("ip").get<std::string>()] = {
          d->at("switch").get<std::string>(), d->at("port").get<int64_t>()};
    }
    return g;
  }

  // Exhaustive search over simple paths; the controlled networks are tiny
  // and this makes the (cost, lexicographic-path) order unarguable.
  static std::optional<std::vector<std::string>> best_path(
      const Graph& g, const std::string& from, const std::string& to) {
    std::optional<std::vector<std::string>> best;
    double best_cost = 0;
    std::vector<std::string> stack{from};
    std::set<std::string> seen{from};
    std::function<void(const std::string&, double)> dfs =
        [&](const std::string& at, double cost) {
          if (at == to) {
            if (!best || cost < best_cost - 1e-12 ||
                (std::abs(cost - best_cost) <= 1e-12 && stack < *best)) {
              best = stack;
              best_cost = cost;
            }
            return;
          }
          auto it = g.adj.find(at);
          if (it == g.adj.end()) return;
          for (const auto& [nbr, port, w] : it->second) {
            if (seen.count(nbr)) continue;
            seen.insert(nbr);
            stack.push_back(nbr);
            dfs(nbr, cost + w);
            stack.pop_back();
            seen.erase(nbr);
          }
        };
    dfs(from, 0.0);
    return best;
  }

  static std::optional<double> path_cost(const Graph& g,
                                         const std::vector<std::string>& path) {
    double cost = 0;
    for (size_t i = 0; i + 1 < path.size(); ++i) {
      auto it = g.adj.find(path[i]);
      if (it == g.adj.end()) return std::nullopt;
      bool found = false;
      for (const auto& [nbr, port, w] : it->second) {
        if (nbr == path[i + 1]) {
          cost += w;
          found = true;
          break;
        }
      }
      if (!found) return std::nullopt;
    }
    return cost;
  }

  static std::optional<int64_t> hop_port(const Graph& g, const std::string& at,
                                         const std::string& next) {
    auto it = g.adj.find(at);
    if (it == g.adj.end()) return std::nullopt;
    for (const auto& [nbr, port, w] : it->second)
      if (nbr == next) return port;
    return std::nullopt;
  }

  std::optional<Document> try_create_route(AppCtx& ctx, const std::string& key,
                                           const net::Packet& hdr,
                                           bool from_client) {
    const Graph g = load_graph(ctx);
    const std::string src_ip = from_client ? hdr.src_ip : hdr.dst_ip;
    const std::string dst_ip = from_client ? hdr.dst_ip : hdr.src_ip;
    const int64_t src_port = from_client ? hdr.src_port : hdr.dst_port;
    const int64_t dst_port = from_client ? hdr.dst_port : hdr.src_port;
    auto src_at = g.host_at.find(src_ip);
    auto dst_at = g.host_at.find(dst_ip);
    if (src_at == g.host_at.end() || dst_at == g.host_at.end())
      return std::nullopt;
    auto path = best_path(g, src_at->second.first, dst_at->second.first);
    if (!path) return std::nullopt;
    Document doc{{"src_ip", src_ip},
                 {"src_port", src_port},
                 {"dst_ip", dst_ip},
                 {"dst_port", dst_port},
                 {"path", *path}};
    ctx.nib->put(ctx.nib_session, "routes", key, doc);
    push(ctx);
    return doc;
  }

  // Re-derive paths after a topology change. Returns true if any route
  // document changed.
  bool recompute(AppCtx& ctx) {
    const Graph g = load_graph(ctx);
    int moves_left = version_ >= 2 ? 1 : std::numeric_limits<int>::max();
    bool changed = false;
    for (const std::string& key :
         ctx.nib->list_keys(ctx.nib_session, "routes", "*")) {
      auto doc = ctx.nib->get(ctx.nib_session, "routes", key);
      if (!doc) continue;
      auto src_at = g.host_at.find(doc->at("src_ip").get<std::string>());
      auto dst_at = g.host_at.find(doc->at("dst_ip").get<std::string>());
      if (src_at == g.host_at.end() || dst_at == g.host_at.end()) continue;
      std::vector<std::string> cur =
          doc->at("path").get<std::vector<std::string>>();
      auto cur_cost = path_cost(g, cur);
      auto best = best_path(g, src_at->second.first, dst_at->second.first);
      if (!best || *best == cur) continue;
      bool adopt;
      if (!cur_cost) {
        adopt = true;  // current path no longer exists; not a choice
      } else if (version_ >= 2) {
        const double best_cost = *path_cost(g, *best);
        adopt = moves_left > 0 && best_cost < 0.75 * *cur_cost;
        if (adopt) moves_left--;
      } else {
        adopt = true;
      }
      if (!adopt) continue;
      (*doc)["path"] = *best;
      ctx.nib->put(ctx.nib_session, "routes", key, *doc);
      changed = true;
    }
    return changed;
  }

  void push(AppCtx& ctx) {
    using net::Field;
    const Graph g = load_graph(ctx);
    std::vector<net::PolicyPtr> rules;
    auto add_direction = [&](const std::vector<std::string>& path,
                             const std::string& src_ip, int64_t src_port,
                             const std::string& dst_ip, int64_t dst_port,
                             int64_t deliver_port) {
      for (size_t i = 0; i < path.size(); ++i) {
        int64_t out;
        if (i + 1 < path.size()) {
          auto port = hop_port(g, path[i], path[i + 1]);
          if (!port) return;
          out = *port;
        } else {
          out = deliver_port;
        }
        rules.push_back(detail::match_then(
            {{Field::kSwitch, net::FieldValue(path[i])},
             {Field::kSrcIp, net::FieldValue(src_ip)},
             {Field::kSrcPort, net::FieldValue(src_port)},
             {Field::kDstIp, net::FieldValue(dst_ip)},
             {Field::kDstPort, net::FieldValue(dst_port)}},
            {}, out));
      }
    };
    for (const std::string& key :
         ctx.nib->list_keys(ctx.nib_session, "routes", "*")) {
      auto doc = ctx.nib->get(ctx.nib_session, "routes", key);
      if (!doc) continue;
      auto src_at = g.host_at.find(doc->at("src_ip").get<std::string>());
      auto dst_at = g.host_at.find(doc->at("dst_ip").get<std::string>());
      if (src_at == g.host_at.end() || dst_at == g.host_at.end()) continue;
      const std::vector<std::string> path =
          doc->at("path").get<std::vector<std::string>>();
      if (path.empty()) continue;
      std::vector<std::string> back(path.rbegin(), path.rend());
      add_direction(path, doc->at("src_ip").get<std::string>(),
                    doc->at("src_port").get<int64_t>(),
                    doc->at("dst_ip").get<std::string>(),
                    doc->at("dst_port").get<int64_t>(), dst_at->second.second);
      add_direction(back, doc->at("dst_ip").get<std::string>(),
                    doc->at("dst_port").get<int64_t>(),
                    doc->at("src_ip").get<std::string>(),
                    doc->at("src_port").get<int64_t>(), src_at->second.second);
    }
    detail::push_or_retract(ctx, net::PolicyClass::kForwarding,
                            std::move(rules));
  }

  // Send a parked packet onward along its route (or flood if the packet
  // parked somewhere off the path, e.g. after a reroute).
  void release(AppCtx& ctx, const sim::PacketInEvent& pin, const Document& doc,
               bool forward_dir) {
    const Graph g = load_graph(ctx);
    std::vector<std::string> path =
        doc.at("path").get<std::vector<std::string>>();
    std::string deliver_ip =
        forward_dir ? doc.at("dst_ip").get<std::string>()
                    : doc.at("src_ip").get<std::string>();
    if (!forward_dir) std::reverse(path.begin(), path.end());
    auto here = std::find(path.begin(), path.end(), pin.sw);
    if (here == path.end()) {
      ctx.plat->pkt_out(ctx.session, pin.sw, pin.pkt, net::kFloodPort);
      return;
    }
    std::optional<int64_t> out;
    if (here + 1 != path.end()) {
      out = hop_port(g, *here, *(here + 1));
    } else {
      auto at = g.host_at.find(deliver_ip);
      if (at != g.host_at.end()) out = at->second.second;
    }
    if (out) ctx.plat->pkt_out(ctx.session, pin.sw, pin.pkt, *out);
  }

  int version_;
  bool topo_dirty_ = false;
};

// --- load balancer --------------------------------------------------------------
//
// Spreads client connections aimed at a virtual address across a pool of
// servers on one switch. Each connection's assignment lives in `lb_conns`,
// keyed <client_ip>_<client_port>, and is never changed once made: only
// unassigned connections are placed. Version 1 picks a server uniformly at
// random; version 2 picks the least-loaded server (fewest assignments, ties
// to the lowest id) and refuses connections when every server is at its
// configured capacity.
class LoadBalancerApp : public AppBehavior {
 public:
  LoadBalancerApp(int version, const Document& config)
      : version_(version),
        rng_(config.value("seed", static_cast<uint64_t>(1))) {
    vip_ = config.at("vip").get<std::string>();
    for (const auto& [ip, port] : config.at("host_ports").items())
      client_ports_[ip] = port.get<int64_t>();
    for (const auto& s : config.at("servers")) {
      servers_.push_back(Server{s.at("id").get<std::string>(),
                                s.at("ip").get<std::string>(),
                                s.at("port").get<int64_t>(),
                                s.value("cap_c", static_cast<int64_t>(1u << 20))});
    }
    std::sort(servers_.begin(), servers_.end(),
              [](const Server& a, const Server& b) { return a.id < b.id; });
  }

  std::vector<std::pair<std::string, std::string>> namespaces() const override {
    return {{"lb_conns", "ns_v0"}};
  }
  std::set<std::string> event_classes() const override { return {"packet_in"}; }

  void on_start(AppCtx& ctx) override { push(ctx); }

  void on_event(AppCtx& ctx, const sim::NetworkEvent& ev) override {
    const auto* pin = std::get_if<sim::PacketInEvent>(&ev);
    if (!pin || pin->pkt.kind == sim::PktKind::kLldp) return;
    const net::Packet& hdr = pin->pkt.hdr;
    if (hdr.dst_ip == vip_) {
      const std::string key =
          hdr.src_ip + "_" + std::to_string(hdr.src_port);
      auto doc = ctx.nib->get(ctx.nib_session, "lb_conns", key);
      if (!doc) {
        auto srv = choose(ctx);
        if (!srv) return;  // every server is full: refuse
        doc = Document{{"src_ip", hdr.src_ip},
                       {"src_port", hdr.src_port},
                       {"dst_port", hdr.dst_port},
                       {"server_id", srv->id},
                       {"server_ip", srv->ip},
                       {"server_port", srv->port}};
        ctx.nib->put(ctx.nib_session, "lb_conns", key, *doc);
        push(ctx);
      }
      sim::SimPacket fwd = pin->pkt;
      fwd.hdr.dst_ip = doc->at("server_ip").get<std::string>();
      ctx.plat->pkt_out(ctx.session, pin->sw, fwd,
                        doc->at("server_port").get<int64_t>());
      return;
    }
    // Server-to-client direction: masquerade as the virtual address.
    const std::string key = hdr.dst_ip + "_" + std::to_string(hdr.dst_port);
    auto doc = ctx.nib->get(ctx.nib_session, "lb_conns", key);
    auto cp = client_ports_.find(hdr.dst_ip);
    if (!doc || cp == client_ports_.end()) return;
    sim::SimPacket rev = pin->pkt;
    rev.hdr.src_ip = vip_;
    ctx.plat->pkt_out(ctx.session, pin->sw, rev, cp->second);
  }

 private:
  struct Server {
    std::string id, ip;
    int64_t port = 0;
    int64_t cap = 0;
  };

  const Server* choose(AppCtx& ctx) {
    if (servers_.empty()) return nullptr;
    if (version_ == 1) return &servers_[rng_() % servers_.size()];
    std::map<std::string, int64_t> load;
    for (const std::string& key :
         ctx.nib->list_keys(ctx.nib_session, "lb_conns", "*")) {
      if (auto d = ctx.nib->get(ctx.nib_session, "lb_conns", key))
        load[d->at("server_id").get<std::string>()]++;
    }
    const Server* pick = nullptr;
    int64_t pick_load = 0;
    for (const Server& s : servers_) {  // sorted by id: ties go low
      const int64_t n = load.count(s.id) ? load.at(s.id) : 0;
      if (n >= s.cap) continue;
      if (!pick || n < pick_load) {
        pick = &s;
        pick_load = n;
      }
    }
    return pick;
  }

  void push(AppCtx& ctx) {
    using net::Field;
    std::vector<net::PolicyPtr> rules;
    for (const std::string& key :
         ctx.nib->list_keys(ctx.nib_session, "lb_conns", "*")) {
      auto d = ctx.nib->get(ctx.nib_session, "lb_conns", key);
      if (!d) continue;
      const std::string c_ip = d->at("src_ip").get<std::string>();
      const int64_t c_port = d->at("src_port").get<int64_t>();
      const int64_t svc_port = d->at("dst_port").get<int64_t>();
      auto cp = client_ports_.find(c_ip);
      if (cp == client_ports_.end()) continue;
      rules.push_back(detail::match_then(
          {{Field::kSrcIp, net::FieldValue(c_ip)},
           {Field::kSrcPort, net::FieldValue(c_port)},
           {Field::kDstIp, net::FieldValue(vip_)}},
          {{Field::kDstIp,
            net::FieldValue(d->at("server_ip").get<std::string>())}},
          d->at("server_port").get<int64_t>()));
      rules.push_back(detail::match_then(
          {{Field::kDstIp, net::FieldValue(c_ip)},
           {Field::kDstPort, net::FieldValue(c_port)},
           {Field::kSrcPort, net::FieldValue(svc_port)}},
          {{Field::kSrcIp, net::FieldValue(vip_)}}, cp->second));
    }
    detail::push_or_retract(ctx, net::PolicyClass::kForwarding,
                            std::move(rules));
  }

  int version_;
  std::mt19937_64 rng_;
  std::string vip_;
  std::map<std::string, int64_t> client_ports_;
  std::vector<Server> servers_;
};

// --- registry -------------------------------------------------------------------

inline int parse_app_version(const std::string& version) {
  if (version.size() < 2 || version[0] != 'v') return -1;
  try {
    return std::stoi(version.substr(1));
  } catch (...) {
    return -1;
  }
}

inline std::unique_ptr<AppBehavior> make_app(const std::string& app_id,
                                             const std::string& version,
                                             const Document& config) {
  const int v = parse_app_version(version);
  try {
    if (app_id == "firewall" && v >= 1 && v <= 3)
      return std::make_unique<FirewallApp>(v, config);
    if (app_id == "topology" && v >= 1 && v <= 2)
      return std::make_unique<TopologyApp>(v, config);
    if (app_id == "routing" && v >= 1 && v <= 2)
      return std::make_unique<RoutingApp>(v);
    if (app_id == "loadbalancer" && v >= 1 && v <= 2)
      return std::make_unique<LoadBalancerApp>(v, config);
  } catch (const Document::exception&) {
    return nullptr;  // malformed config
  }
  return nullptr;
}

// --- app host -------------------------------------------------------------------

// Runs one app instance as a runtime task. The host owns the boot delay,
// the event pump, periodic ticks, and the quiesce/kill lifecycle; the
// behavior only sees its callbacks.
class AppHost {
 public:
  AppHost(Runtime* rt, Platform* plat, nib::NibStore* nib, std::string app_id,
          std::string version, Document config)
      : rt_(rt),
        plat_(plat),
        nib_(nib),
        app_id_(std::move(app_id)),
        version_(std::move(version)),
        config_(std::move(config)) {}

  AppHost(const AppHost&) = delete;
  AppHost& operator=(const AppHost&) = delete;
  ~AppHost() { kill(); }

  void spawn(double delay = kBootDelaySec) {
    boot_timer_ = rt_->schedule_at(rt_->now() + delay, [this] { boot(); });
  }

  // Graceful shutdown: the app drains what it has, flushes, acknowledges,
  // and exits. The callback fires when the ack would reach the coordinator.
  void quiesce(std::function<void()> on_acked) {
    if (killed_ || quiesced_ || failed_ || !task_) {
      quiesced_ = true;
      if (boot_timer_) {
        rt_->cancel_timer(*boot_timer_);
        boot_timer_.reset();
      }
      if (on_acked) on_acked();
      return;
    }
    quiescing_ = true;
    on_quiesced_ = std::move(on_acked);
    task_->wake();
  }

  // Immediate teardown, as if the process were killed.
  void kill() {
    if (killed_) return;
    killed_ = true;
    if (boot_timer_) rt_->cancel_timer(*boot_timer_);
    if (tick_timer_) rt_->cancel_timer(*tick_timer_);
    if (task_) task_->kill();
    if (session_ && !session_->disconnected) plat_->disconnect(session_);
  }

  // Fires if the instance fails to boot (bad version, schema skew, ...).
  void set_failure_callback(std::function<void()> cb) {
    on_failed_ = std::move(cb);
  }

  bool failed() const { return failed_; }
  const std::string& error() const { return error_; }
  bool quiesced() const { return quiesced_; }
  bool running() const {
    return !killed_ && !failed_ && !quiesced_ && (boot_timer_ || task_);
  }
  const std::string& app_id() const { return app_id_; }
  const std::string& version() const { return version_; }
  const SessionPtr& session() const { return session_; }

 private:
  void boot() {
    boot_timer_.reset();
    if (killed_) return;
    behavior_ = make_app(app_id_, version_, config_);
    if (!behavior_) {
      fail("no such app: " + app_id_ + "@" + version_);
      return;
    }
    try {
      nib_session_ = nib_->connect(app_id_, behavior_->namespaces());
    } catch (const MorpheusError& e) {
      fail(e.what());
      return;
    }
    session_ = plat_->connect_app(app_id_, version_, behavior_->event_classes());
    ctx_ = AppCtx{rt_,         plat_,   nib_,     session_,
                  nib_session_, &config_, app_id_, version_};
    for (const std::string& ch : behavior_->channels())
      subs_.push_back(nib_->subscribe(nib_session_, ch));
    task_ = rt_->spawn(app_id_ + "@" + version_, [this] { return pump(); });
    session_->inbox.attach(task_);
    for (auto& sub : subs_)
      sub->set_wake_callback([t = task_] { t->wake(); });
    behavior_->on_start(ctx_);
    if (auto period = behavior_->tick_period()) schedule_tick(*period);
  }

  void fail(std::string why) {
    failed_ = true;
    error_ = std::move(why);
    if (on_failed_) on_failed_();
  }

  void schedule_tick(double period) {
    tick_timer_ = rt_->schedule_at(rt_->now() + period, [this, period] {
      tick_timer_.reset();
      if (killed_ || quiesced_ || quiescing_ || failed_) return;
      behavior_->on_tick(ctx_);
      schedule_tick(period);
    });
  }

  Poll pump() {
    if (killed_) return Poll::kDone;
    int processed = 0;
    while (auto ev = session_->inbox.pop()) {
      behavior_->on_event(ctx_, *ev);
      processed++;
    }
    for (auto& sub : subs_) {
      while (auto n = sub->poll()) {
        behavior_->on_notify(ctx_, *n);
        processed++;
      }
    }
    if (processed > 0) behavior_->on_drained(ctx_);
    if (quiescing_) {
      quiescing_ = false;
      rt_->schedule_at(rt_->now() + kQuiesceFlushSec, [this] {
        if (killed_) return;
        quiesced_ = true;
        if (session_ && !session_->disconnected) plat_->disconnect(session_);
        if (tick_timer_) {
          rt_->cancel_timer(*tick_timer_);
          tick_timer_.reset();
        }
        if (on_quiesced_) {
          auto cb = std::move(on_quiesced_);
          on_quiesced_ = nullptr;
          cb();
        }
      });
      return Poll::kDone;
    }
    return processed > 0 ? Poll::kAgain : Poll::kIdle;
  }

  Runtime* rt_;
  Platform* plat_;
  nib::NibStore* nib_;
  std::string app_id_, version_;
  Document config_;

  std::unique_ptr<AppBehavior> behavior_;
  AppCtx ctx_;
  SessionPtr session_;
  nib::NibSessionPtr nib_session_;
  std::vector<nib::SubscriptionPtr> subs_;
  TaskPtr task_;
  std::optional<Runtime::TimerId> boot_timer_;
  std::optional<Runtime::TimerId> tick_timer_;

  bool quiescing_ = false;
  bool quiesced_ = false;
  bool killed_ = false;
  bool failed_ = false;
  std::string error_;
  std::function<void()> on_quiesced_;
  std::function<void()> on_failed_;
};

}  // namespace morpheus
