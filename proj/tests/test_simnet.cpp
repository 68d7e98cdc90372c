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

#include <catch2/catch_amalgamated.hpp>

#include <map>
#include <random>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include "morpheus/net/flowtable.hpp"
#include "morpheus/runtime.hpp"
#include "morpheus/sim/simnet.hpp"

using namespace morpheus;
using namespace morpheus::sim;
using morpheus::net::Action;
using morpheus::net::Field;
using morpheus::net::FieldValue;
using morpheus::net::FlowTable;
using morpheus::net::Rule;

namespace {

// One switch, two hosts on ports 1 and 2, 1 Mbps host links.
TopologySpec two_host_spec() {
  TopologySpec t;
  t.switches = {"s1"};
  t.hosts = {HostSpec{"h1", "10.0.0.1", "s1", 1, 1e6},
             HostSpec{"h2", "10.0.0.2", "s1", 2, 1e6}};
  return t;
}

// Four switches in a diamond: s1 -> (s2 | s3) -> s4, hosts at the ends.
TopologySpec diamond_spec() {
  TopologySpec t;
  t.switches = {"s1", "s2", "s3", "s4"};
  t.hosts = {HostSpec{"hA", "10.0.0.1", "s1", 1, 1e6},
             HostSpec{"hB", "10.0.0.2", "s1", 2, 1e6},
             HostSpec{"hS", "10.0.0.9", "s4", 1, 1e7}};
  t.links = {LinkSpec{"s1", 3, "s2", 1, 1e6}, LinkSpec{"s1", 4, "s3", 1, 1e6},
             LinkSpec{"s2", 2, "s4", 2, 1e6}, LinkSpec{"s3", 2, "s4", 3, 1e6}};
  return t;
}

Rule match_pair(int priority, const std::string& src_ip, int64_t src_port,
                const std::string& dst_ip, int64_t dst_port, int64_t out) {
  Rule r;
  r.priority = priority;
  r.match[Field::kSrcIp] = FieldValue(src_ip);
  r.match[Field::kSrcPort] = FieldValue(src_port);
  r.match[Field::kDstIp] = FieldValue(dst_ip);
  r.match[Field::kDstPort] = FieldValue(dst_port);
  r.actions = {Action::out(out)};
  return r;
}

// Forward everything addressed to dst_ip out `out`.
Rule match_dst(int priority, const std::string& dst_ip, int64_t out) {
  Rule r;
  r.priority = priority;
  r.match[Field::kDstIp] = FieldValue(dst_ip);
  r.actions = {Action::out(out)};
  return r;
}

struct Harness {
  Runtime rt;
  SimNet net;
  std::vector<NetworkEvent> events;

  explicit Harness(TopologySpec spec) : rt(1), net(std::move(spec), &rt) {
    net.set_event_handler([this](const NetworkEvent& ev) {
      events.push_back(ev);
    });
  }

  // Runs one 1-second bucket: probe rounds with idle controller in
  // between, then bucket accounting, then the clock moves on.
  void bucket() {
    double t = rt.now();
    for (int r = 0; r < kProbeRounds; ++r) {
      net.send_probes();
      rt.run_until_idle();
    }
    net.finish_bucket(t);
    rt.run_until(t + 1.0);
  }

  std::vector<PacketInEvent> packet_ins() {
    std::vector<PacketInEvent> out;
    for (const auto& ev : events)
      if (const auto* p = std::get_if<PacketInEvent>(&ev)) out.push_back(*p);
    return out;
  }
};

double last_bps(const SimNet& net, int64_t flow_id) {
  const auto& s = net.series();
  for (auto it = s.rbegin(); it != s.rend(); ++it)
    if (it->flow_id == flow_id) return it->bps;
  return -1;
}

}  // namespace

TEST_CASE("topology: JSON round-trip and validation") {
  Document j = Document{
      {"switches", {"s1"}},
      {"hosts", Document::array({Document{{"id", "h1"},
                                          {"ip", "10.0.0.1"},
                                          {"switch", "s1"},
                                          {"port", 1}}})},
      {"links", Document::array()}};
  TopologySpec spec = TopologySpec::from_json(j);
  CHECK(spec.switches == std::vector<std::string>{"s1"});
  REQUIRE(spec.hosts.size() == 1);
  CHECK(spec.hosts[0].capacity_bps == 1e6);

  Runtime rt;
  SimNet net(spec, &rt);
  CHECK(net.switch_ids() == std::vector<std::string>{"s1"});

  // Ports must be unique per node.
  TopologySpec bad = two_host_spec();
  bad.hosts.push_back(HostSpec{"h3", "10.0.0.3", "s1", 1, 1e6});
  CHECK_THROWS_AS(SimNet(bad, &rt), TopologyError);
}

TEST_CASE("start announces switches; empty tables divert to controller") {
  Harness h(two_host_spec());
  h.net.start();
  REQUIRE(h.events.size() == 1);
  auto up = std::get<SwitchUpEvent>(h.events[0]);
  CHECK(up.sw == "s1");
  CHECK(up.ports == std::vector<int64_t>{1, 2});

  int64_t fid = h.net.open_flow("h1", "10.0.0.2", 3456, 80);
  h.bucket();
  auto pins = h.packet_ins();
  REQUIRE_FALSE(pins.empty());
  CHECK(pins[0].sw == "s1");
  CHECK(pins[0].port == 1);
  CHECK(pins[0].pkt.kind == PktKind::kSyn);
  CHECK(h.net.flow(fid).state == FlowState::kConnecting);
  CHECK(last_bps(h.net, fid) == 0.0);

  // The unclaimed buffer expired as a drop.
  bool expired = false;
  for (const auto& d : h.net.drop_log())
    if (d.reason == "expired" && d.flow_id == fid) expired = true;
  CHECK(expired);
}

TEST_CASE("pkt_out resumes a diverted packet and claims its buffer") {
  Harness h(two_host_spec());
  h.net.start();
  int64_t fid = h.net.open_flow("h1", "10.0.0.2", 3456, 80);
  h.net.send_probes();
  auto pins = h.packet_ins();
  REQUIRE(pins.size() == 1);

  // Flood the parked handshake onward; the answer also diverts, flood it
  // back. That completes the round trip without any rules installed.
  h.net.pkt_out(pins[0].sw, pins[0].pkt, net::kFloodPort);
  auto pins2 = h.packet_ins();
  REQUIRE(pins2.size() == 2);
  CHECK(pins2[1].pkt.kind == PktKind::kSynAck);
  h.net.pkt_out(pins2[1].sw, pins2[1].pkt, net::kFloodPort);

  CHECK(h.net.flow(fid).state == FlowState::kEstablished);
  CHECK(h.net.flow(fid).server_host == "h2");
  h.net.finish_bucket(0.0);
  for (const auto& d : h.net.drop_log()) CHECK(d.reason != "expired");
  CHECK(last_bps(h.net, fid) == 1e6);  // sole flow, 1 Mbps host links
}

TEST_CASE("installed rules forward without controller involvement") {
  Harness h(two_host_spec());
  h.net.start();
  FlowTable t{"s1",
              {match_pair(1, "10.0.0.1", 3456, "10.0.0.2", 80, 2),
               match_pair(0, "10.0.0.2", 80, "10.0.0.1", 3456, 1)},
              {}};
  h.net.install_table("s1", t);
  int64_t fid = h.net.open_flow("h1", "10.0.0.2", 3456, 80);
  h.bucket();
  CHECK(h.net.flow(fid).state == FlowState::kEstablished);
  CHECK(h.net.packet_in_count() == 0);
  CHECK(last_bps(h.net, fid) == 1e6);
  CHECK(h.net.flow(fid).current_path == std::vector<std::string>{"s1"});
}

TEST_CASE("two flows on one link fair-share it at half rate") {
  TopologySpec spec = diamond_spec();
  Harness h(spec);
  h.net.start();
  // Route both hosts' traffic over the same path s1->s2->s4.
  h.net.install_table(
      "s1", FlowTable{"s1",
                      {match_dst(2, "10.0.0.9", 3),
                       match_dst(1, "10.0.0.1", 1), match_dst(0, "10.0.0.2", 2)},
                      {}});
  h.net.install_table(
      "s2", FlowTable{"s2",
                      {match_dst(2, "10.0.0.9", 2), match_dst(1, "10.0.0.1", 1),
                       match_dst(0, "10.0.0.2", 1)},
                      {}});
  h.net.install_table(
      "s4", FlowTable{"s4",
                      {match_dst(2, "10.0.0.9", 1), match_dst(1, "10.0.0.1", 2),
                       match_dst(0, "10.0.0.2", 2)},
                      {}});
  // s3 unused; reverse path carries no modeled load.
  int64_t fa = h.net.open_flow("hA", "10.0.0.9", 5001, 80);
  int64_t fb = h.net.open_flow("hB", "10.0.0.9", 5002, 80);
  h.bucket();
  CHECK(h.net.flow(fa).state == FlowState::kEstablished);
  CHECK(h.net.flow(fb).state == FlowState::kEstablished);
  CHECK(last_bps(h.net, fa) == 500e3);
  CHECK(last_bps(h.net, fb) == 500e3);
  CHECK(h.net.flow(fa).current_path ==
        std::vector<std::string>{"s1", "s2", "s4"});

  SECTION("moving one flow to the free path restores full rate") {
    auto t1 = h.net.table("s1");
    t1.rules[0] = match_dst(2, "10.0.0.9", 3);      // hB stays via s2
    Rule move = match_pair(3, "10.0.0.1", 5001, "10.0.0.9", 80, 4);
    t1.rules.insert(t1.rules.begin(), move);        // hA via s3
    h.net.install_table("s1", t1);
    h.net.install_table(
        "s3", FlowTable{"s3", {match_dst(1, "10.0.0.9", 2),
                               match_dst(0, "10.0.0.1", 1)}, {}});
    auto t4 = h.net.table("s4");
    h.net.install_table("s4", t4);
    h.bucket();
    CHECK(last_bps(h.net, fa) == 1e6);
    CHECK(last_bps(h.net, fb) == 1e6);
    CHECK(h.net.flow(fa).current_path ==
          std::vector<std::string>{"s1", "s3", "s4"});
    CHECK(h.net.flow(fa).path_history.size() == 2);
  }
}

TEST_CASE("max-min allocation: hand-derived cases") {
  using Caps = std::map<LinkSeg, double>;
  LinkSeg A{"a", 1}, B{"b", 1};

  // Two flows share A; one also crosses the narrower B.
  Caps caps{{A, 1e6}, {B, 300e3}};
  std::map<int64_t, std::vector<LinkSeg>> usage{{1, {A}}, {2, {A, B}}};
  auto rates = maxmin_fair(usage, caps);
  CHECK(rates[2] == 300e3);        // bottlenecked at B
  CHECK(rates[1] == 700e3);        // takes the rest of A

  // Three flows, one link.
  auto equal = maxmin_fair({{1, {A}}, {2, {A}}, {3, {A}}}, caps);
  CHECK(equal[1] == Catch::Approx(1e6 / 3));
  CHECK(equal[2] == equal[1]);
  CHECK(equal[3] == equal[1]);
}

TEST_CASE("max-min allocation satisfies the bottleneck property") {
  // Independent characterization: an allocation is max-min fair iff it is
  // feasible and every flow has a saturated link on which it gets the
  // maximum rate among that link's users.
  std::mt19937_64 rng(99);
  for (int trial = 0; trial < 300; ++trial) {
    const int n_links = 1 + static_cast<int>(rng() % 8);
    const int n_flows = 1 + static_cast<int>(rng() % 10);
    std::vector<LinkSeg> links;
    std::map<LinkSeg, double> caps;
    for (int l = 0; l < n_links; ++l) {
      LinkSeg seg{"L" + std::to_string(l), 1};
      links.push_back(seg);
      caps[seg] = 100e3 * (1 + rng() % 20);
    }
    std::map<int64_t, std::vector<LinkSeg>> usage;
    for (int f = 0; f < n_flows; ++f) {
      std::set<size_t> pick;
      size_t k = 1 + rng() % std::min<size_t>(3, links.size());
      while (pick.size() < k) pick.insert(rng() % links.size());
      for (size_t i : pick) usage[f].push_back(links[i]);
    }
    auto rates = maxmin_fair(usage, caps);

    std::map<LinkSeg, double> load;
    for (const auto& [id, segs] : usage)
      for (const auto& s : segs) load[s] += rates.at(id);
    for (const auto& [seg, used] : load)
      CHECK(used <= caps.at(seg) * (1 + 1e-9) + 1e-6);

    for (const auto& [id, segs] : usage) {
      bool has_bottleneck = false;
      for (const auto& s : segs) {
        if (load[s] < caps.at(s) - 1e-3) continue;  // not saturated
        bool is_max = true;
        for (const auto& [other, osegs] : usage) {
          if (std::find(osegs.begin(), osegs.end(), s) == osegs.end())
            continue;
          if (rates.at(other) > rates.at(id) + 1e-6) is_max = false;
        }
        if (is_max) has_bottleneck = true;
      }
      INFO("flow " << id << " rate " << rates.at(id));
      CHECK(has_bottleneck);
    }
  }
}

TEST_CASE("mid-flow delivery to a recordless host resets the connection") {
  TopologySpec spec = two_host_spec();
  spec.hosts.push_back(HostSpec{"h3", "10.0.0.3", "s1", 3, 1e6});
  Harness h(spec);
  h.net.start();
  h.net.install_table(
      "s1", FlowTable{"s1",
                      {match_pair(1, "10.0.0.1", 3456, "10.0.0.2", 80, 2),
                       match_pair(0, "10.0.0.2", 80, "10.0.0.1", 3456, 1)},
                      {}});
  int64_t fid = h.net.open_flow("h1", "10.0.0.2", 3456, 80);
  h.bucket();
  REQUIRE(h.net.flow(fid).state == FlowState::kEstablished);
  REQUIRE(h.net.flow(fid).server_host == "h2");

  // Re-point the forward rule at h3 (rewriting the address, as a load
  // balancer would); h3 never saw the handshake.
  Rule moved = match_pair(1, "10.0.0.1", 3456, "10.0.0.2", 80, 3);
  moved.actions = {Action::mod(Field::kDstIp, FieldValue(std::string("10.0.0.3"))),
                   Action::out(3)};
  h.net.install_table(
      "s1", FlowTable{"s1",
                      {moved, match_pair(0, "10.0.0.2", 80, "10.0.0.1", 3456, 1)},
                      {}});
  h.bucket();
  CHECK(h.net.flow(fid).state == FlowState::kReset);
  bool logged = false;
  for (const auto& d : h.net.drop_log())
    if (d.reason == "affinity_reset" && d.flow_id == fid) logged = true;
  CHECK(logged);
}

TEST_CASE("an established flow blocked for five seconds resets") {
  Harness h(two_host_spec());
  h.net.start();
  h.net.install_table(
      "s1", FlowTable{"s1",
                      {match_pair(1, "10.0.0.1", 3456, "10.0.0.2", 80, 2),
                       match_pair(0, "10.0.0.2", 80, "10.0.0.1", 3456, 1)},
                      {}});
  int64_t fid = h.net.open_flow("h1", "10.0.0.2", 3456, 80);
  h.bucket();
  REQUIRE(h.net.flow(fid).state == FlowState::kEstablished);

  h.net.wipe_tables();
  for (int i = 0; i < kBlockedTimeoutSec - 1; ++i) h.bucket();
  CHECK(h.net.flow(fid).state == FlowState::kEstablished);  // still waiting
  h.bucket();
  CHECK(h.net.flow(fid).state == FlowState::kReset);

  SECTION("a connecting flow never times out, it just retries") {
    int64_t fresh = h.net.open_flow("h1", "10.0.0.2", 9999, 80);
    for (int i = 0; i < kBlockedTimeoutSec + 3; ++i) h.bucket();
    CHECK(h.net.flow(fresh).state == FlowState::kConnecting);
  }
}

TEST_CASE("byte conservation and port-counter integration") {
  Harness h(two_host_spec());
  h.net.start();
  h.net.install_table(
      "s1", FlowTable{"s1",
                      {match_pair(1, "10.0.0.1", 3456, "10.0.0.2", 80, 2),
                       match_pair(0, "10.0.0.2", 80, "10.0.0.1", 3456, 1)},
                      {}});
  int64_t fid = h.net.open_flow("h1", "10.0.0.2", 3456, 80);
  for (int i = 0; i < 10; ++i) h.bucket();

  // 1 Mbps for 10 buckets = 1.25 MB.
  CHECK(h.net.flow(fid).bytes_acked == Catch::Approx(1.25e6));
  auto stats = h.net.port_stats("s1");
  REQUIRE(stats.size() == 2);
  // Ingress port received what the host sent; egress port transmitted it.
  CHECK(stats[0].rx_bytes == static_cast<uint64_t>(1.25e6));
  CHECK(stats[1].tx_bytes == static_cast<uint64_t>(1.25e6));
  // Delivered never exceeds sent.
  CHECK(stats[1].tx_bytes <= stats[0].rx_bytes);
}

TEST_CASE("switch down/up resets counters and re-announces") {
  Harness h(two_host_spec());
  h.net.start();
  h.net.install_table(
      "s1", FlowTable{"s1",
                      {match_pair(1, "10.0.0.1", 3456, "10.0.0.2", 80, 2),
                       match_pair(0, "10.0.0.2", 80, "10.0.0.1", 3456, 1)},
                      {}});
  int64_t fid = h.net.open_flow("h1", "10.0.0.2", 3456, 80);
  h.bucket();
  REQUIRE(h.net.flow(fid).bytes_acked > 0);

  h.net.take_switch_down("s1");
  CHECK_THROWS_AS(h.net.port_stats("s1"), UnknownSwitch);
  CHECK_THROWS_AS(h.net.pkt_out("s1", SimPacket{}, 1), UnknownSwitch);
  h.net.bring_switch_up("s1");
  for (const auto& st : h.net.port_stats("s1")) {
    CHECK(st.tx_bytes == 0);
    CHECK(st.rx_bytes == 0);
  }
  // Down wiped the table, so traffic now diverts.
  h.bucket();
  CHECK(h.net.packet_in_count() > 0);

  bool saw_down = false, saw_up = false;
  for (const auto& ev : h.events) {
    if (std::holds_alternative<SwitchDownEvent>(ev)) saw_down = true;
    if (std::holds_alternative<SwitchUpEvent>(ev)) saw_up = true;
  }
  CHECK(saw_down);
  CHECK(saw_up);
}

TEST_CASE("determinism: identical runs yield identical series") {
  auto run = [] {
    Harness h(diamond_spec());
    h.net.start();
    h.net.install_table(
        "s1", FlowTable{"s1", {match_dst(0, "10.0.0.9", 3)}, {}});
    h.net.install_table(
        "s2", FlowTable{"s2", {match_dst(1, "10.0.0.9", 2),
                               match_dst(0, "10.0.0.1", 1)}, {}});
    h.net.install_table(
        "s4", FlowTable{"s4", {match_dst(1, "10.0.0.9", 1),
                               match_dst(0, "10.0.0.1", 2)}, {}});
    h.net.open_flow("hA", "10.0.0.9", 5001, 80);
    for (int i = 0; i < 5; ++i) h.bucket();
    std::string out;
    for (const auto& s : h.net.series()) {
      out += std::to_string(s.time) + "," + std::to_string(s.flow_id) + "," +
             std::to_string(s.bps) + "," + s.path + "," + s.state + "\n";
    }
    return out;
  };
  CHECK(run() == run());
}

TEST_CASE("hot-plugged host re-announces its switch") {
  Harness h(two_host_spec());
  h.net.start();
  h.events.clear();
  h.net.add_host(HostSpec{"h9", "10.0.0.9", "s1", 9, 1e6});
  REQUIRE(h.events.size() == 1);
  auto up = std::get<SwitchUpEvent>(h.events[0]);
  CHECK(up.ports == std::vector<int64_t>{1, 2, 9});
}
