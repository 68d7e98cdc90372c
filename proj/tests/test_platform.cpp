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

#include <memory>
#include <string>
#include <variant>
#include <vector>

#include "morpheus/clock.hpp"
#include "morpheus/nib.hpp"
#include "morpheus/platform.hpp"
#include "morpheus/runtime.hpp"
#include "morpheus/sim/simnet.hpp"

using namespace morpheus;
using namespace morpheus::sim;
using net::Field;
using net::PolicyClass;

namespace {

TopologySpec two_host_spec() {
  TopologySpec t;
  t.switches = {"s1"};
  t.hosts = {HostSpec{"h1", "10.0.0.1", "s1", 1, 1e6},
             HostSpec{"h2", "10.0.0.2", "s1", 2, 1e6}};
  return t;
}

// filter(src_ip, src_port, dst_ip, dst_port) ; port := out
net::PolicyPtr pair_rule(const std::string& src_ip, int64_t src_port,
                         const std::string& dst_ip, int64_t dst_port,
                         int64_t out) {
  auto pred = net::pred_and(
      net::pred_and(net::test(Field::kSrcIp, net::FieldValue(src_ip)),
                    net::test(Field::kSrcPort, net::FieldValue(src_port))),
      net::pred_and(net::test(Field::kDstIp, net::FieldValue(dst_ip)),
                    net::test(Field::kDstPort, net::FieldValue(dst_port))));
  return net::pseq(net::filter(pred),
                   net::modify(Field::kPort, net::FieldValue(out)));
}

net::AppPolicy forward_pair_policy(const std::string& app_id) {
  return net::AppPolicy{app_id, PolicyClass::kForwarding,
                        net::punion(pair_rule("10.0.0.1", 3456, "10.0.0.2", 80, 2),
                                    pair_rule("10.0.0.2", 80, "10.0.0.1", 3456, 1))};
}

struct Harness {
  Runtime rt;
  SimNet net;
  std::shared_ptr<nib::NibStore> nib;
  Platform plat;

  Harness()
      : rt(1),
        net(two_host_spec(), &rt),
        nib(std::make_shared<nib::NibStore>(rt.clock())),
        plat(&net, nib.get()) {}
};

int drain_count(const SessionPtr& s, const std::string& cls) {
  int n = 0;
  while (auto ev = s->inbox.pop())
    if (event_class(*ev) == cls) ++n;
  return n;
}

std::string prov_of(const Platform& plat, const std::string& app) {
  return plat.tables_snapshot()["s1"]["provenance"].value(app, "");
}

}  // namespace

TEST_CASE("connect replays the live topology to the newcomer") {
  Harness h;
  h.net.start();  // nobody connected yet; announcement goes nowhere
  auto s = h.plat.connect_app("fw", "v1");
  REQUIRE(s->inbox.size() == 1);
  auto ev = *s->inbox.pop();
  CHECK(std::get<SwitchUpEvent>(ev).sw == "s1");

  // A session filtered to packet_in does not get the replay.
  auto quiet = h.plat.connect_app("lb", "v1", {"packet_in"});
  CHECK(quiet->inbox.empty());
}

TEST_CASE("events fan out to every connected, unfiltered app exactly once") {
  Harness h;
  h.net.start();
  auto a = h.plat.connect_app("a", "v1");
  auto b = h.plat.connect_app("b", "v1");
  auto only_stats = h.plat.connect_app("c", "v1", {"port_stats"});
  auto dead = h.plat.connect_app("d", "v1");
  h.plat.disconnect(dead);

  h.net.open_flow("h1", "10.0.0.2", 3456, 80);
  h.net.send_probes();
  h.rt.run_until_idle();

  CHECK(drain_count(a, "switch_up") == 1);
  CHECK(drain_count(b, "packet_in") == 1);
  CHECK(drain_count(only_stats, "packet_in") == 0);
  CHECK(dead->inbox.empty());

  h.plat.collect_stats();
  CHECK(drain_count(only_stats, "port_stats") == 2);  // one per port
}

TEST_CASE("a policy push compiles and installs tables with provenance") {
  Harness h;
  h.net.start();
  auto s = h.plat.connect_app("fw", "v1");
  h.plat.update(s, forward_pair_policy("fw"));

  const auto& t = h.net.table("s1");
  CHECK(t.rules.size() == 2);
  CHECK(t.provenance == std::map<std::string, std::string>{{"fw", "v1"}});

  int64_t fid = h.net.open_flow("h1", "10.0.0.2", 3456, 80);
  h.net.send_probes();
  h.rt.run_until_idle();
  CHECK(h.net.flow(fid).state == FlowState::kEstablished);

  SECTION("dropping the only slot empties the tables again") {
    h.plat.drop_slot("fw");
    CHECK(h.net.table("s1").rules.empty());
  }
}

TEST_CASE("held pushes swap atomically when the last updating app pushes") {
  Harness h;
  h.net.start();
  auto fw1 = h.plat.connect_app("fw", "v1");
  auto rt1 = h.plat.connect_app("rt", "v1");
  h.plat.update(fw1, forward_pair_policy("fw"));
  h.plat.update(rt1, net::AppPolicy{"rt", PolicyClass::kForwarding,
                                    pair_rule("10.0.0.1", 9, "10.0.0.2", 9, 2)});
  CHECK(prov_of(h.plat, "fw") == "v1");
  CHECK(prov_of(h.plat, "rt") == "v1");

  h.plat.pause({"fw", "rt"});
  CHECK(h.plat.update_in_progress());

  // Stale push from the old fw is silently superseded.
  h.plat.update(fw1, forward_pair_policy("fw"));
  CHECK(prov_of(h.plat, "fw") == "v1");

  // New versions connect and push; nothing changes until both have.
  auto fw2 = h.plat.connect_app("fw", "v2");
  auto rt2 = h.plat.connect_app("rt", "v2");
  h.plat.update(fw2, forward_pair_policy("fw"));
  CHECK(prov_of(h.plat, "fw") == "v1");
  CHECK(prov_of(h.plat, "rt") == "v1");
  CHECK(h.plat.held_apps() == std::set<std::string>{"fw"});

  h.plat.update(rt2, net::AppPolicy{"rt", PolicyClass::kForwarding,
                                    pair_rule("10.0.0.1", 7, "10.0.0.2", 7, 2)});
  CHECK(prov_of(h.plat, "fw") == "v2");
  CHECK(prov_of(h.plat, "rt") == "v2");
  CHECK(h.plat.update_in_progress());  // until the coordinator resumes
  h.plat.resume();
  CHECK_FALSE(h.plat.update_in_progress());

  SECTION("a third, non-updating app applies immediately during an update") {
    h.plat.pause({"fw"});
    auto lb = h.plat.connect_app("lb", "v1");
    h.plat.update(lb, net::AppPolicy{"lb", PolicyClass::kForwarding,
                                     pair_rule("10.0.0.2", 5, "10.0.0.1", 5, 1)});
    CHECK(prov_of(h.plat, "lb") == "v1");
    CHECK(prov_of(h.plat, "fw") == "v2");  // fw slot untouched
    h.plat.resume();
  }
}

TEST_CASE("pause during an update and resume without one are errors") {
  Harness h;
  h.plat.pause({"fw"});
  CHECK_THROWS_AS(h.plat.pause({"rt"}), UpdateInProgress);
  h.plat.resume();
  CHECK_THROWS_AS(h.plat.resume(), UpdateInProgress);
}

TEST_CASE("restore_held aborts an update without touching the tables") {
  Harness h;
  h.net.start();
  auto fw1 = h.plat.connect_app("fw", "v1");
  h.plat.update(fw1, forward_pair_policy("fw"));
  Document before = h.plat.tables_snapshot();

  h.plat.pause({"fw", "rt"});
  auto fw2 = h.plat.connect_app("fw", "v2");
  h.plat.update(fw2, net::AppPolicy{"fw", PolicyClass::kForwarding,
                                    pair_rule("10.0.0.1", 1, "10.0.0.2", 1, 2)});
  // rt never pushes (say it failed to start); the coordinator gives up.
  h.plat.restore_held();
  h.plat.resume();
  CHECK(h.plat.tables_snapshot() == before);
  CHECK(prov_of(h.plat, "fw") == "v1");
}

TEST_CASE("manual swap defers installation to finalize_swap") {
  Harness h;
  h.net.start();
  auto fw1 = h.plat.connect_app("fw", "v1");
  h.plat.update(fw1, forward_pair_policy("fw"));

  h.plat.set_manual_swap(true);
  h.plat.pause({"fw"});
  CHECK_THROWS_AS(h.plat.finalize_swap(), UpdateInProgress);  // nothing held
  auto fw2 = h.plat.connect_app("fw", "v2");
  h.plat.update(fw2, forward_pair_policy("fw"));
  CHECK(prov_of(h.plat, "fw") == "v1");  // held despite being the last push
  h.plat.finalize_swap();
  CHECK(prov_of(h.plat, "fw") == "v2");
  h.plat.resume();
}

TEST_CASE("pkt_out forwards for live sessions and is muted during replay") {
  Harness h;
  h.net.start();
  auto s = h.plat.connect_app("fw", "v1");
  int64_t fid = h.net.open_flow("h1", "10.0.0.2", 3456, 80);
  h.net.send_probes();
  h.rt.run_until_idle();

  auto ev = *s->inbox.pop();           // switch_up replay
  ev = *s->inbox.pop();                // the diverted syn
  auto pin = std::get<PacketInEvent>(ev);
  CHECK_THROWS_AS(h.plat.pkt_out(s, "nope", pin.pkt, 2), UnknownSwitch);

  s->replaying = true;
  h.plat.pkt_out(s, pin.sw, pin.pkt, net::kFloodPort);  // swallowed
  CHECK(h.net.flow(fid).state == FlowState::kConnecting);
  s->replaying = false;
  h.plat.pkt_out(s, pin.sw, pin.pkt, net::kFloodPort);
  h.rt.run_until_idle();
  // The syn went through this time; the syn_ack diverts next.
  CHECK(h.net.packet_in_count() == 2);
}

TEST_CASE("recorded packet_ins replay into a later session") {
  Harness h;
  h.net.start();
  h.plat.start_recording();
  h.net.open_flow("h1", "10.0.0.2", 3456, 80);
  h.net.send_probes();
  h.rt.run_until_idle();
  h.plat.stop_recording();
  REQUIRE(h.plat.trace().size() == 1);

  auto s = h.plat.connect_app("fw", "v2", {"packet_in"});
  h.plat.replay_to(s);
  CHECK(s->replaying);
  REQUIRE(s->inbox.size() == 1);
  auto pin = std::get<PacketInEvent>(*s->inbox.pop());
  CHECK(pin.pkt.kind == PktKind::kSyn);
  h.plat.end_replay(s);
  CHECK_FALSE(s->replaying);
}

TEST_CASE("collect_stats publishes per-flow counters into the store") {
  Harness h;
  h.net.start();
  auto s = h.plat.connect_app("fw", "v1");
  h.plat.update(s, forward_pair_policy("fw"));
  h.net.open_flow("h1", "10.0.0.2", 3456, 80);
  for (int b = 0; b < 3; ++b) {
    double t = h.rt.now();
    for (int r = 0; r < kProbeRounds; ++r) {
      h.net.send_probes();
      h.rt.run_until_idle();
    }
    h.net.finish_bucket(t);
    h.rt.run_until(t + 1.0);
  }
  h.plat.collect_stats();

  auto reader = h.nib->connect("probe", {{"flow_stats", "ns_v0"}});
  auto doc = h.nib->get(reader, "flow_stats", "10.0.0.1_3456_10.0.0.2_80");
  REQUIRE(doc.has_value());
  CHECK((*doc)["packets"].get<int64_t>() > 0);
}
