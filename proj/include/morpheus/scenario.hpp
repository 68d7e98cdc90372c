#pragma once
// Copyright (c) 2026 The Morpheus Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
//
// Scripted end-to-end experiments. A scenario stands up the whole
// controller stack over a simulated network, runs traffic in one-second
// buckets, and carries out scheduled version changes with one of three
// strategies:
//
//   state_transfer  the coordinated deploy: quiesce, install transformers,
//                   boot the new versions against the migrated store, swap
//                   rulesets atomically once everyone has pushed.
//   simple_restart  kill the old instances, drop their rules and wipe their
//                   namespaces, boot the new versions from nothing.
//   record_replay   boot the new versions from nothing but rebuild their
//                   state by replaying the recorded packet-in trace; old
//                   rules keep forwarding until the rebuilt rulesets land.
//
// The output is the per-flow bucket series (as CSV) plus one report per
// scheduled change.

#include <algorithm>
#include <cstdio>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "morpheus/apps.hpp"
#include "morpheus/document.hpp"
#include "morpheus/errors.hpp"
#include "morpheus/nib.hpp"
#include "morpheus/platform.hpp"
#include "morpheus/runtime.hpp"
#include "morpheus/sim/simnet.hpp"
#include "morpheus/updc.hpp"

namespace morpheus {

enum class UpdateMode { kStateTransfer, kSimpleRestart, kRecordReplay };

inline const char* update_mode_name(UpdateMode m) {
  switch (m) {
    case UpdateMode::kStateTransfer: return "state_transfer";
    case UpdateMode::kSimpleRestart: return "simple_restart";
    case UpdateMode::kRecordReplay: return "record_replay";
  }
  return "?";
}

inline UpdateMode parse_update_mode(const std::string& s) {
  if (s == "state_transfer") return UpdateMode::kStateTransfer;
  if (s == "simple_restart") return UpdateMode::kSimpleRestart;
  if (s == "record_replay") return UpdateMode::kRecordReplay;
  throw MorpheusError("unknown update mode: " + s);
}

// A scheduled version change. `wipe_namespaces` lists the store state that
// does not survive a from-scratch restart (ignored by state transfer, which
// migrates instead of wiping). `prepare` runs just before the change in
// every mode; scenarios use it for environment edits such as growing a
// server pool.
struct ScenarioUpdate {
  double time = 0;
  UpdateSpec spec;
  std::vector<std::string> wipe_namespaces;
  std::function<void(class Scenario&)> prepare;
};

class Scenario {
 public:
  Scenario(sim::TopologySpec topo, UpdateMode mode, uint64_t seed)
      : mode_(mode),
        rt_(seed),
        net_(std::move(topo), &rt_),
        nib_(std::make_shared<nib::NibStore>(rt_.clock())),
        plat_(&net_, nib_.get()),
        updc_(&rt_, &plat_, nib_.get(), &hosts_, &configs_) {}

  Scenario(const Scenario&) = delete;
  Scenario& operator=(const Scenario&) = delete;

  // --- setup -----------------------------------------------------------------

  void add_app(const std::string& id, const std::string& version,
               Document config) {
    configs_[id] = config;
    auto host = std::make_unique<AppHost>(&rt_, &plat_, nib_.get(), id,
                                          version, std::move(config));
    host->spawn();
    hosts_[id] = std::move(host);
  }

  // Runs `fn` at the start of the bucket beginning at time `t`.
  void at(double t, std::function<void(Scenario&)> fn) {
    actions_.push_back(Action{t, std::move(fn)});
  }

  void deploy_at(ScenarioUpdate u) {
    const double t = u.time;
    auto shared = std::make_shared<ScenarioUpdate>(std::move(u));
    at(t, [shared](Scenario& sc) { sc.do_deploy(*shared); });
  }

  void set_default_duration(double d) { default_duration_ = d; }

  // --- execution ---------------------------------------------------------------

  void run() { run(default_duration_); }

  void run(double duration) {
    if (!started_) {
      started_ = true;
      if (mode_ == UpdateMode::kRecordReplay) plat_.start_recording();
      net_.start();
      rt_.run_until_idle();
      std::stable_sort(actions_.begin(), actions_.end(),
                       [](const Action& a, const Action& b) {
                         return a.time < b.time;
                       });
    }
    while (rt_.now() < duration - 1e-9) {
      const double t = rt_.now();
      maybe_replay();
      while (next_action_ < actions_.size() &&
             actions_[next_action_].time <= t + 1e-9) {
        actions_[next_action_].fn(*this);
        ++next_action_;
      }
      collect_report();
      bucket();
    }
    maybe_replay();
    collect_report();
  }

  // --- results -----------------------------------------------------------------

  // Stable, diff-friendly formatting: identical seeds and schedules produce
  // byte-identical output.
  std::string csv() const {
    std::string out = "time,flow_id,bps,path,state\n";
    char line[256];
    for (const auto& b : net_.series()) {
      std::snprintf(line, sizeof line, "%.3f,%lld,%.3f,%s,%s\n", b.time,
                    static_cast<long long>(b.flow_id), b.bps, b.path.c_str(),
                    b.state.c_str());
      out += line;
    }
    return out;
  }

  const std::vector<UpdateReport>& reports() const { return reports_; }

  Document reports_json() const {
    Document out = Document::array();
    for (const auto& r : reports_) out.push_back(r.to_json());
    return out;
  }

  UpdateMode mode() const { return mode_; }
  Runtime& rt() { return rt_; }
  sim::SimNet& net() { return net_; }
  const sim::SimNet& net() const { return net_; }
  Platform& platform() { return plat_; }
  nib::NibStore& nib() { return *nib_; }
  std::map<std::string, Document>& configs() { return configs_; }
  UpdateCoordinator::HostMap& hosts() { return hosts_; }

 private:
  struct Action {
    double time;
    std::function<void(Scenario&)> fn;
  };

  // One 1-second traffic bucket: probe rounds, bucket accounting, stats.
  void bucket() {
    const double t = rt_.now();
    for (int r = 0; r < sim::kProbeRounds; ++r) {
      net_.send_probes();
      rt_.run_until_idle();
    }
    net_.finish_bucket(t);
    plat_.collect_stats();
    rt_.run_until_idle();
    rt_.run_until(t + 1.0);
  }

  void do_deploy(const ScenarioUpdate& u) {
    if (u.prepare) u.prepare(*this);
    switch (mode_) {
      case UpdateMode::kStateTransfer:
        updc_.start(u.spec);
        awaiting_updc_ = true;
        break;
      case UpdateMode::kSimpleRestart:
        restart_from_scratch(u, /*replay=*/false);
        break;
      case UpdateMode::kRecordReplay:
        restart_from_scratch(u, /*replay=*/true);
        break;
    }
  }

  // Kill the old instances and boot the new versions with none of the old
  // state. Without replay the rules drop immediately and the store is the
  // only casualty; with replay the old rules stay installed (pause) and the
  // rebuilt rulesets are held until the trace has been replayed.
  void restart_from_scratch(const ScenarioUpdate& u, bool replay) {
    const double t0 = rt_.now();
    UpdateReport rep;
    rep.status = replay ? "running" : "done";
    for (const auto& a : u.spec.apps)
      rep.apps.push_back(UpdateReport::AppOutcome{a.id, a.from, a.to, false});
    rep.phases.push_back(UpdateReport::Phase{
        "restarting", t0, t0 + kAppRestartDelaySec + kBootDelaySec});

    std::set<std::string> ids;
    for (const auto& a : u.spec.apps) ids.insert(a.id);
    if (replay) {
      plat_.set_manual_swap(true);
      plat_.pause(ids);
    }
    for (const auto& a : u.spec.apps) {
      auto it = hosts_.find(a.id);
      if (it != hosts_.end() && it->second) it->second->kill();
      if (!replay) plat_.drop_slot(a.id);
    }
    for (const auto& ns : u.wipe_namespaces) nib_->clear_namespace(ns);
    for (const auto& a : u.spec.apps) {
      auto host = std::make_unique<AppHost>(&rt_, &plat_, nib_.get(), a.id,
                                            a.to, configs_.at(a.id));
      host->spawn(kAppRestartDelaySec + kBootDelaySec);
      hosts_[a.id] = std::move(host);
    }
    reports_.push_back(std::move(rep));
    if (replay) {
      replay_pending_ = std::move(ids);
      replay_report_ = reports_.size() - 1;
    }
  }

  // Bucket-boundary handoff for record/replay: once every new instance is
  // up, feed each one the recorded trace (stateful apps rebuild their view
  // and push; pushes are held), then land all the held rulesets at once.
  void maybe_replay() {
    if (replay_pending_.empty()) return;
    UpdateReport& rep = reports_[replay_report_];
    for (const std::string& id : replay_pending_) {
      AppHost* h = hosts_.at(id).get();
      if (h->failed()) {
        plat_.restore_held();
        plat_.resume();
        plat_.set_manual_swap(false);
        rep.status = "aborted";
        rep.reason = "AbortAppStartFailure";
        rep.detail = id + ": " + h->error();
        replay_pending_.clear();
        return;
      }
      // Not booted and connected yet (spawn delay): try again next bucket.
      if (!h->running() || plat_.current_session(id) == nullptr) return;
    }
    const double t0 = rt_.now();
    // Producers before consumers, so replayed packets meet the store state
    // they were originally handled against.
    static const char* kOrder[] = {"topology", "routing", "firewall",
                                   "loadbalancer"};
    for (const char* id : kOrder) {
      if (replay_pending_.count(id) == 0) continue;
      SessionPtr s = plat_.current_session(id);
      plat_.replay_to(s);
      rt_.run_until_idle();
      plat_.end_replay(s);
    }
    rt_.run_until_idle();
    plat_.finalize_swap();
    plat_.resume();
    plat_.set_manual_swap(false);
    rep.phases.push_back(UpdateReport::Phase{"replaying", t0, rt_.now()});
    rep.status = "done";
    replay_pending_.clear();
  }

  void collect_report() {
    if (awaiting_updc_ && !updc_.active()) {
      reports_.push_back(updc_.report());
      awaiting_updc_ = false;
    }
  }

  UpdateMode mode_;
  Runtime rt_;
  sim::SimNet net_;
  std::shared_ptr<nib::NibStore> nib_;
  Platform plat_;
  UpdateCoordinator::HostMap hosts_;
  std::map<std::string, Document> configs_;
  UpdateCoordinator updc_;

  std::vector<Action> actions_;
  size_t next_action_ = 0;
  bool started_ = false;
  double default_duration_ = 60;
  bool awaiting_updc_ = false;
  std::set<std::string> replay_pending_;
  size_t replay_report_ = 0;
  std::vector<UpdateReport> reports_;
};

// ---------------------------------------------------------------------------
// Canned experiments

namespace scenarios {

// Transformer programs used by the canned version changes.
inline const char* kFirewallCounterMu =
    "for fw_allowed:* ns_v0 -> ns_v1 { INIT [\"last_count\"] { $out = 0 } };";
inline const char* kTopologyWeightMu =
    "for topology:edge_* ns_v0 -> ns_v1 { INIT [\"weight\"] { $out = 1 } };";

// One switch guarding three trusted hosts (h1, h2, h5) and three untrusted
// ones (h3, h4, h6): v1 approves per connection, v2 adds a pending stage,
// v3 adds idle-connection sweeping. Updates land at t=10 (v1 to v2) and
// t=20 (v2 to v3) while two connections are up; a third opens between the
// updates. Each connection has its own host pair, so rates are contention-
// free and any throughput dip is the update's doing.
inline std::unique_ptr<Scenario> firewall(UpdateMode mode, uint64_t seed) {
  sim::TopologySpec topo;
  topo.switches = {"s1"};
  topo.hosts = {sim::HostSpec{"h1", "10.0.0.1", "s1", 1, 1e6},
                sim::HostSpec{"h2", "10.0.0.2", "s1", 2, 1e6},
                sim::HostSpec{"h3", "10.0.0.3", "s1", 3, 1e6},
                sim::HostSpec{"h4", "10.0.0.4", "s1", 4, 1e6},
                sim::HostSpec{"h5", "10.0.0.5", "s1", 5, 1e6},
                sim::HostSpec{"h6", "10.0.0.6", "s1", 6, 1e6}};
  Document config{{"switch", "s1"},
                  {"trusted", {"10.0.0.1", "10.0.0.2", "10.0.0.5"}},
                  {"host_ports",
                   {{"10.0.0.1", 1},
                    {"10.0.0.2", 2},
                    {"10.0.0.3", 3},
                    {"10.0.0.4", 4},
                    {"10.0.0.5", 5},
                    {"10.0.0.6", 6}}}};

  auto sc = std::make_unique<Scenario>(std::move(topo), mode, seed);
  sc->add_app("firewall", "v1", config);
  sc->set_default_duration(40);

  auto flows = std::make_shared<std::vector<int64_t>>();
  sc->at(1, [flows](Scenario& s) {
    flows->push_back(s.net().open_flow("h1", "10.0.0.3", 4001, 80));
    flows->push_back(s.net().open_flow("h2", "10.0.0.4", 4002, 80));
  });
  sc->at(15, [flows](Scenario& s) {
    flows->push_back(s.net().open_flow("h5", "10.0.0.6", 4003, 81));
  });
  sc->at(28, [flows](Scenario& s) {
    if (s.net().flow((*flows)[1]).state != sim::FlowState::kReset)
      s.net().close_flow((*flows)[1]);
  });

  ScenarioUpdate u1;
  u1.time = 10;
  u1.spec.apps = {UpdateAppSpec{"firewall", "v1", "v2"}};
  u1.wipe_namespaces = {"fw_allowed"};
  sc->deploy_at(std::move(u1));

  ScenarioUpdate u2;
  u2.time = 20;
  u2.spec.apps = {UpdateAppSpec{"firewall", "v2", "v3"}};
  u2.spec.mu_sources = {kFirewallCounterMu};
  u2.wipe_namespaces = {"fw_allowed", "fw_pending"};
  sc->deploy_at(std::move(u2));
  return sc;
}

// A diamond fabric: two equal-hop arms between s1 and s4, two clients on
// s1, a server on s4. Topology v1 and routing v1 place both connections on
// the lexicographically first arm; the t=20 update to v2 (weights seeded to
// 1 by transformer) turns on load-aware weights and hysteretic rerouting,
// which splits the connections across the arms.
inline std::unique_ptr<Scenario> routing(UpdateMode mode, uint64_t seed) {
  sim::TopologySpec topo;
  topo.switches = {"s1", "s2", "s3", "s4"};
  topo.hosts = {sim::HostSpec{"hA", "10.0.0.1", "s1", 1, 1e6},
                sim::HostSpec{"hB", "10.0.0.2", "s1", 6, 1e6},
                sim::HostSpec{"hS", "10.0.0.9", "s4", 3, 1e7}};
  topo.links = {
      sim::LinkSpec{"s1", 2, "s2", 1, 1e6}, sim::LinkSpec{"s1", 3, "s3", 1, 1e6},
      sim::LinkSpec{"s2", 2, "s4", 1, 1e6}, sim::LinkSpec{"s3", 2, "s4", 2, 1e6}};

  auto sc = std::make_unique<Scenario>(std::move(topo), mode, seed);
  // Discovery walks one switch per probe cycle, so a from-scratch restart
  // relearns the fabric over several seconds, as a real controller would.
  sc->add_app("topology", "v1",
              Document{{"lldp_period", 1.5}, {"default_capacity_bps", 1e6}});
  sc->add_app("routing", "v1", Document::object());
  sc->set_default_duration(45);

  sc->at(1, [](Scenario& s) {
    s.net().open_flow("hA", "10.0.0.9", 5001, 80);
    s.net().open_flow("hB", "10.0.0.9", 5002, 80);
  });

  ScenarioUpdate u;
  u.time = 20;
  u.spec.apps = {UpdateAppSpec{"topology", "v1", "v2"},
                 UpdateAppSpec{"routing", "v1", "v2"}};
  u.spec.mu_sources = {kTopologyWeightMu};
  u.wipe_namespaces = {"topology", "routes"};
  sc->deploy_at(std::move(u));
  return sc;
}

// One switch, three clients, three servers behind a virtual IP. v1 spreads
// connections randomly; the t=40 update to v2 (least-loaded placement)
// coincides with a fourth server joining the pool, and three more clients
// connect afterwards. Existing assignments live in the store, so only a
// state-carrying update keeps the old connections on their servers.
inline std::unique_ptr<Scenario> loadbalancer(UpdateMode mode, uint64_t seed) {
  sim::TopologySpec topo;
  topo.switches = {"s1"};
  topo.hosts = {sim::HostSpec{"h1", "10.0.0.1", "s1", 1, 1e6},
                sim::HostSpec{"h2", "10.0.0.2", "s1", 2, 1e6},
                sim::HostSpec{"h3", "10.0.0.3", "s1", 3, 1e6},
                sim::HostSpec{"srv1", "10.0.0.11", "s1", 4, 1e6},
                sim::HostSpec{"srv2", "10.0.0.12", "s1", 5, 1e6},
                sim::HostSpec{"srv3", "10.0.0.13", "s1", 6, 1e6}};

  auto server = [](const char* id, const char* ip, int64_t port) {
    return Document{{"id", id}, {"ip", ip}, {"port", port}, {"cap_c", 2}};
  };
  Document servers = Document::array();
  servers.push_back(server("srv1", "10.0.0.11", 4));
  servers.push_back(server("srv2", "10.0.0.12", 5));
  servers.push_back(server("srv3", "10.0.0.13", 6));
  // Seed 26 draws servers (srv1, srv3, srv2) for the three pre-update
  // connections: every server is loaded, and the spread differs from what
  // deterministic least-loaded placement would rebuild from scratch.
  Document config{{"switch", "s1"},
                  {"vip", "10.0.0.100"},
                  {"seed", 26},
                  {"servers", servers},
                  {"host_ports",
                   {{"10.0.0.1", 1}, {"10.0.0.2", 2}, {"10.0.0.3", 3}}}};

  auto sc = std::make_unique<Scenario>(std::move(topo), mode, seed);
  sc->add_app("loadbalancer", "v1", config);
  sc->set_default_duration(80);

  auto pre = std::make_shared<std::vector<int64_t>>();
  sc->at(2, [pre](Scenario& s) {
    pre->push_back(s.net().open_flow("h1", "10.0.0.100", 5001, 80));
  });
  sc->at(3, [pre](Scenario& s) {
    pre->push_back(s.net().open_flow("h2", "10.0.0.100", 5002, 80));
  });
  sc->at(4, [pre](Scenario& s) {
    pre->push_back(s.net().open_flow("h3", "10.0.0.100", 5003, 80));
  });

  ScenarioUpdate u;
  u.time = 40;
  u.spec.apps = {UpdateAppSpec{"loadbalancer", "v1", "v2"}};
  u.wipe_namespaces = {"lb_conns"};
  u.prepare = [server](Scenario& s) {
    s.net().add_host(sim::HostSpec{"srv_new", "10.0.0.14", "s1", 7, 1e6});
    s.configs()["loadbalancer"]["servers"].push_back(
        server("srv_new", "10.0.0.14", 7));
  };
  sc->deploy_at(std::move(u));

  sc->at(45, [](Scenario& s) { s.net().open_flow("h1", "10.0.0.100", 6001, 80); });
  sc->at(46, [](Scenario& s) { s.net().open_flow("h2", "10.0.0.100", 6002, 80); });
  sc->at(47, [](Scenario& s) { s.net().open_flow("h3", "10.0.0.100", 6003, 80); });
  sc->at(70, [pre](Scenario& s) {
    for (int64_t id : *pre)
      if (s.net().flow(id).state == sim::FlowState::kEstablished)
        s.net().close_flow(id);
  });
  return sc;
}

inline std::vector<std::string> names() {
  return {"firewall", "routing", "loadbalancer"};
}

inline std::unique_ptr<Scenario> make(const std::string& name, UpdateMode mode,
                                      uint64_t seed) {
  if (name == "firewall") return firewall(mode, seed);
  if (name == "routing") return routing(mode, seed);
  if (name == "loadbalancer") return loadbalancer(mode, seed);
  throw MorpheusError("unknown scenario: " + name);
}

}  // namespace scenarios
}  // namespace morpheus
