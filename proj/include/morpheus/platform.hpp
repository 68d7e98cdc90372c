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

// The platform node: the long-lived controller core that multiplexes the
// network for the (restartable) control applications.
//
// Apps connect with an id and a version, receive network events through a
// per-session inbox, and push policies. The platform composes all current
// policies into one program, compiles a flow table per switch, and installs
// the result. During a coordinated update it holds policies pushed by the
// new app versions until every updating app has pushed, then swaps them in
// with a single recompile — switches never run a mixture of one app's new
// policy and another's old one.

#pragma once

#include <functional>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "morpheus/document.hpp"
#include "morpheus/errors.hpp"
#include "morpheus/net/flowtable.hpp"
#include "morpheus/net/policy.hpp"
#include "morpheus/nib.hpp"
#include "morpheus/runtime.hpp"
#include "morpheus/sim/simnet.hpp"

namespace morpheus {

inline std::string event_class(const sim::NetworkEvent& ev) {
  if (std::holds_alternative<sim::PacketInEvent>(ev)) return "packet_in";
  if (std::holds_alternative<sim::SwitchUpEvent>(ev)) return "switch_up";
  if (std::holds_alternative<sim::SwitchDownEvent>(ev)) return "switch_down";
  return "port_stats";
}

// One app's connection to the platform. Sessions are never reused: a
// restarted app connects again and gets a fresh session, which is how the
// platform tells an updated app apart from its previous incarnation.
struct AppSession {
  std::string app_id;
  std::string version;
  Inbox<sim::NetworkEvent> inbox;
  // Event classes this session wants; empty means everything.
  std::set<std::string> event_classes;
  // While replaying a recorded trace, pkt_out from this session is a no-op
  // so resurrected packets do not hit the live network a second time.
  bool replaying = false;
  bool disconnected = false;

  bool wants(const std::string& cls) const {
    return event_classes.empty() || event_classes.count(cls) > 0;
  }
};

using SessionPtr = std::shared_ptr<AppSession>;

class Platform {
 public:
  struct Slot {
    std::string version;
    net::AppPolicy policy;
  };

  Platform(sim::SimNet* net, nib::NibStore* nib)
      : net_(net), nib_(nib) {
    net_->set_event_handler(
        [this](const sim::NetworkEvent& ev) { dispatch(ev); });
    if (nib_)
      nib_session_ = nib_->connect("platform", {{"flow_stats", "ns_v0"}});
  }

  // --- app sessions -----------------------------------------------------------

  SessionPtr connect_app(const std::string& app_id, const std::string& version,
                         std::set<std::string> event_classes = {}) {
    auto s = std::make_shared<AppSession>();
    s->app_id = app_id;
    s->version = version;
    s->event_classes = std::move(event_classes);
    sessions_.push_back(s);
    // Bring the newcomer up to date on the live topology; it was not
    // around when the switches first announced themselves.
    if (s->wants("switch_up")) {
      for (const std::string& sw : net_->switch_ids())
        s->inbox.push(net_->switch_up_event(sw));
    }
    return s;
  }

  void disconnect(const SessionPtr& s) {
    s->disconnected = true;
    s->inbox.clear();
  }

  // The most recent live session for an app, if any.
  SessionPtr current_session(const std::string& app_id) const {
    for (auto it = sessions_.rbegin(); it != sessions_.rend(); ++it)
      if ((*it)->app_id == app_id && !(*it)->disconnected) return *it;
    return nullptr;
  }

  // --- policy pushes ------------------------------------------------------------

  // A push with a null policy means "this app contributes no rules"; it
  // still counts as the app's push for update-completion purposes.
  void update(const SessionPtr& s, net::AppPolicy policy) {
    if (s->disconnected) throw Disconnected(s->app_id);
    policy.app_id = s->app_id;
    if (in_update_ && updating_.count(s->app_id) > 0) {
      if (s == old_sessions_[s->app_id]) return;  // stale push, superseded
      held_[s->app_id] = Slot{s->version, std::move(policy)};
      received_new_.insert(s->app_id);
      if (!manual_swap_ && received_new_ == updating_) do_swap();
      return;
    }
    if (!policy.policy)
      slots_.erase(s->app_id);
    else
      slots_[s->app_id] = Slot{s->version, std::move(policy)};
    recompile_and_install();
  }

  // Removes an app's contribution (e.g. the app was torn down for good)
  // and reinstalls what remains.
  void drop_slot(const std::string& app_id) {
    slots_.erase(app_id);
    recompile_and_install();
  }

  // --- packet injection -----------------------------------------------------

  void pkt_out(const SessionPtr& s, const std::string& sw,
               const sim::SimPacket& pkt, int64_t out_port) {
    if (s->disconnected) throw Disconnected(s->app_id);
    if (s->replaying) return;
    net_->pkt_out(sw, pkt, out_port);
  }

  // --- coordinated updates ----------------------------------------------------

  // Enters update mode for `app_ids`. Pushes from their current sessions
  // are ignored from here on; pushes from sessions connected later (the new
  // versions) are held until all of them have arrived.
  void pause(const std::set<std::string>& app_ids) {
    if (in_update_) throw UpdateInProgress("pause: update already in progress");
    in_update_ = true;
    updating_ = app_ids;
    for (const std::string& id : app_ids)
      old_sessions_[id] = current_session(id);
    held_.clear();
    received_new_.clear();
  }

  void resume() {
    if (!in_update_) throw UpdateInProgress("resume: no update in progress");
    in_update_ = false;
    updating_.clear();
    old_sessions_.clear();
    held_.clear();
    received_new_.clear();
    manual_swap_ = false;
  }

  // Abort path: throws away everything the new versions pushed. The old
  // slots were never touched, so the installed tables are already correct.
  void restore_held() {
    held_.clear();
    received_new_.clear();
  }

  // When set, the swap does not fire automatically on the last push; the
  // coordinator triggers it with finalize_swap once it is ready (used for
  // replay-based handoff, where pushes arrive while the trace replays).
  void set_manual_swap(bool manual) { manual_swap_ = manual; }

  // Fires right after a held-ruleset swap lands (automatic or finalized).
  void set_on_swap(std::function<void()> cb) { on_swap_ = std::move(cb); }

  // Observes every composed policy the instant it is compiled into switch
  // tables. Differential tests use this to replay the policies a live
  // controller actually installed against the algebraic semantics.
  void set_install_hook(std::function<void(const net::PolicyPtr&)> cb) {
    on_install_ = std::move(cb);
  }

  void finalize_swap() {
    if (!in_update_ || received_new_ != updating_)
      throw UpdateInProgress("finalize_swap: not all updated apps have pushed");
    do_swap();
  }

  bool update_in_progress() const { return in_update_; }
  const std::set<std::string>& awaited_apps() const { return updating_; }
  const std::set<std::string>& held_apps() const { return received_new_; }

  // --- stats ------------------------------------------------------------------

  // Polls per-port counters (fanned out as events) and publishes per-flow
  // delivery counters into the NIB so apps can read them.
  void collect_stats() {
    for (const std::string& sw : net_->switch_ids())
      for (const sim::PortStatsEvent& ev : net_->port_stats(sw))
        dispatch(sim::NetworkEvent{ev});
    if (!nib_session_) return;
    for (const auto& [id, f] : net_->flows()) {
      if (f.state == sim::FlowState::kClosed) continue;
      std::string key = f.src_ip + "_" + std::to_string(f.src_port) + "_" +
                        f.dst_ip + "_" + std::to_string(f.dst_port);
      nib_->put(nib_session_, "flow_stats", key,
                Document{{"packets", f.packets_delivered}});
    }
  }

  // --- event recording / replay -------------------------------------------------

  void start_recording() {
    recording_ = true;
    trace_.clear();
  }
  void stop_recording() { recording_ = false; }
  const std::vector<sim::PacketInEvent>& trace() const { return trace_; }

  // Feeds the recorded trace into `s` as ordinary events. The session is
  // flagged as replaying until end_replay so its pkt_out calls are dropped.
  void replay_to(const SessionPtr& s) {
    s->replaying = true;
    for (const sim::PacketInEvent& ev : trace_)
      if (s->wants("packet_in")) s->inbox.push(sim::NetworkEvent{ev});
  }

  void end_replay(const SessionPtr& s) { s->replaying = false; }

  // --- introspection -----------------------------------------------------------

  const std::map<std::string, Slot>& slots() const { return slots_; }

  Document tables_snapshot() const {
    Document out = Document::object();
    for (const std::string& sw : net_->switch_ids())
      out[sw] = net::to_json(net_->table(sw));
    return out;
  }

 private:
  void dispatch(const sim::NetworkEvent& ev) {
    if (recording_) {
      if (const auto* p = std::get_if<sim::PacketInEvent>(&ev))
        trace_.push_back(*p);
    }
    const std::string cls = event_class(ev);
    for (const SessionPtr& s : sessions_)
      if (!s->disconnected && s->wants(cls)) s->inbox.push(ev);
  }

  // Swap in everything the new versions pushed, with one recompile. Update
  // mode stays on (pushes from old sessions remain ignored) until resume.
  void do_swap() {
    for (auto& [app_id, slot] : held_) {
      if (!slot.policy.policy)
        slots_.erase(app_id);
      else
        slots_[app_id] = std::move(slot);
    }
    held_.clear();
    recompile_and_install();
    if (on_swap_) on_swap_();
  }

  void recompile_and_install() {
    if (slots_.empty()) {
      // No policies at all: empty tables, everything diverts to the
      // controller. (An explicit drop-all is a policy decision, not a
      // default.)
      net_->wipe_tables();
      return;
    }
    std::vector<net::AppPolicy> apps;
    std::map<std::string, std::string> provenance;
    for (const auto& [app_id, slot] : slots_) {
      apps.push_back(slot.policy);
      provenance[app_id] = slot.version;
    }
    net::PolicyPtr composed = net::compose_app_policies(apps);
    if (on_install_) on_install_(composed);
    for (const std::string& sw : net_->switch_ids()) {
      net::FlowTable t = net::compile(composed, sw);
      t.provenance = provenance;
      net_->install_table(sw, std::move(t));
    }
  }

  sim::SimNet* net_;
  nib::NibStore* nib_;
  nib::NibSessionPtr nib_session_;
  std::vector<SessionPtr> sessions_;
  std::map<std::string, Slot> slots_;

  bool in_update_ = false;
  bool manual_swap_ = false;
  std::function<void()> on_swap_;
  std::function<void(const net::PolicyPtr&)> on_install_;
  std::set<std::string> updating_;
  std::map<std::string, SessionPtr> old_sessions_;
  std::map<std::string, Slot> held_;
  std::set<std::string> received_new_;

  bool recording_ = false;
  std::vector<sim::PacketInEvent> trace_;
};

}  // namespace morpheus
