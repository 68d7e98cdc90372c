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

// The update coordinator: drives a live controller from one set of app
// versions to another without dropping the network on the floor.
//
// A deploy runs four phases:
//   quiescing   pause the affected apps' policy pushes, ask each instance
//               to drain and exit cleanly (stragglers are killed when the
//               timeout fires)
//   installing  compile the state transformers, validate every step against
//               the store's version chains, then register them; validation
//               is all-or-nothing, so a mismatch aborts before anything
//               changed
//   restarting  start the new instances; their policy pushes are held by
//               the platform and land as one atomic swap when the last one
//               arrives (a timeout or a failed boot aborts, restoring the
//               old rulesets)
//   resuming    release the pause and hand the network back
//
// The coordinator never blocks: it schedules work on the runtime and
// reports progress through an UpdateReport with per-phase timestamps.

#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "morpheus/apps.hpp"
#include "morpheus/document.hpp"
#include "morpheus/errors.hpp"
#include "morpheus/nib.hpp"
#include "morpheus/platform.hpp"
#include "morpheus/runtime.hpp"
#include "morpheus/xfgen.hpp"

namespace morpheus {

struct UpdateAppSpec {
  std::string id, from, to;
};

struct UpdateSpec {
  std::vector<UpdateAppSpec> apps;
  std::vector<std::string> mu_sources;  // transformer-DSL program texts
  double quiesce_timeout_ms = 5000;
  double hold_timeout_ms = 5000;

  // Accepts {"apps":[{"id","from","to"}...], "mu_files":[...paths...],
  // "mu_sources":[...inline text...], "quiesce_timeout_ms", "hold_timeout_ms"}.
  static UpdateSpec from_json(const Document& d) {
    UpdateSpec s;
    for (const auto& a : d.value("apps", Document::array())) {
      s.apps.push_back(UpdateAppSpec{a.at("id").get<std::string>(),
                                     a.at("from").get<std::string>(),
                                     a.at("to").get<std::string>()});
    }
    for (const auto& f : d.value("mu_files", Document::array())) {
      const std::filesystem::path path = f.get<std::string>();
      std::ifstream in(path);
      if (!in) throw IoError("cannot open for read: " + path.string());
      std::ostringstream text;
      text << in.rdbuf();
      s.mu_sources.push_back(text.str());
    }
    for (const auto& src : d.value("mu_sources", Document::array()))
      s.mu_sources.push_back(src.get<std::string>());
    s.quiesce_timeout_ms = d.value("quiesce_timeout_ms", 5000.0);
    s.hold_timeout_ms = d.value("hold_timeout_ms", 5000.0);
    return s;
  }
};

struct UpdateReport {
  struct Phase {
    std::string name;
    double start = 0, end = 0;
  };
  struct AppOutcome {
    std::string id, from, to;
    bool graceful = true;  // quiesced cleanly (vs killed at the deadline)
  };

  std::string status = "idle";  // running | done | aborted
  std::string reason;           // AbortChainMismatch | AbortHoldTimeout |
                                // AbortAppStartFailure (when aborted)
  std::string detail;
  std::vector<Phase> phases;
  std::vector<AppOutcome> apps;

  Document to_json() const {
    Document ph = Document::array();
    for (const auto& p : phases)
      ph.push_back({{"name", p.name}, {"start", p.start}, {"end", p.end}});
    Document ap = Document::array();
    for (const auto& a : apps)
      ap.push_back({{"id", a.id},
                    {"from", a.from},
                    {"to", a.to},
                    {"graceful", a.graceful}});
    return Document{{"status", status},
                    {"reason", reason},
                    {"detail", detail},
                    {"phases", ph},
                    {"apps", ap}};
  }
};

class UpdateCoordinator {
 public:
  using HostMap = std::map<std::string, std::unique_ptr<AppHost>>;

  UpdateCoordinator(Runtime* rt, Platform* plat, nib::NibStore* nib,
                    HostMap* hosts, const std::map<std::string, Document>* configs)
      : rt_(rt), plat_(plat), nib_(nib), hosts_(hosts), configs_(configs) {}

  // Kicks off a deploy; progress happens as the runtime runs. Observe
  // completion via active()/report().
  void start(UpdateSpec spec) {
    if (active_) throw UpdateInProgress("deploy: coordinator already busy");
    if (plat_->update_in_progress())
      throw UpdateInProgress("deploy: platform already mid-update");
    spec_ = std::move(spec);
    active_ = true;
    report_ = UpdateReport{};
    report_.status = "running";
    for (const auto& a : spec_.apps)
      report_.apps.push_back(UpdateReport::AppOutcome{a.id, a.from, a.to});
    registered_.clear();
    quiesce();
  }

  bool active() const { return active_; }
  const UpdateReport& report() const { return report_; }

 private:
  enum class Phase { kIdle, kQuiescing, kInstalling, kRestarting, kResuming };

  void begin_phase(Phase ph, const char* name) {
    phase_ = ph;
    if (!report_.phases.empty()) report_.phases.back().end = rt_->now();
    report_.phases.push_back(UpdateReport::Phase{name, rt_->now(), rt_->now()});
  }

  void quiesce() {
    begin_phase(Phase::kQuiescing, "quiescing");
    std::set<std::string> ids;
    for (const auto& a : spec_.apps) ids.insert(a.id);
    plat_->pause(ids);
    // The +1 guards against synchronous acks finishing the phase while
    // requests are still going out.
    pending_quiesce_ = 1;
    for (const auto& a : spec_.apps) {
      pending_quiesce_++;
      auto it = hosts_->find(a.id);
      if (it != hosts_->end() && it->second)
        it->second->quiesce([this] { quiesce_acked(); });
      else
        quiesce_acked();
    }
    quiesce_deadline_ = rt_->schedule_at(
        rt_->now() + spec_.quiesce_timeout_ms / 1000.0, [this] {
          quiesce_deadline_.reset();
          force_quiesce();
        });
    quiesce_acked();
  }

  void quiesce_acked() {
    if (phase_ != Phase::kQuiescing) return;
    if (--pending_quiesce_ > 0) return;
    if (quiesce_deadline_) {
      rt_->cancel_timer(*quiesce_deadline_);
      quiesce_deadline_.reset();
    }
    install();
  }

  // Deadline passed: whoever has not drained is killed mid-flight.
  void force_quiesce() {
    if (phase_ != Phase::kQuiescing) return;
    for (auto& outcome : report_.apps) {
      auto it = hosts_->find(outcome.id);
      if (it != hosts_->end() && it->second && !it->second->quiesced()) {
        it->second->kill();
        outcome.graceful = false;
      }
    }
    pending_quiesce_ = 0;
    install();
  }

  void install() {
    begin_phase(Phase::kInstalling, "installing");
    std::vector<xfgen::Transformer> steps;
    try {
      for (const std::string& src : spec_.mu_sources)
        for (auto& t : xfgen::compile(src)) steps.push_back(std::move(t));
    } catch (const MorpheusError& e) {
      abort_update("AbortChainMismatch",
                   std::string("transformer rejected: ") + e.what());
      return;
    }
    // Validate the whole batch against the chains before touching any of
    // them: an abort here must leave the store exactly as it was.
    std::map<std::string, std::string> cursor;
    for (const auto& t : steps) {
      std::string cur;
      auto it = cursor.find(t.ns());
      if (it != cursor.end()) {
        cur = it->second;
      } else if (const auto* m = nib_->meta(t.ns())) {
        cur = m->current();
      } else {
        abort_update("AbortChainMismatch", "no such namespace: " + t.ns());
        return;
      }
      if (cur != t.from_version()) {
        abort_update("AbortChainMismatch",
                     t.ns() + ": transformer expects " + t.from_version() +
                         " but the chain is at " + cur);
        return;
      }
      cursor[t.ns()] = t.to_version();
    }
    for (const auto& t : steps) {
      nib_->register_transformer(t.ns(), nib::make_nib_transformer(t));
      registered_.push_back(t.ns());
    }
    restart();
  }

  void restart() {
    begin_phase(Phase::kRestarting, "restarting");
    if (spec_.apps.empty()) {  // pure schema migration, nothing to boot
      resume();
      return;
    }
    plat_->set_on_swap([this] { swap_landed(); });
    for (const auto& a : spec_.apps) {
      auto host = std::make_unique<AppHost>(rt_, plat_, nib_, a.id, a.to,
                                            config_for(a.id));
      host->set_failure_callback([this, id = a.id] { app_failed(id); });
      host->spawn(kAppRestartDelaySec + kBootDelaySec);
      new_hosts_[a.id] = std::move(host);
    }
    hold_deadline_ = rt_->schedule_at(
        rt_->now() + spec_.hold_timeout_ms / 1000.0, [this] {
          hold_deadline_.reset();
          std::string waiting;
          for (const auto& id : plat_->awaited_apps())
            if (plat_->held_apps().count(id) == 0)
              waiting += (waiting.empty() ? "" : ", ") + id;
          abort_update("AbortHoldTimeout",
                       "still waiting for: " + waiting);
        });
  }

  void swap_landed() {
    if (phase_ != Phase::kRestarting) return;
    resume();
  }

  void app_failed(const std::string& id) {
    if (phase_ != Phase::kRestarting) return;
    std::string why = id;
    auto it = new_hosts_.find(id);
    if (it != new_hosts_.end()) why += ": " + it->second->error();
    // Deferred: this callback runs inside the failing host's boot frame,
    // and the abort path tears that host down.
    rt_->schedule_at(rt_->now(), [this, why] {
      if (phase_ == Phase::kRestarting)
        abort_update("AbortAppStartFailure", why);
    });
  }

  void resume() {
    cancel_deadlines();
    begin_phase(Phase::kResuming, "resuming");
    plat_->set_on_swap(nullptr);
    plat_->resume();
    for (auto& [id, host] : new_hosts_) (*hosts_)[id] = std::move(host);
    new_hosts_.clear();
    report_.phases.back().end = rt_->now();
    report_.status = "done";
    phase_ = Phase::kIdle;
    active_ = false;
  }

  void abort_update(const std::string& reason, const std::string& detail) {
    cancel_deadlines();
    plat_->set_on_swap(nullptr);
    for (auto& [id, host] : new_hosts_) host->kill();
    new_hosts_.clear();
    plat_->restore_held();
    // Unwind this deploy's schema steps, newest first. A step that data
    // already migrated across stays; the respawned old version of that app
    // will then refuse to boot, which the host surfaces as a failure.
    for (auto it = registered_.rbegin(); it != registered_.rend(); ++it)
      nib_->rollback_transformer(*it);
    registered_.clear();
    plat_->resume();
    for (const auto& a : spec_.apps) {
      auto host = std::make_unique<AppHost>(rt_, plat_, nib_, a.id, a.from,
                                            config_for(a.id));
      host->spawn(kAppRestartDelaySec + kBootDelaySec);
      (*hosts_)[a.id] = std::move(host);
    }
    report_.phases.back().end = rt_->now();
    report_.status = "aborted";
    report_.reason = reason;
    report_.detail = detail;
    phase_ = Phase::kIdle;
    active_ = false;
  }

  void cancel_deadlines() {
    if (quiesce_deadline_) {
      rt_->cancel_timer(*quiesce_deadline_);
      quiesce_deadline_.reset();
    }
    if (hold_deadline_) {
      rt_->cancel_timer(*hold_deadline_);
      hold_deadline_.reset();
    }
  }

  Document config_for(const std::string& id) const {
    auto it = configs_->find(id);
    return it == configs_->end() ? Document::object() : it->second;
  }

  Runtime* rt_;
  Platform* plat_;
  nib::NibStore* nib_;
  HostMap* hosts_;
  const std::map<std::string, Document>* configs_;

  UpdateSpec spec_;
  UpdateReport report_;
  Phase phase_ = Phase::kIdle;
  bool active_ = false;
  int pending_quiesce_ = 0;
  std::optional<Runtime::TimerId> quiesce_deadline_;
  std::optional<Runtime::TimerId> hold_deadline_;
  HostMap new_hosts_;
  std::vector<std::string> registered_;  // namespaces, registration order
};

}  // namespace morpheus
