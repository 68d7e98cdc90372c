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

// The network information base (NIB): a namespaced, versioned document
// store embedded in the controller process.
//
// Every namespace carries a version history. Writes land at the current
// version; reads migrate stale entries forward on access ("lazy state
// transfer"): if an entry was written at version k and the namespace is
// now at version n, the registered transformer chain for k..n runs once,
// the result is written back, and later reads see the migrated document
// directly. Entries that are never read stay at their old version on
// disk/in dumps, which keeps update pauses short regardless of store size.
//
// Single logical owner: the store is used from one cooperative scheduler,
// so every operation is atomic with respect to every other. Change
// notifications are queued, not delivered inline; subscribers drain them
// from their own task.

#pragma once

#include <deque>
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

#include "morpheus/clock.hpp"
#include "morpheus/document.hpp"
#include "morpheus/errors.hpp"
#include "morpheus/xfgen.hpp"

namespace morpheus::nib {

struct Notification {
  std::string channel;
  Document payload;
};

// Pull-style subscription handle. The store keeps a weak reference; the
// subscription dies with its owner and deliveries to it stop.
class Subscription {
 public:
  explicit Subscription(std::string channel) : channel_(std::move(channel)) {}

  const std::string& channel() const { return channel_; }

  std::optional<Notification> poll() {
    if (queue_.empty()) return std::nullopt;
    Notification n = std::move(queue_.front());
    queue_.pop_front();
    return n;
  }

  size_t pending() const { return queue_.size(); }

  // Invoked on every delivery; used to mark the owning task runnable.
  void set_wake_callback(std::function<void()> cb) { wake_ = std::move(cb); }

 private:
  friend class NibStore;
  void deliver(Notification n) {
    queue_.push_back(std::move(n));
    if (wake_) wake_();
  }

  std::string channel_;
  std::deque<Notification> queue_;
  std::function<void()> wake_;
};

using SubscriptionPtr = std::shared_ptr<Subscription>;

struct NamespaceMeta {
  std::string name;
  std::vector<std::string> history;  // oldest..newest, never shrinks
  const std::string& current() const { return history.back(); }
};

// A single version-edge migration. `fn` maps (key, doc, clock) to the
// migrated (key, doc); `source` is its transformer-DSL text, kept so dumps
// can round-trip executable state.
struct NibTransformer {
  std::string from, to;
  std::function<std::pair<std::string, Document>(
      const std::string&, const Document&, const Clock&)>
      fn;
  std::string source;
};

inline NibTransformer make_nib_transformer(const xfgen::Transformer& t) {
  return NibTransformer{
      t.from_version(), t.to_version(),
      [t](const std::string& key, const Document& doc, const Clock& clock) {
        return t.apply(key, doc, clock);
      },
      t.source()};
}

class NibSession {
 public:
  NibSession(std::string app_id, std::map<std::string, std::string> namespaces)
      : app_id_(std::move(app_id)), namespaces_(std::move(namespaces)) {}
  const std::string& app_id() const { return app_id_; }
  bool holds(const std::string& ns) const { return namespaces_.count(ns) > 0; }
  const std::map<std::string, std::string>& namespaces() const {
    return namespaces_;
  }

 private:
  std::string app_id_;
  std::map<std::string, std::string> namespaces_;  // ns -> version at connect
};

using NibSessionPtr = std::shared_ptr<NibSession>;

class NibStore {
 public:
  explicit NibStore(std::shared_ptr<const Clock> clock)
      : clock_(std::move(clock)) {}

  // --- sessions -----------------------------------------------------------

  // Validates every (namespace, expected_version) requirement, creating
  // absent namespaces at their expected version. All-or-nothing: a
  // VersionMismatch leaves the store untouched.
  NibSessionPtr connect(
      const std::string& app_id,
      const std::vector<std::pair<std::string, std::string>>& requirements) {
    for (const auto& [ns, expected] : requirements) {
      auto it = meta_.find(ns);
      if (it != meta_.end() && it->second.current() != expected)
        throw VersionMismatch(ns, expected, it->second.current());
    }
    std::map<std::string, std::string> held;
    for (const auto& [ns, expected] : requirements) {
      if (meta_.find(ns) == meta_.end())
        meta_.emplace(ns, NamespaceMeta{ns, {expected}});
      held[ns] = expected;
    }
    return std::make_shared<NibSession>(app_id, held);
  }

  // --- data plane ----------------------------------------------------------

  void put(const NibSessionPtr& s, const std::string& ns,
           const std::string& key, Document doc) {
    check(s, ns);
    entries_[ns][key] = Entry{std::move(doc), meta_.at(ns).current()};
    publish_change(ns, key, "put");
  }

  // Returns the document migrated to the namespace's current version, or
  // nullopt if absent. Migration happens at most once per entry per
  // version edge: the migrated document (and possibly renamed key) is
  // written back before returning. A TransformFailure leaves the entry at
  // its old version. Write-back is bookkeeping, not a logical change, so
  // no notification is published for it.
  std::optional<Document> get(const NibSessionPtr& s, const std::string& ns,
                              const std::string& key) {
    check(s, ns);
    auto nsit = entries_.find(ns);
    if (nsit == entries_.end()) return std::nullopt;
    auto it = nsit->second.find(key);
    if (it == nsit->second.end()) return std::nullopt;
    const std::string current = meta_.at(ns).current();
    if (it->second.version == current) return it->second.doc;
    auto [new_key, new_doc] = migrate(ns, key, it->second);
    nsit->second.erase(it);
    nsit->second[new_key] = Entry{new_doc, current};
    return new_doc;
  }

  bool erase(const NibSessionPtr& s, const std::string& ns,
             const std::string& key) {
    check(s, ns);
    auto nsit = entries_.find(ns);
    if (nsit == entries_.end()) return false;
    bool removed = nsit->second.erase(key) > 0;
    if (removed) publish_change(ns, key, "delete");
    return removed;
  }

  // Keys currently present, lexicographically ordered, '*'-glob filtered.
  // Listing does not migrate; keys that a pending migration would rename
  // still appear under their old name until read.
  std::vector<std::string> list_keys(const NibSessionPtr& s,
                                     const std::string& ns,
                                     const std::string& glob) {
    check(s, ns);
    std::vector<std::string> out;
    auto nsit = entries_.find(ns);
    if (nsit == entries_.end()) return out;
    for (const auto& [key, entry] : nsit->second)
      if (glob_match(glob, key)) out.push_back(key);
    return out;
  }

  // --- versioning ----------------------------------------------------------

  // Appends a migration step. The step must start exactly at the
  // namespace's current version; on success the namespace's current
  // version becomes step.to.
  void register_transformer(const std::string& ns, NibTransformer step) {
    auto it = meta_.find(ns);
    if (it == meta_.end()) throw UnknownNamespace(ns);
    if (it->second.current() != step.from)
      throw ChainMismatch(ns, step.from, it->second.current());
    chains_[ns].push_back(std::move(step));
    it->second.history.push_back(chains_[ns].back().to);
  }

  // Undoes the newest registered step for a namespace, provided nothing has
  // migrated across it yet: no stored entry may carry the step's target
  // version. Returns false (and changes nothing) when entries block it.
  bool rollback_transformer(const std::string& ns) {
    auto cit = chains_.find(ns);
    if (cit == chains_.end() || cit->second.empty()) return false;
    const std::string& target = cit->second.back().to;
    auto nsit = entries_.find(ns);
    if (nsit != entries_.end()) {
      for (const auto& [key, entry] : nsit->second)
        if (entry.version == target) return false;
    }
    meta_.at(ns).history.pop_back();
    cit->second.pop_back();
    return true;
  }

  // --- pub/sub ---------------------------------------------------------------

  SubscriptionPtr subscribe(const NibSessionPtr& s, const std::string& channel) {
    (void)s;  // any session may listen on any channel
    auto sub = std::make_shared<Subscription>(channel);
    subs_[channel].push_back(sub);
    return sub;
  }

  void publish(const NibSessionPtr& s, const std::string& channel,
               Document payload) {
    (void)s;
    deliver(channel, std::move(payload));
  }

  // --- dump / restore --------------------------------------------------------
  //
  // Newline-delimited JSON. First record: namespace metadata. Then one
  // record per entry at its raw (possibly stale) version. Last record:
  // the registered transformer chains as DSL source. Output is canonical,
  // so dump -> restore -> dump is byte-identical.

  void dump(std::ostream& os) const {
    Document meta = Document::object();
    for (const auto& [ns, m] : meta_)
      meta[ns] = Document{{"history", m.history}, {"current", m.current()}};
    os << Document{{"meta", meta}}.dump() << "\n";
    for (const auto& [ns, keys] : entries_) {
      for (const auto& [key, entry] : keys) {
        os << Document{{"ns", ns},
                       {"key", key},
                       {"ver", entry.version},
                       {"doc", entry.doc}}
                  .dump()
           << "\n";
      }
    }
    Document txs = Document::array();
    for (const auto& [ns, chain] : chains_) {
      for (const auto& step : chain) {
        if (step.source.empty())
          throw IoError("transformer for " + ns +
                        " has no source text; cannot dump");
        txs.push_back(Document{{"ns", ns},
                               {"from", step.from},
                               {"to", step.to},
                               {"source", step.source}});
      }
    }
    os << Document{{"transformers", txs}}.dump() << "\n";
  }

  void dump(const std::filesystem::path& path) const {
    std::ofstream f(path);
    if (!f) throw IoError("cannot open for write: " + path.string());
    dump(f);
  }

  std::string dump_string() const {
    std::ostringstream os;
    dump(os);
    return os.str();
  }

  void restore(std::istream& is) {
    meta_.clear();
    entries_.clear();
    chains_.clear();
    std::string line;
    bool have_meta = false;
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      Document rec = parse_document(line);
      if (rec.contains("meta")) {
        for (auto it = rec["meta"].begin(); it != rec["meta"].end(); ++it) {
          NamespaceMeta m;
          m.name = it.key();
          for (const auto& v : it.value().at("history"))
            m.history.push_back(v.get<std::string>());
          if (m.history.empty())
            throw IoError("namespace " + m.name + " has empty history");
          meta_.emplace(m.name, std::move(m));
        }
        have_meta = true;
      } else if (rec.contains("transformers")) {
        for (const auto& t : rec["transformers"]) {
          std::string ns = t.at("ns").get<std::string>();
          auto units = xfgen::compile(t.at("source").get<std::string>());
          if (units.size() != 1)
            throw IoError("transformer record must hold exactly one rule");
          NibTransformer step = make_nib_transformer(units[0]);
          if (step.from != t.at("from").get<std::string>() ||
              step.to != t.at("to").get<std::string>())
            throw IoError("transformer source disagrees with its record");
          // Raw re-attachment: the version history already contains the
          // edge, so this must not bump versions again.
          chains_[ns].push_back(std::move(step));
        }
      } else {
        if (!have_meta) throw IoError("entry record before meta record");
        entries_[rec.at("ns").get<std::string>()]
                [rec.at("key").get<std::string>()] =
                    Entry{rec.at("doc"), rec.at("ver").get<std::string>()};
      }
    }
    // Validate: entries and chains only for known namespaces, and each
    // chain covers its namespace's history edge-for-edge.
    for (const auto& [ns, keys] : entries_)
      if (meta_.find(ns) == meta_.end())
        throw IoError("entries for unknown namespace " + ns);
    for (const auto& [ns, chain] : chains_)
      if (meta_.find(ns) == meta_.end())
        throw IoError("transformers for unknown namespace " + ns);
    for (const auto& [ns, m] : meta_) {
      auto it = chains_.find(ns);
      const size_t len = it == chains_.end() ? 0 : it->second.size();
      if (len + 1 != m.history.size())
        throw IoError("transformer chain length disagrees with history of " +
                      ns);
      for (size_t i = 0; i < len; ++i)
        if (it->second[i].from != m.history[i] ||
            it->second[i].to != m.history[i + 1])
          throw IoError("transformer chain misaligned for " + ns);
    }
  }

  void restore(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open for read: " + path.string());
    restore(f);
  }

  // --- introspection ---------------------------------------------------------

  const NamespaceMeta* meta(const std::string& ns) const {
    auto it = meta_.find(ns);
    return it == meta_.end() ? nullptr : &it->second;
  }

  std::vector<std::string> namespaces() const {
    std::vector<std::string> out;
    for (const auto& [ns, m] : meta_) out.push_back(ns);
    return out;
  }

  struct RawEntry {
    std::string ns, key, version;
    Document doc;
  };

  // Entries exactly as stored; never triggers migration.
  std::vector<RawEntry> raw_entries() const {
    std::vector<RawEntry> out;
    for (const auto& [ns, keys] : entries_)
      for (const auto& [key, e] : keys)
        out.push_back(RawEntry{ns, key, e.version, e.doc});
    return out;
  }

  // Forget a namespace entirely: contents, history, transformers. Models a
  // controller whose state lived only in process memory and died with it.
  void clear_namespace(const std::string& ns) {
    meta_.erase(ns);
    entries_.erase(ns);
    chains_.erase(ns);
  }

  // --- persistence ------------------------------------------------------------
  //
  // A store serializes to a plain document: the version history of each
  // namespace plus every entry at its stored version. Registered
  // transformers are code, not data; a fresh process re-registers the steps
  // its next update needs. Callers that want the snapshot fully settled
  // should read every key at the current version first.

  Document to_json() const {
    Document chains = Document::object();
    for (const auto& [name, m] : meta_) {
      Document hist = Document::array();
      for (const auto& v : m.history) hist.push_back(v);
      chains[name] = hist;
    }
    Document entries = Document::array();
    for (const auto& e : raw_entries())
      entries.push_back({{"ns", e.ns},
                         {"key", e.key},
                         {"version", e.version},
                         {"doc", e.doc}});
    return Document{{"namespaces", chains}, {"entries", entries}};
  }

  // Replaces the whole store contents. Sessions from before the load keep
  // their version pins and will fail their next access if those no longer
  // hold, which is the honest outcome.
  void load_json(const Document& d) {
    meta_.clear();
    entries_.clear();
    chains_.clear();
    for (const auto& [name, hist] : d.at("namespaces").items()) {
      NamespaceMeta m;
      m.name = name;
      for (const auto& v : hist) m.history.push_back(v.get<std::string>());
      if (m.history.empty())
        throw MorpheusError("namespace with empty history: " + name);
      meta_.emplace(name, std::move(m));
    }
    for (const auto& e : d.at("entries")) {
      const std::string ns = e.at("ns").get<std::string>();
      if (meta_.find(ns) == meta_.end())
        throw MorpheusError("entry for unknown namespace: " + ns);
      entries_[ns][e.at("key").get<std::string>()] =
          Entry{e.at("doc"), e.at("version").get<std::string>()};
    }
  }

  const Clock& clock() const { return *clock_; }

 private:
  struct Entry {
    Document doc;
    std::string version;
  };

  void check(const NibSessionPtr& s, const std::string& ns) const {
    if (!s) throw SessionNotHolding("(null session)");
    if (!s->holds(ns)) throw SessionNotHolding(ns);
    if (meta_.find(ns) == meta_.end()) throw UnknownNamespace(ns);
  }

  std::pair<std::string, Document> migrate(const std::string& ns,
                                           const std::string& key,
                                           const Entry& entry) {
    const auto& history = meta_.at(ns).history;
    size_t start = 0;
    while (start < history.size() && history[start] != entry.version) ++start;
    if (start == history.size())
      throw TransformFailure("entry version not in namespace history", key,
                             entry.version, history.back());
    std::string k = key;
    Document d = entry.doc;
    const auto& chain = chains_.at(ns);
    for (size_t i = start; i < chain.size(); ++i) {
      try {
        std::tie(k, d) = chain[i].fn(k, d, *clock_);
      } catch (const TransformFailure& e) {
        throw TransformFailure(e.what(), key, chain[i].from, chain[i].to);
      }
    }
    return {std::move(k), std::move(d)};
  }

  void publish_change(const std::string& ns, const std::string& key,
                      const std::string& op) {
    deliver("ns:" + ns, Document{{"ns", ns}, {"key", key}, {"op", op}});
  }

  void deliver(const std::string& channel, Document payload) {
    auto it = subs_.find(channel);
    if (it == subs_.end()) return;
    auto& vec = it->second;
    size_t kept = 0;
    for (auto& weak : vec) {
      if (auto sub = weak.lock()) {
        sub->deliver(Notification{channel, payload});
        vec[kept++] = weak;
      }
    }
    vec.resize(kept);
  }

  std::map<std::string, NamespaceMeta> meta_;
  std::map<std::string, std::map<std::string, Entry>> entries_;
  std::map<std::string, std::vector<NibTransformer>> chains_;
  std::map<std::string, std::vector<std::weak_ptr<Subscription>>> subs_;
  std::shared_ptr<const Clock> clock_;
};

}  // namespace morpheus::nib
