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

// Prioritized match-action flow tables and the policy-to-table compiler.
//
// A table is a list of rules with strictly descending priorities; the
// first rule whose match (a partial header assignment) covers a packet
// fires, and only that rule. A packet matching no rule is diverted to the
// controller (PacketIn) — that divert is the table's default, not a rule.
//
// Action semantics: actions run left to right against a working copy of
// the matched packet. `mod` rewrites one field of the working copy;
// `out` emits the working copy at a port and then RESETS the working copy
// to the original matched packet. One rule can therefore emit several
// differently-rewritten copies, mirroring the packet-set semantics of the
// policy algebra. Special output ports: kFloodPort floods (every port of
// the switch except the packet's ingress), kInPort sends the packet back
// out the port it arrived on.
//
// The compiler builds a reduced binary decision tree over the policy's
// header tests (fields in canonical order, values in sorted order within
// a field; equal branches pin a field, unequal branches exclude one value)
// and emits one rule per root-to-leaf path, equal-branch paths first so
// more specific rules shadow the rest. Drop rules (empty actions) that
// shadow no reachable lower rule are pruned; the all-miss path then falls
// through to the controller, which matches how reactive apps expect
// unhandled traffic to surface. A policy that drops everything compiles
// to the single explicit match-all drop rule.

#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "morpheus/document.hpp"
#include "morpheus/errors.hpp"
#include "morpheus/net/packet.hpp"
#include "morpheus/net/policy.hpp"

namespace morpheus::net {

constexpr int64_t kFloodPort = -1;  // out: all ports except ingress
constexpr int64_t kInPort = -2;     // out: the packet's ingress port

struct Action {
  enum class Kind { kModify, kOutput };
  Kind kind;
  Field field{};       // kModify
  FieldValue value{};  // kModify
  int64_t out_port{};  // kOutput

  static Action mod(Field f, FieldValue v) {
    return Action{Kind::kModify, f, std::move(v), 0};
  }
  static Action out(int64_t port) {
    return Action{Kind::kOutput, {}, {}, port};
  }
  friend bool operator==(const Action& a, const Action& b) {
    return a.kind == b.kind && a.field == b.field && a.value == b.value &&
           a.out_port == b.out_port;
  }
};

using Match = std::map<Field, FieldValue>;

struct Rule {
  int priority = 0;
  Match match;
  std::vector<Action> actions;

  bool covers(const Packet& pkt) const {
    for (const auto& [f, v] : match)
      if (pkt.get(f) != v) return false;
    return true;
  }
  friend bool operator==(const Rule& a, const Rule& b) {
    return a.priority == b.priority && a.match == b.match &&
           a.actions == b.actions;
  }
};

struct FlowTable {
  std::string sw;
  std::vector<Rule> rules;  // strictly descending priority
  // Which app versions this table was compiled from: app_id -> version.
  std::map<std::string, std::string> provenance;
};

inline bool rules_equal(const FlowTable& a, const FlowTable& b) {
  return a.rules == b.rules;
}

struct TableResult {
  bool matched = false;   // false: no rule fired -> divert to controller
  int priority = 0;       // of the rule that fired
  std::vector<Packet> out;
};

inline TableResult apply_table(const FlowTable& table, const Packet& pkt) {
  for (const Rule& rule : table.rules) {
    if (!rule.covers(pkt)) continue;
    TableResult res;
    res.matched = true;
    res.priority = rule.priority;
    Packet working = pkt;
    for (const Action& a : rule.actions) {
      if (a.kind == Action::Kind::kModify) {
        working.set(a.field, a.value);
      } else {
        Packet emitted = working;
        if (a.out_port == kInPort) {
          // keep the working copy's current port
        } else {
          emitted.port = a.out_port;  // kFloodPort stays symbolic here
        }
        res.out.push_back(emitted);
        working = pkt;
      }
    }
    return res;
  }
  return TableResult{};
}

// ---------------------------------------------------------------------------
// Compilation

namespace detail {

using UpdateMap = std::map<Field, FieldValue>;
using TestKey = std::pair<Field, FieldValue>;

inline void reject_switch_writes(const PolicyPtr& p) {
  switch (p->kind) {
    case Policy::Kind::kModify:
      if (p->field == Field::kSwitch)
        throw UnsupportedConstruct(
            "policies may not rewrite the switch field (no topology terms)");
      return;
    case Policy::Kind::kUnion:
    case Policy::Kind::kSeq:
      reject_switch_writes(p->lhs);
      reject_switch_writes(p->rhs);
      return;
    default:
      return;
  }
}

inline void collect_tests(const PredPtr& p, std::set<TestKey>& out) {
  switch (p->kind) {
    case Predicate::Kind::kTest:
      out.insert({p->field, p->value});
      return;
    case Predicate::Kind::kAnd:
    case Predicate::Kind::kOr:
      collect_tests(p->lhs, out);
      collect_tests(p->rhs, out);
      return;
    case Predicate::Kind::kNot:
      collect_tests(p->lhs, out);
      return;
    default:
      return;
  }
}

inline void collect_tests(const PolicyPtr& p, std::set<TestKey>& out) {
  switch (p->kind) {
    case Policy::Kind::kFilter:
      collect_tests(p->pred, out);
      return;
    case Policy::Kind::kUnion:
    case Policy::Kind::kSeq:
      collect_tests(p->lhs, out);
      collect_tests(p->rhs, out);
      return;
    default:
      return;
  }
}

// Full branch context: fields either pinned to one value or (implicitly)
// known to differ from every tested value of that field.
struct BranchCtx {
  std::map<Field, FieldValue> pinned;

  // Effective value of a field given pending writes; nullopt means
  // "differs from every value the policy ever tests on this field".
  std::optional<FieldValue> effective(Field f, const UpdateMap& writes) const {
    auto w = writes.find(f);
    if (w != writes.end()) return w->second;
    auto p = pinned.find(f);
    if (p != pinned.end()) return p->second;
    return std::nullopt;
  }
};

inline bool sym_pred(const PredPtr& p, const BranchCtx& ctx,
                     const UpdateMap& writes) {
  switch (p->kind) {
    case Predicate::Kind::kTrue: return true;
    case Predicate::Kind::kFalse: return false;
    case Predicate::Kind::kTest: {
      auto v = ctx.effective(p->field, writes);
      return v.has_value() && *v == p->value;
    }
    case Predicate::Kind::kAnd:
      return sym_pred(p->lhs, ctx, writes) && sym_pred(p->rhs, ctx, writes);
    case Predicate::Kind::kOr:
      return sym_pred(p->lhs, ctx, writes) || sym_pred(p->rhs, ctx, writes);
    case Predicate::Kind::kNot: return !sym_pred(p->lhs, ctx, writes);
  }
  return false;
}

// All output worlds of `p` under a fully decided branch context. Each
// world is the set of header writes applied to the input packet.
inline void worlds(const PolicyPtr& p, const BranchCtx& ctx,
                   const UpdateMap& writes, std::set<UpdateMap>& out) {
  switch (p->kind) {
    case Policy::Kind::kDrop: return;
    case Policy::Kind::kId:
      out.insert(writes);
      return;
    case Policy::Kind::kFilter:
      if (sym_pred(p->pred, ctx, writes)) out.insert(writes);
      return;
    case Policy::Kind::kModify: {
      UpdateMap w = writes;
      w[p->field] = p->value;
      out.insert(std::move(w));
      return;
    }
    case Policy::Kind::kUnion:
      worlds(p->lhs, ctx, writes, out);
      worlds(p->rhs, ctx, writes, out);
      return;
    case Policy::Kind::kSeq: {
      std::set<UpdateMap> mids;
      worlds(p->lhs, ctx, writes, mids);
      for (const auto& w : mids) worlds(p->rhs, ctx, w, out);
      return;
    }
  }
}

struct Dtree {
  bool is_leaf = true;
  std::set<UpdateMap> leaf;
  TestKey key{};  // internal node: test field == value
  std::shared_ptr<const Dtree> eq, ne;
};
using DtreePtr = std::shared_ptr<const Dtree>;

inline bool dtree_equal(const DtreePtr& a, const DtreePtr& b) {
  if (a == b) return true;
  if (a->is_leaf != b->is_leaf) return false;
  if (a->is_leaf) return a->leaf == b->leaf;
  return a->key == b->key && dtree_equal(a->eq, b->eq) &&
         dtree_equal(a->ne, b->ne);
}

inline DtreePtr make_leaf(std::set<UpdateMap> worlds) {
  auto t = std::make_shared<Dtree>();
  t->leaf = std::move(worlds);
  return t;
}

inline DtreePtr make_node(TestKey key, DtreePtr eq, DtreePtr ne) {
  if (dtree_equal(eq, ne)) return eq;  // test is irrelevant here
  auto t = std::make_shared<Dtree>();
  t->is_leaf = false;
  t->key = std::move(key);
  t->eq = std::move(eq);
  t->ne = std::move(ne);
  return t;
}

inline DtreePtr build_dtree(const PolicyPtr& p,
                            const std::vector<TestKey>& tests, size_t i,
                            BranchCtx& ctx) {
  while (i < tests.size() && ctx.pinned.count(tests[i].first)) ++i;
  if (i == tests.size()) {
    std::set<UpdateMap> out;
    worlds(p, ctx, {}, out);
    return make_leaf(std::move(out));
  }
  const auto& [field, value] = tests[i];
  ctx.pinned[field] = value;
  DtreePtr eq = build_dtree(p, tests, i + 1, ctx);
  ctx.pinned.erase(field);
  // The unequal branch: this one tested value is excluded; later tests on
  // the same field still branch on the remaining values.
  DtreePtr ne = build_dtree(p, tests, i + 1, ctx);
  return make_node(tests[i], std::move(eq), std::move(ne));
}

inline std::vector<Action> leaf_actions(const std::set<UpdateMap>& leaf) {
  std::vector<Action> actions;
  for (const auto& w : leaf) {
    for (const auto& [f, v] : w)
      if (f != Field::kPort) actions.push_back(Action::mod(f, v));
    auto port = w.find(Field::kPort);
    actions.push_back(Action::out(
        port == w.end() ? kInPort : std::get<int64_t>(port->second)));
  }
  return actions;
}

inline void extract_rules(const DtreePtr& t, Match& match,
                          std::vector<Rule>& out) {
  if (t->is_leaf) {
    out.push_back(Rule{0, match, leaf_actions(t->leaf)});
    return;
  }
  match[t->key.first] = t->key.second;
  extract_rules(t->eq, match, out);
  match.erase(t->key.first);
  extract_rules(t->ne, match, out);
}

// Two partial matches overlap iff they agree on every shared field.
inline bool matches_overlap(const Match& a, const Match& b) {
  for (const auto& [f, v] : a) {
    auto it = b.find(f);
    if (it != b.end() && it->second != v) return false;
  }
  return true;
}

}  // namespace detail

// Compiles `p` for switch `sw`: tests on the switch field are resolved
// against `sw` up front, so the emitted matches never mention it.
// Throws UnsupportedConstruct for policies that rewrite the switch field.
inline FlowTable compile(const PolicyPtr& p, const std::string& sw) {
  detail::reject_switch_writes(p);
  std::set<detail::TestKey> test_set;
  detail::collect_tests(p, test_set);
  std::vector<detail::TestKey> tests;
  for (const auto& t : test_set)
    if (t.first != Field::kSwitch) tests.push_back(t);

  detail::BranchCtx ctx;
  ctx.pinned[Field::kSwitch] = FieldValue(sw);
  detail::DtreePtr tree = detail::build_dtree(p, tests, 0, ctx);

  std::vector<Rule> rules;
  Match match;
  detail::extract_rules(tree, match, rules);

  // Prune drop rules that shadow nothing: keep a drop rule only if some
  // surviving lower rule with real actions overlaps its match (otherwise
  // packets it would eat fall through to the controller, and eval agrees
  // the policy emits nothing for them).
  std::vector<bool> keep(rules.size(), true);
  std::vector<size_t> lower_live;  // kept, non-empty, below current index
  for (size_t i = rules.size(); i-- > 0;) {
    if (rules[i].actions.empty()) {
      bool shields = false;
      for (size_t j : lower_live)
        if (detail::matches_overlap(rules[i].match, rules[j].match)) {
          shields = true;
          break;
        }
      keep[i] = shields;
    } else {
      lower_live.push_back(i);
    }
  }
  std::vector<Rule> pruned;
  for (size_t i = 0; i < rules.size(); ++i)
    if (keep[i]) pruned.push_back(std::move(rules[i]));
  if (pruned.empty()) pruned.push_back(Rule{0, {}, {}});  // drop-all policy

  for (size_t i = 0; i < pruned.size(); ++i)
    pruned[i].priority = static_cast<int>(pruned.size() - 1 - i);
  FlowTable table;
  table.sw = sw;
  table.rules = std::move(pruned);
  return table;
}

// ---------------------------------------------------------------------------
// JSON snapshots (for inspection and table-equality assertions)

inline Document to_json(const FieldValue& v) {
  if (std::holds_alternative<int64_t>(v)) return std::get<int64_t>(v);
  return std::get<std::string>(v);
}

inline Document to_json(const Rule& r) {
  Document match = Document::object();
  for (const auto& [f, v] : r.match) match[field_name(f)] = to_json(v);
  Document actions = Document::array();
  for (const Action& a : r.actions) {
    if (a.kind == Action::Kind::kModify)
      actions.push_back(Document{{"type", "mod"},
                                 {"field", field_name(a.field)},
                                 {"value", to_json(a.value)}});
    else
      actions.push_back(Document{{"type", "out"}, {"port", a.out_port}});
  }
  return Document{
      {"priority", r.priority}, {"match", match}, {"actions", actions}};
}

inline Document to_json(const FlowTable& t) {
  Document rules = Document::array();
  for (const Rule& r : t.rules) rules.push_back(to_json(r));
  return Document{
      {"switch", t.sw}, {"provenance", t.provenance}, {"rules", rules}};
}

}  // namespace morpheus::net
