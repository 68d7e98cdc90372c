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

// The policy algebra: a star-free, dup-free network policy language with
// predicates (filters), single-field rewrites, union, and sequential
// composition. A policy denotes a function from one packet to a set of
// packets; forwarding out port p is encoded as a rewrite of the `port`
// field. Policies and predicates are immutable trees shared by pointer.

#pragma once

#include <memory>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "morpheus/net/packet.hpp"

namespace morpheus::net {

// ---------------------------------------------------------------------------
// Predicates

struct Predicate;
using PredPtr = std::shared_ptr<const Predicate>;

struct Predicate {
  enum class Kind { kTrue, kFalse, kTest, kAnd, kOr, kNot };
  Kind kind;
  Field field{};       // kTest
  FieldValue value{};  // kTest
  PredPtr lhs, rhs;    // kAnd/kOr (both), kNot (lhs)
};

inline PredPtr pred_true() {
  static const auto p = std::make_shared<Predicate>(
      Predicate{Predicate::Kind::kTrue, {}, {}, nullptr, nullptr});
  return p;
}
inline PredPtr pred_false() {
  static const auto p = std::make_shared<Predicate>(
      Predicate{Predicate::Kind::kFalse, {}, {}, nullptr, nullptr});
  return p;
}
inline PredPtr test(Field f, FieldValue v) {
  return std::make_shared<Predicate>(
      Predicate{Predicate::Kind::kTest, f, std::move(v), nullptr, nullptr});
}
inline PredPtr test(Field f, const char* v) {
  return test(f, FieldValue(std::string(v)));
}
inline PredPtr test(Field f, int64_t v) { return test(f, FieldValue(v)); }
inline PredPtr pred_and(PredPtr a, PredPtr b) {
  return std::make_shared<Predicate>(Predicate{
      Predicate::Kind::kAnd, {}, {}, std::move(a), std::move(b)});
}
inline PredPtr pred_or(PredPtr a, PredPtr b) {
  return std::make_shared<Predicate>(
      Predicate{Predicate::Kind::kOr, {}, {}, std::move(a), std::move(b)});
}
inline PredPtr pred_not(PredPtr a) {
  return std::make_shared<Predicate>(
      Predicate{Predicate::Kind::kNot, {}, {}, std::move(a), nullptr});
}

inline bool eval_pred(const PredPtr& p, const Packet& pkt) {
  switch (p->kind) {
    case Predicate::Kind::kTrue: return true;
    case Predicate::Kind::kFalse: return false;
    case Predicate::Kind::kTest: return pkt.get(p->field) == p->value;
    case Predicate::Kind::kAnd:
      return eval_pred(p->lhs, pkt) && eval_pred(p->rhs, pkt);
    case Predicate::Kind::kOr:
      return eval_pred(p->lhs, pkt) || eval_pred(p->rhs, pkt);
    case Predicate::Kind::kNot: return !eval_pred(p->lhs, pkt);
  }
  return false;
}

// ---------------------------------------------------------------------------
// Policies

struct Policy;
using PolicyPtr = std::shared_ptr<const Policy>;

struct Policy {
  enum class Kind { kDrop, kId, kFilter, kModify, kUnion, kSeq };
  Kind kind;
  PredPtr pred;        // kFilter
  Field field{};       // kModify
  FieldValue value{};  // kModify
  PolicyPtr lhs, rhs;  // kUnion/kSeq
};

inline PolicyPtr drop() {
  static const auto p = std::make_shared<Policy>(
      Policy{Policy::Kind::kDrop, nullptr, {}, {}, nullptr, nullptr});
  return p;
}
inline PolicyPtr id() {
  static const auto p = std::make_shared<Policy>(
      Policy{Policy::Kind::kId, nullptr, {}, {}, nullptr, nullptr});
  return p;
}
inline PolicyPtr filter(PredPtr pred) {
  return std::make_shared<Policy>(Policy{
      Policy::Kind::kFilter, std::move(pred), {}, {}, nullptr, nullptr});
}
inline PolicyPtr modify(Field f, FieldValue v) {
  return std::make_shared<Policy>(Policy{
      Policy::Kind::kModify, nullptr, f, std::move(v), nullptr, nullptr});
}
inline PolicyPtr modify(Field f, const char* v) {
  return modify(f, FieldValue(std::string(v)));
}
inline PolicyPtr modify(Field f, int64_t v) { return modify(f, FieldValue(v)); }
inline PolicyPtr punion(PolicyPtr a, PolicyPtr b) {
  return std::make_shared<Policy>(Policy{
      Policy::Kind::kUnion, nullptr, {}, {}, std::move(a), std::move(b)});
}
inline PolicyPtr pseq(PolicyPtr a, PolicyPtr b) {
  return std::make_shared<Policy>(Policy{
      Policy::Kind::kSeq, nullptr, {}, {}, std::move(a), std::move(b)});
}

// n-ary conveniences; empty union is drop, empty sequence is id.
inline PolicyPtr union_all(const std::vector<PolicyPtr>& ps) {
  if (ps.empty()) return drop();
  PolicyPtr acc = ps[0];
  for (size_t i = 1; i < ps.size(); ++i) acc = punion(acc, ps[i]);
  return acc;
}
inline PolicyPtr seq_all(const std::vector<PolicyPtr>& ps) {
  if (ps.empty()) return id();
  PolicyPtr acc = ps[0];
  for (size_t i = 1; i < ps.size(); ++i) acc = pseq(acc, ps[i]);
  return acc;
}

// Packet-set semantics. Total: every packet and policy evaluates.
inline std::set<Packet> eval(const PolicyPtr& p, const Packet& pkt) {
  switch (p->kind) {
    case Policy::Kind::kDrop: return {};
    case Policy::Kind::kId: return {pkt};
    case Policy::Kind::kFilter:
      return eval_pred(p->pred, pkt) ? std::set<Packet>{pkt}
                                     : std::set<Packet>{};
    case Policy::Kind::kModify: {
      Packet out = pkt;
      out.set(p->field, p->value);
      return {out};
    }
    case Policy::Kind::kUnion: {
      std::set<Packet> out = eval(p->lhs, pkt);
      std::set<Packet> r = eval(p->rhs, pkt);
      out.insert(r.begin(), r.end());
      return out;
    }
    case Policy::Kind::kSeq: {
      std::set<Packet> out;
      for (const Packet& mid : eval(p->lhs, pkt)) {
        std::set<Packet> r = eval(p->rhs, mid);
        out.insert(r.begin(), r.end());
      }
      return out;
    }
  }
  return {};
}

// ---------------------------------------------------------------------------
// Debug format: s-expressions, e.g.
//   (seq (filter (= dst_ip 10.0.0.2)) (mod port 2))

inline std::string to_sexpr(const PredPtr& p) {
  switch (p->kind) {
    case Predicate::Kind::kTrue: return "true";
    case Predicate::Kind::kFalse: return "false";
    case Predicate::Kind::kTest:
      return "(= " + std::string(field_name(p->field)) + " " +
             value_to_string(p->value) + ")";
    case Predicate::Kind::kAnd:
      return "(and " + to_sexpr(p->lhs) + " " + to_sexpr(p->rhs) + ")";
    case Predicate::Kind::kOr:
      return "(or " + to_sexpr(p->lhs) + " " + to_sexpr(p->rhs) + ")";
    case Predicate::Kind::kNot: return "(not " + to_sexpr(p->lhs) + ")";
  }
  return "?";
}

inline std::string to_sexpr(const PolicyPtr& p) {
  switch (p->kind) {
    case Policy::Kind::kDrop: return "drop";
    case Policy::Kind::kId: return "id";
    case Policy::Kind::kFilter: return "(filter " + to_sexpr(p->pred) + ")";
    case Policy::Kind::kModify:
      return "(mod " + std::string(field_name(p->field)) + " " +
             value_to_string(p->value) + ")";
    case Policy::Kind::kUnion:
      return "(union " + to_sexpr(p->lhs) + " " + to_sexpr(p->rhs) + ")";
    case Policy::Kind::kSeq:
      return "(seq " + to_sexpr(p->lhs) + " " + to_sexpr(p->rhs) + ")";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// Composition of per-app policies into one network-wide policy.
//
// Apps declare a policy class: `filtering` policies gate traffic and are
// sequenced in front of `forwarding` policies; peers within one class are
// unioned. Deterministic: inputs are taken in app-id order.

enum class PolicyClass { kFiltering, kForwarding };

struct AppPolicy {
  std::string app_id;
  PolicyClass policy_class;
  PolicyPtr policy;
};

// `apps` must be sorted by app_id (callers keep slots in a std::map).
inline PolicyPtr compose_app_policies(const std::vector<AppPolicy>& apps) {
  std::vector<PolicyPtr> filtering, forwarding;
  for (const auto& a : apps) {
    (a.policy_class == PolicyClass::kFiltering ? filtering : forwarding)
        .push_back(a.policy);
  }
  if (filtering.empty() && forwarding.empty()) return drop();
  if (filtering.empty()) return union_all(forwarding);
  if (forwarding.empty()) return union_all(filtering);
  return pseq(union_all(filtering), union_all(forwarding));
}

}  // namespace morpheus::net
