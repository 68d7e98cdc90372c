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

// Concrete packet headers as seen by policies and flow tables. A packet is
// a full assignment to a fixed set of header fields; there are no
// wildcards at this layer (partial matches live in flow-table rules).

#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <tuple>
#include <variant>

#include "morpheus/errors.hpp"

namespace morpheus::net {

// Header fields, in the canonical order used for rule matches and
// decision-tree tests.
enum class Field : uint8_t {
  kSwitch = 0,
  kPort = 1,
  kSrcIp = 2,
  kDstIp = 3,
  kSrcPort = 4,
  kDstPort = 5,
  kProto = 6,
};

constexpr const char* field_name(Field f) {
  switch (f) {
    case Field::kSwitch: return "switch";
    case Field::kPort: return "port";
    case Field::kSrcIp: return "src_ip";
    case Field::kDstIp: return "dst_ip";
    case Field::kSrcPort: return "src_port";
    case Field::kDstPort: return "dst_port";
    case Field::kProto: return "proto";
  }
  return "?";
}

inline Field field_from_name(const std::string& name) {
  for (Field f : {Field::kSwitch, Field::kPort, Field::kSrcIp, Field::kDstIp,
                  Field::kSrcPort, Field::kDstPort, Field::kProto})
    if (name == field_name(f)) return f;
  throw MorpheusError("unknown header field: " + name);
}

// A field value: integral for ports, string for ids, addresses, and the
// protocol tag ("tcp" | "udp" | "other").
using FieldValue = std::variant<int64_t, std::string>;

inline std::string value_to_string(const FieldValue& v) {
  if (std::holds_alternative<int64_t>(v))
    return std::to_string(std::get<int64_t>(v));
  return std::get<std::string>(v);
}

enum class Proto : uint8_t { kTcp, kUdp, kOther };

inline const char* proto_name(Proto p) {
  switch (p) {
    case Proto::kTcp: return "tcp";
    case Proto::kUdp: return "udp";
    case Proto::kOther: return "other";
  }
  return "?";
}

inline Proto proto_from_name(const std::string& s) {
  if (s == "tcp") return Proto::kTcp;
  if (s == "udp") return Proto::kUdp;
  if (s == "other") return Proto::kOther;
  throw MorpheusError("unknown proto: " + s);
}

struct Packet {
  std::string sw;        // switch the packet is at
  int64_t port = 0;      // port at that switch
  std::string src_ip;
  std::string dst_ip;
  int64_t src_port = 0;
  int64_t dst_port = 0;
  Proto proto = Proto::kTcp;

  FieldValue get(Field f) const {
    switch (f) {
      case Field::kSwitch: return sw;
      case Field::kPort: return port;
      case Field::kSrcIp: return src_ip;
      case Field::kDstIp: return dst_ip;
      case Field::kSrcPort: return src_port;
      case Field::kDstPort: return dst_port;
      case Field::kProto: return std::string(proto_name(proto));
    }
    throw MorpheusError("bad field");
  }

  void set(Field f, const FieldValue& v) {
    switch (f) {
      case Field::kSwitch: sw = std::get<std::string>(v); return;
      case Field::kPort: port = std::get<int64_t>(v); return;
      case Field::kSrcIp: src_ip = std::get<std::string>(v); return;
      case Field::kDstIp: dst_ip = std::get<std::string>(v); return;
      case Field::kSrcPort: src_port = std::get<int64_t>(v); return;
      case Field::kDstPort: dst_port = std::get<int64_t>(v); return;
      case Field::kProto: proto = proto_from_name(std::get<std::string>(v));
        return;
    }
  }

  auto tie() const {
    return std::tie(sw, port, src_ip, dst_ip, src_port, dst_port, proto);
  }
  friend bool operator==(const Packet& a, const Packet& b) {
    return a.tie() == b.tie();
  }
  friend bool operator<(const Packet& a, const Packet& b) {
    return a.tie() < b.tie();
  }
};

inline std::ostream& operator<<(std::ostream& os, const Packet& p) {
  return os << "{" << p.sw << ":" << p.port << " " << p.src_ip << ":"
            << p.src_port << "->" << p.dst_ip << ":" << p.dst_port << " "
            << proto_name(p.proto) << "}";
}

}  // namespace morpheus::net
