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

#pragma once

#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "morpheus/errors.hpp"

namespace morpheus {

// A Document is a JSON tree. nlohmann::json with the default (std::map)
// object backend keeps object keys in lexicographic order, which gives us
// canonical serialization for free: serialize() of equal documents is
// byte-identical, and dump files round-trip exactly. Integers and floats
// are distinct value kinds and survive a parse/serialize cycle unchanged.
using Document = nlohmann::json;

inline Document parse_document(std::string_view text) {
  try {
    return Document::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw DocumentParseError(e.what());
  }
}

inline std::string serialize(const Document& doc) { return doc.dump(); }

// Strict structural equality: same value kinds, not just same numeric value.
// operator== on Document treats 1 and 1.0 as equal; golden tests care about
// the difference.
inline bool documents_identical(const Document& a, const Document& b) {
  if (a.type() != b.type()) {
    // Treat the two integer flavours (signed/unsigned) as one kind.
    bool both_int = (a.is_number_integer() && b.is_number_integer());
    if (!both_int) return false;
  }
  if (a.is_object()) {
    if (a.size() != b.size()) return false;
    for (auto it = a.begin(); it != a.end(); ++it) {
      if (!b.contains(it.key())) return false;
      if (!documents_identical(it.value(), b.at(it.key()))) return false;
    }
    return true;
  }
  if (a.is_array()) {
    if (a.size() != b.size()) return false;
    for (size_t i = 0; i < a.size(); ++i)
      if (!documents_identical(a[i], b[i])) return false;
    return true;
  }
  return a == b;
}

}  // namespace morpheus
