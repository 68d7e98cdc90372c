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

#include "morpheus/document.hpp"

using namespace morpheus;

TEST_CASE("object keys serialize in lexicographic order") {
  Document d = parse_document(R"({"zeta": 1, "alpha": 2, "mid": 3})");
  CHECK(serialize(d) == R"({"alpha":2,"mid":3,"zeta":1})");
}

TEST_CASE("serialization round-trips losslessly") {
  const std::string cases[] = {
      R"({"a":1,"b":2.5,"c":"x","d":[1,2,3],"e":{"f":null},"g":true})",
      R"(1426167581.566535)",
      R"({"weight":1})",
      R"([0.1,0.2,0.30000000000000004])",
  };
  for (const auto& text : cases) {
    Document d = parse_document(text);
    Document d2 = parse_document(serialize(d));
    CHECK(serialize(d) == serialize(d2));
    CHECK(documents_identical(d, d2));
  }
}

TEST_CASE("float values keep full precision through dump/parse") {
  Document d = Document(1426167581.566535);
  CHECK(serialize(d) == "1426167581.566535");
  CHECK(parse_document(serialize(d)).get<double>() == 1426167581.566535);
}

TEST_CASE("documents_identical distinguishes integer from float") {
  Document i = parse_document("0");
  Document f = parse_document("0.0");
  CHECK(i == f);  // numeric equality
  CHECK_FALSE(documents_identical(i, f));
  CHECK(documents_identical(i, parse_document("0")));
  CHECK(documents_identical(f, parse_document("0.0")));
}

TEST_CASE("documents_identical compares structurally") {
  Document a = parse_document(R"({"x": {"y": [1, 2]}})");
  Document b = parse_document(R"({"x": {"y": [1, 2]}})");
  Document c = parse_document(R"({"x": {"y": [1, 2.0]}})");
  CHECK(documents_identical(a, b));
  CHECK_FALSE(documents_identical(a, c));
}

TEST_CASE("malformed input raises DocumentParseError") {
  CHECK_THROWS_AS(parse_document("{nope"), DocumentParseError);
  CHECK_THROWS_AS(parse_document(""), DocumentParseError);
}
