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

#include <stdexcept>
#include <string>

namespace morpheus {

struct MorpheusError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DocumentParseError : MorpheusError {
  using MorpheusError::MorpheusError;
};

struct IoError : MorpheusError {
  using MorpheusError::MorpheusError;
};

// ---- store errors ----

struct UnknownNamespace : MorpheusError {
  std::string ns;
  explicit UnknownNamespace(std::string n)
      : MorpheusError("unknown namespace: " + n), ns(std::move(n)) {}
};

struct VersionMismatch : MorpheusError {
  std::string ns, expected, actual;
  VersionMismatch(std::string n, std::string e, std::string a)
      : MorpheusError("version mismatch on " + n + ": expected " + e +
                      ", actual " + a),
        ns(std::move(n)), expected(std::move(e)), actual(std::move(a)) {}
};

struct ChainMismatch : MorpheusError {
  std::string ns, from, current;
  ChainMismatch(std::string n, std::string f, std::string c)
      : MorpheusError("transformer chain mismatch on " + n + ": rule is from " +
                      f + " but namespace is at " + c),
        ns(std::move(n)), from(std::move(f)), current(std::move(c)) {}
};

// Raised when a session uses a namespace it did not list at connect time.
struct SessionNotHolding : MorpheusError {
  explicit SessionNotHolding(const std::string& ns)
      : MorpheusError("session does not hold namespace: " + ns) {}
};

// ---- transformer errors ----

struct SyntaxError : MorpheusError {
  int line, col;
  SyntaxError(int l, int c, const std::string& msg)
      : MorpheusError("syntax error at " + std::to_string(l) + ":" +
                      std::to_string(c) + ": " + msg),
        line(l), col(c) {}
};

struct DuplicateRule : MorpheusError {
  using MorpheusError::MorpheusError;
};

struct ValidationError : MorpheusError {
  using MorpheusError::MorpheusError;
};

struct TransformFailure : MorpheusError {
  std::string key, from, to;
  explicit TransformFailure(const std::string& msg)
      : MorpheusError("transform failure: " + msg) {}
  TransformFailure(const std::string& msg, std::string k, std::string f,
                   std::string t)
      : MorpheusError("transform failure on key '" + k + "' (" + f + " -> " +
                      t + "): " + msg),
        key(std::move(k)), from(std::move(f)), to(std::move(t)) {}
};

// ---- policy / table errors ----

struct UnsupportedConstruct : MorpheusError {
  using MorpheusError::MorpheusError;
};

// ---- platform / network errors ----

struct UnknownSwitch : MorpheusError {
  explicit UnknownSwitch(const std::string& sw)
      : MorpheusError("unknown or down switch: " + sw) {}
};

struct Disconnected : MorpheusError {
  using MorpheusError::MorpheusError;
};

struct UpdateInProgress : MorpheusError {
  UpdateInProgress() : MorpheusError("an update is already in progress") {}
  explicit UpdateInProgress(const std::string& what) : MorpheusError(what) {}
};

struct TopologyError : MorpheusError {
  using MorpheusError::MorpheusError;
};

}  // namespace morpheus
