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

#include <chrono>
#include <cstdlib>
#include <memory>
#include <string>

namespace morpheus {

// All time sources are injected. Components never call the OS clock
// directly, so tests and simulations can pin or drive time.
struct Clock {
  virtual ~Clock() = default;
  // Seconds. Wall clocks return a unix timestamp; simulated clocks return
  // simulation time.
  virtual double now() const = 0;
};

class SystemClock final : public Clock {
 public:
  double now() const override {
    using namespace std::chrono;
    return duration<double>(system_clock::now().time_since_epoch()).count();
  }
};

class FixedClock final : public Clock {
 public:
  explicit FixedClock(double t) : t_(t) {}
  double now() const override { return t_; }

 private:
  double t_;
};

// Owner-advanced clock used by the discrete-event runtime.
class ManualClock final : public Clock {
 public:
  explicit ManualClock(double t = 0.0) : t_(t) {}
  double now() const override { return t_; }
  void set(double t) { t_ = t; }
  void advance(double dt) { t_ += dt; }

 private:
  double t_;
};

// Clock selection for command-line entry points. MORPHEUS_CLOCK=fixed:<t>
// pins the wall clock, which makes transformer output (time.time())
// reproducible.
inline std::shared_ptr<Clock> make_cli_clock() {
  const char* env = std::getenv("MORPHEUS_CLOCK");
  if (env != nullptr) {
    std::string v(env);
    const std::string prefix = "fixed:";
    if (v.rfind(prefix, 0) == 0) {
      return std::make_shared<FixedClock>(std::stod(v.substr(prefix.size())));
    }
  }
  return std::make_shared<SystemClock>();
}

}  // namespace morpheus
