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

// Cooperative single-threaded runtime: tasks, timers, and a simulated
// clock. Every component (apps, coordinator, scenario driver) runs as a
// task whose poll function is called until it reports itself idle; wakes
// come from message deliveries and timers. The scheduler picks the next
// runnable task with a seeded RNG, so concurrency bugs can be hunted by
// sweeping seeds while every individual run stays reproducible. A step
// hook observes the system between polls, which is what the update
// protocol's interleaving tests use to snapshot switch tables.

#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <queue>
#include <random>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "morpheus/clock.hpp"
#include "morpheus/errors.hpp"

namespace morpheus {

// What a task's poll reports back to the scheduler.
enum class Poll {
  kAgain,  // made progress, wants another poll soon
  kIdle,   // nothing to do until woken
  kDone,   // finished; never polled again
};

class Runtime;

class Task {
 public:
  Task(std::string name, std::function<Poll()> fn)
      : name_(std::move(name)), fn_(std::move(fn)) {}

  const std::string& name() const { return name_; }
  bool done() const { return done_; }

  // Mark runnable. Safe to call at any time, including on done tasks.
  void wake() { runnable_ = true; }

  // Forcibly retire the task (it simply never runs again).
  void kill() { done_ = true; }

 private:
  friend class Runtime;
  std::string name_;
  std::function<Poll()> fn_;
  bool runnable_ = true;
  bool done_ = false;
};

using TaskPtr = std::shared_ptr<Task>;

class Runtime {
 public:
  explicit Runtime(uint64_t seed = 1, double start_time = 0.0)
      : clock_(std::make_shared<ManualClock>(start_time)), rng_(seed) {}

  const std::shared_ptr<ManualClock>& clock() { return clock_; }
  double now() const { return clock_->now(); }

  TaskPtr spawn(std::string name, std::function<Poll()> fn) {
    auto t = std::make_shared<Task>(std::move(name), std::move(fn));
    tasks_.push_back(t);
    return t;
  }

  using TimerId = uint64_t;

  TimerId schedule_at(double when, std::function<void()> fn) {
    TimerId tid = next_timer_++;
    timers_.push(Timer{when, tid, std::move(fn)});
    return tid;
  }

  void cancel_timer(TimerId tid) { cancelled_.insert(tid); }

  // Observes the system after every task poll.
  void set_on_step(std::function<void()> hook) { on_step_ = std::move(hook); }

  // Polls one randomly chosen runnable task. Returns false if none is
  // runnable at the current instant.
  bool step() {
    std::vector<size_t> runnable;
    for (size_t i = 0; i < tasks_.size(); ++i)
      if (!tasks_[i]->done_ && tasks_[i]->runnable_) runnable.push_back(i);
    if (runnable.empty()) {
      reap();
      return false;
    }
    TaskPtr t = tasks_[runnable[rng_() % runnable.size()]];
    t->runnable_ = false;
    Poll r = t->fn_();
    // A wake() during the poll sticks regardless of the poll's verdict.
    if (r == Poll::kAgain) t->runnable_ = true;
    if (r == Poll::kDone) t->done_ = true;
    if (on_step_) on_step_();
    return true;
  }

  // Runs tasks until none is runnable. The clock does not move.
  void run_until_idle() {
    size_t steps = 0;
    while (step())
      if (++steps > kStepBudget)
        throw MorpheusError("runtime: task livelock (step budget exhausted)");
  }

  // Runs tasks and timers until `t_end`. The clock lands exactly on
  // `t_end` unless a timer callback pushed it further.
  void run_until(double t_end) {
    for (;;) {
      run_until_idle();
      auto timer = pop_due_timer(t_end);
      if (!timer) break;
      if (timer->when > clock_->now()) clock_->set(timer->when);
      timer->fn();
    }
    if (clock_->now() < t_end) clock_->set(t_end);
    run_until_idle();
  }

  std::mt19937_64& rng() { return rng_; }

  // Live (not done) task count; used by tests to observe app lifecycles.
  size_t live_tasks() const {
    size_t n = 0;
    for (const auto& t : tasks_)
      if (!t->done_) ++n;
    return n;
  }

 private:
  struct Timer {
    double when;
    TimerId id;
    std::function<void()> fn;
    bool operator>(const Timer& o) const {
      return when > o.when || (when == o.when && id > o.id);
    }
  };

  std::optional<Timer> pop_due_timer(double t_end) {
    while (!timers_.empty()) {
      if (timers_.top().when > t_end) return std::nullopt;
      Timer t = timers_.top();
      timers_.pop();
      if (cancelled_.erase(t.id)) continue;
      return t;
    }
    return std::nullopt;
  }

  void reap() {
    std::erase_if(tasks_, [](const TaskPtr& t) { return t->done_; });
  }

  static constexpr size_t kStepBudget = 50'000'000;

  std::shared_ptr<ManualClock> clock_;
  std::mt19937_64 rng_;
  std::vector<TaskPtr> tasks_;
  std::priority_queue<Timer, std::vector<Timer>, std::greater<>> timers_;
  std::set<TimerId> cancelled_;
  TimerId next_timer_ = 1;
  std::function<void()> on_step_;
};

// A single-consumer message queue that wakes its owning task on delivery.
template <typename T>
class Inbox {
 public:
  void attach(TaskPtr owner) { owner_ = std::move(owner); }

  void push(T v) {
    q_.push_back(std::move(v));
    if (owner_) owner_->wake();
  }

  std::optional<T> pop() {
    if (q_.empty()) return std::nullopt;
    T v = std::move(q_.front());
    q_.pop_front();
    return v;
  }

  bool empty() const { return q_.empty(); }
  size_t size() const { return q_.size(); }
  void clear() { q_.clear(); }

 private:
  std::deque<T> q_;
  TaskPtr owner_;
};

}  // namespace morpheus
