#pragma once

#include <atomic>
#include <mutex>
#include <set>
#include <string>
#include <string_view>

// Records which public operations ran while recording is on.
namespace markov_mimic::trace {

struct Registry {
  std::atomic<bool> enabled{false};
  std::mutex mu;
  std::set<std::string, std::less<>> seen;
};

inline Registry& registry() {
  static Registry r;
  return r;
}

inline void note(std::string_view op) {
  auto& r = registry();
  if (!r.enabled.load(std::memory_order_relaxed)) return;
  std::lock_guard lock(r.mu);
  if (r.seen.find(op) == r.seen.end()) r.seen.emplace(op);
}

inline void start() {
  auto& r = registry();
  std::lock_guard lock(r.mu);
  r.seen.clear();
  r.enabled = true;
}

inline std::set<std::string, std::less<>> stop() {
  auto& r = registry();
  std::lock_guard lock(r.mu);
  r.enabled = false;
  return r.seen;
}

}  // namespace markov_mimic::trace
