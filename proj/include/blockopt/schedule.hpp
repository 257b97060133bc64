#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "blockopt/errors.hpp"
#include "blockopt/rng.hpp"

namespace blockopt {

enum class ScheduleRule { round_robin, shuffled_cyclic };

inline ScheduleRule parse_schedule_rule(const std::string& name) {
  if (name == "round_robin") return ScheduleRule::round_robin;
  if (name == "shuffled_cyclic") return ScheduleRule::shuffled_cyclic;
  throw ConfigError("unknown schedule rule: " + name);
}

/// Essentially cyclic block selection: every agent covers all B blocks in
/// any window of length T_i. Two rules:
///   round_robin     ((t + o_i) mod B, offsets o_i = i mod B), T_i = B
///   shuffled_cyclic (per-epoch random permutations), T_i <= 2B - 1
/// Selection at (agent, t) is a pure function of rule and seed.
class BlockSchedule {
 public:
  BlockSchedule(int block_count, ScheduleRule rule, std::uint64_t seed = 0)
      : block_count_(block_count), rule_(rule), seed_(seed) {
    if (block_count < 1)
      throw InvalidSchedule("BlockSchedule: block_count must be >= 1");
  }

  int block_count() const { return block_count_; }
  ScheduleRule rule() const { return rule_; }

  /// Per-agent window bound T_i of the essentially cyclic property.
  int period_bound() const {
    return rule_ == ScheduleRule::round_robin ? block_count_
                                              : 2 * block_count_ - 1;
  }

  /// Block selected by `agent` at round `t` (0-based block index).
  int select_block(int agent, long t) const {
    if (agent < 0 || t < 0)
      throw InvalidSchedule("select_block: agent and round must be >= 0");
    const int B = block_count_;
    if (rule_ == ScheduleRule::round_robin)
      return static_cast<int>((t + agent % B) % B);
    // shuffled_cyclic: the t-th element of a concatenation of independent
    // per-epoch permutations of {0..B-1}.
    const long epoch = t / B;
    std::vector<int> perm(B);
    std::iota(perm.begin(), perm.end(), 0);
    auto gen = rng::stream(seed_, "schedule.epoch",
                           (static_cast<std::uint64_t>(agent) << 32) ^
                               static_cast<std::uint64_t>(epoch));
    std::shuffle(perm.begin(), perm.end(), gen);
    return perm[static_cast<std::size_t>(t % B)];
  }

  /// One round of selections for all agents.
  std::vector<int> round_selections(int agent_count, long t) const {
    std::vector<int> sel(agent_count);
    for (int i = 0; i < agent_count; ++i) sel[i] = select_block(i, t);
    return sel;
  }

 private:
  int block_count_;
  ScheduleRule rule_;
  std::uint64_t seed_;
};

/// True iff every length-T_i window inside the prefix covers all B blocks.
inline bool verify_essentially_cyclic(const std::vector<int>& prefix,
                                      int period_bound, int block_count) {
  const int T = period_bound;
  if (static_cast<int>(prefix.size()) < T) return false;
  for (std::size_t start = 0; start + T <= prefix.size(); ++start) {
    std::vector<char> seen(block_count, 0);
    int covered = 0;
    for (int k = 0; k < T; ++k) {
      const int b = prefix[start + k];
      if (b >= 0 && b < block_count && !seen[b]) {
        seen[b] = 1;
        ++covered;
      }
    }
    if (covered != block_count) return false;
  }
  return true;
}

}  // namespace blockopt
