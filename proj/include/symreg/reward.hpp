#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

namespace symreg {

struct RewardConfig {
  double s_max = 1.0;     // 100% MAPE: zero reward at or beyond
  double s_goal = 0.001;  // 0.1% MAPE: full reward at or below

  void validate() const {
    if (!(0 < s_goal && s_goal < s_max))
      throw std::invalid_argument("need 0 < s_goal < s_max");
  }
};

/// clip((lg s_max - lg s) / (lg s_max - lg s_goal), 0, 1); s = 0 maps to 1
/// by continuity.
inline double log_linear_reward(double s, const RewardConfig& cfg = {}) {
  cfg.validate();
  if (s < 0) throw std::invalid_argument("score must be nonnegative");
  if (s == 0) return 1.0;
  const double value =
      (std::log10(cfg.s_max) - std::log10(s)) / (std::log10(cfg.s_max) - std::log10(cfg.s_goal));
  return std::clamp(value, 0.0, 1.0);
}

/// Fixed plateau reward over MAPE; boundaries half-open as written.
inline double stepwise_reward(double s) {
  if (s < 0) throw std::invalid_argument("score must be nonnegative");
  if (s < 0.001) return 1.0;
  if (s < 0.01) return 0.5;
  if (s < 0.1) return 0.25;
  if (s < 1.0) return 0.1;
  return 0.0;
}

/// A rollout is rewarded by its best explored equation; nothing scored
/// means zero reward.
inline double rollout_reward(std::span<const std::optional<double>> explored_scores,
                             const RewardConfig& cfg = {}, bool stepwise = false) {
  std::optional<double> best;
  for (const auto& s : explored_scores)
    if (s && (!best || *s < *best)) best = *s;
  if (!best) return 0.0;
  return stepwise ? stepwise_reward(*best) : log_linear_reward(*best, cfg);
}

/// Group-relative advantages: (r - mean) / (std + 1e-6) with the population
/// std; a zero-variance group gets all-zero advantages.
inline std::vector<double> group_advantages(std::span<const double> rewards) {
  if (rewards.empty()) return {};
  bool all_equal = true;
  for (double r : rewards) all_equal = all_equal && r == rewards[0];
  if (all_equal) return std::vector<double>(rewards.size(), 0.0);
  double mean = 0.0;
  for (double r : rewards) mean += r;
  mean /= static_cast<double>(rewards.size());
  double var = 0.0;
  for (double r : rewards) var += (r - mean) * (r - mean);
  var /= static_cast<double>(rewards.size());
  const double denom = std::sqrt(var) + 1e-6;
  std::vector<double> out;
  out.reserve(rewards.size());
  for (double r : rewards) out.push_back((r - mean) / denom);
  return out;
}

}  // namespace symreg
