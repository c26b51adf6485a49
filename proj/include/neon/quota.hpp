#pragma once

// Category quota allocation: homepage quotas mixing model probabilities with
// pre-ranking, supply and order distributions, the way-score adjustment used
// by the guess-you-like list, and pop-up category choice.

#include <array>
#include <span>

#include "neon/features.hpp"

namespace neon {

inline constexpr double kDefaultQuotaFloor = 0.005;

struct QuotaWeights {
  double model = 0.5;
  double prerank = 0.2;
  double supply = 0.15;
  double order = 0.15;

  /// Throws ValidationError unless the weights are non-negative and sum to 1.
  void validate() const;
};

/// Weights without the model term, the rest rescaled to sum to 1.
QuotaWeights control_weights(const QuotaWeights& w);

json quota_weights_to_json(const QuotaWeights& w);
QuotaWeights quota_weights_from_json(const json& j);

struct QuotaInputs {
  std::array<double, kNeedCount> need_scores{};
  Simplex prerank{};
  Simplex supply{};
  Simplex order{};
  QuotaWeights weights;
};

/// Smallest change that lifts every entry to at least `floor`: entries below
/// it are pinned at the floor, the rest share the remaining mass pro rata.
Simplex floor_and_renormalize(const Simplex& q, double floor = kDefaultQuotaFloor);

/// Convex mix of softmax(need_scores) and the three distributions, then
/// floored. Throws ValidationError on invalid distributions or weights.
Simplex homepage_quotas(const QuotaInputs& inputs, double floor = kDefaultQuotaFloor);

/// Scales each need's quota by max(0, 1 + 2 * boost * (way_probs[way] - 0.5))
/// and renormalizes.
Simplex guess_you_like_quotas(const Simplex& homepage, std::span<const double> way_probs,
                              double boost);

/// Highest-scoring need; ties go to the lowest category code.
NeedCategory popup_category(std::span<const double> need_scores);

Simplex uniform_simplex();

/// Serving defaults: the user's segment share as the pre-ranking list (global
/// share when the segment is unseen), uniform supply, global order share.
QuotaInputs default_quota_inputs(const UserProfile& profile, const GroupFeatureTables& tables,
                                 const std::array<double, kNeedCount>& need_scores,
                                 const QuotaWeights& weights = {});

}  // namespace neon
