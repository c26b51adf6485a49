#include <algorithm>
#include <cmath>

#include "neon/nn.hpp"
#include "neon/quota.hpp"

namespace neon {

void QuotaWeights::validate() const {
  for (double v : {model, prerank, supply, order})
    if (!(v >= 0.0) || !std::isfinite(v))
      throw ValidationError("quota weights must be finite and non-negative");
  if (std::abs(model + prerank + supply + order - 1.0) > 1e-9)
    throw ValidationError("quota weights must sum to 1");
}

QuotaWeights control_weights(const QuotaWeights& w) {
  const double rest = w.prerank + w.supply + w.order;
  if (!(rest > 0.0)) throw ValidationError("control quotas need a positive non-model weight");
  return QuotaWeights{0.0, w.prerank / rest, w.supply / rest, w.order / rest};
}

json quota_weights_to_json(const QuotaWeights& w) {
  return json{{"model", w.model}, {"prerank", w.prerank}, {"supply", w.supply}, {"order", w.order}};
}

QuotaWeights quota_weights_from_json(const json& j) {
  if (!j.is_object()) throw ValidationError("quota weights must be a JSON object");
  QuotaWeights w;
  for (const auto& [key, value] : j.items()) {
    if (!value.is_number()) throw ValidationError("quota weight '" + key + "' must be a number");
    const double v = value.get<double>();
    if (key == "model") w.model = v;
    else if (key == "prerank") w.prerank = v;
    else if (key == "supply") w.supply = v;
    else if (key == "order") w.order = v;
    else throw ValidationError("unknown quota weight '" + key + "'");
  }
  w.validate();
  return w;
}

Simplex uniform_simplex() {
  Simplex s;
  s.fill(1.0 / static_cast<double>(kNeedCount));
  return s;
}

Simplex floor_and_renormalize(const Simplex& q, double floor) {
  if (!is_simplex(q)) throw ValidationError("quota vector is not a simplex");
  if (!(floor >= 0.0) || floor * static_cast<double>(kNeedCount) > 1.0)
    throw ValidationError("quota floor must lie in [0, 1/10]");
  std::array<bool, kNeedCount> pinned{};
  Simplex out = q;
  for (;;) {
    double free_mass = 0.0;
    std::size_t n_pinned = 0;
    for (std::size_t i = 0; i < kNeedCount; ++i) {
      if (pinned[i]) ++n_pinned;
      else free_mass += q[i];
    }
    const double budget = 1.0 - floor * static_cast<double>(n_pinned);
    bool changed = false;
    for (std::size_t i = 0; i < kNeedCount; ++i) {
      if (pinned[i]) {
        out[i] = floor;
        continue;
      }
      out[i] = free_mass > 0.0 ? q[i] * budget / free_mass
                               : budget / static_cast<double>(kNeedCount - n_pinned);
      if (out[i] < floor) {
        pinned[i] = true;
        changed = true;
      }
    }
    if (!changed) return out;
  }
}

Simplex homepage_quotas(const QuotaInputs& in, double floor) {
  in.weights.validate();
  if (!is_simplex(in.prerank)) throw ValidationError("pre-ranking proportions are not a simplex");
  if (!is_simplex(in.supply)) throw ValidationError("supply distribution is not a simplex");
  if (!is_simplex(in.order)) throw ValidationError("order distribution is not a simplex");
  nn::VectorXd scores(static_cast<Eigen::Index>(kNeedCount));
  for (std::size_t i = 0; i < kNeedCount; ++i) {
    if (!std::isfinite(in.need_scores[i])) throw ValidationError("need scores must be finite");
    scores(static_cast<Eigen::Index>(i)) = in.need_scores[i];
  }
  const nn::VectorXd p = nn::softmax(scores);
  const QuotaWeights& w = in.weights;
  Simplex q{};
  for (std::size_t i = 0; i < kNeedCount; ++i)
    q[i] = w.model * p(static_cast<Eigen::Index>(i)) + w.prerank * in.prerank[i] +
           w.supply * in.supply[i] + w.order * in.order[i];
  return floor_and_renormalize(q, floor);
}

Simplex guess_you_like_quotas(const Simplex& homepage, std::span<const double> way_probs,
                              double boost) {
  if (!std::isfinite(boost) || boost < 0.0)
    throw ValidationError("guess-you-like boost must be finite and >= 0");
  if (way_probs.size() != kWayCount) throw ValidationError("way probabilities need 2 entries");
  if (!is_simplex(homepage)) throw ValidationError("homepage quotas are not a simplex");
  Simplex q{};
  double total = 0.0;
  for (std::size_t i = 0; i < kNeedCount; ++i) {
    const double w = way_probs[static_cast<std::size_t>(code(need_to_way(static_cast<int>(i))))];
    q[i] = homepage[i] * std::max(0.0, 1.0 + boost * (w - 0.5) * 2.0);
    total += q[i];
  }
  if (!(total > 0.0)) throw ValidationError("guess-you-like adjustment removed all quota mass");
  for (double& v : q) v /= total;
  return q;
}

NeedCategory popup_category(std::span<const double> need_scores) {
  if (need_scores.size() != kNeedCount) throw ValidationError("need scores need 10 entries");
  std::size_t best = 0;
  for (std::size_t i = 0; i < kNeedCount; ++i) {
    if (!std::isfinite(need_scores[i])) throw ValidationError("need scores must be finite");
    if (need_scores[i] > need_scores[best]) best = i;
  }
  return need_from_code(static_cast<int>(best));
}

QuotaInputs default_quota_inputs(const UserProfile& profile, const GroupFeatureTables& tables,
                                 const std::array<double, kNeedCount>& need_scores,
                                 const QuotaWeights& weights) {
  QuotaInputs in;
  in.need_scores = need_scores;
  const auto keys = group_keys(profile, tables.config);
  auto it = tables.group_aggregated.find(keys.front());
  in.prerank = it != tables.group_aggregated.end() ? it->second : tables.global();
  in.supply = uniform_simplex();
  in.order = tables.global();
  in.weights = weights;
  return in;
}

}  // namespace neon
