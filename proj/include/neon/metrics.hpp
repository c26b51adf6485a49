#pragma once

// Ranking metrics (sort accuracy over all, via-delivery and in-store ground
// truths), order distributions and their divergence from quota allocations.

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "neon/quota.hpp"
#include "neon/training.hpp"

namespace neon {

inline constexpr int kMaxRankingError = static_cast<int>(kNeedCount) - 1;

/// Zero-based position of `truth` in `ranking`. Throws ValidationError when
/// `ranking` is not a permutation of all needs.
int relative_ranking_error(std::span<const NeedCategory> ranking, NeedCategory truth);

/// 1 - rre / 9.
double ranking_score(int rre);

/// Per-sample ranking scores for rows of need scores under the model's tie rule.
std::vector<double> ranking_scores(const MatrixXd& need_scores, std::span<const int> need_labels);

enum class WayFilter { kAll, kViaDelivery, kInStore };

std::string_view to_string(WayFilter f);

/// Mean ranking score over the samples whose ground-truth way passes the
/// filter. Throws ValidationError when nothing passes.
double sort_accuracy(const MatrixXd& need_scores, std::span<const int> need_labels,
                     WayFilter filter = WayFilter::kAll);

/// Inference-mode need scores for every scene, computed in fixed-size chunks.
MatrixXd predict_need_scores(const NeonModel& model, const std::vector<EncodedScene>& scenes);

double sort_accuracy(const NeonModel& model, const EncodedDataset& data,
                     WayFilter filter = WayFilter::kAll);

struct NeedBreakdown {
  std::size_t count = 0;
  double mean_score = 0.0;
};

struct EvalReport {
  std::string label = "model";
  double sa = 0.0;
  std::optional<double> vdsa;  // absent when no via-delivery samples
  std::optional<double> issa;
  std::size_t count = 0;
  std::size_t count_via_delivery = 0;
  std::size_t count_in_store = 0;
  std::array<NeedBreakdown, kNeedCount> per_need{};
  std::optional<double> oracle_sa;
};

EvalReport evaluate_scores(const MatrixXd& need_scores, std::span<const int> need_labels,
                           std::string label = "model");
EvalReport evaluate(const NeonModel& model, const EncodedDataset& data,
                    std::string label = "model");

json report_to_json(const EvalReport& r);
/// Aligned plain-text table with VDSA, ISSA and SA columns, one row per report.
std::string report_table(const std::vector<EvalReport>& reports);

/// Natural-log KL divergence sum p ln(p / q), q smoothed by 1e-9 then
/// renormalized. Throws ValidationError on non-simplex input.
double kld(const Simplex& p, const Simplex& q);

/// Empirical need frequencies, optionally restricted to one time period.
Simplex order_distribution(const std::vector<PurchaseRecord>& records,
                           std::optional<int> time_period = std::nullopt);

/// Need frequencies of labeled scenes, optionally restricted to one period.
Simplex label_distribution(const std::vector<LabeledScene>& scenes,
                           std::optional<int> time_period = std::nullopt);

/// Per-period divergence between the observed need distribution and the mean
/// homepage quota, with the model term and without it (control weights).
struct PeriodQuotaKld {
  int time_period = 0;
  std::size_t count = 0;
  double with_model = 0.0;
  double control = 0.0;
  /// (with_model - control) / control; negative means the model helps.
  double relative_change() const { return (with_model - control) / control; }
};

/// Periods without scenes are skipped. Quotas use default_quota_inputs.
std::vector<PeriodQuotaKld> quota_kld_by_period(const MatrixXd& need_scores,
                                                const std::vector<LabeledScene>& scenes,
                                                const GroupFeatureTables& tables,
                                                const QuotaWeights& weights = {},
                                                double floor = kDefaultQuotaFloor);

json quota_kld_to_json(const std::vector<PeriodQuotaKld>& rows);
std::string quota_kld_table(const std::vector<PeriodQuotaKld>& rows);

}  // namespace neon
