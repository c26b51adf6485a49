#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "neon/metrics.hpp"

namespace neon {

int relative_ranking_error(std::span<const NeedCategory> ranking, NeedCategory truth) {
  if (ranking.size() != kNeedCount)
    throw ValidationError("ranking must list all " + std::to_string(kNeedCount) + " needs");
  std::array<bool, kNeedCount> seen{};
  int position = -1;
  for (std::size_t i = 0; i < ranking.size(); ++i) {
    const int c = code(ranking[i]);
    if (c < 0 || c >= static_cast<int>(kNeedCount) || seen[static_cast<std::size_t>(c)])
      throw ValidationError("ranking is not a permutation of the needs");
    seen[static_cast<std::size_t>(c)] = true;
    if (ranking[i] == truth) position = static_cast<int>(i);
  }
  if (position < 0) throw ValidationError("truth absent from ranking");
  return position;
}

double ranking_score(int rre) {
  return 1.0 - static_cast<double>(rre) / static_cast<double>(kMaxRankingError);
}

std::vector<double> ranking_scores(const MatrixXd& need_scores, std::span<const int> need_labels) {
  if (need_scores.cols() != static_cast<Eigen::Index>(kNeedCount) ||
      static_cast<std::size_t>(need_scores.rows()) != need_labels.size())
    throw nn::DimensionError("ranking_scores: scores " +
                             nn::shape_string(need_scores.rows(), need_scores.cols()) + " vs " +
                             std::to_string(need_labels.size()) + " labels");
  std::vector<double> out(need_labels.size());
  std::array<double, kNeedCount> row{};
  for (Eigen::Index i = 0; i < need_scores.rows(); ++i) {
    for (std::size_t j = 0; j < kNeedCount; ++j) row[j] = need_scores(i, static_cast<Eigen::Index>(j));
    const auto ranking = rank_needs(row);
    out[static_cast<std::size_t>(i)] = ranking_score(
        relative_ranking_error(ranking, need_from_code(need_labels[static_cast<std::size_t>(i)])));
  }
  return out;
}

std::string_view to_string(WayFilter f) {
  switch (f) {
    case WayFilter::kAll: return "all";
    case WayFilter::kViaDelivery: return "via_delivery";
    case WayFilter::kInStore: return "in_store";
  }
  return "all";
}

namespace {

bool passes(WayFilter f, int need_code) {
  if (f == WayFilter::kAll) return true;
  const NeedsMeetingWay way = need_to_way(need_code);
  return (f == WayFilter::kViaDelivery) == (way == NeedsMeetingWay::kViaDelivery);
}

}  // namespace

double sort_accuracy(const MatrixXd& need_scores, std::span<const int> need_labels,
                     WayFilter filter) {
  const std::vector<double> scores = ranking_scores(need_scores, need_labels);
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!passes(filter, need_labels[i])) continue;
    sum += scores[i];
    ++n;
  }
  if (n == 0)
    throw ValidationError("sort_accuracy: no samples for filter '" + std::string(to_string(filter)) +
                          "'");
  return sum / static_cast<double>(n);
}

MatrixXd predict_need_scores(const NeonModel& model, const std::vector<EncodedScene>& scenes) {
  constexpr std::size_t kChunk = 1024;
  MatrixXd out(static_cast<Eigen::Index>(scenes.size()), static_cast<Eigen::Index>(kNeedCount));
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < scenes.size(); start += kChunk) {
    const std::size_t end = std::min(scenes.size(), start + kChunk);
    idx.resize(end - start);
    for (std::size_t i = start; i < end; ++i) idx[i - start] = i;
    const BatchScores s = model.predict(make_batch(scenes, idx));
    out.middleRows(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(end - start)) =
        s.need_scores;
  }
  return out;
}

double sort_accuracy(const NeonModel& model, const EncodedDataset& data, WayFilter filter) {
  return sort_accuracy(predict_need_scores(model, data.scenes), data.need_labels, filter);
}

EvalReport evaluate_scores(const MatrixXd& need_scores, std::span<const int> need_labels,
                           std::string label) {
  const std::vector<double> scores = ranking_scores(need_scores, need_labels);
  if (scores.empty()) throw ValidationError("evaluate: empty evaluation set");
  EvalReport r;
  r.label = std::move(label);
  double sum = 0.0, sum_vd = 0.0, sum_is = 0.0;
  std::array<double, kNeedCount> need_sum{};
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const int c = need_labels[i];
    sum += scores[i];
    if (need_to_way(c) == NeedsMeetingWay::kViaDelivery) {
      sum_vd += scores[i];
      ++r.count_via_delivery;
    } else {
      sum_is += scores[i];
      ++r.count_in_store;
    }
    need_sum[static_cast<std::size_t>(c)] += scores[i];
    ++r.per_need[static_cast<std::size_t>(c)].count;
  }
  r.count = scores.size();
  r.sa = sum / static_cast<double>(r.count);
  if (r.count_via_delivery > 0) r.vdsa = sum_vd / static_cast<double>(r.count_via_delivery);
  if (r.count_in_store > 0) r.issa = sum_is / static_cast<double>(r.count_in_store);
  for (std::size_t k = 0; k < kNeedCount; ++k)
    if (r.per_need[k].count > 0)
      r.per_need[k].mean_score = need_sum[k] / static_cast<double>(r.per_need[k].count);
  return r;
}

EvalReport evaluate(const NeonModel& model, const EncodedDataset& data, std::string label) {
  return evaluate_scores(predict_need_scores(model, data.scenes), data.need_labels,
                         std::move(label));
}

json report_to_json(const EvalReport& r) {
  json per_need = json::object();
  for (NeedCategory n : all_needs()) {
    const auto& b = r.per_need[static_cast<std::size_t>(code(n))];
    per_need[std::string(to_string(n))] = {{"count", b.count}, {"mean_score", b.mean_score}};
  }
  json j{{"label", r.label},
         {"sa", r.sa},
         {"vdsa", r.vdsa ? json(*r.vdsa) : json(nullptr)},
         {"issa", r.issa ? json(*r.issa) : json(nullptr)},
         {"count", r.count},
         {"count_via_delivery", r.count_via_delivery},
         {"count_in_store", r.count_in_store},
         {"per_need", per_need}};
  if (r.oracle_sa) j["oracle_sa"] = *r.oracle_sa;
  return j;
}

std::string report_table(const std::vector<EvalReport>& reports) {
  std::size_t width = 5;
  for (const auto& r : reports) width = std::max(width, r.label.size());
  auto cell = [](const std::optional<double>& v) {
    char buf[16];
    if (v)
      std::snprintf(buf, sizeof buf, "%8.4f", *v);
    else
      std::snprintf(buf, sizeof buf, "%8s", "-");
    return std::string(buf);
  };
  std::ostringstream out;
  out << std::string(width - 5, ' ') << "Model" << "    VDSA" << "    ISSA" << "      SA"
      << "       N\n";
  for (const auto& r : reports) {
    out << std::string(width - r.label.size(), ' ') << r.label << cell(r.vdsa) << cell(r.issa)
        << cell(r.sa);
    char buf[16];
    std::snprintf(buf, sizeof buf, "%8zu", r.count);
    out << buf << '\n';
  }
  return out.str();
}

double kld(const Simplex& p, const Simplex& q) {
  if (!is_simplex(p)) throw ValidationError("kld: p is not a simplex");
  if (!is_simplex(q)) throw ValidationError("kld: q is not a simplex");
  constexpr double kSmoothing = 1e-9;
  double q_total = 0.0;
  for (double v : q) q_total += v + kSmoothing;
  double d = 0.0;
  for (std::size_t i = 0; i < kNeedCount; ++i) {
    if (p[i] == 0.0) continue;
    d += p[i] * std::log(p[i] / ((q[i] + kSmoothing) / q_total));
  }
  return std::max(d, 0.0);
}

Simplex order_distribution(const std::vector<PurchaseRecord>& records,
                           std::optional<int> time_period) {
  std::array<std::size_t, kNeedCount> counts{};
  std::size_t n = 0;
  for (const auto& r : records) {
    if (time_period && r.context.time_period != *time_period) continue;
    ++counts[static_cast<std::size_t>(code(r.need))];
    ++n;
  }
  if (n == 0) throw ValidationError("order_distribution: no records after filtering");
  Simplex s{};
  for (std::size_t i = 0; i < kNeedCount; ++i)
    s[i] = static_cast<double>(counts[i]) / static_cast<double>(n);
  return s;
}

Simplex label_distribution(const std::vector<LabeledScene>& scenes, std::optional<int> time_period) {
  std::array<std::size_t, kNeedCount> counts{};
  std::size_t n = 0;
  for (const auto& s : scenes) {
    if (time_period && s.scene.context.time_period != *time_period) continue;
    ++counts[static_cast<std::size_t>(code(s.need_label))];
    ++n;
  }
  if (n == 0) throw ValidationError("label_distribution: no scenes after filtering");
  Simplex out{};
  for (std::size_t i = 0; i < kNeedCount; ++i)
    out[i] = static_cast<double>(counts[i]) / static_cast<double>(n);
  return out;
}

std::vector<PeriodQuotaKld> quota_kld_by_period(const MatrixXd& need_scores,
                                                const std::vector<LabeledScene>& scenes,
                                                const GroupFeatureTables& tables,
                                                const QuotaWeights& weights, double floor) {
  if (need_scores.rows() != static_cast<Eigen::Index>(scenes.size()))
    throw nn::DimensionError("quota_kld_by_period: " + std::to_string(need_scores.rows()) +
                         " score rows for " + std::to_string(scenes.size()) + " scenes");
  const QuotaWeights control = control_weights(weights);
  std::array<Simplex, kTimePeriodCount> sum_model{}, sum_control{};
  std::array<std::size_t, kTimePeriodCount> counts{};
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    const auto& scene = scenes[i].scene;
    const auto period = static_cast<std::size_t>(scene.context.time_period);
    std::array<double, kNeedCount> s{};
    for (std::size_t k = 0; k < kNeedCount; ++k) s[k] = need_scores(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k));
    QuotaInputs in = default_quota_inputs(scene.profile, tables, s, weights);
    const Simplex qm = homepage_quotas(in, floor);
    in.weights = control;
    const Simplex qc = homepage_quotas(in, floor);
    for (std::size_t k = 0; k < kNeedCount; ++k) {
      sum_model[period][k] += qm[k];
      sum_control[period][k] += qc[k];
    }
    ++counts[period];
  }
  std::vector<PeriodQuotaKld> rows;
  for (std::size_t t = 0; t < kTimePeriodCount; ++t) {
    if (counts[t] == 0) continue;
    Simplex mean_model{}, mean_control{};
    for (std::size_t k = 0; k < kNeedCount; ++k) {
      mean_model[k] = sum_model[t][k] / static_cast<double>(counts[t]);
      mean_control[k] = sum_control[t][k] / static_cast<double>(counts[t]);
    }
    const Simplex truth = label_distribution(scenes, static_cast<int>(t));
    rows.push_back({static_cast<int>(t), counts[t], kld(truth, mean_model), kld(truth, mean_control)});
  }
  return rows;
}

json quota_kld_to_json(const std::vector<PeriodQuotaKld>& rows) {
  json out = json::array();
  for (const auto& r : rows)
    out.push_back({{"time_period", kTimePeriodLabels[static_cast<std::size_t>(r.time_period)]},
                   {"count", r.count},
                   {"kld_with_model", r.with_model},
                   {"kld_control", r.control},
                   {"relative_change", r.relative_change()}});
  return out;
}

std::string quota_kld_table(const std::vector<PeriodQuotaKld>& rows) {
  std::ostringstream out;
  out << "Period   with-model     control    change       N\n";
  for (const auto& r : rows) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "%-6s %12.6f %11.6f %8.2f%% %7zu\n",
                  std::string(kTimePeriodLabels[static_cast<std::size_t>(r.time_period)]).c_str(),
                  r.with_model, r.control, 100.0 * r.relative_change(), r.count);
    out << buf;
  }
  return out.str();
}

}  // namespace neon
