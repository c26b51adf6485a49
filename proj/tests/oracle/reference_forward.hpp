#pragma once

// Straight-line re-evaluation of the network, written independently of the
// production forward pass, plus a central finite-difference gradient audit
// that re-evaluates only what a single parameter can influence.

#include <array>
#include <cmath>
#include <functional>
#include <tuple>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "neon/model.hpp"
#include "neon/training.hpp"

namespace oracle {

using Eigen::MatrixXd;
using Eigen::RowVectorXd;
using Eigen::VectorXd;
using neon::FeatureBatch;
using neon::ModelConfig;
using neon::NeonParams;

enum Expert { kShared = 0, kNeed = 1, kWay = 2 };

struct Trace {
  bool train = true;
  MatrixXd merge_input;  // [dense | poi | aoi | city | group | user]
  MatrixXd user_input;
  MatrixXd merge_pre, user_pre;  // before ReLU
  MatrixXd x;
  std::array<MatrixXd, 3> expert_pre;  // before ReLU
  std::array<MatrixXd, 3> expert_out;  // after batch norm
  MatrixXd gate_need_logits, gate_way_logits;
  MatrixXd gate_need, gate_way;
  MatrixXd z_need, z_way;
  MatrixXd need_scores, way_hidden_pre, way_scores;
};

inline MatrixXd relu(const MatrixXd& m) { return m.cwiseMax(0.0); }

inline MatrixXd dense(const MatrixXd& in, const MatrixXd& w, const VectorXd& b) {
  MatrixXd out(in.rows(), w.rows());
  for (Eigen::Index i = 0; i < in.rows(); ++i)
    for (Eigen::Index o = 0; o < w.rows(); ++o) out(i, o) = in.row(i).dot(w.row(o)) + b(o);
  return out;
}

// Batch norm of one column: batch statistics (biased variance) in training,
// running statistics otherwise.
inline VectorXd norm_column(const VectorXd& v, double gamma, double beta, double running_mean,
                            double running_var, double eps, bool train) {
  double mean = running_mean, var = running_var;
  if (train) {
    mean = v.sum() / static_cast<double>(v.size());
    var = 0.0;
    for (Eigen::Index i = 0; i < v.size(); ++i) var += (v(i) - mean) * (v(i) - mean);
    var /= static_cast<double>(v.size());
  }
  VectorXd out(v.size());
  for (Eigen::Index i = 0; i < v.size(); ++i)
    out(i) = gamma * (v(i) - mean) / std::sqrt(var + eps) + beta;
  return out;
}

inline MatrixXd norm(const MatrixXd& a, const neon::nn::BatchNorm<double>& bn, bool train) {
  MatrixXd out(a.rows(), a.cols());
  for (Eigen::Index j = 0; j < a.cols(); ++j)
    out.col(j) = norm_column(a.col(j), bn.gamma(j), bn.beta(j), bn.running_mean(j),
                             bn.running_var(j), bn.eps, train);
  return out;
}

inline MatrixXd row_softmax(const MatrixXd& s) {
  MatrixXd p(s.rows(), s.cols());
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    const double m = s.row(i).maxCoeff();
    double total = 0.0;
    for (Eigen::Index j = 0; j < s.cols(); ++j) total += std::exp(s(i, j) - m);
    for (Eigen::Index j = 0; j < s.cols(); ++j) p(i, j) = std::exp(s(i, j) - m) / total;
  }
  return p;
}

inline RowVectorXd mean_rows(const MatrixXd& table, const std::vector<int>& ids) {
  RowVectorXd out = RowVectorXd::Zero(table.cols());
  for (int id : ids) out += table.row(id);
  if (!ids.empty()) out /= static_cast<double>(ids.size());
  return out;
}

inline const neon::nn::Linear<double>& expert_layer(const NeonParams& p, int k) {
  return k == kShared ? p.shared_expert : (k == kNeed ? p.need_expert : p.way_expert);
}
inline const neon::nn::BatchNorm<double>& expert_norm(const NeonParams& p, int k) {
  return k == kShared ? p.shared_bn : (k == kNeed ? p.need_bn : p.way_bn);
}

inline void eval_inputs(const NeonParams& p, const ModelConfig& c, const FeatureBatch& b, Trace& t) {
  const Eigen::Index B = b.size();
  const int e = c.embedding_dim;
  const int user_w = 7 * e + c.need_count;
  const int ctx_w = static_cast<int>(b.context_dense.cols());
  const int group_w = static_cast<int>(b.group.cols());
  t.user_input = MatrixXd::Zero(B, user_w);
  t.merge_input = MatrixXd::Zero(B, ctx_w + 3 * e + group_w + user_w);
  for (Eigen::Index i = 0; i < B; ++i) {
    const auto& u = b.users[static_cast<std::size_t>(i)];
    RowVectorXd v(user_w);
    v << p.embed_age.row(u.age_band), p.embed_gender.row(u.gender), p.embed_city.row(u.resident_city),
        mean_rows(p.embed_clicked_need, u.recent_clicked_needs),
        mean_rows(p.embed_ordered_need, u.recent_ordered_needs),
        Eigen::Map<const RowVectorXd>(u.historical_share.data(), c.need_count),
        mean_rows(p.embed_poi, u.top_pois), mean_rows(p.embed_aoi, u.top_aois);
    t.user_input.row(i) = v;

    RowVectorXd ctx = RowVectorXd::Zero(ctx_w + 3 * e);
    if (!c.drop_st) {
      const auto k = static_cast<std::size_t>(i);
      ctx << b.context_dense.row(i), p.embed_poi.row(b.context_poi[k]),
          p.embed_aoi.row(b.context_aoi[k]), p.embed_city.row(b.context_city[k]);
    }
    RowVectorXd grp = c.drop_group ? RowVectorXd::Zero(group_w) : RowVectorXd(b.group.row(i));
    RowVectorXd row(t.merge_input.cols());
    row << ctx, grp, v;
    t.merge_input.row(i) = row;
  }
}

inline void eval_fuse(const NeonParams& p, const ModelConfig& c, Trace& t) {
  t.merge_pre = dense(t.merge_input, p.merge.weight, p.merge.bias);
  t.user_pre = dense(t.user_input, p.user.weight, p.user.bias);
  t.x.resize(t.merge_pre.rows(), c.merge_dim + c.user_dim);
  t.x << norm(relu(t.merge_pre), p.merge_bn, t.train), norm(relu(t.user_pre), p.user_bn, t.train);
}

inline void eval_experts(const NeonParams& p, Trace& t) {
  for (int k = 0; k < 3; ++k) {
    t.expert_pre[k] = dense(t.x, expert_layer(p, k).weight, expert_layer(p, k).bias);
    t.expert_out[k] = norm(relu(t.expert_pre[k]), expert_norm(p, k), t.train);
  }
}

inline void mix(const MatrixXd& gate, const MatrixXd& task, const MatrixXd& shared, MatrixXd& z) {
  z.resize(task.rows(), task.cols());
  for (Eigen::Index i = 0; i < task.rows(); ++i)
    z.row(i) = gate(i, 0) * task.row(i) + gate(i, 1) * shared.row(i);
}

inline void eval_gates(const NeonParams& p, Trace& t) {
  t.gate_need_logits = t.x * p.gate_need.transpose();
  t.gate_way_logits = t.x * p.gate_way.transpose();
  t.gate_need = row_softmax(t.gate_need_logits);
  t.gate_way = row_softmax(t.gate_way_logits);
  mix(t.gate_need, t.expert_out[kNeed], t.expert_out[kShared], t.z_need);
  mix(t.gate_way, t.expert_out[kWay], t.expert_out[kShared], t.z_way);
}

inline void eval_heads(const NeonParams& p, const ModelConfig& c, Trace& t) {
  if (c.variant == neon::Variant::kMultitask) {
    t.need_scores = dense(t.z_need, p.need_head.weight, p.need_head.bias);
    t.way_hidden_pre = dense(t.z_way, p.way_hidden.weight, p.way_hidden.bias);
    t.way_scores = dense(relu(t.way_hidden_pre), p.way_out.weight, p.way_out.bias);
  } else {
    t.need_scores = dense(t.z_need + t.z_way, p.need_head.weight, p.need_head.bias);
    t.way_scores = MatrixXd::Zero(t.need_scores.rows(), c.way_count);
  }
}

inline Trace evaluate(const NeonParams& p, const ModelConfig& c, const FeatureBatch& b, bool train) {
  Trace t;
  t.train = train;
  eval_inputs(p, c, b, t);
  eval_fuse(p, c, t);
  eval_experts(p, t);
  eval_gates(p, t);
  eval_heads(p, c, t);
  return t;
}

// Mean per-sample objective: lambda1 * focal + lambda2 * way cross-entropy.
inline double objective(const MatrixXd& need_scores, const MatrixXd& way_scores,
                        const ModelConfig& c, std::span<const int> need_labels,
                        std::span<const int> way_labels, const neon::TrainingConfig& tc) {
  const MatrixXd qn = row_softmax(need_scores);
  double need = 0.0, way = 0.0;
  for (Eigen::Index i = 0; i < qn.rows(); ++i) {
    const double q = qn(i, need_labels[static_cast<std::size_t>(i)]);
    need += -std::pow(1.0 - q, tc.gamma) * std::log(std::max(q, 1e-12));
  }
  double total = tc.lambda1 * need;
  if (c.variant == neon::Variant::kMultitask) {
    const MatrixXd qw = row_softmax(way_scores);
    for (Eigen::Index i = 0; i < qw.rows(); ++i)
      way += -std::log(std::max(qw(i, way_labels[static_cast<std::size_t>(i)]), 1e-12));
    total += tc.lambda2 * way;
  }
  return total / static_cast<double>(need_scores.rows());
}

// ---------------------------------------------------------------------------
// Finite-difference audit
// ---------------------------------------------------------------------------

struct TensorAudit {
  std::size_t count = 0;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

struct AuditReport {
  std::map<std::string, TensorAudit> tensors;
  std::size_t checked = 0;
  double max_rel_error = 0.0;
  std::string worst_tensor;
};

// Loss evaluator that re-enters the reference forward at cached stages.
class Auditor {
 public:
  Auditor(NeonParams& p, const ModelConfig& c, const FeatureBatch& b, std::span<const int> need,
          std::span<const int> way, const neon::TrainingConfig& tc)
      : p_(p), c_(c), b_(b), need_(need), way_(way), tc_(tc) {
    rebuild();
  }

  void rebuild() { base_ = evaluate(p_, c_, b_, true); }

  double full() const {
    const Trace t = evaluate(p_, c_, b_, true);
    return loss(t.need_scores, t.way_scores);
  }

  double loss(const MatrixXd& need_scores, const MatrixXd& way_scores) const {
    return objective(need_scores, way_scores, c_, need_, way_, tc_);
  }

  double from_z(const MatrixXd& z_need, const MatrixXd& z_way) const {
    Trace t;
    t.z_need = z_need;
    t.z_way = z_way;
    eval_heads(p_, c_, t);
    return loss(t.need_scores, t.way_scores);
  }

  double from_heads() const { return from_z(base_.z_need, base_.z_way); }

  double from_gates() const {
    MatrixXd gn = row_softmax(base_.x * p_.gate_need.transpose());
    MatrixXd gw = row_softmax(base_.x * p_.gate_way.transpose());
    MatrixXd zn, zw;
    mix(gn, base_.expert_out[kNeed], base_.expert_out[kShared], zn);
    mix(gw, base_.expert_out[kWay], base_.expert_out[kShared], zw);
    return from_z(zn, zw);
  }

  // Expert k, output column j changed.
  double from_expert_column(int k, Eigen::Index j) const {
    const auto& layer = expert_layer(p_, k);
    const auto& bn = expert_norm(p_, k);
    VectorXd pre = base_.x * layer.weight.row(j).transpose();
    pre.array() += layer.bias(j);
    const VectorXd out = norm_column(pre.cwiseMax(0.0), bn.gamma(j), bn.beta(j), 0.0, 1.0, bn.eps, true);
    const VectorXd delta = out - base_.expert_out[k].col(j);
    VectorXd dzn = VectorXd::Zero(delta.size()), dzw = VectorXd::Zero(delta.size());
    if (k == kNeed) dzn = base_.gate_need.col(0).cwiseProduct(delta);
    if (k == kWay) dzw = base_.gate_way.col(0).cwiseProduct(delta);
    if (k == kShared) {
      dzn = base_.gate_need.col(1).cwiseProduct(delta);
      dzw = base_.gate_way.col(1).cwiseProduct(delta);
    }
    MatrixXd zn = base_.z_need, zw = base_.z_way;
    zn.col(j) += dzn;
    zw.col(j) += dzw;
    return from_z(zn, zw);
  }

  // Column `col` of x changed (merge block when col < merge_dim).
  double from_x_column(Eigen::Index col) const {
    VectorXd new_col;
    if (col < c_.merge_dim) {
      VectorXd pre = base_.merge_input * p_.merge.weight.row(col).transpose();
      pre.array() += p_.merge.bias(col);
      new_col = norm_column(pre.cwiseMax(0.0), p_.merge_bn.gamma(col), p_.merge_bn.beta(col), 0.0,
                            1.0, p_.merge_bn.eps, true);
    } else {
      const Eigen::Index u = col - c_.merge_dim;
      VectorXd pre = base_.user_input * p_.user.weight.row(u).transpose();
      pre.array() += p_.user.bias(u);
      new_col = norm_column(pre.cwiseMax(0.0), p_.user_bn.gamma(u), p_.user_bn.beta(u), 0.0, 1.0,
                            p_.user_bn.eps, true);
    }
    const VectorXd dx = new_col - base_.x.col(col);
    std::array<MatrixXd, 3> out;
    for (int k = 0; k < 3; ++k) {
      const MatrixXd pre = base_.expert_pre[k] + dx * expert_layer(p_, k).weight.col(col).transpose();
      out[k] = norm(relu(pre), expert_norm(p_, k), true);
    }
    const MatrixXd gn = row_softmax(base_.gate_need_logits + dx * p_.gate_need.col(col).transpose());
    const MatrixXd gw = row_softmax(base_.gate_way_logits + dx * p_.gate_way.col(col).transpose());
    MatrixXd zn, zw;
    mix(gn, out[kNeed], out[kShared], zn);
    mix(gw, out[kWay], out[kShared], zw);
    return from_z(zn, zw);
  }

 private:
  NeonParams& p_;
  const ModelConfig& c_;
  const FeatureBatch& b_;
  std::span<const int> need_, way_;
  const neon::TrainingConfig& tc_;
  Trace base_;
};

// Which cached stage a parameter tensor re-enters at.
inline std::function<double(const Auditor&, Eigen::Index, Eigen::Index)> evaluator_for(
    const std::string& name, const ModelConfig& c) {
  auto starts = [&name](const char* prefix) { return name.rfind(prefix, 0) == 0; };
  if (starts("embed.")) return [](const Auditor& a, Eigen::Index, Eigen::Index) { return a.full(); };
  if (starts("merge.") || starts("merge_bn."))
    return [](const Auditor& a, Eigen::Index r, Eigen::Index) { return a.from_x_column(r); };
  if (starts("user.") || starts("user_bn.")) {
    const Eigen::Index off = c.merge_dim;
    return [off](const Auditor& a, Eigen::Index r, Eigen::Index) { return a.from_x_column(off + r); };
  }
  for (auto [prefix, bn, k] : {std::tuple{"shared_expert.", "shared_bn.", kShared},
                               std::tuple{"need_expert.", "need_bn.", kNeed},
                               std::tuple{"way_expert.", "way_bn.", kWay}}) {
    if (starts(prefix) || starts(bn)) {
      const int kk = k;
      return [kk](const Auditor& a, Eigen::Index r, Eigen::Index) { return a.from_expert_column(kk, r); };
    }
  }
  if (starts("gate.")) return [](const Auditor& a, Eigen::Index, Eigen::Index) { return a.from_gates(); };
  return [](const Auditor& a, Eigen::Index, Eigen::Index) { return a.from_heads(); };
}

/// Central differences for every trainable entry of the network.
/// Relative error is |a - n| / max(|a|, |n|, floor).
inline AuditReport audit_gradients(NeonParams params, const ModelConfig& c, const FeatureBatch& b,
                                   std::span<const int> need, std::span<const int> way,
                                   const neon::TrainingConfig& tc, double h, double floor) {
  NeonParams grads = neon::compute_batch_gradient(params, c, b, need, way, tc).gradients;
  std::vector<const double*> grad_data;
  neon::for_each_trainable(grads, [&](const std::string&, const auto& t) { grad_data.push_back(t.data()); });

  Auditor auditor(params, c, b, need, way, tc);
  AuditReport report;
  std::size_t tensor_no = 0;
  neon::for_each_trainable(params, [&](const std::string& name, auto& t) {
    const auto eval = evaluator_for(name, c);
    const double* g = grad_data[tensor_no++];
    TensorAudit& ta = report.tensors[name];
    for (Eigen::Index j = 0; j < t.cols(); ++j) {
      for (Eigen::Index i = 0; i < t.rows(); ++i) {
        double& v = t(i, j);
        const double saved = v;
        v = saved + h;
        const double up = eval(auditor, i, j);
        v = saved - h;
        const double down = eval(auditor, i, j);
        v = saved;
        const double numeric = (up - down) / (2.0 * h);
        const double a = g[j * t.rows() + i];
        const double abs_err = std::abs(a - numeric);
        const double rel = abs_err / std::max({std::abs(a), std::abs(numeric), floor});
        ++ta.count;
        ta.max_abs_error = std::max(ta.max_abs_error, abs_err);
        if (ta.count == 1 || rel > ta.max_rel_error) {
          ta.max_rel_error = rel;
          ta.worst_index = static_cast<std::size_t>(j * t.rows() + i);
          ta.worst_analytic = a;
          ta.worst_numeric = numeric;
        }
      }
    }
    report.checked += ta.count;
    if (report.worst_tensor.empty() || ta.max_rel_error > report.max_rel_error) {
      report.max_rel_error = ta.max_rel_error;
      report.worst_tensor = name;
    }
  });
  return report;
}

}  // namespace oracle
