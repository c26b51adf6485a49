#pragma once

// The multitask need-prediction network: embedding layer, feature-merging
// network, user-preference network, one shared and two task experts mixed by
// per-task softmax gates, and the need/way prediction heads.

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "neon/features.hpp"
#include "neon/nn.hpp"

namespace neon {

using nn::MatrixXd;
using nn::VectorXd;

enum class Variant {
  kMultitask,      // separate need and way heads, both trained
  kSingleTaskSum,  // need head consumes z_need + z_way, way head unused
};

std::string_view to_string(Variant v);
Variant parse_variant(std::string_view name);

struct ModelConfig {
  int embedding_dim = 16;
  int merge_dim = 120;
  int user_dim = 340;
  int expert_dim = 256;
  int way_hidden_dim = 10;
  int need_count = static_cast<int>(kNeedCount);
  int way_count = static_cast<int>(kWayCount);
  Variant variant = Variant::kMultitask;
  bool drop_st = false;
  bool drop_group = false;

  // Vocabulary sizes, including the OOV row.
  int age_vocab = 1;
  int gender_vocab = 1;
  int city_vocab = 1;
  int poi_vocab = 1;
  int aoi_vocab = 1;

  int fused_dim() const { return merge_dim + user_dim; }
  /// Width of v^U: seven embedded families plus the 10-way historical share.
  int user_embedding_dim() const { return 7 * embedding_dim + need_count; }
  int context_embedding_dim() const { return 3 * embedding_dim; }
  int merge_input_dim() const {
    return static_cast<int>(context_layout::kDim) + context_embedding_dim() +
           static_cast<int>(group_layout::kDim) + user_embedding_dim();
  }

  /// Throws nn::DimensionError on non-positive dimensions.
  void validate() const;
};

/// Model configuration with vocabulary sizes taken from the schema.
ModelConfig make_model_config(const FeatureSchema& schema, Variant variant = Variant::kMultitask,
                              bool drop_st = false, bool drop_group = false);

json model_config_to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const json& j);

/// All trainable parameters and batch-norm running statistics. A value of the
/// same type, zero-initialized, doubles as the gradient set.
struct NeonParams {
  MatrixXd embed_age, embed_gender, embed_city, embed_poi, embed_aoi;
  MatrixXd embed_clicked_need, embed_ordered_need;
  nn::Linear<double> merge, user;
  nn::BatchNorm<double> merge_bn, user_bn;
  nn::Linear<double> shared_expert, need_expert, way_expert;
  nn::BatchNorm<double> shared_bn, need_bn, way_bn;
  MatrixXd gate_need, gate_way;  // [2 x fused_dim]
  nn::Linear<double> need_head;
  nn::Linear<double> way_hidden, way_out;
};

/// Calls f(name, tensor) for every trainable tensor in a fixed order.
template <typename Params, typename F>
void for_each_trainable(Params& p, F&& f) {
  f("embed.age", p.embed_age);
  f("embed.gender", p.embed_gender);
  f("embed.city", p.embed_city);
  f("embed.poi", p.embed_poi);
  f("embed.aoi", p.embed_aoi);
  f("embed.clicked_need", p.embed_clicked_need);
  f("embed.ordered_need", p.embed_ordered_need);
  f("merge.weight", p.merge.weight);
  f("merge.bias", p.merge.bias);
  f("merge_bn.gamma", p.merge_bn.gamma);
  f("merge_bn.beta", p.merge_bn.beta);
  f("user.weight", p.user.weight);
  f("user.bias", p.user.bias);
  f("user_bn.gamma", p.user_bn.gamma);
  f("user_bn.beta", p.user_bn.beta);
  f("shared_expert.weight", p.shared_expert.weight);
  f("shared_expert.bias", p.shared_expert.bias);
  f("shared_bn.gamma", p.shared_bn.gamma);
  f("shared_bn.beta", p.shared_bn.beta);
  f("need_expert.weight", p.need_expert.weight);
  f("need_expert.bias", p.need_expert.bias);
  f("need_bn.gamma", p.need_bn.gamma);
  f("need_bn.beta", p.need_bn.beta);
  f("way_expert.weight", p.way_expert.weight);
  f("way_expert.bias", p.way_expert.bias);
  f("way_bn.gamma", p.way_bn.gamma);
  f("way_bn.beta", p.way_bn.beta);
  f("gate.need", p.gate_need);
  f("gate.way", p.gate_way);
  f("need_head.weight", p.need_head.weight);
  f("need_head.bias", p.need_head.bias);
  f("way_hidden.weight", p.way_hidden.weight);
  f("way_hidden.bias", p.way_hidden.bias);
  f("way_out.weight", p.way_out.weight);
  f("way_out.bias", p.way_out.bias);
}

/// Batch-norm running statistics (persisted, not trained).
template <typename Params, typename F>
void for_each_buffer(Params& p, F&& f) {
  f("merge_bn.running_mean", p.merge_bn.running_mean);
  f("merge_bn.running_var", p.merge_bn.running_var);
  f("user_bn.running_mean", p.user_bn.running_mean);
  f("user_bn.running_var", p.user_bn.running_var);
  f("shared_bn.running_mean", p.shared_bn.running_mean);
  f("shared_bn.running_var", p.shared_bn.running_var);
  f("need_bn.running_mean", p.need_bn.running_mean);
  f("need_bn.running_var", p.need_bn.running_var);
  f("way_bn.running_mean", p.way_bn.running_mean);
  f("way_bn.running_var", p.way_bn.running_var);
}

/// Zero-valued parameters shaped by the config.
NeonParams zero_params(const ModelConfig& config);
/// Uniform fan scaling for weights and embeddings, zero biases, unit gamma.
NeonParams init_params(const ModelConfig& config, std::uint64_t seed);

std::vector<nn::ParamView<double>> trainable_views(NeonParams& p);
std::vector<std::string> trainable_names();

/// A batch of encoded scenes in model-input layout.
struct FeatureBatch {
  MatrixXd context_dense;  // [B x context_layout::kDim]
  std::vector<int> context_poi, context_aoi, context_city;
  MatrixXd group;  // [B x group_layout::kDim]
  std::vector<SparseUserFeatures> users;

  Eigen::Index size() const { return context_dense.rows(); }
};

FeatureBatch make_batch(std::span<const EncodedScene* const> scenes);
FeatureBatch make_batch(const std::vector<EncodedScene>& scenes);
FeatureBatch make_batch(const std::vector<EncodedScene>& scenes,
                        std::span<const std::size_t> indices);

/// Per-scene scores and their softmax forms.
struct PredictionScores {
  std::array<double, kNeedCount> need_scores{};
  std::array<double, kWayCount> way_scores{};
  std::array<double, kNeedCount> need_probs{};
  std::array<double, kWayCount> way_probs{};
};

/// Scores for a whole batch; rows are scenes.
struct BatchScores {
  MatrixXd need_scores;  // [B x 10]
  MatrixXd way_scores;   // [B x 2]
  MatrixXd need_probs;
  MatrixXd way_probs;

  PredictionScores row(Eigen::Index i) const;
};

PredictionScores make_scores(const std::array<double, kNeedCount>& need_scores,
                             const std::array<double, kWayCount>& way_scores);

/// Intermediates of one forward pass, kept for backpropagation.
struct ForwardActivations {
  bool has_cache = false;
  nn::Mode mode = nn::Mode::kInfer;

  MatrixXd user_embedding;  // v^U
  MatrixXd merge_input;     // [f^ST, f^G, v^U] after ablation masking
  MatrixXd merge_act, user_act;
  MatrixXd x_merge, x_user, x;
  MatrixXd shared_act, need_act, way_act;
  MatrixXd shared_out, need_out, way_out;  // post batch norm expert outputs
  MatrixXd gate_need, gate_way;            // [B x 2]
  MatrixXd z_need, z_way;
  MatrixXd need_head_input;
  MatrixXd way_hidden_act;

  nn::BatchNormCache<double> merge_bn, user_bn, shared_bn, need_bn, way_bn;
  nn::BatchStatistics<double> merge_stats, user_stats, shared_stats, need_stats, way_stats;
};

struct ForwardResult {
  BatchScores scores;
  ForwardActivations activations;
};

/// v^U for each row of the batch.
MatrixXd embed_user(const NeonParams& params, const ModelConfig& config,
                    const FeatureBatch& batch);

/// Pure forward pass. Train mode normalizes by batch statistics (reported in
/// the activations); running statistics are updated separately.
ForwardResult forward(const NeonParams& params, const ModelConfig& config,
                      const FeatureBatch& batch, nn::Mode mode, bool keep_cache = true);

/// Exact reverse-mode gradients given d(loss)/d(need_scores) and
/// d(loss)/d(way_scores). Throws std::logic_error when the activations carry
/// no cache.
NeonParams backward(const NeonParams& params, const ModelConfig& config,
                    const FeatureBatch& batch, const ForwardActivations& activations,
                    const MatrixXd& d_need_scores, const MatrixXd& d_way_scores);

/// Momentum update of every batch-norm layer from a train-mode pass.
void apply_batch_statistics(NeonParams& params, const ForwardActivations& activations);

class NeonModel {
 public:
  NeonModel() = default;
  NeonModel(ModelConfig config, std::uint64_t seed);
  NeonModel(ModelConfig config, NeonParams params);

  const ModelConfig& config() const { return config_; }
  const NeonParams& params() const { return params_; }
  NeonParams& params() { return params_; }

  /// Inference-mode scores (running batch-norm statistics).
  BatchScores predict(const FeatureBatch& batch) const;
  PredictionScores predict_one(const EncodedScene& scene) const;

 private:
  ModelConfig config_;
  NeonParams params_;
};

/// Needs by descending score; ties by ascending category code.
std::array<NeedCategory, kNeedCount> rank_needs(const PredictionScores& scores);
std::array<NeedCategory, kNeedCount> rank_needs(std::span<const double> need_scores);

/// Argmax of the way scores; ties go to ViaDelivery.
NeedsMeetingWay predict_way(const PredictionScores& scores);

}  // namespace neon
