#pragma once

// Losses, dataset splitting, the mini-batch training loop and checkpoints.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include "neon/model.hpp"

namespace neon {

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

inline constexpr double kProbabilityFloor = 1e-12;

/// Multi-class focal loss summed over the batch:
///   -sum_i (1 - q_i,true)^gamma * log(q_i,true)
/// Rows of `need_probs` must be simplices.
double focal_loss(const MatrixXd& need_probs, std::span<const int> labels, double gamma);

/// Gradient of focal_loss with respect to the pre-softmax scores.
MatrixXd focal_loss_grad(const MatrixXd& need_probs, std::span<const int> labels, double gamma);

/// Two-class softmax cross-entropy summed over the batch.
double way_loss(const MatrixXd& way_probs, std::span<const int> labels);
MatrixXd way_loss_grad(const MatrixXd& way_probs, std::span<const int> labels);

inline double total_loss(double need_loss, double way_loss, double lambda1, double lambda2) {
  return lambda1 * need_loss + lambda2 * way_loss;
}

// ---------------------------------------------------------------------------
// Configuration and data
// ---------------------------------------------------------------------------

struct TrainingConfig {
  double gamma = 2.0;
  double lambda1 = 1.0;
  double lambda2 = 0.5;
  double learning_rate = 1e-3;
  std::size_t batch_size = 256;
  std::size_t epochs = 10;
  std::uint64_t seed = 0;
  double split_fraction = 0.8;

  /// Throws ValidationError naming the offending field.
  void validate() const;
};

json training_config_to_json(const TrainingConfig& c);
/// Fields absent from the document keep their defaults.
TrainingConfig training_config_from_json(const json& j);

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> eval;
};

/// Seed-deterministic permutation split of [0, n). The training share is
/// round(fraction * n), kept within [1, n - 1].
SplitIndices split_indices(std::size_t n, double fraction, std::uint64_t seed);

struct DatasetSplit {
  std::vector<LabeledScene> train;
  std::vector<LabeledScene> eval;
  // Indices into `eval` whose ground-truth way is via-delivery / in-store.
  std::vector<std::size_t> eval_via_delivery;
  std::vector<std::size_t> eval_in_store;
};

DatasetSplit split_dataset(const std::vector<LabeledScene>& corpus, double fraction,
                           std::uint64_t seed);

/// Encoded scenes with their labels, ready for batching.
struct EncodedDataset {
  std::vector<EncodedScene> scenes;
  std::vector<int> need_labels;
  std::vector<int> way_labels;

  std::size_t size() const { return scenes.size(); }
};

EncodedDataset encode_dataset(const std::vector<LabeledScene>& scenes, const FeatureBundle& bundle,
                              EncodeDiagnostics* diagnostics = nullptr);

/// Schema and group tables mined from the training side of the split.
FeatureBundle build_feature_bundle(const std::vector<PurchaseRecord>& corpus,
                                   const std::vector<UserProfile>& profiles, double fraction,
                                   std::uint64_t seed, const GroupTableConfig& tables = {});

/// A corpus split into encoded training and evaluation sets.
struct PreparedData {
  FeatureBundle bundle;
  std::vector<LabeledScene> train_scenes;
  std::vector<LabeledScene> eval_scenes;
  EncodedDataset train;
  EncodedDataset eval;
  EncodeDiagnostics diagnostics;
};

/// Re-derives the split recorded in the bundle and encodes both sides.
PreparedData prepare_data(const std::vector<PurchaseRecord>& corpus,
                          const std::vector<UserProfile>& profiles, FeatureBundle bundle);
PreparedData prepare_data(const std::vector<PurchaseRecord>& corpus,
                          const std::vector<UserProfile>& profiles, double fraction,
                          std::uint64_t seed);

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct EpochLoss {
  std::size_t epoch = 0;  // 1-based
  double need_loss = 0.0;  // mean per sample
  double way_loss = 0.0;
  double total = 0.0;
};

json epoch_loss_to_json(const EpochLoss& e);

struct LossBreakdown {
  double need_loss = 0.0;  // batch sums
  double way_loss = 0.0;
  double total = 0.0;
};

/// Loss and exact gradients of the mean per-sample objective on one batch
/// (train-mode forward, running statistics untouched).
struct BatchGradient {
  LossBreakdown loss;
  NeonParams gradients;
  ForwardActivations activations;
};

BatchGradient compute_batch_gradient(const NeonParams& params, const ModelConfig& config,
                                     const FeatureBatch& batch, std::span<const int> need_labels,
                                     std::span<const int> way_labels, const TrainingConfig& tc);

/// Objective value only (same reduction as compute_batch_gradient).
double batch_objective(const NeonParams& params, const ModelConfig& config,
                       const FeatureBatch& batch, std::span<const int> need_labels,
                       std::span<const int> way_labels, const TrainingConfig& tc);

struct TrainResult {
  NeonModel model;
  std::vector<EpochLoss> trace;
};

using EpochCallback = std::function<void(const EpochLoss&)>;

/// Mini-batch adaptive-moment training over seed-shuffled epochs. Throws
/// nn::NumericalError naming the first batch with a non-finite loss.
TrainResult train(NeonModel model, const EncodedDataset& data, const TrainingConfig& config,
                  const EpochCallback& on_epoch = {});

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

inline constexpr int kCheckpointFormatVersion = 1;

std::string checkpoint_to_string(const NeonModel& model);
NeonModel checkpoint_from_string(const std::string& text);
void save_checkpoint(const NeonModel& model, const std::filesystem::path& path);
NeonModel load_checkpoint(const std::filesystem::path& path);

}  // namespace neon
