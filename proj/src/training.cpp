#include <algorithm>
#include <cmath>
#include <numeric>

#include "neon/rng.hpp"
#include "neon/training.hpp"

namespace neon {

void TrainingConfig::validate() const {
  if (!(gamma >= 0.0)) throw ValidationError("training config: gamma must be >= 0");
  if (!(lambda1 >= 0.0) || !(lambda2 >= 0.0))
    throw ValidationError("training config: lambda1 and lambda2 must be >= 0");
  if (!(lambda1 + lambda2 > 0.0))
    throw ValidationError("training config: lambda1 + lambda2 must be positive");
  if (!(learning_rate > 0.0)) throw ValidationError("training config: learning_rate must be > 0");
  if (batch_size < 2) throw ValidationError("training config: batch_size must be >= 2");
  if (!(split_fraction > 0.0 && split_fraction < 1.0))
    throw ValidationError("training config: split_fraction must lie in (0, 1)");
}

json training_config_to_json(const TrainingConfig& c) {
  return json{{"gamma", c.gamma},
              {"lambda1", c.lambda1},
              {"lambda2", c.lambda2},
              {"learning_rate", c.learning_rate},
              {"batch_size", c.batch_size},
              {"epochs", c.epochs},
              {"seed", c.seed},
              {"split_fraction", c.split_fraction}};
}

TrainingConfig training_config_from_json(const json& j) {
  if (!j.is_object()) throw ValidationError("training config must be a JSON object");
  TrainingConfig c;
  auto read = [&j](const char* field, auto& out) {
    auto it = j.find(field);
    if (it == j.end()) return;
    try {
      out = it->get<std::remove_reference_t<decltype(out)>>();
    } catch (const json::exception&) {
      throw ValidationError(std::string("training config: field '") + field +
                            "' has the wrong type");
    }
  };
  read("gamma", c.gamma);
  read("lambda1", c.lambda1);
  read("lambda2", c.lambda2);
  read("learning_rate", c.learning_rate);
  read("batch_size", c.batch_size);
  read("epochs", c.epochs);
  read("seed", c.seed);
  read("split_fraction", c.split_fraction);
  for (const auto& [key, value] : j.items()) {
    static const std::array<std::string_view, 8> known = {
        "gamma", "lambda1", "lambda2", "learning_rate", "batch_size", "epochs", "seed",
        "split_fraction"};
    if (std::find(known.begin(), known.end(), key) == known.end())
      throw ValidationError("training config: unknown field '" + key + "'");
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Splitting
// ---------------------------------------------------------------------------

SplitIndices split_indices(std::size_t n, double fraction, std::uint64_t seed) {
  if (n < 2) throw ValidationError("split: corpus needs at least 2 records");
  if (!(fraction > 0.0 && fraction < 1.0))
    throw ValidationError("split: fraction must lie in (0, 1)");
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(derive_seed(seed, 0x5917));
  rng.shuffle(perm);
  auto n_train = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
  n_train = std::clamp<std::size_t>(n_train, 1, n - 1);
  SplitIndices s;
  s.train.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.eval.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_train), perm.end());
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.eval.begin(), s.eval.end());
  return s;
}

DatasetSplit split_dataset(const std::vector<LabeledScene>& corpus, double fraction,
                           std::uint64_t seed) {
  const SplitIndices idx = split_indices(corpus.size(), fraction, seed);
  DatasetSplit split;
  for (std::size_t i : idx.train) split.train.push_back(corpus[i]);
  for (std::size_t i : idx.eval) split.eval.push_back(corpus[i]);
  for (std::size_t i = 0; i < split.eval.size(); ++i) {
    if (split.eval[i].way_label == NeedsMeetingWay::kViaDelivery)
      split.eval_via_delivery.push_back(i);
    else
      split.eval_in_store.push_back(i);
  }
  return split;
}

EncodedDataset encode_dataset(const std::vector<LabeledScene>& scenes, const FeatureBundle& bundle,
                              EncodeDiagnostics* diagnostics) {
  EncodedDataset data;
  data.scenes.reserve(scenes.size());
  for (const auto& s : scenes) {
    data.scenes.push_back(encode_scene(s.scene, bundle, diagnostics));
    data.need_labels.push_back(code(s.need_label));
    data.way_labels.push_back(code(s.way_label));
  }
  return data;
}

FeatureBundle build_feature_bundle(const std::vector<PurchaseRecord>& corpus,
                                   const std::vector<UserProfile>& profiles, double fraction,
                                   std::uint64_t seed, const GroupTableConfig& tables) {
  const SplitIndices idx = split_indices(corpus.size(), fraction, seed);
  std::vector<PurchaseRecord> train_records;
  train_records.reserve(idx.train.size());
  for (std::size_t i : idx.train) train_records.push_back(corpus[i]);
  FeatureBundle b;
  b.schema = build_schema(train_records, profiles);
  b.tables = build_group_tables(train_records, make_profile_store(profiles), tables);
  b.split_fraction = fraction;
  b.split_seed = seed;
  b.corpus_size = corpus.size();
  return b;
}

PreparedData prepare_data(const std::vector<PurchaseRecord>& corpus,
                          const std::vector<UserProfile>& profiles, FeatureBundle bundle) {
  if (bundle.corpus_size != corpus.size())
    throw ValidationError("feature bundle was built from a corpus of " +
                          std::to_string(bundle.corpus_size) + " records, got " +
                          std::to_string(corpus.size()));
  const SplitIndices idx = split_indices(corpus.size(), bundle.split_fraction, bundle.split_seed);
  const ProfileStore store = make_profile_store(profiles);
  PreparedData d;
  d.train_scenes = build_scenes(corpus, store, idx.train);
  d.eval_scenes = build_scenes(corpus, store, idx.eval);
  d.train = encode_dataset(d.train_scenes, bundle, &d.diagnostics);
  d.eval = encode_dataset(d.eval_scenes, bundle, &d.diagnostics);
  d.bundle = std::move(bundle);
  return d;
}

PreparedData prepare_data(const std::vector<PurchaseRecord>& corpus,
                          const std::vector<UserProfile>& profiles, double fraction,
                          std::uint64_t seed) {
  return prepare_data(corpus, profiles, build_feature_bundle(corpus, profiles, fraction, seed));
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

json epoch_loss_to_json(const EpochLoss& e) {
  return json{{"epoch", e.epoch},
              {"need_loss", e.need_loss},
              {"way_loss", e.way_loss},
              {"total", e.total}};
}

namespace {

LossBreakdown batch_loss(const BatchScores& scores, const ModelConfig& config,
                         std::span<const int> need_labels, std::span<const int> way_labels,
                         const TrainingConfig& tc) {
  LossBreakdown l;
  l.need_loss = focal_loss(scores.need_probs, need_labels, tc.gamma);
  if (config.variant == Variant::kMultitask) {
    l.way_loss = way_loss(scores.way_probs, way_labels);
    l.total = total_loss(l.need_loss, l.way_loss, tc.lambda1, tc.lambda2);
  } else {
    l.total = tc.lambda1 * l.need_loss;
  }
  return l;
}

}  // namespace

BatchGradient compute_batch_gradient(const NeonParams& params, const ModelConfig& config,
                                     const FeatureBatch& batch, std::span<const int> need_labels,
                                     std::span<const int> way_labels, const TrainingConfig& tc) {
  ForwardResult fr = forward(params, config, batch, nn::Mode::kTrain, /*keep_cache=*/true);
  BatchGradient out;
  out.loss = batch_loss(fr.scores, config, need_labels, way_labels, tc);
  const double scale = 1.0 / static_cast<double>(batch.size());
  MatrixXd d_need = (tc.lambda1 * scale) * focal_loss_grad(fr.scores.need_probs, need_labels, tc.gamma);
  MatrixXd d_way = MatrixXd::Zero(batch.size(), config.way_count);
  if (config.variant == Variant::kMultitask)
    d_way = (tc.lambda2 * scale) * way_loss_grad(fr.scores.way_probs, way_labels);
  out.gradients = backward(params, config, batch, fr.activations, d_need, d_way);
  out.activations = std::move(fr.activations);
  return out;
}

double batch_objective(const NeonParams& params, const ModelConfig& config,
                       const FeatureBatch& batch, std::span<const int> need_labels,
                       std::span<const int> way_labels, const TrainingConfig& tc) {
  ForwardResult fr = forward(params, config, batch, nn::Mode::kTrain, /*keep_cache=*/false);
  return batch_loss(fr.scores, config, need_labels, way_labels, tc).total /
         static_cast<double>(batch.size());
}

TrainResult train(NeonModel model, const EncodedDataset& data, const TrainingConfig& config,
                  const EpochCallback& on_epoch) {
  config.validate();
  TrainResult result;
  if (config.epochs == 0 || data.size() < 2) {
    result.model = std::move(model);
    return result;
  }

  const ModelConfig mc = model.config();
  NeonParams& params = model.params();
  auto views = trainable_views(params);
  nn::AdamConfig<double> adam_config;
  adam_config.learning_rate = config.learning_rate;
  auto adam = nn::make_adam_state(views, adam_config);

  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<int> need_labels, way_labels;

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    Rng rng(derive_seed(config.seed, 1000 + epoch));
    rng.shuffle(order);

    double need_sum = 0.0, way_sum = 0.0, total_sum = 0.0;
    std::size_t seen = 0;
    std::size_t batch_no = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      // A trailing batch of one cannot be batch-normalized; it is skipped.
      if (end - start < 2) break;
      ++batch_no;
      std::span<const std::size_t> idx(order.data() + start, end - start);
      const FeatureBatch batch = make_batch(data.scenes, idx);
      need_labels.clear();
      way_labels.clear();
      for (std::size_t i : idx) {
        need_labels.push_back(data.need_labels[i]);
        way_labels.push_back(data.way_labels[i]);
      }

      BatchGradient bg;
      try {
        bg = compute_batch_gradient(params, mc, batch, need_labels, way_labels, config);
      } catch (const nn::NumericalError& e) {
        throw nn::NumericalError("epoch " + std::to_string(epoch) + ", batch " +
                                 std::to_string(batch_no) + ": " + e.what());
      }
      if (!std::isfinite(bg.loss.total))
        throw nn::NumericalError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                                 std::to_string(batch_no));
      need_sum += bg.loss.need_loss;
      way_sum += bg.loss.way_loss;
      total_sum += bg.loss.total;
      seen += idx.size();

      apply_batch_statistics(params, bg.activations);
      nn::adam_step(adam, views, trainable_views(bg.gradients));
    }

    EpochLoss e;
    e.epoch = epoch;
    const double n = static_cast<double>(std::max<std::size_t>(seen, 1));
    e.need_loss = need_sum / n;
    e.way_loss = way_sum / n;
    e.total = total_sum / n;
    result.trace.push_back(e);
    if (on_epoch) on_epoch(e);
  }
  result.model = std::move(model);
  return result;
}

}  // namespace neon
