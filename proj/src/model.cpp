#include "neon/model.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

#include "neon/rng.hpp"

namespace neon {

std::string_view to_string(Variant v) {
  return v == Variant::kMultitask ? "multitask" : "single_task_sum";
}

Variant parse_variant(std::string_view name) {
  if (name == "multitask") return Variant::kMultitask;
  if (name == "single_task_sum") return Variant::kSingleTaskSum;
  throw ValidationError("unknown variant '" + std::string(name) + "'");
}

void ModelConfig::validate() const {
  const std::array<int, 12> dims{embedding_dim, merge_dim,  user_dim,   expert_dim,
                                 way_hidden_dim, need_count, way_count, age_vocab,
                                 gender_vocab,  city_vocab,  poi_vocab,  aoi_vocab};
  for (int d : dims)
    if (d <= 0) throw nn::DimensionError("model config: dimensions must be positive");
  if (need_count != static_cast<int>(kNeedCount) || way_count != static_cast<int>(kWayCount))
    throw nn::DimensionError("model config: need_count must be 10 and way_count 2");
}

ModelConfig make_model_config(const FeatureSchema& schema, Variant variant, bool drop_st,
                              bool drop_group) {
  ModelConfig c;
  c.variant = variant;
  c.drop_st = drop_st;
  c.drop_group = drop_group;
  c.age_vocab = static_cast<int>(schema.age_band.size());
  c.gender_vocab = static_cast<int>(schema.gender.size());
  c.city_vocab = static_cast<int>(schema.city.size());
  c.poi_vocab = static_cast<int>(schema.poi.size());
  c.aoi_vocab = static_cast<int>(schema.aoi.size());
  return c;
}

json model_config_to_json(const ModelConfig& c) {
  return json{{"embedding_dim", c.embedding_dim},
              {"merge_dim", c.merge_dim},
              {"user_dim", c.user_dim},
              {"expert_dim", c.expert_dim},
              {"way_hidden_dim", c.way_hidden_dim},
              {"need_count", c.need_count},
              {"way_count", c.way_count},
              {"variant", to_string(c.variant)},
              {"drop_st", c.drop_st},
              {"drop_group", c.drop_group},
              {"age_vocab", c.age_vocab},
              {"gender_vocab", c.gender_vocab},
              {"city_vocab", c.city_vocab},
              {"poi_vocab", c.poi_vocab},
              {"aoi_vocab", c.aoi_vocab}};
}

ModelConfig model_config_from_json(const json& j) {
  try {
    ModelConfig c;
    c.embedding_dim = j.at("embedding_dim").get<int>();
    c.merge_dim = j.at("merge_dim").get<int>();
    c.user_dim = j.at("user_dim").get<int>();
    c.expert_dim = j.at("expert_dim").get<int>();
    c.way_hidden_dim = j.at("way_hidden_dim").get<int>();
    c.need_count = j.at("need_count").get<int>();
    c.way_count = j.at("way_count").get<int>();
    c.variant = parse_variant(j.at("variant").get<std::string>());
    c.drop_st = j.at("drop_st").get<bool>();
    c.drop_group = j.at("drop_group").get<bool>();
    c.age_vocab = j.at("age_vocab").get<int>();
    c.gender_vocab = j.at("gender_vocab").get<int>();
    c.city_vocab = j.at("city_vocab").get<int>();
    c.poi_vocab = j.at("poi_vocab").get<int>();
    c.aoi_vocab = j.at("aoi_vocab").get<int>();
    c.validate();
    return c;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("model_config: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

NeonParams zero_params(const ModelConfig& c) {
  c.validate();
  NeonParams p;
  const int e = c.embedding_dim;
  p.embed_age = MatrixXd::Zero(c.age_vocab, e);
  p.embed_gender = MatrixXd::Zero(c.gender_vocab, e);
  p.embed_city = MatrixXd::Zero(c.city_vocab, e);
  p.embed_poi = MatrixXd::Zero(c.poi_vocab, e);
  p.embed_aoi = MatrixXd::Zero(c.aoi_vocab, e);
  p.embed_clicked_need = MatrixXd::Zero(c.need_count, e);
  p.embed_ordered_need = MatrixXd::Zero(c.need_count, e);
  p.merge = nn::Linear<double>(c.merge_input_dim(), c.merge_dim);
  p.user = nn::Linear<double>(c.user_embedding_dim(), c.user_dim);
  p.merge_bn = nn::BatchNorm<double>(c.merge_dim);
  p.user_bn = nn::BatchNorm<double>(c.user_dim);
  p.shared_expert = nn::Linear<double>(c.fused_dim(), c.expert_dim);
  p.need_expert = nn::Linear<double>(c.fused_dim(), c.expert_dim);
  p.way_expert = nn::Linear<double>(c.fused_dim(), c.expert_dim);
  p.shared_bn = nn::BatchNorm<double>(c.expert_dim);
  p.need_bn = nn::BatchNorm<double>(c.expert_dim);
  p.way_bn = nn::BatchNorm<double>(c.expert_dim);
  p.gate_need = MatrixXd::Zero(2, c.fused_dim());
  p.gate_way = MatrixXd::Zero(2, c.fused_dim());
  p.need_head = nn::Linear<double>(c.expert_dim, c.need_count);
  p.way_hidden = nn::Linear<double>(c.expert_dim, c.way_hidden_dim);
  p.way_out = nn::Linear<double>(c.way_hidden_dim, c.way_count);
  // Gradient sets carry zero gamma; callers wanting identity scale use
  // init_params.
  for_each_trainable(p, [](const std::string&, auto& t) { t.setZero(); });
  return p;
}

NeonParams init_params(const ModelConfig& c, std::uint64_t seed) {
  NeonParams p = zero_params(c);
  Rng rng(seed);
  auto u = [&rng] { return rng.uniform(); };
  for (MatrixXd* m : {&p.embed_age, &p.embed_gender, &p.embed_city, &p.embed_poi, &p.embed_aoi,
                      &p.embed_clicked_need, &p.embed_ordered_need})
    nn::init_uniform_fan(*m, u);
  for (auto* l : {&p.merge, &p.user, &p.shared_expert, &p.need_expert, &p.way_expert,
                  &p.need_head, &p.way_hidden, &p.way_out})
    nn::init_linear(*l, u);
  nn::init_uniform_fan(p.gate_need, u);
  nn::init_uniform_fan(p.gate_way, u);
  for (auto* bn : {&p.merge_bn, &p.user_bn, &p.shared_bn, &p.need_bn, &p.way_bn}) {
    const auto d = bn->dim();
    *bn = nn::BatchNorm<double>(d);
  }
  return p;
}

std::vector<nn::ParamView<double>> trainable_views(NeonParams& p) {
  std::vector<nn::ParamView<double>> views;
  for_each_trainable(p, [&views](const std::string& name, auto& t) {
    views.push_back({name, t.data(), t.rows(), t.cols()});
  });
  return views;
}

std::vector<std::string> trainable_names() {
  std::vector<std::string> names;
  NeonParams p;
  for_each_trainable(p, [&names](const std::string& name, auto&) { names.push_back(name); });
  return names;
}

// ---------------------------------------------------------------------------
// Batches and scores
// ---------------------------------------------------------------------------

FeatureBatch make_batch(std::span<const EncodedScene* const> scenes) {
  const auto n = static_cast<Eigen::Index>(scenes.size());
  FeatureBatch b;
  b.context_dense.resize(n, context_layout::kDim);
  b.group.resize(n, group_layout::kDim);
  b.context_poi.reserve(scenes.size());
  b.context_aoi.reserve(scenes.size());
  b.context_city.reserve(scenes.size());
  b.users.reserve(scenes.size());
  for (Eigen::Index i = 0; i < n; ++i) {
    const EncodedScene& s = *scenes[static_cast<std::size_t>(i)];
    if (s.context.dense.size() != context_layout::kDim || s.group.size() != group_layout::kDim)
      throw nn::DimensionError("make_batch: scene " + std::to_string(i) +
                               " does not match the feature layout");
    b.context_dense.row(i) = s.context.dense.transpose();
    b.group.row(i) = s.group.transpose();
    b.context_poi.push_back(s.context.poi);
    b.context_aoi.push_back(s.context.aoi);
    b.context_city.push_back(s.context.city);
    b.users.push_back(s.user);
  }
  return b;
}

FeatureBatch make_batch(const std::vector<EncodedScene>& scenes) {
  std::vector<const EncodedScene*> ptrs;
  ptrs.reserve(scenes.size());
  for (const auto& s : scenes) ptrs.push_back(&s);
  return make_batch(ptrs);
}

FeatureBatch make_batch(const std::vector<EncodedScene>& scenes,
                        std::span<const std::size_t> indices) {
  std::vector<const EncodedScene*> ptrs;
  ptrs.reserve(indices.size());
  for (std::size_t i : indices) ptrs.push_back(&scenes.at(i));
  return make_batch(ptrs);
}

PredictionScores BatchScores::row(Eigen::Index i) const {
  PredictionScores s;
  for (std::size_t n = 0; n < kNeedCount; ++n) {
    s.need_scores[n] = need_scores(i, static_cast<Eigen::Index>(n));
    s.need_probs[n] = need_probs(i, static_cast<Eigen::Index>(n));
  }
  for (std::size_t m = 0; m < kWayCount; ++m) {
    s.way_scores[m] = way_scores(i, static_cast<Eigen::Index>(m));
    s.way_probs[m] = way_probs(i, static_cast<Eigen::Index>(m));
  }
  return s;
}

PredictionScores make_scores(const std::array<double, kNeedCount>& need_scores,
                             const std::array<double, kWayCount>& way_scores) {
  PredictionScores s;
  s.need_scores = need_scores;
  s.way_scores = way_scores;
  const VectorXd qn = nn::softmax(Eigen::Map<const VectorXd>(need_scores.data(), kNeedCount));
  const VectorXd qw = nn::softmax(Eigen::Map<const VectorXd>(way_scores.data(), kWayCount));
  for (std::size_t n = 0; n < kNeedCount; ++n) s.need_probs[n] = qn(static_cast<Eigen::Index>(n));
  for (std::size_t m = 0; m < kWayCount; ++m) s.way_probs[m] = qw(static_cast<Eigen::Index>(m));
  return s;
}

// ---------------------------------------------------------------------------
// Embedding
// ---------------------------------------------------------------------------

namespace {

void check_index(int idx, Eigen::Index rows, const char* family) {
  if (idx < 0 || idx >= rows)
    throw nn::DimensionError(std::string("embedding index out of range for '") + family +
                             "': " + std::to_string(idx) + " not in [0, " +
                             std::to_string(rows) + ")");
}

// Mean of the selected rows; zero for an empty set.
template <typename Out>
void pool_rows(const MatrixXd& table, const std::vector<int>& ids, const char* family,
               Out&& out) {
  out.setZero();
  if (ids.empty()) return;
  for (int id : ids) {
    check_index(id, table.rows(), family);
    out += table.row(id);
  }
  out /= static_cast<double>(ids.size());
}

void scatter_pooled(MatrixXd& grad, const std::vector<int>& ids,
                    const Eigen::Ref<const Eigen::RowVectorXd>& upstream) {
  if (ids.empty()) return;
  const double w = 1.0 / static_cast<double>(ids.size());
  for (int id : ids) grad.row(id) += w * upstream;
}

// Column offsets inside v^U.
struct UserLayout {
  Eigen::Index age, gender, city, clicked, ordered, share, pois, aois, dim;
  explicit UserLayout(const ModelConfig& c) {
    const Eigen::Index e = c.embedding_dim;
    age = 0;
    gender = e;
    city = 2 * e;
    clicked = 3 * e;
    ordered = 4 * e;
    share = 5 * e;
    pois = share + c.need_count;
    aois = pois + e;
    dim = aois + e;
  }
};

// Column offsets inside the merge input.
struct MergeLayout {
  Eigen::Index dense, poi, aoi, city, group, user, dim;
  explicit MergeLayout(const ModelConfig& c) {
    const Eigen::Index e = c.embedding_dim;
    dense = 0;
    poi = context_layout::kDim;
    aoi = poi + e;
    city = aoi + e;
    group = city + e;
    user = group + group_layout::kDim;
    dim = user + c.user_embedding_dim();
  }
};

MatrixXd scale_rows(const Eigen::Ref<const VectorXd>& w, const MatrixXd& m) {
  return w.asDiagonal() * m;
}

}  // namespace

MatrixXd embed_user(const NeonParams& p, const ModelConfig& c, const FeatureBatch& batch) {
  const UserLayout L(c);
  const Eigen::Index e = c.embedding_dim;
  MatrixXd v(batch.size(), L.dim);
  for (Eigen::Index i = 0; i < batch.size(); ++i) {
    const auto& u = batch.users[static_cast<std::size_t>(i)];
    check_index(u.age_band, p.embed_age.rows(), "age_band");
    check_index(u.gender, p.embed_gender.rows(), "gender");
    check_index(u.resident_city, p.embed_city.rows(), "city");
    v.row(i).segment(L.age, e) = p.embed_age.row(u.age_band);
    v.row(i).segment(L.gender, e) = p.embed_gender.row(u.gender);
    v.row(i).segment(L.city, e) = p.embed_city.row(u.resident_city);
    pool_rows(p.embed_clicked_need, u.recent_clicked_needs, "clicked_need",
              v.row(i).segment(L.clicked, e));
    pool_rows(p.embed_ordered_need, u.recent_ordered_needs, "ordered_need",
              v.row(i).segment(L.ordered, e));
    for (Eigen::Index n = 0; n < c.need_count; ++n)
      v(i, L.share + n) = u.historical_share[static_cast<std::size_t>(n)];
    pool_rows(p.embed_poi, u.top_pois, "poi", v.row(i).segment(L.pois, e));
    pool_rows(p.embed_aoi, u.top_aois, "aoi", v.row(i).segment(L.aois, e));
  }
  return v;
}

// ---------------------------------------------------------------------------
// Forward
// ---------------------------------------------------------------------------

ForwardResult forward(const NeonParams& p, const ModelConfig& c, const FeatureBatch& batch,
                      nn::Mode mode, bool keep_cache) {
  const Eigen::Index B = batch.size();
  if (batch.context_dense.cols() != context_layout::kDim ||
      batch.group.cols() != group_layout::kDim || batch.group.rows() != B ||
      static_cast<Eigen::Index>(batch.users.size()) != B ||
      static_cast<Eigen::Index>(batch.context_poi.size()) != B) {
    throw nn::DimensionError("forward: feature batch layout mismatch (context " +
                             nn::shape_string(batch.context_dense.rows(), batch.context_dense.cols()) +
                             ", group " + nn::shape_string(batch.group.rows(), batch.group.cols()) +
                             ")");
  }
  const MergeLayout M(c);
  const Eigen::Index e = c.embedding_dim;

  ForwardResult result;
  ForwardActivations& a = result.activations;
  a.mode = mode;
  a.has_cache = keep_cache;

  a.user_embedding = embed_user(p, c, batch);
  a.merge_input = MatrixXd::Zero(B, M.dim);
  if (!c.drop_st) {
    a.merge_input.middleCols(M.dense, context_layout::kDim) = batch.context_dense;
    for (Eigen::Index i = 0; i < B; ++i) {
      const auto k = static_cast<std::size_t>(i);
      check_index(batch.context_poi[k], p.embed_poi.rows(), "poi");
      check_index(batch.context_aoi[k], p.embed_aoi.rows(), "aoi");
      check_index(batch.context_city[k], p.embed_city.rows(), "city");
      a.merge_input.row(i).segment(M.poi, e) = p.embed_poi.row(batch.context_poi[k]);
      a.merge_input.row(i).segment(M.aoi, e) = p.embed_aoi.row(batch.context_aoi[k]);
      a.merge_input.row(i).segment(M.city, e) = p.embed_city.row(batch.context_city[k]);
    }
  }
  if (!c.drop_group) a.merge_input.middleCols(M.group, group_layout::kDim) = batch.group;
  a.merge_input.middleCols(M.user, c.user_embedding_dim()) = a.user_embedding;

  auto* merge_cache = keep_cache ? &a.merge_bn : nullptr;
  auto* user_cache = keep_cache ? &a.user_bn : nullptr;
  a.merge_act = nn::relu(nn::linear_forward(p.merge, a.merge_input));
  a.x_merge = nn::batchnorm_forward(p.merge_bn, a.merge_act, mode, merge_cache, &a.merge_stats);
  a.user_act = nn::relu(nn::linear_forward(p.user, a.user_embedding));
  a.x_user = nn::batchnorm_forward(p.user_bn, a.user_act, mode, user_cache, &a.user_stats);

  a.x.resize(B, c.fused_dim());
  a.x.leftCols(c.merge_dim) = a.x_merge;
  a.x.rightCols(c.user_dim) = a.x_user;

  a.shared_act = nn::relu(nn::linear_forward(p.shared_expert, a.x));
  a.need_act = nn::relu(nn::linear_forward(p.need_expert, a.x));
  a.way_act = nn::relu(nn::linear_forward(p.way_expert, a.x));
  a.shared_out = nn::batchnorm_forward(p.shared_bn, a.shared_act, mode,
                                       keep_cache ? &a.shared_bn : nullptr, &a.shared_stats);
  a.need_out = nn::batchnorm_forward(p.need_bn, a.need_act, mode,
                                     keep_cache ? &a.need_bn : nullptr, &a.need_stats);
  a.way_out = nn::batchnorm_forward(p.way_bn, a.way_act, mode,
                                    keep_cache ? &a.way_bn : nullptr, &a.way_stats);

  a.gate_need = nn::softmax_rows(MatrixXd(a.x * p.gate_need.transpose()));
  a.gate_way = nn::softmax_rows(MatrixXd(a.x * p.gate_way.transpose()));
  a.z_need = scale_rows(a.gate_need.col(0), a.need_out) + scale_rows(a.gate_need.col(1), a.shared_out);
  a.z_way = scale_rows(a.gate_way.col(0), a.way_out) + scale_rows(a.gate_way.col(1), a.shared_out);

  BatchScores& s = result.scores;
  if (c.variant == Variant::kMultitask) {
    a.need_head_input = a.z_need;
    s.need_scores = nn::linear_forward(p.need_head, a.need_head_input);
    a.way_hidden_act = nn::relu(nn::linear_forward(p.way_hidden, a.z_way));
    s.way_scores = nn::linear_forward(p.way_out, a.way_hidden_act);
  } else {
    a.need_head_input = a.z_need + a.z_way;
    s.need_scores = nn::linear_forward(p.need_head, a.need_head_input);
    s.way_scores = MatrixXd::Zero(B, c.way_count);
  }
  if (!s.need_scores.allFinite() || !s.way_scores.allFinite())
    throw nn::NumericalError("forward: non-finite scores");
  s.need_probs = nn::softmax_rows(s.need_scores);
  s.way_probs = nn::softmax_rows(s.way_scores);

  if (!keep_cache) {
    // Drop the large intermediates; only scores are needed.
    a = ForwardActivations{};
    a.mode = mode;
  }
  return result;
}

// ---------------------------------------------------------------------------
// Backward
// ---------------------------------------------------------------------------

NeonParams backward(const NeonParams& p, const ModelConfig& c, const FeatureBatch& batch,
                    const ForwardActivations& a, const MatrixXd& d_need_scores,
                    const MatrixXd& d_way_scores) {
  if (!a.has_cache) throw std::logic_error("backward: forward pass was run without a cache");
  const Eigen::Index B = batch.size();
  if (d_need_scores.rows() != B || d_need_scores.cols() != c.need_count ||
      d_way_scores.rows() != B || d_way_scores.cols() != c.way_count)
    throw nn::DimensionError("backward: upstream gradient shapes " +
                             nn::shape_string(d_need_scores.rows(), d_need_scores.cols()) + " and " +
                             nn::shape_string(d_way_scores.rows(), d_way_scores.cols()) +
                             " do not match batch of " + std::to_string(B));

  NeonParams g = zero_params(c);
  const MergeLayout M(c);
  const UserLayout U(c);
  const Eigen::Index e = c.embedding_dim;

  // Heads.
  MatrixXd dz_need, dz_way;
  if (c.variant == Variant::kMultitask) {
    dz_need = nn::linear_backward(p.need_head, a.need_head_input, d_need_scores, g.need_head);
    MatrixXd d_hidden = nn::linear_backward(p.way_out, a.way_hidden_act, d_way_scores, g.way_out);
    d_hidden = nn::relu_backward(a.way_hidden_act, d_hidden);
    dz_way = nn::linear_backward(p.way_hidden, a.z_way, d_hidden, g.way_hidden);
  } else {
    dz_need = nn::linear_backward(p.need_head, a.need_head_input, d_need_scores, g.need_head);
    dz_way = dz_need;
  }

  // Gates and expert mixture.
  MatrixXd dx = MatrixXd::Zero(B, c.fused_dim());
  MatrixXd d_shared_out = MatrixXd::Zero(B, c.expert_dim);
  auto gate_backward = [&](const MatrixXd& gate, const MatrixXd& expert_out, const MatrixXd& dz,
                           const MatrixXd& gate_weight, MatrixXd& d_gate_weight,
                           MatrixXd& d_expert_out) {
    d_expert_out = scale_rows(gate.col(0), dz);
    d_shared_out += scale_rows(gate.col(1), dz);
    MatrixXd d_gate(B, 2);
    d_gate.col(0) = (dz.array() * expert_out.array()).rowwise().sum();
    d_gate.col(1) = (dz.array() * a.shared_out.array()).rowwise().sum();
    const MatrixXd d_logits = nn::softmax_rows_backward(gate, d_gate);
    d_gate_weight.noalias() += d_logits.transpose() * a.x;
    dx.noalias() += d_logits * gate_weight;
  };
  MatrixXd d_need_out, d_way_out;
  gate_backward(a.gate_need, a.need_out, dz_need, p.gate_need, g.gate_need, d_need_out);
  gate_backward(a.gate_way, a.way_out, dz_way, p.gate_way, g.gate_way, d_way_out);

  auto expert_backward = [&](const nn::Linear<double>& layer, const nn::BatchNorm<double>& bn,
                             const nn::BatchNormCache<double>& cache, const MatrixXd& act,
                             const MatrixXd& d_out, nn::Linear<double>& g_layer,
                             nn::BatchNorm<double>& g_bn) {
    MatrixXd d_act = nn::batchnorm_backward(bn, cache, d_out, g_bn);
    d_act = nn::relu_backward(act, d_act);
    dx += nn::linear_backward(layer, a.x, d_act, g_layer);
  };
  expert_backward(p.shared_expert, p.shared_bn, a.shared_bn, a.shared_act, d_shared_out,
                  g.shared_expert, g.shared_bn);
  expert_backward(p.need_expert, p.need_bn, a.need_bn, a.need_act, d_need_out, g.need_expert,
                  g.need_bn);
  expert_backward(p.way_expert, p.way_bn, a.way_bn, a.way_act, d_way_out, g.way_expert,
                  g.way_bn);

  // Fusion layer.
  MatrixXd d_merge_act = nn::batchnorm_backward(p.merge_bn, a.merge_bn,
                                                MatrixXd(dx.leftCols(c.merge_dim)), g.merge_bn);
  d_merge_act = nn::relu_backward(a.merge_act, d_merge_act);
  MatrixXd d_merge_input = nn::linear_backward(p.merge, a.merge_input, d_merge_act, g.merge);

  MatrixXd d_user_act = nn::batchnorm_backward(p.user_bn, a.user_bn,
                                               MatrixXd(dx.rightCols(c.user_dim)), g.user_bn);
  d_user_act = nn::relu_backward(a.user_act, d_user_act);
  MatrixXd d_user_embedding = nn::linear_backward(p.user, a.user_embedding, d_user_act, g.user);
  d_user_embedding += d_merge_input.middleCols(M.user, c.user_embedding_dim());

  // Embedding tables.
  for (Eigen::Index i = 0; i < B; ++i) {
    const auto k = static_cast<std::size_t>(i);
    if (!c.drop_st) {
      g.embed_poi.row(batch.context_poi[k]) += d_merge_input.row(i).segment(M.poi, e);
      g.embed_aoi.row(batch.context_aoi[k]) += d_merge_input.row(i).segment(M.aoi, e);
      g.embed_city.row(batch.context_city[k]) += d_merge_input.row(i).segment(M.city, e);
    }
    const auto& u = batch.users[k];
    const auto row = d_user_embedding.row(i);
    g.embed_age.row(u.age_band) += row.segment(U.age, e);
    g.embed_gender.row(u.gender) += row.segment(U.gender, e);
    g.embed_city.row(u.resident_city) += row.segment(U.city, e);
    scatter_pooled(g.embed_clicked_need, u.recent_clicked_needs, row.segment(U.clicked, e));
    scatter_pooled(g.embed_ordered_need, u.recent_ordered_needs, row.segment(U.ordered, e));
    scatter_pooled(g.embed_poi, u.top_pois, row.segment(U.pois, e));
    scatter_pooled(g.embed_aoi, u.top_aois, row.segment(U.aois, e));
  }
  return g;
}

void apply_batch_statistics(NeonParams& p, const ForwardActivations& a) {
  if (a.mode != nn::Mode::kTrain) return;
  nn::update_running_statistics(p.merge_bn, a.merge_stats);
  nn::update_running_statistics(p.user_bn, a.user_stats);
  nn::update_running_statistics(p.shared_bn, a.shared_stats);
  nn::update_running_statistics(p.need_bn, a.need_stats);
  nn::update_running_statistics(p.way_bn, a.way_stats);
}

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

NeonModel::NeonModel(ModelConfig config, std::uint64_t seed)
    : config_(config), params_(init_params(config, seed)) {}

NeonModel::NeonModel(ModelConfig config, NeonParams params)
    : config_(config), params_(std::move(params)) {
  config_.validate();
}

BatchScores NeonModel::predict(const FeatureBatch& batch) const {
  return forward(params_, config_, batch, nn::Mode::kInfer, /*keep_cache=*/false).scores;
}

PredictionScores NeonModel::predict_one(const EncodedScene& scene) const {
  const EncodedScene* ptr = &scene;
  return predict(make_batch(std::span<const EncodedScene* const>(&ptr, 1))).row(0);
}

std::array<NeedCategory, kNeedCount> rank_needs(std::span<const double> need_scores) {
  if (need_scores.size() != kNeedCount)
    throw nn::DimensionError("rank_needs: expected 10 scores, got " +
                             std::to_string(need_scores.size()));
  std::array<int, kNeedCount> order{};
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return need_scores[static_cast<std::size_t>(a)] > need_scores[static_cast<std::size_t>(b)];
  });
  std::array<NeedCategory, kNeedCount> ranked{};
  for (std::size_t i = 0; i < kNeedCount; ++i) ranked[i] = need_from_code(order[i]);
  return ranked;
}

std::array<NeedCategory, kNeedCount> rank_needs(const PredictionScores& scores) {
  return rank_needs(std::span<const double>(scores.need_scores));
}

NeedsMeetingWay predict_way(const PredictionScores& scores) {
  return scores.way_scores[1] > scores.way_scores[0] ? NeedsMeetingWay::kInStore
                                                     : NeedsMeetingWay::kViaDelivery;
}

}  // namespace neon
