#include "neon/features.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

namespace neon {

// ---------------------------------------------------------------------------
// Vocabulary / schema
// ---------------------------------------------------------------------------

Vocabulary::Vocabulary() { add(std::string(kOovToken)); }

Vocabulary::Vocabulary(const std::vector<std::string>& tokens) : Vocabulary() {
  for (const auto& t : tokens) add(t);
}

int Vocabulary::add(const std::string& token) {
  auto [it, inserted] = index_.emplace(token, static_cast<int>(tokens_.size()));
  if (inserted) tokens_.push_back(token);
  return it->second;
}

int Vocabulary::lookup(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? kOov : it->second;
}

bool Vocabulary::contains(const std::string& token) const { return index_.count(token) > 0; }

namespace {

Vocabulary sorted_vocabulary(const std::set<std::string>& tokens) {
  return Vocabulary(std::vector<std::string>(tokens.begin(), tokens.end()));
}

int lookup_counted(const Vocabulary& vocab, const std::string& token,
                   EncodeDiagnostics* diagnostics) {
  const int idx = vocab.lookup(token);
  if (idx == Vocabulary::kOov && diagnostics != nullptr) ++diagnostics->oov_count;
  return idx;
}

}  // namespace

FeatureSchema build_schema(const std::vector<PurchaseRecord>& train_records,
                           const std::vector<UserProfile>& profiles) {
  FeatureSchema schema;
  for (auto band : kAgeBands) schema.age_band.add(std::string(band));
  for (auto g : kGenders) schema.gender.add(std::string(g));

  std::set<std::string> cities, pois, aois;
  for (const auto& p : profiles) cities.insert(p.resident_city_id);
  for (const auto& r : train_records) {
    cities.insert(r.context.city_id);
    pois.insert(r.context.poi_id);
    aois.insert(r.context.aoi_id);
  }
  schema.city = sorted_vocabulary(cities);
  schema.poi = sorted_vocabulary(pois);
  schema.aoi = sorted_vocabulary(aois);

  if (!train_records.empty()) {
    std::array<double, 3> sum{}, sq{};
    for (const auto& r : train_records) {
      const std::array<double, 3> v{r.context.temperature_c, r.context.humidity_pct,
                                    r.context.wind_kmh};
      for (int k = 0; k < 3; ++k) sum[k] += v[k];
    }
    const double n = static_cast<double>(train_records.size());
    for (int k = 0; k < 3; ++k) schema.weather_mean[k] = sum[k] / n;
    for (const auto& r : train_records) {
      const std::array<double, 3> v{r.context.temperature_c, r.context.humidity_pct,
                                    r.context.wind_kmh};
      for (int k = 0; k < 3; ++k) {
        const double d = v[k] - schema.weather_mean[k];
        sq[k] += d * d;
      }
    }
    for (int k = 0; k < 3; ++k) {
      const double sd = std::sqrt(sq[k] / n);
      schema.weather_std[k] = sd > 1e-12 ? sd : 1.0;
    }
  }
  return schema;
}

// ---------------------------------------------------------------------------
// User features
// ---------------------------------------------------------------------------

Simplex historical_share(const std::vector<PurchaseRecord>& history) {
  Simplex share{};
  if (history.empty()) return share;
  for (const auto& r : history) share[code(r.need)] += 1.0;
  const double n = static_cast<double>(history.size());
  for (double& s : share) s /= n;
  return share;
}

namespace {

std::vector<int> top_by_count(const std::map<int, std::size_t>& counts, std::size_t limit) {
  std::vector<std::pair<int, std::size_t>> items(counts.begin(), counts.end());
  std::stable_sort(items.begin(), items.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<int> out;
  for (std::size_t i = 0; i < items.size() && i < limit; ++i) out.push_back(items[i].first);
  return out;
}

}  // namespace

SparseUserFeatures encode_user(const UserScene& scene, const FeatureSchema& schema,
                               EncodeDiagnostics* diagnostics) {
  SparseUserFeatures f;
  f.age_band = lookup_counted(schema.age_band, scene.profile.age_band, diagnostics);
  f.gender = lookup_counted(schema.gender, scene.profile.gender, diagnostics);
  f.resident_city = lookup_counted(schema.city, scene.profile.resident_city_id, diagnostics);

  const auto& history = scene.history;
  f.historical_share = historical_share(history);

  std::set<int> recent;
  const std::size_t start = history.size() > schema.recent_k ? history.size() - schema.recent_k : 0;
  for (std::size_t i = start; i < history.size(); ++i) recent.insert(code(history[i].need));
  f.recent_ordered_needs.assign(recent.begin(), recent.end());
  f.recent_clicked_needs = f.recent_ordered_needs;

  std::map<int, std::size_t> poi_counts, aoi_counts;
  for (const auto& r : history) {
    ++poi_counts[lookup_counted(schema.poi, r.context.poi_id, diagnostics)];
    ++aoi_counts[lookup_counted(schema.aoi, r.context.aoi_id, diagnostics)];
  }
  f.top_pois = top_by_count(poi_counts, schema.top_locations);
  f.top_aois = top_by_count(aoi_counts, schema.top_locations);
  return f;
}

// ---------------------------------------------------------------------------
// Context features
// ---------------------------------------------------------------------------

ContextFeatureVector encode_context(const SpatioTemporalContext& ctx,
                                    const FeatureSchema& schema,
                                    EncodeDiagnostics* diagnostics) {
  validate_context(ctx);
  namespace L = context_layout;
  ContextFeatureVector out;
  out.dense = Eigen::VectorXd::Zero(L::kDim);
  out.dense(L::kHour + ctx.hour) = 1.0;
  out.dense(L::kDay + ctx.day_of_week) = 1.0;
  out.dense(L::kHoliday) = ctx.is_holiday ? 1.0 : 0.0;
  out.dense(L::kTimePeriod + ctx.time_period) = 1.0;
  const std::array<double, 3> reals{ctx.temperature_c, ctx.humidity_pct, ctx.wind_kmh};
  for (int k = 0; k < 3; ++k)
    out.dense(L::kWeatherReals + k) =
        (reals[k] - schema.weather_mean[k]) / schema.weather_std[k];
  out.dense(L::kWeatherType + static_cast<int>(ctx.weather_type)) = 1.0;
  out.dense(L::kTravelState + static_cast<int>(ctx.travel_state)) = 1.0;
  out.poi = lookup_counted(schema.poi, ctx.poi_id, diagnostics);
  out.aoi = lookup_counted(schema.aoi, ctx.aoi_id, diagnostics);
  out.city = lookup_counted(schema.city, ctx.city_id, diagnostics);
  return out;
}

// ---------------------------------------------------------------------------
// Association rules
// ---------------------------------------------------------------------------

std::vector<AssociationRule> mine_rules(const std::vector<PurchaseRecord>& corpus,
                                        double min_support, double min_confidence) {
  std::map<std::string, std::array<bool, kNeedCount>> baskets;
  for (const auto& r : corpus) baskets[r.profile_ref][code(r.need)] = true;

  std::array<std::size_t, kNeedCount> single{};
  std::array<std::array<std::size_t, kNeedCount>, kNeedCount> pair{};
  for (const auto& [user, basket] : baskets) {
    for (std::size_t a = 0; a < kNeedCount; ++a) {
      if (!basket[a]) continue;
      ++single[a];
      for (std::size_t b = 0; b < kNeedCount; ++b)
        if (b != a && basket[b]) ++pair[a][b];
    }
  }

  std::vector<AssociationRule> rules;
  if (baskets.empty()) return rules;
  const double n = static_cast<double>(baskets.size());
  for (std::size_t a = 0; a < kNeedCount; ++a) {
    if (single[a] == 0) continue;
    for (std::size_t b = 0; b < kNeedCount; ++b) {
      if (a == b || pair[a][b] == 0) continue;
      const double support = static_cast<double>(pair[a][b]) / n;
      const double confidence =
          static_cast<double>(pair[a][b]) / static_cast<double>(single[a]);
      if (support < min_support || confidence < min_confidence) continue;
      const double lift = confidence / (static_cast<double>(single[b]) / n);
      rules.push_back({need_from_code(static_cast<int>(a)), need_from_code(static_cast<int>(b)),
                       support, confidence, lift});
    }
  }
  std::sort(rules.begin(), rules.end(), [](const auto& x, const auto& y) {
    if (x.lift != y.lift) return x.lift > y.lift;
    if (x.antecedent != y.antecedent) return code(x.antecedent) < code(y.antecedent);
    return code(x.consequent) < code(y.consequent);
  });
  return rules;
}

// ---------------------------------------------------------------------------
// Group tables
// ---------------------------------------------------------------------------

std::vector<std::string> group_keys(const UserProfile& profile,
                                    const GroupTableConfig& config) {
  std::string segment = "age=" + profile.age_band + "|gender=" + profile.gender;
  if (config.segment_by_city) segment += "|city=" + profile.resident_city_id;
  return {segment, "age=" + profile.age_band, "gender=" + profile.gender};
}

std::string context_cell_key(const SpatioTemporalContext& ctx) {
  return "tp=" + std::string(kTimePeriodLabels.at(ctx.time_period)) +
         "|hol=" + (ctx.is_holiday ? "1" : "0") +
         "|wx=" + std::string(kWeatherLabels.at(static_cast<int>(ctx.weather_type))) +
         "|tr=" + std::string(kTravelLabels.at(static_cast<int>(ctx.travel_state)));
}

std::string period_key(int time_period) {
  return "period=" + std::string(kTimePeriodLabels.at(time_period));
}

std::string holiday_key(bool is_holiday) { return is_holiday ? "holiday=1" : "holiday=0"; }

namespace {

using CountRow = std::array<double, kNeedCount>;

Simplex normalize(const CountRow& counts) {
  double total = 0.0;
  for (double c : counts) total += c;
  Simplex s{};
  for (std::size_t i = 0; i < kNeedCount; ++i) s[i] = counts[i] / total;
  return s;
}

std::map<std::string, Simplex> to_shares(const std::map<std::string, CountRow>& counts,
                                         const Simplex& fallback) {
  std::map<std::string, Simplex> out;
  for (const auto& [key, row] : counts) out.emplace(key, normalize(row));
  out[std::string(kFallbackKey)] = fallback;
  return out;
}

const Simplex& lookup_or_fallback(const std::map<std::string, Simplex>& table,
                                  const std::string& key) {
  auto it = table.find(key);
  if (it != table.end()) return it->second;
  return table.at(std::string(kFallbackKey));
}

}  // namespace

GroupFeatureTables build_group_tables(const std::vector<PurchaseRecord>& corpus,
                                      const ProfileStore& profiles,
                                      const GroupTableConfig& config) {
  if (corpus.empty()) throw ValidationError("build_group_tables: empty corpus");

  CountRow global{};
  std::map<std::string, CountRow> group_counts, time_counts, context_counts;
  for (const auto& r : corpus) {
    auto pit = profiles.find(r.profile_ref);
    if (pit == profiles.end())
      throw ValidationError("build_group_tables: unknown user_id '" + r.profile_ref + "'");
    const int n = code(r.need);
    global[n] += 1.0;
    const auto keys = group_keys(pit->second, config);
    for (const auto& k : keys) group_counts[k][n] += 1.0;
    time_counts[period_key(r.context.time_period)][n] += 1.0;
    time_counts[holiday_key(r.context.is_holiday)][n] += 1.0;
    context_counts[keys.front() + "|" + context_cell_key(r.context)][n] += 1.0;
  }

  GroupFeatureTables tables;
  tables.config = config;
  const Simplex fallback = normalize(global);
  tables.group_aggregated = to_shares(group_counts, fallback);
  tables.time_popularity = to_shares(time_counts, fallback);
  tables.group_context = to_shares(context_counts, fallback);
  tables.rules = mine_rules(corpus, config.min_support, config.min_confidence);
  return tables;
}

Simplex rule_augmented_share(const Simplex& share, const GroupFeatureTables& tables) {
  double total = 0.0;
  for (double s : share) total += s;
  if (total <= 0.0) return tables.global();
  Simplex augmented = share;
  for (const auto& rule : tables.rules) {
    const double a = share[code(rule.antecedent)];
    if (a > 0.0) augmented[code(rule.consequent)] += rule.confidence * a;
  }
  double sum = 0.0;
  for (double v : augmented) sum += v;
  for (double& v : augmented) v /= sum;
  return augmented;
}

Eigen::VectorXd assemble_group_vector(const UserScene& scene, const GroupFeatureTables& tables) {
  namespace L = group_layout;
  Eigen::VectorXd v(L::kDim);
  auto put = [&v](Eigen::Index offset, const Simplex& s) {
    for (std::size_t i = 0; i < kNeedCount; ++i) v(offset + static_cast<Eigen::Index>(i)) = s[i];
  };
  const auto keys = group_keys(scene.profile, tables.config);
  for (std::size_t g = 0; g < keys.size(); ++g)
    put(L::kGroupAggregated + static_cast<Eigen::Index>(g * kNeedCount),
        lookup_or_fallback(tables.group_aggregated, keys[g]));
  put(L::kTimePopularity,
      lookup_or_fallback(tables.time_popularity, period_key(scene.context.time_period)));
  put(L::kTimePopularity + kNeedCount,
      lookup_or_fallback(tables.time_popularity, holiday_key(scene.context.is_holiday)));
  put(L::kGroupContext,
      lookup_or_fallback(tables.group_context,
                         keys.front() + "|" + context_cell_key(scene.context)));
  put(L::kRuleAugmented, rule_augmented_share(historical_share(scene.history), tables));
  return v;
}

// ---------------------------------------------------------------------------
// Bundle
// ---------------------------------------------------------------------------

EncodedScene encode_scene(const UserScene& scene, const FeatureBundle& bundle,
                          EncodeDiagnostics* diagnostics) {
  EncodedScene e;
  e.user = encode_user(scene, bundle.schema, diagnostics);
  e.context = encode_context(scene.context, bundle.schema, diagnostics);
  e.group = assemble_group_vector(scene, bundle.tables);
  return e;
}

bool is_simplex(const Simplex& s, double tol) {
  double total = 0.0;
  for (double v : s) {
    if (!(v >= 0.0) || !std::isfinite(v)) return false;
    total += v;
  }
  return std::abs(total - 1.0) <= tol;
}

namespace {

json vocab_json(const Vocabulary& v) {
  // Index 0 is implicit.
  return json(std::vector<std::string>(v.tokens().begin() + 1, v.tokens().end()));
}

Vocabulary vocab_from(const json& j, const char* name) {
  if (!j.contains(name) || !j.at(name).is_array())
    throw ValidationError(std::string("feature bundle: missing vocabulary '") + name + "'");
  return Vocabulary(j.at(name).get<std::vector<std::string>>());
}

json table_json(const std::map<std::string, Simplex>& table) {
  json out = json::object();
  for (const auto& [k, s] : table) out[k] = s;
  return out;
}

std::map<std::string, Simplex> table_from(const json& j, const char* name) {
  if (!j.contains(name) || !j.at(name).is_object())
    throw ValidationError(std::string("feature bundle: missing table '") + name + "'");
  std::map<std::string, Simplex> out;
  for (const auto& [k, v] : j.at(name).items()) {
    Simplex s = v.get<Simplex>();
    if (!is_simplex(s))
      throw ValidationError(std::string("feature bundle: row '") + k + "' of '" + name +
                            "' is not a simplex");
    out.emplace(k, s);
  }
  if (!out.count(std::string(kFallbackKey)))
    throw ValidationError(std::string("feature bundle: table '") + name + "' lacks fallback row");
  return out;
}

}  // namespace

json bundle_to_json(const FeatureBundle& b) {
  json rules = json::array();
  for (const auto& r : b.tables.rules)
    rules.push_back({{"antecedent", to_string(r.antecedent)},
                     {"consequent", to_string(r.consequent)},
                     {"support", r.support},
                     {"confidence", r.confidence},
                     {"lift", r.lift}});
  return json{
      {"format_version", kFeatureFormatVersion},
      {"split", {{"fraction", b.split_fraction}, {"seed", b.split_seed}, {"corpus_size", b.corpus_size}}},
      {"schema",
       {{"age_band", vocab_json(b.schema.age_band)},
        {"gender", vocab_json(b.schema.gender)},
        {"city", vocab_json(b.schema.city)},
        {"poi", vocab_json(b.schema.poi)},
        {"aoi", vocab_json(b.schema.aoi)},
        {"weather_mean", b.schema.weather_mean},
        {"weather_std", b.schema.weather_std},
        {"recent_k", b.schema.recent_k},
        {"top_locations", b.schema.top_locations}}},
      {"tables",
       {{"config",
         {{"segment_by_city", b.tables.config.segment_by_city},
          {"min_support", b.tables.config.min_support},
          {"min_confidence", b.tables.config.min_confidence}}},
        {"group_aggregated", table_json(b.tables.group_aggregated)},
        {"time_popularity", table_json(b.tables.time_popularity)},
        {"group_context", table_json(b.tables.group_context)},
        {"rules", rules}}}};
}

FeatureBundle bundle_from_json(const json& doc) {
  try {
    if (!doc.is_object() || !doc.contains("format_version"))
      throw ValidationError("feature bundle: missing format_version");
    const int version = doc.at("format_version").get<int>();
    if (version != kFeatureFormatVersion)
      throw ValidationError("feature bundle: unsupported format_version " +
                            std::to_string(version) + " (expected " +
                            std::to_string(kFeatureFormatVersion) + ")");
    FeatureBundle b;
    const auto& split = doc.at("split");
    b.split_fraction = split.at("fraction").get<double>();
    b.split_seed = split.at("seed").get<std::uint64_t>();
    b.corpus_size = split.at("corpus_size").get<std::size_t>();

    const auto& s = doc.at("schema");
    b.schema.age_band = vocab_from(s, "age_band");
    b.schema.gender = vocab_from(s, "gender");
    b.schema.city = vocab_from(s, "city");
    b.schema.poi = vocab_from(s, "poi");
    b.schema.aoi = vocab_from(s, "aoi");
    b.schema.weather_mean = s.at("weather_mean").get<std::array<double, 3>>();
    b.schema.weather_std = s.at("weather_std").get<std::array<double, 3>>();
    b.schema.recent_k = s.at("recent_k").get<std::size_t>();
    b.schema.top_locations = s.at("top_locations").get<std::size_t>();

    const auto& t = doc.at("tables");
    const auto& c = t.at("config");
    b.tables.config.segment_by_city = c.at("segment_by_city").get<bool>();
    b.tables.config.min_support = c.at("min_support").get<double>();
    b.tables.config.min_confidence = c.at("min_confidence").get<double>();
    b.tables.group_aggregated = table_from(t, "group_aggregated");
    b.tables.time_popularity = table_from(t, "time_popularity");
    b.tables.group_context = table_from(t, "group_context");
    for (const auto& r : t.at("rules")) {
      auto a = parse_need(r.at("antecedent").get<std::string>());
      auto q = parse_need(r.at("consequent").get<std::string>());
      if (!a || !q) throw ValidationError("feature bundle: rule names an unknown need");
      b.tables.rules.push_back({*a, *q, r.at("support").get<double>(),
                                r.at("confidence").get<double>(), r.at("lift").get<double>()});
    }
    return b;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("feature bundle: malformed document: ") + e.what());
  }
}

void save_bundle(const FeatureBundle& bundle, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write " + path.string());
  out << bundle_to_json(bundle).dump() << '\n';
}

FeatureBundle load_bundle(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ValidationError(path.string() + ": malformed JSON: " + e.what());
  }
  return bundle_from_json(doc);
}

}  // namespace neon
