#pragma once

// Feature mining: sparse user features, dense spatiotemporal context
// features, and corpus-level group behavior statistics (group shares,
// time-period popularity, group-in-context shares and need association
// rules).

#include <Eigen/Core>

#include <array>
#include <cstddef>
#include <filesystem>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "neon/records.hpp"

namespace neon {

using Simplex = std::array<double, kNeedCount>;

/// Closed vocabulary for one categorical family. Index 0 is reserved for
/// out-of-vocabulary values.
class Vocabulary {
 public:
  static constexpr int kOov = 0;
  static constexpr std::string_view kOovToken = "<oov>";

  Vocabulary();
  explicit Vocabulary(const std::vector<std::string>& tokens);

  /// Adds a token if absent; returns its index.
  int add(const std::string& token);
  int lookup(const std::string& token) const;  // kOov when absent
  bool contains(const std::string& token) const;
  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

/// Counts values that fell back to the OOV index during encoding.
struct EncodeDiagnostics {
  std::size_t oov_count = 0;
};

struct FeatureSchema {
  Vocabulary age_band;
  Vocabulary gender;
  Vocabulary city;
  Vocabulary poi;
  Vocabulary aoi;
  // Standardization constants for temperature, humidity and wind, computed
  // on the training split.
  std::array<double, 3> weather_mean{0.0, 0.0, 0.0};
  std::array<double, 3> weather_std{1.0, 1.0, 1.0};
  std::size_t recent_k = 10;
  std::size_t top_locations = 50;
};

FeatureSchema build_schema(const std::vector<PurchaseRecord>& train_records,
                           const std::vector<UserProfile>& profiles);

// ---------------------------------------------------------------------------
// User features
// ---------------------------------------------------------------------------

struct SparseUserFeatures {
  int age_band = Vocabulary::kOov;
  int gender = Vocabulary::kOov;
  int resident_city = Vocabulary::kOov;
  // The corpus holds purchases only, so clicks and orders share one source.
  std::vector<int> recent_clicked_needs;
  std::vector<int> recent_ordered_needs;
  Simplex historical_share{};  // all zero for an empty history
  std::vector<int> top_pois;
  std::vector<int> top_aois;
};

/// Purchase share per need over a history; all zero when empty.
Simplex historical_share(const std::vector<PurchaseRecord>& history);

SparseUserFeatures encode_user(const UserScene& scene, const FeatureSchema& schema,
                               EncodeDiagnostics* diagnostics = nullptr);

// ---------------------------------------------------------------------------
// Context features
// ---------------------------------------------------------------------------

/// Layout of the dense context block.
namespace context_layout {
inline constexpr Eigen::Index kHour = 0;            // 24 one-hot
inline constexpr Eigen::Index kDay = 24;            // 7 one-hot
inline constexpr Eigen::Index kHoliday = 31;        // 1 flag
inline constexpr Eigen::Index kTimePeriod = 32;     // 7 one-hot
inline constexpr Eigen::Index kWeatherReals = 39;   // temperature, humidity, wind
inline constexpr Eigen::Index kWeatherType = 42;    // 4 one-hot
inline constexpr Eigen::Index kTravelState = 46;    // 3 one-hot
inline constexpr Eigen::Index kDim = 49;
}  // namespace context_layout

struct ContextFeatureVector {
  Eigen::VectorXd dense;  // context_layout::kDim
  int poi = Vocabulary::kOov;
  int aoi = Vocabulary::kOov;
  int city = Vocabulary::kOov;
};

ContextFeatureVector encode_context(const SpatioTemporalContext& ctx,
                                    const FeatureSchema& schema,
                                    EncodeDiagnostics* diagnostics = nullptr);

// ---------------------------------------------------------------------------
// Group behavior features
// ---------------------------------------------------------------------------

struct AssociationRule {
  NeedCategory antecedent;
  NeedCategory consequent;
  double support = 0.0;
  double confidence = 0.0;
  double lift = 0.0;
};

/// One basket per user (the distinct needs the user purchased). Returns every
/// ordered pair with support >= min_support and confidence >= min_confidence,
/// sorted by lift descending, then by (antecedent, consequent) code.
std::vector<AssociationRule> mine_rules(const std::vector<PurchaseRecord>& corpus,
                                        double min_support, double min_confidence);

struct GroupTableConfig {
  bool segment_by_city = false;  // adds resident city to the age x gender cross
  double min_support = 0.05;
  double min_confidence = 0.3;
};

inline constexpr std::string_view kFallbackKey = "*";

/// Every row is a simplex over the ten needs. Each map carries a fallback row
/// under kFallbackKey (the global distribution) used for unseen keys.
struct GroupFeatureTables {
  GroupTableConfig config;
  std::map<std::string, Simplex> group_aggregated;
  std::map<std::string, Simplex> time_popularity;
  std::map<std::string, Simplex> group_context;
  std::vector<AssociationRule> rules;

  const Simplex& global() const { return group_aggregated.at(std::string(kFallbackKey)); }
};

/// Keys of the groups a profile belongs to: the full segment first, then the
/// age band and gender marginals.
std::vector<std::string> group_keys(const UserProfile& profile, const GroupTableConfig& config);
std::string context_cell_key(const SpatioTemporalContext& ctx);
std::string period_key(int time_period);
std::string holiday_key(bool is_holiday);

GroupFeatureTables build_group_tables(const std::vector<PurchaseRecord>& corpus,
                                      const ProfileStore& profiles,
                                      const GroupTableConfig& config = {});

/// historical_share plus confidence-weighted consequent mass for every rule
/// whose antecedent appears in the share, renormalized. An empty history
/// yields the fallback distribution.
Simplex rule_augmented_share(const Simplex& share, const GroupFeatureTables& tables);

/// Layout of the dense group block.
namespace group_layout {
inline constexpr Eigen::Index kGroupAggregated = 0;   // 3 rows: segment, age, gender
inline constexpr Eigen::Index kTimePopularity = 30;   // 2 rows: period, holiday
inline constexpr Eigen::Index kGroupContext = 50;     // 1 row
inline constexpr Eigen::Index kRuleAugmented = 60;    // 1 row
inline constexpr Eigen::Index kDim = 70;
}  // namespace group_layout

Eigen::VectorXd assemble_group_vector(const UserScene& scene, const GroupFeatureTables& tables);

// ---------------------------------------------------------------------------
// Bundle
// ---------------------------------------------------------------------------

inline constexpr int kFeatureFormatVersion = 1;

/// Everything derived from the training split that encoding needs, plus the
/// split parameters that produced it.
struct FeatureBundle {
  FeatureSchema schema;
  GroupFeatureTables tables;
  double split_fraction = 0.8;
  std::uint64_t split_seed = 0;
  std::size_t corpus_size = 0;
};

struct EncodedScene {
  SparseUserFeatures user;
  ContextFeatureVector context;
  Eigen::VectorXd group;
};

EncodedScene encode_scene(const UserScene& scene, const FeatureBundle& bundle,
                          EncodeDiagnostics* diagnostics = nullptr);

json bundle_to_json(const FeatureBundle& bundle);
FeatureBundle bundle_from_json(const json& doc);
void save_bundle(const FeatureBundle& bundle, const std::filesystem::path& path);
FeatureBundle load_bundle(const std::filesystem::path& path);

bool is_simplex(const Simplex& s, double tol = 1e-9);

}  // namespace neon
