#pragma once

// Synthetic spatiotemporal world with a known conditional need distribution.
// Needs are drawn from softmax(concentration * group logits + strength *
// context-cell logits + user tilt), so the ranking induced by the true
// distribution bounds any model's sort accuracy.

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "neon/features.hpp"

namespace neon {

inline constexpr std::size_t kLocationTypeCount = 3;
inline constexpr std::array<std::string_view, kLocationTypeCount> kLocationTypes = {
    "residential", "workplace", "commercial"};

// Cells index time_period x is_holiday x location type x weather x travel.
inline constexpr std::size_t kCellCount =
    kTimePeriodCount * 2 * kLocationTypeCount * kWeatherTypeCount * kTravelStateCount;

struct CellCoords {
  int time_period = 0;
  bool is_holiday = false;
  int location_type = 0;
  WeatherType weather = WeatherType::kSunny;
  TravelState travel = TravelState::kBasedInResidentCity;
};

// Context keys without the location type: time_period x holiday x weather x travel.
inline constexpr std::size_t kInteractionKeys = kCellCount / kLocationTypeCount;

std::size_t cell_index(const CellCoords& c);
std::size_t interaction_key(std::size_t cell);
CellCoords cell_coords(std::size_t index);

struct GroupDefinition {
  std::string age_band;
  std::string gender;
  double weight = 1.0;
};

struct WorldConfig {
  std::size_t user_count = 5000;
  std::size_t record_count = 50000;
  std::vector<GroupDefinition> groups = default_groups();
  std::size_t city_count = 4;
  std::size_t aois_per_city = 3;
  std::size_t pois_per_aoi = 5;
  double concentration = 1.5;      // scale of the group base logits
  double context_strength = 0.8;   // scale of the context-cell logits
  double way_correlation = 0.6;    // per-cell shift between way blocks
  double user_tilt = 0.3;          // scale of per-user preference factors
  double cell_noise = 0.1;         // unstructured per-cell logit noise
  double group_interaction = 0.6;  // per (group, context key) logit noise
  std::uint64_t seed = 0;

  static std::vector<GroupDefinition> default_groups();

  /// Throws ValidationError naming the offending field.
  void validate() const;
  std::size_t poi_count() const { return city_count * aois_per_city * pois_per_aoi; }
};

json world_config_to_json(const WorldConfig& c);
/// Absent fields keep their defaults; unknown fields are rejected.
WorldConfig world_config_from_json(const json& j);

struct WorldUser {
  UserProfile profile;
  std::size_t group = 0;
  std::array<double, kNeedCount> tilt{};  // additive logits
};

struct WorldModel {
  WorldConfig config;
  std::vector<std::array<double, kNeedCount>> group_logits;  // [G], unscaled
  std::vector<std::array<double, kNeedCount>> cell_logits;   // [kCellCount], unscaled
  // [G * kInteractionKeys], unscaled; keyed by cell without location type.
  std::vector<std::array<double, kNeedCount>> interaction_logits;
  std::vector<double> cell_way_preference;                   // [kCellCount], + favours delivery
  std::vector<double> cell_marginals;                        // [kCellCount]
  std::vector<Simplex> group_cell_distribution;              // [G * kCellCount], no tilt
  std::vector<WorldUser> users;
  std::unordered_map<std::string, std::size_t> user_index;

  /// Group, context and interaction logits for a group in a cell.
  std::array<double, kNeedCount> group_cell_logits(std::size_t group, std::size_t cell) const;
  /// P(need | group, cell) without the personal tilt.
  const Simplex& distribution(std::size_t group, std::size_t cell) const;
  /// P(need | user, cell) including the personal tilt.
  Simplex user_distribution(std::size_t user, std::size_t cell) const;
  /// Population-average P(need | cell).
  Simplex cell_distribution(std::size_t cell) const;
  /// Full need logits for a user in a cell.
  std::array<double, kNeedCount> logits(std::size_t user, std::size_t cell) const;
  std::size_t group_count() const { return group_logits.size(); }
};

WorldModel build_world(const WorldConfig& config);

struct SynthCorpus {
  std::vector<PurchaseRecord> records;
  std::vector<UserProfile> profiles;
};

/// i.i.d. draws: user uniform over the population, cell from the marginals,
/// need from the user's distribution in that cell.
SynthCorpus sample_records(const WorldModel& world, std::size_t n, std::uint64_t seed);

/// Need counts of n draws in one cell with users drawn as in sample_records;
/// their expectation is n * cell_distribution(cell).
std::array<std::size_t, kNeedCount> sample_need_counts_in_cell(const WorldModel& world,
                                                              std::size_t cell, std::size_t n,
                                                              std::uint64_t seed);

std::string poi_id(std::size_t k);
std::string aoi_id(std::size_t k);
std::string city_id(std::size_t k);
/// Location type of a world POI id. Throws ValidationError on foreign ids.
int location_type_of_poi(std::string_view poi);
/// Cell of a context produced by this world.
std::size_t cell_of(const SpatioTemporalContext& ctx);

/// True need logits per scene; their ranking is the Bayes-optimal one.
Eigen::MatrixXd oracle_need_scores(const WorldModel& world, const std::vector<LabeledScene>& scenes);
/// Sort accuracy of the true-distribution ranking. Throws ValidationError on
/// scenes whose user or location is not part of the world.
double bayes_optimal_sa(const WorldModel& world, const std::vector<LabeledScene>& scenes);

json world_to_json(const WorldModel& world);
WorldModel world_from_json(const json& doc);
void save_world(const WorldModel& world, const std::filesystem::path& path);
WorldModel load_world(const std::filesystem::path& path);

}  // namespace neon
