#pragma once

// Purchase records, user profiles, spatiotemporal contexts and the user
// scenes assembled from them, plus their JSON-lines representations.

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "neon/needs.hpp"

namespace neon {

using json = nlohmann::json;

// Seven reporting periods over the day: 0-4, 5-8, 9-10, 11-12, 13-16, 17-19,
// 20-24.
inline constexpr std::size_t kTimePeriodCount = 7;
inline constexpr std::array<std::string_view, kTimePeriodCount> kTimePeriodLabels = {
    "0-4", "5-8", "9-10", "11-12", "13-16", "17-19", "20-24"};

int time_period_of_hour(int hour);
int parse_time_period(std::string_view label);  // -1 when unknown

enum class WeatherType : int { kSunny = 0, kRainy = 1, kSnowy = 2, kCloudy = 3 };
inline constexpr std::size_t kWeatherTypeCount = 4;
inline constexpr std::array<std::string_view, kWeatherTypeCount> kWeatherLabels = {
    "sunny", "rainy", "snowy", "cloudy"};

enum class TravelState : int {
  kBasedInResidentCity = 0,
  kAboutToTravel = 1,
  kOnTravel = 2,
};
inline constexpr std::size_t kTravelStateCount = 3;
inline constexpr std::array<std::string_view, kTravelStateCount> kTravelLabels = {
    "BasedInResidentCity", "AboutToTravel", "OnTravel"};

inline constexpr std::array<std::string_view, 5> kAgeBands = {"<18", "18-25", "26-35",
                                                              "36-50", ">50"};
inline constexpr std::array<std::string_view, 3> kGenders = {"female", "male",
                                                             "unknown"};

struct UserProfile {
  std::string user_id;
  std::string age_band;
  std::string gender;
  std::string resident_city_id;
};

struct SpatioTemporalContext {
  std::int64_t timestamp = 0;  // epoch seconds, UTC
  int hour = 0;
  int day_of_week = 0;  // 0 = Monday
  bool is_holiday = false;
  int time_period = 0;  // index into kTimePeriodLabels
  std::string poi_id;
  std::string aoi_id;
  std::string city_id;
  WeatherType weather_type = WeatherType::kSunny;
  double temperature_c = 0.0;
  double humidity_pct = 0.0;
  double wind_kmh = 0.0;
  TravelState travel_state = TravelState::kBasedInResidentCity;
};

struct PurchaseRecord {
  std::string profile_ref;  // user_id
  SpatioTemporalContext context;
  NeedCategory need = NeedCategory::kOrderingFoodDelivery;
};

/// A user paired with a context and the user's strictly-earlier purchases.
struct UserScene {
  UserProfile profile;
  SpatioTemporalContext context;
  std::vector<PurchaseRecord> history;  // ascending by timestamp
};

struct LabeledScene {
  UserScene scene;
  NeedCategory need_label = NeedCategory::kOrderingFoodDelivery;
  NeedsMeetingWay way_label = NeedsMeetingWay::kViaDelivery;
};

/// Builds a labeled scene; the way label always follows the need label.
LabeledScene make_labeled_scene(UserScene scene, NeedCategory need);

using ProfileStore = std::unordered_map<std::string, UserProfile>;

/// Throws ValidationError naming the offending field.
void validate_context(const SpatioTemporalContext& ctx);
void validate_profile(const UserProfile& profile);

/// Fills hour, day_of_week and time_period from the timestamp.
SpatioTemporalContext derive_calendar_fields(SpatioTemporalContext ctx);

/// Scene for each record in `indices`: profile looked up by profile_ref,
/// history = records in `corpus` of the same user with strictly earlier
/// timestamps.
std::vector<LabeledScene> build_scenes(const std::vector<PurchaseRecord>& corpus,
                                       const ProfileStore& profiles,
                                       const std::vector<std::size_t>& indices);
std::vector<LabeledScene> build_scenes(const std::vector<PurchaseRecord>& corpus,
                                       const ProfileStore& profiles);

/// History of `user_id` in `corpus` strictly before `before`.
std::vector<PurchaseRecord> history_before(const std::vector<PurchaseRecord>& corpus,
                                           const std::string& user_id,
                                           std::int64_t before);

// JSON conversion. Field names follow the struct members.
void to_json(json& j, const UserProfile& p);
void from_json(const json& j, UserProfile& p);
void to_json(json& j, const SpatioTemporalContext& c);
void from_json(const json& j, SpatioTemporalContext& c);
void to_json(json& j, const PurchaseRecord& r);
void from_json(const json& j, PurchaseRecord& r);

std::vector<PurchaseRecord> read_records(const std::filesystem::path& path);
std::vector<UserProfile> read_profiles(const std::filesystem::path& path);
void write_records(const std::filesystem::path& path,
                   const std::vector<PurchaseRecord>& records);
void write_profiles(const std::filesystem::path& path,
                    const std::vector<UserProfile>& profiles);
ProfileStore make_profile_store(const std::vector<UserProfile>& profiles);

/// Serialized JSON-lines text, used for writing and byte-level comparisons.
std::string records_to_jsonl(const std::vector<PurchaseRecord>& records);
std::string profiles_to_jsonl(const std::vector<UserProfile>& profiles);

}  // namespace neon
