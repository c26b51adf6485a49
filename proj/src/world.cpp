#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "neon/metrics.hpp"
#include "neon/rng.hpp"
#include "neon/world.hpp"

namespace neon {

namespace {

using N = NeedCategory;
using Logits = std::array<double, kNeedCount>;

constexpr std::int64_t kYearStart = 1640995200;  // 2022-01-01T00:00:00Z, a Saturday
constexpr int kYearDays = 365;
constexpr int kYearStartWeekday = 5;

constexpr std::array<std::pair<int, int>, kTimePeriodCount> kPeriodHours = {
    {{0, 4}, {5, 8}, {9, 10}, {11, 12}, {13, 16}, {17, 19}, {20, 23}}};

constexpr std::array<double, kTimePeriodCount> kPeriodWeights = {0.08, 0.12, 0.14, 0.20,
                                                                 0.16, 0.18, 0.12};
constexpr std::array<double, kWeatherTypeCount> kWeatherWeights = {0.40, 0.25, 0.10, 0.25};
constexpr std::array<double, kTravelStateCount> kTravelWeights = {0.70, 0.15, 0.15};
constexpr double kHolidayShare = 2.0 / 7.0;

// Needs sharing a latent preference factor in the user tilt.
const std::vector<std::vector<N>>& tilt_clusters() {
  static const std::vector<std::vector<N>> clusters = {
      {N::kHairDressing, N::kBeauty},
      {N::kBookingHotel, N::kTourism},
      {N::kEatingInRestaurant, N::kEntertainment},
      {N::kOrderingFoodDelivery, N::kGroceryShoppingOnline},
      {N::kBuyingMedicine},
      {N::kSpecialtyShoppingOnline},
  };
  return clusters;
}

void add(Logits& l, N need, double v) { l[static_cast<std::size_t>(code(need))] += v; }

// Planted context effects.
Logits planted_cell_logits(const CellCoords& c) {
  Logits l{};
  switch (c.time_period) {
    case 0: add(l, N::kOrderingFoodDelivery, 1.0); add(l, N::kEntertainment, 0.5);
            add(l, N::kBuyingMedicine, 0.8); break;
    case 1: add(l, N::kGroceryShoppingOnline, 1.2); add(l, N::kBuyingMedicine, 0.5); break;
    case 2: add(l, N::kSpecialtyShoppingOnline, 1.2); add(l, N::kGroceryShoppingOnline, 0.5); break;
    case 3: add(l, N::kOrderingFoodDelivery, 2.5); add(l, N::kEatingInRestaurant, 1.0); break;
    case 4: add(l, N::kSpecialtyShoppingOnline, 1.0); add(l, N::kBeauty, 0.8);
            add(l, N::kHairDressing, 0.8); break;
    case 5: add(l, N::kEatingInRestaurant, 2.0); add(l, N::kOrderingFoodDelivery, 1.0);
            add(l, N::kGroceryShoppingOnline, 0.5); break;
    default: add(l, N::kEntertainment, 1.5); add(l, N::kOrderingFoodDelivery, 0.8); break;
  }
  if (c.is_holiday) {
    add(l, N::kTourism, 1.5);
    add(l, N::kBookingHotel, 1.0);
    add(l, N::kEntertainment, 1.0);
    add(l, N::kEatingInRestaurant, 0.5);
  } else {
    add(l, N::kOrderingFoodDelivery, 0.3);
    add(l, N::kSpecialtyShoppingOnline, 0.3);
  }
  switch (c.location_type) {
    case 0: add(l, N::kGroceryShoppingOnline, 1.0); add(l, N::kOrderingFoodDelivery, 0.5);
            add(l, N::kBuyingMedicine, 0.5); break;
    case 1: add(l, N::kOrderingFoodDelivery, 1.5); add(l, N::kSpecialtyShoppingOnline, 0.3); break;
    default: add(l, N::kEatingInRestaurant, 1.0); add(l, N::kBeauty, 0.8);
             add(l, N::kHairDressing, 0.8); add(l, N::kEntertainment, 0.5); break;
  }
  switch (c.weather) {
    case WeatherType::kSunny: add(l, N::kTourism, 0.8); add(l, N::kEntertainment, 0.3); break;
    case WeatherType::kRainy: add(l, N::kOrderingFoodDelivery, 1.2);
                              add(l, N::kGroceryShoppingOnline, 0.8); break;
    case WeatherType::kSnowy: add(l, N::kOrderingFoodDelivery, 1.0);
                              add(l, N::kGroceryShoppingOnline, 1.0);
                              add(l, N::kBuyingMedicine, 0.8); break;
    case WeatherType::kCloudy: break;
  }
  switch (c.travel) {
    case TravelState::kBasedInResidentCity: break;
    case TravelState::kAboutToTravel: add(l, N::kBookingHotel, 2.0); add(l, N::kTourism, 1.0);
                                      add(l, N::kSpecialtyShoppingOnline, 0.5); break;
    case TravelState::kOnTravel: add(l, N::kBookingHotel, 1.5); add(l, N::kTourism, 2.0);
                                 add(l, N::kEatingInRestaurant, 0.8); break;
  }
  if (c.weather == WeatherType::kRainy && c.time_period == 3) add(l, N::kOrderingFoodDelivery, 1.0);
  if (c.is_holiday && c.travel == TravelState::kOnTravel) add(l, N::kTourism, 1.0);
  if (c.weather == WeatherType::kSnowy && c.time_period == 0) add(l, N::kBuyingMedicine, 1.0);
  return l;
}

// Positive values favour the via-delivery block.
double planted_way_preference(const CellCoords& c) {
  double w = 0.0;
  if (c.weather == WeatherType::kRainy || c.weather == WeatherType::kSnowy) w += 1.0;
  if (c.weather == WeatherType::kSunny) w -= 0.5;
  if (c.location_type == 0) w += 0.5;
  if (c.location_type == 2) w -= 0.5;
  if (c.travel == TravelState::kOnTravel) w -= 0.5;
  if (c.is_holiday) w -= 0.3;
  return w;
}

Simplex softmax(const Logits& l) {
  const double m = *std::max_element(l.begin(), l.end());
  Simplex p{};
  double total = 0.0;
  for (std::size_t i = 0; i < kNeedCount; ++i) {
    p[i] = std::exp(l[i] - m);
    total += p[i];
  }
  for (double& v : p) v /= total;
  return p;
}

std::size_t parse_suffix(std::string_view id, std::string_view prefix) {
  if (id.substr(0, prefix.size()) != prefix)
    throw ValidationError("'" + std::string(id) + "' is not a world " + std::string(prefix) + " id");
  std::size_t k = 0;
  const char* first = id.data() + prefix.size();
  const char* last = id.data() + id.size();
  auto [ptr, ec] = std::from_chars(first, last, k);
  if (ec != std::errc() || ptr != last || first == last)
    throw ValidationError("'" + std::string(id) + "' is not a world " + std::string(prefix) + " id");
  return k;
}

}  // namespace

std::size_t cell_index(const CellCoords& c) {
  std::size_t i = static_cast<std::size_t>(c.time_period);
  i = i * 2 + (c.is_holiday ? 1 : 0);
  i = i * kLocationTypeCount + static_cast<std::size_t>(c.location_type);
  i = i * kWeatherTypeCount + static_cast<std::size_t>(c.weather);
  i = i * kTravelStateCount + static_cast<std::size_t>(c.travel);
  return i;
}

std::size_t interaction_key(std::size_t cell) {
  if (cell >= kCellCount) throw ValidationError("cell index out of range");
  const std::size_t travel_weather = cell % (kTravelStateCount * kWeatherTypeCount);
  const std::size_t period_holiday = cell / (kTravelStateCount * kWeatherTypeCount * kLocationTypeCount);
  return period_holiday * kTravelStateCount * kWeatherTypeCount + travel_weather;
}

CellCoords cell_coords(std::size_t index) {
  if (index >= kCellCount) throw ValidationError("cell index out of range");
  CellCoords c;
  c.travel = static_cast<TravelState>(index % kTravelStateCount);
  index /= kTravelStateCount;
  c.weather = static_cast<WeatherType>(index % kWeatherTypeCount);
  index /= kWeatherTypeCount;
  c.location_type = static_cast<int>(index % kLocationTypeCount);
  index /= kLocationTypeCount;
  c.is_holiday = (index % 2) == 1;
  c.time_period = static_cast<int>(index / 2);
  return c;
}

std::vector<GroupDefinition> WorldConfig::default_groups() {
  std::vector<GroupDefinition> g;
  for (const char* age : {"18-25", "26-35", "36-50"})
    for (const char* gender : {"female", "male"}) g.push_back({age, gender, 1.0});
  return g;
}

void WorldConfig::validate() const {
  if (user_count == 0) throw ValidationError("world config: user_count must be positive");
  if (record_count == 0) throw ValidationError("world config: record_count must be positive");
  if (groups.empty()) throw ValidationError("world config: groups must not be empty");
  for (std::size_t i = 0; i < groups.size(); ++i) {
    const auto& g = groups[i];
    UserProfile p{"probe", g.age_band, g.gender, "city_0"};
    try {
      validate_profile(p);
    } catch (const ValidationError& e) {
      throw ValidationError("world config: groups[" + std::to_string(i) + "]: " + e.what());
    }
    if (!(g.weight > 0.0) || !std::isfinite(g.weight))
      throw ValidationError("world config: groups[" + std::to_string(i) +
                            "].weight must be positive");
  }
  if (city_count < 2) throw ValidationError("world config: city_count must be at least 2");
  if (aois_per_city == 0) throw ValidationError("world config: aois_per_city must be positive");
  if (pois_per_aoi == 0) throw ValidationError("world config: pois_per_aoi must be positive");
  if (aois_per_city * pois_per_aoi < kLocationTypeCount)
    throw ValidationError("world config: each city needs at least one POI per location type");
  if (!(concentration >= 0.0) || !std::isfinite(concentration))
    throw ValidationError("world config: concentration must be a finite value >= 0");
  auto unit = [](double v, const char* name) {
    if (!(v >= 0.0 && v <= 1.0))
      throw ValidationError(std::string("world config: ") + name + " must lie in [0, 1]");
  };
  unit(context_strength, "context_strength");
  unit(way_correlation, "way_correlation");
  unit(user_tilt, "user_tilt");
  unit(cell_noise, "cell_noise");
  unit(group_interaction, "group_interaction");
}

json world_config_to_json(const WorldConfig& c) {
  json groups = json::array();
  for (const auto& g : c.groups)
    groups.push_back({{"age_band", g.age_band}, {"gender", g.gender}, {"weight", g.weight}});
  return json{{"user_count", c.user_count},
              {"record_count", c.record_count},
              {"groups", groups},
              {"city_count", c.city_count},
              {"aois_per_city", c.aois_per_city},
              {"pois_per_aoi", c.pois_per_aoi},
              {"concentration", c.concentration},
              {"context_strength", c.context_strength},
              {"way_correlation", c.way_correlation},
              {"user_tilt", c.user_tilt},
              {"cell_noise", c.cell_noise},
              {"group_interaction", c.group_interaction},
              {"seed", c.seed}};
}

WorldConfig world_config_from_json(const json& j) {
  if (!j.is_object()) throw ValidationError("world config must be a JSON object");
  static const std::array<std::string_view, 13> known = {
      "user_count",      "record_count", "groups",     "city_count",        "aois_per_city",
      "pois_per_aoi",    "concentration", "context_strength", "way_correlation", "user_tilt",
      "cell_noise",      "group_interaction", "seed"};
  for (const auto& [key, value] : j.items())
    if (std::find(known.begin(), known.end(), key) == known.end())
      throw ValidationError("world config: unknown field '" + key + "'");
  WorldConfig c;
  auto read = [&j](const char* field, auto& out) {
    auto it = j.find(field);
    if (it == j.end()) return;
    using T = std::remove_reference_t<decltype(out)>;
    if constexpr (std::is_unsigned_v<T>) {
      if (!it->is_number_unsigned())
        throw ValidationError(std::string("world config: field '") + field +
                              "' must be a non-negative integer");
    } else {
      if (!it->is_number())
        throw ValidationError(std::string("world config: field '") + field + "' must be a number");
    }
    out = it->get<T>();
  };
  read("user_count", c.user_count);
  read("record_count", c.record_count);
  read("city_count", c.city_count);
  read("aois_per_city", c.aois_per_city);
  read("pois_per_aoi", c.pois_per_aoi);
  read("concentration", c.concentration);
  read("context_strength", c.context_strength);
  read("way_correlation", c.way_correlation);
  read("user_tilt", c.user_tilt);
  read("cell_noise", c.cell_noise);
  read("group_interaction", c.group_interaction);
  read("seed", c.seed);
  if (auto it = j.find("groups"); it != j.end()) {
    if (!it->is_array()) throw ValidationError("world config: field 'groups' must be an array");
    c.groups.clear();
    for (std::size_t i = 0; i < it->size(); ++i) {
      const json& g = (*it)[i];
      const std::string where = "world config: groups[" + std::to_string(i) + "]";
      if (!g.is_object() || !g.contains("age_band") || !g.contains("gender") ||
          !g.at("age_band").is_string() || !g.at("gender").is_string())
        throw ValidationError(where + " needs string fields 'age_band' and 'gender'");
      GroupDefinition d{g.at("age_band").get<std::string>(), g.at("gender").get<std::string>(), 1.0};
      if (g.contains("weight")) {
        if (!g.at("weight").is_number()) throw ValidationError(where + ".weight must be a number");
        d.weight = g.at("weight").get<double>();
      }
      c.groups.push_back(std::move(d));
    }
  }
  c.validate();
  return c;
}

std::string poi_id(std::size_t k) { return "poi_" + std::to_string(k); }
std::string aoi_id(std::size_t k) { return "aoi_" + std::to_string(k); }
std::string city_id(std::size_t k) { return "city_" + std::to_string(k); }

int location_type_of_poi(std::string_view poi) {
  return static_cast<int>(parse_suffix(poi, "poi_") % kLocationTypeCount);
}

std::size_t cell_of(const SpatioTemporalContext& ctx) {
  CellCoords c;
  c.time_period = ctx.time_period;
  c.is_holiday = ctx.is_holiday;
  c.location_type = location_type_of_poi(ctx.poi_id);
  c.weather = ctx.weather_type;
  c.travel = ctx.travel_state;
  return cell_index(c);
}

const Simplex& WorldModel::distribution(std::size_t group, std::size_t cell) const {
  return group_cell_distribution.at(group * kCellCount + cell);
}

std::array<double, kNeedCount> WorldModel::group_cell_logits(std::size_t group,
                                                             std::size_t cell) const {
  const Logits& g = group_logits.at(group);
  const Logits& c = cell_logits.at(cell);
  const Logits& gc = interaction_logits.at(group * kInteractionKeys + interaction_key(cell));
  const double way = config.way_correlation * cell_way_preference.at(cell);
  Logits l{};
  for (std::size_t i = 0; i < kNeedCount; ++i) {
    const double sign = need_to_way(static_cast<int>(i)) == NeedsMeetingWay::kViaDelivery ? 1.0 : -1.0;
    l[i] = config.concentration * g[i] +
           config.context_strength * (c[i] + sign * way + config.group_interaction * gc[i]);
  }
  return l;
}

std::array<double, kNeedCount> WorldModel::logits(std::size_t user, std::size_t cell) const {
  const WorldUser& u = users.at(user);
  Logits l = group_cell_logits(u.group, cell);
  for (std::size_t i = 0; i < kNeedCount; ++i) l[i] += config.user_tilt * u.tilt[i];
  return l;
}

Simplex WorldModel::user_distribution(std::size_t user, std::size_t cell) const {
  return softmax(logits(user, cell));
}

Simplex WorldModel::cell_distribution(std::size_t cell) const {
  Simplex avg{};
  for (std::size_t u = 0; u < users.size(); ++u) {
    const Simplex p = user_distribution(u, cell);
    for (std::size_t i = 0; i < kNeedCount; ++i) avg[i] += p[i];
  }
  for (double& v : avg) v /= static_cast<double>(users.size());
  return avg;
}

namespace {

void fill_group_cell_distributions(WorldModel& w) {
  const std::size_t G = w.group_logits.size();
  w.group_cell_distribution.assign(G * kCellCount, Simplex{});
  for (std::size_t g = 0; g < G; ++g)
    for (std::size_t c = 0; c < kCellCount; ++c)
      w.group_cell_distribution[g * kCellCount + c] = softmax(w.group_cell_logits(g, c));
}

void index_users(WorldModel& w) {
  w.user_index.clear();
  for (std::size_t u = 0; u < w.users.size(); ++u) w.user_index[w.users[u].profile.user_id] = u;
}

}  // namespace

WorldModel build_world(const WorldConfig& config) {
  config.validate();
  WorldModel w;
  w.config = config;

  Rng group_rng(derive_seed(config.seed, 1));
  for (std::size_t g = 0; g < config.groups.size(); ++g) {
    Logits l{};
    for (double& v : l) v = group_rng.normal();
    w.group_logits.push_back(l);
  }

  Rng cell_rng(derive_seed(config.seed, 2));
  w.cell_logits.resize(kCellCount);
  w.cell_way_preference.resize(kCellCount);
  w.cell_marginals.resize(kCellCount);
  for (std::size_t c = 0; c < kCellCount; ++c) {
    const CellCoords cc = cell_coords(c);
    Logits l = planted_cell_logits(cc);
    for (double& v : l) v += config.cell_noise * cell_rng.normal();
    w.cell_logits[c] = l;
    w.cell_way_preference[c] = 1.5 * (planted_way_preference(cc) + 0.5 * cell_rng.normal());
    w.cell_marginals[c] = kPeriodWeights[static_cast<std::size_t>(cc.time_period)] *
                          (cc.is_holiday ? kHolidayShare : 1.0 - kHolidayShare) /
                          static_cast<double>(kLocationTypeCount) *
                          kWeatherWeights[static_cast<std::size_t>(cc.weather)] *
                          kTravelWeights[static_cast<std::size_t>(cc.travel)];
  }

  Rng interaction_rng(derive_seed(config.seed, 4));
  w.interaction_logits.resize(config.groups.size() * kInteractionKeys);
  for (auto& l : w.interaction_logits)
    for (double& v : l) v = interaction_rng.normal();

  Rng user_rng(derive_seed(config.seed, 3));
  std::vector<double> group_weights;
  for (const auto& g : config.groups) group_weights.push_back(g.weight);
  const int width = static_cast<int>(std::to_string(config.user_count).size());
  for (std::size_t u = 0; u < config.user_count; ++u) {
    WorldUser user;
    user.group = user_rng.categorical(group_weights);
    std::string id = std::to_string(u);
    id.insert(0, static_cast<std::size_t>(std::max(0, width - static_cast<int>(id.size()))), '0');
    user.profile.user_id = "user_" + id;
    user.profile.age_band = config.groups[user.group].age_band;
    user.profile.gender = config.groups[user.group].gender;
    user.profile.resident_city_id = city_id(user_rng.below(config.city_count));
    for (const auto& cluster : tilt_clusters()) {
      const double factor = user_rng.normal();
      for (NeedCategory n : cluster) user.tilt[static_cast<std::size_t>(code(n))] = factor;
    }
    w.users.push_back(std::move(user));
  }
  index_users(w);
  fill_group_cell_distributions(w);
  return w;
}

SynthCorpus sample_records(const WorldModel& world, std::size_t n, std::uint64_t seed) {
  SynthCorpus out;
  for (const auto& u : world.users) out.profiles.push_back(u.profile);
  if (n == 0) return out;

  std::array<std::vector<int>, 2> days_by_holiday;
  for (int d = 0; d < kYearDays; ++d) {
    const int dow = (kYearStartWeekday + d) % 7;
    days_by_holiday[dow >= 5 ? 1 : 0].push_back(d);
  }

  const WorldConfig& cfg = world.config;
  const std::size_t pois_per_city = cfg.aois_per_city * cfg.pois_per_aoi;
  Rng rng(derive_seed(seed, 0x5eed));
  out.records.reserve(n);
  for (std::size_t r = 0; r < n; ++r) {
    const std::size_t u = rng.below(world.users.size());
    const WorldUser& user = world.users[u];
    const std::size_t cell = rng.categorical(world.cell_marginals);
    const CellCoords cc = cell_coords(cell);

    SpatioTemporalContext ctx;
    const auto& days = days_by_holiday[cc.is_holiday ? 1 : 0];
    const int day = days[rng.below(days.size())];
    const auto [h0, h1] = kPeriodHours[static_cast<std::size_t>(cc.time_period)];
    const int hour = h0 + static_cast<int>(rng.below(static_cast<std::uint64_t>(h1 - h0 + 1)));
    const std::int64_t second = static_cast<std::int64_t>(rng.below(3600));
    ctx.timestamp = kYearStart + static_cast<std::int64_t>(day) * 86400 + hour * 3600 + second;
    ctx.is_holiday = cc.is_holiday;

    const std::size_t home = parse_suffix(user.profile.resident_city_id, "city_");
    std::size_t city = home;
    if (cc.travel == TravelState::kOnTravel) {
      city = rng.below(cfg.city_count - 1);
      if (city >= home) ++city;
    }
    // POIs of the requested type within the city: local index j with j % 3 == type.
    std::vector<std::size_t> candidates;
    for (std::size_t j = 0; j < pois_per_city; ++j) {
      const std::size_t k = city * pois_per_city + j;
      if (static_cast<int>(k % kLocationTypeCount) == cc.location_type) candidates.push_back(k);
    }
    const std::size_t poi = candidates[rng.below(candidates.size())];
    ctx.poi_id = poi_id(poi);
    ctx.aoi_id = aoi_id(poi / cfg.pois_per_aoi);
    ctx.city_id = city_id(city);

    ctx.weather_type = cc.weather;
    double temp = 0, hum = 0, wind = 0;
    switch (cc.weather) {
      case WeatherType::kSunny: temp = rng.normal(24, 5); hum = rng.normal(40, 10); wind = rng.normal(10, 5); break;
      case WeatherType::kRainy: temp = rng.normal(16, 4); hum = rng.normal(85, 8); wind = rng.normal(15, 5); break;
      case WeatherType::kSnowy: temp = rng.normal(-3, 3); hum = rng.normal(75, 10); wind = rng.normal(18, 6); break;
      case WeatherType::kCloudy: temp = rng.normal(18, 5); hum = rng.normal(60, 10); wind = rng.normal(12, 5); break;
    }
    ctx.temperature_c = std::round(temp * 10.0) / 10.0;
    ctx.humidity_pct = std::clamp(std::round(hum * 10.0) / 10.0, 0.0, 100.0);
    ctx.wind_kmh = std::round(std::abs(wind) * 10.0) / 10.0;
    ctx.travel_state = cc.travel;
    ctx = derive_calendar_fields(ctx);

    const Simplex p = world.user_distribution(u, cell);
    PurchaseRecord rec;
    rec.profile_ref = user.profile.user_id;
    rec.context = std::move(ctx);
    rec.need = need_from_code(static_cast<int>(rng.categorical(p)));
    out.records.push_back(std::move(rec));
  }
  return out;
}

std::array<std::size_t, kNeedCount> sample_need_counts_in_cell(const WorldModel& world,
                                                              std::size_t cell, std::size_t n,
                                                              std::uint64_t seed) {
  if (cell >= kCellCount) throw ValidationError("cell index out of range");
  std::array<std::size_t, kNeedCount> counts{};
  Rng rng(derive_seed(seed, 0xce11));
  for (std::size_t r = 0; r < n; ++r) {
    const std::size_t u = rng.below(world.users.size());
    ++counts[rng.categorical(world.user_distribution(u, cell))];
  }
  return counts;
}

Eigen::MatrixXd oracle_need_scores(const WorldModel& world,
                                   const std::vector<LabeledScene>& scenes) {
  Eigen::MatrixXd scores(static_cast<Eigen::Index>(scenes.size()),
                         static_cast<Eigen::Index>(kNeedCount));
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    const auto& s = scenes[i].scene;
    auto it = world.user_index.find(s.profile.user_id);
    if (it == world.user_index.end())
      throw ValidationError("scene user '" + s.profile.user_id + "' is not part of the world");
    const std::size_t cell = cell_of(s.context);
    const auto l = world.logits(it->second, cell);
    for (std::size_t j = 0; j < kNeedCount; ++j)
      scores(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = l[j];
  }
  return scores;
}

double bayes_optimal_sa(const WorldModel& world, const std::vector<LabeledScene>& scenes) {
  if (scenes.empty()) throw ValidationError("bayes_optimal_sa: no scenes");
  std::vector<int> labels;
  labels.reserve(scenes.size());
  for (const auto& s : scenes) labels.push_back(code(s.need_label));
  return sort_accuracy(oracle_need_scores(world, scenes), labels);
}

json world_to_json(const WorldModel& w) {
  json users = json::array();
  for (const auto& u : w.users)
    users.push_back({{"profile", u.profile}, {"group", u.group}, {"tilt", u.tilt}});
  json dist = json::array();
  for (std::size_t g = 0; g < w.group_count(); ++g)
    for (std::size_t c = 0; c < kCellCount; ++c) dist.push_back(w.distribution(g, c));
  return json{{"format_version", 1},
              {"config", world_config_to_json(w.config)},
              {"group_logits", w.group_logits},
              {"cell_logits", w.cell_logits},
              {"interaction_logits", w.interaction_logits},
              {"cell_way_preference", w.cell_way_preference},
              {"cell_marginals", w.cell_marginals},
              {"group_cell_distribution", dist},
              {"users", users}};
}

WorldModel world_from_json(const json& doc) {
  try {
    if (!doc.is_object() || doc.value("format_version", 0) != 1)
      throw ValidationError("world: unsupported or missing format_version");
    WorldModel w;
    w.config = world_config_from_json(doc.at("config"));
    w.group_logits = doc.at("group_logits").get<std::vector<Logits>>();
    w.cell_logits = doc.at("cell_logits").get<std::vector<Logits>>();
    w.interaction_logits = doc.at("interaction_logits").get<std::vector<Logits>>();
    w.cell_way_preference = doc.at("cell_way_preference").get<std::vector<double>>();
    w.cell_marginals = doc.at("cell_marginals").get<std::vector<double>>();
    if (w.group_logits.size() != w.config.groups.size() || w.cell_logits.size() != kCellCount ||
        w.cell_way_preference.size() != kCellCount || w.cell_marginals.size() != kCellCount ||
        w.interaction_logits.size() != w.group_logits.size() * kInteractionKeys)
      throw ValidationError("world: table sizes do not match the config");
    for (const auto& u : doc.at("users")) {
      WorldUser user;
      user.profile = u.at("profile").get<UserProfile>();
      user.group = u.at("group").get<std::size_t>();
      user.tilt = u.at("tilt").get<Logits>();
      if (user.group >= w.group_logits.size()) throw ValidationError("world: user group out of range");
      w.users.push_back(std::move(user));
    }
    index_users(w);
    fill_group_cell_distributions(w);
    return w;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("world: malformed document: ") + e.what());
  }
}

void save_world(const WorldModel& world, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write " + path.string());
  out << world_to_json(world).dump() << '\n';
}

WorldModel load_world(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
  return world_from_json(doc);
}

}  // namespace neon
