#include "neon/records.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace neon {

int time_period_of_hour(int hour) {
  if (hour < 0 || hour > 23) throw ValidationError("hour out of range: " + std::to_string(hour));
  if (hour <= 4) return 0;
  if (hour <= 8) return 1;
  if (hour <= 10) return 2;
  if (hour <= 12) return 3;
  if (hour <= 16) return 4;
  if (hour <= 19) return 5;
  return 6;
}

int parse_time_period(std::string_view label) {
  for (std::size_t i = 0; i < kTimePeriodCount; ++i)
    if (kTimePeriodLabels[i] == label) return static_cast<int>(i);
  return -1;
}

LabeledScene make_labeled_scene(UserScene scene, NeedCategory need) {
  LabeledScene labeled;
  labeled.scene = std::move(scene);
  labeled.need_label = need;
  labeled.way_label = need_to_way(need);
  return labeled;
}

namespace {

template <std::size_t N>
bool in_vocabulary(const std::array<std::string_view, N>& vocab, std::string_view v) {
  return std::find(vocab.begin(), vocab.end(), v) != vocab.end();
}

template <std::size_t N>
int index_of(const std::array<std::string_view, N>& vocab, std::string_view v) {
  auto it = std::find(vocab.begin(), vocab.end(), v);
  return it == vocab.end() ? -1 : static_cast<int>(it - vocab.begin());
}

std::int64_t floor_div(std::int64_t a, std::int64_t b) {
  std::int64_t q = a / b;
  if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
  return q;
}

int hour_of(std::int64_t ts) {
  return static_cast<int>(floor_div(ts, 3600) - floor_div(ts, 86400) * 24);
}

int day_of_week_of(std::int64_t ts) {
  // 1970-01-01 was a Thursday (Monday = 0).
  const std::int64_t days = floor_div(ts, 86400);
  return static_cast<int>(((days + 3) % 7 + 7) % 7);
}

template <typename T>
T require(const json& j, const char* field) {
  auto it = j.find(field);
  if (it == j.end()) throw ValidationError(std::string("missing field '") + field + "'");
  try {
    return it->get<T>();
  } catch (const json::exception&) {
    throw ValidationError(std::string("field '") + field + "' has the wrong type");
  }
}

}  // namespace

SpatioTemporalContext derive_calendar_fields(SpatioTemporalContext ctx) {
  ctx.hour = hour_of(ctx.timestamp);
  ctx.day_of_week = day_of_week_of(ctx.timestamp);
  ctx.time_period = time_period_of_hour(ctx.hour);
  return ctx;
}

void validate_context(const SpatioTemporalContext& ctx) {
  if (ctx.hour < 0 || ctx.hour > 23)
    throw ValidationError("context.hour out of range: " + std::to_string(ctx.hour));
  if (ctx.hour != hour_of(ctx.timestamp))
    throw ValidationError("context.hour " + std::to_string(ctx.hour) +
                          " inconsistent with timestamp " + std::to_string(ctx.timestamp));
  if (ctx.day_of_week != day_of_week_of(ctx.timestamp))
    throw ValidationError("context.day_of_week inconsistent with timestamp");
  if (ctx.time_period != time_period_of_hour(ctx.hour))
    throw ValidationError("context.time_period inconsistent with hour " +
                          std::to_string(ctx.hour));
  if (!std::isfinite(ctx.temperature_c) || !std::isfinite(ctx.wind_kmh) ||
      !std::isfinite(ctx.humidity_pct))
    throw ValidationError("context weather values must be finite");
  if (ctx.humidity_pct < 0.0 || ctx.humidity_pct > 100.0)
    throw ValidationError("context.humidity_pct outside [0, 100]");
}

void validate_profile(const UserProfile& p) {
  if (p.user_id.empty()) throw ValidationError("profile.user_id is empty");
  if (!in_vocabulary(kAgeBands, p.age_band))
    throw ValidationError("profile.age_band '" + p.age_band + "' not in vocabulary");
  if (!in_vocabulary(kGenders, p.gender))
    throw ValidationError("profile.gender '" + p.gender + "' not in vocabulary");
}

std::vector<PurchaseRecord> history_before(const std::vector<PurchaseRecord>& corpus,
                                           const std::string& user_id,
                                           std::int64_t before) {
  std::vector<PurchaseRecord> out;
  for (const auto& r : corpus)
    if (r.profile_ref == user_id && r.context.timestamp < before) out.push_back(r);
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    return a.context.timestamp < b.context.timestamp;
  });
  return out;
}

std::vector<LabeledScene> build_scenes(const std::vector<PurchaseRecord>& corpus,
                                       const ProfileStore& profiles,
                                       const std::vector<std::size_t>& indices) {
  // Per-user record lists sorted by (timestamp, index).
  std::unordered_map<std::string, std::vector<std::size_t>> by_user;
  for (std::size_t i = 0; i < corpus.size(); ++i) by_user[corpus[i].profile_ref].push_back(i);
  for (auto& [user, list] : by_user) {
    std::stable_sort(list.begin(), list.end(), [&](std::size_t a, std::size_t b) {
      return corpus[a].context.timestamp < corpus[b].context.timestamp;
    });
  }

  std::vector<LabeledScene> scenes;
  scenes.reserve(indices.size());
  for (std::size_t idx : indices) {
    const PurchaseRecord& rec = corpus.at(idx);
    auto pit = profiles.find(rec.profile_ref);
    if (pit == profiles.end())
      throw ValidationError("record " + std::to_string(idx) + ": unknown user_id '" +
                            rec.profile_ref + "'");
    UserScene scene;
    scene.profile = pit->second;
    scene.context = rec.context;
    for (std::size_t j : by_user[rec.profile_ref]) {
      if (corpus[j].context.timestamp >= rec.context.timestamp) break;
      scene.history.push_back(corpus[j]);
    }
    scenes.push_back(make_labeled_scene(std::move(scene), rec.need));
  }
  return scenes;
}

std::vector<LabeledScene> build_scenes(const std::vector<PurchaseRecord>& corpus,
                                       const ProfileStore& profiles) {
  std::vector<std::size_t> all(corpus.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return build_scenes(corpus, profiles, all);
}

// ---------------------------------------------------------------------------
// JSON
// ---------------------------------------------------------------------------

void to_json(json& j, const UserProfile& p) {
  j = json{{"user_id", p.user_id},
           {"age_band", p.age_band},
           {"gender", p.gender},
           {"resident_city_id", p.resident_city_id}};
}

void from_json(const json& j, UserProfile& p) {
  if (!j.is_object()) throw ValidationError("profile must be a JSON object");
  p.user_id = require<std::string>(j, "user_id");
  p.age_band = require<std::string>(j, "age_band");
  p.gender = require<std::string>(j, "gender");
  p.resident_city_id = require<std::string>(j, "resident_city_id");
  validate_profile(p);
}

void to_json(json& j, const SpatioTemporalContext& c) {
  j = json{{"timestamp", c.timestamp},
           {"hour", c.hour},
           {"day_of_week", c.day_of_week},
           {"is_holiday", c.is_holiday},
           {"time_period", kTimePeriodLabels.at(c.time_period)},
           {"poi_id", c.poi_id},
           {"aoi_id", c.aoi_id},
           {"city_id", c.city_id},
           {"weather_type", kWeatherLabels.at(static_cast<int>(c.weather_type))},
           {"temperature_c", c.temperature_c},
           {"humidity_pct", c.humidity_pct},
           {"wind_kmh", c.wind_kmh},
           {"travel_state", kTravelLabels.at(static_cast<int>(c.travel_state))}};
}

void from_json(const json& j, SpatioTemporalContext& c) {
  if (!j.is_object()) throw ValidationError("context must be a JSON object");
  c.timestamp = require<std::int64_t>(j, "timestamp");
  c.hour = require<int>(j, "hour");
  c.day_of_week = require<int>(j, "day_of_week");
  c.is_holiday = require<bool>(j, "is_holiday");
  const auto period = require<std::string>(j, "time_period");
  c.time_period = parse_time_period(period);
  if (c.time_period < 0) throw ValidationError("unknown time_period '" + period + "'");
  c.poi_id = require<std::string>(j, "poi_id");
  c.aoi_id = require<std::string>(j, "aoi_id");
  c.city_id = require<std::string>(j, "city_id");
  const auto weather = require<std::string>(j, "weather_type");
  const int w = index_of(kWeatherLabels, weather);
  if (w < 0) throw ValidationError("unknown weather_type '" + weather + "'");
  c.weather_type = static_cast<WeatherType>(w);
  c.temperature_c = require<double>(j, "temperature_c");
  c.humidity_pct = require<double>(j, "humidity_pct");
  c.wind_kmh = require<double>(j, "wind_kmh");
  const auto travel = require<std::string>(j, "travel_state");
  const int t = index_of(kTravelLabels, travel);
  if (t < 0) throw ValidationError("unknown travel_state '" + travel + "'");
  c.travel_state = static_cast<TravelState>(t);
  validate_context(c);
}

void to_json(json& j, const PurchaseRecord& r) {
  j = json{{"profile_ref", r.profile_ref}, {"context", r.context}, {"need", to_string(r.need)}};
}

void from_json(const json& j, PurchaseRecord& r) {
  if (!j.is_object()) throw ValidationError("record must be a JSON object");
  r.profile_ref = require<std::string>(j, "profile_ref");
  auto it = j.find("context");
  if (it == j.end()) throw ValidationError("missing field 'context'");
  r.context = it->get<SpatioTemporalContext>();
  const auto need = require<std::string>(j, "need");
  auto parsed = parse_need(need);
  if (!parsed) throw ValidationError("unknown need '" + need + "'");
  r.need = *parsed;
}

namespace {

template <typename T>
std::vector<T> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path.string());
  std::vector<T> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(json::parse(line).get<T>());
    } catch (const json::parse_error& e) {
      throw ValidationError(path.string() + ":" + std::to_string(line_no) +
                            ": malformed JSON: " + e.what());
    } catch (const ValidationError& e) {
      throw ValidationError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

template <typename T>
std::string to_jsonl(const std::vector<T>& items) {
  std::string out;
  for (const auto& item : items) {
    out += json(item).dump();
    out += '\n';
  }
  return out;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write " + path.string());
  out << text;
}

}  // namespace

std::vector<PurchaseRecord> read_records(const std::filesystem::path& path) {
  return read_jsonl<PurchaseRecord>(path);
}

std::vector<UserProfile> read_profiles(const std::filesystem::path& path) {
  return read_jsonl<UserProfile>(path);
}

std::string records_to_jsonl(const std::vector<PurchaseRecord>& records) {
  return to_jsonl(records);
}

std::string profiles_to_jsonl(const std::vector<UserProfile>& profiles) {
  return to_jsonl(profiles);
}

void write_records(const std::filesystem::path& path,
                   const std::vector<PurchaseRecord>& records) {
  write_text(path, records_to_jsonl(records));
}

void write_profiles(const std::filesystem::path& path,
                    const std::vector<UserProfile>& profiles) {
  write_text(path, profiles_to_jsonl(profiles));
}

ProfileStore make_profile_store(const std::vector<UserProfile>& profiles) {
  ProfileStore store;
  for (const auto& p : profiles) {
    if (!store.emplace(p.user_id, p).second)
      throw ValidationError("duplicate user_id '" + p.user_id + "'");
  }
  return store;
}

}  // namespace neon
