#pragma once

// Builders shared by the unit tests.

#include <string>
#include <vector>

#include "neon/rng.hpp"
#include "neon/training.hpp"
#include "neon/world.hpp"

namespace testing_support {

using namespace neon;

inline constexpr std::int64_t kJan3 = 1641168000;  // 2022-01-03T00:00:00Z, a Monday

inline SpatioTemporalContext make_context(int hour, std::int64_t day = 0,
                                          WeatherType weather = WeatherType::kSunny) {
  SpatioTemporalContext c;
  c.timestamp = kJan3 + day * 86400 + hour * 3600;
  c.poi_id = "poi_0";
  c.aoi_id = "aoi_0";
  c.city_id = "city_0";
  c.weather_type = weather;
  c.temperature_c = 20.0;
  c.humidity_pct = 50.0;
  c.wind_kmh = 10.0;
  return derive_calendar_fields(c);
}

inline UserProfile make_profile(const std::string& id, const std::string& age = "26-35",
                                const std::string& gender = "female",
                                const std::string& city = "city_0") {
  return UserProfile{id, age, gender, city};
}

inline PurchaseRecord make_record(const std::string& user, NeedCategory need, int hour,
                                  std::int64_t day = 0) {
  return PurchaseRecord{user, make_context(hour, day), need};
}

/// A small world with its corpus prepared for training.
struct SmallData {
  WorldModel world;
  SynthCorpus corpus;
  PreparedData data;
};

inline SmallData small_data(std::size_t records = 2000, std::size_t users = 200,
                            std::uint64_t seed = 3) {
  WorldConfig wc;
  wc.user_count = users;
  wc.record_count = records;
  wc.seed = seed;
  SmallData s{build_world(wc), {}, {}};
  s.corpus = sample_records(s.world, records, seed);
  s.data = prepare_data(s.corpus.records, s.corpus.profiles, 0.8, seed);
  return s;
}

/// Model dimensions shrunk for fast finite-difference checks.
inline ModelConfig tiny_config(const FeatureSchema& schema, Variant v = Variant::kMultitask) {
  ModelConfig c = make_model_config(schema, v);
  c.embedding_dim = 3;
  c.merge_dim = 5;
  c.user_dim = 4;
  c.expert_dim = 6;
  c.way_hidden_dim = 3;
  return c;
}

/// Randomizes batch-norm affine parameters and running statistics so that
/// checks do not sit on the identity initialization.
inline void perturb_norms(NeonParams& p, std::uint64_t seed) {
  Rng rng(seed);
  for (auto* bn : {&p.merge_bn, &p.user_bn, &p.shared_bn, &p.need_bn, &p.way_bn}) {
    for (Eigen::Index i = 0; i < bn->dim(); ++i) {
      bn->gamma(i) = rng.uniform(0.5, 1.5);
      bn->beta(i) = rng.uniform(-0.5, 0.5);
      bn->running_mean(i) = rng.uniform(-0.2, 0.2);
      bn->running_var(i) = rng.uniform(0.5, 2.0);
    }
  }
}

/// Redraws every trainable tensor from N(0, sd).
inline void gaussian_params(NeonParams& p, std::uint64_t seed, double sd = 0.1) {
  Rng rng(seed);
  for_each_trainable(p, [&](const std::string&, auto& t) {
    for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = sd * rng.normal();
  });
}

}  // namespace testing_support
