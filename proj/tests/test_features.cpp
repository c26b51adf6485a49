#include <doctest.h>

#include <cmath>
#include <set>

#include "support.hpp"

using namespace neon;
using namespace testing_support;

namespace {

Simplex count_oracle(const std::vector<PurchaseRecord>& records) {
  std::array<int, kNeedCount> counts{};
  for (const auto& r : records) counts[static_cast<std::size_t>(code(r.need))]++;
  Simplex s{};
  for (std::size_t i = 0; i < kNeedCount; ++i)
    s[i] = static_cast<double>(counts[i]) / static_cast<double>(records.size());
  return s;
}

void check_simplex(const Simplex& s) {
  double total = 0.0;
  for (double v : s) {
    CHECK(v >= 0.0);
    total += v;
  }
  CHECK(std::abs(total - 1.0) <= 1e-9);
}

std::vector<PurchaseRecord> basket_corpus(const std::vector<std::vector<NeedCategory>>& baskets) {
  std::vector<PurchaseRecord> out;
  for (std::size_t u = 0; u < baskets.size(); ++u)
    for (NeedCategory n : baskets[u]) out.push_back(make_record("u" + std::to_string(u), n, 12));
  return out;
}

// Pairwise counting over per-user baskets, kept independent of the miner.
std::vector<AssociationRule> brute_force_rules(const std::vector<PurchaseRecord>& corpus,
                                               double min_support, double min_confidence) {
  std::map<std::string, std::set<int>> baskets;
  for (const auto& r : corpus) baskets[r.profile_ref].insert(code(r.need));
  const double n = static_cast<double>(baskets.size());
  std::vector<AssociationRule> out;
  for (int a = 0; a < 10; ++a)
    for (int b = 0; b < 10; ++b) {
      if (a == b) continue;
      double ca = 0, cb = 0, cab = 0;
      for (const auto& [u, s] : baskets) {
        const bool ha = s.count(a) > 0, hb = s.count(b) > 0;
        ca += ha;
        cb += hb;
        cab += ha && hb;
      }
      if (ca == 0) continue;
      const double support = cab / n, confidence = cab / ca;
      if (support >= min_support && confidence >= min_confidence)
        out.push_back({need_from_code(a), need_from_code(b), support, confidence,
                       confidence / (cb / n)});
    }
  std::sort(out.begin(), out.end(), [](const auto& x, const auto& y) {
    if (x.lift != y.lift) return x.lift > y.lift;
    if (x.antecedent != y.antecedent) return code(x.antecedent) < code(y.antecedent);
    return code(x.consequent) < code(y.consequent);
  });
  return out;
}

}  // namespace

TEST_CASE("need categories and their ways") {
  CHECK(all_needs().size() == 10);
  for (int i = 0; i < 10; ++i) CHECK(code(all_needs()[static_cast<std::size_t>(i)]) == i);
  std::set<NeedCategory> delivery;
  for (NeedCategory n : all_needs())
    if (need_to_way(n) == NeedsMeetingWay::kViaDelivery) delivery.insert(n);
  CHECK(delivery == std::set<NeedCategory>{NeedCategory::kSpecialtyShoppingOnline,
                                           NeedCategory::kGroceryShoppingOnline,
                                           NeedCategory::kOrderingFoodDelivery,
                                           NeedCategory::kBuyingMedicine});
  CHECK(parse_need("Beauty") == NeedCategory::kBeauty);
  CHECK_FALSE(parse_need("Skydiving").has_value());
  CHECK_THROWS_AS(need_from_code(10), ValidationError);
}

TEST_CASE("time period buckets") {
  const std::array<int, 24> expect = {0, 0, 0, 0, 0, 1, 1, 1, 1, 2, 2, 3,
                                      3, 4, 4, 4, 4, 5, 5, 5, 6, 6, 6, 6};
  for (int h = 0; h < 24; ++h) CHECK(time_period_of_hour(h) == expect[static_cast<std::size_t>(h)]);
  CHECK(kTimePeriodLabels[static_cast<std::size_t>(time_period_of_hour(23))] == "20-24");
  CHECK(parse_time_period("11-12") == 3);
  CHECK(parse_time_period("noon") == -1);
}

TEST_CASE("calendar fields follow the timestamp") {
  const auto c = make_context(14, 5);  // Saturday 2022-01-08
  CHECK(c.hour == 14);
  CHECK(c.day_of_week == 5);
  CHECK(c.time_period == 4);
  SpatioTemporalContext bad = c;
  bad.time_period = 3;
  CHECK_THROWS_AS(validate_context(bad), ValidationError);
  bad = c;
  bad.hour = 15;
  CHECK_THROWS_AS(validate_context(bad), ValidationError);
  bad = c;
  bad.humidity_pct = 101.0;
  CHECK_THROWS_AS(validate_context(bad), ValidationError);
}

TEST_CASE("encode_user") {
  FeatureSchema schema;
  schema.age_band.add("26-35");

  SUBCASE("empty history") {
    UserScene s{make_profile("a"), make_context(10), {}};
    const auto f = encode_user(s, schema);
    for (double v : f.historical_share) CHECK(v == 0.0);
    CHECK(f.recent_clicked_needs.empty());
    CHECK(f.recent_ordered_needs.empty());
    CHECK(f.top_pois.empty());
    CHECK(f.age_band != Vocabulary::kOov);
  }
  SUBCASE("three food deliveries and one hotel") {
    UserScene s{make_profile("a"), make_context(10, 9), {}};
    for (int i = 0; i < 3; ++i) s.history.push_back(make_record("a", NeedCategory::kOrderingFoodDelivery, 12, i));
    s.history.push_back(make_record("a", NeedCategory::kBookingHotel, 12, 4));
    const auto f = encode_user(s, schema);
    CHECK(f.historical_share[0] == 0.75);
    CHECK(f.historical_share[2] == 0.25);
    CHECK(f.recent_ordered_needs == std::vector<int>{0, 2});
  }
  SUBCASE("long history matches a counting oracle") {
    Rng rng(4);
    UserScene s{make_profile("a"), make_context(10, 300), {}};
    for (int i = 0; i < 1000; ++i)
      s.history.push_back(make_record("a", need_from_code(static_cast<int>(rng.below(10))), 12, i / 4));
    const auto f = encode_user(s, schema);
    const Simplex oracle = count_oracle(s.history);
    for (std::size_t i = 0; i < kNeedCount; ++i) CHECK(f.historical_share[i] == oracle[i]);
    check_simplex(f.historical_share);
  }
  SUBCASE("unknown vocabulary values count as out-of-vocabulary") {
    UserScene s{make_profile("a", ">50", "unknown", "city_9"), make_context(10), {}};
    EncodeDiagnostics d;
    const auto f = encode_user(s, schema, &d);
    CHECK(f.age_band == Vocabulary::kOov);
    CHECK(d.oov_count == 3);
  }
  SUBCASE("recent needs keep only the last ten purchases") {
    UserScene s{make_profile("a"), make_context(10, 300), {}};
    s.history.push_back(make_record("a", NeedCategory::kTourism, 12, 0));
    for (int i = 0; i < 10; ++i) s.history.push_back(make_record("a", NeedCategory::kBeauty, 12, 1 + i));
    const auto f = encode_user(s, schema);
    CHECK(f.recent_ordered_needs == std::vector<int>{7});
  }
}

TEST_CASE("encode_context") {
  FeatureSchema schema;
  schema.weather_mean = {20.0, 50.0, 10.0};
  schema.weather_std = {5.0, 10.0, 2.0};
  namespace L = context_layout;

  SUBCASE("hour 23 sets the last period") {
    const auto v = encode_context(make_context(23), schema).dense;
    CHECK(v.size() == L::kDim);
    CHECK(v(L::kTimePeriod + 6) == 1.0);
    CHECK(v.segment(L::kTimePeriod, 7).sum() == 1.0);
    CHECK(v(L::kHour + 23) == 1.0);
  }
  SUBCASE("weather type only changes its one-hot block") {
    const auto a = encode_context(make_context(9, 0, WeatherType::kSunny), schema).dense;
    const auto b = encode_context(make_context(9, 0, WeatherType::kSnowy), schema).dense;
    for (Eigen::Index i = 0; i < L::kDim; ++i) {
      const bool in_block = i >= L::kWeatherType && i < L::kWeatherType + 4;
      if (!in_block) CHECK(a(i) == b(i));
    }
    CHECK((a - b).cwiseAbs().sum() == 2.0);
  }
  SUBCASE("temperature at the training mean standardizes to zero") {
    const auto v = encode_context(make_context(9), schema).dense;
    CHECK(v(L::kWeatherReals) == 0.0);
    CHECK(v(L::kWeatherReals + 1) == 0.0);
    CHECK(v(L::kWeatherReals + 2) == 0.0);
  }
  SUBCASE("inconsistent period is rejected") {
    auto c = make_context(9);
    c.time_period = 0;
    CHECK_THROWS_AS(encode_context(c, schema), ValidationError);
  }
}

TEST_CASE("schema standardization uses the training records only") {
  std::vector<PurchaseRecord> train;
  for (int i = 0; i < 4; ++i) {
    auto r = make_record("a", NeedCategory::kBeauty, 12, i);
    r.context.temperature_c = 10.0 + 2.0 * i;
    train.push_back(r);
  }
  const auto schema = build_schema(train, {make_profile("a")});
  CHECK(schema.weather_mean[0] == doctest::Approx(13.0));
  CHECK(schema.weather_std[0] > 0.0);
  CHECK(schema.poi.contains("poi_0"));
  CHECK_FALSE(schema.poi.contains("poi_99"));
}

TEST_CASE("group tables") {
  SUBCASE("a group that only buys beauty") {
    std::vector<PurchaseRecord> corpus;
    for (int i = 0; i < 20; ++i) corpus.push_back(make_record("b", NeedCategory::kBeauty, 12, i));
    for (int i = 0; i < 20; ++i) corpus.push_back(make_record("m", need_from_code(i % 10), 12, i));
    const auto store = make_profile_store({make_profile("b", "18-25", "female"),
                                           make_profile("m", "36-50", "male")});
    const auto t = build_group_tables(corpus, store);
    const Simplex& row = t.group_aggregated.at("age=18-25|gender=female");
    for (std::size_t i = 0; i < kNeedCount; ++i) CHECK(row[i] == (i == 7 ? 1.0 : 0.0));
    for (const auto* table : {&t.group_aggregated, &t.time_popularity, &t.group_context}) {
      CHECK(table->count(std::string(kFallbackKey)) == 1);
      for (const auto& [k, s] : *table) check_simplex(s);
    }
  }
  SUBCASE("uniform corpus stays within the binomial bound") {
    Rng rng(8);
    std::vector<PurchaseRecord> corpus;
    std::vector<UserProfile> profiles;
    for (int u = 0; u < 40; ++u) profiles.push_back(make_profile("u" + std::to_string(u)));
    for (int i = 0; i < 20000; ++i)
      corpus.push_back(make_record("u" + std::to_string(rng.below(40)),
                                   need_from_code(static_cast<int>(rng.below(10))),
                                   static_cast<int>(rng.below(24)), static_cast<int>(rng.below(60))));
    const auto t = build_group_tables(corpus, make_profile_store(profiles));
    std::map<std::string, std::size_t> counts;
    for (const auto& r : corpus) counts[period_key(r.context.time_period)]++;
    for (const auto& [key, row] : t.time_popularity) {
      if (key.rfind("period=", 0) != 0) continue;
      const double bound = 3.0 * std::sqrt(0.09 / static_cast<double>(counts.at(key)));
      for (double v : row) CHECK(std::abs(v - 0.1) <= bound);
    }
    for (double v : t.global()) CHECK(std::abs(v - 0.1) <= 3.0 * std::sqrt(0.09 / 20000.0));
  }
  SUBCASE("lunch popularity peaks at food delivery in a world with a lunch effect") {
    WorldConfig wc;
    wc.user_count = 500;
    const auto world = build_world(wc);
    const auto corpus = sample_records(world, 20000, 1);
    const auto t = build_group_tables(corpus.records, make_profile_store(corpus.profiles));
    const Simplex& lunch = t.time_popularity.at(period_key(3));
    CHECK(std::max_element(lunch.begin(), lunch.end()) - lunch.begin() == 0);
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(build_group_tables({}, {}), ValidationError);
    CHECK_THROWS_AS(build_group_tables({make_record("ghost", NeedCategory::kBeauty, 3)}, {}),
                    ValidationError);
  }
}

TEST_CASE("association rules") {
  using N = NeedCategory;
  SUBCASE("hair buyers also buy beauty") {
    const auto corpus = basket_corpus({{N::kHairDressing, N::kBeauty},
                                       {N::kHairDressing, N::kBeauty, N::kTourism},
                                       {N::kBeauty},
                                       {N::kTourism}});
    const auto rules = mine_rules(corpus, 0.05, 0.3);
    auto it = std::find_if(rules.begin(), rules.end(), [](const auto& r) {
      return r.antecedent == N::kHairDressing && r.consequent == N::kBeauty;
    });
    REQUIRE(it != rules.end());
    CHECK(it->confidence == 1.0);
    CHECK(it->support == 0.5);
    CHECK(it->lift == doctest::Approx(4.0 / 3.0));
    for (const auto& r : rules) {
      CHECK(r.antecedent != r.consequent);
      CHECK(r.confidence >= r.support);
      CHECK(r.lift > 0.0);
    }
  }
  SUBCASE("three-user toy corpus") {
    const N a = N::kOrderingFoodDelivery, b = N::kEatingInRestaurant, c = N::kBookingHotel;
    const auto rules = mine_rules(basket_corpus({{a, b}, {a, b}, {a, c}}), 0.05, 0.3);
    auto it = std::find_if(rules.begin(), rules.end(),
                           [&](const auto& r) { return r.antecedent == a && r.consequent == b; });
    REQUIRE(it != rules.end());
    CHECK(it->support == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
    CHECK(it->confidence == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  }
  SUBCASE("independent uniform baskets produce no confident rule") {
    Rng rng(12);
    std::vector<std::vector<N>> baskets(2000);
    for (auto& basket : baskets)
      for (N n : all_needs())
        if (rng.uniform() < 0.3) basket.push_back(n);
    const auto corpus = basket_corpus(baskets);
    CHECK(mine_rules(corpus, 0.05, 0.8).empty());
    for (const auto& r : mine_rules(corpus, 0.01, 0.01)) CHECK(std::abs(r.lift - 1.0) < 0.2);
  }
  SUBCASE("miner equals brute-force pair counting") {
    for (std::uint64_t seed : {1u, 2u, 3u}) {
      Rng rng(seed);
      std::vector<PurchaseRecord> corpus;
      for (int i = 0; i < 1000; ++i) {
        const int u = static_cast<int>(rng.below(120));
        int n = static_cast<int>(rng.below(10));
        if (u % 3 == 0 && rng.uniform() < 0.5) n = 7;
        corpus.push_back(make_record("u" + std::to_string(u), need_from_code(n), 12));
      }
      for (double conf : {0.1, 0.3, 0.6}) {
        const auto got = mine_rules(corpus, 0.05, conf);
        const auto want = brute_force_rules(corpus, 0.05, conf);
        REQUIRE(got.size() == want.size());
        for (std::size_t i = 0; i < got.size(); ++i) {
          CHECK(got[i].antecedent == want[i].antecedent);
          CHECK(got[i].consequent == want[i].consequent);
          CHECK(got[i].support == want[i].support);
          CHECK(got[i].confidence == want[i].confidence);
          CHECK(got[i].lift == doctest::Approx(want[i].lift).epsilon(1e-14));
        }
      }
    }
  }
}

TEST_CASE("group vector assembly") {
  namespace L = group_layout;
  std::vector<PurchaseRecord> corpus;
  for (int i = 0; i < 30; ++i) corpus.push_back(make_record("a", need_from_code(i % 4), 12, i % 5));
  const auto tables = build_group_tables(corpus, make_profile_store({make_profile("a")}));

  SUBCASE("unseen group, period and holiday with no history use only fallback rows") {
    UserScene s{make_profile("z", ">50", "male"), make_context(2, 5), {}};
    s.context.is_holiday = true;
    const Eigen::VectorXd v = assemble_group_vector(s, tables);
    REQUIRE(v.size() == L::kDim);
    for (Eigen::Index block = 0; block < 7; ++block)
      for (std::size_t i = 0; i < kNeedCount; ++i)
        CHECK(v(block * 10 + static_cast<Eigen::Index>(i)) == tables.global()[i]);
  }
  SUBCASE("without rules the augmented block is the historical share") {
    GroupFeatureTables t = tables;
    t.rules.clear();
    UserScene s{make_profile("a"), make_context(12, 9), {}};
    s.history.push_back(make_record("a", NeedCategory::kTourism, 12, 1));
    s.history.push_back(make_record("a", NeedCategory::kBeauty, 12, 2));
    const Eigen::VectorXd v = assemble_group_vector(s, t);
    const Simplex share = historical_share(s.history);
    for (std::size_t i = 0; i < kNeedCount; ++i) CHECK(v(L::kRuleAugmented + static_cast<Eigen::Index>(i)) == share[i]);
  }
  SUBCASE("one rule with confidence one half") {
    GroupFeatureTables t = tables;
    t.rules = {{NeedCategory::kHairDressing, NeedCategory::kBeauty, 0.2, 0.5, 1.5}};
    Simplex share{};
    share[5] = 1.0;
    const Simplex out = rule_augmented_share(share, t);
    CHECK(out[5] == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
    CHECK(out[7] == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
    check_simplex(out);
  }
  SUBCASE("every block is a simplex") {
    UserScene s{make_profile("a"), make_context(12, 9), {}};
    const Eigen::VectorXd v = assemble_group_vector(s, tables);
    for (Eigen::Index block = 0; block < 7; ++block) {
      Simplex row{};
      for (std::size_t i = 0; i < kNeedCount; ++i) row[i] = v(block * 10 + static_cast<Eigen::Index>(i));
      check_simplex(row);
    }
  }
}

TEST_CASE("bundles depend only on the training split") {
  const auto s = small_data(1500, 150, 5);
  const FeatureBundle& base = s.data.bundle;
  // Rewrite every evaluation-side record; the bundle must not change.
  auto corpus = s.corpus.records;
  const auto split = split_indices(corpus.size(), base.split_fraction, base.split_seed);
  for (std::size_t i : split.eval) {
    corpus[i].need = NeedCategory::kTourism;
    corpus[i].context.temperature_c = 40.0;
  }
  const FeatureBundle again =
      build_feature_bundle(corpus, s.corpus.profiles, base.split_fraction, base.split_seed);
  CHECK(bundle_to_json(again) == bundle_to_json(base));
}

TEST_CASE("encoding is pure and bundles round-trip through JSON") {
  const auto s = small_data(800, 80, 6);
  const auto& scene = s.data.eval_scenes.front().scene;
  const EncodedScene a = encode_scene(scene, s.data.bundle);
  const EncodedScene b = encode_scene(scene, s.data.bundle);
  CHECK(a.context.dense == b.context.dense);
  CHECK(a.group == b.group);
  CHECK(a.user.top_pois == b.user.top_pois);

  const FeatureBundle back = bundle_from_json(json::parse(bundle_to_json(s.data.bundle).dump()));
  const EncodedScene c = encode_scene(scene, back);
  CHECK(c.context.dense == a.context.dense);
  CHECK(c.group == a.group);
  CHECK(c.user.historical_share == a.user.historical_share);

  json doc = bundle_to_json(s.data.bundle);
  doc["format_version"] = 99;
  CHECK_THROWS_AS(bundle_from_json(doc), ValidationError);
}

TEST_CASE("scenes carry only strictly earlier history") {
  std::vector<PurchaseRecord> corpus{make_record("a", NeedCategory::kBeauty, 10, 2),
                                     make_record("a", NeedCategory::kTourism, 10, 1),
                                     make_record("a", NeedCategory::kHairDressing, 10, 2),
                                     make_record("b", NeedCategory::kBookingHotel, 10, 0)};
  const auto scenes = build_scenes(corpus, make_profile_store({make_profile("a"), make_profile("b")}));
  REQUIRE(scenes.size() == 4);
  CHECK(scenes[0].scene.history.size() == 1);
  CHECK(scenes[0].scene.history[0].need == NeedCategory::kTourism);
  CHECK(scenes[1].scene.history.empty());
  CHECK(scenes[3].scene.history.empty());
  for (const auto& ls : scenes) {
    CHECK(ls.way_label == need_to_way(ls.need_label));
    for (const auto& h : ls.scene.history) CHECK(h.context.timestamp < ls.scene.context.timestamp);
  }
}

TEST_CASE("records round-trip through JSON lines") {
  const auto s = small_data(50, 10, 2);
  const std::string text = records_to_jsonl(s.corpus.records);
  std::vector<PurchaseRecord> back;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) back.push_back(json::parse(line).get<PurchaseRecord>());
  CHECK(records_to_jsonl(back) == text);
  json bad = json(s.corpus.records.front());
  bad["context"]["weather_type"] = "hail";
  CHECK_THROWS(bad.get<PurchaseRecord>());
}
