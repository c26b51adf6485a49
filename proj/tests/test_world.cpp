#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "neon/metrics.hpp"
#include "support.hpp"

using namespace neon;
using namespace testing_support;

namespace {

std::size_t argmax(const Simplex& s) {
  return static_cast<std::size_t>(std::max_element(s.begin(), s.end()) - s.begin());
}

std::vector<LabeledScene> scenes_of(const SynthCorpus& corpus) {
  ProfileStore store;
  for (const auto& p : corpus.profiles) store[p.user_id] = p;
  return build_scenes(corpus.records, store);
}

WorldConfig small_config(std::uint64_t seed = 0) {
  WorldConfig c;
  c.user_count = 300;
  c.record_count = 10000;
  c.seed = seed;
  return c;
}

}  // namespace

TEST_CASE("cell indexing is a bijection") {
  CHECK(kCellCount == 7 * 2 * 3 * 4 * 3);
  for (std::size_t i = 0; i < kCellCount; ++i) {
    CHECK(cell_index(cell_coords(i)) == i);
    CHECK(interaction_key(i) < kInteractionKeys);
  }
}

TEST_CASE("zero context strength leaves only the group preference") {
  WorldConfig c = small_config(61);
  c.context_strength = 0.0;
  const WorldModel w = build_world(c);
  for (std::size_t g = 0; g < w.group_count(); ++g) {
    std::array<double, kNeedCount> base{};
    double z = 0.0, mx = -INFINITY;
    for (std::size_t k = 0; k < kNeedCount; ++k) mx = std::max(mx, c.concentration * w.group_logits[g][k]);
    for (std::size_t k = 0; k < kNeedCount; ++k) z += base[k] = std::exp(c.concentration * w.group_logits[g][k] - mx);
    for (double& v : base) v /= z;
    for (std::size_t cell = 0; cell < kCellCount; ++cell)
      for (std::size_t k = 0; k < kNeedCount; ++k)
        CHECK(std::abs(w.distribution(g, cell)[k] - base[k]) <= 1e-15);
  }
}

TEST_CASE("the workday lunch cell favours food delivery") {
  const std::size_t cell = cell_index({3, false, 1, WeatherType::kRainy, TravelState::kBasedInResidentCity});
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    WorldConfig c = small_config(seed);
    c.context_strength = 1.0;
    const WorldModel w = build_world(c);
    CHECK(argmax(w.cell_distribution(cell)) == 0);
  }
}

TEST_CASE("distributions are simplices") {
  const WorldModel w = build_world(small_config(62));
  for (const Simplex& s : w.group_cell_distribution) CHECK(is_simplex(s));
  for (std::size_t u = 0; u < 20; ++u) CHECK(is_simplex(w.user_distribution(u, u * 7 % kCellCount)));
  double mass = 0.0;
  for (double m : w.cell_marginals) mass += m;
  CHECK(mass == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("generation is deterministic") {
  const WorldConfig c = small_config(63);
  const WorldModel a = build_world(c), b = build_world(c);
  CHECK(world_to_json(a).dump() == world_to_json(b).dump());
  const SynthCorpus ca = sample_records(a, 3000, 64), cb = sample_records(b, 3000, 64);
  CHECK(records_to_jsonl(ca.records) == records_to_jsonl(cb.records));
  CHECK(profiles_to_jsonl(ca.profiles) == profiles_to_jsonl(cb.profiles));
  CHECK(records_to_jsonl(sample_records(a, 3000, 65).records) != records_to_jsonl(ca.records));
  WorldConfig other = c;
  other.seed = 66;
  CHECK(world_to_json(build_world(other)).dump() != world_to_json(a).dump());
}

TEST_CASE("sampled records are consistent with their cells") {
  const WorldModel w = build_world(small_config(67));
  CHECK(sample_records(w, 0, 1).records.empty());
  const SynthCorpus corpus = sample_records(w, 5000, 68);
  REQUIRE(corpus.records.size() == 5000);
  CHECK(corpus.profiles.size() == 300);
  for (const auto& r : corpus.records) {
    CHECK_NOTHROW(validate_context(r.context));
    const SpatioTemporalContext derived = derive_calendar_fields(r.context);
    CHECK(derived.time_period == r.context.time_period);
    CHECK(derived.hour == r.context.hour);
    CHECK(r.context.is_holiday == (r.context.day_of_week >= 5));
    CHECK(cell_of(r.context) < kCellCount);
    CHECK(w.user_index.count(r.profile_ref) == 1);
    const bool away = r.context.travel_state == TravelState::kOnTravel;
    const auto& home = w.users[w.user_index.at(r.profile_ref)].profile.resident_city_id;
    CHECK((r.context.city_id != home) == away);
  }
}

TEST_CASE("draws from one cell match its distribution") {
  const WorldModel w = build_world(small_config(69));
  const std::size_t cell = 137, n = 100000;
  const auto counts = sample_need_counts_in_cell(w, cell, n, 70);
  const Simplex p = w.cell_distribution(cell);
  std::size_t total = 0;
  for (std::size_t k = 0; k < kNeedCount; ++k) {
    total += counts[k];
    const double sigma = std::sqrt(static_cast<double>(n) * p[k] * (1.0 - p[k]));
    CAPTURE(k);
    CHECK(std::abs(static_cast<double>(counts[k]) - static_cast<double>(n) * p[k]) <= 3.0 * sigma);
  }
  CHECK(total == n);

  // Calibration over many cells: standardized deviations have unit mean square.
  double sum_sq = 0.0;
  std::size_t m = 0, beyond = 0;
  for (std::size_t s = 0; s < 100; ++s) {
    const std::size_t c = s * 37 % kCellCount;
    const auto cnt = sample_need_counts_in_cell(w, c, 20000, 1000 + s);
    const Simplex q = w.cell_distribution(c);
    for (std::size_t k = 0; k < kNeedCount; ++k) {
      const double z = (static_cast<double>(cnt[k]) - 20000.0 * q[k]) / std::sqrt(20000.0 * q[k] * (1.0 - q[k]));
      sum_sq += z * z;
      beyond += std::abs(z) > 3.0;
      ++m;
    }
  }
  CHECK(sum_sq / static_cast<double>(m) == doctest::Approx(1.0).epsilon(0.15));
  CHECK(beyond <= 10);

  CHECK(sample_need_counts_in_cell(w, 5, 10, 1) == sample_need_counts_in_cell(w, 5, 10, 1));
  CHECK_THROWS_AS(sample_need_counts_in_cell(w, kCellCount, 10, 1), ValidationError);
}

TEST_CASE("Bayes-optimal sort accuracy") {
  SUBCASE("deterministic world") {
    WorldConfig c = small_config(71);
    c.concentration = 1e4;
    c.context_strength = 0.0;
    c.user_tilt = 0.0;
    const WorldModel w = build_world(c);
    const auto scenes = scenes_of(sample_records(w, 10000, 72));
    CHECK(bayes_optimal_sa(w, scenes) == 1.0);
  }
  SUBCASE("uniform world") {
    WorldConfig c = small_config(73);
    c.concentration = 0.0;
    c.context_strength = 0.0;
    c.user_tilt = 0.0;
    const WorldModel w = build_world(c);
    const auto scenes = scenes_of(sample_records(w, 10000, 74));
    CHECK(std::abs(bayes_optimal_sa(w, scenes) - 0.5) <= 0.02);
  }
  SUBCASE("agrees with ranking the true logits") {
    const WorldModel w = build_world(small_config(75));
    const auto scenes = scenes_of(sample_records(w, 4000, 76));
    std::vector<int> labels;
    for (const auto& s : scenes) labels.push_back(code(s.need_label));
    const MatrixXd scores = oracle_need_scores(w, scenes);
    CHECK(bayes_optimal_sa(w, scenes) == sort_accuracy(scores, labels));
    for (std::size_t i = 0; i < scenes.size(); i += 97) {
      const auto& s = scenes[i].scene;
      const auto l = w.logits(w.user_index.at(s.profile.user_id), cell_of(s.context));
      for (std::size_t k = 0; k < kNeedCount; ++k)
        CHECK(scores(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) == l[k]);
    }
    // The population prior ranks no better than the truth in expectation.
    MatrixXd prior(static_cast<Eigen::Index>(scenes.size()), 10);
    const Simplex global = order_distribution(sample_records(w, 4000, 77).records);
    for (Eigen::Index i = 0; i < prior.rows(); ++i)
      for (Eigen::Index k = 0; k < 10; ++k) prior(i, k) = global[static_cast<std::size_t>(k)];
    CHECK(sort_accuracy(prior, labels) <= bayes_optimal_sa(w, scenes) + 0.01);
  }
  SUBCASE("foreign scenes are rejected") {
    const WorldModel w = build_world(small_config(78));
    auto scenes = scenes_of(sample_records(w, 50, 79));
    auto stranger = scenes;
    stranger[3].scene.profile.user_id = "user_elsewhere";
    CHECK_THROWS_WITH_AS(bayes_optimal_sa(w, stranger), doctest::Contains("user_elsewhere"), ValidationError);
    auto lost = scenes;
    lost[4].scene.context.poi_id = "shop_17";
    CHECK_THROWS_AS(bayes_optimal_sa(w, lost), ValidationError);
    CHECK_THROWS_AS(bayes_optimal_sa(w, {}), ValidationError);
  }
}

TEST_CASE("world configuration") {
  CHECK_NOTHROW(WorldConfig{}.validate());
  auto expect = [](WorldConfig c, const char* field) {
    CHECK_THROWS_WITH_AS(build_world(c), doctest::Contains(field), ValidationError);
  };
  WorldConfig c;
  c.context_strength = 1.5;
  expect(c, "context_strength");
  c = {};
  c.way_correlation = -0.1;
  expect(c, "way_correlation");
  c = {};
  c.user_count = 0;
  expect(c, "user_count");
  c = {};
  c.groups[1].age_band = "ancient";
  expect(c, "groups[1]");
  c = {};
  c.city_count = 1;
  expect(c, "city_count");

  WorldConfig custom;
  custom.user_count = 77;
  custom.context_strength = 0.9;
  custom.seed = 12;
  const WorldConfig back = world_config_from_json(world_config_to_json(custom));
  CHECK(back.user_count == 77);
  CHECK(back.context_strength == 0.9);
  CHECK(back.seed == 12);
  CHECK(world_config_from_json(json::object()).record_count == 50000);
  CHECK_THROWS_WITH_AS(world_config_from_json(json{{"strenght", 1}}), doctest::Contains("strenght"), ValidationError);
  CHECK_THROWS_WITH_AS(world_config_from_json(json{{"seed", "x"}}), doctest::Contains("seed"), ValidationError);
}

TEST_CASE("world persistence") {
  const WorldModel w = build_world(small_config(80));
  const WorldModel back = world_from_json(world_to_json(w));
  CHECK(world_to_json(back).dump() == world_to_json(w).dump());
  for (std::size_t cell : {std::size_t{0}, std::size_t{250}})
    for (std::size_t u : {std::size_t{0}, std::size_t{299}})
      CHECK(back.user_distribution(u, cell) == w.user_distribution(u, cell));
  const auto scenes = scenes_of(sample_records(w, 500, 81));
  CHECK(bayes_optimal_sa(back, scenes) == bayes_optimal_sa(w, scenes));
  json broken = world_to_json(w);
  broken.erase("cell_logits");
  CHECK_THROWS_AS(world_from_json(broken), ValidationError);
}

// Planted-pattern recoverability on the default desk-scale world: the
// empirical top-1 need of each cell against the top-1 of the true cell
// distribution.
namespace {

struct Recovery {
  std::size_t cells = 0, agree = 0;
  std::size_t separated = 0, separated_agree = 0;
};

Recovery measure_recovery(std::uint64_t seed) {
  WorldConfig c;
  c.seed = seed;
  REQUIRE(c.context_strength >= 0.8);
  REQUIRE(c.record_count >= 50000);
  const WorldModel w = build_world(c);
  const SynthCorpus corpus = sample_records(w, c.record_count, seed);
  std::vector<std::array<std::size_t, kNeedCount>> counts(kCellCount);
  for (const auto& r : corpus.records) ++counts[cell_of(r.context)][static_cast<std::size_t>(code(r.need))];
  Recovery out;
  for (std::size_t cell = 0; cell < kCellCount; ++cell) {
    const Simplex p = w.cell_distribution(cell);
    const auto& n = counts[cell];
    const std::size_t empirical = static_cast<std::size_t>(std::max_element(n.begin(), n.end()) - n.begin());
    std::size_t total = 0;
    for (auto v : n) total += v;
    const bool agree = empirical == argmax(p);
    ++out.cells;
    out.agree += agree;
    Simplex sorted = p;
    std::sort(sorted.begin(), sorted.end());
    const double gap = sorted[9] - sorted[8];
    const double sd = std::sqrt((sorted[9] + sorted[8] - gap * gap) / std::max<double>(1.0, static_cast<double>(total)));
    if (gap > 3.0 * sd) {
      ++out.separated;
      out.separated_agree += agree;
    }
  }
  return out;
}

}  // namespace

TEST_CASE("planted top-1 is recovered in statistically separated cells") {
  for (std::uint64_t seed : {0, 1}) {
    const Recovery r = measure_recovery(seed);
    MESSAGE("seed " << seed << ": " << r.separated_agree << " of " << r.separated << " separated cells agree");
    CHECK(r.separated >= 40);
    CHECK(r.separated_agree == r.separated);
  }
}

TEST_CASE("planted top-1 is recovered in 95% of all cells" * doctest::may_fail()) {
  const Recovery r = measure_recovery(0);
  const double share = static_cast<double>(r.agree) / static_cast<double>(r.cells);
  MESSAGE("empirical top-1 matches in " << r.agree << " of " << r.cells << " cells (" << share << ")");
  CHECK(share >= 0.95);
}
