#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>

#include "homophily/pipeline.hpp"
#include "homophily/population.hpp"

using namespace homophily;
using doctest::Approx;

namespace {

SimConfig small_config(std::uint64_t seed = 3) {
  SimConfig c;
  c.networks = default_networks(2, {1, 2}, 30);
  c.seed = seed;
  return c;
}

Replication small_replication(std::uint64_t seed) {
  RunConfig config;
  config.schools = 2;
  config.grades = {1, 2};
  config.students_per_network = 30;
  config.seed = seed;
  return simulate_replication(config, 0);
}

}  // namespace

TEST_CASE("median split halves each cell") {
  CounterStream rng(1, StreamPurpose::Classification);
  const std::vector<double> even{5, 1, 4, 2, 3, 6};
  const auto split = classify_median_split(even, rng);
  CHECK_FALSE(split.flagged);
  CHECK(split.high == std::vector<std::optional<bool>>{true, false, true, false, false, true});

  // The middle student of an odd cell goes either way, about half the time.
  const std::vector<double> odd{1, 2, 3};
  int high_middle = 0;
  for (std::uint32_t k = 0; k < 4000; ++k) {
    CounterStream r(2, StreamPurpose::Classification, k);
    const auto s = classify_median_split(odd, r);
    CHECK(*s.high[0] == false);
    CHECK(*s.high[2] == true);
    high_middle += *s.high[1];
  }
  CHECK(high_middle / 4000.0 == Approx(0.5).epsilon(0.1));

  // Ties are split too.
  const std::vector<double> flat(8, 1.0);
  const auto tied = classify_median_split(flat, rng);
  CHECK(std::count(tied.high.begin(), tied.high.end(), std::optional<bool>{true}) == 4);

  const std::vector<double> one{1.0};
  const auto single = classify_median_split(one, rng);
  CHECK(single.flagged);
  CHECK_FALSE(single.high[0].has_value());
}

TEST_CASE("population layout") {
  const auto config = small_config();
  const auto pop = generate_population(config);
  REQUIRE(pop.students.size() == 120);
  for (std::size_t k = 0; k < pop.students.size(); ++k) {
    const auto& s = pop.students[k];
    CHECK(s.id == static_cast<int>(k));
    const auto& net = pop.networks[s.network];
    CHECK(s.cell.school == net.school);
    CHECK(s.cell.grade == net.grade);
    const bool first = net.grade == config.first_year_grade;
    CHECK((s.cohort == Cohort::FirstYear) == first);
    CHECK(s.centrality_score.has_value() == !first);
    CHECK(s.high_central.has_value() == !first);
    CHECK(s.high_achieving.has_value());
    CHECK(s.design_types() == (first ? 2 : 4));
  }
  // Every cell is split evenly (up to one student).
  for (const auto& cell : pop.cells()) {
    int high = 0, n = 0;
    for (int id : pop.members(cell)) {
      high += *pop.students[id].high_achieving;
      ++n;
    }
    CHECK(std::abs(2 * high - n) <= 1);
  }
  CHECK(pop.flagged_cells == 0);
}

TEST_CASE("population generation is deterministic") {
  const auto a = generate_population(small_config(9));
  const auto b = generate_population(small_config(9));
  const auto c = generate_population(small_config(10));
  bool same = true, differ = false;
  for (std::size_t k = 0; k < a.students.size(); ++k) {
    same &= a.students[k].achievement_score == b.students[k].achievement_score;
    differ |= a.students[k].achievement_score != c.students[k].achievement_score;
  }
  CHECK(same);
  CHECK(differ);
}

TEST_CASE("poverty share and trait correlation") {
  SimConfig config = small_config();
  config.networks = default_networks(10, {2}, 100);
  const auto pop = generate_population(config);
  double poor = 0;
  for (const auto& s : pop.students) poor += s.poor;
  CHECK(poor / pop.students.size() == Approx(0.41).epsilon(0.12));

  config.trait_correlation = 0.8;
  const auto correlated = generate_population(config);
  int agree = 0;
  for (const auto& s : correlated.students) agree += s.poor == !*s.high_achieving;
  CHECK(agree > 0.6 * correlated.students.size());

  config.trait_correlation = 1.0;
  CHECK_THROWS_AS(generate_population(config), ConfigError);
}

TEST_CASE("similarity counts unclassified categories as shared") {
  Student a, b;
  a.poor = true;
  b.poor = false;
  a.high_achieving = true;
  b.high_achieving = true;
  CHECK(dyad_similarity(a, b) == 2);
  b.high_central = false;
  a.high_central = true;
  CHECK(dyad_similarity(a, b) == 1);
  b.poor = true;
  CHECK(dyad_similarity(a, b) == 2);
}

TEST_CASE("simulated dyads match the closed form") {
  const ModelParams params(ModelConfig{});
  for (int s = 0; s <= 3; ++s)
    for (auto distance : {DistanceClass::Near, DistanceClass::Far}) {
      CAPTURE(s);
      const auto mc = monte_carlo_link_prob(params, {s, distance}, 200000, 17);
      const double expected =
          link_prob(params, s, cost_of_distance(params, distance));
      CHECK(std::abs(mc.estimate - expected) < 4 * mc.standard_error);
    }

  // An independent draw of the stopping rule: each side is valuable with
  // probability p0 and maintains iff its signal arrives before the horizon.
  const double lambda = params.lambda(1);
  const double horizon = exploration_time(0.5, 1, lambda, 0.25);
  const double side = 0.5 * (1.0 - std::exp(-lambda * horizon));
  CHECK(1.0 - (1.0 - side) * (1.0 - side) == Approx(link_prob(params, 1, 0.25)).epsilon(1e-12));
}

TEST_CASE("the two sides are independent") {
  const ModelParams params(ModelConfig{});
  std::vector<DyadOutcome> dyads;
  for (std::uint32_t k = 0; k < 50000; ++k) {
    CounterStream rng(5, StreamPurpose::Generic, k);
    const auto sides = simulate_dyad(params, {1, DistanceClass::Far}, rng);
    DyadOutcome d;
    d.side_i = sides.side_i;
    d.side_j = sides.side_j;
    dyads.push_back(d);
  }
  CHECK(std::abs(side_correlation(dyads)) < 0.02);
}

TEST_CASE("preference mode draws a pair-level payoff") {
  ModelConfig mc;
  mc.mode = HomophilyMode::Preference;
  const ModelParams params(mc);
  const auto est = monte_carlo_link_prob(params, {0, DistanceClass::Far}, 200000, 3);
  CHECK(std::abs(est.estimate - 0.6 * dyad_link_prob(0.5, 1, 1, 0.25)) <
        4 * est.standard_error);
}

TEST_CASE("network simulation covers every within-network pair") {
  const auto rep = small_replication(4);
  const auto& pop = rep.population;
  std::size_t expected = 0;
  for (std::size_t net = 0; net < pop.networks.size(); ++net) {
    const auto n = pop.network_members(static_cast<int>(net)).size();
    expected += n * (n - 1) / 2;
  }
  CHECK(rep.outcomes.size() == expected);

  const ProximityIndex index(rep.allocation.lists, rep.allocation.dorms);
  int near = 0;
  for (const auto& d : rep.outcomes) {
    CHECK(d.i < d.j);
    CHECK(pop.students[d.i].network == pop.students[d.j].network);
    CHECK((d.distance == DistanceClass::Near) == index.physical_neighbor(d.i, d.j));
    near += d.distance == DistanceClass::Near;
    const bool returning = pop.students[d.i].cohort == Cohort::Returning &&
                           pop.students[d.j].cohort == Cohort::Returning;
    if (!returning) CHECK_FALSE(d.linked_baseline);
    CHECK(d.linked_endline == (d.side_i || d.side_j));
  }
  CHECK(near > 0);
}

TEST_CASE("a ten-student cell yields forty-five dyads") {
  SimConfig config;
  config.networks = {{1, 2, 10, 0.0}};
  const auto pop = generate_population(config);
  REQUIRE(pop.cells().size() == 1);
  const auto alloc = allocate(pop, std::vector<int>{4, 8}, 1, 0);
  const ProximityIndex index(alloc.lists, alloc.dorms);
  const auto outcomes = simulate_network(pop, index, ModelParams(ModelConfig{}), config);
  CHECK(outcomes.size() == 45);
}

TEST_CASE("frequency oracle agrees with simulated links") {
  std::vector<DyadOutcome> all;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const auto rep = small_replication(seed);
    all.insert(all.end(), rep.outcomes.begin(), rep.outcomes.end());
  }
  const auto checks = frequency_oracle(all);
  int passed = 0;
  for (const auto& b : checks) {
    CHECK(b.n > 0);
    passed += b.pass;
  }
  CHECK(passed >= static_cast<int>(checks.size()) - 1);
}

TEST_CASE("baseline persistence raises the predicted link probability") {
  SimConfig config = small_config();
  config.baseline_persistence = 1.0;
  const auto pop = generate_population(config);
  const auto alloc = allocate(pop, std::vector<int>{4, 8}, config.seed, 0);
  const ProximityIndex index(alloc.lists, alloc.dorms);
  const auto outcomes = simulate_network(pop, index, ModelParams(ModelConfig{}), config);
  int baseline = 0;
  for (const auto& d : outcomes)
    if (d.linked_baseline) {
      ++baseline;
      CHECK(d.linked_endline);
      CHECK(d.predicted == 1.0);
    }
  CHECK(baseline > 0);
}

TEST_CASE("invalid simulation configs are rejected") {
  SimConfig config = small_config();
  config.networks.clear();
  CHECK_THROWS_AS(validate(config), ConfigError);
  config = small_config();
  config.baseline_density = 1.5;
  CHECK_THROWS_AS(validate(config), ConfigError);
  config = small_config();
  config.networks[0].n_students = 0;
  CHECK_THROWS_AS(validate(config), ConfigError);
  config = small_config();
  config.first_year_near_cost_multiplier = 0.0;
  CHECK_THROWS_AS(validate(config), ConfigError);
}
