#include "homophily/population.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include <boost/math/distributions/normal.hpp>
#include <fmt/core.h>

namespace homophily {

std::string CellId::label() const {
  return fmt::format("{}-{}-{}", school, grade, gender == Gender::Male ? "M" : "F");
}

StudentType Student::type() const {
  return StudentType{{poor, !high_achieving.value_or(true),
                      !high_central.value_or(true)}};
}

int Student::design_type() const {
  const int low_achieving = high_achieving.value_or(false) ? 0 : 1;
  if (cohort == Cohort::FirstYear) return low_achieving;
  const int low_central = high_central.value_or(false) ? 0 : 1;
  return 2 * low_achieving + low_central;
}

namespace {

void check_probability(double p, const char* name) {
  if (!(p >= 0.0 && p <= 1.0))
    throw ConfigError(fmt::format("{} must lie in [0,1], got {}", name, p));
}

}  // namespace

void validate(const SimConfig& config) {
  if (config.networks.empty()) throw ConfigError("no networks configured");
  for (const auto& n : config.networks) {
    if (n.n_students <= 0)
      throw ConfigError(fmt::format("network school={} grade={} is empty",
                                    n.school, n.grade));
    check_probability(n.male_share, "male_share");
  }
  check_probability(config.poor_share, "poor_share");
  check_probability(config.baseline_density, "baseline_density");
  check_probability(config.baseline_persistence, "baseline_persistence");
  if (!(config.achievement_sd > 0.0) || !(config.centrality_sd > 0.0))
    throw ConfigError("score standard deviations must be positive");
  if (!(config.trait_correlation >= 0.0 && config.trait_correlation < 1.0))
    throw ConfigError(fmt::format("trait_correlation must lie in [0,1), got {}",
                                  config.trait_correlation));
  if (!(config.first_year_near_cost_multiplier > 0.0 &&
        config.first_year_near_cost_multiplier <= 1.0))
    throw ConfigError("first_year_near_cost_multiplier must lie in (0,1]");
}

std::vector<NetworkSpec> default_networks(int schools, std::vector<int> grades,
                                          int students_per_network,
                                          double male_share) {
  std::vector<NetworkSpec> out;
  for (int s = 1; s <= schools; ++s)
    for (int g : grades) out.push_back({s, g, students_per_network, male_share});
  return out;
}

std::vector<CellId> Population::cells() const {
  std::vector<CellId> out;
  for (const auto& s : students) out.push_back(s.cell);
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

std::vector<int> Population::members(const CellId& cell) const {
  std::vector<int> out;
  for (const auto& s : students)
    if (s.cell == cell) out.push_back(s.id);
  return out;
}

std::vector<int> Population::network_members(int network) const {
  std::vector<int> out;
  for (const auto& s : students)
    if (s.network == network) out.push_back(s.id);
  return out;
}

MedianSplit classify_median_split(std::span<const double> scores,
                                  CounterStream& rng) {
  MedianSplit out;
  const std::size_t n = scores.size();
  out.high.assign(n, std::nullopt);
  if (n < 2) {
    out.flagged = true;
    return out;
  }
  std::vector<double> tie(n);
  for (auto& t : tie) t = rng.uniform();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] < scores[b];
    return tie[a] < tie[b];
  });
  std::size_t n_low = n / 2;
  if (n % 2 == 1 && rng.bernoulli(0.5)) ++n_low;
  for (std::size_t k = 0; k < n; ++k) out.high[order[k]] = k >= n_low;
  return out;
}

Population generate_population(const SimConfig& config) {
  validate(config);
  Population pop;
  pop.networks = config.networks;

  CounterStream rng(config.seed, StreamPurpose::Population, config.replication);
  const double rho = config.trait_correlation;
  const double shared = std::sqrt(rho);
  const double own = std::sqrt(1.0 - rho);
  const boost::math::normal standard;
  double poor_threshold;
  if (config.poor_share <= 0.0) {
    poor_threshold = INFINITY;
  } else if (config.poor_share >= 1.0) {
    poor_threshold = -INFINITY;
  } else {
    poor_threshold = boost::math::quantile(boost::math::complement(standard, config.poor_share));
  }

  for (std::size_t net = 0; net < config.networks.size(); ++net) {
    const auto& spec = config.networks[net];
    const int males = static_cast<int>(std::lround(spec.n_students * spec.male_share));
    const Cohort cohort = spec.grade == config.first_year_grade
                              ? Cohort::FirstYear
                              : Cohort::Returning;
    for (int k = 0; k < spec.n_students; ++k) {
      Student s;
      s.id = static_cast<int>(pop.students.size());
      s.cell = {spec.school, spec.grade, k < males ? Gender::Male : Gender::Female};
      s.network = static_cast<int>(net);
      s.cohort = cohort;
      // Latent disadvantage factors: higher means poorer, lower scores.
      const double common = rng.normal();
      const double z_poor = shared * common + own * rng.normal();
      const double z_ach = shared * common + own * rng.normal();
      const double z_cent = shared * common + own * rng.normal();
      s.poor = z_poor > poor_threshold;
      s.achievement_score = config.achievement_mean - config.achievement_sd * z_ach;
      if (cohort == Cohort::Returning)
        s.centrality_score = config.centrality_mean - config.centrality_sd * z_cent;
      pop.students.push_back(std::move(s));
    }
  }

  const auto cells = pop.cells();
  for (std::size_t c = 0; c < cells.size(); ++c) {
    const auto ids = pop.members(cells[c]);
    CounterStream split_rng(config.seed, StreamPurpose::Classification,
                            config.replication, static_cast<std::uint32_t>(c));
    std::vector<double> ach;
    for (int id : ids) ach.push_back(pop.students[id].achievement_score);
    const auto ach_split = classify_median_split(ach, split_rng);
    bool flagged = ach_split.flagged;
    for (std::size_t k = 0; k < ids.size(); ++k)
      pop.students[ids[k]].high_achieving = ach_split.high[k];

    if (pop.students[ids.front()].cohort == Cohort::Returning) {
      std::vector<double> cent;
      for (int id : ids) cent.push_back(*pop.students[id].centrality_score);
      const auto cent_split = classify_median_split(cent, split_rng);
      flagged = flagged || cent_split.flagged;
      for (std::size_t k = 0; k < ids.size(); ++k)
        pop.students[ids[k]].high_central = cent_split.high[k];
    }
    if (flagged) ++pop.flagged_cells;
  }
  return pop;
}

int dyad_similarity(const Student& a, const Student& b) {
  int s = a.poor == b.poor ? 1 : 0;
  if (!a.high_achieving || !b.high_achieving || *a.high_achieving == *b.high_achieving)
    ++s;
  if (!a.high_central || !b.high_central || *a.high_central == *b.high_central)
    ++s;
  return s;
}

double dyad_cost(const ModelParams& params, const DyadModelInputs& inputs) {
  const double c = cost_of_distance(params, inputs.distance);
  return inputs.distance == DistanceClass::Near ? c * inputs.near_cost_multiplier : c;
}

DyadSides simulate_dyad(const ModelParams& params, const DyadModelInputs& inputs,
                        CounterStream& rng) {
  const double lambda = params.lambda(inputs.similarity);
  const double mu = params.mu(inputs.similarity);
  const double cost = dyad_cost(params, inputs);
  const double horizon = exploration_time(params.p0(), params.r(), lambda, cost);

  DyadSides out;
  out.high_payoff = rng.uniform() < mu;
  auto side = [&] {
    const bool valuable = rng.uniform() < params.p0();
    const double arrival = rng.exponential(lambda);
    return valuable && arrival <= horizon;
  };
  const bool side_i = side();
  const bool side_j = side();
  out.side_i = out.high_payoff && side_i;
  out.side_j = out.high_payoff && side_j;
  return out;
}

std::vector<DyadOutcome> simulate_network(const Population& population,
                                          const ProximityIndex& allocation,
                                          const ModelParams& params,
                                          const SimConfig& config) {
  validate(config);
  for (const auto& s : population.students)
    if (!allocation.contains(s.id))
      throw AllocationError(
          fmt::format("student {} is missing from the allocation", s.id));

  std::vector<DyadOutcome> out;
  for (std::size_t net = 0; net < population.networks.size(); ++net) {
    const auto ids = population.network_members(static_cast<int>(net));
    for (std::size_t u = 0; u < ids.size(); ++u) {
      for (std::size_t v = u + 1; v < ids.size(); ++v) {
        const Student& a = population.students[ids[u]];
        const Student& b = population.students[ids[v]];
        DyadOutcome d;
        d.i = std::min(a.id, b.id);
        d.j = std::max(a.id, b.id);
        d.network = static_cast<int>(net);
        d.similarity = dyad_similarity(a, b);
        d.distance = allocation.physical_neighbor(d.i, d.j) ? DistanceClass::Near
                                                            : DistanceClass::Far;
        d.first_year = a.cohort == Cohort::FirstYear && b.cohort == Cohort::FirstYear;

        DyadModelInputs inputs{d.similarity, d.distance,
                               d.first_year ? config.first_year_near_cost_multiplier
                                            : 1.0};
        CounterStream dyad_rng(config.seed, StreamPurpose::Dyad, config.replication,
                               static_cast<std::uint32_t>(d.i),
                               static_cast<std::uint32_t>(d.j));
        const auto sides = simulate_dyad(params, inputs, dyad_rng);
        d.side_i = sides.side_i;
        d.side_j = sides.side_j;

        bool persisted = false;
        if (a.cohort == Cohort::Returning && b.cohort == Cohort::Returning) {
          CounterStream base_rng(config.seed, StreamPurpose::Baseline,
                                 config.replication, static_cast<std::uint32_t>(d.i),
                                 static_cast<std::uint32_t>(d.j));
          d.linked_baseline = base_rng.bernoulli(config.baseline_density);
          persisted = base_rng.bernoulli(config.baseline_persistence) && d.linked_baseline;
        }
        d.linked_endline = d.side_i || d.side_j || persisted;

        const double y = link_prob(params, d.similarity, dyad_cost(params, inputs));
        const double keep = d.linked_baseline ? config.baseline_persistence : 0.0;
        d.predicted = 1.0 - (1.0 - y) * (1.0 - keep);
        out.push_back(d);
      }
    }
  }
  return out;
}

MonteCarloEstimate monte_carlo_link_prob(const ModelParams& params,
                                         const DyadModelInputs& inputs,
                                         long n_reps, std::uint64_t seed) {
  if (n_reps < 1) throw InputError("n_reps must be at least 1");
  long links = 0;
  for (long k = 0; k < n_reps; ++k) {
    const auto key = static_cast<std::uint64_t>(k);
    CounterStream rng(seed, StreamPurpose::MonteCarlo, 0,
                      static_cast<std::uint32_t>(key),
                      static_cast<std::uint32_t>(key >> 32));
    const auto sides = simulate_dyad(params, inputs, rng);
    if (sides.side_i || sides.side_j) ++links;
  }
  MonteCarloEstimate out;
  out.n = n_reps;
  out.estimate = static_cast<double>(links) / n_reps;
  out.standard_error = std::sqrt(out.estimate * (1.0 - out.estimate) / n_reps);
  return out;
}

std::vector<BucketCheck> frequency_oracle(std::span<const DyadOutcome> dyads,
                                          double z) {
  struct Acc {
    long n = 0;
    long links = 0;
    double sum_p = 0.0;
    double sum_var = 0.0;
  };
  std::map<std::pair<int, int>, Acc> buckets;
  for (const auto& d : dyads) {
    auto& acc = buckets[{d.similarity, d.distance == DistanceClass::Near ? 0 : 1}];
    ++acc.n;
    acc.links += d.linked_endline ? 1 : 0;
    acc.sum_p += d.predicted;
    acc.sum_var += d.predicted * (1.0 - d.predicted);
  }
  std::vector<BucketCheck> out;
  for (const auto& [key, acc] : buckets) {
    BucketCheck b;
    b.similarity = key.first;
    b.distance = key.second == 0 ? DistanceClass::Near : DistanceClass::Far;
    b.n = acc.n;
    b.links = acc.links;
    b.rate = static_cast<double>(acc.links) / acc.n;
    b.predicted = acc.sum_p / acc.n;
    b.standard_error = std::sqrt(acc.sum_var) / acc.n;
    const double gap = std::abs(b.rate - b.predicted);
    b.pass = b.standard_error > 0.0 ? gap <= z * b.standard_error : gap < 1e-12;
    out.push_back(b);
  }
  return out;
}

double side_correlation(std::span<const DyadOutcome> dyads) {
  const double n = static_cast<double>(dyads.size());
  if (n < 2) return 0.0;
  double si = 0, sj = 0, sij = 0;
  for (const auto& d : dyads) {
    si += d.side_i;
    sj += d.side_j;
    sij += d.side_i && d.side_j;
  }
  const double mi = si / n, mj = sj / n;
  const double cov = sij / n - mi * mj;
  const double var_i = mi * (1 - mi), var_j = mj * (1 - mj);
  if (var_i <= 0 || var_j <= 0) return 0.0;
  return cov / std::sqrt(var_i * var_j);
}

}  // namespace homophily
