#pragma once

#include <compare>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "homophily/model.hpp"
#include "homophily/randomization.hpp"
#include "homophily/rng.hpp"

namespace homophily {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class Gender { Female, Male };
enum class Cohort { FirstYear, Returning };

/// Randomization stratum: school x grade x gender.
struct CellId {
  int school = 0;
  int grade = 0;
  Gender gender = Gender::Female;

  auto operator<=>(const CellId&) const = default;
  std::string label() const;
};

struct Student {
  int id = 0;
  CellId cell;
  /// Index into Population::networks (school x grade).
  int network = 0;
  Cohort cohort = Cohort::Returning;
  bool poor = false;
  double achievement_score = 0.0;
  /// Absent for first-years, who have no baseline network.
  std::optional<double> centrality_score;
  /// Cell-median classifications; absent when the cell could not be split.
  std::optional<bool> high_achieving;
  std::optional<bool> high_central;

  /// Model traits (poor, lower-achieving, less-central); unclassified
  /// categories read as false.
  StudentType type() const;
  /// Design type index: 0..3 (achievement x centrality) for returning
  /// students, 0..1 (achievement) for first-years. High comes first.
  int design_type() const;
  int design_types() const { return cohort == Cohort::Returning ? 4 : 2; }
};

struct NetworkSpec {
  int school = 0;
  int grade = 0;
  int n_students = 0;
  double male_share = 0.5;

  bool operator==(const NetworkSpec&) const = default;
};

struct SimConfig {
  std::vector<NetworkSpec> networks;
  /// Grade whose students are the entering cohort.
  int first_year_grade = 1;
  double poor_share = 0.41;
  double achievement_mean = 0.0;
  double achievement_sd = 1.0;
  double centrality_mean = 0.0;
  double centrality_sd = 1.0;
  /// Equicorrelation of the latent disadvantage factors behind poverty,
  /// low achievement and low centrality. 0 draws them independently.
  double trait_correlation = 0.0;
  /// Link probability among returning students before the intervention.
  double baseline_density = 0.15;
  /// Probability a baseline link survives to the endline on its own.
  double baseline_persistence = 0.0;
  /// Multiplier on the near cost for first-year pairs (1 = off).
  double first_year_near_cost_multiplier = 1.0;
  std::uint64_t seed = 1;
  std::uint32_t replication = 0;
};

/// Throws ConfigError on an invalid configuration.
void validate(const SimConfig& config);

/// 19 schools x grades {1,2,3} x 88 students (~5,000 students).
std::vector<NetworkSpec> default_networks(int schools = 19,
                                          std::vector<int> grades = {1, 2, 3},
                                          int students_per_network = 88,
                                          double male_share = 0.43);

struct Population {
  std::vector<Student> students;  // id == index
  std::vector<NetworkSpec> networks;
  /// Number of cells where a median split was impossible.
  int flagged_cells = 0;

  std::vector<CellId> cells() const;
  std::vector<int> members(const CellId& cell) const;
  std::vector<int> network_members(int network) const;
};

struct MedianSplit {
  std::vector<std::optional<bool>> high;
  bool flagged = false;
};

/// Lower half low, upper half high; ties ordered by the stream, and the
/// middle student of an odd cell goes to either side with probability 1/2.
/// Cells with fewer than two students are flagged and left unclassified.
MedianSplit classify_median_split(std::span<const double> scores,
                                  CounterStream& rng);

Population generate_population(const SimConfig& config);

/// Similarity count over (poverty, achievement, centrality). A category
/// unclassified for either student counts as shared, which matches coding
/// its difference dummy as zero in estimation.
int dyad_similarity(const Student& a, const Student& b);

struct DyadModelInputs {
  int similarity = 0;
  DistanceClass distance = DistanceClass::Far;
  /// Applied to the near cost only.
  double near_cost_multiplier = 1.0;
};

double dyad_cost(const ModelParams& params, const DyadModelInputs& inputs);

struct DyadSides {
  bool side_i = false;
  bool side_j = false;
  /// Pair-level maximum-payoff draw (always true in learning mode).
  bool high_payoff = true;
};

/// Exact sampling of the stopping rule: a side maintains iff its value is 1
/// and the first signal arrives before the exploration phase ends. Always
/// consumes five uniforms.
DyadSides simulate_dyad(const ModelParams& params, const DyadModelInputs& inputs,
                        CounterStream& rng);

struct DyadOutcome {
  int i = 0;  // i < j
  int j = 0;
  int network = 0;
  int similarity = 0;
  DistanceClass distance = DistanceClass::Far;
  bool first_year = false;
  bool linked_baseline = false;
  bool linked_endline = false;
  bool side_i = false;
  bool side_j = false;
  /// Model probability of an endline link given the realized baseline.
  double predicted = 0.0;
};

/// Every within-network pair once. Near iff physical neighbors under the
/// allocation. Baseline links only between returning students.
std::vector<DyadOutcome> simulate_network(const Population& population,
                                          const ProximityIndex& allocation,
                                          const ModelParams& params,
                                          const SimConfig& config);

struct MonteCarloEstimate {
  double estimate = 0.0;
  double standard_error = 0.0;
  long n = 0;
};

MonteCarloEstimate monte_carlo_link_prob(const ModelParams& params,
                                         const DyadModelInputs& inputs,
                                         long n_reps, std::uint64_t seed);

struct BucketCheck {
  int similarity = 0;
  DistanceClass distance = DistanceClass::Far;
  long n = 0;
  long links = 0;
  double rate = 0.0;
  double predicted = 0.0;
  double standard_error = 0.0;
  bool pass = false;
};

/// Empirical link rate per (similarity, distance) bucket against the mean
/// model probability, with binomial standard error sqrt(sum p(1-p))/n.
std::vector<BucketCheck> frequency_oracle(std::span<const DyadOutcome> dyads,
                                          double z = 3.0);

/// Pearson correlation between the two sides across the given dyads.
double side_correlation(std::span<const DyadOutcome> dyads);

}  // namespace homophily
