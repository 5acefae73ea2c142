#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "homophily/model.hpp"
#include "homophily/population.hpp"

namespace homophily {

/// Everything a pipeline run needs. Every field has a default; a JSON
/// document may set any subset.
struct RunConfig {
  ModelConfig model;

  // Population generator.
  int schools = 19;
  std::vector<int> grades{1, 2, 3};
  int students_per_network = 88;
  double male_share = 0.43;
  int first_year_grade = 1;
  double poor_share = 0.41;
  double achievement_mean = 0.0;
  double achievement_sd = 1.0;
  double centrality_mean = 0.0;
  double centrality_sd = 1.0;
  double trait_correlation = 0.0;
  double baseline_density = 0.15;
  double baseline_persistence = 0.0;
  double first_year_near_cost_multiplier = 1.0;

  /// Cycled dorm capacities; the last dorm of a cell is truncated.
  std::vector<int> dorm_sizes{4, 8};
  /// Control for products of the difference dummies in the heterogeneity
  /// regression.
  bool difference_interactions = true;
  int d_min = 1;
  int d_max = 9;

  std::uint64_t seed = 1;
  int replications = 1;
  std::string output_dir = "out";
  /// Worker threads; 0 uses the hardware concurrency.
  int threads = 0;

  bool operator==(const RunConfig&) const = default;

  std::vector<int> d_range() const;
  SimConfig sim_config(std::uint32_t replication) const;
};

/// Throws ConfigError (or ModelRestrictionError) on an invalid document.
void validate(const RunConfig& config);

/// Unknown keys and wrongly typed values are errors; absent keys keep
/// their defaults. The result is validated.
RunConfig config_from_json(const nlohmann::json& doc);
nlohmann::json config_to_json(const RunConfig& config);

RunConfig load_config(const std::string& path);
RunConfig parse_config(const std::string& text);

/// FNV-1a 64 of the canonical (key-sorted, compact) serialization, as 16
/// hex digits.
std::string config_hash(const RunConfig& config);

}  // namespace homophily
