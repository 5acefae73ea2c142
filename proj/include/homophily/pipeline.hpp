#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "homophily/config.hpp"
#include "homophily/csv.hpp"
#include "homophily/estimator.hpp"
#include "homophily/population.hpp"
#include "homophily/randomization.hpp"

namespace homophily {

inline constexpr const char* kVersion = "0.1.0";

/// A pipeline stage failed; the message starts with the stage name.
class StageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Worker count: `configured` (0 = hardware concurrency), capped by the
/// HOMOPHILY_LAB_THREADS environment variable when set.
int worker_threads(int configured);

/// Runs fn(0..n-1) on up to `threads` workers. Rethrows the exception of
/// the lowest failing index.
void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn);

struct Allocation {
  std::vector<RandomizationList> lists;
  std::vector<Dorm> dorms;
  int flagged_cells = 0;
};

/// Randomizes every cell of the population with a Treatment stream keyed by
/// the cell's index; dorm ids run on across cells.
Allocation allocate(const Population& population, std::span<const int> dorm_pattern,
                    std::uint64_t seed, std::uint32_t replication);

struct Replication {
  Population population;
  Allocation allocation;
  std::vector<DyadOutcome> outcomes;
};

Replication simulate_replication(const RunConfig& config, std::uint32_t replication);

struct Estimates {
  std::vector<RegressionResult> proximity;
  std::vector<RegressionResult> heterogeneity;
  /// Baseline links on list proximity (returning pairs).
  std::vector<RegressionResult> placebo;
  /// Physical adjacency on list proximity.
  std::vector<RegressionResult> first_stage;
  std::vector<RegressionResult> homophily;
};

Estimates estimate_all(const DyadTable& dyads, std::span<const NodeRow> nodes,
                       std::span<const int> ds, bool difference_interactions = true);

// ---------------------------------------------------------------------------
// Tables

/// Roster columns: id, school, grade, gender (M/F), cohort
/// (first_year/returning), achievement, centrality (blank for first-years).
std::vector<Student> read_roster(const CsvTable& table);

/// Median-splits each cell of the roster, then randomizes it. Cells are
/// processed in (school, grade, gender) order.
std::vector<CellRandomization> randomize_roster(std::vector<Student>& roster,
                                                std::span<const int> dorm_pattern,
                                                std::uint64_t seed);

void write_lists(std::ostream& out, std::span<const RandomizationList> lists,
                 std::span<const Dorm> dorms, std::optional<int> rep = std::nullopt);
void write_dyads(CsvWriter& out, int rep, const DyadTable& dyads);
void write_nodes(CsvWriter& out, int rep, std::span<const NodeRow> nodes);
std::vector<std::string> dyad_columns();
std::vector<std::string> node_columns();

/// Tables grouped by the rep column.
std::map<int, DyadTable> read_dyads(const CsvTable& table);
std::map<int, std::vector<NodeRow>> read_nodes(const CsvTable& table);

// ---------------------------------------------------------------------------
// Commands. Validation problems throw std::invalid_argument subclasses;
// everything else throws std::runtime_error.

void cmd_calc(const ModelConfig& model, int s, DistanceClass distance, std::ostream& out);

void cmd_randomize(const std::string& roster_path, const RunConfig& config,
                   const std::string& out_dir);

void cmd_simulate(const RunConfig& config, const std::string& out_dir);

/// Writes warnings about dropped columns to `log`.
void cmd_estimate(const std::string& dyads_path, const std::string& nodes_path,
                  const RunConfig& config, const std::string& out_dir, std::ostream& log);

/// Runs every replication end to end and assembles the report. Pure: no
/// files are touched.
nlohmann::json experiment_report(const RunConfig& config);

/// experiment_report plus report.json and curve CSVs under out_dir.
nlohmann::json cmd_experiment(const RunConfig& config, const std::string& out_dir);

}  // namespace homophily
