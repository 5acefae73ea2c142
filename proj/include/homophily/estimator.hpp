#pragma once

#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "homophily/population.hpp"
#include "homophily/randomization.hpp"

namespace homophily {

class ConvergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// One fixed-effect dimension: a dense group code per row.
struct FixedEffect {
  std::string name;
  std::vector<int> group;
  int levels = 0;
};

/// Densifies arbitrary integer keys into 0..levels-1 codes, in order of
/// first appearance.
FixedEffect make_fixed_effect(std::string name, std::span<const long long> keys);

struct WithinReport {
  int iterations = 0;
  /// Largest within-group mean removed in the final sweep.
  double max_group_mean = 0.0;
};

/// Alternating projections: sweeps group-demeaning over every dimension in
/// turn until each column's largest group mean drops below
/// tol / fes.size(), so every group mean of the result is below tol.
/// Columns are independent and stop individually once converged.
WithinReport within_transform(Eigen::Ref<Eigen::MatrixXd> data,
                              std::span<const FixedEffect> fes, double tol = 1e-8,
                              int max_iter = 10000);

struct OlsFit {
  /// Coefficients for the kept columns, in column order.
  Eigen::VectorXd coefficients;
  std::vector<int> kept;
  /// Columns dropped as (near) linear combinations of earlier columns.
  std::vector<int> dropped;
  Eigen::VectorXd residuals;
  /// (X'X)^{-1} over kept columns.
  Eigen::MatrixXd bread;
};

/// Least squares with deterministic collinearity handling: columns are
/// screened left to right and a column is dropped when its squared
/// residual on the kept columns falls below collinearity_tol times its
/// reference sum of squares. `reference_ss` defaults to each column's own
/// sum of squares; pass pre-demeaning sums so columns absorbed by fixed
/// effects are dropped too.
OlsFit ols(const Eigen::VectorXd& y, const Eigen::MatrixXd& X,
           std::span<const double> reference_ss = {},
           double collinearity_tol = 1e-9);

/// CR1 sandwich: G/(G-1) * (N-1)/(N-K) * B (sum_g s_g s_g') B with
/// s_g = X_g' e_g and K the number of columns of X. Requires >= 2 clusters.
Eigen::MatrixXd cluster_robust_vcov(const Eigen::MatrixXd& X,
                                    const Eigen::VectorXd& residuals,
                                    std::span<const int> clusters);
Eigen::VectorXd cluster_robust_se(const Eigen::MatrixXd& X,
                                  const Eigen::VectorXd& residuals,
                                  std::span<const int> clusters);

struct Term {
  std::string name;
  double estimate = 0.0;
  double cluster_se = 0.0;
  double t() const { return cluster_se > 0 ? estimate / cluster_se : 0.0; }
};

struct FeGroupInfo {
  std::string name;
  int levels = 0;
};

struct RegressionResult {
  std::string specification;
  std::string outcome;
  int d = 0;  // neighborhood size; 0 when not applicable
  std::vector<Term> terms;
  std::vector<std::string> dropped;
  long n_obs = 0;
  int n_clusters = 0;
  std::vector<FeGroupInfo> fe_groups;
  double residual_ss = 0.0;
  int iterations = 0;
  double final_delta = 0.0;

  bool has(const std::string& name) const;
  const Term& term(const std::string& name) const;
};

/// Fixed effects absorbed once; any number of regressions over the same
/// rows can then pick their columns.
class DemeanedDesign {
 public:
  DemeanedDesign(Eigen::MatrixXd data, std::vector<std::string> names,
                 std::vector<FixedEffect> fes, std::vector<int> clusters,
                 double tol = 1e-8, int max_iter = 10000);

  RegressionResult fit(const std::string& outcome,
                       const std::vector<std::string>& regressors) const;

  long rows() const { return data_.rows(); }
  const WithinReport& report() const { return report_; }

 private:
  int column(const std::string& name) const;

  Eigen::MatrixXd data_;
  std::vector<std::string> names_;
  std::vector<double> raw_ss_;
  std::vector<FeGroupInfo> fe_info_;
  std::vector<int> clusters_;
  int n_clusters_ = 0;
  WithinReport report_;
};

// ---------------------------------------------------------------------------
// Dyad-level data

struct DyadRow {
  int ego = 0;
  int alter = 0;
  /// Network (school x grade); the clustering level.
  int cluster = 0;
  bool y = false;
  bool baseline_link = false;
  /// Baseline links exist only between returning students.
  bool baseline_available = false;
  /// 0 when ego and alter sit on different lists.
  int list_distance = 0;
  bool physical_neighbor = false;
  /// Both students are first-years.
  bool first = false;
  bool diff_poverty = false;
  bool diff_achievement = false;
  bool diff_centrality = false;
  /// 0 = FF, 1 = FM, 2 = MM.
  int gender_combo = 0;
  /// Unordered pair of (achievement, centrality) classifications.
  int type_combo = 0;
  int similarity = 0;

  bool l(int d) const { return list_distance > 0 && list_distance <= d; }
};

using DyadTable = std::vector<DyadRow>;

/// One row per simulated within-network dyad.
DyadTable build_dyads(const Population& population, const ProximityIndex& allocation,
                      std::span<const DyadOutcome> outcomes);

/// Type code for type-combination fixed effects: 3 * achievement + centrality
/// with 0 = high, 1 = low, 2 = unclassified.
int student_type_code(const Student& s);
int type_combo_code(int a, int b);

enum class DyadOutcomeVar { Endline, Baseline, PhysicalNeighbor };
enum class ProximityMeasure { ListNeighborhood, PhysicalNeighbor };

std::string to_string(DyadOutcomeVar v);

struct ProximityOptions {
  DyadOutcomeVar outcome = DyadOutcomeVar::Endline;
  ProximityMeasure measure = ProximityMeasure::ListNeighborhood;
  /// Type-combination fixed effects (design controls).
  bool type_combo_fe = true;
  bool swap_ego_alter = false;
  /// Heterogeneity only: also control for the pairwise and triple products
  /// of the difference dummies.
  bool difference_interactions = false;
  double tol = 1e-8;
  int max_iter = 10000;
};

/// y = gamma l^d + eta l^d x first + omega baseline_link + FE + e, with ego,
/// alter, gender-combination and type-combination fixed effects and
/// network-clustered errors. The baseline control enters only for the
/// endline outcome; the baseline outcome also restricts to returning pairs.
std::vector<RegressionResult> proximity_curve(const DyadTable& table,
                                              std::span<const int> ds,
                                              const ProximityOptions& options = {});
RegressionResult proximity_regression(const DyadTable& table, int d,
                                      const ProximityOptions& options = {});

/// Adds difference dummies D_p, D_a, D_s and their interactions with l^d.
/// Type-combination fixed effects are off by default here because they
/// would absorb D_a and D_s. The products of the difference dummies enter by
/// default: the list makes l^d more likely among pairs that share design
/// types, so any non-additivity of link levels in the dummies would
/// otherwise load onto the l^d x D terms.
std::vector<RegressionResult> heterogeneity_curve(const DyadTable& table,
                                                  std::span<const int> ds,
                                                  ProximityOptions options = {
                                                      .type_combo_fe = false,
                                                      .difference_interactions = true});
RegressionResult heterogeneity_regression(const DyadTable& table, int d,
                                          ProximityOptions options = {
                                              .type_combo_fe = false,
                                              .difference_interactions = true});

// ---------------------------------------------------------------------------
// Node-level data

struct NodeRow {
  int id = 0;
  int cell = 0;
  /// Student type by assigned peer type within the cell.
  int cluster = 0;
  bool returning = false;
  bool poor = false;
  bool lower_achieving = false;
  bool less_central = false;
  int connections = 0;
  int with_poor = 0;
  int with_nonpoor = 0;
  int with_lower_achieving = 0;
  int with_higher_achieving = 0;
  int with_less_central = 0;
  int with_more_central = 0;
  int baseline_connections = 0;
};

std::vector<NodeRow> build_nodes(const Population& population,
                                 std::span<const DyadOutcome> outcomes,
                                 std::span<const RandomizationList> lists);

/// Outcome names accepted by homophily_regression.
const std::vector<std::string>& homophily_outcomes();

/// y_i = b1 poor + b2 lower_achieving + b3 less_central + delta y_baseline
/// + cell FE + e over returning students (the only ones with a centrality
/// classification), clustered by student type x peer type.
RegressionResult homophily_regression(std::span<const NodeRow> nodes,
                                      const std::string& outcome);
std::vector<RegressionResult> homophily_table(std::span<const NodeRow> nodes);

}  // namespace homophily
