#include "homophily/estimator.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <unordered_map>

#include <fmt/core.h>

namespace homophily {

FixedEffect make_fixed_effect(std::string name, std::span<const long long> keys) {
  FixedEffect fe;
  fe.name = std::move(name);
  fe.group.reserve(keys.size());
  std::unordered_map<long long, int> codes;
  for (long long k : keys) {
    auto [it, inserted] = codes.try_emplace(k, fe.levels);
    if (inserted) ++fe.levels;
    fe.group.push_back(it->second);
  }
  return fe;
}

WithinReport within_transform(Eigen::Ref<Eigen::MatrixXd> data,
                              std::span<const FixedEffect> fes, double tol,
                              int max_iter) {
  WithinReport report;
  if (fes.empty() || data.cols() == 0) return report;
  const Eigen::Index n = data.rows();

  std::vector<std::vector<double>> inv_counts(fes.size());
  for (std::size_t f = 0; f < fes.size(); ++f) {
    const auto& fe = fes[f];
    if (static_cast<Eigen::Index>(fe.group.size()) != n)
      throw InputError(fmt::format("fixed effect '{}' has {} rows, data has {}",
                                   fe.name, fe.group.size(), n));
    std::vector<long> counts(static_cast<std::size_t>(fe.levels), 0);
    for (int g : fe.group) {
      if (g < 0 || g >= fe.levels)
        throw InputError(fmt::format("fixed effect '{}' has group code {} outside [0,{})",
                                     fe.name, g, fe.levels));
      ++counts[static_cast<std::size_t>(g)];
    }
    inv_counts[f].resize(counts.size());
    for (std::size_t g = 0; g < counts.size(); ++g) {
      if (counts[g] == 0)
        throw InputError(fmt::format("fixed effect '{}' has an empty group {}",
                                     fe.name, g));
      inv_counts[f][g] = 1.0 / static_cast<double>(counts[g]);
    }
  }

  const double threshold = tol / static_cast<double>(fes.size());
  std::vector<char> active(static_cast<std::size_t>(data.cols()), 1);
  std::vector<double> sums;
  for (int iter = 1; iter <= max_iter; ++iter) {
    double sweep = 0.0;
    for (Eigen::Index c = 0; c < data.cols(); ++c) {
      if (!active[static_cast<std::size_t>(c)]) continue;
      double* x = data.col(c).data();
      double col_delta = 0.0;
      for (std::size_t f = 0; f < fes.size(); ++f) {
        const int* g = fes[f].group.data();
        sums.assign(static_cast<std::size_t>(fes[f].levels), 0.0);
        for (Eigen::Index r = 0; r < n; ++r) sums[g[r]] += x[r];
        for (std::size_t k = 0; k < sums.size(); ++k) {
          sums[k] *= inv_counts[f][k];
          col_delta = std::max(col_delta, std::abs(sums[k]));
        }
        for (Eigen::Index r = 0; r < n; ++r) x[r] -= sums[g[r]];
      }
      if (col_delta < threshold) active[static_cast<std::size_t>(c)] = 0;
      sweep = std::max(sweep, col_delta);
    }
    report.iterations = iter;
    report.max_group_mean = sweep;
    if (sweep < threshold) return report;
  }
  throw ConvergenceError(fmt::format(
      "within transform did not converge in {} sweeps (max group mean {:.3e}, "
      "tolerance {:.1e})",
      max_iter, report.max_group_mean, tol));
}

OlsFit ols(const Eigen::VectorXd& y, const Eigen::MatrixXd& X,
           std::span<const double> reference_ss, double collinearity_tol) {
  if (y.size() != X.rows())
    throw InputError(fmt::format("y has {} rows, X has {}", y.size(), X.rows()));
  const Eigen::Index p = X.cols();
  if (!reference_ss.empty() && static_cast<Eigen::Index>(reference_ss.size()) != p)
    throw InputError("reference_ss must have one entry per column");

  const Eigen::MatrixXd gram = X.transpose() * X;
  OlsFit fit;

  // Left-to-right Cholesky screening.
  Eigen::MatrixXd L = Eigen::MatrixXd::Zero(p, p);
  for (Eigen::Index k = 0; k < p; ++k) {
    double residual = gram(k, k);
    for (int j : fit.kept) residual -= L(k, j) * L(k, j);
    const double scale = reference_ss.empty() ? gram(k, k) : reference_ss[k];
    if (!(residual > collinearity_tol * scale) || !(residual > 0.0)) {
      fit.dropped.push_back(static_cast<int>(k));
      continue;
    }
    L(k, k) = std::sqrt(residual);
    for (Eigen::Index m = k + 1; m < p; ++m) {
      double v = gram(m, k);
      for (int j : fit.kept) v -= L(m, j) * L(k, j);
      L(m, k) = v / L(k, k);
    }
    fit.kept.push_back(static_cast<int>(k));
  }

  const auto q = static_cast<Eigen::Index>(fit.kept.size());
  Eigen::MatrixXd Xk(X.rows(), q);
  for (Eigen::Index c = 0; c < q; ++c) Xk.col(c) = X.col(fit.kept[c]);
  if (q == 0) {
    fit.coefficients = Eigen::VectorXd();
    fit.residuals = y;
    fit.bread = Eigen::MatrixXd();
    return fit;
  }
  const Eigen::MatrixXd gk = Xk.transpose() * Xk;
  const Eigen::LDLT<Eigen::MatrixXd> solver(gk);
  fit.coefficients = solver.solve(Xk.transpose() * y);
  fit.residuals = y - Xk * fit.coefficients;
  fit.bread = solver.solve(Eigen::MatrixXd::Identity(q, q));
  return fit;
}

Eigen::MatrixXd cluster_robust_vcov(const Eigen::MatrixXd& X,
                                    const Eigen::VectorXd& residuals,
                                    std::span<const int> clusters) {
  const Eigen::Index n = X.rows();
  const Eigen::Index k = X.cols();
  if (residuals.size() != n || static_cast<Eigen::Index>(clusters.size()) != n)
    throw InputError("X, residuals and clusters must have the same number of rows");

  std::unordered_map<int, int> codes;
  std::vector<int> code(static_cast<std::size_t>(n));
  for (Eigen::Index r = 0; r < n; ++r) {
    auto [it, inserted] = codes.try_emplace(clusters[r], static_cast<int>(codes.size()));
    code[static_cast<std::size_t>(r)] = it->second;
  }
  const auto groups = static_cast<Eigen::Index>(codes.size());
  if (groups < 2)
    throw InputError("cluster-robust standard errors need at least two clusters");
  if (n <= k)
    throw InputError(fmt::format("{} observations cannot support {} regressors", n, k));

  Eigen::MatrixXd scores = Eigen::MatrixXd::Zero(groups, k);
  for (Eigen::Index r = 0; r < n; ++r)
    scores.row(code[static_cast<std::size_t>(r)]) += residuals[r] * X.row(r);

  const Eigen::MatrixXd bread = (X.transpose() * X).ldlt().solve(Eigen::MatrixXd::Identity(k, k));
  const Eigen::MatrixXd meat = scores.transpose() * scores;
  const double g = static_cast<double>(groups);
  const double factor = g / (g - 1.0) * (static_cast<double>(n) - 1.0) /
                        static_cast<double>(n - k);
  return factor * bread * meat * bread;
}

Eigen::VectorXd cluster_robust_se(const Eigen::MatrixXd& X,
                                  const Eigen::VectorXd& residuals,
                                  std::span<const int> clusters) {
  return cluster_robust_vcov(X, residuals, clusters).diagonal().cwiseMax(0.0).cwiseSqrt();
}

bool RegressionResult::has(const std::string& name) const {
  return std::any_of(terms.begin(), terms.end(),
                     [&](const Term& t) { return t.name == name; });
}

const Term& RegressionResult::term(const std::string& name) const {
  for (const auto& t : terms)
    if (t.name == name) return t;
  throw InputError(fmt::format("{} regression ({}, d={}) has no term '{}'",
                               specification, outcome, d, name));
}

DemeanedDesign::DemeanedDesign(Eigen::MatrixXd data, std::vector<std::string> names,
                               std::vector<FixedEffect> fes, std::vector<int> clusters,
                               double tol, int max_iter)
    : data_(std::move(data)), names_(std::move(names)), clusters_(std::move(clusters)) {
  if (static_cast<Eigen::Index>(names_.size()) != data_.cols())
    throw InputError("one name per column required");
  raw_ss_.resize(names_.size());
  for (Eigen::Index c = 0; c < data_.cols(); ++c)
    raw_ss_[static_cast<std::size_t>(c)] = data_.col(c).squaredNorm();
  for (const auto& fe : fes) fe_info_.push_back({fe.name, fe.levels});
  report_ = within_transform(data_, fes, tol, max_iter);
  std::vector<int> sorted = clusters_;
  std::sort(sorted.begin(), sorted.end());
  n_clusters_ = static_cast<int>(std::unique(sorted.begin(), sorted.end()) - sorted.begin());
}

int DemeanedDesign::column(const std::string& name) const {
  for (std::size_t c = 0; c < names_.size(); ++c)
    if (names_[c] == name) return static_cast<int>(c);
  throw InputError(fmt::format("design has no column '{}'", name));
}

RegressionResult DemeanedDesign::fit(const std::string& outcome,
                                     const std::vector<std::string>& regressors) const {
  const Eigen::VectorXd y = data_.col(column(outcome));
  Eigen::MatrixXd X(data_.rows(), static_cast<Eigen::Index>(regressors.size()));
  std::vector<double> ref;
  for (std::size_t k = 0; k < regressors.size(); ++k) {
    const int c = column(regressors[k]);
    X.col(static_cast<Eigen::Index>(k)) = data_.col(c);
    ref.push_back(raw_ss_[static_cast<std::size_t>(c)]);
  }
  const OlsFit fit = ols(y, X, ref);

  RegressionResult result;
  result.outcome = outcome;
  result.n_obs = data_.rows();
  result.n_clusters = n_clusters_;
  result.fe_groups = fe_info_;
  result.iterations = report_.iterations;
  result.final_delta = report_.max_group_mean;
  result.residual_ss = fit.residuals.squaredNorm();
  for (int c : fit.dropped) result.dropped.push_back(regressors[static_cast<std::size_t>(c)]);
  if (fit.kept.empty()) return result;

  Eigen::MatrixXd Xk(X.rows(), static_cast<Eigen::Index>(fit.kept.size()));
  for (std::size_t k = 0; k < fit.kept.size(); ++k)
    Xk.col(static_cast<Eigen::Index>(k)) = X.col(fit.kept[k]);
  const Eigen::VectorXd se = cluster_robust_se(Xk, fit.residuals, clusters_);
  for (std::size_t k = 0; k < fit.kept.size(); ++k)
    result.terms.push_back({regressors[static_cast<std::size_t>(fit.kept[k])],
                            fit.coefficients[static_cast<Eigen::Index>(k)],
                            se[static_cast<Eigen::Index>(k)]});
  return result;
}

// ---------------------------------------------------------------------------

int student_type_code(const Student& s) {
  const int a = s.high_achieving ? (*s.high_achieving ? 0 : 1) : 2;
  const int c = s.high_central ? (*s.high_central ? 0 : 1) : 2;
  return 3 * a + c;
}

int type_combo_code(int a, int b) { return std::min(a, b) * 9 + std::max(a, b); }

std::string to_string(DyadOutcomeVar v) {
  switch (v) {
    case DyadOutcomeVar::Endline: return "endline_link";
    case DyadOutcomeVar::Baseline: return "baseline_link";
    case DyadOutcomeVar::PhysicalNeighbor: return "physical_neighbor";
  }
  return "endline_link";
}

DyadTable build_dyads(const Population& population, const ProximityIndex& allocation,
                      std::span<const DyadOutcome> outcomes) {
  const auto n = static_cast<int>(population.students.size());
  DyadTable table;
  table.reserve(outcomes.size());
  for (const auto& o : outcomes) {
    if (o.i < 0 || o.j < 0 || o.i >= n || o.j >= n)
      throw InputError(fmt::format("dyad ({}, {}) references an unknown student", o.i, o.j));
    if (o.i == o.j) throw InputError(fmt::format("dyad ({}, {}) is a self-pair", o.i, o.j));
    const Student& a = population.students[std::min(o.i, o.j)];
    const Student& b = population.students[std::max(o.i, o.j)];
    DyadRow row;
    row.ego = a.id;
    row.alter = b.id;
    row.cluster = a.network;
    row.y = o.linked_endline;
    row.baseline_link = o.linked_baseline;
    row.baseline_available = a.cohort == Cohort::Returning && b.cohort == Cohort::Returning;
    row.list_distance = allocation.list_distance(a.id, b.id);
    row.physical_neighbor = allocation.physical_neighbor(a.id, b.id);
    row.first = a.cohort == Cohort::FirstYear && b.cohort == Cohort::FirstYear;
    row.diff_poverty = a.poor != b.poor;
    row.diff_achievement = a.high_achieving && b.high_achieving &&
                           *a.high_achieving != *b.high_achieving;
    row.diff_centrality = a.high_central && b.high_central &&
                          *a.high_central != *b.high_central;
    row.gender_combo = (a.cell.gender == Gender::Male) + (b.cell.gender == Gender::Male);
    row.type_combo = type_combo_code(student_type_code(a), student_type_code(b));
    row.similarity = dyad_similarity(a, b);
    table.push_back(row);
  }
  return table;
}

namespace {

std::vector<FixedEffect> dyad_fixed_effects(const std::vector<const DyadRow*>& rows,
                                            const ProximityOptions& options) {
  std::vector<long long> ego, alter, gender, types;
  for (const DyadRow* r : rows) {
    ego.push_back(options.swap_ego_alter ? r->alter : r->ego);
    alter.push_back(options.swap_ego_alter ? r->ego : r->alter);
    gender.push_back(r->gender_combo);
    types.push_back(r->type_combo);
  }
  std::vector<FixedEffect> fes;
  fes.push_back(make_fixed_effect("ego", ego));
  fes.push_back(make_fixed_effect("alter", alter));
  fes.push_back(make_fixed_effect("gender_combo", gender));
  if (options.type_combo_fe) fes.push_back(make_fixed_effect("type_combo", types));
  return fes;
}

double outcome_value(const DyadRow& r, DyadOutcomeVar v) {
  switch (v) {
    case DyadOutcomeVar::Endline: return r.y;
    case DyadOutcomeVar::Baseline: return r.baseline_link;
    case DyadOutcomeVar::PhysicalNeighbor: return r.physical_neighbor;
  }
  return 0.0;
}

std::vector<RegressionResult> dyad_curve(const DyadTable& table, std::span<const int> ds_in,
                                         const ProximityOptions& options,
                                         bool heterogeneity) {
  std::vector<int> ds(ds_in.begin(), ds_in.end());
  if (options.measure == ProximityMeasure::PhysicalNeighbor) ds = {0};
  for (int d : ds)
    if (options.measure == ProximityMeasure::ListNeighborhood && d < 1)
      throw InputError(fmt::format("neighborhood size must be >= 1, got {}", d));

  std::vector<const DyadRow*> rows;
  for (const auto& r : table)
    if (options.outcome != DyadOutcomeVar::Baseline || r.baseline_available)
      rows.push_back(&r);
  if (rows.empty()) throw InputError("no dyads in the estimation sample");

  const bool any_first = std::any_of(rows.begin(), rows.end(),
                                     [](const DyadRow* r) { return r->first; });
  const bool any_other = std::any_of(rows.begin(), rows.end(),
                                     [](const DyadRow* r) { return !r->first; });
  const bool first_term = any_first && any_other;
  const bool baseline_control = options.outcome == DyadOutcomeVar::Endline;

  static const char* diffs[] = {"diff_poverty", "diff_achievement", "diff_centrality"};
  std::vector<std::string> names{"y"};
  if (baseline_control) names.push_back("baseline_link");
  if (heterogeneity)
    for (const char* dname : diffs) names.push_back(dname);
  const bool interactions = heterogeneity && options.difference_interactions;
  static const char* products[] = {"diff_poverty_x_achievement", "diff_poverty_x_centrality",
                                   "diff_achievement_x_centrality", "diff_all"};
  if (interactions)
    for (const char* pname : products) names.push_back(pname);
  for (int d : ds) {
    names.push_back(fmt::format("proximity@{}", d));
    if (first_term) names.push_back(fmt::format("proximity_x_first@{}", d));
    if (heterogeneity)
      for (const char* dname : diffs) names.push_back(fmt::format("proximity_x_{}@{}", dname, d));
  }

  const auto n = static_cast<Eigen::Index>(rows.size());
  Eigen::MatrixXd data(n, static_cast<Eigen::Index>(names.size()));
  std::vector<int> clusters;
  clusters.reserve(rows.size());
  for (Eigen::Index r = 0; r < n; ++r) {
    const DyadRow& row = *rows[static_cast<std::size_t>(r)];
    clusters.push_back(row.cluster);
    const double dvals[] = {static_cast<double>(row.diff_poverty),
                            static_cast<double>(row.diff_achievement),
                            static_cast<double>(row.diff_centrality)};
    Eigen::Index c = 0;
    data(r, c++) = outcome_value(row, options.outcome);
    if (baseline_control) data(r, c++) = row.baseline_link;
    if (heterogeneity)
      for (double v : dvals) data(r, c++) = v;
    if (interactions) {
      data(r, c++) = dvals[0] * dvals[1];
      data(r, c++) = dvals[0] * dvals[2];
      data(r, c++) = dvals[1] * dvals[2];
      data(r, c++) = dvals[0] * dvals[1] * dvals[2];
    }
    for (int d : ds) {
      const double prox = options.measure == ProximityMeasure::PhysicalNeighbor
                              ? static_cast<double>(row.physical_neighbor)
                              : static_cast<double>(row.l(d));
      data(r, c++) = prox;
      if (first_term) data(r, c++) = prox * row.first;
      if (heterogeneity)
        for (double v : dvals) data(r, c++) = prox * v;
    }
  }

  const DemeanedDesign design(std::move(data), names, dyad_fixed_effects(rows, options),
                              std::move(clusters), options.tol, options.max_iter);

  std::vector<RegressionResult> out;
  for (int d : ds) {
    std::vector<std::string> regressors;
    if (heterogeneity)
      for (const char* dname : diffs) regressors.emplace_back(dname);
    if (interactions)
      for (const char* pname : products) regressors.emplace_back(pname);
    regressors.push_back(fmt::format("proximity@{}", d));
    if (first_term) regressors.push_back(fmt::format("proximity_x_first@{}", d));
    if (heterogeneity)
      for (const char* dname : diffs) regressors.push_back(fmt::format("proximity_x_{}@{}", dname, d));
    if (baseline_control) regressors.emplace_back("baseline_link");

    RegressionResult res = design.fit("y", regressors);
    auto strip = [](std::string s) {
      const auto at = s.find('@');
      return at == std::string::npos ? s : s.substr(0, at);
    };
    for (auto& t : res.terms) t.name = strip(t.name);
    for (auto& name : res.dropped) name = strip(name);
    res.specification = heterogeneity ? "heterogeneity" : "proximity";
    res.outcome = to_string(options.outcome);
    res.d = d;
    out.push_back(std::move(res));
  }
  return out;
}

}  // namespace

std::vector<RegressionResult> proximity_curve(const DyadTable& table, std::span<const int> ds,
                                              const ProximityOptions& options) {
  return dyad_curve(table, ds, options, false);
}

RegressionResult proximity_regression(const DyadTable& table, int d,
                                      const ProximityOptions& options) {
  const int ds[] = {d};
  return dyad_curve(table, ds, options, false).front();
}

std::vector<RegressionResult> heterogeneity_curve(const DyadTable& table,
                                                  std::span<const int> ds,
                                                  ProximityOptions options) {
  return dyad_curve(table, ds, options, true);
}

RegressionResult heterogeneity_regression(const DyadTable& table, int d,
                                          ProximityOptions options) {
  const int ds[] = {d};
  return dyad_curve(table, ds, options, true).front();
}

// ---------------------------------------------------------------------------

std::vector<NodeRow> build_nodes(const Population& population,
                                 std::span<const DyadOutcome> outcomes,
                                 std::span<const RandomizationList> lists) {
  const auto cells = population.cells();
  std::map<CellId, int> cell_code;
  for (std::size_t c = 0; c < cells.size(); ++c) cell_code[cells[c]] = static_cast<int>(c);

  std::unordered_map<int, int> arm;
  for (const auto& list : lists)
    for (const auto& row : list.rows) arm[row.student_id] = row.arm;

  std::vector<NodeRow> nodes(population.students.size());
  for (const auto& s : population.students) {
    NodeRow& node = nodes[static_cast<std::size_t>(s.id)];
    node.id = s.id;
    node.cell = cell_code.at(s.cell);
    node.returning = s.cohort == Cohort::Returning;
    node.poor = s.poor;
    node.lower_achieving = s.high_achieving && !*s.high_achieving;
    node.less_central = s.high_central && !*s.high_central;
    const int type = s.design_type();
    const auto it = arm.find(s.id);
    const int peer = it == arm.end() ? type : it->second;
    node.cluster = node.cell * 16 + type * 4 + peer;
  }

  const auto n = static_cast<int>(nodes.size());
  for (const auto& o : outcomes) {
    if (o.i < 0 || o.j < 0 || o.i >= n || o.j >= n)
      throw InputError(fmt::format("dyad ({}, {}) references an unknown student", o.i, o.j));
    for (auto [self, other] : {std::pair{o.i, o.j}, std::pair{o.j, o.i}}) {
      NodeRow& node = nodes[static_cast<std::size_t>(self)];
      const Student& peer = population.students[static_cast<std::size_t>(other)];
      if (o.linked_baseline) ++node.baseline_connections;
      if (!o.linked_endline) continue;
      ++node.connections;
      ++(peer.poor ? node.with_poor : node.with_nonpoor);
      if (peer.high_achieving)
        ++(*peer.high_achieving ? node.with_higher_achieving : node.with_lower_achieving);
      if (peer.high_central)
        ++(*peer.high_central ? node.with_more_central : node.with_less_central);
    }
  }
  return nodes;
}

const std::vector<std::string>& homophily_outcomes() {
  static const std::vector<std::string> names{
      "connections",          "with_poor",          "with_nonpoor",
      "with_lower_achieving", "with_higher_achieving", "with_less_central",
      "with_more_central"};
  return names;
}

namespace {

double node_outcome(const NodeRow& n, const std::string& outcome) {
  if (outcome == "connections") return n.connections;
  if (outcome == "with_poor") return n.with_poor;
  if (outcome == "with_nonpoor") return n.with_nonpoor;
  if (outcome == "with_lower_achieving") return n.with_lower_achieving;
  if (outcome == "with_higher_achieving") return n.with_higher_achieving;
  if (outcome == "with_less_central") return n.with_less_central;
  if (outcome == "with_more_central") return n.with_more_central;
  throw InputError(fmt::format("unknown homophily outcome '{}'", outcome));
}

}  // namespace

RegressionResult homophily_regression(std::span<const NodeRow> nodes,
                                      const std::string& outcome) {
  std::vector<const NodeRow*> rows;
  for (const auto& n : nodes)
    if (n.returning) rows.push_back(&n);
  if (rows.empty()) throw InputError("no returning students for the homophily regression");

  const std::vector<std::string> names{outcome, "poor", "lower_achieving", "less_central",
                                       "baseline_connections"};
  const auto n = static_cast<Eigen::Index>(rows.size());
  Eigen::MatrixXd data(n, 5);
  std::vector<long long> cells;
  std::vector<int> clusters;
  for (Eigen::Index r = 0; r < n; ++r) {
    const NodeRow& row = *rows[static_cast<std::size_t>(r)];
    data(r, 0) = node_outcome(row, outcome);
    data(r, 1) = row.poor;
    data(r, 2) = row.lower_achieving;
    data(r, 3) = row.less_central;
    data(r, 4) = row.baseline_connections;
    cells.push_back(row.cell);
    clusters.push_back(row.cluster);
  }
  std::vector<FixedEffect> fes{make_fixed_effect("cell", cells)};
  const DemeanedDesign design(std::move(data), names, std::move(fes), std::move(clusters));
  RegressionResult res =
      design.fit(outcome, {"poor", "lower_achieving", "less_central", "baseline_connections"});
  res.specification = "homophily";
  return res;
}

std::vector<RegressionResult> homophily_table(std::span<const NodeRow> nodes) {
  std::vector<RegressionResult> out;
  for (const auto& outcome : homophily_outcomes())
    out.push_back(homophily_regression(nodes, outcome));
  return out;
}

}  // namespace homophily
