#include <doctest.h>

#include <cmath>
#include <map>

#include "homophily/estimator.hpp"
#include "homophily/pipeline.hpp"

using namespace homophily;
using doctest::Approx;

namespace {

// Dense least squares through complete orthogonal decomposition; handles
// rank-deficient dummy matrices.
Eigen::VectorXd dense_ols(const Eigen::MatrixXd& X, const Eigen::VectorXd& y) {
  return X.completeOrthogonalDecomposition().solve(y);
}

Eigen::MatrixXd dummies(std::span<const int> group, int levels) {
  Eigen::MatrixXd D = Eigen::MatrixXd::Zero(static_cast<long>(group.size()), levels);
  for (std::size_t r = 0; r < group.size(); ++r) D(static_cast<long>(r), group[r]) = 1.0;
  return D;
}

FixedEffect fe_from(std::string name, const std::vector<long long>& keys) {
  return make_fixed_effect(std::move(name), keys);
}

DyadTable synthetic_dyads(std::uint64_t seed, int networks, int per_network) {
  CounterStream rng(seed, StreamPurpose::Generic);
  DyadTable table;
  for (int net = 0; net < networks; ++net) {
    const int base = net * per_network;
    for (int a = 0; a < per_network; ++a)
      for (int b = a + 1; b < per_network; ++b) {
        DyadRow row;
        row.ego = base + a;
        row.alter = base + b;
        row.cluster = net;
        row.list_distance = rng.bernoulli(0.7) ? 1 + static_cast<int>(rng.below(6)) : 0;
        row.first = net % 2 == 0;
        row.baseline_available = !row.first;
        row.baseline_link = row.baseline_available && rng.bernoulli(0.2);
        row.gender_combo = static_cast<int>(rng.below(3));
        row.type_combo = static_cast<int>(rng.below(4));
        row.diff_poverty = rng.bernoulli(0.5);
        row.diff_achievement = rng.bernoulli(0.5);
        row.diff_centrality = rng.bernoulli(0.5);
        row.physical_neighbor = row.list_distance == 1 || row.list_distance == 2;
        const double p = 0.2 + 0.1 * row.l(3) + 0.1 * row.baseline_link;
        row.y = rng.bernoulli(p);
        table.push_back(row);
      }
  }
  return table;
}

}  // namespace

TEST_CASE("make_fixed_effect densifies keys in order of appearance") {
  const std::vector<long long> keys{40, 7, 40, -3, 7};
  const auto fe = make_fixed_effect("g", keys);
  CHECK(fe.levels == 3);
  CHECK(fe.group == std::vector<int>{0, 1, 0, 2, 1});
}

TEST_CASE("one-way within transform subtracts group means exactly") {
  Eigen::MatrixXd data(6, 1);
  data << 1, 3, 5, 10, 15, 30;
  const std::vector<FixedEffect> fes{fe_from("g", {0, 0, 1, 1, 1, 2})};
  within_transform(data, fes);
  Eigen::VectorXd expected(6);
  expected << -1, 1, -5, 0, 5, 0;
  CHECK((data.col(0) - expected).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("two-way within transform matches dummy regression residuals") {
  CounterStream rng(11, StreamPurpose::Generic);
  const int n = 300;
  std::vector<long long> g1(n), g2(n);
  Eigen::MatrixXd data(n, 2);
  for (int r = 0; r < n; ++r) {
    g1[r] = static_cast<long long>(rng.below(12));
    g2[r] = static_cast<long long>(rng.below(7));
    data(r, 0) = rng.normal() + 0.3 * g1[r];
    data(r, 1) = rng.normal() - 0.5 * g2[r];
  }
  const std::vector<FixedEffect> fes{fe_from("a", g1), fe_from("b", g2)};
  Eigen::MatrixXd D(n, fes[0].levels + fes[1].levels);
  D << dummies(fes[0].group, fes[0].levels), dummies(fes[1].group, fes[1].levels);
  Eigen::MatrixXd expected(n, 2);
  for (int c = 0; c < 2; ++c)
    expected.col(c) = data.col(c) - D * dense_ols(D, data.col(c));

  Eigen::MatrixXd demeaned = data;
  const auto report = within_transform(demeaned, fes, 1e-12);
  CHECK(report.iterations > 0);
  CHECK((demeaned - expected).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("within transform rejects bad groups and reports non-convergence") {
  Eigen::MatrixXd data = Eigen::MatrixXd::Ones(3, 1);
  FixedEffect bad{"g", {0, 1, 3}, 3};
  const std::vector<FixedEffect> fes{bad};
  CHECK_THROWS_AS(within_transform(data, fes), InputError);

  // A chain of overlapping groups converges slowly.
  const int n = 400;
  std::vector<long long> a(n), b(n);
  Eigen::MatrixXd chain(n, 1);
  for (int r = 0; r < n; ++r) {
    a[r] = r / 2;
    b[r] = (r + 1) / 2;
    chain(r, 0) = r;
  }
  const std::vector<FixedEffect> slow{fe_from("a", a), fe_from("b", b)};
  CHECK_THROWS_AS(within_transform(chain, slow, 1e-12, 5), ConvergenceError);
}

TEST_CASE("ols recovers exact and hand-computed fits") {
  Eigen::VectorXd x(4), y(4);
  x << 1, 2, 3, 4;
  y = 2 * x;
  Eigen::MatrixXd X = x;
  const auto exact = ols(y, X);
  CHECK(exact.coefficients(0) == Approx(2.0).epsilon(1e-12));
  CHECK(exact.residuals.cwiseAbs().maxCoeff() < 1e-12);

  // Intercept and slope over five points: y = 1.1 + 0.9 x by hand.
  Eigen::MatrixXd Z(5, 2);
  Z << 1, 0, 1, 1, 1, 2, 1, 3, 1, 4;
  Eigen::VectorXd w(5);
  w << 1, 2, 3, 4, 5.5;
  const auto fit = ols(w, Z);
  CHECK(fit.coefficients(0) == Approx(0.9).epsilon(1e-12));
  CHECK(fit.coefficients(1) == Approx(1.1).epsilon(1e-12));
  CHECK((Z.transpose() * fit.residuals).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("collinear columns drop deterministically") {
  Eigen::MatrixXd X(5, 3);
  X << 1, 2, 0, 2, 4, 1, 3, 6, 0, 4, 8, 1, 5, 10, 1;
  Eigen::VectorXd y(5);
  y << 1, 2, 2, 5, 6;
  const auto fit = ols(y, X);
  CHECK(fit.kept == std::vector<int>{0, 2});
  CHECK(fit.dropped == std::vector<int>{1});

  // A column that is zero after demeaning but not before is dropped against
  // its reference sum of squares.
  Eigen::MatrixXd Z(4, 2);
  Z << 1, 1e-12, 2, -1e-12, 3, 1e-12, 4, -1e-12;
  const std::vector<double> ref{30.0, 4.0};
  const auto screened = ols(y.head(4), Z, ref);
  CHECK(screened.dropped == std::vector<int>{1});
}

TEST_CASE("clustered errors with singleton clusters equal HC1") {
  CounterStream rng(21, StreamPurpose::Generic);
  const int n = 60;
  Eigen::MatrixXd X(n, 2);
  Eigen::VectorXd y(n);
  std::vector<int> clusters(n);
  for (int r = 0; r < n; ++r) {
    X(r, 0) = 1.0;
    X(r, 1) = rng.normal();
    y(r) = 1 + 0.5 * X(r, 1) + rng.normal() * (1 + std::abs(X(r, 1)));
    clusters[r] = r;
  }
  const auto fit = ols(y, X);
  const Eigen::MatrixXd bread = (X.transpose() * X).inverse();
  Eigen::MatrixXd meat = Eigen::MatrixXd::Zero(2, 2);
  for (int r = 0; r < n; ++r)
    meat += fit.residuals(r) * fit.residuals(r) * X.row(r).transpose() * X.row(r);
  // CR1 with G = N reduces to N/(N-1) * (N-1)/(N-K) = N/(N-K), the HC1 factor.
  const Eigen::MatrixXd hc1 = static_cast<double>(n) / (n - 2) * bread * meat * bread;
  const auto v = cluster_robust_vcov(X, fit.residuals, clusters);
  CHECK((v - hc1).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("two-cluster sandwich by hand") {
  // Slope-only model x = (1, 2, 3, 4), residuals e = (1, -1, 2, 0), clusters
  // {0, 0, 1, 1}: B = 1/30, s_0 = 1 - 2 = -1, s_1 = 6, meat = 37.
  Eigen::MatrixXd X(4, 1);
  X << 1, 2, 3, 4;
  Eigen::VectorXd e(4);
  e << 1, -1, 2, 0;
  const std::vector<int> clusters{0, 0, 1, 1};
  const double expected = 2.0 / 1.0 * 3.0 / 3.0 * 37.0 / 900.0;
  const auto v = cluster_robust_vcov(X, e, clusters);
  CHECK(v(0, 0) == Approx(expected).epsilon(1e-12));
  CHECK(cluster_robust_se(X, e, clusters)(0) == Approx(std::sqrt(expected)).epsilon(1e-12));

  const std::vector<int> single{0, 0, 0, 0};
  CHECK_THROWS(cluster_robust_vcov(X, e, single));
}

TEST_CASE("proximity regression matches a dense dummy regression") {
  const auto table = synthetic_dyads(5, 6, 9);
  REQUIRE(table.size() <= 216);
  const auto res = proximity_regression(table, 3);
  REQUIRE(res.has("proximity"));
  REQUIRE(res.has("proximity_x_first"));
  REQUIRE(res.has("baseline_link"));

  const long n = static_cast<long>(table.size());
  std::vector<long long> ego, alter, gender, types;
  for (const auto& r : table) {
    ego.push_back(r.ego);
    alter.push_back(r.alter);
    gender.push_back(r.gender_combo);
    types.push_back(r.type_combo);
  }
  const auto fe_ego = fe_from("ego", ego), fe_alter = fe_from("alter", alter),
             fe_gender = fe_from("gender", gender), fe_types = fe_from("types", types);
  Eigen::MatrixXd X(n, 3 + fe_ego.levels + fe_alter.levels + fe_gender.levels + fe_types.levels);
  Eigen::VectorXd y(n);
  for (long r = 0; r < n; ++r) {
    const auto& row = table[r];
    y(r) = row.y;
    X(r, 0) = row.l(3);
    X(r, 1) = row.l(3) * row.first;
    X(r, 2) = row.baseline_link;
  }
  X.rightCols(X.cols() - 3) << dummies(fe_ego.group, fe_ego.levels),
      dummies(fe_alter.group, fe_alter.levels), dummies(fe_gender.group, fe_gender.levels),
      dummies(fe_types.group, fe_types.levels);
  const auto beta = dense_ols(X, y);
  CHECK(res.term("proximity").estimate == Approx(beta(0)).epsilon(1e-6));
  CHECK(res.term("proximity_x_first").estimate == Approx(beta(1)).epsilon(1e-6));
  CHECK(res.term("baseline_link").estimate == Approx(beta(2)).epsilon(1e-6));
  CHECK(res.n_obs == n);
  CHECK(res.n_clusters == 6);
  CHECK(res.term("proximity").cluster_se > 0);
}

TEST_CASE("residuals of the within regression are orthogonal to regressors") {
  const auto table = synthetic_dyads(8, 5, 10);
  const long n = static_cast<long>(table.size());
  Eigen::MatrixXd data(n, 3);
  std::vector<long long> ego, alter;
  std::vector<int> clusters;
  for (long r = 0; r < n; ++r) {
    data(r, 0) = table[r].y;
    data(r, 1) = table[r].l(2);
    data(r, 2) = table[r].diff_poverty;
    ego.push_back(table[r].ego);
    alter.push_back(table[r].alter);
    clusters.push_back(table[r].cluster);
  }
  const DemeanedDesign design(data, {"y", "l", "dp"}, {fe_from("ego", ego), fe_from("alter", alter)},
                              clusters, 1e-12);
  const auto res = design.fit("y", {"l", "dp"});
  CHECK(res.terms.size() == 2);
  CHECK(res.residual_ss > 0);

  Eigen::MatrixXd demeaned = data;
  const std::vector<FixedEffect> fes{fe_from("ego", ego), fe_from("alter", alter)};
  within_transform(demeaned, fes, 1e-12);
  const auto fit = ols(demeaned.col(0), demeaned.rightCols(2));
  CHECK((demeaned.rightCols(2).transpose() * fit.residuals).cwiseAbs().maxCoeff() < 1e-9);
  CHECK(res.term("l").estimate == Approx(fit.coefficients(0)).epsilon(1e-9));
  CHECK_THROWS(design.fit("y", {"missing"}));
}

TEST_CASE("swapping ego and alter leaves the estimates unchanged") {
  const auto table = synthetic_dyads(3, 6, 8);
  ProximityOptions swapped;
  swapped.swap_ego_alter = true;
  const auto a = proximity_regression(table, 2);
  const auto b = proximity_regression(table, 2, swapped);
  CHECK(a.term("proximity").estimate == Approx(b.term("proximity").estimate).epsilon(1e-6));
  CHECK(a.term("proximity").cluster_se == Approx(b.term("proximity").cluster_se).epsilon(1e-6));
}

TEST_CASE("networks without links give zero coefficients") {
  auto table = synthetic_dyads(4, 4, 8);
  for (auto& r : table) {
    r.y = false;
    r.baseline_link = false;
  }
  const auto res = proximity_regression(table, 2);
  CHECK(std::abs(res.term("proximity").estimate) < 1e-12);
  CHECK(res.has("baseline_link") == false);
  CHECK(res.dropped.size() == 1);
}

TEST_CASE("heterogeneity regression carries the difference terms") {
  const auto table = synthetic_dyads(6, 6, 10);
  const auto res = heterogeneity_regression(table, 3);
  for (const char* name : {"diff_poverty", "diff_achievement", "diff_centrality",
                           "proximity_x_diff_poverty", "proximity_x_diff_achievement",
                           "proximity_x_diff_centrality", "diff_all"})
    CHECK(res.has(name));
  ProximityOptions plain;
  plain.type_combo_fe = false;
  const auto without = heterogeneity_regression(table, 3, plain);
  CHECK_FALSE(without.has("diff_all"));
  CHECK(without.specification == "heterogeneity");
}

TEST_CASE("placebo and first-stage variants") {
  const auto table = synthetic_dyads(7, 6, 9);
  ProximityOptions placebo;
  placebo.outcome = DyadOutcomeVar::Baseline;
  const auto p = proximity_regression(table, 2, placebo);
  long available = 0;
  for (const auto& r : table) available += r.baseline_available;
  CHECK(p.n_obs == available);
  CHECK_FALSE(p.has("baseline_link"));
  CHECK(p.outcome == "baseline_link");

  ProximityOptions first_stage;
  first_stage.outcome = DyadOutcomeVar::PhysicalNeighbor;
  const auto f = proximity_regression(table, 2, first_stage);
  CHECK(f.term("proximity").estimate > 0.5);
}

TEST_CASE("dyad and node tables from a simulated replication") {
  RunConfig config;
  config.schools = 2;
  config.grades = {1, 2};
  config.students_per_network = 30;
  const auto rep = simulate_replication(config, 0);
  const ProximityIndex index(rep.allocation.lists, rep.allocation.dorms);
  const auto dyads = build_dyads(rep.population, index, rep.outcomes);
  CHECK(dyads.size() == rep.outcomes.size());
  for (const auto& d : dyads) {
    CHECK(d.ego < d.alter);
    CHECK(d.list_distance == index.list_distance(d.ego, d.alter));
  }

  const auto nodes = build_nodes(rep.population, rep.outcomes, rep.allocation.lists);
  REQUIRE(nodes.size() == rep.population.students.size());
  long links = 0, degree = 0;
  for (const auto& d : rep.outcomes) links += d.linked_endline;
  for (const auto& n : nodes) {
    degree += n.connections;
    CHECK(n.with_poor + n.with_nonpoor == n.connections);
    CHECK(n.with_lower_achieving + n.with_higher_achieving == n.connections);
  }
  CHECK(degree == 2 * links);

  const auto table = homophily_table(nodes);
  CHECK(table.size() == homophily_outcomes().size());
  for (const auto& r : table) {
    CHECK(r.specification == "homophily");
    CHECK(r.has("poor"));
  }
  CHECK_THROWS(homophily_regression(nodes, "nonsense"));

  std::vector<DyadOutcome> broken = rep.outcomes;
  broken[0].j = broken[0].i;
  CHECK_THROWS_AS(build_dyads(rep.population, index, broken), InputError);
}
