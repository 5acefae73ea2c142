#include "homophily/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <numeric>
#include <sstream>
#include <ostream>
#include <thread>
#include <unordered_map>
#include <unordered_set>

#include <fmt/core.h>
#include <nlohmann/json.hpp>

namespace homophily {

using nlohmann::json;
namespace fs = std::filesystem;

int worker_threads(int configured) {
  int n = configured > 0 ? configured : static_cast<int>(std::thread::hardware_concurrency());
  n = std::max(n, 1);
  if (const char* env = std::getenv("HOMOPHILY_LAB_THREADS")) {
    char* end = nullptr;
    const long cap = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && cap >= 1) n = std::min<long>(n, cap);
  }
  return n;
}

void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(threads, 1)));
  if (workers <= 1) {
    for (std::size_t k = 0; k < n; ++k) fn(k);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::mutex mu;
  std::size_t failed_index = n;
  std::exception_ptr failure;
  auto work = [&] {
    for (std::size_t k = next++; k < n; k = next++) {
      try {
        fn(k);
      } catch (...) {
        std::lock_guard lock(mu);
        if (k < failed_index) {
          failed_index = k;
          failure = std::current_exception();
        }
      }
    }
  };
  {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
  }
  if (failure) std::rethrow_exception(failure);
}

Allocation allocate(const Population& population, std::span<const int> dorm_pattern,
                    std::uint64_t seed, std::uint32_t replication) {
  Allocation out;
  const auto cells = population.cells();
  int next_dorm = 1;
  for (std::size_t c = 0; c < cells.size(); ++c) {
    const auto ids = population.members(cells[c]);
    std::vector<RandomizationUnit> units;
    for (int id : ids) units.push_back({id, population.students[id].design_type()});
    const int n_types = population.students[ids.front()].design_types();
    CounterStream rng(seed, StreamPurpose::Treatment, replication,
                      static_cast<std::uint32_t>(c));
    auto cell = randomize_cell(cells[c].label(), units, n_types, dorm_pattern, rng, next_dorm);
    next_dorm += static_cast<int>(cell.dorms.size());
    if (cell.flagged) ++out.flagged_cells;
    out.lists.push_back(std::move(cell.list));
    for (auto& d : cell.dorms) out.dorms.push_back(std::move(d));
  }
  return out;
}

Replication simulate_replication(const RunConfig& config, std::uint32_t replication) {
  Replication rep;
  const SimConfig sim = config.sim_config(replication);
  rep.population = generate_population(sim);
  rep.allocation = allocate(rep.population, config.dorm_sizes, config.seed, replication);
  const ProximityIndex index(rep.allocation.lists, rep.allocation.dorms);
  const ModelParams params(config.model);
  rep.outcomes = simulate_network(rep.population, index, params, sim);
  return rep;
}

Estimates estimate_all(const DyadTable& dyads, std::span<const NodeRow> nodes,
                       std::span<const int> ds, bool difference_interactions) {
  Estimates e;
  e.proximity = proximity_curve(dyads, ds);
  e.heterogeneity = heterogeneity_curve(
      dyads, ds,
      {.type_combo_fe = false, .difference_interactions = difference_interactions});
  e.placebo = proximity_curve(dyads, ds, {.outcome = DyadOutcomeVar::Baseline});
  e.first_stage = proximity_curve(dyads, ds, {.outcome = DyadOutcomeVar::PhysicalNeighbor});
  e.homophily = homophily_table(nodes);
  return e;
}

// ---------------------------------------------------------------------------
// Tables

std::vector<Student> read_roster(const CsvTable& t) {
  t.require({"id", "school", "grade", "gender", "cohort", "achievement", "centrality"});
  const auto c_id = t.column("id"), c_school = t.column("school"), c_grade = t.column("grade"),
             c_gender = t.column("gender"), c_cohort = t.column("cohort"),
             c_ach = t.column("achievement"), c_cent = t.column("centrality");
  const bool has_poor = t.has_column("poor");
  std::vector<Student> out;
  std::unordered_set<int> seen;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    Student s;
    s.id = t.get_int(r, c_id);
    if (!seen.insert(s.id).second)
      throw CsvError(fmt::format("{}:{}: duplicate student id {}", t.source, t.lines[r], s.id));
    s.cell.school = t.get_int(r, c_school);
    s.cell.grade = t.get_int(r, c_grade);
    const std::string& g = t.get(r, c_gender);
    if (g == "M")
      s.cell.gender = Gender::Male;
    else if (g == "F")
      s.cell.gender = Gender::Female;
    else
      throw CsvError(fmt::format("{}:{}: gender must be M or F, got '{}'", t.source,
                                 t.lines[r], g));
    const std::string& cohort = t.get(r, c_cohort);
    if (cohort == "first_year")
      s.cohort = Cohort::FirstYear;
    else if (cohort == "returning")
      s.cohort = Cohort::Returning;
    else
      throw CsvError(fmt::format("{}:{}: cohort must be first_year or returning, got '{}'",
                                 t.source, t.lines[r], cohort));
    s.achievement_score = t.get_double(r, c_ach);
    if (s.cohort == Cohort::Returning)
      s.centrality_score = t.get_double(r, c_cent);
    else if (!t.get(r, c_cent).empty())
      throw CsvError(fmt::format("{}:{}: first-year students have no centrality score",
                                 t.source, t.lines[r]));
    if (has_poor) s.poor = t.get_bool(r, t.column("poor"));
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<CellRandomization> randomize_roster(std::vector<Student>& roster,
                                                std::span<const int> dorm_pattern,
                                                std::uint64_t seed) {
  std::map<CellId, std::vector<std::size_t>> cells;
  for (std::size_t k = 0; k < roster.size(); ++k) cells[roster[k].cell].push_back(k);

  std::vector<CellRandomization> out;
  int next_dorm = 1;
  std::uint32_t index = 0;
  for (const auto& [cell, members] : cells) {
    const Cohort cohort = roster[members.front()].cohort;
    for (std::size_t k : members)
      if (roster[k].cohort != cohort)
        throw InputError(fmt::format("cell {} mixes first-year and returning students",
                                     cell.label()));
    CounterStream split_rng(seed, StreamPurpose::Classification, 0, index);
    std::vector<double> scores;
    for (std::size_t k : members) scores.push_back(roster[k].achievement_score);
    const auto ach = classify_median_split(scores, split_rng);
    for (std::size_t m = 0; m < members.size(); ++m) roster[members[m]].high_achieving = ach.high[m];
    if (cohort == Cohort::Returning) {
      scores.clear();
      for (std::size_t k : members) scores.push_back(*roster[k].centrality_score);
      const auto cent = classify_median_split(scores, split_rng);
      for (std::size_t m = 0; m < members.size(); ++m)
        roster[members[m]].high_central = cent.high[m];
    }

    std::vector<RandomizationUnit> units;
    for (std::size_t k : members) units.push_back({roster[k].id, roster[k].design_type()});
    CounterStream rng(seed, StreamPurpose::Treatment, 0, index);
    auto result = randomize_cell(cell.label(), units, roster[members.front()].design_types(),
                                 dorm_pattern, rng, next_dorm);
    next_dorm += static_cast<int>(result.dorms.size());
    out.push_back(std::move(result));
    ++index;
  }
  return out;
}

void write_lists(std::ostream& out, std::span<const RandomizationList> lists,
                 std::span<const Dorm> dorms, std::optional<int> rep) {
  std::unordered_map<int, std::pair<int, int>> bed_of;
  for (const auto& d : dorms)
    for (const auto& b : d.beds) bed_of[b.student_id] = {d.dorm_id, b.bed};
  std::vector<std::string> header{"cell", "position", "student_id", "combination",
                                  "dorm_id", "bed", "type", "arm"};
  if (rep) header.insert(header.begin(), "rep");
  CsvWriter w(out, header);
  for (const auto& list : lists) {
    for (const auto& row : list.rows) {
      const auto it = bed_of.find(row.student_id);
      if (it == bed_of.end())
        throw AllocationError(fmt::format("student {} has no bed", row.student_id));
      std::vector<std::string> f{list.cell,
                                 std::to_string(row.position),
                                 std::to_string(row.student_id),
                                 combination_label(list.n_types, row.combination),
                                 std::to_string(it->second.first),
                                 std::to_string(it->second.second),
                                 type_label(list.n_types, row.type),
                                 type_label(list.n_types, row.arm)};
      if (rep) f.insert(f.begin(), std::to_string(*rep));
      w.row(f);
    }
  }
}

std::vector<std::string> dyad_columns() {
  return {"rep",          "ego",           "alter",          "cluster",
          "y",            "baseline_link", "baseline_available", "list_distance",
          "physical_neighbor", "first",    "diff_poverty",   "diff_achievement",
          "diff_centrality", "gender_combo", "type_combo",   "similarity"};
}

std::vector<std::string> node_columns() {
  return {"rep",          "id",           "cell",          "cluster",
          "returning",    "poor",         "lower_achieving", "less_central",
          "connections",  "with_poor",    "with_nonpoor",  "with_lower_achieving",
          "with_higher_achieving", "with_less_central", "with_more_central",
          "baseline_connections"};
}

namespace {

std::string b(bool v) { return v ? "1" : "0"; }
std::string i(long long v) { return std::to_string(v); }

}  // namespace

void write_dyads(CsvWriter& out, int rep, const DyadTable& dyads) {
  for (const auto& d : dyads)
    out.row({i(rep), i(d.ego), i(d.alter), i(d.cluster), b(d.y), b(d.baseline_link),
             b(d.baseline_available), i(d.list_distance), b(d.physical_neighbor), b(d.first),
             b(d.diff_poverty), b(d.diff_achievement), b(d.diff_centrality),
             i(d.gender_combo), i(d.type_combo), i(d.similarity)});
}

void write_nodes(CsvWriter& out, int rep, std::span<const NodeRow> nodes) {
  for (const auto& n : nodes)
    out.row({i(rep), i(n.id), i(n.cell), i(n.cluster), b(n.returning), b(n.poor),
             b(n.lower_achieving), b(n.less_central), i(n.connections), i(n.with_poor),
             i(n.with_nonpoor), i(n.with_lower_achieving), i(n.with_higher_achieving),
             i(n.with_less_central), i(n.with_more_central), i(n.baseline_connections)});
}

std::map<int, DyadTable> read_dyads(const CsvTable& t) {
  const auto names = dyad_columns();
  std::vector<std::size_t> c;
  for (const auto& n : names) c.push_back(t.column(n));
  std::map<int, DyadTable> out;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    DyadRow d;
    const int rep = t.get_int(r, c[0]);
    d.ego = t.get_int(r, c[1]);
    d.alter = t.get_int(r, c[2]);
    if (d.ego == d.alter)
      throw CsvError(fmt::format("{}:{}: ego equals alter ({})", t.source, t.lines[r], d.ego));
    d.cluster = t.get_int(r, c[3]);
    d.y = t.get_bool(r, c[4]);
    d.baseline_link = t.get_bool(r, c[5]);
    d.baseline_available = t.get_bool(r, c[6]);
    d.list_distance = t.get_int(r, c[7]);
    if (d.list_distance < 0)
      throw CsvError(fmt::format("{}:{}: negative list_distance", t.source, t.lines[r]));
    d.physical_neighbor = t.get_bool(r, c[8]);
    d.first = t.get_bool(r, c[9]);
    d.diff_poverty = t.get_bool(r, c[10]);
    d.diff_achievement = t.get_bool(r, c[11]);
    d.diff_centrality = t.get_bool(r, c[12]);
    d.gender_combo = t.get_int(r, c[13]);
    d.type_combo = t.get_int(r, c[14]);
    d.similarity = t.get_int(r, c[15]);
    out[rep].push_back(d);
  }
  return out;
}

std::map<int, std::vector<NodeRow>> read_nodes(const CsvTable& t) {
  const auto names = node_columns();
  std::vector<std::size_t> c;
  for (const auto& n : names) c.push_back(t.column(n));
  std::map<int, std::vector<NodeRow>> out;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    NodeRow n;
    const int rep = t.get_int(r, c[0]);
    n.id = t.get_int(r, c[1]);
    n.cell = t.get_int(r, c[2]);
    n.cluster = t.get_int(r, c[3]);
    n.returning = t.get_bool(r, c[4]);
    n.poor = t.get_bool(r, c[5]);
    n.lower_achieving = t.get_bool(r, c[6]);
    n.less_central = t.get_bool(r, c[7]);
    int* counts[] = {&n.connections,          &n.with_poor,
                     &n.with_nonpoor,         &n.with_lower_achieving,
                     &n.with_higher_achieving, &n.with_less_central,
                     &n.with_more_central,    &n.baseline_connections};
    for (std::size_t k = 0; k < 8; ++k) {
      *counts[k] = t.get_int(r, c[8 + k]);
      if (*counts[k] < 0)
        throw CsvError(fmt::format("{}:{}: column '{}' is negative", t.source, t.lines[r],
                                   names[8 + k]));
    }
    out[rep].push_back(n);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Commands

namespace {

std::ofstream open_output(const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error(fmt::format("cannot write '{}'", path.string()));
  return out;
}

void make_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw std::runtime_error(fmt::format("cannot create '{}': {}", dir, ec.message()));
}

void close_checked(std::ofstream& out, const fs::path& path) {
  out.close();
  if (!out) throw std::runtime_error(fmt::format("error writing '{}'", path.string()));
}

}  // namespace

void cmd_calc(const ModelConfig& model, int s, DistanceClass distance, std::ostream& out) {
  const ModelParams params(model, CostOrdering::AllowEqual);
  if (s < 0 || s > params.categories())
    throw InputError(fmt::format("s must lie in [0, {}], got {}", params.categories(), s));
  const auto cf = closed_form(params, s, distance);
  out << fmt::format("mode {}\n", to_string(model.mode));
  out << fmt::format("s {}\n", s);
  out << fmt::format("distance {}\n", to_string(distance));
  out << fmt::format("lambda {:.6f}\n", params.lambda(s));
  out << fmt::format("mu {:.6f}\n", params.mu(s));
  out << fmt::format("cutoff_belief {:.6f}\n", cf.cutoff_belief);
  out << fmt::format("exploration_time {:.6f}\n", cf.exploration_time);
  out << fmt::format("side_prob {:.6f}\n", cf.side_prob);
  out << fmt::format("link_prob {:.6f}\n", cf.link_prob);
  out << fmt::format("gamma {:.6f}\n", cf.gamma);
}

void cmd_randomize(const std::string& roster_path, const RunConfig& config,
                   const std::string& out_dir) {
  auto roster = read_roster(read_csv_file(roster_path));
  const auto cells = randomize_roster(roster, config.dorm_sizes, config.seed);
  make_dir(out_dir);

  std::vector<RandomizationList> lists;
  std::vector<Dorm> dorms;
  for (const auto& c : cells) {
    if (!verify_alternation(c.list))
      throw std::runtime_error(fmt::format("list for cell {} fails the alternation check",
                                           c.list.cell));
    lists.push_back(c.list);
    dorms.insert(dorms.end(), c.dorms.begin(), c.dorms.end());
  }

  const fs::path dir(out_dir);
  {
    auto out = open_output(dir / "lists.csv");
    write_lists(out, lists, dorms);
    close_checked(out, dir / "lists.csv");
  }
  {
    auto out = open_output(dir / "dorms.csv");
    CsvWriter w(out, {"dorm_id", "cell", "size"});
    for (const auto& d : dorms) w.row({i(d.dorm_id), d.cell, i(d.size())});
    close_checked(out, dir / "dorms.csv");
  }
  {
    auto out = open_output(dir / "compliance.csv");
    CsvWriter w(out, {"cell", "students", "compliant", "rate", "flagged"});
    for (const auto& c : cells) {
      const auto rep = compliance(c.list, c.dorms);
      w.row({c.list.cell, i(rep.students), i(rep.compliant), fmt::format("{:.6f}", rep.rate()),
             b(c.flagged)});
    }
    close_checked(out, dir / "compliance.csv");
  }
}

namespace {

struct RepTables {
  Replication rep;
  DyadTable dyads;
  std::vector<NodeRow> nodes;
  std::vector<BucketCheck> buckets;
};

RepTables tabulate(const RunConfig& config, std::uint32_t r) {
  RepTables t;
  t.rep = simulate_replication(config, r);
  const ProximityIndex index(t.rep.allocation.lists, t.rep.allocation.dorms);
  t.dyads = build_dyads(t.rep.population, index, t.rep.outcomes);
  t.nodes = build_nodes(t.rep.population, t.rep.outcomes, t.rep.allocation.lists);
  t.buckets = frequency_oracle(t.rep.outcomes);
  return t;
}

}  // namespace

void cmd_simulate(const RunConfig& config, const std::string& out_dir) {
  validate(config);
  make_dir(out_dir);
  const fs::path dir(out_dir);
  auto dyad_out = open_output(dir / "dyads.csv");
  auto node_out = open_output(dir / "nodes.csv");
  auto list_out = open_output(dir / "lists.csv");
  auto student_out = open_output(dir / "students.csv");
  auto oracle_out = open_output(dir / "oracle_summary.csv");
  CsvWriter dyads(dyad_out, dyad_columns());
  CsvWriter nodes(node_out, node_columns());
  CsvWriter students(student_out, {"rep", "id", "school", "grade", "gender", "cohort", "poor",
                                   "achievement", "centrality", "high_achieving",
                                   "high_central"});
  CsvWriter oracle(oracle_out, {"rep", "similarity", "distance", "n", "links", "rate",
                                "predicted", "standard_error", "pass"});
  if (config.replications == 0) {
    // Still emit a header for lists.csv.
    write_lists(list_out, {}, {}, 0);
  }

  const int threads = worker_threads(config.threads);
  const auto reps = static_cast<std::size_t>(config.replications);
  auto opt = [](const std::optional<bool>& v) { return v ? b(*v) : std::string(); };
  for (std::size_t start = 0; start < reps; start += static_cast<std::size_t>(threads)) {
    const std::size_t count = std::min(reps - start, static_cast<std::size_t>(threads));
    std::vector<RepTables> batch(count);
    parallel_for(count, threads, [&](std::size_t k) {
      batch[k] = tabulate(config, static_cast<std::uint32_t>(start + k));
    });
    for (std::size_t k = 0; k < count; ++k) {
      const int r = static_cast<int>(start + k);
      const auto& t = batch[k];
      write_dyads(dyads, r, t.dyads);
      write_nodes(nodes, r, t.nodes);
      if (r == 0) {
        write_lists(list_out, t.rep.allocation.lists, t.rep.allocation.dorms, r);
      } else {
        // Header already written by rep 0.
        std::ostringstream body;
        write_lists(body, t.rep.allocation.lists, t.rep.allocation.dorms, r);
        const std::string s = body.str();
        list_out << s.substr(s.find('\n') + 1);
      }
      for (const auto& st : t.rep.population.students)
        students.row({i(r), i(st.id), i(st.cell.school), i(st.cell.grade),
                      st.cell.gender == Gender::Male ? "M" : "F",
                      st.cohort == Cohort::FirstYear ? "first_year" : "returning", b(st.poor),
                      format_double(st.achievement_score),
                      st.centrality_score ? format_double(*st.centrality_score) : "",
                      opt(st.high_achieving), opt(st.high_central)});
      for (const auto& bc : t.buckets)
        oracle.row({i(r), i(bc.similarity), to_string(bc.distance), i(bc.n), i(bc.links),
                    format_double(bc.rate), format_double(bc.predicted),
                    format_double(bc.standard_error), bc.pass ? "pass" : "fail"});
    }
  }
  close_checked(dyad_out, dir / "dyads.csv");
  close_checked(node_out, dir / "nodes.csv");
  close_checked(list_out, dir / "lists.csv");
  close_checked(student_out, dir / "students.csv");
  close_checked(oracle_out, dir / "oracle_summary.csv");
}

namespace {

const std::vector<std::string>& coefficient_columns() {
  static const std::vector<std::string> cols{"rep", "term", "estimate", "cluster_se", "n",
                                             "n_clusters"};
  return cols;
}

void write_terms(CsvWriter& w, int rep, const RegressionResult& r) {
  for (const auto& t : r.terms)
    w.row({i(rep), t.name, format_double(t.estimate), format_double(t.cluster_se),
           i(r.n_obs), i(r.n_clusters)});
}

}  // namespace

void cmd_estimate(const std::string& dyads_path, const std::string& nodes_path,
                  const RunConfig& config, const std::string& out_dir, std::ostream& log) {
  validate(config);
  const auto dyads = read_dyads(read_csv_file(dyads_path));
  const auto nodes = read_nodes(read_csv_file(nodes_path));
  for (const auto& [rep, rows] : dyads)
    if (!nodes.count(rep))
      throw InputError(fmt::format("nodes table has no rows for rep {}", rep));
  for (const auto& [rep, rows] : nodes)
    if (!dyads.count(rep))
      throw InputError(fmt::format("dyads table has no rows for rep {}", rep));

  const auto ds = config.d_range();
  std::vector<int> reps;
  for (const auto& [rep, rows] : dyads) reps.push_back(rep);
  std::vector<Estimates> results(reps.size());
  parallel_for(reps.size(), worker_threads(config.threads), [&](std::size_t k) {
    results[k] = estimate_all(dyads.at(reps[k]), nodes.at(reps[k]), ds,
                              config.difference_interactions);
  });

  make_dir(out_dir);
  const fs::path dir(out_dir);
  struct Spec {
    const char* name;
    std::vector<RegressionResult> Estimates::*member;
  };
  const Spec specs[] = {{"proximity", &Estimates::proximity},
                        {"heterogeneity", &Estimates::heterogeneity},
                        {"placebo", &Estimates::placebo},
                        {"first_stage", &Estimates::first_stage}};

  auto dropped_out = open_output(dir / "dropped.csv");
  CsvWriter dropped(dropped_out, {"rep", "specification", "outcome", "d", "term"});
  auto note_dropped = [&](int rep, const RegressionResult& r) {
    for (const auto& name : r.dropped) {
      dropped.row({i(rep), r.specification, r.outcome, i(r.d), name});
      log << fmt::format("warning: rep {} {} ({}, d={}): dropped collinear column '{}'\n", rep,
                         r.specification, r.outcome, r.d, name);
    }
  };

  for (const auto& spec : specs) {
    for (std::size_t di = 0; di < ds.size(); ++di) {
      const fs::path path = dir / fmt::format("{}_d{}.csv", spec.name, ds[di]);
      auto out = open_output(path);
      CsvWriter w(out, coefficient_columns());
      for (std::size_t k = 0; k < reps.size(); ++k) {
        const auto& r = (results[k].*spec.member)[di];
        write_terms(w, reps[k], r);
        note_dropped(reps[k], r);
      }
      close_checked(out, path);
    }
  }
  const fs::path hpath = dir / "homophily.csv";
  auto hout = open_output(hpath);
  CsvWriter hw(hout, {"rep", "outcome", "term", "estimate", "cluster_se", "n", "n_clusters"});
  for (std::size_t k = 0; k < reps.size(); ++k) {
    for (const auto& r : results[k].homophily) {
      note_dropped(reps[k], r);
      for (const auto& t : r.terms)
        hw.row({i(reps[k]), r.outcome, t.name, format_double(t.estimate),
                format_double(t.cluster_se), i(r.n_obs), i(r.n_clusters)});
    }
  }
  close_checked(hout, hpath);
  close_checked(dropped_out, dir / "dropped.csv");
}

// ---------------------------------------------------------------------------
// Experiment

namespace {

struct RepSummary {
  Estimates estimates;
  bool alternation = true;
  ComplianceReport compliance;
  int flagged_cells = 0;
  int bucket_checks = 0;
  int bucket_passes = 0;
  long dyads = 0;
  long students = 0;
};

RepSummary run_replication(const RunConfig& config, std::uint32_t r) {
  const char* stage = "simulate";
  try {
    RepTables t = tabulate(config, r);
    RepSummary s;
    stage = "randomize";
    for (const auto& list : t.rep.allocation.lists) {
      s.alternation = s.alternation && verify_alternation(list);
      std::vector<Dorm> own;
      for (const auto& d : t.rep.allocation.dorms)
        if (d.cell == list.cell) own.push_back(d);
      const auto c = compliance(list, own);
      s.compliance.students += c.students;
      s.compliance.compliant += c.compliant;
    }
    s.flagged_cells = t.rep.allocation.flagged_cells + t.rep.population.flagged_cells;
    for (const auto& bc : t.buckets) {
      ++s.bucket_checks;
      if (bc.pass) ++s.bucket_passes;
    }
    s.dyads = static_cast<long>(t.dyads.size());
    s.students = static_cast<long>(t.rep.population.students.size());
    stage = "estimate";
    s.estimates = estimate_all(t.dyads, t.nodes, config.d_range(), config.difference_interactions);
    return s;
  } catch (const std::exception& e) {
    throw StageError(fmt::format("stage '{}' failed (rep {}): {}", stage, r, e.what()));
  }
}

struct Summary {
  double mean = 0.0;
  double sd = 0.0;
  double mean_se = 0.0;
  double positive_share = 0.0;
  double negative_share = 0.0;
  /// Share of replications with |t| > 1.96.
  double significant_share = 0.0;
  std::vector<double> estimates;
};

Summary summarize(const std::vector<const Term*>& terms) {
  Summary s;
  const double n = static_cast<double>(terms.size());
  if (terms.empty()) return s;
  for (const Term* t : terms) {
    s.estimates.push_back(t->estimate);
    s.mean += t->estimate / n;
    s.mean_se += t->cluster_se / n;
    if (t->estimate > 0) s.positive_share += 1.0 / n;
    if (t->estimate < 0) s.negative_share += 1.0 / n;
    if (std::abs(t->t()) > 1.96) s.significant_share += 1.0 / n;
  }
  if (terms.size() > 1) {
    double ss = 0.0;
    for (const Term* t : terms) ss += (t->estimate - s.mean) * (t->estimate - s.mean);
    s.sd = std::sqrt(ss / (n - 1.0));
  }
  return s;
}

json to_json(const Summary& s) {
  return {{"mean", s.mean},
          {"sd", s.sd},
          {"mean_se", s.mean_se},
          {"positive_share", s.positive_share},
          {"negative_share", s.negative_share},
          {"significant_share", s.significant_share},
          {"estimates", s.estimates}};
}

json invariant(const std::string& name, std::optional<bool> pass, const std::string& detail) {
  return {{"name", name}, {"pass", pass ? json(*pass) : json(nullptr)}, {"detail", detail}};
}

}  // namespace

json experiment_report(const RunConfig& config) {
  validate(config);
  const ModelParams params(config.model);
  const auto ds = config.d_range();
  const auto reps = static_cast<std::size_t>(config.replications);

  std::vector<RepSummary> runs(reps);
  parallel_for(reps, worker_threads(config.threads), [&](std::size_t k) {
    runs[k] = run_replication(config, static_cast<std::uint32_t>(k));
  });

  json report;
  report["provenance"] = {{"config_hash", config_hash(config)},
                          {"seed", config.seed},
                          {"replications", config.replications},
                          {"mode", to_string(config.model.mode)},
                          {"version", kVersion}};
  report["config"] = config_to_json(config);

  // Closed form against Monte Carlo for every (similarity, distance) bucket.
  json oracle = json::array();
  bool oracle_pass = true;
  constexpr long kOracleReps = 200000;
  for (int s = 0; s <= params.categories(); ++s) {
    for (DistanceClass d : {DistanceClass::Near, DistanceClass::Far}) {
      const DyadModelInputs inputs{s, d, 1.0};
      const auto cf = closed_form(params, s, d);
      const auto mc = monte_carlo_link_prob(params, inputs,
                                            kOracleReps, config.seed + static_cast<std::uint64_t>(
                                                             2 * s + (d == DistanceClass::Far)));
      const double sigma = std::sqrt(cf.link_prob * (1.0 - cf.link_prob) / kOracleReps);
      const bool pass = std::abs(mc.estimate - cf.link_prob) <= 3.0 * sigma;
      oracle_pass = oracle_pass && pass;
      oracle.push_back({{"similarity", s},
                        {"distance", to_string(d)},
                        {"closed_form", cf.link_prob},
                        {"cutoff_belief", cf.cutoff_belief},
                        {"exploration_time", cf.exploration_time},
                        {"side_prob", cf.side_prob},
                        {"gamma", proximity_effect_at(params, s)},
                        {"monte_carlo", mc.estimate},
                        {"n", mc.n},
                        {"sigma", sigma},
                        {"pass", pass}});
    }
  }
  report["oracle"] = oracle;

  auto collect = [&](std::vector<RegressionResult> Estimates::*member, std::size_t di,
                     const std::string& name) {
    std::vector<const Term*> terms;
    for (const auto& run : runs) {
      const auto& r = (run.estimates.*member)[di];
      if (r.has(name)) terms.push_back(&r.term(name));
    }
    return summarize(terms);
  };

  struct Curve {
    const char* key;
    std::vector<RegressionResult> Estimates::*member;
    const char* term;
  };
  const Curve curves[] = {
      {"gamma", &Estimates::proximity, "proximity"},
      {"gamma_first", &Estimates::proximity, "proximity_x_first"},
      {"beta_poverty", &Estimates::heterogeneity, "diff_poverty"},
      {"beta_achievement", &Estimates::heterogeneity, "diff_achievement"},
      {"beta_centrality", &Estimates::heterogeneity, "diff_centrality"},
      {"delta_poverty", &Estimates::heterogeneity, "proximity_x_diff_poverty"},
      {"delta_achievement", &Estimates::heterogeneity, "proximity_x_diff_achievement"},
      {"delta_centrality", &Estimates::heterogeneity, "proximity_x_diff_centrality"},
      {"placebo", &Estimates::placebo, "proximity"},
      {"first_stage", &Estimates::first_stage, "proximity"},
  };
  std::map<std::string, std::vector<Summary>> curve_data;
  json curve_json;
  for (const auto& c : curves) {
    json points = json::array();
    for (std::size_t di = 0; di < ds.size(); ++di) {
      Summary s = collect(c.member, di, c.term);
      json p = to_json(s);
      p["d"] = ds[di];
      points.push_back(p);
      curve_data[c.key].push_back(std::move(s));
    }
    curve_json[c.key] = points;
  }
  report["curves"] = curve_json;

  json homophily = json::array();
  std::map<std::pair<std::string, std::string>, Summary> hsum;
  const auto& outcomes = homophily_outcomes();
  for (std::size_t o = 0; o < outcomes.size(); ++o) {
    for (const char* term : {"poor", "lower_achieving", "less_central", "baseline_connections"}) {
      std::vector<const Term*> terms;
      for (const auto& run : runs) {
        const auto& r = run.estimates.homophily[o];
        if (r.has(term)) terms.push_back(&r.term(term));
      }
      Summary s = summarize(terms);
      json h = to_json(s);
      h["outcome"] = outcomes[o];
      h["term"] = term;
      homophily.push_back(h);
      hsum[{outcomes[o], term}] = std::move(s);
    }
  }
  report["homophily"] = homophily;

  ComplianceReport comp;
  bool alternation = true;
  int flagged = 0, checks = 0, passes = 0;
  long dyads = 0, students = 0;
  for (const auto& run : runs) {
    alternation = alternation && run.alternation;
    comp.students += run.compliance.students;
    comp.compliant += run.compliance.compliant;
    flagged += run.flagged_cells;
    checks += run.bucket_checks;
    passes += run.bucket_passes;
    dyads += run.dyads;
    students += run.students;
  }
  report["design"] = {{"students", students},
                      {"dyads", dyads},
                      {"flagged_cells", flagged},
                      {"compliance_rate", comp.rate()},
                      {"frequency_buckets", checks},
                      {"frequency_buckets_within_3sigma", passes}};

  // Invariant ledger. Sign expectations need at least one replication.
  json inv = json::array();
  const bool have = reps > 0;
  auto all_of_curve = [&](const std::string& key, auto pred) {
    const auto& v = curve_data[key];
    return std::all_of(v.begin(), v.end(), pred);
  };
  auto curve_mean = [&](const std::string& key) {
    const auto& v = curve_data[key];
    double m = 0.0;
    for (const auto& s : v) m += s.mean / static_cast<double>(v.size());
    return m;
  };
  auto opt = [&](bool v) { return have ? std::optional<bool>(v) : std::nullopt; };

  inv.push_back(invariant("alternation", opt(alternation), "every list passes the alternation check"));
  inv.push_back(invariant("closed_form_monte_carlo", oracle_pass,
                          "Monte Carlo link rate within 3 sigma of the closed form in every bucket"));
  inv.push_back(invariant(
      "frequency_oracle", opt(checks > 0 && passes >= 0.95 * checks),
      fmt::format("{} of {} simulated buckets within 3 sigma (need 95%)", passes, checks)));
  inv.push_back(invariant("gamma_positive",
                          opt(all_of_curve("gamma", [](const Summary& s) { return s.mean > 0; })),
                          "mean gamma-hat(d) > 0 for every d"));
  inv.push_back(invariant(
      "gamma_declining",
      ds.size() > 1 && have
          ? std::optional<bool>(curve_data["gamma"].front().mean > curve_data["gamma"].back().mean)
          : std::nullopt,
      fmt::format("mean gamma-hat({}) > mean gamma-hat({})", ds.front(), ds.back())));
  {
    const double dp = curve_mean("delta_poverty");
    const double da = curve_mean("delta_achievement");
    std::optional<bool> pass;
    std::string detail = fmt::format("mean over d: delta_p = {:.6f}, delta_a = {:.6f}", dp, da);
    if (have && config.model.mode == HomophilyMode::Learning) {
      pass = dp > 0 && da > 0;
      detail += " (learning mode expects > 0)";
    } else if (have && config.model.mode == HomophilyMode::Preference) {
      pass = dp < 0 && da < 0;
      detail += " (preference mode expects < 0)";
    } else {
      detail += " (no sign expectation in this mode)";
    }
    inv.push_back(invariant("delta_signs", pass, detail));
  }
  {
    const double bp = curve_mean("beta_poverty");
    const double ba = curve_mean("beta_achievement");
    inv.push_back(invariant("heterogeneity_beta_negative", opt(bp < 0 && ba < 0),
                            fmt::format("mean over d: beta_p = {:.6f}, beta_a = {:.6f}", bp, ba)));
  }
  {
    const double a = hsum[{"with_nonpoor", "poor"}].mean;
    const double b2 = hsum[{"with_higher_achieving", "lower_achieving"}].mean;
    const double c = hsum[{"with_more_central", "less_central"}].mean;
    inv.push_back(invariant(
        "homophily_beta_negative", opt(a < 0 && b2 < 0 && c < 0),
        fmt::format("poor on non-poor links {:.4f}, lower-achieving on higher-achieving links "
                    "{:.4f}, less-central on more-central links {:.4f}",
                    a, b2, c)));
  }
  {
    double rejections = 0.0;
    for (const auto& s : curve_data["placebo"]) rejections += s.significant_share;
    rejections /= static_cast<double>(ds.size());
    inv.push_back(invariant("placebo_size", opt(rejections <= 0.10),
                            fmt::format("baseline-link rejection rate {:.4f} at 5% (need <= 0.10)",
                                        rejections)));
  }
  {
    double worst = 1.0;
    for (std::size_t di = 0; di < ds.size(); ++di) {
      int ok = 0;
      for (const auto& run : runs) {
        const auto& r = run.estimates.first_stage[di];
        if (r.has("proximity") && r.term("proximity").estimate > 0 &&
            r.term("proximity").t() > 1.96)
          ++ok;
      }
      if (have) worst = std::min(worst, static_cast<double>(ok) / static_cast<double>(reps));
    }
    inv.push_back(invariant("first_stage", opt(worst >= 0.95),
                            fmt::format("lowest share of positive significant first stages "
                                        "across d: {:.4f} (need >= 0.95)",
                                        worst)));
  }
  inv.push_back(invariant(
      "config_hash_stable",
      config_hash(config_from_json(config_to_json(config))) == config_hash(config),
      "hash unchanged by a serialize/parse round trip"));
  report["invariants"] = inv;
  return report;
}

json cmd_experiment(const RunConfig& config, const std::string& out_dir) {
  json report = experiment_report(config);
  make_dir(out_dir);
  const fs::path dir(out_dir);
  {
    auto out = open_output(dir / "report.json");
    out << report.dump(2) << '\n';
    close_checked(out, dir / "report.json");
  }
  {
    auto out = open_output(dir / "curves.csv");
    CsvWriter w(out, {"curve", "d", "mean", "sd", "mean_se", "positive_share",
                      "significant_share"});
    for (const auto& [key, points] : report["curves"].items())
      for (const auto& p : points)
        w.row({key, i(p["d"].get<int>()), format_double(p["mean"].get<double>()),
               format_double(p["sd"].get<double>()), format_double(p["mean_se"].get<double>()),
               format_double(p["positive_share"].get<double>()),
               format_double(p["significant_share"].get<double>())});
    close_checked(out, dir / "curves.csv");
  }
  {
    auto out = open_output(dir / "homophily_summary.csv");
    CsvWriter w(out, {"outcome", "term", "mean", "sd", "mean_se", "negative_share"});
    for (const auto& h : report["homophily"])
      w.row({h["outcome"].get<std::string>(), h["term"].get<std::string>(),
             format_double(h["mean"].get<double>()), format_double(h["sd"].get<double>()),
             format_double(h["mean_se"].get<double>()),
             format_double(h["negative_share"].get<double>())});
    close_checked(out, dir / "homophily_summary.csv");
  }
  return report;
}

}  // namespace homophily
