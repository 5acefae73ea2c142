#include "homophily/config.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include <fmt/core.h>
#include <nlohmann/json.hpp>

namespace homophily {

using nlohmann::json;

std::vector<int> RunConfig::d_range() const {
  std::vector<int> ds;
  for (int d = d_min; d <= d_max; ++d) ds.push_back(d);
  return ds;
}

SimConfig RunConfig::sim_config(std::uint32_t replication) const {
  SimConfig s;
  for (int school = 1; school <= schools; ++school)
    for (int grade : grades) s.networks.push_back({school, grade, students_per_network, male_share});
  s.first_year_grade = first_year_grade;
  s.poor_share = poor_share;
  s.achievement_mean = achievement_mean;
  s.achievement_sd = achievement_sd;
  s.centrality_mean = centrality_mean;
  s.centrality_sd = centrality_sd;
  s.trait_correlation = trait_correlation;
  s.baseline_density = baseline_density;
  s.baseline_persistence = baseline_persistence;
  s.first_year_near_cost_multiplier = first_year_near_cost_multiplier;
  s.seed = seed;
  s.replication = replication;
  return s;
}

void validate(const RunConfig& c) {
  ModelParams params(c.model);
  if (c.model.lambda_map.size() != 4)
    throw ConfigError(fmt::format(
        "model.lambda_map needs 4 entries (similarity 0..3), got {}",
        c.model.lambda_map.size()));
  if (c.schools < 0) throw ConfigError("population.schools must be >= 0");
  if (c.students_per_network < 0)
    throw ConfigError("population.students_per_network must be >= 0");
  std::set<int> seen;
  for (int g : c.grades)
    if (!seen.insert(g).second)
      throw ConfigError(fmt::format("population.grades lists grade {} twice", g));
  if (c.dorm_sizes.empty()) throw ConfigError("dorm_sizes must not be empty");
  for (int s : c.dorm_sizes)
    if (s < 1) throw ConfigError(fmt::format("dorm_sizes entries must be >= 1, got {}", s));
  if (c.d_min < 1 || c.d_max < c.d_min)
    throw ConfigError(fmt::format("d_range must satisfy 1 <= min <= max, got [{}, {}]",
                                  c.d_min, c.d_max));
  if (c.replications < 0) throw ConfigError("replications must be >= 0");
  if (c.threads < 0) throw ConfigError("threads must be >= 0");
  if (c.output_dir.empty()) throw ConfigError("output_dir must not be empty");
  validate(c.sim_config(0));
}

namespace {

class Reader {
 public:
  Reader(const json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
    if (!obj_.is_object()) throw ConfigError(fmt::format("{} must be an object", where()));
  }

  template <typename T>
  void get(const char* key, T& out) {
    known_.insert(key);
    const auto it = obj_.find(key);
    if (it == obj_.end()) return;
    if (!type_ok(*it, out))
      throw ConfigError(fmt::format("{}.{} has the wrong type", where(), key));
    out = it->template get<T>();
  }

  const json* child(const char* key) {
    known_.insert(key);
    const auto it = obj_.find(key);
    return it == obj_.end() ? nullptr : &*it;
  }

  void finish() const {
    for (const auto& [key, value] : obj_.items())
      if (!known_.count(key))
        throw ConfigError(fmt::format("unknown key '{}' in {}", key, where()));
  }

 private:
  std::string where() const { return path_.empty() ? "config" : path_; }

  // nlohmann converts between number kinds silently; be strict instead.
  static bool type_ok(const json& v, double&) { return v.is_number(); }
  static bool type_ok(const json& v, int&) { return v.is_number_integer(); }
  static bool type_ok(const json& v, std::uint64_t&) { return v.is_number_unsigned(); }
  static bool type_ok(const json& v, std::string&) { return v.is_string(); }
  static bool type_ok(const json& v, bool&) { return v.is_boolean(); }
  template <typename T>
  static bool type_ok(const json& v, std::vector<T>&) {
    T probe{};
    return v.is_array() &&
           std::all_of(v.begin(), v.end(), [&](const json& e) { return type_ok(e, probe); });
  }

  const json& obj_;
  std::string path_;
  std::set<std::string> known_;
};

}  // namespace

RunConfig config_from_json(const json& doc) {
  RunConfig c;
  Reader top(doc, "");
  if (const json* m = top.child("model")) {
    Reader r(*m, "model");
    r.get("p0", c.model.p0);
    r.get("r", c.model.r);
    r.get("c_near", c.model.c_near);
    r.get("c_far", c.model.c_far);
    r.get("lambda_map", c.model.lambda_map);
    r.get("mu_map", c.model.mu_map);
    r.get("preference_lambda", c.model.preference_lambda);
    r.finish();
  }
  std::string mode = to_string(c.model.mode);
  top.get("mode", mode);
  try {
    c.model.mode = parse_mode(mode);
  } catch (const InputError& e) {
    throw ConfigError(e.what());
  }
  if (const json* p = top.child("population")) {
    Reader r(*p, "population");
    r.get("schools", c.schools);
    r.get("grades", c.grades);
    r.get("students_per_network", c.students_per_network);
    r.get("male_share", c.male_share);
    r.get("first_year_grade", c.first_year_grade);
    r.get("poor_share", c.poor_share);
    r.get("achievement_mean", c.achievement_mean);
    r.get("achievement_sd", c.achievement_sd);
    r.get("centrality_mean", c.centrality_mean);
    r.get("centrality_sd", c.centrality_sd);
    r.get("trait_correlation", c.trait_correlation);
    r.get("baseline_density", c.baseline_density);
    r.get("baseline_persistence", c.baseline_persistence);
    r.get("first_year_near_cost_multiplier", c.first_year_near_cost_multiplier);
    r.finish();
  }
  top.get("dorm_sizes", c.dorm_sizes);
  top.get("difference_interactions", c.difference_interactions);
  std::vector<int> range{c.d_min, c.d_max};
  top.get("d_range", range);
  if (range.size() != 2) throw ConfigError("d_range must be [min, max]");
  c.d_min = range[0];
  c.d_max = range[1];
  top.get("seed", c.seed);
  top.get("replications", c.replications);
  top.get("output_dir", c.output_dir);
  top.get("threads", c.threads);
  top.finish();
  validate(c);
  return c;
}

json config_to_json(const RunConfig& c) {
  json doc;
  doc["model"] = {{"p0", c.model.p0},
                  {"r", c.model.r},
                  {"c_near", c.model.c_near},
                  {"c_far", c.model.c_far},
                  {"lambda_map", c.model.lambda_map},
                  {"mu_map", c.model.mu_map},
                  {"preference_lambda", c.model.preference_lambda}};
  doc["mode"] = to_string(c.model.mode);
  doc["population"] = {{"schools", c.schools},
                       {"grades", c.grades},
                       {"students_per_network", c.students_per_network},
                       {"male_share", c.male_share},
                       {"first_year_grade", c.first_year_grade},
                       {"poor_share", c.poor_share},
                       {"achievement_mean", c.achievement_mean},
                       {"achievement_sd", c.achievement_sd},
                       {"centrality_mean", c.centrality_mean},
                       {"centrality_sd", c.centrality_sd},
                       {"trait_correlation", c.trait_correlation},
                       {"baseline_density", c.baseline_density},
                       {"baseline_persistence", c.baseline_persistence},
                       {"first_year_near_cost_multiplier", c.first_year_near_cost_multiplier}};
  doc["dorm_sizes"] = c.dorm_sizes;
  doc["difference_interactions"] = c.difference_interactions;
  doc["d_range"] = {c.d_min, c.d_max};
  doc["seed"] = c.seed;
  doc["replications"] = c.replications;
  doc["output_dir"] = c.output_dir;
  doc["threads"] = c.threads;
  return doc;
}

RunConfig parse_config(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(fmt::format("config is not valid JSON: {}", e.what()));
  }
  return config_from_json(doc);
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(fmt::format("cannot open config '{}'", path));
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

std::string config_hash(const RunConfig& config) {
  const std::string canonical = config_to_json(config).dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : canonical) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return fmt::format("{:016x}", h);
}

}  // namespace homophily
