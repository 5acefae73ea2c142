#include "homophily/model.hpp"

#include <cmath>

#include <fmt/core.h>

namespace homophily {

std::string to_string(DistanceClass d) {
  return d == DistanceClass::Near ? "near" : "far";
}

std::string to_string(HomophilyMode m) {
  switch (m) {
    case HomophilyMode::Learning: return "learning";
    case HomophilyMode::Preference: return "preference";
    case HomophilyMode::Mixed: return "mixed";
  }
  return "learning";
}

HomophilyMode parse_mode(const std::string& s) {
  if (s == "learning") return HomophilyMode::Learning;
  if (s == "preference") return HomophilyMode::Preference;
  if (s == "mixed") return HomophilyMode::Mixed;
  throw InputError(fmt::format("unknown homophily mode '{}'", s));
}

namespace {

bool strictly_increasing(const std::vector<double>& v) {
  for (std::size_t i = 1; i < v.size(); ++i)
    if (!(v[i] > v[i - 1])) return false;
  return true;
}

void check_open_unit(double x, const char* name) {
  if (!(x > 0.0 && x < 1.0))
    throw InputError(fmt::format("{} must lie in (0,1), got {}", name, x));
}

void check_cost_domain(double p0, double r, double lambda, double c) {
  check_open_unit(p0, "p0");
  if (!(r > 0.0)) throw InputError(fmt::format("r must be positive, got {}", r));
  if (!(lambda > 0.0))
    throw InputError(fmt::format("lambda must be positive, got {}", lambda));
  check_open_unit(c, "c");
  if (!(p0 > c))
    throw ModelRestrictionError(fmt::format(
        "model restriction violated: p0 ({}) must exceed the cost ({})", p0, c));
}

// (r / (r + lambda)) * (c / (1 - c)): the share of valuable interactions
// abandoned for lack of information.
double abandonment_ratio(double r, double lambda, double c) {
  return (r / (r + lambda)) * (c / (1.0 - c));
}

}  // namespace

ModelParams::ModelParams(const ModelConfig& config, CostOrdering ordering)
    : config_(config) {
  check_open_unit(config.p0, "p0");
  if (!(config.r > 0.0))
    throw InputError(fmt::format("r must be positive, got {}", config.r));
  check_open_unit(config.c_near, "c_near");
  check_open_unit(config.c_far, "c_far");
  const bool ordered = ordering == CostOrdering::Strict
                           ? config.c_near < config.c_far
                           : config.c_near <= config.c_far;
  if (!ordered)
    throw ModelRestrictionError(fmt::format(
        "model restriction violated: c_near ({}) must be below c_far ({})",
        config.c_near, config.c_far));
  if (!(config.p0 > config.c_far))
    throw ModelRestrictionError(fmt::format(
        "model restriction violated: p0 ({}) must exceed c_far ({})", config.p0,
        config.c_far));
  if (config.lambda_map.size() < 2)
    throw InputError("lambda_map needs at least two entries (K >= 1)");
  if (config.mu_map.size() != config.lambda_map.size())
    throw InputError(fmt::format(
        "mu_map has {} entries but lambda_map has {}", config.mu_map.size(),
        config.lambda_map.size()));
  for (double l : config.lambda_map)
    if (!(l > 0.0)) throw InputError("lambda_map entries must be positive");
  for (double m : config.mu_map)
    if (!(m > 0.0 && m <= 1.0))
      throw InputError("mu_map entries must lie in (0,1]");
  if (!(config.preference_lambda > 0.0))
    throw InputError("preference_lambda must be positive");

  const bool uses_lambda = config.mode != HomophilyMode::Preference;
  const bool uses_mu = config.mode != HomophilyMode::Learning;
  if (uses_lambda && !strictly_increasing(config.lambda_map))
    throw ModelRestrictionError(
        "model restriction violated: lambda_map must be strictly increasing "
        "in similarity");
  if (uses_mu && !strictly_increasing(config.mu_map))
    throw ModelRestrictionError(
        "model restriction violated: mu_map must be strictly increasing in "
        "similarity");
}

double ModelParams::lambda(int s) const {
  if (s < 0 || s > categories())
    throw InputError(fmt::format("similarity count {} outside [0,{}]", s,
                                 categories()));
  if (config_.mode == HomophilyMode::Preference) return config_.preference_lambda;
  return config_.lambda_map[static_cast<std::size_t>(s)];
}

double ModelParams::mu(int s) const {
  if (s < 0 || s > categories())
    throw InputError(fmt::format("similarity count {} outside [0,{}]", s,
                                 categories()));
  if (config_.mode == HomophilyMode::Learning) return 1.0;
  return config_.mu_map[static_cast<std::size_t>(s)];
}

Similarity similarity(const StudentType& a, const StudentType& b) {
  if (a.traits.size() != b.traits.size())
    throw InputError(fmt::format("trait vectors differ in length ({} vs {})",
                                 a.traits.size(), b.traits.size()));
  Similarity out;
  out.theta.resize(a.traits.size());
  for (std::size_t k = 0; k < a.traits.size(); ++k) {
    out.theta[k] = a.traits[k] == b.traits[k];
    out.count += out.theta[k] ? 1 : 0;
  }
  return out;
}

double cost_of_distance(const ModelParams& params, DistanceClass d) {
  return d == DistanceClass::Near ? params.c_near() : params.c_far();
}

double posterior_no_signal(double p0, double lambda, double t) {
  check_open_unit(p0, "p0");
  if (!(lambda > 0.0))
    throw InputError(fmt::format("lambda must be positive, got {}", lambda));
  if (!(t >= 0.0)) throw InputError(fmt::format("t must be >= 0, got {}", t));
  const double decayed = p0 * std::exp(-lambda * t);
  return decayed / (decayed + 1.0 - p0);
}

double cutoff_belief(double r, double lambda, double c) {
  if (!(r > 0.0)) throw InputError(fmt::format("r must be positive, got {}", r));
  if (!(lambda > 0.0))
    throw InputError(fmt::format("lambda must be positive, got {}", lambda));
  if (!(c >= 0.0 && c < 1.0))
    throw InputError(fmt::format("cost must lie in [0,1), got {}", c));
  return r * c / (r + lambda - lambda * c);
}

double exploration_time(double p0, double r, double lambda, double c) {
  check_cost_domain(p0, r, lambda, c);
  const double odds = p0 / (1.0 - p0);
  return std::log(odds * ((r + lambda) / r) * ((1.0 - c) / c)) / lambda;
}

double side_maintain_prob(double p0, double r, double lambda, double c) {
  check_cost_domain(p0, r, lambda, c);
  return p0 - (1.0 - p0) * abandonment_ratio(r, lambda, c);
}

double dyad_link_prob(double p0, double r, double lambda, double c) {
  check_cost_domain(p0, r, lambda, c);
  const double miss = (1.0 - p0) * (1.0 + abandonment_ratio(r, lambda, c));
  return 1.0 - miss * miss;
}

double extended_dyad_link_prob(double mu, double p0, double r, double lambda,
                               double c) {
  if (!(mu >= 0.0 && mu <= 1.0))
    throw InputError(fmt::format("mu must lie in [0,1], got {}", mu));
  return mu * dyad_link_prob(p0, r, lambda, c);
}

double proximity_effect(double p0, double r, double lambda, double c_near,
                        double c_far) {
  if (!(c_near <= c_far))
    throw ModelRestrictionError(fmt::format(
        "model restriction violated: c_near ({}) exceeds c_far ({})", c_near,
        c_far));
  if (c_near == c_far) {
    check_cost_domain(p0, r, lambda, c_far);
    return 0.0;
  }
  return dyad_link_prob(p0, r, lambda, c_near) -
         dyad_link_prob(p0, r, lambda, c_far);
}

double proximity_effect(const ModelParams& params, double lambda) {
  return proximity_effect(params.p0(), params.r(), lambda, params.c_near(),
                          params.c_far());
}

double lambda_of_similarity(const ModelParams& params, int s) {
  return params.lambda(s);
}

double mu_of_similarity(const ModelParams& params, int s) {
  return params.mu(s);
}

double link_prob(const ModelParams& params, int s, double cost) {
  return extended_dyad_link_prob(params.mu(s), params.p0(), params.r(),
                                 params.lambda(s), cost);
}

double proximity_effect_at(const ModelParams& params, int s) {
  return params.mu(s) * proximity_effect(params, params.lambda(s));
}

ClosedFormOutputs closed_form(const ModelParams& params, int s,
                              DistanceClass d) {
  const double lambda = params.lambda(s);
  const double c = cost_of_distance(params, d);
  ClosedFormOutputs out;
  out.cutoff_belief = cutoff_belief(params.r(), lambda, c);
  out.exploration_time = exploration_time(params.p0(), params.r(), lambda, c);
  out.side_prob = side_maintain_prob(params.p0(), params.r(), lambda, c);
  out.link_prob = link_prob(params, s, c);
  out.gamma = proximity_effect_at(params, s);
  return out;
}

}  // namespace homophily
