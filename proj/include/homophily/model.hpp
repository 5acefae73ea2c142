#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace homophily {

/// Raised when an argument lies outside an operation's domain.
class InputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when model parameters break one of the model's standing
/// restrictions (cost ordering, p0 above the far cost, monotone maps).
class ModelRestrictionError : public InputError {
 public:
  using InputError::InputError;
};

enum class DistanceClass { Near, Far };

/// Which channel drives homophily in the simulated world.
///   Learning:   signal rate rises with similarity, every pair worth exploring.
///   Preference: constant signal rate, share of high-payoff pairs rises with
///               similarity.
///   Mixed:      both.
enum class HomophilyMode { Learning, Preference, Mixed };

std::string to_string(DistanceClass d);
std::string to_string(HomophilyMode m);
HomophilyMode parse_mode(const std::string& s);

/// Plain, serializable description of the model. Converted to ModelParams
/// (which validates) before use.
struct ModelConfig {
  double p0 = 0.5;
  double r = 1.0;
  double c_near = 0.1;
  double c_far = 0.25;
  /// Signal arrival rate indexed by similarity count s = 0..K.
  std::vector<double> lambda_map{0.5, 1.0, 1.5, 2.0};
  /// Pr(high maximum payoff) indexed by s = 0..K.
  std::vector<double> mu_map{0.6, 0.75, 0.9, 1.0};
  /// Signal rate shared by all pairs in preference mode.
  double preference_lambda = 1.0;
  HomophilyMode mode = HomophilyMode::Learning;

  bool operator==(const ModelConfig&) const = default;
};

/// Whether construction accepts c_near == c_far. The degenerate case is
/// only meaningful for reporting a zero proximity effect.
enum class CostOrdering { Strict, AllowEqual };

/// Validated model primitives. Construction enforces:
///   0 < c_near < c_far < p0 < 1, r > 0,
///   lambda strictly increasing in s (learning and mixed modes),
///   mu strictly increasing in s within (0, 1] (preference and mixed modes).
class ModelParams {
 public:
  explicit ModelParams(const ModelConfig& config,
                       CostOrdering ordering = CostOrdering::Strict);

  double p0() const { return config_.p0; }
  double r() const { return config_.r; }
  double c_near() const { return config_.c_near; }
  double c_far() const { return config_.c_far; }
  HomophilyMode mode() const { return config_.mode; }
  /// Number of trait categories.
  int categories() const { return static_cast<int>(config_.lambda_map.size()) - 1; }
  const ModelConfig& config() const { return config_; }

  /// Signal rate used for a pair with similarity count s (mode-aware).
  double lambda(int s) const;
  /// Pr(high maximum payoff) for similarity count s; 1 in learning mode.
  double mu(int s) const;

 private:
  ModelConfig config_;
};

struct StudentType {
  std::vector<bool> traits;
};

struct Similarity {
  std::vector<bool> theta;
  int count = 0;
};

struct ClosedFormOutputs {
  double cutoff_belief = 0;
  double exploration_time = 0;
  double side_prob = 0;
  double link_prob = 0;
  double gamma = 0;
};

Similarity similarity(const StudentType& a, const StudentType& b);

double cost_of_distance(const ModelParams& params, DistanceClass d);

/// Belief after maintaining for t without a breakthrough.
double posterior_no_signal(double p0, double lambda, double t);

double cutoff_belief(double r, double lambda, double c);

/// Length of the exploration phase; requires p0 > c, c in (0,1).
double exploration_time(double p0, double r, double lambda, double c);

/// Ex ante probability one side still maintains after its exploration phase.
double side_maintain_prob(double p0, double r, double lambda, double c);

/// Probability at least one side maintains the interaction.
double dyad_link_prob(double p0, double r, double lambda, double c);

double extended_dyad_link_prob(double mu, double p0, double r, double lambda,
                               double c);

/// y(near) - y(far) for the given signal rate; zero when c_near == c_far.
double proximity_effect(double p0, double r, double lambda, double c_near,
                        double c_far);
double proximity_effect(const ModelParams& params, double lambda);

double lambda_of_similarity(const ModelParams& params, int s);
double mu_of_similarity(const ModelParams& params, int s);

/// Mode-aware link probability for a pair with similarity count s at the
/// given cost: mu(s) * y(lambda(s), c).
double link_prob(const ModelParams& params, int s, double cost);

/// Mode-aware proximity effect mu(s) * (y(near) - y(far)).
double proximity_effect_at(const ModelParams& params, int s);

ClosedFormOutputs closed_form(const ModelParams& params, int s,
                              DistanceClass d);

}  // namespace homophily
