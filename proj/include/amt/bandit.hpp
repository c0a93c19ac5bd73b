#pragma once

// Contextual-bandit core: per-arm reward regressors, epsilon-greedy and
// cover exploration with exact propensities, and doubly-robust updates.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "amt/error.hpp"
#include "amt/rng.hpp"
#include "json.hpp"

namespace amt {

/// Fixed-length description of a source test case. Every value is finite.
class ContextVector {
 public:
  ContextVector() = default;
  explicit ContextVector(std::vector<double> values) : values_(std::move(values)) {
    for (double v : values_) {
      if (!std::isfinite(v)) throw InvalidInput("ContextVector: non-finite value");
    }
  }
  ContextVector(std::initializer_list<double> values)
      : ContextVector(std::vector<double>(values)) {}

  std::span<const double> values() const noexcept { return values_; }
  std::size_t size() const noexcept { return values_.size(); }
  double operator[](std::size_t i) const { return values_[i]; }

  bool operator==(const ContextVector&) const = default;

 private:
  std::vector<double> values_;
};

struct ActionId {
  std::size_t index = 0;
  auto operator<=>(const ActionId&) const = default;
};

struct Observation {
  ContextVector context;
  ActionId action;
  double reward = 0.0;
  double propensity = 1.0;
};

struct Selection {
  ActionId action;
  double propensity = 1.0;
};

enum class ScorerKind { linear, mlp };
enum class Strategy { epsilon_greedy, cover };

inline std::string_view to_string(ScorerKind kind) {
  return kind == ScorerKind::linear ? "linear" : "mlp";
}
inline std::string_view to_string(Strategy s) {
  return s == Strategy::epsilon_greedy ? "epsilon-greedy" : "cover";
}
inline ScorerKind parse_scorer_kind(std::string_view s) {
  if (s == "linear") return ScorerKind::linear;
  if (s == "mlp") return ScorerKind::mlp;
  throw InvalidInput("unknown scorer kind: " + std::string(s));
}
inline Strategy parse_strategy(std::string_view s) {
  if (s == "epsilon-greedy") return Strategy::epsilon_greedy;
  if (s == "cover") return Strategy::cover;
  throw InvalidInput("unknown exploration strategy: " + std::string(s));
}

struct ExplorationConfig {
  Strategy strategy = Strategy::epsilon_greedy;
  double epsilon = 0.1;
  std::size_t cover_size = 3;

  void validate() const {
    // epsilon = 1 is accepted as the pure-exploration limit.
    if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw InvalidInput("epsilon must lie in [0, 1]");
    if (cover_size < 1) throw InvalidInput("cover size must be >= 1");
  }
};

struct ScorerConfig {
  ScorerKind kind = ScorerKind::linear;
  double learning_rate = 0.001;
  std::size_t hidden_units = 16;
};

/// Reward regressor with one output per arm.
///
/// Linear: arm a scores w_a . x + b_a. MLP: one tanh hidden layer shared by
/// all arms feeding k linear outputs.
///
/// `step` moves the prediction of one arm toward a target using a normalized
/// gradient step (the change in prediction at the training context is
/// independent of the context's scale) with importance-invariant damping:
/// a target built with importance weight 1/p never overshoots.
class PolicyModel {
 public:
  PolicyModel() = default;
  PolicyModel(ScorerKind kind, std::size_t dimension, std::size_t arms,
              double learning_rate, std::size_t hidden_units = 16,
              std::uint64_t init_seed = 0)
      : kind_(kind),
        dimension_(dimension),
        arms_(arms),
        hidden_(kind == ScorerKind::mlp ? hidden_units : 0),
        learning_rate_(learning_rate) {
    if (dimension == 0 || arms == 0) throw InvalidInput("PolicyModel: empty dimension or arm set");
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
      throw InvalidInput("PolicyModel: learning rate must be positive");
    }
    if (kind_ == ScorerKind::linear) {
      weights_.assign(arms_ * (dimension_ + 1), 0.0);
    } else {
      if (hidden_ == 0) throw InvalidInput("PolicyModel: mlp needs hidden units");
      weights_.resize(hidden_ * (dimension_ + 1) + arms_ * (hidden_ + 1));
      RngStream rng(init_seed);
      for (double& w : weights_) w = -0.05 + 0.1 * rng.uniform();
    }
  }

  ScorerKind kind() const noexcept { return kind_; }
  std::size_t dimension() const noexcept { return dimension_; }
  std::size_t arms() const noexcept { return arms_; }
  std::size_t hidden_units() const noexcept { return hidden_; }
  double learning_rate() const noexcept { return learning_rate_; }
  std::span<const double> weights() const noexcept { return weights_; }

  /// Linear scorer only: (w_a, b_a) for one arm.
  void set_linear_arm(ActionId arm, std::span<const double> w, double bias = 0.0) {
    if (kind_ != ScorerKind::linear) throw InvalidInput("set_linear_arm on non-linear scorer");
    check_arm(arm);
    if (w.size() != dimension_) throw InvalidInput("set_linear_arm: dimension mismatch");
    double* row = &weights_[arm.index * (dimension_ + 1)];
    std::copy(w.begin(), w.end(), row);
    row[dimension_] = bias;
  }

  std::vector<double> predict(const ContextVector& context) const {
    check_context(context);
    const auto x = context.values();
    std::vector<double> out(arms_);
    if (kind_ == ScorerKind::linear) {
      for (std::size_t a = 0; a < arms_; ++a) {
        const double* row = &weights_[a * (dimension_ + 1)];
        double s = row[dimension_];
        for (std::size_t i = 0; i < dimension_; ++i) s += row[i] * x[i];
        out[a] = s;
      }
      return out;
    }
    const auto h = hidden_activations(x);
    for (std::size_t a = 0; a < arms_; ++a) out[a] = output(h, a);
    return out;
  }

  /// Moves arm's prediction at `context` toward `target`. `importance` is the
  /// inverse propensity already folded into the target.
  void step(const ContextVector& context, ActionId arm, double target, double importance = 1.0) {
    check_context(context);
    check_arm(arm);
    if (!std::isfinite(target)) throw InvalidInput("PolicyModel::step: non-finite target");
    if (!(importance >= 1.0) || !std::isfinite(importance)) {
      throw InvalidInput("PolicyModel::step: importance must be >= 1");
    }
    const auto x = context.values();
    const double rate = -std::expm1(-learning_rate_ * importance) / importance;

    if (kind_ == ScorerKind::linear) {
      double* row = &weights_[arm.index * (dimension_ + 1)];
      double pred = row[dimension_];
      double norm2 = 1.0;
      for (std::size_t i = 0; i < dimension_; ++i) {
        pred += row[i] * x[i];
        norm2 += x[i] * x[i];
      }
      const double delta = rate * (target - pred);
      if (delta == 0.0) return;
      const double g = delta / norm2;
      for (std::size_t i = 0; i < dimension_; ++i) row[i] += g * x[i];
      row[dimension_] += g;
      return;
    }

    const auto h = hidden_activations(x);
    const double pred = output(h, arm.index);
    const double delta = rate * (target - pred);
    if (delta == 0.0) return;

    double x_norm2 = 1.0;
    for (double v : x) x_norm2 += v * v;
    double* out_row = &weights_[hidden_ * (dimension_ + 1) + arm.index * (hidden_ + 1)];
    double norm2 = 1.0;
    std::vector<double> back(hidden_);
    for (std::size_t j = 0; j < hidden_; ++j) {
      norm2 += h[j] * h[j];
      back[j] = out_row[j] * (1.0 - h[j] * h[j]);
      norm2 += back[j] * back[j] * x_norm2;
    }
    const double g = delta / norm2;
    for (std::size_t j = 0; j < hidden_; ++j) {
      double* in_row = &weights_[j * (dimension_ + 1)];
      const double gj = g * back[j];
      for (std::size_t i = 0; i < dimension_; ++i) in_row[i] += gj * x[i];
      in_row[dimension_] += gj;
    }
    for (std::size_t j = 0; j < hidden_; ++j) out_row[j] += g * h[j];
    out_row[hidden_] += g;
  }

  nlohmann::json to_json() const { return nlohmann::json{{"weights", weights_}}; }

  void load_weights(const nlohmann::json& j) {
    auto w = j.at("weights").get<std::vector<double>>();
    if (w.size() != weights_.size()) throw LoadError("policy weights have wrong length");
    for (double v : w) {
      if (!std::isfinite(v)) throw LoadError("policy weights contain non-finite values");
    }
    weights_ = std::move(w);
  }

  bool operator==(const PolicyModel&) const = default;

 private:
  void check_context(const ContextVector& c) const {
    if (c.size() != dimension_) {
      throw InvalidInput("context dimension " + std::to_string(c.size()) + " != model dimension " +
                         std::to_string(dimension_));
    }
  }
  void check_arm(ActionId a) const {
    if (a.index >= arms_) throw InvalidInput("arm index out of range");
  }

  std::vector<double> hidden_activations(std::span<const double> x) const {
    std::vector<double> h(hidden_);
    for (std::size_t j = 0; j < hidden_; ++j) {
      const double* row = &weights_[j * (dimension_ + 1)];
      double s = row[dimension_];
      for (std::size_t i = 0; i < dimension_; ++i) s += row[i] * x[i];
      h[j] = std::tanh(s);
    }
    return h;
  }

  double output(const std::vector<double>& h, std::size_t arm) const {
    const double* row = &weights_[hidden_ * (dimension_ + 1) + arm * (hidden_ + 1)];
    double s = row[hidden_];
    for (std::size_t j = 0; j < hidden_; ++j) s += row[j] * h[j];
    return s;
  }

  ScorerKind kind_ = ScorerKind::linear;
  std::size_t dimension_ = 0;
  std::size_t arms_ = 0;
  std::size_t hidden_ = 0;
  double learning_rate_ = 0.001;
  std::vector<double> weights_;
};

/// Lowest index among the maximal scores.
inline ActionId argmax(std::span<const double> scores) {
  if (scores.empty()) throw InvalidInput("argmax of empty score vector");
  std::size_t best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i) {
    if (scores[i] > scores[best]) best = i;
  }
  return ActionId{best};
}

/// Doubly-robust regression targets: the taken arm gets its prediction plus
/// the importance-weighted residual, every other arm keeps its prediction.
inline std::vector<double> dr_targets(const Observation& obs, std::span<const double> predicted) {
  if (!(obs.propensity > 0.0)) throw InvalidInput("dr_targets: propensity must be positive");
  if (obs.action.index >= predicted.size()) throw InvalidInput("dr_targets: arm out of range");
  std::vector<double> targets(predicted.begin(), predicted.end());
  const double p = predicted[obs.action.index];
  targets[obs.action.index] = obs.propensity == 1.0 ? obs.reward : p + (obs.reward - p) / obs.propensity;
  return targets;
}

/// Bonus added to a cover policy's target when the taken arm is not the
/// greedy arm of any earlier policy.
inline constexpr double kCoverDiversityBonus = 0.1;

inline constexpr int kBanditSchemaVersion = 1;

struct BanditConfig {
  std::size_t dimension = 1;
  std::size_t arms = 1;
  ExplorationConfig exploration;
  ScorerConfig scorer;
  std::uint64_t seed = 0;
};

/// A contextual bandit: one policy for epsilon-greedy, m for cover, plus its
/// own exploration stream. Decisions are a pure function of the snapshot,
/// the contexts, and the rewards fed back.
class BanditCore {
 public:
  BanditCore() = default;
  explicit BanditCore(const BanditConfig& config) : config_(config), rng_(config.seed) {
    config_.exploration.validate();
    if (config_.arms == 0) throw InvalidInput("bandit needs at least one arm");
    if (config_.dimension == 0) throw InvalidInput("bandit needs a positive context dimension");
    const std::size_t m =
        config_.exploration.strategy == Strategy::cover ? config_.exploration.cover_size : 1;
    policies_.reserve(m);
    for (std::size_t j = 0; j < m; ++j) {
      policies_.emplace_back(config_.scorer.kind, config_.dimension, config_.arms,
                             config_.scorer.learning_rate, config_.scorer.hidden_units,
                             derive_seed(config_.seed, 1000 + j));
    }
  }

  const BanditConfig& config() const noexcept { return config_; }
  std::size_t arms() const noexcept { return config_.arms; }
  std::size_t dimension() const noexcept { return config_.dimension; }
  const RngStream& rng() const noexcept { return rng_; }
  std::uint64_t updates() const noexcept { return updates_; }
  const std::vector<PolicyModel>& policies() const noexcept { return policies_; }
  PolicyModel& policy(std::size_t j) { return policies_.at(j); }

  /// Scores of the primary policy.
  std::vector<double> predict(const ContextVector& context) const {
    return policies_.front().predict(context);
  }

  std::vector<ActionId> greedy_arms(const ContextVector& context) const {
    std::vector<ActionId> out;
    out.reserve(policies_.size());
    for (const auto& p : policies_) out.push_back(argmax(p.predict(context)));
    return out;
  }

  /// Full selection distribution for `context`.
  std::vector<double> distribution(const ContextVector& context) const {
    const double eps = config_.exploration.epsilon;
    const double k = static_cast<double>(config_.arms);
    std::vector<double> dist(config_.arms, eps / k);
    const auto greedy = greedy_arms(context);
    const double share = (1.0 - eps) / static_cast<double>(greedy.size());
    for (ActionId a : greedy) dist[a.index] += share;
    return dist;
  }

  Selection select(const ContextVector& context) { return select(context, rng_); }

  Selection select(const ContextVector& context, RngStream& rng) const {
    return config_.exploration.strategy == Strategy::epsilon_greedy
               ? select_epsilon_greedy(context, rng)
               : select_cover(context, rng);
  }

  Selection select_epsilon_greedy(const ContextVector& context, RngStream& rng) const {
    if (config_.exploration.strategy != Strategy::epsilon_greedy) {
      throw InvalidInput("select_epsilon_greedy on a cover bandit");
    }
    const double eps = config_.exploration.epsilon;
    const double k = static_cast<double>(config_.arms);
    const ActionId greedy = argmax(policies_.front().predict(context));
    ActionId chosen = greedy;
    if (rng.uniform() < eps) chosen = ActionId{rng.below(config_.arms)};
    const double p = chosen == greedy ? 1.0 - eps + eps / k : eps / k;
    return {chosen, p};
  }

  Selection select_cover(const ContextVector& context, RngStream& rng) const {
    if (config_.exploration.strategy != Strategy::cover) {
      throw InvalidInput("select_cover on an epsilon-greedy bandit");
    }
    const double eps = config_.exploration.epsilon;
    const double k = static_cast<double>(config_.arms);
    const double m = static_cast<double>(policies_.size());
    const auto greedy = greedy_arms(context);
    ActionId chosen;
    if (rng.uniform() < eps) {
      chosen = ActionId{rng.below(config_.arms)};
    } else {
      chosen = greedy[rng.below(greedy.size())];
    }
    const auto votes = static_cast<double>(std::count(greedy.begin(), greedy.end(), chosen));
    return {chosen, (1.0 - eps) * votes / m + eps / k};
  }

  void update(const Observation& obs) {
    if (obs.context.size() != config_.dimension) throw InvalidInput("update: context dimension mismatch");
    if (obs.action.index >= config_.arms) throw InvalidInput("update: arm out of range");
    if (!std::isfinite(obs.reward)) throw InvalidInput("update: non-finite reward");
    if (!(obs.propensity > 0.0 && obs.propensity <= 1.0)) {
      throw InvalidInput("update: propensity must lie in (0, 1]");
    }
    const auto greedy = greedy_arms(obs.context);
    const double importance = 1.0 / obs.propensity;
    for (std::size_t j = 0; j < policies_.size(); ++j) {
      auto& policy = policies_[j];
      const auto predicted = policy.predict(obs.context);
      double target = dr_targets(obs, predicted)[obs.action.index];
      if (j > 0) {
        const auto first = greedy.begin();
        const bool covered = std::find(first, first + static_cast<std::ptrdiff_t>(j), obs.action) !=
                             first + static_cast<std::ptrdiff_t>(j);
        if (!covered) target += kCoverDiversityBonus / obs.propensity;
      }
      policy.step(obs.context, obs.action, target, importance);
    }
    ++updates_;
  }

  nlohmann::json to_json() const {
    nlohmann::json policies = nlohmann::json::array();
    for (const auto& p : policies_) policies.push_back(p.to_json());
    return nlohmann::json{
        {"schema", "amt-bandit"},
        {"version", kBanditSchemaVersion},
        {"dimension", config_.dimension},
        {"arms", config_.arms},
        {"strategy", to_string(config_.exploration.strategy)},
        {"epsilon", config_.exploration.epsilon},
        {"cover_size", config_.exploration.cover_size},
        {"scorer", to_string(config_.scorer.kind)},
        {"learning_rate", config_.scorer.learning_rate},
        {"hidden_units", config_.scorer.hidden_units},
        {"seed", config_.seed},
        {"rng", {{"seed", rng_.seed()}, {"position", rng_.position()}}},
        {"updates", updates_},
        {"policies", std::move(policies)},
    };
  }

  static BanditCore from_json(const nlohmann::json& j) {
    try {
      if (j.at("schema").get<std::string>() != "amt-bandit") throw LoadError("not a bandit snapshot");
      const int version = j.at("version").get<int>();
      if (version != kBanditSchemaVersion) {
        throw LoadError("unsupported bandit snapshot version " + std::to_string(version));
      }
      BanditConfig cfg;
      cfg.dimension = j.at("dimension").get<std::size_t>();
      cfg.arms = j.at("arms").get<std::size_t>();
      cfg.exploration.strategy = parse_strategy(j.at("strategy").get<std::string>());
      cfg.exploration.epsilon = j.at("epsilon").get<double>();
      cfg.exploration.cover_size = j.at("cover_size").get<std::size_t>();
      cfg.scorer.kind = parse_scorer_kind(j.at("scorer").get<std::string>());
      cfg.scorer.learning_rate = j.at("learning_rate").get<double>();
      cfg.scorer.hidden_units = j.at("hidden_units").get<std::size_t>();
      cfg.seed = j.at("seed").get<std::uint64_t>();
      BanditCore core(cfg);
      const auto& policies = j.at("policies");
      if (policies.size() != core.policies_.size()) throw LoadError("policy count mismatch");
      for (std::size_t p = 0; p < policies.size(); ++p) core.policies_[p].load_weights(policies[p]);
      core.rng_ = RngStream(j.at("rng").at("seed").get<std::uint64_t>(),
                            j.at("rng").at("position").get<std::uint64_t>());
      core.updates_ = j.at("updates").get<std::uint64_t>();
      return core;
    } catch (const nlohmann::json::exception& e) {
      throw LoadError(std::string("corrupt bandit snapshot: ") + e.what());
    } catch (const InvalidInput& e) {
      throw LoadError(std::string("invalid bandit snapshot: ") + e.what());
    }
  }

  std::string snapshot() const { return to_json().dump(); }

  static BanditCore load(std::string_view bytes) {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(bytes);
    } catch (const nlohmann::json::exception& e) {
      throw LoadError(std::string("bandit snapshot is not valid JSON: ") + e.what());
    }
    return from_json(j);
  }

  bool operator==(const BanditCore& other) const {
    return snapshot() == other.snapshot();
  }

 private:
  BanditConfig config_;
  std::vector<PolicyModel> policies_;
  RngStream rng_;
  std::uint64_t updates_ = 0;
};

}  // namespace amt
