#pragma once

// Main bandit over relations plus one parameter bandit per parameterized
// relation, with the reward shaping used to train each level.

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>

#include "amt/bandit.hpp"
#include "amt/error.hpp"
#include "amt/relations.hpp"
#include "amt/verdicts.hpp"
#include "json.hpp"

namespace amt {

struct RelationChoice {
  Relation mr = Relation::blur;
  std::optional<int> param;
  double main_propensity = 1.0;
  std::optional<double> param_propensity;

  bool operator==(const RelationChoice&) const = default;
};

/// Main-level reward: 1 for a violation, 0 for a pass, whatever the relation.
inline double main_reward(Verdict v) { return v == Verdict::violated ? 1.0 : 0.0; }

inline constexpr double kSmallestStepReward = 10000.0;

/// Parameter-level reward: 10000 for a violation at |phi| = 5, halved for
/// every further 5-degree step; passes earn nothing. Sign is ignored.
inline double param_reward(int degrees, Verdict v) {
  const int magnitude = degrees < 0 ? -degrees : degrees;
  if (magnitude < 5 || magnitude > 90 || magnitude % 5 != 0) {
    throw InvalidInput("param_reward: " + std::to_string(degrees) + " is not a grid value");
  }
  if (v == Verdict::pass) return 0.0;
  return std::ldexp(kSmallestStepReward, -(magnitude / 5 - 1));
}

struct HierarchyConfig {
  std::size_t dimension = 1;
  ExplorationConfig exploration;
  ScorerConfig scorer;
  std::uint64_t seed = 0;
};

inline constexpr int kHierarchySchemaVersion = 1;

class Hierarchy {
 public:
  Hierarchy() = default;
  explicit Hierarchy(const HierarchyConfig& config) : dimension_(config.dimension) {
    BanditConfig main_cfg{config.dimension, kRelationCount, config.exploration, config.scorer,
                          derive_seed(config.seed, 0)};
    main_ = BanditCore(main_cfg);
    for (Relation r : kRelations) {
      if (!is_parameterized(r)) continue;
      BanditConfig cfg{config.dimension, grid_for(r).size(), config.exploration, config.scorer,
                       derive_seed(config.seed, 1 + index_of(r))};
      params_.emplace(r, BanditCore(cfg));
    }
  }

  std::size_t dimension() const noexcept { return dimension_; }
  const BanditCore& main() const noexcept { return main_; }
  const BanditCore& param_bandit(Relation r) const {
    const auto it = params_.find(r);
    if (it == params_.end()) throw InvalidInput(std::string(to_string(r)) + " has no parameter bandit");
    return it->second;
  }
  BanditCore& param_bandit(Relation r) {
    return const_cast<BanditCore&>(std::as_const(*this).param_bandit(r));
  }

  /// Main bandit picks the relation; a parameterized relation then asks its
  /// own bandit for phi using the same context.
  RelationChoice select_relation(const ContextVector& context) {
    const Selection s = main_.select(context);
    RelationChoice choice;
    choice.mr = kRelations[s.action.index];
    choice.main_propensity = s.propensity;
    if (is_parameterized(choice.mr)) fill_parameter(choice, context);
    return choice;
  }

  /// Parameter selection only, for a fixed relation (main propensity 1).
  RelationChoice select_parameter(Relation mr, const ContextVector& context) {
    if (!is_parameterized(mr)) throw InvalidInput(std::string(to_string(mr)) + " takes no parameter");
    RelationChoice choice;
    choice.mr = mr;
    choice.main_propensity = 1.0;
    fill_parameter(choice, context);
    return choice;
  }

  /// Trains the main bandit with main_reward and, for parameterized
  /// choices, that relation's bandit with param_reward. Other parameter
  /// bandits are left untouched.
  void update(const ContextVector& context, const RelationChoice& choice, Verdict verdict) {
    check_param(choice.mr, choice.param);
    main_.update({context, ActionId{index_of(choice.mr)}, main_reward(verdict), choice.main_propensity});
    if (is_parameterized(choice.mr)) update_parameter(context, choice, verdict);
  }

  void update_parameter(const ContextVector& context, const RelationChoice& choice, Verdict verdict) {
    check_param(choice.mr, choice.param);
    if (!choice.param_propensity) throw InvalidInput("update_parameter: missing parameter propensity");
    const auto idx = grid_for(choice.mr).index_of(*choice.param);
    param_bandit(choice.mr).update(
        {context, ActionId{*idx}, param_reward(*choice.param, verdict), *choice.param_propensity});
  }

  nlohmann::json to_json() const {
    nlohmann::json bandits{{"main", main_.to_json()}};
    for (const auto& [r, core] : params_) bandits[std::string(to_string(r))] = core.to_json();
    return nlohmann::json{{"schema", "amt-hierarchy"},
                          {"version", kHierarchySchemaVersion},
                          {"registry", registry_digest()},
                          {"dimension", dimension_},
                          {"bandits", std::move(bandits)}};
  }

  static Hierarchy from_json(const nlohmann::json& j) {
    try {
      if (j.at("schema").get<std::string>() != "amt-hierarchy") throw LoadError("not a hierarchy snapshot");
      if (j.at("version").get<int>() != kHierarchySchemaVersion) {
        throw LoadError("unsupported hierarchy snapshot version");
      }
      if (j.at("registry").get<std::string>() != registry_digest()) {
        throw LoadError("hierarchy snapshot was built for a different relation registry");
      }
      Hierarchy h;
      h.dimension_ = j.at("dimension").get<std::size_t>();
      const auto& bandits = j.at("bandits");
      h.main_ = BanditCore::from_json(bandits.at("main"));
      if (h.main_.arms() != kRelationCount || h.main_.dimension() != h.dimension_) {
        throw LoadError("main bandit shape does not match the registry");
      }
      for (Relation r : kRelations) {
        if (!is_parameterized(r)) continue;
        auto core = BanditCore::from_json(bandits.at(std::string(to_string(r))));
        if (core.arms() != grid_for(r).size() || core.dimension() != h.dimension_) {
          throw LoadError(std::string(to_string(r)) + " bandit shape does not match the registry");
        }
        h.params_.emplace(r, std::move(core));
      }
      if (bandits.size() != 1 + h.params_.size()) throw LoadError("hierarchy snapshot has unknown bandits");
      return h;
    } catch (const nlohmann::json::exception& e) {
      throw LoadError(std::string("corrupt hierarchy snapshot: ") + e.what());
    }
  }

  std::string snapshot() const { return to_json().dump(); }

  static Hierarchy load(std::string_view bytes) {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(bytes);
    } catch (const nlohmann::json::exception& e) {
      throw LoadError(std::string("hierarchy snapshot is not valid JSON: ") + e.what());
    }
    return from_json(j);
  }

 private:
  void fill_parameter(RelationChoice& choice, const ContextVector& context) {
    const Selection p = param_bandit(choice.mr).select(context);
    choice.param = grid_for(choice.mr)[p.action.index];
    choice.param_propensity = p.propensity;
  }

  std::size_t dimension_ = 0;
  BanditCore main_;
  std::map<Relation, BanditCore> params_;
};

}  // namespace amt
