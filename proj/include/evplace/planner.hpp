#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "evplace/errors.hpp"
#include "evplace/market.hpp"
#include "evplace/rng.hpp"
#include "evplace/scenario.hpp"
#include "evplace/sim.hpp"

namespace evplace {

inline constexpr std::size_t kEnumerationCap = 20;      // own free bits
inline constexpr std::size_t kExactBeliefBits = 16;     // opponent free bits
inline constexpr int kBeliefMonteCarloDraws = 1024;

/// Per-provider placement costs, drawn i.i.d. uniform per site.
struct TypeVector {
  std::vector<double> costs;  // one per site
  bool operator==(const TypeVector&) const = default;
};

inline TypeVector draw_type_vector(const Scenario& scenario, Rng& rng) {
  TypeVector theta;
  theta.costs.reserve(scenario.sites.size());
  for (std::size_t j = 0; j < scenario.sites.size(); ++j)
    theta.costs.push_back(rng.uniform(scenario.planner.theta_lower,
                                      scenario.planner.theta_upper));
  return theta;
}

/// Belief of one provider about its opponents: every opponent site not
/// already built flips independently with probability p; sites built in
/// earlier stages stay built (probability 1).
struct Belief {
  std::vector<std::size_t> free_sites;
  std::vector<std::size_t> fixed_sites;
  double p = 0.5;
  bool operator==(const Belief&) const = default;
};

inline Belief make_belief(const Scenario& scenario, std::size_t provider_k,
                          const JointPlacement& carried) {
  Belief belief;
  for (std::size_t j = 0; j < scenario.sites.size(); ++j) {
    if (static_cast<std::size_t>(scenario.sites[j].level_owner) == provider_k)
      continue;
    bool built = j < carried.bits.size() && carried.bits[j];
    (built ? belief.fixed_sites : belief.free_sites).push_back(j);
  }
  return belief;
}

/// All policy bit-vectors of length l that keep every carried bit set,
/// in lexicographic order (position 0 is the most significant).
inline std::vector<std::vector<std::uint8_t>> enumerate_policies(
    std::size_t l, const std::vector<std::uint8_t>& carried) {
  if (carried.size() != l)
    throw ValidationError({"carried vector length mismatch"});
  std::vector<std::size_t> free_pos;
  for (std::size_t i = 0; i < l; ++i)
    if (!carried[i]) free_pos.push_back(i);
  if (free_pos.size() > kEnumerationCap)
    throw EnumerationCapError("policy enumeration over " +
                              std::to_string(free_pos.size()) +
                              " free sites exceeds the cap of " +
                              std::to_string(kEnumerationCap));
  const std::size_t f = free_pos.size();
  std::vector<std::vector<std::uint8_t>> out;
  out.reserve(std::size_t{1} << f);
  for (std::uint64_t m = 0; m < (std::uint64_t{1} << f); ++m) {
    std::vector<std::uint8_t> bits = carried;
    for (std::size_t t = 0; t < f; ++t)
      if (m >> (f - 1 - t) & 1) bits[free_pos[t]] = 1;
    out.push_back(std::move(bits));
  }
  return out;
}

struct OpponentDraw {
  std::vector<std::uint8_t> bits;  // overlay over all sites
  double prob = 0.0;
};

/// Materialize the belief: exact enumeration while the support is small
/// enough, otherwise a fixed number of seeded Monte-Carlo draws. The
/// draw list is shared across all candidate policies of the provider.
inline std::vector<OpponentDraw> opponent_draws(const Belief& belief,
                                                std::size_t site_count,
                                                Rng& rng) {
  std::vector<OpponentDraw> draws;
  const std::size_t f = belief.free_sites.size();
  if (f <= kExactBeliefBits) {
    draws.reserve(std::size_t{1} << f);
    for (std::uint64_t m = 0; m < (std::uint64_t{1} << f); ++m) {
      OpponentDraw draw;
      draw.bits.assign(site_count, 0);
      for (std::size_t j : belief.fixed_sites) draw.bits[j] = 1;
      draw.prob = 1.0;
      for (std::size_t t = 0; t < f; ++t) {
        if (m >> (f - 1 - t) & 1) {
          draw.bits[belief.free_sites[t]] = 1;
          draw.prob *= belief.p;
        } else {
          draw.prob *= 1.0 - belief.p;
        }
      }
      draws.push_back(std::move(draw));
    }
  } else {
    draws.reserve(kBeliefMonteCarloDraws);
    for (int d = 0; d < kBeliefMonteCarloDraws; ++d) {
      OpponentDraw draw;
      draw.bits.assign(site_count, 0);
      for (std::size_t j : belief.fixed_sites) draw.bits[j] = 1;
      for (std::size_t j : belief.free_sites)
        if (rng.bernoulli(belief.p)) draw.bits[j] = 1;
      draw.prob = 1.0 / kBeliefMonteCarloDraws;
      draws.push_back(std::move(draw));
    }
  }
  return draws;
}

/// Shared per-stage state: the stage agent pool, routing and market
/// caches, and the seed material for this stage's randomness.
struct StageContext {
  const Scenario* scenario = nullptr;
  const std::vector<EvAgent>* agents = nullptr;
  RoutingTable* routing = nullptr;
  EquilibriumCache* market = nullptr;
  std::unordered_map<std::uint64_t, QosEstimate>* qos_cache = nullptr;
  std::uint64_t master_seed = 0;
  std::uint64_t stage_index = 0;
  int threads = 1;
};

namespace detail {

inline JointPlacement overlay(const std::vector<std::uint8_t>& own,
                              const std::vector<std::uint8_t>& opponents) {
  JointPlacement joint;
  joint.bits.resize(own.size());
  for (std::size_t j = 0; j < own.size(); ++j)
    joint.bits[j] = own[j] | opponents[j];
  return joint;
}

inline const QosEstimate& qos_at(const StageContext& ctx,
                                 const JointPlacement& joint,
                                 const std::vector<double>& prices) {
  std::uint64_t key = placement_key(joint);
  auto it = ctx.qos_cache->find(key);
  if (it != ctx.qos_cache->end()) return it->second;
  QosEstimate est = estimate_qos(*ctx.scenario, *ctx.agents, joint, prices,
                                 ctx.scenario->planner.monte_carlo_runs,
                                 ctx.master_seed, ctx.stage_index,
                                 *ctx.routing, ctx.threads);
  return ctx.qos_cache->emplace(key, std::move(est)).first->second;
}

}  // namespace detail

/// True when the configured thresholds cannot reject any policy, so the
/// Monte-Carlo filter can be skipped entirely.
inline bool qos_filter_trivial(const PlannerConfig& pc) {
  return pc.delay_threshold >= 1.0 && !pc.coverage_upper_bound &&
         pc.coverage_threshold <= 0.0;
}

/// Expected revenue, disturbance, and (optionally) QoS for every
/// candidate policy of one provider, under the given belief. Costs
/// enter utilities linearly, so this table is reused across type draws.
struct PolicyEvaluation {
  std::size_t provider = 0;
  std::vector<std::vector<std::uint8_t>> policies;  // lex order, global bits
  std::vector<double> expected_revenue;
  std::vector<double> expected_disturbance;
  std::vector<double> expected_delay;     // filled when filter applied
  std::vector<double> expected_coverage;
  std::vector<std::uint8_t> qos_pass;     // 1 = policy passes thresholds
  bool pricing_all_converged = true;
};

inline PolicyEvaluation evaluate_policies_with_carry(
    const StageContext& ctx, std::size_t provider_k, const Belief& belief,
    const std::vector<std::uint8_t>& carried_own, bool apply_qos_filter) {
  const Scenario& sc = *ctx.scenario;
  const std::size_t l = sc.sites.size();

  // Enumerate over the provider's own candidate sites only; bits of
  // sites it does not own can never be set.
  std::vector<std::size_t> own = owned_sites(sc, provider_k);
  std::vector<std::uint8_t> carried_local;
  carried_local.reserve(own.size());
  for (std::size_t j : own)
    carried_local.push_back(j < carried_own.size() ? carried_own[j] : 0);
  std::vector<std::vector<std::uint8_t>> local =
      enumerate_policies(own.size(), carried_local);

  Rng belief_rng(sub_seed(ctx.master_seed, "belief", ctx.stage_index,
                          provider_k));
  std::vector<OpponentDraw> draws = opponent_draws(belief, l, belief_rng);

  PolicyEvaluation eval;
  eval.provider = provider_k;
  eval.policies.reserve(local.size());
  for (const auto& bits : local) {
    std::vector<std::uint8_t> global(l, 0);
    for (std::size_t t = 0; t < own.size(); ++t)
      if (bits[t]) global[own[t]] = 1;
    eval.policies.push_back(std::move(global));
  }

  const std::size_t np = eval.policies.size();
  eval.expected_revenue.assign(np, 0.0);
  eval.expected_disturbance.assign(np, 0.0);
  eval.expected_delay.assign(np, 0.0);
  eval.expected_coverage.assign(np, 0.0);
  eval.qos_pass.assign(np, 1);

  const bool run_filter = apply_qos_filter && !qos_filter_trivial(sc.planner);
  for (std::size_t pi = 0; pi < np; ++pi) {
    for (const OpponentDraw& draw : draws) {
      JointPlacement joint = detail::overlay(eval.policies[pi], draw.bits);
      const MarketOutcome& outcome =
          ctx.market->get_or_compute(sc, *ctx.agents, joint, *ctx.routing);
      if (!outcome.equilibrium.converged) eval.pricing_all_converged = false;
      eval.expected_revenue[pi] += draw.prob * outcome.revenue[provider_k];
      eval.expected_disturbance[pi] +=
          draw.prob * outcome.disturbance[provider_k];
      if (run_filter) {
        const QosEstimate& qos =
            detail::qos_at(ctx, joint, outcome.equilibrium.prices);
        eval.expected_delay[pi] +=
            draw.prob * qos.delay_probability[provider_k];
        eval.expected_coverage[pi] += draw.prob * qos.coverage[provider_k];
      }
    }
    if (run_filter) {
      const PlannerConfig& pc = sc.planner;
      bool delay_ok = eval.expected_delay[pi] <= pc.delay_threshold;
      bool cov_ok = pc.coverage_upper_bound
                        ? eval.expected_coverage[pi] <= pc.coverage_threshold
                        : eval.expected_coverage[pi] >= pc.coverage_threshold;
      eval.qos_pass[pi] = delay_ok && cov_ok;
    }
  }
  return eval;
}

namespace detail {

inline double policy_cost(const TypeVector& theta,
                          const std::vector<std::uint8_t>& bits) {
  double c = 0.0;
  for (std::size_t j = 0; j < bits.size(); ++j)
    if (bits[j]) c += theta.costs[j];
  return c;
}

inline int bit_count(const std::vector<std::uint8_t>& bits) {
  int n = 0;
  for (std::uint8_t b : bits) n += b;
  return n;
}

}  // namespace detail

/// Expected utility of one candidate policy under the belief:
/// sum over opponent placements of prob x (R_k - w B_k), minus the
/// placement cost.
inline double expected_utility(const StageContext& ctx, std::size_t provider_k,
                               const std::vector<std::uint8_t>& policy_bits,
                               const Belief& belief, const TypeVector& theta,
                               double w) {
  const Scenario& sc = *ctx.scenario;
  Rng belief_rng(sub_seed(ctx.master_seed, "belief", ctx.stage_index,
                          provider_k));
  std::vector<OpponentDraw> draws =
      opponent_draws(belief, sc.sites.size(), belief_rng);
  double value = 0.0;
  for (const OpponentDraw& draw : draws) {
    JointPlacement joint = detail::overlay(policy_bits, draw.bits);
    const MarketOutcome& outcome =
        ctx.market->get_or_compute(sc, *ctx.agents, joint, *ctx.routing);
    value += draw.prob * (outcome.revenue[provider_k] -
                          w * outcome.disturbance[provider_k]);
  }
  return value - detail::policy_cost(theta, policy_bits);
}

/// Argmax over a prepared policy table for a concrete type draw. Ties
/// go to fewer stations, then to the lexicographically smaller policy
/// (the enumeration order).
inline std::size_t best_response_index(const PolicyEvaluation& eval,
                                       const TypeVector& theta, double w) {
  std::size_t best = eval.policies.size();
  double best_value = 0.0;
  int best_count = 0;
  for (std::size_t pi = 0; pi < eval.policies.size(); ++pi) {
    if (!eval.qos_pass[pi]) continue;
    double value = eval.expected_revenue[pi] -
                   detail::policy_cost(theta, eval.policies[pi]) -
                   w * eval.expected_disturbance[pi];
    int count = detail::bit_count(eval.policies[pi]);
    if (best == eval.policies.size() || value > best_value ||
        (value == best_value && count < best_count)) {
      best = pi;
      best_value = value;
      best_count = count;
    }
  }
  if (best == eval.policies.size())
    throw InfeasibleError("no placement policy satisfies the QoS thresholds");
  return best;
}

inline PlacementPolicy best_response(const StageContext& ctx,
                                     std::size_t provider_k,
                                     const TypeVector& theta,
                                     const Belief& belief, double w,
                                     const std::vector<std::uint8_t>& carried,
                                     bool qos_filter) {
  PolicyEvaluation eval = evaluate_policies_with_carry(
      ctx, provider_k, belief, carried, qos_filter);
  std::size_t idx = best_response_index(eval, theta, w);
  return PlacementPolicy{eval.policies[idx]};
}

/// Type-space membership test: policy l is the choice for type theta
/// iff switching to any other policy j strictly lowers utility, i.e.
///   theta . (S_j - S_l) - (ER_j - ER_l) + w (B_j - B_l) > 0  for all j.
/// The types satisfying this carve out policy l's region of the
/// hypercube of possible cost draws.
inline bool hypervolume_member(const TypeVector& theta, std::size_t l,
                               const std::vector<std::vector<std::uint8_t>>&
                                   policies,
                               const std::vector<double>& expected_revenue,
                               const std::vector<double>& expected_disturbance,
                               double w) {
  double cost_l = detail::policy_cost(theta, policies.at(l));
  for (std::size_t j = 0; j < policies.size(); ++j) {
    if (j == l) continue;
    double lhs = detail::policy_cost(theta, policies[j]) - cost_l -
                 (expected_revenue[j] - expected_revenue[l]) +
                 w * (expected_disturbance[j] - expected_disturbance[l]);
    if (!(lhs > 0.0)) return false;
  }
  return true;
}

struct StageResult {
  std::string label;
  std::vector<PlacementPolicy> policies;  // per provider, global bits
  std::vector<double> prices;
  std::vector<double> expected_utilities;
  QosEstimate qos;
  std::vector<std::vector<int>> new_site_ids;  // per provider, Site::id
  std::vector<int> cumulative_stations;        // per provider
  bool equilibrium_converged = true;
  bool operator==(const StageResult&) const = default;
};

/// Maximum EV count over all stages: the pool every stage draws its
/// prefix from, so later stages extend earlier ones deterministically.
inline std::size_t pool_size(const Scenario& scenario) {
  std::size_t n = 0;
  for (const StageConfig& stage : scenario.stages)
    n = std::max(n, static_cast<std::size_t>(stage.ev_count));
  return n;
}

inline std::vector<EvAgent> stage_agent_pool(const Scenario& scenario) {
  Rng rng(sub_seed(scenario.rng_seed, "agents"));
  return build_agent_pool(scenario, pool_size(scenario), rng);
}

/// One round of the placement game: draw types, best-respond under the
/// belief, then price and score the realized joint placement.
inline StageResult solve_stage(const Scenario& scenario,
                               std::size_t stage_index,
                               const JointPlacement& carried,
                               const std::vector<EvAgent>& pool,
                               RoutingTable& routing, int threads = 1) {
  const StageConfig& stage = scenario.stages.at(stage_index);
  const std::size_t nk = scenario.providers.size();
  const std::size_t l = scenario.sites.size();

  std::vector<EvAgent> agents(
      pool.begin(),
      pool.begin() + std::min<std::size_t>(stage.ev_count, pool.size()));

  EquilibriumCache market;
  std::unordered_map<std::uint64_t, QosEstimate> qos_cache;
  StageContext ctx;
  ctx.scenario = &scenario;
  ctx.agents = &agents;
  ctx.routing = &routing;
  ctx.market = &market;
  ctx.qos_cache = &qos_cache;
  ctx.master_seed = scenario.rng_seed;
  ctx.stage_index = stage_index;
  ctx.threads = threads;

  std::vector<std::uint8_t> carried_bits = carried.bits;
  carried_bits.resize(l, 0);

  StageResult result;
  result.label = stage.label;
  result.policies.resize(nk);
  result.expected_utilities.assign(nk, 0.0);

  for (std::size_t k = 0; k < nk; ++k) {
    Rng theta_rng(sub_seed(scenario.rng_seed, "theta", stage_index, k));
    TypeVector theta = draw_type_vector(scenario, theta_rng);
    Belief belief = make_belief(scenario, k, JointPlacement{carried_bits});
    PolicyEvaluation eval = evaluate_policies_with_carry(
        ctx, k, belief, carried_bits, /*apply_qos_filter=*/true);
    std::size_t idx = best_response_index(eval, theta, scenario.planner.w);
    result.policies[k] = PlacementPolicy{eval.policies[idx]};
    result.expected_utilities[k] =
        eval.expected_revenue[idx] -
        detail::policy_cost(theta, eval.policies[idx]) -
        scenario.planner.w * eval.expected_disturbance[idx];
  }

  JointPlacement joint = combine(result.policies, l);
  const MarketOutcome& outcome =
      market.get_or_compute(scenario, agents, joint, routing);
  result.prices = outcome.equilibrium.prices;
  result.equilibrium_converged = outcome.equilibrium.converged;
  result.qos = estimate_qos(scenario, agents, joint,
                            outcome.equilibrium.prices,
                            scenario.planner.monte_carlo_runs,
                            scenario.rng_seed, stage_index, routing, threads);

  result.new_site_ids.assign(nk, {});
  result.cumulative_stations.assign(nk, 0);
  for (std::size_t j = 0; j < l; ++j) {
    if (!joint.bits[j]) continue;
    std::size_t k = scenario.sites[j].level_owner;
    ++result.cumulative_stations[k];
    if (!carried_bits[j])
      result.new_site_ids[k].push_back(scenario.sites[j].id);
  }
  return result;
}

/// Run every stage in order, carrying built stations forward.
inline std::vector<StageResult> plan_multistage(const Scenario& scenario,
                                                int threads = 1) {
  RoutingTable routing(scenario.road_network);
  std::vector<EvAgent> pool = stage_agent_pool(scenario);
  JointPlacement carried;
  carried.bits.assign(scenario.sites.size(), 0);

  std::vector<StageResult> results;
  for (std::size_t s = 0; s < scenario.stages.size(); ++s) {
    StageResult result =
        solve_stage(scenario, s, carried, pool, routing, threads);
    for (const PlacementPolicy& policy : result.policies)
      for (std::size_t j = 0; j < policy.bits.size(); ++j)
        if (policy.bits[j]) carried.bits[j] = 1;
    results.push_back(std::move(result));
  }
  return results;
}

}  // namespace evplace
