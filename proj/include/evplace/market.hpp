#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <unordered_map>
#include <vector>

#include "evplace/choice.hpp"
#include "evplace/errors.hpp"
#include "evplace/grid.hpp"
#include "evplace/scenario.hpp"

namespace evplace {

/// One provider's build decisions over every scenario site. Bits for
/// sites the provider does not own stay 0.
struct PlacementPolicy {
  std::vector<std::uint8_t> bits;
  bool operator==(const PlacementPolicy&) const = default;
};

/// Because every site has exactly one owner, the three policies never
/// overlap and the joint placement collapses to a single built-set.
struct JointPlacement {
  std::vector<std::uint8_t> bits;  // length = site count, 1 = built
  bool operator==(const JointPlacement&) const = default;
};

inline JointPlacement combine(const std::vector<PlacementPolicy>& policies,
                              std::size_t site_count) {
  JointPlacement joint;
  joint.bits.assign(site_count, 0);
  for (const auto& p : policies)
    for (std::size_t j = 0; j < p.bits.size(); ++j)
      if (p.bits[j]) joint.bits.at(j) = 1;
  return joint;
}

inline std::uint64_t placement_key(const JointPlacement& joint) {
  if (joint.bits.size() > 64)
    throw ValidationError({"placement cache supports at most 64 sites"});
  std::uint64_t key = 0;
  for (std::size_t j = 0; j < joint.bits.size(); ++j)
    if (joint.bits[j]) key |= std::uint64_t{1} << j;
  return key;
}

/// Site indices owned by provider k, ascending.
inline std::vector<std::size_t> owned_sites(const Scenario& scenario,
                                            std::size_t provider_k) {
  std::vector<std::size_t> out;
  for (std::size_t j = 0; j < scenario.sites.size(); ++j)
    if (static_cast<std::size_t>(scenario.sites[j].level_owner) == provider_k)
      out.push_back(j);
  return out;
}

/// Built site indices per provider under a joint placement.
inline std::vector<std::vector<std::size_t>> built_lists(
    const Scenario& scenario, const JointPlacement& joint) {
  std::vector<std::vector<std::size_t>> built(scenario.providers.size());
  for (std::size_t j = 0; j < joint.bits.size(); ++j)
    if (joint.bits[j])
      built.at(scenario.sites[j].level_owner).push_back(j);
  return built;
}

struct PriceEquilibrium {
  std::vector<double> prices;     // per provider; 0.0 if no built sites
  std::vector<double> residuals;  // FOC values at the reported prices
  bool converged = false;
  int iterations = 0;
  bool used_fallback = false;
  bool operator==(const PriceEquilibrium&) const = default;
};

/// Station terms of the utility table, fixed per (agents, placement);
/// only the price-dependent nest term changes between evaluations, so
/// tables for new price vectors are assembled from here cheaply.
struct DemandContext {
  const Scenario* scenario = nullptr;
  const std::vector<EvAgent>* agents = nullptr;
  std::vector<std::vector<std::size_t>> built;
  std::vector<std::vector<std::vector<double>>> station_terms;  // [a][k][i]
};

inline DemandContext make_demand_context(const Scenario& scenario,
                                         const std::vector<EvAgent>& agents,
                                         const JointPlacement& joint,
                                         RoutingTable& routing) {
  DemandContext ctx;
  ctx.scenario = &scenario;
  ctx.agents = &agents;
  ctx.built = built_lists(scenario, joint);
  ctx.station_terms.resize(agents.size());
  for (std::size_t a = 0; a < agents.size(); ++a) {
    const EvAgent& agent = agents[a];
    ctx.station_terms[a].resize(ctx.built.size());
    for (std::size_t k = 0; k < ctx.built.size(); ++k) {
      const NestCoefficients& nc = scenario.choice.nests.at(k);
      for (std::size_t j : ctx.built[k]) {
        const Site& site = scenario.sites[j];
        double d = routing.deviating_distance(agent.home, agent.destination,
                                              site);
        int z = routing.destination_indicator(agent.destination, site,
                                              scenario.planner.d_th_km);
        ctx.station_terms[a][k].push_back(
            nc.mu * d + nc.eta * z + nc.gamma * site.restaurant +
            nc.lambda * site.shop_center + nc.delta * site.supermarket);
      }
    }
  }
  return ctx;
}

inline UtilityTable table_for(const DemandContext& ctx,
                              const std::vector<double>& prices) {
  const Scenario& sc = *ctx.scenario;
  UtilityTable table;
  table.site_count = sc.sites.size();
  table.outside_good = sc.planner.outside_good_enabled;
  table.nest_sites = ctx.built;
  table.utilities.resize(ctx.agents->size());
  table.incomes.reserve(ctx.agents->size());
  table.demands.reserve(ctx.agents->size());
  for (std::size_t a = 0; a < ctx.agents->size(); ++a) {
    const EvAgent& agent = (*ctx.agents)[a];
    table.incomes.push_back(agent.income);
    table.demands.push_back(agent.demand_kwh);
    auto& rows = table.utilities[a];
    rows.resize(ctx.built.size());
    for (std::size_t k = 0; k < ctx.built.size(); ++k) {
      double w = nest_utility(sc.choice, sc.providers[k], prices[k],
                              agent.income);
      rows[k].reserve(ctx.station_terms[a][k].size());
      for (double v : ctx.station_terms[a][k]) rows[k].push_back(w + v);
    }
  }
  return table;
}

/// Wholesale cost at a site: the LMP of its grid bus.
inline double site_cost(const Scenario& scenario, std::size_t site_index) {
  return lmp_at(scenario.grid, scenario.sites.at(site_index).bus);
}

/// FOC residual per provider at the given prices:
///   G_k = sum_n sum_{j in k} q_n [phi + (p_k - c_j) dphi/dp_k]
/// Providers with no built sites get residual 0.
inline std::vector<double> foc_residuals(const DemandContext& ctx,
                                         const std::vector<double>& prices) {
  const Scenario& sc = *ctx.scenario;
  UtilityTable table = table_for(ctx, prices);
  ChoiceProbabilities probs = choice_probabilities(table, sc.choice);
  std::vector<double> g(ctx.built.size(), 0.0);
  for (std::size_t k = 0; k < ctx.built.size(); ++k) {
    if (ctx.built[k].empty()) continue;
    for (std::size_t a = 0; a < ctx.agents->size(); ++a) {
      double slope = sc.choice.beta / table.incomes[a];
      double pk = probs.nest_share[a][k];
      double q = table.demands[a];
      for (std::size_t i = 0; i < ctx.built[k].size(); ++i) {
        double phi = probs.phi[a][k][i];
        double dphi = slope * phi * (1.0 - pk);
        double c = site_cost(sc, ctx.built[k][i]);
        g[k] += q * (phi + (prices[k] - c) * dphi);
      }
    }
  }
  return g;
}

/// Revenue of provider k at the given prices and placement.
inline double revenue(std::size_t provider_k, const std::vector<double>& prices,
                      const JointPlacement& joint, const Scenario& scenario,
                      const std::vector<EvAgent>& agents,
                      RoutingTable& routing) {
  DemandContext ctx = make_demand_context(scenario, agents, joint, routing);
  UtilityTable table = table_for(ctx, prices);
  ChoiceProbabilities probs = choice_probabilities(table, scenario.choice);
  std::vector<double> psi = charging_demand(table, probs);
  double r = 0.0;
  for (std::size_t j : ctx.built.at(provider_k))
    r += (prices[provider_k] - site_cost(scenario, j)) * psi[j];
  return r;
}

/// Profit: revenue minus placement cost theta . S_k.
inline double profit(double revenue_value, const std::vector<double>& theta,
                     const std::vector<std::uint8_t>& policy_bits) {
  if (theta.size() != policy_bits.size())
    throw ValidationError({"theta and policy length mismatch"});
  double cost = 0.0;
  for (std::size_t j = 0; j < theta.size(); ++j)
    if (policy_bits[j]) cost += theta[j];
  return revenue_value - cost;
}

/// Provider utility: profit minus the weighted grid disturbance.
inline double utility(double profit_value, double disturbance_b, double w) {
  return profit_value - w * disturbance_b;
}

namespace detail {

// Revenue of provider k from a prebuilt context (used by the fallback
// best-response search, where only prices change).
inline double revenue_from(const DemandContext& ctx, std::size_t provider_k,
                           const std::vector<double>& prices) {
  UtilityTable table = table_for(ctx, prices);
  ChoiceProbabilities probs = choice_probabilities(table, ctx.scenario->choice);
  std::vector<double> psi = charging_demand(table, probs);
  double r = 0.0;
  for (std::size_t j : ctx.built.at(provider_k))
    r += (prices[provider_k] - site_cost(*ctx.scenario, j)) * psi[j];
  return r;
}

inline double golden_section_max(const std::function<double(double)>& f,
                                 double lo, double hi, double tol) {
  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = lo, b = hi;
  double c = b - inv_phi * (b - a);
  double d = a + inv_phi * (b - a);
  double fc = f(c), fd = f(d);
  while (b - a > tol) {
    if (fc > fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - inv_phi * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + inv_phi * (b - a);
      fd = f(d);
    }
  }
  return (a + b) / 2.0;
}

inline double max_abs(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

}  // namespace detail

inline constexpr double kFocTolerance = 1e-8;
inline constexpr int kNewtonMaxIterations = 100;

/// Bertrand equilibrium prices: damped Newton on the FOC residual
/// vector over the providers that have built sites, with an iterated
/// best-response fallback if Newton stalls. Providers without sites
/// are dropped and reported at the sentinel price 0.
inline PriceEquilibrium solve_price_equilibrium(
    const JointPlacement& joint, const Scenario& scenario,
    const std::vector<EvAgent>& agents, RoutingTable& routing) {
  const std::size_t nk = scenario.providers.size();
  DemandContext ctx = make_demand_context(scenario, agents, joint, routing);

  std::vector<std::size_t> active;
  for (std::size_t k = 0; k < nk; ++k)
    if (!ctx.built[k].empty()) active.push_back(k);

  PriceEquilibrium eq;
  eq.prices.assign(nk, 0.0);
  eq.residuals.assign(nk, 0.0);
  if (active.empty() || ctx.agents->empty()) {
    eq.converged = true;
    return eq;
  }

  const double floor = scenario.planner.price_floor;
  std::vector<double> c_lo(nk, 0.0), c_hi(nk, 0.0);
  for (std::size_t k : active) {
    double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
    for (std::size_t j : ctx.built[k]) {
      lo = std::min(lo, site_cost(scenario, j));
      hi = std::max(hi, site_cost(scenario, j));
    }
    c_lo[k] = lo;
    c_hi[k] = hi;
    eq.prices[k] = std::max(floor, lo + 0.1);
  }

  auto residual_at = [&](const std::vector<double>& p) {
    return foc_residuals(ctx, p);
  };

  std::vector<double> g = residual_at(eq.prices);
  double gnorm = detail::max_abs(g);
  int stalls = 0;
  while (gnorm >= kFocTolerance && eq.iterations < kNewtonMaxIterations &&
         stalls < 4) {
    const std::size_t m = active.size();
    Eigen::MatrixXd jac(m, m);
    for (std::size_t col = 0; col < m; ++col) {
      std::size_t kc = active[col];
      double h = 1e-6 * std::max(1.0, std::abs(eq.prices[kc]));
      std::vector<double> pp = eq.prices, pm = eq.prices;
      pp[kc] += h;
      pm[kc] -= h;
      std::vector<double> gp = residual_at(pp), gm = residual_at(pm);
      for (std::size_t row = 0; row < m; ++row)
        jac(row, col) = (gp[active[row]] - gm[active[row]]) / (2.0 * h);
    }
    Eigen::VectorXd rhs(m);
    for (std::size_t row = 0; row < m; ++row) rhs(row) = -g[active[row]];
    Eigen::VectorXd step = jac.partialPivLu().solve(rhs);
    if (!step.allFinite()) break;

    double t = 1.0;
    std::vector<double> trial;
    double trial_norm = gnorm;
    std::vector<double> trial_g;
    while (t > 1.0 / 1024.0) {
      trial = eq.prices;
      for (std::size_t row = 0; row < m; ++row)
        trial[active[row]] =
            std::max(floor, trial[active[row]] + t * step(row));
      trial_g = residual_at(trial);
      trial_norm = detail::max_abs(trial_g);
      if (trial_norm < gnorm) break;
      t /= 2.0;
    }
    ++eq.iterations;
    if (trial_norm < gnorm) {
      eq.prices = trial;
      g = trial_g;
      gnorm = trial_norm;
      stalls = 0;
    } else {
      ++stalls;
    }
  }

  if (gnorm >= kFocTolerance) {
    // Iterated best response: each active provider maximizes its own
    // revenue over a bracketed price, holding the others fixed.
    eq.used_fallback = true;
    for (int sweep = 0; sweep < 200 && gnorm >= kFocTolerance; ++sweep) {
      for (std::size_t k : active) {
        double lo = std::max(floor, c_lo[k] + 1e-9);
        double hi = c_hi[k] + 2.0;
        std::vector<double> p = eq.prices;
        double best = detail::golden_section_max(
            [&](double x) {
              p[k] = x;
              return detail::revenue_from(ctx, k, p);
            },
            lo, hi, 1e-12);
        eq.prices[k] = best;
      }
      g = residual_at(eq.prices);
      gnorm = detail::max_abs(g);
    }
  }

  for (std::size_t k : active) eq.residuals[k] = g[k];
  eq.converged = gnorm < kFocTolerance;
  return eq;
}

struct DisturbanceResult {
  double value = 0.0;
  bool converged = false;
  bool operator==(const DisturbanceResult&) const = default;
};

/// Grid disturbance caused by superposing the given station energies on
/// the base load, against the zero-EV dispatch of the same solver path.
inline DisturbanceResult disturbance_for_load(
    const GridCase& grid, const std::map<int, double>& kwh_by_bus,
    double horizon_h) {
  DispatchResult base = dispatch_with_ev(grid, {}, horizon_h);
  DispatchResult ev = dispatch_with_ev(grid, kwh_by_bus, horizon_h);
  DisturbanceResult out;
  out.converged = base.solution.converged && ev.solution.converged;
  out.value = disturbance(base.gen_p_pu, base.gen_q_pu, ev.gen_p_pu,
                          ev.gen_q_pu);
  return out;
}

/// Everything the planner needs from the market for one joint
/// placement: equilibrium prices, per-provider revenue and disturbance,
/// and the per-site demand, all at equilibrium.
struct MarketOutcome {
  PriceEquilibrium equilibrium;
  std::vector<double> revenue;      // per provider
  std::vector<double> disturbance;  // per provider B_k
  std::vector<double> psi;          // per site, kWh
  bool grid_converged = true;
  bool operator==(const MarketOutcome&) const = default;
};

inline MarketOutcome evaluate_market(const Scenario& scenario,
                                     const std::vector<EvAgent>& agents,
                                     const JointPlacement& joint,
                                     RoutingTable& routing) {
  MarketOutcome out;
  out.equilibrium = solve_price_equilibrium(joint, scenario, agents, routing);

  DemandContext ctx = make_demand_context(scenario, agents, joint, routing);
  UtilityTable table = table_for(ctx, out.equilibrium.prices);
  ChoiceProbabilities probs = choice_probabilities(table, scenario.choice);
  out.psi = charging_demand(table, probs);

  const std::size_t nk = scenario.providers.size();
  out.revenue.assign(nk, 0.0);
  out.disturbance.assign(nk, 0.0);
  for (std::size_t k = 0; k < nk; ++k) {
    if (ctx.built[k].empty()) continue;
    std::map<int, double> kwh_by_bus;
    for (std::size_t j : ctx.built[k]) {
      out.revenue[k] +=
          (out.equilibrium.prices[k] - site_cost(scenario, j)) * out.psi[j];
      kwh_by_bus[scenario.sites[j].bus] += out.psi[j];
    }
    DisturbanceResult b = disturbance_for_load(scenario.grid, kwh_by_bus,
                                               scenario.planner.horizon_h);
    out.disturbance[k] = b.value;
    out.grid_converged = out.grid_converged && b.converged;
  }
  return out;
}

/// Memo of market outcomes per joint placement, one per stage (demand
/// depends on the stage agent pool, so callers reset it between stages).
class EquilibriumCache {
 public:
  const MarketOutcome& get_or_compute(const Scenario& scenario,
                                      const std::vector<EvAgent>& agents,
                                      const JointPlacement& joint,
                                      RoutingTable& routing) {
    std::uint64_t key = placement_key(joint);
    auto it = cache_.find(key);
    if (it != cache_.end()) return it->second;
    MarketOutcome outcome = evaluate_market(scenario, agents, joint, routing);
    return cache_.emplace(key, std::move(outcome)).first->second;
  }

  void clear() { cache_.clear(); }
  std::size_t size() const { return cache_.size(); }

 private:
  std::unordered_map<std::uint64_t, MarketOutcome> cache_;
};

}  // namespace evplace
