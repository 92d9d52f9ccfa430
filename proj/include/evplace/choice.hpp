#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

#include "evplace/errors.hpp"
#include "evplace/road_network.hpp"
#include "evplace/scenario.hpp"

namespace evplace {

/// Nest-level observable utility shared by every station of provider k.
inline double nest_utility(const ChoiceCoefficients& coeffs,
                           const ProviderConfig& provider, double price,
                           double income) {
  return coeffs.alpha / provider.charging_time_h +
         coeffs.beta * price / income;
}

/// Station-level observable utility for one agent and one site.
inline double station_utility(const ChoiceCoefficients& coeffs,
                              const Site& site, const EvAgent& agent,
                              const RoadNetwork& net, double d_th_km) {
  const NestCoefficients& nc = coeffs.nests.at(site.level_owner);
  double d = deviating_distance(net, agent.home, agent.destination, site);
  int z = destination_indicator(net, agent.destination, site, d_th_km);
  return nc.mu * d + nc.eta * z + nc.gamma * site.restaurant +
         nc.lambda * site.shop_center + nc.delta * site.supermarket;
}

/// Observable utilities of every built station, per agent, grouped by
/// nest (= provider), plus the per-agent data needed downstream.
struct UtilityTable {
  std::size_t site_count = 0;  // total sites in the scenario
  bool outside_good = true;
  std::vector<std::vector<std::size_t>> nest_sites;  // [nest] -> site index
  std::vector<std::vector<std::vector<double>>> utilities;  // [agent][nest][i]
  std::vector<double> incomes;  // per agent
  std::vector<double> demands;  // per agent, kWh
  bool operator==(const UtilityTable&) const = default;
};

/// Assemble the utility table for the given built sites and prices.
/// `built` lists site indices per provider; routing distances come from
/// the shared table so repeated builds stay cheap.
inline UtilityTable build_utility_table(
    const Scenario& scenario, const std::vector<EvAgent>& agents,
    const std::vector<std::vector<std::size_t>>& built,
    const std::vector<double>& prices, RoutingTable& routing) {
  const std::size_t nk = scenario.providers.size();
  if (built.size() != nk || prices.size() != nk)
    throw ValidationError({"built/prices do not match provider count"});

  UtilityTable table;
  table.site_count = scenario.sites.size();
  table.outside_good = scenario.planner.outside_good_enabled;
  table.nest_sites = built;
  table.utilities.resize(agents.size());
  table.incomes.reserve(agents.size());
  table.demands.reserve(agents.size());

  // Station terms do not depend on the agent's income or the price, so
  // compute V once per (agent, site) and reuse across price changes via
  // the caller's own caching if needed; here we just evaluate directly.
  for (std::size_t a = 0; a < agents.size(); ++a) {
    const EvAgent& agent = agents[a];
    table.incomes.push_back(agent.income);
    table.demands.push_back(agent.demand_kwh);
    auto& rows = table.utilities[a];
    rows.resize(nk);
    for (std::size_t k = 0; k < nk; ++k) {
      double w = nest_utility(scenario.choice, scenario.providers[k],
                              prices[k], agent.income);
      rows[k].reserve(built[k].size());
      for (std::size_t j : built[k]) {
        const Site& site = scenario.sites.at(j);
        const NestCoefficients& nc = scenario.choice.nests.at(k);
        double d = routing.deviating_distance(agent.home, agent.destination,
                                              site);
        int z = routing.destination_indicator(agent.destination, site,
                                              scenario.planner.d_th_km);
        double v = nc.mu * d + nc.eta * z + nc.gamma * site.restaurant +
                   nc.lambda * site.shop_center + nc.delta * site.supermarket;
        rows[k].push_back(w + v);
      }
    }
  }
  return table;
}

/// Per-agent choice probabilities plus the aggregates reused by the
/// price gradient (nest shares and the outside share).
struct ChoiceProbabilities {
  std::vector<std::vector<std::vector<double>>> phi;  // [agent][nest][i]
  std::vector<std::vector<double>> nest_share;        // [agent][nest]
  std::vector<double> outside_share;                  // [agent]
  bool operator==(const ChoiceProbabilities&) const = default;
};

namespace detail {

inline double log_sum_exp(const std::vector<double>& xs) {
  double m = -std::numeric_limits<double>::infinity();
  for (double x : xs) m = std::max(m, x);
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double x : xs) s += std::exp(x - m);
  return m + std::log(s);
}

}  // namespace detail

/// Nested-logit probabilities, evaluated in the log domain throughout:
///   log S_k   = LSE_i(U_{i,k} / sigma_k)
///   log D     = LSE_k(sigma_k log S_k), plus a 0 term for the outside good
///   log phi   = U/sigma_k + (sigma_k - 1) log S_k - log D
inline ChoiceProbabilities choice_probabilities(
    const UtilityTable& table, const ChoiceCoefficients& coeffs) {
  const std::size_t nk = coeffs.nests.size();
  ChoiceProbabilities out;
  out.phi.resize(table.utilities.size());
  out.nest_share.resize(table.utilities.size());
  out.outside_share.resize(table.utilities.size());

  for (std::size_t a = 0; a < table.utilities.size(); ++a) {
    const auto& rows = table.utilities[a];
    std::vector<double> log_s(nk, -std::numeric_limits<double>::infinity());
    std::vector<double> denom_terms;
    for (std::size_t k = 0; k < nk; ++k) {
      if (rows[k].empty()) continue;
      double sigma = coeffs.nests[k].sigma;
      std::vector<double> scaled;
      scaled.reserve(rows[k].size());
      for (double u : rows[k]) scaled.push_back(u / sigma);
      log_s[k] = detail::log_sum_exp(scaled);
      denom_terms.push_back(sigma * log_s[k]);
    }
    if (table.outside_good) denom_terms.push_back(0.0);
    if (denom_terms.empty())
      throw EmptyChoiceSetError("agent has no built station and no outside good");
    double log_d = detail::log_sum_exp(denom_terms);

    out.phi[a].resize(nk);
    out.nest_share[a].assign(nk, 0.0);
    for (std::size_t k = 0; k < nk; ++k) {
      out.phi[a][k].resize(rows[k].size());
      if (rows[k].empty()) continue;
      double sigma = coeffs.nests[k].sigma;
      out.nest_share[a][k] = std::exp(sigma * log_s[k] - log_d);
      for (std::size_t i = 0; i < rows[k].size(); ++i)
        out.phi[a][k][i] =
            std::exp(rows[k][i] / sigma + (sigma - 1.0) * log_s[k] - log_d);
    }
    out.outside_share[a] = table.outside_good ? std::exp(-log_d) : 0.0;
  }
  return out;
}

/// Analytic d phi_{j,k} / d p_k for provider k's own stations. Every
/// utility in nest k shifts by beta/i_n per unit price, so
///   d phi / d p_k = (beta / i_n) * phi * (1 - P_k)
/// with P_k the nest share. Rows align with table.nest_sites[k].
inline std::vector<std::vector<double>> choice_probability_price_gradient(
    const UtilityTable& table, const ChoiceCoefficients& coeffs,
    std::size_t provider_k) {
  ChoiceProbabilities probs = choice_probabilities(table, coeffs);
  std::vector<std::vector<double>> grad(table.utilities.size());
  for (std::size_t a = 0; a < table.utilities.size(); ++a) {
    double slope = coeffs.beta / table.incomes[a];
    double pk = probs.nest_share[a][provider_k];
    const auto& phis = probs.phi[a][provider_k];
    grad[a].resize(phis.size());
    for (std::size_t i = 0; i < phis.size(); ++i)
      grad[a][i] = slope * phis[i] * (1.0 - pk);
  }
  return grad;
}

/// Same derivative against another provider's price (cross effect):
///   d phi_{j,k} / d p_m = -(beta / i_n) * phi_{j,k} * P_m   (m != k)
inline std::vector<std::vector<double>> choice_probability_cross_gradient(
    const UtilityTable& table, const ChoiceCoefficients& coeffs,
    std::size_t provider_k, std::size_t price_of_m) {
  if (provider_k == price_of_m)
    return choice_probability_price_gradient(table, coeffs, provider_k);
  ChoiceProbabilities probs = choice_probabilities(table, coeffs);
  std::vector<std::vector<double>> grad(table.utilities.size());
  for (std::size_t a = 0; a < table.utilities.size(); ++a) {
    double slope = coeffs.beta / table.incomes[a];
    double pm = probs.nest_share[a][price_of_m];
    const auto& phis = probs.phi[a][provider_k];
    grad[a].resize(phis.size());
    for (std::size_t i = 0; i < phis.size(); ++i)
      grad[a][i] = -slope * phis[i] * pm;
  }
  return grad;
}

/// Aggregate predicted charging energy per site: psi_j = sum_n q_n phi^n_j.
/// The result spans every scenario site; unbuilt sites stay 0.
inline std::vector<double> charging_demand(const UtilityTable& table,
                                           const ChoiceProbabilities& probs) {
  std::vector<double> psi(table.site_count, 0.0);
  for (std::size_t a = 0; a < table.utilities.size(); ++a)
    for (std::size_t k = 0; k < table.nest_sites.size(); ++k)
      for (std::size_t i = 0; i < table.nest_sites[k].size(); ++i)
        psi[table.nest_sites[k][i]] += table.demands[a] * probs.phi[a][k][i];
  return psi;
}

}  // namespace evplace
