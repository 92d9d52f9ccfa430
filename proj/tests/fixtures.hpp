#pragma once

// Shared test fixtures: small road graphs, two grid cases, an in-memory
// scenario, and random choice-model instances.

#include <string>
#include <utility>
#include <vector>

#include "evplace/choice.hpp"
#include "evplace/grid.hpp"
#include "evplace/rng.hpp"
#include "evplace/road_network.hpp"
#include "evplace/scenario.hpp"

namespace fixtures {

// Path graph 1 - 2 - ... - n with unit edge lengths.
inline evplace::RoadNetwork line_network(int n, double edge_km = 1.0) {
  std::vector<evplace::RoadNode> nodes;
  std::vector<evplace::RoadEdge> edges;
  for (int i = 1; i <= n; ++i)
    nodes.push_back({i, edge_km * (i - 1), 0.0});
  for (int i = 1; i < n; ++i) edges.push_back({i, i + 1, edge_km});
  return evplace::RoadNetwork(std::move(nodes), std::move(edges));
}

// nx-by-ny lattice, ids row-major starting at 1, axis-aligned edges.
inline evplace::RoadNetwork grid_network(int nx, int ny,
                                         double spacing_km = 1.0) {
  std::vector<evplace::RoadNode> nodes;
  std::vector<evplace::RoadEdge> edges;
  auto id = [nx](int r, int c) { return r * nx + c + 1; };
  for (int r = 0; r < ny; ++r)
    for (int c = 0; c < nx; ++c)
      nodes.push_back({id(r, c), spacing_km * c, spacing_km * r});
  for (int r = 0; r < ny; ++r)
    for (int c = 0; c < nx; ++c) {
      if (c + 1 < nx) edges.push_back({id(r, c), id(r, c + 1), spacing_km});
      if (r + 1 < ny) edges.push_back({id(r, c), id(r + 1, c), spacing_km});
    }
  return evplace::RoadNetwork(std::move(nodes), std::move(edges));
}

// Connected random graph: a random spanning tree plus extra chords, with
// lengths in [0.5, 3.0). Node ids 1..n.
inline evplace::RoadNetwork random_network(int n, int extra_edges,
                                           std::uint64_t seed) {
  evplace::Rng rng(seed);
  std::vector<evplace::RoadNode> nodes;
  for (int i = 1; i <= n; ++i)
    nodes.push_back({i, rng.uniform(0.0, 10.0), rng.uniform(0.0, 10.0)});
  std::vector<evplace::RoadEdge> edges;
  for (int i = 2; i <= n; ++i) {
    int parent = 1 + static_cast<int>(rng.uniform_index(i - 1));
    edges.push_back({parent, i, rng.uniform(0.5, 3.0)});
  }
  for (int e = 0; e < extra_edges; ++e) {
    int u = 1 + static_cast<int>(rng.uniform_index(n));
    int v = 1 + static_cast<int>(rng.uniform_index(n));
    if (u == v) continue;
    edges.push_back({u, v, rng.uniform(0.5, 3.0)});
  }
  return evplace::RoadNetwork(std::move(nodes), std::move(edges));
}

// Slack feeding one PQ load over a single line.
inline evplace::GridCase two_bus_case() {
  evplace::GridCase grid;
  grid.base_mva = 100.0;
  grid.buses = {{1, evplace::BusType::Slack, 0.0, 0.0, 0.10},
                {2, evplace::BusType::PQ, 0.5, 0.2, 0.12}};
  grid.branches = {{1, 2, 0.01, 0.1, 0.0}};
  grid.generators = {{1, 0.0, 0.0, 1.0}};
  return grid;
}

// Nine buses: three generator buses (slack, PV, and a PQ machine) feeding
// a six-bus ring through radial ties.
//
//        1            2            3
//        |            |            |
//        4 -- 5 -- 6 -- 7 -- 8 -- 9 -- (back to 4)
//
// Loads sit on buses 5, 7, and 9.
inline evplace::GridCase nine_bus_case() {
  using evplace::BusType;
  evplace::GridCase grid;
  grid.base_mva = 100.0;
  grid.buses = {{1, BusType::Slack, 0.0, 0.0, 0.090},
                {2, BusType::PV, 0.0, 0.0, 0.085},
                {3, BusType::PQ, 0.0, 0.0, 0.095},
                {4, BusType::PQ, 0.0, 0.0, 0.100},
                {5, BusType::PQ, 0.40, 0.15, 0.110},
                {6, BusType::PQ, 0.0, 0.0, 0.105},
                {7, BusType::PQ, 0.35, 0.10, 0.120},
                {8, BusType::PQ, 0.0, 0.0, 0.102},
                {9, BusType::PQ, 0.30, 0.10, 0.118}};
  grid.branches = {{1, 4, 0.002, 0.080, 0.000},
                   {2, 8, 0.003, 0.090, 0.000},
                   {3, 6, 0.004, 0.100, 0.000},
                   {4, 5, 0.010, 0.085, 0.088},
                   {5, 6, 0.017, 0.092, 0.079},
                   {6, 7, 0.008, 0.072, 0.074},
                   {7, 8, 0.012, 0.100, 0.104},
                   {8, 9, 0.008, 0.072, 0.074},
                   {9, 4, 0.032, 0.161, 0.153}};
  grid.generators = {{1, 0.0, 0.0, 0.40},
                     {2, 0.40, 0.0, 0.35},
                     {3, 0.25, 0.05, 0.25}};
  return grid;
}

// Complete in-memory scenario: 3x2 road lattice, six candidate sites
// (two per provider), four seed agents, the two-bus grid. Small enough
// that planner enumerations stay instant.
inline evplace::Scenario toy_scenario() {
  evplace::Scenario sc;
  sc.road_network = grid_network(3, 2, 2.0);

  sc.providers = {{1, 16.0, 1.44, 2}, {2, 5.0, 7.68, 2}, {3, 0.4, 240.0, 2}};

  sc.choice.alpha = 1.0;
  sc.choice.beta = -2.0e5;
  sc.choice.nests = {{-0.05, 0.3, 0.2, 0.15, 0.1, 0.5},
                     {-0.05, 0.3, 0.2, 0.15, 0.1, 0.75},
                     {-0.05, 0.3, 0.2, 0.15, 0.1, 1.0}};

  // Two sites per provider, one on each lattice row.
  sc.sites = {{101, 1, 2, 1, 0, 0, 0}, {102, 4, 2, 0, 1, 0, 0},
              {103, 2, 2, 0, 0, 1, 1}, {104, 5, 2, 1, 0, 0, 1},
              {105, 3, 2, 0, 1, 0, 2}, {106, 6, 2, 0, 0, 1, 2}};

  sc.agents = {{0, 1, 6, 4.0e4, 12.0},
               {1, 3, 4, 5.0e4, 16.0},
               {2, 5, 2, 5.5e4, 10.0},
               {3, 6, 1, 6.0e4, 20.0}};

  sc.grid = two_bus_case();

  sc.planner.w = 0.1;
  sc.planner.delay_threshold = 1.0;
  sc.planner.coverage_threshold = 0.0;
  sc.planner.d_th_km = 2.0;
  sc.planner.theta_lower = 5.0;
  sc.planner.theta_upper = 40.0;
  sc.planner.monte_carlo_runs = 2;

  sc.travel.speed_kmh = 30.0;
  sc.travel.range_km = 15.0;
  sc.travel.income_jitter = 0.1;

  sc.stages = {{4, "s1"}, {8, "s2"}};
  sc.q_lower_kwh = 8.0;
  sc.q_upper_kwh = 24.0;
  sc.rng_seed = 1234;
  return sc;
}

// Fully symmetric market: one road node, one site per provider on the
// same bus, identical providers and nest coefficients. Any asymmetry in
// the solved prices can only come from the solver itself.
inline evplace::Scenario symmetric_scenario() {
  evplace::Scenario sc;
  sc.road_network = evplace::RoadNetwork({{1, 0.0, 0.0}}, {});
  sc.providers = {{1, 2.0, 22.0, 2}, {2, 2.0, 22.0, 2}, {3, 2.0, 22.0, 2}};
  sc.choice.alpha = 1.0;
  sc.choice.beta = -2.0e5;
  sc.choice.nests = {{-0.05, 0.3, 0.2, 0.15, 0.1, 0.8},
                     {-0.05, 0.3, 0.2, 0.15, 0.1, 0.8},
                     {-0.05, 0.3, 0.2, 0.15, 0.1, 0.8}};
  sc.sites = {{201, 1, 2, 1, 0, 0, 0}, {202, 1, 2, 1, 0, 0, 1},
              {203, 1, 2, 1, 0, 0, 2}};
  sc.agents = {{0, 1, 1, 5.0e4, 15.0}, {1, 1, 1, 5.0e4, 15.0}};
  sc.grid = two_bus_case();
  sc.planner.d_th_km = 1.0;
  sc.stages = {{2, "only"}};
  sc.q_lower_kwh = 10.0;
  sc.q_upper_kwh = 20.0;
  sc.rng_seed = 7;
  return sc;
}

// Hand-checkable nested-logit instance: nest A holds utilities {1.0, 0.0}
// with sigma 0.5, nest B holds {0.5} with sigma 1.0, no outside good.
inline std::pair<evplace::UtilityTable, evplace::ChoiceCoefficients>
two_nest_fixture() {
  evplace::UtilityTable table;
  table.site_count = 3;
  table.outside_good = false;
  table.nest_sites = {{0, 1}, {2}};
  table.utilities = {{{1.0, 0.0}, {0.5}}};
  table.incomes = {5.0e4};
  table.demands = {10.0};

  evplace::ChoiceCoefficients coeffs;
  coeffs.beta = -2.0e5;
  coeffs.nests.resize(2);
  coeffs.nests[0].sigma = 0.5;
  coeffs.nests[1].sigma = 1.0;
  return {table, coeffs};
}

// Random single-agent choice instance: up to 3 nests sharing up to 5
// sites, sigmas in (0.3, 1], utilities in [-2, 2], random outside good.
inline std::pair<evplace::UtilityTable, evplace::ChoiceCoefficients>
random_choice_fixture(evplace::Rng& rng, bool force_unit_sigma = false) {
  std::size_t nk = 1 + rng.uniform_index(3);
  std::size_t sites = 1 + rng.uniform_index(5);

  evplace::UtilityTable table;
  table.site_count = sites;
  table.outside_good = rng.bernoulli(0.5);
  table.nest_sites.resize(nk);
  table.utilities.resize(1);
  table.utilities[0].resize(nk);
  for (std::size_t j = 0; j < sites; ++j) {
    std::size_t k = rng.uniform_index(nk);
    table.nest_sites[k].push_back(j);
    table.utilities[0][k].push_back(rng.uniform(-2.0, 2.0));
  }
  table.incomes = {5.0e4};
  table.demands = {10.0};

  evplace::ChoiceCoefficients coeffs;
  coeffs.beta = -2.0e5;
  coeffs.nests.resize(nk);
  for (auto& nest : coeffs.nests) {
    if (force_unit_sigma || rng.bernoulli(0.25))
      nest.sigma = 1.0;
    else
      nest.sigma = rng.uniform(0.3, 1.0);
  }
  return {table, coeffs};
}

}  // namespace fixtures
