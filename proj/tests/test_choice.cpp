#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "evplace/choice.hpp"
#include "evplace/market.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

using namespace evplace;

namespace {

// Shift every utility in one nest by delta (price moves act this way).
UtilityTable shifted(const UtilityTable& table, std::size_t nest,
                     double delta) {
  UtilityTable out = table;
  for (auto& rows : out.utilities)
    for (double& u : rows[nest]) u += delta;
  return out;
}

double total_share(const ChoiceProbabilities& probs, std::size_t agent) {
  double s = probs.outside_share[agent];
  for (const auto& nest : probs.phi[agent])
    for (double v : nest) s += v;
  return s;
}

}  // namespace

TEST_CASE("two-nest fixture matches the closed form") {
  auto [table, coeffs] = fixtures::two_nest_fixture();
  ChoiceProbabilities probs = choice_probabilities(table, coeffs);

  double sa = std::exp(1.0 / 0.5) + std::exp(0.0);
  double sb = std::exp(0.5);
  double d = std::sqrt(sa) + sb;
  REQUIRE(probs.phi[0][0][0] ==
          Catch::Approx(std::exp(2.0) * std::pow(sa, -0.5) / d).epsilon(1e-12));
  REQUIRE(probs.phi[0][0][1] ==
          Catch::Approx(std::pow(sa, -0.5) / d).epsilon(1e-12));
  REQUIRE(probs.phi[0][1][0] == Catch::Approx(sb / d).epsilon(1e-12));
  REQUIRE(probs.nest_share[0][0] ==
          Catch::Approx(std::sqrt(sa) / d).epsilon(1e-12));
  REQUIRE(probs.outside_share[0] == 0.0);
  REQUIRE(total_share(probs, 0) == Catch::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("unit sigmas collapse to plain logit") {
  for (std::uint64_t seed = 1; seed <= 50; ++seed) {
    Rng rng(seed);
    auto [table, coeffs] = fixtures::random_choice_fixture(rng, true);
    ChoiceProbabilities probs = choice_probabilities(table, coeffs);

    double denom = table.outside_good ? 1.0 : 0.0;
    for (const auto& nest : table.utilities[0])
      for (double u : nest) denom += std::exp(u);
    for (std::size_t k = 0; k < table.nest_sites.size(); ++k)
      for (std::size_t i = 0; i < table.utilities[0][k].size(); ++i)
        REQUIRE(probs.phi[0][k][i] ==
                Catch::Approx(std::exp(table.utilities[0][k][i]) / denom)
                    .epsilon(1e-12));
    if (table.outside_good)
      REQUIRE(probs.outside_share[0] ==
              Catch::Approx(1.0 / denom).epsilon(1e-12));
  }
}

TEST_CASE("shares always sum to one") {
  for (std::uint64_t seed = 100; seed < 140; ++seed) {
    Rng rng(seed);
    auto [table, coeffs] = fixtures::random_choice_fixture(rng);
    ChoiceProbabilities probs = choice_probabilities(table, coeffs);
    REQUIRE(total_share(probs, 0) == Catch::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("without an outside good a common utility shift cancels") {
  Rng rng(999);
  auto [table, coeffs] = fixtures::random_choice_fixture(rng);
  table.outside_good = false;
  ChoiceProbabilities base = choice_probabilities(table, coeffs);

  UtilityTable moved = table;
  for (auto& rows : moved.utilities)
    for (auto& nest : rows)
      for (double& u : nest) u += 5.0;
  ChoiceProbabilities after = choice_probabilities(moved, coeffs);
  for (std::size_t k = 0; k < table.nest_sites.size(); ++k)
    for (std::size_t i = 0; i < base.phi[0][k].size(); ++i)
      REQUIRE(after.phi[0][k][i] ==
              Catch::Approx(base.phi[0][k][i]).epsilon(1e-12));
}

TEST_CASE("huge utilities stay finite in the log domain") {
  UtilityTable table;
  table.site_count = 2;
  table.outside_good = true;
  table.nest_sites = {{0, 1}};
  table.utilities = {{{700.0, 699.0}}};
  table.incomes = {5.0e4};
  table.demands = {10.0};
  ChoiceCoefficients coeffs;
  coeffs.nests.resize(1);
  coeffs.nests[0].sigma = 0.5;

  ChoiceProbabilities probs = choice_probabilities(table, coeffs);
  REQUIRE(std::isfinite(probs.phi[0][0][0]));
  REQUIRE(std::isfinite(probs.phi[0][0][1]));
  REQUIRE(total_share(probs, 0) == Catch::Approx(1.0).epsilon(1e-12));
  REQUIRE(probs.outside_share[0] < 1e-200);
}

TEST_CASE("empty choice set without an outside good throws") {
  UtilityTable table;
  table.site_count = 0;
  table.outside_good = false;
  table.nest_sites = {{}, {}};
  table.utilities = {{{}, {}}};
  table.incomes = {5.0e4};
  table.demands = {10.0};
  ChoiceCoefficients coeffs;
  coeffs.nests.resize(2);
  REQUIRE_THROWS_AS(choice_probabilities(table, coeffs), EmptyChoiceSetError);
}

TEST_CASE("simulated GEV frequencies reproduce the closed form") {
  auto [table, coeffs] = fixtures::two_nest_fixture();
  ChoiceProbabilities probs = choice_probabilities(table, coeffs);
  std::vector<double> sigmas{0.5, 1.0};
  auto freq = oracles::gev_frequencies(table.utilities[0], sigmas, false,
                                       400000, 2024);
  REQUIRE(freq.site_share[0][0] ==
          Catch::Approx(probs.phi[0][0][0]).margin(5e-3));
  REQUIRE(freq.site_share[0][1] ==
          Catch::Approx(probs.phi[0][0][1]).margin(5e-3));
  REQUIRE(freq.site_share[1][0] ==
          Catch::Approx(probs.phi[0][1][0]).margin(5e-3));
}

TEST_CASE("simulated GEV frequencies honour the outside good") {
  Rng rng(31);
  auto [table, coeffs] = fixtures::random_choice_fixture(rng);
  table.outside_good = true;
  ChoiceProbabilities probs = choice_probabilities(table, coeffs);

  std::vector<double> sigmas;
  for (const auto& nest : coeffs.nests) sigmas.push_back(nest.sigma);
  auto freq = oracles::gev_frequencies(table.utilities[0], sigmas, true,
                                       400000, 7);
  REQUIRE(freq.outside_share ==
          Catch::Approx(probs.outside_share[0]).margin(5e-3));
  for (std::size_t k = 0; k < table.nest_sites.size(); ++k)
    for (std::size_t i = 0; i < table.utilities[0][k].size(); ++i)
      REQUIRE(freq.site_share[k][i] ==
              Catch::Approx(probs.phi[0][k][i]).margin(5e-3));
}

TEST_CASE("own-price gradient matches central differences") {
  for (std::uint64_t seed = 300; seed < 330; ++seed) {
    Rng rng(seed);
    auto [table, coeffs] = fixtures::random_choice_fixture(rng);
    std::size_t nk = table.nest_sites.size();
    for (std::size_t k = 0; k < nk; ++k) {
      if (table.nest_sites[k].empty()) continue;
      auto grad = choice_probability_price_gradient(table, coeffs, k);

      double h = 1e-6;
      double du = coeffs.beta / table.incomes[0] * h;
      auto up = choice_probabilities(shifted(table, k, du), coeffs);
      auto down = choice_probabilities(shifted(table, k, -du), coeffs);
      // Margin absorbs the degenerate case (single nest, no outside
      // good) where the true derivative is 0 and the difference is
      // rounding noise.
      for (std::size_t i = 0; i < table.utilities[0][k].size(); ++i) {
        double fd = (up.phi[0][k][i] - down.phi[0][k][i]) / (2.0 * h);
        REQUIRE(grad[0][i] == Catch::Approx(fd).margin(1e-9).epsilon(1e-6));
      }
    }
  }
}

TEST_CASE("cross-price gradient matches central differences") {
  for (std::uint64_t seed = 500; seed < 520; ++seed) {
    Rng rng(seed);
    auto [table, coeffs] = fixtures::random_choice_fixture(rng);
    std::size_t nk = table.nest_sites.size();
    if (nk < 2) continue;
    for (std::size_t k = 0; k < nk; ++k) {
      for (std::size_t m = 0; m < nk; ++m) {
        if (m == k || table.nest_sites[k].empty()) continue;
        auto grad = choice_probability_cross_gradient(table, coeffs, k, m);

        double h = 1e-6;
        double du = coeffs.beta / table.incomes[0] * h;
        auto up = choice_probabilities(shifted(table, m, du), coeffs);
        auto down = choice_probabilities(shifted(table, m, -du), coeffs);
        for (std::size_t i = 0; i < table.utilities[0][k].size(); ++i) {
          double fd = (up.phi[0][k][i] - down.phi[0][k][i]) / (2.0 * h);
          REQUIRE(grad[0][i] ==
                  Catch::Approx(fd).margin(1e-10).epsilon(1e-6));
        }
      }
    }
  }
}

TEST_CASE("nest and station utilities follow their formulas") {
  Scenario sc = fixtures::toy_scenario();
  const ProviderConfig& p2 = sc.providers[2];
  REQUIRE(nest_utility(sc.choice, p2, 0.30, 5.0e4) ==
          Catch::Approx(1.0 / 0.4 + (-2.0e5) * 0.30 / 5.0e4).epsilon(1e-15));

  const Site& site = sc.sites[4];  // restaurant-less shop center, node 3
  EvAgent agent = sc.agents[0];    // home 1, destination 6
  double d = deviating_distance(sc.road_network, agent.home,
                                agent.destination, site);
  int z = destination_indicator(sc.road_network, agent.destination, site,
                                sc.planner.d_th_km);
  const NestCoefficients& nc = sc.choice.nests[2];
  REQUIRE(station_utility(sc.choice, site, agent, sc.road_network,
                          sc.planner.d_th_km) ==
          Catch::Approx(nc.mu * d + nc.eta * z + nc.lambda * 1.0)
              .epsilon(1e-15));
}

TEST_CASE("utility table assembles nest plus station terms") {
  Scenario sc = fixtures::toy_scenario();
  RoutingTable routing(sc.road_network);
  std::vector<std::vector<std::size_t>> built{{0, 1}, {2, 3}, {4, 5}};
  std::vector<double> prices{0.25, 0.30, 0.45};
  UtilityTable table =
      build_utility_table(sc, sc.agents, built, prices, routing);

  REQUIRE(table.site_count == 6);
  REQUIRE(table.utilities.size() == sc.agents.size());
  for (std::size_t a = 0; a < sc.agents.size(); ++a)
    for (std::size_t k = 0; k < 3; ++k)
      for (std::size_t i = 0; i < built[k].size(); ++i) {
        double expect =
            nest_utility(sc.choice, sc.providers[k], prices[k],
                         sc.agents[a].income) +
            station_utility(sc.choice, sc.sites[built[k][i]], sc.agents[a],
                            sc.road_network, sc.planner.d_th_km);
        REQUIRE(table.utilities[a][k][i] == Catch::Approx(expect).epsilon(1e-12));
      }
}

TEST_CASE("charging demand sums agent demand times probability") {
  Scenario sc = fixtures::toy_scenario();
  RoutingTable routing(sc.road_network);
  std::vector<std::vector<std::size_t>> built{{0}, {2, 3}, {5}};
  std::vector<double> prices{0.25, 0.30, 0.45};
  UtilityTable table =
      build_utility_table(sc, sc.agents, built, prices, routing);
  ChoiceProbabilities probs = choice_probabilities(table, sc.choice);
  std::vector<double> psi = charging_demand(table, probs);

  REQUIRE(psi.size() == 6);
  REQUIRE(psi[1] == 0.0);  // not built
  REQUIRE(psi[4] == 0.0);
  double direct = 0.0;
  for (std::size_t a = 0; a < sc.agents.size(); ++a)
    direct += sc.agents[a].demand_kwh * probs.phi[a][1][1];
  REQUIRE(psi[3] == Catch::Approx(direct).epsilon(1e-12));

  double mass = 0.0;
  for (double v : psi) mass += v;
  double budget = 0.0;
  for (const auto& agent : sc.agents) budget += agent.demand_kwh;
  REQUIRE(mass < budget);
}
