#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "evplace/grid.hpp"
#include "evplace/road_network.hpp"

namespace evplace {

// Per-nest taste weights. sigma is the within-nest independence measure,
// valid on (0, 1]; sigma = 1 collapses the nest to plain logit.
struct NestCoefficients {
  double mu = 0.0;      // deviating distance, per km
  double eta = 0.0;     // destination indicator
  double gamma = 0.0;   // restaurant
  double lambda = 0.0;  // shop center
  double delta = 0.0;   // supermarket
  double sigma = 1.0;
  bool operator==(const NestCoefficients&) const = default;
};

struct ChoiceCoefficients {
  double alpha = 1.0;  // weight of 1/t_k, must be > 0
  double beta = -1.0;  // weight of p_k/i_n, must be < 0
  std::vector<NestCoefficients> nests;  // one per provider, provider order
  bool operator==(const ChoiceCoefficients&) const = default;
};

/// Sentinel plug count meaning "no capacity limit".
inline constexpr int kUnlimitedPlugs = std::numeric_limits<int>::max();

struct ProviderConfig {
  int level = 1;                 // charging level, 1..3
  double charging_time_h = 1.0;  // mean full-charge time t_k
  double power_kw = 1.0;         // nominal delivery rate
  int plugs_per_station = 1;     // servers per site; kUnlimitedPlugs = no cap
  bool operator==(const ProviderConfig&) const = default;
};

struct EvAgent {
  int id = 0;
  int home = 0;         // road node
  int destination = 0;  // road node
  double income = 1.0;  // currency per year
  double demand_kwh = 0.0;
  bool operator==(const EvAgent&) const = default;
};

struct PlannerConfig {
  double w = 0.0;                  // disturbance penalty weight
  double delay_threshold = 1.0;    // max acceptable delay probability
  double coverage_threshold = 0.0; // required mean route coverage
  double d_th_km = 1.0;            // "near" radius for coverage/destination
  bool outside_good_enabled = true;
  bool coverage_upper_bound = false;  // treat the coverage constraint as <=
  double theta_lower = 0.0;        // placement-cost draw bounds
  double theta_upper = 0.0;
  int monte_carlo_runs = 1;
  double horizon_h = 24.0;         // energy-to-power averaging horizon
  double price_floor = 1e-4;       // clamp for price iterates, currency/kWh
  bool operator==(const PlannerConfig&) const = default;
};

struct StageConfig {
  int ev_count = 0;
  std::string label;
  bool operator==(const StageConfig&) const = default;
};

struct DestinationCategory {
  std::string name;
  double weight = 0.0;
  std::vector<int> nodes;  // road nodes in this category
  bool operator==(const DestinationCategory&) const = default;
};

struct TravelConfig {
  double speed_kmh = 30.0;
  double range_km = 100.0;  // electric range; sets the needs-charge rate
  std::vector<double> hourly_weights =
      std::vector<double>(24, 1.0);  // diurnal departure distribution
  std::vector<DestinationCategory> destination_categories;
  double income_jitter = 0.1;  // relative jitter when replicating agents
  bool operator==(const TravelConfig&) const = default;
};

struct Scenario {
  RoadNetwork road_network;
  std::vector<EvAgent> agents;
  std::vector<Site> sites;
  std::vector<ProviderConfig> providers;  // exactly 3
  ChoiceCoefficients choice;
  GridCase grid;
  PlannerConfig planner;
  TravelConfig travel;
  std::vector<StageConfig> stages;
  double q_lower_kwh = 0.0;  // agent demand bounds
  double q_upper_kwh = 0.0;
  std::uint64_t rng_seed = 0;
  bool operator==(const Scenario&) const = default;

  std::size_t provider_count() const { return providers.size(); }
  std::size_t site_count() const { return sites.size(); }
};

}  // namespace evplace
