#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <queue>
#include <thread>
#include <vector>

#include "evplace/choice.hpp"
#include "evplace/market.hpp"
#include "evplace/rng.hpp"
#include "evplace/road_network.hpp"
#include "evplace/scenario.hpp"

namespace evplace {

struct TripSample {
  int agent_id = 0;
  double departure_minute = 0.0;  // minutes of day
  int origin = 0;
  int destination = 0;
  Route route;
  bool needs_charge = false;
  bool operator==(const TripSample&) const = default;
};

/// Replicate the scenario's agents up to `size`, reusing them in order
/// and jittering incomes on the copies. Pool ids equal pool indices.
inline std::vector<EvAgent> build_agent_pool(const Scenario& scenario,
                                             std::size_t size, Rng& rng) {
  if (scenario.agents.empty())
    throw ValidationError({"cannot build an agent pool without agents"});
  std::vector<EvAgent> pool;
  pool.reserve(size);
  for (std::size_t i = 0; i < size; ++i) {
    EvAgent agent = scenario.agents[i % scenario.agents.size()];
    agent.id = static_cast<int>(i);
    if (i >= scenario.agents.size()) {
      double jitter = scenario.travel.income_jitter * rng.uniform(-1.0, 1.0);
      agent.income = std::max(1e-9, agent.income * (1.0 + jitter));
    }
    pool.push_back(agent);
  }
  return pool;
}

/// One trip per agent for a simulated day. Destination comes from the
/// category weights when configured, otherwise the agent's own; the
/// departure hour follows the diurnal weights; a trip needs charging
/// with probability route length / electric range (capped at 1).
inline std::vector<TripSample> sample_trips(const Scenario& scenario,
                                            const std::vector<EvAgent>& agents,
                                            Rng& rng, RoutingTable& routing) {
  const TravelConfig& tc = scenario.travel;
  std::vector<double> category_weights;
  for (const auto& cat : tc.destination_categories)
    category_weights.push_back(cat.weight);

  std::vector<TripSample> trips;
  trips.reserve(agents.size());
  for (const EvAgent& agent : agents) {
    TripSample trip;
    trip.agent_id = agent.id;
    trip.origin = agent.home;
    if (category_weights.empty()) {
      trip.destination = agent.destination;
    } else {
      const auto& cat =
          tc.destination_categories[rng.pick_weighted(category_weights)];
      trip.destination = cat.nodes.at(rng.uniform_index(cat.nodes.size()));
    }
    std::size_t hour = rng.pick_weighted(tc.hourly_weights);
    trip.departure_minute = 60.0 * hour + rng.uniform(0.0, 60.0);
    trip.route = routing.route(trip.origin, trip.destination);
    double p_charge = std::min(1.0, trip.route.length_km / tc.range_km);
    trip.needs_charge = rng.bernoulli(p_charge);
    trips.push_back(trip);
  }
  return trips;
}

struct ServiceOutcome {
  std::size_t trip_index = 0;
  int agent_id = 0;
  std::size_t site = 0;       // chosen site index
  std::size_t provider = 0;   // nest of the chosen site
  double arrival_minute = 0.0;
  bool delayed = false;
  bool operator==(const ServiceOutcome&) const = default;
};

/// Queueing pass over one day of trips. Each charging trip samples a
/// station from the agent's choice probabilities (outside good = skip),
/// drives there from the trip origin, and takes a plug; an attempt is
/// delayed when every plug is busy at arrival. Arrivals are processed
/// in (arrival time, agent id) order.
inline std::vector<ServiceOutcome> simulate_service(
    const std::vector<TripSample>& trips, const JointPlacement& placement,
    const Scenario& scenario, const std::vector<EvAgent>& agents,
    const std::vector<double>& prices, Rng& rng, RoutingTable& routing) {
  DemandContext ctx = make_demand_context(scenario, agents, placement, routing);
  UtilityTable table = table_for(ctx, prices);
  ChoiceProbabilities probs = choice_probabilities(table, scenario.choice);

  std::vector<ServiceOutcome> attempts;
  for (std::size_t t = 0; t < trips.size(); ++t) {
    const TripSample& trip = trips[t];
    if (!trip.needs_charge) continue;
    const EvAgent& agent = agents.at(trip.agent_id);

    // Flatten this agent's site probabilities; the remainder is the
    // outside good (or renormalized away when it is disabled).
    std::vector<double> weights;
    std::vector<std::pair<std::size_t, std::size_t>> choices;  // (nest, i)
    for (std::size_t k = 0; k < ctx.built.size(); ++k)
      for (std::size_t i = 0; i < ctx.built[k].size(); ++i) {
        weights.push_back(probs.phi[agent.id][k][i]);
        choices.emplace_back(k, i);
      }
    if (choices.empty()) continue;
    double outside = table.outside_good ? probs.outside_share[agent.id] : 0.0;
    double u = rng.uniform();
    double total = outside;
    for (double w : weights) total += w;
    double x = u * total;
    if (x < outside) continue;  // charges at home
    x -= outside;
    std::size_t pick = weights.size() - 1;
    for (std::size_t i = 0; i < weights.size(); ++i) {
      if (x < weights[i]) {
        pick = i;
        break;
      }
      x -= weights[i];
    }

    ServiceOutcome out;
    out.trip_index = t;
    out.agent_id = agent.id;
    out.provider = choices[pick].first;
    out.site = ctx.built[choices[pick].first][choices[pick].second];
    const Site& site = scenario.sites[out.site];
    double dist = routing.distance(trip.origin, site.road_node);
    out.arrival_minute =
        trip.departure_minute + 60.0 * dist / scenario.travel.speed_kmh;
    attempts.push_back(out);
  }

  std::sort(attempts.begin(), attempts.end(),
            [](const ServiceOutcome& a, const ServiceOutcome& b) {
              if (a.arrival_minute != b.arrival_minute)
                return a.arrival_minute < b.arrival_minute;
              return a.agent_id < b.agent_id;
            });

  // Per-site plug occupancy as a min-heap of release times.
  std::vector<std::priority_queue<double, std::vector<double>,
                                  std::greater<double>>>
      busy(scenario.sites.size());
  for (ServiceOutcome& out : attempts) {
    int plugs = scenario.providers[out.provider].plugs_per_station;
    if (plugs == kUnlimitedPlugs) continue;  // never delayed, no queue
    auto& heap = busy[out.site];
    while (!heap.empty() && heap.top() <= out.arrival_minute) heap.pop();
    const EvAgent& agent = agents.at(out.agent_id);
    double duration =
        60.0 * agent.demand_kwh / scenario.providers[out.provider].power_kw;
    if (static_cast<int>(heap.size()) < plugs) {
      heap.push(out.arrival_minute + duration);
    } else {
      out.delayed = true;
      double start = heap.top();
      heap.pop();
      heap.push(start + duration);
    }
  }
  return attempts;
}

struct QosEstimate {
  std::vector<double> delay_probability;  // per provider
  std::vector<double> coverage;           // per provider
  std::vector<double> delay_se;
  std::vector<double> coverage_se;
  int runs = 0;
  bool operator==(const QosEstimate&) const = default;
};

namespace detail {

struct RunQos {
  std::vector<double> delay;
  std::vector<double> coverage;
};

inline RunQos run_qos_once(const Scenario& scenario,
                           const std::vector<EvAgent>& agents,
                           const JointPlacement& placement,
                           const std::vector<double>& prices,
                           std::uint64_t master_seed, std::uint64_t stage,
                           std::uint64_t run, RoutingTable& routing) {
  const std::size_t nk = scenario.providers.size();
  Rng trip_rng(sub_seed(master_seed, "trips", stage, run));
  std::vector<TripSample> trips =
      sample_trips(scenario, agents, trip_rng, routing);
  Rng service_rng(sub_seed(master_seed, "service", stage, run));
  std::vector<ServiceOutcome> outcomes = simulate_service(
      trips, placement, scenario, agents, prices, service_rng, routing);

  // Delay: per-agent delayed/attempt ratio, averaged over every agent
  // (agents with no attempt at provider k contribute 0).
  std::vector<std::vector<int>> attempts(nk,
                                         std::vector<int>(agents.size(), 0));
  std::vector<std::vector<int>> delays(nk, std::vector<int>(agents.size(), 0));
  for (const ServiceOutcome& out : outcomes) {
    ++attempts[out.provider][out.agent_id];
    if (out.delayed) ++delays[out.provider][out.agent_id];
  }
  std::vector<std::vector<std::size_t>> built =
      built_lists(scenario, placement);

  RunQos qos;
  qos.delay.assign(nk, 0.0);
  qos.coverage.assign(nk, 0.0);
  for (std::size_t k = 0; k < nk; ++k) {
    double sum = 0.0;
    for (std::size_t a = 0; a < agents.size(); ++a)
      if (attempts[k][a] > 0)
        sum += static_cast<double>(delays[k][a]) / attempts[k][a];
    qos.delay[k] = agents.empty() ? 0.0 : sum / agents.size();

    std::vector<Site> built_sites;
    for (std::size_t j : built[k]) built_sites.push_back(scenario.sites[j]);
    double cov = 0.0;
    for (const TripSample& trip : trips)
      cov += routing.coverage_count(trip.route, built_sites,
                                    scenario.planner.d_th_km);
    qos.coverage[k] = trips.empty() ? 0.0 : cov / trips.size();
  }
  return qos;
}

}  // namespace detail

/// Monte-Carlo QoS estimate over independent runs. Each run draws its
/// own sub-seeds from (master seed, stage, run), so the estimate is a
/// pure function of those inputs regardless of thread count.
inline QosEstimate estimate_qos(const Scenario& scenario,
                                const std::vector<EvAgent>& agents,
                                const JointPlacement& placement,
                                const std::vector<double>& prices, int runs,
                                std::uint64_t master_seed, std::uint64_t stage,
                                RoutingTable& routing, int threads = 1) {
  if (runs < 1) throw ValidationError({"monte_carlo_runs must be >= 1"});
  const std::size_t nk = scenario.providers.size();
  std::vector<detail::RunQos> per_run(runs);

  if (threads <= 1) {
    for (int r = 0; r < runs; ++r)
      per_run[r] = detail::run_qos_once(scenario, agents, placement, prices,
                                        master_seed, stage, r, routing);
  } else {
    // Warm every routing row the runs will touch, then share the table
    // read-only across workers.
    routing.warm();
    int n_workers = std::min(threads, runs);
    std::vector<std::thread> workers;
    for (int w = 0; w < n_workers; ++w) {
      workers.emplace_back([&, w]() {
        for (int r = w; r < runs; r += n_workers)
          per_run[r] = detail::run_qos_once(scenario, agents, placement,
                                            prices, master_seed, stage, r,
                                            routing);
      });
    }
    for (auto& t : workers) t.join();
  }

  QosEstimate est;
  est.runs = runs;
  est.delay_probability.assign(nk, 0.0);
  est.coverage.assign(nk, 0.0);
  est.delay_se.assign(nk, 0.0);
  est.coverage_se.assign(nk, 0.0);
  for (std::size_t k = 0; k < nk; ++k) {
    double dsum = 0.0, csum = 0.0;
    for (int r = 0; r < runs; ++r) {
      dsum += per_run[r].delay[k];
      csum += per_run[r].coverage[k];
    }
    est.delay_probability[k] = dsum / runs;
    est.coverage[k] = csum / runs;
    if (runs > 1) {
      double dvar = 0.0, cvar = 0.0;
      for (int r = 0; r < runs; ++r) {
        double dd = per_run[r].delay[k] - est.delay_probability[k];
        double cd = per_run[r].coverage[k] - est.coverage[k];
        dvar += dd * dd;
        cvar += cd * cd;
      }
      dvar /= (runs - 1);
      cvar /= (runs - 1);
      est.delay_se[k] = std::sqrt(dvar / runs);
      est.coverage_se[k] = std::sqrt(cvar / runs);
    }
  }
  return est;
}

struct Heatmap {
  std::size_t cells_x = 0;
  std::size_t cells_y = 0;
  double min_x = 0.0, min_y = 0.0, max_x = 0.0, max_y = 0.0;
  std::vector<std::int64_t> counts;  // row-major, y outer
  std::int64_t& at(std::size_t ix, std::size_t iy) {
    return counts[iy * cells_x + ix];
  }
  std::int64_t at(std::size_t ix, std::size_t iy) const {
    return counts[iy * cells_x + ix];
  }
  bool operator==(const Heatmap&) const = default;
};

/// Count route-node visits per spatial cell over all trips.
inline Heatmap traffic_heatmap(const RoadNetwork& net,
                               const std::vector<TripSample>& trips,
                               std::size_t resolution) {
  if (resolution < 1) throw ValidationError({"heatmap resolution must be >= 1"});
  Heatmap map;
  map.cells_x = resolution;
  map.cells_y = resolution;
  map.counts.assign(resolution * resolution, 0);
  if (net.nodes().empty()) return map;

  map.min_x = map.max_x = net.nodes().front().x_km;
  map.min_y = map.max_y = net.nodes().front().y_km;
  for (const RoadNode& node : net.nodes()) {
    map.min_x = std::min(map.min_x, node.x_km);
    map.max_x = std::max(map.max_x, node.x_km);
    map.min_y = std::min(map.min_y, node.y_km);
    map.max_y = std::max(map.max_y, node.y_km);
  }
  double span_x = std::max(map.max_x - map.min_x, 1e-12);
  double span_y = std::max(map.max_y - map.min_y, 1e-12);

  for (const TripSample& trip : trips)
    for (int node_id : trip.route.node_sequence) {
      const RoadNode& node = net.nodes()[net.node_index(node_id)];
      auto cell = [&](double v, double lo, double span) {
        auto c = static_cast<std::ptrdiff_t>((v - lo) / span * resolution);
        return static_cast<std::size_t>(
            std::clamp<std::ptrdiff_t>(c, 0, resolution - 1));
      };
      ++map.at(cell(node.x_km, map.min_x, span_x),
               cell(node.y_km, map.min_y, span_y));
    }
  return map;
}

}  // namespace evplace

