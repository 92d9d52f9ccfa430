#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>

#include "evplace/road_network.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

using namespace evplace;

TEST_CASE("line graph distances and routes") {
  RoadNetwork net = fixtures::line_network(3);
  REQUIRE(shortest_distances(net, 1)[net.node_index(3)] == 2.0);
  Route r = shortest_path(net, 1, 3);
  REQUIRE(r.node_sequence == std::vector<int>{1, 2, 3});
  REQUIRE(r.length_km == 2.0);
  Route self = shortest_path(net, 2, 2);
  REQUIRE(self.node_sequence == std::vector<int>{2});
  REQUIRE(self.length_km == 0.0);
}

TEST_CASE("dijkstra matches bellman-ford on random graphs") {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    RoadNetwork net = fixtures::random_network(12, 8, seed);
    for (int src : {1, 5, 12}) {
      auto dij = shortest_distances(net, src);
      auto bf = oracles::bellman_ford(net, src);
      for (std::size_t i = 0; i < dij.size(); ++i) REQUIRE(dij[i] == bf[i]);
    }
  }
}

TEST_CASE("shortest path beats every enumerated simple path") {
  RoadNetwork net = fixtures::random_network(8, 5, 77);
  for (int origin : {1, 3}) {
    for (int dest : {6, 8}) {
      auto paths = oracles::all_simple_paths(net, origin, dest);
      REQUIRE_FALSE(paths.empty());
      double best = kInfDistance;
      for (const auto& [seq, len] : paths) best = std::min(best, len);
      Route r = shortest_path(net, origin, dest);
      REQUIRE(r.length_km == Catch::Approx(best).margin(1e-12));
    }
  }
}

TEST_CASE("route length equals the distance row bit for bit") {
  RoadNetwork net = fixtures::random_network(15, 10, 5);
  for (int origin = 1; origin <= 15; ++origin)
    for (int dest = 1; dest <= 15; ++dest) {
      Route r = shortest_path(net, origin, dest);
      REQUIRE(r.length_km == shortest_distances(net, dest)[net.node_index(origin)]);
    }
}

TEST_CASE("equal-length routes resolve to the smallest node sequence") {
  // Diamond: 1-2-4 and 1-3-4 both have length 2.
  RoadNetwork net({{1, 0, 0}, {2, 1, 1}, {3, 1, -1}, {4, 2, 0}},
                  {{1, 2, 1.0}, {1, 3, 1.0}, {2, 4, 1.0}, {3, 4, 1.0}});
  Route r = shortest_path(net, 1, 4);
  REQUIRE(r.node_sequence == std::vector<int>{1, 2, 4});
}

TEST_CASE("missing path raises NoPathError") {
  RoadNetwork net({{1, 0, 0}, {2, 1, 0}, {3, 5, 0}, {4, 6, 0}},
                  {{1, 2, 1.0}, {3, 4, 1.0}});
  REQUIRE(shortest_distances(net, 1)[net.node_index(3)] == kInfDistance);
  REQUIRE_THROWS_AS(shortest_path(net, 1, 3), NoPathError);
}

TEST_CASE("deviating distance on the line graph") {
  RoadNetwork net = fixtures::line_network(3);
  Site site;
  site.road_node = 3;
  // Trip 1 -> 2 detouring via node 3: 2 + 1 - 1.
  REQUIRE(deviating_distance(net, 1, 2, site) == 2.0);
  // A site already on the route adds nothing.
  site.road_node = 2;
  REQUIRE(deviating_distance(net, 1, 3, site) == 0.0);
}

TEST_CASE("deviating distance is never negative") {
  RoadNetwork net = fixtures::random_network(10, 6, 21);
  Site site;
  for (int node = 1; node <= 10; ++node) {
    site.road_node = node;
    REQUIRE(deviating_distance(net, 2, 9, site) >= 0.0);
  }
}

TEST_CASE("deviating distance throws when the site is unreachable") {
  RoadNetwork net({{1, 0, 0}, {2, 1, 0}, {3, 5, 0}}, {{1, 2, 1.0}});
  Site site;
  site.road_node = 3;
  REQUIRE_THROWS_AS(deviating_distance(net, 1, 2, site), NoPathError);
}

TEST_CASE("destination indicator includes the threshold boundary") {
  RoadNetwork net = fixtures::line_network(3);
  Site site;
  site.road_node = 3;
  REQUIRE(destination_indicator(net, 2, site, 1.0) == 1);
  REQUIRE(destination_indicator(net, 2, site, 0.99) == 0);
  REQUIRE(destination_indicator(net, 3, site, 0.0) == 1);
}

TEST_CASE("unreachable site never counts as near the destination") {
  RoadNetwork net({{1, 0, 0}, {2, 1, 0}, {3, 5, 0}}, {{1, 2, 1.0}});
  Site site;
  site.road_node = 3;
  REQUIRE(destination_indicator(net, 1, site, 100.0) == 0);
}

TEST_CASE("route coverage counts sites near any route node") {
  RoadNetwork net = fixtures::line_network(5);
  Route route = shortest_path(net, 1, 3);
  std::vector<Site> sites(5);
  for (int i = 0; i < 5; ++i) sites[i].road_node = i + 1;
  REQUIRE(route_coverage_count(net, route, sites, 1.0) == 4);
  REQUIRE(route_coverage_count(net, route, sites, 0.0) == 3);
  REQUIRE(route_coverage_count(net, route, sites, 2.0) == 5);
}

TEST_CASE("routing table reproduces the pure queries bit for bit") {
  RoadNetwork net = fixtures::random_network(12, 7, 42);
  RoutingTable table(net);
  Site site;
  site.road_node = 4;
  for (int origin = 1; origin <= 12; ++origin)
    for (int dest = 1; dest <= 12; ++dest) {
      REQUIRE(table.distance(origin, dest) ==
              shortest_distances(net, dest)[net.node_index(origin)]);
      REQUIRE(table.route(origin, dest) == shortest_path(net, origin, dest));
      REQUIRE(table.deviating_distance(origin, dest, site) ==
              deviating_distance(net, origin, dest, site));
      REQUIRE(table.destination_indicator(dest, site, 2.5) ==
              destination_indicator(net, dest, site, 2.5));
    }
  Route route = shortest_path(net, 1, 12);
  std::vector<Site> sites(3);
  sites[0].road_node = 2;
  sites[1].road_node = 7;
  sites[2].road_node = 11;
  REQUIRE(table.coverage_count(route, sites, 1.5) ==
          route_coverage_count(net, route, sites, 1.5));
}

TEST_CASE("warming the table does not change its answers") {
  RoadNetwork net = fixtures::random_network(9, 4, 8);
  RoutingTable cold(net);
  RoutingTable warm(net);
  warm.warm();
  for (int origin = 1; origin <= 9; ++origin)
    for (int dest = 1; dest <= 9; ++dest)
      REQUIRE(cold.distance(origin, dest) == warm.distance(origin, dest));
}

TEST_CASE("neighbors iterate in ascending node id order") {
  RoadNetwork net({{5, 0, 0}, {3, 1, 0}, {9, 2, 0}, {1, 3, 0}},
                  {{5, 3, 1.0}, {5, 9, 1.0}, {5, 1, 1.0}});
  const auto& nbrs = net.neighbors(net.node_index(5));
  REQUIRE(nbrs.size() == 3);
  REQUIRE(net.node_id(nbrs[0].first) == 1);
  REQUIRE(net.node_id(nbrs[1].first) == 3);
  REQUIRE(net.node_id(nbrs[2].first) == 9);
}
