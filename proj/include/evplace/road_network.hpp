#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <queue>
#include <string>
#include <unordered_map>
#include <vector>

#include "evplace/errors.hpp"

namespace evplace {

constexpr double kInfDistance = std::numeric_limits<double>::infinity();

struct RoadNode {
  int id = 0;
  double x_km = 0.0;
  double y_km = 0.0;
  bool operator==(const RoadNode&) const = default;
};

struct RoadEdge {
  int u = 0;
  int v = 0;
  double length_km = 0.0;
  bool operator==(const RoadEdge&) const = default;
};

/// Ordered node path with its total length.
struct Route {
  std::vector<int> node_sequence;
  double length_km = 0.0;
  bool operator==(const Route&) const = default;
};

/// One charging-station candidate: a road node, the grid bus it draws
/// from, amenity indicators, and the service level (provider) it belongs to.
struct Site {
  int id = 0;
  int road_node = 0;
  int bus = 0;
  int restaurant = 0;   // r
  int shop_center = 0;  // g
  int supermarket = 0;  // m
  int level_owner = 0;  // owning provider, index into Scenario::providers
  bool operator==(const Site&) const = default;
};

/// Undirected weighted road graph. Immutable once built; all query
/// operations are pure and safe to call concurrently.
class RoadNetwork {
 public:
  RoadNetwork() = default;
  RoadNetwork(std::vector<RoadNode> nodes, std::vector<RoadEdge> edges)
      : nodes_(std::move(nodes)), edges_(std::move(edges)) {
    rebuild_index();
  }

  const std::vector<RoadNode>& nodes() const { return nodes_; }
  const std::vector<RoadEdge>& edges() const { return edges_; }

  bool has_node(int id) const { return index_.count(id) > 0; }

  std::size_t node_index(int id) const {
    auto it = index_.find(id);
    if (it == index_.end())
      throw Error("unknown road node id " + std::to_string(id));
    return it->second;
  }

  int node_id(std::size_t index) const { return nodes_[index].id; }

  /// Adjacency of a node, sorted by neighbor id (deterministic iteration).
  const std::vector<std::pair<std::size_t, double>>& neighbors(
      std::size_t index) const {
    return adjacency_[index];
  }

  bool operator==(const RoadNetwork& other) const {
    return nodes_ == other.nodes_ && edges_ == other.edges_;
  }

 private:
  void rebuild_index() {
    index_.clear();
    for (std::size_t i = 0; i < nodes_.size(); ++i) index_[nodes_[i].id] = i;
    adjacency_.assign(nodes_.size(), {});
    for (const auto& e : edges_) {
      auto ui = index_.find(e.u);
      auto vi = index_.find(e.v);
      if (ui == index_.end() || vi == index_.end())
        throw Error("road edge references unknown node");
      adjacency_[ui->second].emplace_back(vi->second, e.length_km);
      adjacency_[vi->second].emplace_back(ui->second, e.length_km);
    }
    for (std::size_t i = 0; i < adjacency_.size(); ++i) {
      std::sort(adjacency_[i].begin(), adjacency_[i].end(),
                [this](const auto& a, const auto& b) {
                  return nodes_[a.first].id < nodes_[b.first].id;
                });
    }
  }

  std::vector<RoadNode> nodes_;
  std::vector<RoadEdge> edges_;
  std::unordered_map<int, std::size_t> index_;
  std::vector<std::vector<std::pair<std::size_t, double>>> adjacency_;
};

/// Network distances from one source node to every node (index order).
/// Unreachable nodes get +inf.
inline std::vector<double> shortest_distances(const RoadNetwork& net,
                                              int source_id) {
  const std::size_t n = net.nodes().size();
  std::vector<double> dist(n, kInfDistance);
  std::size_t s = net.node_index(source_id);
  dist[s] = 0.0;
  using Item = std::pair<double, std::size_t>;
  std::priority_queue<Item, std::vector<Item>, std::greater<Item>> heap;
  heap.emplace(0.0, s);
  while (!heap.empty()) {
    auto [d, u] = heap.top();
    heap.pop();
    if (d > dist[u]) continue;
    for (const auto& [v, len] : net.neighbors(u)) {
      double nd = d + len;
      if (nd < dist[v]) {
        dist[v] = nd;
        heap.emplace(nd, v);
      }
    }
  }
  return dist;
}

namespace detail {

// Walks from origin toward dest following edges that stay on a shortest
// path, judged against the distance-to-dest row. Among tying neighbors
// the smallest node id wins, which makes the node sequence the
// lexicographically smallest shortest path. The length comes straight
// from the distance row, not from re-summing the walked edges: every
// step requires dist_to_dest[cur] == len + dist_to_dest[w] exactly, so
// the row entry at the origin already equals the walked total and a
// left-to-right re-sum could differ in the last bit.
inline Route walk_shortest(const RoadNetwork& net, std::size_t origin,
                           std::size_t dest,
                           const std::vector<double>& dist_to_dest) {
  Route route;
  route.length_km = dist_to_dest[origin];
  route.node_sequence.push_back(net.node_id(origin));
  std::size_t cur = origin;
  while (cur != dest) {
    std::size_t next = cur;
    bool found = false;
    for (const auto& [w, len] : net.neighbors(cur)) {
      if (dist_to_dest[w] + len == dist_to_dest[cur]) {
        next = w;
        found = true;
        break;  // neighbors sorted by id, first hit is the smallest
      }
    }
    if (!found)
      throw Error("internal: shortest-path walk lost the route");
    route.node_sequence.push_back(net.node_id(next));
    cur = next;
  }
  return route;
}

}  // namespace detail

/// Minimum-length route between two nodes; ties resolved toward the
/// lexicographically smallest node sequence.
inline Route shortest_path(const RoadNetwork& net, int origin_id,
                           int dest_id) {
  std::size_t o = net.node_index(origin_id);
  std::size_t d = net.node_index(dest_id);
  if (o == d) return Route{{origin_id}, 0.0};
  std::vector<double> dist_to_dest = shortest_distances(net, dest_id);
  if (dist_to_dest[o] == kInfDistance)
    throw NoPathError("no path from node " + std::to_string(origin_id) +
                      " to node " + std::to_string(dest_id));
  return detail::walk_shortest(net, o, d, dist_to_dest);
}

/// Extra kilometres driven when the trip origin->dest detours through the
/// site: len(origin->site) + len(site->dest) - len(origin->dest).
inline double deviating_distance(const RoadNetwork& net, int origin_id,
                                 int dest_id, const Site& site) {
  std::vector<double> from_site = shortest_distances(net, site.road_node);
  std::size_t o = net.node_index(origin_id);
  std::size_t d = net.node_index(dest_id);
  if (from_site[o] == kInfDistance || from_site[d] == kInfDistance)
    throw NoPathError("site node " + std::to_string(site.road_node) +
                      " unreachable from trip endpoints");
  std::vector<double> from_dest = shortest_distances(net, dest_id);
  if (from_dest[o] == kInfDistance)
    throw NoPathError("no path from node " + std::to_string(origin_id) +
                      " to node " + std::to_string(dest_id));
  return std::max(0.0, from_site[o] + from_site[d] - from_dest[o]);
}

/// 1 iff the site lies within network distance d_th of the destination.
/// Unreachable sites count as 0.
inline int destination_indicator(const RoadNetwork& net, int dest_id,
                                 const Site& site, double d_th_km) {
  std::vector<double> from_site = shortest_distances(net, site.road_node);
  double d = from_site[net.node_index(dest_id)];
  return (d != kInfDistance && d <= d_th_km) ? 1 : 0;
}

/// Number of sites within network distance d_th of some node of the route.
inline int route_coverage_count(const RoadNetwork& net, const Route& route,
                                const std::vector<Site>& sites,
                                double d_th_km) {
  int count = 0;
  for (const auto& site : sites) {
    std::vector<double> from_site = shortest_distances(net, site.road_node);
    double best = kInfDistance;
    for (int node_id : route.node_sequence)
      best = std::min(best, from_site[net.node_index(node_id)]);
    if (best <= d_th_km) ++count;
  }
  return count;
}

/// Cache of single-source distance rows. Query results are bit-identical
/// to the pure operations above (same Dijkstra, same walk). Build once per
/// scenario; reads are const and safe to share.
class RoutingTable {
 public:
  RoutingTable() = default;
  explicit RoutingTable(const RoadNetwork& net) : net_(&net) {
    rows_.resize(net.nodes().size());
    have_.assign(net.nodes().size(), false);
  }

  const std::vector<double>& row(int source_id) const {
    std::size_t s = net_->node_index(source_id);
    if (!have_[s]) {
      rows_[s] = shortest_distances(*net_, source_id);
      have_[s] = true;
    }
    return rows_[s];
  }

  /// Precompute rows for every listed source (then reads are lock-free).
  void warm(const std::vector<int>& sources) const {
    for (int s : sources) row(s);
  }

  /// Precompute every row; afterwards concurrent reads share the cache
  /// without mutation.
  void warm() const {
    for (const auto& n : net_->nodes()) row(n.id);
  }

  double distance(int origin_id, int dest_id) const {
    return row(dest_id)[net_->node_index(origin_id)];
  }

  Route route(int origin_id, int dest_id) const {
    std::size_t o = net_->node_index(origin_id);
    std::size_t d = net_->node_index(dest_id);
    if (o == d) return Route{{origin_id}, 0.0};
    const std::vector<double>& dist_to_dest = row(dest_id);
    if (dist_to_dest[o] == kInfDistance)
      throw NoPathError("no path from node " + std::to_string(origin_id) +
                        " to node " + std::to_string(dest_id));
    return detail::walk_shortest(*net_, o, d, dist_to_dest);
  }

  double deviating_distance(int origin_id, int dest_id,
                            const Site& site) const {
    const auto& from_site = row(site.road_node);
    std::size_t o = net_->node_index(origin_id);
    std::size_t d = net_->node_index(dest_id);
    if (from_site[o] == kInfDistance || from_site[d] == kInfDistance)
      throw NoPathError("site node " + std::to_string(site.road_node) +
                        " unreachable from trip endpoints");
    double direct = row(dest_id)[o];
    if (direct == kInfDistance)
      throw NoPathError("no path from node " + std::to_string(origin_id) +
                        " to node " + std::to_string(dest_id));
    return std::max(0.0, from_site[o] + from_site[d] - direct);
  }

  int destination_indicator(int dest_id, const Site& site,
                            double d_th_km) const {
    double d = row(site.road_node)[net_->node_index(dest_id)];
    return (d != kInfDistance && d <= d_th_km) ? 1 : 0;
  }

  int coverage_count(const Route& route, const std::vector<Site>& sites,
                     double d_th_km) const {
    int count = 0;
    for (const auto& site : sites) {
      const auto& from_site = row(site.road_node);
      double best = kInfDistance;
      for (int node_id : route.node_sequence)
        best = std::min(best, from_site[net_->node_index(node_id)]);
      if (best <= d_th_km) ++count;
    }
    return count;
  }

 private:
  const RoadNetwork* net_ = nullptr;
  mutable std::vector<std::vector<double>> rows_;
  mutable std::vector<bool> have_;
};

}  // namespace evplace
