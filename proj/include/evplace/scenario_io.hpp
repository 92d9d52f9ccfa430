#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <nlohmann/json.hpp>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "evplace/errors.hpp"
#include "evplace/planner.hpp"
#include "evplace/scenario.hpp"
#include "evplace/sim.hpp"

namespace evplace {

namespace io_detail {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

template <typename T>
T get_field(const json& j, const char* key, const std::string& ctx) {
  if (!j.contains(key))
    throw ParseError(ctx + ": missing field '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ParseError(ctx + "." + key + ": " + e.what());
  }
}

template <typename T>
T get_or(const json& j, const char* key, T fallback, const std::string& ctx) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ParseError(ctx + "." + key + ": " + e.what());
  }
}

/// Shortest decimal form that parses back to the same double.
inline std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline double parse_double(const std::string& s, const std::string& ctx) {
  try {
    std::size_t pos = 0;
    double v = std::stod(s, &pos);
    if (pos != s.size()) throw ParseError(ctx + ": trailing characters in '" + s + "'");
    return v;
  } catch (const std::invalid_argument&) {
    throw ParseError(ctx + ": not a number: '" + s + "'");
  } catch (const std::out_of_range&) {
    throw ParseError(ctx + ": number out of range: '" + s + "'");
  }
}

inline long parse_int(const std::string& s, const std::string& ctx) {
  try {
    std::size_t pos = 0;
    long v = std::stol(s, &pos);
    if (pos != s.size()) throw ParseError(ctx + ": trailing characters in '" + s + "'");
    return v;
  } catch (const std::invalid_argument&) {
    throw ParseError(ctx + ": not an integer: '" + s + "'");
  } catch (const std::out_of_range&) {
    throw ParseError(ctx + ": integer out of range: '" + s + "'");
  }
}

inline std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

inline std::string strip(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

}  // namespace io_detail

/// All invariant violations of a scenario, empty when valid.
inline std::vector<std::string> validate_scenario(const Scenario& sc) {
  std::vector<std::string> v;
  auto note = [&](const std::string& msg) { v.push_back(msg); };

  // Road network.
  {
    std::set<int> ids;
    for (const RoadNode& n : sc.road_network.nodes())
      if (!ids.insert(n.id).second)
        note("duplicate road node id " + std::to_string(n.id));
    for (const RoadEdge& e : sc.road_network.edges())
      if (!(e.length_km > 0.0))
        note("road edge " + std::to_string(e.u) + "-" + std::to_string(e.v) +
             " has non-positive length");
  }

  // Providers and choice coefficients.
  if (sc.providers.size() != 3)
    note("scenario must define exactly 3 providers, has " +
         std::to_string(sc.providers.size()));
  for (std::size_t k = 0; k < sc.providers.size(); ++k) {
    const ProviderConfig& p = sc.providers[k];
    std::string ctx = "provider " + std::to_string(k);
    if (!(p.charging_time_h > 0.0)) note(ctx + ": charging_time_h must be > 0");
    if (!(p.power_kw > 0.0)) note(ctx + ": power_kw must be > 0");
    if (p.plugs_per_station < 1) note(ctx + ": plugs_per_station must be >= 1");
    if (p.level < 1 || p.level > 3) note(ctx + ": level must be in 1..3");
  }
  if (!(sc.choice.alpha > 0.0)) note("choice.alpha must be > 0");
  if (!(sc.choice.beta < 0.0)) note("choice.beta must be < 0");
  if (sc.choice.nests.size() != sc.providers.size())
    note("choice.nests must have one entry per provider");
  for (std::size_t k = 0; k < sc.choice.nests.size(); ++k)
    if (!(sc.choice.nests[k].sigma > 0.0 && sc.choice.nests[k].sigma <= 1.0))
      note("choice.nests[" + std::to_string(k) + "].sigma must be in (0,1]");

  // Agents.
  if (!(sc.q_lower_kwh <= sc.q_upper_kwh))
    note("q_lower_kwh must be <= q_upper_kwh");
  {
    std::set<int> ids;
    for (const EvAgent& a : sc.agents) {
      std::string ctx = "agent " + std::to_string(a.id);
      if (!ids.insert(a.id).second) note("duplicate agent id " + std::to_string(a.id));
      if (!(a.income > 0.0)) note(ctx + ": income must be > 0");
      if (a.demand_kwh < sc.q_lower_kwh || a.demand_kwh > sc.q_upper_kwh)
        note(ctx + ": demand_kwh outside [q_lower, q_upper]");
      if (!sc.road_network.has_node(a.home))
        note(ctx + ": home references unknown road node " +
             std::to_string(a.home));
      if (!sc.road_network.has_node(a.destination))
        note(ctx + ": destination references unknown road node " +
             std::to_string(a.destination));
    }
  }

  // Sites.
  {
    std::set<int> ids;
    for (const Site& s : sc.sites) {
      std::string ctx = "site " + std::to_string(s.id);
      if (!ids.insert(s.id).second) note("duplicate site id " + std::to_string(s.id));
      if (!sc.road_network.has_node(s.road_node))
        note(ctx + ": references unknown road node " +
             std::to_string(s.road_node));
      if (!sc.grid.has_bus(s.bus))
        note(ctx + ": references unknown grid bus " + std::to_string(s.bus));
      auto binary = [&](int x, const char* name) {
        if (x != 0 && x != 1)
          note(ctx + ": " + name + " must be 0 or 1");
      };
      binary(s.restaurant, "restaurant");
      binary(s.shop_center, "shop_center");
      binary(s.supermarket, "supermarket");
      if (s.level_owner < 0 ||
          static_cast<std::size_t>(s.level_owner) >= sc.providers.size())
        note(ctx + ": level_owner out of range");
    }
  }

  // Grid.
  {
    if (!(sc.grid.base_mva > 0.0)) note("grid.base_mva must be > 0");
    std::set<int> bus_ids;
    int slack_count = 0;
    for (const GridBus& b : sc.grid.buses) {
      if (!bus_ids.insert(b.id).second)
        note("duplicate grid bus id " + std::to_string(b.id));
      if (b.type == BusType::Slack) ++slack_count;
    }
    if (slack_count != 1)
      note("grid must have exactly one slack bus, has " +
           std::to_string(slack_count));
    for (const GridBranch& br : sc.grid.branches) {
      if (!sc.grid.has_bus(br.from) || !sc.grid.has_bus(br.to))
        note("grid branch " + std::to_string(br.from) + "-" +
             std::to_string(br.to) + " references an unknown bus");
      if (br.r_pu == 0.0 && br.x_pu == 0.0)
        note("grid branch " + std::to_string(br.from) + "-" +
             std::to_string(br.to) + " has zero impedance");
    }
    double participation = 0.0;
    std::set<int> gen_buses;
    bool slack_has_gen = false;
    for (const GridGenerator& g : sc.grid.generators) {
      if (!sc.grid.has_bus(g.bus)) {
        note("generator references unknown bus " + std::to_string(g.bus));
        continue;
      }
      if (!gen_buses.insert(g.bus).second)
        note("more than one generator at bus " + std::to_string(g.bus));
      if (g.participation < 0.0)
        note("generator at bus " + std::to_string(g.bus) +
             " has negative participation factor");
      participation += g.participation;
      if (sc.grid.buses[sc.grid.bus_index(g.bus)].type == BusType::Slack)
        slack_has_gen = true;
    }
    if (!sc.grid.generators.empty() &&
        std::abs(participation - 1.0) > 1e-9)
      note("generator participation factors must sum to 1");
    if (!slack_has_gen) note("the slack bus must host a generator");
  }

  // Planner.
  {
    const PlannerConfig& p = sc.planner;
    if (p.w < 0.0) note("planner.w must be >= 0");
    if (p.delay_threshold < 0.0 || p.delay_threshold > 1.0)
      note("planner.delay_threshold must be in [0,1]");
    if (p.coverage_threshold < 0.0) note("planner.coverage_threshold must be >= 0");
    if (p.d_th_km < 0.0) note("planner.d_th_km must be >= 0");
    if (!(p.theta_lower <= p.theta_upper))
      note("planner.theta_lower must be <= theta_upper");
    if (p.monte_carlo_runs < 1) note("planner.monte_carlo_runs must be >= 1");
    if (!(p.horizon_h > 0.0)) note("planner.horizon_h must be > 0");
    if (!(p.price_floor > 0.0)) note("planner.price_floor must be > 0");
  }

  // Travel.
  {
    const TravelConfig& t = sc.travel;
    if (!(t.speed_kmh > 0.0)) note("travel.speed_kmh must be > 0");
    if (!(t.range_km > 0.0)) note("travel.range_km must be > 0");
    if (t.hourly_weights.size() != 24)
      note("travel.hourly_weights must have 24 entries");
    double total = 0.0;
    for (double w : t.hourly_weights) {
      if (w < 0.0) note("travel.hourly_weights entries must be >= 0");
      total += w;
    }
    if (!(total > 0.0)) note("travel.hourly_weights must not sum to 0");
    double cat_total = 0.0;
    for (const DestinationCategory& cat : t.destination_categories) {
      if (cat.weight < 0.0)
        note("destination category '" + cat.name + "' has negative weight");
      cat_total += cat.weight;
      if (cat.nodes.empty())
        note("destination category '" + cat.name + "' lists no nodes");
      for (int n : cat.nodes)
        if (!sc.road_network.has_node(n))
          note("destination category '" + cat.name +
               "' references unknown road node " + std::to_string(n));
    }
    if (!t.destination_categories.empty() && !(cat_total > 0.0))
      note("destination category weights must not sum to 0");
    if (t.income_jitter < 0.0 || t.income_jitter >= 1.0)
      note("travel.income_jitter must be in [0,1)");
  }

  // Stages.
  {
    int prev = 0;
    for (std::size_t s = 0; s < sc.stages.size(); ++s) {
      if (sc.stages[s].ev_count <= 0)
        note("stage " + std::to_string(s) + ": ev_count must be > 0");
      if (s > 0 && sc.stages[s].ev_count <= prev)
        note("stage " + std::to_string(s) +
             ": ev_count must be strictly increasing");
      prev = sc.stages[s].ev_count;
    }
  }

  return v;
}

// ---------------------------------------------------------------------
// Grid case CSV (sectioned: base_mva, [buses], [branches], [generators])
// ---------------------------------------------------------------------

inline GridCase load_grid_case(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open grid case file: " + path);

  GridCase grid;
  enum class Section { None, Buses, Branches, Generators } section =
      Section::None;
  std::string line;
  int line_no = 0;
  bool header_pending = false;
  while (std::getline(in, line)) {
    ++line_no;
    std::string s = io_detail::strip(line);
    std::string ctx = path + ":" + std::to_string(line_no);
    if (s.empty() || s[0] == '#') continue;
    if (s == "[buses]") {
      section = Section::Buses;
      header_pending = true;
      continue;
    }
    if (s == "[branches]") {
      section = Section::Branches;
      header_pending = true;
      continue;
    }
    if (s == "[generators]") {
      section = Section::Generators;
      header_pending = true;
      continue;
    }
    std::vector<std::string> f = io_detail::split(s, ',');
    if (section == Section::None) {
      if (f.size() == 2 && f[0] == "base_mva") {
        grid.base_mva = io_detail::parse_double(f[1], ctx);
        continue;
      }
      throw ParseError(ctx + ": expected 'base_mva,<value>' or a section header");
    }
    if (header_pending) {  // skip the column-name row
      header_pending = false;
      continue;
    }
    if (section == Section::Buses) {
      if (f.size() != 5) throw ParseError(ctx + ": bus rows need 5 columns");
      GridBus bus;
      bus.id = static_cast<int>(io_detail::parse_int(f[0], ctx));
      if (f[1] == "slack") bus.type = BusType::Slack;
      else if (f[1] == "pv") bus.type = BusType::PV;
      else if (f[1] == "pq") bus.type = BusType::PQ;
      else throw ParseError(ctx + ": bus type must be slack, pv, or pq");
      bus.p_load_pu = io_detail::parse_double(f[2], ctx);
      bus.q_load_pu = io_detail::parse_double(f[3], ctx);
      bus.lmp_per_kwh = io_detail::parse_double(f[4], ctx);
      grid.buses.push_back(bus);
    } else if (section == Section::Branches) {
      if (f.size() != 5) throw ParseError(ctx + ": branch rows need 5 columns");
      GridBranch br;
      br.from = static_cast<int>(io_detail::parse_int(f[0], ctx));
      br.to = static_cast<int>(io_detail::parse_int(f[1], ctx));
      br.r_pu = io_detail::parse_double(f[2], ctx);
      br.x_pu = io_detail::parse_double(f[3], ctx);
      br.b_pu = io_detail::parse_double(f[4], ctx);
      grid.branches.push_back(br);
    } else {
      if (f.size() != 4)
        throw ParseError(ctx + ": generator rows need 4 columns");
      GridGenerator gen;
      gen.bus = static_cast<int>(io_detail::parse_int(f[0], ctx));
      gen.p_pu = io_detail::parse_double(f[1], ctx);
      gen.q_pu = io_detail::parse_double(f[2], ctx);
      gen.participation = io_detail::parse_double(f[3], ctx);
      grid.generators.push_back(gen);
    }
  }
  return grid;
}

inline void save_grid_case(const GridCase& grid, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write grid case file: " + path);
  out << "base_mva," << io_detail::fmt_double(grid.base_mva) << "\n";
  out << "[buses]\n";
  out << "id,type,p_load_pu,q_load_pu,lmp_per_kwh\n";
  for (const GridBus& b : grid.buses) {
    const char* type = b.type == BusType::Slack  ? "slack"
                       : b.type == BusType::PV ? "pv"
                                               : "pq";
    out << b.id << ',' << type << ',' << io_detail::fmt_double(b.p_load_pu)
        << ',' << io_detail::fmt_double(b.q_load_pu) << ','
        << io_detail::fmt_double(b.lmp_per_kwh) << "\n";
  }
  out << "[branches]\n";
  out << "from,to,r_pu,x_pu,b_pu\n";
  for (const GridBranch& br : grid.branches)
    out << br.from << ',' << br.to << ',' << io_detail::fmt_double(br.r_pu)
        << ',' << io_detail::fmt_double(br.x_pu) << ','
        << io_detail::fmt_double(br.b_pu) << "\n";
  out << "[generators]\n";
  out << "bus,p_pu,q_pu,participation\n";
  for (const GridGenerator& g : grid.generators)
    out << g.bus << ',' << io_detail::fmt_double(g.p_pu) << ','
        << io_detail::fmt_double(g.q_pu) << ','
        << io_detail::fmt_double(g.participation) << "\n";
  if (!out) throw Error("failed writing grid case file: " + path);
}

// ---------------------------------------------------------------------
// Scenario JSON
// ---------------------------------------------------------------------

namespace io_detail {

inline GridCase grid_from_json(const json& jg) {
  GridCase grid;
  grid.base_mva = get_field<double>(jg, "base_mva", "grid");
  for (const json& jb : get_field<json>(jg, "buses", "grid")) {
    GridBus bus;
    bus.id = get_field<int>(jb, "id", "grid.buses[]");
    std::string type = get_field<std::string>(jb, "type", "grid.buses[]");
    if (type == "slack") bus.type = BusType::Slack;
    else if (type == "pv") bus.type = BusType::PV;
    else if (type == "pq") bus.type = BusType::PQ;
    else throw ParseError("grid.buses[]: type must be slack, pv, or pq");
    bus.p_load_pu = get_or<double>(jb, "p_load_pu", 0.0, "grid.buses[]");
    bus.q_load_pu = get_or<double>(jb, "q_load_pu", 0.0, "grid.buses[]");
    bus.lmp_per_kwh = get_or<double>(jb, "lmp_per_kwh", 0.0, "grid.buses[]");
    grid.buses.push_back(bus);
  }
  for (const json& jb : get_or<json>(jg, "branches", json::array(), "grid")) {
    GridBranch br;
    br.from = get_field<int>(jb, "from", "grid.branches[]");
    br.to = get_field<int>(jb, "to", "grid.branches[]");
    br.r_pu = get_or<double>(jb, "r_pu", 0.0, "grid.branches[]");
    br.x_pu = get_or<double>(jb, "x_pu", 0.0, "grid.branches[]");
    br.b_pu = get_or<double>(jb, "b_pu", 0.0, "grid.branches[]");
    grid.branches.push_back(br);
  }
  for (const json& jb :
       get_or<json>(jg, "generators", json::array(), "grid")) {
    GridGenerator gen;
    gen.bus = get_field<int>(jb, "bus", "grid.generators[]");
    gen.p_pu = get_or<double>(jb, "p_pu", 0.0, "grid.generators[]");
    gen.q_pu = get_or<double>(jb, "q_pu", 0.0, "grid.generators[]");
    gen.participation =
        get_or<double>(jb, "participation", 0.0, "grid.generators[]");
    grid.generators.push_back(gen);
  }
  return grid;
}

inline ordered_json grid_to_json(const GridCase& grid) {
  ordered_json jg;
  jg["base_mva"] = grid.base_mva;
  jg["buses"] = ordered_json::array();
  for (const GridBus& b : grid.buses) {
    ordered_json jb;
    jb["id"] = b.id;
    jb["type"] = b.type == BusType::Slack  ? "slack"
                 : b.type == BusType::PV ? "pv"
                                         : "pq";
    jb["p_load_pu"] = b.p_load_pu;
    jb["q_load_pu"] = b.q_load_pu;
    jb["lmp_per_kwh"] = b.lmp_per_kwh;
    jg["buses"].push_back(jb);
  }
  jg["branches"] = ordered_json::array();
  for (const GridBranch& br : grid.branches) {
    ordered_json jb;
    jb["from"] = br.from;
    jb["to"] = br.to;
    jb["r_pu"] = br.r_pu;
    jb["x_pu"] = br.x_pu;
    jb["b_pu"] = br.b_pu;
    jg["branches"].push_back(jb);
  }
  jg["generators"] = ordered_json::array();
  for (const GridGenerator& g : grid.generators) {
    ordered_json jb;
    jb["bus"] = g.bus;
    jb["p_pu"] = g.p_pu;
    jb["q_pu"] = g.q_pu;
    jb["participation"] = g.participation;
    jg["generators"].push_back(jb);
  }
  return jg;
}

}  // namespace io_detail

inline Scenario load_scenario(const std::string& path) {
  using io_detail::get_field;
  using io_detail::get_or;
  using io_detail::json;

  std::ifstream in(path);
  if (!in) throw ParseError("cannot open scenario file: " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(path + ": " + e.what());
  }

  Scenario sc;
  sc.rng_seed = get_or<std::uint64_t>(j, "rng_seed", 0, "scenario");

  // Road network: check endpoint references before constructing, so a
  // bad file reports every problem instead of dying on the first.
  std::vector<RoadNode> nodes;
  std::vector<RoadEdge> edges;
  const json& jnet = get_field<json>(j, "road_network", "scenario");
  for (const json& jn : get_field<json>(jnet, "nodes", "road_network")) {
    RoadNode n;
    n.id = get_field<int>(jn, "id", "road_network.nodes[]");
    n.x_km = get_or<double>(jn, "x_km", 0.0, "road_network.nodes[]");
    n.y_km = get_or<double>(jn, "y_km", 0.0, "road_network.nodes[]");
    nodes.push_back(n);
  }
  for (const json& je :
       get_or<json>(j.at("road_network"), "edges", json::array(),
                    "road_network")) {
    RoadEdge e;
    e.u = get_field<int>(je, "u", "road_network.edges[]");
    e.v = get_field<int>(je, "v", "road_network.edges[]");
    e.length_km = get_field<double>(je, "length_km", "road_network.edges[]");
    edges.push_back(e);
  }
  {
    std::set<int> ids;
    std::vector<std::string> violations;
    for (const RoadNode& n : nodes)
      if (!ids.insert(n.id).second)
        violations.push_back("duplicate road node id " + std::to_string(n.id));
    for (const RoadEdge& e : edges) {
      if (!ids.count(e.u))
        violations.push_back("road edge references unknown node " +
                             std::to_string(e.u));
      if (!ids.count(e.v))
        violations.push_back("road edge references unknown node " +
                             std::to_string(e.v));
    }
    if (!violations.empty()) throw ValidationError(violations);
  }
  sc.road_network = RoadNetwork(std::move(nodes), std::move(edges));

  for (const json& ja : get_or<json>(j, "agents", json::array(), "scenario")) {
    EvAgent a;
    a.id = get_field<int>(ja, "id", "agents[]");
    a.home = get_field<int>(ja, "home", "agents[]");
    a.destination = get_field<int>(ja, "destination", "agents[]");
    a.income = get_field<double>(ja, "income", "agents[]");
    a.demand_kwh = get_field<double>(ja, "demand_kwh", "agents[]");
    sc.agents.push_back(a);
  }

  for (const json& js : get_or<json>(j, "sites", json::array(), "scenario")) {
    Site s;
    s.id = get_field<int>(js, "id", "sites[]");
    s.road_node = get_field<int>(js, "road_node", "sites[]");
    s.bus = get_field<int>(js, "bus", "sites[]");
    s.restaurant = get_or<int>(js, "restaurant", 0, "sites[]");
    s.shop_center = get_or<int>(js, "shop_center", 0, "sites[]");
    s.supermarket = get_or<int>(js, "supermarket", 0, "sites[]");
    s.level_owner = get_field<int>(js, "level_owner", "sites[]");
    sc.sites.push_back(s);
  }

  for (const json& jp : get_field<json>(j, "providers", "scenario")) {
    ProviderConfig p;
    p.level = get_field<int>(jp, "level", "providers[]");
    p.charging_time_h = get_field<double>(jp, "charging_time_h", "providers[]");
    p.power_kw = get_field<double>(jp, "power_kw", "providers[]");
    if (jp.contains("plugs_per_station") && jp.at("plugs_per_station").is_string()) {
      if (jp.at("plugs_per_station").get<std::string>() != "unlimited")
        throw ParseError("providers[].plugs_per_station: string form must be 'unlimited'");
      p.plugs_per_station = kUnlimitedPlugs;
    } else {
      p.plugs_per_station = get_or<int>(jp, "plugs_per_station", 1, "providers[]");
    }
    sc.providers.push_back(p);
  }

  {
    const json& jc = get_field<json>(j, "choice", "scenario");
    sc.choice.alpha = get_field<double>(jc, "alpha", "choice");
    sc.choice.beta = get_field<double>(jc, "beta", "choice");
    for (const json& jn : get_field<json>(jc, "nests", "choice")) {
      NestCoefficients n;
      n.mu = get_or<double>(jn, "mu", 0.0, "choice.nests[]");
      n.eta = get_or<double>(jn, "eta", 0.0, "choice.nests[]");
      n.gamma = get_or<double>(jn, "gamma", 0.0, "choice.nests[]");
      n.lambda = get_or<double>(jn, "lambda", 0.0, "choice.nests[]");
      n.delta = get_or<double>(jn, "delta", 0.0, "choice.nests[]");
      n.sigma = get_or<double>(jn, "sigma", 1.0, "choice.nests[]");
      sc.choice.nests.push_back(n);
    }
  }

  if (j.contains("grid_file")) {
    std::filesystem::path base = std::filesystem::path(path).parent_path();
    std::string rel = get_field<std::string>(j, "grid_file", "scenario");
    sc.grid = load_grid_case((base / rel).string());
  } else {
    sc.grid = io_detail::grid_from_json(get_field<json>(j, "grid", "scenario"));
  }

  if (j.contains("planner")) {
    const json& jp = j.at("planner");
    PlannerConfig& p = sc.planner;
    p.w = get_or<double>(jp, "w", p.w, "planner");
    p.delay_threshold =
        get_or<double>(jp, "delay_threshold", p.delay_threshold, "planner");
    p.coverage_threshold = get_or<double>(jp, "coverage_threshold",
                                          p.coverage_threshold, "planner");
    p.d_th_km = get_or<double>(jp, "d_th_km", p.d_th_km, "planner");
    p.outside_good_enabled = get_or<bool>(jp, "outside_good_enabled",
                                          p.outside_good_enabled, "planner");
    p.coverage_upper_bound = get_or<bool>(jp, "coverage_upper_bound",
                                          p.coverage_upper_bound, "planner");
    p.theta_lower = get_or<double>(jp, "theta_lower", p.theta_lower, "planner");
    p.theta_upper = get_or<double>(jp, "theta_upper", p.theta_upper, "planner");
    p.monte_carlo_runs =
        get_or<int>(jp, "monte_carlo_runs", p.monte_carlo_runs, "planner");
    p.horizon_h = get_or<double>(jp, "horizon_h", p.horizon_h, "planner");
    p.price_floor = get_or<double>(jp, "price_floor", p.price_floor, "planner");
  }

  if (j.contains("travel")) {
    const json& jt = j.at("travel");
    TravelConfig& t = sc.travel;
    t.speed_kmh = get_or<double>(jt, "speed_kmh", t.speed_kmh, "travel");
    t.range_km = get_or<double>(jt, "range_km", t.range_km, "travel");
    if (jt.contains("hourly_weights"))
      t.hourly_weights =
          get_field<std::vector<double>>(jt, "hourly_weights", "travel");
    t.income_jitter =
        get_or<double>(jt, "income_jitter", t.income_jitter, "travel");
    for (const json& jc : get_or<json>(jt, "destination_categories",
                                       json::array(), "travel")) {
      DestinationCategory cat;
      cat.name = get_or<std::string>(jc, "name", "", "destination_categories[]");
      cat.weight =
          get_field<double>(jc, "weight", "destination_categories[]");
      cat.nodes = get_field<std::vector<int>>(jc, "nodes",
                                              "destination_categories[]");
      t.destination_categories.push_back(cat);
    }
  }

  sc.q_lower_kwh = get_or<double>(j, "q_lower_kwh", 0.0, "scenario");
  sc.q_upper_kwh = get_or<double>(
      j, "q_upper_kwh", std::numeric_limits<double>::max(), "scenario");

  for (const json& js : get_field<json>(j, "stages", "scenario")) {
    StageConfig stage;
    stage.ev_count = get_field<int>(js, "ev_count", "stages[]");
    stage.label = get_or<std::string>(js, "label", "", "stages[]");
    sc.stages.push_back(stage);
  }

  std::vector<std::string> violations = validate_scenario(sc);
  if (!violations.empty()) throw ValidationError(violations);
  return sc;
}

inline void save_scenario(const Scenario& sc, const std::string& path) {
  using io_detail::ordered_json;
  ordered_json j;
  j["rng_seed"] = sc.rng_seed;

  ordered_json jnet;
  jnet["nodes"] = ordered_json::array();
  for (const RoadNode& n : sc.road_network.nodes()) {
    ordered_json jn;
    jn["id"] = n.id;
    jn["x_km"] = n.x_km;
    jn["y_km"] = n.y_km;
    jnet["nodes"].push_back(jn);
  }
  jnet["edges"] = ordered_json::array();
  for (const RoadEdge& e : sc.road_network.edges()) {
    ordered_json je;
    je["u"] = e.u;
    je["v"] = e.v;
    je["length_km"] = e.length_km;
    jnet["edges"].push_back(je);
  }
  j["road_network"] = jnet;

  j["agents"] = ordered_json::array();
  for (const EvAgent& a : sc.agents) {
    ordered_json ja;
    ja["id"] = a.id;
    ja["home"] = a.home;
    ja["destination"] = a.destination;
    ja["income"] = a.income;
    ja["demand_kwh"] = a.demand_kwh;
    j["agents"].push_back(ja);
  }

  j["sites"] = ordered_json::array();
  for (const Site& s : sc.sites) {
    ordered_json js;
    js["id"] = s.id;
    js["road_node"] = s.road_node;
    js["bus"] = s.bus;
    js["restaurant"] = s.restaurant;
    js["shop_center"] = s.shop_center;
    js["supermarket"] = s.supermarket;
    js["level_owner"] = s.level_owner;
    j["sites"].push_back(js);
  }

  j["providers"] = ordered_json::array();
  for (const ProviderConfig& p : sc.providers) {
    ordered_json jp;
    jp["level"] = p.level;
    jp["charging_time_h"] = p.charging_time_h;
    jp["power_kw"] = p.power_kw;
    if (p.plugs_per_station == kUnlimitedPlugs)
      jp["plugs_per_station"] = "unlimited";
    else
      jp["plugs_per_station"] = p.plugs_per_station;
    j["providers"].push_back(jp);
  }

  ordered_json jc;
  jc["alpha"] = sc.choice.alpha;
  jc["beta"] = sc.choice.beta;
  jc["nests"] = ordered_json::array();
  for (const NestCoefficients& n : sc.choice.nests) {
    ordered_json jn;
    jn["mu"] = n.mu;
    jn["eta"] = n.eta;
    jn["gamma"] = n.gamma;
    jn["lambda"] = n.lambda;
    jn["delta"] = n.delta;
    jn["sigma"] = n.sigma;
    jc["nests"].push_back(jn);
  }
  j["choice"] = jc;

  j["grid"] = io_detail::grid_to_json(sc.grid);

  ordered_json jp;
  jp["w"] = sc.planner.w;
  jp["delay_threshold"] = sc.planner.delay_threshold;
  jp["coverage_threshold"] = sc.planner.coverage_threshold;
  jp["d_th_km"] = sc.planner.d_th_km;
  jp["outside_good_enabled"] = sc.planner.outside_good_enabled;
  jp["coverage_upper_bound"] = sc.planner.coverage_upper_bound;
  jp["theta_lower"] = sc.planner.theta_lower;
  jp["theta_upper"] = sc.planner.theta_upper;
  jp["monte_carlo_runs"] = sc.planner.monte_carlo_runs;
  jp["horizon_h"] = sc.planner.horizon_h;
  jp["price_floor"] = sc.planner.price_floor;
  j["planner"] = jp;

  ordered_json jt;
  jt["speed_kmh"] = sc.travel.speed_kmh;
  jt["range_km"] = sc.travel.range_km;
  jt["hourly_weights"] = sc.travel.hourly_weights;
  jt["income_jitter"] = sc.travel.income_jitter;
  jt["destination_categories"] = ordered_json::array();
  for (const DestinationCategory& cat : sc.travel.destination_categories) {
    ordered_json jcat;
    jcat["name"] = cat.name;
    jcat["weight"] = cat.weight;
    jcat["nodes"] = cat.nodes;
    jt["destination_categories"].push_back(jcat);
  }
  j["travel"] = jt;

  j["q_lower_kwh"] = sc.q_lower_kwh;
  j["q_upper_kwh"] = sc.q_upper_kwh;

  j["stages"] = ordered_json::array();
  for (const StageConfig& stage : sc.stages) {
    ordered_json js;
    js["ev_count"] = stage.ev_count;
    js["label"] = stage.label;
    j["stages"].push_back(js);
  }

  std::ofstream out(path);
  if (!out) throw Error("cannot write scenario file: " + path);
  out << j.dump(2) << "\n";
  if (!out) throw Error("failed writing scenario file: " + path);
}

// ---------------------------------------------------------------------
// StageResult CSV
// ---------------------------------------------------------------------

/// One data row per provider with at least one built station; providers
/// absent from the file reconstruct to the all-zero policy with zero
/// price, utility, and QoS (exactly what an empty provider produces).
inline void save_stage_result(const StageResult& result,
                              const std::string& path) {
  std::size_t nk = result.policies.size();
  std::size_t l = nk ? result.policies[0].bits.size() : 0;
  std::ofstream out(path);
  if (!out) throw Error("cannot write stage result file: " + path);
  out << "# stage," << result.label << "\n";
  out << "# providers," << nk << "\n";
  out << "# sites," << l << "\n";
  out << "# runs," << result.qos.runs << "\n";
  out << "# converged," << (result.equilibrium_converged ? 1 : 0) << "\n";
  out << "provider,policy,price,expected_utility,delay_prob,delay_se,"
         "coverage,coverage_se,new_sites,cumulative_stations\n";
  for (std::size_t k = 0; k < nk; ++k) {
    if (result.cumulative_stations[k] == 0) continue;
    std::string policy;
    for (std::uint8_t b : result.policies[k].bits) policy += b ? '1' : '0';
    std::string new_sites;
    for (std::size_t i = 0; i < result.new_site_ids[k].size(); ++i) {
      if (i) new_sites += ';';
      new_sites += std::to_string(result.new_site_ids[k][i]);
    }
    out << k << ',' << policy << ','
        << io_detail::fmt_double(result.prices[k]) << ','
        << io_detail::fmt_double(result.expected_utilities[k]) << ','
        << io_detail::fmt_double(result.qos.delay_probability[k]) << ','
        << io_detail::fmt_double(result.qos.delay_se[k]) << ','
        << io_detail::fmt_double(result.qos.coverage[k]) << ','
        << io_detail::fmt_double(result.qos.coverage_se[k]) << ','
        << new_sites << ',' << result.cumulative_stations[k] << "\n";
  }
  if (!out) throw Error("failed writing stage result file: " + path);
}

inline StageResult load_stage_result(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open stage result file: " + path);

  StageResult result;
  std::size_t nk = 0, l = 0;
  std::string line;
  int line_no = 0;
  bool sized = false;
  auto ensure_sized = [&]() {
    if (sized) return;
    result.policies.assign(nk, PlacementPolicy{std::vector<std::uint8_t>(l, 0)});
    result.prices.assign(nk, 0.0);
    result.expected_utilities.assign(nk, 0.0);
    result.qos.delay_probability.assign(nk, 0.0);
    result.qos.coverage.assign(nk, 0.0);
    result.qos.delay_se.assign(nk, 0.0);
    result.qos.coverage_se.assign(nk, 0.0);
    result.new_site_ids.assign(nk, {});
    result.cumulative_stations.assign(nk, 0);
    sized = true;
  };

  while (std::getline(in, line)) {
    ++line_no;
    std::string ctx = path + ":" + std::to_string(line_no);
    std::string s = io_detail::strip(line);
    if (s.empty()) continue;
    if (s[0] == '#') {
      std::string body = io_detail::strip(s.substr(1));
      auto comma = body.find(',');
      std::string key = body.substr(0, comma);
      std::string value =
          comma == std::string::npos ? "" : body.substr(comma + 1);
      if (key == "stage") result.label = value;
      else if (key == "providers") nk = io_detail::parse_int(value, ctx);
      else if (key == "sites") l = io_detail::parse_int(value, ctx);
      else if (key == "runs") result.qos.runs = static_cast<int>(io_detail::parse_int(value, ctx));
      else if (key == "converged")
        result.equilibrium_converged = io_detail::parse_int(value, ctx) != 0;
      continue;
    }
    if (s.rfind("provider,", 0) == 0) continue;  // column header
    ensure_sized();
    std::vector<std::string> f = io_detail::split(s, ',');
    if (f.size() != 10) throw ParseError(ctx + ": data rows need 10 columns");
    std::size_t k = io_detail::parse_int(f[0], ctx);
    if (k >= nk) throw ParseError(ctx + ": provider index out of range");
    if (f[1].size() != l)
      throw ParseError(ctx + ": policy bit-string length mismatch");
    for (std::size_t j = 0; j < l; ++j) {
      if (f[1][j] != '0' && f[1][j] != '1')
        throw ParseError(ctx + ": policy must be a 0/1 string");
      result.policies[k].bits[j] = f[1][j] == '1';
    }
    result.prices[k] = io_detail::parse_double(f[2], ctx);
    result.expected_utilities[k] = io_detail::parse_double(f[3], ctx);
    result.qos.delay_probability[k] = io_detail::parse_double(f[4], ctx);
    result.qos.delay_se[k] = io_detail::parse_double(f[5], ctx);
    result.qos.coverage[k] = io_detail::parse_double(f[6], ctx);
    result.qos.coverage_se[k] = io_detail::parse_double(f[7], ctx);
    if (!f[8].empty())
      for (const std::string& id : io_detail::split(f[8], ';'))
        result.new_site_ids[k].push_back(
            static_cast<int>(io_detail::parse_int(id, ctx)));
    result.cumulative_stations[k] =
        static_cast<int>(io_detail::parse_int(f[9], ctx));
  }
  ensure_sized();
  return result;
}

// ---------------------------------------------------------------------
// Heatmap output
// ---------------------------------------------------------------------

inline void save_heatmap_csv(const Heatmap& map, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write heatmap file: " + path);
  for (std::size_t iy = 0; iy < map.cells_y; ++iy) {
    for (std::size_t ix = 0; ix < map.cells_x; ++ix) {
      if (ix) out << ',';
      out << map.at(ix, iy);
    }
    out << "\n";
  }
  if (!out) throw Error("failed writing heatmap file: " + path);
}

/// 8-bit PGM (P2), counts scaled linearly so the busiest cell is 255.
inline void save_heatmap_pgm(const Heatmap& map, const std::string& path) {
  std::int64_t peak = 0;
  for (std::int64_t c : map.counts) peak = std::max(peak, c);
  std::ofstream out(path);
  if (!out) throw Error("cannot write heatmap file: " + path);
  out << "P2\n" << map.cells_x << ' ' << map.cells_y << "\n255\n";
  for (std::size_t iy = 0; iy < map.cells_y; ++iy) {
    for (std::size_t ix = 0; ix < map.cells_x; ++ix) {
      if (ix) out << ' ';
      out << (peak ? map.at(ix, iy) * 255 / peak : 0);
    }
    out << "\n";
  }
  if (!out) throw Error("failed writing heatmap file: " + path);
}

}  // namespace evplace
