#include <CLI11.hpp>

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "evplace/choice.hpp"
#include "evplace/errors.hpp"
#include "evplace/grid.hpp"
#include "evplace/market.hpp"
#include "evplace/planner.hpp"
#include "evplace/rng.hpp"
#include "evplace/road_network.hpp"
#include "evplace/scenario.hpp"
#include "evplace/scenario_io.hpp"
#include "evplace/sim.hpp"

namespace {

// Every subcommand owns one of these so identical flag names on
// different subcommands never share storage. The Option pointers let
// overrides distinguish "flag absent" from "flag set to the default".
struct CommandOptions {
  std::string scenario_path;
  std::string out;
  std::uint64_t seed = 0;
  double w = 0.0;
  double delay_max = 0.0;
  double coverage_min = 0.0;
  double dth = 0.0;
  int runs = 1;
  std::string outside_good;
  int threads = 1;
  std::string placement;
  std::string prices;
  int stage = 0;
  int resolution = 32;

  CLI::Option* seed_opt = nullptr;
  CLI::Option* w_opt = nullptr;
  CLI::Option* delay_opt = nullptr;
  CLI::Option* coverage_opt = nullptr;
  CLI::Option* dth_opt = nullptr;
  CLI::Option* runs_opt = nullptr;
};

void add_scenario_flags(CLI::App* cmd, CommandOptions& o) {
  cmd->add_option("--scenario", o.scenario_path,
                  "scenario description to load (JSON file path)")
      ->required();
  o.seed_opt = cmd->add_option(
      "--seed", o.seed, "master RNG seed override (unsigned integer)");
  o.w_opt = cmd->add_option(
      "--w", o.w,
      "weight of grid disturbance in provider utility (per squared pu "
      "generator deviation)");
  o.delay_opt = cmd->add_option(
      "--delay-max", o.delay_max,
      "highest acceptable waiting probability (fraction of served EVs, 0-1)");
  o.coverage_opt = cmd->add_option(
      "--coverage-min", o.coverage_min,
      "lowest acceptable coverage (fraction of charging EVs, 0-1)");
  o.dth_opt = cmd->add_option("--dth", o.dth,
                              "destination proximity threshold (km)");
  o.runs_opt = cmd->add_option(
      "--runs", o.runs,
      "service simulation repetitions per candidate placement (count)");
  cmd->add_option("--outside-good", o.outside_good,
                  "whether agents may choose not to charge (on or off)")
      ->check(CLI::IsMember({"on", "off"}));
  cmd->add_option("--threads", o.threads,
                  "worker thread cap; results do not depend on it (count)")
      ->check(CLI::PositiveNumber);
}

evplace::Scenario load_with_overrides(const CommandOptions& o) {
  evplace::Scenario sc = evplace::load_scenario(o.scenario_path);
  if (o.seed_opt->count()) sc.rng_seed = o.seed;
  if (o.w_opt->count()) sc.planner.w = o.w;
  if (o.delay_opt->count()) sc.planner.delay_threshold = o.delay_max;
  if (o.coverage_opt->count()) sc.planner.coverage_threshold = o.coverage_min;
  if (o.dth_opt->count()) sc.planner.d_th_km = o.dth;
  if (o.runs_opt->count()) sc.planner.monte_carlo_runs = o.runs;
  if (!o.outside_good.empty())
    sc.planner.outside_good_enabled = (o.outside_good == "on");

  // Overrides can break invariants the file satisfied, so check again.
  std::vector<std::string> violations = evplace::validate_scenario(sc);
  if (!violations.empty()) throw evplace::ValidationError(violations);
  return sc;
}

evplace::JointPlacement parse_placement(const evplace::Scenario& sc,
                                        const std::string& text) {
  evplace::JointPlacement joint;
  if (text.empty()) {
    joint.bits.assign(sc.sites.size(), 1);
    return joint;
  }
  const std::string complaint = "--placement needs one 0/1 digit per site (" +
                                std::to_string(sc.sites.size()) + " sites)";
  if (text.size() != sc.sites.size())
    throw evplace::ValidationError({complaint});
  for (char ch : text) {
    if (ch != '0' && ch != '1') throw evplace::ValidationError({complaint});
    joint.bits.push_back(ch == '1' ? 1 : 0);
  }
  return joint;
}

std::vector<double> parse_prices(const evplace::Scenario& sc,
                                 const std::string& text) {
  std::vector<double> prices;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t comma = text.find(',', start);
    std::string token = text.substr(
        start, comma == std::string::npos ? std::string::npos : comma - start);
    try {
      std::size_t used = 0;
      double v = std::stod(token, &used);
      if (used != token.size()) throw std::invalid_argument(token);
      prices.push_back(v);
    } catch (const std::exception&) {
      throw evplace::ValidationError(
          {"--prices: '" + token + "' is not a number"});
    }
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  if (prices.size() != sc.providers.size())
    throw evplace::ValidationError(
        {"--prices needs one value per provider (" +
         std::to_string(sc.providers.size()) + ")"});
  return prices;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void emit(const std::string& text, const std::string& out_path) {
  if (out_path.empty()) {
    std::cout << text;
    return;
  }
  std::ofstream f(out_path);
  if (!f) throw evplace::Error("cannot write " + out_path);
  f << text;
}

void check_stage_index(const evplace::Scenario& sc, int stage) {
  if (stage < 0 || stage >= static_cast<int>(sc.stages.size()))
    throw evplace::ValidationError(
        {"--stage must be in [0, " + std::to_string(sc.stages.size() - 1) +
         "]"});
}

void run_validate(const CommandOptions& o) {
  evplace::Scenario sc = load_with_overrides(o);
  nlohmann::json out;
  out["ok"] = true;
  out["providers"] = sc.providers.size();
  out["sites"] = sc.sites.size();
  out["agents"] = sc.agents.size();
  out["stages"] = sc.stages.size();
  std::cout << out.dump() << "\n";
}

void run_demand(const CommandOptions& o) {
  evplace::Scenario sc = load_with_overrides(o);
  evplace::RoutingTable routing(sc.road_network);
  evplace::JointPlacement joint = parse_placement(sc, o.placement);
  std::vector<double> prices =
      o.prices.empty()
          ? evplace::solve_price_equilibrium(joint, sc, sc.agents, routing)
                .prices
          : parse_prices(sc, o.prices);

  std::vector<std::vector<std::size_t>> built = evplace::built_lists(sc, joint);
  evplace::UtilityTable table =
      evplace::build_utility_table(sc, sc.agents, built, prices, routing);
  evplace::ChoiceProbabilities probs =
      evplace::choice_probabilities(table, sc.choice);
  std::vector<double> psi = evplace::charging_demand(table, probs);

  std::vector<double> phi_mean(sc.sites.size(), 0.0);
  if (!sc.agents.empty()) {
    for (std::size_t a = 0; a < sc.agents.size(); ++a)
      for (std::size_t k = 0; k < built.size(); ++k)
        for (std::size_t i = 0; i < built[k].size(); ++i)
          phi_mean[built[k][i]] += probs.phi[a][k][i] / sc.agents.size();
  }

  std::string text;
  for (std::size_t k = 0; k < prices.size(); ++k)
    text += "# price," + std::to_string(k) + "," + fmt(prices[k]) + "\n";
  text += "site_id,provider,built,phi_mean,psi_kwh\n";
  for (std::size_t j = 0; j < sc.sites.size(); ++j) {
    text += std::to_string(sc.sites[j].id) + "," +
            std::to_string(sc.sites[j].level_owner) + "," +
            (joint.bits[j] ? "1" : "0") + "," + fmt(phi_mean[j]) + "," +
            fmt(psi[j]) + "\n";
  }
  emit(text, o.out);
}

void run_powerflow(const CommandOptions& o) {
  evplace::Scenario sc = load_with_overrides(o);
  evplace::RoutingTable routing(sc.road_network);
  evplace::JointPlacement joint = parse_placement(sc, o.placement);
  std::vector<double> prices =
      o.prices.empty()
          ? evplace::solve_price_equilibrium(joint, sc, sc.agents, routing)
                .prices
          : parse_prices(sc, o.prices);

  std::vector<std::vector<std::size_t>> built = evplace::built_lists(sc, joint);
  evplace::UtilityTable table =
      evplace::build_utility_table(sc, sc.agents, built, prices, routing);
  evplace::ChoiceProbabilities probs =
      evplace::choice_probabilities(table, sc.choice);
  std::vector<double> psi = evplace::charging_demand(table, probs);

  const std::size_t nk = sc.providers.size();
  std::map<int, double> kwh_total;
  std::vector<std::map<int, double>> kwh_by_provider(nk);
  for (std::size_t k = 0; k < nk; ++k) {
    for (std::size_t j : built[k]) {
      kwh_by_provider[k][sc.sites[j].bus] += psi[j];
      kwh_total[sc.sites[j].bus] += psi[j];
    }
  }

  evplace::DispatchResult dispatch =
      evplace::dispatch_with_ev(sc.grid, kwh_total, sc.planner.horizon_h);
  double b_total =
      evplace::disturbance_for_load(sc.grid, kwh_total, sc.planner.horizon_h)
          .value;

  std::string text;
  text += "# converged," +
          std::string(dispatch.solution.converged ? "1" : "0") + "\n";
  text += "# iterations," + std::to_string(dispatch.solution.iterations) + "\n";
  text += "# max_residual_pu," + fmt(dispatch.solution.max_residual_pu) + "\n";
  text += "# b_total," + fmt(b_total) + "\n";
  for (std::size_t k = 0; k < nk; ++k) {
    double b_k = evplace::disturbance_for_load(sc.grid, kwh_by_provider[k],
                                               sc.planner.horizon_h)
                     .value;
    text += "# b_provider," + std::to_string(k) + "," + fmt(b_k) + "\n";
  }
  for (std::size_t g = 0; g < sc.grid.generators.size(); ++g) {
    text += "# generator," + std::to_string(sc.grid.generators[g].bus) + "," +
            fmt(dispatch.gen_p_pu[g]) + "," + fmt(dispatch.gen_q_pu[g]) + "\n";
  }
  text += "bus,vm_pu,angle_rad\n";
  for (std::size_t i = 0; i < sc.grid.buses.size(); ++i) {
    text += std::to_string(sc.grid.buses[i].id) + "," +
            fmt(dispatch.solution.vm_pu[i]) + "," +
            fmt(dispatch.solution.angle_rad[i]) + "\n";
  }
  emit(text, o.out);
}

void run_prices(const CommandOptions& o) {
  evplace::Scenario sc = load_with_overrides(o);
  evplace::RoutingTable routing(sc.road_network);
  evplace::JointPlacement joint = parse_placement(sc, o.placement);
  evplace::PriceEquilibrium eq =
      evplace::solve_price_equilibrium(joint, sc, sc.agents, routing);

  std::string text;
  text += "# converged," + std::string(eq.converged ? "1" : "0") + "\n";
  text += "# iterations," + std::to_string(eq.iterations) + "\n";
  text += "provider,price,residual\n";
  for (std::size_t k = 0; k < eq.prices.size(); ++k)
    text += std::to_string(k) + "," + fmt(eq.prices[k]) + "," +
            fmt(eq.residuals[k]) + "\n";
  emit(text, o.out);
}

void run_solve_stage(const CommandOptions& o) {
  evplace::Scenario sc = load_with_overrides(o);
  check_stage_index(sc, o.stage);
  evplace::RoutingTable routing(sc.road_network);
  std::vector<evplace::EvAgent> pool = evplace::stage_agent_pool(sc);

  // Earlier stages must run first so their stations carry forward; the
  // requested stage's result then matches the full plan's.
  evplace::JointPlacement carried;
  carried.bits.assign(sc.sites.size(), 0);
  evplace::StageResult result;
  for (int s = 0; s <= o.stage; ++s) {
    result = evplace::solve_stage(sc, s, carried, pool, routing, o.threads);
    for (const evplace::PlacementPolicy& policy : result.policies)
      for (std::size_t j = 0; j < policy.bits.size(); ++j)
        if (policy.bits[j]) carried.bits[j] = 1;
  }
  evplace::save_stage_result(result, o.out);
  nlohmann::json done;
  done["ok"] = true;
  done["stage"] = o.stage;
  done["out"] = o.out;
  std::cout << done.dump() << "\n";
}

void run_plan(const CommandOptions& o) {
  evplace::Scenario sc = load_with_overrides(o);
  std::vector<evplace::StageResult> results =
      evplace::plan_multistage(sc, o.threads);

  std::filesystem::path dir(o.out);
  std::filesystem::create_directories(dir);
  for (std::size_t s = 0; s < results.size(); ++s) {
    std::filesystem::path file =
        dir / ("stage_" + std::to_string(s + 1) + ".csv");
    evplace::save_stage_result(results[s], file.string());
  }
  nlohmann::json done;
  done["ok"] = true;
  done["stages"] = results.size();
  done["out"] = o.out;
  std::cout << done.dump() << "\n";
}

void run_heatmap(const CommandOptions& o) {
  evplace::Scenario sc = load_with_overrides(o);
  check_stage_index(sc, o.stage);
  evplace::RoutingTable routing(sc.road_network);
  std::vector<evplace::EvAgent> pool = evplace::stage_agent_pool(sc);
  const evplace::StageConfig& stage = sc.stages.at(o.stage);
  std::vector<evplace::EvAgent> agents(
      pool.begin(),
      pool.begin() + std::min<std::size_t>(stage.ev_count, pool.size()));

  // Trip draws reuse the first service run's stream so the picture
  // matches what the QoS estimate simulated.
  evplace::Rng rng(evplace::sub_seed(sc.rng_seed, "trips",
                                     static_cast<std::uint64_t>(o.stage), 0));
  std::vector<evplace::TripSample> trips =
      evplace::sample_trips(sc, agents, rng, routing);
  evplace::Heatmap map = evplace::traffic_heatmap(
      sc.road_network, trips, static_cast<std::size_t>(o.resolution));

  evplace::save_heatmap_csv(map, o.out + ".csv");
  evplace::save_heatmap_pgm(map, o.out + ".pgm");
  nlohmann::json done;
  done["ok"] = true;
  done["trips"] = trips.size();
  done["csv"] = o.out + ".csv";
  done["pgm"] = o.out + ".pgm";
  std::cout << done.dump() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "Simulation and planning toolkit for competitive EV charging-station "
      "placement"};
  app.require_subcommand(1);

  CommandOptions validate_o, demand_o, power_o, prices_o, stage_o, plan_o,
      heat_o;

  CLI::App* validate =
      app.add_subcommand("validate", "parse a scenario and report every "
                                     "invariant violation it breaks");
  add_scenario_flags(validate, validate_o);
  validate->callback([&] { run_validate(validate_o); });

  CLI::App* demand = app.add_subcommand(
      "demand", "dump per-site choice shares and charging energy for a "
                "placement at given or equilibrium prices");
  add_scenario_flags(demand, demand_o);
  demand->add_option("--placement", demand_o.placement,
                     "built sites as a 0/1 digit per site (default: all "
                     "built)");
  demand->add_option("--prices", demand_o.prices,
                     "per-provider prices, comma separated ($/kWh; default: "
                     "equilibrium)");
  demand->add_option("--out", demand_o.out,
                     "output CSV path (default: stdout)");
  demand->callback([&] { run_demand(demand_o); });

  CLI::App* powerflow = app.add_subcommand(
      "powerflow", "solve the grid with a placement's charging load "
                   "superposed and report the dispatch disturbance");
  add_scenario_flags(powerflow, power_o);
  powerflow->add_option("--placement", power_o.placement,
                        "built sites as a 0/1 digit per site (default: all "
                        "built)");
  powerflow->add_option("--prices", power_o.prices,
                        "per-provider prices, comma separated ($/kWh; "
                        "default: equilibrium)");
  powerflow->add_option("--out", power_o.out,
                        "output CSV path (default: stdout)");
  powerflow->callback([&] { run_powerflow(power_o); });

  CLI::App* prices = app.add_subcommand(
      "prices", "solve the price equilibrium for a joint placement");
  add_scenario_flags(prices, prices_o);
  prices->add_option("--placement", prices_o.placement,
                     "built sites as a 0/1 digit per site (default: all "
                     "built)");
  prices->add_option("--out", prices_o.out,
                     "output CSV path (default: stdout)");
  prices->callback([&] { run_prices(prices_o); });

  CLI::App* solve_stage = app.add_subcommand(
      "solve-stage", "run the placement game up to one stage and write that "
                     "stage's result");
  add_scenario_flags(solve_stage, stage_o);
  solve_stage->add_option("--stage", stage_o.stage,
                          "stage index, 0-based (count)");
  solve_stage->add_option("--out", stage_o.out, "output CSV path")->required();
  solve_stage->callback([&] { run_solve_stage(stage_o); });

  CLI::App* plan = app.add_subcommand(
      "plan", "run every stage in order and write one result CSV per stage");
  add_scenario_flags(plan, plan_o);
  plan->add_option("--out", plan_o.out, "output directory for stage CSVs")
      ->required();
  plan->callback([&] { run_plan(plan_o); });

  CLI::App* heatmap = app.add_subcommand(
      "heatmap", "simulate one day of trips and write traffic density as "
                 "CSV and PGM");
  add_scenario_flags(heatmap, heat_o);
  heatmap->add_option("--stage", heat_o.stage,
                      "stage index, 0-based (count)");
  heatmap->add_option("--resolution", heat_o.resolution,
                      "cells per heatmap axis (count)")
      ->check(CLI::PositiveNumber);
  heatmap->add_option("--out", heat_o.out,
                      "output path prefix; .csv and .pgm are appended")
      ->required();
  heatmap->callback([&] { run_heatmap(heat_o); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const evplace::ValidationError& e) {
    nlohmann::json err;
    err["error"] = "validation";
    err["message"] = e.what();
    err["violations"] = e.violations();
    std::cerr << err.dump() << "\n";
    return 1;
  } catch (const evplace::ParseError& e) {
    nlohmann::json err;
    err["error"] = "parse";
    err["message"] = e.what();
    std::cerr << err.dump() << "\n";
    return 1;
  } catch (const evplace::Error& e) {
    nlohmann::json err;
    err["error"] = "domain";
    err["message"] = e.what();
    std::cerr << err.dump() << "\n";
    return 1;
  } catch (const std::exception& e) {
    nlohmann::json err;
    err["error"] = "runtime";
    err["message"] = e.what();
    std::cerr << err.dump() << "\n";
    return 1;
  }
  return 0;
}
