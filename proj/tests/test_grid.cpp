#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <complex>
#include <map>

#include "evplace/grid.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

using namespace evplace;

namespace {

// Largest power-balance violation of a solved state, recomputed from
// scratch with complex arithmetic (independent of the solver's own
// residual bookkeeping).
double recomputed_residual(const GridCase& grid, const PowerFlowSolution& sol,
                           const std::vector<double>& extra_p = {}) {
  Eigen::MatrixXcd y = build_admittance(grid);
  const std::size_t n = grid.buses.size();
  std::size_t slack = 0;
  for (std::size_t i = 0; i < n; ++i)
    if (grid.buses[i].type == BusType::Slack) slack = i;

  std::vector<std::complex<double>> v(n);
  for (std::size_t i = 0; i < n; ++i)
    v[i] = std::polar(sol.vm_pu[i], sol.angle_rad[i]);

  double worst = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (i == slack) continue;
    std::complex<double> inj = 0.0;
    for (std::size_t k = 0; k < n; ++k) inj += y(i, k) * v[k];
    std::complex<double> s = v[i] * std::conj(inj);
    double p_sched =
        -grid.buses[i].p_load_pu - (extra_p.empty() ? 0.0 : extra_p[i]);
    double q_sched = -grid.buses[i].q_load_pu;
    for (const auto& gen : grid.generators) {
      if (grid.bus_index(gen.bus) != i) continue;
      p_sched += gen.p_pu;
      if (grid.buses[i].type == BusType::PQ) q_sched += gen.q_pu;
    }
    worst = std::max(worst, std::abs(p_sched - s.real()));
    if (grid.buses[i].type == BusType::PQ)
      worst = std::max(worst, std::abs(q_sched - s.imag()));
  }
  return worst;
}

}  // namespace

TEST_CASE("admittance matrix matches the incidence-matrix assembly") {
  for (const GridCase& grid :
       {fixtures::two_bus_case(), fixtures::nine_bus_case()}) {
    Eigen::MatrixXcd a = build_admittance(grid);
    Eigen::MatrixXcd b = oracles::incidence_admittance(grid);
    REQUIRE(a.rows() == b.rows());
    for (Eigen::Index i = 0; i < a.rows(); ++i)
      for (Eigen::Index k = 0; k < a.cols(); ++k)
        REQUIRE(std::abs(a(i, k) - b(i, k)) < 1e-12);
  }
}

TEST_CASE("zero-impedance branch is rejected") {
  GridCase grid = fixtures::two_bus_case();
  grid.branches[0].r_pu = 0.0;
  grid.branches[0].x_pu = 0.0;
  REQUIRE_THROWS_AS(build_admittance(grid), GridError);
}

TEST_CASE("two-bus case solves and matches gauss-seidel") {
  GridCase grid = fixtures::two_bus_case();
  PowerFlowSolution sol = solve_power_flow(grid);
  REQUIRE(sol.converged);
  REQUIRE(sol.iterations <= 20);
  REQUIRE(sol.max_residual_pu < 1e-8);
  REQUIRE(recomputed_residual(grid, sol) < 1e-8);
  REQUIRE(sol.vm_pu[0] == 1.0);
  REQUIRE(sol.angle_rad[0] == 0.0);
  REQUIRE(sol.vm_pu[1] < 1.0);  // load pulls the voltage down
  REQUIRE(sol.angle_rad[1] < 0.0);

  auto gs = oracles::gauss_seidel(grid);
  REQUIRE(gs.converged);
  for (std::size_t i = 0; i < 2; ++i) {
    REQUIRE(sol.vm_pu[i] == Catch::Approx(gs.vm_pu[i]).margin(1e-6));
    REQUIRE(sol.angle_rad[i] == Catch::Approx(gs.angle_rad[i]).margin(1e-6));
  }

  // Slack generation covers the load plus line losses.
  REQUIRE(sol.gen_p_pu[0] > 0.5);
  REQUIRE(sol.gen_p_pu[0] < 0.52);
  REQUIRE(sol.gen_q_pu[0] > 0.2);
}

TEST_CASE("nine-bus case solves and matches gauss-seidel") {
  GridCase grid = fixtures::nine_bus_case();
  PowerFlowSolution sol = solve_power_flow(grid);
  REQUIRE(sol.converged);
  REQUIRE(sol.iterations <= 20);
  REQUIRE(sol.max_residual_pu < 1e-8);
  REQUIRE(recomputed_residual(grid, sol) < 1e-8);

  // Slack and PV magnitudes stay at the setpoint.
  REQUIRE(sol.vm_pu[grid.bus_index(1)] == 1.0);
  REQUIRE(sol.vm_pu[grid.bus_index(2)] == Catch::Approx(1.0).margin(1e-12));

  auto gs = oracles::gauss_seidel(grid);
  REQUIRE(gs.converged);
  for (std::size_t i = 0; i < grid.buses.size(); ++i) {
    REQUIRE(sol.vm_pu[i] == Catch::Approx(gs.vm_pu[i]).margin(1e-6));
    REQUIRE(sol.angle_rad[i] == Catch::Approx(gs.angle_rad[i]).margin(1e-6));
  }

  // PV generator holds its scheduled active power; the slack absorbs
  // the losses.
  REQUIRE(sol.gen_p_pu[1] == 0.40);
  REQUIRE(sol.gen_p_pu[2] == 0.25);
  double total_load = 0.40 + 0.35 + 0.30;
  double total_gen = sol.gen_p_pu[0] + sol.gen_p_pu[1] + sol.gen_p_pu[2];
  REQUIRE(total_gen > total_load);
  REQUIRE(total_gen < total_load + 0.05);
}

TEST_CASE("extra load deepens the voltage sag") {
  GridCase grid = fixtures::two_bus_case();
  PowerFlowSolution base = solve_power_flow(grid);
  std::vector<double> extra(2, 0.0);
  extra[1] = 0.2;
  PowerFlowSolution loaded = solve_power_flow(grid, extra);
  REQUIRE(loaded.converged);
  REQUIRE(recomputed_residual(grid, loaded, extra) < 1e-8);
  REQUIRE(loaded.vm_pu[1] < base.vm_pu[1]);
}

TEST_CASE("infeasible load reports non-convergence without throwing") {
  GridCase grid = fixtures::two_bus_case();
  std::vector<double> extra(2, 0.0);
  extra[1] = 100.0;
  PowerFlowSolution sol = solve_power_flow(grid, extra);
  REQUIRE_FALSE(sol.converged);
}

TEST_CASE("dispatch with no EV load reproduces the base case exactly") {
  for (const GridCase& grid :
       {fixtures::two_bus_case(), fixtures::nine_bus_case()}) {
    PowerFlowSolution base = solve_power_flow(grid);
    DispatchResult dispatched = dispatch_with_ev(grid, {}, 24.0);
    REQUIRE(dispatched.solution == base);
    REQUIRE(disturbance(base.gen_p_pu, base.gen_q_pu, dispatched.gen_p_pu,
                        dispatched.gen_q_pu) == 0.0);
  }
}

TEST_CASE("dispatch shares EV load by participation factor") {
  GridCase grid = fixtures::nine_bus_case();
  PowerFlowSolution base = solve_power_flow(grid);

  // 2400 kWh over 24 h at bus 5 and 1200 kWh at bus 7: 0.15 MW total.
  std::map<int, double> ev{{5, 2400.0}, {7, 1200.0}};
  DispatchResult dispatched = dispatch_with_ev(grid, ev, 24.0);
  REQUIRE(dispatched.solution.converged);

  double added = (2400.0 + 1200.0) / 24.0 / 1000.0 / grid.base_mva;
  REQUIRE(dispatched.gen_p_pu[1] ==
          Catch::Approx(0.40 + 0.35 * added).epsilon(1e-12));
  REQUIRE(dispatched.gen_p_pu[2] ==
          Catch::Approx(0.25 + 0.25 * added).epsilon(1e-12));
  // The slack covers its own participation share plus marginal losses.
  REQUIRE(dispatched.gen_p_pu[0] > base.gen_p_pu[0] + 0.40 * added * 0.9);

  double b = disturbance(base.gen_p_pu, base.gen_q_pu, dispatched.gen_p_pu,
                         dispatched.gen_q_pu);
  REQUIRE(b > 0.0);
  // More EV energy at the same buses disturbs the dispatch more.
  std::map<int, double> ev2{{5, 4800.0}, {7, 2400.0}};
  DispatchResult heavier = dispatch_with_ev(grid, ev2, 24.0);
  REQUIRE(disturbance(base.gen_p_pu, base.gen_q_pu, heavier.gen_p_pu,
                      heavier.gen_q_pu) > b);
}

TEST_CASE("dispatch rejects bad inputs") {
  GridCase grid = fixtures::two_bus_case();
  REQUIRE_THROWS_AS(dispatch_with_ev(grid, {{2, 100.0}}, 0.0), GridError);
  REQUIRE_THROWS_AS(dispatch_with_ev(grid, {{2, -1.0}}, 24.0), GridError);
  REQUIRE_THROWS_AS(dispatch_with_ev(grid, {{99, 100.0}}, 24.0), GridError);
}

TEST_CASE("disturbance is a squared deviation norm") {
  REQUIRE(disturbance({1.0, 2.0}, {0.5, 0.1}, {1.1, 1.8}, {0.5, 0.4}) ==
          Catch::Approx(0.01 + 0.04 + 0.0 + 0.09).epsilon(1e-12));
  REQUIRE_THROWS_AS(disturbance({1.0}, {0.5}, {1.0, 2.0}, {0.5, 0.1}),
                    GridError);
}

TEST_CASE("lmp lookup returns the bus price") {
  GridCase grid = fixtures::nine_bus_case();
  REQUIRE(lmp_at(grid, 5) == 0.110);
  REQUIRE(lmp_at(grid, 1) == 0.090);
  REQUIRE_THROWS_AS(lmp_at(grid, 42), GridError);
}
