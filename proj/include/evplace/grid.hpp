#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <complex>
#include <map>
#include <string>
#include <vector>

#include "evplace/errors.hpp"

namespace evplace {

enum class BusType { Slack, PV, PQ };

struct GridBus {
  int id = 0;
  BusType type = BusType::PQ;
  double p_load_pu = 0.0;
  double q_load_pu = 0.0;
  double lmp_per_kwh = 0.0;
  bool operator==(const GridBus&) const = default;
};

struct GridBranch {
  int from = 0;
  int to = 0;
  double r_pu = 0.0;  // series resistance
  double x_pu = 0.0;  // series reactance
  double b_pu = 0.0;  // total shunt (line-charging) susceptance
  bool operator==(const GridBranch&) const = default;
};

struct GridGenerator {
  int bus = 0;
  double p_pu = 0.0;
  double q_pu = 0.0;
  double participation = 0.0;  // share of incremental system load
  bool operator==(const GridGenerator&) const = default;
};

/// Power-system case in per-unit on base_mva. Slack and PV voltage
/// magnitudes are held at 1.0 pu (the case format carries no setpoints).
struct GridCase {
  double base_mva = 100.0;
  std::vector<GridBus> buses;
  std::vector<GridBranch> branches;
  std::vector<GridGenerator> generators;
  bool operator==(const GridCase&) const = default;

  std::size_t bus_index(int id) const {
    for (std::size_t i = 0; i < buses.size(); ++i)
      if (buses[i].id == id) return i;
    throw GridError("unknown grid bus id " + std::to_string(id));
  }
  bool has_bus(int id) const {
    for (const auto& b : buses)
      if (b.id == id) return true;
    return false;
  }
};

constexpr double kVmSetpoint = 1.0;       // slack / PV magnitude, pu
constexpr double kPfTolerance = 1e-8;     // mismatch tolerance, pu
constexpr int kPfMaxIterations = 50;

struct PowerFlowSolution {
  std::vector<double> vm_pu;      // per bus, case order
  std::vector<double> angle_rad;  // per bus, case order; slack = 0
  std::vector<double> gen_p_pu;   // per generator, case order
  std::vector<double> gen_q_pu;
  bool converged = false;
  int iterations = 0;
  double max_residual_pu = 0.0;
  bool operator==(const PowerFlowSolution&) const = default;
};

/// Standard Y-bus assembly from series impedance and total line-charging
/// susceptance (half to each end).
inline Eigen::MatrixXcd build_admittance(const GridCase& grid) {
  const std::size_t n = grid.buses.size();
  Eigen::MatrixXcd y = Eigen::MatrixXcd::Zero(n, n);
  for (const auto& br : grid.branches) {
    if (br.r_pu == 0.0 && br.x_pu == 0.0)
      throw GridError("zero-impedance branch " + std::to_string(br.from) +
                      "-" + std::to_string(br.to));
    std::size_t f = grid.bus_index(br.from);
    std::size_t t = grid.bus_index(br.to);
    std::complex<double> ys = 1.0 / std::complex<double>(br.r_pu, br.x_pu);
    std::complex<double> sh(0.0, br.b_pu / 2.0);
    y(f, f) += ys + sh;
    y(t, t) += ys + sh;
    y(f, t) -= ys;
    y(t, f) -= ys;
  }
  return y;
}

namespace detail {

// Injected P/Q at every bus for the given voltage state.
inline void calc_injections(const Eigen::MatrixXcd& y,
                            const std::vector<double>& vm,
                            const std::vector<double>& va,
                            std::vector<double>& p_calc,
                            std::vector<double>& q_calc) {
  const std::size_t n = vm.size();
  p_calc.assign(n, 0.0);
  q_calc.assign(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double pi = 0.0, qi = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      double g = y(i, k).real();
      double b = y(i, k).imag();
      if (g == 0.0 && b == 0.0) continue;
      double ang = va[i] - va[k];
      double c = std::cos(ang), s = std::sin(ang);
      pi += vm[i] * vm[k] * (g * c + b * s);
      qi += vm[i] * vm[k] * (g * s - b * c);
    }
    p_calc[i] = pi;
    q_calc[i] = qi;
  }
}

}  // namespace detail

/// Newton-Raphson AC power flow on the node power-balance equations,
/// from a flat start. `extra_p`/`extra_q` are additional loads per bus
/// (case order, pu); empty means none. Non-convergence is reported in
/// the solution, not thrown.
inline PowerFlowSolution solve_power_flow(
    const GridCase& grid, const std::vector<double>& extra_p = {},
    const std::vector<double>& extra_q = {}) {
  const std::size_t n = grid.buses.size();
  if (!extra_p.empty() && extra_p.size() != n)
    throw GridError("extra_p size does not match bus count");
  if (!extra_q.empty() && extra_q.size() != n)
    throw GridError("extra_q size does not match bus count");

  std::size_t slack = n;
  for (std::size_t i = 0; i < n; ++i)
    if (grid.buses[i].type == BusType::Slack) {
      if (slack != n) throw GridError("more than one slack bus");
      slack = i;
    }
  if (slack == n) throw GridError("no slack bus");

  Eigen::MatrixXcd y = build_admittance(grid);

  // Scheduled injections: fixed generation minus load. Slack and PV
  // generator outputs are solved, not scheduled (P at PV buses is).
  std::vector<double> p_sched(n, 0.0), q_sched(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    p_sched[i] = -grid.buses[i].p_load_pu - (extra_p.empty() ? 0.0 : extra_p[i]);
    q_sched[i] = -grid.buses[i].q_load_pu - (extra_q.empty() ? 0.0 : extra_q[i]);
  }
  for (const auto& gen : grid.generators) {
    std::size_t i = grid.bus_index(gen.bus);
    if (i == slack) continue;
    p_sched[i] += gen.p_pu;
    if (grid.buses[i].type == BusType::PQ) q_sched[i] += gen.q_pu;
  }

  // Unknowns: angles at non-slack buses, magnitudes at PQ buses.
  std::vector<std::size_t> ang_vars, mag_vars;
  for (std::size_t i = 0; i < n; ++i) {
    if (i == slack) continue;
    ang_vars.push_back(i);
    if (grid.buses[i].type == BusType::PQ) mag_vars.push_back(i);
  }
  const std::size_t na = ang_vars.size(), nm = mag_vars.size();

  std::vector<double> vm(n, kVmSetpoint), va(n, 0.0);
  std::vector<double> p_calc, q_calc;

  PowerFlowSolution sol;
  sol.iterations = 0;
  for (;;) {
    detail::calc_injections(y, vm, va, p_calc, q_calc);

    Eigen::VectorXd mismatch(na + nm);
    for (std::size_t a = 0; a < na; ++a)
      mismatch(a) = p_sched[ang_vars[a]] - p_calc[ang_vars[a]];
    for (std::size_t m = 0; m < nm; ++m)
      mismatch(na + m) = q_sched[mag_vars[m]] - q_calc[mag_vars[m]];

    sol.max_residual_pu = (na + nm) ? mismatch.cwiseAbs().maxCoeff() : 0.0;
    if (sol.max_residual_pu < kPfTolerance) {
      sol.converged = true;
      break;
    }
    if (sol.iterations >= kPfMaxIterations) break;

    Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(na + nm, na + nm);
    auto dp_dang = [&](std::size_t i, std::size_t k) {
      if (i == k) return -q_calc[i] - y(i, i).imag() * vm[i] * vm[i];
      double ang = va[i] - va[k];
      return vm[i] * vm[k] *
             (y(i, k).real() * std::sin(ang) - y(i, k).imag() * std::cos(ang));
    };
    auto dp_dmag = [&](std::size_t i, std::size_t k) {
      if (i == k) return p_calc[i] / vm[i] + y(i, i).real() * vm[i];
      double ang = va[i] - va[k];
      return vm[i] *
             (y(i, k).real() * std::cos(ang) + y(i, k).imag() * std::sin(ang));
    };
    auto dq_dang = [&](std::size_t i, std::size_t k) {
      if (i == k) return p_calc[i] - y(i, i).real() * vm[i] * vm[i];
      double ang = va[i] - va[k];
      return -vm[i] * vm[k] *
             (y(i, k).real() * std::cos(ang) + y(i, k).imag() * std::sin(ang));
    };
    auto dq_dmag = [&](std::size_t i, std::size_t k) {
      if (i == k) return q_calc[i] / vm[i] - y(i, i).imag() * vm[i];
      double ang = va[i] - va[k];
      return vm[i] *
             (y(i, k).real() * std::sin(ang) - y(i, k).imag() * std::cos(ang));
    };
    for (std::size_t a = 0; a < na; ++a) {
      for (std::size_t a2 = 0; a2 < na; ++a2)
        jac(a, a2) = dp_dang(ang_vars[a], ang_vars[a2]);
      for (std::size_t m = 0; m < nm; ++m)
        jac(a, na + m) = dp_dmag(ang_vars[a], mag_vars[m]);
    }
    for (std::size_t m = 0; m < nm; ++m) {
      for (std::size_t a2 = 0; a2 < na; ++a2)
        jac(na + m, a2) = dq_dang(mag_vars[m], ang_vars[a2]);
      for (std::size_t m2 = 0; m2 < nm; ++m2)
        jac(na + m, na + m2) = dq_dmag(mag_vars[m], mag_vars[m2]);
    }

    Eigen::VectorXd step = jac.partialPivLu().solve(mismatch);
    for (std::size_t a = 0; a < na; ++a) va[ang_vars[a]] += step(a);
    for (std::size_t m = 0; m < nm; ++m) vm[mag_vars[m]] += step(na + m);
    ++sol.iterations;
  }

  detail::calc_injections(y, vm, va, p_calc, q_calc);
  sol.vm_pu = vm;
  sol.angle_rad = va;
  sol.gen_p_pu.resize(grid.generators.size());
  sol.gen_q_pu.resize(grid.generators.size());
  for (std::size_t g = 0; g < grid.generators.size(); ++g) {
    const auto& gen = grid.generators[g];
    std::size_t i = grid.bus_index(gen.bus);
    double load_p = grid.buses[i].p_load_pu + (extra_p.empty() ? 0.0 : extra_p[i]);
    double load_q = grid.buses[i].q_load_pu + (extra_q.empty() ? 0.0 : extra_q[i]);
    if (i == slack) {
      sol.gen_p_pu[g] = p_calc[i] + load_p;
      sol.gen_q_pu[g] = q_calc[i] + load_q;
    } else if (grid.buses[i].type == BusType::PV) {
      sol.gen_p_pu[g] = gen.p_pu;
      sol.gen_q_pu[g] = q_calc[i] + load_q;
    } else {
      sol.gen_p_pu[g] = gen.p_pu;
      sol.gen_q_pu[g] = gen.q_pu;
    }
  }
  return sol;
}

struct DispatchResult {
  PowerFlowSolution solution;
  std::vector<double> gen_p_pu;  // convenience copies of solution vectors
  std::vector<double> gen_q_pu;
};

/// Superpose station charging energy on the bus loads and re-solve.
/// Energy is averaged over the horizon (kWh / h / 1000 -> MW -> pu),
/// non-slack generators pick up the added load by participation factor,
/// and the slack closes the remaining mismatch including losses.
inline DispatchResult dispatch_with_ev(const GridCase& grid,
                                       const std::map<int, double>& ev_kwh_by_bus,
                                       double horizon_h) {
  if (horizon_h <= 0.0) throw GridError("dispatch horizon must be positive");
  const std::size_t n = grid.buses.size();
  std::vector<double> extra_p(n, 0.0);
  double added_total = 0.0;
  for (const auto& [bus_id, kwh] : ev_kwh_by_bus) {
    if (kwh < 0.0) throw GridError("negative EV energy at bus " +
                                   std::to_string(bus_id));
    double p_pu = kwh / horizon_h / 1000.0 / grid.base_mva;
    extra_p[grid.bus_index(bus_id)] += p_pu;
    added_total += p_pu;
  }

  GridCase dispatched = grid;
  for (auto& gen : dispatched.generators) {
    std::size_t i = grid.bus_index(gen.bus);
    if (grid.buses[i].type == BusType::Slack) continue;
    gen.p_pu += gen.participation * added_total;
  }

  DispatchResult result;
  result.solution = solve_power_flow(dispatched, extra_p);
  result.gen_p_pu = result.solution.gen_p_pu;
  result.gen_q_pu = result.solution.gen_q_pu;
  return result;
}

/// Squared 2-norm deviation of generating power between two dispatches.
inline double disturbance(const std::vector<double>& base_p,
                          const std::vector<double>& base_q,
                          const std::vector<double>& ev_p,
                          const std::vector<double>& ev_q) {
  if (base_p.size() != ev_p.size() || base_q.size() != ev_q.size() ||
      base_p.size() != base_q.size())
    throw GridError("generator power vectors have mismatched lengths");
  double b = 0.0;
  for (std::size_t i = 0; i < base_p.size(); ++i) {
    double dp = base_p[i] - ev_p[i];
    double dq = base_q[i] - ev_q[i];
    b += dp * dp + dq * dq;
  }
  return b;
}

/// Locational marginal price at a bus (input data; no OPF here).
inline double lmp_at(const GridCase& grid, int bus_id) {
  return grid.buses[grid.bus_index(bus_id)].lmp_per_kwh;
}

}  // namespace evplace
