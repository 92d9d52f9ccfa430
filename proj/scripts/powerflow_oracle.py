#!/usr/bin/env python3
"""Independent power-flow check for sectioned grid CSV files.

Solves the AC power flow with numpy's own Newton iteration, sharing no code
with the library, and prints the bus voltages. With --compare it instead
reads a powerflow CSV produced by the CLI and reports the worst deviation,
so the two implementations can be checked against each other offline.

EV charging load can be superposed with --ev BUS=KWH (repeatable); energy is
averaged over --horizon hours, mirroring the library's dispatch convention:
non-slack generators absorb the added load by participation factor and the
slack bus closes the remaining mismatch.
"""

import argparse
import sys

import numpy as np

VM_SETPOINT = 1.0
TOLERANCE = 1e-10
MAX_ITERATIONS = 50


def load_grid(path):
    base_mva = None
    buses, branches, generators = [], [], []
    section = None
    header_pending = False
    with open(path) as f:
        for raw in f:
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if line in ("[buses]", "[branches]", "[generators]"):
                section = line
                header_pending = True
                continue
            if header_pending:
                header_pending = False
                continue
            cols = line.split(",")
            if section is None:
                if cols[0] != "base_mva":
                    raise SystemExit("error: expected base_mva before "
                                     "sections in " + path)
                base_mva = float(cols[1])
            elif section == "[buses]":
                buses.append((int(cols[0]), cols[1], float(cols[2]),
                              float(cols[3])))
            elif section == "[branches]":
                branches.append((int(cols[0]), int(cols[1]), float(cols[2]),
                                 float(cols[3]), float(cols[4])))
            else:
                generators.append((int(cols[0]), float(cols[1]),
                                   float(cols[2]), float(cols[3])))
    return base_mva, buses, branches, generators


def solve(base_mva, buses, branches, generators, ev_kwh, horizon_h):
    n = len(buses)
    index = {b[0]: i for i, b in enumerate(buses)}
    types = [b[1] for b in buses]
    slack = types.index("slack")

    ybus = np.zeros((n, n), dtype=complex)
    for f, t, r, x, b in branches:
        i, j = index[f], index[t]
        y = 1.0 / complex(r, x)
        ybus[i, i] += y + 1j * b / 2.0
        ybus[j, j] += y + 1j * b / 2.0
        ybus[i, j] -= y
        ybus[j, i] -= y

    p_spec = np.array([-b[2] for b in buses])
    q_spec = np.array([-b[3] for b in buses])
    added = np.zeros(n)
    for bus_id, kwh in ev_kwh.items():
        added[index[bus_id]] = kwh / horizon_h / 1000.0 / base_mva
    p_spec -= added

    # Non-slack generators pick up the total EV addition by participation.
    total_added = added.sum()
    for bus_id, p, q, share in generators:
        i = index[bus_id]
        extra = share * total_added if i != slack else 0.0
        p_spec[i] += p + extra
        q_spec[i] += q

    vm = np.full(n, VM_SETPOINT)
    angle = np.zeros(n)
    pv = [i for i in range(n) if types[i] == "pv"]
    pq = [i for i in range(n) if types[i] == "pq"]
    p_rows = pv + pq

    for iteration in range(1, MAX_ITERATIONS + 1):
        v = vm * np.exp(1j * angle)
        s_calc = v * np.conj(ybus @ v)
        dp = p_spec - s_calc.real
        dq = q_spec - s_calc.imag
        mismatch = np.concatenate([dp[p_rows], dq[pq]])
        if np.abs(mismatch).max() < TOLERANCE:
            return vm, angle, iteration, True

        # Numerical Jacobian keeps this solver honestly independent of
        # the library's analytic derivation.
        def residual(state):
            ang = angle.copy()
            mag = vm.copy()
            ang[p_rows] = state[:len(p_rows)]
            mag[pq] = state[len(p_rows):]
            vv = mag * np.exp(1j * ang)
            ss = vv * np.conj(ybus @ vv)
            return np.concatenate([p_spec[p_rows] - ss.real[p_rows],
                                   q_spec[pq] - ss.imag[pq]])

        state = np.concatenate([angle[p_rows], vm[pq]])
        m = len(state)
        jac = np.zeros((m, m))
        h = 1e-7
        base_res = residual(state)
        for c in range(m):
            bumped = state.copy()
            bumped[c] += h
            jac[:, c] = (residual(bumped) - base_res) / h
        state = state + np.linalg.solve(jac, -base_res)
        angle[p_rows] = state[:len(p_rows)]
        vm[pq] = state[len(p_rows):]
    return vm, angle, MAX_ITERATIONS, False


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("grid", help="sectioned grid CSV file")
    ap.add_argument("--ev", action="append", default=[], metavar="BUS=KWH",
                    help="EV charging energy to superpose at a bus (kWh)")
    ap.add_argument("--horizon", type=float, default=24.0,
                    help="averaging horizon for EV energy (hours)")
    ap.add_argument("--compare", metavar="CSV",
                    help="powerflow CSV from the CLI to check against")
    args = ap.parse_args()

    ev_kwh = {}
    for spec in args.ev:
        bus, _, kwh = spec.partition("=")
        ev_kwh[int(bus)] = ev_kwh.get(int(bus), 0.0) + float(kwh)

    base_mva, buses, branches, generators = load_grid(args.grid)
    vm, angle, iterations, converged = solve(base_mva, buses, branches,
                                             generators, ev_kwh, args.horizon)
    if not converged:
        print("error: did not converge in %d iterations" % iterations,
              file=sys.stderr)
        return 1

    if args.compare:
        theirs = {}
        with open(args.compare) as f:
            for line in f:
                line = line.strip()
                if not line or line.startswith("#") or line.startswith("bus,"):
                    continue
                cols = line.split(",")
                theirs[int(cols[0])] = (float(cols[1]), float(cols[2]))
        worst = 0.0
        for i, bus in enumerate(buses):
            tv, ta = theirs[bus[0]]
            worst = max(worst, abs(tv - vm[i]), abs(ta - angle[i]))
        print("# iterations,%d" % iterations)
        print("# max_deviation,%.3e" % worst)
        return 0 if worst < 1e-6 else 1

    print("# converged,1")
    print("# iterations,%d" % iterations)
    print("bus,vm_pu,angle_rad")
    for i, bus in enumerate(buses):
        print("%d,%.12g,%.12g" % (bus[0], vm[i], angle[i]))
    return 0


if __name__ == "__main__":
    sys.exit(main())
