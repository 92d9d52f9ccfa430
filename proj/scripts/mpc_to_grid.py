#!/usr/bin/env python3
"""Convert a MATPOWER case file (.m) to the sectioned grid CSV format.

Bus types map 3->slack, 2->pv, 1->pq. Loads and generator injections are
rescaled from MW/MVAr to per-unit on the case's own MVA base. Out-of-service
generators and branches are dropped. Participation factors, which MATPOWER
does not carry, are assigned proportionally to Pmax (equal shares when no
Pmax data exists) and normalized to sum to one.

Locational prices come from bus column 14 (LAM_P, $/MWh) when the case is an
OPF solution; otherwise the uniform --lmp value is used. Off-nominal
transformer ratios and phase shifts are not representable and are flattened
to plain lines with a warning.
"""

import argparse
import re
import sys


def fmt(x):
    return "%.17g" % x


def parse_matrix(text, name):
    m = re.search(r"mpc\.%s\s*=\s*\[(.*?)\];" % re.escape(name), text, re.S)
    if not m:
        return None
    rows = []
    for chunk in m.group(1).replace("\n", ";").split(";"):
        chunk = chunk.split("%")[0].strip()
        if not chunk:
            continue
        rows.append([float(tok) for tok in chunk.replace(",", " ").split()])
    return rows


def parse_scalar(text, name):
    m = re.search(r"mpc\.%s\s*=\s*([0-9.eE+-]+)\s*;" % re.escape(name), text)
    return float(m.group(1)) if m else None


def strip_comments(text):
    return "\n".join(line.split("%")[0] for line in text.splitlines())


def convert(text, uniform_lmp):
    text = strip_comments(text)
    base_mva = parse_scalar(text, "baseMVA")
    buses = parse_matrix(text, "bus")
    gens = parse_matrix(text, "gen")
    branches = parse_matrix(text, "branch")
    if base_mva is None or not buses:
        raise SystemExit("error: file does not look like a MATPOWER case")

    lines = ["base_mva," + fmt(base_mva)]

    lines.append("[buses]")
    lines.append("id,type,p_load_pu,q_load_pu,lmp_per_kwh")
    type_names = {1: "pq", 2: "pv", 3: "slack"}
    for row in buses:
        bus_type = type_names.get(int(row[1]))
        if bus_type is None:
            print("warning: skipping isolated bus %d" % int(row[0]),
                  file=sys.stderr)
            continue
        lmp = uniform_lmp
        if len(row) >= 14 and row[13] != 0.0:
            lmp = row[13] / 1000.0  # LAM_P is $/MWh, the CSV wants $/kWh
        lines.append("%d,%s,%s,%s,%s" % (int(row[0]), bus_type,
                                         fmt(row[2] / base_mva),
                                         fmt(row[3] / base_mva), fmt(lmp)))

    lines.append("[branches]")
    lines.append("from,to,r_pu,x_pu,b_pu")
    for row in branches or []:
        if len(row) >= 11 and row[10] == 0.0:
            continue  # out of service
        if len(row) >= 10 and (row[8] not in (0.0, 1.0) or row[9] != 0.0):
            print("warning: branch %d-%d has an off-nominal transformer, "
                  "treated as a line" % (int(row[0]), int(row[1])),
                  file=sys.stderr)
        lines.append("%d,%d,%s,%s,%s" % (int(row[0]), int(row[1]),
                                         fmt(row[2]), fmt(row[3]),
                                         fmt(row[4])))

    active = [row for row in gens or []
              if len(row) < 8 or row[7] > 0.0]
    pmax_total = sum(row[8] for row in active if len(row) >= 9)
    lines.append("[generators]")
    lines.append("bus,p_pu,q_pu,participation")
    for row in active:
        if pmax_total > 0.0 and len(row) >= 9:
            share = row[8] / pmax_total
        else:
            share = 1.0 / len(active)
        lines.append("%d,%s,%s,%s" % (int(row[0]), fmt(row[1] / base_mva),
                                      fmt(row[2] / base_mva), fmt(share)))
    return "\n".join(lines) + "\n"


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("case", help="MATPOWER .m case file")
    ap.add_argument("--out", help="output CSV path (default: stdout)")
    ap.add_argument("--lmp", type=float, default=0.1,
                    help="uniform price for buses without LAM_P data "
                         "($/kWh, default 0.1)")
    args = ap.parse_args()

    with open(args.case) as f:
        csv = convert(f.read(), args.lmp)
    if args.out:
        with open(args.out, "w") as f:
            f.write(csv)
    else:
        sys.stdout.write(csv)


if __name__ == "__main__":
    main()
