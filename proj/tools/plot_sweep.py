#!/usr/bin/env python3
"""Plot the JSON written by `taas sweep --json`.

    plot_sweep.py sweep.json -o sweep.png
    plot_sweep.py --check sweep.json      # schema check only, no matplotlib
"""

import argparse
import json
import sys
from collections import defaultdict

import jsonschema

ROW = {
    "type": "object",
    "required": [
        "taas_nodes", "seed", "committed", "aborted", "committed_per_sec",
        "ops_per_sec", "txn_p50_us", "txn_p99_us", "peer_messages", "consistent",
    ],
    "properties": {
        "taas_nodes": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer", "minimum": 0},
        "committed": {"type": "integer", "minimum": 0},
        "aborted": {"type": "integer", "minimum": 0},
        "committed_per_sec": {"type": "number", "minimum": 0},
        "ops_per_sec": {"type": "number", "minimum": 0},
        "txn_p50_us": {"type": "number", "minimum": 0},
        "txn_p99_us": {"type": "number", "minimum": 0},
        "peer_messages": {"type": "integer", "minimum": 0},
        "consistent": {"type": "boolean"},
    },
}
SCHEMA = {"type": "array", "minItems": 1, "items": ROW}


def load(path):
    with open(path) as f:
        rows = json.load(f)
    jsonschema.validate(rows, SCHEMA)
    return rows


def by_nodes(rows, field):
    acc = defaultdict(list)
    for r in rows:
        acc[r["taas_nodes"]].append(r[field])
    xs = sorted(acc)
    return xs, [acc[x] for x in xs]


def plot(rows, out):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, (a, b) = plt.subplots(1, 2, figsize=(10, 4))
    xs, tput = by_nodes(rows, "committed_per_sec")
    mean = [sum(v) / len(v) for v in tput]
    a.errorbar(xs, mean,
               yerr=[[m - min(v) for m, v in zip(mean, tput)], [max(v) - m for m, v in zip(mean, tput)]],
               marker="o", capsize=3)
    a.set_xlabel("TaaS nodes")
    a.set_ylabel("committed txn/s (virtual time)")
    a.set_xticks(xs)
    a.grid(alpha=0.3)

    for field, label in (("txn_p50_us", "p50"), ("txn_p99_us", "p99")):
        xs, lat = by_nodes(rows, field)
        b.plot(xs, [sum(v) / len(v) / 1000 for v in lat], marker="o", label=label)
    b.set_xlabel("TaaS nodes")
    b.set_ylabel("txn latency (ms)")
    b.set_xticks(xs)
    b.legend()
    b.grid(alpha=0.3)

    fig.tight_layout()
    fig.savefig(out, dpi=120)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("sweep")
    ap.add_argument("-o", "--out", default="sweep.png")
    ap.add_argument("--check", action="store_true", help="validate only")
    args = ap.parse_args()
    try:
        rows = load(args.sweep)
    except (json.JSONDecodeError, jsonschema.ValidationError) as e:
        print(f"{args.sweep}: invalid sweep output: {e}", file=sys.stderr)
        return 1
    if not all(r["consistent"] for r in rows):
        print("warning: some runs were not consistent", file=sys.stderr)
    if args.check:
        print(f"{args.sweep}: {len(rows)} rows ok")
        return 0
    plot(rows, args.out)
    print(f"wrote {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
