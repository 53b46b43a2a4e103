"""
Plot recipe for a pareto run
============================

    evmopf pareto --config src/evmopf/data/demo.ini --out demo-out
    python notebooks/plot_frontier.py demo-out

Draws the frontier with the benchmark marked, and the hourly generation and
V2G curves of the cheapest and greenest points.  Needs matplotlib.
"""

import csv
import sys
from pathlib import Path

import matplotlib.pyplot as plt


def read(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo-out")
rows = read(out / "frontier.csv")
sweep = [r for r in rows if r["tag"] == "pareto" and r["valid"] == "true"]
bench = [r for r in rows if r["tag"] == "benchmark"]

fig, ax = plt.subplots(1, 3, figsize=(14, 4))
ax[0].plot([float(r["emission_change_pct"]) for r in sweep],
           [float(r["cost_change_pct"]) for r in sweep], "o-", label="coordinated")
for r in bench:
    ax[0].plot(float(r["emission_change_pct"]), float(r["cost_change_pct"]), "rs", label="midnight")
ax[0].set_xlabel("emission change vs gasoline (%)")
ax[0].set_ylabel("cost change vs no EVs (%)")
ax[0].legend()

for axis, k, title in ((ax[1], 0, "greenest cap"), (ax[2], len(sweep) - 1, "cheapest cap")):
    hourly = read(out / f"hourly_pareto_{k:02d}.csv")
    t = [int(h["period"]) for h in hourly]
    base = [float(h["gen_excl_ev"]) for h in hourly]
    ev = [float(h["gen_for_ev"]) for h in hourly]
    axis.stackplot(t, base, ev, labels=["without EVs", "for EVs"])
    axis.plot(t, [float(h["v2g_power"]) for h in hourly], "k--", label="V2G")
    axis.set_title(title)
    axis.set_xlabel("hour")
    axis.set_ylabel("MW")
ax[1].legend(loc="upper left")
fig.tight_layout()
fig.savefig(out / "frontier.png", dpi=120)
print("wrote", out / "frontier.png")
