"""
Cost against emission
=====================

Sweep emission caps between the greenest and the cheapest reachable
charging plans on the five-bus case, and compare with everyone plugging in
at midnight.
"""

# %%
from evmopf import samples
from evmopf.pareto import benchmark_point, emission_bounds, prepare, sweep

inst = prepare(samples.demo_instance("case5", "summer"))
lbe, ube = emission_bounds(inst)
print(f"marginal EV emission can range from {lbe:.0f} to {ube:.0f} kg")

# %%
points = sweep(inst, n=5)
bench = benchmark_point(inst)
print(f"{'cap kg':>10} {'cost':>12} {'bound':>12} {'gap %':>9} {'emission kg':>12}")
for p in points + [bench]:
    print(f"{p.cap:10.0f} {p.ub:12.2f} {p.lb:12.2f} {p.gap:9.2e} {p.emission:12.0f}  {p.tag}")

# %%
better = [p for p in points if p.ub <= bench.ub and p.emission <= bench.emission]
print(len(better), "of", len(points), "coordinated plans beat midnight charging on both counts")

# %%
# Hourly MW the fleet adds to generation, and what it feeds back, for the
# greenest and the cheapest plan
green, cheap = points[0], points[-1]
print("hour  green:add  green:v2g  cheap:add  cheap:v2g")
for t in range(inst.horizon):
    print(f"{t:4d} {green.hourly['gen_for_ev'][t]:10.2f} {green.hourly['v2g_power'][t]:10.2f}"
          f" {cheap.hourly['gen_for_ev'][t]:10.2f} {cheap.hourly['v2g_power'][t]:10.2f}")
