"""
Lower and upper bounds on a small network
=========================================

A walk through one bundled case: parse it, relax the multi-period problem to
a second-order cone program, look at how tight the relaxation is, then fix
the EV schedule and recover a feasible AC operating point hour by hour.
"""

# %%
import numpy as np

from evmopf import samples
from evmopf.acopf import repair_schedule, solve_schedule, warm_start_from_socp
from evmopf.case import validate
from evmopf.conic import solve_instance
from evmopf.formulation import socp_consistency

net = samples.load_case("case3")
print(net.name, "buses", net.n_bus, "lines", net.n_line, "gens", net.n_gen)
print("diagnostics:", validate(net) or "none")

# %%
# Loads follow the summer shape, EV groups come from the bundled trip file.
inst = samples.demo_instance("case3", "summer")
print("periods", inst.horizon, "EV groups", inst.n_ev)
print("EV energy per day (MWh):", inst.ev_c.sum(axis=1) * inst.base_mva)

# %%
prog, sol = solve_instance(inst)
print(sol.status, "relaxed cost", round(sol.objective, 3), "certified bound", round(sol.bound, 3))

# cii cjj - cij^2 - sij^2 is zero when the relaxed point comes from real voltages
rep = socp_consistency(prog, sol.x, net)
print("largest rank residual", rep.max, "exact" if rep.exact else "not exact")

# %%
# The triangle has one cycle, so angle recovery reports its mismatch.  Each
# pair can be rank-exact while the angles still fail to close around the loop.
vi = prog.index
t = 18
ws = warm_start_from_socp(net, sol.x[vi["cii"]][:, t], sol.x[vi["cij"]][:, t], sol.x[vi["sij"]][:, t])
print("recovered |V|", np.round(ws.vm, 4), "cycle residuals", ws.cycle_residuals)

# %%
a, b = repair_schedule(inst, sol.x[vi["a"]], sol.x[vi["b"]])
starts = [warm_start_from_socp(net, sol.x[vi["cii"]][:, k], sol.x[vi["cij"]][:, k],
                               sol.x[vi["sij"]][:, k], sol.x[vi["pg"]][:, k], sol.x[vi["qg"]][:, k])
          for k in range(inst.horizon)]
result = solve_schedule(inst, a, b, starts)
print("all periods solved:", result.valid)
print("upper bound", round(result.cost, 3), "gap %", 100 * (1 - sol.bound / result.cost))
