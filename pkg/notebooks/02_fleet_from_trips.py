"""
From trip diaries to EV charging parameters
===========================================

Trip records become hourly energy needs per vehicle, vehicles are dealt into
one group per load bus, and each group gets charging limits and a minimum
stock that keeps it able to finish its next drive.
"""

# %%
import numpy as np

from evmopf import samples
from evmopf.fleet import (assign_groups, derive_charging_params, duration_matrix, energy_matrix,
                          filter_trips, form_groups, read_trips)

trips = read_trips(samples.data_path("trips.csv"))
kept = filter_trips(trips)
print(len(trips), "trips,", len(kept), "kept after dropping trucks, nonhousehold and too-long trips")

# %%
# Hours of driving inside each one-hour period
delta = duration_matrix(kept)
print(delta[:3, 6:10])
print("row sums equal trip durations:",
      np.allclose(delta.sum(axis=1), [r.end - r.start for r in kept]))

# %%
em = energy_matrix(delta, kept)
print("vehicles", len(em.vehicle_ids), "fleet kWh per day", em.omega.sum().round(2))

# %%
net = samples.load_case("case5")
groups = form_groups(em, len(net.load_buses))
placed = assign_groups(net, groups)
for bus, g in sorted(placed.items()):
    print("bus", net.bus_ids[bus], "load", net.buses[bus].pd * net.base_mva, "MW",
          "survey-weighted demand", round(g.total, 1), "kWh", len(g.members), "vehicles")

# %%
# The group's average vehicle, scaled by its survey weight and by the grid weight
bus, g = max(placed.items(), key=lambda kv: kv[1].total)
p = derive_charging_params(g.profile, 0.9, g.vehicles)
print("hourly need    ", np.round(p.c, 2))
print("max charge     ", np.round(p.a_max, 2))
print("minimum stock  ", np.round(p.s_min, 2))
