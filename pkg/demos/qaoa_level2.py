# Level-2 QAOA on a triangular lattice: four ways to get an edge correlation, then a small RQAOA run.
# Run with: python3 demos/qaoa_level2.py

# %%
import numpy as np

from forrelate.graph_core import generate_grid, generate_triangular
from forrelate.qaoa import (
    IsingInstance,
    QAOAAngles,
    energy,
    exact_maxcut,
    rqaoa,
    zz_mean_Adoubleprime,
    zz_mean_Aprime,
    zz_mean_forrelation,
    zz_mean_statevector,
)

inst = IsingInstance.random_pm1(generate_triangular(4), 42)
angles = QAOAAngles(1.44433, 3.56786, 0.937498, 4.93861)
edge = inst.graph.edge_list()[4]
print("edge", edge)
print("state vector :", round(zz_mean_statevector(inst, edge, angles), 6))
print("A'           :", round(zz_mean_Aprime(inst, edge, angles), 6))
print("A''          :", round(zz_mean_Adoubleprime(inst, edge, angles), 6))
rep = zz_mean_forrelation(inst, edge, angles, 0.1, np.random.default_rng(1))
print("forrelation  :", round(rep.value, 6), f"({rep.samples} samples)")

# %% Total energy, exact lightcone methods chosen automatically.
print("energy:", round(energy(inst, angles, 0.05, np.random.default_rng(2)), 6))

# %% RQAOA on a 4x4 grid against exhaustive search.
grid = IsingInstance.random_pm1(generate_grid(4, 4), 7)
res = rqaoa(grid, gamma_grid_size=10, seed=7)
print("\n".join(res.trace_lines(timing=False)))
print("achieved", res.cost, "optimum", exact_maxcut(grid)[1])
