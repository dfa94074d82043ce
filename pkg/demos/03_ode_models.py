"""
Integrating the population models
=================================

Solve the generalized model to steady state, confirm the closed-form steady
values and compare with the older pairwise-interaction model.
"""

from swarmforage.analytic import derive_params
from swarmforage.odemodel import LegacyParams, predict_performance, solve_generalized, solve_legacy
from swarmforage.scenario import make_density_scenario

s = make_density_scenario("DS", 20, 0.01, seed=2)
mp = derive_params(s, 10.0, 5.0, 2.0, 0.004, 0.008)

# %%
# Fixed-step RK4 until the state stops changing.
rep = solve_generalized(mp, s)
st = rep.steady_state
print(f"converged = {rep.converged} at t = {rep.times[-1]:.0f} s")
print(f"N_h  = {st.n_h:.4f}  (alpha_b * tau_h  = {mp.alpha_b * mp.tau_h:.4f})")
print(f"N_av = {st.n_av:.4f}  (alpha_r * tau_av = {mp.alpha_r * mp.tau_av:.4f})")
print(f"robots = {st.n_robots:.12f}, blocks = {st.b_total:.3f}")
print(f"P = {predict_performance(mp):.5f} blocks/s")

# %%
# Trajectories export as CSV.
print(rep.to_csv().splitlines()[:3])

# %%
# The pairwise model depletes blocks; its time average is what gets compared.
legacy = solve_legacy(LegacyParams(1e-4, 1e-4, 1e-4, 100.0, 2.0), s, horizon=20_000.0, stride=50)
y = legacy.trajectory
print(f"legacy: blocks {y[0, 4]:.0f} -> {y[-1, 4]:.1f}, final N_h {y[-1, 1]:.3f}")
