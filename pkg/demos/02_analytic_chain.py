"""
From geometry to model rates
============================

Walk the analytic chain for a single-source scenario: the acquisition
density, the expected acquisition distance, the nest shortening, the
diffusion coefficients and finally the rates the ODE model consumes.
"""

import math

import numpy as np

from swarmforage.analytic import (
    acq_pdf,
    angular_diffusion,
    congestion_shortening,
    derive_params,
    expected_acq_distance,
    expected_acq_location,
)
from swarmforage.scenario import make_density_scenario

s = make_density_scenario("SS", 20, 0.01, seed=1)
nest = np.array(s.arena.nest_center)

# %%
# The density falls off with distance from the nest inside the cluster.
x0, y0, x1, y1 = s.clusters[0].bounds
ys = (y0 + y1) / 2
for x in np.linspace(x0, x1, 5):
    print(f"x = {x:5.1f}  pdf = {acq_pdf(s, np.array([x, ys])):.5f}")

ex = expected_acq_location(s)
print("E[x_acq] =", ex.round(3), " E[distance] =", round(expected_acq_distance(s), 3))

# %%
# Mean shortening of a homing trip by dropping anywhere inside the nest.
L = s.arena.nest_side
print(f"d_cr = {congestion_shortening(L):.4f} m for L = {L} m ({congestion_shortening(1.0):.5f} L)")

# %%
# Angular diffusion of the correlated random walk at theta = pi/36, both branches.
theta = s.crw_half_angle
print(f"D_theta(+) = {angular_diffusion(theta, 1):.5f}, D_theta(-) = {angular_diffusion(theta, -1):.5f}")

# %%
# The full derivation, with illustrative characterizations and single-robot values.
mp = derive_params(s, sigma_m=10.0, chi_m=5.0, tau_av=2.0, alpha_r1=0.004, n_av1=0.008)
print(mp.to_kv())
print(f"homing trips take {mp.tau_h:.1f} s; one block every {1 / mp.alpha_b:.1f} s (theta = {math.degrees(theta):.0f} deg)")
