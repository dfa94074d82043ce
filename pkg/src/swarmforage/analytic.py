"""Rate parameters of the generalized foraging ODE, derived from scenario geometry.

The chain is: acquisition density -> expected acquisition location/distance ->
nest shortening ``d_cr`` -> single-robot homing time -> swarm diffusion ->
block encounter rate -> estimated avoiding population -> robot encounter rate
-> interference-adjusted homing time.  Everything here is a pure function of
its inputs.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass
from functools import lru_cache

import numpy as np

from .errors import (
    ClampedRateWarning,
    DegenerateDensityError,
    DegenerateScenarioError,
    ModelDomainError,
    QuadratureError,
    SignConfigurationError,
)
from .scenario import Scenario

CONTROL_PERIOD = 0.2  # s; reference time in the CRW displacement formula
QUAD_TOL = 1e-8
QUAD_ORDER = 12
QUAD_MAX_DEPTH = 9


@dataclass(frozen=True)
class DiffusionQuantities:
    d_xy: float
    d_theta: float
    d_swarm: float
    sigma_m: float


@dataclass(frozen=True)
class ModelParams:
    tau_h1: float
    tau_h: float
    tau_av: float
    alpha_b: float
    alpha_r: float
    alpha_r1: float
    n_av1: float
    chi_m: float
    d_cr: float
    x_eacq: tuple[float, float]
    acq_distance: float
    n_av_hat: float
    diffusion: DiffusionQuantities

    def to_kv(self) -> str:
        """Flat ``key = value`` block, 12 significant digits."""
        flat = asdict(self)
        diff = flat.pop("diffusion")
        x, y = flat.pop("x_eacq")
        flat["x_eacq_x"] = x
        flat["x_eacq_y"] = y
        flat.update({f"diffusion.{k}": v for k, v in diff.items()})
        return "\n".join(f"{k} = {float(v):.12g}" for k, v in flat.items()) + "\n"


# -- acquisition density -----------------------------------------------------


def _density_offset(rho: float) -> float:
    """The ``ln(rho) / (2 rho)`` term subtracted from sqrt(distance)."""
    return math.log(rho) / (2.0 * rho)


def _cluster_key(s: Scenario):
    return (s.arena.nest_center, tuple((c.bounds, c.density) for c in s.clusters))


def _min_distance_to_rect(p, bounds) -> float:
    x0, y0, x1, y1 = bounds
    dx = max(x0 - p[0], 0.0, p[0] - x1)
    dy = max(y0 - p[1], 0.0, p[1] - y1)
    return math.hypot(dx, dy)


_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(QUAD_ORDER)


def _gl_rect(f, x0, y0, x1, y1):
    hx, hy = (x1 - x0) / 2, (y1 - y0) / 2
    xs = x0 + hx * (_GL_NODES + 1)
    ys = y0 + hy * (_GL_NODES + 1)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    W = np.outer(_GL_WEIGHTS, _GL_WEIGHTS) * hx * hy
    vals = f(X, Y)  # (k, n, n)
    return np.tensordot(vals, W, axes=([1, 2], [0, 1]))


def _adaptive_rect(f, bounds, tol, depth=0, whole=None):
    x0, y0, x1, y1 = bounds
    if whole is None:
        whole = _gl_rect(f, x0, y0, x1, y1)
    xm, ym = (x0 + x1) / 2, (y0 + y1) / 2
    quads = [(x0, y0, xm, ym), (xm, y0, x1, ym), (x0, ym, xm, y1), (xm, ym, x1, y1)]
    parts = [_gl_rect(f, *q) for q in quads]
    refined = np.sum(parts, axis=0)
    scale = max(abs(refined[0]), 1e-300)
    change = abs(refined[0] - whole[0]) / scale
    if change <= tol:
        return refined
    if depth >= QUAD_MAX_DEPTH:
        if change > 1e-6:
            raise QuadratureError(f"quadrature did not converge (relative change {change:.3g})")
        return refined
    return np.sum([_adaptive_rect(f, q, tol, depth + 1, p) for q, p in zip(quads, parts)], axis=0)


@lru_cache(maxsize=256)
def _acq_moments(key) -> np.ndarray:
    """Unnormalized integrals of [p, p*x, p*y, p*r] summed over clusters."""
    nest, clusters = key
    nx, ny = nest
    total = np.zeros(4)
    for bounds, rho in clusters:
        x0, y0, x1, y1 = bounds
        if rho <= 0:
            continue  # the density tends to zero as rho -> 0+
        if x1 - x0 <= 0 or y1 - y0 <= 0:
            continue
        c = _density_offset(rho)
        if math.sqrt(_min_distance_to_rect(nest, bounds)) - c <= 0:
            raise ModelDomainError("acquisition density denominator vanishes inside a cluster")

        def f(X, Y, c=c):
            r = np.hypot(X - nx, Y - ny)
            w = 1.0 / (np.sqrt(r) - c) ** 2
            return np.stack([w, w * X, w * Y, w * r])

        total += _adaptive_rect(f, bounds, QUAD_TOL)
    if not total[0] > 0:
        raise DegenerateDensityError("no cluster with positive block density")
    return total


def _point_like_location(s: Scenario):
    # clusters with zero extent carry their mass at the center
    pts = [(c.center, c.block_count) for c in s.clusters if c.area == 0 and c.block_count > 0]
    return pts


def acq_normalization(s: Scenario) -> float:
    """The constant that makes the acquisition density integrate to one."""
    return 1.0 / _acq_moments(_cluster_key(s))[0]


def acq_pdf(s: Scenario, x) -> np.ndarray | float:
    """Block acquisition probability density at point(s) ``x`` (shape ``(..., 2)``)."""
    pts = np.asarray(x, dtype=float)
    scalar = pts.ndim == 1
    pts = np.atleast_2d(pts)
    px, py = pts[..., 0], pts[..., 1]
    out = np.zeros(px.shape)
    assigned = np.zeros(px.shape, dtype=bool)
    nx, ny = s.arena.nest_center
    C = None
    for cl in s.clusters:
        inside = cl.contains(px, py) & ~assigned
        if not inside.any():
            continue
        rho = cl.density
        if not rho > 0:
            raise DegenerateDensityError("point lies in a cluster with zero block density")
        if C is None:
            C = acq_normalization(s)
        r = np.hypot(px[inside] - nx, py[inside] - ny)
        denom = np.sqrt(r) - _density_offset(rho)
        if np.any(denom <= 0):
            raise ModelDomainError("acquisition density denominator is non-positive")
        out[inside] = C / denom**2
        assigned |= inside
    return float(out[0]) if scalar else out.reshape(np.asarray(x).shape[:-1])


def expected_acq_location(s: Scenario) -> np.ndarray:
    """Mean acquisition point ``(E[x], E[y])``."""
    pts = _point_like_location(s)
    if pts and all(c.area == 0 for c in s.clusters):
        w = np.array([b for _, b in pts], dtype=float)
        return (np.array([p for p, _ in pts]) * w[:, None]).sum(0) / w.sum()
    m = _acq_moments(_cluster_key(s))
    return np.array([m[1] / m[0], m[2] / m[0]])


def expected_acq_distance(s: Scenario) -> float:
    """Mean distance from the nest point at which blocks are acquired.

    This is the quantity the homing time and the diffusion time are built on;
    it stays well defined for symmetric layouts where the mean acquisition
    *point* coincides with the nest.
    """
    pts = _point_like_location(s)
    if pts and all(c.area == 0 for c in s.clusters):
        nest = s.nest_center
        w = np.array([b for _, b in pts], dtype=float)
        d = np.array([np.linalg.norm(np.asarray(p) - nest) for p, _ in pts])
        return float((w * d).sum() / w.sum())
    m = _acq_moments(_cluster_key(s))
    return float(m[3] / m[0])


# -- homing ------------------------------------------------------------------


def congestion_shortening(nest_side: float, nest_height: float | None = None) -> float:
    """Mean distance from the nest center of a uniform point in the nest.

    Square nest of side L: ``(L/6)(sqrt(2) + ln(1 + sqrt(2)))``.  A rectangular
    nest uses the analogous closed form for half-sides ``p, q``.
    """
    if nest_side < 0 or (nest_height is not None and nest_height < 0):
        raise ValueError("nest dimensions must be non-negative")
    if nest_height is None or nest_height == nest_side:
        return nest_side / 6.0 * (math.sqrt(2.0) + math.log(1.0 + math.sqrt(2.0)))
    p, q = nest_side / 2, nest_height / 2
    if p == 0 or q == 0:
        return max(p, q) / 2
    d = math.hypot(p, q)
    integral = (2 * p * q * d + p**3 * math.log((q + d) / p) + q**3 * math.log((p + d) / q)) / 6
    return integral / (p * q)


def homing_time_single(s: Scenario, x_eacq, d_cr: float | None = None) -> float:
    """Single-robot homing time.  ``x_eacq`` may be a point or a distance."""
    if np.ndim(x_eacq) == 0:
        dist = float(x_eacq)
    else:
        dist = float(np.linalg.norm(np.asarray(x_eacq, dtype=float) - s.nest_center))
    if d_cr is None:
        d_cr = congestion_shortening(s.arena.nest_side)
    return max(0.0, (dist - d_cr) / s.homing_speed)


def homing_time(tau_h1: float, alpha_r: float, tau_av: float, n: int) -> float:
    if n < 1:
        raise ValueError("n must be >= 1")
    return tau_h1 * (1.0 + alpha_r * tau_av / n)


# -- diffusion and encounter rates -------------------------------------------


def angular_diffusion(theta: float, sign: int = 1) -> float:
    """Integral of ``(1 +/- cos 2t) f(t)`` with ``f`` uniform on ``[-theta, theta]``."""
    if sign not in (1, -1):
        raise ValueError("sign must be +1 or -1")
    return 1.0 + sign * math.sin(2 * theta) / (2 * theta)


def diffusion_quantities(
    s: Scenario, sigma_m: float, t_ref: float = CONTROL_PERIOD, sign: int = 1
) -> DiffusionQuantities:
    theta = s.crw_half_angle
    if not (0 < theta <= math.pi):
        raise ValueError("theta must lie in (0, pi]")
    if t_ref <= 0:
        raise ValueError("t_ref must be positive")
    d_theta = angular_diffusion(theta, sign)
    if not d_theta > 0:
        raise SignConfigurationError(f"angular diffusion {d_theta:.3g} is not positive (sign={sign})")
    d_xy = s.search_speed**2 * d_theta / (4 * t_ref)
    d_swarm = s.robot_count * sigma_m * d_xy / d_theta
    return DiffusionQuantities(d_xy=d_xy, d_theta=d_theta, d_swarm=d_swarm, sigma_m=sigma_m)


def acquisition_rate_at_distance(distance: float, dq: DiffusionQuantities) -> float:
    if not distance > 0:
        raise DegenerateScenarioError("expected acquisition point coincides with the nest")
    return 2.0 * dq.d_swarm / distance**2


def block_encounter_rate(x_eacq, x_n, dq: DiffusionQuantities) -> float:
    """Swarm block-acquisition rate: inverse of the RMS diffusion time to ``x_eacq``."""
    dist = float(np.linalg.norm(np.asarray(x_eacq, dtype=float) - np.asarray(x_n, dtype=float)))
    return acquisition_rate_at_distance(dist, dq)


def estimate_n_avoiding(n_av1: float, dq: DiffusionQuantities, chi_m: float) -> float:
    if n_av1 < 0:
        raise ValueError("n_av1 must be non-negative")
    return n_av1 * (dq.d_swarm / dq.d_theta) * chi_m


def robot_encounter_rate(n_av_hat: float, tau_av: float, alpha_r1: float) -> float:
    """Little's-law arrival rate into avoidance, less the wall share."""
    if not tau_av > 0:
        raise ValueError("tau_av must be positive")
    rate = n_av_hat / tau_av - alpha_r1 * n_av_hat
    if rate < 0:
        warnings.warn(
            f"robot encounter rate {rate:.3g} < 0 (wall interference exceeds total); clamped to 0",
            ClampedRateWarning,
            stacklevel=2,
        )
        return 0.0
    return rate


def derive_params(
    s: Scenario,
    sigma_m: float,
    chi_m: float,
    tau_av: float,
    alpha_r1: float,
    n_av1: float,
    *,
    t_ref: float = CONTROL_PERIOD,
    sign: int = 1,
) -> ModelParams:
    """Compose the full rate derivation for one scenario."""
    vals = (sigma_m, chi_m, tau_av, alpha_r1, n_av1)
    if not all(math.isfinite(v) for v in vals):
        raise ValueError("derive_params inputs must be finite")
    x_eacq = expected_acq_location(s)
    dist = expected_acq_distance(s)
    d_cr = congestion_shortening(s.arena.nest_side)
    tau_h1 = homing_time_single(s, dist, d_cr)
    dq = diffusion_quantities(s, sigma_m, t_ref=t_ref, sign=sign)
    alpha_b = acquisition_rate_at_distance(dist, dq)
    n_av_hat = estimate_n_avoiding(n_av1, dq, chi_m)
    alpha_r = robot_encounter_rate(n_av_hat, tau_av, alpha_r1)
    tau_h = homing_time(tau_h1, alpha_r, tau_av, s.robot_count)
    return ModelParams(
        tau_h1=tau_h1,
        tau_h=tau_h,
        tau_av=tau_av,
        alpha_b=alpha_b,
        alpha_r=alpha_r,
        alpha_r1=alpha_r1,
        n_av1=n_av1,
        chi_m=chi_m,
        d_cr=d_cr,
        x_eacq=(float(x_eacq[0]), float(x_eacq[1])),
        acq_distance=dist,
        n_av_hat=n_av_hat,
        diffusion=dq,
    )
