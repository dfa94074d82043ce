"""Arenas, nests, block clusters and the four canonical block distributions.

Every scenario is an immutable value.  Geometry is axis-aligned: the arena is
``[0, width] x [0, height]``, the nest is a square, and block clusters are
rectangles described by their center and extent.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, InfeasibleGeometryError

KINDS = ("SS", "DS", "RN", "PL")

DEFAULT_THETA = math.pi / 36
DEFAULT_SPEED = 0.1  # m/s, both search and homing
DEFAULT_NEST_FRACTION = 0.1
DEFAULT_WALL_MARGIN = 0.5
DEFAULT_BLOCK_DENSITY = 1.0  # blocks per m^2 of distributable area
PL_COVERAGE = 0.2
PL_UNIT = 1.0
PL_EXPONENT = 2.0
PL_MAX_RETRIES = 1000

_EPS = 1e-9


@dataclass(frozen=True)
class Arena:
    width: float
    height: float
    nest_center: tuple[float, float]
    nest_side: float

    def __post_init__(self):
        if not (self.width > 0 and self.height > 0):
            raise ConfigError(f"arena dimensions must be positive, got {self.width}x{self.height}")
        if not self.nest_side > 0:
            raise ConfigError("nest_side must be positive")
        object.__setattr__(self, "nest_center", (float(self.nest_center[0]), float(self.nest_center[1])))
        x0, y0, x1, y1 = self.nest_bounds
        if x0 < -_EPS or y0 < -_EPS or x1 > self.width + _EPS or y1 > self.height + _EPS:
            raise ConfigError("nest region must lie inside the arena")

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def nest_bounds(self) -> tuple[float, float, float, float]:
        h = self.nest_side / 2
        cx, cy = self.nest_center
        return (cx - h, cy - h, cx + h, cy + h)


@dataclass(frozen=True)
class BlockCluster:
    """Rectangular sub-area where blocks are distributed.

    ``block_count`` is the (expected) number of blocks held by the cluster at
    t = 0; ``density`` follows from it.
    """

    center: tuple[float, float]
    dims: tuple[float, float]
    block_count: float

    def __post_init__(self):
        object.__setattr__(self, "center", (float(self.center[0]), float(self.center[1])))
        object.__setattr__(self, "dims", (float(self.dims[0]), float(self.dims[1])))
        if self.dims[0] < 0 or self.dims[1] < 0:
            raise ConfigError("cluster dims must be non-negative")
        if self.block_count < 0:
            raise ConfigError("block_count must be non-negative")

    @property
    def area(self) -> float:
        return self.dims[0] * self.dims[1]

    @property
    def density(self) -> float:
        return self.block_count / self.area if self.area > 0 else math.inf

    @property
    def bounds(self) -> tuple[float, float, float, float]:
        cx, cy = self.center
        hx, hy = self.dims[0] / 2, self.dims[1] / 2
        return (cx - hx, cy - hy, cx + hx, cy + hy)

    def contains(self, x, y):
        x0, y0, x1, y1 = self.bounds
        return (x >= x0) & (x <= x1) & (y >= y0) & (y <= y1)

    @classmethod
    def from_bounds(cls, x0, y0, x1, y1, block_count=0.0) -> BlockCluster:
        return cls(((x0 + x1) / 2, (y0 + y1) / 2), (x1 - x0, y1 - y0), block_count)


@dataclass(frozen=True)
class Scenario:
    arena: Arena
    clusters: tuple[BlockCluster, ...]
    kind: str
    robot_count: int
    total_blocks: int
    search_speed: float = DEFAULT_SPEED
    homing_speed: float = DEFAULT_SPEED
    crw_half_angle: float = DEFAULT_THETA
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "clusters", tuple(self.clusters))
        if self.kind not in KINDS:
            raise ConfigError(f"unknown scenario kind {self.kind!r}")
        if int(self.robot_count) != self.robot_count or self.robot_count < 1:
            raise ConfigError("robot_count must be a positive integer")
        if self.total_blocks < 1:
            raise ConfigError("total_blocks must be positive")
        if not (self.search_speed > 0 and self.homing_speed > 0):
            raise ConfigError("speeds must be positive")
        if not (0 < self.crw_half_angle <= math.pi):
            raise ConfigError("crw_half_angle must lie in (0, pi]")
        if not self.clusters:
            raise ConfigError("a scenario needs at least one block cluster")
        if sum(c.area for c in self.clusters) > self.arena.area * (1 + 1e-12):
            raise ConfigError("distributable area exceeds arena area")

    @property
    def nest_center(self) -> np.ndarray:
        return np.asarray(self.arena.nest_center, dtype=float)

    def with_robots(self, n: int) -> Scenario:
        return dataclasses.replace(self, robot_count=int(n))

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "arena": {
                "width": self.arena.width,
                "height": self.arena.height,
                "nest_center": list(self.arena.nest_center),
                "nest_side": self.arena.nest_side,
            },
            "clusters": [
                {"center": list(c.center), "dims": list(c.dims), "block_count": c.block_count}
                for c in self.clusters
            ],
            "robot_count": self.robot_count,
            "total_blocks": self.total_blocks,
            "search_speed": self.search_speed,
            "homing_speed": self.homing_speed,
            "crw_half_angle": self.crw_half_angle,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> Scenario:
        a = d["arena"]
        arena = Arena(a["width"], a["height"], tuple(a["nest_center"]), a["nest_side"])
        clusters = tuple(
            BlockCluster(tuple(c["center"]), tuple(c["dims"]), c["block_count"]) for c in d["clusters"]
        )
        return cls(
            arena=arena,
            clusters=clusters,
            kind=d["kind"],
            robot_count=int(d["robot_count"]),
            total_blocks=int(d["total_blocks"]),
            search_speed=float(d.get("search_speed", DEFAULT_SPEED)),
            homing_speed=float(d.get("homing_speed", DEFAULT_SPEED)),
            crw_half_angle=float(d.get("crw_half_angle", DEFAULT_THETA)),
            seed=int(d.get("seed", 0)),
        )

    def digest(self) -> str:
        """Short content hash, used in run manifests."""
        text = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(text.encode()).hexdigest()[:16]


def save_scenario(s: Scenario, path) -> None:
    Path(path).write_text(json.dumps(s.to_dict(), indent=2, sort_keys=True) + "\n")


def load_scenario(path) -> Scenario:
    return Scenario.from_dict(json.loads(Path(path).read_text()))


def distributable_area(s: Scenario) -> float:
    return math.fsum(c.area for c in s.clusters)


def swarm_density(s: Scenario) -> float:
    return s.robot_count / s.arena.area


def arena_dims_for(kind: str, n_robots: int, rho: float) -> tuple[float, float]:
    """Arena width and height holding ``n_robots`` at swarm density ``rho``.

    SS and DS use a 2:1 rectangle, RN and PL a square.
    """
    if kind not in KINDS:
        raise ConfigError(f"unknown scenario kind {kind!r}")
    if rho <= 0 or n_robots < 1:
        raise ConfigError("need rho > 0 and n_robots >= 1")
    area = n_robots / rho
    if kind in ("SS", "DS"):
        h = math.sqrt(area / 2)
        return (2 * h, h)
    side = math.sqrt(area)
    return (side, side)


def apportion(total: int, weights) -> list[int]:
    """Split ``total`` into integers proportional to ``weights`` (largest remainder)."""
    w = np.asarray(weights, dtype=float)
    if total < 0 or np.any(w < 0) or w.sum() <= 0:
        raise ConfigError("apportion needs non-negative weights with positive sum")
    quotas = total * w / w.sum()
    base = np.floor(quotas).astype(int)
    short = total - int(base.sum())
    # ties broken by index for determinism
    order = sorted(range(len(w)), key=lambda i: (-(quotas[i] - base[i]), i))
    for i in order[:short]:
        base[i] += 1
    return [int(b) for b in base]


def _overlaps(a, b) -> bool:
    ax0, ay0, ax1, ay1 = a
    bx0, by0, bx1, by1 = b
    return ax0 < bx1 - _EPS and bx0 < ax1 - _EPS and ay0 < by1 - _EPS and by0 < ay1 - _EPS


def make_scenario(
    kind: str,
    arena_dims: tuple[float, float],
    n_robots: int,
    n_blocks: int,
    seed: int = 0,
    *,
    nest_fraction: float = DEFAULT_NEST_FRACTION,
    wall_margin: float = DEFAULT_WALL_MARGIN,
    search_speed: float = DEFAULT_SPEED,
    homing_speed: float = DEFAULT_SPEED,
    crw_half_angle: float = DEFAULT_THETA,
) -> Scenario:
    """Build one of the canonical scenarios.

    Parameters
    ----------
    kind : {"SS", "DS", "RN", "PL"}
        Block distribution.  SS puts one cluster in the arena half away from a
        nest on the left edge; DS places two mirrored strips on either side of a
        centered nest; RN covers the whole arena except the nest footprint (as
        four rectangles); PL scatters square clusters of power-law distributed
        size around a centered nest.
    arena_dims : (width, height)
    n_robots, n_blocks : int
    seed : int
        Only PL generation is random; the seed is stored on the scenario so
        simulations can derive their own streams from it.
    nest_fraction : float
        Nest side as a fraction of the shorter arena dimension.
    wall_margin : float
        Clearance kept between clusters and the arena walls.
    """
    width, height = (float(v) for v in arena_dims)
    if width <= 0 or height <= 0:
        raise ConfigError("arena dims must be positive")
    if n_robots < 1:
        raise ConfigError("n_robots must be >= 1")
    if n_blocks < 1:
        raise ConfigError("n_blocks must be >= 1")
    if kind not in KINDS:
        raise ConfigError(f"unknown scenario kind {kind!r}")

    side = nest_fraction * min(width, height)
    m = wall_margin
    if kind == "SS":
        nest = (m + side / 2, height / 2)
    else:
        nest = (width / 2, height / 2)
    arena = Arena(width, height, nest, side)
    nx0, ny0, nx1, ny1 = arena.nest_bounds

    if kind == "SS":
        rects = [(width / 2, m, width - m, height - m)]
    elif kind == "DS":
        rects = [(m, m, width / 4, height - m), (3 * width / 4, m, width - m, height - m)]
    elif kind == "RN":
        rects = [
            (m, m, nx0, height - m),
            (nx1, m, width - m, height - m),
            (nx0, m, nx1, ny0),
            (nx0, ny1, nx1, height - m),
        ]
    else:
        rects = _power_law_rects(width, height, arena.nest_bounds, m, np.random.default_rng(seed))

    rects = [r for r in rects if r[2] - r[0] > _EPS and r[3] - r[1] > _EPS]
    if not rects:
        raise InfeasibleGeometryError("arena too small for the requested layout")
    areas = [(r[2] - r[0]) * (r[3] - r[1]) for r in rects]
    counts = apportion(n_blocks, areas)
    clusters = tuple(BlockCluster.from_bounds(*r, block_count=c) for r, c in zip(rects, counts))
    return Scenario(
        arena=arena,
        clusters=clusters,
        kind=kind,
        robot_count=int(n_robots),
        total_blocks=int(n_blocks),
        search_speed=search_speed,
        homing_speed=homing_speed,
        crw_half_angle=crw_half_angle,
        seed=int(seed),
    )


def _power_law_rects(width, height, nest_bounds, margin, rng):
    usable_w, usable_h = width - 2 * margin, height - 2 * margin
    max_side = min(usable_w, usable_h) / 4
    sizes = []
    s = PL_UNIT
    while s <= max_side + _EPS:
        sizes.append(s)
        s *= 2
    if not sizes:
        sizes = [min(usable_w, usable_h) / 4]
    sizes = np.array(sizes)
    probs = sizes ** -PL_EXPONENT
    probs /= probs.sum()

    target = PL_COVERAGE * (width * height - (nest_bounds[2] - nest_bounds[0]) ** 2)
    drawn = []
    covered = 0.0
    while covered < target:
        side = float(rng.choice(sizes, p=probs))
        drawn.append(side)
        covered += side * side
    # largest first, so small clusters cannot fragment the floor beforehand
    rects = []
    for side in sorted(drawn, reverse=True):
        for _ in range(PL_MAX_RETRIES):
            x0 = margin + rng.random() * (usable_w - side)
            y0 = margin + rng.random() * (usable_h - side)
            cand = (x0, y0, x0 + side, y0 + side)
            if _overlaps(cand, nest_bounds) or any(_overlaps(cand, r) for r in rects):
                continue
            rects.append(cand)
            break
        else:
            raise InfeasibleGeometryError(
                f"could not place a {side:g} m cluster after {PL_MAX_RETRIES} attempts"
            )
    return rects


def make_density_scenario(
    kind: str,
    n_robots: int,
    rho: float,
    seed: int = 0,
    *,
    block_density: float = DEFAULT_BLOCK_DENSITY,
    arena_dims: tuple[float, float] | None = None,
    **kwargs,
) -> Scenario:
    """Scenario at swarm density ``rho`` with blocks at ``block_density`` per m^2.

    When ``arena_dims`` is given the arena is held fixed (and ``rho`` is only
    used if ``n_robots`` is None).
    """
    if arena_dims is None:
        arena_dims = arena_dims_for(kind, n_robots, rho)
    # block count follows the distributable area; generate once to learn it
    probe = make_scenario(kind, arena_dims, n_robots, 1, seed, **kwargs)
    n_blocks = max(1, int(round(block_density * distributable_area(probe))))
    return make_scenario(kind, arena_dims, n_robots, n_blocks, seed, **kwargs)


def check_geometry(s: Scenario) -> list[str]:
    """Return a list of violated geometric invariants (empty when valid)."""
    problems = []
    W, H = s.arena.width, s.arena.height
    nest = s.arena.nest_bounds
    for i, c in enumerate(s.clusters):
        x0, y0, x1, y1 = c.bounds
        if x0 < -_EPS or y0 < -_EPS or x1 > W + _EPS or y1 > H + _EPS:
            problems.append(f"cluster {i} leaves the arena")
        if _overlaps(c.bounds, nest):
            problems.append(f"cluster {i} intersects the nest")
        for j in range(i + 1, len(s.clusters)):
            if _overlaps(c.bounds, s.clusters[j].bounds):
                problems.append(f"clusters {i} and {j} overlap")
    if sum(c.block_count for c in s.clusters) != s.total_blocks:
        problems.append("cluster block counts do not sum to total_blocks")
    return problems
