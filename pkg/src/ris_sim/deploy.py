"""Coverage-driven surface deployment on 2-D scenes.

Obstacles are axis-aligned rectangles that block line of sight entirely;
a panel fills a shadow only when it sees both a base station and the
shadowed point.  Heights are folded into the planar distances, which
keeps the link budget 2-D.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .channel import ChannelParams, GeometryError
from .ris import RisPanel

#: clamp for degenerate zero-length links on the grid
_MIN_LINK_DISTANCE = 1e-3

SERVING_NONE = 0
SERVING_DIRECT = 1
SERVING_RIS = 2


@dataclass(frozen=True, eq=False)
class BaseStation:
    position: np.ndarray
    tx_power_dbm: float
    antennas: int = 1

    def __post_init__(self):
        p = np.asarray(self.position, dtype=float).reshape(-1)[:2]
        if not np.all(np.isfinite(p)):
            raise GeometryError("base station position must be finite")
        p.setflags(write=False)
        object.__setattr__(self, "position", p)
        if not math.isfinite(self.tx_power_dbm):
            raise ValueError("tx_power_dbm must be finite")
        if self.antennas < 1:
            raise ValueError(f"antennas must be >= 1, got {self.antennas}")


@dataclass(frozen=True, eq=False)
class Scene:
    """Service area, blockers, stations and candidate panel sites."""

    extent: tuple
    obstacles: tuple
    base_stations: tuple
    candidate_sites: tuple
    grid_resolution: float
    wavelength: float

    def __post_init__(self):
        x0, y0, x1, y1 = (float(v) for v in self.extent)
        if not (x0 < x1 and y0 < y1):
            raise GeometryError(f"degenerate extent {self.extent}")
        object.__setattr__(self, "extent", (x0, y0, x1, y1))
        obs = []
        for r in self.obstacles:
            a, b, c, d = (float(v) for v in r)
            if not (a < c and b < d):
                raise GeometryError(f"degenerate obstacle {r}")
            if a < x0 or b < y0 or c > x1 or d > y1:
                raise GeometryError(f"obstacle {r} leaves the extent")
            obs.append((a, b, c, d))
        object.__setattr__(self, "obstacles", tuple(obs))
        object.__setattr__(self, "base_stations", tuple(self.base_stations))
        if not self.base_stations:
            raise GeometryError("scene needs at least one base station")
        sites = []
        for s in self.candidate_sites:
            p = np.asarray(s, dtype=float).reshape(-1)[:2]
            if not np.all(np.isfinite(p)):
                raise GeometryError("candidate site must be finite")
            self._check_inside(p)
            sites.append(p)
        for bs in self.base_stations:
            self._check_inside(bs.position)
        object.__setattr__(self, "candidate_sites", tuple(sites))
        if not (self.grid_resolution > 0.0 and math.isfinite(self.grid_resolution)):
            raise GeometryError(f"grid_resolution must be positive, got {self.grid_resolution}")
        if not (self.wavelength > 0.0 and math.isfinite(self.wavelength)):
            raise GeometryError(f"wavelength must be positive, got {self.wavelength}")

    def _check_inside(self, p) -> None:
        x0, y0, x1, y1 = self.extent
        if not (x0 <= p[0] <= x1 and y0 <= p[1] <= y1):
            raise GeometryError(f"point {tuple(p)} lies outside the extent")

    def grid_points(self):
        """Cell-center coordinates (xs, ys) of the coverage raster."""
        x0, y0, x1, y1 = self.extent
        res = self.grid_resolution
        nx = max(1, int(math.floor((x1 - x0) / res + 1e-9)))
        ny = max(1, int(math.floor((y1 - y0) / res + 1e-9)))
        xs = x0 + (np.arange(nx) + 0.5) * res
        ys = y0 + (np.arange(ny) + 0.5) * res
        return xs, ys


def _segment_blocked(px, py, qx, qy, rect) -> np.ndarray:
    """Vectorised: does p->q cross the closed rectangle at some inner t?

    Touching the boundary mid-segment blocks (grazing counts); touching
    only at a segment endpoint does not, so a panel mounted on a wall
    still sees outward.
    """
    a, b, c, d = rect
    px = np.asarray(px, dtype=float)
    py = np.asarray(py, dtype=float)
    t_lo = np.zeros_like(px)
    t_hi = np.ones_like(px)
    ok = np.ones(px.shape, dtype=bool)
    for p, q, lo, hi in ((px, qx, a, c), (py, qy, b, d)):
        dd = q - p
        degenerate = dd == 0.0
        inside = (p >= lo) & (p <= hi)
        ok &= ~degenerate | inside
        with np.errstate(divide="ignore", invalid="ignore"):
            ta = np.where(degenerate, 0.0, (lo - p) / np.where(degenerate, 1.0, dd))
            tb = np.where(degenerate, 1.0, (hi - p) / np.where(degenerate, 1.0, dd))
        lo_t = np.minimum(ta, tb)
        hi_t = np.maximum(ta, tb)
        t_lo = np.maximum(t_lo, np.where(degenerate, t_lo, lo_t))
        t_hi = np.minimum(t_hi, np.where(degenerate, t_hi, hi_t))
    ok &= t_lo <= t_hi
    # an inner parameter t in (0, 1) must hit the rectangle
    inner = (t_lo < t_hi) | ((t_lo > 0.0) & (t_lo < 1.0))
    return ok & (t_hi > 0.0) & (t_lo < 1.0) & inner


def los_blocked(scene: Scene, p, q) -> bool:
    """True when any obstacle interrupts the open sight segment p -> q."""
    pa = np.asarray(p, dtype=float).reshape(-1)[:2]
    qa = np.asarray(q, dtype=float).reshape(-1)[:2]
    scene._check_inside(pa)
    scene._check_inside(qa)
    for rect in scene.obstacles:
        if bool(_segment_blocked(pa[0], pa[1], qa[0], qa[1], rect)):
            return True
    return False


def _blocked_grid(scene: Scene, gx, gy, q) -> np.ndarray:
    """Blocked mask of every grid point toward a fixed endpoint q."""
    out = np.zeros(gx.shape, dtype=bool)
    for rect in scene.obstacles:
        out |= _segment_blocked(gx, gy, float(q[0]), float(q[1]), rect)
    return out


@dataclass(frozen=True, eq=False)
class CoverageMap:
    """Rasterised SNR with the serving-route label per cell."""

    xs: np.ndarray
    ys: np.ndarray
    snr_db: np.ndarray
    covered: np.ndarray
    serving: np.ndarray
    threshold_db: float

    @property
    def coverage_fraction(self) -> float:
        return float(self.covered.mean())


@dataclass(frozen=True, eq=False)
class DeploymentPlan:
    """Placed panels as (site_index, panel) pairs plus plan economics."""

    placed: tuple = ()
    cost: float = 0.0
    coverage_fraction: float = 0.0
    history: tuple = ()

    def __post_init__(self):
        sites = [s for s, _ in self.placed]
        if len(set(sites)) != len(sites):
            raise ValueError("panels placed on duplicate sites")


def snr_map(
    scene: Scene,
    plan: DeploymentPlan,
    params: ChannelParams,
    threshold_db: float,
    gain_scale: float = 1.0,
) -> CoverageMap:
    """Best-route SNR raster for a deployment.

    Direct routes take the strongest base station with line of sight; a
    panel route needs sight on both hops and contributes the two-segment
    budget with the coherent N^2 panel gain (scaled by gain_scale^2).
    Blocked routes contribute nothing.
    """
    if not (gain_scale >= 0.0 and math.isfinite(gain_scale)):
        raise ValueError(f"gain_scale must be non-negative, got {gain_scale}")
    lam = scene.wavelength
    alpha = params.path_loss_exponent
    noise_dbm = 10.0 * math.log10(params.noise_power * 1e3)
    xs, ys = scene.grid_points()
    gx, gy = np.meshgrid(xs, ys, indexing="xy")

    def seg_gain_db(dist):
        d = np.maximum(dist, _MIN_LINK_DISTANCE)
        return 10.0 * alpha * np.log10(lam / (4.0 * math.pi * d))

    direct_dbm = np.full(gx.shape, -np.inf)
    for bs in scene.base_stations:
        d = np.hypot(gx - bs.position[0], gy - bs.position[1])
        dbm = bs.tx_power_dbm + seg_gain_db(d)
        dbm[_blocked_grid(scene, gx, gy, bs.position)] = -np.inf
        direct_dbm = np.maximum(direct_dbm, dbm)

    ris_dbm = np.full(gx.shape, -np.inf)
    placed = plan.placed if gain_scale > 0.0 else ()
    for site_idx, panel in placed:
        site = scene.candidate_sites[site_idx]
        panel_gain_db = 20.0 * math.log10(panel.n_elements * gain_scale)
        to_grid_db = seg_gain_db(np.hypot(gx - site[0], gy - site[1]))
        grid_blocked = _blocked_grid(scene, gx, gy, site)
        for bs in scene.base_stations:
            if los_blocked(scene, bs.position, site):
                continue
            hop1_db = seg_gain_db(
                float(np.hypot(*(bs.position - site)))
            )
            dbm = bs.tx_power_dbm + hop1_db + panel_gain_db + to_grid_db
            dbm = np.where(grid_blocked, -np.inf, dbm)
            ris_dbm = np.maximum(ris_dbm, dbm)

    best_dbm = np.maximum(direct_dbm, ris_dbm)
    snr = best_dbm - noise_dbm
    serving = np.full(gx.shape, SERVING_NONE, dtype=np.int8)
    serving[direct_dbm > -np.inf] = SERVING_DIRECT
    serving[ris_dbm > direct_dbm] = SERVING_RIS
    covered = snr >= threshold_db
    return CoverageMap(
        xs=xs, ys=ys, snr_db=snr, covered=covered, serving=serving,
        threshold_db=float(threshold_db),
    )


def greedy_place(
    scene: Scene,
    panel_template: RisPanel,
    params: ChannelParams,
    cost_per_panel: float,
    budget: float,
    threshold_db: float,
    target_fraction: float,
) -> DeploymentPlan:
    """Iterative placement: always take the site covering the most cells.

    Stops at the coverage target, at budget exhaustion, or as soon as no
    remaining site strictly adds coverage.  Site ties resolve to the
    lowest index.
    """
    if not (cost_per_panel > 0.0 and math.isfinite(cost_per_panel)):
        raise ValueError(f"cost_per_panel must be positive, got {cost_per_panel}")
    if budget < 0.0:
        raise ValueError(f"budget must be >= 0, got {budget}")
    if not (0.0 < target_fraction <= 1.0):
        raise ValueError(f"target_fraction must be in (0, 1], got {target_fraction}")
    placed: list = []
    cov = snr_map(scene, DeploymentPlan(), params, threshold_db).coverage_fraction
    history = [(-1, cov)]
    spent = 0.0
    free = list(range(len(scene.candidate_sites)))
    while spent + cost_per_panel <= budget and cov < target_fraction and free:
        best_site = -1
        best_cov = cov
        for idx in free:
            panel = replace(
                panel_template,
                position=np.array([*scene.candidate_sites[idx], 0.0]),
            )
            trial = DeploymentPlan(placed=tuple(placed + [(idx, panel)]))
            c = snr_map(scene, trial, params, threshold_db).coverage_fraction
            if c > best_cov:
                best_cov = c
                best_site = idx
        if best_site < 0:
            break
        panel = replace(
            panel_template,
            position=np.array([*scene.candidate_sites[best_site], 0.0]),
        )
        placed.append((best_site, panel))
        free.remove(best_site)
        spent += cost_per_panel
        cov = best_cov
        history.append((best_site, cov))
    return DeploymentPlan(
        placed=tuple(placed),
        cost=spent,
        coverage_fraction=cov,
        history=tuple(history),
    )


def cell_breathing(
    scene: Scene,
    plan: DeploymentPlan,
    params: ChannelParams,
    gain_scale: float,
    threshold_db: float,
) -> CoverageMap:
    """Re-raster a fixed plan with every panel's power gain scaled by
    gain_scale^2; scale > 1 breathes the served area out, < 1 pulls it in."""
    return snr_map(scene, plan, params, threshold_db, gain_scale=gain_scale)
