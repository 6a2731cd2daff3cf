"""Channel synthesis: geometry, LoS/Rician blocks, path loss, assembly.

The effective downlink channel through a reflective surface is

    H_T = sqrt(pl_ris_ue * pl_nb_ris) * H_ris_ue @ (beta * Theta) @ G_nb_ris
          + sqrt(pl_nb_ue) * H_nb_ue

with the direct term dropped when the base-station/user link is blocked.
All blocks are complex128 ndarrays produced by `gen_los` / `gen_rician`
and carried inside a `ChannelRealization`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .numkernel import as_complex_matrix
from .seeding import complex_normal, rng_from, subseed


class GeometryError(ValueError):
    """Raised for inconsistent node placement or array layout."""


_LAYOUTS = ("ula", "upa")
_WAVEFRONTS = ("auto", "planar", "spherical")


@dataclass(frozen=True, eq=False)
class Geometry:
    """Node positions plus per-node array layout.

    Parameters
    ----------
    wavelength : float
        Carrier wavelength in metres.
    positions : dict
        Node id -> 3-vector position (metres).
    spacing : dict, optional
        Node id -> element spacing; defaults to wavelength / 2.  Spacings
        below half a wavelength are rejected.
    layout : dict, optional
        Node id -> "ula" (line along z) or "upa" (square grid in the y-z
        plane, element count must be a perfect square).
    """

    wavelength: float
    positions: dict
    spacing: dict = field(default_factory=dict)
    layout: dict = field(default_factory=dict)

    def __post_init__(self):
        if not (self.wavelength > 0.0 and math.isfinite(self.wavelength)):
            raise GeometryError(f"wavelength must be positive, got {self.wavelength}")
        pos = {}
        for node, p in self.positions.items():
            arr = np.asarray(p, dtype=float).reshape(3)
            if not np.all(np.isfinite(arr)):
                raise GeometryError(f"position of {node!r} is not finite")
            arr.setflags(write=False)
            pos[node] = arr
        object.__setattr__(self, "positions", pos)
        half = 0.5 * self.wavelength
        for node, s in self.spacing.items():
            if node not in pos:
                raise GeometryError(f"spacing given for unknown node {node!r}")
            if s < half - 1e-12 * half:
                raise GeometryError(
                    f"element spacing at {node!r} is {s}, below half a wavelength {half}"
                )
        for node, lay in self.layout.items():
            if node not in pos:
                raise GeometryError(f"layout given for unknown node {node!r}")
            if lay not in _LAYOUTS:
                raise GeometryError(f"unknown layout {lay!r} for node {node!r}")

    def position(self, node: str) -> np.ndarray:
        try:
            return self.positions[node]
        except KeyError:
            raise GeometryError(f"unknown node {node!r}") from None

    def node_spacing(self, node: str) -> float:
        return float(self.spacing.get(node, 0.5 * self.wavelength))

    def distance(self, a: str, b: str) -> float:
        d = float(np.linalg.norm(self.position(a) - self.position(b)))
        if d <= 0.0:
            raise GeometryError(f"nodes {a!r} and {b!r} coincide")
        return d

    def element_positions(self, node: str, count: int) -> np.ndarray:
        """(count, 3) element coordinates of the array at `node`."""
        if count < 1:
            raise GeometryError(f"element count at {node!r} must be >= 1, got {count}")
        center = self.position(node)
        s = self.node_spacing(node)
        lay = self.layout.get(node, "ula")
        if lay == "ula":
            idx = np.arange(count) - (count - 1) / 2.0
            offs = np.zeros((count, 3))
            offs[:, 2] = idx * s
        else:
            side = math.isqrt(count)
            if side * side != count:
                raise GeometryError(
                    f"upa at {node!r} needs a square element count, got {count}"
                )
            a, b = np.meshgrid(np.arange(side), np.arange(side), indexing="ij")
            offs = np.zeros((count, 3))
            offs[:, 1] = (a.ravel() - (side - 1) / 2.0) * s
            offs[:, 2] = (b.ravel() - (side - 1) / 2.0) * s
        return center + offs

    def aperture(self, node: str, count: int) -> float:
        """Largest physical extent of the array at `node`."""
        s = self.node_spacing(node)
        if self.layout.get(node, "ula") == "upa":
            side = math.isqrt(count)
            return math.sqrt(2.0) * (side - 1) * s
        return (count - 1) * s


@dataclass(frozen=True)
class ChannelParams:
    """Statistical description of one propagation link."""

    rician_k: float = 0.0
    path_loss_exponent: float = 2.0
    noise_power: float = 1.0
    wavefront_model: str = "auto"

    def __post_init__(self):
        if self.rician_k < 0.0 or math.isnan(self.rician_k):
            raise ValueError(f"rician_k must be >= 0, got {self.rician_k}")
        if self.path_loss_exponent < 2.0:
            raise ValueError(
                f"path_loss_exponent must be >= 2, got {self.path_loss_exponent}"
            )
        if not (self.noise_power > 0.0 and math.isfinite(self.noise_power)):
            raise ValueError(f"noise_power must be positive, got {self.noise_power}")
        if self.wavefront_model not in _WAVEFRONTS:
            raise ValueError(f"unknown wavefront_model {self.wavefront_model!r}")


def fraunhofer_distance(geometry: Geometry, a: str, b: str, rows: int, cols: int) -> float:
    """Far-field boundary 2 D^2 / lambda for the larger of the two arrays."""
    ap = max(geometry.aperture(b, rows), geometry.aperture(a, cols))
    return 2.0 * ap * ap / geometry.wavelength


def resolve_wavefront(
    geometry: Geometry, frm: str, to: str, rows: int, cols: int, model: str
) -> str:
    """Map the "auto" wavefront setting to planar/spherical per geometry.

    Links shorter than the Fraunhofer distance keep the exact spherical
    phase; far-field links use the planar approximation.
    """
    if model != "auto":
        return model
    d = geometry.distance(frm, to)
    return "spherical" if d < fraunhofer_distance(geometry, frm, to, rows, cols) else "planar"


def gen_los(
    geometry: Geometry, frm: str, to: str, rows: int, cols: int, wavefront: str = "planar"
) -> np.ndarray:
    """Deterministic LoS block between two arrays.

    Entry (r, c) is exp(-j 2 pi d_rc / lambda) for the path from transmit
    element c at `frm` to receive element r at `to`.  The spherical model
    uses exact element-to-element distances; the planar model applies the
    plane-wave phase approximation and is therefore an outer product of
    two steering vectors (numerical rank 1).
    """
    if wavefront not in ("planar", "spherical"):
        raise GeometryError(f"unknown wavefront {wavefront!r}")
    lam = geometry.wavelength
    tx = geometry.element_positions(frm, cols)
    rx = geometry.element_positions(to, rows)
    if wavefront == "spherical":
        diff = rx[:, None, :] - tx[None, :, :]
        d = np.linalg.norm(diff, axis=2)
        if np.any(d <= 0.0):
            raise GeometryError(f"coincident element positions between {frm!r} and {to!r}")
        return np.exp(-2j * np.pi * d / lam)
    d0 = geometry.distance(frm, to)
    u = (geometry.position(to) - geometry.position(frm)) / d0
    ctx = geometry.position(frm)
    crx = geometry.position(to)
    # plane-wave path length: d0 + u.(rx offset) - u.(tx offset)
    d_rx = (rx - crx) @ u
    d_tx = (tx - ctx) @ u
    a = np.exp(-2j * np.pi * d_rx / lam)
    b = np.exp(2j * np.pi * d_tx / lam)
    return np.exp(-2j * np.pi * d0 / lam) * np.outer(a, b)


def gen_rician(params: ChannelParams, los_component, seed: int) -> np.ndarray:
    """Mix a fixed LoS block with a seeded Rayleigh component.

    K = 0 reduces to pure Rayleigh, K = inf returns the LoS block itself.
    Same seed, same output, bit for bit.
    """
    los = as_complex_matrix(los_component, "los_component")
    k = params.rician_k
    if math.isinf(k):
        return los.copy()
    scatter = complex_normal(rng_from(seed), los.shape)
    return math.sqrt(k / (k + 1.0)) * los + math.sqrt(1.0 / (k + 1.0)) * scatter


def path_gain(wavelength: float, distance: float, exponent: float) -> float:
    """Power path gain (lambda / 4 pi d)^alpha of a single segment."""
    if distance <= 0.0:
        raise GeometryError(f"path distance must be positive, got {distance}")
    return float((wavelength / (4.0 * math.pi * distance)) ** exponent)


def segmented_path_loss(
    geometry: Geometry,
    params: ChannelParams,
    via_ris: bool,
    nb: str = "nb",
    ris: str = "ris",
    ue: str = "ue",
) -> float:
    """Multiplicative path gain of the direct or the two-segment route."""
    alpha = params.path_loss_exponent
    lam = geometry.wavelength
    if not via_ris:
        return path_gain(lam, geometry.distance(nb, ue), alpha)
    first = path_gain(lam, geometry.distance(nb, ris), alpha)
    second = path_gain(lam, geometry.distance(ris, ue), alpha)
    return first * second


@dataclass(frozen=True, eq=False)
class ChannelRealization:
    """One drawn set of channel blocks plus their path-loss scalars.

    `h_nb_ue` is None when the direct link is blocked; the assembly then
    consists of the reflected term alone.
    """

    g_nb_ris: np.ndarray
    h_ris_ue: np.ndarray
    h_nb_ue: np.ndarray | None
    pl_nb_ris: float
    pl_ris_ue: float
    pl_nb_ue: float
    seed: int = 0

    def __post_init__(self):
        g = as_complex_matrix(self.g_nb_ris, "g_nb_ris")
        h = as_complex_matrix(self.h_ris_ue, "h_ris_ue")
        object.__setattr__(self, "g_nb_ris", g)
        object.__setattr__(self, "h_ris_ue", h)
        if h.shape[1] != g.shape[0]:
            raise ValueError(
                f"element count mismatch: h_ris_ue has {h.shape[1]} columns, "
                f"g_nb_ris has {g.shape[0]} rows"
            )
        if self.h_nb_ue is not None:
            d = as_complex_matrix(self.h_nb_ue, "h_nb_ue")
            object.__setattr__(self, "h_nb_ue", d)
            if d.shape != (h.shape[0], g.shape[1]):
                raise ValueError(
                    f"h_nb_ue shape {d.shape} does not match (U, M) = "
                    f"({h.shape[0]}, {g.shape[1]})"
                )
        for name in ("pl_nb_ris", "pl_ris_ue", "pl_nb_ue"):
            v = getattr(self, name)
            if not (v >= 0.0 and math.isfinite(v)):
                raise ValueError(f"{name} must be finite and >= 0, got {v}")

    @property
    def n_elements(self) -> int:
        return self.g_nb_ris.shape[0]

    @property
    def m_antennas(self) -> int:
        return self.g_nb_ris.shape[1]

    @property
    def u_antennas(self) -> int:
        return self.h_ris_ue.shape[0]


def _theta_vector(panel_or_theta, n: int) -> np.ndarray:
    """Accept a surface description in any of its shapes.

    RisPanel and ThetaMatrix are duck-typed here so this module stays
    import-free of the surface-control layer; plain complex vectors are
    accepted for tests and quick studies.
    """
    obj = panel_or_theta
    if hasattr(obj, "theta_diagonal"):
        diag = obj.theta_diagonal()
    elif hasattr(obj, "diagonal") and not isinstance(obj, np.ndarray):
        diag = np.asarray(obj.diagonal)
    else:
        diag = np.asarray(obj, dtype=np.complex128)
    diag = np.asarray(diag, dtype=np.complex128).reshape(-1)
    if diag.shape[0] != n:
        raise ValueError(f"surface has {diag.shape[0]} elements, channel expects {n}")
    if np.any(np.abs(diag) > 1.0 + 1e-12):
        raise ValueError("reflection coefficients must have magnitude <= 1")
    return diag


def assemble_effective(real: ChannelRealization, panel, beta_gain: float = 1.0) -> np.ndarray:
    """Effective base-station -> user channel for one surface setting."""
    if beta_gain < 0.0:
        raise ValueError(f"beta_gain must be >= 0, got {beta_gain}")
    diag = _theta_vector(panel, real.n_elements)
    amp = math.sqrt(real.pl_ris_ue * real.pl_nb_ris) * beta_gain
    h_t = amp * (real.h_ris_ue * diag[None, :]) @ real.g_nb_ris
    if real.h_nb_ue is not None:
        h_t = h_t + math.sqrt(real.pl_nb_ue) * real.h_nb_ue
    return h_t


def assemble_multi_panel(reals, panels, beta_gains=None) -> np.ndarray:
    """Superpose the reflected terms of several panels.

    Each realization describes the hop through one panel; the direct term
    is taken from the first realization that carries one (the direct link
    does not depend on any panel).
    """
    if len(reals) != len(panels) or not reals:
        raise ValueError("need one realization per panel, at least one pair")
    if beta_gains is None:
        beta_gains = [1.0] * len(reals)
    shape = (reals[0].u_antennas, reals[0].m_antennas)
    h_t = np.zeros(shape, dtype=np.complex128)
    for real, panel, bg in zip(reals, panels, beta_gains):
        if (real.u_antennas, real.m_antennas) != shape:
            raise ValueError("all realizations must share (U, M)")
        diag = _theta_vector(panel, real.n_elements)
        amp = math.sqrt(real.pl_ris_ue * real.pl_nb_ris) * bg
        h_t += amp * (real.h_ris_ue * diag[None, :]) @ real.g_nb_ris
    for real in reals:
        if real.h_nb_ue is not None:
            h_t = h_t + math.sqrt(real.pl_nb_ue) * real.h_nb_ue
            break
    return h_t


@dataclass(frozen=True, eq=False)
class SignalModel:
    """Transmit-side description of one signalling interval."""

    precoder: np.ndarray
    symbols: np.ndarray
    noise_power: float
    power_budget: float

    def __post_init__(self):
        f = as_complex_matrix(self.precoder, "precoder")
        object.__setattr__(self, "precoder", f)
        x = np.asarray(self.symbols, dtype=np.complex128).reshape(-1)
        object.__setattr__(self, "symbols", x)
        if x.shape[0] != f.shape[1]:
            raise ValueError(
                f"symbol count {x.shape[0]} does not match precoder streams {f.shape[1]}"
            )
        if not (self.noise_power > 0.0 and math.isfinite(self.noise_power)):
            raise ValueError(f"noise_power must be positive, got {self.noise_power}")
        if not (self.power_budget > 0.0 and math.isfinite(self.power_budget)):
            raise ValueError(f"power_budget must be positive, got {self.power_budget}")
        fro2 = float(np.sum(np.abs(f) ** 2))
        if fro2 > self.power_budget * (1.0 + 1e-9):
            raise ValueError(
                f"precoder power {fro2} exceeds budget {self.power_budget}"
            )


def received_signal(real: ChannelRealization, panel, sig: SignalModel, seed: int) -> np.ndarray:
    """y = H_T F x + w with seeded additive noise of the given variance."""
    h_t = assemble_effective(real, panel)
    if sig.precoder.shape[0] != real.m_antennas:
        raise ValueError(
            f"precoder rows {sig.precoder.shape[0]} must match transmit antennas "
            f"{real.m_antennas}"
        )
    w = math.sqrt(sig.noise_power) * complex_normal(rng_from(seed), real.u_antennas)
    return h_t @ sig.precoder @ sig.symbols + w


@dataclass(frozen=True, eq=False)
class Scenario:
    """Geometry, per-link statistics and dimensioning for one simulated cell."""

    geometry: Geometry
    m_antennas: int
    n_elements: int
    u_antennas: int
    nb_ris: ChannelParams
    ris_ue: ChannelParams
    nb_ue: ChannelParams | None = None
    nb: str = "nb"
    ris: str = "ris"
    ue: str = "ue"
    seed: int = 0

    def __post_init__(self):
        for name in ("m_antennas", "n_elements", "u_antennas"):
            v = getattr(self, name)
            if v < 1:
                raise ValueError(f"{name} must be >= 1, got {v}")
        for node in (self.nb, self.ris, self.ue):
            self.geometry.position(node)

    @property
    def noise_power(self) -> float:
        return self.ris_ue.noise_power

    @property
    def direct_present(self) -> bool:
        return self.nb_ue is not None


def draw_realization(scenario: Scenario, trial: int = 0) -> ChannelRealization:
    """Draw all channel blocks of one trial; deterministic in (seed, trial)."""
    geom = scenario.geometry
    m, n, u = scenario.m_antennas, scenario.n_elements, scenario.u_antennas
    base = subseed(scenario.seed, f"trial/{trial}")

    wf_g = resolve_wavefront(geom, scenario.nb, scenario.ris, n, m,
                             scenario.nb_ris.wavefront_model)
    g_los = gen_los(geom, scenario.nb, scenario.ris, n, m, wf_g)
    g = gen_rician(scenario.nb_ris, g_los, subseed(base, "nb_ris"))

    wf_h = resolve_wavefront(geom, scenario.ris, scenario.ue, u, n,
                             scenario.ris_ue.wavefront_model)
    h_los = gen_los(geom, scenario.ris, scenario.ue, u, n, wf_h)
    h = gen_rician(scenario.ris_ue, h_los, subseed(base, "ris_ue"))

    lam = geom.wavelength
    pl_nb_ris = path_gain(lam, geom.distance(scenario.nb, scenario.ris),
                          scenario.nb_ris.path_loss_exponent)
    pl_ris_ue = path_gain(lam, geom.distance(scenario.ris, scenario.ue),
                          scenario.ris_ue.path_loss_exponent)

    direct = None
    pl_nb_ue = 0.0
    if scenario.nb_ue is not None:
        wf_d = resolve_wavefront(geom, scenario.nb, scenario.ue, u, m,
                                 scenario.nb_ue.wavefront_model)
        d_los = gen_los(geom, scenario.nb, scenario.ue, u, m, wf_d)
        direct = gen_rician(scenario.nb_ue, d_los, subseed(base, "nb_ue"))
        pl_nb_ue = path_gain(lam, geom.distance(scenario.nb, scenario.ue),
                             scenario.nb_ue.path_loss_exponent)

    return ChannelRealization(
        g_nb_ris=g,
        h_ris_ue=h,
        h_nb_ue=direct,
        pl_nb_ris=pl_nb_ris,
        pl_ris_ue=pl_ris_ue,
        pl_nb_ue=pl_nb_ue,
        seed=base,
    )
