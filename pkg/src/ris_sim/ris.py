"""Reflective-surface state and passive beamforming.

A surface is a diagonal of per-element reflection coefficients
theta_n = beta_n * exp(j phi_n), beta_n in [0, 1].  This module owns the
panel value type, phase quantization, closed-form MISO alignment, and the
alternating capacity ascent used for MIMO links (and reused by the
multi-user scheduler through `weighted_phase_ascent`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import numkernel
from .channel import ChannelRealization

TWO_PI = 2.0 * math.pi

#: phase grid resolution of the per-element capacity sweep
DEFAULT_GRID_POINTS = 64


def wrap_phase(phi):
    """Map angles into [0, 2 pi); the upper boundary folds to 0."""
    out = np.mod(np.asarray(phi, dtype=float), TWO_PI)
    return np.where(out >= TWO_PI, 0.0, out)


@dataclass(frozen=True, eq=False)
class RisPanel:
    """Immutable per-element state of one reflective panel.

    partition blocks are half-open index ranges (start, stop); elements
    outside every block may still reflect unless their amplitude is zero
    (absorbing).  When `quantization_bits` is set, all phases must sit
    exactly on the 2 pi k / 2^bits grid.
    """

    amplitudes: np.ndarray
    phases: np.ndarray
    quantization_bits: int | None = None
    partition: tuple = ()
    position: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        amp = np.asarray(self.amplitudes, dtype=float).reshape(-1)
        phi = np.asarray(self.phases, dtype=float).reshape(-1)
        if amp.shape != phi.shape:
            raise ValueError(
                f"amplitudes ({amp.shape[0]}) and phases ({phi.shape[0]}) disagree"
            )
        if amp.shape[0] == 0:
            raise ValueError("panel needs at least one element")
        if not np.all(np.isfinite(amp)) or not np.all(np.isfinite(phi)):
            raise ValueError("panel state must be finite")
        if np.any(amp < 0.0) or np.any(amp > 1.0):
            raise ValueError("amplitudes must lie in [0, 1]")
        if np.any(phi < 0.0) or np.any(phi >= TWO_PI):
            raise ValueError("phases must lie in [0, 2 pi)")
        amp.setflags(write=False)
        phi.setflags(write=False)
        object.__setattr__(self, "amplitudes", amp)
        object.__setattr__(self, "phases", phi)
        n = amp.shape[0]
        if self.quantization_bits is not None:
            bits = int(self.quantization_bits)
            if bits < 1:
                raise ValueError(f"quantization_bits must be >= 1, got {bits}")
            levels = 1 << bits
            step = TWO_PI / levels
            k = np.round(phi / step)
            if np.any(k * step != phi):
                raise ValueError("phases are off the quantization grid")
        blocks = tuple((int(s), int(e)) for s, e in self.partition)
        for s, e in blocks:
            if not (0 <= s < e <= n):
                raise ValueError(f"partition block ({s}, {e}) out of range for N={n}")
        for (s1, e1), (s2, e2) in zip(sorted(blocks), sorted(blocks)[1:]):
            if s2 < e1:
                raise ValueError("partition blocks overlap")
        object.__setattr__(self, "partition", blocks)
        pos = np.asarray(self.position, dtype=float).reshape(3)
        pos.setflags(write=False)
        object.__setattr__(self, "position", pos)

    @property
    def n_elements(self) -> int:
        return self.amplitudes.shape[0]

    def theta_diagonal(self) -> np.ndarray:
        return self.amplitudes * np.exp(1j * self.phases)

    @classmethod
    def uniform(cls, n_elements: int, position=None) -> "RisPanel":
        """Fully reflective panel, all phases zero."""
        if n_elements < 1:
            raise ValueError(f"n_elements must be >= 1, got {n_elements}")
        pos = np.zeros(3) if position is None else position
        return cls(np.ones(n_elements), np.zeros(n_elements), position=pos)


@dataclass(frozen=True, eq=False)
class ThetaMatrix:
    """Diagonal reflection matrix, stored by its diagonal."""

    diagonal: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.diagonal, dtype=np.complex128).reshape(-1)
        if d.shape[0] == 0:
            raise ValueError("empty reflection diagonal")
        if not np.all(np.isfinite(d)):
            raise ValueError("reflection coefficients must be finite")
        if np.any(np.abs(d) > 1.0 + 1e-12):
            raise ValueError("reflection coefficients must have magnitude <= 1")
        d.setflags(write=False)
        object.__setattr__(self, "diagonal", d)

    @property
    def n_elements(self) -> int:
        return self.diagonal.shape[0]

    def as_matrix(self) -> np.ndarray:
        return np.diag(self.diagonal)


def theta(panel: RisPanel) -> ThetaMatrix:
    """Reflection matrix of a panel state."""
    return ThetaMatrix(panel.theta_diagonal())


def quantize_phases(panel: RisPanel, bits: int) -> RisPanel:
    """Snap every phase to the nearest of 2^bits uniform levels.

    Exact midpoints go to the smaller level index; the wrap-around
    midpoint between the top level and 2 pi therefore goes to level 0.
    """
    bits = int(bits)
    if bits < 1:
        raise ValueError(f"bits must be >= 1, got {bits}")
    levels = 1 << bits
    step = TWO_PI / levels
    x = panel.phases / step
    k = np.floor(x + 0.5)
    tie = (x - np.floor(x)) == 0.5
    k[tie] = np.floor(x[tie])
    k = k.astype(np.int64) % levels
    return replace(panel, phases=k * step, quantization_bits=bits)


def align_phases_miso(g, h, direct: complex = 0j, position=None) -> RisPanel:
    """Coherent single-user alignment phi_n = arg(direct) - arg(h_n) - arg(g_n).

    `g` holds the per-element incident coefficients (base station side),
    `h` the per-element departure coefficients (user side); both accept
    any shape with N entries.  With direct = 0 the composite is aligned to
    phase zero.
    """
    gv = np.asarray(g, dtype=np.complex128).reshape(-1)
    hv = np.asarray(h, dtype=np.complex128).reshape(-1)
    if gv.shape != hv.shape:
        raise ValueError(f"g has {gv.shape[0]} elements, h has {hv.shape[0]}")
    ref = np.angle(direct) if direct != 0 else 0.0
    phi = wrap_phase(ref - np.angle(hv) - np.angle(gv))
    pos = np.zeros(3) if position is None else position
    return RisPanel(np.ones(gv.shape[0]), phi, position=pos)


def composite_gain(g, h, panel: RisPanel, direct: complex = 0j) -> complex:
    """Scalar end-to-end coefficient sum_n h_n theta_n g_n + direct."""
    gv = np.asarray(g, dtype=np.complex128).reshape(-1)
    hv = np.asarray(h, dtype=np.complex128).reshape(-1)
    if gv.shape[0] != panel.n_elements or hv.shape[0] != panel.n_elements:
        raise ValueError("channel vectors do not match the panel size")
    return complex(np.sum(hv * panel.theta_diagonal() * gv) + direct)


def effective_miso(real: ChannelRealization):
    """Collapse a MIMO hop to per-element MISO coefficients.

    Projects onto the dominant right singular vector of the incident block
    and the dominant left singular vector of the departure block; path
    loss amplitudes are folded in.  Returns (g_eff, h_eff, direct_eff).
    """
    v = numkernel.svd(real.g_nb_ris).right_vectors[:, 0]
    u = numkernel.svd(real.h_ris_ue).left_vectors[:, 0]
    g_eff = math.sqrt(real.pl_nb_ris) * (real.g_nb_ris @ v)
    h_eff = math.sqrt(real.pl_ris_ue) * (u.conj() @ real.h_ris_ue)
    d_eff = 0j
    if real.h_nb_ue is not None:
        d_eff = complex(math.sqrt(real.pl_nb_ue) * (u.conj() @ real.h_nb_ue @ v))
    return g_eff, h_eff, d_eff


def partition_panel(panel: RisPanel, block_sizes) -> RisPanel:
    """Split the panel into consecutive blocks; leftover elements absorb.

    Blocks are laid out from element 0 in the order given.  Elements not
    covered by any block get amplitude zero (explicit absorption), the
    rest keep their amplitudes and phases.
    """
    sizes = [int(s) for s in block_sizes]
    if any(s < 0 for s in sizes):
        raise ValueError(f"block sizes must be >= 0, got {sizes}")
    total = sum(sizes)
    n = panel.n_elements
    if total > n:
        raise ValueError(f"blocks need {total} elements, panel has {n}")
    blocks = []
    start = 0
    for s in sizes:
        blocks.append((start, start + s))
        start += s
    amp = np.array(panel.amplitudes)
    amp[total:] = 0.0
    return replace(panel, amplitudes=amp, partition=tuple(blocks))


def _aligned_init_phases(real: ChannelRealization) -> np.ndarray:
    """Aligned-MISO starting point for the capacity ascent."""
    g_eff, h_eff, d_eff = effective_miso(real)
    ref = np.angle(d_eff) if d_eff != 0 else 0.0
    return wrap_phase(ref - np.angle(h_eff) - np.angle(g_eff))


def _effective_terms(real: ChannelRealization):
    """Scaled blocks (a, b, d) with H(theta) = (a * theta) @ b + d."""
    a = math.sqrt(real.pl_ris_ue * real.pl_nb_ris) * real.h_ris_ue
    b = real.g_nb_ris
    if real.h_nb_ue is not None:
        d = math.sqrt(real.pl_nb_ue) * real.h_nb_ue
    else:
        d = np.zeros((real.u_antennas, real.m_antennas), dtype=np.complex128)
    return a, b, d


def weighted_phase_ascent(
    entries,
    amplitudes: np.ndarray,
    init_phases: np.ndarray,
    total_power: float,
    noise_power: float,
    max_iters: int,
    rel_tol: float,
    grid_points: int,
):
    """Alternating per-element phase sweep on a weighted sum capacity.

    `entries` is a sequence of (weight, realization); all realizations
    must share the element count.  Each sweep sets every live element to
    the best of `grid_points` uniform phases (keeping the current value
    when no grid point improves the objective), so the objective trace is
    non-decreasing by construction.

    Returns (phases, per_entry_capacities, trace) where trace[i] is the
    objective after i sweeps.
    """
    if max_iters < 1:
        raise ValueError(f"max_iters must be >= 1, got {max_iters}")
    if rel_tol <= 0.0:
        raise ValueError(f"rel_tol must be > 0, got {rel_tol}")
    if grid_points < 2:
        raise ValueError(f"grid_points must be >= 2, got {grid_points}")
    n = amplitudes.shape[0]
    weights = np.array([w for w, _ in entries], dtype=float)
    terms = [_effective_terms(real) for _, real in entries]
    for _, real in entries:
        if real.n_elements != n:
            raise ValueError("realizations disagree on the element count")
    outers = [a.T[:, :, None] * b[:, None, :] for a, b, _ in terms]  # (N, U, M)

    phases = np.array(init_phases, dtype=float)
    theta_vec = amplitudes * np.exp(1j * phases)
    hs = [(a * theta_vec[None, :]) @ b + d for a, b, d in terms]
    grid = TWO_PI * np.arange(grid_points) / grid_points

    def caps_now():
        return np.array([
            numkernel.capacity_closed_form(
                np.linalg.svd(h, compute_uv=False), total_power, noise_power)
            for h in hs
        ])

    per_caps = caps_now()
    cur = float(weights @ per_caps)
    trace = [cur]
    live = np.nonzero(amplitudes > 0.0)[0]
    for _ in range(max_iters):
        for nidx in live:
            cand = amplitudes[nidx] * np.exp(1j * grid)
            delta = cand - theta_vec[nidx]
            total = np.zeros(grid_points)
            cand_caps = []
            for k in range(len(terms)):
                hc = hs[k][None, :, :] + delta[:, None, None] * outers[k][nidx]
                sv = np.linalg.svd(hc, compute_uv=False)
                cg = numkernel.capacity_closed_form(sv, total_power, noise_power)
                cand_caps.append(cg)
                total += weights[k] * cg
            j = int(np.argmax(total))
            if total[j] > cur:
                for k in range(len(terms)):
                    hs[k] = hs[k] + delta[j] * outers[k][nidx]
                theta_vec[nidx] = cand[j]
                phases[nidx] = grid[j]
                per_caps = np.array([cc[j] for cc in cand_caps])
                cur = float(total[j])
        trace.append(cur)
        gain = trace[-1] - trace[-2]
        if gain <= rel_tol * max(abs(trace[-2]), 1e-30):
            break
    return wrap_phase(phases), per_caps, trace


@dataclass(frozen=True, eq=False)
class PhaseOptResult:
    panel: RisPanel
    capacity: float
    iterations: int
    trace: tuple


def optimize_phases_mimo(
    real: ChannelRealization,
    panel: RisPanel,
    total_power: float,
    noise_power: float,
    max_iters: int = 30,
    rel_tol: float = 1e-6,
    grid_points: int = DEFAULT_GRID_POINTS,
) -> PhaseOptResult:
    """Single-user capacity ascent over the panel phases.

    Alternates implicit water-filling (the capacity objective) with a
    per-element sweep over a uniform phase grid, starting from the
    aligned-MISO projection.  Amplitude-zero elements are skipped.
    """
    if panel.n_elements != real.n_elements:
        raise ValueError(
            f"panel has {panel.n_elements} elements, channel expects {real.n_elements}"
        )
    init = _aligned_init_phases(real)
    phases, caps, trace = weighted_phase_ascent(
        [(1.0, real)], panel.amplitudes, init, total_power, noise_power,
        max_iters, rel_tol, grid_points,
    )
    out = replace(panel, phases=phases, quantization_bits=None)
    return PhaseOptResult(
        panel=out,
        capacity=float(caps[0]),
        iterations=len(trace) - 1,
        trace=tuple(trace),
    )
