"""Complex linear-algebra kernel shared by every other module.

Thin, validated layer over LAPACK: singular spectra, numerical rank,
conditioning, and water-filling power allocation.  All channel blocks are
plain 2-D complex128 ndarrays; `as_complex_matrix` is the single entry
gate that enforces that contract.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

#: relative threshold under which a singular value does not count toward rank
DEFAULT_RANK_TOL = 1e-8

#: sigma_min below this fraction of sigma_max is treated as exact singularity
_SINGULAR_FRACTION = 1e-14

#: relative accuracy of the water-filling power constraint
_WF_TOL = 1e-10
_WF_MAX_ITERS = 200


def as_complex_matrix(a, name: str = "matrix") -> np.ndarray:
    """Validate and return `a` as a 2-D complex128 array.

    Raises ValueError for wrong dimensionality, zero-sized axes, or
    non-finite entries.
    """
    arr = np.asarray(a, dtype=np.complex128)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got ndim={arr.ndim}")
    if arr.shape[0] == 0 or arr.shape[1] == 0:
        raise ValueError(f"{name} has a zero dimension: shape={arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


@dataclass(frozen=True, eq=False)
class SvdResult:
    """Full singular value decomposition a = U diag(s) V^H.

    `left_vectors` has orthonormal columns (U), `right_vectors` holds the
    right singular vectors as columns (V, not V^H), and `singular_values`
    is sorted in descending order.
    """

    left_vectors: np.ndarray
    singular_values: np.ndarray
    right_vectors: np.ndarray


def svd(a) -> SvdResult:
    arr = as_complex_matrix(a)
    u, s, vh = np.linalg.svd(arr, full_matrices=False)
    return SvdResult(u, s, vh.conj().T)


def singular_values(a) -> np.ndarray:
    """Descending singular values of a validated complex matrix."""
    arr = as_complex_matrix(a)
    return np.linalg.svd(arr, compute_uv=False)


def numerical_rank(a, rel_tol: float = DEFAULT_RANK_TOL) -> int:
    """Number of singular values above rel_tol * sigma_max.

    A zero matrix has rank 0.  `rel_tol` must lie strictly inside (0, 1).
    """
    if not (0.0 < rel_tol < 1.0):
        raise ValueError(f"rel_tol must be in (0, 1), got {rel_tol}")
    s = singular_values(a)
    smax = s[0]
    if smax == 0.0:
        return 0
    return int(np.count_nonzero(s > rel_tol * smax))


def condition_number(a) -> float:
    """sigma_max / sigma_min; math.inf once sigma_min underflows the
    singularity threshold.  A zero matrix is rejected."""
    s = singular_values(a)
    smax, smin = s[0], s[-1]
    if smax == 0.0:
        raise ValueError("condition number of the zero matrix is undefined")
    if smin < _SINGULAR_FRACTION * smax:
        return np.inf
    return float(smax / smin)


def _check_powers(total_power: float, noise_power: float) -> None:
    if not (total_power > 0.0 and np.isfinite(total_power)):
        raise ValueError(f"total_power must be positive, got {total_power}")
    if not (noise_power > 0.0 and np.isfinite(noise_power)):
        raise ValueError(f"noise_power must be positive, got {noise_power}")


def waterfill_powers(svals, total_power: float, noise_power: float) -> np.ndarray:
    """Water-filling allocation over the eigenmodes of one channel.

    Parameters
    ----------
    svals : array_like, shape (k,)
        Singular values of the channel matrix.
    total_power, noise_power : float
        Transmit power budget and per-antenna noise variance (linear).

    Returns
    -------
    ndarray, shape (k,)
        Non-negative powers summing to total_power within 1e-10 relative.
    """
    s = np.atleast_1d(np.asarray(svals, dtype=float))
    p = _waterfill_batch(s[None, :], total_power, noise_power)[0]
    return p


def _waterfill_batch(svals: np.ndarray, total_power: float, noise_power: float) -> np.ndarray:
    """Vectorised bisection on the water level, one row per channel."""
    _check_powers(total_power, noise_power)
    gains = svals.astype(float) ** 2 / noise_power
    active = gains > 0.0
    inv = np.where(active, 1.0 / np.where(active, gains, 1.0), 0.0)
    b = gains.shape[0]
    # rows with no usable mode keep a zero allocation
    usable = active.any(axis=1)
    lo = np.zeros(b)
    hi = total_power + np.where(usable, np.max(inv, axis=1), 1.0)
    target = total_power
    for _ in range(_WF_MAX_ITERS):
        mu = 0.5 * (lo + hi)
        alloc = np.maximum(mu[:, None] - inv, 0.0) * active
        tot = alloc.sum(axis=1)
        too_much = tot > target
        hi = np.where(too_much, mu, hi)
        lo = np.where(too_much, lo, mu)
        if np.all(~usable | (np.abs(tot - target) <= _WF_TOL * target)):
            break
    mu = 0.5 * (lo + hi)
    alloc = np.maximum(mu[:, None] - inv, 0.0) * active
    alloc[~usable] = 0.0
    return alloc


def capacity_from_singular_values(svals, total_power: float, noise_power: float):
    """Water-filled capacity in bits/s/Hz from singular values.

    Accepts a single spectrum (k,) or a batch (b, k); returns a float or a
    length-b vector accordingly.
    """
    s = np.asarray(svals, dtype=float)
    single = s.ndim == 1
    s2 = s[None, :] if single else s
    p = _waterfill_batch(s2, total_power, noise_power)
    gains = s2**2 / noise_power
    cap = np.log2(1.0 + p * gains).sum(axis=1)
    return float(cap[0]) if single else cap


def capacity_closed_form(svals, total_power: float, noise_power: float):
    """Water-filled capacity via the exact sorted-mode water level.

    Same optimum as the bisection allocator but loop-free, so it is the
    evaluator of choice inside phase-sweep hot loops; the two routes agree
    to the bisection tolerance (cross-checked in the test suite).
    Accepts (k,) or (b, k) spectra like `capacity_from_singular_values`.
    """
    _check_powers(total_power, noise_power)
    s = np.asarray(svals, dtype=float)
    single = s.ndim == 1
    s2 = s[None, :] if single else s
    gains = np.sort(s2**2 / noise_power, axis=1)[:, ::-1]
    pos = gains > 0.0
    inv = np.where(pos, 1.0 / np.where(pos, gains, 1.0), 0.0)
    csum = np.cumsum(inv, axis=1)
    m = np.arange(1, gains.shape[1] + 1, dtype=float)
    mu = (total_power + csum) / m[None, :]
    # a mode stays active while the water level clears its inverse gain
    valid = pos & (mu > inv)
    nact = valid.sum(axis=1)
    cap = np.zeros(gains.shape[0])
    usable = nact > 0
    if np.any(usable):
        idx = nact[usable] - 1
        mu_star = mu[usable, idx]
        logsum = np.cumsum(np.log2(np.where(pos, gains, 1.0)), axis=1)[usable, idx]
        cap[usable] = nact[usable] * np.log2(mu_star) + logsum
    return float(cap[0]) if single else cap


def waterfill_capacity(h, total_power: float, noise_power: float) -> float:
    """Capacity of channel `h` under optimal power allocation.

    The zero matrix carries no information and returns 0.
    """
    s = singular_values(h)
    if s[0] == 0.0:
        _check_powers(total_power, noise_power)
        return 0.0
    return capacity_from_singular_values(s, total_power, noise_power)


def waterfill_precoder(h, total_power: float, noise_power: float) -> np.ndarray:
    """Right-singular-vector precoder with water-filled per-stream powers.

    Returns F of shape (cols(h), k); the Frobenius norm squared equals the
    allocated power (<= total_power).
    """
    res = svd(h)
    p = waterfill_powers(res.singular_values, total_power, noise_power)
    return res.right_vectors * np.sqrt(p)[None, :]


def rate_with_precoder(h, f, noise_power: float) -> float:
    """log2 det(I + H F F^H H^H / noise): rate achieved by a fixed precoder."""
    arr = as_complex_matrix(h)
    fm = as_complex_matrix(f, "precoder")
    if fm.shape[0] != arr.shape[1]:
        raise ValueError(
            f"precoder rows {fm.shape[0]} must match channel cols {arr.shape[1]}"
        )
    if not (noise_power > 0.0 and np.isfinite(noise_power)):
        raise ValueError(f"noise_power must be positive, got {noise_power}")
    hf = arr @ fm
    gram = np.eye(arr.shape[0], dtype=np.complex128) + hf @ hf.conj().T / noise_power
    sign, logdet = np.linalg.slogdet(gram)
    return float(logdet / np.log(2.0))
