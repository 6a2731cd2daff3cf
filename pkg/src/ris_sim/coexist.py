"""Coexistence of two operators when one controls a reflective surface.

Network B's effective channel bounces off network A's surface, so A's
reconfigurations move B's channel between B's measurement slot t1 and its
transmit slot t2.  The module quantifies that stale-CSI loss, runs a
slotted listen-before-talk medium access simulation, and models two-pass
band filtering at the surface for adjacent-channel operation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .channel import (
    ChannelParams,
    Geometry,
    Scenario,
    assemble_effective,
    draw_realization,
    gen_los,
    gen_rician,
    path_gain,
    resolve_wavefront,
)
from .numkernel import rate_with_precoder, waterfill_capacity, waterfill_precoder
from .ris import _aligned_init_phases
from .seeding import rng_from, subseed

UPDATE_POLICIES = ("static", "rerandomize_each_slot", "frozen_during_foreign_slot")


@dataclass(frozen=True)
class CoexNetwork:
    """One operator: base station, user, and an optional own surface."""

    name: str
    nb: str
    ue: str
    m_antennas: int
    u_antennas: int
    tx_power: float
    ris: str | None = None
    n_elements: int = 0

    def __post_init__(self):
        if self.m_antennas < 1 or self.u_antennas < 1:
            raise ValueError("antenna counts must be >= 1")
        if not (self.tx_power > 0.0 and math.isfinite(self.tx_power)):
            raise ValueError(f"tx_power must be positive, got {self.tx_power}")
        if (self.ris is None) != (self.n_elements == 0):
            raise ValueError("ris node and n_elements must be given together")
        if self.n_elements < 0:
            raise ValueError(f"n_elements must be >= 0, got {self.n_elements}")


@dataclass(frozen=True, eq=False)
class CoexScenario:
    """Two networks in one geometry plus the surface update policy of A.

    `direct_params` describes the base-station/user ground links; it
    defaults to `params` but usually carries a higher path-loss exponent
    than the elevated reflected segments.  `b_direct_blocked` obstructs
    network B's ground path entirely, leaving B connected only through
    the bounce off A's surface (the victim-in-shadow case).
    """

    geometry: Geometry
    params: ChannelParams
    net_a: CoexNetwork
    net_b: CoexNetwork
    same_frequency: bool = True
    t1: int = 0
    t2: int = 1
    ris_update_policy: str = "rerandomize_each_slot"
    direct_params: ChannelParams | None = None
    b_direct_blocked: bool = False

    def __post_init__(self):
        if self.t1 > self.t2:
            raise ValueError(f"need t1 <= t2, got t1={self.t1}, t2={self.t2}")
        if self.ris_update_policy not in UPDATE_POLICIES:
            raise ValueError(
                f"unknown ris_update_policy {self.ris_update_policy!r}; "
                f"choose one of {UPDATE_POLICIES}"
            )
        if self.direct_params is None:
            object.__setattr__(self, "direct_params", self.params)
        for net in (self.net_a, self.net_b):
            self.geometry.position(net.nb)
            self.geometry.position(net.ue)
            if net.ris is not None:
                self.geometry.position(net.ris)


def _bounce_scenario(coex: CoexScenario, seed: int) -> Scenario:
    """Network B's link as seen through network A's surface."""
    if coex.net_a.ris is None:
        raise ValueError("network A must own a surface for the bounce channel")
    return Scenario(
        geometry=coex.geometry,
        m_antennas=coex.net_b.m_antennas,
        n_elements=coex.net_a.n_elements,
        u_antennas=coex.net_b.u_antennas,
        nb_ris=coex.params,
        ris_ue=coex.params,
        nb_ue=None if coex.b_direct_blocked else coex.direct_params,
        nb=coex.net_b.nb,
        ris=coex.net_a.ris,
        ue=coex.net_b.ue,
        seed=seed,
    )


def _foreign_theta(n: int, seed: int, label: str) -> np.ndarray:
    """Surface state drawn by the foreign controller: uniform phases."""
    phi = rng_from(seed, label).uniform(0.0, 2.0 * math.pi, n)
    return np.exp(1j * phi)


@dataclass(frozen=True, eq=False)
class StaleCsiResult:
    """Per-trial rates of network B with measurement-time precoding."""

    fresh_rates: np.ndarray
    stale_rates: np.ndarray
    loss_fractions: np.ndarray

    @property
    def mean_loss(self) -> float:
        return float(self.loss_fractions.mean())

    @property
    def mean_stale_rate(self) -> float:
        return float(self.stale_rates.mean())


def stale_csi_trial(
    scenario: CoexScenario,
    trial: int,
    seed: int,
    bounce_amp_scale: float = 1.0,
):
    """One stale-CSI trial; returns (fresh_rate, stale_rate, loss_fraction).

    All randomness is keyed on (seed, trial), so trials may be evaluated
    in any order or concurrently without changing a single bit.
    """
    b_link = _bounce_scenario(scenario, subseed(seed, "b-link"))
    n = scenario.net_a.n_elements
    p_b = scenario.net_b.tx_power
    noise = scenario.params.noise_power
    real = draw_realization(b_link, trial)
    th1 = _foreign_theta(n, seed, f"theta/{trial}/{scenario.t1}")
    if scenario.ris_update_policy == "rerandomize_each_slot" and scenario.t2 != scenario.t1:
        th2 = _foreign_theta(n, seed, f"theta/{trial}/{scenario.t2}")
    else:
        th2 = th1
    h1 = assemble_effective(real, th1, beta_gain=bounce_amp_scale)
    h2 = assemble_effective(real, th2, beta_gain=bounce_amp_scale)
    f1 = waterfill_precoder(h1, p_b, noise)
    f2 = waterfill_precoder(h2, p_b, noise)
    stale = rate_with_precoder(h2, f1, noise)
    fresh = rate_with_precoder(h2, f2, noise)
    loss = 0.0 if fresh == 0.0 else (fresh - stale) / fresh
    return fresh, stale, loss


def run_stale_csi(
    scenario: CoexScenario,
    trials: int,
    seed: int,
    bounce_amp_scale: float = 1.0,
) -> StaleCsiResult:
    """Measure-at-t1, transmit-at-t2 rate loss of network B.

    B water-fills its precoder on the effective channel at t1; the rate it
    actually gets is evaluated on the channel at t2, where A's surface has
    evolved per the update policy.  `bounce_amp_scale` attenuates the
    reflected term's amplitude (used by the adjacent-channel experiment).

    Under "static" and "frozen_during_foreign_slot" the two channels are
    the same object so the loss fraction is exactly zero.
    """
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    fresh = np.empty(trials)
    stale = np.empty(trials)
    loss = np.empty(trials)
    for t in range(trials):
        fresh[t], stale[t], loss[t] = stale_csi_trial(
            scenario, t, seed, bounce_amp_scale
        )
    return StaleCsiResult(fresh_rates=fresh, stale_rates=stale, loss_fractions=loss)


@dataclass(frozen=True)
class LbtConfig:
    """Listen-before-talk sensing parameters.

    `gain_table` holds (angle_lo, angle_hi, gain_db) rows applied to the
    angle of arrival when `directional`; angles outside every row get
    0 dB.  The sensed sum is compared against `sense_threshold_dbm`.
    """

    sense_threshold_dbm: float
    directional: bool = False
    gain_table: tuple = ()
    backoff_slots_max: int = 8

    def __post_init__(self):
        if self.backoff_slots_max < 0:
            raise ValueError(
                f"backoff_slots_max must be >= 0, got {self.backoff_slots_max}"
            )
        rows = tuple((float(a), float(b), float(g)) for a, b, g in self.gain_table)
        for a, b, _ in rows:
            if not a < b:
                raise ValueError(f"gain_table row ({a}, {b}) needs lo < hi")
        object.__setattr__(self, "gain_table", rows)

    def sense_gain_db(self, aoa: float) -> float:
        if not self.directional:
            return 0.0
        a = math.fmod(aoa, 2.0 * math.pi)
        if a < 0.0:
            a += 2.0 * math.pi
        for lo, hi, g in self.gain_table:
            if lo <= a < hi:
                return g
        return 0.0


def lbt_decide(cfg: LbtConfig, interferers) -> bool:
    """True when the summed sensed power stays below the threshold.

    `interferers` is a sequence of (power_dbm, aoa_rad) pairs; an empty
    medium always clears.
    """
    total_mw = 0.0
    for power_dbm, aoa in interferers:
        total_mw += 10.0 ** ((power_dbm + cfg.sense_gain_db(aoa)) / 10.0)
    if total_mw == 0.0:
        return True
    return 10.0 * math.log10(total_mw) < cfg.sense_threshold_dbm


def _watts_to_dbm(p: float) -> float:
    return 10.0 * math.log10(p * 1e3) if p > 0.0 else -math.inf


def _azimuth(geometry: Geometry, at: str, source: str) -> float:
    d = geometry.position(source) - geometry.position(at)
    return math.atan2(d[1], d[0])


def _own_link_rate(coex: CoexScenario, net: CoexNetwork, seed: int,
                   extra_noise: float) -> float:
    """Water-filled rate of one network's own link, surface aligned if owned."""
    params = coex.params
    dp = coex.direct_params
    geom = coex.geometry
    lam = geom.wavelength
    if net.ris is None:
        if coex.b_direct_blocked and net is coex.net_b:
            # shadowed victim: only the bounce off A's surface, whose state
            # B does not control, so a seeded foreign draw stands in
            link = _bounce_scenario(coex, subseed(seed, f"own/{net.name}"))
            real = draw_realization(link, 0)
            th = _foreign_theta(coex.net_a.n_elements, seed, f"own-theta/{net.name}")
            h_t = assemble_effective(real, th)
            return waterfill_capacity(h_t, net.tx_power,
                                      params.noise_power + extra_noise)
        wf = resolve_wavefront(geom, net.nb, net.ue, net.u_antennas,
                               net.m_antennas, dp.wavefront_model)
        los = gen_los(geom, net.nb, net.ue, net.u_antennas, net.m_antennas, wf)
        h = gen_rician(dp, los, subseed(seed, f"direct/{net.name}"))
        pl = path_gain(lam, geom.distance(net.nb, net.ue), dp.path_loss_exponent)
        h_t = math.sqrt(pl) * h
    else:
        link = Scenario(
            geometry=geom,
            m_antennas=net.m_antennas,
            n_elements=net.n_elements,
            u_antennas=net.u_antennas,
            nb_ris=params,
            ris_ue=params,
            nb_ue=dp,
            nb=net.nb,
            ris=net.ris,
            ue=net.ue,
            seed=subseed(seed, f"own/{net.name}"),
        )
        real = draw_realization(link, 0)
        aligned = np.exp(1j * _aligned_init_phases(real))
        h_t = assemble_effective(real, aligned)
    return waterfill_capacity(h_t, net.tx_power, params.noise_power + extra_noise)


def _interference_power(coex: CoexScenario, victim: CoexNetwork,
                        source: CoexNetwork) -> float:
    """Mean received power at the victim's user from the source network.

    The bounce off the source's own surface adds incoherently, hence the
    factor N rather than N^2.
    """
    geom = coex.geometry
    lam = geom.wavelength
    alpha = coex.params.path_loss_exponent
    p = path_gain(lam, geom.distance(source.nb, victim.ue), alpha)
    if source.ris is not None:
        p += (
            path_gain(lam, geom.distance(source.nb, source.ris), alpha)
            * source.n_elements
            * path_gain(lam, geom.distance(source.ris, victim.ue), alpha)
        )
    return source.tx_power * p


def _sensed_sources(coex: CoexScenario, listener: CoexNetwork,
                    source: CoexNetwork):
    """(power_dbm, aoa) contributions a transmission presents to a listener."""
    geom = coex.geometry
    lam = geom.wavelength
    alpha = coex.params.path_loss_exponent
    out = [(
        _watts_to_dbm(source.tx_power
                      * path_gain(lam, geom.distance(source.nb, listener.nb), alpha)),
        _azimuth(geom, listener.nb, source.nb),
    )]
    if source.ris is not None:
        p = (source.tx_power
             * path_gain(lam, geom.distance(source.nb, source.ris), alpha)
             * source.n_elements
             * path_gain(lam, geom.distance(source.ris, listener.nb), alpha))
        out.append((_watts_to_dbm(p), _azimuth(geom, listener.nb, source.ris)))
    return out


@dataclass(frozen=True, eq=False)
class LbtResult:
    airtime_a: float
    airtime_b: float
    collision_fraction: float
    mean_rate_a: float
    mean_rate_b: float


def run_lbt_sim(scenario: CoexScenario, cfg: LbtConfig, slots: int, seed: int) -> LbtResult:
    """Slotted medium access with carrier sensing and random backoff.

    Both networks are saturated.  Per slot, contenders are polled in a
    random order; each sums the power of transmissions already granted in
    the slot (directional sensing gain applied) and defers with a uniform
    backoff of up to `backoff_slots_max` slots when the medium reads
    busy.  Collisions are slots where both networks transmit on the same
    frequency; mean rates count idle slots as zero (throughput).
    """
    if slots < 1:
        raise ValueError(f"slots must be >= 1, got {slots}")
    nets = (scenario.net_a, scenario.net_b)
    sensed = {
        (i, j): _sensed_sources(scenario, nets[i], nets[j])
        for i in range(2)
        for j in range(2)
        if i != j
    }
    inter = [
        _interference_power(scenario, nets[i], nets[1 - i]) if scenario.same_frequency
        else 0.0
        for i in range(2)
    ]
    rate_alone = [_own_link_rate(scenario, nets[i], seed, 0.0) for i in range(2)]
    rate_coll = [_own_link_rate(scenario, nets[i], seed, inter[i]) for i in range(2)]

    rng = rng_from(seed, "lbt")
    backoff = [0, 0]
    tx_slots = [0, 0]
    collisions = 0
    rate_sum = [0.0, 0.0]
    for _ in range(slots):
        order = rng.permutation(2)
        granted = []
        for i in order:
            if backoff[i] > 0:
                backoff[i] -= 1
                continue
            if lbt_decide(cfg, [s for j in granted for s in sensed[(i, j)]]):
                granted.append(i)
            else:
                backoff[i] = int(rng.integers(0, cfg.backoff_slots_max + 1))
        collided = len(granted) == 2 and scenario.same_frequency
        if collided:
            collisions += 1
        for i in granted:
            tx_slots[i] += 1
            rate_sum[i] += rate_coll[i] if collided else rate_alone[i]
    return LbtResult(
        airtime_a=tx_slots[0] / slots,
        airtime_b=tx_slots[1] / slots,
        collision_fraction=collisions / slots,
        mean_rate_a=rate_sum[0] / slots,
        mean_rate_b=rate_sum[1] / slots,
    )


@dataclass(frozen=True)
class BandFilter:
    """Band-limiting layer in front of a surface.

    Reflection passes the layer twice, so out-of-band rejection and
    insertion loss both double on the reflected path.
    """

    per_pass_oob_attenuation_db: float
    inband_insertion_loss_db: float = 0.0
    passes_on_reflection: int = 2

    def __post_init__(self):
        if self.per_pass_oob_attenuation_db < 0.0:
            raise ValueError("per_pass_oob_attenuation_db must be >= 0")
        if self.inband_insertion_loss_db < 0.0 or not math.isfinite(self.inband_insertion_loss_db):
            raise ValueError("inband_insertion_loss_db must be finite and >= 0")
        if self.passes_on_reflection < 1:
            raise ValueError("passes_on_reflection must be >= 1")


@dataclass(frozen=True)
class FilteredPower:
    inband_out_dbm: float
    oob_out_dbm: float


def apply_band_filter(
    filt: BandFilter, inband_power_dbm: float, oob_power_dbm: float, reflective: bool
) -> FilteredPower:
    """dB budget of one traversal (or double-pass reflection) of the layer."""
    passes = filt.passes_on_reflection if reflective else 1
    inband = inband_power_dbm - filt.inband_insertion_loss_db * passes
    oob = (oob_power_dbm
           - filt.per_pass_oob_attenuation_db * passes
           - filt.inband_insertion_loss_db * passes)
    return FilteredPower(inband_out_dbm=inband, oob_out_dbm=oob)


@dataclass(frozen=True, eq=False)
class AdjacentChannelResult:
    """Paired per-trial rates of network B without and with A's filter."""

    rates_no_filter: np.ndarray
    rates_with_filter: np.ndarray

    @property
    def rate_b_no_filter(self) -> float:
        return float(self.rates_no_filter.mean())

    @property
    def rate_b_with_filter(self) -> float:
        return float(self.rates_with_filter.mean())


def run_adjacent_channel_sim(
    scenario: CoexScenario, filt: BandFilter, trials: int, seed: int
) -> AdjacentChannelResult:
    """Adjacent-channel operation with and without surface filtering.

    Requires `same_frequency` False.  Network B is out of band for A's
    surface, so the filtered bounce is attenuated by the double-pass
    budget; both arms reuse identical channel and surface draws, leaving
    the filter as the only difference.
    """
    if scenario.same_frequency:
        raise ValueError("adjacent-channel experiment needs same_frequency=False")
    scale_db = apply_band_filter(filt, 0.0, 0.0, reflective=True).oob_out_dbm
    scale = 10.0 ** (scale_db / 20.0)
    base = run_stale_csi(scenario, trials, seed, bounce_amp_scale=1.0)
    filtered = run_stale_csi(scenario, trials, seed, bounce_amp_scale=scale)
    return AdjacentChannelResult(
        rates_no_filter=base.stale_rates,
        rates_with_filter=filtered.stale_rates,
    )
