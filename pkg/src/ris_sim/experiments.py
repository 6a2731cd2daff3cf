"""Named experiment runners producing reproducible result tables.

Every runner maps a flat scenario mapping (defaults filled in from the
tables below) to a long-format table with one row per trial per metric.
All randomness is keyed on (seed, trial, label), so a table is a pure
function of (scenario, seed, trials) and does not depend on the number
of worker threads used to evaluate it.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from . import __version__
from .channel import (
    ChannelParams,
    ChannelRealization,
    Geometry,
    Scenario,
    assemble_effective,
    draw_realization,
)
from .coexist import (
    BandFilter,
    CoexNetwork,
    CoexScenario,
    LbtConfig,
    apply_band_filter,
    run_lbt_sim,
    stale_csi_trial,
)
from .deploy import BaseStation, Scene, cell_breathing, greedy_place
from .numkernel import numerical_rank, singular_values
from .ris import RisPanel, align_phases_miso, composite_gain, quantize_phases
from .scheduler import UserContext, compare_shared_vs_ideal
from .seeding import complex_normal, rng_from, subseed

_COLUMNS = (("trial", ""), ("metric", ""), ("value", "per metric"))

_REQUIRED = object()


@dataclass(frozen=True, eq=False)
class ResultTable:
    """Long-format experiment output plus provenance metadata.

    Parameters
    ----------
    columns : tuple
        (name, unit) pairs, one per column.
    rows : tuple
        Row tuples; arity must match `columns`.  Values are plain Python
        ints, floats, or strings.
    metadata : dict
        Provenance record: experiment name, seed, tool version, and the
        sha256 digest of the resolved configuration.
    """

    columns: tuple
    rows: tuple
    metadata: dict

    def __post_init__(self):
        cols = tuple((str(n), str(u)) for n, u in self.columns)
        object.__setattr__(self, "columns", cols)
        arity = len(cols)
        norm = []
        for row in self.rows:
            if len(row) != arity:
                raise ValueError(
                    f"row {row!r} has {len(row)} cells, table has {arity} columns"
                )
            norm.append(tuple(_plain(v) for v in row))
        object.__setattr__(self, "rows", tuple(norm))

    def to_csv(self) -> str:
        """Comma-separated text, \\n endings, 17 significant digits."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([name for name, _ in self.columns])
        for row in self.rows:
            w.writerow([_format_cell(v) for v in row])
        return buf.getvalue()

    def to_json(self) -> str:
        doc = {
            "columns": [{"name": n, "unit": u} for n, u in self.columns],
            "rows": [list(r) for r in self.rows],
            "metadata": self.metadata,
        }
        return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def _plain(v):
    """Collapse numpy scalars so rows serialize identically everywhere."""
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return float(v)
    if isinstance(v, str):
        return v
    raise TypeError(f"unsupported cell type {type(v).__name__}")


def _format_cell(v) -> str:
    if isinstance(v, bool):
        return str(v)
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        return format(v, ".17g")
    return v


def config_digest(mapping) -> str:
    """sha256 over the canonical JSON form of a configuration mapping."""
    text = json.dumps(mapping, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def write_outputs(table: ResultTable, out_path: str):
    """Write the CSV, its JSON mirror, and the metadata sidecar.

    For `results.csv` the mirror lands in `results.json` and the sidecar
    in `results.meta.json`; other extensions keep the full name as stem.
    Returns the three paths.
    """
    root = out_path[:-4] if out_path.endswith(".csv") else out_path
    csv_path = out_path
    json_path = root + ".json"
    meta_path = root + ".meta.json"
    with open(csv_path, "wb") as f:
        f.write(table.to_csv().encode("utf-8"))
    with open(json_path, "wb") as f:
        f.write(table.to_json().encode("utf-8"))
    meta = json.dumps(table.metadata, sort_keys=True, indent=2) + "\n"
    with open(meta_path, "wb") as f:
        f.write(meta.encode("utf-8"))
    return csv_path, json_path, meta_path


def _resolve(scenario, defaults, experiment):
    p = dict(defaults)
    for key, value in (scenario or {}).items():
        if key not in defaults:
            raise ValueError(
                f"unknown scenario field {key!r} for experiment {experiment!r}"
            )
        p[key] = value
    missing = sorted(k for k, v in p.items() if v is _REQUIRED)
    if missing:
        raise ValueError(
            f"experiment {experiment!r} requires scenario fields {missing}"
        )
    return p


def _table(experiment, seed, trials, params, rows) -> ResultTable:
    cfg = {
        "experiment": experiment,
        "seed": int(seed),
        "trials": int(trials),
        "scenario": params,
    }
    meta = {
        "experiment": experiment,
        "seed": int(seed),
        "trials": int(trials),
        "tool_version": __version__,
        "config_sha256": config_digest(cfg),
    }
    return ResultTable(columns=_COLUMNS, rows=tuple(rows), metadata=meta)


def _map_trials(fn, trials, threads):
    """Evaluate fn(0..trials-1), rows gathered back in trial order."""
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    if threads < 1:
        raise ValueError(f"threads must be >= 1, got {threads}")
    if threads == 1:
        nested = [fn(t) for t in range(trials)]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            nested = list(pool.map(fn, range(trials)))
    return [row for rows in nested for row in rows]


# ---------------------------------------------------------------------------
# rank: cascaded-channel rank collapse and its near-field escape

RANK_DEFAULTS = {
    "m_antennas": 4,
    "u_antennas": 4,
    "n_elements": 64,
    "wavelength": 0.1,
    "nb_position": (0.0, 0.0, 10.0),
    "ris_position": (50.0, 0.0, 10.0),
    "ue_position": (60.0, 5.0, 1.5),
    "ris_ue_rician_k": 0.0,
    "wavefront": "planar",
    "include_direct": False,
}


def _rank_scenario(p, seed) -> Scenario:
    geom = Geometry(
        wavelength=p["wavelength"],
        positions={
            "nb": p["nb_position"],
            "ris": p["ris_position"],
            "ue": p["ue_position"],
        },
    )
    wf = p["wavefront"]
    nb_ris = ChannelParams(rician_k=math.inf, wavefront_model=wf)
    ris_ue = ChannelParams(rician_k=p["ris_ue_rician_k"], wavefront_model=wf)
    nb_ue = ChannelParams(wavefront_model=wf) if p["include_direct"] else None
    return Scenario(
        geometry=geom,
        m_antennas=int(p["m_antennas"]),
        n_elements=int(p["n_elements"]),
        u_antennas=int(p["u_antennas"]),
        nb_ris=nb_ris,
        ris_ue=ris_ue,
        nb_ue=nb_ue,
        seed=seed,
    )


def run_rank(scenario, seed, trials, threads=1) -> ResultTable:
    """Numerical rank and leading singular values of the effective channel.

    The incident hop is pure LoS; under the planar wavefront it is an
    outer product, so the reflected channel pinches to rank one no matter
    how rich the departure hop is.  Switching `wavefront` to "spherical"
    (or "auto" inside the Fraunhofer distance) lifts the collapse.
    """
    p = _resolve(scenario, RANK_DEFAULTS, "rank")
    scn = _rank_scenario(p, seed)
    ones = np.ones(scn.n_elements, dtype=np.complex128)

    def one(t):
        real = draw_realization(scn, t)
        h_t = assemble_effective(real, ones)
        sv = singular_values(h_t)
        s2 = float(sv[1]) if sv.size > 1 else 0.0
        return [
            (t, "rank", numerical_rank(h_t)),
            (t, "sigma_1", float(sv[0])),
            (t, "sigma_2", s2),
        ]

    rows = _map_trials(one, trials, threads)
    return _table("rank", seed, trials, p, rows)


# ---------------------------------------------------------------------------
# beamform: aligned-phase array gain and quantization loss

BEAMFORM_DEFAULTS = {
    "n_list": (1, 4, 16, 64),
    "channel": "unit",
    "quantization_bits": (),
}


def run_beamform(scenario, seed, trials, threads=1) -> ResultTable:
    """Coherent power gain of an aligned panel, optionally quantized.

    With unit-modulus channels the gain is exactly N^2.  For "rayleigh"
    channels each trial draws fresh coefficients; `quantization_bits`
    adds quantized-to-continuous gain ratio rows per bit width.
    """
    p = _resolve(scenario, BEAMFORM_DEFAULTS, "beamform")
    if p["channel"] not in ("unit", "rayleigh"):
        raise ValueError(f"channel must be unit or rayleigh, got {p['channel']!r}")
    n_list = [int(n) for n in p["n_list"]]
    bits = [int(b) for b in p["quantization_bits"]]

    def one(t):
        rows = []
        for n in n_list:
            if p["channel"] == "unit":
                g = np.ones(n, dtype=np.complex128)
                h = np.ones(n, dtype=np.complex128)
            else:
                g = complex_normal(rng_from(seed, f"beamform/{t}/{n}/g"), n)
                h = complex_normal(rng_from(seed, f"beamform/{t}/{n}/h"), n)
            panel = align_phases_miso(g, h)
            gain = abs(composite_gain(g, h, panel)) ** 2
            rows.append((t, f"gain_n{n}", gain))
            for b in bits:
                q = quantize_phases(panel, b)
                qgain = abs(composite_gain(g, h, q)) ** 2
                ratio = qgain / gain if gain > 0.0 else 0.0
                rows.append((t, f"ratio_b{b}_n{n}", ratio))
        return rows

    rows = _map_trials(one, trials, threads)
    return _table("beamform", seed, trials, p, rows)


# ---------------------------------------------------------------------------
# multiuser: price of one shared reflection state

MULTIUSER_DEFAULTS = {
    "n_users": 4,
    "m_antennas": 2,
    "u_antennas": 2,
    "n_elements": 16,
    "qos_weights": (),
    "power_per_user": 10.0,
    "noise_power": 1.0,
    "grid_points": 16,
    "max_iters": 30,
    "rel_tol": 1e-6,
}


def run_multiuser(scenario, seed, trials, threads=1) -> ResultTable:
    """Shared-state sum capacity against per-user private optima.

    Users draw independent Rayleigh hops; empty `qos_weights` means equal
    weight one for everybody.
    """
    p = _resolve(scenario, MULTIUSER_DEFAULTS, "multiuser")
    k = int(p["n_users"])
    m, u, n = int(p["m_antennas"]), int(p["u_antennas"]), int(p["n_elements"])
    weights = [float(w) for w in p["qos_weights"]] or [1.0] * k
    if len(weights) != k:
        raise ValueError(
            f"qos_weights has {len(weights)} entries for {k} users"
        )
    panel = RisPanel.uniform(n)

    def one(t):
        users = []
        for i in range(k):
            g = complex_normal(rng_from(seed, f"multiuser/{t}/ue{i}/g"), (n, m))
            h = complex_normal(rng_from(seed, f"multiuser/{t}/ue{i}/h"), (u, n))
            real = ChannelRealization(
                g_nb_ris=g, h_ris_ue=h, h_nb_ue=None,
                pl_nb_ris=1.0, pl_ris_ue=1.0, pl_nb_ue=0.0,
            )
            users.append(UserContext(
                user_id=f"ue{i}",
                channel=real,
                subband=(float(i), float(i + 1)),
                qos_weight=weights[i],
            ))
        cmp = compare_shared_vs_ideal(
            users, panel, p["power_per_user"], p["noise_power"],
            int(p["max_iters"]), p["rel_tol"], int(p["grid_points"]),
        )
        return [
            (t, "shared_sum", cmp.shared_sum),
            (t, "ideal_sum", cmp.ideal_sum),
            (t, "gap_fraction", cmp.gap_fraction),
        ]

    rows = _map_trials(one, trials, threads)
    return _table("multiuser", seed, trials, p, rows)


# ---------------------------------------------------------------------------
# coexist and adjacent: two operators around one uncoordinated surface

_COEX_GEOMETRY = {
    "wavelength": 0.1,
    "nb_a_position": (0.0, 0.0, 10.0),
    "ris_a_position": (40.0, 0.0, 12.0),
    "ue_a_position": (45.0, 8.0, 1.5),
    "nb_b_position": (80.0, 40.0, 10.0),
    "ue_b_position": (50.0, 20.0, 1.5),
    "m_antennas": 2,
    "u_antennas": 2,
    "n_elements_a": 64,
    "tx_power_a": 1.0,
    "tx_power_b": 1.0,
    "rician_k": 0.0,
    "alpha_reflected": 2.0,
    "alpha_direct": 3.5,
    "noise_power": 1e-13,
    "t1": 0,
    "t2": 1,
    "policy": "rerandomize_each_slot",
    "b_direct_blocked": False,
}

COEXIST_DEFAULTS = {
    **_COEX_GEOMETRY,
    "mode": "stale_csi",
    "slots": 2000,
    "sense_threshold_dbm": -82.0,
    "directional_sensing": False,
    "backoff_slots_max": 8,
}

ADJACENT_DEFAULTS = {
    **_COEX_GEOMETRY,
    "oob_attenuation_db": 30.0,
    "insertion_loss_db": 0.5,
    "filter_passes": 2,
}


def _coex_scenario(p, same_frequency) -> CoexScenario:
    geom = Geometry(
        wavelength=p["wavelength"],
        positions={
            "nb_a": p["nb_a_position"],
            "ris_a": p["ris_a_position"],
            "ue_a": p["ue_a_position"],
            "nb_b": p["nb_b_position"],
            "ue_b": p["ue_b_position"],
        },
    )
    params = ChannelParams(
        rician_k=p["rician_k"],
        path_loss_exponent=p["alpha_reflected"],
        noise_power=p["noise_power"],
        wavefront_model="planar",
    )
    direct = replace(params, path_loss_exponent=p["alpha_direct"])
    m, u = int(p["m_antennas"]), int(p["u_antennas"])
    net_a = CoexNetwork(
        name="a", nb="nb_a", ue="ue_a", m_antennas=m, u_antennas=u,
        tx_power=p["tx_power_a"], ris="ris_a", n_elements=int(p["n_elements_a"]),
    )
    net_b = CoexNetwork(
        name="b", nb="nb_b", ue="ue_b", m_antennas=m, u_antennas=u,
        tx_power=p["tx_power_b"],
    )
    return CoexScenario(
        geometry=geom,
        params=params,
        net_a=net_a,
        net_b=net_b,
        same_frequency=same_frequency,
        t1=int(p["t1"]),
        t2=int(p["t2"]),
        ris_update_policy=p["policy"],
        direct_params=direct,
        b_direct_blocked=bool(p["b_direct_blocked"]),
    )


def run_coexist(scenario, seed, trials, threads=1) -> ResultTable:
    """Stale-CSI loss of the victim network, or a slotted LBT run.

    Mode "stale_csi" reports per-trial fresh and stale rates of network B
    precoding on measurement-time state.  Mode "lbt" runs `trials`
    independent listen-before-talk simulations of `slots` slots each.
    """
    p = _resolve(scenario, COEXIST_DEFAULTS, "coexist")
    if p["mode"] not in ("stale_csi", "lbt"):
        raise ValueError(f"mode must be stale_csi or lbt, got {p['mode']!r}")
    scn = _coex_scenario(p, same_frequency=True)

    if p["mode"] == "stale_csi":
        def one(t):
            fresh, stale, loss = stale_csi_trial(scn, t, seed)
            return [
                (t, "fresh_rate", fresh),
                (t, "stale_rate", stale),
                (t, "loss_fraction", loss),
            ]
    else:
        cfg = LbtConfig(
            sense_threshold_dbm=p["sense_threshold_dbm"],
            directional=bool(p["directional_sensing"]),
            backoff_slots_max=int(p["backoff_slots_max"]),
        )

        def one(t):
            res = run_lbt_sim(scn, cfg, int(p["slots"]), subseed(seed, f"run/{t}"))
            return [
                (t, "airtime_a", res.airtime_a),
                (t, "airtime_b", res.airtime_b),
                (t, "collision_fraction", res.collision_fraction),
                (t, "mean_rate_a", res.mean_rate_a),
                (t, "mean_rate_b", res.mean_rate_b),
            ]

    rows = _map_trials(one, trials, threads)
    return _table("coexist", seed, trials, p, rows)


def run_adjacent(scenario, seed, trials, threads=1) -> ResultTable:
    """Adjacent-band victim rates without and with surface band filtering.

    Both arms of a trial reuse the same channel and surface draws; the
    filtered arm scales the bounce amplitude by the double-pass
    out-of-band budget.
    """
    p = _resolve(scenario, ADJACENT_DEFAULTS, "adjacent")
    scn = _coex_scenario(p, same_frequency=False)
    filt = BandFilter(
        per_pass_oob_attenuation_db=p["oob_attenuation_db"],
        inband_insertion_loss_db=p["insertion_loss_db"],
        passes_on_reflection=int(p["filter_passes"]),
    )
    scale_db = apply_band_filter(filt, 0.0, 0.0, reflective=True).oob_out_dbm
    scale = 10.0 ** (scale_db / 20.0)

    def one(t):
        _, stale0, loss0 = stale_csi_trial(scn, t, seed, bounce_amp_scale=1.0)
        _, stale1, loss1 = stale_csi_trial(scn, t, seed, bounce_amp_scale=scale)
        return [
            (t, "rate_no_filter", stale0),
            (t, "rate_with_filter", stale1),
            (t, "loss_no_filter", loss0),
            (t, "loss_with_filter", loss1),
        ]

    rows = _map_trials(one, trials, threads)
    return _table("adjacent", seed, trials, p, rows)


# ---------------------------------------------------------------------------
# deploy: greedy panel placement on a blocked scene

DEPLOY_DEFAULTS = {
    "extent": (0.0, 0.0, 100.0, 60.0),
    "obstacles": ((45.0, 20.0, 55.0, 40.0),),
    "base_stations": ({"position": (10.0, 30.0), "tx_power_dbm": 30.0},),
    "candidate_sites": ((60.0, 8.0), (50.0, 50.0), (90.0, 30.0)),
    "grid_resolution": 2.0,
    "wavelength": 0.1,
    "n_elements": 256,
    "path_loss_exponent": 2.0,
    "noise_power": 1e-13,
    "threshold_db": _REQUIRED,
    "cost_per_panel": 1.0,
    "budget": 3.0,
    "target_fraction": 0.95,
    "gain_scales": (),
}


def run_deploy(scenario, seed, trials, threads=1) -> ResultTable:
    """Greedy coverage-driven placement plus optional breathing sweep.

    Deterministic given the scene, so `trials` and `threads` do not enter;
    the trial column carries the placement step (and, for breathing rows,
    the sweep index).  Step 0 is the panel-free baseline with site -1.
    """
    p = _resolve(scenario, DEPLOY_DEFAULTS, "deploy")
    stations = tuple(
        BaseStation(
            position=np.asarray(b["position"], dtype=float),
            tx_power_dbm=float(b["tx_power_dbm"]),
            antennas=int(b.get("antennas", 1)),
        )
        for b in p["base_stations"]
    )
    scene = Scene(
        extent=tuple(p["extent"]),
        obstacles=tuple(tuple(o) for o in p["obstacles"]),
        base_stations=stations,
        candidate_sites=tuple(tuple(s) for s in p["candidate_sites"]),
        grid_resolution=p["grid_resolution"],
        wavelength=p["wavelength"],
    )
    params = ChannelParams(
        rician_k=0.0,
        path_loss_exponent=p["path_loss_exponent"],
        noise_power=p["noise_power"],
        wavefront_model="planar",
    )
    template = RisPanel.uniform(int(p["n_elements"]))
    plan = greedy_place(
        scene, template, params,
        p["cost_per_panel"], p["budget"], p["threshold_db"], p["target_fraction"],
    )
    rows = []
    for step, (site, cov) in enumerate(plan.history):
        rows.append((step, "greedy_site", int(site)))
        rows.append((step, "greedy_coverage", float(cov)))
    for i, s in enumerate(p["gain_scales"]):
        cm = cell_breathing(scene, plan, params, float(s), p["threshold_db"])
        rows.append((i, "gain_scale", float(s)))
        rows.append((i, "breathing_coverage", float(cm.coverage_fraction)))
    return _table("deploy", seed, trials, p, rows)


RUNNERS = {
    "rank": run_rank,
    "beamform": run_beamform,
    "multiuser": run_multiuser,
    "coexist": run_coexist,
    "adjacent": run_adjacent,
    "deploy": run_deploy,
}

DEFAULTS = {
    "rank": RANK_DEFAULTS,
    "beamform": BEAMFORM_DEFAULTS,
    "multiuser": MULTIUSER_DEFAULTS,
    "coexist": COEXIST_DEFAULTS,
    "adjacent": ADJACENT_DEFAULTS,
    "deploy": DEPLOY_DEFAULTS,
}
