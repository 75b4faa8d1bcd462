"""Batch analysis: tensor in, measure curves and LQS tables out.

The heavy lifting is done on whole tracks: for every measure the full
``(m, m')`` matrix is evaluated once (vectorized over track positions)
and then cut into :class:`~quasistat.measures.MeasurePair` objects for
scenario averaging.
"""

from __future__ import annotations

import copy
import json
import logging
import math
import os
import shutil
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .channel import (
    ChannelTensor,
    PhaseOffsets,
    SubArraySelection,
    apply_noise_floor,
    apply_phase_offsets,
    normalize_copolarized,
    read_container,
    select_subarray,
)
from .errors import ConfigError
from .lqs import (
    SPEED_OF_LIGHT,
    average_measure,
    du_check,
    extract_lqs,
    measure_correlation,
    odometer_distance,
    symmetric_offsets,
)
from .measures import (
    EstimatorConfig,
    MeasureKind,
    MeasurePair,
    approx_mse_matrix,
    dominant_eigenvector,
    estimate_corr_track,
    exact_mse_matrix,
)
from .spectral import estimate_glsf, make_dpss_bank, marginal_delay, marginal_doppler
from .synth import generate, load_scene, scene_from_dict

log = logging.getLogger(__name__)

__all__ = [
    "DEFAULT_CONFIG",
    "RunConfig",
    "MeasureTrack",
    "load_input",
    "preprocess",
    "measure_tracks",
    "track_pairs",
    "AnalysisResult",
    "analyze_tensor",
    "artifacts",
    "write_artifacts",
    "run",
]

SPECTRAL_KINDS = (
    MeasureKind.COL_DOPPLER, MeasureKind.COL_DELAY,
    MeasureKind.MSE_DOPPLER_EXACT, MeasureKind.MSE_DOPPLER_AP,
    MeasureKind.MSE_DELAY_EXACT, MeasureKind.MSE_DELAY_AP,
)
SPATIAL_KINDS = (
    MeasureKind.CMD_TX, MeasureKind.CMD_RX, MeasureKind.CMD_FULL,
    MeasureKind.SNR_TX, MeasureKind.SNR_RX,
)

DEFAULT_CONFIG = {
    "input": {},
    "subarrays": [],
    "preprocess": {
        "noise_floor": True,
        "margin_db": 6.0,
        "noise_calibrated": True,
        "normalize": True,
        "region_time": 16,
        "region_freq": 128,
        "phase_offsets": None,
    },
    "estimator": {
        "n_wt": 32,
        "n_wf": 128,
        "nw": 2.0,
        "n_time_windows": 2,
        "n_freq_windows": 2,
        "n_doppler": 63,
        "n_delay": 255,
        "stride_t": 16,
        "stride_f": 128,
        "n_t": 16,
        "n_f": 128,
    },
    "measures": [k.value for k in MeasureKind],
    "mse": {
        "gamma_db": 10.0,
        "pilot_spacing": 1,
        "interval_time": 30,
        "interval_freq": 120,
    },
    "lqs": {
        "thresholds": [0.9],
        "d_max": 50.0,
        "correlation_offset_m": -10.0,
        "distance_mapping": "mean_speed",
    },
    "du": {
        "v_max": None,
        "tau_max": 5e-6,
        "d_stat_min": None,
        "w_max": 15.0,
        "ratio_limit": 0.1,
    },
    "threads": 1,
}


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if key not in base and key not in ("out",):
            raise ConfigError(f"unknown config key {key!r}")
        if isinstance(out.get(key), dict) and isinstance(value, dict) and key != "input":
            unknown = set(value) - set(out[key])
            if unknown:
                raise ConfigError(f"unknown keys in {key!r}: {sorted(unknown)}")
            out[key].update(value)
        else:
            out[key] = copy.deepcopy(value)
    return out


@dataclass
class RunConfig:
    """Resolved run configuration; ``values`` mirrors :data:`DEFAULT_CONFIG`."""

    values: dict
    base_dir: Path = field(default_factory=Path.cwd)

    @classmethod
    def from_dict(cls, doc: dict, base_dir=None) -> "RunConfig":
        cfg = cls(_merge(DEFAULT_CONFIG, doc), Path(base_dir) if base_dir else Path.cwd())
        cfg.validate()
        return cfg

    def __getitem__(self, key):
        return self.values[key]

    def validate(self) -> None:
        v = self.values
        for th in v["lqs"]["thresholds"]:
            if not isinstance(th, (int, float)) or not 0.0 <= th <= 1.0:
                raise ConfigError(f"threshold {th!r} outside [0, 1]")
        if v["lqs"]["distance_mapping"] not in ("mean_speed", "odometer"):
            raise ConfigError("distance_mapping must be 'mean_speed' or 'odometer'")
        if not v["lqs"]["d_max"] > 0:
            raise ConfigError("d_max must be > 0")
        for name in v["measures"]:
            try:
                MeasureKind(name)
            except ValueError:
                raise ConfigError(f"unknown measure {name!r}") from None
        if v["preprocess"]["margin_db"] < 0:
            raise ConfigError("margin_db must be >= 0")
        est = v["estimator"]
        if est["n_doppler"] % 2 == 0:
            raise ConfigError("n_doppler must be odd")
        if int(v["threads"]) < 1:
            raise ConfigError("threads must be >= 1")
        EstimatorConfig.from_db(v["mse"]["gamma_db"], v["mse"]["pilot_spacing"], 1)
        inp = v["input"]
        if not isinstance(inp, dict) or not ({"ctf", "scene"} & set(inp)):
            raise ConfigError("input needs a 'ctf' path or a 'scene'")

    def resolve(self, path) -> Path:
        p = Path(path)
        return p if p.is_absolute() else self.base_dir / p

    @property
    def kinds(self):
        return [MeasureKind(k) for k in self.values["measures"]]

    def manifest_view(self) -> dict:
        doc = copy.deepcopy(self.values)
        doc.pop("out", None)
        return doc


def load_input(cfg: RunConfig, seed=None) -> tuple:
    """Return ``(tensor, seed_used)`` for the configured input."""
    inp = cfg["input"]
    if "ctf" in inp:
        return read_container(cfg.resolve(inp["ctf"])), None
    scene_doc = inp["scene"]
    scene = (scene_from_dict(scene_doc) if isinstance(scene_doc, dict)
             else load_scene(cfg.resolve(scene_doc)))
    used = int(seed if seed is not None else inp.get("seed", scene.seed))
    return generate(scene.clusters, scene.steering, scene.grid, used), used


def preprocess(t: ChannelTensor, cfg: RunConfig) -> ChannelTensor:
    pre = cfg["preprocess"]
    if pre.get("phase_offsets"):
        po = pre["phase_offsets"]
        t = apply_phase_offsets(t, PhaseOffsets(tuple(po["tx"]), tuple(po["rx"])))
    if pre["noise_floor"]:
        t = apply_noise_floor(t, pre["margin_db"], bool(pre["noise_calibrated"]))
    if pre["normalize"]:
        t = normalize_copolarized(t, pre["region_time"], pre["region_freq"])
    return t


# --------------------------------------------------------------------------
# Pairwise measure matrices
# --------------------------------------------------------------------------

@dataclass
class MeasureTrack:
    """Pairwise values ``values[a, b]`` = eta[m_a, m_b] on one track.

    ``keys`` label track positions on a common bin grid (sample index
    divided by the track stride) so that different measures can be
    aligned; ``spacing`` is the time between positions. Invalid entries
    are NaN.
    """

    kind: MeasureKind
    keys: np.ndarray
    values: np.ndarray
    spacing: float


def _gram_collinearity(x: np.ndarray) -> np.ndarray:
    """Normalized real Gram matrix of rows of ``x``; NaN for zero rows."""
    norms = np.linalg.norm(x, axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        y = x / norms[:, None]
    g = np.real(y @ y.conj().T)
    g[norms == 0, :] = np.nan
    g[:, norms == 0] = np.nan
    return np.clip(g, 0.0, 1.0)


def _relative(mse: np.ndarray) -> np.ndarray:
    matched = np.diag(mse)[:, None]
    with np.errstate(invalid="ignore", divide="ignore"):
        rel = matched / mse
    rel[matched[:, 0] <= 0, :] = np.nan
    return np.clip(rel, 0.0, 1.0)


def _nanmean_stack(mats):
    stack = np.stack(mats)
    with np.errstate(invalid="ignore"):
        count = np.sum(~np.isnan(stack), axis=0)
        total = np.nansum(stack, axis=0)
        out = total / np.where(count > 0, count, 1)
    out[count == 0] = np.nan
    return out


def _spectral_matrices(psd, kinds, mse_cfg, bandwidth, interval):
    """Pairwise matrices from a PSD track ``psd.values[M, Q, B]``, averaged over Q."""
    out = {k: [] for k in kinds}
    est = EstimatorConfig(mse_cfg.gamma, mse_cfg.pilot_spacing, interval)
    for j in range(psd.values.shape[1]):
        c = psd.values[:, j, :]
        for kind in kinds:
            if kind in (MeasureKind.COL_DOPPLER, MeasureKind.COL_DELAY):
                out[kind].append(_gram_collinearity(c))
            elif kind in (MeasureKind.MSE_DOPPLER_AP, MeasureKind.MSE_DELAY_AP):
                out[kind].append(_relative(approx_mse_matrix(c, est.gamma, bandwidth)))
            else:
                out[kind].append(_relative(exact_mse_matrix(c, est, bandwidth, psd.bins)))
    return {k: _nanmean_stack(v) for k, v in out.items()}


def _spatial_matrix(track, kind):
    mats = []
    for j in range(track.matrices.shape[1]):
        r = track.matrices[:, j]
        if kind in (MeasureKind.CMD_TX, MeasureKind.CMD_RX, MeasureKind.CMD_FULL):
            mats.append(_gram_collinearity(r.reshape(r.shape[0], -1)))
        else:
            lam = np.array([np.linalg.eigvalsh(x)[-1] for x in r])
            u = np.stack([dominant_eigenvector(x) if np.any(x) else np.zeros(x.shape[0])
                          for x in r])
            # gain[a, b] = u_b^H R_a u_b
            gain = np.real(np.einsum("bi,aij,bj->ab", u.conj(), r, u, optimize=True))
            with np.errstate(invalid="ignore", divide="ignore"):
                rel = gain / lam[:, None]
            rel[lam <= 0, :] = np.nan
            mats.append(np.clip(rel, 0.0, 1.0))
    return _nanmean_stack(mats)


def measure_tracks(t: ChannelTensor, cfg: RunConfig) -> list:
    """Evaluate every configured measure on a (preprocessed) tensor.

    Spectral measures are evaluated per sub-link; spatial measures once
    per tensor. Returns a list of :class:`MeasureTrack`.
    """
    est = cfg["estimator"]
    mse = cfg["mse"]
    kinds = cfg.kinds
    flagged = t.flagged_times()
    mse_cfg = EstimatorConfig.from_db(mse["gamma_db"], mse["pilot_spacing"], 1)
    tracks = []

    spectral = [k for k in kinds if k in SPECTRAL_KINDS]
    if spectral:
        bank = make_dpss_bank(est["n_wt"], est["n_wf"], est["nw"],
                              est["n_time_windows"], est["n_freq_windows"])
        doppler_kinds = [k for k in spectral if "DOPPLER" in k.value]
        delay_kinds = [k for k in spectral if "DELAY" in k.value]

        def one_link(kl):
            k, l = kl
            g = estimate_glsf(t.samples[:, :, k, l], bank, est["n_doppler"], est["n_delay"],
                              est["stride_t"], est["stride_f"],
                              t.grid.time_spacing, t.grid.freq_spacing)
            res = {}
            if doppler_kinds:
                res.update(_spectral_matrices(marginal_doppler(g), doppler_kinds, mse_cfg,
                                              1.0 / t.grid.time_spacing, mse["interval_time"]))
            if delay_kinds:
                res.update(_spectral_matrices(marginal_delay(g), delay_kinds, mse_cfg,
                                              1.0 / t.grid.freq_spacing, mse["interval_freq"]))
            return g.time_index, res

        links = [(k, l) for k in range(t.n_rx) for l in range(t.n_tx)]
        with ThreadPoolExecutor(max_workers=int(cfg["threads"])) as pool:
            results = list(pool.map(one_link, links))
        half = est["n_wt"] // 2
        for centres, res in results:
            bad = np.array([flagged[max(0, c - half):c + est["n_wt"] - half].any()
                            for c in centres], dtype=bool)
            keys = centres // est["stride_t"]
            for kind in spectral:
                vals = res[kind].copy()
                vals[bad, :] = np.nan
                vals[:, bad] = np.nan
                tracks.append(MeasureTrack(kind, keys, vals,
                                           est["stride_t"] * t.grid.time_spacing))

    sides = {MeasureKind.CMD_TX: "TX", MeasureKind.SNR_TX: "TX",
             MeasureKind.CMD_RX: "RX", MeasureKind.SNR_RX: "RX",
             MeasureKind.CMD_FULL: "FULL"}
    corr_cache = {}
    for kind in (k for k in kinds if k in SPATIAL_KINDS):
        side = sides[kind]
        if side not in corr_cache:
            corr_cache[side] = estimate_corr_track(t, side, est["n_t"], est["n_f"])
        track = corr_cache[side]
        vals = _spatial_matrix(track, kind)
        n_t = est["n_t"]
        bad = np.array([flagged[b * n_t:(b + 1) * n_t].any() for b in range(track.n_bins)])
        vals[bad, :] = np.nan
        vals[:, bad] = np.nan
        tracks.append(MeasureTrack(kind, track.time_index // n_t, vals,
                                   n_t * t.grid.time_spacing))
    return tracks


def track_pairs(track: MeasureTrack, offsets):
    """Yield :class:`MeasurePair` objects for the given offsets."""
    n = len(track.keys)
    for off in offsets:
        for a in range(max(0, -off), min(n, n - off)):
            v = track.values[a, a + off]
            if not np.isnan(v):
                yield MeasurePair(float(v), int(track.keys[a]), int(track.keys[a + off]),
                                  track.kind)


def offsets_at(track: MeasureTrack, value: int):
    """Per-position values ``eta[m, m + value]`` keyed by ``m``."""
    n = len(track.keys)
    return {int(track.keys[a]): float(track.values[a, a + value])
            for a in range(max(0, -value), min(n, n - value))
            if not np.isnan(track.values[a, a + value])}


# --------------------------------------------------------------------------
# Whole analysis
# --------------------------------------------------------------------------

@dataclass
class AnalysisResult:
    setup: str
    curves: dict                # kind -> MeasureCurve
    spacing: dict               # kind -> seconds between track positions
    lqs: list                   # (kind, LqsResult)
    correlation: dict           # {"offset_bins", "kinds", "matrix"}
    mean_speed: float
    grid: object = None
    distance_mapping: str = "mean_speed"

    def distance(self, seconds: float) -> float:
        """Map a signed time span to travelled distance."""
        if self.distance_mapping == "odometer":
            d = odometer_distance(self.grid.speed_per_sample, self.grid.time_spacing,
                                  abs(seconds))
            return math.copysign(d, seconds)
        return seconds * self.mean_speed


def _max_offset(d_max, spacing, speed, n_positions):
    cap = max(n_positions - 1, 0)
    if speed <= 0:
        return cap
    return min(int(math.ceil(d_max / (spacing * speed))), cap)


def analyze_tensor(t: ChannelTensor, cfg: RunConfig, setup: str = "all") -> AnalysisResult:
    """Measures, scenario-averaged curves, LQS results and correlations."""
    speed = t.grid.mean_speed
    tracks = measure_tracks(t, cfg)
    by_kind = {}
    for tr in tracks:
        by_kind.setdefault(tr.kind, []).append(tr)

    lq = cfg["lqs"]
    curves, spacing, lqs_rows = {}, {}, []
    for kind in cfg.kinds:
        group = by_kind[kind]
        dt = group[0].spacing
        max_off = _max_offset(lq["d_max"], dt, speed, len(group[0].keys))
        offsets = symmetric_offsets(max_off)
        pairs = (p for tr in group for p in track_pairs(tr, offsets))
        curve = average_measure(pairs, offsets, kind=kind.value, scenario_id=setup)
        curves[kind] = curve
        spacing[kind] = dt
        for th in lq["thresholds"]:
            lqs_rows.append((kind, extract_lqs(curve, float(th), dt, speed)))

    correlation = {"offset_bins": None, "kinds": [], "matrix": None}
    kinds = [k for k in cfg.kinds if k in by_kind]
    if speed > 0 and len(kinds) >= 2:
        dt = by_kind[kinds[0]][0].spacing
        off = int(round(lq["correlation_offset_m"] / (dt * speed)))
        # Nearest offset that still leaves two positions to correlate.
        reach = min(len(by_kind[k][0].keys) for k in kinds) - 2
        off = int(np.clip(off, -reach, reach)) if reach >= 0 else 0
        seqs = {}
        for kind in kinds:
            merged = {}
            for tr in by_kind[kind]:
                for key, v in offsets_at(tr, off).items():
                    merged.setdefault(key, []).append(v)
            seqs[kind] = {key: float(np.mean(v)) for key, v in merged.items()}
        common = sorted(set.intersection(*(set(s) for s in seqs.values())))
        mat = np.full((len(kinds), len(kinds)), np.nan)
        if len(common) >= 2:
            for i, a in enumerate(kinds):
                for j, b in enumerate(kinds):
                    x = [seqs[a][c] for c in common]
                    y = [seqs[b][c] for c in common]
                    try:
                        mat[i, j] = measure_correlation(x, y)
                    except Exception:  # constant sequence: correlation undefined
                        mat[i, j] = np.nan
        correlation = {"offset_bins": off, "kinds": kinds, "matrix": mat}
    res = AnalysisResult(setup, curves, spacing, lqs_rows, correlation, speed, t.grid,
                         lq["distance_mapping"])
    if res.distance_mapping != "mean_speed":
        res.lqs = [(k, replace(r, lqs_distance=res.distance(r.lqs_time))) for k, r in lqs_rows]
    return res


def du_report_for(t: ChannelTensor, cfg: RunConfig):
    du = cfg["du"]
    v_max = du["v_max"] if du["v_max"] is not None else max(t.grid.speed_per_sample)
    d_stat = (du["d_stat_min"] if du["d_stat_min"] is not None
              else 10.0 * SPEED_OF_LIGHT / t.grid.carrier_freq)
    params = {"v_max": float(v_max), "f_c": t.grid.carrier_freq, "tau_max": du["tau_max"],
              "d_stat_min": float(d_stat), "w_max": du["w_max"],
              "ratio_limit": du["ratio_limit"]}
    if v_max <= 0:
        return params, None
    return params, du_check(**params)


# --------------------------------------------------------------------------
# Artifact emission
# --------------------------------------------------------------------------

def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, str):
        return x
    x = float(x)
    return "nan" if math.isnan(x) else f"{x:.12g}"


def _csv(header, rows) -> str:
    lines = [",".join(header)]
    lines += [",".join(_fmt(v) for v in row) for row in rows]
    return "\n".join(lines) + "\n"


def _json(doc) -> str:
    def clean(v):
        if isinstance(v, dict):
            return {k: clean(x) for k, x in v.items()}
        if isinstance(v, (list, tuple)):
            return [clean(x) for x in v]
        if isinstance(v, float) and not math.isfinite(v):
            return None
        return v
    return json.dumps(clean(doc), indent=2, sort_keys=True, allow_nan=False) + "\n"


def _selections(cfg: RunConfig, t: ChannelTensor):
    subs = cfg["subarrays"]
    if not subs:
        return [SubArraySelection(tuple(range(t.n_rx)), tuple(range(t.n_tx)), "all")]
    out = []
    for s in subs:
        sel = SubArraySelection(tuple(s["rx"]), tuple(s["tx"]), str(s["name"]))
        sel.validate(t.n_rx, t.n_tx)
        out.append(sel)
    names = [s.name for s in out]
    if len(set(names)) != len(names):
        raise ConfigError("sub-array names must be unique")
    return out


def artifacts(cfg: RunConfig, seed=None) -> dict:
    """Run the whole chain and return ``{relative path: text}``."""
    raw, used_seed = load_input(cfg, seed)
    t = preprocess(raw, cfg)
    results = []
    for sel in _selections(cfg, t):
        log.info("analysing sub-array %s (rx %s, tx %s)", sel.name, sel.rx_indices,
                 sel.tx_indices)
        results.append(analyze_tensor(select_subarray(t, sel), cfg, sel.name))

    files = {}
    lqs_rows = []
    for res in results:
        for kind, curve in res.curves.items():
            dt = res.spacing[kind]
            header = ["delta_m", "distance_m", "avg", "std", "count"]
            rows = [(int(o), res.distance(o * dt), a, s, int(c))
                    for o, a, s, c in zip(curve.offsets, curve.avg, curve.std, curve.count)]
            if kind.value.startswith("CMD"):
                # Stored as collinearity; the distance form is reported alongside.
                header.append("cmd")
                rows = [r + (1.0 - r[2],) for r in rows]
            files[f"curves/{res.setup}__{kind.value}.csv"] = _csv(header, rows)
        for kind, r in res.lqs:
            lqs_rows.append((res.setup, kind.value, r.threshold, r.lqs_distance, r.lqs_time,
                             r.set_size, r.censored, r.degenerate))
        corr = res.correlation
        if corr["matrix"] is not None:
            names = [k.value for k in corr["kinds"]]
            rows = [[names[i]] + list(corr["matrix"][i]) for i in range(len(names))]
            files[f"correlation_{res.setup}.csv"] = _csv(["measure"] + names, rows)
    lqs_rows.sort(key=lambda r: (r[0], r[1], r[2]))
    files["lqs_table.csv"] = _csv(
        ["setup", "measure", "eta_th", "lqs_distance_m", "lqs_time_s", "set_size",
         "censored", "degenerate"], lqs_rows)

    du_params, report = du_report_for(raw, cfg)
    files["du_report.json"] = _json({"inputs": du_params,
                                     "report": report.as_dict() if report else None})

    grid = raw.grid
    resolved = cfg.manifest_view()
    resolved["du"].update({k: du_params[k] for k in ("v_max", "d_stat_min")})
    files["manifest.json"] = _json({
        "software": {"name": "quasistat", "version": __version__},
        "seed": used_seed,
        "config": resolved,
        "grid": {"T_m": grid.time_spacing, "F_m": grid.freq_spacing,
                 "f_c": grid.carrier_freq, "n_time": grid.n_time, "n_freq": grid.n_freq,
                 "mean_speed": grid.mean_speed, "n_rx": raw.n_rx, "n_tx": raw.n_tx},
        "setups": [r.setup for r in results],
        "tracks": {r.setup: {k.value: {"spacing_s": r.spacing[k],
                                       "offsets": [int(r.curves[k].offsets.min()),
                                                   int(r.curves[k].offsets.max())]}
                             for k in r.curves} for r in results},
        "correlation_offset_bins": {r.setup: r.correlation["offset_bins"] for r in results},
        "std_convention": "population",
        "distance_mapping": cfg["lqs"]["distance_mapping"],
    })
    return files


def write_artifacts(files: dict, out_dir) -> None:
    """Write atomically: build in a sibling temp dir, then swap it in."""
    out = Path(out_dir)
    if out.exists() and any(out.iterdir()) and not (out / "manifest.json").exists():
        raise ConfigError(f"output directory {out} is not empty and not a previous run")
    out.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{out.name}.", dir=out.parent))
    try:
        for rel, text in sorted(files.items()):
            p = tmp / rel
            p.parent.mkdir(parents=True, exist_ok=True)
            with open(p, "w", encoding="utf-8", newline="\n") as fh:
                fh.write(text)
        if out.exists():
            shutil.rmtree(out)
        os.replace(tmp, out)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise


def run(cfg: RunConfig, out_dir, seed=None) -> dict:
    files = artifacts(cfg, seed)
    write_artifacts(files, out_dir)
    return files
