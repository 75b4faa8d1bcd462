"""Synthetic non-stationary MIMO channels with known statistics.

Each scatterer cluster contributes a plane wave with a fixed Doppler shift
and delay, a sub-path sum for (optional) fading, a 2x2 polarization power
coupling and birth/death times::

    h[m, q, k, l] = sum_c env_c[m] sqrt(P_c) g_c(k, l) a_rx,c(k) a_tx,c(l) c_c[m]
                    * exp(j 2 pi (nu_c m T - tau_c q F))

The sub-path sum ``c_c[m]`` is normalized to unit mean power over the
cluster lifetime, so the realized cluster power equals ``P_c`` exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .channel import ChannelTensor, SamplingGrid
from .errors import ConfigError
from .spectral import DelayPsd, DopplerPsd

__all__ = [
    "ScattererCluster",
    "SteeringModel",
    "Scene",
    "generate",
    "ground_truth_psd",
    "load_scene",
    "scene_from_dict",
]

_POL_INDEX = {"V": 0, "H": 1}


@dataclass(frozen=True)
class ScattererCluster:
    doppler_hz: float
    delay_s: float
    power: float = 1.0
    pol_gain: tuple = ((1.0, 0.0), (0.0, 1.0))
    birth_time: int = 0
    death_time: int = None
    n_subpaths: int = 20
    doppler_spread_hz: float = 0.0
    ramp: int = 0

    def alive(self, m, n_time: int):
        death = n_time if self.death_time is None else self.death_time
        m = np.asarray(m)
        return (m >= self.birth_time) & (m < death)

    def envelope(self, n_time: int) -> np.ndarray:
        """Power envelope over time: 1 while alive, linear ramps if configured."""
        death = n_time if self.death_time is None else self.death_time
        m = np.arange(n_time, dtype=float)
        env = ((m >= self.birth_time) & (m < death)).astype(float)
        if self.ramp > 0:
            up = np.clip((m - self.birth_time + 1) / self.ramp, 0, 1)
            down = np.clip((death - m) / self.ramp, 0, 1)
            env *= np.minimum(up, down)
        return env

    def validate(self, grid: SamplingGrid) -> None:
        death = grid.n_time if self.death_time is None else self.death_time
        if self.power < 0:
            raise ConfigError("cluster power must be >= 0")
        if not 0 <= self.birth_time <= death <= grid.n_time:
            raise ConfigError("cluster birth/death outside [0, n_time]")
        nyq = 1.0 / (2.0 * grid.time_spacing)
        if abs(self.doppler_hz) + self.doppler_spread_hz >= nyq:
            raise ConfigError(
                f"Doppler {self.doppler_hz} Hz (spread {self.doppler_spread_hz}) violates "
                f"the Nyquist limit {nyq:g} Hz")
        if not 0 <= self.delay_s < 1.0 / grid.freq_spacing:
            raise ConfigError(f"delay {self.delay_s} s outside [0, 1/F_m)")
        g = np.asarray(self.pol_gain, dtype=float)
        if g.shape != (2, 2) or np.any(g < 0):
            raise ConfigError("pol_gain must be a non-negative 2x2 matrix")
        if self.n_subpaths < 1 or self.ramp < 0:
            raise ConfigError("n_subpaths must be >= 1 and ramp >= 0")


@dataclass(frozen=True)
class SteeringModel:
    """Plane-wave steering of isotropic elements.

    Positions are in wavelengths, either scalars (linear array along x) or
    ``(x, y)`` pairs. ``rx_angles``/``tx_angles`` hold one azimuth per
    cluster in radians.
    """

    rx_positions: tuple = (0.0,)
    tx_positions: tuple = (0.0,)
    rx_angles: tuple = ()
    tx_angles: tuple = ()
    pol_rx: tuple = None
    pol_tx: tuple = None

    @staticmethod
    def _xy(positions) -> np.ndarray:
        p = np.asarray(positions, dtype=float)
        if p.ndim == 1:
            p = np.stack([p, np.zeros_like(p)], axis=1)
        return p

    def response(self, side: str, angle: float) -> np.ndarray:
        pos = self._xy(self.rx_positions if side == "rx" else self.tx_positions)
        direction = np.array([np.cos(angle), np.sin(angle)])
        return np.exp(2j * np.pi * pos @ direction)

    @property
    def n_rx(self) -> int:
        return len(self.rx_positions)

    @property
    def n_tx(self) -> int:
        return len(self.tx_positions)

    def labels(self):
        pol_rx = tuple(self.pol_rx) if self.pol_rx is not None else ("V",) * self.n_rx
        pol_tx = tuple(self.pol_tx) if self.pol_tx is not None else ("V",) * self.n_tx
        return pol_rx, pol_tx


@dataclass(frozen=True)
class Scene:
    clusters: tuple
    steering: SteeringModel
    grid: SamplingGrid
    seed: int = 0
    extra: dict = field(default_factory=dict)


def generate(clusters: Sequence[ScattererCluster], steering: SteeringModel,
             grid: SamplingGrid, seed: int = 0) -> ChannelTensor:
    """Realize a channel tensor; deterministic given ``seed``."""
    pol_rx, pol_tx = steering.labels()
    n_rx, n_tx = steering.n_rx, steering.n_tx
    if len(pol_rx) != n_rx or len(pol_tx) != n_tx:
        raise ConfigError("polarization labels must match antenna counts")
    clusters = list(clusters)
    for c in clusters:
        c.validate(grid)
    if clusters and (len(steering.rx_angles) != len(clusters)
                     or len(steering.tx_angles) != len(clusters)):
        raise ConfigError("steering needs one rx and one tx angle per cluster")

    rng = np.random.default_rng(seed)
    # Draw every random quantity up front, in cluster order, so the
    # realization does not depend on evaluation order.
    tables = []
    for c in clusters:
        phases = rng.uniform(0, 2 * np.pi, c.n_subpaths)
        offsets = rng.uniform(-1, 1, c.n_subpaths) * c.doppler_spread_hz
        pol_phase = rng.uniform(0, 2 * np.pi, (2, 2))
        tables.append((phases, offsets, pol_phase))

    m = np.arange(grid.n_time)
    q = np.arange(grid.n_freq)
    rx_idx = np.array([_POL_INDEX[p] for p in pol_rx])
    tx_idx = np.array([_POL_INDEX[p] for p in pol_tx])
    h = np.zeros((grid.n_time, grid.n_freq, n_rx, n_tx), dtype=np.complex128)
    for ci, (c, (phases, offsets, pol_phase)) in enumerate(zip(clusters, tables)):
        env = c.envelope(grid.n_time)
        if c.power == 0 or not env.any():
            continue
        sub = np.exp(1j * (2 * np.pi * np.outer(m * grid.time_spacing, offsets) + phases))
        sub = sub.sum(axis=1)
        alive = env > 0
        sub /= np.sqrt(np.mean(np.abs(sub[alive]) ** 2))
        gain = np.sqrt(np.asarray(c.pol_gain, dtype=float)) * np.exp(1j * pol_phase)
        g = gain[rx_idx[:, None], tx_idx[None, :]]
        a_rx = steering.response("rx", steering.rx_angles[ci])
        a_tx = steering.response("tx", steering.tx_angles[ci])
        spatial = g * np.outer(a_rx, a_tx)
        temporal = np.sqrt(c.power * env) * sub * np.exp(2j * np.pi * c.doppler_hz * m * grid.time_spacing)
        spectral = np.exp(-2j * np.pi * c.delay_s * q * grid.freq_spacing)
        h += (temporal[:, None, None, None] * spectral[None, :, None, None]
              * spatial[None, None, :, :])
    return ChannelTensor(grid=grid, samples=h, pol_rx=pol_rx, pol_tx=pol_tx)


def ground_truth_psd(clusters: Sequence[ScattererCluster], grid: SamplingGrid, m: int,
                     n_doppler: int = 63, n_delay: int = 255):
    """Exact Doppler and delay marginals at time index ``m``.

    Each alive cluster deposits its power (scaled by its envelope) at the
    nearest Doppler bin ``round(nu T B_p)`` and delay bin
    ``round(tau F B_n) mod B_n``. Returned values are densities with the
    same bin steps as :func:`quasistat.spectral.estimate_glsf`.
    """
    if not 0 <= m < grid.n_time:
        raise ConfigError(f"time index {m} outside grid")
    if n_doppler % 2 == 0:
        raise ConfigError("number of Doppler bins must be odd")
    half = (n_doppler - 1) // 2
    d_step = 1.0 / (n_doppler * grid.time_spacing)
    t_step = 1.0 / (n_delay * grid.freq_spacing)
    doppler = np.zeros(n_doppler)
    delay = np.zeros(n_delay)
    for c in clusters:
        w = c.power * c.envelope(grid.n_time)[m]
        if w == 0:
            continue
        p = int(np.rint(c.doppler_hz * grid.time_spacing * n_doppler))
        n = int(np.rint(c.delay_s * grid.freq_spacing * n_delay)) % n_delay
        doppler[p + half] += w
        delay[n] += w
    return (DopplerPsd(values=doppler / d_step, bins=np.arange(-half, half + 1), step=d_step),
            DelayPsd(values=delay / t_step, bins=np.arange(n_delay), step=t_step))


def scene_from_dict(doc: dict) -> Scene:
    """Build a :class:`Scene` from its JSON representation.

    Layout::

        {"grid": {"T_m", "F_m", "f_c", "n_time", "n_freq",
                  "speed" | "speed_per_sample"},
         "steering": {"rx_positions", "tx_positions", "pol_rx", "pol_tx"},
         "clusters": [{"doppler_hz", "delay_s", "power", "pol_gain",
                       "birth_time", "death_time", "n_subpaths",
                       "doppler_spread_hz", "ramp", "rx_angle", "tx_angle"}],
         "seed": 0}
    """
    try:
        g = doc["grid"]
        n_time = int(g["n_time"])
        speeds = g.get("speed_per_sample")
        if speeds is None:
            speeds = [float(g.get("speed", 0.0))] * n_time
        grid = SamplingGrid(float(g["T_m"]), float(g["F_m"]), float(g["f_c"]),
                            n_time, int(g["n_freq"]), tuple(speeds))
        clusters, rx_angles, tx_angles = [], [], []
        for c in doc.get("clusters", []):
            c = dict(c)
            rx_angles.append(float(c.pop("rx_angle", 0.0)))
            tx_angles.append(float(c.pop("tx_angle", 0.0)))
            if "pol_gain" in c:
                c["pol_gain"] = tuple(tuple(float(x) for x in row) for row in c["pol_gain"])
            clusters.append(ScattererCluster(**c))
        s = doc.get("steering", {})
        steering = SteeringModel(
            rx_positions=_as_positions(s.get("rx_positions", [0.0])),
            tx_positions=_as_positions(s.get("tx_positions", [0.0])),
            rx_angles=tuple(rx_angles),
            tx_angles=tuple(tx_angles),
            pol_rx=tuple(s["pol_rx"]) if "pol_rx" in s else None,
            pol_tx=tuple(s["pol_tx"]) if "pol_tx" in s else None,
        )
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"invalid scene description: {exc}") from None
    return Scene(clusters=tuple(clusters), steering=steering, grid=grid,
                 seed=int(doc.get("seed", 0)))


def _as_positions(p):
    return tuple(tuple(float(x) for x in e) if isinstance(e, (list, tuple)) else float(e)
                 for e in p)


def load_scene(path) -> Scene:
    return scene_from_dict(json.loads(Path(path).read_text()))
