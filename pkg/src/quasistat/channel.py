"""Channel container, CTF1 file format and preprocessing.

The universal input of the package is a :class:`ChannelTensor`: complex
transfer-function samples ``h[m, q, k, l]`` indexed by time ``m``,
frequency ``q``, receive antenna ``k`` and transmit antenna ``l``.

Preprocessing steps are pure functions returning new tensors:

- :func:`apply_noise_floor` zeroes delay bins below an estimated noise level,
- :func:`normalize_copolarized` removes path loss per time-frequency block,
- :func:`apply_phase_offsets` rotates antennas by constant phases,
- :func:`select_subarray` restricts to a subset of antennas.
"""

from __future__ import annotations

import dataclasses
import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import (
    ConfigError,
    DataError,
    DegenerateBlockWarning,
    FormatError,
    InsufficientData,
)

__all__ = [
    "SamplingGrid",
    "ChannelTensor",
    "SubArraySelection",
    "PhaseOffsets",
    "read_container",
    "write_container",
    "encode_container",
    "decode_container",
    "apply_noise_floor",
    "normalize_copolarized",
    "apply_phase_offsets",
    "select_subarray",
    "MAGIC",
]

MAGIC = "CTF1"
POLARIZATIONS = ("V", "H")

# Expected value of the 1/8-quantile of a unit-mean exponential variable.
# Converts the median of the weakest quartile of noise-only delay powers
# into an estimate of the mean noise power per bin.
_WEAK_QUARTILE_MEDIAN = -math.log(7.0 / 8.0)


@dataclass(frozen=True)
class SamplingGrid:
    """Time-frequency sampling grid of a channel recording."""

    time_spacing: float
    freq_spacing: float
    carrier_freq: float
    n_time: int
    n_freq: int
    speed_per_sample: tuple = ()

    def __post_init__(self):
        if not (self.time_spacing > 0 and self.freq_spacing > 0 and self.carrier_freq > 0):
            raise ConfigError("time_spacing, freq_spacing and carrier_freq must be positive")
        if int(self.n_time) < 1 or int(self.n_freq) < 1:
            raise ConfigError("n_time and n_freq must be at least 1")
        object.__setattr__(self, "n_time", int(self.n_time))
        object.__setattr__(self, "n_freq", int(self.n_freq))
        speeds = self.speed_per_sample
        if speeds is None or len(speeds) == 0:
            speeds = (0.0,) * self.n_time
        speeds = tuple(float(v) for v in speeds)
        if len(speeds) != self.n_time:
            raise ConfigError(
                f"speed_per_sample has {len(speeds)} entries, expected {self.n_time}")
        if any(not math.isfinite(v) or v < 0 for v in speeds):
            raise ConfigError("speed_per_sample entries must be finite and >= 0")
        object.__setattr__(self, "speed_per_sample", speeds)

    @property
    def mean_speed(self) -> float:
        return float(np.mean(self.speed_per_sample))


@dataclass(frozen=True, eq=False)
class ChannelTensor:
    """Complex channel samples ``h[m, q, k, l]`` with grid metadata.

    ``degenerate`` is an optional boolean ``(n_time, n_freq)`` mask set by
    :func:`normalize_copolarized` for samples inside blocks that could not
    be normalized. Downstream estimators skip time bins touching it.
    """

    grid: SamplingGrid
    samples: np.ndarray
    pol_rx: tuple
    pol_tx: tuple
    degenerate: Optional[np.ndarray] = field(default=None, compare=False)

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=np.complex128)
        if s.ndim != 4:
            raise ConfigError("samples must be a 4-D array indexed [time, freq, rx, tx]")
        if s.shape[:2] != (self.grid.n_time, self.grid.n_freq):
            raise ConfigError(
                f"samples shape {s.shape[:2]} does not match grid "
                f"({self.grid.n_time}, {self.grid.n_freq})")
        if not np.all(np.isfinite(s)):
            raise DataError("channel samples must be finite")
        pol_rx = tuple(str(p) for p in self.pol_rx)
        pol_tx = tuple(str(p) for p in self.pol_tx)
        if len(pol_rx) != s.shape[2] or len(pol_tx) != s.shape[3]:
            raise ConfigError("polarization labels must match n_rx and n_tx")
        if any(p not in POLARIZATIONS for p in pol_rx + pol_tx):
            raise ConfigError("polarization labels must be 'V' or 'H'")
        s.setflags(write=False)
        object.__setattr__(self, "samples", s)
        object.__setattr__(self, "pol_rx", pol_rx)
        object.__setattr__(self, "pol_tx", pol_tx)

    def __eq__(self, other):
        if not isinstance(other, ChannelTensor):
            return NotImplemented
        return (self.grid == other.grid and self.pol_rx == other.pol_rx
                and self.pol_tx == other.pol_tx
                and np.array_equal(self.samples, other.samples))

    __hash__ = None

    @property
    def n_rx(self) -> int:
        return self.samples.shape[2]

    @property
    def n_tx(self) -> int:
        return self.samples.shape[3]

    def with_samples(self, samples: np.ndarray, **changes) -> "ChannelTensor":
        return dataclasses.replace(self, samples=samples, **changes)

    def copolarized_mask(self) -> np.ndarray:
        """Boolean ``(n_rx, n_tx)`` mask of co-polarized sub-links."""
        rx = np.array(self.pol_rx)[:, None]
        tx = np.array(self.pol_tx)[None, :]
        return rx == tx

    def flagged_times(self) -> np.ndarray:
        """Boolean ``(n_time,)`` mask of time indices touching a degenerate block."""
        if self.degenerate is None:
            return np.zeros(self.grid.n_time, dtype=bool)
        return np.asarray(self.degenerate).any(axis=1)


@dataclass(frozen=True)
class SubArraySelection:
    rx_indices: tuple
    tx_indices: tuple
    name: str = "all"

    def validate(self, n_rx: int, n_tx: int) -> None:
        for idx, n, side in ((self.rx_indices, n_rx, "rx"), (self.tx_indices, n_tx, "tx")):
            if len(idx) == 0:
                raise ConfigError(f"sub-array {self.name!r}: empty {side} selection")
            if len(set(idx)) != len(idx):
                raise ConfigError(f"sub-array {self.name!r}: duplicate {side} indices")
            if any(i < 0 or i >= n for i in idx):
                raise ConfigError(
                    f"sub-array {self.name!r}: {side} index out of range [0, {n})")


@dataclass(frozen=True)
class PhaseOffsets:
    tx_phases: tuple
    rx_phases: tuple

    def __post_init__(self):
        tx = tuple(float(p) for p in self.tx_phases)
        rx = tuple(float(p) for p in self.rx_phases)
        if not all(math.isfinite(p) for p in tx + rx):
            raise ConfigError("phase offsets must be finite")
        object.__setattr__(self, "tx_phases", tx)
        object.__setattr__(self, "rx_phases", rx)


# --------------------------------------------------------------------------
# CTF1 container
# --------------------------------------------------------------------------

def _header_dict(t: ChannelTensor) -> dict:
    g = t.grid
    return {
        "magic": MAGIC,
        "n_time": g.n_time,
        "n_freq": g.n_freq,
        "n_rx": t.n_rx,
        "n_tx": t.n_tx,
        "T_m": float(g.time_spacing),
        "F_m": float(g.freq_spacing),
        "f_c": float(g.carrier_freq),
        "pol_rx": list(t.pol_rx),
        "pol_tx": list(t.pol_tx),
        "speed_per_sample": [float(v) for v in g.speed_per_sample],
    }


def encode_container(t: ChannelTensor) -> bytes:
    """Serialize a tensor to CTF1 bytes (canonical header, float32 payload)."""
    header = json.dumps(_header_dict(t), separators=(",", ":"), allow_nan=False)
    payload = np.ascontiguousarray(t.samples, dtype="<c8").tobytes()
    return header.encode("utf-8") + b"\n" + payload


def decode_container(data: bytes) -> ChannelTensor:
    """Parse CTF1 bytes into a :class:`ChannelTensor`."""
    nl = data.find(b"\n")
    if nl < 0:
        raise FormatError("missing header terminator")
    try:
        header = json.loads(data[:nl].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"malformed header: {exc}") from None
    if not isinstance(header, dict) or header.get("magic") != MAGIC:
        raise FormatError("header magic is not CTF1")
    required = ("n_time", "n_freq", "n_rx", "n_tx", "T_m", "F_m", "f_c",
                "pol_rx", "pol_tx", "speed_per_sample")
    missing = [k for k in required if k not in header]
    if missing:
        raise FormatError(f"header missing fields: {missing}")
    dims = []
    for key in ("n_time", "n_freq", "n_rx", "n_tx"):
        v = header[key]
        if not isinstance(v, int) or isinstance(v, bool) or v < 1:
            raise FormatError(f"header field {key} must be a positive integer")
        dims.append(v)
    payload = data[nl + 1:]
    expected = int(np.prod(dims)) * 8
    if len(payload) != expected:
        raise FormatError(
            f"payload has {len(payload)} bytes, header implies {expected}")
    samples = np.frombuffer(payload, dtype="<c8").reshape(dims).astype(np.complex128)
    if not np.all(np.isfinite(samples)):
        raise DataError("container holds non-finite samples")
    try:
        grid = SamplingGrid(
            time_spacing=float(header["T_m"]),
            freq_spacing=float(header["F_m"]),
            carrier_freq=float(header["f_c"]),
            n_time=dims[0],
            n_freq=dims[1],
            speed_per_sample=tuple(header["speed_per_sample"]),
        )
        return ChannelTensor(grid=grid, samples=samples,
                             pol_rx=tuple(header["pol_rx"]), pol_tx=tuple(header["pol_tx"]))
    except (ConfigError, TypeError, ValueError) as exc:
        raise FormatError(f"invalid header values: {exc}") from None


def read_container(path) -> ChannelTensor:
    return decode_container(Path(path).read_bytes())


def write_container(t: ChannelTensor, path) -> None:
    Path(path).write_bytes(encode_container(t))


# --------------------------------------------------------------------------
# Preprocessing
# --------------------------------------------------------------------------

def apply_noise_floor(t: ChannelTensor, margin_db: float = 6.0,
                      calibrated: bool = True) -> ChannelTensor:
    """Zero delay-domain bins below the estimated noise level plus a margin.

    Each frequency row ``h[m, :, k, l]`` is transformed to the delay domain
    with an unwindowed DFT. The noise power is estimated from the median of
    the weakest quartile of delay powers; bins below
    ``noise * 10**(margin_db/10)`` are zeroed and the row is transformed
    back.

    With ``calibrated`` (default) the median is divided by the 1/8-quantile
    of a unit exponential, making it an estimate of the mean noise power
    per bin. Without it the raw median is used as the noise level, which is
    about 8.7 dB lower for Gaussian noise.
    """
    if not margin_db >= 0:
        raise ConfigError("margin_db must be >= 0")
    n_freq = t.grid.n_freq
    if n_freq < 4:
        raise InsufficientData("noise flooring needs at least 4 frequency samples")

    delay = np.fft.ifft(t.samples, axis=1)
    power = np.abs(delay) ** 2
    n_weak = int(math.ceil(n_freq / 4))
    weakest = np.sort(power, axis=1)[:, :n_weak]
    noise = np.median(weakest, axis=1, keepdims=True)
    if calibrated:
        noise = noise / _WEAK_QUARTILE_MEDIAN
    threshold = noise * 10.0 ** (margin_db / 10.0)
    keep = power >= threshold
    if keep.all():
        return t
    cleaned = np.fft.fft(np.where(keep, delay, 0.0), axis=1)
    return t.with_samples(cleaned)


def _blocks(n: int, size: int):
    return [(start, min(start + size, n)) for start in range(0, n, size)]


def normalize_copolarized(t: ChannelTensor, region_time: int = 16,
                          region_freq: int = 128) -> ChannelTensor:
    """Scale each time-frequency block so co-polarized power per matrix is ``N_co``.

    Blocks tile the grid from index 0 with a final partial block. Blocks
    without co-polarized power are left unscaled, marked in the returned
    tensor's ``degenerate`` mask, and reported with a
    :class:`DegenerateBlockWarning`.
    """
    if region_time < 1 or region_freq < 1:
        raise ConfigError("region sizes must be >= 1")
    co = t.copolarized_mask()
    n_co = int(co.sum())
    if n_co == 0:
        raise ConfigError("no co-polarized sub-links to normalize against")

    co_power = (np.abs(t.samples) ** 2 * co).sum(axis=(2, 3))
    scale = np.ones((t.grid.n_time, t.grid.n_freq))
    degenerate = np.zeros((t.grid.n_time, t.grid.n_freq), dtype=bool)
    if t.degenerate is not None:
        degenerate |= np.asarray(t.degenerate)
    n_bad = 0
    for m0, m1 in _blocks(t.grid.n_time, region_time):
        for q0, q1 in _blocks(t.grid.n_freq, region_freq):
            p = co_power[m0:m1, q0:q1].mean()
            if p > 0:
                scale[m0:m1, q0:q1] = math.sqrt(n_co / p)
            else:
                degenerate[m0:m1, q0:q1] = True
                n_bad += 1
    if n_bad:
        warnings.warn(f"{n_bad} normalization block(s) without co-polarized power left unscaled",
                      DegenerateBlockWarning, stacklevel=2)
    out = t.samples * scale[:, :, None, None]
    return t.with_samples(out, degenerate=degenerate if degenerate.any() else None)


def apply_phase_offsets(t: ChannelTensor, p: PhaseOffsets) -> ChannelTensor:
    """Return ``D_rx H D_tx`` with ``D = diag(exp(-j phi))`` on both sides."""
    if len(p.tx_phases) != t.n_tx or len(p.rx_phases) != t.n_rx:
        raise ConfigError("phase offset lengths must match n_tx and n_rx")
    d_rx = np.exp(-1j * np.asarray(p.rx_phases))
    d_tx = np.exp(-1j * np.asarray(p.tx_phases))
    return t.with_samples(t.samples * d_rx[None, None, :, None] * d_tx[None, None, None, :])


def select_subarray(t: ChannelTensor, s: SubArraySelection) -> ChannelTensor:
    s.validate(t.n_rx, t.n_tx)
    rx = list(s.rx_indices)
    tx = list(s.tx_indices)
    samples = t.samples[:, :, rx, :][:, :, :, tx]
    return t.with_samples(
        samples,
        pol_rx=tuple(t.pol_rx[i] for i in rx),
        pol_tx=tuple(t.pol_tx[i] for i in tx),
    )


def make_tensor(samples, time_spacing: float = 1.0, freq_spacing: float = 1.0,
                carrier_freq: float = 1.0, pol_rx: Sequence[str] = None,
                pol_tx: Sequence[str] = None, speed_per_sample=None) -> ChannelTensor:
    """Convenience constructor used in scripts and tests.

    ``samples`` may be 2-D (time, freq) for a single sub-link or 4-D.
    """
    s = np.asarray(samples, dtype=np.complex128)
    if s.ndim == 2:
        s = s[:, :, None, None]
    grid = SamplingGrid(time_spacing, freq_spacing, carrier_freq, s.shape[0], s.shape[1],
                        tuple(speed_per_sample) if speed_per_sample is not None else ())
    pol_rx = tuple(pol_rx) if pol_rx is not None else ("V",) * s.shape[2]
    pol_tx = tuple(pol_tx) if pol_tx is not None else ("V",) * s.shape[3]
    return ChannelTensor(grid=grid, samples=s, pol_rx=pol_rx, pol_tx=pol_tx)
