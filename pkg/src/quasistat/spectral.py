"""Multitaper estimation of the generalized local scattering function.

The estimator evaluates, at every output position ``(m, q)``, windowed
two-dimensional DFTs of the channel transfer function with separable
Slepian (DPSS) tapers and averages their squared magnitudes::

    C[m, q; p, n] = sum_s gamma_s |H_s[m, q; p, n]|**2

    H_s[m, q; p, n] = sqrt(T F) sum_{m', q'} u_a[m'] v_b[q'] h[m + m', q + q']
                      * exp(-j 2 pi (p m' / B_p - n q' / B_n))

with ``m'`` running over ``-floor(N_wt/2) .. ceil(N_wt/2) - 1`` (likewise
``q'``). Doppler bins ``p`` are centred (odd ``B_p``), delay bins ``n``
run over ``0 .. B_n - 1``. Values are densities: summing over both axes
with steps ``1/(B_p T)`` and ``1/(B_n F)`` returns the windowed power.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import eigh_tridiagonal

from .channel import ChannelTensor
from .errors import ConfigError, InsufficientData

__all__ = [
    "DpssBank",
    "GlsfEstimate",
    "Psd",
    "DopplerPsd",
    "DelayPsd",
    "dpss_windows",
    "dpss_concentration",
    "make_dpss_bank",
    "estimate_glsf",
    "marginal_doppler",
    "marginal_delay",
    "glsf_slice_csv",
]


def dpss_windows(length: int, nw: float, count: int) -> np.ndarray:
    """First ``count`` discrete prolate spheroidal sequences.

    Computed as the eigenvectors of the symmetric tridiagonal matrix that
    commutes with the time-frequency limiting operator, so no dense
    ``length x length`` eigenproblem is solved. Rows are unit-energy and
    sign-normalized so that the first entry of maximal magnitude is
    positive.
    """
    w = nw / length
    n = np.arange(length)
    diag = ((length - 1 - 2 * n) / 2.0) ** 2 * np.cos(2 * np.pi * w)
    off = n[1:] * (length - n[1:]) / 2.0
    _, vecs = eigh_tridiagonal(diag, off, select="i",
                               select_range=(length - count, length - 1))
    tapers = vecs[:, ::-1].T.copy()
    tapers /= np.linalg.norm(tapers, axis=1, keepdims=True)
    for row in tapers:
        k = np.argmax(np.round(np.abs(row), 12))
        if row[k] < 0:
            row *= -1
    return tapers


def dpss_concentration(taper: np.ndarray, nw: float) -> float:
    """Fraction of a taper's energy inside the band ``|f| < nw/len``."""
    length = len(taper)
    w = nw / length
    d = np.subtract.outer(np.arange(length), np.arange(length)).astype(float)
    with np.errstate(divide="ignore", invalid="ignore"):
        kernel = np.sin(2 * np.pi * w * d) / (np.pi * d)
    kernel[d == 0] = 2 * w
    return float(taper @ kernel @ taper / (taper @ taper))


@dataclass(frozen=True)
class DpssBank:
    """Separable time x frequency taper bank ``u_a[m] v_b[q]``."""

    time_windows: np.ndarray
    freq_windows: np.ndarray
    time_halfbandwidth: float

    @property
    def n_wt(self) -> int:
        return self.time_windows.shape[1]

    @property
    def n_wf(self) -> int:
        return self.freq_windows.shape[1]

    @property
    def n_windows(self) -> int:
        return self.time_windows.shape[0] * self.freq_windows.shape[0]

    @property
    def weights(self) -> np.ndarray:
        """Uniform weights ``gamma_s = 1/S``."""
        return np.full(self.n_windows, 1.0 / self.n_windows)

    def window(self, s: int) -> np.ndarray:
        """2-D window ``L_G_s`` with ``s = a*J + b`` (zero-based)."""
        j = self.freq_windows.shape[0]
        return np.outer(self.time_windows[s // j], self.freq_windows[s % j])


def make_dpss_bank(n_wt: int = 32, n_wf: int = 128, nw: float = 2.0,
                   n_time_windows: int = 2, n_freq_windows: int = 2) -> DpssBank:
    if n_wt < 4 or n_wf < 4:
        raise ConfigError("window lengths must be >= 4")
    if not (0 < nw < min(n_wt, n_wf) / 2):
        raise ConfigError("time-halfbandwidth product must lie in (0, length/2)")
    max_windows = 2 * nw - 1
    for count, label in ((n_time_windows, "I"), (n_freq_windows, "J")):
        if count < 1 or count > max_windows:
            raise ConfigError(f"{label}={count} outside [1, 2*nw-1={max_windows:g}]")
    return DpssBank(
        time_windows=dpss_windows(n_wt, nw, n_time_windows),
        freq_windows=dpss_windows(n_wf, nw, n_freq_windows),
        time_halfbandwidth=float(nw),
    )


@dataclass(frozen=True)
class GlsfEstimate:
    """Estimated GLSF on the output grid.

    ``values[i, j, p, n]`` belongs to time sample ``time_index[i]`` and
    frequency sample ``freq_index[j]``; the Doppler axis is centred.
    """

    values: np.ndarray
    time_index: np.ndarray
    freq_index: np.ndarray
    n_doppler: int
    n_delay: int
    time_spacing: float
    freq_spacing: float

    @property
    def doppler_step(self) -> float:
        return 1.0 / (self.n_doppler * self.time_spacing)

    @property
    def delay_step(self) -> float:
        return 1.0 / (self.n_delay * self.freq_spacing)

    @property
    def doppler_bins(self) -> np.ndarray:
        half = (self.n_doppler - 1) // 2
        return np.arange(-half, half + 1)

    @property
    def delay_bins(self) -> np.ndarray:
        return np.arange(self.n_delay)

    @property
    def doppler_axis(self) -> np.ndarray:
        return self.doppler_bins * self.doppler_step

    @property
    def delay_axis(self) -> np.ndarray:
        return self.delay_bins * self.delay_step


@dataclass(frozen=True)
class Psd:
    """Marginal power spectral density per output position.

    ``values[i, j, :]`` is a density over ``bins``; ``values * step``
    gives the power per bin.
    """

    values: np.ndarray
    bins: np.ndarray
    step: float
    time_index: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    freq_index: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))

    @property
    def bin_power(self) -> np.ndarray:
        return self.values * self.step


class DopplerPsd(Psd):
    pass


class DelayPsd(Psd):
    pass


def _positions(n: int, length: int, stride: int) -> np.ndarray:
    start = length // 2
    stop = n - (length - length // 2)
    if stop < start:
        return np.zeros(0, dtype=int)
    return np.arange(start, stop + 1, stride)


def estimate_glsf(h, bank: DpssBank, n_doppler: int = 63, n_delay: int = 255,
                  stride_t: int = 16, stride_f: int = 128,
                  time_spacing: float = None, freq_spacing: float = None) -> GlsfEstimate:
    """Multitaper GLSF estimate of one sub-link.

    ``h`` is either a 2-D ``(time, freq)`` array or a single-link
    :class:`ChannelTensor` (``n_rx == n_tx == 1``); with an array the grid
    spacings must be given. Output positions are restricted to centres
    where the whole window lies inside the data.
    """
    if isinstance(h, ChannelTensor):
        if h.n_rx != 1 or h.n_tx != 1:
            raise ConfigError("estimate_glsf expects a single sub-link; use select_subarray")
        time_spacing = h.grid.time_spacing if time_spacing is None else time_spacing
        freq_spacing = h.grid.freq_spacing if freq_spacing is None else freq_spacing
        h = h.samples[:, :, 0, 0]
    h = np.asarray(h, dtype=np.complex128)
    if time_spacing is None or freq_spacing is None:
        raise ConfigError("time_spacing and freq_spacing are required for array input")
    if n_doppler % 2 == 0:
        raise ConfigError("number of Doppler bins must be odd")
    if n_doppler < bank.n_wt or n_delay < bank.n_wf:
        raise ConfigError("DFT lengths must be at least the window lengths")
    if stride_t < 1 or stride_f < 1:
        raise ConfigError("strides must be >= 1")
    n_time, n_freq = h.shape
    if n_time < bank.n_wt or n_freq < bank.n_wf:
        raise InsufficientData(
            f"tensor ({n_time}x{n_freq}) smaller than one window ({bank.n_wt}x{bank.n_wf})")

    n_wt, n_wf = bank.n_wt, bank.n_wf
    t_pos = _positions(n_time, n_wt, stride_t)
    f_pos = _positions(n_freq, n_wf, stride_f)
    t_off = np.arange(-(n_wt // 2), n_wt - n_wt // 2)
    f_off = np.arange(-(n_wf // 2), n_wf - n_wf // 2)

    u = bank.time_windows                      # (I, n_wt)
    v = bank.freq_windows                      # (J, n_wf)
    n_i, n_j = u.shape[0], v.shape[0]

    values = np.empty((len(t_pos), len(f_pos), n_doppler, n_delay))
    rows = (t_off % n_doppler)[:, None]
    cols = (f_off % n_delay)[None, :]
    chunk = max(1, 64 // max(1, len(f_pos) * n_i * n_j))
    for c0 in range(0, len(t_pos), chunk):
        tp = t_pos[c0:c0 + chunk]
        # seg[i, j, m', q'] for the positions in this chunk
        seg = h[(tp[:, None] + t_off[None, :])[:, None, :, None],
                (f_pos[:, None] + f_off[None, :])[None, :, None, :]]
        tapered = (seg[:, :, None, None, :, :]
                   * u[None, None, :, None, :, None]
                   * v[None, None, None, :, None, :])
        # Circular placement of the signed offsets turns the sums over m'
        # and q' into length-B_p and length-B_n DFTs.
        padded = np.zeros(tapered.shape[:4] + (n_doppler, n_delay), dtype=np.complex128)
        padded[..., rows, cols] = tapered
        # exp(-j2pi p m'/B_p) is a forward FFT, exp(+j2pi n q'/B_n) an inverse one.
        spectrum = np.fft.ifft(np.fft.fft(padded, axis=-2), axis=-1) * n_delay
        spectrum = np.fft.fftshift(spectrum, axes=-2)
        power = np.abs(spectrum) ** 2 * (time_spacing * freq_spacing)
        values[c0:c0 + chunk] = power.sum(axis=(2, 3)) / (n_i * n_j)
    return GlsfEstimate(values=values, time_index=t_pos, freq_index=f_pos,
                        n_doppler=n_doppler, n_delay=n_delay,
                        time_spacing=float(time_spacing), freq_spacing=float(freq_spacing))


def marginal_doppler(g: GlsfEstimate) -> DopplerPsd:
    return DopplerPsd(values=g.values.sum(axis=3) * g.delay_step, bins=g.doppler_bins,
                      step=g.doppler_step, time_index=g.time_index, freq_index=g.freq_index)


def marginal_delay(g: GlsfEstimate) -> DelayPsd:
    return DelayPsd(values=g.values.sum(axis=2) * g.doppler_step, bins=g.delay_bins,
                    step=g.delay_step, time_index=g.time_index, freq_index=g.freq_index)


def glsf_slice_csv(g: GlsfEstimate, i: int, j: int) -> str:
    """CSV dump ``p,n,value`` of the slice at output position ``(i, j)``."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["p", "n", "value"])
    sl = g.values[i, j]
    for a, p in enumerate(g.doppler_bins):
        for n in g.delay_bins:
            w.writerow([int(p), int(n), f"{sl[a, n]:.12g}"])
    return buf.getvalue()
