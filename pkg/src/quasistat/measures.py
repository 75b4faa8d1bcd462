"""Pairwise non-stationarity measures.

All measures are oriented so that 1 means "statistics unchanged" and 0
the largest possible change. For a pair ``(m, m')`` the first argument
holds the statistics in force at ``m`` and the second argument the stale
statistics from ``m'`` that an algorithm would reuse.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy.linalg import toeplitz

from .channel import ChannelTensor
from .errors import ConfigError, InsufficientData, NumericalError, UndefinedMeasure

__all__ = [
    "MeasureKind",
    "MeasurePair",
    "CorrMatrixTrack",
    "EstimatorConfig",
    "estimate_corr_track",
    "collinearity_psd",
    "cmd",
    "relative_snr",
    "approx_mse",
    "approx_relative_mse",
    "exact_mse",
    "exact_relative_mse",
    "approx_mse_matrix",
    "exact_mse_matrix",
    "cmd_algorithmic_decomposition",
    "dominant_eigenvector",
]

_HERMITIAN_TOL = 1e-10
_PSD_TOL = 1e-10


class MeasureKind(str, enum.Enum):
    COL_DOPPLER = "COL_DOPPLER"
    COL_DELAY = "COL_DELAY"
    CMD_TX = "CMD_TX"
    CMD_RX = "CMD_RX"
    CMD_FULL = "CMD_FULL"
    SNR_TX = "SNR_TX"
    SNR_RX = "SNR_RX"
    MSE_DOPPLER_EXACT = "MSE_DOPPLER_EXACT"
    MSE_DOPPLER_AP = "MSE_DOPPLER_AP"
    MSE_DELAY_EXACT = "MSE_DELAY_EXACT"
    MSE_DELAY_AP = "MSE_DELAY_AP"

    def __str__(self):
        return self.value


@dataclass(frozen=True)
class MeasurePair:
    value: float
    m: int
    m_prime: int
    kind: MeasureKind

    def __post_init__(self):
        if not (0.0 <= self.value <= 1.0 + 1e-9):
            raise NumericalError(f"measure value {self.value} outside [0, 1]")

    @property
    def offset(self) -> int:
        return self.m_prime - self.m


@dataclass(frozen=True)
class EstimatorConfig:
    """Pilot-based channel estimation setup.

    ``gamma`` is the linear pilot-to-noise ratio, ``pilot_spacing`` the
    pilot spacing ``L`` in samples and ``interval_length`` the number
    ``N`` of pilots used by the finite-length filter.
    """

    gamma: float = 10.0
    pilot_spacing: int = 1
    interval_length: int = 30

    def __post_init__(self):
        if not self.gamma > 0:
            raise ConfigError("gamma must be > 0")
        if self.pilot_spacing < 1 or self.interval_length < 1:
            raise ConfigError("pilot spacing and interval length must be >= 1")

    @classmethod
    def from_db(cls, gamma_db: float, pilot_spacing: int = 1, interval_length: int = 30):
        return cls(10.0 ** (gamma_db / 10.0), pilot_spacing, interval_length)


@dataclass(frozen=True)
class CorrMatrixTrack:
    """Correlation matrices per time bin and frequency block.

    ``matrices[b, f]`` is the estimate over time samples
    ``time_index[b] - n_t/2 ..`` and frequency block ``f``.
    """

    matrices: np.ndarray
    side: str
    n_t: int
    n_f: int
    time_index: np.ndarray

    @property
    def n_bins(self) -> int:
        return self.matrices.shape[0]


def estimate_corr_track(t: ChannelTensor, side: str = "TX", n_t: int = 16,
                        n_f: int = 128) -> CorrMatrixTrack:
    """Sample correlation matrices averaged over ``n_t x n_f`` blocks.

    ``TX``: ``H^T H^*``; ``RX``: ``H H^H``; ``FULL``: ``vec(H) vec(H)^H``
    with column-stacking ``vec``. Only complete blocks are used.
    """
    side = side.upper()
    if side not in ("TX", "RX", "FULL"):
        raise ConfigError(f"unknown correlation side {side!r}")
    if n_t < 1 or n_f < 1:
        raise ConfigError("averaging sizes must be >= 1")
    n_time, n_freq = t.grid.n_time, t.grid.n_freq
    n_bins, n_blocks = n_time // n_t, n_freq // n_f
    if n_bins == 0 or n_blocks == 0:
        raise InsufficientData(
            f"need at least {n_t}x{n_f} samples, tensor has {n_time}x{n_freq}")
    h = t.samples[:n_bins * n_t, :n_blocks * n_f]
    h = h.reshape(n_bins, n_t, n_blocks, n_f, t.n_rx, t.n_tx)
    if side == "TX":
        r = np.einsum("btfqkl,btfqkn->bfln", h, h.conj(), optimize=True)
    elif side == "RX":
        r = np.einsum("btfqkl,btfqnl->bfkn", h, h.conj(), optimize=True)
    else:
        vec = np.swapaxes(h, -1, -2).reshape(h.shape[:4] + (-1,))
        r = np.einsum("btfqi,btfqj->bfij", vec, vec.conj(), optimize=True)
    r = r / (n_t * n_f)
    r = 0.5 * (r + np.conj(np.swapaxes(r, -1, -2)))
    centres = np.arange(n_bins) * n_t + n_t // 2
    return CorrMatrixTrack(matrices=r, side=side, n_t=n_t, n_f=n_f, time_index=centres)


# --------------------------------------------------------------------------
# Inner-product measures
# --------------------------------------------------------------------------

def collinearity_psd(a, b) -> float:
    """Normalized inner product of two non-negative spectra."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ConfigError("PSDs must have equal lengths")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise UndefinedMeasure("collinearity of an all-zero PSD")
    return float(np.clip(np.dot(a, b) / (na * nb), 0.0, 1.0))


def _check_hermitian(r: np.ndarray) -> np.ndarray:
    r = np.asarray(r, dtype=np.complex128)
    if r.ndim != 2 or r.shape[0] != r.shape[1]:
        raise ConfigError("correlation matrix must be square")
    scale = max(np.linalg.norm(r), np.finfo(float).tiny)
    if np.linalg.norm(r - r.conj().T) > _HERMITIAN_TOL * scale:
        raise NumericalError("matrix is not Hermitian")
    return 0.5 * (r + r.conj().T)


def _eigh_psd(r: np.ndarray):
    """Eigenpairs in descending order with round-off negatives clipped to 0."""
    lam, vec = np.linalg.eigh(r)
    tr = float(np.real(np.trace(r)))
    floor = -_PSD_TOL * max(abs(tr), np.finfo(float).tiny)
    if lam.min() < floor:
        raise NumericalError(f"matrix not positive semidefinite (eigenvalue {lam.min():g})")
    lam = np.clip(lam, 0.0, None)
    return lam[::-1], vec[:, ::-1]


def _canonical_phase(v: np.ndarray) -> np.ndarray:
    k = np.argmax(np.abs(v) > 1e-12 * np.abs(v).max())
    return v * np.exp(-1j * np.angle(v[k]))


def dominant_eigenvector(r: np.ndarray) -> np.ndarray:
    """Unit eigenvector of the largest eigenvalue, chosen deterministically.

    Among eigenvectors whose eigenvalues tie with the maximum (after
    rounding to 12 decimals) the one with the lexicographically largest
    phase-normalized components is returned.
    """
    lam, vec = _eigh_psd(_check_hermitian(r))
    scale = max(lam[0], np.finfo(float).tiny)
    keys = np.round(lam / scale, 12)
    tied = np.flatnonzero(keys == keys[0])
    candidates = [_canonical_phase(vec[:, i]) for i in tied]
    if len(candidates) == 1:
        return candidates[0]

    def sort_key(v):
        return tuple(np.round(np.column_stack([v.real, v.imag]).ravel(), 12))

    return max(candidates, key=sort_key)


def cmd(ra, rb) -> float:
    """Collinearity ``tr(Ra Rb) / (|Ra|_F |Rb|_F)``; the CMD is ``1 - cmd``."""
    ra = _check_hermitian(ra)
    rb = _check_hermitian(rb)
    if ra.shape != rb.shape:
        raise ConfigError("matrices must have equal dimensions")
    na, nb = np.linalg.norm(ra), np.linalg.norm(rb)
    if na == 0 or nb == 0:
        raise UndefinedMeasure("CMD of a zero matrix")
    value = np.real(np.sum(ra * rb.T)) / (na * nb)
    return float(np.clip(value, 0.0, 1.0))


def relative_snr(ra, rb) -> float:
    """SNR of beamforming along the dominant eigenvector of ``rb`` over the
    matched SNR under ``ra``."""
    ra = _check_hermitian(ra)
    lam_a, _ = _eigh_psd(ra)
    if lam_a[0] <= 0:
        raise UndefinedMeasure("relative SNR with a zero correlation matrix")
    u = dominant_eigenvector(rb)
    value = np.real(u.conj() @ ra @ u) / lam_a[0]
    return float(np.clip(value, 0.0, 1.0))


def cmd_algorithmic_decomposition(ra, rb):
    """Collinearity written as eigenvalue-weighted stream powers.

    Returns ``(value, terms)`` with ``terms[l] = lambda_l(Rb) u_l^H Ra u_l``
    (eigenpairs of ``Rb`` in descending order) and
    ``value = sum(terms) / (|Ra|_F |Rb|_F)``.
    """
    ra = _check_hermitian(ra)
    rb = _check_hermitian(rb)
    if ra.shape != rb.shape:
        raise ConfigError("matrices must have equal dimensions")
    _eigh_psd(ra)
    lam_b, u = _eigh_psd(rb)
    na = np.sqrt(np.sum(np.linalg.eigvalsh(ra) ** 2))
    nb = np.sqrt(np.sum(lam_b ** 2))
    if na == 0 or nb == 0:
        raise UndefinedMeasure("CMD of a zero matrix")
    terms = lam_b * np.real(np.einsum("il,ij,jl->l", u.conj(), ra, u))
    value = float(np.clip(terms.sum() / (na * nb), 0.0, 1.0))
    return value, terms


# --------------------------------------------------------------------------
# MSE-based measures
# --------------------------------------------------------------------------

def approx_mse(psd_true, psd_stale, gamma: float, bandwidth: float) -> float:
    """Infinite-filter mismatched MSE from per-bin PSD densities.

    ``bandwidth`` is ``1/T_m`` (Doppler) or ``1/F_m`` (delay); the PSD
    bins cover that bandwidth uniformly, so ``bandwidth * C`` is the
    dimensionless normalized spectrum.
    """
    c_true = bandwidth * np.asarray(psd_true, dtype=float)
    c_stale = bandwidth * np.asarray(psd_stale, dtype=float)
    if c_true.shape != c_stale.shape:
        raise ConfigError("PSDs must have equal lengths")
    g = 1.0 / gamma
    num = g * g * c_true + g * c_stale ** 2
    return float(np.mean(num / (c_stale + g) ** 2))


def approx_relative_mse(psd_true, psd_stale, cfg: EstimatorConfig, bandwidth: float) -> float:
    """Matched over mismatched approximate MSE, in ``(0, 1]``."""
    if not np.any(np.asarray(psd_true) > 0):
        raise UndefinedMeasure("relative MSE with an all-zero true PSD")
    matched = approx_mse(psd_true, psd_true, cfg.gamma, bandwidth)
    mismatched = approx_mse(psd_true, psd_stale, cfg.gamma, bandwidth)
    return float(np.clip(matched / mismatched, 0.0, 1.0))


def _autocovariance(psd, bins, bandwidth, lags, sign):
    """``r(lag) = (1/B) sum_p bandwidth C[p] exp(sign j 2 pi p lag / B)``."""
    c = bandwidth * np.asarray(psd, dtype=float)
    n_bins = len(c)
    phase = np.exp(sign * 2j * np.pi * np.outer(lags, bins) / n_bins)
    return phase @ c / n_bins


class _FiniteFilterModel:
    """Second-order model of ``N`` noisy pilots around an interval midpoint."""

    def __init__(self, psd, bins, bandwidth, cfg: EstimatorConfig, sign: int):
        n, spacing = cfg.interval_length, cfg.pilot_spacing
        if n * spacing > len(psd):
            raise ConfigError(
                f"N*L = {n * spacing} exceeds the covariance support of {len(psd)} bins")
        pilots = np.arange(n) * spacing
        mid = (n - 1) * spacing / 2.0
        r = _autocovariance(psd, bins, bandwidth, pilots, sign)
        self.r0 = float(np.real(_autocovariance(psd, bins, bandwidth, [0.0], sign)[0]))
        self.cross = _autocovariance(psd, bins, bandwidth, pilots - mid, sign)
        cov = toeplitz(r)
        if np.max(np.abs(cov - cov.conj().T)) > 1e-8 * max(self.r0, 1e-300):
            raise NumericalError("pilot covariance drifted from Hermitian")
        self.cov = cov + np.eye(n) / cfg.gamma

    def filter(self) -> np.ndarray:
        return np.linalg.solve(self.cov, self.cross)

    def mse(self, w: np.ndarray) -> float:
        value = self.r0 - 2 * np.real(np.vdot(w, self.cross)) + np.real(np.vdot(w, self.cov @ w))
        return float(value)


def _domain_sign(bins) -> int:
    # Centred bins belong to the Doppler axis (time correlation uses +j);
    # delay bins start at zero and the frequency correlation uses -j.
    return 1 if np.min(bins) < 0 else -1


def exact_mse(psd_true, psd_stale, cfg: EstimatorConfig, bandwidth: float = 1.0,
              bins=None) -> float:
    """MSE under ``psd_true`` of the finite LMMSE filter designed from ``psd_stale``.

    The filter estimates the channel at the midpoint of ``N`` pilots spaced
    ``L`` samples apart. ``bins`` are the signed bin indices (default:
    centred Doppler bins).
    """
    n_bins = len(psd_true)
    if bins is None:
        half = (n_bins - 1) // 2
        bins = np.arange(-half, n_bins - half)
    bins = np.asarray(bins)
    sign = _domain_sign(bins)
    truth = _FiniteFilterModel(psd_true, bins, bandwidth, cfg, sign)
    stale = _FiniteFilterModel(psd_stale, bins, bandwidth, cfg, sign)
    return truth.mse(stale.filter())


def exact_relative_mse(psd_true, psd_stale, cfg: EstimatorConfig, bandwidth: float = 1.0,
                       bins=None) -> float:
    if not np.any(np.asarray(psd_true) > 0):
        raise UndefinedMeasure("relative MSE with an all-zero true PSD")
    matched = exact_mse(psd_true, psd_true, cfg, bandwidth, bins)
    mismatched = exact_mse(psd_true, psd_stale, cfg, bandwidth, bins)
    return float(np.clip(matched / mismatched, 0.0, 1.0))


# --------------------------------------------------------------------------
# Batched pairwise evaluation over a track of PSDs
# --------------------------------------------------------------------------

def approx_mse_matrix(psds, gamma: float, bandwidth: float) -> np.ndarray:
    """``out[a, b]``: approximate MSE under ``psds[a]`` with statistics ``psds[b]``."""
    c = bandwidth * np.asarray(psds, dtype=float)
    g = 1.0 / gamma
    inv = 1.0 / (c + g) ** 2
    n_bins = c.shape[1]
    return (g * g * (c @ inv.T) + g * np.sum(c ** 2 * inv, axis=1)[None, :]) / n_bins


def exact_mse_matrix(psds, cfg: EstimatorConfig, bandwidth: float = 1.0,
                     bins=None) -> np.ndarray:
    """``out[a, b]``: finite-filter MSE under ``psds[a]`` of the filter from ``psds[b]``."""
    c = np.asarray(psds, dtype=float)
    n_track, n_bins = c.shape
    n, spacing = cfg.interval_length, cfg.pilot_spacing
    if n * spacing > n_bins:
        raise ConfigError(
            f"N*L = {n * spacing} exceeds the covariance support of {n_bins} bins")
    if bins is None:
        half = (n_bins - 1) // 2
        bins = np.arange(-half, n_bins - half)
    bins = np.asarray(bins)
    sign = _domain_sign(bins)
    lags = np.arange(-(n - 1), n) * spacing
    mid = (n - 1) * spacing / 2.0
    r_lags = _autocovariance(c.T, bins, bandwidth, lags, sign).T          # (track, 2n-1)
    cross = _autocovariance(c.T, bins, bandwidth, np.arange(n) * spacing - mid, sign).T
    r0 = bandwidth * c.sum(axis=1) / n_bins
    idx = np.arange(n)[:, None] - np.arange(n)[None, :] + (n - 1)
    cov = r_lags[:, idx] + np.eye(n)[None] / cfg.gamma                   # (track, n, n)
    drift = np.abs(cov - np.conj(np.swapaxes(cov, 1, 2))).max()
    if drift > 1e-8 * max(r0.max(initial=0.0), 1e-300):
        raise NumericalError("pilot covariance drifted from Hermitian")
    w = np.linalg.solve(cov, cross[..., None])[..., 0]                   # (track, n)
    quad = np.real(np.einsum("bi,aij,bj->ab", w.conj(), cov, w, optimize=True))
    lin = np.real(cross @ w.conj().T)                                     # w_b^H cross_a
    return r0[:, None] - 2 * lin + quad
