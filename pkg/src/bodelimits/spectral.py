"""Welch spectral estimation, PSD-ratio sensitivity curves, Bode-like
integrals and Gaussian mutual-information rates.

Scaling convention: phi_x(omega) is the two-sided spectral density per
rad/s equal to the plain Fourier transform of the autocovariance, so the
signal variance is (1/2pi) * integral of phi_x over all omega and an
Ornstein-Uhlenbeck channel with unit variance and rate a has
phi(omega) = 2a/(a^2 + omega^2). Cross-spectra follow
phi_xy(omega) = FT of Cov[x(t+tau), y(t)], i.e. phi_xy = conj(phi_yx).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import csd

COHERENCE_CLIP = 1e-6
PSD_FLOOR_FACTOR = 1e-12


@dataclass(frozen=True)
class SpectralEstimate:
    """Auto- or cross-spectral density on an ascending positive grid."""

    omega: np.ndarray
    values: np.ndarray
    nperseg: int
    overlap: float
    window_id: str
    segments_used: int
    pair: tuple = ("", "")
    stationary_ok: bool = True

    @property
    def is_auto(self):
        return self.pair[0] == self.pair[1]


@dataclass(frozen=True)
class SensitivityCurve:
    """Pointwise sqrt of a PSD ratio; masked points carry NaN."""

    omega: np.ndarray
    value: np.ndarray
    kind: str
    segments: int = 0

    def unmasked(self):
        m = np.isfinite(self.value) & (self.value > 0)
        return self.omega[m], self.value[m]


@dataclass(frozen=True)
class MiRateEstimate:
    """Pinsker mutual-information rate from clipped coherence samples."""

    value: float
    integrand_grid: np.ndarray  # clipped squared coherence per grid point
    omega: np.ndarray
    truncation_band: tuple
    clip_fraction: float
    reliable: bool


@dataclass(frozen=True)
class EmpiricalIntegral:
    """Trapezoid Bode-like integral with tail corrections and error model."""

    value: float
    abs_error_estimate: float
    band: tuple
    tail_correction: float
    head_correction: float


def default_nperseg(n_samples):
    """Spec default: 2 ** ceil(log2(length / 64))."""
    if n_samples < 256:
        raise ValueError("signal too short for spectral estimation")
    return int(2 ** math.ceil(math.log2(n_samples / 64)))


def split_half_variance_ratio(x):
    """Second-order stationarity check: variance ratio of the two halves."""
    n = len(x) // 2
    v1 = float(np.var(x[:n]))
    v2 = float(np.var(x[n:]))
    if max(v1, v2) == 0.0:
        return 1.0
    return v1 / v2 if v2 > 0 else math.inf


def welch_spectra(bundle, pair, nperseg=None, overlap_fraction=0.5):
    """Hann-windowed averaged (cross-)periodogram of two bundle channels.

    Returns the density scaled to the continuous-time two-sided convention
    (per rad/s, no hidden 2pi), on the ascending grid 0 < omega <= pi/dt.
    Auto-spectra are returned real and nonnegative.
    """
    xname, yname = pair
    for name in (xname, yname):
        if name not in bundle.channels:
            raise KeyError(f"channel {name!r} not in bundle")
    x = bundle.channels[xname]
    y = bundle.channels[yname]
    n = len(x)
    if nperseg is None:
        nperseg = default_nperseg(n)
    if nperseg > n // 4:
        raise ValueError(f"nperseg {nperseg} exceeds length/4 = {n // 4}")
    if not 0.0 <= overlap_fraction <= 0.9:
        raise ValueError("overlap_fraction must lie in [0, 0.9]")
    noverlap = int(nperseg * overlap_fraction)
    fs = 1.0 / bundle.dt
    f, pxy = csd(
        x, y, fs=fs, window="hann", nperseg=nperseg, noverlap=noverlap,
        detrend="constant", return_onesided=False, scaling="density",
    )
    # scipy csd averages conj(X) * Y; the phi_xy convention here is
    # E[X conj(Y)], so conjugate. Keep 0 < f, map the -Nyquist bin to +.
    half = len(f) // 2
    idx = np.arange(1, half)
    omega = 2.0 * math.pi * f[idx]
    values = np.conj(pxy[idx])
    omega = np.append(omega, 2.0 * math.pi * (-f[half]))
    values = np.append(values, pxy[half])  # conj twice
    segments = 1 + (n - nperseg) // max(1, nperseg - noverlap)
    if xname == yname:
        values = np.clip(values.real, 0.0, None).astype(complex)
    ratio = split_half_variance_ratio(x)
    stationary_ok = 0.8 < ratio < 1.25
    return SpectralEstimate(
        omega=omega, values=values, nperseg=int(nperseg),
        overlap=float(overlap_fraction), window_id="hann",
        segments_used=int(segments), pair=(xname, yname),
        stationary_ok=bool(stationary_ok),
    )


def parseval_variance(auto):
    """(1/2pi) * two-sided integral of an auto-spectrum (variance check)."""
    return float(np.trapezoid(auto.values.real, auto.omega) / math.pi)


def sensitivity_like(num, den, kind):
    """Pointwise sqrt(phi_num / phi_den) with denominator flooring.

    Grid points where the denominator falls below 1e-12 times its band
    median are masked (NaN), never extrapolated.
    """
    if num.omega.shape != den.omega.shape or not np.allclose(num.omega, den.omega):
        raise ValueError("sensitivity_like needs a shared frequency grid")
    a = np.clip(num.values.real, 0.0, None)
    b = den.values.real
    floor = PSD_FLOOR_FACTOR * float(np.median(b[b > 0])) if np.any(b > 0) else 0.0
    value = np.full(b.shape, np.nan)
    ok = b > floor
    value[ok] = np.sqrt(a[ok] / b[ok])
    # propagate the input masks
    value[~np.isfinite(a)] = np.nan
    value[~np.isfinite(b)] = np.nan
    return SensitivityCurve(omega=num.omega.copy(), value=value, kind=kind,
                            segments=num.segments_used)


def _band_mask(omega, band):
    lo, hi = band
    return (omega >= lo) & (omega <= hi)


def _log_head_mass(w, f):
    """Integral of f over [0, w[0]] from a c0 + c1*log(w) fit.

    Sensitivity-type integrands behave like (2 * loop type) * log(w) below
    the grid floor; a constant continuation misses that mass entirely for
    integrator loops. The fit uses the lowest decade, skipping the first
    two bins (the most smoothing-biased ones).
    """
    w0 = float(w[0])
    sel = w <= 10.0 * w0
    sel[: min(2, len(w) - 4)] = False
    if sel.sum() < 4:
        return float(f[0]) * w0
    basis = np.column_stack([np.ones(sel.sum()), np.log(w[sel])])
    coef, *_ = np.linalg.lstsq(basis, f[sel], rcond=None)
    c0, c1 = float(coef[0]), float(coef[1])
    if abs(c1) > 20.0:
        return float(f[0]) * w0
    return c0 * w0 + c1 * (w0 * math.log(w0) - w0)


def _check_band_coverage(omega, logcurve):
    """Coverage guard: grid must bracket the curve's main deviation."""
    peak = float(np.max(np.abs(logcurve)))
    if peak < 0.05:
        # near-all-pass curve: any 3+-decade grid is enough
        if omega[-1] / omega[0] < 1e3:
            raise ValueError("insufficient band coverage for integration")
        return
    w_peak = float(omega[int(np.argmax(np.abs(logcurve)))])
    if omega[0] > 0.011 * w_peak or omega[-1] < 90.0 * w_peak:
        raise ValueError(
            f"band [{omega[0]:.3g}, {omega[-1]:.3g}] does not cover "
            f"[{0.01 * w_peak:.3g}, {100 * w_peak:.3g}] around the response "
            f"peak at {w_peak:.3g} rad/s"
        )


def bode_like_integral(curve, weight="unweighted", band=None):
    """(1/2pi) * two-sided integral of log(curve) with optional 1/w^2 weight.

    Trapezoid rule on the unmasked grid (doubled by evenness), a parametric
    c/w^2 tail fitted to the last decade, and, for the weighted case, an
    even polynomial fit of log(curve) over the lowest two decades so the
    1/w^2 weight is removable at the origin. The error estimate combines
    the statistical per-bin model with the size of the corrections.
    """
    omega, value = curve.unmasked()
    if omega.size < 16:
        raise ValueError("too few unmasked points to integrate")
    if band is not None:
        m = _band_mask(omega, band)
        omega, value = omega[m], value[m]
        if omega.size < 16:
            raise ValueError("band leaves too few points to integrate")
    logc = np.log(value)
    _check_band_coverage(omega, logc)
    w_lo, w_hi = float(omega[0]), float(omega[-1])
    last = omega >= w_hi / 10.0

    if weight == "unweighted":
        main = float(np.trapezoid(logc, omega))
        cfit = float(np.mean(logc[last] * omega[last] ** 2))
        tail = cfit / w_hi
        head = _log_head_mass(omega, logc)
        value_total = (main + tail + head) / math.pi
    elif weight == "inv_omega_sq":
        low = omega <= w_lo * 100.0
        basis = np.column_stack([omega[low] ** 2, omega[low] ** 4])
        coef, *_ = np.linalg.lstsq(basis, logc[low], rcond=None)
        a2, a4 = float(coef[0]), float(coef[1])
        split = w_lo * 100.0
        head = a2 * split + a4 * split ** 3 / 3.0
        mid = omega >= split
        main = float(np.trapezoid(logc[mid] / omega[mid] ** 2, omega[mid]))
        lb = np.column_stack([np.ones(last.sum()), np.log(omega[last])])
        bcoef, *_ = np.linalg.lstsq(lb, logc[last], rcond=None)
        b0, b1 = float(bcoef[0]), float(bcoef[1])
        tail = (b0 + b1 * (math.log(w_hi) + 1.0)) / w_hi
        value_total = (main + head + tail) / math.pi
    else:
        raise ValueError(f"unknown weight {weight!r}")

    # statistical model: log-PSD-ratio noise ~ 1/sqrt(K) per bin, bins
    # roughly independent at the trapezoid scale
    dws = np.gradient(omega)
    wgt = np.ones_like(omega) if weight == "unweighted" else 1.0 / omega ** 2
    k_eff = max(curve.segments, 30)
    stat = math.sqrt(float(np.sum((dws * wgt) ** 2)) / k_eff) / math.pi
    trunc = 0.25 * (abs(tail) + abs(head)) / math.pi
    from .limits import CONVERGED, IntegralResult

    return IntegralResult(
        value=float(value_total),
        abs_error_estimate=float(stat + trunc),
        status=CONVERGED,
    )


def coherence(x_auto, y_auto, cross):
    """Clipped squared coherence |phi_xy|^2 / (phi_x phi_y) on the grid."""
    for other in (y_auto, cross):
        if not np.allclose(x_auto.omega, other.omega):
            raise ValueError("coherence needs a shared frequency grid")
    px = np.clip(x_auto.values.real, 0.0, None)
    py = np.clip(y_auto.values.real, 0.0, None)
    denom = px * py
    g2 = np.zeros_like(denom)
    ok = denom > 0
    g2[ok] = np.abs(cross.values[ok]) ** 2 / denom[ok]
    return np.clip(g2, 0.0, 1.0 - COHERENCE_CLIP)


def mi_rate_pinsker(x_auto, y_auto, cross, band=None):
    """Gaussian mutual-information rate -(1/4pi) int log(1 - gamma^2) dw.

    The squared coherence is clipped to [0, 1 - 1e-6]; the clipped fraction
    is reported and the estimate is flagged unreliable when it exceeds 10%
    of the integration band. The integral runs over the positive band and
    is doubled by evenness (nats per second).
    """
    g2 = coherence(x_auto, y_auto, cross)
    omega = x_auto.omega
    if band is None:
        band = (float(omega[0]), float(omega[-1]))
    m = _band_mask(omega, band)
    if m.sum() < 4:
        raise ValueError("integration band too narrow")
    clip_fraction = float(np.mean(g2[m] >= 1.0 - COHERENCE_CLIP - 1e-15))
    integrand = -np.log1p(-g2[m])
    value = float(np.trapezoid(integrand, omega[m]) / (2.0 * math.pi))
    return MiRateEstimate(
        value=value,
        integrand_grid=g2,
        omega=omega,
        truncation_band=(float(omega[m][0]), float(omega[m][-1])),
        clip_fraction=clip_fraction,
        reliable=clip_fraction <= 0.10,
    )


def mi_rate_difference(a_pair, b_pair, band, tail_fit=True):
    """I_inf(a) - I_inf(b) with a c/w^2 tail restored to the difference.

    Each argument is a (x_auto, y_auto, cross) triple on a shared grid.
    The per-rate band truncation mostly cancels in the difference; the
    remaining truncated mass decays like the log of a sensitivity curve,
    so the same last-decade c/w^2 fit used for empirical Bode-like
    integrals restores it.
    """
    g2a = coherence(*a_pair)
    g2b = coherence(*b_pair)
    omega = a_pair[0].omega
    m = _band_mask(omega, band)
    if m.sum() < 16:
        raise ValueError("integration band too narrow")
    integrand = (-np.log1p(-g2a[m]) + np.log1p(-g2b[m])) / (2.0 * math.pi)
    w = omega[m]
    value = float(np.trapezoid(integrand, w))
    # continuation below the band floor (log-linear head model)
    value += _log_head_mass(w, integrand)
    tail = 0.0
    if tail_fit:
        last = w >= w[-1] / 10.0
        cfit = float(np.mean(integrand[last] * w[last] ** 2))
        tail = cfit / float(w[-1])
    dws = np.gradient(w)
    stat = math.sqrt(float(np.sum(dws ** 2))) / (2.0 * math.pi)
    return float(value + tail), float(stat + 0.25 * abs(tail))
