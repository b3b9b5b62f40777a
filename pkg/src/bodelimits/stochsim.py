"""Exact-discretization simulation of noise-driven closed loops.

The state recursion uses the matrix exponential and the Van Loan
construction for the discrete process-noise covariance, so second moments
carry no step-size bias. The initial state is drawn from the stationary
law (Lyapunov solve), making every sample path stationary from sample 0.
Sample paths are bit-for-bit reproducible functions of (seed, dt, duration).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm, solve_continuous_lyapunov
from scipy.signal import lfilter

from .lti import RationalTF, StateSpace, is_mean_square_stable, tf_new

CHANNELS = ("u", "v", "w", "y", "d", "e")
BINARY_MAGIC = b"BLIMSIG1"


@dataclass(frozen=True)
class NoiseSpec:
    """Stationary Gaussian noise model: white noise through a shaping filter.

    The shape must be strictly proper and strictly stable so the resulting
    PSD intensity^2 * |shape(jw)|^2 is rational and bounded (hence class-F)
    and every driven channel has finite variance.
    """

    shape: RationalTF
    intensity: float = 1.0

    def __post_init__(self):
        if self.intensity < 0:
            raise ValueError("intensity must be nonnegative")
        if self.shape.relative_degree < 1:
            raise ValueError("noise shape must be strictly proper")
        if any(p.real >= 0 for p in self.shape.poles):
            raise ValueError("noise shape must be strictly stable")


def ou_shape(a, gain=None):
    """First-order (Ornstein-Uhlenbeck) shaping filter gain/(s+a).

    With the default gain sqrt(2a) the shaped output has unit stationary
    variance; any gain works for the harness since all sensitivity-like
    quantities are PSD ratios.
    """
    if a <= 0:
        raise ValueError("OU rate must be positive")
    g = math.sqrt(2.0 * a) if gain is None else gain
    return tf_new([], [-a], g)


def default_shape_rate(loop):
    """Geometric mean of the loop pole magnitudes: a mid-band OU pole."""
    eig = np.linalg.eigvals(loop.A)
    mags = np.abs(eig)
    mags = mags[mags > 0]
    if mags.size == 0:
        return 1.0
    return float(np.exp(np.mean(np.log(mags))))


def default_dt(loop):
    """Sample interval (1/20) of the fastest natural period, in seconds."""
    eig = np.linalg.eigvals(loop.A)
    wmax = float(np.max(np.abs(eig))) if eig.size else 1.0
    return math.pi / (10.0 * max(wmax, 1e-12))


@dataclass(frozen=True)
class DiscreteSystem:
    """Zero-order-hold discretization with exact process-noise statistics."""

    A_d: np.ndarray
    noise_factor: np.ndarray  # L with L L^T = discrete noise covariance
    C_d: np.ndarray
    D_d: np.ndarray
    dt: float
    noise_cov: np.ndarray


def _psd_factor(Q):
    """Symmetric-eigendecomposition square root of a PSD matrix."""
    Qs = 0.5 * (Q + Q.T)
    w, V = np.linalg.eigh(Qs)
    w = np.clip(w, 0.0, None)
    return V * np.sqrt(w)


def exact_discretize(ss, dt):
    """Discretize x' = A x + B xi (unit white noise) over a step dt.

    A_d = expm(A dt); the discrete noise covariance  integral_0^dt
    e^{As} B B' e^{A's} ds  comes from the augmented-matrix-exponential
    (Van Loan) construction and is returned through its symmetric factor.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    A = ss.A
    n = A.shape[0]
    Q = ss.B @ ss.B.T
    if n == 0:
        return DiscreteSystem(
            A_d=np.zeros((0, 0)), noise_factor=np.zeros((0, 0)),
            C_d=ss.C.copy(), D_d=ss.D.copy(), dt=float(dt),
            noise_cov=np.zeros((0, 0)),
        )
    M = np.block([[-A, Q], [np.zeros((n, n)), A.T]]) * dt
    F = expm(M)
    A_d = F[n:, n:].T
    Q_d = A_d @ F[:n, n:]
    Q_d = 0.5 * (Q_d + Q_d.T)
    return DiscreteSystem(
        A_d=A_d, noise_factor=_psd_factor(Q_d), C_d=ss.C.copy(),
        D_d=ss.D.copy(), dt=float(dt), noise_cov=Q_d,
    )


def stationary_covariance(ss):
    """State covariance P solving A P + P A' + B B' = 0 (A Hurwitz)."""
    if ss.n_states == 0:
        return np.zeros((0, 0))
    if not is_mean_square_stable(ss):
        raise ValueError("A is not Hurwitz; no stationary covariance exists")
    P = solve_continuous_lyapunov(ss.A, -(ss.B @ ss.B.T))
    return 0.5 * (P + P.T)


def output_covariance(ss):
    """Covariance C P C' of the output channels at stationarity."""
    P = stationary_covariance(ss)
    return ss.C @ P @ ss.C.T


@dataclass(frozen=True)
class SignalBundle:
    """Uniformly sampled, seeded Monte-Carlo time series of loop channels."""

    dt: float
    channels: dict
    seed: int
    burn_in_samples: int = 0

    def __post_init__(self):
        lengths = {len(v) for v in self.channels.values()}
        if len(lengths) > 1:
            raise ValueError("all channels must share one length")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        n = lengths.pop() if lengths else 0
        if n < 2 * self.burn_in_samples:
            raise ValueError("length must be at least twice the burn-in")

    @property
    def n_samples(self):
        return len(next(iter(self.channels.values()))) if self.channels else 0

    @property
    def duration(self):
        return self.n_samples * self.dt

    def to_csv(self, path):
        """Write t plus the six standard channels; absent channels are NaN."""
        n = self.n_samples
        cols = [np.arange(n) * self.dt]
        for name in CHANNELS:
            cols.append(self.channels.get(name, np.full(n, np.nan)))
        data = np.column_stack(cols)
        header = "t," + ",".join(CHANNELS)
        np.savetxt(path, data, delimiter=",", header=header, comments="",
                   fmt="%.17g")

    def to_binary(self, path):
        """Little-endian block: magic, u64 count, f64 dt, channel-major f64."""
        n = self.n_samples
        with open(path, "wb") as fh:
            fh.write(BINARY_MAGIC)
            fh.write(np.uint64(n).astype("<u8").tobytes())
            fh.write(np.float64(self.dt).astype("<f8").tobytes())
            for name in CHANNELS:
                arr = self.channels.get(name, np.full(n, np.nan))
                fh.write(np.asarray(arr, dtype="<f8").tobytes())


def read_binary(path):
    """Read a bundle written by SignalBundle.to_binary."""
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != BINARY_MAGIC:
            raise ValueError(f"bad magic {magic!r}")
        n = int(np.frombuffer(fh.read(8), dtype="<u8")[0])
        dt = float(np.frombuffer(fh.read(8), dtype="<f8")[0])
        channels = {}
        for name in CHANNELS:
            arr = np.frombuffer(fh.read(8 * n), dtype="<f8").copy()
            if not np.all(np.isnan(arr)):
                channels[name] = arr
    return SignalBundle(dt=dt, channels=channels, seed=0)


def _modal_paths(A_d, x0, noise_seq, C_rows):
    """Channel paths of x[k+1] = A_d x[k] + noise_seq[:, k] via modal filters.

    Falls back to the direct recursion when A_d is too far from
    diagonalizable for the eigenbasis to be trustworthy.
    """
    n, N = noise_seq.shape[0], noise_seq.shape[1] + 1
    lam, V = np.linalg.eig(A_d)
    cond = np.linalg.cond(V)
    if not np.isfinite(cond) or cond > 1e9:
        X = np.empty((n, N))
        X[:, 0] = x0
        x = x0.copy()
        for k in range(N - 1):
            x = A_d @ x + noise_seq[:, k]
            X[:, k + 1] = x
        return C_rows @ X
    Vin = np.linalg.inv(V)
    m0 = Vin @ x0
    E = Vin @ noise_seq
    CV = C_rows @ V
    out = np.zeros((C_rows.shape[0], N))
    drive = np.empty(N, dtype=complex)
    for i in range(n):
        drive[0] = m0[i]
        drive[1:] = E[i]
        mi = lfilter([1.0], [1.0, -lam[i]], drive)
        out += np.real(np.outer(CV[:, i], mi))
    return out


def simulate(loop, noise, dt, duration, seed):
    """Stationary Gaussian sample paths of every loop channel.

    Parameters
    ----------
    loop : StateSpace
        Assembled closed loop (from closed_loop_system) whose single input
        is unit-intensity white noise; must be mean-square stable with no
        direct feedthrough.
    noise : NoiseSpec
        Supplies the white-noise intensity (the shape filter is already part
        of the loop).
    dt, duration : float
        Sample interval and run length in seconds; duration must cover at
        least 100 times the slowest loop time constant and dt must respect
        the Nyquist guard dt < pi / max|eig(A)|.
    seed : int
        Counter-based RNG key; identical (seed, dt, duration) give
        bit-identical bundles regardless of thread count.
    """
    if duration <= 0:
        raise ValueError("duration must be positive")
    if not is_mean_square_stable(loop):
        raise ValueError("loop is not mean-square stable")
    if np.any(loop.D != 0.0):
        raise ValueError("loop must have no direct white-noise feedthrough")
    eig = np.linalg.eigvals(loop.A)
    tau_slow = 1.0 / float(np.min(-eig.real))
    if duration < 100.0 * tau_slow:
        raise ValueError(
            f"duration {duration:g}s is below 100x the slowest time "
            f"constant ({100 * tau_slow:g}s)"
        )
    wmax = float(np.max(np.abs(eig)))
    if dt > math.pi / wmax:
        raise ValueError(
            f"dt {dt:g}s violates the Nyquist guard {math.pi / wmax:g}s"
        )
    n = loop.n_states
    N = int(round(duration / dt))
    disc = exact_discretize(loop, dt)
    P = stationary_covariance(loop)
    sig = float(noise.intensity)

    rng = np.random.default_rng(np.random.Philox(key=int(seed) & (2 ** 64 - 1)))
    z0 = rng.standard_normal(n)
    Z = rng.standard_normal((n, N - 1))
    x0 = sig * (_psd_factor(P) @ z0)
    noise_seq = sig * (disc.noise_factor @ Z)

    paths = _modal_paths(disc.A_d, x0, noise_seq, loop.C)
    names = loop.outputs if loop.outputs else tuple(
        f"ch{i}" for i in range(loop.C.shape[0])
    )
    channels = {name: np.ascontiguousarray(paths[i]) for i, name in enumerate(names)}
    burn = min(N // 2, int(math.ceil(5.0 * tau_slow / dt)))
    return SignalBundle(dt=float(dt), channels=channels, seed=int(seed),
                        burn_in_samples=burn)
