"""Rational transfer-function algebra and state-space tools for SISO loops.

Transfer functions are stored in zero/pole/gain form with real coefficients
(complex roots in conjugate pairs). All containers are frozen dataclasses and
all operations are pure functions, so values can be shared freely across
threads.
"""

from __future__ import annotations

import cmath
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

CANCEL_TOL = 1e-8
STABILITY_TOL = 1e-9
POLE_EVAL_TOL = 1e-9


class AlgebraicLoopError(ValueError):
    """The feedback interconnection 1 + G*C is identically zero."""


class ImproperError(ValueError):
    """Operation requires a proper transfer function."""


class PoleProximityError(ValueError):
    """Evaluation point lies within tolerance of a pole."""

    def __init__(self, s, distance):
        self.s = s
        self.distance = distance
        super().__init__(
            f"evaluation point {s} is within {distance:.3e} of a pole"
        )


def _pair_conjugates(roots, tol):
    """Split roots into (real, one-per-conjugate-pair) or raise.

    Enforces the real-coefficient invariant: every root with a nonzero
    imaginary part must have a conjugate partner within ``tol`` (scaled by
    root magnitude). Returns the symmetrized tuple with exact conjugates.
    """
    roots = [complex(r) for r in roots]
    out = []
    remaining = list(roots)
    while remaining:
        r = remaining.pop(0)
        scale = max(1.0, abs(r))
        if abs(r.imag) <= tol * scale:
            out.append(complex(r.real, 0.0))
            continue
        # find the closest conjugate partner
        best, best_d = None, math.inf
        for k, q in enumerate(remaining):
            d = abs(q - r.conjugate())
            if d < best_d:
                best, best_d = k, d
        if best is None or best_d > tol * scale:
            raise ValueError(
                f"root {r} has no conjugate partner (closest at distance "
                f"{best_d:.3e}); real-coefficient systems need conjugate pairs"
            )
        remaining.pop(best)
        r = complex(r.real, abs(r.imag))
        out.append(r)
        out.append(r.conjugate())
    return tuple(sorted(out, key=lambda z: (z.real, z.imag)))


@dataclass(frozen=True)
class RationalTF:
    """Rational function  gain * prod(s - z_i) / prod(s - p_i)  in s.

    Attributes
    ----------
    zeros, poles : tuple of complex
        Roots in rad/s, closed under conjugation.
    gain : float
        Real scalar multiplier; zero only for the identically-zero function.
    improper : bool
        True when more zeros than poles are allowed (auxiliary systems).
    cancellations : tuple of complex
        Common pole/zero pairs removed at construction time.
    """

    zeros: tuple = ()
    poles: tuple = ()
    gain: float = 1.0
    improper: bool = False
    cancellations: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "zeros", _pair_conjugates(self.zeros, CANCEL_TOL))
        object.__setattr__(self, "poles", _pair_conjugates(self.poles, CANCEL_TOL))
        g = float(self.gain)
        if not math.isfinite(g):
            raise ValueError("gain must be finite")
        object.__setattr__(self, "gain", g)
        if g == 0.0:
            object.__setattr__(self, "zeros", ())
            object.__setattr__(self, "poles", ())
        if len(self.zeros) > len(self.poles) and not self.improper:
            raise ImproperError(
                f"{len(self.zeros)} zeros > {len(self.poles)} poles; "
                "pass improper=True for non-causal functions"
            )

    @property
    def n_zeros(self):
        return len(self.zeros)

    @property
    def n_poles(self):
        return len(self.poles)

    @property
    def relative_degree(self):
        return len(self.poles) - len(self.zeros)

    @property
    def is_zero(self):
        return self.gain == 0.0

    def num_coeffs(self):
        """Numerator coefficients, highest power first, real."""
        if self.is_zero:
            return np.array([0.0])
        return self.gain * _real_poly(self.zeros)

    def den_coeffs(self):
        """Denominator coefficients, highest power first, real."""
        return _real_poly(self.poles)

    def __call__(self, s):
        return tf_eval(self, s)

    def __repr__(self):
        return (
            f"RationalTF(zeros={list(self.zeros)}, poles={list(self.poles)}, "
            f"gain={self.gain!r})"
        )


@dataclass(frozen=True)
class GangOfFour:
    """Closed-loop transfer functions of the unity-feedback loop for (G, C).

    t_uw = 1/(1+GC), t_yw = G/(1+GC), t_ud = C/(1+GC), t_yd = GC/(1+GC).
    ``char_poly`` is the monic closed-loop characteristic polynomial
    (highest power first).
    """

    t_uw: RationalTF
    t_yw: RationalTF
    t_ud: RationalTF
    t_yd: RationalTF
    char_poly: tuple = ()


@dataclass(frozen=True)
class StateSpace:
    """Real state-space model (A, B, C, D); arrays are made read-only.

    ``outputs`` optionally names the output channels of assembled loops.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    outputs: tuple = ()

    def __post_init__(self):
        for name in ("A", "B", "C", "D"):
            arr = np.atleast_2d(np.asarray(getattr(self, name), dtype=float)).copy()
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        n = self.A.shape[0]
        if self.A.shape != (n, n):
            raise ValueError("A must be square")
        if self.B.shape[0] != n or self.C.shape[1] != n:
            raise ValueError("B/C dimensions inconsistent with A")
        if self.D.shape != (self.C.shape[0], self.B.shape[1]):
            raise ValueError("D dimensions inconsistent with B/C")

    @property
    def n_states(self):
        return self.A.shape[0]


@dataclass(frozen=True)
class PoleZeroClassification:
    """Partition of poles and zeros by the sign of their real part.

    Roots with |Re| <= tol are marginal and never counted as unstable or
    nonminimum-phase. The united fields reproduce the input multisets.
    """

    unstable_poles: tuple = ()
    nonmin_zeros: tuple = ()
    marginal_poles: tuple = ()
    marginal_zeros: tuple = ()
    stable_poles: tuple = ()
    stable_zeros: tuple = ()

    @property
    def marginal(self):
        return self.marginal_poles + self.marginal_zeros


def _real_poly(roots):
    """Polynomial coefficients (highest first) from conjugate-closed roots."""
    if not roots:
        return np.array([1.0])
    c = np.poly(np.asarray(roots, dtype=complex))
    imag = np.max(np.abs(c.imag)) if np.iscomplexobj(c) else 0.0
    scale = max(1.0, np.max(np.abs(c.real)))
    if imag > 1e-9 * scale:
        raise ValueError("roots are not conjugate-symmetric")
    return np.asarray(c.real, dtype=float)


def _polish_roots(roots, coeffs):
    """One Newton step per root against the original polynomial."""
    dcoeffs = np.polyder(coeffs)
    out = []
    for r in roots:
        d = np.polyval(dcoeffs, r)
        if abs(d) > 1e-300:
            step = np.polyval(coeffs, r) / d
            if abs(step) < 0.1 * max(1.0, abs(r)):
                r = r - step
        out.append(r)
    return np.array(out)


def _cancel_common(zeros, poles, tol=CANCEL_TOL):
    """Remove pole/zero pairs closer than tol (relative to root scale).

    Returns (zeros, poles, cancelled). Cancellation of a root with positive
    real part breaks internal stability, so it raises a warning.
    """
    zeros = list(zeros)
    poles = list(poles)
    cancelled = []
    i = 0
    while i < len(zeros):
        z = zeros[i]
        best, best_d = None, math.inf
        for k, p in enumerate(poles):
            d = abs(z - p)
            if d < best_d:
                best, best_d = k, d
        scale = max(1.0, abs(z))
        if best is not None and best_d <= tol * scale:
            cancelled.append(complex(z))
            zeros.pop(i)
            poles.pop(best)
            if z.real > STABILITY_TOL:
                warnings.warn(
                    f"cancelled unstable pole/zero pair near {z}; the loop "
                    "is not internally stable",
                    RuntimeWarning,
                    stacklevel=3,
                )
        else:
            i += 1
    return tuple(zeros), tuple(poles), tuple(cancelled)


def tf_new(zeros, poles, gain, improper=False):
    """Build a RationalTF from zeros, poles and gain.

    Conjugate symmetry is enforced, common pole/zero pairs within the
    cancellation tolerance are removed and recorded on ``cancellations``.
    """
    z, p, cancelled = _cancel_common(
        _pair_conjugates(zeros, CANCEL_TOL), _pair_conjugates(poles, CANCEL_TOL)
    )
    return RationalTF(zeros=z, poles=p, gain=float(gain), improper=improper,
                      cancellations=cancelled)


def tf_from_coeffs(num, den, improper=False):
    """Build a RationalTF from polynomial coefficients (highest power first).

    Roots are found as companion-matrix eigenvalues (numpy.roots) and then
    polished with one Newton step.
    """
    num = np.atleast_1d(np.asarray(num, dtype=float))
    den = np.atleast_1d(np.asarray(den, dtype=float))
    if num.size == 0 or den.size == 0:
        raise ValueError("coefficient arrays must be nonempty")
    den_trim = np.trim_zeros(den, "f")
    if den_trim.size == 0:
        raise ValueError("denominator is identically zero")
    num_trim = np.trim_zeros(num, "f")
    if num_trim.size == 0:
        return RationalTF(zeros=(), poles=(), gain=0.0)
    zeros = _polish_roots(np.roots(num_trim), num_trim) if num_trim.size > 1 else np.array([])
    poles = _polish_roots(np.roots(den_trim), den_trim) if den_trim.size > 1 else np.array([])
    gain = num_trim[0] / den_trim[0]
    return tf_new(zeros, poles, gain, improper=improper)


def tf_eval(tf, s):
    """Evaluate gain * prod(s - z)/prod(s - p) at complex s (scalar or array).

    Products are accumulated in log-magnitude/phase form so high-order
    functions do not overflow. Raises PoleProximityError when s is within
    tolerance of a pole.
    """
    s_arr = np.atleast_1d(np.asarray(s, dtype=complex))
    if tf.is_zero:
        out = np.zeros_like(s_arr)
        return out[0] if np.isscalar(s) or np.ndim(s) == 0 else out
    logmag = np.full(s_arr.shape, math.log(abs(tf.gain)))
    phase = np.full(s_arr.shape, cmath.phase(complex(tf.gain)))
    for z in tf.zeros:
        d = s_arr - z
        logmag += np.log(np.abs(d))
        phase += np.angle(d)
    for p in tf.poles:
        d = s_arr - p
        dist = np.abs(d)
        scale = max(1.0, abs(p))
        if np.any(dist <= POLE_EVAL_TOL * scale):
            k = int(np.argmin(dist))
            raise PoleProximityError(s_arr.flat[k], float(dist.flat[k]))
        logmag -= np.log(dist)
        phase -= np.angle(d)
    out = np.exp(logmag + 1j * phase)
    return out[0] if np.isscalar(s) or np.ndim(s) == 0 else out


def tf_log_magnitude(tf, omega):
    """log|tf(j*omega)| accumulated term by term; never raises near poles.

    Returns -inf for the zero function and +/-inf exactly at poles/zeros on
    the grid (measure-zero for quadrature use).
    """
    w = np.atleast_1d(np.asarray(omega, dtype=float))
    if tf.is_zero:
        return np.full(w.shape, -np.inf)
    s = 1j * w
    with np.errstate(divide="ignore"):
        acc = np.full(w.shape, math.log(abs(tf.gain)))
        for z in tf.zeros:
            acc += np.log(np.abs(s - z))
        for p in tf.poles:
            acc -= np.log(np.abs(s - p))
    return acc if np.ndim(omega) else acc[0]


def gang_of_four(G, C):
    """Closed-loop Gang of Four for plant G and controller C.

    Raises AlgebraicLoopError when 1 + G*C is identically zero.
    """
    ng, dg = G.num_coeffs(), G.den_coeffs()
    nc, dc = C.num_coeffs(), C.den_coeffs()
    char = np.polyadd(np.polymul(dg, dc), np.polymul(ng, nc))
    scale = max(np.max(np.abs(np.polymul(dg, dc))), np.max(np.abs(np.polymul(ng, nc))))
    char_trim = np.trim_zeros(char, "f")
    if char_trim.size == 0 or np.max(np.abs(char)) < 1e-12 * scale:
        raise AlgebraicLoopError("1 + G*C is identically zero")
    return GangOfFour(
        t_uw=tf_from_coeffs(np.polymul(dg, dc), char),
        t_yw=tf_from_coeffs(np.polymul(ng, dc), char),
        t_ud=tf_from_coeffs(np.polymul(nc, dg), char),
        t_yd=tf_from_coeffs(np.polymul(ng, nc), char),
        char_poly=tuple(float(c) for c in char_trim / char_trim[0]),
    )


def reciprocal(tf):
    """1/tf: swap zeros and poles, invert gain."""
    if tf.is_zero:
        raise ZeroDivisionError("reciprocal of the zero function")
    return RationalTF(
        zeros=tf.poles, poles=tf.zeros, gain=1.0 / tf.gain,
        improper=len(tf.poles) > len(tf.zeros),
    )


def frequency_invert(tf):
    """Auxiliary system under the substitution s -> 1/s.

    Maps c*prod(s-z)/prod(s-p) to c*s^(n-m)*prod(1-s*z)/prod(1-s*p), whose
    zeros are 1/z (z != 0) plus an origin zero of multiplicity n-m and whose
    poles are 1/p (p != 0). The involution property holds: applying twice
    returns the original function. The result is flagged improper whenever
    it ends up with more zeros than poles.
    """
    if tf.is_zero:
        return tf
    n, m = len(tf.poles), len(tf.zeros)
    zeros = [1.0 / z for z in tf.zeros if abs(z) > 0.0]
    zeros += [0.0] * max(0, n - m)
    poles = [1.0 / p for p in tf.poles if abs(p) > 0.0]
    poles += [0.0] * max(0, m - n)
    gain = tf.gain
    for z in tf.zeros:
        if abs(z) > 0.0:
            gain *= -z
    for p in tf.poles:
        if abs(p) > 0.0:
            gain /= -p
    if abs(gain.imag if isinstance(gain, complex) else 0.0) > 1e-9 * abs(gain):
        raise ValueError("gain did not come out real; roots not conjugate-closed")
    gain = gain.real if isinstance(gain, complex) else gain
    return RationalTF(
        zeros=tuple(zeros), poles=tuple(poles), gain=float(gain),
        improper=len(zeros) > len(poles),
    )


def inverse_plant(G):
    """Inverse system 1/G expressed in the inverted frequency variable.

    Equals reciprocal(frequency_invert(G)): poles at 1/z_i and at the origin
    with multiplicity n-m, zeros at 1/p_i for p_i != 0 (origin poles of G
    drop out of the numerator). Proper whenever G has no origin zeros.
    """
    if G.is_zero:
        raise ZeroDivisionError("inverse of the zero plant")
    return reciprocal(frequency_invert(G))


def realize(tf):
    """Controllable-canonical minimal realization of a proper RationalTF.

    The realization is validated against tf_eval on a fixed 32-point random
    frequency probe (1e-8 relative tolerance).
    """
    if tf.improper or len(tf.zeros) > len(tf.poles):
        raise ImproperError("cannot realize an improper transfer function")
    num = tf.num_coeffs()
    den = tf.den_coeffs()
    num = num / den[0]
    den = den / den[0]
    n = den.size - 1
    if n == 0:
        ss = StateSpace(A=np.zeros((0, 0)), B=np.zeros((0, 1)),
                        C=np.zeros((1, 0)), D=np.array([[num[0]]]))
        return ss
    q, r = np.polydiv(num, den) if num.size == den.size else (np.array([0.0]), num)
    d = float(q[-1]) if q.size else 0.0
    r = np.atleast_1d(r)
    b_low = np.zeros(n)
    b_low[: r.size] = r[::-1]
    a_low = den[::-1][:-1]  # a_0 ... a_{n-1}
    A = np.zeros((n, n))
    A[:-1, 1:] = np.eye(n - 1)
    A[-1, :] = -a_low
    B = np.zeros((n, 1))
    B[-1, 0] = 1.0
    C = b_low.reshape(1, n)
    D = np.array([[d]])
    ss = StateSpace(A=A, B=B, C=C, D=D)
    _probe_check(ss, tf)
    return ss


def _probe_check(ss, tf, npts=32, rtol=1e-8):
    """Verify ss transfer function equals tf on a seeded random probe grid."""
    rng = np.random.default_rng(0xB0DE)
    scale = max([1.0] + [abs(r) for r in tf.zeros + tf.poles])
    omegas = scale * 10.0 ** rng.uniform(-2, 2, npts)
    for w in omegas:
        s = 1j * w
        try:
            want = tf_eval(tf, s)
        except PoleProximityError:
            continue
        got = ss_eval(ss, s)[0, 0]
        if abs(got - want) > rtol * max(1.0, abs(want)):
            raise ArithmeticError(
                f"realization mismatch at s={s}: {got} vs {want}"
            )


def ss_eval(ss, s):
    """Transfer matrix C (sI - A)^-1 B + D of a StateSpace at complex s."""
    n = ss.n_states
    if n == 0:
        return ss.D.astype(complex)
    x = np.linalg.solve(s * np.eye(n) - ss.A, ss.B)
    return ss.C @ x + ss.D


def classify(tf, tol=STABILITY_TOL):
    """Partition poles/zeros by sign of the real part.

    Roots with |Re| <= tol are marginal and excluded from the unstable /
    nonminimum-phase sets.
    """
    if tol < 0:
        raise ValueError("tol must be nonnegative")

    def split(roots):
        unstable, marginal, stable = [], [], []
        for r in roots:
            if abs(r.real) <= tol:
                marginal.append(r)
            elif r.real > 0:
                unstable.append(r)
            else:
                stable.append(r)
        return tuple(unstable), tuple(marginal), tuple(stable)

    up, mp, sp = split(tf.poles)
    uz, mz, sz = split(tf.zeros)
    return PoleZeroClassification(
        unstable_poles=up, nonmin_zeros=uz,
        marginal_poles=mp, marginal_zeros=mz,
        stable_poles=sp, stable_zeros=sz,
    )


def is_mean_square_stable(ss, tol=STABILITY_TOL):
    """True iff every eigenvalue of A satisfies Re < -tol (Hurwitz).

    For LTI loops driven by stationary inputs this is the implemented
    sufficient condition for a uniformly bounded state second moment.
    """
    if ss.n_states == 0:
        return True
    eig = np.linalg.eigvals(ss.A)
    return bool(np.max(eig.real) < -tol)


def _series_blocks(blocks):
    """Realize each RationalTF in blocks; returns list of StateSpace."""
    return [realize(b) for b in blocks]


def closed_loop_system(G, C, injection, noise_shape, dither_intensity=0.0):
    """Augmented closed loop driven by unit-intensity white noise.

    Parameters
    ----------
    G, C : RationalTF
        Plant and controller (proper).
    injection : {"control_noise", "measurement_noise"}
        control_noise builds the forward loop (noise w enters at the plant
        input, w = u + v); measurement_noise builds the inverted-frequency
        loop around inverse_plant(G) and inverse_plant(C), with the shaped
        noise d as primary input and d = y + e.
    noise_shape : RationalTF
        Strictly proper stable shaping filter from white noise to the
        injected disturbance.
    dither_intensity : float
        Relative intensity of an optional independent shaped noise added at
        the feedback block input (a measurement dither). Zero by default;
        a small positive value keeps every channel coherence strictly below
        one, which the Monte-Carlo mutual-information estimates need, while
        perturbing all spectra only at second order in the intensity.

    Returns
    -------
    StateSpace
        White-noise input(s); named output channels: ("u", "v", "w", "y")
        for control_noise, ("e", "y", "d", "u") for measurement_noise. The
        extra fourth channel carries the loop's second block output needed
        by the mutual-information checks.

    Notes
    -----
    An augmentation whose A matrix is not Hurwitz is allowed but flagged
    with a RuntimeWarning.
    """
    if noise_shape.relative_degree < 1:
        raise ValueError("noise_shape must be strictly proper")
    if dither_intensity < 0:
        raise ValueError("dither_intensity must be nonnegative")
    if injection == "control_noise":
        plant, ctrl = G, C
    elif injection == "measurement_noise":
        plant, ctrl = inverse_plant(G), inverse_plant(C)
    else:
        raise ValueError(f"unknown injection {injection!r}")
    sF = realize(noise_shape)
    sP = realize(plant)
    sK = realize(ctrl)
    dP = float(sP.D[0, 0])
    dK = float(sK.D[0, 0])
    delta = 1.0 + dK * dP
    if abs(delta) < 1e-12:
        raise AlgebraicLoopError("loop is not well-posed (1 + D_C*D_G = 0)")

    with_dither = dither_intensity > 0.0
    if with_dither:
        # the dither must roll off at DC like the loop sensitivity does
        # (loop type worth of origin zeros), otherwise it would dominate
        # every channel at low frequency in integrator loops; the corner
        # sits below the shape pole so the dither still carries power in
        # the crossover region
        n_type = sum(1 for p in list(plant.poles) + list(ctrl.poles)
                     if abs(p) <= STABILITY_TOL)
        dither_shape = noise_shape
        if n_type:
            a = max(abs(p) for p in noise_shape.poles) / 3.0
            dither_shape = RationalTF(
                zeros=noise_shape.zeros + (0.0,) * n_type,
                poles=noise_shape.poles + (-a,) * n_type,
                gain=noise_shape.gain,
            )
        sD = realize(dither_shape)
    else:
        sD = None
    nF, nP, nK = sF.n_states, sP.n_states, sK.n_states
    nD = sD.n_states if with_dither else 0
    n = nF + nD + nP + nK
    iF = slice(0, nF)
    iD = slice(nF, nF + nD)
    iP = slice(nF + nD, nF + nD + nP)
    iK = slice(nF + nD + nP, n)

    row_n0 = np.zeros(n)
    row_n0[iF] = sF.C[0]
    row_df = np.zeros(n)
    if with_dither:
        row_df[iD] = sD.C[0]
    # plant_in = (n0 - C_K x_K - D_K C_P x_P - D_K df)/delta
    row_in = np.zeros(n)
    row_in[iF] = sF.C[0] / delta
    row_in[iK] = -sK.C[0] / delta
    row_in[iP] = -dK * sP.C[0] / delta
    row_in -= (dK / delta) * row_df
    # plant output: C_P x_P + D_P * plant_in
    row_out = np.zeros(n)
    row_out[iP] = sP.C[0]
    row_out += dP * row_in
    # fed-back channel: fb = n0 - plant_in
    row_fb = row_n0 - row_in

    A = np.zeros((n, n))
    A[iF, iF] = sF.A
    if with_dither:
        A[iD, iD] = sD.A
    A[iP, iP] = sP.A
    A[iP, :] += sP.B @ row_in.reshape(1, n)
    A[iK, iK] = sK.A
    # feedback block sees the plant output plus the dither
    A[iK, :] += sK.B @ (row_out + row_df).reshape(1, n)
    q = 2 if with_dither else 1
    B = np.zeros((n, q))
    B[iF, 0] = sF.B[:, 0]
    if with_dither:
        B[iD, 1] = dither_intensity * sD.B[:, 0]

    if injection == "control_noise":
        # (u, v, w) ordering plus plant output y
        rows = [row_in, row_fb, row_n0, row_out]
        names = ("u", "v", "w", "y")
    else:
        # tilde loop: plant input is y~ = d~ - e~, fed-back signal is e~
        rows = [row_fb, row_in, row_n0, row_out]
        names = ("e", "y", "d", "u")
    Cmat = np.vstack(rows)
    D = np.zeros((len(rows), q))
    ss = StateSpace(A=A, B=B, C=Cmat, D=D, outputs=names)
    if not is_mean_square_stable(ss):
        warnings.warn(
            "assembled closed loop is not mean-square stable",
            RuntimeWarning, stacklevel=2,
        )
    return ss
