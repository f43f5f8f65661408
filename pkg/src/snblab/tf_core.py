"""Rational transfer functions of the Laplace variable.

Polynomials are dense coefficient tuples in *ascending* powers of ``s``
(the :mod:`numpy.polynomial.polynomial` convention), so ``(1, 2, 3)`` is
``1 + 2 s + 3 s**2``.  Orders stay small (the converter loop gains of
interest are at most fifth order), so no factored representation is kept.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numpy.polynomial import polynomial as P

from .errors import (
    ImproperTransferFunction,
    IndeterminateGain,
    OriginMultiplicityError,
    PoleError,
    RepeatedPoleError,
    TransferFunctionError,
)

__all__ = [
    "RationalTF",
    "PartialFractionForm",
    "eval_jomega",
    "partial_fractions",
    "dc_gain",
    "laurent_at_infinity",
    "cancel_common_roots",
]

# smallest |den(s)| accepted by eval_jomega before calling it a pole
POLE_GUARD = 1e-300


def _as_coeffs(c: Sequence[float]) -> tuple[float, ...]:
    arr = np.atleast_1d(np.asarray(c))
    if np.iscomplexobj(arr):
        if np.any(np.abs(arr.imag) > 1e-12 * max(1.0, np.max(np.abs(arr)))):
            raise TransferFunctionError("transfer-function coefficients must be real")
        arr = arr.real
    arr = arr.astype(float)
    if not np.all(np.isfinite(arr)):
        raise TransferFunctionError("transfer-function coefficients must be finite")
    # drop high-order zeros, keep at least the constant term
    nz = np.flatnonzero(arr)
    if nz.size == 0:
        return (0.0,)
    return tuple(float(v) for v in arr[: nz[-1] + 1])


@dataclass(frozen=True)
class RationalTF:
    """Real rational function ``num(s) / den(s)``.

    Improper functions (numerator degree above denominator degree) are
    rejected; bi-proper ones are allowed.
    """

    num_coeffs: tuple[float, ...]
    den_coeffs: tuple[float, ...]

    def __post_init__(self):
        num = _as_coeffs(self.num_coeffs)
        den = _as_coeffs(self.den_coeffs)
        if den == (0.0,):
            raise TransferFunctionError("denominator is identically zero")
        if num != (0.0,) and len(num) > len(den):
            raise ImproperTransferFunction(
                f"numerator degree {len(num) - 1} exceeds denominator degree {len(den) - 1}"
            )
        object.__setattr__(self, "num_coeffs", num)
        object.__setattr__(self, "den_coeffs", den)

    # construction helpers
    @classmethod
    def constant(cls, k: float) -> "RationalTF":
        return cls((k,), (1.0,))

    @classmethod
    def integrator(cls, order: int = 1) -> "RationalTF":
        """``1 / s**order``."""
        return cls((1.0,), (0.0,) * order + (1.0,))

    @classmethod
    def first_order_lag(cls, omega_p: float) -> "RationalTF":
        """``1 / (1 + s/omega_p)``."""
        return cls((1.0,), (1.0, 1.0 / omega_p))

    @classmethod
    def from_roots(cls, zeros, poles, gain: float = 1.0) -> "RationalTF":
        num = np.real_if_close(P.polyfromroots(zeros) if len(zeros) else np.array([1.0]), tol=1e6)
        den = np.real_if_close(P.polyfromroots(poles) if len(poles) else np.array([1.0]), tol=1e6)
        return cls(gain * np.real(num), np.real(den))

    # structure
    @property
    def num_degree(self) -> int:
        return -1 if self.is_zero else len(self.num_coeffs) - 1

    @property
    def den_degree(self) -> int:
        return len(self.den_coeffs) - 1

    @property
    def relative_degree(self) -> int:
        if self.is_zero:
            return math.inf
        return self.den_degree - self.num_degree

    @property
    def is_zero(self) -> bool:
        return self.num_coeffs == (0.0,)

    @property
    def is_strictly_proper(self) -> bool:
        return self.relative_degree >= 1

    @property
    def feedthrough(self) -> float:
        """Value at ``s -> infinity``."""
        if self.num_degree == self.den_degree:
            return self.num_coeffs[-1] / self.den_coeffs[-1]
        return 0.0

    def strictly_proper_part(self) -> "RationalTF":
        k = self.feedthrough
        if k == 0.0:
            return self
        num = np.asarray(self.num_coeffs) - k * np.asarray(self.den_coeffs)
        num[-1] = 0.0  # exact cancellation of the leading term
        return RationalTF(num, self.den_coeffs)

    # evaluation
    def __call__(self, s):
        return P.polyval(s, self.num_coeffs) / P.polyval(s, self.den_coeffs)

    def num(self, s):
        return P.polyval(s, self.num_coeffs)

    def den(self, s):
        return P.polyval(s, self.den_coeffs)

    # algebra
    def __add__(self, other):
        other = _coerce(other)
        if self.den_coeffs == other.den_coeffs:
            return RationalTF(P.polyadd(self.num_coeffs, other.num_coeffs), self.den_coeffs)
        num = P.polyadd(
            P.polymul(self.num_coeffs, other.den_coeffs),
            P.polymul(other.num_coeffs, self.den_coeffs),
        )
        return RationalTF(num, P.polymul(self.den_coeffs, other.den_coeffs))

    __radd__ = __add__

    def __neg__(self):
        return RationalTF(-np.asarray(self.num_coeffs), self.den_coeffs)

    def __sub__(self, other):
        return self + (-_coerce(other))

    def __rsub__(self, other):
        return _coerce(other) - self

    def __mul__(self, other):
        if isinstance(other, (int, float, np.floating, np.integer)):
            return RationalTF(float(other) * np.asarray(self.num_coeffs), self.den_coeffs)
        other = _coerce(other)
        return RationalTF(
            P.polymul(self.num_coeffs, other.num_coeffs),
            P.polymul(self.den_coeffs, other.den_coeffs),
        )

    __rmul__ = __mul__

    def __repr__(self):
        return f"RationalTF(num={list(self.num_coeffs)}, den={list(self.den_coeffs)})"


def _coerce(x) -> RationalTF:
    if isinstance(x, RationalTF):
        return x
    if isinstance(x, (int, float, np.floating, np.integer)):
        return RationalTF.constant(float(x))
    raise TypeError(f"cannot combine RationalTF with {type(x).__name__}")


def eval_jomega(tf: RationalTF, omega):
    """Evaluate ``tf(j*omega)``.

    Numerator and denominator are evaluated separately (Horner) so the pole
    guard can inspect the denominator.  ``omega`` may be an array.
    """
    s = 1j * np.asarray(omega, dtype=float)
    den = P.polyval(s, tf.den_coeffs)
    if np.any(np.abs(den) < POLE_GUARD):
        raise PoleError(f"j*omega is a pole of {tf!r}")
    out = P.polyval(s, tf.num_coeffs) / den
    return complex(out) if out.ndim == 0 else out


def dc_gain(tf: RationalTF) -> float:
    """``tf(0)``; ``math.inf`` when the function has a pole at the origin.

    A common factor ``s`` in numerator and denominator is divided out (at
    most twice) before deciding.
    """
    num = list(tf.num_coeffs)
    den = list(tf.den_coeffs)
    if tf.is_zero:
        return 0.0
    for _ in range(3):
        n0, d0 = num[0], den[0]
        if d0 != 0.0:
            return n0 / d0
        if n0 != 0.0:
            return math.inf
        if len(num) == 1 or len(den) == 1:
            break
        num, den = num[1:], den[1:]
    raise IndeterminateGain("0/0 at s = 0 persists after removing two factors of s")


def laurent_at_infinity(tf: RationalTF, order: int) -> np.ndarray:
    """Coefficients ``g_0 .. g_order`` with ``tf(s) = sum_k g_k s**-k``."""
    g = np.zeros(order + 1)
    if tf.is_zero:
        return g
    rel = tf.den_degree - tf.num_degree
    pw = np.asarray(tf.num_coeffs[::-1])   # numerator in w = 1/s
    qw = np.asarray(tf.den_coeffs[::-1])
    m = order + 1 - rel
    if m <= 0:
        return g
    ser = np.zeros(m)
    pw = np.concatenate([pw, np.zeros(max(0, m - pw.size))])
    qw = np.concatenate([qw, np.zeros(max(0, m - qw.size))])
    for k in range(m):
        ser[k] = (pw[k] - np.dot(ser[:k], qw[k:0:-1])) / qw[0]
    g[rel:] = ser
    return g


def _roots(coeffs) -> np.ndarray:
    if len(coeffs) < 2:
        return np.zeros(0, dtype=complex)
    # companion-matrix eigenvalues
    return np.asarray(P.polyroots(coeffs), dtype=complex)


def _rebuild(lead: float, roots: Sequence[complex]) -> np.ndarray:
    if len(roots) == 0:
        return np.array([lead])
    return lead * np.real(P.polyfromroots(roots))


def cancel_common_roots(tf: RationalTF, rtol: float = 1e-7) -> RationalTF:
    """Remove numerator/denominator root pairs closer than ``rtol`` (relative)."""
    num = list(tf.num_coeffs)
    den = list(tf.den_coeffs)
    if tf.is_zero:
        return RationalTF((0.0,), (1.0,))
    # exact common factors of s
    while len(num) > 1 and len(den) > 1 and num[0] == 0.0 and den[0] == 0.0:
        num, den = num[1:], den[1:]
    zeros = list(_roots(num))
    poles = list(_roots(den))
    cancelled = False
    for p in list(poles):
        for z in zeros:
            scale = max(abs(p), abs(z))
            if scale > 0 and abs(p - z) <= rtol * scale:
                zeros.remove(z)
                poles.remove(p)
                cancelled = True
                break
    if not cancelled:
        return RationalTF(num, den)
    return RationalTF(_rebuild(num[-1], zeros), _rebuild(den[-1], poles))


@dataclass(frozen=True)
class PartialFractionForm:
    """``feedthrough + b1/s + b2/s**2 + sum_k r_k / (s - p_k)``.

    ``simple_poles`` holds ``(pole, residue)`` pairs in rad/s; complex poles
    appear together with their conjugates.
    """

    feedthrough: float = 0.0
    b1: float = 0.0
    b2: float = 0.0
    simple_poles: tuple[tuple[complex, complex], ...] = field(default_factory=tuple)

    def __call__(self, s):
        s = np.asarray(s, dtype=complex)
        out = self.feedthrough + self.b1 / s + self.b2 / s**2
        for p, r in self.simple_poles:
            out = out + r / (s - p)
        return out

    def scaled(self, k: float) -> "PartialFractionForm":
        return PartialFractionForm(
            k * self.feedthrough,
            k * self.b1,
            k * self.b2,
            tuple((p, k * r) for p, r in self.simple_poles),
        )

    def __add__(self, other: "PartialFractionForm") -> "PartialFractionForm":
        return PartialFractionForm(
            self.feedthrough + other.feedthrough,
            self.b1 + other.b1,
            self.b2 + other.b2,
            self.simple_poles + other.simple_poles,
        )


def partial_fractions(
    tf: RationalTF, cancel_rtol: float = 1e-7, cluster_rtol: float = 1e-8
) -> PartialFractionForm:
    """Decompose a proper rational function into first-order fractions.

    At most a double pole at the origin is allowed; every other pole must
    be simple.  Residues come from ``num(p) / den'(p)`` after the origin
    factor has been split off.

    Raises
    ------
    OriginMultiplicityError
        For ``1/s**3`` or higher.
    RepeatedPoleError
        When two non-origin poles coincide to ``cluster_rtol``.
    """
    tf = cancel_common_roots(tf, cancel_rtol)
    if tf.is_zero:
        return PartialFractionForm()
    k = tf.feedthrough
    num = np.asarray(tf.strictly_proper_part().num_coeffs)
    den = np.asarray(tf.den_coeffs)

    scale = np.max(np.abs(den))
    m = 0
    while m < den.size - 1 and abs(den[m]) <= 1e-14 * scale:
        m += 1
    if m > 2:
        raise OriginMultiplicityError(f"pole of order {m} at the origin")
    dt = den[m:]

    poles = _roots(dt)
    for i in range(poles.size):
        for j in range(i + 1, poles.size):
            if abs(poles[i] - poles[j]) <= cluster_rtol * max(abs(poles[i]), abs(poles[j])):
                raise RepeatedPoleError(f"repeated pole near {poles[i]:.6g}")

    ddt = P.polyder(dt)
    pairs = []
    for p in sorted(poles, key=lambda z: (z.real, z.imag)):
        if abs(p.imag) <= 1e-12 * abs(p):
            p = complex(p.real, 0.0)
        elif p.imag < 0:
            continue  # filled in from its conjugate
        r = P.polyval(p, num) / (p**m * P.polyval(p, ddt))
        if p.imag == 0.0:
            pairs.append((p, complex(r.real, 0.0)))
        else:
            pairs.append((p, complex(r)))
            pairs.append((p.conjugate(), complex(r).conjugate()))

    b1 = b2 = 0.0
    if m:
        n0 = num[0]
        n1 = num[1] if num.size > 1 else 0.0
        d0 = dt[0]
        d1 = dt[1] if dt.size > 1 else 0.0
        h0 = n0 / d0
        if m == 1:
            b1 = h0
        else:
            b2 = h0
            b1 = (n1 * d0 - n0 * d1) / d0**2
    return PartialFractionForm(float(k), float(b1), float(b2), tuple(pairs))
