"""Spectral sums over the switching harmonics.

The central object is the transform

    F[T](D) = -2 Re sum_{n>=1} exp(j 2 pi n D) T(j n w_s)

of a loop gain ``T`` at duty ratio ``D``.  For first-order fractions it has
the closed form :func:`alpha`; :func:`f_closed` combines those building
blocks through a partial-fraction decomposition and :func:`f_series` sums
the definition directly as an independent check.

Constant terms are assigned a transform of zero (``F[1] = 0``) by both
routes.  The raw series of a constant is not summable in the ordinary
sense and Abel summation would give 1 instead; the zero convention is the
one under which the first-order table entries hold.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional

import numpy as np

from .errors import DutyDomainError, HarmonicBalanceError, PoleError, RepeatedPoleError
from .tf_core import PartialFractionForm, RationalTF, partial_fractions

__all__ = [
    "P_SWITCH",
    "TAYLOR_ORDER",
    "FTransformResult",
    "alpha",
    "alpha_taylor",
    "correction",
    "f_closed",
    "f_series",
    "f_transform",
    "table_case",
    "table_case_tf",
    "TABLE_CASES",
]

P_SWITCH = 1e-3
TAYLOR_ORDER = 8

# Bernoulli numbers B_0..B_9 (B_1 = -1/2); alpha_k(D) = (2 pi)^(k+1) B_{k+1}(D) / (k+1)!
_BERNOULLI = (
    Fraction(1), Fraction(-1, 2), Fraction(1, 6), Fraction(0), Fraction(-1, 30),
    Fraction(0), Fraction(1, 42), Fraction(0), Fraction(-1, 30), Fraction(0),
)


def _bernoulli_poly_coeffs(n: int) -> tuple[float, ...]:
    """Ascending coefficients of the Bernoulli polynomial B_n(x)."""
    c = [Fraction(0)] * (n + 1)
    for j in range(n + 1):
        c[n - j] += math.comb(n, j) * _BERNOULLI[j]
    return tuple(float(v) for v in c)


_ALPHA_POLY = tuple(
    tuple((2 * math.pi) ** (k + 1) / math.factorial(k + 1) * b for b in _bernoulli_poly_coeffs(k + 1))
    for k in range(TAYLOR_ORDER + 1)
)


def _check_duty(D):
    D = np.asarray(D, dtype=float)
    if np.any(~(D > 0) | ~(D < 1)):
        raise DutyDomainError("duty ratio must lie strictly inside (0, 1)")
    return D


def alpha_taylor(D, k: int):
    """Taylor coefficient ``alpha_k(D)`` of ``alpha(D, p) = sum (-1)^k alpha_k p^k``.

    ``alpha_0 = pi (2D - 1)`` and ``alpha_1 = pi^2 (2D^2 - 2D + 1/3)``;
    higher orders are scaled Bernoulli polynomials.
    """
    if not 0 <= k <= TAYLOR_ORDER:
        raise HarmonicBalanceError(f"Taylor order {k} unsupported (0..{TAYLOR_ORDER})")
    D = _check_duty(D)
    if k == 0:
        out = math.pi * (2 * D - 1)
    elif k == 1:
        out = math.pi**2 * (2 * D**2 - 2 * D + 1.0 / 3.0)
    else:
        out = np.polynomial.polynomial.polyval(D, _ALPHA_POLY[k])
    return float(out) if np.ndim(out) == 0 else out


def _alpha_series_part(D, p):
    """``pi exp(pi p (1-2D)) csch(pi p)`` written without overflow."""
    two_pi_p = 2 * np.pi * p
    right = np.real(p) >= 0
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        # Re p >= 0:  2 pi exp(-2 pi p D) / (1 - exp(-2 pi p))
        a = 2 * np.pi * np.exp(-two_pi_p * D) / (-np.expm1(-two_pi_p))
        # Re p < 0:  -2 pi exp(2 pi p (1-D)) / (1 - exp(2 pi p))
        b = -2 * np.pi * np.exp(two_pi_p * (1 - D)) / (-np.expm1(two_pi_p))
    return np.where(right, a, b)


def alpha(D, p):
    """Closed-form transform of ``1/(s + p w_s)`` scaled by ``w_s``.

    ``alpha(D, p) = 1/p - pi exp(pi p (1 - 2D)) csch(pi p)``

    Below ``|p| < P_SWITCH`` the order-8 Taylor expansion replaces the
    formula, which cancels catastrophically there.  ``p`` may be complex
    (conjugate pole pairs); poles at ``p = j k`` for nonzero integer ``k``
    raise :class:`PoleError`.  Real ``p`` gives a real result.
    """
    D = _check_duty(D)
    p_in = np.asarray(p)
    real_input = not np.iscomplexobj(p_in)
    p = p_in.astype(complex)
    D, p = np.broadcast_arrays(D, p)

    k_int = np.round(p.imag)
    on_axis = (np.abs(p.real) < 1e-12) & (k_int != 0) & (np.abs(p.imag - k_int) < 1e-12)
    if np.any(on_axis):
        raise PoleError("alpha has poles at p = j k for nonzero integer k")

    small = np.abs(p) < P_SWITCH
    taylor = np.zeros(p.shape, dtype=complex)
    if np.any(small):
        ps = np.where(small, p, 0)
        for k in range(TAYLOR_ORDER + 1):
            taylor = taylor + (-1) ** k * np.polynomial.polynomial.polyval(D, _ALPHA_POLY[k]) * ps**k
    with np.errstate(divide="ignore", invalid="ignore"):
        pb = np.where(small, 1.0, p)
        closed = 1.0 / pb - _alpha_series_part(D, pb)
    out = np.where(small, taylor, closed)
    if real_input:
        out = out.real
    return out.item() if out.ndim == 0 else out


def correction(D, p):
    """Higher-order remainder ``c(D, p) = alpha - alpha_0 + alpha_1 p``."""
    return alpha(D, p) - alpha_taylor(D, 0) + alpha_taylor(D, 1) * np.asarray(p)


@dataclass(frozen=True)
class FTransformResult:
    value: float
    method: str
    terms_used: Optional[int] = None
    tail_estimate: Optional[float] = None
    imag_residue: float = 0.0

    def __float__(self):
        return float(self.value)


def f_closed(pf: PartialFractionForm, D, omega_s: float) -> FTransformResult:
    """Transform of a partial-fraction form, built from ``alpha``.

    The feedthrough contributes nothing.  Complex poles are evaluated at
    complex ``p`` and summed with their conjugates, so the total is real.
    ``D`` may be an array.
    """
    D = _check_duty(D)
    val = (
        pf.b1 * alpha_taylor(D, 0) / omega_s
        + pf.b2 * alpha_taylor(D, 1) / omega_s**2
        + np.zeros(np.shape(D), dtype=complex)
    )
    for pole, res in pf.simple_poles:
        val = val + res / omega_s * alpha(D, complex(-pole / omega_s))
    imag = float(np.max(np.abs(np.imag(val)))) if np.size(val) else 0.0
    real = np.real(val)
    return FTransformResult(
        real.item() if np.ndim(real) == 0 else real, "closed_form", imag_residue=imag
    )


def f_series(tf: RationalTF, D: float, omega_s: float, N: int = 100_000) -> FTransformResult:
    """Direct harmonic sum of the transform, truncated at ``N`` terms.

    The feedthrough of a bi-proper ``tf`` is dropped first.  Partial sums
    of relative-degree-one functions oscillate, so the value is the mean
    of the last ``N // 10`` partial sums; ``tail_estimate`` is how far that
    mean moved from the last partial sum.
    """
    if N < 1000:
        raise HarmonicBalanceError("series oracle needs N >= 1000")
    D = float(_check_duty(D))
    tf = tf.strictly_proper_part()
    n = np.arange(1, N + 1)
    vals = tf(1j * n * omega_s)
    terms = -2.0 * np.real(np.exp(2j * np.pi * D * n) * vals)
    partial = np.cumsum(terms)
    window = partial[N - N // 10:]
    value = float(np.mean(window))
    return FTransformResult(
        value, "series", terms_used=N, tail_estimate=float(abs(value - partial[-1]))
    )


def f_transform(tf: RationalTF, D, omega_s: float, N: int = 100_000) -> FTransformResult:
    """Closed form where a first-order decomposition exists, series otherwise."""
    try:
        pf = partial_fractions(tf)
    except RepeatedPoleError:
        return f_series(tf, D, omega_s, N)
    return f_closed(pf, D, omega_s)


TABLE_CASES = ("C1", "C2", "C3", "C4", "C5", "C6", "C7", "C8", "C9")
_NEEDS = {
    "C1": "p", "C2": "", "C3": "p", "C4": "pz", "C5": "p",
    "C6": "", "C7": "z", "C8": "pz", "C9": "pz",
}


def _check_case(case_id, p, z):
    if case_id not in _NEEDS:
        raise HarmonicBalanceError(f"unknown case {case_id!r}")
    for name, v in (("p", p), ("z", z)):
        if name in _NEEDS[case_id] and (v is None or not v > 0):
            raise HarmonicBalanceError(f"case {case_id} needs positive {name}")


def table_case(case_id: str, D, p: Optional[float] = None, z: Optional[float] = None,
               omega_s: float = 1.0):
    """Printed transform formula for one standard loop-gain shape.

    ``p`` and ``z`` are the pole and zero normalised by ``omega_s``.
    """
    _check_case(case_id, p, z)
    a0 = alpha_taylor(D, 0)
    a1 = alpha_taylor(D, 1)
    ws = omega_s
    if p is not None and "p" in _NEEDS[case_id]:
        a = alpha(D, p)
        c = correction(D, p)
    if case_id == "C1":
        return (a0 - a1 * p + c) / ws
    if case_id == "C2":
        return a0 / ws
    if case_id == "C3":
        return p * a
    if case_id == "C4":
        return p * (1 - p / z) * a
    if case_id == "C5":
        return (a1 * p - c) / ws
    if case_id == "C6":
        return a1 / ws**2
    if case_id == "C7":
        return (a0 / z + a1) / ws**2
    if case_id == "C8":
        return (p / z * a0 - (p / z - 1) * (a1 * p - c)) / ws
    return (p / z * a1 + (1 / p - 1 / z) * c) / ws**2


def table_case_tf(case_id: str, p: Optional[float] = None, z: Optional[float] = None,
                  omega_s: float = 1.0) -> RationalTF:
    """Transfer function of a standard loop-gain shape (``w_p = p w_s``, ``w_z = z w_s``)."""
    _check_case(case_id, p, z)
    wp = p * omega_s if p else None
    wz = z * omega_s if z else None
    lead = (1.0, 1.0 / wz) if wz else (1.0,)
    return {
        "C1": lambda: RationalTF((1.0,), (wp, 1.0)),
        "C2": lambda: RationalTF((1.0,), (0.0, 1.0)),
        "C3": lambda: RationalTF((1.0,), (1.0, 1.0 / wp)),
        "C4": lambda: RationalTF(lead, (1.0, 1.0 / wp)),
        "C5": lambda: RationalTF((1.0,), (0.0, 1.0, 1.0 / wp)),
        "C6": lambda: RationalTF((1.0,), (0.0, 0.0, 1.0)),
        "C7": lambda: RationalTF(lead, (0.0, 0.0, 1.0)),
        "C8": lambda: RationalTF(lead, (0.0, 1.0, 1.0 / wp)),
        "C9": lambda: RationalTF(lead, (0.0, 0.0, 1.0, 1.0 / wp)),
    }[case_id]()
