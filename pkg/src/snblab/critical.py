"""Steady-state and saddle-node conditions for the switched buck converter.

With the diode voltage written as a Fourier series, the T-periodic
comparator input ``y0`` at the switching instant ``d = D T`` is

    y0(d) = off * v_r - v_s * E(D),
    E(D)  = D G(0) + 2 sum_{n>=1} Re[c_n exp(j n w_s d) G(j n w_s)],
    c_n   = (1 - exp(-j n w_s d)) / (j 2 pi n),

and a periodic orbit needs ``y0(d) = h(d) = V_m D``.  Differentiating with
respect to ``d`` gives the tangency (fold) condition

    S(D) = -(2 v_s / T) Re sum_{n>=1} exp(j 2 pi n D) G(j n w_s) - v_s G(0) / T = m_a,

whose left side, evaluated along the branch ``v_s = v_s(D)``, is the
S-plot.

The harmonic sums are evaluated with the first Laurent coefficients of
``G`` at infinity split off and summed exactly (Bernoulli-polynomial
Fourier identities), so the remainder that is summed numerically decays
like ``n**-5``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace
from functools import lru_cache
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.optimize import brentq, minimize_scalar

from .converter import CMC, ConverterSpec, StateFeedback, build_loop_gain, scheme_G
from .errors import CriticalError, DenominatorZero
from .harmonic_balance import _bernoulli_poly_coeffs
from .tf_core import RationalTF, dc_gain, eval_jomega, laurent_at_infinity

__all__ = [
    "N_SS",
    "HBPoint",
    "SNBSolution",
    "BoundaryPoint",
    "steady_residual",
    "vs_of_d",
    "snb_lhs",
    "find_snb",
    "s_curve",
    "l_curve",
    "min_stabilizing_ramp",
    "closed_form_state_feedback",
    "closed_form_cmc",
    "trace_boundary",
]

N_SS = 20_000
LAURENT_ORDER = 4
GRID = 2000
MAX_GRID = 64_000


def _fourier_poly(m: int, D):
    """``sum_{n>=1} Re[(-j)^m exp(j 2 pi n D)] / n^m`` for ``0 <= D <= 1``."""
    b = np.polynomial.polynomial.polyval(D, _bernoulli_poly_coeffs(m))
    return -((2 * np.pi) ** m) * b / (2 * math.factorial(m))


@dataclass(frozen=True)
class _Harmonics:
    G0: float
    laurent: np.ndarray      # g_0..g_LAURENT_ORDER
    omega_s: float
    n: np.ndarray
    rem: np.ndarray          # G(jnw) minus its Laurent part
    tail_5: float
    tail_8: float
    scale: float
    is_zero: bool


@lru_cache(maxsize=64)
def _harmonics(G: RationalTF, omega_s: float, N: int, need_dc: bool = True) -> _Harmonics:
    if not G.is_zero and not G.is_strictly_proper:
        raise CriticalError("G must be strictly proper for the harmonic-balance sums")
    G0 = dc_gain(G)
    if need_dc and not math.isfinite(G0):
        raise CriticalError("G(0) is infinite; steady-state balance needs a finite DC gain")
    g = laurent_at_infinity(G, LAURENT_ORDER)
    n = np.arange(1, N + 1, dtype=float)
    jw = 1j * n * omega_s
    Gn = eval_jomega(G, n * omega_s)
    lau = sum(g[k] / jw**k for k in range(1, LAURENT_ORDER + 1))
    rem = Gn - lau
    # integral-test tails with |rem_n| ~ |rem_N| (N/n)^(K+1)
    K1 = LAURENT_ORDER + 1
    rN = abs(rem[-1]) + 1e-16 * abs(Gn[-1])
    tail_8 = rN * N / (K1 - 1)
    tail_5 = rN / (math.pi * K1)
    scale = (abs(G0) if math.isfinite(G0) else 0.0) + float(np.max(np.abs(Gn[:8])))
    return _Harmonics(G0, g, omega_s, n, rem, tail_8=tail_8, tail_5=tail_5,
                      scale=scale, is_zero=G.is_zero)


def _laurent_parts(h: _Harmonics, D):
    """Exact contributions of the Laurent terms to the two sums."""
    e5 = np.zeros(np.shape(D))
    s8 = np.zeros(np.shape(D))
    for k in range(1, LAURENT_ORDER + 1):
        gk = h.laurent[k] / h.omega_s**k
        if gk == 0.0:
            continue
        s8 = s8 + gk * _fourier_poly(k, D)
        e5 = e5 + gk / math.pi * (_fourier_poly(k + 1, D) - _fourier_poly(k + 1, 0.0))
    return e5, s8


def _sums_at(h: _Harmonics, D) -> tuple[np.ndarray, np.ndarray]:
    """``E(D)`` and ``Re sum exp(j 2 pi n D) G_n`` at arbitrary duty ratios."""
    D = np.atleast_1d(np.asarray(D, dtype=float))
    a = h.rem / (2j * np.pi * h.n)
    const = np.sum(a)
    e_rem = np.empty(D.size, dtype=complex)
    s_rem = np.empty(D.size, dtype=complex)
    chunk = max(1, 2_000_000 // h.n.size)
    for i in range(0, D.size, chunk):
        ph = np.exp(2j * np.pi * np.outer(D[i:i + chunk], h.n))
        e_rem[i:i + chunk] = ph @ a
        s_rem[i:i + chunk] = ph @ h.rem
    e5, s8 = _laurent_parts(h, D)
    E = D * h.G0 + e5 + 2 * np.real(e_rem - const)
    S = s8 + np.real(s_rem)
    return E, S


def _sums_on_grid(h: _Harmonics, M: int):
    """Same sums at ``D = k/M``, ``k = 1..M-1``, via one FFT each."""
    idx = (h.n.astype(np.int64)) % M
    a = h.rem / (2j * np.pi * h.n)

    def fold(c):
        b = np.bincount(idx, weights=c.real, minlength=M) + 1j * np.bincount(
            idx, weights=c.imag, minlength=M
        )
        return M * np.fft.ifft(b)

    D = np.arange(1, M) / M
    e_rem = fold(a)[1:]
    s_rem = fold(h.rem)[1:]
    e5, s8 = _laurent_parts(h, D)
    E = D * h.G0 + e5 + 2 * np.real(e_rem - np.sum(a))
    S = s8 + np.real(s_rem)
    return D, E, S


def _duty(spec: ConverterSpec, d) -> np.ndarray:
    D = np.asarray(d, dtype=float) / spec.T
    if np.any((D <= 0) | (D >= 1)):
        raise CriticalError("switching instant d must lie strictly inside (0, T)")
    return D


def _h(spec: ConverterSpec, N: int = N_SS, G: Optional[RationalTF] = None) -> _Harmonics:
    return _harmonics(scheme_G(spec) if G is None else G, spec.omega_s, N)


def _scalar(x):
    x = np.asarray(x)
    return float(x[0]) if x.size == 1 else x


def steady_residual(spec: ConverterSpec, d, v_s, N: int = N_SS):
    """Imbalance ``off v_r - y0(d) ...`` of the periodic-orbit equation, in volts."""
    h = _h(spec, N)
    D = _duty(spec, d)
    E, _ = _sums_at(h, D)
    r = spec.scheme.offset_gain * spec.v_r - np.asarray(v_s) * E - spec.V_m * np.atleast_1d(D)
    return _scalar(r)


def _vs_from(spec, D, E, h):
    num = spec.scheme.offset_gain * spec.v_r - spec.V_m * D
    zero = np.abs(E) <= 1e-13 * max(h.scale, 1e-300)
    with np.errstate(divide="ignore", invalid="ignore"):
        v = np.where(zero, np.nan, num / np.where(zero, 1.0, E))
    return v, zero


def vs_of_d(spec: ConverterSpec, d, N: int = N_SS):
    """Source voltage for which a periodic orbit switches at ``d``.

    Raises :class:`DenominatorZero` at a branch asymptote.
    """
    h = _h(spec, N)
    D = np.atleast_1d(_duty(spec, d))
    E, _ = _sums_at(h, D)
    v, zero = _vs_from(spec, D, E, h)
    if np.any(zero):
        i = int(np.flatnonzero(zero)[0])
        raise DenominatorZero(f"branch asymptote at D = {D[i]:.6g}", denominator=float(E[i]))
    return _scalar(v)


def snb_lhs(spec: ConverterSpec, d, v_s, G_hf: Optional[RationalTF] = None, N: int = N_SS):
    """Slope of ``y0`` at the switching instant (the S-plot ordinate), V/s.

    ``G_hf`` optionally replaces ``G`` in the harmonic sum by a
    high-frequency approximation; ``G(0)`` always comes from the exact ``G``.
    """
    G = scheme_G(spec)
    D = _duty(spec, d)
    if G_hf is None:
        h = _h(spec, N)
        _, S = _sums_at(h, D)
        G0 = h.G0
    else:
        # only the slope sum is needed, so G_hf may have origin poles
        _, S = _sums_at(_harmonics(G_hf, spec.omega_s, N, need_dc=False), D)
        G0 = dc_gain(G)
    v_s = np.asarray(v_s)
    return _scalar(-(2 * v_s / spec.T) * S - v_s * G0 / spec.T)


@dataclass(frozen=True)
class HBPoint:
    d: float
    D: float
    v_s_implied: Optional[float]
    s_value: Optional[float]
    balance_residual: Optional[float]
    stable_hint: Optional[str]   # stable | unstable | boundary, None at a hole


@dataclass(frozen=True)
class SNBSolution:
    d_star: float
    D_star: float
    v_s_star: float
    method: str
    m_a_used: float
    balance_residual: float = 0.0
    slope_residual: float = 0.0
    degenerate: bool = False


def _tol_snb(spec, tol):
    if tol is not None:
        return tol
    return 1e-6 * spec.m_a if spec.m_a > 0 else 1e-12


def s_curve(spec: ConverterSpec, d_grid: Sequence[float], tol_snb: Optional[float] = None,
            N: int = N_SS) -> list[HBPoint]:
    """S-plot samples along the periodic branch parameterised by ``d``.

    ``s_value < m_a`` marks the stable side.  Grid points on a branch
    asymptote come back as holes (``v_s_implied`` is None).
    """
    tol = _tol_snb(spec, tol_snb)
    d_grid = np.asarray(d_grid, dtype=float)
    D = _duty(spec, d_grid)
    h = _h(spec, N)
    if h.is_zero:
        return [HBPoint(float(d), float(x), None, 0.0, None, "stable") for d, x in zip(d_grid, D)]
    E, S = _sums_at(h, D)
    v, zero = _vs_from(spec, D, E, h)
    s = -(2 * v / spec.T) * S - v * h.G0 / spec.T
    res = spec.scheme.offset_gain * spec.v_r - v * E - spec.V_m * D
    out = []
    for i in range(D.size):
        if zero[i]:
            out.append(HBPoint(float(d_grid[i]), float(D[i]), None, None, None, None))
            continue
        if abs(s[i] - spec.m_a) < tol:
            hint = "boundary"
        else:
            hint = "stable" if s[i] < spec.m_a else "unstable"
        out.append(HBPoint(float(d_grid[i]), float(D[i]), float(v[i]), float(s[i]),
                           float(res[i]), hint))
    return out


@dataclass(frozen=True)
class LPoint:
    D: float
    v_s_implied: Optional[float]
    l_value: Optional[float]
    criterion: Optional[float]   # T(0) + 1
    stable_hint: Optional[str]


def l_curve(spec: ConverterSpec, d_grid: Sequence[float], N: int = N_SS) -> list[LPoint]:
    """L-plot: ``F[T]`` along the branch against ``T(0) + 1`` (needs ``V_m > 0``)."""
    if spec.V_m == 0:
        raise CriticalError("L-plot needs V_m > 0; use the S-plot for V_m = 0")
    D = _duty(spec, d_grid)
    h = _h(spec, N)
    E, S = _sums_at(h, D)
    v, zero = _vs_from(spec, D, E, h)
    out = []
    for i in range(D.size):
        if zero[i]:
            out.append(LPoint(float(D[i]), None, None, None, None))
            continue
        gain = v[i] / spec.V_m
        lval = gain * (-2.0 * S[i])
        crit = gain * h.G0 + 1.0
        out.append(LPoint(float(D[i]), float(v[i]), float(lval), float(crit),
                          "stable" if lval < crit else "unstable"))
    return out


def _fold_fn(spec, h):
    off = spec.scheme.offset_gain * spec.v_r

    def r(D):
        E, S = _sums_at(h, D)
        v = (off - spec.V_m * D) / E[0]
        return float(-(2 * v / spec.T) * S[0] - v * h.G0 / spec.T - spec.m_a), float(v)

    return r


def _grid_roots(spec, h, M):
    D, E, S = _sums_on_grid(h, M)
    v, zero = _vs_from(spec, D, E, h)
    r = -(2 * v / spec.T) * S - v * h.G0 / spec.T - spec.m_a
    ok = ~zero & np.isfinite(v) & (v > 0)
    brackets = []
    for k in range(D.size - 1):
        if not (ok[k] and ok[k + 1]) or np.sign(E[k]) != np.sign(E[k + 1]):
            continue
        if r[k] == 0.0 or r[k] * r[k + 1] < 0:
            brackets.append((D[k], D[k + 1]))
    return brackets


def find_snb(spec: ConverterSpec, grid: int = GRID, refine: bool = True,
             N: int = N_SS) -> list[SNBSolution]:
    """All fold points of the periodic branch inside ``0 < d < T``.

    The branch is sampled on ``grid`` duty ratios; the grid doubles until
    the number of sign changes of ``S - m_a`` is unchanged twice in a row.
    Each bracket is polished with Brent's method.  An empty list means no
    fold exists in range.
    """
    h = _h(spec, N)
    if h.is_zero:
        return []
    M = grid
    brackets = _grid_roots(spec, h, M)
    if refine:
        same = 0
        while same < 2 and M < MAX_GRID:
            M *= 2
            nxt = _grid_roots(spec, h, M)
            same = same + 1 if len(nxt) == len(brackets) else 0
            brackets = nxt
    r = _fold_fn(spec, h)
    off = spec.scheme.offset_gain * spec.v_r
    out = []
    for lo, hi in brackets:
        if r(lo)[0] == 0.0:
            Ds = lo
        else:
            Ds = brentq(lambda x: r(x)[0], lo, hi, xtol=1e-14, rtol=4 * np.finfo(float).eps)
        res_slope, vs = r(Ds)
        E, _ = _sums_at(h, Ds)
        res_balance = off - vs * E[0] - spec.V_m * Ds
        out.append(SNBSolution(Ds * spec.T, Ds, vs, "exact_series", spec.m_a,
                               float(res_balance), float(res_slope)))
    return out


def min_stabilizing_ramp(spec: ConverterSpec, grid: int = GRID, N: int = N_SS) -> float:
    """Largest S-plot value over the branch with positive source voltage.

    A ramp slope above this keeps the S-plot below ``m_a`` everywhere.
    """
    h = _h(spec, N)
    if h.is_zero:
        return 0.0
    D, E, S = _sums_on_grid(h, grid)
    v, zero = _vs_from(spec, D, E, h)
    s = -(2 * v / spec.T) * S - v * h.G0 / spec.T
    ok = ~zero & np.isfinite(v) & (v > 0)
    if not np.any(ok):
        raise CriticalError("no branch point with positive source voltage")
    s_ok = np.where(ok, s, -np.inf)
    k = int(np.argmax(s_ok))
    lo = D[k - 1] if k > 0 and ok[k - 1] else max(D[k] - 0.5 / grid, 1e-9)
    hi = D[k + 1] if k + 1 < D.size and ok[k + 1] else min(D[k] + 0.5 / grid, 1 - 1e-9)
    r = _fold_fn(spec, h)
    res = minimize_scalar(lambda x: -(r(x)[0] + spec.m_a), bounds=(lo, hi), method="bounded",
                          options={"xatol": 1e-12})
    return float(max(s_ok[k], -res.fun))


@dataclass(frozen=True)
class StateFeedbackClosedForm:
    spec: ConverterSpec
    k_i: float
    k_v: float

    def s_plot(self, D, v_s: Optional[float] = None):
        """Approximate S-plot from the two-integrator high-frequency loop gain."""
        sp = self.spec
        v_s = sp.v_s if v_s is None else v_s
        D = np.asarray(D, dtype=float)
        curr = v_s * self.k_i / sp.L * (D - (sp.K + 1) / 2)
        volt = v_s * self.k_v / sp.T * (-1 + sp.T**2 * (1 - 6 * D + 6 * D**2) / (12 * sp.L * sp.C))
        out = curr + volt
        return float(out) if np.ndim(out) == 0 else out

    def s_plot_no_ripple(self, D, v_s: Optional[float] = None):
        """:meth:`s_plot` without the capacitor-ripple term (valid for ``T^2 << 12 L C``)."""
        sp = self.spec
        v_s = sp.v_s if v_s is None else v_s
        return v_s * self.k_i / sp.L * (np.asarray(D) - (sp.K + 1) / 2) - v_s * self.k_v / sp.T

    @property
    def critical_duty(self) -> float:
        """Critical duty ratio with the capacitor-ripple term dropped."""
        if self.k_i == 0:
            raise CriticalError("closed-form critical duty needs k_i != 0")
        sp = self.spec
        return (sp.K + 1) / 2 + sp.L * sp.m_a / (sp.v_s * self.k_i) + sp.L * self.k_v / (sp.T * self.k_i)


def closed_form_state_feedback(spec: ConverterSpec, k_i: Optional[float] = None,
                               k_v: Optional[float] = None) -> StateFeedbackClosedForm:
    """Closed-form S-plot and critical duty for ``y = v_r - k_i i_L - k_v v_o``.

    Gains default to those of the spec's scheme.  Warns when ``T^2/(12LC)``
    is too large for the simplified critical duty to be trusted.
    """
    sch = spec.scheme
    if k_i is None or k_v is None:
        if not isinstance(sch, (StateFeedback, CMC)):
            raise CriticalError("state-feedback closed form needs k_i and k_v")
        k_i = sch.k_i if k_i is None else k_i
        k_v = sch.k_v if k_v is None else k_v
    ratio = spec.T**2 / (12 * spec.L * spec.C)
    if ratio > 0.05:
        warnings.warn(f"T^2/(12LC) = {ratio:.3g} > 0.05; critical_duty drops a non-negligible term",
                      stacklevel=2)
    return StateFeedbackClosedForm(spec, float(k_i), float(k_v))


def closed_form_cmc(spec: ConverterSpec) -> float:
    """Critical duty ``(K + 1)/2 + L m_a / v_s`` of current-mode control.

    Values at or above 1 mean no fold inside the valid duty range.
    """
    return (spec.K + 1) / 2 + spec.L * spec.m_a / spec.v_s


@dataclass(frozen=True)
class BoundaryPoint:
    x: float
    y: Optional[float]          # None marks a gap (no crossing in range)
    stable_side: Optional[str]  # "below" | "above": side of y with a stable periodic orbit


def _fold_margin(spec: ConverterSpec, grid: int) -> Optional[float]:
    sols = find_snb(spec, grid=grid, refine=False)
    if not sols:
        return None
    return sols[0].v_s_star - spec.v_s


def trace_boundary(spec: ConverterSpec, param_x: tuple, param_y: tuple, resolution: int = 20,
                   y_samples: int = 16, grid: int = GRID) -> list[BoundaryPoint]:
    """Fold boundary in a two-parameter plane.

    ``param_x`` / ``param_y`` are ``(name, lo, hi)`` with names of
    :class:`ConverterSpec` fields.  For every x the margin
    ``v_s_fold - v_s`` (first fold on the branch) is bracketed over y and
    bisected to zero; a positive margin means the operating source voltage
    sits below the fold, where the stable lower branch exists.
    """
    xname, x0, x1 = param_x
    yname, y0, y1 = param_y
    for name in (xname, yname):
        if name not in ConverterSpec.__dataclass_fields__ or name == "scheme":
            raise CriticalError(f"unknown converter parameter {name!r}")
    if min(x0, x1, y0, y1) <= 0:
        raise CriticalError("parameter ranges must be positive")

    def margin(x, y):
        return _fold_margin(replace(spec, **{xname: x, yname: y}), grid)

    out = []
    for x in np.linspace(x0, x1, resolution):
        ys = np.linspace(y0, y1, y_samples)
        ms = [margin(x, y) for y in ys]
        found = None
        for k in range(y_samples - 1):
            a, b = ms[k], ms[k + 1]
            if a is None or b is None or a * b > 0:
                continue
            if a == 0.0:
                found = (ys[k], a)
                break

            def f(y):
                m = margin(x, y)
                if m is None:
                    raise CriticalError("fold vanished inside a bracket")
                return m

            yc = brentq(f, ys[k], ys[k + 1], xtol=1e-10 * max(abs(ys[k]), 1.0))
            found = (yc, a)
            break
        if found is None:
            out.append(BoundaryPoint(float(x), None, None))
            continue
        yc, a = found
        out.append(BoundaryPoint(float(x), float(yc), "below" if a > 0 else "above"))
    if all(p.y is None for p in out):
        return []
    return out
