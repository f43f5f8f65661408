"""Piecewise-exact time-domain simulation of the PWM buck converter.

Each period starts with the switch on (stage S1, ``v_d = v_s``).  The
switch turns off at the first instant the comparator input ``y`` falls to
the ramp ``h(t) = V_m t / T`` and stays off (stage S2, ``v_d = 0``) until
the period ends.  Within a stage the dynamics are affine, so states are
propagated with matrix exponentials of the exact stage durations; the only
numerical error is the 1e-12 T tolerance on the crossing time.

Periodic orbits are fixed points of the one-period (stroboscopic) map.
Newton's method on that map reaches unstable orbits as well as stable
ones, and the eigenvalues of its Jacobian are the Floquet multipliers.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import expm
from scipy.optimize import brentq, minimize_scalar
from scipy.signal import tf2ss

from . import critical
from .converter import CMC, VMC, ConverterSpec, Custom, StateFeedback
from .errors import DCMViolation, ImproperTransferFunction, NoConvergence, SimulationError

__all__ = [
    "PWLSystem",
    "PeriodicOrbit",
    "Trajectory",
    "SweepPoint",
    "Jump",
    "BranchPoint",
    "Fold",
    "build_pwl",
    "simulate_cycles",
    "strobe_map",
    "cycle_mean_vo",
    "fixed_duty_orbit",
    "find_orbit",
    "sweep_hysteresis",
    "detect_jumps",
    "branch_curve",
    "periodic_source_voltage",
    "locate_fold",
    "sample_waveform",
]

N_CHECK = 64


@dataclass(frozen=True, eq=False)
class PWLSystem:
    """Two affine stages sharing one comparator signal.

    ``y = feedback_offset + feedback_row @ x``.  ``vo_row`` maps the state
    to the output voltage and ``iL_index`` locates the inductor current;
    both are None for loops without a physical power stage.
    """

    A1: np.ndarray
    A2: np.ndarray
    b1: np.ndarray
    b2: np.ndarray
    feedback_row: np.ndarray
    feedback_offset: float
    vo_row: Optional[np.ndarray] = None
    iL_index: Optional[int] = None
    vC_index: Optional[int] = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def state_dim(self) -> int:
        return self.A1.shape[0]

    def y(self, x):
        return self.feedback_offset + np.asarray(x) @ self.feedback_row


def _power_stage_matrices(spec: ConverterSpec):
    L, C, R, Rc, rho = spec.L, spec.C, spec.R, spec.R_c, spec.rho
    A = np.array([[-rho * Rc / L, -rho / L], [rho / C, -rho / (R * C)]])
    B = np.array([1.0 / L, 0.0])
    vo_row = np.array([rho * Rc, rho])
    return A, B, vo_row


def build_pwl(spec: ConverterSpec) -> PWLSystem:
    """State-space form of the switched converter for ``spec.scheme``.

    The power-stage state is ``(i_L, v_C)``.  A voltage-mode compensator
    is appended in controllable canonical form; a custom loop ``F`` is
    realised directly from ``v_d``.
    """
    sch = spec.scheme
    off = sch.offset_gain * spec.v_r
    if isinstance(sch, Custom):
        F = sch.F
        if not F.is_strictly_proper:
            raise ImproperTransferFunction("simulated custom loops must be strictly proper")
        A, B, Cm, _ = tf2ss(F.num_coeffs[::-1], F.den_coeffs[::-1])
        B = B.ravel()
        return PWLSystem(A, A.copy(), spec.v_s * B, np.zeros_like(B), -Cm.ravel(), off)

    A, B, vo_row = _power_stage_matrices(spec)
    if isinstance(sch, (CMC, StateFeedback)):
        row = -sch.k_i * np.array([1.0, 0.0]) - sch.k_v * vo_row
        return PWLSystem(A, A.copy(), spec.v_s * B, np.zeros(2), row, off,
                         vo_row=vo_row, iL_index=0, vC_index=1)

    assert isinstance(sch, VMC)
    Ac, Bc, Cc, Dc = tf2ss(sch.gc.num_coeffs[::-1], sch.gc.den_coeffs[::-1])
    nc = Ac.shape[0]
    Bc = Bc.ravel()
    Cc = Cc.ravel()
    Dc = float(np.ravel(Dc)[0]) if np.size(Dc) else 0.0
    Aa = np.zeros((2 + nc, 2 + nc))
    Aa[:2, :2] = A
    if nc:
        Aa[2:, 2:] = Ac
        Aa[2:, :2] = np.outer(Bc, vo_row)
    Ba = np.concatenate([B, np.zeros(nc)])
    vo_a = np.concatenate([vo_row, np.zeros(nc)])
    row = -np.concatenate([Dc * vo_row, Cc])
    return PWLSystem(Aa, Aa.copy(), spec.v_s * Ba, np.zeros(2 + nc), row, off,
                     vo_row=vo_a, iL_index=0, vC_index=1)


def _flow(A, b, t):
    """``(Phi, gamma)`` with ``x(t) = Phi x(0) + gamma`` for ``x' = A x + b``."""
    n = A.shape[0]
    M = np.zeros((n + 1, n + 1))
    M[:n, :n] = A
    M[:n, n] = b
    E = expm(M * t)
    return E[:n, :n], E[:n, n]


def _flow_integral(A, b, t):
    """Like :func:`_flow` but also returns ``(Psi, eta)`` with ``int_0^t x = Psi x0 + eta``."""
    n = A.shape[0]
    M = np.zeros((2 * n + 1, 2 * n + 1))
    M[:n, :n] = A
    M[:n, n] = b
    M[n + 1:, :n] = np.eye(n)
    E = expm(M * t)
    return E[:n, :n], E[:n, n], E[n + 1:, :n], E[n + 1:, n]


class _Engine:
    """Per-system propagation data (checkpoint flows are reused every cycle)."""

    def __init__(self, sys: PWLSystem, T: float, V_m: float):
        self.sys, self.T, self.V_m = sys, T, V_m
        self.tk = np.linspace(0.0, T, N_CHECK + 1)
        flows = [_flow(sys.A1, sys.b1, t) for t in self.tk]
        self.Phi1 = np.array([f[0] for f in flows])
        self.gam1 = np.array([f[1] for f in flows])
        self.PhiT2, self.gamT2 = _flow(sys.A2, sys.b2, T)

    def g(self, x_t, t):
        return self.sys.feedback_offset + x_t @ self.sys.feedback_row - self.V_m * t / self.T

    def cycle(self, x0, check_dcm=True):
        """One period from ``x0``; returns ``(x_end, d)``."""
        sys, T = self.sys, self.T
        x0 = np.asarray(x0, dtype=float)
        if self.g(x0, 0.0) < 0:
            d = 0.0
            x_end = self.PhiT2 @ x0 + self.gamT2
        else:
            X = np.einsum("kij,j->ki", self.Phi1[1:], x0) + self.gam1[1:]
            gk = self.g(X, self.tk[1:])
            hit = np.flatnonzero(gk <= 0)
            if hit.size == 0:
                d = T
                x_end = X[-1]
            else:
                k = hit[0] + 1
                if gk[k - 1] == 0.0:
                    d = self.tk[k]
                else:
                    def f(t):
                        Phi, gam = _flow(sys.A1, sys.b1, t)
                        return self.g(Phi @ x0 + gam, t)

                    d = brentq(f, self.tk[k - 1], self.tk[k], xtol=1e-12 * T)
                Phi, gam = _flow(sys.A1, sys.b1, d)
                xd = Phi @ x0 + gam
                Phi2, gam2 = _flow(sys.A2, sys.b2, T - d)
                x_end = Phi2 @ xd + gam2
        if check_dcm and sys.iL_index is not None and d < T:
            # i_L falls monotonically in S2 while v_o > 0: its minimum is the cycle end
            if x_end[sys.iL_index] < -1e-12 * (1.0 + abs(x0[sys.iL_index])):
                raise DCMViolation(
                    f"inductor current {x_end[sys.iL_index]:.4g} A < 0; "
                    "discontinuous conduction is out of scope"
                )
        return x_end, d


def _engine(sys: PWLSystem, spec: ConverterSpec) -> _Engine:
    key = (spec.T, spec.V_m)
    eng = sys._cache.get(key)
    if eng is None:
        eng = sys._cache[key] = _Engine(sys, spec.T, spec.V_m)
    return eng


@dataclass(frozen=True)
class Trajectory:
    states: np.ndarray   # (n + 1, state_dim), cycle-start states
    duties: np.ndarray   # (n,), in [0, 1]


def simulate_cycles(sys: PWLSystem, spec: ConverterSpec, x0, n: int,
                    check_dcm: bool = True) -> Trajectory:
    """Simulate ``n`` switching periods starting from ``x0``."""
    if n < 1:
        raise SimulationError("need at least one cycle")
    eng = _engine(sys, spec)
    x = np.asarray(x0, dtype=float)
    states = np.empty((n + 1, x.size))
    duties = np.empty(n)
    states[0] = x
    for i in range(n):
        x, d = eng.cycle(x, check_dcm)
        states[i + 1] = x
        duties[i] = d / spec.T
    return Trajectory(states, duties)


def strobe_map(sys: PWLSystem, spec: ConverterSpec, x) -> np.ndarray:
    """State after exactly one period."""
    return _engine(sys, spec).cycle(x)[0]


def _duty_of(sys, spec, x) -> float:
    return _engine(sys, spec).cycle(x)[1] / spec.T


def cycle_mean_vo(sys: PWLSystem, spec: ConverterSpec, x0) -> float:
    """Exact average of ``v_o`` over the period starting at ``x0``."""
    if sys.vo_row is None:
        raise SimulationError("system has no output-voltage row")
    x0 = np.asarray(x0, dtype=float)
    d = _duty_of(sys, spec, x0) * spec.T
    Phi, gam, Psi, eta = _flow_integral(sys.A1, sys.b1, d)
    xd = Phi @ x0 + gam
    integral = Psi @ x0 + eta
    _, _, Psi2, eta2 = _flow_integral(sys.A2, sys.b2, spec.T - d)
    integral = integral + Psi2 @ xd + eta2
    return float(sys.vo_row @ integral / spec.T)


def fixed_duty_orbit(sys: PWLSystem, spec: ConverterSpec, D: float) -> np.ndarray:
    """Cycle-start state of the periodic solution with the switch instant forced to ``D T``."""
    d = D * spec.T
    Phi1, gam1 = _flow(sys.A1, sys.b1, d)
    Phi2, gam2 = _flow(sys.A2, sys.b2, spec.T - d)
    M = Phi2 @ Phi1
    c = Phi2 @ gam1 + gam2
    return np.linalg.solve(np.eye(M.shape[0]) - M, c)


@dataclass(frozen=True)
class PeriodicOrbit:
    x0: np.ndarray
    duty: float
    multipliers: np.ndarray
    residual: float
    saturated: bool
    iterations: int = 0
    jacobian: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def max_real_multiplier(self) -> float:
        return float(np.max(self.multipliers.real))

    @property
    def stable(self) -> bool:
        return bool(np.all(np.abs(self.multipliers) < 1.0))

    def is_snb(self, tol: float = 0.02) -> bool:
        return abs(self.max_real_multiplier - 1.0) <= tol


def _jacobian(sys, spec, x):
    n = x.size
    J = np.empty((n, n))
    for i in range(n):
        h = max(1e-6 * abs(x[i]), 1e-9)
        e = np.zeros(n)
        e[i] = h
        J[:, i] = (strobe_map(sys, spec, x + e) - strobe_map(sys, spec, x - e)) / (2 * h)
    return J


def find_orbit(sys: PWLSystem, spec: ConverterSpec, x_guess, max_iter: int = 50,
               rtol: float = 1e-10) -> PeriodicOrbit:
    """Newton iteration for a fixed point of the stroboscopic map.

    The Jacobian is a central finite difference; its eigenvalues at the
    converged point are returned as Floquet multipliers.
    """
    x = np.asarray(x_guess, dtype=float).copy()
    if not np.all(np.isfinite(x)):
        raise SimulationError("initial guess must be finite")
    n = x.size
    for it in range(max_iter + 1):
        F = strobe_map(sys, spec, x) - x
        res = float(np.linalg.norm(F))
        if res < rtol * (1.0 + np.linalg.norm(x)):
            break
        if it == max_iter:
            raise NoConvergence(f"Newton did not converge in {max_iter} iterations (|F| = {res:.3g})")
        J = _jacobian(sys, spec, x)
        dx = np.linalg.lstsq(J - np.eye(n), -F, rcond=None)[0]
        x = x + dx
    J = _jacobian(sys, spec, x)
    duty = _duty_of(sys, spec, x)
    return PeriodicOrbit(x, duty, np.linalg.eigvals(J), res, duty in (0.0, 1.0), it, J)


@dataclass(frozen=True)
class SweepPoint:
    v_s: float
    v_o_avg: float
    duty: float
    classification: str   # periodic | saturated | unsettled


@dataclass(frozen=True)
class Jump:
    v_s_from: float
    v_s_to: float
    v_o_from: float
    v_o_to: float

    @property
    def direction(self) -> str:
        return "up" if self.v_o_to > self.v_o_from else "down"


def sweep_hysteresis(spec: ConverterSpec, v_s_values: Sequence[float], direction: str = "up",
                     settle_cycles: int = 400, x0=None) -> list[SweepPoint]:
    """Quasi-static source-voltage sweep.

    Each step starts from the state the previous step settled to, so the
    sweep follows whichever branch it is on until that branch disappears.
    ``x0`` defaults to rest.
    """
    if direction not in ("up", "down"):
        raise ValueError("direction must be 'up' or 'down'")
    vals = np.sort(np.asarray(v_s_values, dtype=float))
    if direction == "down":
        vals = vals[::-1]
    if np.any(vals <= 0):
        raise SimulationError("source voltages must be positive")
    x = None if x0 is None else np.asarray(x0, dtype=float)
    out = []
    for v in vals:
        sp = replace(spec, v_s=float(v))
        sys = build_pwl(sp)
        if x is None:
            x = np.zeros(sys.state_dim)
        traj = simulate_cycles(sys, sp, x, settle_cycles)
        x = traj.states[-1]
        x_next = traj.states[-1]
        duty = float(traj.duties[-1])
        drift = np.linalg.norm(traj.states[-1] - traj.states[-2])
        if duty >= 1.0 or duty <= 0.0:
            cls = "saturated"
        elif drift < 1e-6 * (1.0 + np.linalg.norm(x_next)):
            cls = "periodic"
        else:
            cls = "unsettled"
        out.append(SweepPoint(float(v), cycle_mean_vo(sys, sp, x), duty, cls))
    return out


def detect_jumps(points: Sequence[SweepPoint], rel: float = 0.05) -> list[Jump]:
    """Steps where the average output voltage changes by more than ``rel * v_s``.

    Consecutive steps jumping the same way are merged: escaping past a fold
    can take longer than one step's settling time.
    """
    jumps: list[Jump] = []
    for a, b in zip(points[:-1], points[1:]):
        if abs(b.v_o_avg - a.v_o_avg) <= rel * max(a.v_s, b.v_s):
            continue
        j = Jump(a.v_s, b.v_s, a.v_o_avg, b.v_o_avg)
        if jumps and jumps[-1].v_s_to == a.v_s and jumps[-1].direction == j.direction:
            j = Jump(jumps[-1].v_s_from, b.v_s, jumps[-1].v_o_from, b.v_o_avg)
            jumps[-1] = j
        else:
            jumps.append(j)
    return jumps


@dataclass(frozen=True)
class BranchPoint:
    D: float
    v_s: float
    v_o_avg: float
    max_multiplier: float
    duty_sim: float
    stable: bool
    mismatch: bool
    multipliers: np.ndarray = field(repr=False)


def periodic_source_voltage(spec: ConverterSpec, D: float) -> float:
    """Source voltage whose forced-duty orbit switches exactly at ``D T``.

    Time-domain only: with ``b2 = 0`` and ``b1`` proportional to ``v_s``,
    the forced-duty orbit scales linearly with ``v_s``, so the switching
    condition ``y(D T) = V_m D`` fixes ``v_s`` in closed form.
    """
    if not 0.0 < D < 1.0:
        raise SimulationError("duty ratio must lie strictly inside (0, 1)")
    unit = replace(spec, v_s=1.0)
    sys = build_pwl(unit)
    x0 = fixed_duty_orbit(sys, unit, D)
    Phi, gam = _flow(sys.A1, sys.b1, D * spec.T)
    slope = float(sys.feedback_row @ (Phi @ x0 + gam))
    if slope == 0.0:
        raise SimulationError(f"comparator input does not depend on v_s at D = {D:.6g}")
    return (spec.V_m * D - sys.feedback_offset) / slope


def _branch_point(spec, D, v_s=None):
    if v_s is None:
        v_s = float(critical.vs_of_d(spec, D * spec.T))
    sp = replace(spec, v_s=v_s)
    sys = build_pwl(sp)
    orb = find_orbit(sys, sp, fixed_duty_orbit(sys, sp, D))
    return BranchPoint(
        float(D), v_s, cycle_mean_vo(sys, sp, orb.x0), orb.max_real_multiplier, orb.duty,
        orb.stable, abs(orb.duty - D) > 1e-3, orb.multipliers,
    )


def branch_curve(spec: ConverterSpec, D_grid: Sequence[float], source: str = "harmonic") -> list[BranchPoint]:
    """Periodic branch through the given duty ratios, confirmed by simulation.

    The source voltage at each duty comes from the harmonic-balance branch
    (``source="harmonic"``) or from :func:`periodic_source_voltage`
    (``source="time"``).  Newton on the stroboscopic map, seeded with the
    forced-duty orbit, then checks that the switched system really has
    that orbit and gives its multipliers (``mismatch`` is set when the
    duties differ by more than 1e-3).
    """
    if source not in ("harmonic", "time"):
        raise ValueError("source must be 'harmonic' or 'time'")
    out = []
    for D in D_grid:
        D = float(D)
        v = periodic_source_voltage(spec, D) if source == "time" else None
        out.append(_branch_point(spec, D, v))
    return out


@dataclass(frozen=True)
class Fold:
    D: float
    v_s: float
    v_o_avg: float
    max_multiplier: float
    D_multiplier_crossing: Optional[float]


def locate_fold(spec: ConverterSpec, D_grid: Sequence[float]) -> Optional[Fold]:
    """Fold of the simulated branch: the turning point of ``v_s`` along ``D``.

    Uses the time-domain branch only (no harmonic sums), so the result is
    an independent check of :func:`snblab.critical.find_snb`.  The turning
    point is bracketed on the grid and refined by bounded scalar search;
    the orbit there is recomputed to report its largest multiplier.
    ``D_multiplier_crossing`` is where the largest real multiplier passes 1
    (linear interpolation on the grid), an estimate that does not use the
    turning point at all.
    """
    pts = branch_curve(spec, D_grid, source="time")
    vs = np.array([p.v_s for p in pts])
    dv = np.diff(vs)
    turn = np.flatnonzero(np.sign(dv[:-1]) != np.sign(dv[1:]))
    if turn.size == 0:
        return None
    k = int(turn[0]) + 1
    sgn = 1.0 if dv[k - 1] > 0 else -1.0
    res = minimize_scalar(lambda D: -sgn * periodic_source_voltage(spec, D),
                          bounds=(pts[k - 1].D, pts[k + 1].D), method="bounded",
                          options={"xatol": 1e-10})
    fp = _branch_point(spec, float(res.x), periodic_source_voltage(spec, float(res.x)))
    mu = np.array([p.max_multiplier for p in pts]) - 1.0
    cross = None
    idx = np.flatnonzero(np.sign(mu[:-1]) != np.sign(mu[1:]))
    if idx.size:
        i = int(idx[0])
        cross = float(pts[i].D + (pts[i + 1].D - pts[i].D) * mu[i] / (mu[i] - mu[i + 1]))
    return Fold(fp.D, fp.v_s, fp.v_o_avg, fp.max_multiplier, cross)


def sample_waveform(sys: PWLSystem, spec: ConverterSpec, x0, n: int = 1,
                    points_per_cycle: int = 50):
    """Dense samples ``(t, x, y, h, stage)`` over ``n`` periods."""
    eng = _engine(sys, spec)
    x = np.asarray(x0, dtype=float)
    rows = []
    T = spec.T
    for c in range(n):
        x_end, d = eng.cycle(x)
        for j in range(points_per_cycle):
            tau = j * T / points_per_cycle
            if tau < d:
                Phi, gam = _flow(sys.A1, sys.b1, tau)
                xt, stage = Phi @ x + gam, 1
            else:
                Phi, gam = _flow(sys.A1, sys.b1, d)
                xd = Phi @ x + gam
                Phi2, gam2 = _flow(sys.A2, sys.b2, tau - d)
                xt, stage = Phi2 @ xd + gam2, 2
            rows.append((c * T + tau, xt, float(sys.y(xt)), spec.V_m * tau / T, stage))
        x = x_end
    return rows
