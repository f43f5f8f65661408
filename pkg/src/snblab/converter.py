"""Buck-converter parameters, control schemes and loop-gain assembly."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Literal, Optional, Union

from .errors import ConverterSpecError, ImproperTransferFunction
from .tf_core import RationalTF, dc_gain

__all__ = [
    "VMC",
    "CMC",
    "StateFeedback",
    "Custom",
    "ControlScheme",
    "ConverterSpec",
    "LoopGain",
    "make_power_stage",
    "build_loop_gain",
]


@dataclass(frozen=True)
class VMC:
    """Voltage-mode control, ``y = G_c(0) v_r - G_c * v_o``."""

    gc: RationalTF

    def __post_init__(self):
        if self.gc.num_degree > self.gc.den_degree:
            raise ImproperTransferFunction("compensator G_c must be proper")

    @property
    def offset_gain(self) -> float:
        g0 = dc_gain(self.gc)
        if not math.isfinite(g0):
            raise ConverterSpecError(
                "integrating compensators (infinite G_c(0)) are not supported"
            )
        return g0


@dataclass(frozen=True)
class StateFeedback:
    """Multi-loop feedback ``y = v_r - k_i i_L - k_v v_o``."""

    k_i: float
    k_v: float

    offset_gain = 1.0


@dataclass(frozen=True)
class CMC:
    """Peak current-mode control, ``y = i_c - i_L`` (``v_r`` plays ``i_c``)."""

    offset_gain = 1.0

    @property
    def k_i(self) -> float:
        return 1.0

    @property
    def k_v(self) -> float:
        return 0.0


@dataclass(frozen=True)
class Custom:
    """Arbitrary loop: ``G = F`` and ``y = dc_offset_gain * v_r - F * v_d``."""

    F: RationalTF
    dc_offset_gain: float = 1.0

    @property
    def offset_gain(self) -> float:
        return self.dc_offset_gain


ControlScheme = Union[VMC, CMC, StateFeedback, Custom]


@dataclass(frozen=True)
class ConverterSpec:
    """Physical parameters of a PWM buck converter (SI units).

    Derived quantities are properties so they can never go stale after
    :func:`dataclasses.replace`.
    """

    v_s: float
    R: float
    L: float
    C: float
    T: float
    V_m: float
    v_r: float
    scheme: ControlScheme = field(default_factory=CMC)
    R_c: float = 0.0

    def __post_init__(self):
        for name in ("R", "L", "C", "T"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ConverterSpecError(f"{name} must be positive, got {v!r}")
        if not (math.isfinite(self.R_c) and self.R_c >= 0):
            raise ConverterSpecError(f"R_c must be non-negative, got {self.R_c!r}")
        if not (math.isfinite(self.V_m) and self.V_m >= 0):
            raise ConverterSpecError(f"V_m must be non-negative, got {self.V_m!r}")
        for name in ("v_s", "v_r"):
            if not math.isfinite(getattr(self, name)):
                raise ConverterSpecError(f"{name} must be finite")
        if not isinstance(self.scheme, (VMC, CMC, StateFeedback, Custom)):
            raise ConverterSpecError(f"unknown control scheme {self.scheme!r}")

    @property
    def omega_s(self) -> float:
        return 2.0 * math.pi / self.T

    @property
    def f_s(self) -> float:
        return 1.0 / self.T

    @property
    def m_a(self) -> float:
        """Ramp slope ``V_m / T``."""
        return self.V_m / self.T

    @property
    def K(self) -> float:
        """Load parameter ``2L / (R T)``."""
        return 2.0 * self.L / (self.R * self.T)

    @property
    def rho(self) -> float:
        return self.R / (self.R + self.R_c)

    def ramp(self, d):
        """``h(d) = V_m d / T`` on one period."""
        return self.V_m * d / self.T

    def with_(self, **changes) -> "ConverterSpec":
        return replace(self, **changes)


def make_power_stage(spec: ConverterSpec, output: Literal["vo", "iL"] = "vo") -> RationalTF:
    """Power-stage transfer function from the diode voltage ``v_d``.

    ``output="vo"`` gives the output-voltage response, ``"iL"`` the
    inductor-current response; both share the denominator
    ``L C s^2 / rho + (L/R + R_c C) s + 1``.
    """
    L, C, R, Rc, rho = spec.L, spec.C, spec.R, spec.R_c, spec.rho
    den = (1.0, L / R + Rc * C, L * C / rho)
    if output == "vo":
        return RationalTF((1.0, Rc * C), den)
    if output == "iL":
        return RationalTF((1.0 / R, C / rho), den)
    raise ValueError(f"output must be 'vo' or 'iL', got {output!r}")


@dataclass(frozen=True)
class LoopGain:
    G: RationalTF
    T: Optional[RationalTF]
    offset_gain: float

    @property
    def infinite_gain(self) -> bool:
        """True when ``V_m = 0``: only the slope form of the criterion applies."""
        return self.T is None


def scheme_G(spec: ConverterSpec) -> RationalTF:
    sch = spec.scheme
    if isinstance(sch, VMC):
        return make_power_stage(spec, "vo") * sch.gc
    if isinstance(sch, (CMC, StateFeedback)):
        return sch.k_i * make_power_stage(spec, "iL") + sch.k_v * make_power_stage(spec, "vo")
    return sch.F


def build_loop_gain(spec: ConverterSpec) -> LoopGain:
    """Return ``G`` and the loop gain ``T(s) = v_s G(s) / V_m``.

    With ``V_m = 0`` the loop gain is infinite and ``LoopGain.T`` is None.
    """
    G = scheme_G(spec)
    T = None if spec.V_m == 0 else (spec.v_s / spec.V_m) * G
    return LoopGain(G, T, spec.scheme.offset_gain)
