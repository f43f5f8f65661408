"""Saddle-node bifurcation analysis of PWM-controlled buck converters.

Harmonic-balance critical conditions, an exact piecewise-linear switching
simulator for cross-checking them, and the ``snb-lab`` command line.
"""

from .converter import (
    CMC,
    VMC,
    ConverterSpec,
    Custom,
    LoopGain,
    StateFeedback,
    build_loop_gain,
    make_power_stage,
    scheme_G,
)
from .errors import SNBError
from .tf_core import RationalTF, dc_gain, partial_fractions

__version__ = "0.1.0"

__all__ = [
    "CMC",
    "VMC",
    "ConverterSpec",
    "Custom",
    "LoopGain",
    "StateFeedback",
    "build_loop_gain",
    "make_power_stage",
    "scheme_G",
    "SNBError",
    "RationalTF",
    "dc_gain",
    "partial_fractions",
]
