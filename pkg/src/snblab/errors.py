"""Exception hierarchy.

Every error carries a ``category`` so the command-line front end can report
which part of the toolkit failed without parsing messages.
"""


class SNBError(Exception):
    category = "snblab"


class TransferFunctionError(SNBError, ValueError):
    category = "tf_core"


class ImproperTransferFunction(TransferFunctionError):
    pass


class PoleError(TransferFunctionError, ZeroDivisionError):
    """Evaluation point sits on (or numerically at) a pole."""


class RepeatedPoleError(TransferFunctionError):
    """A non-origin pole has multiplicity greater than one."""


class OriginMultiplicityError(TransferFunctionError):
    """More than two poles at the origin."""


class IndeterminateGain(TransferFunctionError):
    pass


class ConverterSpecError(SNBError, ValueError):
    category = "config"


class HarmonicBalanceError(SNBError, ValueError):
    category = "harmonic_balance"


class DutyDomainError(HarmonicBalanceError):
    pass


class CriticalError(SNBError, ValueError):
    category = "critical"


class DenominatorZero(CriticalError, ZeroDivisionError):
    """The source-voltage expression hits a branch asymptote."""

    def __init__(self, message, denominator=0.0):
        super().__init__(message)
        self.denominator = denominator


class SimulationError(SNBError, RuntimeError):
    category = "switching_sim"


class DCMViolation(SimulationError):
    """Inductor current went negative; discontinuous conduction is not modelled."""


class NoConvergence(SimulationError):
    pass


class ConfigError(SNBError, ValueError):
    category = "config"
