"""Exception hierarchy shared across the package."""

import numpy as np


class KSMarchError(Exception):
    """Base class for all package errors."""


class DeskScaleError(KSMarchError, ValueError):
    """Requested Fock space is larger than the configured dimension cap."""


class ConstructionFault(KSMarchError):
    """An operator failed a structural check (Hermiticity, path agreement)."""


class PropagationFault(KSMarchError):
    """Non-finite amplitudes or potentials encountered while propagating."""


class StencilFault(KSMarchError):
    """A density trace lacks the samples needed by a finite-difference stencil."""


class VRepresentabilityBreakdown(KSMarchError):
    """K has a numerically nontrivial kernel beyond the constant potential."""

    def __init__(self, message, sigma_min=None, sigma_max=None, step=None):
        super().__init__(message)
        self.sigma_min = sigma_min
        self.sigma_max = sigma_max
        self.step = step


class InconsistentSource(KSMarchError):
    """The force-balance source has a component along the constant vector."""

    def __init__(self, message, kernel_component=None):
        super().__init__(message)
        self.kernel_component = kernel_component


class InconsistentInitialState(KSMarchError):
    """The initial Kohn-Sham state does not reproduce n(t0) or its derivative."""

    def __init__(self, message, density_residual=None, current_residual=None):
        super().__init__(message)
        self.density_residual = None if density_residual is None else np.asarray(density_residual)
        self.current_residual = None if current_residual is None else np.asarray(current_residual)


class LipschitzBudgetExceeded(KSMarchError):
    """The marching loop ran out of Lipschitz restarts."""

    def __init__(self, message, step=None, L=None):
        super().__init__(message)
        self.step = step
        self.L = L


class BoundOverflow(KSMarchError, OverflowError):
    """An analytic bound is too large to represent as a float."""

    def __init__(self, message, log_value=None):
        super().__init__(message)
        self.log_value = log_value


class BoundViolation(KSMarchError):
    """An observed error exceeded its predicted bound."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class ConfigError(KSMarchError, ValueError):
    """Invalid experiment configuration; ``field`` names the offending key."""

    def __init__(self, message, field=None):
        if field is not None:
            message = f"{field}: {message}"
        super().__init__(message)
        self.field = field
