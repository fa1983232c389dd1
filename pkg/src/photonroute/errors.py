"""Exception hierarchy shared by the library and the CLI exit-code mapping."""


class PhotonRouteError(Exception):
    """Base class for all package errors."""


class DomainError(PhotonRouteError, ValueError):
    """A parameter lies outside its physical domain (e.g. r outside (0, 1))."""


class ConfigError(PhotonRouteError, ValueError):
    """Configuration failed schema or range validation."""


class FitError(PhotonRouteError):
    """Calibration could not produce a model."""


class InfeasibleFitError(FitError):
    """No parameter values reproduce the requested observables."""


class UnderdeterminedFitError(FitError):
    """Too few informative anchors to pin the free parameters."""


class NonUnitaryError(DomainError):
    """Matrix deviates from unitarity by more than the allowed tolerance."""

    def __init__(self, deviation: float, tol: float):
        self.deviation = deviation
        self.tol = tol
        super().__init__(f"matrix is not unitary: max|U^H U - I| = {deviation:.3e} > {tol:.1e}")


class ParseError(PhotonRouteError):
    """A data file could not be parsed; carries the 1-based line number."""

    def __init__(self, path, lineno: int, message: str):
        self.path = path
        self.lineno = lineno
        super().__init__(f"{path}:{lineno}: {message}")
