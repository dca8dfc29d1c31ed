"""Exception hierarchy shared by all modules."""


class SurfInfSupError(Exception):
    """Base class; ``record()`` gives a machine-readable form for the CLI."""

    kind = "error"

    def record(self) -> dict:
        return {"error": self.kind, "message": str(self)}


class ParameterError(SurfInfSupError, ValueError):
    kind = "parameter"


class CapacityError(SurfInfSupError):
    kind = "capacity"


class GeometryError(SurfInfSupError):
    kind = "geometry"

    def __init__(self, message, face=None):
        super().__init__(message)
        self.face = face

    def record(self) -> dict:
        rec = super().record()
        if self.face is not None:
            rec["face"] = int(self.face)
        return rec


class AssemblyError(SurfInfSupError):
    kind = "assembly"


class ConfigurationError(SurfInfSupError, ValueError):
    kind = "configuration"


class SolverError(SurfInfSupError):
    kind = "solver"

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}

    def record(self) -> dict:
        rec = super().record()
        rec["diagnostics"] = self.diagnostics
        return rec


class RankDeficiencyError(SolverError):
    """Saddle system singular; ``null_mode`` holds the detected multiplier mode."""

    kind = "rank-deficiency"

    def __init__(self, message, null_mode=None, diagnostics=None):
        super().__init__(message, diagnostics)
        self.null_mode = null_mode

    def record(self) -> dict:
        rec = super().record()
        if self.null_mode is not None:
            rec["null_mode"] = {k: v for k, v in self.null_mode.items() if k != "vector"}
        return rec


class BoundViolation(SurfInfSupError):
    kind = "bound-violation"
