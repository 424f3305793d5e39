"""Exception hierarchy shared by all gspatchwork modules."""


class GspwError(Exception):
    """Base class for all errors raised by this package."""


class FormatError(GspwError):
    """Malformed file content. Carries the byte offset where parsing failed."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class UnsupportedVersionError(GspwError):
    """File declares a format version this build cannot read."""


class ValidationError(GspwError):
    """Scene or config data violates a documented invariant."""

    def __init__(self, message: str, violations: list[str] | None = None):
        super().__init__(message)
        self.violations = violations or []


class ContractViolationError(GspwError):
    """An API precondition was broken (e.g. stale compositing weights)."""


class OutOfCorridorError(GspwError):
    """Position is too far from the road centerline to parameterize."""


class AffinityUndefinedError(GspwError):
    """A patch has no visible intact anchors, so its affinity cannot be scored."""


class NoCandidateError(GspwError):
    """The search produced zero scoreable candidate placements."""


class StaleIndexError(GspwError):
    """A voxel index no longer matches the scene it was built from."""


class ConfigError(GspwError):
    """Invalid pipeline configuration."""


class PipelineStageError(GspwError):
    """A pipeline stage failed. Carries the stage name and a machine-readable code."""

    def __init__(self, stage: str, code: int, message: str):
        super().__init__(f"stage '{stage}' failed: {message}")
        self.stage = stage
        self.code = code
