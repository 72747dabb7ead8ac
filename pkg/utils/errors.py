"""Exception types shared across the project.

Every error carries the fields a caller needs to report it (shapes, file:line,
offending pair, ...) as attributes, not only in the message.
"""

from typing import Any, Dict, Optional, Sequence, Tuple


class PointDiffusionError(Exception):
    """Base class for all project errors."""


# ─────────────────────────── autodiff ─────────────────────────────────────

class ShapeMismatchError(PointDiffusionError):
    def __init__(self, op: str, *shapes: Tuple[int, ...]):
        self.op = op
        self.shapes = tuple(tuple(s) for s in shapes)
        joined = " vs ".join(str(s) for s in self.shapes)
        super().__init__(f"{op}: incompatible shapes {joined}")


class AxisError(PointDiffusionError):
    def __init__(self, op: str, axis: int, rank: int):
        self.op = op
        self.axis = axis
        self.rank = rank
        super().__init__(f"{op}: axis {axis} out of range for rank {rank}")


class GraphError(PointDiffusionError):
    """Misuse of the computation graph (double backward, stale gradients)."""


class NonFiniteError(PointDiffusionError):
    def __init__(self, where: str, details: Optional[Dict[str, Any]] = None):
        self.where = where
        self.details = dict(details or {})
        extra = ", ".join(f"{k}={v}" for k, v in self.details.items())
        super().__init__(f"non-finite values in {where}" + (f" ({extra})" if extra else ""))


class GradientCheckError(PointDiffusionError):
    pass


# ─────────────────────────── model / math ─────────────────────────────────

class ScheduleError(PointDiffusionError):
    pass


class ModeMismatchError(PointDiffusionError):
    pass


class FlowMissingError(PointDiffusionError):
    pass


class CheckpointError(PointDiffusionError):
    pass


class DivergenceError(PointDiffusionError):
    """Training halted: loss non-finite or above the divergence threshold."""

    def __init__(self, report: Dict[str, Any]):
        self.report = dict(report)
        lines = ", ".join(f"{k}={v}" for k, v in self.report.items())
        super().__init__(f"training diverged: {lines}")


# ─────────────────────────── data / io / config ───────────────────────────

class ShapeParamsError(PointDiffusionError):
    pass


class NormalizationError(PointDiffusionError):
    pass


class CloudFormatError(PointDiffusionError):
    def __init__(self, path: str, line: Optional[int], reason: str):
        self.path = str(path)
        self.line = line
        self.reason = reason
        where = f"{self.path}:{line}" if line is not None else self.path
        super().__init__(f"{where}: {reason}")


class ConfigError(PointDiffusionError):
    def __init__(self, reason: str, path: Optional[str] = None, line: Optional[int] = None):
        self.path = path
        self.line = line
        self.reason = reason
        if path is not None and line is not None:
            prefix = f"{path}:{line}: "
        elif path is not None:
            prefix = f"{path}: "
        else:
            prefix = ""
        super().__init__(prefix + reason)


class MetricError(PointDiffusionError):
    def __init__(self, reason: str, pair: Optional[Sequence[Any]] = None):
        self.reason = reason
        self.pair = tuple(pair) if pair is not None else None
        suffix = f" (pair {self.pair[0]} / {self.pair[1]})" if self.pair else ""
        super().__init__(reason + suffix)
