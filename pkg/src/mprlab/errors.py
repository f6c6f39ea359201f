"""Exception hierarchy.

Structural failures (a hypothesis of the method does not hold) and
synthesis/solver failures are kept apart because the command line maps them
to different exit codes.
"""


class MprlabError(Exception):
    """Base class for all package errors."""


class StructureError(MprlabError):
    """A structural hypothesis fails (relative degree, minimum phase, ...)."""


class UndefinedRelativeDegreeError(StructureError):
    pass


class InconsistentRelativeDegreeError(StructureError):
    pass


class SynthesisError(MprlabError):
    """Off-line synthesis failed (singular graded system, Riccati failure)."""


class ResonanceError(SynthesisError):
    """A graded linear system is singular: exosystem/closed-loop resonance."""


class NumericError(SynthesisError):
    """A numerical routine failed to converge."""


class SolverError(MprlabError):
    """On-line optimization failure."""


class DivergedRolloutError(SolverError):
    """The shooting rollout produced a non-finite objective."""


class MetricError(MprlabError):
    """Tracking metrics requested over a diverged or empty window."""
