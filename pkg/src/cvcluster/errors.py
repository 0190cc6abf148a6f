"""Exception hierarchy shared by every module.

Each error carries a short machine-readable ``code`` used by the CLI error
report.
"""


class CvClusterError(Exception):
    code = "error"


class InvalidArgument(CvClusterError, ValueError):
    code = "invalid-argument"


class DegenerateMeasurement(CvClusterError):
    code = "degenerate-measurement"


class InternalInvariantError(CvClusterError):
    code = "internal-invariant"


class WiringAmbiguity(CvClusterError):
    code = "wiring-ambiguity"

    def __init__(self, message, table=None):
        super().__init__(message)
        self.table = table or []


class DegenerateGate(CvClusterError):
    code = "degenerate-gate"


class PlacementConflict(CvClusterError):
    code = "placement-conflict"


class BoundaryError(CvClusterError):
    code = "boundary"


class NeedsCalibration(CvClusterError):
    code = "needs-calibration"


class CompensationIncomplete(CvClusterError):
    code = "compensation-incomplete"


class CalibrationSingular(CvClusterError):
    code = "calibration-singular"


class DivisionDegenerate(CvClusterError):
    code = "division-degenerate"


class IntegrationFailure(CvClusterError):
    code = "integration-failure"


class ConfigError(CvClusterError):
    code = "config-schema"
