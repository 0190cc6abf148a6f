"""Gaussian simulation of measurement-based computation on a coiled
temporal-mode cluster state."""

__version__ = "0.1.0"

from .cluster import ClusterParams, CoiledCluster, build_coiled_cluster, nullifier_variances, project_wires  # noqa: E402
from .compiler import GateSpec, compile_schedule, compose_circuit, encoder_circuit, expected_symplectic  # noqa: E402
from .errors import CvClusterError  # noqa: E402
from .executor import run_deterministic, run_sampled  # noqa: E402
from .gaussian import V0, GaussianState, SymplecticMatrix, homodyne, symplectic_eigenvalues, vacuum_state  # noqa: E402
from .opo import OpoParams, find_pump_for_squeezing, gate_noise_vs_pump, mode_variances  # noqa: E402
from .tomography import TransferReport, gate_tomography  # noqa: E402

__all__ = [
    "ClusterParams",
    "CoiledCluster",
    "CvClusterError",
    "GateSpec",
    "GaussianState",
    "OpoParams",
    "SymplecticMatrix",
    "TransferReport",
    "V0",
    "build_coiled_cluster",
    "compile_schedule",
    "compose_circuit",
    "encoder_circuit",
    "expected_symplectic",
    "find_pump_for_squeezing",
    "gate_noise_vs_pump",
    "gate_tomography",
    "homodyne",
    "mode_variances",
    "nullifier_variances",
    "project_wires",
    "run_deterministic",
    "run_sampled",
    "symplectic_eigenvalues",
    "vacuum_state",
]
