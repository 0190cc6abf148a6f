"""Golden transfer tables derived by exact source-basis cancellation.

Tables are stored as versioned JSON in ``cvcluster/data``. Outcome labels
are written relative to the gate input index (``m+[+0]``, ``mA[-1]``), so
entries apply to any placement of the gate. The ``CVCLUSTER_GOLDEN_DIR``
environment variable points the loader at another directory.
"""

from __future__ import annotations

import json
import re
from pathlib import Path

import numpy as np

from . import __version__
from .compiler import GOLDEN_CZ, GateSpec, clear_golden_cache, compose_circuit, cz_key, data_dir, encoder_circuit
from .errors import InvalidArgument

GOLDEN_VERSION = 1
GOLDEN_ENCODER = "encoder_transfer.json"
CZ_COUPLINGS = (0.0, 0.5, -0.5, 1.0, -1.0)


def relative_label(label: str, k0: int) -> str:
    m = re.match(r"^(.*)\[(-?\d+)\]$", label)
    if not m:
        raise InvalidArgument(f"unrecognized outcome label {label!r}")
    return f"{m.group(1)}[{int(m.group(2)) - k0:+d}]"


def absolute_label(label: str, k0: int) -> str:
    m = re.match(r"^(.*)\[([+-]\d+)\]$", label)
    if not m:
        raise InvalidArgument(f"unrecognized relative label {label!r}")
    return f"{m.group(1)}[{int(m.group(2)) + k0}]"


def sparse_rows(matrix: np.ndarray, labels, k0: int, tol: float = 1e-12) -> dict:
    """Nonzero columns of a by-product matrix keyed by relative label."""
    out = {}
    for j, lab in enumerate(labels):
        col = matrix[:, j]
        if np.any(np.abs(col) > tol):
            out[relative_label(lab, k0)] = [float(v) for v in col]
    return dict(sorted(out.items()))


def derive_cz_table(N: int = 12) -> dict:
    from .executor import derive_gate_transfer, gate_window

    entries = {}
    for g in CZ_COUPLINGS:
        for parity, wire in ((1, 0), (-1, 1)):
            spec = GateSpec("cz", g, wire=wire)
            tr = derive_gate_transfer(spec, N)
            k0 = spec.input_k(N)
            entries[cz_key(g, parity)] = {
                "g": g,
                "parity": "even" if parity == 1 else "odd",
                "G": tr.G.tolist(),
                "noise_covariance": tr.noise_covariance.tolist(),
                "noise_factors": tr.noise_factors.tolist(),
                "D_local": sparse_rows(tr.D_local, tr.labels, k0),
                "cancellation_residual": tr.residual,
                "window_K": gate_window(spec, N).K,
            }
    return {
        "version": GOLDEN_VERSION,
        "tool_version": __version__,
        "method": "exact source-basis cancellation",
        "N": N,
        "quadrature_order": "x1 x2 p1 p2",
        "noise_units": "squeezed source variance",
        "entries": entries,
    }


def derive_encoder_table(N: int = 12) -> dict:
    from .cluster import ClusterParams, build_coiled_cluster
    from .compiler import compile_schedule
    from .executor import derive_instance_transfer, measurement_model

    circuit = encoder_circuit()
    params = ClusterParams(N=N, K=9 * N, r=1.0)
    cluster = build_coiled_cluster(params)
    schedule = compile_schedule(circuit, params, probes_per_parity=0)
    model = measurement_model(cluster.indexer, schedule)
    inst = schedule.instances[0]
    tr = derive_instance_transfer(cluster, model, inst)
    composed = compose_circuit(circuit, inst.wires, N, derive=True)
    return {
        "version": GOLDEN_VERSION,
        "tool_version": __version__,
        "method": "exact source-basis cancellation",
        "N": N,
        "K": params.K,
        "wires": list(inst.wires),
        "inputs": list(inst.inputs),
        "outputs": list(inst.outputs),
        "gates": [g.describe() for g in circuit],
        "G": tr.G.tolist(),
        "noise_covariance": tr.noise_covariance.tolist(),
        "noise_factors": tr.noise_factors.tolist(),
        "composed_noise_factors": composed.noise_factors.tolist(),
        "D_local": sparse_rows(tr.D_local, tr.labels, 0),
        "cancellation_residual": tr.residual,
    }


def write_goldens(directory: Path | None = None) -> list[Path]:
    """Derive and write every golden table; returns the written paths."""
    directory = Path(directory) if directory else data_dir()
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    for name, table in ((GOLDEN_CZ, derive_cz_table()), (GOLDEN_ENCODER, derive_encoder_table())):
        path = directory / name
        path.write_text(json.dumps(table, indent=1, sort_keys=True) + "\n")
        written.append(path)
    clear_golden_cache()
    return written


def cz_displacement(g: float, parity: int, k0: int) -> dict:
    """Golden D_local of a CZ gate with input index ``k0``, absolute labels."""
    from .compiler import load_golden

    entry = load_golden(GOLDEN_CZ).get("entries", {}).get(cz_key(g, parity))
    if entry is None:
        raise InvalidArgument(f"no golden displacement for {cz_key(g, parity)}")
    return {absolute_label(lab, k0): np.array(v) for lab, v in entry["D_local"].items()}
