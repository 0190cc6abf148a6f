"""Gate specifications, homodyne basis schedules and expected transfers."""

from __future__ import annotations

import csv
import io
import json
import os
from dataclasses import dataclass, replace
from functools import lru_cache
from pathlib import Path

import numpy as np

from .cluster import ClusterParams, ModeIndexer, control_angle
from .errors import (
    BoundaryError,
    DegenerateGate,
    InternalInvariantError,
    InvalidArgument,
    NeedsCalibration,
    PlacementConflict,
)
from .gaussian import SymplecticMatrix

GATE_KINDS = ("rotation", "shear", "squeeze", "cz", "identity")
ROLES = ("control", "gate", "output", "reference", "probe-input", "probe-reference", "idle")
KEPT_ROLES = ("output", "reference", "probe-input", "probe-reference")
BASIS_ANGLE = {"x": 0.0, "p": np.pi / 2}
QUADRANTS = (("x", "p"), ("x", "x"), ("p", "x"), ("p", "p"))
SINGLE_MODE_NOISE_FACTOR = 4.0


def rotation_matrix(theta: float) -> np.ndarray:
    return np.array([[np.cos(theta), np.sin(theta)], [-np.sin(theta), np.cos(theta)]])


def fourier_power(j: int) -> np.ndarray:
    """F^j with F = R(pi/2)."""
    return rotation_matrix(j * np.pi / 2)


def shear_matrix(sigma: float) -> np.ndarray:
    return np.array([[1.0, 0.0], [sigma, 1.0]])


def squeeze_matrix(r: float) -> np.ndarray:
    return np.diag([np.exp(-r), np.exp(r)])


def cz_matrix(g: float) -> np.ndarray:
    """C_Z(g) on (x1, x2, p1, p2): p1 += g x2, p2 += g x1."""
    m = np.eye(4)
    m[2, 1] = g
    m[3, 0] = g
    return m


def embed_two_by_two(blocks: list[np.ndarray]) -> np.ndarray:
    """Block-diagonal single-mode matrices in xx..pp ordering."""
    n = len(blocks)
    m = np.zeros((2 * n, 2 * n))
    for i, b in enumerate(blocks):
        idx = [i, i + n]
        m[np.ix_(idx, idx)] = b
    return m


@dataclass(frozen=True)
class GateSpec:
    """One gate on wire ``wire`` (and ``wire + 1`` for CZ).

    The input mode is (B, k). Without an explicit ``k`` the gate sits at
    computation step ``step`` of the wire: k = 2N + 2 wire + step N.
    """

    kind: str
    param: float = 0.0
    wire: int = 0
    step: int = 0
    k: int | None = None

    def __post_init__(self):
        if self.kind not in GATE_KINDS:
            raise InvalidArgument(f"gate kind must be one of {GATE_KINDS}, got {self.kind!r}")
        if not np.isfinite(self.param):
            raise InvalidArgument(f"gate parameter must be finite, got {self.param}")
        if self.wire < 0 or self.step < 0:
            raise InvalidArgument("wire and step must be nonnegative")
        if self.k is not None and self.k % 2:
            raise InvalidArgument(f"wire modes sit at even temporal indices, got k={self.k}")

    @property
    def parity(self) -> int:
        return -1 if self.wire % 2 else 1

    @property
    def n_wires(self) -> int:
        return 2 if self.kind == "cz" else 1

    @property
    def wires(self) -> tuple:
        return tuple(range(self.wire, self.wire + self.n_wires))

    @property
    def n_steps(self) -> int:
        return 2 if self.kind == "cz" else 1

    def input_k(self, N: int) -> int:
        if self.k is not None:
            if (self.k % N) // 2 != self.wire:
                raise InvalidArgument(f"k={self.k} lies on wire {(self.k % N) // 2}, not {self.wire}")
            return self.k
        return 2 * N + 2 * self.wire + self.step * N

    def validate(self, N: int):
        if self.wire + self.n_wires - 1 >= N // 2:
            raise InvalidArgument(f"{self.kind} on wire {self.wire} exceeds the {N // 2} wires")
        self.input_k(N)

    def describe(self) -> str:
        if self.kind == "identity":
            return f"I(w{self.wire})"
        return f"{self.kind}({self.param:g}, w{self.wire})"


@dataclass(frozen=True)
class ScheduleFragment:
    """Basis pairs (theta_A, theta_B) of the temporal rows a gate occupies."""

    rows: dict
    inputs: tuple
    outputs: tuple


def single_mode_angles(kind: str, param: float, parity: int) -> tuple[float, float]:
    s = parity
    if kind == "identity":
        kind, param = "rotation", 0.0
    if kind == "rotation":
        return (param - s * np.pi / 2) / 2, (param + s * np.pi / 2) / 2
    if kind == "shear":
        return 0.0, np.pi / 2 - np.arctan(param / 2)
    if kind == "squeeze":
        a = np.arctan(np.exp(param))
        if not np.isfinite(a) or abs(np.sin(2 * a)) < 1e-12:
            raise DegenerateGate(f"squeeze r={param} gives a degenerate teleportation basis")
        return -s * a, s * a
    raise InvalidArgument(f"{kind} is not a single-mode gate")


def basis_for_gate(spec: GateSpec, N: int) -> ScheduleFragment:
    spec.validate(N)
    k = spec.input_k(N)
    s = spec.parity
    if spec.kind != "cz":
        tA, tB = single_mode_angles(spec.kind, spec.param, s)
        if abs(np.sin(tB - tA)) < 1e-12:
            raise DegenerateGate(f"{spec.describe()} has sin(theta_-) = 0")
        return ScheduleFragment({k: (tA, tB)}, (k,), (k + N,))
    a = np.arctan(spec.param / 2)
    rows = {
        k: (np.pi / 4, -np.pi / 4),
        k + 2: (s * np.pi / 4, -s * np.pi / 4),
        k + N: (s * (np.pi / 2 - a), 0.0),
        k + N + 1: (s * np.pi / 4, s * (np.pi / 4 + 2 * a)),
        k + N + 2: (s * (np.pi / 2 - a), 0.0),
    }
    return ScheduleFragment(rows, (k, k + 2), (k + 2 * N, k + 2 * N + 2))


def squeeze_from_angles(theta_a: float, theta_b: float) -> float:
    """Invert the squeeze schedule: tan(theta_-/2) = e^r."""
    return float(np.log(abs(np.tan((theta_b - theta_a) / 2))))


def expected_symplectic(spec: GateSpec) -> SymplecticMatrix:
    j = spec.parity
    if spec.kind in ("rotation", "identity"):
        return SymplecticMatrix(rotation_matrix(spec.param if spec.kind == "rotation" else 0.0))
    if spec.kind == "shear":
        return SymplecticMatrix(fourier_power(j) @ shear_matrix(spec.param))
    if spec.kind == "squeeze":
        return SymplecticMatrix(squeeze_matrix(spec.param))
    return SymplecticMatrix(embed_two_by_two([fourier_power(1), fourier_power(j)]) @ cz_matrix(spec.param))


GOLDEN_CZ = "cz_noise.json"
GOLDEN_ENV = "CVCLUSTER_GOLDEN_DIR"


def data_dir() -> Path:
    return Path(__file__).resolve().parent / "data"


def golden_dir() -> Path:
    override = os.environ.get(GOLDEN_ENV)
    return Path(override) if override else data_dir()


@lru_cache(maxsize=None)
def _load(path: str) -> dict:
    p = Path(path)
    return json.loads(p.read_text()) if p.is_file() else {}


def load_golden(name: str) -> dict:
    """Golden table ``name`` from the data directory (or ``GOLDEN_ENV``)."""
    return _load(str(golden_dir() / name))


def clear_golden_cache():
    _load.cache_clear()


def cz_key(g: float, parity: int) -> str:
    g = float(g) + 0.0
    return f"g={g:+.6f},parity={'even' if parity == 1 else 'odd'}"


def cz_noise_covariance(g: float, parity: int, derive: bool = False) -> np.ndarray:
    """N N^T of the CZ gate in units of the squeezed source variance.

    Values come from the golden table; ``derive`` falls back to the exact
    source-basis derivation for coupling constants not in the table.
    """
    table = load_golden(GOLDEN_CZ).get("entries", {})
    key = cz_key(g, parity)
    if key in table:
        return np.array(table[key]["noise_covariance"])
    if not derive:
        raise NeedsCalibration(f"no golden CZ noise entry for {key}; run with --derive-goldens")
    from .executor import derive_gate_transfer

    return derive_gate_transfer(GateSpec("cz", g, wire=0 if parity == 1 else 1)).noise_covariance


def gate_noise_covariance(spec: GateSpec, derive: bool = False) -> np.ndarray:
    if spec.kind == "cz":
        return cz_noise_covariance(spec.param, spec.parity, derive)
    return SINGLE_MODE_NOISE_FACTOR * np.eye(2)


def expected_noise_factors(spec: GateSpec, derive: bool = False) -> np.ndarray:
    return np.diag(gate_noise_covariance(spec, derive)).copy()


def displacement_matrix_single(spec: GateSpec, N: int):
    """Closed-form by-product D of a single-mode gate.

    Returns ``(D, labels)``: a 2 x 6 matrix on the outcomes
    (m+[k], m-[k], mA[k-1], mA[k+1], mB[k+N-1], mB[k+N+1]) where k is the
    input temporal index.
    """
    if spec.kind == "cz":
        raise InvalidArgument("displacement_matrix_single needs a single-mode gate")
    frag = basis_for_gate(spec, N)
    (k,) = frag.inputs
    tA, tB = frag.rows[k]
    sm = np.sin(tB - tA)
    if abs(sm) < 1e-12:
        raise DegenerateGate("sin(theta_-) = 0")
    j = spec.parity
    gate = j * np.sqrt(2) / sm * np.array([[-np.cos(tA), np.cos(tB)], [np.sin(tA), -np.sin(tB)]])
    proj = np.array([[-j, -j, -j, j], [1, -1, 1, 1]]) / np.sqrt(2)
    labels = (f"m+[{k}]", f"m-[{k}]", f"mA[{k - 1}]", f"mA[{k + 1}]", f"mB[{k + N - 1}]", f"mB[{k + N + 1}]")
    return np.hstack([gate, proj]), labels


@dataclass(frozen=True)
class CircuitInstance:
    """A placed circuit plus the tomography readout bases of its ports."""

    gates: tuple
    inputs: tuple
    outputs: tuple
    references: tuple
    wires: tuple
    quadrant: tuple = ("x", "p")
    name: str = ""


@dataclass(frozen=True)
class ProbeSegment:
    """An untouched wire segment read out for epsilon and input variances."""

    k_input: int
    k_reference: int
    parity: int
    quadrant: tuple = ("x", "p")


@dataclass(frozen=True)
class BasisSchedule:
    N: int
    K: int
    angles: np.ndarray
    roles: tuple
    instances: tuple = ()
    probes: tuple = ()

    def angle(self, spatial: str, k: int) -> float:
        return float(self.angles[k, 0 if spatial == "A" else 1])

    def role(self, spatial: str, k: int) -> str:
        return self.roles[k][0 if spatial == "A" else 1]

    def kept_modes(self) -> list[tuple[str, int]]:
        return [(s, k) for k in range(self.K) for si, s in enumerate("AB") if self.roles[k][si] in KEPT_ROLES]

    def rows(self):
        for k in range(self.K):
            for si, s in enumerate("AB"):
                yield k, s, float(self.angles[k, si]), self.roles[k][si]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["k", "spatial", "angle_radians", "role"])
        for k, s, a, role in self.rows():
            w.writerow([k, s, repr(a), role])
        return buf.getvalue()

    def with_quadrant(self, quadrant: tuple) -> "BasisSchedule":
        """Same layout with every output/reference read in ``quadrant``."""
        angles = self.angles.copy()
        out_b, ref_b = quadrant
        for k in range(self.K):
            for si in range(2):
                role = self.roles[k][si]
                if role in ("output", "probe-input"):
                    angles[k, si] = BASIS_ANGLE[out_b]
                elif role in ("reference", "probe-reference"):
                    angles[k, si] = BASIS_ANGLE[ref_b]
        inst = tuple(replace(i, quadrant=tuple(quadrant)) for i in self.instances)
        probes = tuple(replace(p, quadrant=tuple(quadrant)) for p in self.probes)
        return BasisSchedule(self.N, self.K, angles, self.roles, inst, probes)


def _circuit_ports(circuit, N):
    """Inputs, outputs and wires of a chain of gates."""
    produced, consumed = {}, set()
    wire_in, wire_out = {}, {}
    for g in circuit:
        frag = basis_for_gate(g, N)
        for w, kin, kout in zip(g.wires, frag.inputs, frag.outputs):
            if kin in produced:
                consumed.add(kin)
                if produced[kin] != w:
                    raise PlacementConflict(f"mode B,{kin} produced on wire {produced[kin]} used on wire {w}")
            else:
                if w in wire_in:
                    raise PlacementConflict(f"wire {w} has two unconnected inputs")
                wire_in[w] = kin
            produced[kout] = w
            wire_out[w] = kout
    wires = tuple(sorted(wire_in))
    if set(wires) != set(wire_out):
        raise InternalInvariantError("wire bookkeeping mismatch")
    return tuple(wire_in[w] for w in wires), tuple(wire_out[w] for w in wires), wires


def compile_layout(instances, params: ClusterParams, probes_per_parity: int = 2, probe_quadrant=("x", "p")) -> BasisSchedule:
    """Overlay placed circuits on an all-control schedule.

    ``instances`` is a sequence of ``(circuit, quadrant)`` pairs. Probe
    segments (one reference/input pair each) are added on free rows for
    both wire parities.
    """
    N, K = params.N, params.K
    ix = ModeIndexer(N, K)
    angles = np.zeros((K, 2))
    roles = [["idle", "idle"] for _ in range(K)]
    owner = {}
    for k in range(1, K, 2):
        angles[k] = control_angle(k)
        roles[k] = ["control", "control"]

    def claim(spatial, k, role, angle, tag):
        if not ix.contains(k):
            raise BoundaryError(f"mode ({spatial},{k}) of {tag} lies outside the window [0,{K})")
        key = (spatial, k)
        if key in owner:
            raise PlacementConflict(f"mode ({spatial},{k}) claimed by {owner[key]} and {tag}")
        owner[key] = tag
        si = 0 if spatial == "A" else 1
        roles[k][si] = role
        angles[k, si] = angle

    placed = []
    for n_inst, (circuit, quadrant) in enumerate(instances):
        circuit = tuple(circuit)
        tag = f"circuit{n_inst}"
        ins, outs, wires = _circuit_ports(circuit, N)
        for g in circuit:
            frag = basis_for_gate(g, N)
            for k, (tA, tB) in frag.rows.items():
                claim("A", k, "gate", tA, f"{tag}:{g.describe()}")
                claim("B", k, "gate", tB, f"{tag}:{g.describe()}")
        out_b, ref_b = quadrant
        refs = tuple(k - N for k in ins)
        for k in outs:
            claim("B", k, "output", BASIS_ANGLE[out_b], tag)
            if k + 1 >= K:
                raise BoundaryError(f"output B,{k} needs control row {k + 1} inside the window")
        for k in refs:
            claim("A", k, "reference", BASIS_ANGLE[ref_b], tag)
        placed.append(CircuitInstance(circuit, ins, outs, refs, wires, tuple(quadrant), tag))

    def segment_ok(k_ref):
        rows = (k_ref - 1, k_ref + 1, k_ref + N - 1, k_ref + N + 1)
        return all(ix.contains(r) and roles[r] == ["control", "control"] for r in rows)

    for inst in placed:
        for k in inst.references:
            if not segment_ok(k):
                raise BoundaryError(f"reference A,{k} of {inst.name} needs unmodified control rows around its segment")

    probes = []
    for parity in (1, -1):
        found = 0
        for k_in in range(N + 2, K, 2):
            if found >= probes_per_parity:
                break
            k_ref = k_in - N
            if ix.parity(k_in) != parity or ("A", k_ref) in owner or ("B", k_in) in owner:
                continue
            if roles[k_in][1] != "idle" or roles[k_ref][0] != "idle" or not segment_ok(k_ref):
                continue
            claim("A", k_ref, "probe-reference", BASIS_ANGLE[probe_quadrant[1]], f"probe{len(probes)}")
            claim("B", k_in, "probe-input", BASIS_ANGLE[probe_quadrant[0]], f"probe{len(probes)}")
            probes.append(ProbeSegment(k_in, k_ref, parity, tuple(probe_quadrant)))
            found += 1
    return BasisSchedule(N, K, angles, tuple(tuple(r) for r in roles), tuple(placed), tuple(probes))


def compile_schedule(circuit, params: ClusterParams, quadrant=("x", "p"), probes_per_parity: int = 2) -> BasisSchedule:
    """Full-window schedule for one placed circuit read in ``quadrant``."""
    circuit = tuple(circuit)
    if not circuit:
        return compile_layout([], params, probes_per_parity=0)
    return compile_layout([(circuit, quadrant)], params, probes_per_parity, probe_quadrant=quadrant)


def tomography_layout(gates, params: ClusterParams, repetitions: int = 4, probes_per_parity: int = 2) -> BasisSchedule:
    """Chained single-mode tomography layout.

    Up to two regions per wire; each region chains ``repetitions`` copies of
    one gate so that an output and the next reference share a temporal mode
    and the same readout basis. The quadrant sequence is (x,p), (x,x),
    (p,x), (p,p).
    """
    N, K = params.N, params.K
    span = 2 * repetitions * N
    per_wire: dict[int, int] = {}
    instances = []
    for g in gates:
        if g.kind == "cz":
            raise InvalidArgument("tomography_layout chains single-mode gates")
        region = per_wire.get(g.wire, 0)
        per_wire[g.wire] = region + 1
        k0 = 2 * N + 2 * g.wire + region * (span + N)
        for rep in range(repetitions):
            quadrant = QUADRANTS[rep % 4]
            placed = GateSpec(g.kind, g.param, g.wire, k=k0 + 2 * rep * N)
            instances.append(((placed,), quadrant))
    return compile_layout(instances, params, probes_per_parity)


def circuit_symplectic(circuit, wires) -> SymplecticMatrix:
    return compose_circuit(circuit, wires).G


@dataclass(frozen=True)
class ExpectedTransfer:
    G: SymplecticMatrix
    noise_covariance: np.ndarray
    wires: tuple
    D_single: np.ndarray | None = None
    D_labels: tuple = ()
    D_source: str = "analytic"

    @property
    def noise_factors(self) -> np.ndarray:
        return np.diag(self.noise_covariance).copy()


def _embed(matrix: np.ndarray, positions, n: int, base: np.ndarray | None = None) -> np.ndarray:
    """Embed a gate matrix acting on ``positions`` into n modes (xx..pp)."""
    m = len(positions)
    out = np.eye(2 * n) if base is None else base
    idx = list(positions) + [p + n for p in positions]
    out[np.ix_(idx, idx)] = matrix
    if matrix.shape != (2 * m, 2 * m):
        raise InvalidArgument("gate matrix size does not match its wires")
    return out


def compose_circuit(circuit, wires=None, N: int = 12, derive: bool = False) -> ExpectedTransfer:
    """Ordered product of gate symplectics and accumulated noise.

    Gates are applied in order of their input temporal index. The noise of
    each gate enters after that gate and is propagated through every later
    gate; units are the squeezed source variance.
    """
    circuit = tuple(circuit)
    if wires is None:
        wires = tuple(sorted({w for g in circuit for w in g.wires}))
    pos = {w: i for i, w in enumerate(wires)}
    n = len(wires)
    S = np.eye(2 * n)
    noise = np.zeros((2 * n, 2 * n))
    for g in sorted(circuit, key=lambda g: (g.input_k(N), g.wire)):
        p = [pos[w] for w in g.wires]
        Sg = _embed(expected_symplectic(g).entries, p, n)
        Ng = _embed(gate_noise_covariance(g, derive), p, n, base=np.zeros((2 * n, 2 * n)))
        S = Sg @ S
        noise = Sg @ noise @ Sg.T + Ng
    D, labels, source = None, (), "derived"
    if len(circuit) == 1 and circuit[0].kind != "cz":
        D, labels = displacement_matrix_single(circuit[0], N)
        source = "analytic"
    return ExpectedTransfer(SymplecticMatrix(S), noise, tuple(wires), D, labels, source)


def encoder_circuit(g: float = 1.0) -> tuple:
    """Three-wire encoder: two CZ couplings, identities as memory steps and
    two closing quarter rotations (12 gates on wires 1-3)."""
    gates = [
        GateSpec("cz", g, wire=1, step=0),
        GateSpec("identity", wire=3, step=0),
        GateSpec("identity", wire=3, step=1),
        GateSpec("cz", g, wire=2, step=2),
        GateSpec("identity", wire=1, step=2),
        GateSpec("identity", wire=1, step=3),
        GateSpec("rotation", np.pi / 2, wire=1, step=4),
        GateSpec("identity", wire=1, step=5),
        GateSpec("identity", wire=2, step=4),
        GateSpec("identity", wire=2, step=5),
        GateSpec("rotation", -np.pi / 2, wire=3, step=4),
        GateSpec("identity", wire=3, step=5),
    ]
    return tuple(gates)
