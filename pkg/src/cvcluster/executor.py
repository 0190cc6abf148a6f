"""Execute a basis schedule on a coiled cluster.

Every homodyne outcome is a linear functional of the logic-level
quadratures, which are themselves a linear image of independent squeezed
sources. Deterministic statistics are therefore exact covariances of linear
combinations; sampling draws the sources and maps them forward.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .cluster import ClusterParams, CoiledCluster, ModeIndexer, build_coiled_cluster, wire_displacement
from .compiler import BASIS_ANGLE, KEPT_ROLES, BasisSchedule, CircuitInstance, GateSpec, compile_schedule
from .errors import (
    BoundaryError,
    CalibrationSingular,
    CompensationIncomplete,
    DegenerateMeasurement,
    InternalInvariantError,
    InvalidArgument,
)
from .gaussian import DEGENERATE_VARIANCE, GaussianState, apply_symplectic, homodyne, SymplecticMatrix

H = 1.0 / np.sqrt(2.0)
CANCELLATION_TOL = 1e-9
# Fixed shot blocks keep floating-point work identical for any worker count.
SHOT_BLOCK = 4096


def quad_name(q: str, spatial: str, k: int) -> str:
    return f"{q}{spatial}[{k}]"


@dataclass(frozen=True)
class MeasurementModel:
    """Linear-functional description of every detector in a schedule.

    ``raw_*`` are detector outcomes in temporal order (A before B, the BS3
    minus port before the plus port). ``outcome_*`` are the outcomes used
    for compensation: recombined before-BS3 values for control pairs and
    direct detector values elsewhere; ``outcome = recombine @ raw``.
    """

    indexer: ModeIndexer
    raw_labels: tuple
    raw_rows: np.ndarray
    raw_angles: tuple
    raw_pairs: tuple
    outcome_labels: tuple
    outcome_rows: np.ndarray
    recombine: np.ndarray
    kept_modes: tuple
    kept_angles: tuple

    def outcome_index(self) -> dict:
        return {lab: i for i, lab in enumerate(self.outcome_labels)}

    def kept_rows(self) -> tuple[list[str], np.ndarray]:
        """x then p functionals of every kept mode (xx..pp ordering)."""
        ix = self.indexer
        names = [quad_name("x", s, k) for s, k in self.kept_modes] + [quad_name("p", s, k) for s, k in self.kept_modes]
        rows = [ix.x_row(s, k) for s, k in self.kept_modes] + [ix.p_row(s, k) for s, k in self.kept_modes]
        return names, np.array(rows).reshape(len(names), ix.n_modes * 2)

    def readout_names(self) -> list[str]:
        names = []
        for (s, k), a in zip(self.kept_modes, self.kept_angles):
            names.append(quad_name(_basis_of(a), s, k))
        return names

    def readout_rows(self) -> np.ndarray:
        ix = self.indexer
        rows = [ix.theta_row(s, k, a) for (s, k), a in zip(self.kept_modes, self.kept_angles)]
        return np.array(rows).reshape(len(rows), ix.n_modes * 2)


def _basis_of(angle: float) -> str:
    for name, a in BASIS_ANGLE.items():
        if abs(angle - a) < 1e-12:
            return name
    raise InvalidArgument(f"kept modes must be read in x or p, got angle {angle}")


def measurement_model(indexer: ModeIndexer, schedule: BasisSchedule) -> MeasurementModel:
    if (schedule.N, schedule.K) != (indexer.N, indexer.K):
        raise InvalidArgument(f"schedule window (N={schedule.N}, K={schedule.K}) does not match cluster (N={indexer.N}, K={indexer.K})")
    raw_labels, raw_rows, raw_angles, raw_pairs = [], [], [], []
    out_labels, recomb_entries = [], []
    kept, kept_angles = [], []
    for k in range(indexer.K):
        ra, rb = schedule.roles[k]
        ta, tb = schedule.angle("A", k), schedule.angle("B", k)
        if ra == rb and ra in ("control", "gate"):
            a_th, b_th = indexer.theta_row("A", k, ta), indexer.theta_row("B", k, ta)
            a_tb, b_tb = indexer.theta_row("A", k, tb), indexer.theta_row("B", k, tb)
            i = len(raw_labels)
            raw_labels += [f"m-[{k}]", f"m+[{k}]"]
            raw_rows += [H * (a_th - b_th), H * (a_tb + b_tb)]
            raw_angles += [ta, tb]
            raw_pairs += [k, k]
            if ra == "control":
                if abs(ta - tb) > 1e-15:
                    raise InvalidArgument(f"control row {k} must read both detectors in one basis")
                out_labels += [f"mA[{k}]", f"mB[{k}]"]
                recomb_entries += [{i: H, i + 1: H}, {i: -H, i + 1: H}]
            else:
                out_labels += [f"m-[{k}]", f"m+[{k}]"]
                recomb_entries += [{i: 1.0}, {i + 1: 1.0}]
            continue
        for s, role, th in (("A", ra, ta), ("B", rb, tb)):
            if role in ("control", "gate"):
                i = len(raw_labels)
                raw_labels.append(f"m{s}[{k}]")
                raw_rows.append(indexer.theta_row(s, k, th))
                raw_angles.append(th)
                raw_pairs.append(None)
                out_labels.append(f"m{s}[{k}]")
                recomb_entries.append({i: 1.0})
            elif role in KEPT_ROLES:
                kept.append((s, k))
                kept_angles.append(th)
    recombine = np.zeros((len(out_labels), len(raw_labels)))
    for r, entries in enumerate(recomb_entries):
        for c, v in entries.items():
            recombine[r, c] = v
    raw = np.array(raw_rows).reshape(len(raw_rows), 2 * indexer.n_modes)
    return MeasurementModel(
        indexer, tuple(raw_labels), raw, tuple(raw_angles), tuple(raw_pairs), tuple(out_labels),
        recombine @ raw, recombine, tuple(kept), tuple(kept_angles),
    )


def jittered_model(model: MeasurementModel, deltas: np.ndarray) -> MeasurementModel:
    """Same detectors with each local-oscillator angle offset by ``deltas``.

    Labels, recombination and kept modes are unchanged, so tables derived
    for the nominal schedule still apply.
    """
    deltas = np.asarray(deltas, dtype=float)
    if deltas.shape != (len(model.raw_labels),):
        raise InvalidArgument(f"need one angle offset per detector ({len(model.raw_labels)})")
    ix = model.indexer
    rows = []
    for lab, th, k, d in zip(model.raw_labels, model.raw_angles, model.raw_pairs, deltas):
        a = th + d
        if k is None:
            rows.append(ix.theta_row(lab[1], int(lab[3:-1]), a))
        elif lab.startswith("m-"):
            rows.append(H * (ix.theta_row("A", k, a) - ix.theta_row("B", k, a)))
        else:
            rows.append(H * (ix.theta_row("A", k, a) + ix.theta_row("B", k, a)))
    raw = np.array(rows).reshape(len(rows), 2 * ix.n_modes)
    return replace(model, raw_rows=raw, outcome_rows=model.recombine @ raw)


@dataclass(frozen=True)
class DisplacementTable:
    """Compensation rows: ``compensated = raw - matrix @ outcomes``."""

    quadratures: tuple
    labels: tuple
    matrix: np.ndarray
    provenance: dict = field(default_factory=dict)

    def row(self, name: str) -> np.ndarray:
        try:
            return self.matrix[self.quadratures.index(name)]
        except ValueError:
            raise CompensationIncomplete(f"no displacement row for {name}") from None

    def nonzero(self, name: str, tol: float = 1e-12) -> dict:
        row = self.row(name)
        return {lab: float(v) for lab, v in zip(self.labels, row) if abs(v) > tol}

    def to_json(self) -> dict:
        rows = {q: self.nonzero(q) for q in self.quadratures}
        return {"provenance": self.provenance, "labels": list(self.labels), "rows": rows}

    @classmethod
    def from_json(cls, d: dict) -> "DisplacementTable":
        labels = tuple(d["labels"])
        pos = {lab: i for i, lab in enumerate(labels)}
        quads = tuple(d["rows"])
        m = np.zeros((len(quads), len(labels)))
        for r, q in enumerate(quads):
            for lab, v in d["rows"][q].items():
                m[r, pos[lab]] = v
        return cls(quads, labels, m, d.get("provenance", {}))


@dataclass(frozen=True)
class DerivedTransfer:
    """Exact decomposition ``out = G in' + D m + N s_squeezed``.

    ``in'`` is the input with its wire by-product removed, ``in' = in - B m``.
    ``D_local = D - G B`` is the by-product relative to the raw input.
    ``noise_covariance`` is N N^T, in units of the squeezed source variance.
    """

    G: np.ndarray
    D: np.ndarray
    labels: tuple
    N: np.ndarray
    residual: float
    rank_deficiency: int
    input_displacement: np.ndarray

    @property
    def D_local(self) -> np.ndarray:
        return self.D - self.G @ self.input_displacement

    @property
    def noise_covariance(self) -> np.ndarray:
        return self.N @ self.N.T

    @property
    def noise_factors(self) -> np.ndarray:
        return np.diag(self.noise_covariance).copy()


def _segment_rows(model: MeasurementModel, spatial: str, k: int, pos: dict):
    """Wire by-product labels and complex coefficients for a segment half."""
    ix = model.indexer
    N = ix.N
    k_seg = k if spatial == "A" else k - N
    labels, alpha, beta = wire_displacement(ix, k_seg)
    coef = alpha if spatial == "A" else beta
    missing = [lab for lab in labels if lab not in pos]
    if missing:
        raise CompensationIncomplete(f"segment ({spatial},{k}) needs control outcomes {missing}")
    return labels, coef


def _input_displacement(model: MeasurementModel, k_in: int, pos: dict) -> np.ndarray:
    """2 x n_outcomes by-product (x row, p row) of the input half (B, k_in)."""
    labels, beta = _segment_rows(model, "B", k_in, pos)
    out = np.zeros((2, len(pos)))
    for lab, c in zip(labels, beta):
        out[0, pos[lab]] = c.real
        out[1, pos[lab]] = c.imag
    return out


def derive_instance_transfer(cluster: CoiledCluster, model: MeasurementModel, instance: CircuitInstance) -> DerivedTransfer:
    """Exact G, D and N of one placed circuit by source-basis cancellation.

    Each output quadrature minus G in' minus D m must carry no weight on
    any anti-squeezed source quadrature; the least-squares solution is
    checked to cancel to ``CANCELLATION_TOL``. The weights left on the
    squeezed sources form N.
    """
    ix = model.indexer
    pos = model.outcome_index()
    n = len(instance.inputs)
    disp = [_input_displacement(model, k, pos) for k in instance.inputs]
    B = np.array([d[0] for d in disp] + [d[1] for d in disp])
    in_rows = np.array([ix.x_row("B", k) for k in instance.inputs] + [ix.p_row("B", k) for k in instance.inputs])
    in_rows = in_rows - B @ model.outcome_rows
    out_rows = np.array([ix.x_row("B", k) for k in instance.outputs] + [ix.p_row("B", k) for k in instance.outputs])
    T = cluster.generator
    large = ~cluster.squeezed_mask
    regress = np.vstack([in_rows, model.outcome_rows]) @ T
    target = out_rows @ T
    A = regress[:, large]
    coef, *_ = np.linalg.lstsq(A.T, target[:, large].T, rcond=None)
    coef = coef.T
    resid = target - coef @ regress
    err = float(np.max(np.abs(resid[:, large])))
    if err > CANCELLATION_TOL:
        raise BoundaryError(f"outputs of {instance.name} cannot be compensated from recorded outcomes (residual {err:.2e})")
    rank = np.linalg.matrix_rank(A)
    return DerivedTransfer(coef[:, : 2 * n], coef[:, 2 * n :], model.outcome_labels, resid[:, ~large], err, A.shape[0] - rank, B)


def derive_tables(cluster: CoiledCluster, schedule: BasisSchedule, model: MeasurementModel | None = None):
    """Displacement tables for every kept quadrature of a schedule.

    References and probe halves use the wire by-product of their segment;
    outputs use the exact derivation of their circuit. Returns
    ``(table, {instance name: DerivedTransfer})``.
    """
    model = model or measurement_model(cluster.indexer, schedule)
    pos = model.outcome_index()
    labels = model.outcome_labels
    rows, names = [], []
    transfers = {}
    out_rows = {}
    for inst in schedule.instances:
        tr = derive_instance_transfer(cluster, model, inst)
        transfers[inst.name] = tr
        n = len(inst.outputs)
        for i, k in enumerate(inst.outputs):
            out_rows[quad_name("x", "B", k)] = tr.D[i]
            out_rows[quad_name("p", "B", k)] = tr.D[n + i]
    for s, k in model.kept_modes:
        for q in ("x", "p"):
            name = quad_name(q, s, k)
            if name in out_rows:
                row = out_rows[name]
            else:
                seg_labels, coef = _segment_rows(model, s, k, pos)
                row = np.zeros(len(labels))
                for lab, c in zip(seg_labels, coef):
                    row[pos[lab]] = c.real if q == "x" else c.imag
            rows.append(row)
            names.append(name)
    matrix = np.array(rows).reshape(len(rows), len(labels))
    prov = {"source": "exact source-basis derivation", "N": cluster.params.N, "K": cluster.params.K}
    return DisplacementTable(tuple(names), labels, matrix, prov), transfers


@dataclass(frozen=True)
class JointStatistics:
    labels: tuple
    mean: np.ndarray
    cov: np.ndarray
    shots: int | None = None
    se: np.ndarray | None = None

    def index(self, name: str) -> int:
        try:
            return self.labels.index(name)
        except ValueError:
            raise InvalidArgument(f"statistics do not contain {name}") from None

    def has(self, name: str) -> bool:
        return name in self.labels

    def covariance(self, a: str, b: str) -> float:
        return float(self.cov[self.index(a), self.index(b)])

    def std_error(self, a: str, b: str) -> float:
        if self.se is None:
            return 0.0
        return float(self.se[self.index(a), self.index(b)])

    def sub(self, names) -> np.ndarray:
        idx = [self.index(n) for n in names]
        return self.cov[np.ix_(idx, idx)]


def compensated_rows(model: MeasurementModel, table: DisplacementTable, names) -> np.ndarray:
    """Logic-level functionals of compensated kept quadratures."""
    ix = model.indexer
    pos = model.outcome_index()
    rows = []
    for name in names:
        q, rest = name[0], name[1:]
        s, k = rest[0], int(rest[2:-1])
        base = ix.x_row(s, k) if q == "x" else ix.p_row(s, k)
        coefs = table.nonzero(name)
        missing = [lab for lab in coefs if lab not in pos]
        if missing:
            raise CompensationIncomplete(f"{name} needs outcomes {missing} absent from the schedule")
        for lab, c in coefs.items():
            base = base - c * model.outcome_rows[pos[lab]]
        rows.append(base)
    return np.array(rows).reshape(len(rows), 2 * ix.n_modes)


def run_deterministic(cluster: CoiledCluster, schedule: BasisSchedule, tables: DisplacementTable | None = None, model: MeasurementModel | None = None) -> JointStatistics:
    """Exact joint statistics of the compensated kept quadratures.

    Returns the covariance of ``kept - D m`` over every kept mode (x's then
    p's), computed in closed form from the source variances.
    """
    model = model or measurement_model(cluster.indexer, schedule)
    if tables is None:
        tables, _ = derive_tables(cluster, schedule, model)
    names, _ = model.kept_rows()
    if not names:
        return JointStatistics((), np.zeros(0), np.zeros((0, 0)))
    rows = compensated_rows(model, tables, names)
    cov = cluster.covariance_of(rows)
    return JointStatistics(tuple(names), np.zeros(len(names)), 0.5 * (cov + cov.T))


def _bs3_symplectic(indexer: ModeIndexer, ks) -> np.ndarray:
    n = indexer.n_modes
    s = np.eye(2 * n)
    for k in ks:
        a, b = indexer.index("A", k), indexer.index("B", k)
        for off in (0, n):
            i, j = a + off, b + off
            s[i, i], s[i, j], s[j, i], s[j, j] = H, -H, H, H
    return s


def conditional_statistics(state: GaussianState, indexer: ModeIndexer, schedule: BasisSchedule, order=None, outcomes=None) -> tuple[JointStatistics, dict]:
    """Sequential Gaussian conditioning on every scheduled detector.

    BS3 acts on each pair row; detectors are then measured in ``order``
    (default: temporal order, A port before B port). ``outcomes`` forces
    values by raw label; otherwise each conditions on its mean. Returns the
    posterior statistics of the kept modes and the outcome means/variances.
    """
    model = measurement_model(indexer, schedule)
    pairs = sorted({k for k in model.raw_pairs if k is not None})
    st = apply_symplectic(state, SymplecticMatrix(_bs3_symplectic(indexer, pairs)))
    port_of = {}
    for lab, k in zip(model.raw_labels, model.raw_pairs):
        if k is not None:
            port_of[lab] = ("A", k) if lab.startswith("m-") else ("B", k)
        else:
            port_of[lab] = (lab[1], int(lab[3:-1]))
    seq = list(range(len(model.raw_labels))) if order is None else list(order)
    if sorted(seq) != list(range(len(model.raw_labels))):
        raise InvalidArgument("order must be a permutation of the detector list")
    info = {}
    for i in seq:
        lab = model.raw_labels[i]
        forced = None if outcomes is None else outcomes.get(lab)
        res = homodyne(st, port_of[lab], model.raw_angles[i], outcome=forced, by_label=True)
        info[lab] = (res.outcome_mean, res.outcome_variance)
        st = res.posterior
    kept = list(model.kept_modes)
    post = st.reduced(kept)
    names = [quad_name("x", s, k) for s, k in kept] + [quad_name("p", s, k) for s, k in kept]
    return JointStatistics(tuple(names), post.mean.copy(), post.cov.copy()), info


@dataclass(frozen=True)
class ExecutionRecord:
    shot: int
    seed: int
    outcomes: dict
    compensated: dict


@dataclass(frozen=True)
class ExecutionRecords:
    """Sampled shots stored column-wise (shots x labels)."""

    seed: int
    shot_index: np.ndarray
    raw_labels: tuple
    raw_angles: tuple
    raw: np.ndarray
    outcome_labels: tuple
    outcomes: np.ndarray
    kept_labels: tuple
    kept: np.ndarray
    compensated: np.ndarray | None = None

    @property
    def shots(self) -> int:
        return self.raw.shape[0]

    def record(self, i: int) -> ExecutionRecord:
        comp = {} if self.compensated is None else dict(zip(self.kept_labels, map(float, self.compensated[i])))
        outs = {(lab, a): float(v) for lab, a, v in zip(self.raw_labels, self.raw_angles, self.raw[i])}
        return ExecutionRecord(int(self.shot_index[i]), self.seed, outs, comp)

    def column(self, label: str) -> np.ndarray:
        if label in self.outcome_labels:
            return self.outcomes[:, self.outcome_labels.index(label)]
        if label in self.kept_labels:
            return self.kept[:, self.kept_labels.index(label)]
        raise CompensationIncomplete(f"no recorded outcome {label}")

    def to_jsonl(self, limit: int | None = None) -> str:
        lines = []
        for i in range(self.shots if limit is None else min(limit, self.shots)):
            d = {
                "shot": int(self.shot_index[i]),
                "seed": self.seed,
                "outcomes": [
                    {"label": lab, "angle": a, "value": float(v)}
                    for lab, a, v in zip(self.raw_labels, self.raw_angles, self.raw[i])
                ],
                "readout": dict(zip(self.kept_labels, map(float, self.kept[i]))),
            }
            if self.compensated is not None:
                d["compensated"] = dict(zip(self.kept_labels, map(float, self.compensated[i])))
            lines.append(json.dumps(d, sort_keys=True))
        return "\n".join(lines) + ("\n" if lines else "")


def shot_generator(seed: int, shot: int) -> np.random.Generator:
    """Independent stream for one shot: Philox keyed by seed, counter by shot."""
    return np.random.Generator(np.random.Philox(key=int(seed), counter=[0, 0, 0, int(shot)]))


def sample_functionals(cluster: CoiledCluster, rows: np.ndarray, seed: int, shots: int, workers: int = 1, first_shot: int = 0) -> np.ndarray:
    """Draw ``shots`` samples of the logic-level functionals ``rows``.

    Sources are drawn per shot and mapped forward (Wigner sampling, exact for
    commuting quadratures of a Gaussian state). Shot ``i`` uses the stream
    ``(seed, first_shot + i)`` and work is split into fixed blocks, so the
    result does not depend on ``workers``.
    """
    if shots < 1:
        raise InvalidArgument("shots must be >= 1")
    if seed < 0 or seed >= 2**64:
        raise InvalidArgument("seed must be an unsigned 64-bit integer")
    W = np.atleast_2d(rows) @ cluster.generator
    active = np.flatnonzero(np.any(np.abs(W) > 0, axis=0))
    W = W[:, active]
    scale = np.sqrt(cluster.source_variances[active])
    out = np.empty((shots, W.shape[0]))
    n_src = active.size

    def work(lo, hi):
        z = np.empty((hi - lo, n_src))
        for i in range(lo, hi):
            z[i - lo] = shot_generator(seed, first_shot + i).standard_normal(n_src)
        out[lo:hi] = (z * scale) @ W.T

    blocks = [(lo, min(lo + SHOT_BLOCK, shots)) for lo in range(0, shots, SHOT_BLOCK)]
    if max(1, int(workers)) == 1:
        for lo, hi in blocks:
            work(lo, hi)
    else:
        with ThreadPoolExecutor(int(workers)) as pool:
            list(pool.map(lambda ab: work(*ab), blocks))
    return out


def run_sampled(cluster: CoiledCluster, schedule: BasisSchedule, seed: int, shots: int, workers: int = 1, first_shot: int = 0, model: MeasurementModel | None = None) -> ExecutionRecords:
    """Sample every scheduled detector and every kept readout per shot."""
    model = model or measurement_model(cluster.indexer, schedule)
    var = np.einsum("ij,ij->i", model.raw_rows @ cluster.generator * cluster.source_variances, model.raw_rows @ cluster.generator)
    if np.any(var <= DEGENERATE_VARIANCE):
        raise DegenerateMeasurement("a scheduled detector has vanishing outcome variance")
    out = sample_functionals(cluster, np.vstack([model.raw_rows, model.readout_rows()]), seed, shots, workers, first_shot)
    n_raw = len(model.raw_labels)
    raw = out[:, :n_raw]
    return ExecutionRecords(
        int(seed), np.arange(first_shot, first_shot + shots), model.raw_labels, model.raw_angles, raw,
        model.outcome_labels, raw @ model.recombine.T, tuple(model.readout_names()), out[:, n_raw:],
    )


def compensate(records: ExecutionRecords, table: DisplacementTable) -> ExecutionRecords:
    """Subtract the displacement by-product from every kept readout."""
    pos = {lab: i for i, lab in enumerate(records.outcome_labels)}
    comp = records.kept.copy()
    for c, name in enumerate(records.kept_labels):
        coefs = table.nonzero(name)
        missing = [lab for lab in coefs if lab not in pos]
        if missing:
            raise CompensationIncomplete(f"{name} needs outcomes {missing} that were not recorded")
        if coefs:
            idx = [pos[lab] for lab in coefs]
            comp[:, c] -= records.outcomes[:, idx] @ np.array(list(coefs.values()))
    return replace(records, compensated=comp)


def sampled_statistics(records: ExecutionRecords, compensated: bool = True) -> JointStatistics:
    """Sample mean and covariance of the kept readouts with large-sample SEs.

    SE of a covariance entry of jointly Gaussian variables is
    sqrt((var_a var_b + c_ab^2) / n).
    """
    data = records.compensated if compensated else records.kept
    if data is None:
        raise CompensationIncomplete("records have not been compensated")
    n = data.shape[0]
    mean = data.mean(axis=0)
    cov = np.cov(data, rowvar=False, ddof=1).reshape(data.shape[1], data.shape[1])
    v = np.diag(cov)
    se = np.sqrt((np.outer(v, v) + cov**2) / n)
    return JointStatistics(records.kept_labels, mean, cov, n, se)


@dataclass(frozen=True)
class CalibrationResult:
    quadrature: str
    labels: tuple
    coefficients: np.ndarray
    std_errors: np.ndarray
    intercept: float
    residual_variance: float
    shots: int

    def coefficient(self, label: str) -> tuple[float, float]:
        i = self.labels.index(label)
        return float(self.coefficients[i]), float(self.std_errors[i])


def calibrate_displacement(records: ExecutionRecords, quadrature: str, labels=None, min_shots: int = 10_000) -> CalibrationResult:
    """Least-squares regression of a raw kept readout on recorded outcomes."""
    if records.shots < min_shots:
        raise InvalidArgument(f"calibration needs at least {min_shots} shots, got {records.shots}")
    labels = tuple(records.outcome_labels if labels is None else labels)
    X = np.column_stack([np.ones(records.shots)] + [records.column(lab) for lab in labels])
    y = records.column(quadrature) if quadrature in records.kept_labels else None
    if y is None:
        raise CompensationIncomplete(f"{quadrature} was not read out")
    rank = np.linalg.matrix_rank(X)
    if rank < X.shape[1]:
        raise CalibrationSingular(f"design matrix rank {rank} < {X.shape[1]} columns")
    beta, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ beta
    dof = records.shots - X.shape[1]
    s2 = float(resid @ resid / dof)
    xtx_inv = np.linalg.inv(X.T @ X)
    se = np.sqrt(np.diag(xtx_inv) * s2)
    return CalibrationResult(quadrature, labels, beta[1:], se[1:], float(beta[0]), s2, records.shots)


def best_linear_predictor(cluster: CoiledCluster, model: MeasurementModel, quadrature: str, labels) -> tuple[np.ndarray, float]:
    """Cov(q, m) Cov(m)^-1 and the residual variance: what regression converges to."""
    ix = model.indexer
    q, s, k = quadrature[0], quadrature[1], int(quadrature[3:-1])
    row = ix.theta_row(s, k, BASIS_ANGLE[q])
    pos = model.outcome_index()
    M = model.outcome_rows[[pos[lab] for lab in labels]]
    C = cluster.covariance_of(np.vstack([row, M]))
    c_qm, c_mm = C[0, 1:], C[1:, 1:]
    coef = np.linalg.solve(c_mm, c_qm)
    return coef, float(C[0, 0] - c_qm @ coef)


def gate_window(spec: GateSpec, N: int = 12) -> ClusterParams:
    """Smallest comfortable window for one gate plus probes."""
    return ClusterParams(N=N, K=2 * N + 2 * spec.wire + 4 * N + 4, r=1.0)


def derive_gate_transfer(spec: GateSpec, N: int = 12) -> DerivedTransfer:
    """Exact transfer of a single placed gate (noise matrix is r-independent)."""
    params = gate_window(spec, N)
    cluster = build_coiled_cluster(params)
    schedule = compile_schedule([spec], params, probes_per_parity=0)
    model = measurement_model(cluster.indexer, schedule)
    return derive_instance_transfer(cluster, model, schedule.instances[0])
