"""Acceptance suite: eleven numbered checks with fixed tolerances.

``run_suite`` returns one :class:`CriterionResult` per criterion. Every
state covariance produced along the way is collected and checked for
physicality by criterion 10. ``quick`` runs the deterministic subset.
"""

from __future__ import annotations

import contextlib
import io
import json
import tempfile
import time
import traceback
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .cluster import ClusterParams, build_coiled_cluster, expected_nullifier_variance, nullifier_variances, project_wires
from .compiler import (
    GOLDEN_CZ,
    QUADRANTS,
    GateSpec,
    compile_schedule,
    compose_circuit,
    cz_key,
    displacement_matrix_single,
    encoder_circuit,
    expected_symplectic,
    load_golden,
)
from .executor import (
    best_linear_predictor,
    calibrate_displacement,
    derive_gate_transfer,
    derive_tables,
    measurement_model,
    run_deterministic,
    run_sampled,
)
from .gaussian import V0, symplectic_eigenvalues, to_db
from .goldens import relative_label
from .opo import PAPER_PARAMS, QuadratureVariancePair, find_pump_for_squeezing, gate_noise_vs_pump, jittered_gate_noise, mode_variances
from .tomography import _ports, gate_tomography

EXACT_TOL = 1e-9
GOLDEN_TOL = 1e-6
OPO_TOL = 1e-10
Z_LIMIT = 3.0
ACCEPTANCE_SEED = 20240611
MC_SHOTS = 100_000
R_GRID = (0.1, 0.25, 0.5, 1.0, 2.0)
N_MODES = 12
NULLIFIER_K = 228
GATE_K = 88
ENCODER_K = 108
SINGLE_GRIDS = {
    "rotation": tuple(np.linspace(-np.pi / 2, np.pi / 2, 7)),
    "shear": tuple(np.linspace(-1.5, 1.5, 7)),
    "squeeze": tuple(np.linspace(-0.6, 0.6, 7)),
}
CZ_GRID = (0.0, 0.5, -0.5, 1.0, -1.0)
WIRES = (0, 1)
MC_GATES = (
    GateSpec("rotation", 0.7, wire=0),
    GateSpec("shear", 0.8, wire=1),
    GateSpec("squeeze", 0.4, wire=0),
    GateSpec("identity", 0.0, wire=1),
    GateSpec("cz", 1.0, wire=1),
)
TIME_LIMITS = {1: 10.0, 3: 60.0, 6: 120.0, 7: 600.0}
QUICK = (1, 2, 3, 4, 5, 6, 9, 10)


@dataclass
class CriterionResult:
    number: int
    name: str
    passed: bool
    detail: str
    seconds: float
    metrics: dict = field(default_factory=dict)

    def line(self) -> str:
        mark = "PASS" if self.passed else "FAIL"
        return f"[{mark}] {self.number:>2}  {self.name}: {self.detail} ({self.seconds:.1f} s)"

    def to_json(self) -> dict:
        return {
            "criterion": self.number,
            "name": self.name,
            "passed": self.passed,
            "detail": self.detail,
            "seconds": self.seconds,
            "metrics": json.loads(json.dumps(self.metrics, default=float)),
        }


class CovarianceLog:
    """State covariances gathered by the other criteria."""

    def __init__(self):
        self.entries: list[tuple[str, np.ndarray]] = []

    def add(self, source: str, cov):
        self.entries.append((source, np.asarray(cov, dtype=float)))


@dataclass
class Context:
    log: CovarianceLog = field(default_factory=CovarianceLog)
    single_reports: dict = field(default_factory=dict)


def _max(values, default=0.0) -> float:
    values = [float(v) for v in values]
    return max(values) if values else default


def criterion_1(ctx: Context):
    worst = {}
    for r in R_GRID:
        cluster = build_coiled_cluster(ClusterParams(N=N_MODES, K=NULLIFIER_K, r=r))
        ctx.log.add(f"cluster r={r}", cluster.state.cov)
        for conv in ("cluster_type", "approximate"):
            var = nullifier_variances(cluster.state, cluster.indexer, conv, r)
            err = float(np.max(np.abs(var - expected_nullifier_variance(r, conv))))
            worst[conv] = max(worst.get(conv, 0.0), err)
    ok = all(v <= EXACT_TOL for v in worst.values())
    detail = ", ".join(f"{c} max error {v:.1e}" for c, v in worst.items())
    return ok, detail, worst


def criterion_2(ctx: Context):
    worst, count = 0.0, 0
    for r in R_GRID:
        cluster = build_coiled_cluster(ClusterParams(N=N_MODES, K=3 * N_MODES + 8, r=r))
        expected = 4 * V0 * np.exp(-2 * r)
        for seg in project_wires(cluster).segments:
            ctx.log.add(f"wire segment r={r} k={seg.k}", seg.state.cov)
            worst = max(worst, _max(abs(v - expected) for v in seg.nullifier_variances))
            count += 1
    ok = worst <= EXACT_TOL and count > 0
    return ok, f"{count} segments, max error {worst:.1e}", {"max_error": worst, "segments": count}


def _single_grid(ctx: Context, r: float):
    if r in ctx.single_reports:
        return ctx.single_reports[r]
    cluster = build_coiled_cluster(ClusterParams(N=N_MODES, K=GATE_K, r=r))
    out = []
    for kind, grid in SINGLE_GRIDS.items():
        for wire in WIRES:
            for v in grid:
                spec = GateSpec(kind, float(v), wire=wire)
                rep = gate_tomography(cluster, [spec], "det")
                for st in rep.statistics:
                    ctx.log.add(f"{spec.describe()} r={r}", st.cov)
                out.append((spec, rep))
    ctx.single_reports[r] = (cluster, out)
    return ctx.single_reports[r]


def criterion_3(ctx: Context):
    _, reports = _single_grid(ctx, 1.0)
    errors = {}
    for spec, rep in reports:
        err = float(np.max(np.abs(rep.S_hat - expected_symplectic(spec).entries)))
        errors[spec.kind] = max(errors.get(spec.kind, 0.0), err)
    ok = all(v <= EXACT_TOL for v in errors.values())
    detail = f"{len(reports)} gates, " + ", ".join(f"{k} {v:.1e}" for k, v in errors.items())
    return ok, detail, errors


def criterion_4(ctx: Context):
    metrics = {}
    _, reports = _single_grid(ctx, 1.0)
    expected = 4 * V0 * np.exp(-2.0)
    metrics["grid_max_error_r1"] = _max(np.max(np.abs(rep.noise_variances - expected)) for _, rep in reports)
    r44 = 0.44 * np.log(10.0) / 2
    _, reports44 = _single_grid(ctx, r44)
    expected44 = 4 * V0 * np.exp(-2 * r44)
    metrics["grid_max_error_-4.4dB"] = _max(np.max(np.abs(rep.noise_variances - expected44)) for _, rep in reports44)
    noise44 = float(np.mean([rep.noise_variances for _, rep in reports44]))
    metrics["noise_db_at_-4.4dB"] = float(to_db(noise44))
    _, reports0 = _single_grid(ctx, 0.0)
    metrics["grid_max_error_r0"] = _max(np.max(np.abs(rep.noise_variances - 4 * V0)) for _, rep in reports0)
    vac, _ = jittered_gate_noise(QuadratureVariancePair(V0, V0), 0.0, samples=1)
    opo0 = float(gate_noise_vs_pump([0.0], PAPER_PARAMS).gate_noise[0])
    metrics["noise_at_r0_executor"] = vac
    metrics["noise_at_r0_opo"] = opo0
    metrics["noise_db_at_r0"] = float(to_db(vac))
    ok = (
        metrics["grid_max_error_r1"] <= EXACT_TOL
        and metrics["grid_max_error_-4.4dB"] <= EXACT_TOL
        and metrics["grid_max_error_r0"] <= EXACT_TOL
        and abs(metrics["noise_db_at_-4.4dB"] - 1.6) <= 0.05
        and abs(vac - 4 * V0) <= EXACT_TOL
        and abs(opo0 - 4 * V0) <= EXACT_TOL
        and abs(metrics["noise_db_at_r0"] - 6.0) <= 0.05
    )
    detail = (
        f"grid error {max(metrics['grid_max_error_r1'], metrics['grid_max_error_-4.4dB'], metrics['grid_max_error_r0']):.1e}, "
        f"{metrics['noise_db_at_-4.4dB']:+.3f} dB at -4.4 dB sources, {metrics['noise_db_at_r0']:+.3f} dB at r=0"
    )
    return ok, detail, metrics


def criterion_5(ctx: Context):
    cluster = build_coiled_cluster(ClusterParams(N=N_MODES, K=GATE_K, r=1.0))
    entries = load_golden(GOLDEN_CZ).get("entries", {})
    s_err = f_err = d_err = 0.0
    problems = []
    for wire in WIRES:
        for g in CZ_GRID:
            spec = GateSpec("cz", g, wire=wire)
            key = cz_key(g, spec.parity)
            rep = gate_tomography(cluster, [spec], "det")
            for st in rep.statistics:
                ctx.log.add(f"{spec.describe()}", st.cov)
            s_err = max(s_err, float(np.max(np.abs(rep.S_hat - expected_symplectic(spec).entries))))
            entry = entries.get(key)
            if entry is None:
                problems.append(f"golden entry {key} missing")
                continue
            try:
                f_err = max(f_err, float(np.max(np.abs(rep.noise_factors - np.asarray(entry["noise_factors"], dtype=float)))))
                tr = derive_gate_transfer(spec, N_MODES)
                k0 = spec.input_k(N_MODES)
                derived = {relative_label(lab, k0): tr.D_local[:, j] for j, lab in enumerate(tr.labels)}
                golden = {lab: np.asarray(v, dtype=float) for lab, v in entry["D_local"].items()}
                for lab in set(derived) | set(golden):
                    a = derived.get(lab, np.zeros(4))
                    b = golden.get(lab, np.zeros(4))
                    d_err = max(d_err, float(np.max(np.abs(a - b))))
            except (KeyError, TypeError, ValueError) as exc:
                problems.append(f"golden entry {key} unreadable: {exc}")
    if f_err > GOLDEN_TOL:
        problems.append(f"noise factors differ from {GOLDEN_CZ} by {f_err:.1e}")
    if d_err > EXACT_TOL:
        problems.append(f"by-product table differs from {GOLDEN_CZ} by {d_err:.1e}")
    ok = s_err <= EXACT_TOL and not problems
    detail = f"S error {s_err:.1e}, factor error {f_err:.1e}, golden D error {d_err:.1e}"
    if problems:
        detail += "; " + "; ".join(problems[:3])
    return ok, detail, {"S_error": s_err, "factor_error": f_err, "D_error": d_err, "problems": problems}


def criterion_6(ctx: Context):
    cluster = build_coiled_cluster(ClusterParams(N=N_MODES, K=ENCODER_K, r=1.0))
    circuit = encoder_circuit()
    rep = gate_tomography(cluster, circuit, "det")
    for st in rep.statistics:
        ctx.log.add("encoder", st.cov)
    expected = compose_circuit(circuit, N=N_MODES)
    s_err = float(np.max(np.abs(rep.S_hat - expected.G.entries)))
    n_err = float(np.max(np.abs(rep.noise_variances - expected.noise_factors * cluster.params.squeezed_variance)))
    ok = s_err <= EXACT_TOL and n_err <= EXACT_TOL
    return ok, f"{len(circuit)} gates, S error {s_err:.1e}, noise error {n_err:.1e}", {"S_error": s_err, "noise_error": n_err}


def _mc_gate(spec: GateSpec, seed: int):
    """z-scores of sampled port covariances and S_hat against exact values."""
    cluster = build_coiled_cluster(ClusterParams(N=N_MODES, K=GATE_K, r=1.0))
    schedule = compile_schedule([spec], cluster.params, probes_per_parity=1)
    model = measurement_model(cluster.indexer, schedule)
    table, _ = derive_tables(cluster, schedule, model)
    exact = run_deterministic(cluster, schedule, table, model)
    det = gate_tomography(cluster, [spec], "det", schedule=schedule)
    mc = gate_tomography(cluster, [spec], "mc", seed=seed, shots=MC_SHOTS, schedule=schedule)
    z_cov = []
    for quadrant, st in zip(QUADRANTS, mc.statistics):
        inst = schedule.with_quadrant(quadrant).instances[0]
        names = [n for _, (s, k) in _ports(inst) for n in st.labels if n[1:] == f"{s}[{k}]"]
        for i, a in enumerate(names):
            for b in names[i:]:
                z_cov.append((st.covariance(a, b) - exact.covariance(a, b)) / st.std_error(a, b))
    z_s = ((mc.S_hat - det.S_hat) / mc.S_std_error).ravel()
    return np.array(z_cov), z_s


def criterion_7(ctx: Context):
    worst, counts, per_gate = 0.0, 0, {}
    for i, spec in enumerate(MC_GATES):
        z_cov, z_s = _mc_gate(spec, ACCEPTANCE_SEED + i)
        m = float(max(np.max(np.abs(z_cov)), np.max(np.abs(z_s))))
        per_gate[spec.describe()] = {"max_abs_z_cov": float(np.max(np.abs(z_cov))), "max_abs_z_S": float(np.max(np.abs(z_s))), "comparisons": len(z_cov) + len(z_s)}
        worst = max(worst, m)
        counts += len(z_cov) + len(z_s)
    ok = worst <= Z_LIMIT
    return ok, f"{counts} comparisons at {MC_SHOTS} shots, max |z| {worst:.2f}", per_gate


def criterion_8(ctx: Context):
    spec = GateSpec("rotation", 0.3, wire=0)
    cluster = build_coiled_cluster(ClusterParams(N=N_MODES, K=GATE_K, r=1.0))
    D, labels = displacement_matrix_single(spec, N_MODES)
    z_analytic, z_predictor = [], []
    for qi, (q, quadrant) in enumerate((("x", ("x", "p")), ("p", ("p", "x")))):
        schedule = compile_schedule([spec], cluster.params, quadrant, probes_per_parity=0)
        model = measurement_model(cluster.indexer, schedule)
        name = f"{q}B[{schedule.instances[0].outputs[0]}]"
        rec = run_sampled(cluster, schedule, ACCEPTANCE_SEED, MC_SHOTS, first_shot=qi * MC_SHOTS, model=model)
        cal = calibrate_displacement(rec, name, labels)
        blp, _ = best_linear_predictor(cluster, model, name, labels)
        z_analytic.extend((cal.coefficients - D[qi]) / cal.std_errors)
        z_predictor.extend((cal.coefficients - blp) / cal.std_errors)
    za, zp = float(np.max(np.abs(z_analytic))), float(np.max(np.abs(z_predictor)))
    ok = za <= Z_LIMIT
    detail = f"max |z| vs analytic by-product {za:.1f}; vs best linear predictor {zp:.2f}"
    return ok, detail, {"max_abs_z_analytic": za, "max_abs_z_predictor": zp, "coefficients": len(z_analytic)}


def criterion_9(ctx: Context):
    m = {}
    p0 = mode_variances(PAPER_PARAMS.with_pump(0.0))
    e0 = mode_variances(replace(PAPER_PARAMS, eta=0.0, pump=0.5))
    m["vacuum_error"] = _max(abs(v - V0) for v in (p0.var_x, p0.var_p, e0.var_x, e0.var_p))
    worst_product = np.inf
    for eta in (0.2, 0.4, 0.6, 0.777, 1.0):
        for pump in np.linspace(0.0, 0.95, 20):
            q = mode_variances(replace(PAPER_PARAMS, eta=eta, pump=float(pump)))
            ctx.log.add(f"opo eta={eta} pump={pump:.3f}", np.diag([q.var_x, q.var_p]))
            worst_product = min(worst_product, q.product - V0**2)
    m["min_product_excess"] = float(worst_product)
    pump = find_pump_for_squeezing(-4.4, PAPER_PARAMS)
    q = mode_variances(PAPER_PARAMS.with_pump(pump))
    m["calibrated_pump"] = pump
    m["calibrated_var_p_db"] = float(q.db[1])
    wide = replace(PAPER_PARAMS, gamma=2 * np.pi * 100e6, pump=pump)
    qw = mode_variances(wide)
    m["wide_var_p_db"] = float(qw.db[1])
    ordering = qw.var_p < q.var_p
    ok = m["vacuum_error"] <= OPO_TOL and worst_product >= -EXACT_TOL and abs(m["calibrated_var_p_db"] + 4.4) <= 1e-6 and ordering
    detail = (
        f"vacuum error {m['vacuum_error']:.1e}, min product excess {worst_product:.2e}, "
        f"pump {pump:.4f} gives {m['calibrated_var_p_db']:.4f} dB, 100 MHz gives {m['wide_var_p_db']:.3f} dB"
    )
    return ok, detail, m


def criterion_10(ctx: Context):
    worst, worst_src = np.inf, None
    for src, cov in ctx.log.entries:
        nu = float(symplectic_eigenvalues(cov).min())
        if nu < worst:
            worst, worst_src = nu, src
    ok = bool(ctx.log.entries) and worst >= V0 - EXACT_TOL
    detail = f"{len(ctx.log.entries)} covariances, smallest symplectic eigenvalue {worst:.6f} ({worst_src})"
    return ok, detail, {"covariances": len(ctx.log.entries), "min_symplectic_eigenvalue": worst, "source": worst_src}


REPRO_CONFIGS = {
    "tomography": "experiment = tomography-single\nmode = mc\nshots = 5000\ngate = squeeze\nvalues = -0.3, 0.3\nfigures = false\nseed = 7\n",
    "nullifiers": "experiment = nullifiers\nmode = mc\nshots = 3000\nK = 48\nr_values = 0.5, 1\nfigures = false\nseed = 7\n",
}


def criterion_11(ctx: Context):
    from .cli import main

    mismatches, compared = [], 0
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        for name, text in REPRO_CONFIGS.items():
            cfg = tmp / f"{name}.cfg"
            cfg.write_text(text)
            runs = {}
            for tag, workers in (("a", 1), ("b", 1), ("c", 8)):
                out = tmp / f"{name}_{tag}"
                with contextlib.redirect_stdout(io.StringIO()):
                    status = main(["--config", str(cfg), "--out", str(out), "--workers", str(workers)])
                if status != 0:
                    mismatches.append(f"{name} run {tag} exited {status}")
                runs[tag] = {p.name: p.read_bytes() for p in sorted(out.glob("*.csv"))}
            for tag in ("b", "c"):
                if runs[tag].keys() != runs["a"].keys():
                    mismatches.append(f"{name}: file sets differ ({tag})")
                for f, data in runs["a"].items():
                    compared += 1
                    if runs[tag].get(f) != data:
                        mismatches.append(f"{name}/{f} differs ({tag})")
    ok = not mismatches and compared > 0
    detail = f"{compared} CSV comparisons, {len(mismatches)} mismatches"
    return ok, detail, {"mismatches": mismatches}


CRITERIA = {
    1: ("nullifier closed forms", criterion_1),
    2: ("wire projection nullifiers", criterion_2),
    3: ("single-mode tomography round trip", criterion_3),
    4: ("single-mode gate-noise law", criterion_4),
    5: ("CZ tomography and golden table", criterion_5),
    6: ("encoder circuit", criterion_6),
    7: ("sampled versus exact statistics", criterion_7),
    8: ("displacement regression", criterion_8),
    9: ("OPO temporal-mode model", criterion_9),
    10: ("physicality sweep", criterion_10),
    11: ("reproducibility", criterion_11),
}


def run_criterion(number: int, ctx: Context | None = None) -> CriterionResult:
    ctx = ctx or Context()
    name, fn = CRITERIA[number]
    start = time.perf_counter()
    try:
        ok, detail, metrics = fn(ctx)
    except Exception as exc:  # a crash is reported as a failure of this criterion
        ok, detail, metrics = False, f"{type(exc).__name__}: {exc}", {"traceback": traceback.format_exc()}
    seconds = time.perf_counter() - start
    limit = TIME_LIMITS.get(number)
    if limit is not None and seconds > limit:
        ok, detail = False, f"{detail}; exceeded {limit:g} s"
    return CriterionResult(number, name, bool(ok), detail, seconds, metrics)


def run_suite(quick: bool = False, numbers=None, progress=None) -> list[CriterionResult]:
    """Run the selected criteria in order, sharing one covariance log."""
    numbers = tuple(numbers) if numbers is not None else (QUICK if quick else tuple(CRITERIA))
    ctx = Context()
    results = []
    for n in numbers:
        res = run_criterion(n, ctx)
        results.append(res)
        if progress is not None:
            progress(res)
    return results


def format_report(results) -> str:
    lines = [r.line() for r in results]
    passed = sum(r.passed for r in results)
    lines.append(f"{passed}/{len(results)} criteria passed")
    return "\n".join(lines)
