"""Experiment runners behind the command line.

Each runner writes CSV tables, a JSON report and (optionally) figures into
the output directory and returns the list of written paths plus extra
manifest entries. CSV numbers use ``repr`` so identical inputs give
identical bytes.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cluster import (
    ClusterParams,
    build_coiled_cluster,
    expected_nullifier_variance,
    nullifier_rows,
    nullifier_variances,
    project_wires,
)
from .compiler import (
    GateSpec,
    compile_schedule,
    compose_circuit,
    displacement_matrix_single,
    encoder_circuit,
    expected_noise_factors,
    expected_symplectic,
)
from .config import RunConfig
from .errors import InvalidArgument
from .executor import (
    best_linear_predictor,
    calibrate_displacement,
    measurement_model,
    run_sampled,
    sample_functionals,
)
from .gaussian import V0, to_db
from .opo import OpoParams, find_pump_for_squeezing, gate_noise_vs_pump, mode_variances
from .tomography import gate_tomography

CSV_COLUMNS = {
    "nullifiers": {
        "nullifiers.csv": "r, convention, k, nullifier (A|B), variance, expected, std_error (mc only, else 0)",
        "wire_nullifiers.csv": "r, k, wire, nullifier (A|B), variance, expected",
    },
    "tomography-single": {
        "transfer.csv": "gate, param, wire, parity, entry (S11..S22), value, std_error, expected",
        "noise.csv": "gate, param, wire, quadrature, noise_variance, noise_db, std_error, expected",
        "epsilon.csv": "gate, param, wire, parity, epsilon, sd",
    },
    "tomography-cz": {
        "transfer.csv": "g, wire, parity, entry (S11..S44), value, std_error, expected",
        "noise.csv": "g, wire, quadrature, noise_variance, noise_factor, std_error, expected_factor",
    },
    "circuit-encoder": {
        "transfer.csv": "entry (S11..S66), value, std_error, expected",
        "noise.csv": "quadrature, noise_variance, noise_factor, std_error, expected_factor",
    },
    "noise-sweep": {
        "noise_curve.csv": "pump, var_x_dB, var_p_dB, gate_noise_dB, gate_noise_jitter_dB, jitter_std_error",
    },
    "calibrate-D": {
        "regression.csv": "quadrature, label, coefficient, std_error, analytic, best_linear_predictor, z_analytic, z_predictor",
    },
}


def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path: Path, header, rows) -> Path:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) for v in row])
    path.write_text(buf.getvalue())
    return path


def write_json(path: Path, obj) -> Path:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True, default=_json_default) + "\n")
    return path


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(f"cannot serialize {type(o).__name__}")


@dataclass
class Outcome:
    files: list = field(default_factory=list)
    manifest: dict = field(default_factory=dict)
    summary: dict = field(default_factory=dict)


def opo_params(cfg: RunConfig) -> OpoParams:
    return OpoParams(
        eta=cfg.opo_eta, gamma=cfg.opo_gamma, kappa=cfg.opo_kappa, tau=cfg.opo_tau,
        pump=0.0, phase_jitter_deg=float(np.rad2deg(cfg.phase_jitter)),
    )


def cluster_params(cfg: RunConfig, out: Outcome, r: float | None = None) -> ClusterParams:
    """Pure-r parameters, or OPO temporal-mode variances when source = opo."""
    if cfg.source == "pure":
        return ClusterParams(N=cfg.N, K=cfg.K, r=cfg.r if r is None else r, edge_convention=cfg.edge_convention)
    params = opo_params(cfg)
    pump = cfg.opo_pump
    if pump is None:
        pump = find_pump_for_squeezing(cfg.squeezing_db, params)
    q = mode_variances(params.with_pump(pump))
    out.manifest["opo_calibration"] = {
        "pump": pump,
        "target_squeezing_db": None if cfg.opo_pump is not None else cfg.squeezing_db,
        "var_x": q.var_x,
        "var_p": q.var_p,
        "var_x_db": q.db[0],
        "var_p_db": q.db[1],
    }
    return ClusterParams(N=cfg.N, K=cfg.K, r=cfg.r, edge_convention=cfg.edge_convention, source_variances=(q.var_p, q.var_x))


def run_nullifiers(cfg: RunConfig, out_dir: Path) -> Outcome:
    out = Outcome()
    rows, wire_rows, plot_rows = [], [], []
    for r in cfg.r_values:
        params = ClusterParams(N=cfg.N, K=cfg.K, r=r)
        cluster = build_coiled_cluster(params)
        ix = cluster.indexer
        for conv in ("cluster_type", "approximate"):
            t = 0.5 if conv == "cluster_type" else 0.5 * np.tanh(2 * r)
            var = nullifier_variances(cluster.state, ix, conv, r)
            expected = expected_nullifier_variance(r, conv)
            se = np.zeros_like(var)
            if cfg.mode == "mc":
                nrows = []
                for k in ix.interior():
                    nr = nullifier_rows(ix, k, t)
                    nrows += [nr["A"], nr["B"]]
                samples = sample_functionals(cluster, np.array(nrows), cfg.seed, cfg.shots, cfg.workers)
                var = samples.var(axis=0, ddof=1).reshape(-1, 2)
                se = var * np.sqrt(2.0 / (cfg.shots - 1))
            for (k, v, e) in zip(ix.interior(), var, se):
                for j, lab in enumerate("AB"):
                    rows.append((r, conv, k, lab, v[j], expected, e[j]))
            plot_rows.append((r, conv, float(np.mean(var)), expected))
        proj = project_wires(cluster)
        for seg in proj.segments:
            for j, lab in enumerate("AB"):
                wire_rows.append((r, seg.k, seg.wire, lab, seg.nullifier_variances[j], 4 * V0 * np.exp(-2 * r)))
        out.summary[f"r={r:g}"] = {
            "max_abs_error_cluster_type": max(abs(row[4] - row[5]) for row in rows if row[0] == r and row[1] == "cluster_type"),
            "max_abs_error_approximate": max(abs(row[4] - row[5]) for row in rows if row[0] == r and row[1] == "approximate"),
            "max_abs_error_wire": max(abs(row[4] - row[5]) for row in wire_rows if row[0] == r),
        }
    out.files.append(write_csv(out_dir / "nullifiers.csv", ["r", "convention", "k", "nullifier", "variance", "expected", "std_error"], rows))
    out.files.append(write_csv(out_dir / "wire_nullifiers.csv", ["r", "k", "wire", "nullifier", "variance", "expected"], wire_rows))
    if cfg.figures:
        from .plotting import plot_nullifiers

        out.files.append(plot_nullifiers(plot_rows, out_dir / "nullifiers.png"))
    return out


def _entry_rows(prefix, S, SE, E):
    n = S.shape[0]
    for i in range(n):
        for j in range(n):
            yield prefix + (f"S{i + 1}{j + 1}", S[i, j], SE[i, j], E[i, j])


def _tomography(cluster, circuit, cfg):
    schedule = compile_schedule(circuit, cluster.params, probes_per_parity=cfg.probes_per_parity)
    return gate_tomography(cluster, circuit, cfg.mode, cfg.seed, cfg.shots, cfg.workers, schedule)


def run_tomography_single(cfg: RunConfig, out_dir: Path) -> Outcome:
    out = Outcome()
    params = cluster_params(cfg, out)
    cluster = build_coiled_cluster(params)
    transfer, noise, eps_rows, reports = [], [], [], []
    per_wire = {}
    for wire in cfg.wires:
        for param in cfg.values:
            spec = GateSpec(cfg.gate, float(param), wire=wire)
            rep = _tomography(cluster, [spec], cfg)
            E = expected_symplectic(spec).entries
            expected_noise = expected_noise_factors(spec) * params.squeezed_variance
            prefix = (cfg.gate, float(param), wire, "even" if spec.parity == 1 else "odd")
            transfer.extend(_entry_rows(prefix, rep.S_hat, rep.S_std_error, E))
            for qi, q in enumerate("xp"):
                v = rep.noise_variances[qi]
                noise.append((cfg.gate, float(param), wire, q, v, to_db(v) if v > 0 else float("nan"), rep.noise_std_error[qi], expected_noise[qi]))
            p = spec.parity
            eps_rows.append(prefix + (rep.epsilon.value[p], rep.epsilon.uncertainty[p]))
            reports.append(rep.to_json())
            per_wire.setdefault(wire, []).append((float(param), rep, E))
    out.files.append(write_csv(out_dir / "transfer.csv", ["gate", "param", "wire", "parity", "entry", "value", "std_error", "expected"], transfer))
    out.files.append(write_csv(out_dir / "noise.csv", ["gate", "param", "wire", "quadrature", "noise_variance", "noise_db", "std_error", "expected"], noise))
    out.files.append(write_csv(out_dir / "epsilon.csv", ["gate", "param", "wire", "parity", "epsilon", "sd"], eps_rows))
    out.files.append(write_json(out_dir / "reports.json", reports))
    out.summary = {
        "max_abs_S_error": max(abs(r[5] - r[7]) for r in transfer),
        "max_abs_noise_error": max(abs(r[4] - r[7]) for r in noise),
    }
    if cfg.figures:
        from .plotting import plot_noise, plot_symplectic_vs_parameter

        for wire, items in per_wire.items():
            prm = [p for p, _, _ in items]
            out.files.append(plot_symplectic_vs_parameter(
                prm, [r.S_hat for _, r, _ in items], [r.S_std_error for _, r, _ in items], [e for _, _, e in items],
                out_dir / f"symplectic_w{wire}.png", label=f"{cfg.gate} parameter",
            ))
        labels = [f"{r[0][:3]}({r[1]:.2f}) w{r[2]} {r[3]}" for r in noise]
        out.files.append(plot_noise(labels, [r[4] for r in noise], [r[6] for r in noise], [r[7] for r in noise],
                                    out_dir / "noise.png", reference_db=float(to_db(params.squeezed_variance))))
    return out


def run_tomography_cz(cfg: RunConfig, out_dir: Path) -> Outcome:
    out = Outcome()
    params = cluster_params(cfg, out)
    cluster = build_coiled_cluster(params)
    transfer, noise, reports = [], [], []
    for wire in cfg.wires:
        for g in cfg.g_values:
            spec = GateSpec("cz", float(g), wire=wire)
            rep = _tomography(cluster, [spec], cfg)
            E = expected_symplectic(spec).entries
            factors = expected_noise_factors(spec)
            parity = "even" if spec.parity == 1 else "odd"
            transfer.extend(_entry_rows((float(g), wire, parity), rep.S_hat, rep.S_std_error, E))
            for qi, q in enumerate(("x1", "x2", "p1", "p2")):
                noise.append((float(g), wire, q, rep.noise_variances[qi], rep.noise_factors[qi], rep.noise_std_error[qi], factors[qi]))
            reports.append(rep.to_json())
            if cfg.figures:
                from .plotting import plot_matrix

                out.files.append(plot_matrix(rep.S_hat, out_dir / f"cz_g{g:+.2f}_w{wire}.png", title=f"CZ g={g:g}, wire {wire}"))
    out.files.append(write_csv(out_dir / "transfer.csv", ["g", "wire", "parity", "entry", "value", "std_error", "expected"], transfer))
    out.files.append(write_csv(out_dir / "noise.csv", ["g", "wire", "quadrature", "noise_variance", "noise_factor", "std_error", "expected_factor"], noise))
    out.files.append(write_json(out_dir / "reports.json", reports))
    out.summary = {
        "max_abs_S_error": max(abs(r[4] - r[6]) for r in transfer),
        "max_abs_factor_error": max(abs(r[4] - r[6]) for r in noise),
    }
    if cfg.figures:
        from .plotting import plot_noise

        labels = [f"g={r[0]:+g} w{r[1]} {r[2]}" for r in noise]
        vs = params.squeezed_variance
        out.files.append(plot_noise(labels, [r[3] for r in noise], [r[5] for r in noise], [r[6] * vs for r in noise],
                                    out_dir / "noise.png", reference_db=float(to_db(vs))))
    return out


def run_circuit_encoder(cfg: RunConfig, out_dir: Path) -> Outcome:
    out = Outcome()
    params = cluster_params(cfg, out)
    cluster = build_coiled_cluster(params)
    circuit = encoder_circuit()
    rep = _tomography(cluster, circuit, cfg)
    expected = compose_circuit(circuit, N=params.N)
    E = expected.G.entries
    transfer = list(_entry_rows((), rep.S_hat, rep.S_std_error, E))
    n = len(expected.wires)
    names = [f"x{w}" for w in expected.wires] + [f"p{w}" for w in expected.wires]
    noise = [(names[i], rep.noise_variances[i], rep.noise_factors[i], rep.noise_std_error[i], expected.noise_factors[i]) for i in range(2 * n)]
    out.files.append(write_csv(out_dir / "transfer.csv", ["entry", "value", "std_error", "expected"], transfer))
    out.files.append(write_csv(out_dir / "noise.csv", ["quadrature", "noise_variance", "noise_factor", "std_error", "expected_factor"], noise))
    out.files.append(write_json(out_dir / "report.json", rep.to_json()))
    out.summary = {
        "max_abs_S_error": float(np.max(np.abs(rep.S_hat - E))),
        "max_abs_factor_error": float(np.max(np.abs(rep.noise_factors - expected.noise_factors))),
    }
    if cfg.figures:
        from .plotting import plot_matrix, plot_noise

        out.files.append(plot_matrix(rep.S_hat, out_dir / "encoder_matrix.png", title="encoder circuit"))
        vs = params.squeezed_variance
        out.files.append(plot_noise(names, rep.noise_variances, rep.noise_std_error, expected.noise_factors * vs,
                                    out_dir / "encoder_noise.png", reference_db=float(to_db(vs))))
    return out


def run_noise_sweep(cfg: RunConfig, out_dir: Path) -> Outcome:
    out = Outcome()
    params = opo_params(cfg)
    curve = gate_noise_vs_pump(cfg.pump_grid, params, jitter_samples=cfg.jitter_samples, seed=cfg.seed)
    rows = []
    for i, row in enumerate(curve.rows()):
        jit = row[4] if len(row) > 4 else float("nan")
        jse = float(curve.jitter_std_error[i]) if curve.jitter_std_error is not None else float("nan")
        rows.append(tuple(row[:4]) + (jit, jse))
    out.files.append(write_csv(out_dir / "noise_curve.csv", ["pump", "var_x_dB", "var_p_dB", "gate_noise_dB", "gate_noise_jitter_dB", "jitter_std_error"], rows))
    try:
        pump = find_pump_for_squeezing(cfg.squeezing_db, params)
    except InvalidArgument:
        pump = None
    out.manifest["opo_calibration"] = {"pump": pump, "target_squeezing_db": cfg.squeezing_db}
    out.summary = {"calibration_pump": pump, "gate_noise_db_at_zero_pump": rows[0][3] if rows[0][0] == 0 else None}
    if cfg.figures:
        from .plotting import plot_noise_curve

        out.files.append(plot_noise_curve(curve, out_dir / "noise_curve.png"))
    return out


def run_calibrate_d(cfg: RunConfig, out_dir: Path) -> Outcome:
    out = Outcome()
    params = cluster_params(cfg, out)
    cluster = build_coiled_cluster(params)
    spec = GateSpec(cfg.gate, float(cfg.param), wire=cfg.wire)
    D, labels = displacement_matrix_single(spec, params.N)
    rows = []
    coefs, ses, ana, blps, names = [], [], [], [], []
    for qi, (q, quadrant) in enumerate((("x", ("x", "p")), ("p", ("p", "x")))):
        schedule = compile_schedule([spec], params, quadrant, probes_per_parity=0)
        model = measurement_model(cluster.indexer, schedule)
        k_out = schedule.instances[0].outputs[0]
        name = f"{q}B[{k_out}]"
        blp, _ = best_linear_predictor(cluster, model, name, labels)
        if cfg.mode == "mc":
            rec = run_sampled(cluster, schedule, cfg.seed, cfg.shots, cfg.workers, first_shot=qi * cfg.shots, model=model)
            cal = calibrate_displacement(rec, name, labels, min_shots=min(10_000, cfg.shots))
            est, se = cal.coefficients, cal.std_errors
        else:
            est, se = blp, np.zeros(len(labels))
        for j, lab in enumerate(labels):
            z_a = (est[j] - D[qi, j]) / se[j] if se[j] > 0 else float("nan")
            z_p = (est[j] - blp[j]) / se[j] if se[j] > 0 else float("nan")
            rows.append((name, lab, est[j], se[j], D[qi, j], blp[j], z_a, z_p))
            coefs.append(est[j])
            ses.append(se[j])
            ana.append(D[qi, j])
            blps.append(blp[j])
            names.append(f"{q}:{lab}")
    out.files.append(write_csv(out_dir / "regression.csv", ["quadrature", "label", "coefficient", "std_error", "analytic", "best_linear_predictor", "z_analytic", "z_predictor"], rows))
    z = [abs(r[6]) for r in rows if np.isfinite(r[6])]
    out.summary = {"max_abs_z_vs_analytic": max(z) if z else None}
    if cfg.figures:
        from .plotting import plot_regression

        out.files.append(plot_regression(names, coefs, ses, ana, blps, out_dir / "regression.png"))
    return out


RUNNERS = {
    "nullifiers": run_nullifiers,
    "tomography-single": run_tomography_single,
    "tomography-cz": run_tomography_cz,
    "circuit-encoder": run_circuit_encoder,
    "noise-sweep": run_noise_sweep,
    "calibrate-D": run_calibrate_d,
}
