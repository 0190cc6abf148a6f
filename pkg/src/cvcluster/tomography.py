"""Gate tomography from output-reference correlations.

Each circuit input is one half of a wire segment whose other half is the
reference. The compensated input and reference satisfy
<x_in x_ref> = <p_in p_ref> = 0 and <p_in x_ref> = <x_in p_ref> = eps, so
correlating outputs with references and dividing by eps recovers the
implemented symplectic matrix.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .cluster import CoiledCluster
from .compiler import QUADRANTS, BasisSchedule, CircuitInstance, compile_schedule
from .errors import DivisionDegenerate
from .gaussian import V0, symplectic_eigenvalues
from .executor import (
    DisplacementTable,
    JointStatistics,
    compensate,
    derive_tables,
    measurement_model,
    quad_name,
    run_deterministic,
    run_sampled,
    sampled_statistics,
)

N_BATCHES = 10
PARITIES = {1: "even", -1: "odd"}


@dataclass
class PortCorrelations:
    """Correlations keyed by port, e.g. ``(("out", 0, "x"), ("ref", 1, "p"))``.

    Entries from several runs or chained repetitions are pooled by mean;
    standard errors combine in quadrature.
    """

    values: dict = field(default_factory=dict)

    def add(self, key, value: float, se: float = 0.0):
        self.values.setdefault(key, []).append((float(value), float(se)))

    def get(self, a, b) -> tuple[float, float]:
        for key in ((a, b), (b, a)):
            if key in self.values:
                vals = self.values[key]
                v = np.mean([x for x, _ in vals])
                se = np.sqrt(sum(s * s for _, s in vals)) / len(vals)
                return float(v), float(se)
        raise KeyError(f"correlation {a} x {b} not available")

    def has(self, a, b) -> bool:
        return (a, b) in self.values or (b, a) in self.values

    def merge(self, other: "PortCorrelations") -> "PortCorrelations":
        out = PortCorrelations({k: list(v) for k, v in self.values.items()})
        for k, vals in other.values.items():
            out.values.setdefault(k, []).extend(vals)
        return out


def _ports(instance: CircuitInstance):
    ports = []
    for i, k in enumerate(instance.outputs):
        ports.append((("out", i), ("B", k)))
    for j, k in enumerate(instance.references):
        ports.append((("ref", j), ("A", k)))
    return ports


def port_correlations(stats: JointStatistics, instance: CircuitInstance) -> PortCorrelations:
    """Every available pairwise correlation among an instance's ports."""
    pc = PortCorrelations()
    entries = []
    for port, (s, k) in _ports(instance):
        for q in ("x", "p"):
            name = quad_name(q, s, k)
            if stats.has(name):
                entries.append((port + (q,), name))
    for a in range(len(entries)):
        for b in range(a, len(entries)):
            ka, na = entries[a]
            kb, nb = entries[b]
            pc.add((ka, kb), stats.covariance(na, nb), stats.std_error(na, nb))
    return pc


@dataclass(frozen=True)
class EpsilonEstimate:
    """Input-reference correlation per wire parity (1 even, -1 odd)."""

    value: dict
    uncertainty: dict
    std_error: dict
    samples: dict

    def for_parity(self, parity: int) -> float:
        return self.value[parity]

    def to_json(self) -> dict:
        return {
            PARITIES[p]: {"value": self.value[p], "sd": self.uncertainty[p], "se": self.std_error[p], "n": len(self.samples[p])}
            for p in self.value
        }


def _probe_corr(stats: JointStatistics, probe, a: str, b: str):
    na, nb = quad_name(a[0], "B", probe.k_input), quad_name(b[0], "A", probe.k_reference)
    if a[1] == "ref":
        na = quad_name(a[0], "A", probe.k_reference)
    if b[1] == "in":
        nb = quad_name(b[0], "B", probe.k_input)
    if stats.has(na) and stats.has(nb):
        return stats.covariance(na, nb), stats.std_error(na, nb)
    return None


def estimate_epsilon(stats_list, probes) -> EpsilonEstimate:
    """Pool <p_in x_ref> and <x_in p_ref> of untouched probe segments.

    ``stats_list`` is one JointStatistics or a list of them (one per run).
    The uncertainty is the SD across probe repetitions; with fewer than two
    repetitions it is NaN and a warning is issued.
    """
    if isinstance(stats_list, JointStatistics):
        stats_list = [stats_list]
    samples = {1: [], -1: []}
    ses = {1: [], -1: []}
    for stats in stats_list:
        for probe in probes:
            for a, b in ((("p", "in"), ("x", "ref")), (("x", "in"), ("p", "ref"))):
                got = _probe_corr(stats, probe, a, b)
                if got is not None:
                    samples[probe.parity].append(got[0])
                    ses[probe.parity].append(got[1])
    value, sd, se = {}, {}, {}
    for p in (1, -1):
        if not samples[p]:
            continue
        v = np.array(samples[p])
        value[p] = float(v.mean())
        if v.size < 2:
            warnings.warn(f"single epsilon repetition for {PARITIES[p]} wires; no uncertainty")
            sd[p] = float("nan")
        else:
            sd[p] = float(v.std(ddof=1))
        se[p] = float(np.sqrt(np.sum(np.square(ses[p]))) / v.size)
    return EpsilonEstimate(value, sd, se, {p: list(samples[p]) for p in value})


def input_variance_estimate(stats_list, probes) -> dict:
    """Marginal (Var x_in, Var p_in, <x_in p_in>) per parity from probes.

    Returns ``{parity: {"var_x", "var_p", "cov_xp", "sd_x", "sd_p", "se_x", "se_p"}}``.
    """
    if isinstance(stats_list, JointStatistics):
        stats_list = [stats_list]
    acc = {}
    for stats in stats_list:
        for probe in probes:
            d = acc.setdefault(probe.parity, {"x": [], "p": [], "xp": [], "se_x": [], "se_p": []})
            for q in ("x", "p"):
                name = quad_name(q, "B", probe.k_input)
                if stats.has(name):
                    d[q].append(stats.covariance(name, name))
                    d["se_" + q].append(stats.std_error(name, name))
            nx, npp = quad_name("x", "B", probe.k_input), quad_name("p", "B", probe.k_input)
            if stats.has(nx) and stats.has(npp):
                d["xp"].append(stats.covariance(nx, npp))
    out = {}
    for p, d in acc.items():
        res = {}
        for q in ("x", "p"):
            v = np.array(d[q])
            res["var_" + q] = float(v.mean())
            res["sd_" + q] = float(v.std(ddof=1)) if v.size > 1 else float("nan")
            res["se_" + q] = float(np.sqrt(np.sum(np.square(d["se_" + q]))) / v.size)
        res["cov_xp"] = float(np.mean(d["xp"])) if d["xp"] else 0.0
        out[p] = res
    return out


def _parities(instance: CircuitInstance):
    return [-1 if w % 2 else 1 for w in instance.wires]


def estimate_symplectic(corr: PortCorrelations, epsilon: EpsilonEstimate, instance: CircuitInstance, eps_se: bool = True):
    """S_hat and its standard errors from output-reference correlations.

    S[i][j] = <x_i p_ref_j>/eps_j, S[i][n+j] = <x_i x_ref_j>/eps_j,
    S[n+i][j] = <p_i p_ref_j>/eps_j, S[n+i][n+j] = <p_i x_ref_j>/eps_j.
    """
    n = len(instance.outputs)
    S = np.zeros((2 * n, 2 * n))
    SE = np.zeros((2 * n, 2 * n))
    for j, parity in enumerate(_parities(instance)):
        eps = epsilon.value.get(parity, 0.0)
        if abs(eps) < 1e-14:
            raise DivisionDegenerate(f"epsilon vanishes for {PARITIES[parity]} wires")
        e_se = epsilon.std_error.get(parity, 0.0) if eps_se else 0.0
        for i in range(n):
            for oq, row in (("x", i), ("p", n + i)):
                for rq, col in (("p", j), ("x", n + j)):
                    c, c_se = corr.get(("out", i, oq), ("ref", j, rq))
                    S[row, col] = c / eps
                    SE[row, col] = np.sqrt((c_se / eps) ** 2 + (c * e_se / eps**2) ** 2)
    return S, SE


def input_covariance(instance: CircuitInstance, inputs: dict) -> np.ndarray:
    n = len(instance.inputs)
    C = np.zeros((2 * n, 2 * n))
    for j, parity in enumerate(_parities(instance)):
        v = inputs[parity]
        C[j, j], C[n + j, n + j] = v["var_x"], v["var_p"]
        C[j, n + j] = C[n + j, j] = v["cov_xp"]
    return C


def estimate_gate_noise(S_hat: np.ndarray, output_variances: np.ndarray, input_cov: np.ndarray) -> np.ndarray:
    """Added noise per output quadrature: Var(out) - diag(S C_in S^T)."""
    return np.asarray(output_variances) - np.diag(S_hat @ input_cov @ S_hat.T)


def output_variances(corr: PortCorrelations, n: int):
    vals, ses = [], []
    for q in ("x", "p"):
        for i in range(n):
            v, se = corr.get(("out", i, q), ("out", i, q))
            vals.append(v)
            ses.append(se)
    return np.array(vals), np.array(ses)


@dataclass
class TransferReport:
    """Estimated transfer of an executed circuit."""

    name: str
    gates: list
    S_hat: np.ndarray
    S_std_error: np.ndarray
    noise_variances: np.ndarray
    noise_std_error: np.ndarray
    squeezed_variance: float
    input_variances: dict
    epsilon: EpsilonEstimate
    displacement: dict
    provenance: dict
    S_batch_error: np.ndarray | None = None
    inconsistent_noise: bool = False
    statistics: tuple = field(default=(), repr=False)

    @property
    def noise_factors(self) -> np.ndarray:
        return self.noise_variances / self.squeezed_variance

    def to_json(self) -> dict:
        def arr(a):
            return None if a is None else np.asarray(a).tolist()

        return {
            "name": self.name,
            "gates": self.gates,
            "S_hat": arr(self.S_hat),
            "S_std_error": arr(self.S_std_error),
            "S_batch_error": arr(self.S_batch_error),
            "noise_variances": arr(self.noise_variances),
            "noise_std_error": arr(self.noise_std_error),
            "noise_factors": arr(self.noise_factors),
            "squeezed_variance": self.squeezed_variance,
            "input_variances": {PARITIES[p]: v for p, v in self.input_variances.items()},
            "epsilon": self.epsilon.to_json(),
            "displacement": self.displacement,
            "inconsistent_noise": self.inconsistent_noise,
            "provenance": self.provenance,
        }


def _report(name, instance, corr, eps, inputs, table, cluster, provenance, batch_error=None, statistics=()):
    n = len(instance.outputs)
    S, SE = estimate_symplectic(corr, eps, instance)
    out_var, out_se = output_variances(corr, n)
    C_in = input_covariance(instance, inputs)
    noise = estimate_gate_noise(S, out_var, C_in)
    flag = bool(np.any(noise < -3 * np.maximum(out_se, 1e-12)))
    outputs = [quad_name(q, "B", k) for q in ("x", "p") for k in instance.outputs]
    disp = {q: table.nonzero(q) for q in outputs}
    return TransferReport(
        name, [g.describe() for g in instance.gates], S, SE, noise, out_se,
        cluster.params.squeezed_variance, inputs, eps, disp, provenance, batch_error, flag, tuple(statistics),
    )


def gate_tomography(cluster: CoiledCluster, circuit, mode: str = "det", seed: int = 0, shots: int = 100_000, workers: int = 1, schedule: BasisSchedule | None = None) -> TransferReport:
    """Tomography of one placed circuit.

    ``det`` reads every correlation from the exact compensated covariance.
    ``mc`` runs the four readout quadrants as separate sampled runs, each
    on its own block of shot indices, and pools the correlations.
    """
    schedule = schedule or compile_schedule(circuit, cluster.params)
    (instance,) = schedule.instances
    model = measurement_model(cluster.indexer, schedule)
    table, _ = derive_tables(cluster, schedule, model)
    if mode == "det":
        stats = run_deterministic(cluster, schedule, table, model)
        corr = port_correlations(stats, instance)
        eps = estimate_epsilon(stats, schedule.probes)
        inputs = input_variance_estimate(stats, schedule.probes)
        prov = {"mode": "deterministic", "N": cluster.params.N, "K": cluster.params.K}
        return _report(instance.name, instance, corr, eps, inputs, table, cluster, prov, statistics=(stats,))
    if mode != "mc":
        raise ValueError(f"mode must be 'det' or 'mc', got {mode!r}")
    corr = PortCorrelations()
    stats_all, records_all = [], []
    for qi, quadrant in enumerate(QUADRANTS):
        sched_q = schedule.with_quadrant(quadrant)
        rec = compensate(run_sampled(cluster, sched_q, seed, shots, workers, first_shot=qi * shots), table)
        stats = sampled_statistics(rec)
        stats_all.append(stats)
        records_all.append((sched_q, rec))
        corr = corr.merge(port_correlations(stats, sched_q.instances[0]))
    eps = estimate_epsilon(stats_all, schedule.probes)
    inputs = input_variance_estimate(stats_all, schedule.probes)
    batch = _batch_error(records_all, instance, schedule)
    prov = {"mode": "sampled", "seed": seed, "shots_per_quadrant": shots, "N": cluster.params.N, "K": cluster.params.K}
    return _report(instance.name, instance, corr, eps, inputs, table, cluster, prov, batch, stats_all)


def _batch_error(records_all, instance, schedule, n_batches: int = N_BATCHES):
    """Spread of S_hat over shot batches, divided by sqrt(n_batches)."""
    shots = records_all[0][1].shots
    if shots < 2 * n_batches:
        return None
    edges = np.linspace(0, shots, n_batches + 1).astype(int)
    estimates = []
    for b in range(n_batches):
        corr = PortCorrelations()
        stats_all = []
        for sched_q, rec in records_all:
            sl = slice(edges[b], edges[b + 1])
            sub = replace(rec, raw=rec.raw[sl], outcomes=rec.outcomes[sl], kept=rec.kept[sl], compensated=rec.compensated[sl], shot_index=rec.shot_index[sl])
            stats = sampled_statistics(sub)
            stats_all.append(stats)
            corr = corr.merge(port_correlations(stats, sched_q.instances[0]))
        eps = estimate_epsilon(stats_all, schedule.probes)
        S, _ = estimate_symplectic(corr, eps, instance)
        estimates.append(S)
    return np.std(estimates, axis=0, ddof=1) / np.sqrt(n_batches)


def layout_tomography(cluster: CoiledCluster, schedule: BasisSchedule, repetitions: int = 4, mode: str = "det", seed: int = 0, shots: int = 10_000, workers: int = 1) -> list[TransferReport]:
    """Tomography of a chained layout: consecutive groups of ``repetitions``
    instances are copies of one gate read in complementary quadrants."""
    model = measurement_model(cluster.indexer, schedule)
    table, _ = derive_tables(cluster, schedule, model)
    if mode == "det":
        stats = run_deterministic(cluster, schedule, table, model)
        prov = {"mode": "deterministic"}
    else:
        stats = sampled_statistics(compensate(run_sampled(cluster, schedule, seed, shots, workers, model=model), table))
        prov = {"mode": "sampled", "seed": seed, "shots": shots}
    eps = estimate_epsilon(stats, schedule.probes)
    inputs = input_variance_estimate(stats, schedule.probes)
    reports = []
    insts = schedule.instances
    for g0 in range(0, len(insts), repetitions):
        group = insts[g0 : g0 + repetitions]
        corr = PortCorrelations()
        for inst in group:
            corr = corr.merge(port_correlations(stats, inst))
        reports.append(_report(group[0].name, group[0], corr, eps, inputs, table, cluster, prov))
    return reports


def epsilon_prediction(segment_cov: np.ndarray, squeezed_variance: float, parity: int) -> float:
    """Closed-form eps of a pure wire segment.

    With s = sqrt(2) e^{-r} and a = (nu/V0)^2 from the segment's symplectic
    eigenvalue nu, eps = -parity (a/s^2 - s^2) V0 / 2. Once a > s^4, which
    holds for all but weak squeezing, even wires carry eps < 0.
    """
    nu = symplectic_eigenvalues(np.asarray(segment_cov))
    a = (float(np.mean(nu)) / V0) ** 2
    s2 = 2 * squeezed_variance / V0
    return -parity * 0.5 * (a / s2 - s2) * V0
