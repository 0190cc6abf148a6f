import numpy as np
import pytest

from cvcluster.cluster import ClusterParams, build_coiled_cluster
from cvcluster.compiler import GateSpec, compile_schedule, displacement_matrix_single
from cvcluster.errors import CalibrationSingular, CompensationIncomplete, InvalidArgument
from cvcluster.executor import (
    H,
    DisplacementTable,
    best_linear_predictor,
    calibrate_displacement,
    compensate,
    conditional_statistics,
    derive_gate_transfer,
    derive_tables,
    gate_window,
    jittered_model,
    measurement_model,
    run_deterministic,
    run_sampled,
    sample_functionals,
    sampled_statistics,
    shot_generator,
)
from cvcluster.gaussian import check_physical

SINGLE = [
    GateSpec("rotation", 0.6, wire=0),
    GateSpec("rotation", -0.9, wire=1),
    GateSpec("shear", 0.7, wire=0),
    GateSpec("shear", -1.1, wire=1),
    GateSpec("squeeze", 0.3, wire=0),
    GateSpec("identity", wire=1),
]


@pytest.fixture(scope="module")
def small_gate():
    """A rotation on the smallest window that holds it plus one probe per parity."""
    spec = GateSpec("rotation", 0.4, wire=0)
    params = ClusterParams(N=4, K=40, r=0.8)
    cluster = build_coiled_cluster(params)
    schedule = compile_schedule([spec], params, probes_per_parity=1)
    return cluster, schedule, measurement_model(cluster.indexer, schedule)


class TestMeasurementModel:
    def test_recombination(self, small_gate):
        _, _, model = small_gate
        assert np.allclose(model.outcome_rows, model.recombine @ model.raw_rows)

    def test_control_pair_recombines_before_beamsplitter(self, small_gate):
        cluster, schedule, model = small_gate
        ix = cluster.indexer
        pos = model.outcome_index()
        k = 1
        th = schedule.angle("A", k)
        assert np.allclose(model.outcome_rows[pos[f"mA[{k}]"]], ix.theta_row("A", k, th))
        assert np.allclose(model.outcome_rows[pos[f"mB[{k}]"]], ix.theta_row("B", k, th))

    def test_gate_pair_keeps_detector_values(self, small_gate):
        cluster, schedule, model = small_gate
        ix = cluster.indexer
        k = schedule.instances[0].inputs[0]
        pos = model.outcome_index()
        tA, tB = schedule.angle("A", k), schedule.angle("B", k)
        assert np.allclose(model.outcome_rows[pos[f"m-[{k}]"]], H * (ix.theta_row("A", k, tA) - ix.theta_row("B", k, tA)))
        assert np.allclose(model.outcome_rows[pos[f"m+[{k}]"]], H * (ix.theta_row("A", k, tB) + ix.theta_row("B", k, tB)))

    def test_zero_jitter_is_identity(self, small_gate):
        _, _, model = small_gate
        jm = jittered_model(model, np.zeros(len(model.raw_labels)))
        assert np.allclose(jm.raw_rows, model.raw_rows)

    def test_jitter_needs_one_offset_per_detector(self, small_gate):
        with pytest.raises(InvalidArgument):
            jittered_model(small_gate[2], np.zeros(3))

    def test_window_mismatch(self, small_gate):
        _, schedule, _ = small_gate
        other = build_coiled_cluster(ClusterParams(N=4, K=44, r=0.8))
        with pytest.raises(InvalidArgument):
            measurement_model(other.indexer, schedule)


class TestConditioning:
    def test_order_invariance(self, small_gate):
        cluster, schedule, model = small_gate
        n = len(model.raw_labels)
        a, _ = conditional_statistics(cluster.state, cluster.indexer, schedule)
        order = np.random.default_rng(3).permutation(n)
        b, _ = conditional_statistics(cluster.state, cluster.indexer, schedule, order=order)
        assert np.allclose(a.cov, b.cov, atol=1e-10)

    def test_forced_outcomes_leave_covariance_bit_equal(self, small_gate):
        cluster, schedule, model = small_gate
        forced = {lab: float(v) for lab, v in zip(model.raw_labels, np.random.default_rng(1).normal(size=len(model.raw_labels)))}
        a, _ = conditional_statistics(cluster.state, cluster.indexer, schedule)
        b, _ = conditional_statistics(cluster.state, cluster.indexer, schedule, outcomes=forced)
        assert np.array_equal(a.cov, b.cov)

    def test_conditioning_matches_schur_oracle(self, small_gate):
        cluster, schedule, model = small_gate
        names, kept = model.kept_rows()
        cond, _ = conditional_statistics(cluster.state, cluster.indexer, schedule)
        c = cluster.covariance_of(np.vstack([kept, model.raw_rows]))
        n = len(names)
        oracle = c[:n, :n] - c[:n, n:] @ np.linalg.solve(c[n:, n:], c[n:, :n])
        assert np.allclose(cond.cov, oracle, atol=1e-9)

    def test_compensation_is_never_better_than_conditioning(self, small_gate):
        cluster, schedule, model = small_gate
        det = run_deterministic(cluster, schedule, model=model)
        cond, _ = conditional_statistics(cluster.state, cluster.indexer, schedule)
        assert det.labels == cond.labels
        assert np.linalg.eigvalsh(det.cov - cond.cov).min() > -1e-9

    def test_outputs_of_sampled_conditioning_are_consistent(self, small_gate):
        """Sampled residuals after regression on every outcome match the conditional covariance."""
        cluster, schedule, model = small_gate
        cond, _ = conditional_statistics(cluster.state, cluster.indexer, schedule)
        rec = run_sampled(cluster, schedule, seed=11, shots=40_000, model=model)
        X = np.column_stack([np.ones(rec.shots), rec.raw])
        names = model.readout_names()
        for name in names:
            y = rec.column(name)
            beta, *_ = np.linalg.lstsq(X, y, rcond=None)
            var = np.var(y - X @ beta, ddof=X.shape[1])
            exact = cond.covariance(name, name)
            assert abs(var - exact) < 5 * exact * np.sqrt(2 / rec.shots)

    def test_deterministic_statistics_are_physical(self, small_gate):
        cluster, schedule, model = small_gate
        assert check_physical(run_deterministic(cluster, schedule, model=model).cov)[1]


class TestDerivedTransfer:
    @pytest.mark.parametrize("spec", SINGLE, ids=lambda s: s.describe())
    def test_single_mode_closed_form(self, spec):
        tr = derive_gate_transfer(spec)
        D, labels = displacement_matrix_single(spec, 12)
        pos = {lab: j for j, lab in enumerate(tr.labels)}
        for j, lab in enumerate(labels):
            assert np.allclose(tr.D_local[:, pos[lab]], D[:, j], atol=1e-10)
        other = [pos[lab] for lab in tr.labels if lab not in labels]
        assert np.allclose(tr.D_local[:, other], 0, atol=1e-10)

    @pytest.mark.parametrize("spec", SINGLE, ids=lambda s: s.describe())
    def test_single_mode_noise_factor(self, spec):
        tr = derive_gate_transfer(spec)
        assert np.allclose(tr.noise_factors, 4.0, atol=1e-10)
        assert tr.residual < 1e-9

    def test_window_size(self):
        assert gate_window(GateSpec("rotation", wire=1)).K == 2 * 12 + 2 + 4 * 12 + 4

    def test_table_round_trip(self, small_gate):
        cluster, schedule, model = small_gate
        table, _ = derive_tables(cluster, schedule, model)
        again = DisplacementTable.from_json(table.to_json())
        for q in table.quadratures:
            assert table.nonzero(q) == again.nonzero(q)

    def test_missing_row(self, small_gate):
        cluster, schedule, model = small_gate
        table, _ = derive_tables(cluster, schedule, model)
        with pytest.raises(CompensationIncomplete):
            table.row("xB[999]")


class TestSampling:
    def test_worker_count_does_not_change_samples(self, small_cluster):
        rows = np.eye(small_cluster.generator.shape[0])[:5]
        a = sample_functionals(small_cluster, rows, seed=9, shots=9000, workers=1)
        b = sample_functionals(small_cluster, rows, seed=9, shots=9000, workers=4)
        assert np.array_equal(a, b)

    def test_shot_streams_are_addressable(self, small_cluster):
        rows = np.eye(small_cluster.generator.shape[0])[:3]
        full = sample_functionals(small_cluster, rows, seed=2, shots=100)
        tail = sample_functionals(small_cluster, rows, seed=2, shots=50, first_shot=50)
        # same source draws; block shape may change the last bits of the matmul
        assert np.allclose(full[50:], tail, rtol=0, atol=1e-12)

    def test_shot_generator_is_counter_based(self):
        a = shot_generator(5, 17).standard_normal(3)
        b = shot_generator(5, 17).standard_normal(3)
        c = shot_generator(5, 18).standard_normal(3)
        assert np.array_equal(a, b) and not np.array_equal(a, c)

    @pytest.mark.parametrize("seed", [-1, 2**64])
    def test_seed_range(self, small_cluster, seed):
        with pytest.raises(InvalidArgument):
            sample_functionals(small_cluster, np.eye(4, small_cluster.generator.shape[0]), seed=seed, shots=2)

    def test_sampled_covariance_within_standard_errors(self, small_gate):
        cluster, schedule, model = small_gate
        table, _ = derive_tables(cluster, schedule, model)
        exact = run_deterministic(cluster, schedule, table, model)
        stats = sampled_statistics(compensate(run_sampled(cluster, schedule, 4, 20_000, model=model), table))
        z = [(stats.covariance(a, b) - exact.covariance(a, b)) / stats.std_error(a, b) for a in stats.labels for b in stats.labels]
        assert np.max(np.abs(z)) < 4.5

    def test_records_export(self, small_gate):
        cluster, schedule, model = small_gate
        rec = run_sampled(cluster, schedule, 1, 3, model=model)
        lines = rec.to_jsonl().splitlines()
        assert len(lines) == 3
        assert rec.record(2).shot == 2

    def test_uncompensated_statistics_need_compensation(self, small_gate):
        cluster, schedule, model = small_gate
        with pytest.raises(CompensationIncomplete):
            sampled_statistics(run_sampled(cluster, schedule, 1, 5, model=model))


class TestCalibration:
    def test_regression_converges_to_best_linear_predictor(self, gate_cluster):
        spec = GateSpec("rotation", 0.3, wire=0)
        D, labels = displacement_matrix_single(spec, 12)
        schedule = compile_schedule([spec], gate_cluster.params, probes_per_parity=0)
        model = measurement_model(gate_cluster.indexer, schedule)
        name = f"xB[{schedule.instances[0].outputs[0]}]"
        rec = run_sampled(gate_cluster, schedule, 3, 30_000, model=model)
        cal = calibrate_displacement(rec, name, labels)
        blp, resid = best_linear_predictor(gate_cluster, model, name, labels)
        assert np.max(np.abs(cal.coefficients - blp) / cal.std_errors) < 3.5
        assert cal.residual_variance == pytest.approx(resid, rel=0.05)

    def test_too_few_shots(self, small_gate):
        cluster, schedule, model = small_gate
        rec = run_sampled(cluster, schedule, 1, 50, model=model)
        with pytest.raises(InvalidArgument):
            calibrate_displacement(rec, rec.kept_labels[0])

    def test_singular_design(self, small_gate):
        cluster, schedule, model = small_gate
        rec = run_sampled(cluster, schedule, 1, 200, model=model)
        lab = rec.outcome_labels[0]
        with pytest.raises(CalibrationSingular):
            calibrate_displacement(rec, rec.kept_labels[0], labels=(lab, lab), min_shots=10)
