import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cvcluster import compiler
from cvcluster.cluster import ClusterParams
from cvcluster.compiler import (
    BASIS_ANGLE,
    GateSpec,
    basis_for_gate,
    compile_schedule,
    compose_circuit,
    cz_key,
    cz_noise_covariance,
    encoder_circuit,
    expected_noise_factors,
    expected_symplectic,
    single_mode_angles,
    squeeze_from_angles,
    tomography_layout,
)
from cvcluster.errors import BoundaryError, DegenerateGate, InvalidArgument, NeedsCalibration, PlacementConflict

N = 12


@pytest.fixture
def params():
    return ClusterParams(N=N, K=88, r=1.0)


class TestGateSpec:
    def test_default_position(self):
        assert GateSpec("rotation", 0.1, wire=2, step=1).input_k(N) == 2 * N + 4 + N

    def test_parity(self):
        assert GateSpec("shear", wire=0).parity == 1
        assert GateSpec("shear", wire=3).parity == -1

    def test_cz_spans_two_wires(self):
        assert GateSpec("cz", 1.0, wire=1).wires == (1, 2)

    @pytest.mark.parametrize("kwargs", [dict(kind="swap"), dict(kind="rotation", param=np.inf), dict(kind="rotation", wire=-1), dict(kind="rotation", k=3)])
    def test_invalid(self, kwargs):
        with pytest.raises(InvalidArgument):
            GateSpec(**kwargs)

    def test_explicit_k_must_match_wire(self):
        with pytest.raises(InvalidArgument):
            GateSpec("rotation", wire=1, k=24).input_k(N)

    def test_wire_out_of_range(self):
        with pytest.raises(InvalidArgument):
            GateSpec("cz", 1.0, wire=5).validate(N)


class TestExpectedSymplectic:
    @given(st.sampled_from(["rotation", "shear", "squeeze", "identity"]), st.floats(-1.2, 1.2), st.integers(0, 5))
    def test_single_mode_is_symplectic(self, kind, v, wire):
        assert expected_symplectic(GateSpec(kind, v, wire=wire)).is_symplectic()

    @given(st.floats(-2, 2), st.integers(0, 4))
    def test_cz_is_symplectic(self, g, wire):
        assert expected_symplectic(GateSpec("cz", g, wire=wire)).is_symplectic()

    def test_odd_shear_includes_fourier(self):
        even = expected_symplectic(GateSpec("shear", 0.5, wire=0)).entries
        odd = expected_symplectic(GateSpec("shear", 0.5, wire=1)).entries
        f2 = np.array([[-1, 0], [0, -1]])
        assert np.allclose(odd, f2 @ even)

    def test_cz_zero_coupling_is_fourier(self):
        s = expected_symplectic(GateSpec("cz", 0.0, wire=0)).entries
        f = np.array([[0, 1], [-1, 0]])
        assert np.allclose(s[np.ix_([0, 2], [0, 2])], f)


class TestAngles:
    @given(st.floats(-2.0, 2.0))
    def test_squeeze_angles_invert(self, r):
        tA, tB = single_mode_angles("squeeze", r, 1)
        assert squeeze_from_angles(tA, tB) == pytest.approx(r, abs=1e-9)

    @given(st.floats(-np.pi, np.pi))
    def test_rotation_angle_difference(self, theta):
        for parity in (1, -1):
            tA, tB = single_mode_angles("rotation", theta, parity)
            assert tB - tA == pytest.approx(parity * np.pi / 2)
            assert tA + tB == pytest.approx(theta)

    def test_extreme_squeeze_is_degenerate(self):
        with pytest.raises(DegenerateGate):
            single_mode_angles("squeeze", 40.0, 1)

    def test_cz_rows(self):
        frag = basis_for_gate(GateSpec("cz", 1.0, wire=0), N)
        assert len(frag.rows) == 5
        assert frag.outputs == tuple(k + 2 * N for k in frag.inputs)


class TestSchedule:
    def test_roles_and_angles(self, params):
        spec = GateSpec("rotation", 0.4, wire=0)
        sch = compile_schedule([spec], params, probes_per_parity=1)
        k = spec.input_k(N)
        assert sch.role("A", k) == "gate"
        assert sch.role("B", k + N) == "output"
        assert sch.role("A", k - N) == "reference"
        assert sch.angle("B", k + N) == BASIS_ANGLE["x"]
        assert sch.angle("A", k - N) == BASIS_ANGLE["p"]
        assert {p.parity for p in sch.probes} == {1, -1}

    def test_with_quadrant(self, params):
        sch = compile_schedule([GateSpec("shear", 0.3, wire=1)], params).with_quadrant(("p", "p"))
        inst = sch.instances[0]
        assert sch.angle("B", inst.outputs[0]) == BASIS_ANGLE["p"]
        assert sch.angle("A", inst.references[0]) == BASIS_ANGLE["p"]
        assert inst.quadrant == ("p", "p")

    def test_controls_fill_free_rows(self, params):
        sch = compile_schedule([], params)
        assert all(sch.role("A", k) == "control" for k in range(1, params.K, 2))

    def test_csv_export(self, params):
        text = compile_schedule([GateSpec("rotation", 0.1)], params).to_csv()
        assert text.splitlines()[0] == "k,spatial,angle_radians,role"
        assert len(text.splitlines()) == 1 + 2 * params.K

    def test_overlapping_gates_conflict(self, params):
        with pytest.raises(PlacementConflict):
            compile_schedule([GateSpec("rotation", 0.1, wire=0), GateSpec("cz", 1.0, wire=0)], params)

    def test_window_too_small(self):
        with pytest.raises(BoundaryError):
            compile_schedule([GateSpec("rotation", 0.1, step=4)], ClusterParams(N=N, K=60, r=1.0))

    def test_chained_gates_share_modes(self, params):
        chain = [GateSpec("rotation", 0.1, step=0), GateSpec("rotation", 0.2, step=1)]
        inst = compile_schedule(chain, params).instances[0]
        assert inst.inputs == (2 * N,)
        assert inst.outputs == (2 * N + 2 * N,)

    def test_tomography_layout(self):
        sch = tomography_layout([GateSpec("rotation", 0.3)], ClusterParams(N=N, K=140, r=1.0), repetitions=4)
        assert [i.quadrant for i in sch.instances] == [("x", "p"), ("x", "x"), ("p", "x"), ("p", "p")]


class TestComposition:
    def test_rotations_add(self):
        c = [GateSpec("rotation", 0.3, step=0), GateSpec("rotation", 0.5, step=1)]
        assert np.allclose(compose_circuit(c, N=N).G.entries, expected_symplectic(GateSpec("rotation", 0.8)).entries)

    def test_noise_propagates_through_later_gates(self):
        sq = GateSpec("squeeze", 0.5, step=1)
        c = [GateSpec("identity", step=0), sq]
        S = expected_symplectic(sq).entries
        expected = S @ (4 * np.eye(2)) @ S.T + 4 * np.eye(2)
        assert np.allclose(compose_circuit(c, N=N).noise_covariance, expected)

    def test_single_gate_has_analytic_displacement(self):
        t = compose_circuit([GateSpec("shear", 0.2)], N=N)
        assert t.D_single.shape == (2, 6)
        assert t.D_source == "analytic"

    def test_encoder(self):
        circuit = encoder_circuit()
        assert len(circuit) == 12
        t = compose_circuit(circuit, N=N)
        assert t.G.is_symplectic()
        assert t.wires == (1, 2, 3)
        assert np.all(t.noise_factors > 0)

    def test_single_mode_noise_factor(self):
        assert np.array_equal(expected_noise_factors(GateSpec("rotation", 1.0)), [4.0, 4.0])


class TestGoldenTables:
    def test_cz_key_ignores_negative_zero(self):
        assert cz_key(-0.0, 1) == cz_key(0.0, 1)

    def test_packaged_table_present(self):
        table = compiler.load_golden(compiler.GOLDEN_CZ)
        assert len(table["entries"]) == 10

    def test_missing_entry_needs_calibration(self):
        with pytest.raises(NeedsCalibration):
            cz_noise_covariance(0.37, 1)

    def test_missing_entry_can_be_derived(self):
        c = cz_noise_covariance(0.37, 1, derive=True)
        assert c.shape == (4, 4)
        assert np.allclose(c, c.T)

    def test_directory_override(self, tmp_path, monkeypatch):
        entry = {"noise_covariance": (7 * np.eye(4)).tolist()}
        (tmp_path / compiler.GOLDEN_CZ).write_text(json.dumps({"entries": {cz_key(1.0, 1): entry}}))
        monkeypatch.setenv(compiler.GOLDEN_ENV, str(tmp_path))
        compiler.clear_golden_cache()
        try:
            assert np.allclose(cz_noise_covariance(1.0, 1), 7 * np.eye(4))
        finally:
            monkeypatch.delenv(compiler.GOLDEN_ENV)
            compiler.clear_golden_cache()
