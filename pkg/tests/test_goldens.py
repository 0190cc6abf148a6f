import json

import numpy as np
import pytest

from cvcluster import compiler
from cvcluster.compiler import GOLDEN_CZ, GateSpec, compose_circuit, cz_key, encoder_circuit
from cvcluster.executor import derive_gate_transfer
from cvcluster.goldens import (
    GOLDEN_ENCODER,
    absolute_label,
    cz_displacement,
    derive_cz_table,
    relative_label,
    sparse_rows,
    write_goldens,
)


@pytest.fixture(scope="module")
def derived(tmp_path_factory):
    out = tmp_path_factory.mktemp("golden")
    write_goldens(out)
    compiler.clear_golden_cache()
    return {name: json.loads((out / name).read_text()) for name in (GOLDEN_CZ, GOLDEN_ENCODER)}


class TestLabels:
    @pytest.mark.parametrize("label", ["m+[30]", "mA[23]", "mB[41]", "m-[30]"])
    def test_relative_round_trip(self, label):
        assert absolute_label(relative_label(label, 24), 24) == label

    def test_relative_form(self):
        assert relative_label("mA[23]", 24) == "mA[-1]"

    def test_sparse_rows_skip_zero_columns(self):
        m = np.array([[0.0, 1.0], [0.0, 2.0]])
        assert sparse_rows(m, ("m+[10]", "m-[10]"), 10) == {"m-[+0]": [1.0, 2.0]}


class TestTables:
    def test_packaged_cz_table_is_current(self, derived):
        packaged = compiler.load_golden(GOLDEN_CZ)["entries"]
        for key, entry in derived[GOLDEN_CZ]["entries"].items():
            assert np.allclose(entry["noise_factors"], packaged[key]["noise_factors"], atol=1e-12)
            assert entry["D_local"].keys() == packaged[key]["D_local"].keys()

    def test_cz_table_covers_grid(self, derived):
        keys = set(derived[GOLDEN_CZ]["entries"])
        assert {cz_key(g, p) for g in (0, 0.5, -0.5, 1, -1) for p in (1, -1)} == keys

    def test_residual_cancellation(self, derived):
        assert all(e["cancellation_residual"] < 1e-9 for e in derived[GOLDEN_CZ]["entries"].values())

    def test_encoder_factors_match_composition(self, derived):
        enc = derived[GOLDEN_ENCODER]
        assert np.allclose(enc["noise_factors"], enc["composed_noise_factors"], atol=1e-9)
        assert np.allclose(enc["noise_factors"], compose_circuit(encoder_circuit()).noise_factors, atol=1e-9)

    def test_table_is_deterministic(self):
        a, b = derive_cz_table(), derive_cz_table()
        assert json.dumps(a, sort_keys=True) == json.dumps(b, sort_keys=True)

    def test_displacement_lookup(self):
        spec = GateSpec("cz", 1.0, wire=1)
        k0 = spec.input_k(12)
        d = cz_displacement(1.0, -1, k0)
        tr = derive_gate_transfer(spec)
        for j, lab in enumerate(tr.labels):
            assert np.allclose(d.get(lab, np.zeros(4)), tr.D_local[:, j], atol=1e-12)
