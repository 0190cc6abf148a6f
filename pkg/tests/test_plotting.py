import matplotlib
import numpy as np
import pytest

from cvcluster import plotting


@pytest.fixture
def curve():
    from cvcluster.opo import gate_noise_vs_pump

    return gate_noise_vs_pump([0.0, 0.2, 0.4])


class TestFigures:
    def test_backend_is_offscreen(self):
        assert matplotlib.get_backend().lower() == "agg"

    def test_identical_bytes_on_rerun(self, tmp_path):
        S = np.array([[1.0, 0.2], [-0.2, 1.0]])
        a = plotting.plot_matrix(S, tmp_path / "a.png")
        b = plotting.plot_matrix(S, tmp_path / "b.png")
        assert a.read_bytes() == b.read_bytes()

    def test_noise_curve(self, tmp_path, curve):
        path = plotting.plot_noise_curve(curve, tmp_path / "curve.png")
        assert path.stat().st_size > 0

    def test_symplectic_panels(self, tmp_path):
        p = np.linspace(-1, 1, 4)
        S = np.stack([np.eye(2) * (1 + v) for v in p])
        path = plotting.plot_symplectic_vs_parameter(p, S, 0.01 * np.ones_like(S), S, tmp_path / "s.png")
        assert path.is_file()

    def test_svg_output(self, tmp_path):
        path = plotting.plot_nullifiers([(0.5, "cluster_type", 0.18, 0.18), (1.0, "cluster_type", 0.07, 0.07)], tmp_path / "n.svg")
        assert path.read_text().startswith("<?xml")

    def test_regression_and_noise(self, tmp_path):
        plotting.plot_regression(["a", "b"], [1.0, 2.0], [0.1, 0.1], [1.1, 2.0], [1.0, 2.0], tmp_path / "r.png")
        plotting.plot_noise(["x", "p"], [0.3, 0.3], [0.01, 0.01], [0.27, 0.27], tmp_path / "n.png", reference_db=-4.4)
        assert (tmp_path / "r.png").is_file() and (tmp_path / "n.png").is_file()
