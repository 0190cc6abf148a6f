import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cvcluster.cluster import (
    DEFAULT_WIRING,
    ClusterParams,
    ModeIndexer,
    WiringConfig,
    build_coiled_cluster,
    control_angle,
    expected_nullifier_variance,
    nullifier_variances,
    project_wires,
    validate_wiring,
)
from cvcluster.errors import InvalidArgument
from cvcluster.gaussian import V0, check_physical
from cvcluster.tomography import epsilon_prediction


class TestParams:
    @pytest.mark.parametrize("kwargs", [dict(N=5), dict(N=2), dict(N=4, K=8), dict(r=-0.1), dict(r=np.inf), dict(edge_convention="other")])
    def test_rejects_invalid(self, kwargs):
        base = dict(N=4, K=28, r=0.5)
        with pytest.raises(InvalidArgument):
            ClusterParams(**{**base, **kwargs})

    def test_source_variances_override(self):
        p = ClusterParams(N=4, K=28, source_variances=(0.2, 3.0))
        assert p.squeezed_variance == 0.2
        assert p.antisqueezed_variance == 3.0

    def test_nonpositive_source_variance(self):
        with pytest.raises(InvalidArgument):
            ClusterParams(N=4, K=28, source_variances=(0.0, 1.0))


class TestIndexer:
    def test_parity_alternates_with_wire(self):
        ix = ModeIndexer(8, 40)
        assert [ix.wire(k) for k in (0, 2, 4, 6, 8)] == [0, 1, 2, 3, 0]
        assert ix.parity(0) == 1 and ix.parity(2) == -1

    def test_labels_are_unique(self):
        ix = ModeIndexer(4, 20)
        assert len(set(ix.labels())) == 40


class TestNullifiers:
    @pytest.mark.parametrize("r", [0.1, 0.5, 1.3])
    @pytest.mark.parametrize("conv", ["cluster_type", "approximate"])
    def test_closed_form(self, r, conv):
        cluster = build_coiled_cluster(ClusterParams(N=4, K=28, r=r))
        var = nullifier_variances(cluster.state, cluster.indexer, conv, r)
        assert var.shape[1] == 2
        assert np.max(np.abs(var - expected_nullifier_variance(r, conv))) < 1e-9

    def test_closed_form_values(self):
        assert expected_nullifier_variance(1.0, "cluster_type") == pytest.approx(2 * V0 * np.exp(-2))
        assert expected_nullifier_variance(1.0, "approximate") == pytest.approx(V0 / np.cosh(2))

    @given(st.floats(0.05, 2.0))
    def test_window_is_physical(self, r):
        # the window is a marginal of a longer stream, so it is mixed but physical
        cluster = build_coiled_cluster(ClusterParams(N=4, K=12, r=r))
        assert check_physical(cluster.state)[1]

    def test_zero_squeezing_is_vacuum(self):
        cluster = build_coiled_cluster(ClusterParams(N=4, K=12, r=0.0))
        assert np.allclose(cluster.state.cov, V0 * np.eye(cluster.state.cov.shape[0]), atol=1e-14)

    def test_covariance_of_matches_state(self, small_cluster):
        ix = small_cluster.indexer
        rows = np.array([ix.x_row("A", 5), ix.p_row("B", 9)])
        c = small_cluster.covariance_of(rows)
        full = small_cluster.state.cov
        assert np.isclose(c[0, 1], rows[0] @ full @ rows[1])


class TestWiring:
    def test_default_is_discovered(self):
        v = validate_wiring(ClusterParams(N=4, K=28, r=0.5))
        assert v.config == DEFAULT_WIRING
        assert len(v.equivalent) == 4
        assert sum(row["match"] for row in v.table) == 4

    def test_equivalent_configs_give_same_state(self):
        p = ClusterParams(N=4, K=16, r=0.6)
        v = validate_wiring(p)
        covs = [build_coiled_cluster(p, cfg).state.cov for cfg in v.equivalent]
        for c in covs[1:]:
            assert np.allclose(c, covs[0], atol=1e-12)

    def test_zero_squeezing_cannot_validate(self):
        with pytest.raises(InvalidArgument):
            validate_wiring(ClusterParams(N=4, K=16, r=0.0))

    def test_round_trip_dict(self):
        assert WiringConfig.from_dict(DEFAULT_WIRING.as_dict()) == DEFAULT_WIRING

    def test_control_angles_alternate(self):
        assert control_angle(1) == pytest.approx(np.pi / 4)
        assert control_angle(3) == pytest.approx(-np.pi / 4)


class TestWireProjection:
    @pytest.mark.parametrize("r", [0.25, 1.0, 2.0])
    def test_segment_nullifiers(self, r):
        proj = project_wires(build_coiled_cluster(ClusterParams(N=4, K=28, r=r)))
        assert proj.segments
        for seg in proj.segments:
            assert np.allclose(seg.nullifier_variances, 4 * V0 * np.exp(-2 * r), atol=1e-9)

    def test_segments_physical(self, small_cluster):
        for seg in project_wires(small_cluster).segments:
            assert check_physical(seg.state)[1]

    def test_epsilon_sign_follows_parity(self, small_cluster):
        vs = small_cluster.params.squeezed_variance
        for seg in project_wires(small_cluster).segments:
            parity = small_cluster.indexer.parity(seg.k)
            eps = epsilon_prediction(seg.state.cov, vs, parity)
            cross = seg.state.cov[0, 3]
            assert np.sign(eps) == -parity
            assert np.isclose(abs(eps), abs(cross), rtol=1e-9)

    def test_sampled_control_outcomes(self, small_cluster):
        proj = project_wires(small_cluster, np.random.default_rng(0), shots=2000)
        assert proj.outcomes.shape == (2000, len(proj.control_labels))
        assert np.all(np.var(proj.outcomes, axis=0) > 0)
