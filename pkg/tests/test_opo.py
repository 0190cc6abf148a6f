from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import dblquad, quad

from cvcluster.errors import IntegrationFailure, InvalidArgument
from cvcluster.gaussian import V0, to_db
from cvcluster.opo import (
    PAPER_PARAMS,
    OpoParams,
    QuadratureVariancePair,
    autocovariance,
    find_pump_for_squeezing,
    gate_noise_vs_pump,
    jittered_gate_noise,
    mode_function,
    mode_variances,
    temporal_mode_variance,
)


@pytest.fixture
def params():
    return PAPER_PARAMS.with_pump(0.3)


def oracle_variance(quadrature, p):
    """Independent adaptive double integral over the two triangles of the support."""
    h = p.tau / 2
    f = lambda u: mode_function(0, u, p)  # noqa: E731
    kern = lambda v, u: f(u) * f(v) * autocovariance(quadrature, u - v, p)  # noqa: E731
    lower, _ = dblquad(kern, -h, h, lambda u: -h, lambda u: u, epsabs=0, epsrel=1e-10)
    return V0 + 2 * lower


class TestModeFunction:
    def test_zero_at_center_and_outside(self, params):
        tau = params.tau
        assert mode_function(3, 3 * tau, params) == 0.0
        assert mode_function(3, 3 * tau + 0.51 * tau, params) == 0.0
        assert mode_function(3, 3 * tau - 0.6 * tau, params) == 0.0

    def test_normalized(self, params):
        h = params.tau / 2
        val, _ = quad(lambda t: mode_function(0, t, params) ** 2, -h, h, epsabs=0, epsrel=1e-12)
        assert val == pytest.approx(1.0, rel=1e-10)

    def test_shift_invariance(self, params):
        t = np.linspace(-0.4, 0.4, 9) * params.tau
        assert np.allclose(mode_function(0, t, params), mode_function(5, t + 5 * params.tau, params))

    def test_antisymmetric(self, params):
        t = 0.2 * params.tau
        assert mode_function(0, t, params) == pytest.approx(-mode_function(0, -t, params))


class TestVariances:
    @pytest.mark.parametrize("q", ["x", "p"])
    @pytest.mark.parametrize("pump", [0.05, 0.3, 0.8])
    def test_against_adaptive_oracle(self, q, pump):
        p = PAPER_PARAMS.with_pump(pump)
        assert temporal_mode_variance(q, p) == pytest.approx(oracle_variance(q, p), rel=1e-7)

    def test_vacuum_without_pump(self):
        q = mode_variances(PAPER_PARAMS)
        assert q.var_x == V0 and q.var_p == V0

    def test_vacuum_without_efficiency(self):
        q = mode_variances(replace(PAPER_PARAMS, eta=0.0, pump=0.5))
        assert q.var_x == V0 and q.var_p == V0

    @given(st.floats(0.05, 1.0), st.floats(0.01, 0.9))
    def test_excess_is_linear_in_efficiency(self, eta, pump):
        base = mode_variances(replace(PAPER_PARAMS, eta=1.0, pump=pump))
        scaled = mode_variances(replace(PAPER_PARAMS, eta=eta, pump=pump))
        assert scaled.var_p - V0 == pytest.approx(eta * (base.var_p - V0), rel=1e-7)
        assert scaled.var_x - V0 == pytest.approx(eta * (base.var_x - V0), rel=1e-7)

    @given(st.floats(0.0, 1.0), st.floats(0.0, 0.95))
    def test_uncertainty_product(self, eta, pump):
        q = mode_variances(replace(PAPER_PARAMS, eta=eta, pump=pump))
        assert q.product >= V0**2 - 1e-12

    def test_tighter_tolerance_agrees(self, params):
        a = temporal_mode_variance("p", params, rtol=1e-8)
        b = temporal_mode_variance("p", params, rtol=5e-9)
        assert abs(a - b) < 1e-7 * abs(a)

    def test_squeezing_grows_with_pump(self):
        p = replace(PAPER_PARAMS, eta=1.0)
        vp = [temporal_mode_variance("p", p.with_pump(x)) for x in np.linspace(0, 0.95, 12)]
        assert np.all(np.diff(vp) < 0)

    def test_wider_bandwidth_squeezes_more(self, params):
        wide = replace(params, gamma=2 * np.pi * 100e6)
        assert mode_variances(wide).var_p < mode_variances(params).var_p

    def test_unreachable_accuracy(self, params):
        with pytest.raises(IntegrationFailure):
            temporal_mode_variance("p", params, rtol=1e-30)

    def test_threshold_guard(self):
        with pytest.raises(InvalidArgument):
            temporal_mode_variance("x", replace(PAPER_PARAMS, pump=1 - 1e-30))

    @pytest.mark.parametrize("kwargs", [dict(eta=1.5), dict(pump=1.0), dict(gamma=0.0), dict(tau=np.inf), dict(phase_jitter_deg=-1)])
    def test_invalid_params(self, kwargs):
        with pytest.raises(InvalidArgument):
            OpoParams(**kwargs)

    def test_db(self):
        assert QuadratureVariancePair(V0, 2 * V0).db == pytest.approx((0.0, 10 * np.log10(2)))


class TestCalibration:
    def test_bisection_hits_target(self):
        pump = find_pump_for_squeezing(-4.4)
        assert to_db(mode_variances(PAPER_PARAMS.with_pump(pump)).var_p) == pytest.approx(-4.4, abs=1e-8)

    def test_unreachable_target(self):
        with pytest.raises(InvalidArgument):
            find_pump_for_squeezing(-40.0)


class TestGateNoise:
    def test_zero_pump_gives_vacuum_cluster_noise(self):
        curve = gate_noise_vs_pump([0.0, 0.3])
        assert curve.gate_noise[0] == 4 * V0
        rows = list(curve.rows())
        assert rows[0][3] == pytest.approx(10 * np.log10(4))

    def test_executor_agrees_with_noise_law(self):
        q = mode_variances(PAPER_PARAMS.with_pump(0.4))
        noise, se = jittered_gate_noise(q, 0.0, samples=1)
        assert noise == pytest.approx(4 * q.var_p, abs=1e-9)
        assert se == 0.0

    def test_jitter_adds_noise(self):
        q = mode_variances(PAPER_PARAMS.with_pump(0.4))
        noisy, se = jittered_gate_noise(q, 4.0, samples=30, seed=1)
        assert noisy > 4 * q.var_p + 3 * se

    @pytest.mark.slow
    def test_jitter_curve_has_interior_minimum(self):
        pumps = np.linspace(0.0, 0.9, 7)
        curve = gate_noise_vs_pump(pumps, replace(PAPER_PARAMS, phase_jitter_deg=4.0), jitter_samples=40, seed=2)
        i = int(np.argmin(curve.gate_noise_jitter))
        assert 0 < i < len(pumps) - 1
        assert np.all(np.diff(curve.gate_noise) < 0)

    def test_invalid_grid(self):
        with pytest.raises(InvalidArgument):
            gate_noise_vs_pump([0.2, 1.0])
