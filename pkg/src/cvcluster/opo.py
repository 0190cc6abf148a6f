"""Squeezed-light source model for a below-threshold OPO.

Temporal mode variances are double integrals of a mode function against the
OPO quadrature auto-covariance. The delta part of the kernel contributes
exactly V0 because the mode function is normalized; only the exponential
part is integrated numerically.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np
from scipy.special import roots_legendre

from .errors import IntegrationFailure, InvalidArgument
from .gaussian import V0, from_db, to_db

TWO_PI = 2.0 * np.pi
THRESHOLD_GUARD = 1e-12
MAX_NODES = 512


@dataclass(frozen=True)
class OpoParams:
    """Physical source parameters; rates in rad/s, durations in s."""

    eta: float = 0.777
    gamma: float = TWO_PI * 7.7e6
    kappa: float = TWO_PI * 2.0e6
    tau: float = 247e-9
    pump: float = 0.0
    phase_jitter_deg: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.eta <= 1.0:
            raise InvalidArgument(f"eta must lie in [0, 1], got {self.eta}")
        if not 0.0 <= self.pump < 1.0:
            raise InvalidArgument(f"pump must lie in [0, 1) (below threshold), got {self.pump}")
        for name in ("gamma", "kappa", "tau"):
            v = getattr(self, name)
            if not np.isfinite(v) or v <= 0:
                raise InvalidArgument(f"{name} must be positive and finite, got {v}")
        if self.phase_jitter_deg < 0:
            raise InvalidArgument("phase jitter must be nonnegative")

    @property
    def epsilon(self) -> float:
        """Pump rate gamma * sqrt(P / P_thr)."""
        return self.gamma * np.sqrt(self.pump)

    def with_pump(self, pump: float) -> "OpoParams":
        return replace(self, pump=float(pump))


PAPER_PARAMS = OpoParams()


@dataclass(frozen=True)
class QuadratureVariancePair:
    var_x: float
    var_p: float

    @property
    def product(self) -> float:
        return self.var_x * self.var_p

    @property
    def db(self) -> tuple[float, float]:
        return float(to_db(self.var_x)), float(to_db(self.var_p))


@lru_cache(maxsize=64)
def _normalization(kappa: float, tau: float) -> float:
    h = tau / 2
    u, w = roots_legendre(96)
    u = h * u
    integral = h * np.sum(w * u**2 * np.exp(-2 * kappa**2 * u**2))
    return 1.0 / np.sqrt(integral)


def mode_function(k: int, t, params: OpoParams):
    """f_k(t) = Nrm (t - k tau) exp(-kappa^2 (t - k tau)^2) on |t - k tau| < tau/2.

    The Gaussian is centered on the mode so every k has the same shape.
    """
    u = np.asarray(t, dtype=float) - k * params.tau
    inside = np.abs(u) < params.tau / 2
    val = _normalization(params.kappa, params.tau) * u * np.exp(-(params.kappa * u) ** 2)
    out = np.where(inside, val, 0.0)
    return float(out) if out.ndim == 0 else out


def _kernel(quadrature: str, params: OpoParams) -> tuple[float, float]:
    """(amplitude, decay rate) of the exponential part of the auto-covariance."""
    g, e = params.gamma, params.epsilon
    if quadrature == "x":
        if g - e < THRESHOLD_GUARD * g:
            raise InvalidArgument("pump too close to threshold: (gamma - epsilon)^-1 overflows")
        return params.eta * g * e / (g - e), g - e
    if quadrature == "p":
        return -params.eta * g * e / (g + e), g + e
    raise InvalidArgument(f"quadrature must be 'x' or 'p', got {quadrature!r}")


def autocovariance(quadrature: str, dt, params: OpoParams):
    """Exponential part of <q(t) q(t + dt)>; the 1/2 delta(dt) part is implicit."""
    amp, rate = _kernel(quadrature, params)
    return amp * np.exp(-rate * np.abs(np.asarray(dt, dtype=float)))


def _panel_edges(rate: float, length: float) -> np.ndarray:
    """Panels on [0, length] graded toward 0 on the decay scale 1/rate."""
    scale = 1.0 / rate
    inner = [scale * 2.0**j for j in range(-3, 7)]
    edges = [0.0] + [e for e in inner if e < length] + [length]
    return np.array(edges)


def _exponential_integral(rate: float, params: OpoParams, n: int) -> float:
    """Integral of f(u) f(u') exp(-rate |u - u'|) over the mode support.

    The square is split along its diagonal; on the lower triangle the
    coordinates are the lag s = u - u' >= 0 and u, where the integrand is
    smooth. Both triangles contribute equally.
    """
    h = params.tau / 2
    nrm = _normalization(params.kappa, params.tau)
    xs, ws = roots_legendre(n)
    total = 0.0
    edges = _panel_edges(rate, 2 * h)
    for a, b in zip(edges[:-1], edges[1:]):
        s = 0.5 * (b - a) * xs + 0.5 * (b + a)
        sw = 0.5 * (b - a) * ws
        lo = -h + s
        half = 0.5 * (h - lo)
        u = half[:, None] * xs[None, :] + (0.5 * (h + lo))[:, None]
        v = u - s[:, None]
        f = nrm**2 * u * v * np.exp(-(params.kappa**2) * (u**2 + v**2))
        inner = half * (f @ ws)
        total += np.sum(sw * np.exp(-rate * s) * inner)
    return 2.0 * total


def temporal_mode_variance(quadrature: str, params: OpoParams, rtol: float = 1e-8) -> float:
    """Var{q_k} = V0 + double integral of the exponential kernel.

    Node counts double until successive estimates agree to ``rtol``.
    """
    amp, rate = _kernel(quadrature, params)
    if amp == 0.0:
        return V0
    n = 16
    prev = _exponential_integral(rate, params, n)
    history = [prev]
    while n < MAX_NODES:
        n *= 2
        cur = _exponential_integral(rate, params, n)
        history.append(cur)
        if abs(cur - prev) <= rtol * max(abs(cur), 1e-300):
            return V0 + amp * cur
        prev = cur
    raise IntegrationFailure(
        f"mode-variance quadrature did not reach rtol={rtol} with {MAX_NODES} nodes "
        f"(rate={rate:.3e}/s, last estimates {history[-3:]})"
    )


def mode_variances(params: OpoParams, rtol: float = 1e-8) -> QuadratureVariancePair:
    return QuadratureVariancePair(temporal_mode_variance("x", params, rtol), temporal_mode_variance("p", params, rtol))


def find_pump_for_squeezing(target_db: float = -4.4, params: OpoParams = PAPER_PARAMS, tol: float = 1e-10, max_pump: float = 0.999) -> float:
    """Bisection on pump for var_p = V0 10^(target_db/10)."""
    target = float(from_db(target_db))

    def f(pump):
        return temporal_mode_variance("p", params.with_pump(pump)) - target

    lo, hi = 0.0, max_pump
    if f(lo) < 0 or f(hi) > 0:
        raise InvalidArgument(f"{target_db} dB squeezing is not reachable for pump in [0, {max_pump}]")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if f(mid) > 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@dataclass(frozen=True)
class NoiseCurve:
    """Gate noise versus pump; absolute variances (V0 = 1/2)."""

    pump: np.ndarray
    var_x: np.ndarray
    var_p: np.ndarray
    gate_noise: np.ndarray
    noise_factor: float
    jitter_deg: float = 0.0
    gate_noise_jitter: np.ndarray | None = None
    jitter_std_error: np.ndarray | None = None
    params: OpoParams = field(default=PAPER_PARAMS)

    def rows(self):
        """(pump, var_x_dB, var_p_dB, gate_noise_dB[, jitter dB]) per grid point."""
        for i, p in enumerate(self.pump):
            row = [float(p), float(to_db(self.var_x[i])), float(to_db(self.var_p[i])), float(to_db(self.gate_noise[i]))]
            if self.gate_noise_jitter is not None:
                row.append(float(to_db(self.gate_noise_jitter[i])))
            yield row


def jittered_gate_noise(var_pair: QuadratureVariancePair, sigma_deg: float, samples: int = 200, seed: int = 0, spec=None, N: int = 12):
    """Mean single-mode gate noise with Gaussian angle errors on every detector.

    Each sample offsets every measurement angle (controls, gate detectors
    and the output readout) by an independent Normal(0, sigma). Compensation
    uses the nominal by-product tables, as an experiment would. Noise is
    Var(out - D m - G in) averaged over x and p outputs and over samples;
    each sample is evaluated exactly from the source covariance.
    """
    from .cluster import ClusterParams, build_coiled_cluster
    from .compiler import BASIS_ANGLE, GateSpec, compile_schedule
    from .executor import derive_instance_transfer, gate_window, jittered_model, measurement_model, shot_generator

    spec = spec or GateSpec("rotation", 0.0, wire=0)
    window = gate_window(spec, N)
    nominal = build_coiled_cluster(window)
    params = replace(window, source_variances=(var_pair.var_p, var_pair.var_x))
    cluster = build_coiled_cluster(params)
    schedule = compile_schedule([spec], window, probes_per_parity=0)
    inst = schedule.instances[0]
    model = measurement_model(nominal.indexer, schedule)
    tr = derive_instance_transfer(nominal, model, inst)
    ix = model.indexer
    n = len(inst.inputs)
    in_rows = np.array([ix.x_row("B", k) for k in inst.inputs] + [ix.p_row("B", k) for k in inst.inputs])
    D_local = tr.D_local
    sigma = np.deg2rad(sigma_deg)
    n_det = len(model.raw_labels)
    values = np.empty(samples)
    for i in range(samples):
        rng = shot_generator(seed, i)
        deltas = rng.normal(0.0, sigma, n_det + 2 * n) if sigma > 0 else np.zeros(n_det + 2 * n)
        jm = jittered_model(model, deltas[:n_det])
        out = []
        for j, k in enumerate(inst.outputs):
            out.append(ix.theta_row("B", k, BASIS_ANGLE["x"] + deltas[n_det + j]))
        for j, k in enumerate(inst.outputs):
            out.append(ix.theta_row("B", k, BASIS_ANGLE["p"] + deltas[n_det + n + j]))
        rows = np.array(out) - D_local @ jm.outcome_rows - tr.G @ in_rows
        values[i] = np.mean(np.diag(cluster.covariance_of(rows)))
    se = float(values.std(ddof=1) / np.sqrt(samples)) if samples > 1 else 0.0
    return float(values.mean()), se


def gate_noise_vs_pump(pumps, params: OpoParams = PAPER_PARAMS, noise_factor: float = 4.0, jitter_samples: int = 200, seed: int = 0, rtol: float = 1e-8) -> NoiseCurve:
    """Gate noise = noise_factor * var_p per pump value, plus a phase-jitter
    Monte-Carlo curve when ``params.phase_jitter_deg > 0``."""
    pumps = np.asarray(pumps, dtype=float)
    if np.any(pumps < 0) or np.any(pumps >= 1):
        raise InvalidArgument("pump grid must lie in [0, 1)")
    pairs = [mode_variances(params.with_pump(p), rtol) for p in pumps]
    vx = np.array([q.var_x for q in pairs])
    vp = np.array([q.var_p for q in pairs])
    jitter = se = None
    if params.phase_jitter_deg > 0:
        res = [jittered_gate_noise(q, params.phase_jitter_deg, jitter_samples, seed) for q in pairs]
        jitter = np.array([r[0] for r in res])
        se = np.array([r[1] for r in res])
    return NoiseCurve(pumps, vx, vp, noise_factor * vp, noise_factor, params.phase_jitter_deg, jitter, se, params)
