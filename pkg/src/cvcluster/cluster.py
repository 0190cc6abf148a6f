"""Coiled dual-rail cluster state over a finite temporal window.

The logic-level quadratures are an exact linear image of independent
squeezed sources, ``q = T s``. Sources are created at times
``c0 = -(N + 2) .. K - 1`` so that every logic mode in the window is the
exact marginal of the stationary stream.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DegenerateMeasurement, InvalidArgument, WiringAmbiguity
from .gaussian import V0, GaussianState, quadrature_row

SPATIAL = ("A", "B")
CONVENTIONS = ("cluster_type", "approximate")


@dataclass(frozen=True)
class ClusterParams:
    N: int = 12
    K: int = 228
    r: float = 1.0
    edge_convention: str = "cluster_type"
    # Optional (var_squeezed, var_antisqueezed) pair replacing the pure-r sources.
    source_variances: tuple | None = None

    def __post_init__(self):
        if self.N < 4 or self.N % 2:
            raise InvalidArgument(f"N must be even and >= 4, got {self.N}")
        if self.K < 3 * self.N:
            raise InvalidArgument(f"K must be at least 3N = {3 * self.N}, got {self.K}")
        if not np.isfinite(self.r) or self.r < 0:
            raise InvalidArgument(f"r must be finite and >= 0, got {self.r}")
        if self.edge_convention not in CONVENTIONS:
            raise InvalidArgument(f"edge_convention must be one of {CONVENTIONS}")
        if self.source_variances is not None:
            vs, va = (float(v) for v in self.source_variances)
            if vs <= 0 or va <= 0:
                raise InvalidArgument("source variances must be positive")
            object.__setattr__(self, "source_variances", (vs, va))

    @property
    def squeezed_variance(self) -> float:
        if self.source_variances is not None:
            return self.source_variances[0]
        return V0 * np.exp(-2 * self.r)

    @property
    def antisqueezed_variance(self) -> float:
        if self.source_variances is not None:
            return self.source_variances[1]
        return V0 * np.exp(2 * self.r)

    @property
    def edge_weight(self) -> float:
        if self.edge_convention == "cluster_type":
            return 0.5
        return 0.5 * np.tanh(2 * self.r)


@dataclass(frozen=True)
class ModeIndexer:
    """Bijection (spatial, k) <-> flat mode index ``2k + {A: 0, B: 1}``."""

    N: int
    K: int

    @property
    def n_modes(self) -> int:
        return 2 * self.K

    def index(self, spatial: str, k: int) -> int:
        if spatial not in SPATIAL:
            raise InvalidArgument(f"spatial tag must be A or B, got {spatial!r}")
        if not 0 <= k < self.K:
            raise InvalidArgument(f"temporal index {k} outside window [0, {self.K})")
        return 2 * k + SPATIAL.index(spatial)

    def label(self, index: int) -> tuple[str, int]:
        if not 0 <= index < self.n_modes:
            raise InvalidArgument(f"mode index {index} out of range")
        return SPATIAL[index % 2], index // 2

    def labels(self) -> tuple:
        return tuple(self.label(i) for i in range(self.n_modes))

    def contains(self, k: int) -> bool:
        return 0 <= k < self.K

    def wire(self, k: int) -> int:
        return (k % self.N) // 2

    def parity(self, k: int) -> int:
        """Sign j = (-1)^w of the wire through temporal index ``k``."""
        return -1 if self.wire(k) % 2 else 1

    def is_interior(self, k: int) -> bool:
        return k - self.N - 1 >= 0 and k + self.N + 1 < self.K

    def interior(self) -> list[int]:
        return [k for k in range(self.K) if self.is_interior(k)]

    def x_row(self, spatial: str, k: int) -> np.ndarray:
        return quadrature_row(self.n_modes, self.index(spatial, k), 0.0)

    def p_row(self, spatial: str, k: int) -> np.ndarray:
        return quadrature_row(self.n_modes, self.index(spatial, k), np.pi / 2)

    def theta_row(self, spatial: str, k: int, theta: float) -> np.ndarray:
        return quadrature_row(self.n_modes, self.index(spatial, k), theta)


@dataclass(frozen=True)
class WiringConfig:
    """Index conventions of the generation setup.

    ``x_squeezed_rail`` names the source rail carrying x-squeezed light; the
    other rail is p-squeezed (a relative quarter-wave phase).
    """

    short_arm: str = "A"
    long_arm: str = "B"
    bs1_forward: bool = True
    bs2_forward: bool = False
    x_squeezed_rail: str = "a"
    rotation: float = -np.pi / 4

    def __post_init__(self):
        if self.short_arm not in SPATIAL or self.long_arm not in SPATIAL:
            raise InvalidArgument("delay arms must be A or B")
        if self.x_squeezed_rail not in ("a", "b"):
            raise InvalidArgument("x_squeezed_rail must be 'a' or 'b'")

    def as_dict(self) -> dict:
        return {
            "short_arm": self.short_arm,
            "long_arm": self.long_arm,
            "bs1": "forward" if self.bs1_forward else "reversed",
            "bs2": "forward" if self.bs2_forward else "reversed",
            "x_squeezed_rail": self.x_squeezed_rail,
            "rotation": self.rotation,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "WiringConfig":
        return cls(
            short_arm=d["short_arm"],
            long_arm=d["long_arm"],
            bs1_forward=d["bs1"] == "forward",
            bs2_forward=d["bs2"] == "forward",
            x_squeezed_rail=d["x_squeezed_rail"],
            rotation=float(d.get("rotation", -np.pi / 4)),
        )


DEFAULT_WIRING = WiringConfig()


def _mix(u, v, forward):
    """Balanced beamsplitter on two (x, p) source-coefficient pairs."""
    c = 1.0 / np.sqrt(2.0)
    if not forward:
        u, v = v, u
    lo = ((u[0] - v[0]) * c, (u[1] - v[1]) * c)
    hi = ((u[0] + v[0]) * c, (u[1] + v[1]) * c)
    return (hi, lo) if not forward else (lo, hi)


def generation_map(params: ClusterParams, wiring: WiringConfig = DEFAULT_WIRING):
    """Return ``(T, d)``: logic quadratures ``q = T s`` with ``Var(s) = diag(d)``.

    Source ordering: creation time ``c`` and rail (a, b) give source index
    ``2 (c - c0) + rail``; all x's then all p's.
    """
    N, K = params.N, params.K
    c0 = -(N + 2)
    ns = 2 * (K - c0)

    def source(rail, c):
        i = 2 * (c - c0) + rail
        x = np.zeros(2 * ns)
        p = np.zeros(2 * ns)
        x[i] = 1.0
        p[i + ns] = 1.0
        return x, p

    after1 = {c: _mix(source(0, c), source(1, c), wiring.bs1_forward) for c in range(c0, K)}

    def delayed(spatial, k):
        arm = SPATIAL.index(spatial)
        if wiring.short_arm == spatial:
            k -= 1
        return after1[k][arm] if k >= c0 else None

    after2 = {}
    for k in range(c0 + 1, K):
        a, b = delayed("A", k), delayed("B", k)
        if a is not None and b is not None:
            after2[k] = _mix(a, b, wiring.bs2_forward)

    n = 2 * K
    T = np.zeros((2 * n, 2 * ns))
    cr, sr = np.cos(wiring.rotation), np.sin(wiring.rotation)
    for k in range(K):
        for si, s in enumerate(SPATIAL):
            kk = k - N if wiring.long_arm == s else k
            x, p = after2[kk][si]
            m = 2 * k + si
            T[m] = cr * x + sr * p
            T[m + n] = -sr * x + cr * p

    d = np.where(squeezed_source_mask(ns, wiring), params.squeezed_variance, params.antisqueezed_variance)
    return T, d


def squeezed_source_mask(ns: int, wiring: WiringConfig = DEFAULT_WIRING) -> np.ndarray:
    """Which of the ``2 ns`` source quadratures is the squeezed one.

    Rail ``wiring.x_squeezed_rail`` is squeezed in x, the other rail in p.
    The mask is structural, so it is defined even when r = 0.
    """
    mask = np.zeros(2 * ns, dtype=bool)
    mask[ns:] = True
    xs = np.arange(0 if wiring.x_squeezed_rail == "a" else 1, ns, 2)
    mask[xs], mask[xs + ns] = True, False
    return mask


@dataclass(frozen=True)
class CoiledCluster:
    """Logic-level cluster state with its generation map.

    Unpacks as ``state, indexer = cluster``.
    """

    params: ClusterParams
    wiring: WiringConfig
    indexer: ModeIndexer
    generator: np.ndarray
    source_variances: np.ndarray
    state: GaussianState = field(repr=False)

    def __iter__(self):
        return iter((self.state, self.indexer))

    @property
    def squeezed_mask(self) -> np.ndarray:
        """Source quadratures carrying the squeezed variance."""
        return squeezed_source_mask(self.source_variances.size // 2, self.wiring)

    def covariance_of(self, rows: np.ndarray) -> np.ndarray:
        """Exact covariance of the logic-level linear functionals ``rows``."""
        src = np.atleast_2d(rows) @ self.generator
        return (src * self.source_variances) @ src.T


def build_coiled_cluster(params: ClusterParams, wiring: WiringConfig = DEFAULT_WIRING) -> CoiledCluster:
    indexer = ModeIndexer(params.N, params.K)
    if not indexer.interior():
        raise InvalidArgument("window too small to contain an interior mode")
    T, d = generation_map(params, wiring)
    cov = (T * d) @ T.T
    state = GaussianState(np.zeros(T.shape[0]), cov, indexer.labels())
    return CoiledCluster(params, wiring, indexer, T, d, state)


def nullifier_rows(indexer: ModeIndexer, k: int, t: float) -> dict[str, np.ndarray]:
    """Linear forms of the two dual-rail nullifiers centered at temporal ``k``."""
    N = indexer.N
    rows = {}
    a = indexer.p_row("A", k).copy()
    for coef, (s, kk) in [(-1, ("A", k - 1)), (-1, ("A", k + 1)), (-1, ("B", k + N - 1)), (1, ("B", k + N + 1))]:
        a -= t * coef * indexer.x_row(s, kk)
    b = indexer.p_row("B", k).copy()
    for coef, (s, kk) in [(1, ("A", k - N - 1)), (-1, ("A", k - N + 1)), (1, ("B", k - 1)), (1, ("B", k + 1))]:
        b -= t * coef * indexer.x_row(s, kk)
    rows["A"], rows["B"] = a, b
    return rows


def nullifier_variances(state: GaussianState, indexer: ModeIndexer, convention: str = "cluster_type", r: float | None = None):
    """Variances of both nullifiers at every interior temporal index.

    Returns an array of shape ``(n_interior, 2)`` (columns A, B). The
    approximate convention needs ``r`` for its edge weight tanh(2r)/2.
    """
    if convention == "cluster_type":
        t = 0.5
    elif convention == "approximate":
        if r is None:
            raise InvalidArgument("approximate convention needs r")
        t = 0.5 * np.tanh(2 * r)
    else:
        raise InvalidArgument(f"unknown convention {convention!r}")
    out = []
    for k in indexer.interior():
        rows = nullifier_rows(indexer, k, t)
        out.append([rows[s] @ state.cov @ rows[s] for s in SPATIAL])
    return np.array(out)


def expected_nullifier_variance(r: float, convention: str) -> float:
    if convention == "cluster_type":
        return 2 * V0 * np.exp(-2 * r)
    return V0 / np.cosh(2 * r)


def enumerate_wirings(rotation: float = -np.pi / 4):
    for short, long_, f1, f2, xr in itertools.product(SPATIAL, SPATIAL, (True, False), (True, False), ("a", "b")):
        yield WiringConfig(short, long_, f1, f2, xr, rotation)


@dataclass(frozen=True)
class WiringValidation:
    config: WiringConfig
    equivalent: tuple
    table: tuple


def validate_wiring(params: ClusterParams, tol: float = 1e-9) -> WiringValidation:
    """Discover the wiring whose nullifiers match the closed forms.

    Every combination of delay arms, beamsplitter orientations and squeezer
    orientation is built on a small window. Matches that give the same
    covariance are one physical configuration; exactly one such class must
    exist. The first member in enumeration order is returned.
    """
    if params.r <= 0:
        raise InvalidArgument("wiring validation needs r > 0; at r = 0 every configuration is vacuum")
    small = replace(params, K=3 * params.N + 4, source_variances=None)
    target = {c: expected_nullifier_variance(small.r, c) for c in CONVENTIONS}
    table, matches = [], []
    for cfg in enumerate_wirings():
        cluster = build_coiled_cluster(small, cfg)
        errs = {}
        for conv in CONVENTIONS:
            v = nullifier_variances(cluster.state, cluster.indexer, conv, small.r)
            errs[conv] = float(np.max(np.abs(v - target[conv])))
        ok = all(e <= tol for e in errs.values())
        table.append({**cfg.as_dict(), "max_error_cluster_type": errs["cluster_type"], "max_error_approximate": errs["approximate"], "match": ok})
        if ok:
            matches.append((cfg, cluster.state.cov))
    classes: list[list] = []
    for cfg, cov in matches:
        for cls in classes:
            if np.max(np.abs(cls[0][1] - cov)) <= tol:
                cls.append((cfg, cov))
                break
        else:
            classes.append([(cfg, cov)])
    if len(classes) != 1:
        raise WiringAmbiguity(f"{len(classes)} distinct wiring classes match the nullifier closed forms", table)
    members = tuple(cfg for cfg, _ in classes[0])
    return WiringValidation(members[0], members, tuple(table))


def wire_displacement(indexer: ModeIndexer, k: int):
    """By-product of the segment (A,k),(B,k+N) left by the control measurements.

    ``k`` is the even temporal index of the segment's A half; j = (-1)^w with
    w = (k mod N)/2. Returns ``(labels, alpha, beta)`` where ``alpha`` and
    ``beta`` are complex coefficient vectors on the recombined control
    outcomes; real parts displace x and imaginary parts displace p of
    (A,k) and (B,k+N) respectively.
    """
    if k % 2:
        raise InvalidArgument(f"segment index must be even, got {k}")
    N = indexer.N
    j = indexer.parity(k)
    c = 1.0 / (2.0 * np.sqrt(2.0))
    labels = (f"mA[{k - 1}]", f"mA[{k + 1}]", f"mB[{k + N - 1}]", f"mB[{k + N + 1}]")
    alpha = c * np.array([j - 1j, -j - 1j, j - 1j, j + 1j])
    beta = c * np.array([-j + 1j, -j - 1j, -j + 1j, j + 1j])
    return labels, alpha, beta


def control_angle(k: int) -> float:
    """Projection basis (-1)^((k-1)/2) pi/4 of odd temporal index ``k``."""
    return (-1) ** ((k - 1) // 2) * np.pi / 4


def wire_nullifier_rows(indexer: ModeIndexer, k: int) -> dict[str, np.ndarray]:
    """Two-mode nullifiers of the segment (A,k),(B,k+N) on logic rows.

    The edge weight is -(-1)^w: -1 on even wires and +1 on odd wires.
    """
    N = indexer.N
    e = -indexer.parity(k)
    xa, pa = indexer.x_row("A", k), indexer.p_row("A", k)
    xb, pb = indexer.x_row("B", k + N), indexer.p_row("B", k + N)
    return {"A": pa - e * xb, "B": pb - e * xa}


@dataclass(frozen=True)
class ControlMeasurement:
    """Recombined control outcomes on the logic level, as linear functionals."""

    labels: tuple
    rows: np.ndarray
    raw_labels: tuple
    raw_rows: np.ndarray


def control_measurements(indexer: ModeIndexer, ks) -> ControlMeasurement:
    """BS3 detector rows for control pairs and their recombination.

    Both detectors read the control angle; m_A = (m+ + m-)/sqrt2 and
    m_B = (m+ - m-)/sqrt2 recover the before-BS3 outcomes.
    """
    labels, rows, raw_labels, raw_rows = [], [], [], []
    h = 1.0 / np.sqrt(2.0)
    for k in ks:
        th = control_angle(k)
        a, b = indexer.theta_row("A", k, th), indexer.theta_row("B", k, th)
        minus, plus = h * (a - b), h * (a + b)
        raw_labels += [f"m-[{k}]", f"m+[{k}]"]
        raw_rows += [minus, plus]
        labels += [f"mA[{k}]", f"mB[{k}]"]
        rows += [h * (plus + minus), h * (plus - minus)]
    return ControlMeasurement(tuple(labels), np.array(rows), tuple(raw_labels), np.array(raw_rows))


@dataclass(frozen=True)
class WireSegment:
    k: int
    wire: int
    state: GaussianState
    nullifier_variances: tuple


@dataclass(frozen=True)
class WireProjection:
    segments: tuple
    control_labels: tuple
    outcomes: np.ndarray | None = None


def project_wires(cluster: CoiledCluster, rng: np.random.Generator | None = None, shots: int = 0) -> WireProjection:
    """Measure every control mode and return the compensated wire segments.

    Deterministic mode (no ``rng``) returns each segment's exact covariance
    after the by-product of the control outcomes is subtracted. With ``rng``
    and ``shots`` the recombined control outcomes are also sampled.
    """
    ix = cluster.indexer
    N, K = ix.N, ix.K
    controls = control_measurements(ix, range(1, K, 2))
    pos = {lab: i for i, lab in enumerate(controls.labels)}
    var_m = np.einsum("ij,ij->i", controls.rows @ cluster.generator * cluster.source_variances, controls.rows @ cluster.generator)
    if np.any(var_m <= 1e-14):
        raise DegenerateMeasurement("degenerate control-mode outcome variance")
    segments = []
    for k in range(2, K - N - 1, 2):
        labels, alpha, beta = wire_displacement(ix, k)
        if any(lab not in pos for lab in labels):
            continue
        idx = [pos[lab] for lab in labels]
        m = controls.rows[idx]
        rows = np.array([
            ix.x_row("A", k) - alpha.real @ m,
            ix.x_row("B", k + N) - beta.real @ m,
            ix.p_row("A", k) - alpha.imag @ m,
            ix.p_row("B", k + N) - beta.imag @ m,
        ])
        cov = cluster.covariance_of(rows)
        seg = GaussianState(np.zeros(4), cov, (("A", k), ("B", k + N)))
        e = -ix.parity(k)
        na = np.array([0, -e, 1, 0.0])
        nb = np.array([-e, 0, 0, 1.0])
        segments.append(WireSegment(k, ix.wire(k), seg, (float(na @ cov @ na), float(nb @ cov @ nb))))
    outcomes = None
    if rng is not None and shots > 0:
        W = controls.rows @ cluster.generator
        z = rng.standard_normal((shots, W.shape[1])) * np.sqrt(cluster.source_variances)
        outcomes = z @ W.T
    return WireProjection(tuple(segments), controls.labels, outcomes)
