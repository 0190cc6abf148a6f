"""Gaussian state algebra in the global xx...pp quadrature ordering.

Units: hbar = 1, so the vacuum quadrature variance is ``V0 = 1/2``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Hashable, Sequence

import numpy as np

from .errors import DegenerateMeasurement, InternalInvariantError, InvalidArgument

V0 = 0.5
SYMMETRY_TOL = 1e-12
PHYSICAL_TOL = 1e-9
DEGENERATE_VARIANCE = 1e-14


def omega(n: int) -> np.ndarray:
    """Symplectic form [[0, I], [-I, 0]] for ``n`` modes."""
    eye = np.eye(n)
    zero = np.zeros((n, n))
    return np.block([[zero, eye], [-eye, zero]])


def to_db(variance):
    """Variance relative to vacuum, in decibels."""
    return 10.0 * np.log10(np.asarray(variance, dtype=float) / V0)


def from_db(db):
    return V0 * 10.0 ** (np.asarray(db, dtype=float) / 10.0)


@dataclass(frozen=True)
class SymplecticMatrix:
    """A linear quadrature map acting on column vectors (x_1..x_n, p_1..p_n)."""

    entries: np.ndarray

    def __post_init__(self):
        m = np.array(self.entries, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] % 2:
            raise InvalidArgument(f"symplectic matrix must be square with even size, got {m.shape}")
        m.setflags(write=False)
        object.__setattr__(self, "entries", m)

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    @property
    def n_modes(self) -> int:
        return self.dim // 2

    def __matmul__(self, other: "SymplecticMatrix") -> "SymplecticMatrix":
        return SymplecticMatrix(self.entries @ other.entries)

    def symplectic_error(self) -> float:
        w = omega(self.n_modes)
        return float(np.max(np.abs(self.entries @ w @ self.entries.T - w)))

    def is_symplectic(self, tol: float = 1e-9) -> bool:
        return self.symplectic_error() <= tol

    @classmethod
    def identity(cls, n: int) -> "SymplecticMatrix":
        return cls(np.eye(2 * n))


def _check_modes(n: int, modes: Sequence[int]):
    for m in modes:
        if not 0 <= m < n:
            raise InvalidArgument(f"mode {m} out of range for {n} modes")
    if len(set(modes)) != len(modes):
        raise InvalidArgument(f"target modes must be distinct, got {tuple(modes)}")


def primitive_symplectic(kind: str, n: int, modes: Sequence[int], param: float = 0.0) -> SymplecticMatrix:
    """Embed a one- or two-mode primitive into the ``2n x 2n`` phase space.

    ``kind`` is one of ``rotation``, ``squeeze``, ``shear``, ``beamsplitter``
    or ``identity``. The beamsplitter points from ``modes[0]`` to
    ``modes[1]``: x_i -> (x_i - x_j)/sqrt2, x_j -> (x_i + x_j)/sqrt2, and the
    same on the momenta.
    """
    if n < 1:
        raise InvalidArgument("mode count must be positive")
    if not np.isfinite(param):
        raise InvalidArgument(f"parameter must be finite, got {param}")
    modes = [int(m) for m in modes]
    _check_modes(n, modes)
    s = np.eye(2 * n)
    if kind == "identity":
        return SymplecticMatrix(s)
    if kind == "beamsplitter":
        if len(modes) != 2:
            raise InvalidArgument("beamsplitter needs two distinct modes")
        i, j = modes
        c = 1.0 / np.sqrt(2.0)
        for off in (0, n):
            a, b = i + off, j + off
            s[a, a], s[a, b] = c, -c
            s[b, a], s[b, b] = c, c
        return SymplecticMatrix(s)
    if len(modes) != 1:
        raise InvalidArgument(f"{kind} acts on exactly one mode")
    (m,) = modes
    if kind == "rotation":
        block = np.array([[np.cos(param), np.sin(param)], [-np.sin(param), np.cos(param)]])
    elif kind == "squeeze":
        block = np.diag([np.exp(-param), np.exp(param)])
    elif kind == "shear":
        block = np.array([[1.0, 0.0], [param, 1.0]])
    else:
        raise InvalidArgument(f"unknown primitive kind {kind!r}")
    idx = [m, m + n]
    s[np.ix_(idx, idx)] = block
    return SymplecticMatrix(s)


@dataclass(frozen=True)
class GaussianState:
    """Mean and covariance over an ordered, labelled mode set."""

    mean: np.ndarray
    cov: np.ndarray
    mode_labels: tuple = field(default=())

    def __post_init__(self):
        mean = np.array(self.mean, dtype=float).reshape(-1)
        cov = np.array(self.cov, dtype=float)
        if mean.size % 2 or mean.size == 0:
            raise InvalidArgument("mean must have even, nonzero length")
        if cov.shape != (mean.size, mean.size):
            raise InvalidArgument(f"covariance shape {cov.shape} does not match mean length {mean.size}")
        cov = 0.5 * (cov + cov.T)
        labels = tuple(self.mode_labels) if self.mode_labels else tuple(range(mean.size // 2))
        if len(labels) != mean.size // 2:
            raise InvalidArgument("mode_labels length must equal n_modes")
        if len(set(labels)) != len(labels):
            raise InvalidArgument("mode_labels contain duplicates")
        mean.setflags(write=False)
        cov.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)
        object.__setattr__(self, "mode_labels", labels)

    @property
    def n_modes(self) -> int:
        return self.mean.size // 2

    def index(self, label: Hashable) -> int:
        try:
            return self.mode_labels.index(label)
        except ValueError:
            raise InvalidArgument(f"unknown mode label {label!r}") from None

    def quadrature_rows(self, idx: int) -> tuple[int, int]:
        return idx, idx + self.n_modes

    def reduced(self, labels: Sequence[Hashable]) -> "GaussianState":
        """Marginal state on the listed modes, in the given order."""
        idx = [self.index(lab) for lab in labels]
        rows = idx + [i + self.n_modes for i in idx]
        return GaussianState(self.mean[rows], self.cov[np.ix_(rows, rows)], tuple(labels))


def vacuum_state(n: int, labels: Sequence[Hashable] | None = None) -> GaussianState:
    if n < 1:
        raise InvalidArgument("vacuum_state needs at least one mode")
    return GaussianState(np.zeros(2 * n), V0 * np.eye(2 * n), tuple(labels) if labels else ())


def apply_symplectic(state: GaussianState, s: SymplecticMatrix) -> GaussianState:
    if s.dim != 2 * state.n_modes:
        raise InvalidArgument(f"symplectic dim {s.dim} does not match state with {state.n_modes} modes")
    m = s.entries
    return GaussianState(m @ state.mean, m @ state.cov @ m.T, state.mode_labels)


def symplectic_eigenvalues(cov: np.ndarray) -> np.ndarray:
    """Sorted symplectic spectrum of a ``2n x 2n`` covariance matrix."""
    cov = np.asarray(cov, dtype=float)
    if np.max(np.abs(cov - cov.T), initial=0.0) > SYMMETRY_TOL * max(1.0, np.max(np.abs(cov))):
        raise InternalInvariantError("covariance matrix is not symmetric")
    n = cov.shape[0] // 2
    ev = np.abs(np.linalg.eigvals(omega(n) @ cov).imag)
    return np.sort(ev)[::2]


def check_physical(state: GaussianState | np.ndarray, tol: float = PHYSICAL_TOL):
    """Return ``(symplectic_eigenvalues, is_physical)``."""
    cov = state.cov if isinstance(state, GaussianState) else state
    nu = symplectic_eigenvalues(cov)
    return nu, bool(nu.min() >= V0 - tol)


def quadrature_row(n: int, idx: int, theta: float) -> np.ndarray:
    """Row vector selecting cos(theta) x_idx + sin(theta) p_idx."""
    c = np.zeros(2 * n)
    c[idx] = np.cos(theta)
    c[idx + n] = np.sin(theta)
    return c


@dataclass(frozen=True)
class HomodyneResult:
    outcome_mean: float
    outcome_variance: float
    posterior: GaussianState | None
    outcome: float | None = None


def homodyne(
    state: GaussianState,
    mode: Hashable,
    theta: float,
    rng: np.random.Generator | None = None,
    outcome: float | None = None,
    by_label: bool = False,
) -> HomodyneResult:
    """Measure x(theta) = x cos(theta) + p sin(theta) on one mode.

    With neither ``rng`` nor ``outcome`` the posterior mean is conditioned on
    the outcome mean. ``rng`` draws the outcome; ``outcome`` forces it.
    """
    idx = state.index(mode) if by_label else int(mode)
    n = state.n_modes
    if not 0 <= idx < n:
        raise InvalidArgument(f"mode {idx} out of range for {n} modes")
    c = quadrature_row(n, idx, theta)
    var = float(c @ state.cov @ c)
    if var <= DEGENERATE_VARIANCE:
        raise DegenerateMeasurement(f"outcome variance {var:.3e} at mode {idx}, theta={theta}")
    mu = float(c @ state.mean)
    if outcome is None and rng is not None:
        outcome = float(rng.normal(mu, np.sqrt(var)))
    value = mu if outcome is None else float(outcome)
    keep = [i for i in range(n) if i != idx]
    rows = keep + [i + n for i in keep]
    cross = state.cov[rows] @ c
    cov = state.cov[np.ix_(rows, rows)] - np.outer(cross, cross) / var
    mean = state.mean[rows] + cross * (value - mu) / var
    labels = tuple(state.mode_labels[i] for i in keep)
    posterior = GaussianState(mean, cov, labels) if labels else None
    return HomodyneResult(mu, var, posterior, outcome)
