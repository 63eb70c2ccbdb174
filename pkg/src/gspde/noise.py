"""Truncated cylindrical Brownian motion and Lipschitz noise operators.

The noise is ``sum_i G_i(u) dW^i`` over ``i = 1..J``. Two families are built in:

``additive``
    ``G_i(u) = c_i phi_i`` with ``phi_i`` the ``i``-th element of a fixed real,
    divergence-free, unit-norm Fourier basis (shear modes in shell order).
``linear_multiplicative``
    ``G_i(u) = c_i S_s u`` where ``S_s`` damps mode ``k`` by ``(1+|k|^2)^(-s/2)``.

Both are Lipschitz on every ``W^{m,2}_sigma`` with constant ``c_i`` (zero for the
additive family), and ``c_i = c0 i^(-q)`` is square-summable for ``q > 1/2``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.special import zeta

from gspde.spectral import (
    FourierField,
    _leray_array,
    _wrap,
    random_field,
    sobolev_norm_sq,
    wavenumber_sq,
)

KINDS = ("additive", "linear_multiplicative")


@dataclass(frozen=True)
class NoiseModel:
    kind: str
    coefficients: tuple[float, ...]
    smoothing_order: int = 0
    # family parameters, kept for the tail bound and for config round-trips
    c0: float | None = None
    decay_q: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"noise kind must be one of {KINDS}, got {self.kind!r}")
        if self.smoothing_order < 0:
            raise ValueError(f"smoothing_order must be >= 0, got {self.smoothing_order}")
        object.__setattr__(self, "coefficients", tuple(float(c) for c in self.coefficients))

    @classmethod
    def power_law(
        cls,
        kind: str = "linear_multiplicative",
        n_modes: int = 16,
        c0: float = 0.0,
        decay_q: float = 1.0,
        smoothing_order: int = 0,
    ) -> "NoiseModel":
        """``c_i = c0 * i**(-decay_q)`` for ``i = 1..n_modes``."""
        if n_modes < 1:
            raise ValueError(f"n_modes must be >= 1, got {n_modes}")
        if decay_q <= 0.5:
            raise ValueError(f"decay_q must exceed 1/2 for square-summable constants, got {decay_q}")
        coeffs = tuple(c0 * i ** (-decay_q) for i in range(1, n_modes + 1))
        return cls(kind, coeffs, smoothing_order, c0=c0, decay_q=decay_q)

    @property
    def n_modes(self) -> int:
        return len(self.coefficients)

    @property
    def is_zero(self) -> bool:
        return not any(self.coefficients)

    def lipschitz_sum(self) -> float:
        """Declared bound ``sum_i c_i^2``."""
        return float(sum(c * c for c in self.coefficients))

    def tail_bound(self) -> float | None:
        """``sum_{i > J} c_i^2`` for the power-law family, ``None`` for ad-hoc coefficients."""
        if self.c0 is None or self.decay_q is None:
            return None
        return float(self.c0**2 * zeta(2 * self.decay_q, self.n_modes + 1))


@dataclass(frozen=True)
class WienerIncrement:
    dt: float
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        v.flags.writeable = False
        object.__setattr__(self, "values", v)


# ---------------------------------------------------------------------------
# Additive basis
# ---------------------------------------------------------------------------


def _polarizations(k: np.ndarray) -> list[np.ndarray]:
    """Orthonormal real vectors spanning the plane orthogonal to ``k``."""
    if k.size == 2:
        e = np.array([-k[1], k[0]], dtype=np.float64)
        return [e / np.linalg.norm(e)]
    # cross with the axis least aligned with k
    a = np.zeros(3)
    a[int(np.argmin(np.abs(k)))] = 1.0
    e1 = np.cross(k, a)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(k, e1)
    e2 /= np.linalg.norm(e2)
    return [e1, e2]


@lru_cache(maxsize=None)
def additive_basis(dim: int, n_modes: int) -> tuple[tuple[tuple[int, ...], np.ndarray, str], ...]:
    """First ``n_modes`` real basis elements as ``(k, polarization, "cos"|"sin")``.

    Wavevectors run through shells ``|k|_inf = 1, 2, ...``, one per conjugate pair
    (first non-zero component positive), lexicographic within a shell.
    """
    out = []
    shell = 1
    while len(out) < n_modes:
        ks = [tuple(i - shell for i in k) for k in np.ndindex(*(2 * shell + 1,) * dim)]
        ks = [k for k in ks if max(abs(x) for x in k) == shell and next(x for x in k if x != 0) > 0]
        for k in sorted(ks):
            kv = np.array(k, dtype=np.float64)
            for e in _polarizations(kv):
                for phase in ("cos", "sin"):
                    out.append((k, e, phase))
        shell += 1
    return tuple(out[:n_modes])


@lru_cache(maxsize=None)
def _additive_stack(dim: int, cutoff: int, n_modes: int) -> np.ndarray:
    """Coefficient arrays of ``phi_1..phi_J`` at a storage cutoff, shape ``(J, dim, ...)``.

    Basis elements beyond the cutoff are zero here, i.e. already Galerkin-projected.
    """
    shape = (dim,) + (2 * cutoff + 1,) * dim
    stack = np.zeros((n_modes,) + shape, dtype=np.complex128)
    for i, (k, e, phase) in enumerate(additive_basis(dim, n_modes)):
        if max(abs(x) for x in k) > cutoff:
            continue
        amp = e / np.sqrt(2.0) if phase == "cos" else -1j * e / np.sqrt(2.0)
        pos = tuple(x + cutoff for x in k)
        neg = tuple(-x + cutoff for x in k)
        stack[(i, slice(None)) + pos] = amp
        stack[(i, slice(None)) + neg] = np.conj(amp)
    stack.flags.writeable = False
    return stack


def basis_field(dim: int, cutoff: int, i: int) -> FourierField:
    """``phi_i`` (1-based) at the given storage cutoff."""
    return _wrap(dim, cutoff, _additive_stack(dim, cutoff, i)[i - 1].copy())


@lru_cache(maxsize=None)
def smoothing_factor(dim: int, cutoff: int, s: int) -> np.ndarray:
    f = (1.0 + wavenumber_sq(dim, cutoff)) ** (-s / 2.0)
    f.flags.writeable = False
    return f


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------


def apply_noise(model: NoiseModel, u: FourierField, i: int) -> FourierField:
    """``G_i(u)`` (1-based ``i``), Leray-projected and stored at ``u``'s cutoff."""
    if not 1 <= i <= model.n_modes:
        raise IndexError(f"noise index {i} outside 1..{model.n_modes}")
    c = model.coefficients[i - 1]
    if model.kind == "additive":
        arr = c * _additive_stack(u.dim, u.cutoff, model.n_modes)[i - 1]
    else:
        arr = c * smoothing_factor(u.dim, u.cutoff, model.smoothing_order) * u.coeffs
    return _wrap(u.dim, u.cutoff, _leray_array(arr, u.dim, u.cutoff))


def noise_array(model: NoiseModel, arr: np.ndarray, dim: int, cutoff: int, dw: np.ndarray) -> np.ndarray:
    """``sum_i G_i(u) dW^i`` on raw coefficient arrays, projected to ``|k|_inf <= cutoff``."""
    weights = np.asarray(model.coefficients) * dw
    if model.kind == "additive":
        stack = _additive_stack(dim, cutoff, model.n_modes)
        out = np.tensordot(weights, stack, axes=(0, 0))
    else:
        out = float(np.sum(weights)) * smoothing_factor(dim, cutoff, model.smoothing_order) * arr
    return _leray_array(out, dim, cutoff)


def sample_increment(model: NoiseModel, dt: float, rng: np.random.Generator) -> WienerIncrement:
    """``J`` independent ``N(0, dt)`` draws."""
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    return WienerIncrement(dt, rng.normal(0.0, np.sqrt(dt), size=model.n_modes))


def lipschitz_check(
    model: NoiseModel,
    k: int,
    trials: int,
    rng: np.random.Generator,
    dim: int = 2,
    cutoff: int = 6,
) -> float:
    """Largest observed ``sum_i ||G_i u - G_i v||_k^2 / ||u - v||_k^2`` over random pairs."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    worst = 0.0
    for _ in range(trials):
        u = random_field(dim, cutoff, rng, decay=rng.uniform(0.0, 3.0))
        v = random_field(dim, cutoff, rng, decay=rng.uniform(0.0, 3.0))
        denom = sobolev_norm_sq(u - v, k)
        if denom == 0.0:
            continue
        num = sum(
            sobolev_norm_sq(apply_noise(model, u, i) - apply_noise(model, v, i), k)
            for i in range(1, model.n_modes + 1)
        )
        worst = max(worst, num / denom)
    return worst


__all__ = [
    "NoiseModel",
    "WienerIncrement",
    "additive_basis",
    "basis_field",
    "apply_noise",
    "noise_array",
    "sample_increment",
    "lipschitz_check",
]
