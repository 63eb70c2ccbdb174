"""Euler-Maruyama time stepping of the Galerkin-truncated stochastic Navier-Stokes system.

Level ``n`` evolves on the modes ``|k|_inf <= n``:

    du = P_n[ nu Lap u - P (u . grad) u ] dt + sum_i P_n G_i(u) dW^i,   u(0) = P_n u0.

Several levels can be driven by the same Wiener increments (:func:`integrate_coupled`),
which is how Galerkin solutions at different resolutions are compared on one
probability space.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from gspde.noise import NoiseModel, WienerIncrement, apply_noise, noise_array, sample_increment
from gspde.rng import make_rng
from gspde.spectral import (
    FourierField,
    _mode_energy,
    _nonlinear_array,
    _wrap,
    galerkin_project,
    inner_product,
    nonlinear_term,
    resize,
    sobolev_norm_sq,
    sobolev_weights,
    stokes_term,
    wavenumber_sq,
)

log = logging.getLogger(__name__)

SCHEMES = ("explicit", "exponential")

#: Squared L2 norm above which a path is declared numerically divergent.
DIVERGENCE_CEILING = 1e150


class StabilityError(ValueError):
    """Explicit diffusion step violates ``dt * nu * dim * n^2 <= 1``."""


@dataclass(frozen=True)
class IntegratorConfig:
    dim: int
    cutoff: int
    dt: float
    t_end: float
    nu: float
    noise: NoiseModel
    initial_field: FourierField
    seed: int = 0
    scheme: str = "explicit"
    nonlinear: bool = True
    m_max: int = 3
    snapshot_every: int | None = None

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise ValueError(f"dim must be 2 or 3, got {self.dim}")
        if self.cutoff < 1:
            raise ValueError(f"cutoff must be >= 1, got {self.cutoff}")
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if not self.t_end > 0:
            raise ValueError(f"t_end must be positive, got {self.t_end}")
        if self.dt > self.t_end:
            raise ValueError(f"dt={self.dt} exceeds t_end={self.t_end}")
        if not self.nu > 0:
            raise ValueError(f"nu must be positive, got {self.nu}")
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if self.m_max < 0:
            raise ValueError(f"m_max must be >= 0, got {self.m_max}")
        if self.snapshot_every is not None and self.snapshot_every < 1:
            raise ValueError(f"snapshot_every must be >= 1 or None, got {self.snapshot_every}")
        if self.initial_field.dim != self.dim:
            raise ValueError(f"initial field has dim {self.initial_field.dim}, config has {self.dim}")
        if self.scheme == "explicit" and self.stability_number > 1.0:
            raise StabilityError(
                f"dt * nu * dim * n^2 = {self.stability_number:.4g} > 1 for the explicit scheme; "
                "reduce dt or use scheme = 'exponential'"
            )

    @property
    def stability_number(self) -> float:
        return self.dt * self.nu * self.dim * self.cutoff**2

    @property
    def n_steps(self) -> int:
        ratio = self.t_end / self.dt
        return max(1, int(round(ratio)) if abs(ratio - round(ratio)) < 1e-9 else math.ceil(ratio))

    def at_level(self, n: int) -> "IntegratorConfig":
        return replace(self, cutoff=n)


@dataclass(eq=False)
class TrajectoryRecord:
    """One sample path at one Galerkin level.

    ``norm_series[i, m]`` is ``||u(t_i)||_m^2``. After a numerical divergence at
    step ``diverged_step`` the remaining rows are ``inf``. ``diff_series[n]`` holds
    the norms of ``u - u^n`` for the other levels of a coupled run.
    """

    level: int
    times: np.ndarray
    norm_series: np.ndarray
    seed: int
    dt: float
    increments: np.ndarray | None = None
    fields: list[FourierField] | None = None
    snapshot_steps: list[int] | None = None
    diverged_step: int | None = None
    diff_series: dict[int, np.ndarray] = field(default_factory=dict)

    @property
    def diverged(self) -> bool:
        return self.diverged_step is not None

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    @property
    def m_max(self) -> int:
        return self.norm_series.shape[1] - 1

    @property
    def thinned(self) -> bool:
        return self.fields is None or len(self.fields) != len(self.times)

    def diverged_time(self) -> float | None:
        return None if self.diverged_step is None else float(self.times[self.diverged_step])


# ---------------------------------------------------------------------------
# Drift and single steps
# ---------------------------------------------------------------------------


def drift(u: FourierField, nu: float, n: int, nonlinear: bool = True) -> FourierField:
    """``P_n[nu Lap u - P (u . grad) u]``."""
    out = stokes_term(u, nu)
    if nonlinear:
        out = out - nonlinear_term(u)
    return galerkin_project(out, n)


class _Stepper:
    """Array-level stepping kernel for one level; avoids per-step object churn."""

    def __init__(self, cfg: IntegratorConfig):
        self.cfg = cfg
        d, n = cfg.dim, cfg.cutoff
        self.k2 = wavenumber_sq(d, n)
        self.weights = np.stack([sobolev_weights(d, n, m).ravel() for m in range(cfg.m_max + 1)])
        if cfg.scheme == "exponential":
            self.decay = np.exp(-cfg.nu * cfg.dt * self.k2)

    def drift(self, arr: np.ndarray) -> np.ndarray:
        cfg = self.cfg
        out = -cfg.nu * self.k2 * arr
        if cfg.nonlinear:
            out -= _nonlinear_array(arr, cfg.dim, cfg.cutoff)
        return out

    def step(self, arr: np.ndarray, dw: np.ndarray | None) -> np.ndarray:
        cfg = self.cfg
        if cfg.scheme == "explicit":
            new = arr + cfg.dt * self.drift(arr)
        else:
            new = arr.copy()
            if cfg.nonlinear:
                new -= cfg.dt * _nonlinear_array(arr, cfg.dim, cfg.cutoff)
        if dw is not None:
            new += noise_array(cfg.noise, arr, cfg.dim, cfg.cutoff, dw)
        if cfg.scheme == "exponential":
            new *= self.decay
        return new

    def norms(self, arr: np.ndarray) -> np.ndarray:
        e = _mode_energy(arr).ravel()
        return np.sum(self.weights * e, axis=1)


def step_em(u: FourierField, cfg: IntegratorConfig, dW: WienerIncrement | None) -> FourierField:
    """One Euler-Maruyama step of size ``cfg.dt`` at level ``u.cutoff``.

    Raises ``FloatingPointError`` if the new state has non-finite coefficients.
    """
    if dW is not None and not math.isclose(dW.dt, cfg.dt, rel_tol=1e-12):
        raise ValueError(f"increment dt={dW.dt} does not match config dt={cfg.dt}")
    stepper = _Stepper(replace(cfg, cutoff=u.cutoff, initial_field=u))
    dw = None if dW is None or cfg.noise.is_zero else dW.values
    new = stepper.step(u.coeffs, dw)
    if not np.all(np.isfinite(new)):
        raise FloatingPointError("non-finite coefficients after step")
    return _wrap(u.dim, u.cutoff, new)


# ---------------------------------------------------------------------------
# Paths
# ---------------------------------------------------------------------------


def _initial_array(cfg: IntegratorConfig, n: int) -> np.ndarray:
    u0 = cfg.initial_field
    return np.array(resize(galerkin_project(u0, n) if n < u0.cutoff else u0, n).coeffs)


def _embed(arr: np.ndarray, dim: int, src: int, dst: int) -> np.ndarray:
    out = np.zeros((dim,) + (2 * dst + 1,) * dim, dtype=np.complex128)
    sl = (slice(None),) + (slice(dst - src, dst + src + 1),) * dim
    out[sl] = arr
    return out


def integrate_coupled(levels: Sequence[int], cfg: IntegratorConfig) -> list[TrajectoryRecord]:
    """Integrate several Galerkin levels driven by one Wiener realization.

    ``cfg.cutoff`` is ignored; each level ``n`` starts from ``P_n`` of the shared
    initial field. The returned records are aligned in time and carry pairwise
    difference norms in ``diff_series``.
    """
    levels = [int(n) for n in levels]
    if not levels:
        raise ValueError("at least one level is required")
    if any(b < a for a, b in zip(levels, levels[1:])):
        raise ValueError(f"levels must be sorted ascending, got {levels}")
    cfgs = [cfg.at_level(n) for n in levels]  # re-validates the stability guard per level
    steppers = [_Stepper(c) for c in cfgs]
    n_steps = cfg.n_steps
    times = np.arange(n_steps + 1) * cfg.dt
    rng = make_rng(cfg.seed)
    noisy = not cfg.noise.is_zero
    J = cfg.noise.n_modes
    dim = cfg.dim
    top = max(levels)

    states = [_initial_array(cfg, n) for n in levels]
    norms = [np.full((n_steps + 1, cfg.m_max + 1), np.inf) for _ in levels]
    diffs = {(a, b): np.full((n_steps + 1, cfg.m_max + 1), np.inf) for a in range(len(levels)) for b in range(a)}
    incs = np.zeros((n_steps, J))
    diverged: list[int | None] = [None] * len(levels)
    keep = cfg.snapshot_every
    snaps: list[list[FourierField]] = [[] for _ in levels]
    snap_steps: list[int] = []

    def record_step(i: int):
        for a, st in enumerate(steppers):
            if diverged[a] is not None:
                continue
            nrm = st.norms(states[a])
            if not np.all(np.isfinite(nrm)) or nrm[0] > DIVERGENCE_CEILING:
                diverged[a] = i
                log.info("level %d diverged numerically at step %d (seed %d)", levels[a], i, cfg.seed)
            else:
                norms[a][i] = nrm
        if diffs:
            lifted = [_embed(s, dim, n, top) if n < top else s for s, n in zip(states, levels)]
            w = steppers[-1]
            for (a, b) in diffs:
                if diverged[a] is None and diverged[b] is None:
                    diffs[(a, b)][i] = w.norms(lifted[a] - lifted[b])
        if keep is not None and i % keep == 0:
            snap_steps.append(i)
            for a in range(len(levels)):
                snaps[a].append(_wrap(dim, levels[a], states[a].copy()))

    with np.errstate(over="ignore", invalid="ignore"):
        record_step(0)
        for i in range(1, n_steps + 1):
            dw = None
            if noisy:
                dw = sample_increment(cfg.noise, cfg.dt, rng).values
                incs[i - 1] = dw
            for a, st in enumerate(steppers):
                if diverged[a] is None:
                    states[a] = st.step(states[a], dw)
            record_step(i)

    records = []
    for a, n in enumerate(levels):
        diff_series = {}
        for b, m in enumerate(levels):
            if a != b:
                diff_series[m] = diffs[(max(a, b), min(a, b))]
        records.append(
            TrajectoryRecord(
                level=n,
                times=times,
                norm_series=norms[a],
                seed=cfg.seed,
                dt=cfg.dt,
                increments=incs if noisy else np.zeros((n_steps, J)),
                fields=snaps[a] if keep is not None else None,
                snapshot_steps=list(snap_steps) if keep is not None else None,
                diverged_step=diverged[a],
                diff_series=diff_series,
            )
        )
    return records


def integrate_path(cfg: IntegratorConfig) -> TrajectoryRecord:
    """Single-level path at ``cfg.cutoff``; deterministic given ``cfg.seed``."""
    return integrate_coupled([cfg.cutoff], cfg)[0]


# ---------------------------------------------------------------------------
# Energy audit
# ---------------------------------------------------------------------------


def energy_residual(rec: TrajectoryRecord, cfg: IntegratorConfig, m: int = 0) -> np.ndarray:
    """Per-step defect in the discrete Ito energy identity at order ``m``.

    ``r_i = ||u_{i+1}||^2 - ||u_i||^2 - [2<D(u_i), u_i> dt + sum_j ||G_j(u_i)||^2 dt
    + 2 sum_j <G_j(u_i), u_i> dW^j_i]``. For the explicit scheme the defect is the
    Euler remainder ``||D dt + sum_j G_j dW^j||^2 - sum_j ||G_j||^2 dt``.
    """
    if rec.thinned:
        raise ValueError("energy_residual needs every step stored (snapshot_every = 1)")
    n = rec.level
    dt = rec.dt
    out = np.empty(len(rec.times) - 1)
    J = cfg.noise.n_modes
    for i in range(len(out)):
        u, v = rec.fields[i], rec.fields[i + 1]
        d = drift(u, cfg.nu, n, cfg.nonlinear)
        expected = 2.0 * inner_product(d, u, m) * dt
        if not cfg.noise.is_zero:
            for j in range(1, J + 1):
                g = galerkin_project(apply_noise(cfg.noise, u, j), n)
                expected += sobolev_norm_sq(g, m) * dt
                expected += 2.0 * inner_product(g, u, m) * rec.increments[i, j - 1]
        out[i] = sobolev_norm_sq(v, m) - sobolev_norm_sq(u, m) - expected
    return out


__all__ = [
    "IntegratorConfig",
    "TrajectoryRecord",
    "StabilityError",
    "drift",
    "step_em",
    "integrate_path",
    "integrate_coupled",
    "energy_residual",
]
