"""Deterministic initial fields for runs and experiments."""

from __future__ import annotations

import numpy as np

from gspde.spectral import FourierField, make_field, random_field, resize, zero_field

INITIAL_KINDS = ("zero", "analytic", "power_law", "shear")


def initial_condition(
    kind: str,
    dim: int,
    cutoff: int,
    amplitude: float = 1.0,
    decay: float = 1.0,
    seed: int = 0,
    modes: int | None = None,
) -> FourierField:
    """Build an initial field stored at ``cutoff``.

    ``analytic``
        random phases, ``|u_k| ~ exp(-decay |k|)``;
    ``power_law``
        random phases, ``|u_k| ~ (1 + |k|^2)^(-decay/2)``;
    ``shear``
        ``u = 2 amplitude cos(x_1) e_2``, a steady-shape single mode.

    Random kinds draw their coefficients on ``|k|_inf <= modes`` (default ``cutoff``)
    and are scaled to squared L2 norm ``amplitude**2``.
    """
    if kind not in INITIAL_KINDS:
        raise ValueError(f"initial kind must be one of {INITIAL_KINDS}, got {kind!r}")
    if kind == "zero" or amplitude == 0.0:
        return zero_field(dim, cutoff)
    if kind == "shear":
        e2 = np.zeros(dim)
        e2[1] = amplitude
        k = (1,) + (0,) * (dim - 1)
        return make_field(dim, max(cutoff, 1), [(k, e2)])
    modes = cutoff if modes is None or modes <= 0 else modes
    rng = np.random.default_rng(seed)
    spectrum = "analytic" if kind == "analytic" else "power"
    f = random_field(dim, modes, rng, decay=decay, spectrum=spectrum, energy=amplitude**2)
    return resize(f, cutoff)
