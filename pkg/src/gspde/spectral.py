"""Divergence-free Fourier fields on the 2- and 3-torus.

A field is stored as a dense, centred coefficient array: ``coeffs[c, i_1, ..., i_N]``
holds component ``c`` of the coefficient at wavevector ``k = (i_1 - n, ..., i_N - n)``
where ``n`` is the cutoff (max ``|k|_inf``). The physical field is

    u(x) = sum_k u_k exp(i k.x),   u_{-k} = conj(u_k),   u_0 = 0.

Norms use the plain coefficient sum ``sum_k |k|^(2m) |u_k|^2`` (no ``(2 pi)^N``
volume factor) with the Euclidean ``|k|``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Iterator, Sequence

import numpy as np
import scipy.fft as sfft

__all__ = [
    "FourierField",
    "SobolevIndex",
    "make_field",
    "zero_field",
    "random_field",
    "resize",
    "leray_project",
    "sobolev_norm_sq",
    "sobolev_norms_sq",
    "inner_product",
    "nonlinear_term",
    "stokes_term",
    "galerkin_project",
    "convolve_direct",
    "evaluate_physical",
    "divergence_residual",
    "reality_residual",
]

#: Tolerance used when checking user-supplied conjugate pairs.
REALITY_RTOL = 1e-12


# ---------------------------------------------------------------------------
# Wavevector tables
# ---------------------------------------------------------------------------


@lru_cache(maxsize=None)
def wavevectors(dim: int, cutoff: int) -> np.ndarray:
    """Integer wavevector grid, shape ``(dim,) + (2n+1,)*dim`` (float64, read-only)."""
    axis = np.arange(-cutoff, cutoff + 1, dtype=np.float64)
    k = np.stack(np.meshgrid(*([axis] * dim), indexing="ij"))
    k.flags.writeable = False
    return k


@lru_cache(maxsize=None)
def wavenumber_sq(dim: int, cutoff: int) -> np.ndarray:
    """Euclidean ``|k|^2`` on the centred grid."""
    k2 = np.sum(wavevectors(dim, cutoff) ** 2, axis=0)
    k2.flags.writeable = False
    return k2


@lru_cache(maxsize=None)
def shell_index(dim: int, cutoff: int) -> np.ndarray:
    """``|k|_inf`` on the centred grid."""
    s = np.max(np.abs(wavevectors(dim, cutoff)), axis=0)
    s.flags.writeable = False
    return s


@lru_cache(maxsize=None)
def _leray_tables(dim: int, cutoff: int) -> tuple[np.ndarray, np.ndarray]:
    k = wavevectors(dim, cutoff)
    k2 = wavenumber_sq(dim, cutoff).copy()
    k2[(cutoff,) * dim] = 1.0
    k_over_k2 = k / k2
    k_over_k2.flags.writeable = False
    return k, k_over_k2


@lru_cache(maxsize=None)
def sobolev_weights(dim: int, cutoff: int, m: int) -> np.ndarray:
    """``|k|^(2m)`` on the centred grid; the ``k = 0`` weight is zero for every ``m``."""
    w = wavenumber_sq(dim, cutoff) ** m
    w = np.array(w)
    w[(cutoff,) * dim] = 0.0
    w.flags.writeable = False
    return w


def _centre(dim: int, cutoff: int) -> tuple[int, ...]:
    return (cutoff,) * dim


# ---------------------------------------------------------------------------
# Field type
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SobolevIndex:
    """Order ``m`` of the space ``W^{m,2}_sigma``."""

    m: int

    def __post_init__(self):
        if int(self.m) != self.m or self.m < 0:
            raise ValueError(f"Sobolev order must be a non-negative integer, got {self.m!r}")

    def __int__(self) -> int:
        return int(self.m)


@dataclass(frozen=True, eq=False)
class FourierField:
    """Immutable truncated Fourier series of a real vector field on the torus.

    Use :func:`make_field` (or the other constructors in this module) rather than
    building one directly; the bare constructor only checks shapes.
    """

    dim: int
    cutoff: int
    coeffs: np.ndarray

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise ValueError(f"dim must be 2 or 3, got {self.dim}")
        if self.cutoff < 0:
            raise ValueError(f"cutoff must be non-negative, got {self.cutoff}")
        shape = (self.dim,) + (2 * self.cutoff + 1,) * self.dim
        arr = np.asarray(self.coeffs, dtype=np.complex128)
        if arr.shape != shape:
            raise ValueError(f"coeffs must have shape {shape}, got {arr.shape}")
        if arr.flags.writeable:
            arr = arr.copy()
            arr.flags.writeable = False
        object.__setattr__(self, "coeffs", arr)

    # -- accessors ---------------------------------------------------------

    def _index(self, k: Sequence[int]) -> tuple:
        k = tuple(int(x) for x in k)
        if len(k) != self.dim:
            raise ValueError(f"wavevector {k} has wrong length for dim={self.dim}")
        if max(abs(x) for x in k) > self.cutoff:
            raise KeyError(f"wavevector {k} outside cutoff {self.cutoff}")
        return (slice(None),) + tuple(x + self.cutoff for x in k)

    def __getitem__(self, k: Sequence[int]) -> np.ndarray:
        return self.coeffs[self._index(k)]

    def modes(self) -> Iterator[tuple[tuple[int, ...], np.ndarray]]:
        """Yield ``(k, f_k)`` for every non-zero stored coefficient, in lexicographic order."""
        nz = np.any(self.coeffs != 0, axis=0)
        for idx in zip(*np.nonzero(nz)):
            k = tuple(int(i) - self.cutoff for i in idx)
            yield k, self.coeffs[(slice(None),) + tuple(idx)]

    @property
    def is_zero(self) -> bool:
        return not np.any(self.coeffs)

    # -- linear arithmetic -------------------------------------------------

    def _check_compatible(self, other: "FourierField"):
        if not isinstance(other, FourierField):
            return NotImplemented
        if other.dim != self.dim or other.cutoff != self.cutoff:
            raise ValueError(
                f"incompatible fields: dim/cutoff {self.dim}/{self.cutoff} vs {other.dim}/{other.cutoff}"
            )

    def __add__(self, other: "FourierField") -> "FourierField":
        self._check_compatible(other)
        return _wrap(self.dim, self.cutoff, self.coeffs + other.coeffs)

    def __sub__(self, other: "FourierField") -> "FourierField":
        self._check_compatible(other)
        return _wrap(self.dim, self.cutoff, self.coeffs - other.coeffs)

    def __neg__(self) -> "FourierField":
        return _wrap(self.dim, self.cutoff, -self.coeffs)

    def __mul__(self, scalar: float) -> "FourierField":
        if isinstance(scalar, complex) or np.iscomplexobj(scalar):
            raise TypeError("complex scaling would break the reality condition")
        return _wrap(self.dim, self.cutoff, self.coeffs * float(scalar))

    __rmul__ = __mul__

    def __repr__(self) -> str:
        n = int(np.count_nonzero(np.any(self.coeffs != 0, axis=0)))
        return f"FourierField(dim={self.dim}, cutoff={self.cutoff}, nonzero_modes={n})"


def _wrap(dim: int, cutoff: int, arr: np.ndarray) -> FourierField:
    """Wrap a freshly computed array without copying."""
    arr.flags.writeable = False
    return FourierField(dim, cutoff, arr)


def zero_field(dim: int, cutoff: int) -> FourierField:
    return _wrap(dim, cutoff, np.zeros((dim,) + (2 * cutoff + 1,) * dim, dtype=np.complex128))


def _conj_flip(arr: np.ndarray) -> np.ndarray:
    """Map ``a_k`` to ``conj(a_{-k})`` on the centred grid."""
    flip = (slice(None),) + (slice(None, None, -1),) * (arr.ndim - 1)
    return np.conj(arr[flip])


def reality_residual(f: FourierField) -> float:
    """``max_k |f_k - conj(f_{-k})|``, together with ``|f_0|``."""
    if f.is_zero:
        return 0.0
    res = np.max(np.abs(f.coeffs - _conj_flip(f.coeffs)))
    res = max(res, float(np.max(np.abs(f.coeffs[(slice(None),) + _centre(f.dim, f.cutoff)]))))
    return float(res)


def divergence_residual(f: FourierField) -> float:
    """``max_k |k . f_k| / |k|`` relative to the largest mode amplitude.

    Measured against the field scale rather than each mode's own amplitude:
    modes that are zero up to rounding carry no meaningful direction.
    """
    k = wavevectors(f.dim, f.cutoff)
    k2 = np.array(wavenumber_sq(f.dim, f.cutoff))
    k2[_centre(f.dim, f.cutoff)] = 1.0
    div = np.abs(np.sum(k * f.coeffs, axis=0)) / np.sqrt(k2)
    scale = float(np.max(np.sqrt(_mode_energy(f.coeffs))))
    if scale == 0.0:
        return 0.0
    return float(np.max(div)) / scale


def make_field(dim: int, cutoff: int, modes: Iterable[tuple[Sequence[int], Sequence[complex]]]) -> FourierField:
    """Build a real field from a list of ``(k, f_k)`` pairs.

    Missing conjugate partners are filled in with ``conj(f_k)``. Supplying both
    ``k`` and ``-k`` with inconsistent amplitudes, a non-zero ``k = 0`` amplitude,
    or a wavevector beyond the cutoff raises ``ValueError``. The result is not
    Leray-projected.
    """
    arr = np.zeros((dim,) + (2 * cutoff + 1,) * dim, dtype=np.complex128)
    given = np.zeros((2 * cutoff + 1,) * dim, dtype=bool)
    for k, vec in modes:
        k = tuple(int(x) for x in k)
        vec = np.asarray(vec, dtype=np.complex128)
        if len(k) != dim or vec.shape != (dim,):
            raise ValueError(f"mode {k} needs a length-{dim} wavevector and amplitude")
        if max(abs(x) for x in k) > cutoff:
            raise ValueError(f"|k|_inf of {k} exceeds cutoff {cutoff}")
        idx = tuple(x + cutoff for x in k)
        if all(x == 0 for x in k):
            if np.any(vec != 0):
                raise ValueError("the k = 0 amplitude must be zero (zero-mean fields)")
            continue
        if given[idx]:
            raise ValueError(f"wavevector {k} supplied twice")
        given[idx] = True
        arr[(slice(None),) + idx] = vec

    partner = given[(slice(None, None, -1),) * dim]
    both = given & partner
    conj = _conj_flip(arr)
    if np.any(both):
        scale = max(float(np.max(np.abs(arr))), 1.0)
        bad = both & np.any(np.abs(arr - conj) > REALITY_RTOL * scale, axis=0)
        if np.any(bad):
            k = tuple(int(i) - cutoff for i in np.argwhere(bad)[0])
            raise ValueError(f"inconsistent conjugate pair at k={k}: f_(-k) != conj(f_k)")
    fill = partner & ~given
    arr[:, fill] = conj[:, fill]
    return _wrap(dim, cutoff, arr)


def random_field(
    dim: int,
    cutoff: int,
    rng: np.random.Generator,
    decay: float = 0.0,
    spectrum: str = "power",
    energy: float | None = None,
) -> FourierField:
    """Random divergence-free real field.

    Amplitudes are complex Gaussians damped by ``(1+|k|^2)^(-decay/2)``
    (``spectrum="power"``) or ``exp(-decay |k|)`` (``spectrum="analytic"``).
    If ``energy`` is given the field is rescaled to that squared L2 norm.
    """
    shape = (dim,) + (2 * cutoff + 1,) * dim
    raw = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    k2 = wavenumber_sq(dim, cutoff)
    if spectrum == "power":
        raw *= (1.0 + k2) ** (-decay / 2.0)
    elif spectrum == "analytic":
        raw *= np.exp(-decay * np.sqrt(k2))
    else:
        raise ValueError(f"unknown spectrum {spectrum!r}")
    arr = 0.5 * (raw + _conj_flip(raw))
    arr[(slice(None),) + _centre(dim, cutoff)] = 0.0
    arr = _leray_array(arr, dim, cutoff)
    if energy is not None:
        e = float(np.sum(np.abs(arr) ** 2))
        if e > 0:
            arr *= np.sqrt(energy / e)
    return _wrap(dim, cutoff, arr)


def resize(f: FourierField, cutoff: int) -> FourierField:
    """Re-store ``f`` at another cutoff, padding with zeros or dropping modes."""
    if cutoff == f.cutoff:
        return f
    out = np.zeros((f.dim,) + (2 * cutoff + 1,) * f.dim, dtype=np.complex128)
    m = min(cutoff, f.cutoff)
    src = (slice(None),) + (slice(f.cutoff - m, f.cutoff + m + 1),) * f.dim
    dst = (slice(None),) + (slice(cutoff - m, cutoff + m + 1),) * f.dim
    out[dst] = f.coeffs[src]
    return _wrap(f.dim, cutoff, out)


# ---------------------------------------------------------------------------
# Linear operators
# ---------------------------------------------------------------------------


def _leray_array(arr: np.ndarray, dim: int, cutoff: int) -> np.ndarray:
    k, k_over_k2 = _leray_tables(dim, cutoff)
    kdotf = np.sum(k * arr, axis=0)
    out = arr - k_over_k2 * kdotf
    out[(slice(None),) + _centre(dim, cutoff)] = 0.0
    return out


def leray_project(f: FourierField) -> FourierField:
    """Orthogonal projection onto divergence-free, zero-mean fields: ``f_k - k (k.f_k)/|k|^2``."""
    return _wrap(f.dim, f.cutoff, _leray_array(f.coeffs, f.dim, f.cutoff))


def _mode_energy(arr: np.ndarray) -> np.ndarray:
    return np.sum(arr.real**2 + arr.imag**2, axis=0)


def sobolev_norm_sq(f: FourierField, m: int | SobolevIndex) -> float:
    """``sum_k |k|^(2m) |f_k|^2`` over all stored modes (both members of each conjugate pair)."""
    m = int(SobolevIndex(int(m)))
    w = sobolev_weights(f.dim, f.cutoff, m)
    return float(np.sum(w * _mode_energy(f.coeffs)))


def sobolev_norms_sq(f: FourierField, m_max: int) -> np.ndarray:
    """All orders ``0..m_max`` at once."""
    e = _mode_energy(f.coeffs)
    return np.array([np.sum(sobolev_weights(f.dim, f.cutoff, m) * e) for m in range(m_max + 1)])


def inner_product(f: FourierField, g: FourierField, m: int = 0) -> float:
    """Real inner product ``sum_k |k|^(2m) f_k . conj(g_k)`` (real by conjugate symmetry)."""
    f._check_compatible(g)
    w = sobolev_weights(f.dim, f.cutoff, int(m))
    return float(np.sum(w * np.sum(f.coeffs * np.conj(g.coeffs), axis=0).real))


def stokes_term(u: FourierField, nu: float) -> FourierField:
    """Viscous term ``nu * Laplacian u``: mode-wise ``-nu |k|^2 u_k``."""
    if not nu > 0:
        raise ValueError(f"viscosity must be positive, got {nu}")
    return _wrap(u.dim, u.cutoff, -nu * wavenumber_sq(u.dim, u.cutoff) * u.coeffs)


def galerkin_project(f: FourierField, n_cutoff: int) -> FourierField:
    """Zero every mode with ``|k|_inf > n_cutoff`` (storage cutoff unchanged).

    Modes removed have Euclidean ``|k| >= n_cutoff + 1``, so the tail obeys
    ``||f - P_n f||_{m-1}^2 <= ||f||_m^2 / (n_cutoff + 1)^2``.
    """
    if n_cutoff < 1:
        raise ValueError(f"n_cutoff must be >= 1, got {n_cutoff}")
    if n_cutoff >= f.cutoff:
        return f
    mask = shell_index(f.dim, f.cutoff) <= n_cutoff
    return _wrap(f.dim, f.cutoff, f.coeffs * mask)


# ---------------------------------------------------------------------------
# Nonlinearity
# ---------------------------------------------------------------------------


class _PaddedGrid:
    """Real-FFT grid large enough that quadratic products are alias-free on ``|k|_inf <= n``.

    With ``G >= 3n + 1`` points per axis a product mode ``|k'|_inf <= 2n`` folds
    onto ``k' - G e`` with ``|k' - G e|_inf >= n + 1``, so every retained mode of the
    truncated convolution is exact. This is the 2/3 rule read backwards.
    """

    def __init__(self, dim: int, cutoff: int):
        self.dim = dim
        self.cutoff = cutoff
        self.size = sfft.next_fast_len(3 * cutoff + 1, real=True)
        G, n = self.size, cutoff
        full = np.arange(-n, n + 1) % G
        half = np.arange(0, n + 1)
        self.index = np.ix_(*([full] * (dim - 1) + [half]))
        self.spectral_shape = (G,) * (dim - 1) + (G // 2 + 1,)
        self.axes = tuple(range(-dim, 0))
        self.ik = 1j * wavevectors(dim, cutoff)

    def to_physical(self, arr: np.ndarray) -> np.ndarray:
        """Synthesize ``sum_k a_k e^{ik.x}`` for a batch ``arr[..., centred grid]``."""
        n = self.cutoff
        lead = arr.shape[: arr.ndim - self.dim]
        spec = np.zeros(lead + self.spectral_shape, dtype=np.complex128)
        spec[(Ellipsis,) + self.index] = arr[..., n:]
        return sfft.irfftn(spec, s=(self.size,) * self.dim, axes=self.axes, norm="forward")

    def to_spectral(self, phys: np.ndarray) -> np.ndarray:
        """Coefficients on ``|k|_inf <= n`` of a batch of real grid functions."""
        n = self.cutoff
        spec = sfft.rfftn(phys, axes=self.axes, norm="forward")
        top = spec[(Ellipsis,) + self.index]
        lead = top.shape[: top.ndim - self.dim]
        out = np.empty(lead + (2 * n + 1,) * self.dim, dtype=np.complex128)
        out[..., n:] = top
        if n > 0:
            rev = top[(Ellipsis,) + (slice(None, None, -1),) * (self.dim - 1) + (slice(None),)]
            out[..., :n] = np.conj(rev[..., 1:][..., ::-1])
        return out


@lru_cache(maxsize=None)
def padded_grid(dim: int, cutoff: int) -> _PaddedGrid:
    return _PaddedGrid(dim, cutoff)


def _advection_array(arr: np.ndarray, dim: int, cutoff: int) -> np.ndarray:
    """Truncated ``(u . grad) u`` coefficients (not projected)."""
    grid = padded_grid(dim, cutoff)
    # batch: u_1..u_N, then d_j u_i for all (j, i)
    grads = grid.ik[:, None] * arr[None, :]
    batch = np.concatenate([arr, grads.reshape((dim * dim,) + arr.shape[1:])])
    phys = grid.to_physical(batch)
    u = phys[:dim]
    du = phys[dim:].reshape((dim, dim) + phys.shape[1:])
    adv = np.einsum("j...,ji...->i...", u, du)
    return grid.to_spectral(adv)


def _nonlinear_array(arr: np.ndarray, dim: int, cutoff: int) -> np.ndarray:
    return _leray_array(_advection_array(arr, dim, cutoff), dim, cutoff)


def nonlinear_term(u: FourierField) -> FourierField:
    """Projected advection ``P[(u . grad) u]`` truncated to the cutoff of ``u``.

    Computed pseudo-spectrally on a zero-padded grid, which reproduces the exact
    truncated convolution ``sum_{p+q=k} i (u_p . q) u_q`` up to rounding.
    """
    if u.cutoff == 0:
        return zero_field(u.dim, 0)
    return _wrap(u.dim, u.cutoff, _nonlinear_array(u.coeffs, u.dim, u.cutoff))


def convolve_direct(u: FourierField, v: FourierField) -> FourierField:
    """Reference ``(u . grad) v`` by the explicit double sum over mode pairs.

    Returns the full product, stored at cutoff ``2n``; no truncation or projection.
    Quadratic in the number of modes; intended as an oracle.
    """
    if u.dim != v.dim:
        raise ValueError(f"dimension mismatch: {u.dim} vs {v.dim}")
    if u.cutoff != v.cutoff:
        raise ValueError(f"cutoff mismatch: {u.cutoff} vs {v.cutoff}")
    dim, n = u.dim, u.cutoff
    width = 2 * n + 1
    out = np.zeros((dim,) + (4 * n + 1,) * dim, dtype=np.complex128)
    # w[j, :, q] = i q_j v_q, so the pair (p, q) contributes u_p . w[:, :, q] at k = p + q
    w = (1j * wavevectors(dim, n)[:, None] * v.coeffs[None]).reshape(dim, -1)
    for p_idx in np.ndindex(*(width,) * dim):
        up = u.coeffs[(slice(None),) + p_idx]
        if not np.any(up):
            continue
        dst = (slice(None),) + tuple(slice(i, i + width) for i in p_idx)
        out[dst] += (up @ w).reshape(v.coeffs.shape)
    return _wrap(dim, 2 * n, out)


# ---------------------------------------------------------------------------
# Physical-space synthesis
# ---------------------------------------------------------------------------


def evaluate_physical(f: FourierField, grid_size: int, imag_tol: float = 1e-10) -> np.ndarray:
    """Sample ``sum_k f_k e^{ik.x}`` at ``x_j = 2 pi j / grid_size``.

    Returns shape ``(grid_size,)*dim + (dim,)``. A non-negligible imaginary part
    means the reality condition is broken and raises ``ValueError``.
    """
    n = f.cutoff
    if grid_size < 2 * n + 1:
        raise ValueError(f"grid_size {grid_size} too small for cutoff {n} (need >= {2 * n + 1})")
    G = grid_size
    idx = np.ix_(*([np.arange(-n, n + 1) % G] * f.dim))
    spec = np.zeros((f.dim,) + (G,) * f.dim, dtype=np.complex128)
    spec[(slice(None),) + idx] = f.coeffs
    phys = sfft.ifftn(spec, axes=tuple(range(1, f.dim + 1)), norm="forward")
    residue = float(np.max(np.abs(phys.imag)))
    if residue > imag_tol * max(1.0, float(np.max(np.abs(phys.real)))):
        raise ValueError(f"imaginary residue {residue:.3e} exceeds {imag_tol:g}: reality condition violated")
    return np.moveaxis(phys.real, 0, -1).copy()
